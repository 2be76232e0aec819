"""Command-line entry point.

Verbs: index, retrieve, rerank, train, grad-check, pipeline, synth,
transfer-judgments, eval, recall-curve, stats, assess.

Exit codes: 0 success, 1 runtime failure (one JSON error object on stderr),
2 usage error. A --config file holds key=value lines mirroring any verb's
flags; explicit flags win over the file.
"""
from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import assess as assess_mod
from . import cnn as cnn_mod
from . import dataio, metrics, pipeline, stats, synth, transfer
from .assess_http import make_server
from .index import DEFAULT_B, DEFAULT_K1, InvertedIndex, build_index, corpus_idf
from .text import default_stopwords, load_stopwords, sentence


def _fail(message: str) -> int:
    print(json.dumps({"error": message}), file=sys.stderr)
    return 1


def _stopwords(args):
    if getattr(args, "stopwords", None):
        return load_stopwords(args.stopwords)
    return default_stopwords()


def _load_questions(path):
    return [(qid, sentence(text)) for qid, text in pipeline.read_questions(path)]


def _docs_path(index_dir) -> Path:
    return Path(index_dir) / "docs.jsonl"


def _idf_from_args(args, candidate_sentences=None):
    """Collection idf when an index is given, candidate-corpus idf otherwise."""
    if getattr(args, "index", None):
        return InvertedIndex.load(args.index).idf
    if candidate_sentences is None:
        raise ValueError("no idf source: pass --index or provide candidates")
    return corpus_idf(candidate_sentences)


# ---------------------------------------------------------------------------
# verb implementations

def cmd_index(args) -> int:
    docs = list(dataio.read_corpus(args.corpus))
    index = build_index(docs, k1=args.k1, b=args.b)
    index.save(args.out)
    # raw text rides along so `pipeline run` can segment sentences
    shutil.copyfile(args.corpus, _docs_path(args.out))
    print(f"indexed {index.N} documents into {args.out} "
          f"(k1={args.k1}, b={args.b})")
    return 0


def cmd_retrieve(args) -> int:
    index = InvertedIndex.load(args.index)
    stopwords = _stopwords(args)
    run = dataio.RunFile()
    for qid, question in _load_questions(args.questions):
        query = [t for t in question.tokens if t not in stopwords]
        for hit in index.retrieve(query, args.hits):
            run.entries.append(dataio.RunEntry(qid, hit.doc_id, hit.rank,
                                               hit.score, "bm25"))
    dataio.write_run(run, args.out)
    print(f"wrote {len(run.entries)} entries to {args.out}")
    return 0


def _candidates_from_run(run, sidecar):
    """Rebuild per-question candidate sentences from a run plus sidecar."""
    out = {}
    for qid, entries in run.by_question().items():
        sentences = []
        for e in entries:
            text = sidecar.get((qid, e.key))
            if text is None:
                raise ValueError(f"sidecar has no text for ({qid}, {e.key})")
            doc_id, sep, position = e.key.rpartition("#")
            if not sep or not position.isdigit():
                raise ValueError(f"run key {e.key!r} is not a sentence key "
                                 f"(expected 'docid#position')")
            sentences.append(sentence(text, doc_id=doc_id,
                                      position=int(position)))
        out[qid] = sentences
    return out


def cmd_rerank(args) -> int:
    from .overlap import rerank_overlap
    run_in = dataio.read_run(args.run)
    sidecar = pipeline.read_sidecar(args.sidecar)
    questions = dict(pipeline.read_questions(args.questions))
    candidates = _candidates_from_run(run_in, sidecar)
    stopwords = _stopwords(args)

    if args.mode == "cnn":
        if not args.model or not args.embeddings:
            raise ValueError("mode cnn requires --model and --embeddings")
        table = dataio.load_embeddings(args.embeddings, seed=args.seed)
        model = cnn_mod.load_model(args.model, table)
    all_sentences = [s.tokens for group in candidates.values() for s in group]
    idf = _idf_from_args(args, all_sentences) if args.mode != "overlap" else None

    run_out = dataio.RunFile()
    side_out = {}
    for qid in sorted(candidates):
        if qid not in questions:
            raise ValueError(f"question file has no text for {qid}")
        q = sentence(questions[qid])
        if args.mode == "cnn":
            ranked = cnn_mod.rerank_cnn(model, qid, q, candidates[qid],
                                        args.k, idf, stopwords)
        else:
            mode = "count" if args.mode == "overlap" else "idf"
            ranked = rerank_overlap(qid, q, candidates[qid], mode, args.k,
                                    stopwords, idf)
        for c in ranked:
            run_out.entries.append(dataio.RunEntry(qid, c.key, c.rank,
                                                   c.score, args.mode))
            side_out[(qid, c.key)] = c.sentence.raw
    dataio.write_run(run_out, args.out)
    if args.out_sidecar:
        pipeline.write_sidecar(side_out, args.out_sidecar)
    print(f"reranked {len(candidates)} questions "
          f"({args.mode}, k={args.k}) into {args.out}")
    return 0


def cmd_train(args) -> int:
    train_split = dataio.load_trecqa(args.train, "train")
    dev_split = dataio.load_trecqa(args.dev, "dev")
    table = dataio.load_embeddings(args.embeddings, seed=args.seed)
    stopwords = _stopwords(args)
    idf = corpus_idf(p.candidate.tokens for p in train_split.pairs)
    model_config = cnn_mod.ModelConfig(
        embedding_dim=table.dim, filter_width=args.filter_width,
        feature_maps=args.feature_maps, hidden_dim=args.hidden_dim,
        seed=args.seed)
    train_config = cnn_mod.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.learning_rate, seed=args.seed,
        patience=args.patience,
        embedding_trainable=args.trainable_embeddings)
    model = cnn_mod.init_model(model_config, table,
                               embedding_trainable=args.trainable_embeddings)
    best, log = cnn_mod.train(model, train_split, dev_split, train_config,
                              idf, stopwords)
    cnn_mod.save_model(best, args.out)
    log_path = Path(args.out) / "training_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as f:
        for e in log:
            f.write(json.dumps({"epoch": e.epoch, "loss": e.loss,
                                "dev_map": e.dev_map}) + "\n")
    best_map = max(e.dev_map for e in log)
    print(f"trained {len(log)} epochs, best dev MAP {best_map:.4f}, "
          f"model saved to {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    vocab = [f"tok{i}" for i in range(30)]
    worst = 0.0
    for trial in range(args.trials):
        table = dataio.EmbeddingTable(dim=4, seed=int(rng.integers(1 << 30)))
        config = cnn_mod.ModelConfig(embedding_dim=4, filter_width=2,
                                     feature_maps=3, hidden_dim=5,
                                     seed=int(rng.integers(1 << 30)))
        model = cnn_mod.init_model(config, table)
        batch = []
        for _ in range(3):
            q = sentence(" ".join(rng.choice(vocab, size=rng.integers(2, 6))))
            c = sentence(" ".join(rng.choice(vocab, size=rng.integers(2, 6))))
            batch.append((q, c, int(rng.integers(2))))
        err = cnn_mod.grad_check(model, batch, lambda t: 1.0, frozenset(),
                                 epsilon=args.epsilon)
        worst = max(worst, err)
        print(f"trial {trial + 1}: max relative error {err:.3e}")
    print(f"worst over {args.trials} trials: {worst:.3e} "
          f"(threshold {args.threshold:.1e})")
    return 0 if worst < args.threshold else 1


def cmd_pipeline(args) -> int:
    if args.action != "run":
        raise ValueError(f"unknown pipeline action {args.action!r}")
    config = pipeline.PipelineConfig(h=args.h, k=args.k,
                                     condition=args.condition,
                                     index_path=args.index,
                                     model_path=args.model, seed=args.seed)
    index = InvertedIndex.load(args.index)
    doc_texts = dict(dataio.read_corpus(_docs_path(args.index)))
    model = None
    if config.needs_model:
        if not args.model or not args.embeddings:
            raise ValueError("condition idf+cnn requires --model and --embeddings")
        table = dataio.load_embeddings(args.embeddings, seed=args.seed)
        model = cnn_mod.load_model(args.model, table)
    stopwords = _stopwords(args)
    questions = _load_questions(args.questions)
    run, sidecar, _ = pipeline.run_batch(questions, config, index, doc_texts,
                                         stopwords, model=model)
    dataio.write_run(run, args.out)
    if args.sidecar:
        pipeline.write_sidecar(sidecar, args.sidecar)
    print(f"pipeline {args.condition} answered {len(questions)} questions "
          f"(h={args.h}, k={args.k}) -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    world = synth.synthetic_world(seed=args.seed, n_questions=args.questions,
                                  n_docs=args.docs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_corpus(world.corpus, out / "corpus.jsonl")
    pipeline.write_questions(world.questions, out / "questions.tsv")
    dataio.write_trecqa(world.dataset, out / "dataset.jsonl")
    train_split, dev_split = world.train_dev_split()
    dataio.write_trecqa(train_split, out / "train.jsonl")
    dataio.write_trecqa(dev_split, out / "dev.jsonl")
    dataio.write_embeddings(world.embedding_table(args.embedding_dim),
                            out / "embeddings.txt")
    print(f"synthetic world: {len(world.corpus)} docs, "
          f"{len(world.questions)} questions -> {out}")
    return 0


def cmd_transfer(args) -> int:
    run = dataio.read_run(args.run)
    sidecar = pipeline.read_sidecar(args.sidecar)
    dataset = dataio.load_trecqa(args.dataset, "dataset")
    retrieved = _candidates_from_run(run, sidecar)
    store, records = transfer.transfer(retrieved, dataset,
                                       threshold=args.threshold)
    transfer.export_qrels(store, args.out)
    if args.audit:
        transfer.write_match_audit(records, args.audit)
    print(f"transferred {len(store)} judgments "
          f"({len(records)} matches above {args.threshold}) -> {args.out}")
    return 0


def _parse_metric_list(spec: str) -> tuple[list[str], float]:
    names = []
    p = 0.5
    for part in spec.split(","):
        part = part.strip()
        if part.startswith("rbp"):
            names.append("rbp")
            if ":" in part:
                p = float(part.split(":", 1)[1])
        elif part in ("map", "mrr", "bpref"):
            names.append(part)
        elif part:
            raise ValueError(f"unknown metric {part!r}")
    return names, p


def cmd_eval(args) -> int:
    run = dataio.read_run(args.run)
    store = transfer.load_qrels_store(args.qrels)
    names, p = _parse_metric_list(args.metrics)
    report = metrics.evaluate_run(metrics.run_to_ranked(run), store, p=p,
                                  depth=args.depth)
    columns = []
    for name in names:
        columns.append(name)
        if name == "rbp":
            columns.append("rbp_residual")
    header = ["query"] + columns + ["unjudged"]
    lines = ["\t".join(header)]
    if args.per_query:
        for qid, row in report.per_question.items():
            cells = [qid] + [f"{row[c]:.4f}" for c in columns]
            cells.append(str(row["unjudged"]))
            lines.append("\t".join(cells))
    mean_cells = ["all"] + [f"{report.means[c]:.4f}" for c in columns]
    mean_cells.append(str(report.unjudged))
    lines.append("\t".join(mean_cells))
    lines.append(f"# evaluated={report.evaluated_questions} "
                 f"excluded={report.excluded_questions}")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_recall_curve(args) -> int:
    index = InvertedIndex.load(args.index)
    doc_texts = dict(dataio.read_corpus(_docs_path(args.index)))
    dataset = dataio.load_trecqa(args.dataset, "dataset")
    stopwords = _stopwords(args)
    questions = _load_questions(args.questions)
    h_values = sorted({int(h) for h in args.h_values.split(",")})
    pools = {}
    for h in h_values:
        pool = {}
        for qid, question in questions:
            query = [t for t in question.tokens if t not in stopwords]
            hits = index.retrieve(query, h)
            sentences, _ = pipeline.segment_documents(hits, doc_texts)
            pool[qid] = sentences
        pools[h] = pool
    curve = metrics.recall_curve(pools, dataset, threshold=args.threshold)
    lines = ["h\trecall"] + [f"{h}\t{r:.4f}" for h, r in curve]
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_stats(args) -> int:
    if args.journal and args.session:
        service = assess_mod.AssessmentService(args.journal)
        print(json.dumps(service.results(args.session), indent=2))
        return 0
    if not args.counts:
        raise ValueError("pass either --journal and --session, or --counts")
    report = {}
    for i, spec in enumerate(args.counts, 1):
        parts = [int(x) for x in spec.split(",")]
        if len(parts) != 4:
            raise ValueError("--counts wants 'winsA,winsB,both,neither'")
        wins_a, wins_b, both, neither = parts
        ties = both + neither
        wilcoxon = stats.wilcoxon_sign_test(
            stats.prefs_from_counts(wins_a, wins_b, ties), sided=args.sided)
        report[f"judge{i}"] = {
            "wins_a": wins_a, "wins_b": wins_b, "both": both,
            "neither": neither,
            "binomial_p": stats.binomial_sign_test(wins_a, wins_b, ties,
                                                   sided=args.sided),
            "wilcoxon_p": wilcoxon.p_value,
            "wilcoxon_method": wilcoxon.method,
        }
    print(json.dumps(report, indent=2))
    return 0


def cmd_assess(args) -> int:
    if args.action == "create":
        run_a = dataio.read_run(args.run_a)
        run_b = dataio.read_run(args.run_b)
        sidecar = pipeline.read_sidecar(args.sidecar)
        questions = dict(pipeline.read_questions(args.questions))
        answers_a, answers_b = assess_mod.session_inputs_from_runs(
            run_a, run_b, sidecar, args.k)
        service = assess_mod.AssessmentService(args.journal)
        sid = service.create_session(
            questions, answers_a, answers_b, k=args.k, seed=args.seed,
            condition_a=args.condition_a, condition_b=args.condition_b,
            session_id=args.session_id,
            shuffle_per_judge=not args.fixed_order)
        print(f"created {sid} with {len(answers_a)} questions "
              f"in {args.journal}")
        return 0
    if args.action == "serve":
        service = assess_mod.AssessmentService(args.journal)
        server = make_server(service, host=args.host, port=args.port,
                             static_dir=args.static)
        host, port = server.server_address[:2]
        print(f"assess service on http://{host}:{port} "
              f"(journal: {args.journal})", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        return 0
    raise ValueError(f"unknown assess action {args.action!r}")


# ---------------------------------------------------------------------------
# parser

def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="qapipe",
        description="End-to-end factoid QA: retrieval, reranking, "
                    "evaluation, and blinded assessment.")
    parser.add_argument("--seed", type=int, default=0,
                        help="global random seed (default: 0)")
    parser.add_argument("--config", default=None,
                        help="key=value file mirroring flags; flags override")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for parallel stages (default: 1)")
    # the same globals are accepted after the verb; SUPPRESS keeps a
    # pre-verb value from being clobbered by the subparser default
    global_flags = argparse.ArgumentParser(add_help=False)
    global_flags.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                              help="global random seed")
    global_flags.add_argument("--config", default=argparse.SUPPRESS,
                              help="key=value file mirroring flags")
    global_flags.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                              help="worker cap for parallel stages")
    sub = parser.add_subparsers(dest="verb", required=True)
    verbs = {}

    def verb(name, func, help_text):
        p = sub.add_parser(
            name, help=help_text, parents=[global_flags],
            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(func=func)
        verbs[name] = p
        return p

    p = verb("index", cmd_index, "build an inverted index from a corpus")
    p.add_argument("--corpus", required=True, help="corpus JSONL (doc_id, text)")
    p.add_argument("--out", required=True, help="index output directory")
    p.add_argument("--k1", type=float, default=DEFAULT_K1, help="BM25 k1")
    p.add_argument("--b", type=float, default=DEFAULT_B, help="BM25 b")

    p = verb("retrieve", cmd_retrieve, "BM25 document retrieval")
    p.add_argument("--index", required=True)
    p.add_argument("--questions", required=True, help="qid<TAB>text file")
    p.add_argument("--hits", type=int, default=200, help="documents per question")
    p.add_argument("--out", required=True, help="output run file")
    p.add_argument("--stopwords", default=None, help="custom stopword file")

    p = verb("rerank", cmd_rerank, "rerank a sentence run file")
    p.add_argument("--mode", choices=("overlap", "idf", "cnn"), required=True)
    p.add_argument("--run", required=True, help="input run file")
    p.add_argument("--sidecar", required=True, help="input sentence texts")
    p.add_argument("--questions", required=True)
    p.add_argument("--k", type=int, default=5, help="output depth")
    p.add_argument("--out", required=True)
    p.add_argument("--out-sidecar", default=None)
    p.add_argument("--index", default=None, help="collection idf source")
    p.add_argument("--model", default=None, help="model dir (mode cnn)")
    p.add_argument("--embeddings", default=None, help="embeddings (mode cnn)")
    p.add_argument("--stopwords", default=None)

    p = verb("train", cmd_train, "train the CNN answer-selection model")
    p.add_argument("--train", required=True, help="training split JSONL")
    p.add_argument("--dev", required=True, help="dev split JSONL")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="model output directory")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=5,
                   help="early-stopping patience on dev MAP")
    p.add_argument("--filter-width", type=int, default=5)
    p.add_argument("--feature-maps", type=int, default=100)
    p.add_argument("--hidden-dim", type=int, default=None,
                   help="hidden width (default: 2*feature_maps+4)")
    p.add_argument("--trainable-embeddings", action="store_true")
    p.add_argument("--stopwords", default=None)

    p = verb("grad-check", cmd_grad_check,
             "verify analytic gradients against finite differences")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--threshold", type=float, default=1e-4,
                   help="max tolerated relative error")

    p = verb("pipeline", cmd_pipeline, "end-to-end question answering")
    p.add_argument("action", choices=("run",))
    p.add_argument("--index", required=True)
    p.add_argument("--condition", choices=("idf", "idf+cnn"), default="idf")
    p.add_argument("--h", type=int, default=200, help="documents retrieved")
    p.add_argument("--k", type=int, default=5, help="answers kept")
    p.add_argument("--model", default=None, help="model dir (idf+cnn)")
    p.add_argument("--embeddings", default=None, help="embeddings (idf+cnn)")
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True, help="output run file")
    p.add_argument("--sidecar", default=None, help="output sentence texts")
    p.add_argument("--stopwords", default=None)

    p = verb("synth", cmd_synth, "generate the bundled synthetic QA world")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--questions", type=int, default=20)
    p.add_argument("--docs", type=int, default=200)
    p.add_argument("--embedding-dim", type=int, default=16)

    p = verb("transfer-judgments", cmd_transfer,
             "transfer dataset labels onto retrieved sentences")
    p.add_argument("--run", required=True)
    p.add_argument("--sidecar", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--threshold", type=float, default=0.7,
                   help="strict Jaccard threshold")
    p.add_argument("--out", required=True, help="qrels output")
    p.add_argument("--audit", default=None, help="match-audit JSONL output")

    p = verb("eval", cmd_eval, "evaluate a run against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metrics", default="map,mrr,rbp:0.5,bpref",
                   help="comma list; rbp takes :p")
    p.add_argument("--per-query", action="store_true")
    p.add_argument("--depth", type=int, default=None, help="RBP depth")
    p.add_argument("--out", default=None, help="also write the TSV here")

    p = verb("recall-curve", cmd_recall_curve,
             "relevant-sentence recall vs documents retrieved")
    p.add_argument("--index", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--h-values", default="10,50,100,200")
    p.add_argument("--threshold", type=float, default=0.7)
    p.add_argument("--out", default=None)
    p.add_argument("--stopwords", default=None)

    p = verb("stats", cmd_stats, "significance tests over preference counts")
    p.add_argument("--counts", action="append", default=None,
                   metavar="A,B,BOTH,NEITHER",
                   help="per-judge counts; repeatable")
    p.add_argument("--journal", default=None, help="assessment journal")
    p.add_argument("--session", default=None, help="session id in the journal")
    p.add_argument("--sided", choices=("one", "two"), default="two")

    p = verb("assess", cmd_assess, "blinded side-by-side assessment")
    p.add_argument("action", choices=("create", "serve"))
    p.add_argument("--journal", required=True)
    p.add_argument("--run-a", default=None)
    p.add_argument("--run-b", default=None)
    p.add_argument("--sidecar", default=None)
    p.add_argument("--questions", default=None)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--session-id", default=None)
    p.add_argument("--condition-a", default="A")
    p.add_argument("--condition-b", default="B")
    p.add_argument("--fixed-order", action="store_true",
                   help="same question order for every judge")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8707)
    p.add_argument("--static", default=None, help="built UI directory to serve")

    return parser, verbs


def _read_config(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k.strip().replace("-", "_")] = v.strip()
    return out


def _apply_config_defaults(parser, verbs, argv):
    """--config values become parser defaults so explicit flags still win."""
    config_path = None
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif arg.startswith("--config="):
            config_path = arg.split("=", 1)[1]
    if not config_path:
        return
    config = _read_config(config_path)
    verb_name = next((a for a in argv if not a.startswith("-")
                      and a in verbs), None)
    targets = [parser] + ([verbs[verb_name]] if verb_name else [])
    for target in targets:
        for action in target._actions:
            if action.dest in config:
                raw = config[action.dest]
                if isinstance(action.const, bool) or isinstance(
                        action.default, bool):
                    value = raw.lower() in ("1", "true", "yes", "on")
                elif action.type is not None:
                    value = action.type(raw)
                else:
                    value = raw
                target.set_defaults(**{action.dest: value})


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, verbs = build_parser()
    try:
        _apply_config_defaults(parser, verbs, argv)
    except (OSError, ValueError) as e:
        return _fail(f"bad --config file: {e}")
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        return _fail(str(e))


if __name__ == "__main__":
    sys.exit(main())
