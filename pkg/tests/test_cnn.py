"""Convolutional reranker: forward math, gradients, training, persistence."""
import math

import numpy as np
import pytest

from qapipe.cnn import (
    ConvLayer,
    ModelConfig,
    ModelParams,
    TrainConfig,
    TrainingDiverged,
    arm_forward,
    batch_loss,
    grad_check,
    init_model,
    join,
    load_model,
    rerank_cnn,
    save_model,
    score,
    train,
    training_accuracy,
)
from qapipe.dataio import DatasetSplit, EmbeddingTable, QAPair
from qapipe.overlap import extract_features
from qapipe.text import sentence

NO_SW = frozenset()
UNIT_IDF = lambda t: 1.0


def table_for(dim, seed=11, vocab=()):
    vectors = {}
    rng = np.random.default_rng(seed)
    for tok in vocab:
        vectors[tok] = rng.uniform(-0.5, 0.5, dim).astype(np.float32)
    return EmbeddingTable(dim=dim, vectors=vectors, seed=seed)


def small_model(seed=42, d=4, w=2, m=3, hdim=5, table=None):
    config = ModelConfig(embedding_dim=d, filter_width=w, feature_maps=m,
                         hidden_dim=hdim, seed=seed)
    return init_model(config, table or table_for(d))


# --- independent forward oracle ----------------------------------------------
# Straight-line double-precision re-implementation with plain loops.

def oracle_forward(model, question, candidate, stopwords, idf):
    def arm(tokens, layer):
        m_, w_, d_ = layer.filters.shape
        rows = [np.asarray(model.embeddings.lookup(t), dtype=np.float64)
                for t in tokens]
        pad = [np.zeros(d_)] * (w_ - 1)
        padded = pad + rows + pad
        outputs = []
        for j in range(m_):
            best = 0.0
            for t in range(len(tokens) + w_ - 1):
                acc = 0.0
                for u in range(w_):
                    for v in range(d_):
                        acc += float(layer.filters[j, u, v]) * float(padded[t + u][v])
                acc += float(layer.biases[j])
                acc = max(acc, 0.0)
                best = max(best, acc)
            outputs.append(best)
        return outputs

    feats = extract_features(question.tokens, candidate.tokens, stopwords, idf)
    x = arm(question.tokens, model.question_arm) + \
        arm(candidate.tokens, model.answer_arm) + list(feats.as_tuple())
    hdim = model.w_hidden.shape[1]
    hidden = [
        math.tanh(sum(x[i] * float(model.w_hidden[i, j])
                      for i in range(len(x))) + float(model.b_hidden[j]))
        for j in range(hdim)
    ]
    logits = [
        sum(hidden[j] * float(model.w_out[j, c]) for j in range(hdim))
        + float(model.b_out[c])
        for c in range(2)
    ]
    mx = max(logits)
    exps = [math.exp(l - mx) for l in logits]
    return exps[1] / (exps[0] + exps[1])


class TestArmForward:
    def test_zero_embeddings_zero_bias(self):
        table = EmbeddingTable(dim=3, vectors={
            t: np.zeros(3, dtype=np.float32) for t in ("a", "b")
        })
        layer = ConvLayer(np.ones((2, 2, 3), dtype=np.float32),
                          np.zeros(2, dtype=np.float32))
        out = arm_forward(sentence("a b"), table, layer)
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_width1_row_selector(self):
        # one width-1 filter with unit weight on dimension j picks max(0, v_j)
        table = table_for(4, vocab=["tok"])
        v = table.lookup("tok")
        for j in range(4):
            filters = np.zeros((1, 1, 4), dtype=np.float32)
            filters[0, 0, j] = 1.0
            layer = ConvLayer(filters, np.zeros(1, dtype=np.float32))
            out = arm_forward(sentence("tok"), table, layer)
            assert out[0] == pytest.approx(max(0.0, float(v[j])), abs=1e-7)

    def test_duplicating_tokens_never_decreases_outputs(self):
        table = table_for(4, vocab=["a", "b", "c"])
        filters = np.random.default_rng(3).normal(
            size=(5, 1, 4)).astype(np.float32)
        layer = ConvLayer(filters, np.zeros(5, dtype=np.float32))
        base = arm_forward(sentence("a b c"), table, layer)
        doubled = arm_forward(sentence("a b c a b c"), table, layer)
        assert np.all(doubled >= base - 1e-7)

    def test_empty_sentence_rejected(self):
        table = table_for(4)
        layer = ConvLayer(np.zeros((1, 2, 4), dtype=np.float32),
                          np.zeros(1, dtype=np.float32))
        with pytest.raises(ValueError):
            arm_forward(sentence(""), table, layer)


class TestJoin:
    def test_definition(self):
        out = join(np.array([1.0, 2.0]), np.array([3.0, 4.0]), (0, 0, 0, 0))
        np.testing.assert_array_equal(out, [1, 2, 3, 4, 0, 0, 0, 0])

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            join(np.array([1.0]), np.array([1.0, 2.0]), (0, 0, 0, 0))

    def test_wrong_feature_count(self):
        with pytest.raises(ValueError):
            join(np.array([1.0]), np.array([1.0]), (0, 0, 0))

    def test_zero_inputs(self):
        out = join(np.zeros(3), np.zeros(3), (0, 0, 0, 0))
        assert out.shape == (10,)
        assert not out.any()


class TestScore:
    def test_probability_normalized(self):
        model = small_model()
        q, c = sentence("what is x"), sentence("x is y")
        # probs sum to 1 within 1e-12: score is P(relevant) of a softmax pair
        p = score(model, q, c, UNIT_IDF, NO_SW)
        assert 0.0 <= p <= 1.0

    def test_all_zero_model_scores_half(self):
        table = table_for(4)
        zero = lambda *shape: np.zeros(shape, dtype=np.float32)
        model = ModelParams(
            question_arm=ConvLayer(zero(3, 2, 4), zero(3)),
            answer_arm=ConvLayer(zero(3, 2, 4), zero(3)),
            w_hidden=zero(10, 5), b_hidden=zero(5),
            w_out=zero(5, 2), b_out=zero(2),
            embeddings=table,
        )
        assert score(model, sentence("a b"), sentence("c d"), UNIT_IDF, NO_SW) == 0.5

    def test_matches_straight_line_oracle(self):
        model = small_model(seed=42).astype(np.float64)
        q = sentence("who invented the telephone")
        c = sentence("bell invented the telephone in boston")
        got = score(model, q, c, UNIT_IDF, frozenset({"who", "the"}))
        want = oracle_forward(model, q, c, frozenset({"who", "the"}), UNIT_IDF)
        assert got == pytest.approx(want, rel=1e-12)

    def test_float32_close_to_oracle(self):
        model = small_model(seed=7)
        q, c = sentence("alpha beta gamma"), sentence("beta gamma delta")
        got = score(model, q, c, UNIT_IDF, NO_SW)
        want = oracle_forward(model, q, c, NO_SW, UNIT_IDF)
        assert got == pytest.approx(want, rel=1e-4)

    def test_empty_candidate_rejected(self):
        with pytest.raises(ValueError):
            score(small_model(), sentence("a"), sentence(""), UNIT_IDF, NO_SW)

    def test_siamese_independence(self):
        # the question representation inside a full scoring pass must be
        # identical no matter which candidate sits on the other arm
        from qapipe.cnn import _forward_pair
        model = small_model(seed=9)
        q = sentence("fixed question words")
        feats = (0.1, 0.2, 0.3, 0.4)
        trace_a = _forward_pair(model, q, sentence("first candidate text"),
                                feats, np.float32)
        trace_b = _forward_pair(model, q, sentence("entirely different words"),
                                feats, np.float32)
        np.testing.assert_array_equal(trace_a.q.output, trace_b.q.output)
        assert not np.array_equal(trace_a.a.output, trace_b.a.output)
        # and symmetrically for the answer arm
        c = sentence("shared candidate")
        trace_c = _forward_pair(model, sentence("one question"), c,
                                feats, np.float32)
        trace_d = _forward_pair(model, sentence("another question entirely"), c,
                                feats, np.float32)
        np.testing.assert_array_equal(trace_c.a.output, trace_d.a.output)

    def test_deterministic(self):
        model = small_model(seed=5)
        q, c = sentence("a b c"), sentence("b c d")
        assert score(model, q, c, UNIT_IDF, NO_SW) == score(model, q, c, UNIT_IDF, NO_SW)


class TestShapeLaw:
    def test_wrong_hidden_width_fails_at_build(self):
        table = table_for(4)
        zero = lambda *shape: np.zeros(shape, dtype=np.float32)
        with pytest.raises(ValueError, match="width 10"):
            ModelParams(
                question_arm=ConvLayer(zero(3, 2, 4), zero(3)),
                answer_arm=ConvLayer(zero(3, 2, 4), zero(3)),
                w_hidden=zero(9, 5), b_hidden=zero(5),  # 9 != 2*3+4
                w_out=zero(5, 2), b_out=zero(2),
                embeddings=table,
            )

    def test_arm_map_mismatch_fails(self):
        table = table_for(4)
        zero = lambda *shape: np.zeros(shape, dtype=np.float32)
        with pytest.raises(ValueError, match="same number"):
            ModelParams(
                question_arm=ConvLayer(zero(3, 2, 4), zero(3)),
                answer_arm=ConvLayer(zero(2, 2, 4), zero(2)),
                w_hidden=zero(10, 5), b_hidden=zero(5),
                w_out=zero(5, 2), b_out=zero(2),
                embeddings=table,
            )

    def test_default_hidden_dim_is_join_width(self):
        config = ModelConfig(embedding_dim=4, filter_width=2, feature_maps=3)
        assert config.resolved_hidden_dim() == 10


class TestGradCheck:
    def test_tiny_model_below_threshold(self):
        model = small_model(seed=1, d=4, w=2, m=3, hdim=5)
        batch = [
            (sentence("a b c"), sentence("b c d"), 1),
            (sentence("a b"), sentence("x y"), 0),
        ]
        err = grad_check(model, batch, UNIT_IDF, NO_SW, epsilon=1e-4)
        assert err < 1e-4

    def test_zero_model_output_bias_gradient_is_softmax_residual(self):
        # at the symmetric point p = (0.5, 0.5); dL/db_out = p - onehot(y)
        from qapipe.cnn import _batch_loss_and_grads
        table = table_for(4)
        zero = lambda *shape: np.zeros(shape, dtype=np.float64)
        model = ModelParams(
            question_arm=ConvLayer(zero(3, 2, 4), zero(3)),
            answer_arm=ConvLayer(zero(3, 2, 4), zero(3)),
            w_hidden=zero(10, 5), b_hidden=zero(5),
            w_out=zero(5, 2), b_out=zero(2),
            embeddings=table,
        )
        batch = [(sentence("a"), sentence("b"), 1)]
        feats = [(0.0, 0.0, 0.0, 0.0)]
        _, grads = _batch_loss_and_grads(model, batch, feats, np.float64)
        np.testing.assert_allclose(grads.arrays["b_out"], [0.5, -0.5], atol=1e-12)

    def test_single_filter_weight_perturbation(self):
        model = small_model(seed=3).astype(np.float64)
        batch = [(sentence("a b c d"), sentence("c d e"), 1)]
        feats = extract_features(batch[0][0].tokens, batch[0][1].tokens,
                                 NO_SW, UNIT_IDF).as_tuple()
        from qapipe.cnn import _batch_loss_and_grads
        _, grads = _batch_loss_and_grads(model, batch, [feats], np.float64)
        eps = 1e-5
        w = model.question_arm.filters
        original = w[1, 0, 2]
        w[1, 0, 2] = original + eps
        up, _ = _batch_loss_and_grads(model, batch, [feats], np.float64,
                                      compute_grads=False)
        w[1, 0, 2] = original - eps
        down, _ = _batch_loss_and_grads(model, batch, [feats], np.float64,
                                        compute_grads=False)
        w[1, 0, 2] = original
        numeric = (up - down) / (2 * eps)
        analytic = grads.arrays["q_filters"][1, 0, 2]
        assert analytic == pytest.approx(numeric, rel=1e-5, abs=1e-9)

    def test_random_models_sweep(self):
        rng = np.random.default_rng(123)
        for trial in range(5):
            model = small_model(seed=int(rng.integers(1_000_000)),
                                d=3, w=2, m=2, hdim=4)
            batch = [
                (sentence("p q r"), sentence("q r s"), int(rng.integers(2))),
                (sentence("p q"), sentence("t u v"), int(rng.integers(2))),
            ]
            assert grad_check(model, batch, UNIT_IDF, NO_SW) < 1e-4

    def test_validation(self):
        model = small_model()
        with pytest.raises(ValueError):
            grad_check(model, [], UNIT_IDF, NO_SW)
        with pytest.raises(ValueError):
            grad_check(model, [(sentence("a"), sentence("b"), 0)],
                       UNIT_IDF, NO_SW, epsilon=0)


def separable_dataset():
    """20 pairs whose label is exactly (content-word overlap > 0)."""
    vocab = ["zor", "mak", "tel", "run", "sky", "oak", "fin", "gem"]
    split = DatasetSplit(name="synthetic")
    for i in range(20):
        a, b = vocab[i % 8], vocab[(i + 3) % 8]
        q = sentence(f"which {a} holds the {b}")
        if i % 2 == 0:
            c = sentence(f"the {a} holds it firmly")  # shares a content word
            label = 1
        else:
            c = sentence("nothing of note happened here")
            label = 0
        split.pairs.append(QAPair(f"q{i}", q, c, label))
    return split


class TestTrain:
    def make_setup(self, seed=0):
        split = separable_dataset()
        table = table_for(8, seed=2)
        config = ModelConfig(embedding_dim=8, filter_width=3, feature_maps=6,
                             hidden_dim=16, seed=seed)
        model = init_model(config, table)
        return model, split

    def test_linear_oracle_separates(self):
        # the feature channel alone solves the task: overlap > 0 iff label 1
        split = separable_dataset()
        sw = frozenset({"which", "the", "holds"})
        for p in split.pairs:
            feats = extract_features(p.question.tokens, p.candidate.tokens,
                                     sw, UNIT_IDF)
            assert (feats.overlap_content > 0) == bool(p.label)

    def test_reaches_95_percent_accuracy(self):
        model, split = self.make_setup()
        config = TrainConfig(epochs=50, batch_size=4, learning_rate=0.01,
                             seed=0, patience=50)
        sw = frozenset({"which", "the", "holds"})
        trained, log = train(model, split, split, config, UNIT_IDF, sw)
        assert training_accuracy(trained, split, UNIT_IDF, sw) >= 0.95
        assert len(log) >= 1
        assert all(math.isfinite(e.loss) for e in log)

    def test_seeded_determinism_bitwise(self):
        config = TrainConfig(epochs=3, batch_size=4, learning_rate=0.01,
                             seed=7, patience=10)
        runs = []
        for _ in range(2):
            model, split = self.make_setup(seed=4)
            trained, _ = train(model, split, split, config, UNIT_IDF, NO_SW)
            runs.append(trained.checksum())
        assert runs[0] == runs[1]

    def test_zero_learning_rate_keeps_parameters(self):
        model, split = self.make_setup()
        config = TrainConfig(epochs=3, batch_size=4, learning_rate=0.0,
                             seed=0, patience=10)
        before = model.checksum()
        trained, _ = train(model, split, split, config, UNIT_IDF, NO_SW)
        assert trained.checksum() == before

    def test_early_stopping_logs_dev_map(self):
        model, split = self.make_setup()
        config = TrainConfig(epochs=4, batch_size=8, learning_rate=0.01,
                             seed=1, patience=2)
        _, log = train(model, split, split, config, UNIT_IDF, NO_SW)
        assert all(0.0 <= e.dev_map <= 1.0 for e in log)
        assert [e.epoch for e in log] == list(range(1, len(log) + 1))

    def test_divergence_reports_epoch(self):
        model, split = self.make_setup()
        # a non-finite parameter poisons the forward pass immediately
        model.w_out[0, 0] = np.inf
        config = TrainConfig(epochs=5, batch_size=4, learning_rate=0.01,
                             seed=0, patience=5)
        with np.errstate(invalid="ignore"), pytest.raises(TrainingDiverged) as exc:
            train(model, split, split, config, UNIT_IDF, NO_SW)
        assert exc.value.epoch == 1

    def test_empty_split_rejected(self):
        model, split = self.make_setup()
        config = TrainConfig()
        with pytest.raises(ValueError):
            train(model, DatasetSplit("empty"), split, config, UNIT_IDF, NO_SW)


class TestRerank:
    def test_single_candidate(self):
        model = small_model()
        out = rerank_cnn(model, "q1", sentence("a b"),
                         [sentence("a b", doc_id="d", position=0)], 5,
                         UNIT_IDF, NO_SW)
        assert len(out) == 1 and out[0].rank == 1 and out[0].stage == "cnn"

    def test_duplicates_tie_break_by_key(self):
        model = small_model()
        cands = [sentence("same text", doc_id="d", position=i) for i in range(3)]
        out = rerank_cnn(model, "q1", sentence("same"), cands, 3, UNIT_IDF, NO_SW)
        assert len({c.score for c in out}) == 1
        assert [c.key for c in out] == ["d#0", "d#1", "d#2"]

    def test_k_covers_all(self):
        model = small_model()
        cands = [sentence(f"c {i}", doc_id="d", position=i) for i in range(4)]
        out = rerank_cnn(model, "q1", sentence("c"), cands, 99, UNIT_IDF, NO_SW)
        assert len(out) == 4


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        table = table_for(4, vocab=["a", "b"])
        model = small_model(table=table)
        save_model(model, tmp_path / "model")
        loaded = load_model(tmp_path / "model", table)
        for (name, a), (_, b) in zip(model.parameter_arrays(),
                                     loaded.parameter_arrays()):
            np.testing.assert_array_equal(a, b, err_msg=name)
        assert loaded.checksum() == model.checksum()

    def test_corrupted_manifest(self, tmp_path):
        table = table_for(4)
        save_model(small_model(table=table), tmp_path / "model")
        manifest = tmp_path / "model" / "manifest.txt"
        manifest.write_text(manifest.read_text().replace("feature_maps", "featmaps"))
        with pytest.raises(ValueError, match="manifest"):
            load_model(tmp_path / "model", table)

    def test_mismatched_embedding_table(self, tmp_path):
        table = table_for(4, vocab=["a"])
        save_model(small_model(table=table), tmp_path / "model")
        other = table_for(4, vocab=["b"])
        with pytest.raises(ValueError, match="embedding table"):
            load_model(tmp_path / "model", other)

    def test_truncated_blob(self, tmp_path):
        table = table_for(4)
        save_model(small_model(table=table), tmp_path / "model")
        blob = (tmp_path / "model" / "params.bin").read_bytes()
        (tmp_path / "model" / "params.bin").write_bytes(blob[:-8])
        with pytest.raises(ValueError, match="blob"):
            load_model(tmp_path / "model", table)


def test_softmax_pair_sums_to_one():
    from qapipe.cnn import _softmax
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = _softmax(rng.normal(scale=30, size=2))
        assert abs(p.sum() - 1.0) < 1e-12


def test_batch_loss_matches_cross_entropy_by_hand():
    model = small_model(seed=13).astype(np.float64)
    q, c = sentence("a b"), sentence("b c")
    p = score(model, q, c, UNIT_IDF, NO_SW)
    loss1 = batch_loss(model, [(q, c, 1)], UNIT_IDF, NO_SW)
    loss0 = batch_loss(model, [(q, c, 0)], UNIT_IDF, NO_SW)
    assert loss1 == pytest.approx(-math.log(p), rel=1e-12)
    assert loss0 == pytest.approx(-math.log(1 - p), rel=1e-9)
