"""Siamese convolutional answer-selection model.

Two convolutional arms encode the question and the candidate sentence into
fixed-width vectors (wide convolution over the embedding matrix, per-map
bias, ReLU, max over positions). The join layer concatenates both arm
outputs with the four overlap features; a tanh hidden layer and a binary
softmax produce P(candidate contains the answer).

All tensor math is written out against plain numpy arrays: forward pass,
analytic backprop, and Adam updates. Training and scoring run in float32;
gradient verification runs the same code in float64 against central finite
differences.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, Optional, Sequence

import numpy as np

from .dataio import DatasetSplit, EmbeddingTable
from .index import IdfSource
from .overlap import ScoredCandidate, extract_features
from .text import Sentence

N_EXTRA_FEATURES = 4  # overlap feature vector width at the join layer


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass
class ModelConfig:
    embedding_dim: int = 50
    filter_width: int = 5
    feature_maps: int = 100
    hidden_dim: Optional[int] = None  # defaults to 2m + 4
    seed: int = 0

    def resolved_hidden_dim(self) -> int:
        return self.hidden_dim if self.hidden_dim is not None else (
            2 * self.feature_maps + N_EXTRA_FEATURES)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    patience: int = 5
    embedding_trainable: bool = False

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.patience <= 0:
            raise ValueError("epochs, batch_size, and patience must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


@dataclass
class ConvLayer:
    filters: np.ndarray  # (maps, width, dim)
    biases: np.ndarray   # (maps,)

    def __post_init__(self):
        if self.filters.ndim != 3:
            raise ValueError("filters must have shape (maps, width, dim)")
        if self.biases.shape != (self.filters.shape[0],):
            raise ValueError("one bias per feature map required")
        if not (np.isfinite(self.filters).all() and np.isfinite(self.biases).all()):
            raise ValueError("non-finite convolution parameters")

    @property
    def maps(self) -> int:
        return self.filters.shape[0]

    @property
    def width(self) -> int:
        return self.filters.shape[1]


@dataclass
class ModelParams:
    question_arm: ConvLayer
    answer_arm: ConvLayer
    w_hidden: np.ndarray  # (2m + 4, hdim)
    b_hidden: np.ndarray  # (hdim,)
    w_out: np.ndarray     # (hdim, 2)
    b_out: np.ndarray     # (2,)
    embeddings: EmbeddingTable
    embedding_trainable: bool = False
    seed: int = 0

    def __post_init__(self):
        m = self.question_arm.maps
        if self.answer_arm.maps != m:
            raise ValueError("arms must have the same number of feature maps")
        join_width = 2 * m + N_EXTRA_FEATURES
        if self.w_hidden.shape[0] != join_width:
            raise ValueError(f"hidden layer expects input width {join_width}, "
                             f"got {self.w_hidden.shape[0]}")
        hdim = self.w_hidden.shape[1]
        if self.b_hidden.shape != (hdim,):
            raise ValueError("hidden bias width mismatch")
        if self.w_out.shape != (hdim, 2) or self.b_out.shape != (2,):
            raise ValueError("output layer must map hidden_dim -> 2")

    @property
    def feature_maps(self) -> int:
        return self.question_arm.maps

    def parameter_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Named parameter tensors in the fixed serialization order."""
        return [
            ("q_filters", self.question_arm.filters),
            ("q_biases", self.question_arm.biases),
            ("a_filters", self.answer_arm.filters),
            ("a_biases", self.answer_arm.biases),
            ("w_hidden", self.w_hidden),
            ("b_hidden", self.b_hidden),
            ("w_out", self.w_out),
            ("b_out", self.b_out),
        ]

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            question_arm=ConvLayer(self.question_arm.filters.astype(dtype),
                                   self.question_arm.biases.astype(dtype)),
            answer_arm=ConvLayer(self.answer_arm.filters.astype(dtype),
                                 self.answer_arm.biases.astype(dtype)),
            w_hidden=self.w_hidden.astype(dtype),
            b_hidden=self.b_hidden.astype(dtype),
            w_out=self.w_out.astype(dtype),
            b_out=self.b_out.astype(dtype),
            embeddings=self.embeddings,
            embedding_trainable=self.embedding_trainable,
            seed=self.seed,
        )

    def copy(self) -> "ModelParams":
        return self.astype(self.w_hidden.dtype)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.parameter_arrays():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def init_model(config: ModelConfig, table: EmbeddingTable,
               embedding_trainable: bool = False,
               dtype=np.float32) -> ModelParams:
    """Seeded uniform initialization scaled by fan-in."""
    if table.dim != config.embedding_dim:
        raise ValueError(f"embedding table dim {table.dim} != configured "
                         f"{config.embedding_dim}")
    rng = np.random.default_rng(config.seed)
    m, w, d = config.feature_maps, config.filter_width, config.embedding_dim
    hdim = config.resolved_hidden_dim()
    join = 2 * m + N_EXTRA_FEATURES

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape).astype(dtype)

    return ModelParams(
        question_arm=ConvLayer(uniform((m, w, d), w * d), np.zeros(m, dtype=dtype)),
        answer_arm=ConvLayer(uniform((m, w, d), w * d), np.zeros(m, dtype=dtype)),
        w_hidden=uniform((join, hdim), join),
        b_hidden=np.zeros(hdim, dtype=dtype),
        w_out=uniform((hdim, 2), hdim),
        b_out=np.zeros(2, dtype=dtype),
        embeddings=table,
        embedding_trainable=embedding_trainable,
        seed=config.seed,
    )


# ---------------------------------------------------------------------------
# forward pass

@dataclass
class _ArmTrace:
    windows: np.ndarray   # (positions, width * dim)
    pre: np.ndarray       # (positions, maps) pre-activation
    argmax: np.ndarray    # (maps,) winning position per map
    output: np.ndarray    # (maps,)
    tokens: tuple[str, ...]


def _window_stack(matrix: np.ndarray, width: int) -> np.ndarray:
    """Zero-pad (width-1) rows on each side and stack all length-`width` windows."""
    length, dim = matrix.shape
    pad = width - 1
    padded = np.zeros((length + 2 * pad, dim), dtype=matrix.dtype)
    padded[pad:pad + length] = matrix
    if width == 1:
        return padded
    view = np.lib.stride_tricks.sliding_window_view(padded, (width, dim))
    return view[:, 0].reshape(length + width - 1, width * dim)


def _arm_trace(sentence: Sentence, table: EmbeddingTable, layer: ConvLayer,
               dtype) -> _ArmTrace:
    if not sentence.tokens:
        raise ValueError("cannot encode an empty sentence")
    matrix = table.matrix(sentence.tokens).astype(dtype, copy=False)
    windows = _window_stack(matrix, layer.width)
    flat = layer.filters.reshape(layer.maps, -1)
    pre = windows @ flat.T + layer.biases
    act = np.maximum(pre, 0.0)
    argmax = act.argmax(axis=0)
    output = act[argmax, np.arange(layer.maps)]
    return _ArmTrace(windows, pre, argmax, output, sentence.tokens)


def arm_forward(sentence: Sentence, table: EmbeddingTable,
                layer: ConvLayer) -> np.ndarray:
    """Wide convolution + bias + ReLU + max pooling -> length-m vector."""
    return _arm_trace(sentence, table, layer, layer.filters.dtype).output


def join(x_q: np.ndarray, x_d: np.ndarray, x_feat: Sequence[float]) -> np.ndarray:
    """Concatenate [x_q; x_d; x_feat]; arm outputs must have equal length."""
    x_q = np.asarray(x_q)
    x_d = np.asarray(x_d)
    if x_q.shape != x_d.shape or x_q.ndim != 1:
        raise ValueError(f"arm outputs must be equal-length vectors, got "
                         f"{x_q.shape} and {x_d.shape}")
    feat = np.asarray(list(x_feat), dtype=x_q.dtype)
    if feat.shape != (N_EXTRA_FEATURES,):
        raise ValueError(f"expected {N_EXTRA_FEATURES} overlap features")
    return np.concatenate([x_q, x_d, feat])


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


@dataclass
class _PairTrace:
    q: _ArmTrace
    a: _ArmTrace
    x_join: np.ndarray
    hidden: np.ndarray
    probs: np.ndarray


def _forward_pair(model: ModelParams, question: Sentence, candidate: Sentence,
                  feats: Sequence[float], dtype) -> _PairTrace:
    q = _arm_trace(question, model.embeddings, model.question_arm, dtype)
    a = _arm_trace(candidate, model.embeddings, model.answer_arm, dtype)
    x_join = join(q.output, a.output, feats)
    hidden = np.tanh(x_join @ model.w_hidden + model.b_hidden)
    probs = _softmax(hidden @ model.w_out + model.b_out)
    return _PairTrace(q, a, x_join, hidden, probs)


def score(model: ModelParams, question: Sentence, candidate: Sentence,
          idf: IdfSource, stopwords: FrozenSet[str]) -> float:
    """P(candidate contains the answer), deterministic given model and inputs."""
    if not candidate.tokens:
        raise ValueError("empty candidate")
    feats = extract_features(question.tokens, candidate.tokens, stopwords, idf)
    dtype = model.w_hidden.dtype
    trace = _forward_pair(model, question, candidate, feats.as_tuple(), dtype)
    return float(trace.probs[1])


def rerank_cnn(model: ModelParams, question_id: str, question: Sentence,
               candidates: Sequence[Sentence], k: int, idf: IdfSource,
               stopwords: FrozenSet[str]) -> list[ScoredCandidate]:
    """Order candidates by model score, truncated to k; ties break by key."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = [(score(model, question, c, idf, stopwords), c) for c in candidates]
    scored.sort(key=lambda sc: (-sc[0], sc[1].key))
    return [
        ScoredCandidate(question_id, cand, cand.key, s, rank, "cnn")
        for rank, (s, cand) in enumerate(scored[:k], 1)
    ]


# ---------------------------------------------------------------------------
# backward pass

class _Grads:
    def __init__(self, model: ModelParams, dtype):
        self.arrays = {
            name: np.zeros_like(arr, dtype=dtype)
            for name, arr in model.parameter_arrays()
        }
        self.embedding: dict[str, np.ndarray] = {}
        self.dtype = dtype

    def accumulate_embedding(self, token: str, grad: np.ndarray):
        if token in self.embedding:
            self.embedding[token] += grad
        else:
            self.embedding[token] = grad.copy()


def _backward_arm(trace: _ArmTrace, layer: ConvLayer, d_out: np.ndarray,
                  grads: _Grads, prefix: str, trainable_embeddings: bool):
    maps = layer.maps
    width = layer.width
    d_pre = np.zeros_like(trace.pre)
    cols = np.arange(maps)
    winners = trace.pre[trace.argmax, cols]
    active = winners > 0
    d_pre[trace.argmax[active], cols[active]] = d_out[active]
    flat = layer.filters.reshape(maps, -1)
    grads.arrays[f"{prefix}_filters"] += (d_pre.T @ trace.windows).reshape(layer.filters.shape)
    grads.arrays[f"{prefix}_biases"] += d_pre.sum(axis=0)
    if trainable_embeddings:
        d_windows = d_pre @ flat  # (positions, width * dim)
        dim = layer.filters.shape[2]
        length = len(trace.tokens)
        pad = width - 1
        d_padded = np.zeros((length + 2 * pad, dim), dtype=grads.dtype)
        for t in range(d_windows.shape[0]):
            d_padded[t:t + width] += d_windows[t].reshape(width, dim)
        for i, token in enumerate(trace.tokens):
            grads.accumulate_embedding(token, d_padded[pad + i])


def _backward_pair(model: ModelParams, trace: _PairTrace, label: int,
                   grads: _Grads, weight: float):
    d_logits = trace.probs.copy()
    d_logits[label] -= 1.0
    d_logits *= weight
    grads.arrays["w_out"] += np.outer(trace.hidden, d_logits)
    grads.arrays["b_out"] += d_logits
    d_hidden = model.w_out @ d_logits
    d_hpre = d_hidden * (1.0 - trace.hidden ** 2)
    grads.arrays["w_hidden"] += np.outer(trace.x_join, d_hpre)
    grads.arrays["b_hidden"] += d_hpre
    d_join = model.w_hidden @ d_hpre
    m = model.feature_maps
    _backward_arm(trace.q, model.question_arm, d_join[:m], grads, "q",
                  model.embedding_trainable)
    _backward_arm(trace.a, model.answer_arm, d_join[m:2 * m], grads, "a",
                  model.embedding_trainable)


Batch = Sequence[tuple[Sentence, Sentence, int]]


def _batch_loss_and_grads(model: ModelParams, batch: Batch,
                          feats: Sequence[Sequence[float]], dtype,
                          compute_grads: bool = True) -> tuple[float, Optional[_Grads]]:
    if compute_grads and model.embedding_trainable:
        # gradient flow into embedding rows needs the per-pair traces
        return _pairwise_loss_and_grads(model, batch, feats, dtype)
    return _stacked_loss_and_grads(model, batch, feats, dtype, compute_grads)


def _pairwise_loss_and_grads(model: ModelParams, batch: Batch,
                             feats: Sequence[Sequence[float]], dtype,
                             ) -> tuple[float, _Grads]:
    grads = _Grads(model, dtype)
    total = 0.0
    weight = 1.0 / len(batch)
    for (question, candidate, label), f in zip(batch, feats):
        trace = _forward_pair(model, question, candidate, f, dtype)
        total += -math.log(max(float(trace.probs[label]), 1e-300)) * weight
        _backward_pair(model, trace, label, grads, weight)
    return total, grads


class _StackedArm:
    """All window matrices of one arm for a whole batch, as a single stack.

    One big GEMM replaces a batch worth of small ones; per-pair slices are
    recovered through row spans.
    """

    def __init__(self, layer: ConvLayer, sentences: Sequence[Sentence],
                 table: EmbeddingTable, dtype):
        spans = []
        blocks = []
        start = 0
        for s in sentences:
            if not s.tokens:
                raise ValueError("cannot encode an empty sentence")
            matrix = table.matrix(s.tokens).astype(dtype, copy=False)
            block = _window_stack(matrix, layer.width)
            blocks.append(block)
            spans.append((start, start + block.shape[0]))
            start += block.shape[0]
        self.spans = spans
        self.windows = np.vstack(blocks)
        flat = layer.filters.reshape(layer.maps, -1)
        pre = self.windows @ flat.T + layer.biases
        act = np.maximum(pre, 0.0)
        maps = layer.maps
        cols = np.arange(maps)
        outputs = np.empty((len(sentences), maps), dtype=dtype)
        argmax_rows = np.empty((len(sentences), maps), dtype=np.int64)
        for i, (lo, hi) in enumerate(spans):
            seg = act[lo:hi]
            winners = seg.argmax(axis=0)
            outputs[i] = seg[winners, cols]
            argmax_rows[i] = lo + winners
        self.pre = pre
        self.outputs = outputs
        self.argmax_rows = argmax_rows

    def backward(self, d_outputs: np.ndarray, layer: ConvLayer, grads: _Grads,
                 prefix: str):
        """dL/d(filters, biases) given dL/d(pooled outputs) for every pair."""
        maps = layer.maps
        cols = np.arange(maps)
        d_pre = np.zeros_like(self.pre)
        for i in range(d_outputs.shape[0]):
            rows = self.argmax_rows[i]
            active = self.pre[rows, cols] > 0
            d_pre[rows[active], cols[active]] = d_outputs[i][active]
        grads.arrays[f"{prefix}_filters"] += \
            (d_pre.T @ self.windows).reshape(layer.filters.shape)
        grads.arrays[f"{prefix}_biases"] += d_pre.sum(axis=0)


def _stacked_loss_and_grads(model: ModelParams, batch: Batch,
                            feats: Sequence[Sequence[float]], dtype,
                            compute_grads: bool) -> tuple[float, Optional[_Grads]]:
    n = len(batch)
    weight = 1.0 / n
    labels = np.array([label for _, _, label in batch])
    q_arm = _StackedArm(model.question_arm, [q for q, _, _ in batch],
                        model.embeddings, dtype)
    a_arm = _StackedArm(model.answer_arm, [c for _, c, _ in batch],
                        model.embeddings, dtype)
    feat_block = np.asarray([list(f) for f in feats], dtype=dtype)
    if feat_block.shape != (n, N_EXTRA_FEATURES):
        raise ValueError(f"expected {N_EXTRA_FEATURES} overlap features per pair")
    x_join = np.concatenate([q_arm.outputs, a_arm.outputs, feat_block], axis=1)
    hidden = np.tanh(x_join @ model.w_hidden + model.b_hidden)
    logits = hidden @ model.w_out + model.b_out
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    picked = np.maximum(probs[np.arange(n), labels], 1e-300)
    total = float(-np.log(picked).sum() * weight)
    if not compute_grads:
        return total, None

    grads = _Grads(model, dtype)
    d_logits = probs.astype(dtype, copy=True)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits *= weight
    grads.arrays["w_out"] += hidden.T @ d_logits
    grads.arrays["b_out"] += d_logits.sum(axis=0)
    d_hidden = d_logits @ model.w_out.T
    d_hpre = d_hidden * (1.0 - hidden ** 2)
    grads.arrays["w_hidden"] += x_join.T @ d_hpre
    grads.arrays["b_hidden"] += d_hpre.sum(axis=0)
    d_join = d_hpre @ model.w_hidden.T
    m = model.feature_maps
    q_arm.backward(d_join[:, :m], model.question_arm, grads, "q")
    a_arm.backward(d_join[:, m:2 * m], model.answer_arm, grads, "a")
    return total, grads


def batch_loss(model: ModelParams, batch: Batch, idf: IdfSource,
               stopwords: FrozenSet[str]) -> float:
    """Mean cross-entropy of a batch under the current parameters."""
    feats = [extract_features(q.tokens, c.tokens, stopwords, idf).as_tuple()
             for q, c, _ in batch]
    dtype = model.w_hidden.dtype
    loss, _ = _batch_loss_and_grads(model, batch, feats, dtype, compute_grads=False)
    return loss


# ---------------------------------------------------------------------------
# gradient verification

def grad_check(model: ModelParams, batch: Batch, idf: IdfSource,
               stopwords: FrozenSet[str], epsilon: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs entirely in float64 regardless of the model's training precision.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    model64 = model.astype(np.float64)
    feats = [extract_features(q.tokens, c.tokens, stopwords, idf).as_tuple()
             for q, c, _ in batch]
    _, grads = _batch_loss_and_grads(model64, batch, feats, np.float64)
    worst = 0.0
    for name, arr in model64.parameter_arrays():
        analytic = grads.arrays[name]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            up, _ = _batch_loss_and_grads(model64, batch, feats, np.float64,
                                          compute_grads=False)
            flat[i] = original - epsilon
            down, _ = _batch_loss_and_grads(model64, batch, feats, np.float64,
                                            compute_grads=False)
            flat[i] = original
            numeric = (up - down) / (2.0 * epsilon)
            a = analytic.reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# training

@dataclass
class EpochLog:
    epoch: int
    loss: float
    dev_map: float


class _Adam:
    def __init__(self, model: ModelParams, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in model.parameter_arrays()}
        self.v = {name: np.zeros_like(arr) for name, arr in model.parameter_arrays()}

    def step(self, model: ModelParams, grads: _Grads):
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for name, arr in model.parameter_arrays():
            g = grads.arrays[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / correct1
            v_hat = self.v[name] / correct2
            arr -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(arr.dtype)


def _apply_embedding_grads(table: EmbeddingTable, grads: _Grads, lr: float):
    # plain SGD on embedding rows; only rows actually touched move
    for token, g in grads.embedding.items():
        vec = table.lookup(token)
        vec -= (lr * g).astype(vec.dtype)


def dev_map(model: ModelParams, dev: DatasetSplit, idf: IdfSource,
            stopwords: FrozenSet[str]) -> float:
    """MAP over dev questions; fully judged, so R is the group positive count."""
    ap_values = []
    for _, group in dev.groups():
        r_total = sum(p.label for p in group)
        if r_total == 0:
            continue
        scores = [
            (score(model, p.question, p.candidate, idf, stopwords), i, p.label)
            for i, p in enumerate(group)
        ]
        scores.sort(key=lambda s: (-s[0], s[1]))
        hits = 0
        acc = 0.0
        for rank, (_, _, label) in enumerate(scores, 1):
            if label == 1:
                hits += 1
                acc += hits / rank
        ap_values.append(acc / r_total)
    return sum(ap_values) / len(ap_values) if ap_values else 0.0


def train(model_init: ModelParams, train_split: DatasetSplit,
          dev_split: DatasetSplit, config: TrainConfig, idf: IdfSource,
          stopwords: FrozenSet[str]) -> tuple[ModelParams, list[EpochLog]]:
    """Mini-batch cross-entropy training; returns the best dev-MAP epoch.

    Fully deterministic for a fixed (seed, data, config): initialization is
    the caller's, batch order comes from the config seed, and reductions run
    in a fixed order.
    """
    if not train_split.pairs or not dev_split.pairs:
        raise ValueError("training and dev splits must be nonempty")
    model = model_init.copy()
    model.embedding_trainable = config.embedding_trainable
    dtype = model.w_hidden.dtype
    pairs = [(p.question, p.candidate, p.label) for p in train_split.pairs]
    feats = [
        extract_features(q.tokens, c.tokens, stopwords, idf).as_tuple()
        for q, c, _ in pairs
    ]
    rng = np.random.default_rng(config.seed)
    optimizer = _Adam(model, config.learning_rate)
    log: list[EpochLog] = []
    best = model.copy()
    best_map = -1.0
    best_loss = math.inf
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = [pairs[i] for i in idx]
            bfeats = [feats[i] for i in idx]
            loss, grads = _batch_loss_and_grads(model, batch, bfeats, dtype)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            optimizer.step(model, grads)
            if config.embedding_trainable:
                _apply_embedding_grads(model.embeddings, grads, config.learning_rate)
            epoch_loss += loss
            n_batches += 1
        mean_loss = epoch_loss / max(n_batches, 1)
        current_map = dev_map(model, dev_split, idf, stopwords)
        log.append(EpochLog(epoch, mean_loss, current_map))
        # dev MAP decides; exact ties (it saturates easily on small dev
        # sets) go to the lower-loss epoch so saturation keeps training
        if current_map > best_map or (current_map == best_map
                                      and mean_loss < best_loss):
            if current_map > best_map:
                stale = 0
            else:
                stale += 1
            best_map = current_map
            best_loss = mean_loss
            best = model.copy()
        else:
            stale += 1
        if stale >= config.patience:
            break
    return best, log


def training_accuracy(model: ModelParams, split: DatasetSplit, idf: IdfSource,
                      stopwords: FrozenSet[str]) -> float:
    correct = 0
    for p in split.pairs:
        predicted = score(model, p.question, p.candidate, idf, stopwords) >= 0.5
        correct += int(predicted) == p.label
    return correct / len(split.pairs)


# ---------------------------------------------------------------------------
# persistence

MODEL_FORMAT_VERSION = "1"


def save_model(model: ModelParams, directory) -> None:
    """Manifest + raw little-endian float32 blob in parameter_arrays order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m = model.feature_maps
    w = model.question_arm.width
    d = model.question_arm.filters.shape[2]
    hdim = model.w_hidden.shape[1]
    with open(directory / "manifest.txt", "w", encoding="utf-8") as f:
        f.write(f"format_version={MODEL_FORMAT_VERSION}\n")
        f.write(f"feature_maps={m}\n")
        f.write(f"filter_width={w}\n")
        f.write(f"embedding_dim={d}\n")
        f.write(f"hidden_dim={hdim}\n")
        f.write(f"seed={model.seed}\n")
        f.write(f"embedding_trainable={int(model.embedding_trainable)}\n")
        f.write(f"vocab_hash={model.embeddings.vocabulary_hash()}\n")
    blob = b"".join(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()
        for _, arr in model.parameter_arrays()
    )
    (directory / "params.bin").write_bytes(blob)


def load_model(directory, table: EmbeddingTable) -> ModelParams:
    directory = Path(directory)
    manifest = {}
    with open(directory / "manifest.txt", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                manifest[k] = v
    try:
        if manifest["format_version"] != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format "
                             f"{manifest['format_version']!r}")
        m = int(manifest["feature_maps"])
        w = int(manifest["filter_width"])
        d = int(manifest["embedding_dim"])
        hdim = int(manifest["hidden_dim"])
        seed = int(manifest["seed"])
        trainable = bool(int(manifest["embedding_trainable"]))
        vocab_hash = manifest["vocab_hash"]
    except KeyError as e:
        raise ValueError(f"corrupted model manifest: missing {e}") from None
    if table.vocabulary_hash() != vocab_hash:
        raise ValueError("embedding table does not match the one the model "
                         "was saved with")
    shapes = [
        (m, w, d), (m,), (m, w, d), (m,),
        (2 * m + N_EXTRA_FEATURES, hdim), (hdim,), (hdim, 2), (2,),
    ]
    blob = (directory / "params.bin").read_bytes()
    expected = sum(int(np.prod(s)) for s in shapes) * 4
    if len(blob) != expected:
        raise ValueError(f"parameter blob is {len(blob)} bytes, manifest "
                         f"implies {expected}")
    arrays = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count,
                            offset=offset).reshape(shape).copy()
        arrays.append(arr)
        offset += count * 4
    return ModelParams(
        question_arm=ConvLayer(arrays[0], arrays[1]),
        answer_arm=ConvLayer(arrays[2], arrays[3]),
        w_hidden=arrays[4], b_hidden=arrays[5],
        w_out=arrays[6], b_out=arrays[7],
        embeddings=table, embedding_trainable=trainable, seed=seed,
    )
