"""Gradient computation and SGD training with a dev-loss driven schedule.

The LSTM is trained with full-sequence backpropagation through time over
minibatches of whole utterances; the DNN with frame minibatches.  The
learning rate is halved and the epoch repeated from the last accepted
parameters whenever the dev loss gets worse.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import stack_context
from .loss import Alignment, frame_targets, maxpool_weights
from .model import (KEYWORD, ConfigError, DnnParams, LstmParams, sigmoid,
                    softmax)

log = logging.getLogger(__name__)

INIT_RANGE = 0.2
INIT_BIAS = 0.1


# --------------------------------------------------------------------------
# initialization


def init_lstm(n_i, n_c, n_r, n_o=2, seed=0) -> LstmParams:
    """Weights from U[-0.2, 0.2], every bias 0.1."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in LstmParams.shapes(n_i, n_c, n_r, n_o).items():
        if name.startswith("b_"):
            tensors[name] = np.full(shape, INIT_BIAS)
        else:
            tensors[name] = rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)
    return LstmParams(**tensors)


def init_dnn(layer_sizes, seed=0) -> DnnParams:
    rng = np.random.default_rng(seed)
    sizes = list(layer_sizes)
    weights = [rng.uniform(-INIT_RANGE, INIT_RANGE, size=(b, a)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.full(b, INIT_BIAS) for b in sizes[1:]]
    return DnnParams(weights, biases)


def init_params(kind: str, seed: int, dims):
    if kind == "lstm":
        return init_lstm(*dims, seed=seed)
    if kind == "dnn":
        return init_dnn(dims, seed=seed)
    raise ConfigError(f"unknown model kind {kind!r}")


# --------------------------------------------------------------------------
# LSTM: batched unroll and BPTT


def _stack_gates(p: LstmParams):
    Wx = np.concatenate([p.W_ix, p.W_fx, p.W_cx, p.W_ox])
    Wr = np.concatenate([p.W_ir, p.W_fr, p.W_cr, p.W_or])
    b = np.concatenate([p.b_i, p.b_f, p.b_c, p.b_o])
    return Wx, Wr, b


def lstm_unroll(params: LstmParams, X):
    """Forward pass over a (B, T, n_i) batch from zero state.

    Returns ``(logits, cache)``.  Batches may be right-padded: later frames
    never influence earlier outputs.
    """
    X = np.asarray(X, dtype=np.float64)
    B, T, n_i = X.shape
    _, n_c, n_r, n_o = params.dims
    if n_i != params.dims[0]:
        raise ConfigError(f"input dim {n_i} != {params.dims[0]}")
    p = params
    Wx, Wr, b = _stack_gates(p)
    AX = X @ Wx.T + b
    gates = np.empty((B, T, 4 * n_c))
    C = np.empty((B, T, n_c))
    H = np.empty((B, T, n_c))
    R = np.empty((B, T, n_r))
    c = np.zeros((B, n_c))
    r = np.zeros((B, n_r))
    C_prev = np.empty((B, T, n_c))
    R_prev = np.empty((B, T, n_r))
    for t in range(T):
        C_prev[:, t] = c
        R_prev[:, t] = r
        a = AX[:, t] + r @ Wr.T
        i = sigmoid(a[:, :n_c] + p.w_ic * c)
        f = sigmoid(a[:, n_c:2 * n_c] + p.w_fc * c)
        g = np.tanh(a[:, 2 * n_c:3 * n_c])
        c = f * c + i * g
        o = sigmoid(a[:, 3 * n_c:] + p.w_oc * c)
        h = np.tanh(c)
        r = (o * h) @ p.W_rm.T
        gates[:, t, :n_c] = i
        gates[:, t, n_c:2 * n_c] = f
        gates[:, t, 2 * n_c:3 * n_c] = g
        gates[:, t, 3 * n_c:] = o
        C[:, t] = c
        H[:, t] = h
        R[:, t] = r
    Z = R @ p.W_yr.T + p.b_y
    cache = dict(X=X, gates=gates, C=C, H=H, R=R, C_prev=C_prev, R_prev=R_prev, Wr=Wr)
    return Z, cache


def lstm_backward(params: LstmParams, cache, dZ, cell_clip=None) -> LstmParams:
    """Gradients of ``sum(dZ * logits)`` w.r.t. every LSTM tensor.

    ``cell_clip`` optionally clips the cell-state gradient at each step.
    """
    p = params
    X, gates, C, H, R = cache["X"], cache["gates"], cache["C"], cache["H"], cache["R"]
    C_prev, R_prev, Wr = cache["C_prev"], cache["R_prev"], cache["Wr"]
    B, T, n_i = X.shape
    n_c = C.shape[2]
    n_r = R.shape[2]
    dR_out = dZ @ p.W_yr
    DA = np.empty((B, T, 4 * n_c))
    dR_tot = np.empty((B, T, n_r))
    M = np.empty((B, T, n_c))
    dr_next = np.zeros((B, n_r))
    dc_next = np.zeros((B, n_c))
    for t in range(T - 1, -1, -1):
        i = gates[:, t, :n_c]
        f = gates[:, t, n_c:2 * n_c]
        g = gates[:, t, 2 * n_c:3 * n_c]
        o = gates[:, t, 3 * n_c:]
        h = H[:, t]
        M[:, t] = o * h
        dr = dR_out[:, t] + dr_next
        dR_tot[:, t] = dr
        dm = dr @ p.W_rm
        da_o = dm * h * o * (1.0 - o)
        dc = dc_next + dm * o * (1.0 - h * h) + da_o * p.w_oc
        if cell_clip is not None:
            dc = np.clip(dc, -cell_clip, cell_clip)
        c_prev = C_prev[:, t]
        da_i = dc * g * i * (1.0 - i)
        da_f = dc * c_prev * f * (1.0 - f)
        da_g = dc * i * (1.0 - g * g)
        DA[:, t, :n_c] = da_i
        DA[:, t, n_c:2 * n_c] = da_f
        DA[:, t, 2 * n_c:3 * n_c] = da_g
        DA[:, t, 3 * n_c:] = da_o
        dc_next = dc * f + da_i * p.w_ic + da_f * p.w_fc
        dr_next = DA[:, t] @ Wr

    DA2 = DA.reshape(-1, 4 * n_c)
    dWx = DA2.T @ X.reshape(-1, n_i)
    dWr = DA2.T @ R_prev.reshape(-1, n_r)
    db = DA2.sum(axis=0)
    Cp2 = C_prev.reshape(-1, n_c)
    grads = {}
    for k, gname in enumerate("ifco"):
        sl = slice(k * n_c, (k + 1) * n_c)
        grads[f"W_{gname}x"] = dWx[sl]
        grads[f"W_{gname}r"] = dWr[sl]
        grads[f"b_{gname}"] = db[sl]
    grads["w_ic"] = np.sum(DA2[:, :n_c] * Cp2, axis=0)
    grads["w_fc"] = np.sum(DA2[:, n_c:2 * n_c] * Cp2, axis=0)
    grads["w_oc"] = np.sum(DA2[:, 3 * n_c:] * C.reshape(-1, n_c), axis=0)
    grads["W_rm"] = dR_tot.reshape(-1, n_r).T @ M.reshape(-1, n_c)
    grads["W_yr"] = dZ.reshape(-1, dZ.shape[-1]).T @ R.reshape(-1, n_r)
    grads["b_y"] = dZ.reshape(-1, dZ.shape[-1]).sum(axis=0)
    return LstmParams(**grads)


def _loss_weights(keyword_posteriors, align: Alignment, loss_kind: str):
    if loss_kind == "xent":
        return np.ones(align.total_frames)
    if loss_kind == "maxpool":
        return maxpool_weights(keyword_posteriors, align)[0]
    raise ConfigError(f"unknown loss kind {loss_kind!r}")


def _logit_grad(Y, labels, weight):
    """Summed weighted cross-entropy and its gradient w.r.t. the logits."""
    T = Y.shape[0]
    p = Y[np.arange(T), labels]
    value = float(-np.sum(weight * np.log(np.maximum(p, 1e-12))))
    dZ = Y.copy()
    dZ[np.arange(T), labels] -= 1.0
    return value, dZ * weight[:, None]


def _check_finite(grads, what):
    for name, g in grads.tensors().items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {what}.{name}")


def lstm_batch_loss_grad(params: LstmParams, inputs, aligns, loss_kind, cell_clip=None):
    """Summed loss, gradients and contributing-frame count for a batch of
    utterances.  ``inputs`` are (T_b, n_i) arrays, right-padded internally."""
    T_max = max(x.shape[0] for x in inputs)
    n_i = params.dims[0]
    Xb = np.zeros((len(inputs), T_max, n_i))
    for b, x in enumerate(inputs):
        Xb[b, :x.shape[0]] = x
    Z, cache = lstm_unroll(params, Xb)
    Y = softmax(Z)
    dZ = np.zeros_like(Z)
    total, terms = 0.0, 0
    for b, align in enumerate(aligns):
        T = align.total_frames
        if inputs[b].shape[0] != T:
            raise ConfigError(f"{align.utterance_id}: {inputs[b].shape[0]} frames vs alignment {T}")
        weight = _loss_weights(Y[b, :T, KEYWORD], align, loss_kind)
        value, dZ[b, :T] = _logit_grad(Y[b, :T], frame_targets(align), weight)
        total += value
        terms += int(weight.sum())
    grads = lstm_backward(params, cache, dZ, cell_clip)
    _check_finite(grads, "lstm")
    return total, grads, terms


def bptt(params: LstmParams, X, align: Alignment, loss_kind: str = "xent", cell_clip=None):
    """Loss value and exact gradient for one utterance."""
    x = np.asarray(getattr(X, "vectors", X), dtype=np.float64)
    value, grads, _ = lstm_batch_loss_grad(params, [x], [align], loss_kind, cell_clip)
    return value, grads


def lstm_batch_loss(params: LstmParams, inputs, aligns, loss_kind):
    """Summed loss and contributing-frame count, forward only."""
    total, terms = 0.0, 0
    for x, align in zip(inputs, aligns):
        Z, _ = lstm_unroll(params, x[None])
        Y = softmax(Z[0])
        weight = _loss_weights(Y[:, KEYWORD], align, loss_kind)
        total += _logit_grad(Y, frame_targets(align), weight)[0]
        terms += int(weight.sum())
    return total, terms


# --------------------------------------------------------------------------
# DNN backprop


def dnn_loss_grad(params: DnnParams, X, labels, weight=None):
    """Summed weighted cross-entropy over rows of ``X`` and its gradient."""
    h = np.asarray(getattr(X, "vectors", X), dtype=np.float64)
    acts = [h]
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = sigmoid(h @ w.T + b)
        acts.append(h)
    Z = h @ params.weights[-1].T + params.biases[-1]
    Y = softmax(Z)
    if weight is None:
        weight = np.ones(Y.shape[0])
    value, delta = _logit_grad(Y, np.asarray(labels), weight)
    gw, gb = [], []
    for k in range(len(params.weights) - 1, -1, -1):
        gw.append(delta.T @ acts[k])
        gb.append(delta.sum(axis=0))
        if k:
            a = acts[k]
            delta = (delta @ params.weights[k]) * a * (1.0 - a)
    grads = DnnParams(gw[::-1], gb[::-1])
    _check_finite(grads, "dnn")
    return value, grads, int(weight.sum())


def dnn_backprop(params: DnnParams, X, align: Alignment, loss_kind: str = "xent"):
    """Loss value and gradient for one utterance of stacked frames."""
    x = np.asarray(getattr(X, "vectors", X), dtype=np.float64)
    Y = softmax(dnn_logits(params, x))
    weight = _loss_weights(Y[:, KEYWORD], align, loss_kind)
    value, grads, _ = dnn_loss_grad(params, x, frame_targets(align), weight)
    return value, grads


def dnn_logits(params: DnnParams, X):
    h = np.asarray(X, dtype=np.float64)
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = sigmoid(h @ w.T + b)
    return h @ params.weights[-1].T + params.biases[-1]


# --------------------------------------------------------------------------
# SGD


def add_grads(a, b):
    """Elementwise sum of two gradient sets of the same family."""
    if isinstance(a, LstmParams):
        return LstmParams(**{k: a.tensors()[k] + v for k, v in b.tensors().items()})
    return DnnParams([x + y for x, y in zip(a.weights, b.weights)],
                     [x + y for x, y in zip(a.biases, b.biases)])


def sgd_step(params, grads, lr: float, count: int):
    """``p - lr * g / count`` for every tensor; returns new parameters."""
    if count <= 0:
        return params.copy()
    scale = lr / count
    if isinstance(params, LstmParams):
        g = grads.tensors()
        return LstmParams(**{k: v - scale * g[k] for k, v in params.tensors().items()})
    return DnnParams([w - scale * gw for w, gw in zip(params.weights, grads.weights)],
                     [b - scale * gb for b, gb in zip(params.biases, grads.biases)])


# --------------------------------------------------------------------------
# schedule


@dataclass
class TrainConfig:
    initial_lr: float = 0.05
    batch_size: int = 8
    max_epochs: int = 20
    min_lr_factor: float = 0.5 ** 8
    loss_kind: str = "xent"
    init_kind: str = "random"
    seed: int = 0
    cell_clip: float | None = None

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ConfigError("initial_lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.loss_kind not in ("xent", "maxpool"):
            raise ConfigError(f"loss_kind must be 'xent' or 'maxpool', got {self.loss_kind!r}")
        if self.init_kind not in ("random", "from_checkpoint"):
            raise ConfigError(f"init_kind must be 'random' or 'from_checkpoint', got {self.init_kind!r}")

    @classmethod
    def from_dict(cls, d: dict):
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    dev_loss: float
    accepted: bool
    repeated: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainLog:
    initial_dev_loss: float = float("nan")
    records: list = field(default_factory=list)
    stop_reason: str = ""
    checkpoint: str = ""

    @property
    def accepted(self):
        return [r for r in self.records if r.accepted]

    @property
    def accepted_lrs(self):
        return [r.lr for r in self.accepted]

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)


def run_schedule(config: TrainConfig, params, train_epoch, dev_loss, on_record=None):
    """Train with halve-and-repeat on dev-loss degradation.

    ``train_epoch(params, lr, epoch)`` returns ``(new_params, train_loss)``
    and must not mutate its input; ``dev_loss(params)`` returns a float.
    An epoch whose dev loss exceeds the previous accepted one is discarded,
    the learning rate halved and the epoch rerun from the last accepted
    parameters.  Stops after ``max_epochs`` accepted epochs or when the
    learning rate falls below ``initial_lr * min_lr_factor``.

    Returns ``(best_params, TrainLog)``.
    """
    lr = config.initial_lr
    min_lr = config.initial_lr * config.min_lr_factor
    best = params
    prev = float(dev_loss(best))
    tlog = TrainLog(initial_dev_loss=prev)
    epoch, repeated = 1, False
    while True:
        if epoch > config.max_epochs:
            tlog.stop_reason = "max_epochs"
            break
        candidate, train_loss = train_epoch(best, lr, epoch)
        dev = float(dev_loss(candidate))
        ok = np.isfinite(dev) and dev <= prev
        rec = EpochRecord(epoch, lr, float(train_loss), dev, bool(ok), repeated)
        tlog.records.append(rec)
        if on_record is not None:
            on_record(rec)
        if ok:
            best, prev = candidate, dev
            epoch += 1
            repeated = False
        else:
            lr = lr / 2
            repeated = True
            if lr < min_lr:
                tlog.stop_reason = "min_lr"
                break
    return best, tlog


# --------------------------------------------------------------------------
# dataset-level training


def _epoch_order(seed, epoch, n):
    return np.random.default_rng([seed, epoch]).permutation(n)


class LstmTrainer:
    """Epoch and dev-loss callables for utterance-batched LSTM training.

    ``train`` and ``dev`` are sequences of ``(stacked_inputs, Alignment)``.
    """

    def __init__(self, config: TrainConfig, train, dev):
        self.config = config
        self.train = list(train)
        self.dev = list(dev)

    def train_epoch(self, params, lr, epoch):
        cfg = self.config
        order = _epoch_order(cfg.seed, epoch, len(self.train))
        total, terms = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            batch = [self.train[k] for k in order[s:s + cfg.batch_size]]
            value, grads, n = lstm_batch_loss_grad(
                params, [b[0] for b in batch], [b[1] for b in batch], cfg.loss_kind, cfg.cell_clip)
            params = sgd_step(params, grads, lr, n)
            total += value
            terms += n
        return params, total / max(terms, 1)

    def dev_loss(self, params, loss_kind=None):
        total, terms = lstm_batch_loss(params, [d[0] for d in self.dev], [d[1] for d in self.dev],
                                       loss_kind or self.config.loss_kind)
        return total / max(terms, 1)


class DnnTrainer:
    """Frame-level minibatch training for the DNN (cross-entropy only)."""

    def __init__(self, config: TrainConfig, train, dev):
        if config.loss_kind != "xent":
            raise ConfigError("the DNN recipe trains with cross-entropy only")
        self.config = config
        self.X = np.concatenate([np.asarray(x) for x, _ in train])
        self.labels = np.concatenate([frame_targets(a) for _, a in train])
        self.dev_X = np.concatenate([np.asarray(x) for x, _ in dev])
        self.dev_labels = np.concatenate([frame_targets(a) for _, a in dev])

    def train_epoch(self, params, lr, epoch):
        cfg = self.config
        order = _epoch_order(cfg.seed, epoch, self.X.shape[0])
        total, terms = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            value, grads, n = dnn_loss_grad(params, self.X[idx], self.labels[idx])
            params = sgd_step(params, grads, lr, n)
            total += value
            terms += n
        return params, total / max(terms, 1)

    def dev_loss(self, params):
        Y = softmax(dnn_logits(params, self.dev_X))
        p = Y[np.arange(len(self.dev_labels)), self.dev_labels]
        return float(-np.mean(np.log(np.maximum(p, 1e-12))))


def stacked_examples(model_norm, feats, aligns, left, right):
    """Normalize and context-stack features for training."""
    return [(stack_context(model_norm.apply(f), left, right).vectors, a)
            for f, a in zip(feats, aligns)]


def train(kind: str, config: TrainConfig, params, train_set, dev_set, on_record=None):
    """Run the schedule for one model family; returns ``(params, TrainLog)``."""
    trainer = LstmTrainer(config, train_set, dev_set) if kind == "lstm" \
        else DnnTrainer(config, train_set, dev_set)
    return run_schedule(config, params, trainer.train_epoch, trainer.dev_loss, on_record)
