"""Projected peephole LSTM and feed-forward DNN acoustic models.

All arithmetic runs in float64.  Checkpoints store float32 (see
:mod:`kwspot.checkpoint`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

KEYWORD = 1
BACKGROUND = 0


class ConfigError(ValueError):
    """Dimension or configuration mismatch."""


def sigmoid(a):
    # split on sign so exp never overflows
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def softmax(z):
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass
class PosteriorTrace:
    rows: np.ndarray
    keyword_index: int = KEYWORD
    utterance_id: str = ""

    @property
    def keyword(self) -> np.ndarray:
        return self.rows[:, self.keyword_index]

    def __len__(self):
        return self.rows.shape[0]


def count_params(n_c: int, n_r: int, n_i: int, n_o: int) -> int:
    """Closed-form weight count of the projected LSTM, biases excluded."""
    return n_c * n_r * 4 + n_i * n_c * 4 + n_r * n_o + n_c * n_r + n_c * 3


def lstm_num_scalars(n_c: int, n_r: int, n_i: int, n_o: int) -> int:
    """Scalars actually allocated by :class:`LstmParams`: weights plus the
    four gate biases and the output bias."""
    return count_params(n_c, n_r, n_i, n_o) + 4 * n_c + n_o


def dnn_count_params(layer_sizes) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


# Order matters: this is the serialization order of checkpoint tensors.
LSTM_TENSORS = (
    "W_ix", "W_fx", "W_cx", "W_ox",
    "W_ir", "W_fr", "W_cr", "W_or",
    "w_ic", "w_fc", "w_oc",
    "b_i", "b_f", "b_c", "b_o",
    "W_rm", "W_yr", "b_y",
)


@dataclass
class LstmParams:
    W_ix: np.ndarray
    W_fx: np.ndarray
    W_cx: np.ndarray
    W_ox: np.ndarray
    W_ir: np.ndarray
    W_fr: np.ndarray
    W_cr: np.ndarray
    W_or: np.ndarray
    w_ic: np.ndarray
    w_fc: np.ndarray
    w_oc: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    W_rm: np.ndarray
    W_yr: np.ndarray
    b_y: np.ndarray

    @staticmethod
    def shapes(n_i, n_c, n_r, n_o) -> dict:
        s = {}
        for g in "ifco":
            s[f"W_{g}x"] = (n_c, n_i)
        for g in "ifco":
            s[f"W_{g}r"] = (n_c, n_r)
        for g in "ifo":
            s[f"w_{g}c"] = (n_c,)
        for g in "ifco":
            s[f"b_{g}"] = (n_c,)
        s["W_rm"] = (n_r, n_c)
        s["W_yr"] = (n_o, n_r)
        s["b_y"] = (n_o,)
        return {name: s[name] for name in LSTM_TENSORS}

    @classmethod
    def zeros(cls, n_i, n_c, n_r, n_o=2):
        return cls(**{k: np.zeros(v) for k, v in cls.shapes(n_i, n_c, n_r, n_o).items()})

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=np.float64))
        expected = self.shapes(*self.dims)
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ConfigError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def dims(self):
        """(n_i, n_c, n_r, n_o)"""
        n_c, n_i = self.W_ix.shape
        n_r = self.W_rm.shape[0]
        n_o = self.W_yr.shape[0]
        return n_i, n_c, n_r, n_o

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in LSTM_TENSORS}

    @property
    def num_scalars(self) -> int:
        return sum(t.size for t in self.tensors().values())

    def copy(self) -> "LstmParams":
        return LstmParams(**{k: v.copy() for k, v in self.tensors().items()})


@dataclass
class LstmState:
    c: np.ndarray
    r: np.ndarray

    @classmethod
    def zeros(cls, n_c, n_r):
        return cls(np.zeros(n_c), np.zeros(n_r))


def lstm_step(params: LstmParams, state: LstmState, x):
    """Advance the LSTM by one frame.

    Returns ``(new_state, y, cache)`` where ``y`` is the softmax posterior
    and ``cache`` holds gate activations and pre-activations.
    """
    n_i, n_c, n_r, _ = params.dims
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n_i,):
        raise ConfigError(f"input has shape {x.shape}, expected ({n_i},)")
    if state.c.shape != (n_c,) or state.r.shape != (n_r,):
        raise ConfigError("state dimensions do not match parameters")
    p = params
    c_prev, r_prev = state.c, state.r
    a_i = p.W_ix @ x + p.W_ir @ r_prev + p.w_ic * c_prev + p.b_i
    a_f = p.W_fx @ x + p.W_fr @ r_prev + p.w_fc * c_prev + p.b_f
    a_g = p.W_cx @ x + p.W_cr @ r_prev + p.b_c
    i = sigmoid(a_i)
    f = sigmoid(a_f)
    g = np.tanh(a_g)
    c = f * c_prev + i * g
    a_o = p.W_ox @ x + p.W_or @ r_prev + p.w_oc * c + p.b_o
    o = sigmoid(a_o)
    h = np.tanh(c)
    m = o * h
    r = p.W_rm @ m
    z = p.W_yr @ r + p.b_y
    y = softmax(z)
    cache = dict(x=x, c_prev=c_prev, r_prev=r_prev, a_i=a_i, a_f=a_f, a_g=a_g, a_o=a_o,
                 i=i, f=f, g=g, c=c, o=o, h=h, m=m, r=r, z=z, y=y)
    return LstmState(c, r), y, cache


def lstm_forward(params: LstmParams, X, utterance_id: str = ""):
    """Run the LSTM over a whole sequence from a zero state.

    ``X`` is a :class:`~kwspot.features.StackedSequence` or a (T, n_i)
    array.  Returns ``(PosteriorTrace, caches)`` with one cache per frame.
    """
    vectors = getattr(X, "vectors", X)
    vectors = np.asarray(vectors, dtype=np.float64)
    n_i, n_c, n_r, n_o = params.dims
    if vectors.ndim != 2 or vectors.shape[1] != n_i:
        raise ConfigError(f"input has shape {vectors.shape}, expected (T, {n_i})")
    state = LstmState.zeros(n_c, n_r)
    rows = np.empty((vectors.shape[0], n_o))
    caches = []
    for t, x in enumerate(vectors):
        state, rows[t], cache = lstm_step(params, state, x)
        caches.append(cache)
    return PosteriorTrace(rows, utterance_id=utterance_id), caches


DNN_LAYERS = (620, 128, 128, 128, 128, 2)


@dataclass
class DnnParams:
    """Sigmoid hidden layers and a softmax output layer.

    ``weights[k]`` has shape (out, in) so that ``h_next = W @ h + b``.
    """

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("DNN needs one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ConfigError(f"layer {k}: bias shape {b.shape} vs weight {w.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ConfigError(f"layer {k}: input dim {w.shape[1]} does not chain")

    @classmethod
    def zeros(cls, layer_sizes=DNN_LAYERS):
        sizes = list(layer_sizes)
        return cls([np.zeros((b, a)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    @property
    def layer_sizes(self):
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def dims(self):
        return self.layer_sizes

    def tensors(self) -> dict:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{k}"] = w
            out[f"b{k}"] = b
        return out

    @property
    def num_scalars(self) -> int:
        return sum(t.size for t in self.tensors().values())

    def copy(self) -> "DnnParams":
        return DnnParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def dnn_forward_cache(params: DnnParams, X):
    """Forward pass keeping every layer's activation.

    Returns ``(activations, logits)``; ``activations[0]`` is the input.
    """
    h = np.asarray(getattr(X, "vectors", X), dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.layer_sizes[0]:
        raise ConfigError(f"input has shape {h.shape}, expected (T, {params.layer_sizes[0]})")
    acts = [h]
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = sigmoid(h @ w.T + b)
        acts.append(h)
    logits = h @ params.weights[-1].T + params.biases[-1]
    return acts, logits


def dnn_forward(params: DnnParams, X, utterance_id: str = "") -> PosteriorTrace:
    _, logits = dnn_forward_cache(params, X)
    return PosteriorTrace(softmax(logits), utterance_id=utterance_id)
