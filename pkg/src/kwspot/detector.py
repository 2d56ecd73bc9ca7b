"""Posterior smoothing, thresholded firing with lockout, streaming detection.

Smoothed values are computed with an exactly rounded sum (``math.fsum``)
over the trailing window, so the batch and streaming paths agree bit for
bit regardless of summation order.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import KEYWORD, LstmState, lstm_step


@dataclass
class DetectorConfig:
    n_ctx: int = 30
    n_lck: int = 40
    threshold: float = 0.5

    def __post_init__(self):
        if self.n_ctx < 1:
            raise ValueError("n_ctx must be >= 1")
        if self.n_lck < 0:
            raise ValueError("n_lck must be >= 0")


def _keyword_column(trace):
    rows = getattr(trace, "rows", None)
    if rows is not None:
        return np.asarray(rows, dtype=np.float64)[:, getattr(trace, "keyword_index", KEYWORD)]
    arr = np.asarray(trace, dtype=np.float64)
    return arr[:, KEYWORD] if arr.ndim == 2 else arr


def smooth(trace, n_ctx: int = 30) -> np.ndarray:
    """Trailing mean of the keyword posterior over ``n_ctx`` frames.

    The first ``n_ctx - 1`` frames average over the frames seen so far.
    Accepts a PosteriorTrace, a (T, K) array or a 1-D keyword column.
    """
    kw = _keyword_column(trace)
    if n_ctx < 1:
        raise ValueError("n_ctx must be >= 1")
    out = np.empty(kw.shape[0])
    for t in range(kw.shape[0]):
        lo = max(0, t - n_ctx + 1)
        out[t] = math.fsum(kw[lo:t + 1]) / (t + 1 - lo)
    return out


def fire(smoothed, config: DetectorConfig) -> list:
    """Frames where the smoothed posterior reaches the threshold outside the
    lockout period of the previous spike.

    Equivalent to scanning every frame and firing at ``t`` when
    ``s[t] >= threshold`` and ``t > last_spike + n_lck``.
    """
    s = np.asarray(smoothed, dtype=np.float64)
    cand = np.flatnonzero(s >= config.threshold)
    spikes = []
    k = 0
    while k < cand.size:
        t = int(cand[k])
        spikes.append(t)
        k = int(np.searchsorted(cand, t + config.n_lck + 1, side="left"))
    return spikes


def detect(trace, config: DetectorConfig) -> list:
    return fire(smooth(trace, config.n_ctx), config)


class StreamingDetector:
    """Frame-synchronous LSTM keyword detector.

    Feed raw LFBE frames with :meth:`push`; spikes are returned as soon as
    the right-context lookahead for the firing frame is available.  Call
    :meth:`finish` at end of stream to flush the lookahead buffer.
    """

    def __init__(self, model, config: DetectorConfig):
        if model.kind != "lstm":
            raise ValueError("streaming detection needs an LSTM model")
        self.model = model
        self.config = config
        n_i, n_c, n_r, _ = model.params.dims
        self.state = LstmState.zeros(n_c, n_r)
        self.frames = []          # normalized frames, kept for context
        self.next_t = 0           # next frame index to run through the LSTM
        self.window = deque(maxlen=config.n_ctx)
        self.last_spike = None
        self.smoothed = []

    def _context(self, t):
        left, right = self.model.left, self.model.right
        last = len(self.frames) - 1
        idx = [min(max(j, 0), last) for j in range(t - left, t + right + 1)]
        return np.concatenate([self.frames[j] for j in idx])

    def _advance(self, final):
        spikes = []
        right = self.model.right
        while self.next_t < len(self.frames) and (final or self.next_t + right < len(self.frames)):
            t = self.next_t
            x = self._context(t)
            self.state, y, _ = lstm_step(self.model.params, self.state, x)
            self.window.append(float(y[KEYWORD]))
            s = math.fsum(self.window) / len(self.window)
            self.smoothed.append(s)
            cfg = self.config
            if s >= cfg.threshold and (self.last_spike is None or t > self.last_spike + cfg.n_lck):
                self.last_spike = t
                spikes.append(t)
            self.next_t += 1
        return spikes

    def push(self, frame) -> list:
        self.frames.append(self.model.norm.apply(np.asarray(frame)[None, :])[0])
        return self._advance(final=False)

    def finish(self) -> list:
        return self._advance(final=True)


def stream_detect(model, frames, config: DetectorConfig) -> list:
    """Run :class:`StreamingDetector` over an iterable of LFBE frames."""
    det = StreamingDetector(model, config)
    spikes = []
    for frame in frames:
        spikes.extend(det.push(frame))
    spikes.extend(det.finish())
    return spikes


def batch_detect(model, feat, config: DetectorConfig) -> list:
    return detect(model.posteriors(feat), config)
