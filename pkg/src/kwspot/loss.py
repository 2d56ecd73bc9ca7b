"""Frame cross-entropy and segment max-pooling losses.

Gradients are returned with respect to the pre-softmax logits, i.e. in the
``y - z`` form, one row per frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import BACKGROUND, KEYWORD

PROB_FLOOR = 1e-12


class AlignmentError(ValueError):
    pass


@dataclass
class Alignment:
    """Keyword segments of one utterance, as inclusive frame ranges."""

    utterance_id: str
    segments: list
    total_frames: int

    def __post_init__(self):
        segs = []
        for seg in self.segments:
            start, end = int(seg[0]), int(seg[1])
            k = int(seg[2]) if len(seg) > 2 else KEYWORD
            segs.append((start, end, k))
        self.segments = segs
        prev_end = -1
        for start, end, k in segs:
            if end < start:
                raise AlignmentError(f"{self.utterance_id}: segment end {end} < start {start}")
            if start <= prev_end:
                raise AlignmentError(f"{self.utterance_id}: segments overlap or are unsorted")
            if start < 0 or end >= self.total_frames:
                raise AlignmentError(
                    f"{self.utterance_id}: segment [{start}, {end}] outside [0, {self.total_frames})"
                )
            if k != KEYWORD:
                raise AlignmentError(f"{self.utterance_id}: keyword class must be {KEYWORD}")
            prev_end = end


@dataclass
class LossResult:
    """Loss value, per-frame logit gradient and, for max-pooling, the frame
    picked in each segment.  ``num_terms`` counts contributing frames."""

    value: float
    grad: np.ndarray
    selected_frames: list = field(default_factory=list)
    num_terms: int = 0
    clamped: int = 0

    def to_json(self) -> str:
        return json.dumps({"value": self.value, "selected_frames": self.selected_frames,
                           "terms": self.num_terms, "clamped": self.clamped})


def xent_frame(y, k: int) -> float:
    """``-ln y[k]`` with ``y[k]`` floored at 1e-12."""
    p = float(y[k])
    return -math.log(max(p, PROB_FLOOR))


def frame_targets(align: Alignment) -> np.ndarray:
    labels = np.full(align.total_frames, BACKGROUND, dtype=np.int64)
    for start, end, k in align.segments:
        labels[start:end + 1] = k
    return labels


def _rows(trace):
    return np.asarray(getattr(trace, "rows", trace), dtype=np.float64)


def _check_length(rows, align):
    if rows.shape[0] != align.total_frames:
        raise AlignmentError(
            f"{align.utterance_id}: trace has {rows.shape[0]} frames, alignment {align.total_frames}"
        )


def _weighted_xent(rows, labels, weight):
    """Loss value and logit gradient for frames with nonzero ``weight``."""
    T = rows.shape[0]
    p = rows[np.arange(T), labels]
    clamped = int(np.count_nonzero((p < PROB_FLOOR) & (weight > 0)))
    value = float(-np.sum(weight * np.log(np.maximum(p, PROB_FLOOR))))
    grad = rows.copy()
    grad[np.arange(T), labels] -= 1.0
    grad *= weight[:, None]
    return value, grad, clamped


def xent_sequence(trace, align: Alignment) -> LossResult:
    rows = _rows(trace)
    _check_length(rows, align)
    labels = frame_targets(align)
    weight = np.ones(rows.shape[0])
    value, grad, clamped = _weighted_xent(rows, labels, weight)
    return LossResult(value, grad, [], rows.shape[0], clamped)


def select_max_frames(keyword_posteriors, align: Alignment) -> list:
    """Frame with the highest keyword posterior inside each segment.

    Ties go to the earliest frame.
    """
    kw = np.asarray(keyword_posteriors)
    return [start + int(np.argmax(kw[start:end + 1])) for start, end, _ in align.segments]


def maxpool_weights(keyword_posteriors, align: Alignment):
    """Per-frame 0/1 weights of the max-pooling loss and the chosen frames."""
    T = align.total_frames
    weight = np.ones(T)
    for start, end, _ in align.segments:
        weight[start:end + 1] = 0.0
    selected = select_max_frames(keyword_posteriors, align)
    weight[selected] = 1.0
    return weight, selected


def maxpool_loss(trace, align: Alignment) -> LossResult:
    """Cross-entropy on background frames plus, per keyword segment, only the
    frame whose keyword posterior is largest."""
    rows = _rows(trace)
    _check_length(rows, align)
    labels = frame_targets(align)
    weight, selected = maxpool_weights(rows[:, KEYWORD], align)
    value, grad, clamped = _weighted_xent(rows, labels, weight)
    return LossResult(value, grad, selected, int(weight.sum()), clamped)


LOSSES = {"xent": xent_sequence, "maxpool": maxpool_loss}
