"""True/false accept scoring, DET sweeps and area under the DET curve."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .detector import DetectorConfig, fire, smooth

NEVER_FIRE = 1.0 + 1e-6


class AucWarning(UserWarning):
    """No DET point lies inside the miss-rate cap."""


@dataclass
class EvalConfig:
    n_lat: int = 20
    miss_rate_cap: float = 0.2
    threshold_grid: int = 1001

    def __post_init__(self):
        if self.n_lat < 0:
            raise ValueError("n_lat must be >= 0")
        if not 0 < self.miss_rate_cap <= 1:
            raise ValueError("miss_rate_cap must be in (0, 1]")
        if self.threshold_grid < 2:
            raise ValueError("threshold_grid must be >= 2")


@dataclass
class SpikeScore:
    true_accepts: int
    false_accepts: int
    misses: int
    # spike frame -> segment index for true accepts
    claims: dict = field(default_factory=dict)


def classify_spikes(spikes, align, n_lat: int = 20) -> SpikeScore:
    """Score spikes against keyword segments extended by a latency window.

    A spike claims the earliest still-unclaimed window ``[start, end +
    n_lat]`` that contains it and counts as a true accept; any other spike is
    a false accept.  Segments never claimed are misses.
    """
    segments = getattr(align, "segments", align)
    windows = [(s[0], s[1] + n_lat) for s in segments]
    claimed = [False] * len(windows)
    claims = {}
    fa = 0
    for t in spikes:
        for p, (lo, hi) in enumerate(windows):
            if lo <= t <= hi and not claimed[p]:
                claimed[p] = True
                claims[t] = p
                break
        else:
            fa += 1
    ta = sum(claimed)
    return SpikeScore(ta, fa, len(windows) - ta, claims)


@dataclass
class DetCurve:
    """Points are ``(threshold, miss_rate, fa_rate)`` sorted by threshold."""

    points: list
    num_utterances: int
    num_keyword_segments: int
    auc_capped: float = float("nan")
    label: str = ""

    @property
    def thresholds(self):
        return np.array([p[0] for p in self.points])

    @property
    def miss_rates(self):
        return np.array([p[1] for p in self.points])

    @property
    def fa_rates(self):
        return np.array([p[2] for p in self.points])

    def to_csv(self, path, model_name: str | None = None, append: bool = False):
        mode = "a" if append else "w"
        with open(path, mode, newline="") as fh:
            w = csv.writer(fh)
            if not append:
                w.writerow((["model"] if model_name is not None else [])
                           + ["threshold", "miss_rate", "fa_rate"])
            for thr, miss, fa in self.points:
                row = [repr(float(thr)), repr(float(miss)), repr(float(fa))]
                w.writerow(([model_name] if model_name is not None else []) + row)


def threshold_grid(config: EvalConfig) -> np.ndarray:
    """Uniform grid over [0, 1] plus a never-fire sentinel above 1."""
    return np.append(np.linspace(0.0, 1.0, config.threshold_grid), NEVER_FIRE)


def det_sweep(traces, aligns, detector: DetectorConfig | None = None,
              config: EvalConfig | None = None, thresholds=None) -> DetCurve:
    """Sweep the firing threshold over a test set.

    ``miss_rate = misses / keyword segments`` and ``fa_rate = false accepts /
    utterances``.  ``detector.threshold`` is ignored.
    """
    detector = detector or DetectorConfig()
    config = config or EvalConfig()
    traces = list(traces)
    aligns = list(aligns)
    if not traces:
        raise ValueError("det_sweep needs a non-empty test set")
    if len(traces) != len(aligns):
        raise ValueError("one alignment per trace required")
    if thresholds is None:
        thresholds = threshold_grid(config)
    smoothed = [smooth(tr, detector.n_ctx) for tr in traces]
    n_seg = sum(len(a.segments) for a in aligns)
    n_utt = len(traces)
    points = []
    for thr in np.sort(np.asarray(thresholds, dtype=np.float64)):
        cfg = DetectorConfig(detector.n_ctx, detector.n_lck, float(thr))
        misses = fas = 0
        for s, a in zip(smoothed, aligns):
            score = classify_spikes(fire(s, cfg), a, config.n_lat)
            misses += score.misses
            fas += score.false_accepts
        miss_rate = misses / n_seg if n_seg else 0.0
        points.append((float(thr), miss_rate, fas / n_utt))
    curve = DetCurve(points, n_utt, n_seg)
    curve.auc_capped = auc(curve, config.miss_rate_cap)
    return curve


def auc(curve, miss_rate_cap: float = 0.2) -> float:
    """Normalized area under the DET curve in the low miss-rate region.

    Keeps points with ``miss_rate <= cap``, takes the lowest miss rate at
    each false-accept rate and integrates miss rate over false-accept rate
    with the trapezoid rule from 0 to the largest retained false-accept
    rate, dividing by that span.  Between 0 and the smallest retained
    false-accept rate the curve sits above the cap and is counted at the
    cap.  Returns the cap itself, with an :class:`AucWarning`, when no point
    qualifies.
    """
    pts = getattr(curve, "points", curve)
    arr = np.array([(p[-1], p[-2]) for p in pts], dtype=np.float64).reshape(-1, 2)
    fa, miss = arr[:, 0], arr[:, 1]
    keep = miss <= miss_rate_cap
    if not np.any(keep):
        warnings.warn("no DET point within the miss-rate cap", AucWarning, stacklevel=2)
        return float(miss_rate_cap)
    fa, miss = fa[keep], miss[keep]
    xs = np.unique(fa)
    ys = np.array([miss[fa == x].min() for x in xs])
    if xs[0] > 0:
        xs = np.concatenate([[0.0, xs[0]], xs])
        ys = np.concatenate([[miss_rate_cap, miss_rate_cap], ys])
    span = xs[-1]
    if span == 0:
        return float(ys[0])
    return float(np.trapezoid(ys, xs) / span)


def relative_auc_change(baseline_auc: float, model_auc: float) -> float:
    """Percentage change of ``model_auc`` relative to ``baseline_auc``."""
    if not baseline_auc > 0:
        raise ValueError("baseline AUC must be positive for a relative change")
    return 100.0 * (model_auc - baseline_auc) / baseline_auc


def best_operating_point(curve: DetCurve, max_fa_rate: float):
    """Lowest-miss point with ``fa_rate <= max_fa_rate`` (ties: lowest fa)."""
    ok = [p for p in curve.points if p[2] <= max_fa_rate]
    if not ok:
        return None
    return min(ok, key=lambda p: (p[1], p[2], p[0]))


def summary(curves: dict, baseline: str | None = None) -> dict:
    """AUC per model and, given a baseline, relative changes in percent.

    Relative changes are ``None`` when the baseline AUC is zero.
    """
    out = {"auc_capped": {name: c.auc_capped for name, c in curves.items()}}
    names = list(curves)
    if baseline is None and len(names) >= 2:
        baseline = names[0]
    if baseline is not None and len(names) >= 2:
        base = curves[baseline].auc_capped
        out["baseline"] = baseline
        out["relative_change_pct"] = {
            n: relative_auc_change(base, c.auc_capped) if base > 0 else None
            for n, c in curves.items() if n != baseline
        }
    return out


def format_table(summary_dict: dict) -> str:
    """Plain-text table: one column per model with its relative AUC change."""
    names = list(summary_dict["auc_capped"])
    rel = summary_dict.get("relative_change_pct", {})
    base = summary_dict.get("baseline")
    w = max(12, *(len(n) + 2 for n in names))
    lines = ["model".ljust(14) + "".join(n.rjust(w) for n in names),
             "AUC".ljust(14) + "".join(f"{summary_dict['auc_capped'][n]:.5f}".rjust(w) for n in names)]
    if base is not None:
        cells = ["0.0%" if n == base else "n/a" if rel[n] is None else f"{rel[n]:+.1f}%"
                 for n in names]
        lines.append("AUC change".ljust(14) + "".join(c.rjust(w) for c in cells))
    return "\n".join(lines)


def write_summary(path, summary_dict: dict):
    with open(path, "w") as fh:
        json.dump(summary_dict, fh, indent=2, sort_keys=False)
        fh.write("\n")
