# %% [markdown]
# # Scoring spikes and DET curves
#
# A spike counts as a true accept when it falls inside a keyword segment
# extended by 20 frames of latency and that segment has not been claimed
# yet.  Everything else is a false accept.  Sweeping the threshold gives
# a DET curve, summarized by the area under it where the miss rate is at
# most 20%.

# %%
import numpy as np

from kwspot.detector import DetectorConfig
from kwspot.evaluator import EvalConfig, auc, classify_spikes, det_sweep, format_table, summary
from kwspot.loss import Alignment

align = Alignment("a1", [(100, 150), (300, 340)], 500)
score = classify_spikes([30, 120, 220, 350], align)
print(score)

# %% [markdown]
# The area on a straight line from (fa 0, miss 0.2) to (fa 1, miss 0) is
# half the cap.

# %%
print(auc([(1.0, 0.2, 0.0), (0.0, 0.0, 1.0)], 0.2))

# %% [markdown]
# Two hand-made "models" on the same keyword segments: a sharp one and a
# noisy one.

# %%
rng = np.random.default_rng(0)
aligns, sharp, noisy = [], [], []
for k in range(40):
    T = 300
    start = int(rng.integers(20, 240))
    al = Alignment(f"u{k}", [(start, start + 29)], T)
    kw = np.zeros(T)
    kw[start:start + 30] = rng.uniform(0.6, 1.0)
    aligns.append(al)
    sharp.append(kw)
    other = kw.copy()
    if k % 3 == 0:  # a keyword-like burst somewhere else
        b = (start + 150) % 260
        other[b:b + 30] = rng.uniform(0.3, 0.9)
    noisy.append(other)

det = DetectorConfig()
curves = {"noisy": det_sweep(noisy, aligns, det, EvalConfig()),
          "sharp": det_sweep(sharp, aligns, det, EvalConfig())}
print(format_table(summary(curves)))
