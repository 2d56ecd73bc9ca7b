# %% [markdown]
# # Log mel filterbank features
#
# A keyword in the synthetic corpus is a rising chirp buried in colored
# noise.  This script generates one utterance, computes its 20-dimensional
# LFBE frames and stacks context windows the way the LSTM sees them.

# %%
import numpy as np

from kwspot.corpus import SynthSpec, synth_utterance, utterance_seed
from kwspot.features import (compute_lfbe, mel_center_frequencies, mel_filterbank,
                             stack_context)

spec = SynthSpec(seed=0)
wave_form, align = synth_utterance(spec, utterance_seed(0, "train", 3), "demo")
print("samples:", wave_form.samples.shape, "keyword segments (frames):", align.segments)

# %% [markdown]
# The filterbank has 20 triangles spaced evenly on the mel scale between
# 60 Hz and 7.8 kHz.

# %%
fb = mel_filterbank()
print("filterbank:", fb.shape)
print("centers (Hz):", np.round(mel_center_frequencies()).astype(int))

# %%
feat = compute_lfbe(wave_form)
print("frames:", feat.frames.shape, feat.frames.dtype)

# Energy in the chirp's band rises inside the keyword segments.
band = feat.frames[:, 6:14].mean(axis=1)
for s, e, _ in align.segments:
    print(f"segment {s}-{e}: band energy {band[s:e + 1].mean():.2f} "
          f"vs utterance median {np.median(band):.2f}")

# %% [markdown]
# Context stacking: 10 past and 10 future frames around each frame, with
# the edges clamped to the first and last frame.

# %%
stacked = stack_context(feat, 10, 10)
print("stacked:", stacked.vectors.shape)
assert np.array_equal(stacked.vectors[0, :20], feat.frames[0])
