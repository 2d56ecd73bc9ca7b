# %% [markdown]
# # Streaming detection
#
# The detector smooths the keyword posterior over the last 30 frames and
# fires when it crosses a threshold, then stays silent for 40 frames.
# Frames can be pushed one at a time; a spike is reported as soon as the
# model's right context for that frame has arrived.

# %%
import numpy as np

from kwspot.checkpoint import KwsModel
from kwspot.corpus import SynthSpec, synth_utterance, utterance_seed
from kwspot.detector import DetectorConfig, StreamingDetector, batch_detect, fire, smooth
from kwspot.features import FeatureNorm, compute_lfbe
from kwspot.trainer import init_lstm

# %% [markdown]
# First the state machine on its own.  A trace that is always 1 fires at
# frame 0 and then once every 41 frames.

# %%
ones = np.ones(100)
print(fire(smooth(ones, 30), DetectorConfig()))

# %% [markdown]
# Streaming and batch processing give identical spikes.  An untrained
# model is enough to show it; use a checkpoint from the training demo
# (``kwspot.checkpoint.load``) for meaningful detections.

# %%
model = KwsModel("lstm", init_lstm(420, 64, 32, 2, seed=0), 10, 10, FeatureNorm.identity())
wave_form, align = synth_utterance(SynthSpec(), utterance_seed(0, "test", 0), "demo")
feat = compute_lfbe(wave_form)

trace = model.posteriors(feat)
cfg = DetectorConfig(threshold=float(np.quantile(smooth(trace, 30), 0.9)))
det = StreamingDetector(model, cfg)
streamed = []
for t, frame in enumerate(feat.frames):
    for spike in det.push(frame):
        streamed.append(spike)
        print(f"frame {t} pushed -> spike at frame {spike} ({t - spike} frames of lookahead)")
streamed += det.finish()
print("stream:", streamed)
print("batch: ", batch_detect(model, feat, cfg))
