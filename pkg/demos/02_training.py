# %% [markdown]
# # Cross-entropy versus max-pooling training
#
# Trains a small LSTM on a small synthetic corpus with frame-level
# cross-entropy, then continues from that checkpoint with the max-pooling
# loss, and prints the learning-rate schedule as it runs.
# Takes about a minute on one core.

# %%
import logging
import tempfile
from pathlib import Path

from kwspot.corpus import SynthSpec, build_dataset, load_manifest
from kwspot.pipeline import Dataset, ExperimentConfig, train_recipe

logging.basicConfig(level=logging.INFO, format="%(message)s")
root = Path(tempfile.mkdtemp(prefix="kwspot-demo-"))
build_dataset(SynthSpec(seed=0, counts={"train": 60, "dev": 15, "test": 30}), root / "data")

exp = ExperimentConfig(manifest=str(root / "data" / "manifest.jsonl"),
                       feature_cache=str(root / "features"),
                       checkpoint_dir=str(root / "ckpt"),
                       train={"lstm-xent": {"max_epochs": 4}, "lstm-maxpool": {"max_epochs": 4}})
data = Dataset.from_manifest(load_manifest(exp.manifest), exp.feature_cache)

# %% [markdown]
# Every epoch is logged, including rejected ones: when the dev loss gets
# worse the learning rate halves and the epoch is rerun from the last
# accepted parameters.

# %%
xent_ckpt, xent_log = train_recipe(exp, "lstm-xent", data=data)
for r in xent_log.records:
    print(r.epoch, r.lr, round(r.dev_loss, 4), "accepted" if r.accepted else "rejected")

# %%
mp_ckpt, mp_log = train_recipe(exp, "lstm-maxpool", data=data, init=str(xent_ckpt))
print("max-pooling checkpoint:", mp_ckpt)
print("stop reason:", mp_log.stop_reason)
print("sidecar:", (mp_ckpt.parent / (mp_ckpt.name + ".json")).read_text()[:300], "...")
