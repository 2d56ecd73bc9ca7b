"""Experiment orchestration: features on demand, training recipes and
test-set evaluation, all driven by one JSON experiment config."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import checkpoint
from .checkpoint import KwsModel
from .corpus import load_manifest
from .detector import DetectorConfig
from .evaluator import DetCurve, EvalConfig, det_sweep, summary, write_summary
from .features import (FeatureNorm, compute_lfbe, load_features, read_wav,
                       save_features)
from .trainer import TrainConfig, init_params, stacked_examples, train

log = logging.getLogger(__name__)

# recipe name -> (model kind, loss kind)
RECIPES = {
    "dnn-xent": ("dnn", "xent"),
    "lstm-xent": ("lstm", "xent"),
    "lstm-maxpool": ("lstm", "maxpool"),
}

DEFAULT_TRAIN = {
    "dnn-xent": {"initial_lr": 0.5, "batch_size": 256},
    "lstm-xent": {"initial_lr": 0.5, "batch_size": 4},
    "lstm-maxpool": {"initial_lr": 0.5, "batch_size": 4},
}


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    manifest: str = "data/manifest.jsonl"
    feature_cache: str | None = None
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"
    seed: int = 0
    threads: int = 1
    lstm: dict = field(default_factory=lambda: {"n_c": 64, "n_r": 32, "left": 10, "right": 10})
    dnn: dict = field(default_factory=lambda: {"hidden": [128, 128, 128, 128], "left": 20, "right": 10})
    detector: dict = field(default_factory=lambda: {"n_ctx": 30, "n_lck": 40})
    evaluation: dict = field(default_factory=lambda: {"n_lat": 20, "miss_rate_cap": 0.2,
                                                      "threshold_grid": 1001})
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in ("n_c", "n_r", "left", "right"):
            if key not in self.lstm:
                raise ExperimentError(f"lstm.{key} missing")
        if self.lstm["n_c"] < 1 or self.lstm["n_r"] < 1:
            raise ExperimentError("lstm.n_c and lstm.n_r must be positive")
        if any(h < 1 for h in self.dnn.get("hidden", [])):
            raise ExperimentError("dnn.hidden sizes must be positive")
        unknown = set(self.train) - set(RECIPES)
        if unknown:
            raise ExperimentError(f"train: unknown recipes {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict, base_dir=None):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ExperimentError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**d)
        if base_dir is not None:
            base = Path(base_dir)
            for key in ("manifest", "feature_cache", "checkpoint_dir", "report_dir"):
                val = getattr(cfg, key)
                if val is not None and not Path(val).is_absolute():
                    setattr(cfg, key, str(base / val))
        return cfg

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ExperimentError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self):
        return asdict(self)

    def train_config(self, recipe: str, seed=None, **overrides) -> TrainConfig:
        _, loss_kind = RECIPES[recipe]
        d = dict(DEFAULT_TRAIN[recipe])
        d.update(self.train.get(recipe, {}))
        d.update(overrides)
        d["loss_kind"] = loss_kind
        d["seed"] = self.seed if seed is None else seed
        try:
            return TrainConfig.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ExperimentError(f"train.{recipe}: {exc}") from exc

    def detector_config(self, threshold=0.5) -> DetectorConfig:
        return DetectorConfig(threshold=threshold, **self.detector)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(**self.evaluation)


def load_features_for(manifest, entries, cache_dir=None):
    """LFBE features for manifest entries, computed once and cached."""
    cache = Path(cache_dir) if cache_dir else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    feats = []
    for e in entries:
        cached = cache / f"{e.id}.kwsf" if cache is not None else None
        if cached is not None and cached.exists():
            feats.append(load_features(cached, e.id))
            continue
        feat = compute_lfbe(read_wav(manifest.wav_path(e)))
        feat.utterance_id = e.id
        if cached is not None:
            save_features(cached, feat)
        feats.append(feat)
    return feats


def load_split(manifest, split: str, cache_dir=None):
    """``(features, alignments)`` for one split of a manifest."""
    entries = manifest.split(split)
    feats = load_features_for(manifest, entries, cache_dir)
    aligns = [manifest.alignment(e, f.num_frames) for e, f in zip(entries, feats)]
    return feats, aligns


def model_dims(exp: ExperimentConfig, kind: str, n_feat: int = 20):
    if kind == "lstm":
        ctx = exp.lstm["left"] + exp.lstm["right"] + 1
        return (n_feat * ctx, exp.lstm["n_c"], exp.lstm["n_r"], 2), exp.lstm["left"], exp.lstm["right"]
    ctx = exp.dnn["left"] + exp.dnn["right"] + 1
    return (n_feat * ctx, *exp.dnn["hidden"], 2), exp.dnn["left"], exp.dnn["right"]


@dataclass
class Dataset:
    train_feats: list
    train_aligns: list
    dev_feats: list
    dev_aligns: list

    @classmethod
    def from_manifest(cls, manifest, cache_dir=None):
        tf, ta = load_split(manifest, "train", cache_dir)
        df, da = load_split(manifest, "dev", cache_dir)
        if not tf or not df:
            raise ExperimentError("training needs non-empty train and dev splits")
        return cls(tf, ta, df, da)


def train_recipe(exp: ExperimentConfig, recipe: str, data: Dataset | None = None,
                 init: str | None = None, seed=None, out_name: str | None = None,
                 **train_overrides):
    """Train one recipe; writes ``<name>.kwsm`` (+ sidecar) and
    ``<name>.log.jsonl`` in the checkpoint directory.

    With ``init``, training starts from that checkpoint instead of a random
    initialization and the checkpoint hash is recorded as lineage.
    Returns ``(checkpoint_path, TrainLog)``.
    """
    if recipe not in RECIPES:
        raise ExperimentError(f"unknown recipe {recipe!r}; choose from {sorted(RECIPES)}")
    kind, loss_kind = RECIPES[recipe]
    if init is not None:
        train_overrides.setdefault("init_kind", "from_checkpoint")
    cfg = exp.train_config(recipe, seed=seed, **train_overrides)
    if data is None:
        data = Dataset.from_manifest(load_manifest(exp.manifest), exp.feature_cache)

    meta = {"recipe": recipe, "train_config": cfg.to_dict()}
    if init is not None:
        base = checkpoint.load(init)
        if base.kind != kind:
            raise ExperimentError(f"init checkpoint is a {base.kind} model, recipe needs {kind}")
        params, left, right, norm = base.params.copy(), base.left, base.right, base.norm
        meta["lineage"] = {"base_checkpoint": str(init), "base_sha256": checkpoint.file_hash(init)}
    else:
        dims, left, right = model_dims(exp, kind, data.train_feats[0].frames.shape[1])
        params = init_params(kind, cfg.seed, dims)
        norm = FeatureNorm.fit(data.train_feats)

    train_set = stacked_examples(norm, data.train_feats, data.train_aligns, left, right)
    dev_set = stacked_examples(norm, data.dev_feats, data.dev_aligns, left, right)

    def progress(rec):
        log.info("%s epoch %d lr %.4g train %.5f dev %.5f %s%s", recipe, rec.epoch, rec.lr,
                 rec.train_loss, rec.dev_loss, "accepted" if rec.accepted else "rejected",
                 " (repeat)" if rec.repeated else "")

    best, tlog = train(kind, cfg, params, train_set, dev_set, on_record=progress)
    meta.update(initial_dev_loss=tlog.initial_dev_loss, stop_reason=tlog.stop_reason,
                accepted_epochs=len(tlog.accepted))

    name = out_name or (recipe if init is None else f"{recipe}-pretrain")
    out_dir = Path(exp.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / f"{name}.kwsm"
    model = KwsModel(kind, best, left, right, norm, meta)
    digest = checkpoint.save(ckpt, model)
    tlog.checkpoint = str(ckpt)
    header = {"recipe": recipe, "checkpoint": str(ckpt), "sha256": digest,
              "initial_dev_loss": tlog.initial_dev_loss, "stop_reason": tlog.stop_reason}
    if "lineage" in meta:
        header["lineage"] = meta["lineage"]
    (out_dir / f"{name}.log.jsonl").write_text(json.dumps(header) + "\n" + tlog.to_jsonl())
    return ckpt, tlog


def pretrain_then_maxpool(exp: ExperimentConfig, data: Dataset | None = None, seed=None):
    """Cross-entropy training followed by max-pooling training initialized
    from the cross-entropy checkpoint.  Returns both checkpoint paths."""
    if data is None:
        data = Dataset.from_manifest(load_manifest(exp.manifest), exp.feature_cache)
    xent_ckpt, _ = train_recipe(exp, "lstm-xent", data, seed=seed)
    mp_ckpt, _ = train_recipe(exp, "lstm-maxpool", data, init=str(xent_ckpt), seed=seed)
    return xent_ckpt, mp_ckpt


def score_split(models: dict, manifest, split="test", cache_dir=None):
    """Posterior traces of each model on a split."""
    feats, aligns = load_split(manifest, split, cache_dir)
    if not feats:
        raise ExperimentError(f"split {split!r} is empty")
    traces = {name: [m.posteriors(f) for f in feats] for name, m in models.items()}
    return traces, aligns


def evaluate(exp: ExperimentConfig, checkpoints, split="test", out_dir=None, names=None):
    """DET curve per checkpoint on ``split``; writes ``det_curve.csv`` and
    ``summary.json``.  The first checkpoint is the baseline for relative
    AUC changes.  Returns ``(curves, summary_dict)``."""
    manifest = load_manifest(exp.manifest)
    names = names or [Path(c).name.removesuffix(".kwsm") for c in checkpoints]
    models = {n: checkpoint.load(c) for n, c in zip(names, checkpoints)}
    traces, aligns = score_split(models, manifest, split, exp.feature_cache)
    det = exp.detector_config()
    ev = exp.eval_config()
    curves: dict[str, DetCurve] = {}
    for n in names:
        curves[n] = det_sweep(traces[n], aligns, det, ev)
        curves[n].label = n
    summ = summary(curves)
    out = Path(out_dir or exp.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, n in enumerate(names):
        curves[n].to_csv(out / "det_curve.csv", model_name=n, append=k > 0)
    write_summary(out / "summary.json", summ)
    return curves, summ
