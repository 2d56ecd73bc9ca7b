"""Command line for kwspot: synth, train, evaluate, detect.

Machine-readable results go to stdout as JSON lines; progress and
diagnostics go to stderr.  ``KWSPOT_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import checkpoint
from .corpus import CorpusError, SynthSpec, build_dataset, manifest_hash
from .detector import DetectorConfig, StreamingDetector, fire, smooth
from .evaluator import format_table
from .features import FeatureError, compute_lfbe, read_wav
from .pipeline import RECIPES, ExperimentConfig, ExperimentError, evaluate, train_recipe

log = logging.getLogger("kwspot")


def _emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def cmd_synth(args):
    spec = SynthSpec.from_json(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    manifest = build_dataset(spec, args.out)
    path = Path(args.out) / "manifest.jsonl"
    _emit({"manifest": str(path), "utterances": len(manifest), "sha256": manifest_hash(path)})


def cmd_train(args):
    exp = ExperimentConfig.from_json(args.config)
    if not Path(exp.manifest).exists():
        raise ExperimentError(f"manifest not found: {exp.manifest}")
    ckpt, tlog = train_recipe(exp, args.recipe, init=args.init, seed=args.seed,
                              out_name=args.out_name)
    out = {"recipe": args.recipe, "checkpoint": str(ckpt), "sha256": checkpoint.file_hash(ckpt),
           "accepted_epochs": len(tlog.accepted), "stop_reason": tlog.stop_reason,
           "final_dev_loss": tlog.accepted[-1].dev_loss if tlog.accepted else tlog.initial_dev_loss}
    if args.init:
        out["base_sha256"] = checkpoint.file_hash(args.init)
    _emit(out)


def cmd_evaluate(args):
    base = ExperimentConfig.from_json(args.config).to_dict() if args.config else {}
    base["manifest"] = args.manifest
    exp = ExperimentConfig.from_dict(base)
    curves, summ = evaluate(exp, args.models, split=args.split, out_dir=args.out, names=args.names)
    log.info("\n%s", format_table(summ))
    _emit(summ)


def cmd_detect(args):
    model = checkpoint.load(args.model)
    wave_form = read_wav(args.wav)
    feat = compute_lfbe(wave_form)
    cfg = DetectorConfig(n_ctx=args.n_ctx, n_lck=args.n_lck, threshold=args.threshold)
    if model.kind == "lstm":
        det = StreamingDetector(model, cfg)
        for frame in feat.frames:
            for t in det.push(frame):
                _spike(wave_form.id, t, det.smoothed[t])
        for t in det.finish():
            _spike(wave_form.id, t, det.smoothed[t])
    else:
        s = smooth(model.posteriors(feat), cfg.n_ctx)
        for t in fire(s, cfg):
            _spike(wave_form.id, t, s[t])


def _spike(uid, t, value):
    _emit({"utterance_id": uid, "frame": int(t), "time_ms": int(t) * 10,
           "smoothed_posterior": float(value)})


def build_parser():
    ap = argparse.ArgumentParser(prog="kwspot", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one recipe")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--recipe", required=True, choices=sorted(RECIPES))
    p.add_argument("--init", help="checkpoint to start from (max-pooling after xent)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-name", help="checkpoint base name (default: recipe name)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="DET curves and AUC on a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--models", nargs="+", required=True, help="checkpoints; the first is the baseline")
    p.add_argument("--names", nargs="+", help="display names, one per model")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--config", help="experiment config for detector/evaluation settings")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("detect", help="run the streaming detector on one WAV file")
    p.add_argument("--model", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--n-ctx", type=int, default=30)
    p.add_argument("--n-lck", type=int, default=40)
    p.set_defaults(func=cmd_detect)

    for p in sub.choices.values():
        p.add_argument("--threads", type=int, default=1,
                       help="BLAS threads; 1 guarantees bit-reproducible results")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("KWSPOT_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if getattr(args, "names", None) and len(args.names) != len(args.models):
        print("kwspot: error: --names needs one name per model", file=sys.stderr)
        return 2
    limits = threadpool_limits(args.threads) if args.threads else nullcontext()
    try:
        with limits:
            args.func(args)
    except (CorpusError, ExperimentError, FeatureError, checkpoint.CheckpointError,
            ValueError, OSError) as exc:
        print(f"kwspot {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
