"""Command-line surface: dataset synthesis, training, evaluation,
per-video prediction, ablation runs and probability-curve plots.

Exit codes: 0 success, 2 usage/config/scenario errors, 3 protocol or
data errors.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .data import PredictionCurve, load_archive, save_archive
from .errors import (ArchiveError, ConfigError, ProtocolError, ScenarioError,
                     TrainingDiverged)
from .metrics import evaluate
from .model import VARIANTS, AnticipationModel
from .plotting import curve_svg
from .synth import ScenarioDistribution, generate_dataset
from .training import EpochLog, load_checkpoint, save_checkpoint, train

CSV_HEADER = "epoch,loss,ap,mtta,lr"


def _csv_row(entry: EpochLog):
    return "%d,%r,%r,%r,%r" % (entry.epoch, entry.loss, entry.val_ap,
                               entry.val_mtta, entry.lr)


def _require_archive(path):
    p = Path(path)
    if not p.exists() or not (p / "manifest.json").exists():
        raise ConfigError("archive not found: %s" % path)
    return load_archive(p)


def cmd_synth(args):
    if args.count < 1:
        raise ScenarioError("--count must be >= 1, got %d" % args.count)
    dist = ScenarioDistribution(positive_fraction=args.positive_fraction,
                                confusable_fraction=args.confusable_fraction,
                                occlusion_prob=args.occlusion_prob,
                                n_frames=args.frames)
    samples = generate_dataset(dist, args.count, args.seed)
    save_archive(samples, args.out, dist.archive_dims())
    n_pos = sum(1 for s in samples if s.positive)
    print("wrote %d videos (%d positive / %d negative) to %s"
          % (len(samples), n_pos, len(samples) - n_pos, args.out))
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    samples, dims = _require_archive(cfg.data.archive)
    model = AnticipationModel(dims, cfg.model, seed=cfg.train.seed)
    flags = VARIANTS[args.variant]
    rows = [CSV_HEADER]

    def log_fn(entry):
        rows.append(_csv_row(entry))
        print("epoch %3d  loss %12.4f  val AP %6s  val mTTA %6s  lr %g"
              % (entry.epoch, entry.loss,
                 "%.3f" % entry.val_ap if np.isfinite(entry.val_ap) else "n/a",
                 "%.3f" % entry.val_mtta if np.isfinite(entry.val_mtta) else "n/a",
                 entry.lr))

    logs, _ = train(model, samples, cfg.train, flags=flags, log_fn=log_fn,
                    split_seed=cfg.data.split_seed)
    save_checkpoint(args.out, model, epoch=len(logs),
                    rng_state={"seed": cfg.train.seed},
                    extra_config={"variant": args.variant})
    if args.log:
        Path(args.log).write_text("\n".join(rows) + "\n")
    print("checkpoint written to %s" % args.out)
    return 0


def _predict_archive(model, samples, flags):
    return [model.predict(s, flags) for s in samples]


def cmd_eval(args):
    cfg = load_config(args.config)
    model, header = load_checkpoint(args.checkpoint)
    samples, dims = _require_archive(args.archive or cfg.data.archive)
    variant = header.get("train_config", {}).get("variant", "full")
    curves = _predict_archive(model, samples, VARIANTS[variant])
    report = evaluate(curves, q=cfg.eval.q, r0=cfg.eval.r0,
                      convention=cfg.eval.tta_convention)
    print(report.table())
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2,
                                              sort_keys=True) + "\n")
    if args.dump_curves:
        Path(args.dump_curves).write_text(json.dumps(
            [c.to_dict() for c in curves], indent=2, sort_keys=True) + "\n")
    return 0


def cmd_predict(args):
    model, header = load_checkpoint(args.checkpoint)
    samples, dims = _require_archive(args.archive)
    variant = header.get("train_config", {}).get("variant", "full")
    if args.id:
        samples = [s for s in samples if s.id == args.id]
        if not samples:
            raise ArchiveError("video %r not in archive %s" % (args.id, args.archive))
    curves = _predict_archive(model, samples, VARIANTS[variant])
    payload = curves[0].to_dict() if args.id else [c.to_dict() for c in curves]
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_ablate(args):
    cfg = load_config(args.config)
    train_samples, dims = _require_archive(cfg.data.archive)
    eval_samples, _ = _require_archive(args.eval_archive or cfg.data.archive)
    names = [_normalize_variant(v) for v in args.variants.split(",")] \
        if args.variants else list(VARIANTS)
    results = {}
    for name in names:
        flags = VARIANTS[name]
        model = AnticipationModel(dims, cfg.model, seed=cfg.train.seed)
        train(model, train_samples, cfg.train, flags=flags,
              split_seed=cfg.data.split_seed)
        curves = _predict_archive(model, eval_samples, flags)
        results[name] = evaluate(curves, q=cfg.eval.q, r0=cfg.eval.r0,
                                 convention=cfg.eval.tta_convention)
        print("[%s]" % name)
        print(results[name].table())
    if args.json:
        Path(args.json).write_text(json.dumps(
            {k: v.to_dict() for k, v in results.items()},
            indent=2, sort_keys=True) + "\n")
    return 0


def cmd_plot(args):
    payload = json.loads(Path(args.curves).read_text())
    if isinstance(payload, dict):
        payload = [payload]
    curves = [PredictionCurve.from_dict(d) for d in payload]
    if args.id:
        curves = [c for c in curves if c.video_id == args.id]
        if not curves:
            raise ArchiveError("video %r not present in %s" % (args.id, args.curves))
    svg = curve_svg(curves[0], threshold=args.threshold)
    Path(args.out).write_text(svg)
    print("wrote %s" % args.out)
    return 0


def _normalize_variant(name):
    key = name.strip().lower().replace("_", "").replace("+", "-")
    key = {"no-arec": "no-arec", "noarec": "no-arec"}.get(key, key)
    if key not in VARIANTS:
        raise ConfigError("unknown variant %r (known: %s)"
                          % (name, ", ".join(VARIANTS)))
    return key


def build_parser():
    ap = argparse.ArgumentParser(prog="depthwarn",
                                 description="depth-aware early accident anticipation")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="generate a synthetic PDAF archive")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--confusable-fraction", type=float, default=0.5)
    p.add_argument("--positive-fraction", type=float, default=0.5)
    p.add_argument("--occlusion-prob", type=float, default=0.25)
    p.add_argument("--frames", type=int, default=40)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model on an archive")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="epoch CSV path")
    p.add_argument("--variant", default="full", type=_normalize_variant)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an archive")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--archive", help="defaults to the config's archive")
    p.add_argument("--json", help="write the report as JSON here")
    p.add_argument("--dump-curves", help="write per-video curves as JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="per-video probability curves")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--archive", required=True)
    p.add_argument("--id", help="single video id")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("ablate", help="train and evaluate model variants")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", help="comma list; defaults to all")
    p.add_argument("--eval-archive", help="archive to evaluate on")
    p.add_argument("--json", help="write per-variant reports as JSON here")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("plot", help="SVG probability curve plot")
    p.add_argument("--curves", required=True, help="JSON from eval --dump-curves")
    p.add_argument("--id", help="video id to plot (default: first)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.fn(args)
    except (ConfigError, ScenarioError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 2
    except (ProtocolError, ArchiveError, TrainingDiverged) as e:
        print("error: %s" % e, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
