"""Command-line interface.

Exit codes: 0 success, 1 runtime error (one-line message on stderr),
2 usage error (argparse).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path


def _int_list(s: str):
    return [int(v) for v in s.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epdkit", description="Embodied IQA toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("distort", help="apply one distortion to a PNG")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--kind", required=True)
    d.add_argument("--level", type=int, required=True)
    d.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("generate", help="build an EPD-style dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--tasks", default="push,pick")
    g.add_argument("--kinds", default="", help="comma list; default all 25")
    g.add_argument("--levels", default="1,2,3,4,5")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workers", type=int, default=None)

    s = sub.add_parser("split", help="assign a stratified train/val split")
    s.add_argument("--data", required=True)
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train a model on a split manifest")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--curve", default=None, help="loss-curve CSV path")
    t.add_argument("--preset", default="toy", choices=["toy", "full"])
    t.add_argument("--input-size", type=int, default=None)
    t.add_argument("--pyramid-channels", type=int, default=None)
    t.add_argument("--fc-hidden", type=int, default=None)
    t.add_argument("--fuse-level", type=int, default=3)
    t.add_argument("--no-ms", action="store_true")
    t.add_argument("--no-ea", action="store_true")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    t.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("eval", help="score val records and report correlations")
    e.add_argument("--data", required=True)
    e.add_argument("--scorer", default="psnr",
                   help="psnr|ssim|dmos|random or a checkpoint path")
    e.add_argument("--mapping", default="none",
                   choices=["none", "poly3", "logistic4"])
    e.add_argument("--out", default=None, help="report CSV path")
    e.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("ablate", help="run the 4-variant ablation harness")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True, help="report CSV path")
    a.add_argument("--preset", default="toy", choices=["toy", "full"])
    a.add_argument("--input-size", type=int, default=None)
    a.add_argument("--pyramid-channels", type=int, default=None)
    a.add_argument("--fc-hidden", type=int, default=None)
    a.add_argument("--epochs", type=int, default=10)
    a.add_argument("--lr", type=float, default=1e-4)
    a.add_argument("--batch-size", type=int, default=16)
    a.add_argument("--seeds", default="0", help="comma list of training seeds")

    n = sub.add_parser("analyze", help="emit distribution/correlation reports")
    n.add_argument("--data", required=True)
    n.add_argument("--out", required=True, help="report directory")

    c = sub.add_parser("correlate", help="correlate external scores with dmos")
    c.add_argument("--data", required=True)
    c.add_argument("--external", required=True, help="CSV with header id,score")
    c.add_argument("--out", default=None, help="paired-table CSV path")

    pa = sub.add_parser("params", help="print the trainable parameter count")
    pa.add_argument("--preset", default="full", choices=["toy", "full"])
    pa.add_argument("--input-size", type=int, default=128)
    pa.add_argument("--no-ms", action="store_true")
    pa.add_argument("--no-ea", action="store_true")
    return p


def _model_config(args):
    from .model import ModelConfig

    return ModelConfig(
        input_size=args.input_size or 128,
        backbone=args.preset,
        pyramid_channels=getattr(args, "pyramid_channels", None),
        fc_hidden=getattr(args, "fc_hidden", None),
        fuse_level=getattr(args, "fuse_level", 3),
        enable_ms=not getattr(args, "no_ms", False),
        enable_ea=not getattr(args, "no_ea", False),
    )


def _cmd_distort(args):
    from .distortions import DistortionSpec, apply_distortion
    from .imagebuf import load_png, save_png

    img = load_png(args.inp)
    out = apply_distortion(img, DistortionSpec(args.kind, args.level, args.seed))
    save_png(out, args.out)
    print(f"wrote {args.out}")


def _cmd_generate(args):
    from . import pipeline

    kinds = [k for k in args.kinds.split(",") if k] or None
    manifest = pipeline.generate(
        args.out,
        n_scenes=args.scenes,
        tasks=tuple(t for t in args.tasks.split(",") if t),
        kinds=kinds,
        levels=tuple(_int_list(args.levels)),
        master_seed=args.seed,
        workers=args.workers,
    )
    print(f"wrote {len(manifest.records)} records to {args.out}")


def _cmd_split(args):
    from . import pipeline

    manifest = pipeline.load_manifest(args.data)
    pipeline.split(manifest, ratio=args.ratio, split_seed=args.seed)
    pipeline.save_manifest(manifest, args.data)
    train, val = pipeline.split_records(manifest)
    print(f"split {len(train)} train / {len(val)} val (hash {manifest.split_hash[:12]})")


def _cmd_train(args):
    from . import pipeline
    from .checkpoint import save_checkpoint
    from .model import TrainConfig

    manifest = pipeline.load_manifest(args.data)
    cfg = _model_config(args)
    hyper = TrainConfig(optimizer=args.optimizer, lr=args.lr,
                        batch_size=args.batch_size, epochs=args.epochs,
                        seed=args.seed)
    params, curve, report = pipeline.train_from_manifest(
        manifest, args.data, cfg, hyper, input_size=args.input_size)
    save_checkpoint(args.out, cfg, params,
                    metadata={"epochs": args.epochs, "seed": args.seed,
                              "split_hash": manifest.split_hash})
    if args.curve:
        pipeline.write_curve_csv(curve, args.curve)
    line = f"saved {args.out}; final train_mse {curve[-1]['train_mse']:.6f}"
    for row in report:
        if row["subset"] == "all":
            line += f"; val srcc {row['srcc']:.4f}"
    print(line)


def _cmd_eval(args):
    from . import pipeline

    manifest = pipeline.load_manifest(args.data)
    report = pipeline.evaluate(manifest, args.data, scorer=args.scorer,
                               mapping=args.mapping, seed=args.seed)
    if args.out:
        pipeline.eval_report_csv(report, args.out)
    for row in report.rows:
        print(f"{args.scorer} {row['subset']}: srcc {row['srcc']:.4f} "
              f"krcc {row['krcc']:.4f} plcc {row['plcc']:.4f} (n={row['n']})")


def _cmd_ablate(args):
    from . import pipeline
    from .model import TrainConfig

    manifest = pipeline.load_manifest(args.data)
    base = _model_config(args)
    hyper = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs)
    rows = pipeline.ablation_run(manifest, args.data, base, hyper,
                                 seeds=tuple(_int_list(args.seeds)),
                                 input_size=args.input_size)
    pipeline.ablation_csv(rows, args.out)
    print(f"wrote {len(rows)} ablation rows to {args.out}")


def _cmd_analyze(args):
    from . import pipeline

    manifest = pipeline.load_manifest(args.data)
    summary = pipeline.analyze(manifest, args.out)
    print(json.dumps(summary, sort_keys=True))


def _cmd_correlate(args):
    from . import pipeline

    manifest = pipeline.load_manifest(args.data)
    out = pipeline.correlate_external(manifest, args.external)
    if args.out:
        import csv as csv_mod

        with open(args.out, "w", newline="") as fh:
            w = csv_mod.writer(fh)
            w.writerow(["id", "external", "dmos", "fitted"])
            for p in out["pairs"]:
                w.writerow([p["id"], f"{p['external']:.6f}", f"{p['dmos']:.6f}",
                            f"{p['fitted']:.6f}"])
    print(f"n {out['n']} srcc {out['srcc']:.4f} plcc_poly3 {out['plcc_poly3']:.4f}")


def _cmd_params(args):
    from .model import count_params

    print(count_params(_model_config(args)))


COMMANDS = {
    "distort": _cmd_distort,
    "generate": _cmd_generate,
    "split": _cmd_split,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "analyze": _cmd_analyze,
    "correlate": _cmd_correlate,
    "params": _cmd_params,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except Exception as exc:  # runtime errors -> exit 1, one parsable line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
