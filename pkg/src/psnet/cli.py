"""Command-line entry point: ``python -m psnet <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np


def _cmd_synth(args):
    from .data import synth_generate

    m = synth_generate(args.out, args.n, args.size, (args.count_min, args.count_max), seed=args.seed)
    print(f"wrote {len(m)} images and {os.path.join(args.out, 'manifest.json')}")


def _cmd_gt(args):
    from .data import load_manifest
    from .density import adaptive_kernel_density, fixed_kernel_density, write_dmap

    manifest = load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    for i, e in enumerate(manifest.entries):
        pts = manifest.point_set(i)
        if args.mode == "fixed":
            dmap = fixed_kernel_density(pts, args.sigma)
        else:
            dmap = adaptive_kernel_density(pts, args.k, args.beta, args.sigma)
        stem = os.path.splitext(os.path.basename(e.image))[0]
        write_dmap(os.path.join(args.out, stem + ".dmap"), dmap)
    print(f"wrote {len(manifest)} density maps to {args.out}")


def _cmd_train(args):
    from .data import load_manifest
    from .train import RunConfig, train

    with open(args.config, encoding="utf-8") as f:
        run = RunConfig.from_dict(json.load(f))
    _, ckpt = train(run, load_manifest(args.manifest), args.out)
    print(ckpt)


def _cmd_eval(args):
    from .data import load_manifest
    from .train import evaluate

    report = evaluate(args.checkpoint, load_manifest(args.manifest, split="test"))
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=1)
            f.write("\n")
    print(f"MAE {report.mae:.4f}  RMSE {report.rmse:.4f}  L_M {report.mean_variance_loss:.4f}  images {len(report.per_image)}")


def _cmd_predict(args):
    from .train import predict

    print(f"{predict(args.checkpoint, args.image, args.out):.2f}")


def _cmd_diagnose(args):
    from .data import load_manifest
    from .train import evaluate, scale_group_report

    report = evaluate(args.checkpoint, load_manifest(args.manifest, split="test"))
    for k, mat in enumerate(report.pairwise_similarity):
        print(f"PSM {k} branch cosine similarity:")
        for row in mat:
            print("  " + " ".join(f"{v:6.3f}" for v in row))
    groups = scale_group_report(report, min(args.groups, len(report.per_image)))
    print("group  mean_pred  mean_gt")
    for g, (p, t) in enumerate(groups):
        print(f"{g:5d}  {p:9.2f}  {t:7.2f}")


def build_parser():
    p = argparse.ArgumentParser(prog="psnet", description="Crowd density estimation with pyramid scale networks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic crowd dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, default=96)
    s.add_argument("--count-min", type=int, default=5)
    s.add_argument("--count-max", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=_cmd_synth)

    s = sub.add_parser("gt", help="write full-resolution density maps for a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--mode", choices=("fixed", "adaptive"), default="adaptive")
    s.add_argument("--sigma", type=float, default=15.0)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--beta", type=float, default=0.3)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_gt)

    s = sub.add_parser("train", help="train from a JSON run config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_train)

    s = sub.add_parser("eval", help="MAE / RMSE / variance loss on a manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--report")
    s.set_defaults(fn=_cmd_eval)

    s = sub.add_parser("predict", help="density map and count for one image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_predict)

    s = sub.add_parser("diagnose", help="branch similarity and count-group report")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--groups", type=int, default=10)
    s.set_defaults(fn=_cmd_diagnose)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    np.seterr(all="ignore")
    try:
        args.fn(args)
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"psnet {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
