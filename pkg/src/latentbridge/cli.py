"""Command-line entry point: ``latentbridge {gen,train,embed,interpolate,cluster}``.

Exit codes: 0 success, 1 internal or numerical error, 2 usage or input
error.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig
from .errors import NumericalError, UsageError

log = logging.getLogger("latentbridge")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", default=None,
                   help="INI run configuration (default: built-in desk-scale defaults)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed (u64, default: config value 0)")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    return p


def _paths(p, data=True, models=True):
    if data:
        p.add_argument("--data", default=None, help="dataset directory (default: config data_dir = data)")
    if models:
        p.add_argument("--models", default=None,
                       help="checkpoint directory (default: config model_dir = models)")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="latentbridge",
        description="Joint image/expression latent space, GP trajectories and k-Shape kinetics.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("gen", parents=[common], formatter_class=fmt,
                       help="write a seeded synthetic dataset")
    p.add_argument("out_dir", nargs="?", default=None, help="output directory (default: config data_dir)")

    p = sub.add_parser("train", parents=[common], formatter_class=fmt,
                       help="train the RNA VAE, then the aligned image VAE "
                            "(epochs 300 / 160, lr 0.001 by default)")
    _paths(p)

    p = sub.add_parser("embed", parents=[common], formatter_class=fmt,
                       help="latent means of every sample plus a 2-D PCA projection")
    _paths(p)
    p.add_argument("--out", default=None, help="output directory (default: config out_dir)")

    p = sub.add_parser("interpolate", parents=[common], formatter_class=fmt,
                       help="GP trajectory between two classes, decoded to frames and expression")
    p.add_argument("class_a")
    p.add_argument("class_b")
    _paths(p)
    p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
    p.add_argument("--genes", default=None,
                   help="comma-separated genes to plot (default: the first six)")
    p.add_argument("--steps", type=int, default=None, help="number of pseudotime steps (default 20)")

    p = sub.add_parser("cluster", parents=[common], formatter_class=fmt,
                       help="k-Shape clustering of trajectory_expr.csv")
    p.add_argument("traj_expr_csv")
    p.add_argument("-k", type=int, default=None, help="number of clusters (default 3)")
    p.add_argument("--flat-tol", type=float, default=None,
                   help="relative std below which a gene counts as flat (default 0.4)")
    p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


_OUTPUTS = {
    "train": ("manifest.ini", "*.lbnn", "loss_*.csv"),
    "embed": ("embedding.csv", "pca.csv", "pca_components.csv"),
    "interpolate": ("trajectory_*.csv", "frame_*.ppm", "expression.svg"),
    "cluster": ("clusters.csv", "centroids.csv", "cluster_*.svg"),
}


def _ensure_writable(path, force, command):
    """Refuse to clobber this command's own outputs unless ``--force``."""
    p = Path(path)
    if force or not p.is_dir():
        return
    clash = sorted(str(f.name) for pat in _OUTPUTS[command] for f in p.glob(pat))
    if clash:
        raise UsageError(f"{p} already holds {clash[0]} (use --force to overwrite)")


def _thread_limit():
    raw = os.environ.get("LATENTBRIDGE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LATENTBRIDGE_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("LATENTBRIDGE_THREADS must be >= 0")
    if n == 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def dispatch(args) -> None:
    cfg = _load_config(args)
    cmd = args.command
    if cmd == "gen":
        out = args.out_dir or cfg.data_dir
        listing = pipeline.run_gen(cfg, out, args.force)
        for name, (r, c) in sorted(listing.items()):
            print(f"{name}\t{r}x{c}")
    elif cmd == "train":
        data, models = args.data or cfg.data_dir, args.models or cfg.model_dir
        _ensure_writable(models, args.force, cmd)
        _, hist = pipeline.run_train(cfg, data, models)
        al = hist.image.column("align")
        print(f"trained: rna loss {hist.rna.total[-1]:.6g}, image loss {hist.image.total[-1]:.6g}, "
              f"align {al[0]:.6g} -> {al[-1]:.6g}")
    elif cmd == "embed":
        out = args.out or cfg.out_dir
        _ensure_writable(out, args.force, cmd)
        mus, _, _ = pipeline.run_embed(cfg, args.data or cfg.data_dir, args.models or cfg.model_dir, out)
        print(f"embedded {len(mus)} samples -> {out}")
    elif cmd == "interpolate":
        if args.steps is not None:
            cfg = cfg.replace(steps=args.steps)
        out = args.out or cfg.out_dir
        _ensure_writable(out, args.force, cmd)
        genes = args.genes.split(",") if args.genes else None
        traj = pipeline.run_interpolate(cfg, args.class_a, args.class_b, args.data or cfg.data_dir,
                                        args.models or cfg.model_dir, out, genes)
        print(f"wrote {len(traj.times)} frames -> {out}")
    elif cmd == "cluster":
        if args.flat_tol is not None:
            cfg = cfg.replace(flat_tol=args.flat_tol)
        out = args.out or cfg.out_dir
        _ensure_writable(out, args.force, cmd)
        names, res = pipeline.run_cluster(cfg, args.traj_expr_csv, out, args.k)
        sizes = [int((res.labels == j).sum()) for j in range(len(res.centroids))]
        print(f"clustered {len(names)} genes into sizes {sizes} -> {out}")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            dispatch(args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
