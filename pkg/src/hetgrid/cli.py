"""Command-line interface.

Subcommands: ``cluster`` (image to assignment/visualisation), ``conv-check``
(convolution equivalence suites), ``gradcheck`` (finite-difference gradient
verification), ``flops`` (operation-count report on a seeded fixture), and
``train-demo`` (synthetic end-to-end training).

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O or
format error. All subcommands are deterministic given their flags and seed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from fractions import Fraction

import numpy as np

from . import __version__
from .clustering import diff_slic, importance_map, modulate_importance, sample_centers
from .config import ConfigError, RunConfig, read_config
from .grid import DIRECTIONS, GridShape, full_adjacency
from .hgconv import coarsen_all, refine
from .pnm import FormatError, read_pnm_file, to_features, write_pnm_file
from .tensorfile import read_tensor, write_tensor
from .traindemo import TrainingDiverged, format_metrics, run_demo
from .verify import (
    CONV_TOL,
    GRADCHECK_TOL,
    conv_equivalence_suite,
    flops_fixture,
    identity_grouping_suite,
    run_gradcheck,
)
from .viz import cluster_visualize

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_IO = 3

_EPILOG = """exit codes:
  0  success
  1  verification failure (tolerances not met, training diverged)
  2  usage error (unknown flags, bad flag values)
  3  I/O error (unreadable or malformed files, bad configuration)
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_ratio(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"bad ratio {text!r}") from exc


def _parse_sizes(text: str) -> list[tuple[int, int]]:
    sizes = []
    for token in text.split(","):
        token = token.strip().lower()
        try:
            h, w = token.split("x")
            sizes.append((int(h), int(w)))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(
                f"bad size {token!r}, expected HxW") from exc
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="hetgrid",
        description="Heterogeneous grid convolution toolkit.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"hetgrid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_cluster = sub.add_parser(
        "cluster", help="cluster an image and write assignment plus visualisation",
        epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p_cluster.add_argument("--input", required=True, help="P5/P6 image file")
    p_cluster.add_argument("--config", help="configuration file")
    p_cluster.add_argument("--out-viz", help="output PPM visualisation")
    p_cluster.add_argument("--out-assign", help="output HGT1 dense assignment")
    p_cluster.add_argument("--attention", help="HGT1 attention map (values in [0, 1])")
    p_cluster.add_argument("--alpha", type=float, default=None,
                           help="attention weight (default from config)")
    p_cluster.add_argument("--seed", type=int, default=None,
                           help="override the configured seed")

    p_check = sub.add_parser(
        "conv-check", help="run the convolution equivalence suites",
        epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p_check.add_argument("--sizes", type=_parse_sizes, default=None,
                         help="comma-separated HxW list (default 1x1..8x8)")
    p_check.add_argument("--seeds", type=int, default=10,
                         help="random draws per case (default 10)")

    p_grad = sub.add_parser(
        "gradcheck", help="verify gradients against finite differences",
        epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p_grad.add_argument("--pipeline", choices=("hg", "conv", "slic"), default="hg")
    p_grad.add_argument("--h", type=float, default=1e-5, help="difference step")

    p_flops = sub.add_parser(
        "flops", help="operation-count report on a seeded clustering fixture",
        epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p_flops.add_argument("--height", type=int, default=64)
    p_flops.add_argument("--width", type=int, default=64)
    p_flops.add_argument("--channels", type=int, default=64)
    p_flops.add_argument("--ratio", type=_parse_ratio, default=Fraction(1, 64))
    p_flops.add_argument("--layers", type=int, default=3)
    p_flops.add_argument("--seed", type=int, default=0)

    p_train = sub.add_parser(
        "train-demo", help="synthetic two-class segmentation training",
        epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p_train.add_argument("--epochs", type=int, default=15)
    p_train.add_argument("--lr", type=float, default=0.1)
    p_train.add_argument("--seed", type=int, default=1)
    p_train.add_argument("--samples", type=int, default=200)
    p_train.add_argument("--out", help="write metric lines to this file")

    return parser


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return read_config(path)


def cmd_cluster(args) -> int:
    cfg = _load_config(args.config)
    cluster_cfg = cfg.cluster
    if args.seed is not None:
        cluster_cfg = replace(cluster_cfg, seed=args.seed)
    alpha = args.alpha if args.alpha is not None else cluster_cfg.focus_alpha

    img = read_pnm_file(args.input)
    x = to_features(img)
    shape = GridShape(*img.shape[:2])

    imp = importance_map(x, shape)
    if args.attention is not None:
        attn = read_tensor(args.attention)
        if attn.shape != (shape.height, shape.width):
            raise FormatError(
                f"attention shape {attn.shape} does not match image "
                f"{(shape.height, shape.width)}")
        imp = modulate_importance(imp, attn.reshape(-1), alpha)

    n_grp = cluster_cfg.n_groups(shape.n_pix)
    centers = sample_centers(imp, shape, n_grp, cluster_cfg)
    s, final_centers = diff_slic(x, shape, centers, cluster_cfg)

    g = refine(coarsen_all(s, full_adjacency(shape)),
               cancel=cfg.module.noise_cancel, keep_max=cfg.module.max_direction)

    if args.out_viz is not None:
        image = cluster_visualize(s, shape, final_centers, cluster_cfg.seed)
        write_pnm_file(args.out_viz, image)
    if args.out_assign is not None:
        write_tensor(args.out_assign, s.to_csr(np.float32).toarray())

    sizes = np.bincount(s.argmax_groups(), minlength=n_grp)
    print(f"pixels: {shape.n_pix}")
    print(f"groups: {n_grp}")
    print(f"mean_cluster_size: {sizes.mean():.6f}")
    print(f"max_cluster_size: {int(sizes.max())}")
    for d in DIRECTIONS:
        print(f"adjacency_nnz_{d.name.lower()}: {g.adj[d].nnz}")
    return EXIT_OK


def cmd_conv_check(args) -> int:
    results = conv_equivalence_suite(sizes=args.sizes, seeds=args.seeds)
    results += identity_grouping_suite(sizes=args.sizes, seeds=max(1, args.seeds // 3))
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.label}: max_dev {r.max_deviation:.3e} tol {r.tolerance:.1e} {status}")
        failed += 0 if r.passed else 1
    print(f"cases: {len(results)} failed: {failed}")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_gradcheck(args) -> int:
    if args.h <= 0:
        print(f"hetgrid gradcheck: error: step must be positive, got {args.h}",
              file=sys.stderr)
        return EXIT_USAGE
    report = run_gradcheck(args.pipeline, h=args.h)
    for name in sorted(report.per_leaf):
        print(f"{name}: {report.per_leaf[name]:.3e}")
    print(f"max_rel_error: {report.max_rel_error:.3e} ({report.worst_leaf})")
    ok = report.ok(GRADCHECK_TOL)
    print(f"tolerance: {GRADCHECK_TOL:.1e} {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_flops(args) -> int:
    _, _, report = flops_fixture(
        height=args.height, width=args.width, channels=args.channels,
        ratio=args.ratio, layers=args.layers, seed=args.seed)
    print(f"height: {args.height}")
    print(f"width: {args.width}")
    print(f"channels: {args.channels}")
    print(f"downsample_ratio: {args.ratio}")
    print(f"layers: {args.layers}")
    print(report.as_text())
    return EXIT_OK


def cmd_train_demo(args) -> int:
    try:
        _, metrics = run_demo(epochs=args.epochs, lr=args.lr,
                              seed=args.seed, n_samples=args.samples)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    text = format_metrics(metrics)
    print(text)
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


_COMMANDS = {
    "cluster": cmd_cluster,
    "conv-check": cmd_conv_check,
    "gradcheck": cmd_gradcheck,
    "flops": cmd_flops,
    "train-demo": cmd_train_demo,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = _COMMANDS[args.command]
    try:
        return handler(args)
    except (OSError, FormatError, ConfigError) as exc:
        print(f"hetgrid {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"hetgrid {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
