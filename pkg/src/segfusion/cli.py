"""Command-line front end.

Every verb reads its options from flags, optionally preloaded from a
``key=value`` file given with ``--config``; flags win over the file.
Exit status is 0 on success, 1 when a run fails and 2 for usage errors
(including missing input files).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import ConstraintSet, Ensemble
from .dataio import (
    constraints_from_ground_truth,
    generate_synthetic,
    read_constraints,
    read_image,
    read_label_map,
    split_rows,
    write_constraints,
    write_image,
    write_label_map,
)
from .fusion import SSSF, USF, FusionConfig, fuse_sssf, fuse_usf
from .harness import BETA_GRID, C_GRID, METRICS, param_search, run_protocol
from .metrics import evaluate
from .segmenters import band_ensemble, kmeans_segment
from .weights import SolverConfig

log = logging.getLogger("segfusion")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config

def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(parser: argparse.ArgumentParser, values: dict):
    """Install config values as parser defaults, converted like the flags."""
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r}")
        if action.nargs in ("+", "*"):
            items = raw.split()
            defaults[key] = [action.type(v) for v in items] if action.type else items
        elif action.const is not None and action.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = action.type(raw) if action.type else raw
        action.required = False
    parser.set_defaults(**defaults)


# --------------------------------------------------------------- helpers

def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _lambda(value: str):
    if value == "auto":
        return None
    try:
        lam = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'auto' or a number") from None
    if lam < 0:
        raise argparse.ArgumentTypeError("lambda must be non-negative")
    return lam


def _fusion_config(args) -> FusionConfig:
    return FusionConfig(
        beta=args.beta,
        T=args.T,
        C_hat=args.C_hat,
        seed=args.seed,
        mode=args.mode,
        solver=SolverConfig(lambda_=args.lam),
    )


def _write_rows(path, header, rows):
    out = open(path, "w", newline="") if path else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if path:
            out.close()


def _fmt(x: float) -> str:
    return repr(float(x))


# ------------------------------------------------------------------ verbs

def cmd_segment(args):
    img = read_image(_existing(args.image))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.per_band:
        seeds = np.random.SeedSequence(args.seed).generate_state(img.num_bands)
        ens = band_ensemble(img, args.k, [int(s) for s in seeds], zscore=args.zscore,
                            n_init=args.n_init)
    else:
        ens = Ensemble((kmeans_segment(img, args.k, args.seed, zscore=args.zscore,
                                       n_init=args.n_init),),
                       (f"kmeans all-bands k={args.k} seed={args.seed}",))
    lines = []
    for j, (seg, tag) in enumerate(zip(ens, ens.provenance)):
        name = f"member{j:02d}.{args.format}"
        write_label_map(seg, out / name)
        lines.append(f"{name}\t{tag}")
    (out / "members.txt").write_text("".join(line + "\n" for line in lines))
    log.info("wrote %d label maps to %s", len(ens), out)


def cmd_fuse(args):
    members = [read_label_map(_existing(p)) for p in args.members]
    ens = Ensemble(tuple(members), tuple(str(p) for p in args.members))
    cfg = _fusion_config(args)
    if args.mode == USF:
        if args.constraints:
            raise UsageError("--constraints requires --mode sssf")
        result = fuse_usf(ens, cfg)
    else:
        cons = read_constraints(_existing(args.constraints)) if args.constraints else ConstraintSet()
        result = fuse_sssf(ens, cons, cfg)

    out = Path(args.out)
    write_label_map(result.segmentation, out)
    stem = out.with_suffix("")
    weights_path = args.weights or f"{stem}_weights.csv"
    log_path = args.log or f"{stem}_log.csv"
    _write_rows(weights_path, ["member", "path", "weight"],
                [(i, p, _fmt(w)) for i, (p, w) in enumerate(zip(args.members, result.weights))])
    rows = []
    for t, member, objective, move in result.log:
        unit, label = move if move else ("", "")
        rows.append((t, member, _fmt(objective), unit, label))
    _write_rows(log_path, ["t", "member", "objective", "unit", "label"], rows)
    moves = sum(1 for entry in result.log if entry[3])
    log.info("%d steps, %d accepted moves, final objective %.6g",
             len(result.log), moves, result.log[-1][2])


def cmd_evaluate(args):
    truth = read_label_map(_existing(args.truth))
    names = args.names or [Path(p).stem for p in args.outputs]
    if len(names) != len(args.outputs):
        raise UsageError("--names needs one name per output")
    scores = [evaluate(read_label_map(_existing(p)), truth) for p in args.outputs]
    rows = [[metric] + [_fmt(s[metric]) for s in scores] for metric in METRICS]
    _write_rows(args.out, ["metric"] + list(names), rows)


def cmd_param_search(args):
    img = read_image(_existing(args.image))
    truth = read_label_map(_existing(args.truth))
    cfg = replace(_fusion_config(args), C_hat=None)
    c_grid = tuple(range(args.c_min, args.c_max + 1))
    if not c_grid:
        raise UsageError("empty C_hat range")
    (c, beta), rows = param_search(
        img, truth, cfg, c_grid, tuple(args.betas), k=args.k,
        per_band=args.per_band, mode=args.mode, jobs=args.jobs,
    )
    _write_rows(args.grid, ["C_hat", "beta", "ARI"], [(cc, bb, _fmt(a)) for cc, bb, a in rows])
    best = max(a for _, _, a in rows)
    _write_rows(args.out, ["C_hat", "beta", "ARI"], [(c, beta, _fmt(best))])


def cmd_synth(args):
    img, truth = generate_synthetic(
        args.width, args.height, args.C, args.bands, args.sigma, seed=args.seed,
        spread=args.spread, correlation=args.correlation, sites_per_label=args.sites_per_label,
    )
    out = Path(args.out_dir)
    manifest = write_image(img, out)
    write_label_map(truth, out / "truth.pgm")
    log.info("wrote %s and %s", manifest, out / "truth.pgm")


def cmd_constraints(args):
    truth = read_label_map(_existing(args.truth))
    cons = constraints_from_ground_truth(truth, args.fraction, args.seed)
    write_constraints(cons, args.out)
    log.info("%d must-link and %d cannot-link pairs", len(cons.must_link), len(cons.cannot_link))


def cmd_experiment(args):
    """Train/test protocol over seeded synthetic datasets; prints a metric table."""
    cfg = _fusion_config(args)
    methods = ("Average Base", "USF", "SSSF")
    totals = {(m, h, x): [] for m in methods for h in ("Tr", "Te") for x in METRICS}
    for ds in range(args.datasets):
        seed = args.seed + ds
        img, truth = generate_synthetic(
            args.width, args.height, args.C, args.bands, args.sigma, seed=seed,
            spread=args.spread, correlation=args.correlation,
        )
        split = split_rows(img, truth, args.height // 2)
        res = run_protocol(split, args.k or args.C, args.fraction, replace(cfg, seed=seed), seed=seed)
        for key in totals:
            m, h, x = key
            totals[key].append(res.scores[m][h][x])
        log.info("dataset %d done", ds)
    header = ["metric"] + [f"{m} {h}" for m in methods for h in ("Tr", "Te")]
    rows = [[x] + [f"{np.mean(totals[(m, h, x)]):.4f}" for m in methods for h in ("Tr", "Te")]
            for x in METRICS]
    _write_rows(args.out, header, rows)


# ---------------------------------------------------------------- parser

def _fusion_flags(p, mode_default=USF):
    p.add_argument("--mode", choices=(USF, SSSF), default=mode_default)
    p.add_argument("--beta", type=float, default=0.9, help="decay of the move matrix")
    p.add_argument("--T", type=int, default=1000, help="iteration budget")
    p.add_argument("--C-hat", dest="C_hat", type=int, default=None, help="label budget")
    p.add_argument("--lambda", dest="lam", type=_lambda, default=None,
                   help="'auto' or a non-negative sparsity weight")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags override it")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="segfusion", description="Segmentation ensemble fusion.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("segment", parents=[common], help="k-means base segmentations")
    p.add_argument("--image", required=True, help="band manifest")
    p.add_argument("--k", type=int, required=True)
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--per-band", dest="per_band", action="store_true", default=True)
    grp.add_argument("--whole", dest="per_band", action="store_false",
                     help="one run on all bands jointly")
    p.add_argument("--n-init", type=int, default=1)
    p.add_argument("--zscore", action="store_true", help="standardize each band first")
    p.add_argument("--format", choices=("pgm", "csv"), default="pgm")
    p.add_argument("--out-dir", default="members")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("fuse", parents=[common], help="fuse member label maps")
    p.add_argument("--members", nargs="+", required=True)
    p.add_argument("--constraints")
    _fusion_flags(p)
    p.add_argument("--out", required=True, help="consensus label map (.pgm or .csv)")
    p.add_argument("--weights", help="weights CSV (default: <out>_weights.csv)")
    p.add_argument("--log", help="iteration log CSV (default: <out>_log.csv)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", parents=[common], help="RI, ARI and AMI against ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--outputs", nargs="+", required=True)
    p.add_argument("--names", nargs="+")
    p.add_argument("--out", help="CSV file (default: standard output)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("param-search", parents=[common], help="grid search over C_hat and beta")
    p.add_argument("--image", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--c-min", type=int, default=C_GRID[0])
    p.add_argument("--c-max", type=int, default=C_GRID[-1])
    p.add_argument("--betas", type=float, nargs="+", default=list(BETA_GRID))
    p.add_argument("--k", type=int, default=None, help="fixed k (default: k = C_hat)")
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--per-band", dest="per_band", action="store_true", default=True)
    grp.add_argument("--whole", dest="per_band", action="store_false")
    p.add_argument("--jobs", type=int, default=1)
    _fusion_flags(p)
    p.add_argument("--grid", help="full grid CSV (default: standard output)")
    p.add_argument("--out", help="best pair CSV (default: standard output)")
    p.set_defaults(func=cmd_param_search)

    p = sub.add_parser("synth", parents=[common], help="synthetic multi-band image")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--C", type=int, default=6)
    p.add_argument("--bands", type=int, default=7)
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--correlation", type=float, default=0.0)
    p.add_argument("--sites-per-label", type=int, default=1)
    p.add_argument("--out-dir", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("constraints", parents=[common], help="sample pairs from ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_constraints)

    p = sub.add_parser("experiment", parents=[common], help="train/test protocol on synthetic data")
    p.add_argument("--datasets", type=int, default=20)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--C", type=int, default=6)
    p.add_argument("--bands", type=int, default=7)
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--spread", type=float, default=3.0)
    p.add_argument("--correlation", type=float, default=1.0)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--fraction", type=float, default=0.05)
    _fusion_flags(p)
    p.add_argument("--out", help="CSV file (default: standard output)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    verbs = parser._subparsers._group_actions[0].choices
    verb = next((a for a in argv if a in verbs), None)
    if known.config and verb:
        try:
            _apply_config(verbs[verb], read_config(_existing(known.config)))
        except UsageError as exc:
            print(f"segfusion {verb}: {exc}", file=sys.stderr)
            return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    try:
        args.func(args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"segfusion {args.verb}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"segfusion {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
