"""Command line interface.

Exit codes: 0 success, 2 usage error, 3 inconsistent evidence, 4 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data_io, inference
from .data_io import Dataset
from .errors import IcTreeError, InconsistentEvidence, InsufficientAcceptance
from .inference import Evidence
from .tree import Hyperparams, IcTreeModel, fit

logger = logging.getLogger("ictrees")

DEFAULT_SWEEP = (0.9, 0.4, 0.2, 0.1, 0.05, 0.01)
EXIT_USAGE = 2
EXIT_EVIDENCE = 3
EXIT_DATA = 4


@dataclass
class EvalReport:
    dataset: str
    n: int
    m: int
    min_samples_leaf_fraction: float
    model_size: int
    avg_train_ll: Optional[float]
    avg_test_ll: Optional[float]
    zero_fraction_train: float
    zero_fraction_test: float
    wall_time: float

    HEADER = ("dataset", "n", "m", "min_leaf", "model_size", "avg_train_ll", "avg_test_ll", "zero_test", "seconds")

    def cells(self) -> list[str]:
        return [
            self.dataset,
            str(self.n),
            str(self.m),
            _fmt(self.min_samples_leaf_fraction),
            str(self.model_size),
            _fmt(self.avg_train_ll),
            _fmt(self.avg_test_ll),
            _fmt(self.zero_fraction_test),
            _fmt(self.wall_time),
        ]


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.6g}"


def format_table(reports: Sequence[EvalReport]) -> str:
    rows = [EvalReport.HEADER] + [tuple(r.cells()) for r in reports]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)


def evaluate(
    name: str, train: Dataset, test: Dataset, hp: Hyperparams, seed: int
) -> tuple[IcTreeModel, EvalReport]:
    start = time.perf_counter()
    model = fit(train, hp, seed)
    avg_train, zero_train = inference.avg_log_likelihood(model, train)
    avg_test, zero_test = inference.avg_log_likelihood(model, test)
    report = EvalReport(
        dataset=name,
        n=train.n + test.n,
        m=train.m,
        min_samples_leaf_fraction=hp.min_samples_leaf_fraction,
        model_size=model.param_count(),
        avg_train_ll=avg_train,
        avg_test_ll=avg_test,
        zero_fraction_train=zero_train,
        zero_fraction_test=zero_test,
        wall_time=time.perf_counter() - start,
    )
    return model, report


def sweep(
    name: str, data: Dataset, fractions: Sequence[float], base: Hyperparams, seed: int, test_fraction: float
) -> list[EvalReport]:
    """One report per min-leaf fraction, all on the same train/test split."""
    train, test = data_io.split(data, test_fraction, seed)
    reports = []
    for frac in fractions:
        hp = Hyperparams(**{**asdict(base), "min_samples_leaf_fraction": frac})
        _, report = evaluate(name, train, test, hp, seed)
        reports.append(report)
    return reports


# --------------------------------------------------------------------------- helpers


def _load_data(args) -> Dataset:
    schema = data_io.load_schema(args.schema) if args.schema else None
    return data_io.load_csv(args.data, schema)


def _hyperparams(args, fraction: Optional[float] = None) -> Hyperparams:
    return Hyperparams(
        min_samples_leaf_fraction=fraction if fraction is not None else args.min_leaf,
        max_depth=args.max_depth,
        qpd_resolution=args.resolution,
        ica_max_iter=args.ica_iters,
        baseline_mode=args.baseline,
    )


def _read_evidence(model: IcTreeModel, text: Optional[str]) -> Evidence:
    if not text:
        return Evidence()
    text = text.strip()
    obj = json.loads(text) if text.startswith("{") else json.loads(Path(text).read_text(encoding="utf-8"))
    return Evidence.from_json(model.columns, obj)


def _write_rows(model: IcTreeModel, rows: np.ndarray, out: Optional[str]) -> None:
    data = Dataset(model.columns, rows) if rows.shape[0] else None
    handle = open(out, "w", newline="", encoding="utf-8") if out else sys.stdout
    try:
        writer = csv.writer(handle)
        writer.writerow(model.names)
        if data is not None:
            writer.writerows(zip(*[data.labels(j) for j in range(data.m)]))
    finally:
        if out:
            handle.close()


def _emit_json(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _grid_bounds(model: IcTreeModel, column: int) -> tuple[float, float]:
    lows, highs = [], []
    for leaf in model.leaves:
        if column in leaf.kept:
            lo, hi = leaf.original_bounds()
            k = leaf.kept.index(column)
            lows.append(lo[k])
            highs.append(hi[k])
        else:
            value = dict(leaf.dropped)[column]
            lows.append(value)
            highs.append(value)
    return min(lows), max(highs)


def density_grid(
    model: IcTreeModel,
    x_col: str,
    y_col: str,
    resolution: int,
    n_mc: int,
    rng: np.random.Generator,
    ev: Optional[Evidence] = None,
    xlim=None,
    ylim=None,
) -> np.ndarray:
    """Rows ``(x, y, density)`` at the cell centres of a resolution x resolution lattice.

    Other numeric columns are integrated out by Monte Carlo over their
    bounding box; symbolic columns are summed over.
    """
    names = model.names
    for name in (x_col, y_col):
        if name not in names or not model.columns[names.index(name)].is_numeric:
            raise KeyError(f"{name!r} is not a numeric column of the model")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    ix, iy = names.index(x_col), names.index(y_col)
    view = inference.apply_evidence(model, ev) if ev is not None and not ev.is_empty else model
    x_lo, x_hi = xlim or _grid_bounds(model, ix)
    y_lo, y_hi = ylim or _grid_bounds(model, iy)
    xs = x_lo + (np.arange(resolution) + 0.5) * (x_hi - x_lo) / resolution
    ys = y_lo + (np.arange(resolution) + 0.5) * (y_hi - y_lo) / resolution

    others = [j for j in range(len(names)) if j not in (ix, iy)]
    if others:
        base = np.zeros((n_mc, len(names)))
        volume = 1.0
        for j in others:
            col = model.columns[j]
            if col.is_numeric:
                lo, hi = _grid_bounds(model, j)
                base[:, j] = rng.uniform(lo, hi, n_mc)
                volume *= hi - lo if hi > lo else 1.0
            else:
                base[:, j] = rng.integers(0, len(col.categories), n_mc)
                volume *= len(col.categories)
    else:
        base = np.zeros((1, len(names)))
        volume = 1.0

    out = []
    for x in xs:
        for y in ys:
            probe = base.copy()
            probe[:, ix] = x
            probe[:, iy] = y
            dens = np.exp(inference.log_density(view, probe))
            if ev is not None and not ev.is_empty:
                dens = dens * ev.contains(probe)
            out.append((x, y, volume * float(dens.mean())))
    return np.array(out)


# --------------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    data = _load_data(args)
    train, test = data_io.split(data, args.test_fraction, args.seed)
    model, report = evaluate(Path(args.data).stem, train, test, _hyperparams(args), args.seed)
    model.save(args.out)
    print(format_table([report]))
    return 0


def cmd_eval(args) -> int:
    data = _load_data(args)
    fractions = args.sweep or list(DEFAULT_SWEEP)
    reports = sweep(Path(args.data).stem, data, fractions, _hyperparams(args, fractions[0]), args.seed, args.test_fraction)
    print(format_table(reports))
    if args.json:
        _emit_json([asdict(r) for r in reports], args.json)
    return 0


def cmd_sample(args) -> int:
    model = IcTreeModel.load(args.model)
    rng = np.random.default_rng(args.seed)
    ev = _read_evidence(model, args.evidence)
    if ev.is_empty:
        rows, discarded = inference.sample(model, args.n, rng)
        logger.info("discarded %d path-inconsistent draws", discarded)
    else:
        rows, _ = inference.accepted_samples(model, ev, args.n, rng)
    _write_rows(model, rows, args.out)
    return 0


def cmd_infer(args) -> int:
    model = IcTreeModel.load(args.model)
    rng = np.random.default_rng(args.seed)
    ev = _read_evidence(model, args.evidence)
    result = {}
    if args.marginal or not args.moments:
        estimate, se = inference.marginal_probability(model, ev, args.n, rng)
        result["marginal"] = {"estimate": estimate, "std_error": se, "n_samples": args.n}
    if args.moments:
        moments = inference.conditional_moments(model, ev, args.moments, args.n, rng)
        result["moments"] = moments.to_dict()
    _emit_json(result, args.out)
    return 0


def cmd_mpe(args) -> int:
    model = IcTreeModel.load(args.model)
    result = inference.mpe(model, _read_evidence(model, args.evidence))
    _emit_json(result.to_dict(model), args.out)
    return 0


def cmd_synth(args) -> int:
    if args.kind == "robot-grab":
        data = data_io.synth_robot_grab(args.n, args.object_range, args.seed)
    elif args.kind == "two-uniforms":
        data = data_io.synth_two_uniforms(args.n, args.seed)
    else:
        data = data_io.synth_three_gaussians(args.n, args.seed)
    data_io.save_csv(data, args.out)
    return 0


def cmd_grid(args) -> int:
    model = IcTreeModel.load(args.model)
    ev = _read_evidence(model, args.evidence)
    grid = density_grid(
        model, args.x, args.y, args.resolution, args.n, np.random.default_rng(args.seed), ev, args.xlim, args.ylim
    )
    handle = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(handle)
        writer.writerow([args.x, args.y, "density"])
        writer.writerows((repr(float(a)), repr(float(b)), repr(float(c))) for a, b, c in grid)
    finally:
        if args.out:
            handle.close()
    return 0


def _limits(text: str) -> tuple[float, float]:
    lo, hi = (float(v) for v in text.split(","))
    if lo > hi:
        raise argparse.ArgumentTypeError("expected lo,hi with lo <= hi")
    return lo, hi


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ictrees", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def learning(p):
        p.add_argument("--data", required=True)
        p.add_argument("--schema")
        p.add_argument("--max-depth", type=int)
        p.add_argument("--resolution", type=int, default=16)
        p.add_argument("--ica-iters", type=int, default=1000)
        p.add_argument("--baseline", action="store_true", help="identity transforms everywhere (plain JPT)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--test-fraction", type=_fraction, default=0.1)

    p = sub.add_parser("train", help="fit a model and write it as JSON")
    learning(p)
    p.add_argument("--min-leaf", type=_fraction, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="min-leaf sweep with train/test log-likelihoods")
    learning(p)
    p.add_argument("--sweep", type=_fraction, nargs="+")
    p.add_argument("--json", help="also write the reports as JSON to this path")
    p.set_defaults(func=cmd_eval, min_leaf=None)

    def querying(p, n_default):
        p.add_argument("--model", required=True)
        p.add_argument("--evidence", help="inline JSON object or path to a JSON file")
        p.add_argument("--n", "-n", type=int, default=n_default)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out")

    p = sub.add_parser("sample", help="draw rows as CSV")
    querying(p, 100)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("infer", help="marginal probability and conditional moments")
    querying(p, 10000)
    p.add_argument("--marginal", action="store_true")
    p.add_argument("--moments", type=int, nargs="+", metavar="ORDER")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("mpe", help="most probable explanation region")
    p.add_argument("--model", required=True)
    p.add_argument("--evidence")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mpe)

    p = sub.add_parser("synth", help="write a synthetic data set")
    p.add_argument("kind", choices=["robot-grab", "two-uniforms", "three-gaussians"])
    p.add_argument("--n", "-n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--object-range", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("grid", help="density on a 2D lattice as CSV")
    querying(p, 1000)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--xlim", type=_limits)
    p.add_argument("--ylim", type=_limits)
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InconsistentEvidence, InsufficientAcceptance) as exc:
        print(f"ictrees: {exc}", file=sys.stderr)
        return EXIT_EVIDENCE
    except (IcTreeError, OSError, KeyError, ValueError) as exc:
        print(f"ictrees: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
