"""Command-line interface: ``mssal {fit,select,simulate,score,contour,pca,bench}``.

Exit codes: 0 on success, 1 when model fitting fails, 2 for usage or
input/output errors. Failures print a single ``mssal: error: ...`` line.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    SCENARIOS,
    CsvError,
    ScenarioSpec,
    generate_scenario,
    load_bench_data,
    pca_scores,
    read_csv,
    read_labels,
    write_csv,
)
from .distributions import DataMatrix, mixture_log_density
from .em import FitConfig, FitError, fit_em, random_partitions, run_em
from .metrics import adjusted_rand_index, cross_tab, rand_index
from .modelfile import ModelFileError, load_model, save_model
from .selection import bic, count_free_params, select_model

log = logging.getLogger("mssal")


class UsageError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="numeric CSV with a header row")
    p.add_argument("--no-header", action="store_true", help="the data file has no header row")
    p.add_argument("--starts", type=_positive_int, default=50, help="random starts (default 50)")
    p.add_argument("--seed", type=int, default=0, help="start s uses seed + s (default 0)")
    p.add_argument("--max-iter", type=_positive_int, default=1000)
    p.add_argument("--eps", type=_positive_float, default=1e-6, help="Aitken tolerance")


def _config(args) -> FitConfig:
    return FitConfig(n_starts=args.starts, max_iter=args.max_iter, aitken_eps=args.eps, seed=args.seed)


def _load(args) -> DataMatrix:
    return read_csv(args.data, has_header=not args.no_header)


def cmd_fit(args) -> int:
    x = _load(args)
    cfg = _config(args)
    res = fit_em(x, args.g, cfg)
    rho = count_free_params(args.g, x.p)
    b = bic(res.loglik_trace[-1], rho, x.n)
    print(f"G={args.g} loglik={res.loglik_trace[-1]:.6f} BIC={b:.6f} iterations={res.n_iter} "
          f"converged={res.converged}")
    if args.out:
        save_model(res.model, args.out, bic=b, rho=rho, n=x.n, seed=args.seed, converged=res.converged)
    if args.labels_out:
        write_csv(res.map_labels, args.labels_out)
    if not res.converged:
        print(f"mssal: error: no start converged within {args.max_iter} iterations", file=sys.stderr)
        return 1
    return 0


def cmd_select(args) -> int:
    if args.g_min > args.g_max:
        raise UsageError(f"--g-min {args.g_min} exceeds --g-max {args.g_max}")
    x = _load(args)
    report = select_model(x, args.g_min, args.g_max, _config(args))
    print(report.table())
    best = report.chosen
    print(f"chosen G={report.chosen_g} BIC={best.bic:.6f}")
    if args.out:
        rows = [
            {"G": r.g, "loglik": r.loglik, "rho": r.rho, "bic": r.bic, "converged": r.converged, "note": r.note}
            for r in report.records
        ]
        save_model(
            report.chosen_model, args.out, extra={"selection": rows},
            rho=best.rho, n=x.n, seed=args.seed, converged=best.converged,
        )
    if args.labels_out:
        write_csv(best.fit.map_labels, args.labels_out)
    return 0


def cmd_simulate(args) -> int:
    x, labels = generate_scenario(ScenarioSpec(args.scenario, args.n_per_comp, args.seed))
    write_csv(x, args.out_data)
    write_csv(labels, args.out_labels)
    print(f"scenario {args.scenario}: wrote {x.n} x {x.p} to {args.out_data}")
    return 0


def cmd_score(args) -> int:
    truth = read_labels(args.truth, args.truth_column)
    pred = read_labels(args.pred, args.pred_column)
    if truth.size != pred.size:
        raise UsageError(f"label files differ in length: {truth.size} vs {pred.size}")
    print(f"Rand {rand_index(truth, pred):.6f}")
    print(f"ARI  {adjusted_rand_index(truth, pred):.6f}")
    print(cross_tab(truth, pred).to_text())
    return 0


def contour_grid(model, xmin, xmax, ymin, ymax, grid) -> np.ndarray:
    """``(x, y, density)`` rows on a ``grid x grid`` lattice, x varying
    fastest. ``grid = 1`` evaluates the window centre only."""
    if model.p != 2:
        raise UsageError(f"contour output needs a bivariate model; this model has p={model.p}")
    if grid == 1:
        gx, gy = np.array([(xmin + xmax) / 2]), np.array([(ymin + ymax) / 2])
    else:
        gx, gy = np.linspace(xmin, xmax, grid), np.linspace(ymin, ymax, grid)
    xx, yy = np.meshgrid(gx, gy)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    dens = np.exp(mixture_log_density(pts, model))
    return np.column_stack([pts, dens])


def cmd_contour(args) -> int:
    if not (args.xmin < args.xmax and args.ymin < args.ymax):
        raise UsageError("need xmin < xmax and ymin < ymax")
    model, _ = load_model(args.model)
    out = contour_grid(model, args.xmin, args.xmax, args.ymin, args.ymax, args.grid)
    write_csv(out, args.out, header=["x", "y", "density"])
    return 0


def cmd_pca(args) -> int:
    x = _load(args)
    if min(args.components) < 1:
        raise UsageError("component indices are 1-based")
    if max(args.components) > x.p:
        raise UsageError(f"component {max(args.components)} requested but data has p={x.p}")
    write_csv(pca_scores(x, args.components, standardize=args.standardize), args.out)
    return 0


def bench_table(x: DataMatrix, dims, gs, iters, seed=0):
    """Seconds for ``iters`` fixed EM iterations (convergence check off) from
    a single random start, for every ``(p, G)`` pair. Columns are
    standardized so the timing does not hinge on measurement units."""
    rows = []
    vals = x.values
    for p in dims:
        if p > x.p:
            raise UsageError(f"--dims asks for {p} variables but data has {x.p}")
        sub = vals[:, :p]
        sub = (sub - sub.mean(axis=0)) / sub.std(axis=0)
        for g in gs:
            cfg = FitConfig(n_starts=1, max_iter=iters, seed=seed, check_convergence=False)
            init = random_partitions(sub.shape[0], g, cfg)
            t0 = time.perf_counter()
            run = run_em(sub, init, cfg, g)[0]
            secs = time.perf_counter() - t0
            done = len(run["trace"])
            status = "ok" if run["status"] == "max_iter" else run["status"]
            rows.append((p, g, done, secs, secs / max(done, 1), status))
            log.info("p=%d G=%d: %d iterations in %.3fs (%s)", p, g, done, secs, run["status"])
    return rows


def cmd_bench(args) -> int:
    x = read_csv(args.data) if args.data else load_bench_data()
    rows = bench_table(x, args.dims, args.g, args.iters, args.seed)
    per_iter = args.iters == 1
    head = ["p", "G", "iterations", "seconds_per_iteration" if per_iter else "seconds", "status"]
    lines = [",".join(head)]
    for p, g, done, secs, each, status in rows:
        lines.append(f"{p},{g},{done},{format(each if per_iter else secs, '.6g')},{status}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mssal", description="MSSAL mixture model clustering")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a G-component mixture")
    _fit_options(p)
    p.add_argument("--g", type=_positive_int, required=True)
    p.add_argument("--out", help="model JSON")
    p.add_argument("--labels-out", help="MAP labels CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="choose G by BIC")
    _fit_options(p)
    p.add_argument("--g-min", type=_positive_int, default=1)
    p.add_argument("--g-max", type=_positive_int, default=5)
    p.add_argument("--out", help="model JSON with the per-G table")
    p.add_argument("--labels-out", help="MAP labels CSV of the chosen model")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="draw a two-component scenario data set")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--n-per-comp", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-data", required=True)
    p.add_argument("--out-labels", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("score", help="compare two labelings")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth-column", default=0, type=lambda s: int(s) if s.isdigit() else s)
    p.add_argument("--pred-column", default=0, type=lambda s: int(s) if s.isdigit() else s)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("contour", help="density on a grid for plotting")
    p.add_argument("--model", required=True)
    for name in ("xmin", "xmax", "ymin", "ymax"):
        p.add_argument(f"--{name}", type=float, required=True)
    p.add_argument("--grid", type=_positive_int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("pca", help="principal component scores")
    p.add_argument("--data", required=True)
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--components", type=_int_list, default=[1, 2], help='1-based, e.g. "1,3"')
    p.add_argument("--standardize", action="store_true", help="use the correlation matrix")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("bench", help="time fixed-iteration EM over (p, G)")
    p.add_argument("--data", help="CSV (default: bundled 30-variable fixture)")
    p.add_argument("--dims", type=_int_list, default=[5, 10, 15, 20, 25])
    p.add_argument("--g", type=_int_list, default=[1, 2, 3])
    p.add_argument("--iters", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="timing CSV")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except FitError as err:
        print(f"mssal: error: {err}", file=sys.stderr)
        return 1
    except (UsageError, CsvError, ModelFileError, OSError, ValueError) as err:
        print(f"mssal: error: {str(err).splitlines()[0] if str(err) else type(err).__name__}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
