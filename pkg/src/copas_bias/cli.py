"""Command-line interface: ``copas-bias {test,sensitivity,simulate,funnel}``.

Exit codes: 0 success, 2 data/usage error, 3 numerical failure. Every error
is reported on stderr as one line starting with ``copas-bias: error:``.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .comparators import copas_naive_test, egger_test, trim_and_fill
from .dataio import DataError, funnel_svg, read_csv
from .errors import CopasBiasError, DomainError
from .estimation import fit_null, fit_sensitivity
from .scoretest import GridSpec, bootstrap_pvalue, default_grid
from .sim import TESTS, SimConfig, run_power_study

EXIT_OK, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3
PROG = "copas-bias"

_COMPARATORS = {
    "egger": egger_test,
    "tf": trim_and_fill,
    "naive": copas_naive_test,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _range(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2 or vals[1] < vals[0]:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi' with lo <= hi, got {text!r}")
    return vals[0], vals[1]


def _threads(arg: int | None) -> int:
    if arg:
        return arg
    env = os.environ.get("COPAS_BIAS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"COPAS_BIAS_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text, encoding="utf-8")


# -- commands ---------------------------------------------------------------

def cmd_test(args) -> int:
    data = read_csv(args.input)
    if args.gamma0_range or args.gamma1_range:
        base = default_grid(data, n_points_used=1)
        grid = GridSpec(args.gamma0_range or base.gamma0_range,
                        args.gamma1_range or base.gamma1_range,
                        args.n_gamma0, args.n_gamma1,
                        min(args.grid_points, args.n_gamma0 * args.n_gamma1), args.seed)
    else:
        grid = default_grid(data, n_points_used=args.grid_points, seed=args.seed,
                            n_gamma0=args.n_gamma0, n_gamma1=args.n_gamma1)
    res = bootstrap_pvalue(data, grid, args.b_boot, seed=args.seed,
                           threads=_threads(args.threads), information=args.information)
    comps = {}
    for name in args.comparators:
        r = _COMPARATORS[name](data)
        comps[r.method] = {"statistic": r.statistic, "p_value": r.p_value, "extras": r.extras}
    payload = {
        "schema": 1,
        "command": "test",
        "n": data.n,
        "null_fit": asdict(res.null_fit),
        "grid": {**asdict(grid), "points": res.points},
        "information": args.information,
        "t_stat": res.t_stat,
        "z_values": res.z_values,
        "argmax_point": res.argmax_point,
        "p_value": res.p_value,
        "b_boot": res.b_boot,
        "n_dropped": res.n_dropped,
        "skipped_points": list(res.skipped),
        "seed": args.seed,
        "comparators": comps,
    }
    _emit(payload, args.out)
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    data = read_csv(args.input)
    if args.sweep:
        g0s = args.gamma0 or list(np.linspace(-2.0, 2.0, 5))
        g1s = args.gamma1 or list(np.linspace(0.0, 2.0, 5))
    else:
        if not args.gamma0 or not args.gamma1:
            raise UsageError("give --gamma0 and --gamma1, or --sweep")
        g0s, g1s = args.gamma0, args.gamma1
    null = fit_null(data)
    rows = [asdict(fit_sensitivity(data, float(g0), float(g1), null)) for g0 in g0s for g1 in g1s]
    _emit({"schema": 1, "command": "sensitivity", "n": data.n, "null_fit": asdict(null),
           "fits": rows}, args.out)
    return EXIT_OK


def _sim_config(args) -> SimConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
        known = {f.name for f in fields(SimConfig)}
        extra = set(base) - known
        if extra:
            raise DataError(f"unknown config keys {sorted(extra)}")
    for f in fields(SimConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            base[f.name] = val
    try:
        return SimConfig(**base)
    except (TypeError, ValueError) as exc:
        raise DataError(str(exc)) from None


def cmd_simulate(args) -> int:
    config = _sim_config(args)
    report = run_power_study(config, args.replicates, tests=args.tests, alpha_levels=args.alpha,
                             b_boot=args.b_boot, n_points=args.grid_points,
                             threads=_threads(args.threads))
    text = report.to_json(include_timing=args.timing) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_funnel(args) -> int:
    data = read_csv(args.input)
    center = fit_null(data).mu_hat
    svg, rows = funnel_svg(data, args.contours, center=center)
    Path(args.out).write_text(svg, encoding="utf-8")
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("study_id,y,s,x_px,y_px\n")
        for sid, y, s, cx, cy in rows:
            fh.write(f"{sid},{y!r},{s!r},{cx!r},{cy!r}\n")
    sys.stdout.write(json.dumps({"svg": args.out, "csv": csv_path, "n": data.n}) + "\n")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog=PROG, description="Sup-score test for publication bias under the Copas selection model.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="run the sup-score test and comparators on a CSV file")
    t.add_argument("input")
    t.add_argument("--grid-points", type=int, default=9)
    t.add_argument("--n-gamma0", type=int, default=50)
    t.add_argument("--n-gamma1", type=int, default=50)
    t.add_argument("--b-boot", type=int, default=200)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--gamma0-range", type=_range)
    t.add_argument("--gamma1-range", type=_range)
    t.add_argument("--comparators", type=lambda v: [c for c in v.split(",") if c],
                   default=list(_COMPARATORS))
    t.add_argument("--information", choices=("expected", "observed"), default="expected")
    t.add_argument("--threads", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("sensitivity", help="Copas fits at fixed selection parameters")
    s.add_argument("input")
    s.add_argument("--gamma0", type=_floats)
    s.add_argument("--gamma1", type=_floats)
    s.add_argument("--sweep", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sensitivity)

    m = sub.add_parser("simulate", help="Monte-Carlo rejection rates")
    m.add_argument("--config", help="JSON file with SimConfig fields; flags override it")
    m.add_argument("--n", type=int)
    m.add_argument("--mu", type=float)
    m.add_argument("--tau2", type=float)
    m.add_argument("--rho", type=float)
    m.add_argument("--gamma0", type=float)
    m.add_argument("--gamma1", type=float)
    m.add_argument("--model", choices=("copas", "alt_inv_s2", "alt_zscore"))
    m.add_argument("--c", type=float)
    m.add_argument("--s-loc", dest="s_loc", type=float)
    m.add_argument("--s-scale", dest="s_scale", type=float)
    m.add_argument("--s-scale-kind", dest="s_scale_kind", choices=("sd", "variance"))
    m.add_argument("--seed", type=int)
    m.add_argument("--replicates", type=int, default=100)
    m.add_argument("--tests", type=lambda v: [c for c in v.split(",") if c], default=list(TESTS))
    m.add_argument("--alpha", type=_floats, default=[0.05, 0.10])
    m.add_argument("--b-boot", type=int, default=200)
    m.add_argument("--grid-points", type=int, default=9)
    m.add_argument("--threads", type=int)
    m.add_argument("--timing", action="store_true", help="add mean runtime under 'metadata'")
    m.add_argument("--out")
    m.add_argument("--csv")
    m.set_defaults(func=cmd_simulate)

    f = sub.add_parser("funnel", help="contour-enhanced funnel plot as SVG + CSV")
    f.add_argument("input")
    f.add_argument("--out", required=True)
    f.add_argument("--csv")
    f.add_argument("--contours", type=_floats, default=[0.90, 0.95, 0.99])
    f.set_defaults(func=cmd_funnel)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    message = " ".join(str(message).split())
    sys.stderr.write(f"{PROG}: error: {kind}: {message}\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "comparators", None):
            bad = set(args.comparators) - set(_COMPARATORS)
            if bad:
                raise UsageError(f"unknown comparators {sorted(bad)}; choose from {sorted(_COMPARATORS)}")
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_DATA)
    except (DataError, DomainError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except (CopasBiasError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except ValueError as exc:
        return _fail("data", exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
