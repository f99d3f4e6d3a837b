"""Command-line driver: ``btbslab {estimate, verify, export}``.

Exit codes: 0 success, 2 usage error, 3 quadrature accuracy failure,
4 residual above tolerance.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .errors import AccuracyError, DomainError
from .model import (
    Constant,
    CosineProduct,
    Family,
    FieldConfig,
    GaussianBump,
    as_multitime,
    heat_expectation,
)
from .pde_verify import (
    residual_bs_2n,
    residual_bs_nonlinear,
    residual_bs_system,
    residual_btbs_nonlinear,
    residual_btbs_system,
    residual_ks_system,
)
from .quadrature import (
    MomentField,
    QuadratureSpec,
    auto_order,
    btbs_boundary_values,
    btbs_fields,
    ks_boundary_values,
    ks_fields,
    quad_btbs_moment,
    quad_ks_moment,
)
from .sampler import (
    RngStream,
    martingale_probe,
    mc_bs_moment,
    mc_btbs_moment,
    mc_ks_moment,
    sample_sheet_grid,
)

EXIT_OK, EXIT_USAGE, EXIT_ACCURACY, EXIT_TOLERANCE = 0, 2, 3, 4

SYSTEMS = ("btbs-lin", "btbs-nonlin", "bs-lin", "bs-nonlin", "bs-2n", "ks")
DEFAULT_GRID = "t=0.5,1.0;x=0,0.3"


class UsageError(Exception):
    pass


# --- parsing helpers ------------------------------------------------------------


def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def parse_initial(spec: str, d: int):
    """``cosine:th1,...`` | ``gaussian:c1,...,cd,w`` | ``const:c``."""
    kind, _, rest = spec.partition(":")
    vals = parse_floats(rest)
    if kind == "cosine":
        if len(vals) != d:
            raise UsageError(f"cosine data needs {d} frequencies, got {len(vals)}")
        return CosineProduct(tuple(vals))
    if kind == "gaussian":
        if len(vals) != d + 1:
            raise UsageError(f"gaussian data needs {d} center coordinates and a width")
        return GaussianBump(tuple(vals[:-1]), vals[-1])
    if kind == "const":
        if len(vals) != 1:
            raise UsageError("const data needs a single value")
        return Constant(vals[0])
    raise UsageError(f"unknown initial data {spec!r}")


def _axis_values(text):
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"ranges are start:stop:count, got {text!r}")
        a, b = float(parts[0]), float(parts[1])
        try:
            k = int(parts[2])
        except ValueError:
            raise UsageError(f"range count must be an integer, got {parts[2]!r}") from None
        if k < 1:
            raise UsageError("range count must be positive")
        return list(np.linspace(a, b, k))
    return parse_floats(text)


def parse_grid(spec: str) -> dict:
    """``t=VALUES;x=VALUES`` where VALUES is ``a,b,c`` or ``start:stop:count``.

    The same values are used on every time axis and every space coordinate.
    """
    out = {}
    for part in spec.split(";"):
        if not part.strip():
            continue
        key, eq, val = part.partition("=")
        key = key.strip()
        if not eq or key not in ("t", "x"):
            raise UsageError(f"grid entries look like t=... or x=..., got {part!r}")
        out[key] = _axis_values(val)
    if "t" not in out or "x" not in out:
        raise UsageError("grid needs both t= and x= entries")
    return out


def read_config_file(path: str) -> dict:
    """Plain ``key=value`` lines; ``#`` starts a comment; keys use flag names."""
    cfg = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, val = line.partition("=")
            if not eq:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            cfg[key.strip().lstrip("-").replace("-", "_")] = val.strip()
    return cfg


# --- output ---------------------------------------------------------------------


def fmt(v) -> str:
    return format(float(v), ".17g")


def _json_value(v):
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return json.dumps(str(v))
        return fmt(v)
    if isinstance(v, complex):
        return "[" + fmt(v.real) + ", " + fmt(v.imag) + "]"
    if isinstance(v, dict):
        items = (json.dumps(str(k)) + ": " + _json_value(x) for k, x in v.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_json_value(x) for x in v) + "]"
    return json.dumps(str(v))


def dumps(obj) -> str:
    """JSON with every float written to 17 significant digits."""
    return _json_value(obj) + "\n"


def write_atomic(path: str, text: str):
    """Write via a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".btbslab-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def table_text(fmt_name: str, config: dict, columns: list, rows: list) -> str:
    if fmt_name == "json":
        return dumps({"version": __version__, "config": config, "columns": columns, "rows": rows})
    buf = io.StringIO()
    buf.write(f"# btbslab {__version__}\n")
    for k, v in config.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, int, np.floating, np.integer)) else v for v in row])
    return buf.getvalue()


# --- shared setup ---------------------------------------------------------------


def _config_echo(args) -> dict:
    # workers and the output path do not change results, so they stay out
    # of the echo and reruns stay byte-identical
    skip = {"func", "config", "out", "workers"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}


def _setup(args):
    family = Family(args.family)
    cfg = FieldConfig(args.n, args.d, family)
    f = parse_initial(args.f, args.d)
    q = QuadratureSpec(order=args.order)
    rng = RngStream(args.seed, args.stream)
    return cfg, f, q, rng


def _times(args, n):
    t = parse_floats(args.t)
    if len(t) != n:
        raise UsageError(f"--t needs {n} values, got {len(t)}")
    return t


def _point(args, d):
    x = parse_floats(args.x)
    if len(x) != d:
        raise UsageError(f"--x needs {d} values, got {len(x)}")
    return x


def _check_moment_flags(args, family):
    allowed = {Family.BTBS: (0, 2), Family.KS: (0, 1, 2), Family.BS: (0,)}[family]
    if args.p not in allowed:
        raise UsageError(f"--p must be one of {allowed} for family {family.value}")
    if args.p and args.j is None:
        raise UsageError("--j is required when --p > 0")


def _boundary_value(cfg, f, p, j, t, x):
    mt = as_multitime(t, cfg.n)
    if cfg.family is Family.BTBS:
        return complex(btbs_boundary_values(cfg, f, p, j, mt, x))
    component = {0: "u", 1: "U1", 2: "U2"}[p]
    return complex(ks_boundary_values(cfg, f, component, j, mt.zero_axes, mt, x))


def _estimate_record(args):
    cfg, f, q, rng = _setup(args)
    _check_moment_flags(args, cfg.family)
    t = _times(args, cfg.n)
    x = _point(args, cfg.d)
    j = args.j if args.p else None
    start = time.perf_counter()
    rec = {}
    if args.method == "mc":
        if cfg.family is Family.BTBS:
            est = mc_btbs_moment(cfg, f, args.p, j, t, x, args.samples, rng, args.workers)
        elif cfg.family is Family.KS:
            est = mc_ks_moment(cfg, f, args.p, j, t, x, args.samples, rng, args.workers)
        else:
            est = mc_bs_moment(cfg, f, t, x, args.samples, rng, args.workers)
        rec["value"] = complex(est.value)
        rec["stderr"] = est.stderr
        rec["n_samples"] = est.n_samples
    else:
        mt = as_multitime(t, cfg.n)
        if cfg.family is Family.BS:
            rec["value"] = complex(heat_expectation(f, mt, x))
            rec["quad_error"] = 0.0
        elif mt.is_boundary:
            rec["value"] = _boundary_value(cfg, f, args.p, j, t, x)
            rec["quad_error"] = 0.0
        else:
            fn = quad_btbs_moment if cfg.family is Family.BTBS else quad_ks_moment
            res = fn(cfg, f, args.p, j, t, x, q)
            rec["value"] = complex(res.value)
            rec["quad_error"] = res.error
            rec["order"] = res.order
    rec["seconds"] = time.perf_counter() - start
    return rec


def cmd_estimate(args) -> int:
    rec = _estimate_record(args)
    out = {"version": __version__, "config": _config_echo(args)}
    out.update(rec)
    text = dumps(out)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- verify ---------------------------------------------------------------------


def _probe_points(grid, n, d):
    ts = list(itertools.product(grid["t"], repeat=n))
    xs = list(itertools.product(grid["x"], repeat=d))
    return ts, xs


def _verify_reports(args):
    family = {"ks": Family.KS}.get(args.system, Family.BS if args.system.startswith("bs") else Family.BTBS)
    cfg = FieldConfig(args.n, args.d, family)
    f = parse_initial(args.f, args.d)
    grid = parse_grid(args.grid)
    ts, xs = _probe_points(grid, cfg.n, cfg.d)
    if min(min(t) for t in ts) <= 0:
        raise UsageError("verification probes need interior times (all t > 0)")
    q = QuadratureSpec(order=args.order)
    t_max = [max(grid["t"])] * cfg.n
    axes = range(1, cfg.n + 1)
    fields = None
    if args.system.startswith("btbs"):
        fields = btbs_fields(cfg, f, t_max, q)
    elif args.system == "ks":
        fields = ks_fields(cfg, f, t_max, q)
    reports = []
    for t in ts:
        for x in xs:
            if args.system == "btbs-lin":
                reports += [residual_btbs_system(cfg, f, j, t, x, fields, spatial=args.spatial) for j in axes]
            elif args.system == "btbs-nonlin":
                reports.append(residual_btbs_nonlinear(cfg, f, t, x, fields, spatial=args.spatial))
            elif args.system == "ks":
                reports += [residual_ks_system(cfg, f, j, t, x, fields, spatial=args.spatial) for j in axes]
            elif args.system == "bs-lin":
                reports += [residual_bs_system(cfg, f, j, t, x, route=args.route) for j in axes]
            elif args.system == "bs-nonlin":
                reports.append(residual_bs_nonlinear(cfg, f, t, x, route=args.route))
            else:
                reports.append(residual_bs_2n(cfg, f, t, x))
    return cfg, reports


def _report_row(r, n, d):
    def parts(v):
        v = complex(v)
        return [v.real, v.imag]

    return (
        list(r.t)
        + list(r.x)
        + [r.j if r.j is not None else 0]
        + parts(r.lhs)
        + parts(r.rhs)
        + [r.abs_residual, r.rel_residual]
    )


def cmd_verify(args) -> int:
    cfg, reports = _verify_reports(args)
    n, d = cfg.n, cfg.d
    columns = (
        [f"t{i}" for i in range(1, n + 1)]
        + [f"x{i}" for i in range(1, d + 1)]
        + ["j", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "abs_residual", "rel_residual"]
    )
    rows = [_report_row(r, n, d) for r in reports]
    text = table_text(args.format, _config_echo(args), columns, rows)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    worst = max(reports, key=lambda r: r.rel_residual)
    if worst.rel_residual > args.tol:
        sys.stderr.write(
            f"tolerance {args.tol:g} exceeded: rel_residual={worst.rel_residual:.3e} "
            f"at t={worst.t} x={worst.x} j={worst.j}\n"
        )
        return EXIT_TOLERANCE
    return EXIT_OK


# --- export ---------------------------------------------------------------------


def _field_grid(args):
    cfg, f, q, _ = _setup(args)
    _check_moment_flags(args, cfg.family)
    grid = parse_grid(args.grid)
    ts, xs = _probe_points(grid, cfg.n, cfg.d)
    j = args.j if args.p else None
    field = None
    if cfg.family is not Family.BS:
        order = args.order or auto_order(cfg.n, [max(grid["t"])] * cfg.n, f.frequency)
        field = MomentField(cfg, f, cfg.family, args.p, j, order)
    rows = []
    for t in ts:
        mt = as_multitime(t, cfg.n)
        for x in xs:
            if cfg.family is Family.BS:
                v = complex(heat_expectation(f, mt, x))
            elif mt.is_boundary:
                try:
                    v = _boundary_value(cfg, f, args.p, j, t, x)
                except DomainError:
                    v = complex(field(t, x))
            else:
                v = complex(field(t, x))
            rows.append(list(t) + list(x) + [v.real, v.imag, 0.0])
    columns = [f"t{i}" for i in range(1, cfg.n + 1)] + [f"x{i}" for i in range(1, cfg.d + 1)]
    return columns + ["re", "im", "stderr"], rows


def _sheet_sample(args):
    # the sheet does not depend on the initial data, so --f is not parsed
    cfg = FieldConfig(args.n, args.d, Family(args.family))
    rng = RngStream(args.seed, args.stream)
    grid = parse_grid(args.grid)
    knots = [grid["t"]] * cfg.n
    W = sample_sheet_grid(cfg, knots, rng)
    rows = []
    for idx in itertools.product(*(range(len(k)) for k in knots)):
        t = [knots[i][k] for i, k in enumerate(idx)]
        rows.append(t + [float(v) for v in W[idx]])
    columns = [f"t{i}" for i in range(1, cfg.n + 1)] + [f"w{i}" for i in range(1, cfg.d + 1)]
    return columns, rows


def _martingale_profile(args):
    cfg, f, _, rng = _setup(args)
    t = _times(args, cfg.n)
    x = _point(args, cfg.d)
    j = args.j or 1
    tj = t[j - 1]
    probes = parse_floats(args.probes) if args.probes else [tj * k / 5 for k in range(5)]

    def u(tt, X):
        return heat_expectation(f, tt, X)

    ests = martingale_probe(cfg, u, t, x, probes, args.samples, rng, j=j, workers=args.workers)
    rows = []
    for s, e in zip(probes, ests):
        v = complex(e.value)
        rows.append([s, v.real, v.imag, e.stderr])
    return ["s", "re", "im", "stderr"], rows


def cmd_export(args) -> int:
    builders = {
        "field-grid": _field_grid,
        "sheet-sample": _sheet_sample,
        "martingale-profile": _martingale_profile,
    }
    columns, rows = builders[args.what](args)
    text = table_text(args.format, _config_echo(args), columns, rows)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- argument parser --------------------------------------------------------------


def _default_seed():
    env = os.environ.get("BTBS_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"BTBS_SEED must be an integer, got {env!r}") from None


def _add_common(p, seed):
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--family", choices=[m.value for m in Family], default="btbs")
    p.add_argument("--n", type=int, default=1, help="number of time parameters")
    p.add_argument("--d", type=int, default=1, help="space dimension")
    p.add_argument("--f", default="cosine:1", help="cosine:th1,..|gaussian:c1,..,w|const:c")
    p.add_argument("--p", type=int, default=0, help="moment power: 0 -> u, 1 -> U1, 2 -> U2")
    p.add_argument("--j", type=int, help="axis for weighted moments (1-based)")
    p.add_argument("--order", type=int, help="quadrature nodes per axis")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--stream", type=int, default=0, help="RNG stream id")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output file (default: stdout)")


def build_parser(seed: int = 0) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="btbslab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"btbslab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="one value of u, U1 or U2")
    _add_common(est, seed)
    est.add_argument("--t", required=True, help="t1,...,tn")
    est.add_argument("--x", default="0", help="x1,...,xd")
    est.add_argument("--method", choices=("mc", "quad"), default="quad")
    est.add_argument("--samples", type=int, default=100_000)
    est.set_defaults(func=cmd_estimate)

    ver = sub.add_parser("verify", help="PDE residuals on a probe grid")
    _add_common(ver, seed)
    ver.add_argument("--system", choices=SYSTEMS, required=True)
    ver.add_argument("--grid", default=DEFAULT_GRID, help="t=VALUES;x=VALUES")
    ver.add_argument("--tol", type=float, default=1e-3)
    ver.add_argument("--spatial", choices=("analytic", "fd"), default="analytic")
    ver.add_argument("--route", choices=("analytic", "fd"), default="analytic")
    ver.add_argument("--format", choices=("csv", "json"), default="csv")
    ver.set_defaults(func=cmd_verify)

    exp = sub.add_parser("export", help="write field grids, sheet samples or martingale profiles")
    _add_common(exp, seed)
    exp.add_argument("--what", choices=("field-grid", "sheet-sample", "martingale-profile"), required=True)
    exp.add_argument("--format", choices=("csv", "json"), default="csv")
    exp.add_argument("--grid", default="t=0,0.5,1.0;x=-1:1:5", help="t=VALUES;x=VALUES")
    exp.add_argument("--t", default="1", help="base time for martingale-profile")
    exp.add_argument("--x", default="0", help="base point for martingale-profile")
    exp.add_argument("--probes", help="s_j values for martingale-profile")
    exp.add_argument("--samples", type=int, default=100_000)
    exp.set_defaults(func=cmd_export)
    return parser


def _apply_config_file(parser, argv):
    """Take defaults from ``--config`` so that explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    values = read_config_file(known.config)
    for sub in parser._subparsers._group_actions[0].choices.values():
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in values.items():
            if k not in actions or k in ("help", "config"):
                continue
            action = actions[k]
            defaults[k] = action.type(v) if action.type else v
            if action.choices is not None and defaults[k] not in action.choices:
                raise UsageError(f"config {k}={v} not in {list(action.choices)}")
            action.required = False
        sub.set_defaults(**defaults)
    unknown = [k for k in values if not any(k in {a.dest for a in sub._actions}
               for sub in parser._subparsers._group_actions[0].choices.values())]
    if unknown:
        raise UsageError(f"unknown config keys {unknown}")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        parser = build_parser(_default_seed())
        args = _apply_config_file(parser, argv)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"btbslab: error: {exc}\n")
        return EXIT_USAGE
    except AccuracyError as exc:
        sys.stderr.write(f"btbslab: accuracy failure: {exc} (coarse={exc.coarse!r}, fine={exc.fine!r})\n")
        return EXIT_ACCURACY
    except (ValueError, DomainError, OSError) as exc:
        sys.stderr.write(f"btbslab: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
