"""Command-line interface: ``fit``, ``simulate``, ``rates`` and ``kernel-info``.

Exit codes: 0 ok, 2 malformed input, 3 configuration error, 4 resource
cap exceeded, 5 numerical-quality abort (mass leakage).
"""

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .estimators import Sample, fit_kde
from .experiments import (
    MassLeakageError,
    get_density,
    mc_risk,
    oracle_ratio_study,
    rate_study,
    variance_identity_check,
    RiskReport,
    _config_echo,
)
from .kernels import ProductKernel, moment
from .selection import PAIRINGS, BandwidthGrid, GridCapExceeded, GridTooLarge, MajorantConfig, select

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_RESOURCE, EXIT_QUALITY = 0, 2, 3, 4, 5
STUDY_KINDS = ("oracle-ratio", "rate", "variance-identity", "risk")

DEFAULTS = {
    "kernel": "triangular",
    "order": 1,
    "d": 1,
    "s": 2.0,
    "q": 1.0,
    "h": None,
    "h_min": 0.02,
    "h_max": 1.0,
    "ratio": math.sqrt(2.0),
    "grid_res": 4,
    "method": "auto",
    "pairing": "consistent",
    "threads": 1,
    "allow_large_grid": False,
    "columns": None,
    "trace": None,
    "kind": "oracle-ratio",
    "density": "gaussian",
    "n": 500,
    "n_list": None,
    "reps": 20,
    "seed": 0,
    "kappa1": 1.0,
    "kappa2": 1.0,
    "s_list": None,
}


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _fmt(v):
    return format(float(v), ".17g")


def _clean(obj):
    """Make ``obj`` JSON-ready: plain floats and lists, NaN as null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not math.isfinite(v) else v
    return obj


def write_json(path, payload):
    text = json.dumps(_clean(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"
    Path(path).write_text(text)


# -- input --------------------------------------------------------------------


def read_sample(path, columns=None):
    """Parse a comma- or tab-delimited file of numeric rows."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"--input: cannot read {path}: {exc.strerror}") from None
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise CliError(EXIT_INPUT, f"--input: {path} contains no observations")
    delim = "\t" if "\t" in lines[0] else ","
    rows = list(csv.reader(io.StringIO("\n".join(lines)), delimiter=delim))

    def numeric(row):
        try:
            [float(c) for c in row]
            return True
        except ValueError:
            return False

    if not numeric(rows[0]):
        rows = rows[1:]
    if not rows:
        raise CliError(EXIT_INPUT, f"--input: {path} has a header but no observations")
    width = len(rows[0])
    data = []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise CliError(EXIT_INPUT, f"--input: row {i + 1} has {len(row)} fields, expected {width}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise CliError(EXIT_INPUT, f"--input: row {i + 1} is not numeric: {row}") from None
        if not all(math.isfinite(v) for v in vals):
            raise CliError(EXIT_INPUT, f"--input: row {i + 1} contains a non-finite value")
        data.append(vals)
    arr = np.array(data)
    if columns is not None:
        if any(c < 0 or c >= width for c in columns):
            raise CliError(EXIT_INPUT, f"--columns: selection {columns} out of range for {width} columns")
        arr = arr[:, columns]
    return arr


# -- config -------------------------------------------------------------------


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _merge(args):
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_CONFIG, f"--config: cannot load {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise CliError(EXIT_CONFIG, "--config: expected a JSON object")
        unknown = set(loaded) - set(DEFAULTS) - {"input", "output"}
        if unknown:
            raise CliError(EXIT_CONFIG, f"--config: unknown fields {sorted(unknown)}")
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key in ("config", "command", "func") or val is None:
            continue
        if key == "allow_large_grid" and val is False:
            continue
        cfg[key] = val
    return cfg


def _kernel(cfg, d):
    try:
        order = int(cfg["order"])
        if order != float(cfg["order"]) or order < 1:
            raise ValueError
    except (TypeError, ValueError):
        raise CliError(EXIT_CONFIG, f"--order: must be a positive integer, got {cfg['order']}") from None
    try:
        return ProductKernel.from_name(cfg["kernel"], order, d)
    except KeyError as exc:
        raise CliError(EXIT_CONFIG, f"--kernel: {exc.args[0]}") from None


def _check_s(cfg):
    s = float(cfg["s"])
    if not (s >= 1 and math.isfinite(s)):
        raise CliError(EXIT_CONFIG, f"--s: must be a finite number >= 1, got {cfg['s']}")
    return s


def _bandwidth_grid(cfg, d):
    h_min = _float_list(cfg["h_min"]) if isinstance(cfg["h_min"], str) else np.atleast_1d(cfg["h_min"]).tolist()
    h_max = _float_list(cfg["h_max"]) if isinstance(cfg["h_max"], str) else np.atleast_1d(cfg["h_max"]).tolist()
    h_min = h_min * d if len(h_min) == 1 else h_min
    h_max = h_max * d if len(h_max) == 1 else h_max
    if len(h_min) != d or len(h_max) != d:
        raise CliError(EXIT_CONFIG, f"--h-min/--h-max: need 1 or {d} components")
    for a, b in zip(h_min, h_max):
        if not a > 0:
            raise CliError(EXIT_CONFIG, f"--h-min: must be positive, got {a}")
        if b > 1:
            raise CliError(EXIT_CONFIG, f"--h-max: must not exceed 1, got {b}")
        if a > b:
            raise CliError(EXIT_CONFIG, f"--h-min: {a} exceeds --h-max {b}")
    ratio = float(cfg["ratio"])
    if not ratio > 1:
        raise CliError(EXIT_CONFIG, f"--ratio: must exceed 1, got {ratio}")
    try:
        return BandwidthGrid.geometric(h_min, h_max, ratio, allow_large=bool(cfg["allow_large_grid"]))
    except GridCapExceeded as exc:
        raise CliError(EXIT_RESOURCE, f"--h-min/--h-max/--ratio: {exc}; pass --allow-large-grid to override") from None


def _method(cfg, d):
    m = cfg["method"]
    if m == "auto":
        return "lattice" if d == 1 else "direct"
    if m not in ("direct", "binned", "lattice") or (m == "lattice" and d != 1):
        raise CliError(EXIT_CONFIG, f"--method: {m!r} is not available in dimension {d}")
    return m


def _check_common(cfg):
    if cfg["pairing"] not in PAIRINGS:
        raise CliError(EXIT_CONFIG, f"--pairing: choose from {PAIRINGS}")
    if int(cfg["grid_res"]) < 1:
        raise CliError(EXIT_CONFIG, f"--grid-res: must be >= 1, got {cfg['grid_res']}")
    if int(cfg["threads"]) < 1:
        raise CliError(EXIT_CONFIG, f"--threads: must be >= 1, got {cfg['threads']}")


# -- commands -----------------------------------------------------------------


def _write_estimate_csv(path, est, header):
    grid = est.grid
    nodes = grid.nodes()
    vals = est.values.ravel()
    out = io.StringIO()
    out.write(f"# kdeselect estimate schema_version={SCHEMA_VERSION}\n")
    for k, v in header.items():
        out.write(f"# {k}={v}\n")
    out.write(",".join([f"t{i + 1}" for i in range(grid.d)] + ["value"]) + "\n")
    for row, v in zip(nodes, vals):
        out.write(",".join(_fmt(c) for c in row) + "," + _fmt(v) + "\n")
    Path(path).write_text(out.getvalue())


def cmd_fit(cfg):
    if not cfg.get("input"):
        raise CliError(EXIT_CONFIG, "--input: required")
    if not cfg.get("output"):
        raise CliError(EXIT_CONFIG, "--output: required")
    _check_common(cfg)
    s = _check_s(cfg)
    columns = cfg["columns"]
    if isinstance(columns, str):
        try:
            columns = _int_list(columns)
        except ValueError:
            raise CliError(EXIT_CONFIG, f"--columns: expected comma-separated integers, got {columns!r}") from None
    data = read_sample(cfg["input"], columns)
    sample = Sample(data)
    K = _kernel(cfg, sample.d)
    method = _method(cfg, sample.d)
    grid_res = int(cfg["grid_res"])
    kernel_tag = f"{K.name} order={K.order} d={K.d}"
    if cfg["h"] is not None:
        h = _float_list(cfg["h"]) if isinstance(cfg["h"], str) else np.atleast_1d(cfg["h"]).tolist()
        if len(h) == 1:
            h = h * sample.d
        if len(h) != sample.d or not all(v > 0 for v in h):
            raise CliError(EXIT_CONFIG, f"--h: need {sample.d} positive components, got {cfg['h']}")
        est = fit_kde(sample, K, h, method=method, grid_res=grid_res)
        header = {"mode": "fixed", "h": ",".join(_fmt(v) for v in h), "kernel": kernel_tag,
                  "n": sample.n, "mass": _fmt(est.mass)}
        _write_estimate_csv(cfg["output"], est, header)
        return EXIT_OK
    H = _bandwidth_grid(cfg, sample.d)
    mcfg = MajorantConfig(s=s, n=sample.n, q=float(cfg["q"]), pairing=cfg["pairing"])
    try:
        res = select(sample, K, H, mcfg, method=method, grid_res=grid_res, threads=int(cfg["threads"]))
    except GridTooLarge as exc:
        raise CliError(EXIT_RESOURCE, f"--h-min/--grid-res: {exc}") from None
    header = {"mode": "select", "h": ",".join(_fmt(v) for v in res.h_hat), "kernel": kernel_tag,
              "n": sample.n, "s": _fmt(s), "pairing": cfg["pairing"], "mass": _fmt(res.estimate.mass)}
    _write_estimate_csv(cfg["output"], res.estimate, header)
    trace_path = cfg["trace"] or str(Path(cfg["output"]).with_suffix(".trace.json"))
    echo = {k: cfg[k] for k in ("kernel", "method", "pairing", "columns")}
    echo.update(order=int(cfg["order"]), s=s, q=float(cfg["q"]), ratio=float(cfg["ratio"]),
                grid_res=grid_res, h_min=list(H.h_min), h_max=list(H.h_max), input=str(cfg["input"]))
    payload = {"schema_version": SCHEMA_VERSION, "kind": "selection", "config": echo,
               "H": H.describe(), "result": res.to_dict()}
    write_json(trace_path, payload)
    return EXIT_OK


def cmd_simulate(cfg):
    if not cfg.get("output"):
        raise CliError(EXIT_CONFIG, "--output: required")
    _check_common(cfg)
    kind = cfg["kind"]
    if kind not in STUDY_KINDS:
        raise CliError(EXIT_CONFIG, f"--kind: choose from {STUDY_KINDS}")
    try:
        density = get_density(cfg["density"])
    except KeyError as exc:
        raise CliError(EXIT_CONFIG, f"--density: {exc.args[0]}") from None
    K = _kernel(cfg, density.d)
    s = _check_s(cfg)
    q = float(cfg["q"])
    if not q >= 1:
        raise CliError(EXIT_CONFIG, f"--q: must be >= 1, got {q}")
    reps, seed = int(cfg["reps"]), int(cfg["seed"])
    if reps < 1:
        raise CliError(EXIT_CONFIG, f"--reps: must be >= 1, got {reps}")
    threads = int(cfg["threads"])
    common = {"grid_res": int(cfg["grid_res"]), "method": _method(cfg, density.d), "threads": threads}
    try:
        if kind == "rate":
            n_list = cfg["n_list"]
            n_list = _int_list(n_list) if isinstance(n_list, str) else list(n_list or [])
            if len(n_list) < 4:
                raise CliError(EXIT_CONFIG, f"--n-list: need ≥ 4 sizes for a rate study, got {len(n_list)}")
            if any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
                raise CliError(EXIT_CONFIG, "--n-list: sizes must be positive and strictly increasing")
            report = rate_study(density, K, n_list, reps, seed, s=s, q=q, kappa1=float(cfg["kappa1"]),
                                kappa2=float(cfg["kappa2"]), ratio=float(cfg["ratio"]),
                                pairing=cfg["pairing"], **common)
        elif kind == "oracle-ratio":
            H = _bandwidth_grid(cfg, density.d)
            report = oracle_ratio_study(density, K, int(cfg["n"]), reps, seed, H=H, s=s, q=q,
                                        pairing=cfg["pairing"], **common)
        elif kind == "variance-identity":
            hs = _float_list(cfg["h"]) if cfg["h"] is not None else [0.1, 0.3, 0.6]
            if not all(0 < v for v in hs):
                raise CliError(EXIT_CONFIG, f"--h: must be positive, got {cfg['h']}")
            rows = [variance_identity_check(density, K, h, int(cfg["n"]), reps, seed,
                                            method=common["method"], threads=threads) for h in hs]
            config = _config_echo(kind, density, K, 2.0, q, [cfg["n"]], reps, seed, None,
                                  cfg["pairing"], common["grid_res"], {"h": hs})
            report = RiskReport(kind, config, rows, {
                "max_relative_error": max(r["relative_error"] for r in rows),
                "lower_bound_holds": all(r["lower_bound_holds"] for r in rows),
            })
        else:
            if cfg["h"] is not None:
                h = _float_list(cfg["h"]) if isinstance(cfg["h"], str) else np.atleast_1d(cfg["h"]).tolist()
                row = mc_risk(density, K, int(cfg["n"]), reps, seed, "fixed", h=h, s=s, q=q, **common)
                H = None
            else:
                H = _bandwidth_grid(cfg, density.d)
                row = mc_risk(density, K, int(cfg["n"]), reps, seed, "select", H=H, s=s, q=q,
                              pairing=cfg["pairing"], **common)
            config = _config_echo(kind, density, K, s, q, [cfg["n"]], reps, seed, H,
                                  cfg["pairing"], common["grid_res"])
            report = RiskReport(kind, config, [row], {"risk": row["risk"], "se": row["se"]})
    except MassLeakageError as exc:
        raise CliError(EXIT_QUALITY, str(exc)) from None
    except GridTooLarge as exc:
        raise CliError(EXIT_RESOURCE, str(exc)) from None
    payload = {"schema_version": SCHEMA_VERSION}
    payload.update(report.to_dict())
    write_json(cfg["output"], payload)
    return EXIT_OK


def kernel_info(name, order, d, s_list=()):
    """Rows ``(label, value)`` describing a catalog kernel."""
    K = ProductKernel.from_name(name, order, d)
    rows = [
        ("kernel", K.name),
        ("order", K.order),
        ("dimension", K.d),
        ("support_radius", K.radius),
        ("norm_1", K.norm(1.0)),
        ("norm_2", K.norm(2.0)),
    ]
    rows += [(f"norm_{_fmt(s)}", K.norm(s)) for s in s_list]
    rows.append(("K(0)", K.value_at_zero))
    rows += [(f"moment_{j}", moment(K.factor, j)) for j in range(K.order + 1)]
    return rows


def cmd_kernel_info(cfg, stream=None):
    stream = stream or sys.stdout
    s_list = cfg["s_list"]
    s_list = _float_list(s_list) if isinstance(s_list, str) else list(s_list or [])
    if any(not (s >= 1) for s in s_list):
        raise CliError(EXIT_CONFIG, f"--s: norm exponents must be >= 1, got {s_list}")
    d = int(cfg["d"])
    if d < 1:
        raise CliError(EXIT_CONFIG, f"--d: must be a positive integer, got {d}")
    _kernel(cfg, d)
    for label, value in kernel_info(cfg["kernel"], int(cfg["order"]), d, s_list):
        text = _fmt(value) if isinstance(value, float) else str(value)
        stream.write(f"{label:<16}{text}\n")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _add_kernel_flags(p):
    p.add_argument("--kernel", help="base kernel name (triangular, biweight)")
    p.add_argument("--order", type=int, help="kernel order l")


def _add_selection_flags(p):
    p.add_argument("--s", type=float, help="loss exponent s >= 1")
    p.add_argument("--q", type=float, help="risk exponent q >= 1")
    p.add_argument("--h-min", dest="h_min", help="smallest bandwidth (comma-separated per dimension)")
    p.add_argument("--h-max", dest="h_max", help="largest bandwidth, at most 1")
    p.add_argument("--ratio", type=float, help="geometric ratio between bandwidth nodes")
    p.add_argument("--grid-res", dest="grid_res", type=int, help="evaluation nodes per smallest bandwidth")
    p.add_argument("--method", choices=("auto", "direct", "binned", "lattice"), help="summation back-end")
    p.add_argument("--pairing", choices=PAIRINGS, help="majorant pairing convention")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("--allow-large-grid", dest="allow_large_grid", action="store_true",
                   help="permit more than 256 candidate bandwidths")
    p.add_argument("--config", help="JSON file of defaults; flags take precedence")


def build_parser():
    parser = argparse.ArgumentParser(prog="kdeselect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="estimate a density from a CSV sample")
    fit.add_argument("--input", help="CSV or TSV file, one observation per row")
    fit.add_argument("--output", help="CSV file for the estimate on its grid")
    fit.add_argument("--trace", help="JSON file for the selection trace (grid mode)")
    fit.add_argument("--columns", help="comma-separated 0-based column indices")
    fit.add_argument("--h", help="fixed bandwidth; omit to select from the grid")
    _add_kernel_flags(fit)
    _add_selection_flags(fit)
    fit.set_defaults(func=cmd_fit)

    def study_flags(p, with_kind=True):
        if with_kind:
            p.add_argument("--kind", choices=STUDY_KINDS, help="study to run")
        p.add_argument("--density", help="catalog density name")
        p.add_argument("--n", type=int, help="sample size")
        p.add_argument("--n-list", dest="n_list", help="comma-separated sample sizes (rate study)")
        p.add_argument("--reps", type=int, help="Monte Carlo replications")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--h", help="fixed bandwidth(s)")
        p.add_argument("--kappa1", type=float, help="h_min = kappa1 / n in the rate study")
        p.add_argument("--kappa2", type=float, help="h_max = (kappa2 ln n)^(-s/(2d)) in the rate study")
        p.add_argument("--output", help="JSON report path")
        _add_kernel_flags(p)
        _add_selection_flags(p)

    sim = sub.add_parser("simulate", help="run a seeded Monte Carlo study")
    study_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    rates = sub.add_parser("rates", help="alias for simulate --kind rate")
    study_flags(rates, with_kind=False)
    rates.set_defaults(func=cmd_simulate, kind="rate")

    info = sub.add_parser("kernel-info", help="print norms and moments of a kernel")
    _add_kernel_flags(info)
    info.add_argument("--d", type=int, help="dimension")
    info.add_argument("--s", dest="s_list", help="comma-separated norm exponents")
    info.set_defaults(func=cmd_kernel_info)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = _merge(args)
        return args.func(cfg)
    except CliError as exc:
        print(f"kdeselect: error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"kdeselect: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
