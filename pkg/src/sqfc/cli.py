"""Command-line front end.

Every subcommand that writes a file also writes ``<file>.manifest.json``
with the resolved configuration, input digests, library version and
timing. Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
failure.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, _backend
from ._parallel import set_default_threads
from .bandwidth import CvConfig, parse_range, select_bandwidth
from .dataset import augment_neighbors, load_csv, write_csv
from .detrend import estimate_trend, detrend_dataset
from .errors import InvalidConfig, SqfcError
from .inference import bands, parse_mode
from .kernels import FAMILIES, KernelSpec, TrendKernelSpec
from .localfit import CoefficientCurve, FitConfig, coefficients_at, default_grid, fit_curve, predict
from .loss import parse_loss
from .simulate import DgpConfig, McConfig, TrendSpec, generate, parse_coef, parse_error, run_mc

log = logging.getLogger("sqfc")


class _Formatter(logging.Formatter):
    def format(self, record):
        msg = record.getMessage().replace('"', "'")
        return f'level={record.levelname} module={record.module} message="{msg}"'


def _setup_logging(quiet):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_Formatter())
    log.handlers[:] = [handler]
    log.setLevel(logging.WARNING if quiet else logging.INFO)
    log.propagate = False


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- helpers ----------------------------------------------------------------


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class _Run:
    """Collects what a manifest needs while a subcommand runs."""

    def __init__(self, command, argv):
        self.command = command
        self.argv = list(argv)
        self.inputs = {}
        self.config = {}
        self.t0 = time.perf_counter()
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")

    def add_input(self, path):
        self.inputs[str(path)] = _sha256(path)

    def manifest(self, outputs):
        return {
            "subcommand": self.command,
            "argv": self.argv,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": [str(o) for o in outputs],
            "version": __version__,
            "backend": _backend.NAME,
            "started": self.started,
            "wall_seconds": round(time.perf_counter() - self.t0, 3),
        }

    def write_manifest(self, primary, outputs=None):
        path = Path(f"{primary}.manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest(outputs or [primary]), fh, indent=1)
        return path


def _csv_mirror(path):
    p = Path(path)
    return p.with_suffix(".csv") if p.suffix.lower() == ".json" else Path(f"{p}.csv")


def _split(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _header(path):
    with open(path, newline="", encoding="utf-8") as fh:
        try:
            return [h.strip() for h in next(csv.reader(fh))]
        except StopIteration:
            return []


def _parse_shape(text):
    try:
        parts = tuple(int(t) for t in text.lower().split("x"))
    except ValueError:
        raise InvalidConfig(f"shape must look like 30x30, got {text!r}") from None
    if len(parts) != 2 or min(parts) < 1:
        raise InvalidConfig(f"shape must look like 30x30, got {text!r}")
    return parts


def _load(args, run):
    coords = _split(args.coords)
    regimes = _split(args.u)
    if args.x is None:
        skip = set(coords) | {args.y} | set(regimes)
        covariates = [h for h in _header(args.input) if h not in skip]
    else:
        covariates = _split(args.x)
    schema = {"coords": coords, "response": args.y, "covariates": covariates, "regimes": regimes}
    shape = _parse_shape(args.shape) if args.shape else None
    ds = load_csv(args.input, schema, shape=shape, intercept=not args.no_intercept)
    run.add_input(args.input)
    run.config["data"] = dict(schema, shape=list(ds.shape), intercept=ds.intercept,
                              dropped=ds.dropped, n_effective=ds.n_effective)
    if ds.dropped:
        log.warning("dropped %d rows with missing values", ds.dropped)
    return ds


def _loss(args):
    return parse_loss(args.loss, tau=args.tau, huber_c=args.huber_c)


def _fit_config(args, h, k):
    return FitConfig(loss=_loss(args), kernel=KernelSpec(args.kernel, k), h=h)


# --- subcommands -------------------------------------------------------------


def cmd_fit(args, run):
    ds = _load(args, run)
    cfg = _fit_config(args, args.bandwidth, ds.k)
    if args.grid_points:
        grid = np.loadtxt(args.grid_points, delimiter=",", ndmin=2)
        run.add_input(args.grid_points)
    else:
        grid = default_grid(ds, args.grid)
    run.config["fit"] = cfg.to_dict()
    run.config["grid"] = {"points": args.grid_points} if args.grid_points else {"n": args.grid}
    curve = fit_curve(ds, grid, cfg, threads=args.threads)
    failed = int((~curve.ok).sum())
    if failed:
        log.warning("%d of %d grid points failed", failed, len(curve.results))
    curve.to_json(args.out)
    mirror = _csv_mirror(args.out)
    curve.to_csv(mirror)
    run.config["x_names"] = list(ds.x_names)
    run.write_manifest(args.out, [args.out, mirror])
    log.info("wrote %s (%d points, h=%g)", args.out, len(curve.results), cfg.h)
    return 0


def _read_manifest(path):
    p = Path(f"{path}.manifest.json")
    if p.exists():
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def _load_curve(path, run):
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    run.add_input(path)
    man = _read_manifest(path)
    names = man.get("config", {}).get("x_names")
    if names is None:
        first = next((r for r in records if r.get("beta") is not None), None)
        names = [f"b{j}" for j in range(len(first["beta"]))] if first else []
    return CoefficientCurve.from_records(records, names, man.get("config", {}).get("fit")), man


def cmd_curve(args, run):
    curve, _ = _load_curve(args.curve, run)
    out = {"x_names": list(curve.x_names), "points": []}
    for text in args.at or []:
        u = [float(t) for t in _split(text)]
        entry = {"u": u, "beta": coefficients_at(curve, u).tolist()}
        if args.x_value:
            entry["prediction"] = predict(curve, [float(t) for t in _split(args.x_value)], u)
        out["points"].append(entry)
    if args.csv:
        curve.to_csv(args.csv)
        run.write_manifest(args.csv)
        log.info("wrote %s", args.csv)
    json.dump(out, sys.stdout, indent=1)
    sys.stdout.write("\n")
    return 0


def cmd_bandwidth(args, run):
    ds = _load(args, run)
    if args.candidates:
        h_grid = tuple(float(t) for t in _split(args.candidates))
    elif args.range:
        h_grid = parse_range(args.range)
    else:
        raise InvalidConfig("give --range a:b:step or --candidates h1,h2,...")
    cfg = CvConfig(h_grid, leave_out=args.leave_out, loss=_loss(args),
                   kernel=KernelSpec(args.kernel, ds.k))
    run.config["cv"] = cfg.to_dict()
    report = select_bandwidth(ds, cfg, threads=args.threads)
    report.to_json(args.out)
    run.write_manifest(args.out)
    log.info("selected h=%g", report.selected)
    return 0


def cmd_detrend(args, run):
    ds = _load(args, run)
    spec = TrendKernelSpec(args.kernel, args.trend_kernel_order)
    model = estimate_trend(ds, args.g, spec)
    out = detrend_dataset(ds, model)
    write_csv(out, args.out)
    side = Path(args.out).with_suffix(".trends.json")
    model.to_json(side)
    run.config["detrend"] = {"g": model.g, "kernel": spec.family, "order": spec.order,
                             "variables": list(model.variables)}
    run.write_manifest(args.out, [args.out, side])
    log.info("wrote %s (g=%g)", args.out, model.g)
    return 0


def cmd_infer(args, run):
    ds = _load(args, run)
    curve, man = _load_curve(args.curve, run)
    fit = man.get("config", {}).get("fit", {})
    loss = parse_loss(args.loss or fit.get("loss", "quantile"),
                      tau=args.tau if args.tau is not None else fit.get("tau", 0.5),
                      huber_c=args.huber_c if args.huber_c is not None else fit.get("huber_c", 1.345))
    h = args.bandwidth if args.bandwidth is not None else fit.get("bandwidth")
    if h is None:
        raise InvalidConfig("bandwidth unknown: pass --bandwidth or keep the curve's manifest")
    kernel = KernelSpec(args.kernel or fit.get("kernel", "epanechnikov"), ds.k)
    cfg = FitConfig(loss=loss, kernel=kernel, h=float(h) * args.undersmooth)
    if args.undersmooth != 1.0:
        log.info("refitting at undersmoothed h=%g", cfg.h)
        curve = fit_curve(ds, curve.grid, cfg, threads=args.threads)
    mode = parse_mode(args.variance_mode)
    res = bands(curve, ds, cfg, mode, args.level)
    for item in res.diagnostic:
        if item["flagged"]:
            log.warning("|residual| correlates with %s (pearson %.3f, spearman %.3f)",
                        item["column"], item["pearson"], item["spearman"])
    res.to_json(args.out)
    mirror = _csv_mirror(args.out)
    res.to_csv(mirror)
    run.config["infer"] = {"fit": cfg.to_dict(), "mode": str(mode), "level": args.level,
                           "undersmooth": args.undersmooth}
    run.write_manifest(args.out, [args.out, mirror])
    log.info("wrote %s", args.out)
    return 0


def _dgp(args):
    trend = TrendSpec(args.trend_amplitude) if args.trend_amplitude else None
    return DgpConfig(
        shape=_parse_shape(args.shape),
        beta=tuple(parse_coef(b) for b in _split(args.beta)),
        ma_range=args.ma_range,
        error=parse_error(args.error),
        tau=args.tau,
        trend=trend,
        seed=args.seed,
    )


def cmd_simulate(args, run):
    dgp = _dgp(args)
    ds, _ = generate(dgp, args.rep)
    write_csv(ds, args.out)
    run.config["dgp"] = dgp.to_dict()
    run.config["rep"] = args.rep
    run.write_manifest(args.out)
    log.info("wrote %s (%dx%d)", args.out, *dgp.shape)
    return 0


def cmd_mc(args, run):
    dgp = _dgp(args)
    n = dgp.shape[0] * dgp.shape[1]
    fit = FitConfig(loss=parse_loss(args.loss, tau=args.tau, huber_c=args.huber_c),
                    kernel=KernelSpec(args.kernel, 1), h=n ** -0.2)
    cv = None
    if args.cv_range:
        cv = CvConfig(parse_range(args.cv_range), loss=fit.loss, kernel=fit.kernel)
    probes = [float(t) for t in _split(args.probes)] or None
    mc = McConfig(fit=fit, h=args.bandwidth if cv is None else None, cv=cv,
                  grid=None if args.grid is None else np.linspace(*args.grid_range, args.grid),
                  probes=probes, level=args.level, mode=parse_mode(args.variance_mode),
                  detrend=args.detrend, detrend_g=args.g)
    report = run_mc(dgp, args.reps, mc, threads=args.threads)
    report.to_json(args.report)
    run.config = report.config
    run.write_manifest(args.report)
    log.info("%d replications, %d failed, %.1fs", report.reps, report.failures, report.seconds)
    return 0


# --- demo ----------------------------------------------------------------------

DEMO_SCHEMA = {
    "coords": ["Linha", "Coluna"],
    "response": "CTC",
    "covariates": ["Ca", "Mg", "K", "Al", "C", "N"],
    "regimes": ["pHKCl"],
}
DEMO_TAUS = (
    # tau, CV candidates, variance mode
    (0.5, "0.15:0.30:0.01", "independent"),
    (0.85, "0.25:0.60:0.05", "conditional:CTCw,CTCe"),
    (0.15, "0.25:0.60:0.05", "conditional:CTCn,CTCs"),
)
DEMO_GRID = 50


def _demo_data_path():
    return resources.files("sqfc") / "data" / "soil_demo.csv"


def run_demo(out_dir, threads=None):
    """The full pipeline on the bundled lattice; returns the summary dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with resources.as_file(_demo_data_path()) as path:
        ds = load_csv(path, DEMO_SCHEMA)
    model = estimate_trend(ds)
    res = detrend_dataset(ds, model)
    write_csv(res, out_dir / "detrended.csv")
    model.to_json(out_dir / "trends.json")
    log.info("detrended with g=%.4f", model.g)
    aug = augment_neighbors(res, "CTC", ["west", "east", "north", "south"])
    log.info("%d sites with all four neighbours, %d coefficients", aug.n_effective, aug.d)
    grid = default_grid(aug, DEMO_GRID)
    summary = {"g": model.g, "n_effective": aug.n_effective, "x_names": list(aug.x_names),
               "grid": grid[:, 0].tolist(), "fits": []}
    for tau, h_range, mode_text in DEMO_TAUS:
        loss = parse_loss("quantile", tau=tau)
        cv = CvConfig(parse_range(h_range), loss=loss, kernel=KernelSpec("epanechnikov", 1))
        report = select_bandwidth(aug, cv, threads=threads)
        report.to_json(out_dir / f"cv_tau{tau}.json")
        cfg = FitConfig(loss=loss, h=report.selected)
        curve = fit_curve(aug, grid, cfg, threads=threads)
        curve.to_json(out_dir / f"curve_tau{tau}.json")
        curve.to_csv(out_dir / f"curve_tau{tau}.csv")
        b = bands(curve, aug, cfg, parse_mode(mode_text), 0.95)
        b.to_json(out_dir / f"bands_tau{tau}.json")
        b.to_csv(out_dir / f"bands_tau{tau}.csv")
        log.info("tau=%.2f: h=%.3f, %d/%d grid points fitted", tau, report.selected,
                 int(curve.ok.sum()), len(curve.results))
        summary["fits"].append({
            "tau": tau,
            "mode": mode_text,
            "h": report.selected,
            "cv_scores": [None if not np.isfinite(s) else s for s in report.scores],
            "beta": [None if r is None else r.beta_hat.tolist() for r in curve.results],
            "se": [[None if not np.isfinite(v) else float(v) for v in row] for row in b.se],
        })
    with open(out_dir / "demo_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
    return summary


def _compare(a, b, tol, path="$"):
    """First mismatch between two JSON-like trees, or None."""
    if isinstance(a, dict) and isinstance(b, dict):
        if set(a) != set(b):
            return f"{path}: keys differ"
        for k in a:
            m = _compare(a[k], b[k], tol, f"{path}.{k}")
            if m:
                return m
        return None
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            return f"{path}: lengths {len(a)} != {len(b)}"
        for i, (x, y) in enumerate(zip(a, b)):
            m = _compare(x, y, tol, f"{path}[{i}]")
            if m:
                return m
        return None
    if isinstance(a, (int, float)) and isinstance(b, (int, float)) and not isinstance(a, bool):
        if abs(a - b) <= tol * max(1.0, abs(b)):
            return None
        return f"{path}: {a!r} != {b!r}"
    return None if a == b else f"{path}: {a!r} != {b!r}"


def demo_reference():
    with resources.as_file(resources.files("sqfc") / "data" / "demo_reference.json") as p:
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)


def cmd_demo(args, run):
    summary = run_demo(args.out_dir, threads=args.threads)
    run.config["demo"] = {"out_dir": str(args.out_dir), "taus": [t for t, _, _ in DEMO_TAUS]}
    with resources.as_file(_demo_data_path()) as path:
        run.add_input(path)
    run.write_manifest(Path(args.out_dir) / "demo_summary.json")
    if args.check:
        mismatch = _compare(summary, demo_reference(), 1e-10)
        if mismatch:
            log.error("demo output differs from the reference: %s", mismatch)
            return 3
        log.info("demo output matches the reference within 1e-10")
    return 0


# --- parser ---------------------------------------------------------------------


def _data_flags(p, required=True):
    p.add_argument("--input", required=required, help="lattice CSV")
    p.add_argument("--coords", default="i1,i2", help="site coordinate columns (default i1,i2)")
    p.add_argument("--y", default="y", help="response column")
    p.add_argument("--x", default=None,
                   help="covariate columns, comma separated (default: every other column)")
    p.add_argument("--u", default="u", help="regime column(s), comma separated")
    p.add_argument("--shape", default=None, help="lattice shape such as 25x10 (default: from data)")
    p.add_argument("--no-intercept", action="store_true", help="omit the intercept column")


def _loss_flags(p, defaults=True):
    p.add_argument("--loss", choices=["quantile", "huber", "squared"],
                   default="quantile" if defaults else None)
    p.add_argument("--tau", type=float, default=0.5 if defaults else None)
    p.add_argument("--huber-c", type=float, default=1.345 if defaults else None)
    p.add_argument("--kernel", choices=list(FAMILIES), default="epanechnikov" if defaults else None)


def _dgp_flags(p):
    p.add_argument("--shape", default="30x30")
    p.add_argument("--beta", default="sine,linear",
                   help="coefficient functions, e.g. sine,linear or sine:1:0.5,constant:2")
    p.add_argument("--error", default="gaussian:1.0",
                   help="gaussian:SIGMA, student_t:DF or heteroscedastic:SIGMA")
    p.add_argument("--ma-range", type=int, default=2)
    p.add_argument("--trend-amplitude", type=float, default=0.0,
                   help="add cubic spatial trends of this amplitude (0 = none)")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: SQFC_THREADS or all cores)")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors on stderr")

    parser = _Parser(prog="sqfc", description=__doc__.split("\n")[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"sqfc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", parents=[common], help="fit coefficient curves on a grid")
    _data_flags(p)
    _loss_flags(p)
    p.add_argument("--bandwidth", type=float, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--grid", type=int, default=100, help="points per axis of the default grid")
    g.add_argument("--grid-points", default=None, help="CSV file with one regime point per line")
    p.add_argument("--out", required=True, help="curve JSON (a CSV mirror is written alongside)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("curve", parents=[common], help="evaluate or export a saved curve")
    p.add_argument("--curve", required=True)
    p.add_argument("--at", action="append", help="regime point (comma separated); repeatable")
    p.add_argument("--x-value", default=None, help="covariate vector for a prediction")
    p.add_argument("--csv", default=None, help="export the curve as CSV")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("bandwidth", parents=[common], help="cross-validated bandwidth selection")
    _data_flags(p)
    _loss_flags(p)
    p.add_argument("--range", default=None, help="candidates a:b:step")
    p.add_argument("--candidates", default=None, help="candidates h1,h2,...")
    p.add_argument("--leave-out", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bandwidth)

    p = sub.add_parser("detrend", parents=[common], help="remove kernel-estimated spatial trends")
    _data_flags(p)
    p.add_argument("--g", type=float, default=None, help="trend bandwidth (default n^(-1/6))")
    p.add_argument("--trend-kernel-order", type=int, default=2, choices=[2, 4])
    p.add_argument("--kernel", choices=list(FAMILIES), default="epanechnikov")
    p.add_argument("--out", required=True, help="detrended CSV")
    p.set_defaults(func=cmd_detrend)

    p = sub.add_parser("infer", parents=[common], help="pointwise confidence bands")
    _data_flags(p)
    _loss_flags(p, defaults=False)
    p.add_argument("--curve", required=True)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--variance-mode", default="independent",
                   help="independent or conditional:COL[,COL]")
    p.add_argument("--undersmooth", type=float, default=1.0,
                   help="refit at this multiple of the bandwidth first (0.8 recommended)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", parents=[common], help="simulate a lattice dataset")
    _dgp_flags(p)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mc", parents=[common], help="Monte Carlo study")
    _dgp_flags(p)
    _loss_flags(p)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--bandwidth", type=float, default=None, help="fixed h (default n^(-1/5))")
    p.add_argument("--cv-range", default=None, help="select h per replication over a:b:step")
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--grid-range", type=float, nargs=2, default=(0.05, 0.95))
    p.add_argument("--probes", default="", help="regime points for coverage, comma separated")
    p.add_argument("--variance-mode", default="independent")
    p.add_argument("--detrend", action="store_true")
    p.add_argument("--g", type=float, default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("demo", parents=[common], help="end-to-end analysis of bundled data")
    p.add_argument("--out-dir", default="sqfc-demo")
    p.add_argument("--check", action="store_true", help="compare with the bundled reference")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    _setup_logging(args.quiet)
    if args.threads is not None:
        if args.threads < 1:
            log.error("--threads must be at least 1")
            return 1
        set_default_threads(args.threads)
    run = _Run(args.command, argv)
    try:
        return args.func(args, run)
    except SqfcError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("file not found: %s", exc.filename)
        return 2
    except ValueError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
