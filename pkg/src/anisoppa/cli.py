"""Command line entry point: ``anisoppa run|verify|rate-study``.

Experiments are described by INI-style config files::

    [experiment]
    kind = ppa_run            ; ppa_run | alm_run | rate_study | verify_identities

    [problem]
    operator = skew2          ; ppa_run and rate_study
    x0 = 100, 100             ; or "random" (uniform on [-5, 5], uses the seed)
    problem = game:n=30,m=32,seed=7   ; alm_run
    paper_scale = false

    [kernel]
    spec = sep_power:p=4      ; ppa_run
    lam = 1
    primal = sep_power:p=2    ; alm_run
    dual = exp:rho=0.01

    [solver]
    max_outer = 200
    eps0 = 1e-12
    dual_norm_tol = 1e-10
    step_tol = 0
    gap_tol = 0
    kkt_tol = 0

    [rate_study]
    kernels = iso_power:p=2; sep_power:p=3
    lams = 1
    tail = 3

Every run writes CSV traces plus ``summary.txt`` into the output directory.
The first CSV line is a timestamp comment; everything after it depends only
on the config and the seed.
"""

import argparse
import configparser
import datetime
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .alm import AlmConfig, parse_problem, run_alm
from .exceptions import InsufficientData, ResolventFailure, SpecParseError
from .operators import parse_operator
from .ppa import PpaConfig, estimate_order, q_factor, run_ppa
from .prox import parse_kernel
from .verification import SUITES, run_verify

KINDS = ("ppa_run", "alm_run", "rate_study", "verify_identities")
THREADS_ENV = "ANISO_PPA_THREADS"


class ConfigError(ValueError):
    pass


# -- config -----------------------------------------------------------------------


def _get(cp, section, key, conv=str, default=None):
    if not cp.has_option(section, key):
        if default is None:
            raise ConfigError(f"missing [{section}] {key}")
        return default
    raw = cp.get(section, key)
    try:
        if conv is bool:
            return cp.getboolean(section, key)
        return conv(raw)
    except ValueError:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from None


def _float_list(text):
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _spec_list(text):
    return [t.strip() for t in text.split(";") if t.strip()]


def load_config(path, seed=None, tol=None):
    """Parse and validate a config file into a plain dict.

    Everything is built (operators, kernels, problems) before any output is
    written, so a malformed file fails without side effects.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for sec in ("experiment", "problem", "kernel", "solver", "rate_study"):
        if not cp.has_section(sec):
            cp.add_section(sec)
    kind = _get(cp, "experiment", "kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    cfg = {"kind": kind, "path": str(path)}
    cfg["seed"] = int(seed) if seed is not None else _get(cp, "experiment", "seed", int, 0)
    cfg["out"] = _get(cp, "experiment", "out", str, "")
    base = str(Path(path).resolve().parent)
    try:
        if kind in ("ppa_run", "rate_study"):
            cfg["operator_spec"] = _get(cp, "problem", "operator")
            cfg["operator"] = parse_operator(cfg["operator_spec"], base)
            cfg["x0"] = _initial_point(_get(cp, "problem", "x0", str, "zeros"),
                                       cfg["operator"].dim, cfg["seed"])
            xs = _get(cp, "problem", "x_star", str, "")
            cfg["x_star"] = np.array(_float_list(xs)) if xs else None
            cfg["max_outer"] = _get(cp, "solver", "max_outer", int, 200)
            cfg["eps0"] = _get(cp, "solver", "eps0", float, 1e-12)
            cfg["dual_norm_tol"] = tol if tol is not None else _get(cp, "solver", "dual_norm_tol", float, 1e-10)
            cfg["step_tol"] = _get(cp, "solver", "step_tol", float, 0.0)
        if kind == "ppa_run":
            cfg["kernel_spec"] = _get(cp, "kernel", "spec")
            cfg["kernel"] = parse_kernel(cfg["kernel_spec"])
            cfg["lam"] = _get(cp, "kernel", "lam", float, 1.0)
            cfg["tail"] = _get(cp, "rate_study", "tail", int, 20)
            PpaConfig(cfg["kernel"], lam=cfg["lam"], eps0=cfg["eps0"], max_outer=cfg["max_outer"],
                      dual_norm_tol=cfg["dual_norm_tol"], step_tol=cfg["step_tol"])
        elif kind == "rate_study":
            cfg["kernel_specs"] = _spec_list(_get(cp, "rate_study", "kernels", str, " "))
            cfg["kernels"] = [parse_kernel(s) for s in cfg["kernel_specs"]]
            cfg["lams"] = _float_list(_get(cp, "rate_study", "lams", str, "1"))
            cfg["tail"] = _get(cp, "rate_study", "tail", int, 3)
        elif kind == "alm_run":
            cfg["paper_scale"] = _get(cp, "problem", "paper_scale", bool, False)
            cfg["problem_spec"] = _get(cp, "problem", "problem")
            cfg["problem"] = parse_problem(cfg["problem_spec"], cfg["paper_scale"], seed)
            cfg["alm"] = AlmConfig(
                primal_kernel=parse_kernel(_get(cp, "kernel", "primal", str, "sep_power:p=2")),
                dual_kernel=parse_kernel(_get(cp, "kernel", "dual", str, "sep_power:p=2")),
                max_outer=_get(cp, "solver", "max_outer", int, 300),
                eps0=_get(cp, "solver", "eps0", float, 1e-3),
                gap_tol=tol if tol is not None else _get(cp, "solver", "gap_tol", float, 0.0),
                kkt_tol=_get(cp, "solver", "kkt_tol", float, 0.0))
        elif kind == "verify_identities":
            cfg["threshold"] = tol
            cfg["suites"] = _spec_list(_get(cp, "experiment", "suites", str, ";".join(SUITES)))
            cfg["n_points"] = _get(cp, "experiment", "points", int, 100)
    except (SpecParseError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg


def _initial_point(text, dim, seed):
    text = text.strip()
    if text == "zeros":
        return np.zeros(dim)
    if text == "random":
        return np.random.Generator(np.random.PCG64(seed)).uniform(-5.0, 5.0, size=dim)
    x0 = np.array(_float_list(text))
    if x0.size != dim:
        raise ConfigError(f"x0 has length {x0.size}, operator dimension is {dim}")
    return x0


# -- outputs ----------------------------------------------------------------------


def _timestamp():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _header(cfg, extra=()):
    lines = [f"generated {_timestamp()}", f"kind={cfg['kind']} seed={cfg['seed']}"]
    return lines + list(extra)


class _Staging:
    """Collect output files in a temporary directory; move them on success only."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.tmp = None

    def __enter__(self):
        self.out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for p in sorted(self.tmp.rglob("*")):
                    if p.is_file():
                        dest = self.out / p.relative_to(self.tmp)
                        dest.parent.mkdir(parents=True, exist_ok=True)
                        os.replace(p, dest)
        finally:
            for p in sorted(self.tmp.rglob("*"), reverse=True):
                p.unlink() if p.is_file() else p.rmdir()
            self.tmp.rmdir()
        return False


def _write_summary(path, items):
    with open(path, "w") as fh:
        for key, val in items:
            fh.write(f"{key} = {val}\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _safe_order(errors, tail):
    try:
        return estimate_order(errors, tail=tail)
    except InsufficientData:
        return float("nan"), float("nan")


def _safe_q(errors, tail=20):
    try:
        return q_factor(errors, tail=tail)
    except InsufficientData:
        return float("nan")


# -- experiments ------------------------------------------------------------------


def _ppa_errors(trace):
    """Distance columns including the final point ``x^{K+1}``."""
    xs = trace.meta.get("x_star")
    e_p, e_2 = list(trace.column("dist_p")), list(trace.column("dist_2"))
    if xs is not None and trace.x_final is not None:
        d = trace.x_final - xs
        e_p.append(float(np.sum(np.abs(d) ** trace.meta["dist_p"]) ** (1 / trace.meta["dist_p"])))
        e_2.append(float(np.linalg.norm(d)))
    return np.array(e_p), np.array(e_2)


def _run_ppa_cell(op, kernel, lam, cfg):
    pc = PpaConfig(kernel, lam=lam, eps0=cfg["eps0"], max_outer=cfg["max_outer"],
                   dual_norm_tol=cfg["dual_norm_tol"], step_tol=cfg["step_tol"])
    x_star = cfg["x_star"] if cfg["x_star"] is not None else op.zero
    trace = run_ppa(op, pc, cfg["x0"], x_star)
    trace.meta["x_star"] = None if x_star is None else np.asarray(x_star, dtype=float)
    return trace


def cmd_run_ppa(cfg, stage):
    t0 = time.perf_counter()
    trace = _run_ppa_cell(cfg["operator"], cfg["kernel"], cfg["lam"], cfg)
    wall = time.perf_counter() - t0
    trace.to_csv(str(stage / "trace.csv"), _header(cfg, [
        f"operator={cfg['operator_spec']} kernel={cfg['kernel_spec']} lam={cfg['lam']!r}"]))
    e_p, e_2 = _ppa_errors(trace)
    order_p, rate_p = _safe_order(e_p, cfg["tail"])
    order_2, rate_2 = _safe_order(e_2, cfg["tail"])
    last = trace.rows[-1]
    _write_summary(stage / "summary.txt", [
        ("kind", "ppa_run"), ("operator", cfg["operator_spec"]), ("kernel", cfg["kernel_spec"]),
        ("lam", _fmt(cfg["lam"])), ("iterations", len(trace)), ("stop", trace.meta["stop"]),
        ("final_dual_norm", _fmt(last["dual_norm_q"])), ("final_dist_2", _fmt(float(e_2[-1]))),
        ("order_p", _fmt(order_p)), ("rate_p", _fmt(rate_p)),
        ("order_2", _fmt(order_2)), ("rate_2", _fmt(rate_2)),
        ("q_factor_2", _fmt(_safe_q(e_2))), ("wall_time_s", f"{wall:.3f}"),
    ])
    return 0


def cmd_run_alm(cfg, stage):
    t0 = time.perf_counter()
    prob = cfg["problem"]
    trace = run_alm(prob, cfg["alm"])
    wall = time.perf_counter() - t0
    a = cfg["alm"]
    trace.to_csv(str(stage / "trace.csv"), _header(cfg, [
        f"problem={cfg['problem_spec']} n={prob.n} m={prob.m} "
        f"primal={a.primal_kernel.spec()} dual={a.dual_kernel.spec()}"]))
    last = trace.rows[-1]
    _write_summary(stage / "summary.txt", [
        ("kind", "alm_run"), ("problem", cfg["problem_spec"]), ("n", prob.n), ("m", prob.m),
        ("primal_kernel", a.primal_kernel.spec()), ("dual_kernel", a.dual_kernel.spec()),
        ("iterations", len(trace) - 1), ("rows", len(trace)), ("stop", trace.meta["stop"]),
        ("final_gap", _fmt(last["gap"])), ("final_kkt_residual", _fmt(last["kkt_residual"])),
        ("final_primal_value", _fmt(last["primal_value"])), ("wall_time_s", f"{wall:.3f}"),
    ])
    return 0


RATE_COLUMNS = ["kernel", "lam", "iterations", "stop", "order_p", "rate_p", "order_2", "rate_2",
                "q_factor_2", "status"]


def _thread_cap():
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def rate_study(op, kernels, lams, cfg, tail=3):
    """Run every (kernel, lam) cell; returns ``(rows, traces)`` in grid order."""
    cells = [(k, lam) for k in kernels for lam in lams]

    def work(cell):
        kernel, lam = cell
        try:
            trace = _run_ppa_cell(op, kernel, lam, cfg)
        except ResolventFailure as exc:
            return {"kernel": kernel.spec(), "lam": lam, "iterations": exc.iteration,
                    "stop": "failure", "status": f"solve failed: {exc.cause}"}, None
        e_p, e_2 = _ppa_errors(trace)
        status = "ok"
        try:
            order_p, rate_p = estimate_order(e_p, tail=tail)
            order_2, rate_2 = estimate_order(e_2, tail=tail)
        except InsufficientData as exc:
            order_p = rate_p = order_2 = rate_2 = float("nan")
            status = f"insufficient data: {exc}"
        return {"kernel": kernel.spec(), "lam": lam, "iterations": len(trace),
                "stop": trace.meta["stop"], "order_p": order_p, "rate_p": rate_p,
                "order_2": order_2, "rate_2": rate_2, "q_factor_2": _safe_q(e_2),
                "status": status}, trace

    if not cells:
        return [], []
    workers = max(1, min(len(cells), _thread_cap()))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(work, cells))
    return [r for r, _ in results], [t for _, t in results]


def _write_rate_table(path, rows, header):
    import csv

    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c, float("nan"))) for c in RATE_COLUMNS])


def cmd_rate_study_cfg(cfg, stage):
    t0 = time.perf_counter()
    rows, traces = rate_study(cfg["operator"], cfg["kernels"], cfg["lams"], cfg, cfg["tail"])
    header = _header(cfg, [f"operator={cfg['operator_spec']} tail={cfg['tail']}"])
    _write_rate_table(stage / "rate_study.csv", rows, header)
    for i, (row, trace) in enumerate(zip(rows, traces)):
        if trace is not None:
            trace.to_csv(str(stage / f"cell_{i:03d}.csv"),
                         _header(cfg, [f"kernel={row['kernel']} lam={row['lam']!r}"]))
    _write_summary(stage / "summary.txt", [
        ("kind", "rate_study"), ("operator", cfg["operator_spec"]), ("cells", len(rows)),
        ("wall_time_s", f"{time.perf_counter() - t0:.3f}")])
    print(format_rate_table(rows))
    return 0


def format_rate_table(rows):
    lines = [f"{'kernel':<22} {'lam':>5} {'iters':>6} {'order_p':>8} {'rate_p':>10} "
             f"{'order_2':>8} {'rate_2':>10}  status"]
    for r in rows:
        lines.append(f"{r['kernel']:<22} {r['lam']:>5.3g} {r['iterations']:>6d} "
                     f"{r.get('order_p', np.nan):>8.3f} {r.get('rate_p', np.nan):>10.3e} "
                     f"{r.get('order_2', np.nan):>8.3f} {r.get('rate_2', np.nan):>10.3e}  {r['status']}")
    return "\n".join(lines)


def cmd_verify_cfg(cfg, stage, grad_star_sign=1.0):
    report = run_verify(suites=cfg["suites"], seed=cfg["seed"], n_points=cfg["n_points"],
                        threshold=cfg["threshold"], grad_star_sign=grad_star_sign)
    table = report.table()
    print(table)
    if stage is not None:
        (stage / "verify.txt").write_text(table + "\n")
    if not report.passed:
        print(f"FAILED: {', '.join(report.failed)}", file=sys.stderr)
        return 1
    return 0


# -- argument handling ------------------------------------------------------------


def _common(p):
    p.add_argument("--config", type=Path, help="experiment config file (INI format)")
    p.add_argument("--out", type=Path, help="output directory (overrides [experiment] out)")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--tol", type=float,
                   help="tolerance override: stopping tolerance for runs, pass threshold for verify")


def build_parser():
    parser = argparse.ArgumentParser(prog="anisoppa",
                                     description="Anisotropic proximal point experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by --config")
    _common(run)
    run.add_argument("--paper-scale", action="store_true",
                     help="use the full-size ALM instances (game 150x160, regression 145x150)")
    ver = sub.add_parser("verify", help="run the identity suites")
    _common(ver)
    ver.add_argument("--suites", default=",".join(SUITES),
                     help=f"comma separated subset of {','.join(SUITES)}")
    ver.add_argument("--points", type=int, help="sample points per grid cell (default 100)")
    # Fault injection for testing that the suites detect a corrupted map.
    ver.add_argument("--inject-fault", choices=["grad-star-sign"], help=argparse.SUPPRESS)
    rs = sub.add_parser("rate-study", help="estimate convergence orders over a kernel/lam grid")
    _common(rs)
    rs.add_argument("--operator", help="operator spec (default growth_linear)")
    rs.add_argument("--kernels", help="';'-separated kernel specs")
    rs.add_argument("--lams", help="comma separated relaxation parameters")
    rs.add_argument("--x0", help="starting point, comma separated")
    rs.add_argument("--tail", type=int, help="pairs used by the order fit")
    rs.add_argument("--max-outer", type=int, help="outer iteration cap")
    return parser


def _rate_cfg_from_args(args):
    spec = args.operator or "growth_linear"
    op = parse_operator(spec)
    cfg = {"kind": "rate_study", "seed": args.seed or 0, "operator_spec": spec, "operator": op,
           "x0": _initial_point(args.x0 or "zeros", op.dim, args.seed or 0), "x_star": None,
           "max_outer": args.max_outer or 500, "eps0": 1e-12,
           "dual_norm_tol": args.tol if args.tol is not None else 1e-10, "step_tol": 0.0,
           "out": ""}
    cfg["kernel_specs"] = _spec_list(args.kernels or "")
    cfg["kernels"] = [parse_kernel(s) for s in cfg["kernel_specs"]]
    cfg["lams"] = _float_list(args.lams or "1")
    cfg["tail"] = args.tail or 3
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rate-study" and args.config is None:
            cfg = _rate_cfg_from_args(args)
        elif args.command == "verify" and args.config is None:
            cfg = {"kind": "verify_identities", "seed": args.seed or 0, "threshold": args.tol,
                   "suites": [s.strip() for s in args.suites.split(",") if s.strip()],
                   "n_points": args.points or 100, "out": ""}
            bad = set(cfg["suites"]) - set(SUITES)
            if bad:
                raise ConfigError(f"unknown suites {sorted(bad)}")
        else:
            if args.config is None:
                raise ConfigError(f"{args.command} needs --config")
            cfg = load_config(args.config, seed=args.seed, tol=args.tol)
            if args.command == "run" and args.paper_scale and cfg["kind"] == "alm_run":
                cfg["problem"] = parse_problem(cfg["problem_spec"], True, args.seed)
            expected = {"verify": ("verify_identities",), "rate-study": ("rate_study",)}
            if args.command in expected and cfg["kind"] not in expected[args.command]:
                raise ConfigError(f"config kind {cfg['kind']!r} does not match '{args.command}'")
            if args.command == "verify" and args.points is not None:
                cfg["n_points"] = args.points
    except (ConfigError, SpecParseError, ValueError, TypeError) as exc:
        print(f"anisoppa: configuration error: {exc}", file=sys.stderr)
        return 2

    out = args.out or (Path(cfg["out"]) if cfg.get("out") else None)
    if out is None and cfg["kind"] != "verify_identities":
        out = Path("results")
    sign = -1.0 if getattr(args, "inject_fault", None) == "grad-star-sign" else 1.0
    try:
        if out is None:
            return cmd_verify_cfg(cfg, None, sign)
        with _Staging(out) as stage:
            if cfg["kind"] == "ppa_run":
                code = cmd_run_ppa(cfg, stage)
            elif cfg["kind"] == "alm_run":
                code = cmd_run_alm(cfg, stage)
            elif cfg["kind"] == "rate_study":
                code = cmd_rate_study_cfg(cfg, stage)
            else:
                code = cmd_verify_cfg(cfg, stage, sign)
        return code
    except ResolventFailure as exc:
        print(f"anisoppa: solve failed: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"anisoppa: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
