"""Relaxed anisotropic proximal point method and its diagnostics.

One step computes the triplet ``(z^k, v^k, x^{k+1})`` with

    v^k in T(z^k),   z^k = x^k - grad phi*(v^k),
    x^{k+1} = x^k + lam (z^k - x^k).

The trace records dual-space quantities (Bregman distances of ``phi*``)
because that is where the method is Fejer monotone.  For ``lam < 1`` the
same dual iterates are produced by a unit step on a Yosida regularization
with kernel ``lam * phi(. / lam)``, so the Bregman columns use that kernel.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive, check_vector
from .exceptions import InsufficientData, NonConvergence, ResolventFailure
from .operators import identity_operator
from .prox import ProxKernel
from .resolvents import SolverTolerances, anisotropic_resolvent

ORDER_FLOOR = 1e-13

PPA_COLUMNS = ["k", "dual_norm_q", "bregman_to_zero", "bregman_consec", "dist_p", "dist_2",
               "sep_old", "sep_sol", "inner_iters", "eps_k"]


@dataclass
class PpaConfig:
    """Settings of a PPA run.

    ``eps0`` starts the geometric inner tolerance schedule
    ``max(1e-12, eps0 * 0.5**k)``; the default asks for exact solves.
    """

    kernel: ProxKernel
    lam: float = 1.0
    eps0: float = 1e-12
    max_outer: int = 200
    dual_norm_tol: float = 1e-10
    step_tol: float = 0.0
    solver: SolverTolerances = field(default_factory=SolverTolerances)

    def __post_init__(self):
        if not isinstance(self.kernel, ProxKernel):
            raise TypeError("kernel must be a ProxKernel")
        lam = float(self.lam)
        if not 0 < lam <= 1:
            raise ValueError(f"lam must lie in (0, 1], got {self.lam!r}")
        self.lam = lam
        check_positive(self.eps0, "eps0")
        check_positive(self.dual_norm_tol, "dual_norm_tol", strict=False)
        check_positive(self.step_tol, "step_tol", strict=False)
        if int(self.max_outer) != self.max_outer or self.max_outer < 1:
            raise ValueError(f"max_outer must be a positive integer, got {self.max_outer!r}")

    def inner_tol(self, k):
        return max(1e-12, self.eps0 * 0.5 ** k)


def _dual_exponent(kernel):
    return getattr(kernel, "q", 2.0)


def _primal_exponent(kernel):
    return getattr(kernel, "p", 2.0)


def _norm(x, p):
    return float(np.sum(np.abs(x) ** p) ** (1.0 / p))


class IterateTrace:
    """Append-only record of a PPA run.

    Attributes
    ----------
    x, z, v : list of ndarray
        Iterates ``x^k``, resolvent points ``z^k`` and dual vectors ``v^k``.
    rows : list of dict
        Scalar diagnostics per iteration, keyed by :data:`PPA_COLUMNS`.
    x_final : ndarray
        The point ``x^{K+1}`` produced by the last recorded step.
    meta : dict
        Run settings (kernel spec, relaxation, distance norms, stop reason).
    """

    columns = PPA_COLUMNS

    def __init__(self, meta=None):
        self.x, self.z, self.v = [], [], []
        self.rows = []
        self.x_final = None
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path_or_buf, header_lines=()):
        """Write the trace; ``header_lines`` are emitted as ``# ...`` comments."""
        own = isinstance(path_or_buf, str)
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            for r in self.rows:
                writer.writerow([_fmt_cell(r[c]) for c in self.columns])
        finally:
            if own:
                fh.close()

    def to_csv_string(self):
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def _fmt_cell(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def run_ppa(op, config, x0, x_star=None):
    """Run the relaxed anisotropic proximal point method.

    Parameters
    ----------
    op : Operator
    config : PpaConfig
    x0 : array_like
    x_star : array_like, optional
        Known zero for distance and halfspace diagnostics; defaults to
        ``op.zero``.

    Returns
    -------
    IterateTrace

    Raises
    ------
    ResolventFailure
        When a resolvent solve fails; the partial trace is attached.
    """
    kernel, lam = config.kernel, config.lam
    x = check_vector(x0, op.dim, "x0")
    if x_star is None:
        x_star = op.zero
    x_star = None if x_star is None else check_vector(x_star, op.dim, "x_star")
    eff = kernel.epi_scale(lam) if lam != 1.0 else kernel
    p, q = _primal_exponent(kernel), _dual_exponent(kernel)
    trace = IterateTrace(meta={"kernel": kernel.spec(), "lam": lam,
                               "bregman_kernel": eff.spec(), "dist_p": p,
                               "dist_2": 2.0, "stop": "max_outer"})
    z_prev = None
    v_prev = None
    zero_dual = np.zeros(op.dim)
    for k in range(config.max_outer):
        tol = config.solver.with_tol(config.inner_tol(k))
        try:
            res = anisotropic_resolvent(op, kernel, x, tol, z0=z_prev)
        except NonConvergence as exc:
            raise ResolventFailure(k, trace, exc) from exc
        z, v = res.z, res.v
        eps_k = res.residual_norm * (1.0 + float(np.linalg.norm(z)))
        row = {
            "k": k,
            "dual_norm_q": _norm(v, q),
            "bregman_to_zero": eff.bregman_star(v, zero_dual),
            "bregman_consec": np.nan if v_prev is None else eff.bregman_star(v_prev, v),
            "dist_p": np.nan if x_star is None else _norm(x - x_star, p),
            "dist_2": np.nan if x_star is None else float(np.linalg.norm(x - x_star)),
            "sep_old": float(np.dot(x - z, v)),
            "sep_sol": np.nan if x_star is None else float(np.dot(x_star - z, v)),
            "inner_iters": res.inner_iters,
            "eps_k": eps_k,
        }
        trace.x.append(x.copy())
        trace.z.append(z)
        trace.v.append(v)
        trace.rows.append(row)
        x_next = x + lam * (z - x)
        trace.x_final = x_next
        if row["dual_norm_q"] <= config.dual_norm_tol:
            trace.meta["stop"] = "dual_norm"
            break
        if config.step_tol > 0 and np.max(np.abs(x_next - x)) <= config.step_tol:
            trace.meta["stop"] = "step"
            break
        x, z_prev, v_prev = x_next, z, v
    return trace


def fejer_report(trace, kernel):
    """Slack in the dual quasi-Fejer inequality along a trace.

    For each ``k`` returns

        D(v^k, 0) - D(v^k, v^{k+1}) + (sqrt(e_k) + sqrt(e_{k+1}))^2 - D(v^{k+1}, 0)

    with ``D`` the Bregman distance of ``kernel*`` and ``e_k`` the recorded
    error bounds.  Pass the kernel ``lam * phi(. / lam)`` for relaxed runs.
    """
    zero = np.zeros_like(trace.v[0]) if trace.v else None
    out = []
    eps = [r["eps_k"] for r in trace.rows]
    for k in range(len(trace.v) - 1):
        vk, vk1 = trace.v[k], trace.v[k + 1]
        lhs = kernel.bregman_star(vk1, zero)
        rhs = (kernel.bregman_star(vk, zero) - kernel.bregman_star(vk, vk1)
               + (np.sqrt(eps[k]) + np.sqrt(eps[k + 1])) ** 2)
        out.append(float(rhs - lhs))
    return out


def halfspace_report(trace, x_star):
    """Pairs ``(<x^k - z^k, v^k>, <x* - z^k, v^k>)`` for each iteration.

    The first is nonnegative (the old iterate is cut off by the halfspace
    ``{w : <w - z^k, v^k> <= 0}``) and the second is nonpositive up to the
    inner error (the solution lies in it).
    """
    x_star = np.asarray(x_star, dtype=float)
    return [(float(np.dot(x - z, v)), float(np.dot(x_star - z, v)))
            for x, z, v in zip(trace.x, trace.z, trace.v)]


def estimate_order(errors, tail=None, floor=ORDER_FLOOR):
    """Fit ``log e_{k+1} = order * log e_k + log rate`` by least squares.

    Only consecutive pairs with both errors above ``floor`` are used; the
    last ``tail`` of them enter the fit.

    Returns
    -------
    order, rate : float

    Raises
    ------
    InsufficientData
        Fewer than three usable pairs.
    """
    e = np.asarray(errors, dtype=float)
    if e.ndim != 1:
        raise ValueError("errors must be one-dimensional")
    ok = np.isfinite(e) & (e > floor)
    pairs = [(e[i], e[i + 1]) for i in range(e.size - 1) if ok[i] and ok[i + 1]]
    if tail is not None:
        pairs = pairs[-int(tail):]
    if len(pairs) < 3:
        raise InsufficientData(f"need at least 3 usable error pairs, got {len(pairs)}")
    a = np.log([p[0] for p in pairs])
    b = np.log([p[1] for p in pairs])
    A = np.column_stack([a, np.ones_like(a)])
    (order, log_rate), *_ = np.linalg.lstsq(A, b, rcond=None)
    return float(order), float(np.exp(log_rate))


def q_factor(errors, tail=20, floor=ORDER_FLOOR):
    """Largest ratio ``e_{k+1} / e_k`` over the last ``tail`` usable pairs."""
    e = np.asarray(errors, dtype=float)
    ratios = [e[i + 1] / e[i] for i in range(e.size - 1)
              if e[i] > floor and e[i + 1] > floor]
    if len(ratios) < 1:
        raise InsufficientData("no usable error pairs")
    return float(max(ratios[-int(tail):]))


def uniform_monotone_suite(kernel, lams=(1.0, 0.5), max_outer=500, target=1e-8,
                           x0=(3.0, -2.0, 1.0)):
    """Run the method on ``T = id`` and report convergence to its zero.

    Each entry records the final distance to 0, the iteration count, and a
    summability check: partial sums of ``<x^{k+2} - x^{k+1}, v^{k+1} - v^k>``
    stay below ``D(v^0, 0)`` plus the accumulated error terms.

    Returns
    -------
    dict with keys ``passed`` (bool) and ``runs`` (list of dict)
    """
    x0 = np.asarray(x0, dtype=float)
    op = identity_operator(x0.size)
    runs = []
    for lam in lams:
        cfg = PpaConfig(kernel=kernel, lam=lam, max_outer=max_outer, dual_norm_tol=0.0,
                        step_tol=0.0)
        trace = _run_until(op, cfg, x0, target)
        eff = kernel.epi_scale(lam) if lam != 1.0 else kernel
        xs = trace.x + [trace.x_final]
        terms = [float(np.dot(xs[k + 2] - xs[k + 1], trace.v[k + 1] - trace.v[k]))
                 for k in range(len(trace.v) - 1) if k + 2 < len(xs)]
        errs = [r["eps_k"] for r in trace.rows]
        bound = eff.bregman_star(trace.v[0], np.zeros_like(x0)) + sum(
            (np.sqrt(a) + np.sqrt(b)) ** 2 for a, b in zip(errs, errs[1:])) + 1e-10
        partial = np.cumsum(terms) if terms else np.zeros(1)
        final = float(np.linalg.norm(trace.x_final))
        runs.append({
            "lam": lam,
            "iterations": len(trace),
            "final_norm": final,
            "converged": final <= target,
            "summable": bool(np.all(partial <= bound)) and min(terms, default=0.0) >= -1e-10,
        })
    return {"kernel": kernel.spec(), "passed": all(r["converged"] and r["summable"] for r in runs),
            "runs": runs}


def _run_until(op, cfg, x0, target):
    """Run until ``||x^{k+1}|| <= target`` (used by the uniform monotone suite)."""
    kernel, lam = cfg.kernel, cfg.lam
    trace = IterateTrace(meta={"kernel": kernel.spec(), "lam": lam})
    x = x0.copy()
    for k in range(cfg.max_outer):
        res = anisotropic_resolvent(op, kernel, x, cfg.solver.with_tol(cfg.inner_tol(k)))
        trace.x.append(x.copy())
        trace.z.append(res.z)
        trace.v.append(res.v)
        trace.rows.append({"eps_k": res.residual_norm * (1.0 + float(np.linalg.norm(res.z)))})
        x = x + lam * (res.z - x)
        trace.x_final = x
        if np.linalg.norm(x) <= target:
            break
    return trace
