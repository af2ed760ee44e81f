"""Anisotropic proximal augmented Lagrangian method.

Saddle problems have the form ``min_x max_y f(x) + <y, A x> - g*(y)``.  The
method alternates

    x^{k+1} = argmin_x  L_phi(x, y^k) + theta(x^k - x)
    y^{k+1} = y^k + grad phi*(-grad phi(y^k - eta*))

where ``L_phi(x, y) = sup_eta L(x, eta) - phi(y - eta)`` and ``eta*`` is the
maximizer at ``(x^{k+1}, y^k)``.  For kernels with odd gradients the dual
step reduces to ``y^{k+1} = eta*``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_matrix, check_positive, check_vector
from .exceptions import NonConvergence, ResolventFailure, SpecParseError, UnsupportedGStar
from .inner_opt import Box, Simplex, SmoothProblem, minimize, project_simplex, sup_separable_concave
from .ppa import IterateTrace, PPA_COLUMNS, _norm
from .prox import ProxKernel, SeparablePower

ALM_COLUMNS = PPA_COLUMNS + ["primal_value", "dual_value", "gap", "kkt_residual"]
FEAS_TOL = 1e-9


# -- problem pieces ---------------------------------------------------------------


class SimplexIndicator:
    """Indicator of the unit simplex; its conjugate is ``max_i s_i``."""

    name = "simplex"

    def value(self, x):
        ok = np.all(x >= -FEAS_TOL) and abs(np.sum(x) - 1.0) <= FEAS_TOL
        return 0.0 if ok else np.inf

    def conj(self, s):
        return float(np.max(s))


class SquaredNorm:
    """``f(x) = theta/2 ||x||^2``."""

    name = "sq_norm"

    def __init__(self, theta=1.0):
        self.theta = check_positive(float(theta), "theta")

    def value(self, x):
        return 0.5 * self.theta * float(x @ x)

    def grad(self, x):
        return self.theta * x

    def conj(self, s):
        return float(s @ s) / (2.0 * self.theta)


class BoxPlusLinear:
    """``g*(y) = indicator_[-1,1]^m(y) + <b, y>``, i.e. ``g(z) = ||z - b||_1``."""

    name = "box_linear"

    def __init__(self, b):
        self.b = check_vector(b, name="b")

    def value(self, y):
        return float(self.b @ y) if np.all(np.abs(y) <= 1.0 + FEAS_TOL) else np.inf

    def primal(self, z):
        return float(np.sum(np.abs(z - self.b)))


class PointIndicator:
    """Equality constraint ``A x = b``: ``g`` is the indicator of ``{b}``."""

    name = "point"

    def __init__(self, b):
        self.b = check_vector(b, name="b")

    def value(self, y):
        return float(self.b @ y)

    def primal(self, z):
        return 0.0 if np.max(np.abs(z - self.b)) <= FEAS_TOL else np.inf


@dataclass
class SaddleProblem:
    """``min_x max_y f(x) + <y, A x> - g*(y)``.

    ``f`` is :class:`SimplexIndicator` or :class:`SquaredNorm`; ``gstar`` is
    :class:`SimplexIndicator`, :class:`BoxPlusLinear` or
    :class:`PointIndicator`.  ``optimum`` may hold a known ``(x*, y*)``.
    """

    A: np.ndarray
    f: object
    gstar: object
    name: str = "saddle"
    optimum: tuple = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = check_matrix(self.A, name="A")
        if isinstance(self.gstar, (BoxPlusLinear, PointIndicator)) and self.gstar.b.size != self.A.shape[0]:
            raise ValueError("length of b does not match the rows of A")
        if not isinstance(self.gstar, (SimplexIndicator, BoxPlusLinear, PointIndicator)):
            raise UnsupportedGStar(f"unsupported g* term {self.gstar!r}")

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.A.shape[0]


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def build_zero_sum_game(n=30, m=32, seed=7):
    """Matrix game with payoff entries i.i.d. uniform on [-5, 5]."""
    if n < 2 or m < 2:
        raise ValueError("n and m must be at least 2")
    A = _rng(seed).uniform(-5.0, 5.0, size=(m, n))
    return SaddleProblem(A, SimplexIndicator(), SimplexIndicator(), name="game",
                         meta={"n": n, "m": m, "seed": seed})


def build_l1_regression(n=29, m=30, theta=0.1, seed=7):
    """``min theta/2 ||x||^2 + ||A x - b||_1`` with A and b uniform on [-5, 5]."""
    theta = check_positive(float(theta), "theta")
    rng = _rng(seed)
    A = rng.uniform(-5.0, 5.0, size=(m, n))
    b = rng.uniform(-5.0, 5.0, size=m)
    return SaddleProblem(A, SquaredNorm(theta), BoxPlusLinear(b), name="l1reg",
                         meta={"n": n, "m": m, "theta": theta, "seed": seed})


def build_equality_qp(A=None, b=(1.0, 1.0)):
    """``min 1/2 ||x||^2`` subject to ``A x = b`` (default ``A = I``)."""
    b = check_vector(b, name="b")
    A = np.eye(b.size) if A is None else A
    return SaddleProblem(A, SquaredNorm(1.0), PointIndicator(b), name="eq_qp")


PAPER_SCALE = {"game": {"n": 150, "m": 160}, "l1reg": {"n": 145, "m": 150}}


def parse_problem(text, paper_scale=False, seed=None):
    """Build a saddle problem from ``"game:n=30,m=32,seed=7"``,
    ``"l1reg:n=29,m=30,theta=0.1,seed=7"`` or ``"eq_qp"``.

    ``paper_scale`` replaces the dimensions by 150 x 160 (game) or 145 x 150
    (regression); ``seed`` overrides the seed in the string.
    """
    if not isinstance(text, str) or not text.strip():
        raise SpecParseError(f"empty problem spec: {text!r}")
    head, _, rest = text.strip().partition(":")
    opts = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise SpecParseError(f"expected key=value in problem spec, got {item!r}")
        opts[key.strip()] = val.strip()
    allowed = {"game": {"n", "m", "seed"}, "l1reg": {"n", "m", "theta", "seed"}, "eq_qp": set()}
    if head not in allowed:
        raise SpecParseError(f"unknown problem kind {head!r}")
    unknown = set(opts) - allowed[head]
    if unknown:
        raise SpecParseError(f"unknown parameter(s) {sorted(unknown)} for problem {head!r}")
    if head == "eq_qp":
        return build_equality_qp()
    try:
        kw = {k: (float(v) if k == "theta" else int(v)) for k, v in opts.items()}
    except ValueError as exc:
        raise SpecParseError(f"bad number in problem spec {text!r}: {exc}") from None
    if paper_scale:
        kw.update(PAPER_SCALE[head])
    if seed is not None:
        kw["seed"] = int(seed)
    try:
        return build_zero_sum_game(**kw) if head == "game" else build_l1_regression(**kw)
    except ValueError as exc:
        raise SpecParseError(str(exc)) from None


# -- augmented Lagrangian ---------------------------------------------------------


def _f_value(problem, x):
    f = problem.f
    return 0.0 if isinstance(f, SimplexIndicator) else f.value(x)


def _f_grad(problem, x):
    f = problem.f
    return np.zeros_like(x) if isinstance(f, SimplexIndicator) else f.grad(x)


def aug_lagrangian(problem, x, y, dual_kernel, tol=1e-14):
    """Value, x-gradient and inner maximizer of ``L_phi(x, y)``.

    Returns
    -------
    value : float
    grad_x : ndarray
    eta : ndarray
        Maximizer of ``L(x, eta) - phi(y - eta)``.
    """
    x = check_vector(x, problem.n, "x")
    y = check_vector(y, problem.m, "y")
    return _aug_lagrangian(problem, x, y, dual_kernel, tol)


def _aug_lagrangian(problem, x, y, kernel, tol):
    A, gs = problem.A, problem.gstar
    Ax = A @ x
    if isinstance(gs, PointIndicator):
        w = gs.b - Ax
        eta = y - kernel._grad_star(w)
        value = _f_value(problem, x) + float((Ax - gs.b) @ y) + float(kernel._phi_star(w))
    elif isinstance(gs, BoxPlusLinear):
        eta, val = sup_separable_concave(Ax - gs.b, y, kernel, Box(-1.0, 1.0), tol)
        value = _f_value(problem, x) + val
    elif isinstance(gs, SimplexIndicator):
        eta, val = sup_separable_concave(Ax, y, kernel, Simplex(), tol)
        value = _f_value(problem, x) + val
    else:
        raise UnsupportedGStar(f"unsupported g* term {gs!r}")
    grad = _f_grad(problem, x) + A.T @ eta
    return value, grad, eta


def _aug_lagrangian_hessian(problem, x, y, kernel, eta):
    """Generalized Hessian of ``L_phi(., y)`` at ``x`` given the maximizer ``eta``.

    The derivative of ``eta`` with respect to the linear term is
    ``diag(h)`` on the coordinates not held by the constraint, with
    ``h = 1 / phi''(y - eta)``; the simplex adds a rank-one correction that
    keeps the sum fixed.
    """
    A, gs = problem.A, problem.gstar
    h = np.asarray(kernel._hess_star(kernel._grad(y - eta)), dtype=float)
    if h.ndim == 2:
        h = np.diag(h)
    if isinstance(gs, BoxPlusLinear):
        h = np.where(np.abs(eta) < 1.0, h, 0.0)
        D = np.diag(h)
    elif isinstance(gs, SimplexIndicator):
        h = np.where(eta > 0, h, 0.0)
        hs = h.sum()
        D = np.diag(h) - (np.outer(h, h) / hs if hs > 0 else 0.0)
    else:
        D = np.diag(h)
    H = A.T @ D @ A
    if isinstance(problem.f, SquaredNorm):
        H = H + problem.f.theta * np.eye(problem.n)
    return H


# -- gap and optimality -------------------------------------------------------------


def _feasible(problem, x, y):
    """Project onto the domains of f and g* when needed, with a warning."""
    if isinstance(problem.f, SimplexIndicator) and not np.isfinite(problem.f.value(x)):
        warnings.warn("x is outside the simplex; projecting", RuntimeWarning, stacklevel=3)
        x = project_simplex(x)
    gs = problem.gstar
    if isinstance(gs, SimplexIndicator) and not np.isfinite(gs.value(y)):
        warnings.warn("y is outside the simplex; projecting", RuntimeWarning, stacklevel=3)
        y = project_simplex(y)
    if isinstance(gs, BoxPlusLinear) and np.any(np.abs(y) > 1.0 + FEAS_TOL):
        warnings.warn("y is outside the box; projecting", RuntimeWarning, stacklevel=3)
        y = np.clip(y, -1.0, 1.0)
    return x, y


def primal_value(problem, x):
    """``f(x) + g(A x)``."""
    Ax = problem.A @ x
    gs = problem.gstar
    if isinstance(gs, SimplexIndicator):
        g = float(np.max(Ax))
    else:
        g = gs.primal(Ax)
    return _f_value(problem, x) + g


def dual_value(problem, y):
    """``-f*(-A^T y) - g*(y)``."""
    gs = problem.gstar
    gval = 0.0 if isinstance(gs, SimplexIndicator) else gs.value(y)
    return -problem.f.conj(-problem.A.T @ y) - gval


def primal_dual_gap(problem, x, y):
    """Primal minus dual objective; zero exactly at saddle points.

    For the matrix game this is ``max_i (A x)_i - min_j (A^T y)_j``.
    Inputs outside the domains of ``f`` or ``g*`` are projected first (with a
    ``RuntimeWarning``).  An equality-constrained problem reports ``inf`` for
    ``x`` violating ``A x = b`` by more than 1e-9.
    """
    x = check_vector(x, problem.n, "x")
    y = check_vector(y, problem.m, "y")
    x, y = _feasible(problem, x, y)
    return primal_value(problem, x) - dual_value(problem, y)


def kkt_residual(problem, x, y):
    """Natural residual of the optimality system (infinity norm)."""
    A, gs = problem.A, problem.gstar
    if isinstance(problem.f, SimplexIndicator):
        rx = x - project_simplex(x - A.T @ y)
    else:
        rx = problem.f.grad(x) + A.T @ y
    Ax = A @ x
    if isinstance(gs, SimplexIndicator):
        ry = y - project_simplex(y + Ax)
    elif isinstance(gs, BoxPlusLinear):
        ry = y - np.clip(y + Ax - gs.b, -1.0, 1.0)
    else:
        ry = Ax - gs.b
    return float(max(np.abs(rx).max(), np.abs(ry).max()))


# -- driver ------------------------------------------------------------------------


@dataclass
class AlmConfig:
    """Settings of an ALM run.

    ``primal_kernel`` is the proximal term on x and ``dual_kernel`` the
    kernel defining ``L_phi``.  The inner tolerance follows
    ``max(inner_floor, eps0 * 0.5**k)``.  The run stops after ``max_outer``
    steps or when the gap (or KKT residual) drops below its tolerance.
    """

    primal_kernel: ProxKernel = field(default_factory=lambda: SeparablePower(2))
    dual_kernel: ProxKernel = field(default_factory=lambda: SeparablePower(2))
    max_outer: int = 300
    eps0: float = 1e-3
    inner_floor: float = 1e-12
    inner_max_iters: int = 5000
    gap_tol: float = 0.0
    kkt_tol: float = 0.0

    def __post_init__(self):
        for k in (self.primal_kernel, self.dual_kernel):
            if not isinstance(k, ProxKernel):
                raise TypeError("kernels must be ProxKernel instances")
        if not self.dual_kernel.separable:
            raise ValueError("the dual kernel must be separable")
        if int(self.max_outer) != self.max_outer or self.max_outer < 1:
            raise ValueError("max_outer must be a positive integer")
        check_positive(self.eps0, "eps0")
        check_positive(self.inner_floor, "inner_floor")

    def inner_tol(self, k):
        return max(self.inner_floor, self.eps0 * 0.5 ** k)


class AlmTrace(IterateTrace):
    """Trace of an ALM run.

    Row ``k`` describes the pair ``(x^k, y^k)``: objective values, gap and
    KKT residual at that pair, plus the step diagnostics of the update that
    produced it (empty for row 0).  The step is read as a proximal point
    step on the saddle operator: ``v^{k-1} = (grad theta(x^{k-1} - x^k),
    grad phi(y^{k-1} - y^k))``.
    """

    columns = ALM_COLUMNS

    def __init__(self, meta=None):
        super().__init__(meta)
        self.y = []
        self.eta = []


def _step_row(problem, config, x_prev, y_prev, x, y, inner_iters, stat):
    th, ph = config.primal_kernel, config.dual_kernel
    vx = th._grad(x_prev - x)
    vy = ph._grad(y_prev - y)
    v = np.concatenate([vx, vy])
    dx, dy = x_prev - x, y_prev - y
    row = {
        "dual_norm_q": _norm(v, 2.0),
        "bregman_to_zero": float(th._phi_star(vx) + ph._phi_star(vy)),
        "bregman_consec": np.nan,
        "sep_old": float(dx @ vx + dy @ vy),
        "inner_iters": inner_iters,
        "eps_k": stat,
    }
    opt = problem.optimum
    if opt is not None:
        xs, ys = opt
        e = np.concatenate([x_prev - xs, y_prev - ys])
        row["dist_p"] = _norm(e, 2.0)
        row["dist_2"] = _norm(e, 2.0)
        row["sep_sol"] = float((xs - x) @ vx + (ys - y) @ vy)
    return row, v


def run_alm(problem, config, x0=None, y0=None):
    """Run the anisotropic proximal augmented Lagrangian method.

    Parameters
    ----------
    problem : SaddleProblem
    config : AlmConfig
    x0, y0 : array_like, optional
        Defaults: the simplex barycenter when the domain is a simplex, zero
        otherwise.

    Returns
    -------
    AlmTrace

    Raises
    ------
    ResolventFailure
        If an inner solve fails; carries the outer iteration and the partial
        trace.
    """
    n, m = problem.n, problem.m
    simplex_x = isinstance(problem.f, SimplexIndicator)
    if x0 is None:
        x0 = np.full(n, 1.0 / n) if simplex_x else np.zeros(n)
    if y0 is None:
        y0 = np.full(m, 1.0 / m) if isinstance(problem.gstar, SimplexIndicator) else np.zeros(m)
    x = check_vector(x0, n, "x0")
    y = check_vector(y0, m, "y0")
    th, ph = config.primal_kernel, config.dual_kernel
    trace = AlmTrace(meta={"problem": problem.name, "primal_kernel": th.spec(),
                           "dual_kernel": ph.spec(), "stop": "max_outer", **problem.meta})
    constraint = Simplex() if simplex_x else None
    v_prev = None
    row = _blank_row()
    for k in range(config.max_outer + 1):
        row["k"] = k
        _fill_objectives(problem, row, x, y)
        trace.x.append(x.copy())
        trace.y.append(y.copy())
        trace.rows.append(row)
        if (config.gap_tol > 0 and row["gap"] <= config.gap_tol) or \
                (config.kkt_tol > 0 and row["kkt_residual"] <= config.kkt_tol):
            trace.meta["stop"] = "tolerance"
            break
        if k == config.max_outer:
            break
        tol = config.inner_tol(k)
        x_c, y_c = x, y

        memo = {}

        def fg(u, x_c=x_c, y_c=y_c, memo=memo):
            val, grad, eta = _aug_lagrangian(problem, u, y_c, ph, 1e-15)
            memo["u"], memo["eta"] = u, eta
            d = x_c - u
            return val + float(th._phi(d)), grad - th._grad(d)

        def hess(u, x_c=x_c, y_c=y_c, memo=memo):
            if memo.get("u") is u:
                eta = memo["eta"]
            else:
                eta = _aug_lagrangian(problem, u, y_c, ph, 1e-15)[2]
            return (_aug_lagrangian_hessian(problem, u, y_c, ph, eta)
                    + _dense(th._hess(x_c - u)))

        use_hess = ph.dual_curvature_bounded and th.finite_hess
        try:
            rep = minimize(SmoothProblem(fg, n, constraint, hess if use_hess else None), x_c, tol=tol,
                           max_iters=config.inner_max_iters)
            if not rep.converged and rep.stationarity > 1e3 * tol:
                raise NonConvergence("primal subproblem stalled", rep.stationarity, rep.iters)
            _, _, eta = _aug_lagrangian(problem, rep.x, y_c, ph, 1e-15)
        except NonConvergence as exc:
            raise ResolventFailure(k, trace, exc) from exc
        x_new = rep.x
        y_new = y_c + ph._grad_star(-ph._grad(y_c - eta))
        trace.eta.append(eta)
        trace.z.append(np.concatenate([x_new, y_new]))
        row, v = _step_row(problem, config, x_c, y_c, x_new, y_new, rep.iters, rep.stationarity)
        trace.v.append(v)
        if v_prev is not None:
            row["bregman_consec"] = float(
                th.bregman_star(v_prev[:n], v[:n]) + ph.bregman_star(v_prev[n:], v[n:]))
        row = {**_blank_row(), **row}
        v_prev = v
        x, y = x_new, y_new
    trace.x_final = np.concatenate([x, y])
    return trace


def _dense(h):
    h = np.asarray(h, dtype=float)
    return np.diag(h) if h.ndim == 1 else h


def _blank_row():
    return {c: np.nan for c in ALM_COLUMNS} | {"inner_iters": 0}


def _fill_objectives(problem, row, x, y):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        xf, yf = _feasible(problem, x, y)
        pv, dv = primal_value(problem, xf), dual_value(problem, yf)
    row["primal_value"] = pv
    row["dual_value"] = dv
    row["gap"] = pv - dv
    row["kkt_residual"] = kkt_residual(problem, x, y)


def reference_optimum(problem, config=None, factor=10):
    """Tightened baseline: ``factor`` times longer and tighter quadratic run.

    Returns ``(x, y, primal_value)`` of the last iterate.
    """
    base = config or AlmConfig()
    cfg = AlmConfig(primal_kernel=SeparablePower(2), dual_kernel=SeparablePower(2),
                    max_outer=base.max_outer * factor, eps0=base.eps0 / factor,
                    inner_floor=max(base.inner_floor / factor, 1e-14),
                    inner_max_iters=base.inner_max_iters * factor)
    trace = run_alm(problem, cfg)
    x, y = trace.x[-1], trace.y[-1]
    return x, y, primal_value(problem, x)
