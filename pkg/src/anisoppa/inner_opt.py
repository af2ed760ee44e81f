"""Smooth inner minimization and the projection oracles it relies on."""

from collections import deque
from dataclasses import dataclass

import numpy as np

from ._validation import check_vector
from .exceptions import NonConvergence


@dataclass(frozen=True)
class Box:
    lo: float = -1.0
    hi: float = 1.0

    def project(self, y):
        return project_box(y, self.lo, self.hi)


@dataclass(frozen=True)
class Simplex:
    def project(self, y):
        return project_simplex(y)


@dataclass
class SmoothProblem:
    """Objective with a combined value/gradient oracle.

    Parameters
    ----------
    fun_grad : callable
        ``fun_grad(x) -> (value, gradient)``.
    dim : int
    constraint : Box, Simplex or None
    hess : callable, optional
        ``hess(x)`` returning a (generalized) Hessian matrix.  When given,
        Newton steps replace the first-order methods (unconstrained or on the
        simplex).
    """

    fun_grad: object
    dim: int
    constraint: object = None
    hess: object = None


@dataclass
class InnerSolveReport:
    x: np.ndarray
    fun: float
    stationarity: float  # gradient norm, or projected-gradient norm
    iters: int
    f_evals: int
    converged: bool


def project_simplex(y):
    """Euclidean projection onto the unit simplex (sort and threshold)."""
    y = check_vector(y, name="y")
    # The projection commutes with shifts along the ones vector; centring on
    # the largest entry keeps the threshold meaningful for huge inputs.
    y = y - y.max()
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, y.size + 1)
    hits = np.nonzero(u - css / idx > 0)[0]
    rho = hits[-1] if hits.size else 0
    theta = css[rho] / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


def project_box(y, lo, hi):
    return np.clip(check_vector(y, name="y"), lo, hi)


def _noise(f):
    # Objective changes below a few ulps are rounding, not ascent.
    return 8.0 * np.finfo(float).eps * abs(f)


def _lbfgs_direction(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, yv in zip(reversed(s_hist), reversed(y_hist)):
        r = 1.0 / (yv @ s)
        a = r * (s @ q)
        alphas.append((a, r))
        q -= a * yv
    if s_hist:
        s, yv = s_hist[-1], y_hist[-1]
        q *= (s @ yv) / (yv @ yv)
    for (a, r), s, yv in zip(reversed(alphas), s_hist, y_hist):
        b = r * (yv @ q)
        q += (a - b) * s
    return -q


def _minimize_lbfgs(fg, x, tol, max_iters, memory=10, c1=1e-4):
    f, g = fg(x)
    evals = 1
    s_hist, y_hist = deque(maxlen=memory), deque(maxlen=memory)
    it = 0
    gnorm = np.abs(g).max()
    while gnorm > tol and it < max_iters:
        it += 1
        d = _lbfgs_direction(g, s_hist, y_hist)
        slope = g @ d
        if not slope < 0:
            # Curvature information went bad: restart from steepest descent.
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = -(g @ g)
        t = 1.0 if s_hist else min(1.0, 1.0 / max(gnorm, 1e-300))
        while True:
            x_new = x + t * d
            f_new, g_new = fg(x_new)
            evals += 1
            if f_new <= f + c1 * t * slope + _noise(f):
                break
            t *= 0.5
            if t < 1e-20:
                return x, f, gnorm, it, evals, False
        s, yv = x_new - x, g_new - g
        if s @ yv > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            s_hist.append(s)
            y_hist.append(yv)
        x, f, g = x_new, f_new, g_new
        gnorm = np.abs(g).max()
    return x, f, gnorm, it, evals, gnorm <= tol


def _minimize_projected_bb(fg, proj, x, tol, max_iters, window=5, c1=1e-4):
    x = proj(x)
    f, g = fg(x)
    evals = 1
    recent = deque([f], maxlen=window)
    alpha = 1.0 / max(np.abs(g).max(), 1.0)
    it = 0

    def stationarity(x, g):
        return np.abs(proj(x - g) - x).max()

    pg = stationarity(x, g)
    while pg > tol and it < max_iters:
        it += 1
        d = proj(x - alpha * g) - x
        slope = g @ d
        f_ref = max(recent)
        t = 1.0
        while True:
            x_new = x + t * d
            f_new, g_new = fg(x_new)
            evals += 1
            if f_new <= f_ref + c1 * t * slope + _noise(f_ref):
                break
            t *= 0.5
            if t < 1e-20:
                return x, f, pg, it, evals, False
        s, yv = x_new - x, g_new - g
        sy = s @ yv
        alpha = (s @ s) / sy if sy > 0 else 1e10
        alpha = min(max(alpha, 1e-12), 1e12)
        x, f, g = x_new, f_new, g_new
        recent.append(f)
        pg = stationarity(x, g)
    return x, f, pg, it, evals, pg <= tol


def _minimize_newton(fg, hess, x, tol, max_iters, c1=1e-4):
    """Regularized (semismooth) Newton with Armijo backtracking.

    The Hessian is shifted by the current gradient norm; when the resulting
    direction is not a descent direction the steepest descent one is used.
    """
    f, g = fg(x)
    evals = 1
    it = 0
    gnorm = np.abs(g).max()
    while gnorm > tol and it < max_iters:
        it += 1
        H = hess(x)
        d = None
        if np.all(np.isfinite(H)):
            try:
                d = np.linalg.solve(H + gnorm * np.eye(x.size), -g)
            except np.linalg.LinAlgError:
                d = None
        if d is None or not np.all(np.isfinite(d)) or not g @ d < 0:
            d = -g / max(gnorm, 1.0)
        slope = g @ d
        t = 1.0
        while True:
            x_new = x + t * d
            f_new, g_new = fg(x_new)
            evals += 1
            if f_new <= f + c1 * t * slope + _noise(f):
                break
            t *= 0.5
            if t < 1e-20:
                return x, f, gnorm, it, evals, False
        x, f, g = x_new, f_new, g_new
        gnorm = np.abs(g).max()
    return x, f, gnorm, it, evals, gnorm <= tol


def _minimize_projected_newton(fg, hess, x, tol, max_iters, c1=1e-4):
    """Face-restricted Newton steps on the unit simplex.

    Coordinates that are (nearly) zero with a gradient pushing outwards are
    moved to zero; the remaining ones take a Newton step within the affine
    hull of the simplex.  The step is projected back and accepted under an
    Armijo test; otherwise one projected gradient step is taken instead.
    """
    x = project_simplex(x)
    f, g = fg(x)
    evals = 1
    alpha = 1.0 / max(np.abs(g).max(), 1.0)
    it = 0
    pg = np.abs(project_simplex(x - g) - x).max()
    while pg > tol and it < max_iters:
        it += 1
        accepted = False
        H = hess(x)
        if np.all(np.isfinite(H)):
            eps = min(1e-3, pg)
            top = np.argmax(x)
            mu = g[top]
            bound = (x <= eps) & (g > mu)
            free = ~bound
            d = np.zeros_like(x)
            d[bound] = -x[bound]
            nf = int(free.sum())
            K = np.zeros((nf + 1, nf + 1))
            # Regularize by the stationarity measure so flat directions
            # (kernels with vanishing curvature) cannot produce huge steps.
            K[:nf, :nf] = H[np.ix_(free, free)] + pg * np.eye(nf)
            K[:nf, nf] = 1.0
            K[nf, :nf] = 1.0
            rhs = np.concatenate([-g[free] - H[np.ix_(free, bound)] @ d[bound], [x[bound].sum()]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            d[free] = sol[:nf]
            if np.all(np.isfinite(d)):
                t = 1.0
                while t >= 1e-6:
                    x_new = project_simplex(x + t * d)
                    slope = g @ (x_new - x)
                    if slope >= 0:
                        break
                    f_new, g_new = fg(x_new)
                    evals += 1
                    if f_new <= f + c1 * slope + _noise(f):
                        accepted = True
                        break
                    t *= 0.5
        if not accepted:
            d = project_simplex(x - alpha * g) - x
            slope = g @ d
            t = 1.0
            while True:
                x_new = x + t * d
                f_new, g_new = fg(x_new)
                evals += 1
                if f_new <= f + c1 * t * slope + _noise(f):
                    break
                t *= 0.5
                if t < 1e-20:
                    return x, f, pg, it, evals, False
        s, yv = x_new - x, g_new - g
        sy = s @ yv
        alpha = min(max((s @ s) / sy if sy > 0 else 1e10, 1e-12), 1e12)
        x, f, g = x_new, f_new, g_new
        pg = np.abs(project_simplex(x - g) - x).max()
    return x, f, pg, it, evals, pg <= tol


def minimize(problem, x0, tol=1e-10, max_iters=1000, raise_on_failure=False):
    """Minimize a smooth objective, optionally over a box or the simplex.

    Unconstrained problems use limited-memory BFGS (memory 10) with Armijo
    backtracking; constrained problems use projected gradient steps with a
    Barzilai-Borwein step length and a nonmonotone line search over the last
    five values.  When the problem carries a Hessian oracle, regularized
    Newton steps are used instead (face-restricted on the simplex), with the
    first-order step as fallback.  The stopping test is
    ``||grad||_inf <= tol`` or ``||P(x - grad) - x||_inf <= tol``.

    Returns
    -------
    InnerSolveReport
        With ``converged=False`` if the budget ran out; the best point found
        is returned.  Pass ``raise_on_failure=True`` to raise instead.
    """
    x0 = check_vector(x0, problem.dim, "x0")
    if problem.constraint is None and problem.hess is not None:
        out = _minimize_newton(problem.fun_grad, problem.hess, x0, tol, max_iters)
    elif problem.constraint is None:
        out = _minimize_lbfgs(problem.fun_grad, x0, tol, max_iters)
    elif isinstance(problem.constraint, Simplex) and problem.hess is not None:
        out = _minimize_projected_newton(problem.fun_grad, problem.hess, x0, tol, max_iters)
    else:
        out = _minimize_projected_bb(problem.fun_grad, problem.constraint.project, x0, tol, max_iters)
    x, f, stat, it, evals, ok = out
    if not ok and raise_on_failure:
        raise NonConvergence("inner minimization stopped early", stat, it)
    return InnerSolveReport(x=x, fun=float(f), stationarity=float(stat), iters=it,
                            f_evals=evals, converged=bool(ok))


def _simplex_multiplier(c, y, kernel, tol, max_iters=200):
    """Find ``mu`` with ``sum max(0, y - grad phi*(mu - c)) = 1``.

    Safeguarded Newton on the nonincreasing piecewise-smooth function
    ``h(mu) = sum eta(mu) - 1``, falling back to bisection whenever a step
    leaves the current bracket.
    """
    gs, gp = kernel._grad_star, kernel._grad

    def eta_of(mu):
        return np.maximum(y - gs(mu - c), 0.0)

    lo = float(np.max(c + gp(y - 1.0)))  # h(lo) >= 0
    hi = float(np.max(c + gp(y)))        # h(hi) <= 0
    mu = 0.5 * (lo + hi)
    width = hi - lo
    for it in range(1, max_iters + 1):
        eta = eta_of(mu)
        h = eta.sum() - 1.0
        if abs(h) <= tol or hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(mu)):
            return mu, eta, it
        if h > 0:
            lo = mu
        else:
            hi = mu
        # Newton may cycle across a kink of h; a step that fails to halve
        # the bracket is followed by bisection.
        slow = hi - lo > 0.5 * width
        width = hi - lo
        active = eta > 0
        slope = -np.sum(_diag(kernel._hess_star(mu - c))[active])
        step_ok = False
        if slope < 0 and np.isfinite(slope) and not slow:
            cand = mu - h / slope
            if lo < cand < hi:
                mu, step_ok = cand, True
        if not step_ok:
            mu = 0.5 * (lo + hi)
    raise NonConvergence("simplex multiplier search did not converge", abs(h), max_iters)


def _diag(h):
    h = np.asarray(h, dtype=float)
    return np.diag(h) if h.ndim == 2 else h


def sup_separable_concave(c, y, kernel, constraint, tol=1e-14):
    """Maximize ``<c, eta> - phi(y - eta)`` over a box or the unit simplex.

    Parameters
    ----------
    c, y : (m,) array_like
    kernel : ProxKernel
        Must be separable.
    constraint : Box or Simplex

    Returns
    -------
    eta : ndarray
    value : float
    """
    if not kernel.separable:
        raise ValueError("sup_separable_concave needs a separable kernel")
    c = check_vector(c, name="c")
    y = check_vector(y, c.size, "y")
    if isinstance(constraint, Box):
        # Coordinate-wise concave problems: clamp the unconstrained maximizer.
        eta = np.clip(y - kernel._grad_star(-c), constraint.lo, constraint.hi)
    elif isinstance(constraint, Simplex):
        _, eta, _ = _simplex_multiplier(c, y, kernel, tol)
    else:
        raise TypeError(f"unsupported constraint {constraint!r}")
    return eta, float(c @ eta - kernel._phi(y - eta))
