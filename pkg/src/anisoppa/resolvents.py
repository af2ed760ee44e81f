"""Anisotropic and Bregman resolvents and the identities that link them.

The anisotropic resolvent of ``T`` maps ``x`` to the ``z`` solving
``z + grad phi*(T z) = x``; the Bregman resolvent of ``S`` maps ``w`` to the
``u`` solving ``grad phi*(u) + S(u) = grad phi*(w)``.

Residuals are measured in the dual space as ``||grad phi(x - z) - T(z)||_inf``.
For kernels with ``p > 2`` the primal residual ``z + grad phi*(T z) - x`` is
dominated by the infinite slope of ``grad phi*`` at 0 and cannot reach
``1e-12`` even for an exact dual solution.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from ._validation import check_positive, check_vector
from .exceptions import NonConvergence, SetValuedError
from .operators import (AffineOperator, DiagonalOperator, InverseOperator,
                        Operator, SubdifferentialOperator, YosidaOperator)

ARMIJO_C = 1e-4
EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverTolerances:
    residual_tol: float = 1e-12
    max_iters: int = 200
    damping_min: float = 1e-8

    def __post_init__(self):
        check_positive(self.residual_tol, "residual_tol")
        check_positive(self.damping_min, "damping_min")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters!r}")

    def with_tol(self, residual_tol):
        return SolverTolerances(residual_tol, self.max_iters, self.damping_min)


DEFAULT_TOL = SolverTolerances()


@dataclass
class ResolventResult:
    """Output of an anisotropic resolvent solve.

    ``v = grad phi(x - z)`` holds by construction; ``residual_norm`` is
    ``||v - T(z)||_inf`` recomputed after the solve.
    """

    z: np.ndarray
    v: np.ndarray
    residual_norm: float
    inner_iters: int
    converged: bool
    method: str = field(default="newton")


def _mat(h):
    h = np.asarray(h, dtype=float)
    return np.diag(h) if h.ndim == 1 else h


def damped_newton(fun_jac, y0, tol, max_iters=200, damping_min=1e-8):
    """Damped Newton iteration on a square system ``F(y) = 0``.

    Steps are backtracked (factor 0.5, Armijo constant 1e-4) on
    ``0.5 ||F||^2``.  When the Jacobian is unusable or the line search falls
    below ``damping_min``, a damped fixed-point step ``y - t F(y)`` is tried
    with ``t`` halved until the residual decreases.

    Parameters
    ----------
    fun_jac : callable
        ``fun_jac(y, need_jac)`` returns ``(F, J, scale)``.  ``J`` may be
        ``None`` when ``need_jac`` is false; ``scale`` is a magnitude that
        makes the test relative: convergence is
        ``||F||_inf <= tol * max(1, scale)``.

    Returns
    -------
    y, residual, iterations, converged
    """
    y = np.array(y0, dtype=float)
    F, J, scale = fun_jac(y, True)
    res = abs(F).max() if F.size else 0.0
    it = 0
    while True:
        if res <= tol * max(1.0, scale):
            return y, res, it, True
        if it >= max_iters:
            return y, res, it, False
        it += 1
        merit = F @ F
        step = None
        if J is not None:
            try:
                d = np.linalg.solve(J, -F)
                if np.isfinite(d).all():
                    step = d
            except np.linalg.LinAlgError:
                step = None
        moved = False
        if step is not None:
            t = 1.0
            while t >= damping_min:
                y_new = y + t * step
                F_new = fun_jac(y_new, False)[0]
                m_new = F_new @ F_new
                if m_new <= (1.0 - 2.0 * ARMIJO_C * t) * merit:
                    moved = True
                    break
                t *= 0.5
        if not moved:
            t = 1.0
            while t >= damping_min:
                y_new = y - t * F
                F_new = fun_jac(y_new, False)[0]
                m_new = F_new @ F_new
                if m_new < merit:
                    moved = True
                    break
                t *= 0.5
        if not moved:
            # Stalled: accept when at the rounding floor of the problem.
            floor = 1e3 * EPS * max(1.0, scale, abs(y).max())
            return y, res, it, res <= max(tol * max(1.0, scale), floor)
        y = y_new
        F, J, scale = fun_jac(y, True)
        res = abs(F).max() if F.size else 0.0


def _finite(J):
    return J if np.isfinite(J).all() else None


def _resolvent_newton(op, kernel, x, tol, z0):
    """Newton path for differentiable single-valued operators.

    Kernels with bounded Hessian of phi are solved for the displacement
    ``u = x - z`` from ``grad phi(u) = T(x - u)``; kernels with bounded
    Hessian of phi* are solved for ``v`` from ``v = T(x - grad phi*(v))``.
    """
    eval_jac = op._eval_jac
    if kernel.primal_curvature_bounded and not kernel.dual_curvature_bounded:
        def fj(u, need):
            z = x - u
            g = kernel._grad(u)
            if need:
                Tz, JT = eval_jac(z)
                return g - Tz, _finite(_mat(kernel._hess(u)) + JT), abs(g).max()
            return g - op._eval(z), None, 0.0

        u, res, it, ok = damped_newton(fj, x - z0, tol.residual_tol, tol.max_iters,
                                       tol.damping_min)
        z = x - u
    else:
        eye = np.eye(x.shape[0])

        def fj(v, need):
            z = x - kernel._grad_star(v)
            if need:
                Tz, JT = eval_jac(z)
                return v - Tz, _finite(eye + JT @ _mat(kernel._hess_star(v))), abs(v).max()
            return v - op._eval(z), None, 0.0

        v, res, it, ok = damped_newton(fj, kernel._grad(x - z0), tol.residual_tol,
                                       tol.max_iters, tol.damping_min)
        z = x - kernel._grad_star(v)
    return z, it, ok


def _resolvent_scalar(op, kernel, x, tol):
    """Coordinate-wise bracketing root finding for diagonal operators."""
    z = np.empty_like(x)
    iters = 0
    for i, (f, xi) in enumerate(zip(op.funcs, x)):
        def g(t, f=f, xi=xi):
            return t + kernel._grad_star(np.array([float(f(t))]))[0] - xi

        g0 = g(xi)
        if g0 == 0.0:
            z[i] = xi
            continue
        step = max(1.0, abs(xi))
        direction = -1.0 if g0 > 0 else 1.0
        other = xi + direction * step
        while np.sign(g(other)) == np.sign(g0):
            step *= 2.0
            other = xi + direction * step
            if step > 1e300:
                raise NonConvergence("scalar bracket search failed", abs(g0), 0)
        lo, hi = sorted((xi, other))
        root, info = brentq(g, lo, hi, xtol=1e-300, rtol=4 * EPS, maxiter=tol.max_iters,
                            full_output=True, disp=False)
        iters = max(iters, info.iterations)
        z[i] = root
    return z, iters, True


def _resolvent_minimize(op, kernel, x, tol, z0):
    """Resolvent of a gradient field via minimization of ``f(z) + phi(x - z)``."""
    from .inner_opt import SmoothProblem, minimize

    def fg(z):
        return (float(op.fun(z)) + kernel._phi(x - z),
                np.asarray(op.grad(z), dtype=float) - kernel._grad(x - z))

    report = minimize(SmoothProblem(fg, x.shape[0]), z0, tol=tol.residual_tol,
                      max_iters=max(tol.max_iters, 500))
    return report.x, report.iters, report.converged


def anisotropic_resolvent(op, kernel, x, tol=None, z0=None):
    """Solve ``z + grad phi*(T z) = x``.

    The strategy follows the operator structure: coordinate-wise bracketing
    for diagonal operators with separable kernels, minimization for gradient
    fields, and damped Newton for everything with a Jacobian.

    Parameters
    ----------
    op : Operator
        Single-valued monotone operator.
    kernel : ProxKernel
    x : array_like
        Prox center.
    tol : SolverTolerances, optional
    z0 : array_like, optional
        Initial guess (defaults to ``x``).

    Returns
    -------
    ResolventResult

    Raises
    ------
    NonConvergence
        If the dual residual does not reach ``tol.residual_tol``.
    """
    tol = DEFAULT_TOL if tol is None else tol
    if not isinstance(op, Operator):
        raise TypeError("op must be an Operator")
    x = check_vector(x, op.dim, "x")
    z0 = x.copy() if z0 is None else check_vector(z0, op.dim, "z0")

    if isinstance(op, AffineOperator) and op.is_zero_map:
        z, it, ok, method = x.copy(), 0, True, "identity"
    elif isinstance(op, DiagonalOperator) and kernel.separable:
        (z, it, ok), method = _resolvent_scalar(op, kernel, x, tol), "scalar"
    elif isinstance(op, SubdifferentialOperator) and op.hess is None:
        (z, it, ok), method = _resolvent_minimize(op, kernel, x, tol, z0), "minimize"
    else:
        (z, it, ok), method = _resolvent_newton(op, kernel, x, tol, z0), "newton"

    v = kernel._grad(x - z)
    Tz = op._eval(z)
    residual = float(np.max(np.abs(v - Tz)))
    limit = tol.residual_tol * max(1.0, float(np.max(np.abs(v))))
    if not ok or not np.isfinite(residual):
        raise NonConvergence(f"anisotropic resolvent ({method}) did not converge", residual, it)
    # Post-hoc check, independent of the path taken.  The scalar path is
    # accurate to rounding in z, which may amplify through grad phi.
    converged = residual <= max(limit, 1e3 * EPS * max(1.0, float(np.max(np.abs(Tz)))))
    return ResolventResult(z=z, v=v, residual_norm=residual, inner_iters=int(it),
                           converged=bool(converged), method=method)


def bregman_resolvent(s_op, kernel, w, tol=None):
    """Solve ``grad phi*(u) + S(u) = grad phi*(w)`` for ``u``.

    For the inverse of a nonsingular affine map, ``S`` is itself affine
    (``u -> M^{-1}(u + b)``) and the equation is solved in the dual variable.
    Kernels with bounded Hessian of phi are solved for ``s = grad phi*(u)``
    instead.  The inverse of a singular affine map is set-valued; there the
    solution is ``u = T(a)`` with ``a`` the anisotropic resolvent of ``T`` at
    ``grad phi*(w)``.
    """
    tol = DEFAULT_TOL if tol is None else tol
    w = check_vector(w, s_op.dim, "w")
    c = kernel._grad_star(w)
    if isinstance(s_op, AffineOperator) and s_op.is_zero_map:
        return w.copy()
    if isinstance(s_op, InverseOperator) and s_op.singular:
        inner = s_op.inner
        if inner.is_zero_map:
            # T^{-1}(0) is the whole space and T^{-1}(u) is empty otherwise.
            return np.zeros_like(w)
        a = anisotropic_resolvent(inner, kernel, c, tol).z
        return inner._eval(a)
    if isinstance(s_op, YosidaOperator) or not hasattr(s_op, "_jac"):
        raise SetValuedError("bregman_resolvent needs a differentiable single-valued S")

    eye = np.eye(w.shape[0])
    if kernel.primal_curvature_bounded and not kernel.dual_curvature_bounded:
        def fj(s, need):
            u = kernel._grad(s)
            if need:
                Su, JS = s_op._eval_jac(u)
                return s + Su - c, _finite(eye + JS @ _mat(kernel._hess(s))), abs(s).max()
            return s + s_op._eval(u) - c, None, 0.0

        s, res, it, ok = damped_newton(fj, c.copy(), tol.residual_tol, tol.max_iters,
                                       tol.damping_min)
        u = kernel._grad(s)
    else:
        def fj(u, need):
            gu = kernel._grad_star(u)
            if need:
                Su, JS = s_op._eval_jac(u)
                return gu + Su - c, _finite(_mat(kernel._hess_star(u)) + JS), abs(gu).max()
            return gu + s_op._eval(u) - c, None, 0.0

        u, res, it, ok = damped_newton(fj, w.copy(), tol.residual_tol, tol.max_iters,
                                       tol.damping_min)
    if not ok:
        raise NonConvergence("bregman resolvent did not converge", res, it)
    return u


# -- identity checkers ------------------------------------------------------------


def moreau_residual(op, kernel, x, tol=None, outer_grad_star=None):
    """Gap in ``J(x) = x - grad phi*(B(grad phi(x)))``.

    ``J`` is the anisotropic resolvent of ``op`` and ``B`` the Bregman
    resolvent of its inverse; the two sides are computed by independent
    solves.  ``outer_grad_star`` replaces ``grad phi*`` in the reconstruction
    step and exists only to check that a corrupted map is detected.
    """
    x = check_vector(x, op.dim, "x")
    lhs = anisotropic_resolvent(op, kernel, x, tol).z
    u = bregman_resolvent(InverseOperator(op), kernel, kernel._grad(x), tol)
    gs = kernel._grad_star if outer_grad_star is None else outer_grad_star
    rhs = x - gs(u)
    return float(np.max(np.abs(lhs - rhs)))


def relaxation_absorption_residual(op, kernel, x, tau, rho, tol=None):
    """Gap between the resolvent of the Yosida regularization and a relaxed step.

    Left side: the resolvent of ``T_rho`` under ``tau * phi(. / tau)``.
    Right side: ``(1 - lam) x + lam J(x)`` with ``J`` the resolvent of ``T``
    under ``gamma * phi(. / gamma)``, ``gamma = tau + rho``, ``lam = tau / gamma``.
    """
    tau = check_positive(float(tau), "tau")
    rho = check_positive(float(rho), "rho", strict=False)
    x = check_vector(x, op.dim, "x")
    gamma = tau + rho
    lam = tau / gamma
    inner_tol = None if tol is None else tol.with_tol(tol.residual_tol * 1e-2)
    yosida = YosidaOperator(op, rho, kernel, inner_tol)
    left = anisotropic_resolvent(yosida, kernel.epi_scale(tau), x, tol).z
    right = (1 - lam) * x + lam * anisotropic_resolvent(op, kernel.epi_scale(gamma), x, tol).z
    return float(np.max(np.abs(left - right)))


def dfirm_violation(s_op, kernel, sample_pairs, tol=None):
    """Smallest slack in the firm-nonexpansiveness inequality of the Bregman resolvent.

    For ``A = bregman_resolvent(s_op, kernel, .)`` the slack of a pair is
    ``<grad*(x) - grad*(y), Ax - Ay> - <grad*(Ax) - grad*(Ay), Ax - Ay>``.
    """
    worst = np.inf
    gs = kernel._grad_star
    for x, y in sample_pairs:
        x = check_vector(x, s_op.dim, "x")
        y = check_vector(y, s_op.dim, "y")
        ax = bregman_resolvent(s_op, kernel, x, tol)
        ay = bregman_resolvent(s_op, kernel, y, tol)
        d = ax - ay
        slack = float(np.dot(gs(x) - gs(y), d) - np.dot(gs(ax) - gs(ay), d))
        worst = min(worst, slack)
    return worst
