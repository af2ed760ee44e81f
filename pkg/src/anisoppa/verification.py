"""Identity checks over a built-in grid of operators and kernels.

Each suite evaluates one identity at seeded random points and reports the
worst residual against a threshold.  The suites back the ``verify``
subcommand and are also usable directly::

    >>> report = run_verify(suites=("three_point",), n_points=20)
    >>> report.passed
    True
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .operators import (AffineOperator, EnlargementQuery, InverseOperator, check_enlargement_member,
                        growth_instance_linear, identity_operator, skew2, zero_operator)
from .prox import Cosh, ExpPenalty, IsotropicPower, SeparablePower, three_point_residual
from .resolvents import SolverTolerances, dfirm_violation, moreau_residual, relaxation_absorption_residual

SUITES = ("moreau", "relaxation", "dfirm", "three_point", "enlargement")

# Pass thresholds: residuals must stay below, slacks above minus the value.
DEFAULT_THRESHOLDS = {
    "moreau": 1e-8,
    "relaxation": 1e-8,
    "dfirm": 1e-9,
    "three_point": 1e-12,
    "enlargement": 1e-12,
}

TAU_RHO = ((1.0, 0.0), (0.5, 0.5), (0.25, 0.75))


def grid_operators():
    return {"zero": zero_operator(2), "identity": identity_operator(2),
            "growth_linear": growth_instance_linear(), "skew2": skew2()}


def grid_kernels():
    return {"sep_power:p=1.5": SeparablePower(1.5), "sep_power:p=2": SeparablePower(2),
            "sep_power:p=3": SeparablePower(3), "sep_power:p=4": SeparablePower(4),
            "iso_power:p=3": IsotropicPower(3), "cosh": Cosh()}


@dataclass
class CheckResult:
    """Outcome of one suite.

    ``worst`` is the largest residual, or for ``dfirm`` the smallest slack.
    """

    name: str
    worst: float
    threshold: float
    passed: bool
    cases: int
    seconds: float
    detail: str = ""


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def failed(self):
        return [c.name for c in self.checks if not c.passed]

    def table(self):
        lines = [f"{'check':<12} {'worst':>12} {'threshold':>10} {'cases':>6} {'time[s]':>8}  result"]
        for c in self.checks:
            lines.append(f"{c.name:<12} {c.worst:>12.3e} {c.threshold:>10.1e} {c.cases:>6d} "
                         f"{c.seconds:>8.2f}  {'PASS' if c.passed else 'FAIL'}"
                         + (f"  ({c.detail})" if c.detail else ""))
        return "\n".join(lines)


def _points(rng, n, dim=2, scale=5.0):
    return rng.uniform(-scale, scale, size=(n, dim))


def _worst_over_grid(fun, rng, n_points):
    """Max of ``fun(op, kernel, x)`` over the grid; also names the worst cell."""
    worst, where, cases = 0.0, "", 0
    ops, kernels = grid_operators(), grid_kernels()
    pts = _points(rng, n_points)
    for oname, op in ops.items():
        for kname, kernel in kernels.items():
            for x in pts:
                r = fun(op, kernel, x)
                cases += 1
                if not r <= worst:
                    worst, where = r, f"{oname} / {kname}"
    return worst, where, cases


def check_moreau(rng, n_points=100, tol=None, grad_star_sign=1.0):
    """``J(x) = x - grad phi*(B(grad phi(x)))`` on the operator/kernel grid."""
    def fun(op, kernel, x):
        gs = None
        if grad_star_sign != 1.0:
            def gs(v, kernel=kernel):
                return grad_star_sign * kernel._grad_star(v)
        return moreau_residual(op, kernel, x, tol, outer_grad_star=gs)
    return _worst_over_grid(fun, rng, n_points)


def check_relaxation(rng, n_points=100, tol=None):
    """Relaxation absorption for every ``(tau, rho)`` pair on the grid."""
    def fun(op, kernel, x):
        return max(relaxation_absorption_residual(op, kernel, x, tau, rho, tol) for tau, rho in TAU_RHO)
    worst, where, cases = _worst_over_grid(fun, rng, n_points)
    return worst, where, cases * len(TAU_RHO)


def check_dfirm(rng, n_pairs=200, tol=None):
    """Smallest firm-nonexpansiveness slack for the inverse of the growth instance."""
    s_op = InverseOperator(growth_instance_linear())
    worst, where = np.inf, ""
    for p in (2, 3):
        pts = _points(rng, 2 * n_pairs)
        pairs = list(zip(pts[:n_pairs], pts[n_pairs:]))
        s = dfirm_violation(s_op, SeparablePower(p), pairs, tol)
        if s < worst:
            worst, where = s, f"sep_power:p={p}"
    return worst, where, 2 * n_pairs


def check_three_point(rng, n_points=1000, dim=3):
    """Three-point identity and ``D*(grad x, grad y) = D(y, x)`` per kernel."""
    kernels = dict(grid_kernels(), **{"exp:rho=0.01": ExpPenalty(0.01)})
    worst, where, cases = 0.0, "", 0
    for kname, kernel in kernels.items():
        u, v, w = (_points(rng, n_points, dim, 2.0) for _ in range(3))
        for a, b, c in zip(u, v, w):
            r1 = abs(three_point_residual(kernel, a, b, c))
            ga, gb = kernel._grad(a), kernel._grad(b)
            lhs = kernel.bregman_star(ga, gb)
            r2 = abs(lhs - kernel.bregman(b, a)) / max(1.0, abs(lhs))
            cases += 2
            r = max(r1, r2)
            if r > worst:
                worst, where = r, kname
    return worst, where, cases


def _enlargement_cases():
    """Pairs of (query outcome, expected outcome) with analytically known answers."""
    ident = identity_operator(2)
    skew = skew2()
    growth = growth_instance_linear()
    cases = []
    for op in (skew, growth, ident):
        x = np.array([0.7, -1.3])
        cases.append((op, EnlargementQuery(0.0, x, op._eval(x)), True, 0.0))
    for delta in (0.5, 1.0, 2.0):
        u = np.array([delta, 0.0])
        exact = -delta ** 2 / 4
        cases.append((ident, EnlargementQuery(delta ** 2 / 4 * (1 + 1e-9), np.zeros(2), u), True, exact))
        cases.append((ident, EnlargementQuery(delta ** 2 / 4 * (1 - 1e-6), np.zeros(2), u), False, exact))
    cases.append((skew, EnlargementQuery(1e6, np.zeros(2), np.array([1.0, 0.0])), False, -np.inf))
    # A symmetric part with a null direction: finite iff g avoids that direction.
    half = AffineOperator(np.array([[1.0, 1.0], [-1.0, 0.0]]))
    cases.append((half, EnlargementQuery(1.0, np.zeros(2), np.array([0.0, 1.0])), False, -np.inf))
    cases.append((half, EnlargementQuery(1.0, np.zeros(2), np.array([1.0, 0.0])), True, -0.25))
    return cases


def check_enlargement():
    """Exact enlargement membership against closed-form answers, plus nesting."""
    worst, where, n = 0.0, "", 0
    for op, query, member, certificate in _enlargement_cases():
        res = check_enlargement_member(op, query)
        n += 1
        if res.member != member:
            return np.inf, f"wrong membership for {op!r}", n
        if np.isinf(certificate):
            err = 0.0 if res.certificate == certificate else np.inf
        else:
            err = abs(res.certificate - certificate)
        if err > worst:
            worst, where = err, repr(op)
        # Nesting: a larger eps never removes membership.
        if res.member and not check_enlargement_member(
                op, EnlargementQuery(2 * query.eps + 1.0, query.x, query.u)).member:
            return np.inf, "enlargements not nested", n
    return worst, where, n


def run_verify(suites=SUITES, seed=0, n_points=100, threshold=None, solver_tol=None,
               grad_star_sign=1.0):
    """Run the identity suites.

    Parameters
    ----------
    suites : iterable of str
        Any of :data:`SUITES`.
    seed : int
        Seed of the sample points.
    n_points : int
        Points per operator/kernel cell for the Moreau and relaxation suites.
    threshold : float, optional
        Overrides every pass threshold.
    solver_tol : float, optional
        Residual tolerance of the resolvent solves (default 1e-12).
    grad_star_sign : float
        Fault injection: ``-1`` flips ``grad phi*`` in the Moreau
        reconstruction, which the suite must detect.

    Returns
    -------
    VerifyReport
    """
    unknown = set(suites) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suites {sorted(unknown)}")
    tol = SolverTolerances() if solver_tol is None else SolverTolerances(residual_tol=solver_tol)
    report = VerifyReport()
    for i, name in enumerate(suites):
        rng = np.random.Generator(np.random.PCG64([seed, SUITES.index(name)]))
        t0 = time.perf_counter()
        if name == "moreau":
            worst, where, n = check_moreau(rng, n_points, tol, grad_star_sign)
        elif name == "relaxation":
            worst, where, n = check_relaxation(rng, n_points, tol)
        elif name == "dfirm":
            worst, where, n = check_dfirm(rng, tol=tol)
        elif name == "three_point":
            worst, where, n = check_three_point(rng)
        else:
            worst, where, n = check_enlargement()
        thr = DEFAULT_THRESHOLDS[name] if threshold is None else float(threshold)
        ok = worst >= -thr if name == "dfirm" else worst <= thr
        report.checks.append(CheckResult(name, float(worst), thr, bool(ok), n,
                                         time.perf_counter() - t0, where))
    return report
