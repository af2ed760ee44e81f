"""Monotone operators, their inverses and Bregman-Yosida regularizations.

Operators are represented by what the algorithms need: single-valued
evaluation where it exists, a Jacobian for Newton-type resolvent solves, and
structural flags that select a resolvent strategy.
"""

import csv
import re
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from ._validation import check_matrix, check_positive, check_vector
from .exceptions import NotAffine, SetValuedError, SpecParseError
from .prox import ProxKernel, parse_kernel

PSD_TOL = 1e-12


class Operator:
    """Base class; ``dim`` is the dimension of the primal space."""

    kind = "operator"
    zero = None  # a known zero of the operator, if any

    def __init__(self, dim):
        self.dim = int(dim)

    def eval(self, x):
        """Return ``T(x)``."""
        return self._eval(check_vector(x, self.dim))

    def jacobian(self, x):
        return self._jac(check_vector(x, self.dim))

    def _eval(self, x):
        raise NotImplementedError

    def _jac(self, x):
        raise NotImplementedError(f"{type(self).__name__} has no Jacobian")

    def _eval_jac(self, x):
        return self._eval(x), self._jac(x)

    def __call__(self, x):
        return self.eval(x)


class AffineOperator(Operator):
    """``T(x) = M x - b`` with positive semidefinite symmetric part of ``M``.

    Parameters
    ----------
    M : (n, n) array_like
    b : (n,) array_like, optional
        Defaults to zero.
    zero : (n,) array_like, optional
        Known zero of ``T``, kept as metadata for distance diagnostics.
    check_monotone : bool
        Reject matrices whose symmetric part has an eigenvalue below
        ``-1e-12``.
    """

    kind = "affine"

    def __init__(self, M, b=None, zero=None, name=None, check_monotone=True):
        M = check_matrix(M, name="M")
        if M.shape[0] != M.shape[1]:
            raise ValueError(f"M must be square, got shape {M.shape}")
        super().__init__(M.shape[0])
        self.M = M
        self.b = np.zeros(self.dim) if b is None else check_vector(b, self.dim, "b")
        self.zero = None if zero is None else check_vector(zero, self.dim, "zero")
        self.name = name
        self.sym = 0.5 * (M + M.T)
        if check_monotone:
            lam_min = np.linalg.eigvalsh(self.sym).min()
            if lam_min < -PSD_TOL:
                raise ValueError(
                    f"symmetric part of M has eigenvalue {lam_min:.3e} < 0; operator is not monotone")

    def _eval(self, x):
        return self.M @ x - self.b

    def _jac(self, x):
        return self.M

    @property
    def is_zero_map(self):
        return not np.any(self.M) and not np.any(self.b)

    def __repr__(self):
        return self.name or f"AffineOperator(dim={self.dim})"


class DiagonalOperator(Operator):
    """Coordinate-wise monotone scalar maps ``T(x)_i = f_i(x_i)``.

    Parameters
    ----------
    funcs : callable or sequence of callables
        A single vectorized nondecreasing map applied to every coordinate, or
        one scalar map per coordinate.
    derivs : callable or sequence of callables, optional
        Derivatives, used only by Newton-type solves.
    dim : int
        Required when ``funcs`` is a single callable.
    """

    kind = "diagonal"

    def __init__(self, funcs, derivs=None, dim=None, zero=None):
        if callable(funcs):
            if dim is None:
                raise ValueError("dim is required for a shared scalar map")
            funcs = [funcs] * int(dim)
            if derivs is not None:
                derivs = [derivs] * int(dim)
        funcs = list(funcs)
        super().__init__(len(funcs))
        self.funcs = funcs
        self.derivs = None if derivs is None else list(derivs)
        self.zero = None if zero is None else check_vector(zero, self.dim, "zero")

    def _eval(self, x):
        return np.array([float(f(t)) for f, t in zip(self.funcs, x)])

    def _jac(self, x):
        if self.derivs is None:
            raise NotImplementedError("DiagonalOperator built without derivatives")
        return np.diag([float(d(t)) for d, t in zip(self.derivs, x)])


class SubdifferentialOperator(Operator):
    """Gradient of a smooth convex function ``f``.

    Its resolvent is computed by minimizing ``f(z) + phi(x - z)``.
    """

    kind = "subdifferential"

    def __init__(self, fun, grad, dim, hess=None, zero=None):
        super().__init__(dim)
        self.fun, self.grad, self.hess = fun, grad, hess
        self.zero = None if zero is None else check_vector(zero, self.dim, "zero")

    def _eval(self, x):
        return np.asarray(self.grad(x), dtype=float)

    def _jac(self, x):
        if self.hess is None:
            raise NotImplementedError("SubdifferentialOperator built without a Hessian")
        return np.atleast_2d(np.asarray(self.hess(x), dtype=float))


class SaddleOperator(Operator):
    """``T(x, y) = (grad f(x) + A^T y, grad g*(y) - A x)`` for smooth f, g*.

    The input is the stacked vector ``(x, y)`` of length ``n + m``.
    """

    kind = "saddle"

    def __init__(self, A, grad_f, grad_gstar, hess_f=None, hess_gstar=None, zero=None):
        self.A = check_matrix(A, name="A")
        m, n = self.A.shape
        super().__init__(n + m)
        self.n, self.m = n, m
        self.grad_f, self.grad_gstar = grad_f, grad_gstar
        self.hess_f, self.hess_gstar = hess_f, hess_gstar
        self.zero = None if zero is None else check_vector(zero, self.dim, "zero")

    def _eval(self, xy):
        x, y = xy[:self.n], xy[self.n:]
        return np.concatenate([np.asarray(self.grad_f(x)) + self.A.T @ y,
                               np.asarray(self.grad_gstar(y)) - self.A @ x])

    def _jac(self, xy):
        if self.hess_f is None or self.hess_gstar is None:
            raise NotImplementedError("SaddleOperator built without Hessians")
        x, y = xy[:self.n], xy[self.n:]
        return np.block([[np.atleast_2d(self.hess_f(x)), self.A.T],
                         [-self.A, np.atleast_2d(self.hess_gstar(y))]])


class InverseOperator(Operator):
    """Inverse ``T^{-1}`` of an affine operator.

    For nonsingular ``M`` the inverse is the affine map
    ``u -> M^{-1}(u + b)``, evaluated through an LU factorization.  A singular
    ``M`` gives a set-valued inverse; evaluation then raises
    :class:`SetValuedError` and resolvent solves use a primal route instead.
    """

    kind = "inverse"

    def __init__(self, inner):
        if not isinstance(inner, AffineOperator):
            raise NotAffine("InverseOperator supports affine operators only")
        super().__init__(inner.dim)
        self.inner = inner
        s = np.linalg.svd(inner.M, compute_uv=False)
        self.singular = s.size == 0 or s.min() <= 1e-14 * max(1.0, s.max())
        self._lu = None if self.singular else lu_factor(inner.M)
        # 0 is in T^{-1}(u) exactly when u = T(0).
        self.zero = inner._eval(np.zeros(self.dim))

    def _eval(self, u):
        if self.singular:
            raise SetValuedError("inverse of a singular affine operator is set-valued")
        return lu_solve(self._lu, u + self.inner.b)

    def _jac(self, u):
        if self.singular:
            raise SetValuedError("inverse of a singular affine operator is set-valued")
        return lu_solve(self._lu, np.eye(self.dim))


class YosidaOperator(Operator):
    """Bregman-Yosida regularization ``T_rho = (rho grad phi* + T^{-1})^{-1}``.

    Evaluation at ``x`` solves ``w = J(x)`` for the anisotropic resolvent of
    ``T`` under the kernel ``rho * phi(. / rho)`` and returns
    ``v = grad phi((x - w) / rho)``, which satisfies ``v = T(x - rho grad phi*(v))``.
    With ``rho = 0`` the wrapper evaluates ``T`` itself.
    """

    kind = "yosida"

    def __init__(self, inner, rho, kernel, tol=None):
        if not isinstance(inner, Operator):
            raise TypeError("inner must be an Operator")
        if not isinstance(kernel, ProxKernel):
            raise TypeError("kernel must be a ProxKernel")
        super().__init__(inner.dim)
        self.inner = inner
        self.rho = check_positive(float(rho), "rho", strict=False)
        self.kernel = kernel
        # Inner solves run two digits tighter than the default outer
        # tolerance so that an outer Newton loop sees a smooth map.
        if tol is None:
            from .resolvents import SolverTolerances
            tol = SolverTolerances(residual_tol=1e-14)
        self.tol = tol
        # Zeros are preserved by the regularization.
        self.zero = inner.zero
        self._scaled = kernel.epi_scale(self.rho) if self.rho > 0 else None
        # Last inner solution: reused at the same point and as a warm start.
        self._last = None

    def _solve(self, x):
        from .resolvents import anisotropic_resolvent
        last = self._last
        if last is not None and np.array_equal(last[0], x):
            return last[1]
        z0 = None if last is None else last[1].z + (x - last[0])
        res = anisotropic_resolvent(self.inner, self._scaled, x, self.tol, z0=z0)
        self._last = (x.copy(), res)
        return res

    def _eval(self, x):
        if self.rho == 0:
            return self.inner._eval(x)
        res = self._solve(x)
        return self._scaled._grad(x - res.z)

    def _eval_jac(self, x):
        if self.rho == 0:
            return self.inner._eval_jac(x)
        res = self._solve(x)
        w = res.z
        v = self._scaled._grad(x - w)
        JT = np.atleast_2d(self.inner._jac(w))
        n = self.dim
        if self.kernel.dual_curvature_bounded:
            Hs = _as_matrix(self._scaled._hess_star(v))
            J = _solve_or_lstsq(np.eye(n) + JT @ Hs, JT)
        else:
            Hk = _as_matrix(self._scaled._hess(x - w))
            J = JT @ _solve_or_lstsq(Hk + JT, Hk)
        return v, J

    def _jac(self, x):
        return self._eval_jac(x)[1]


def _as_matrix(h):
    h = np.asarray(h, dtype=float)
    return np.diag(h) if h.ndim == 1 else h


def _solve_or_lstsq(A, B):
    try:
        out = np.linalg.solve(A, B)
        if np.all(np.isfinite(out)):
            return out
    except np.linalg.LinAlgError:
        pass
    return np.linalg.lstsq(A, B, rcond=None)[0]


# -- named instances ------------------------------------------------------------


def zero_operator(dim=2):
    return AffineOperator(np.zeros((dim, dim)), zero=np.zeros(dim), name="zero")


def identity_operator(dim=2):
    return AffineOperator(np.eye(dim), zero=np.zeros(dim), name="identity")


def skew2():
    """Rotation field ``T(x) = (x_2, -x_1)``; monotone but not cocoercive."""
    return AffineOperator([[0.0, 1.0], [-1.0, 0.0]], zero=np.zeros(2), name="skew2")


def growth_instance_linear():
    """Affine skew field with zero ``(2, -2)`` and ``||T(x)|| = ||x - x*|| / 2``."""
    M = np.array([[0.0, -0.5], [0.5, 0.0]])
    return AffineOperator(M, b=[1.0, 1.0], zero=[2.0, -2.0], name="growth_linear")


# -- functional interface -------------------------------------------------------


def eval(op, x):  # noqa: A001 - mirrors the operator call
    """Evaluate a single-valued operator."""
    return op.eval(x)


@dataclass(frozen=True)
class EnlargementQuery:
    """Is ``u`` in the ``eps``-enlargement of ``T`` at ``x``?"""

    eps: float
    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.eps) or self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps!r}")


@dataclass(frozen=True)
class EnlargementResult:
    member: bool
    certificate: float  # inf_y <y - x, T(y) - u>, possibly -inf


def check_enlargement_member(op, query):
    """Exact membership test for the enlargement of an affine operator.

    The infimum of ``<y - x, M y - b - u>`` over ``y`` is ``inf_d d'Sd + g'd``
    with ``S`` the symmetric part of ``M`` and ``g = T(x) - u``.  It is
    ``-inf`` when ``g`` has a component in the null space of ``S`` and
    ``-g'S^+g / 4`` otherwise.
    """
    if not isinstance(op, AffineOperator):
        raise NotAffine("enlargement membership is exact only for affine operators")
    x = check_vector(query.x, op.dim, "x")
    u = check_vector(query.u, op.dim, "u")
    g = op._eval(x) - u
    lam, Q = np.linalg.eigh(op.sym)
    gq = Q.T @ g
    cut = 1e-12 * max(1.0, np.abs(lam).max())
    null = lam <= cut
    gscale = max(1.0, np.abs(g).max())
    if np.any(np.abs(gq[null]) > 1e-12 * gscale):
        return EnlargementResult(False, -np.inf)
    pos = ~null
    inf_val = -0.25 * float(np.sum(gq[pos] ** 2 / lam[pos]))
    return EnlargementResult(inf_val >= -query.eps, inf_val)


def probe_nonmonotonicity(op, kernel, pairs):
    """Smallest ``<grad phi*(T x) - grad phi*(T y), x - y>`` over ``pairs``.

    A negative value shows that ``grad phi* o T`` is not monotone.
    """
    worst = np.inf
    for x, y in pairs:
        x = check_vector(x, op.dim, "x")
        y = check_vector(y, op.dim, "y")
        gx = kernel._grad_star(op._eval(x))
        gy = kernel._grad_star(op._eval(y))
        worst = min(worst, float(np.dot(gx - gy, x - y)))
    return worst


def monotonicity_gap(op, pairs):
    """Smallest ``<T x - T y, x - y>`` over ``pairs`` (nonnegative iff monotone on them)."""
    worst = np.inf
    for x, y in pairs:
        x = check_vector(x, op.dim, "x")
        y = check_vector(y, op.dim, "y")
        worst = min(worst, float(np.dot(op._eval(x) - op._eval(y), x - y)))
    return worst


def coercivity_profile(op, radii, n_dirs=64, seed=0):
    """Smallest ``||T x||_2`` over sampled points with ``||x||_2 = r``, per radius.

    ``T`` is coercive when ``||v|| -> inf`` for ``v in T(x)`` as
    ``||x|| -> inf``; a profile that grows without bound is numerical evidence
    of that, a bounded one of the opposite.  The Euclidean norm is used on
    both sides.

    Returns
    -------
    ndarray of shape (len(radii),)
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    dirs = rng.normal(size=(int(n_dirs), op.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    out = []
    for r in np.atleast_1d(np.asarray(radii, dtype=float)):
        check_positive(r, "radius")
        out.append(min(float(np.linalg.norm(op._eval(r * d))) for d in dirs))
    return np.array(out)


# -- spec strings ---------------------------------------------------------------


def _split_top(text, sep):
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts]


def _read_csv_numbers(path):
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row if v.strip()] for row in csv.reader(fh) if row]
    return np.array(rows, dtype=float)


def parse_operator(text, base_dir=None):
    """Build an operator from a spec string.

    Accepted forms: ``"skew2"``, ``"growth_linear"``, ``"identity:n=3"``,
    ``"zero:n=2"``, ``"affine:file=M.csv,b.csv"`` and
    ``"yosida(inner;rho=0.5;kernel=sep_power:p=3)"``.  Relative file paths are
    resolved against ``base_dir``.
    """
    import os

    if not isinstance(text, str) or not text.strip():
        raise SpecParseError(f"empty operator spec: {text!r}")
    text = text.strip()
    m = re.fullmatch(r"yosida\((.*)\)", text, flags=re.S)
    if m:
        parts = _split_top(m.group(1), ";")
        inner = parse_operator(parts[0], base_dir)
        opts = {}
        for item in parts[1:]:
            key, eq, val = item.partition("=")
            if not eq:
                raise SpecParseError(f"expected key=value in yosida spec, got {item!r}")
            opts[key.strip()] = val.strip()
        unknown = set(opts) - {"rho", "kernel"}
        if unknown or "rho" not in opts or "kernel" not in opts:
            raise SpecParseError("yosida spec needs exactly rho=... and kernel=...")
        try:
            rho = float(opts["rho"])
        except ValueError:
            raise SpecParseError(f"bad rho {opts['rho']!r}") from None
        if not np.isfinite(rho) or rho < 0:
            raise SpecParseError(f"rho must be nonnegative, got {rho}")
        return YosidaOperator(inner, rho, parse_kernel(opts["kernel"]))
    head, _, rest = text.partition(":")
    opts = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        if eq:
            opts[key.strip()] = val.strip()
        elif head == "affine" and "file" in opts and "bfile" not in opts:
            opts["bfile"] = item
        else:
            raise SpecParseError(f"expected key=value in operator spec, got {item!r}")
    try:
        if head == "skew2" and not opts:
            return skew2()
        if head == "growth_linear" and not opts:
            return growth_instance_linear()
        if head in ("identity", "zero") and set(opts) <= {"n"}:
            n = int(opts.get("n", 2))
            return identity_operator(n) if head == "identity" else zero_operator(n)
        if head == "affine" and "file" in opts and set(opts) <= {"file", "bfile", "b"}:
            def resolve(p):
                return p if base_dir is None or os.path.isabs(p) else os.path.join(base_dir, p)
            M = _read_csv_numbers(resolve(opts["file"]))
            bpath = opts.get("bfile", opts.get("b"))
            b = None if bpath is None else _read_csv_numbers(resolve(bpath)).ravel()
            return AffineOperator(M, b, name=f"affine({opts['file']})")
    except (OSError, ValueError) as exc:
        raise SpecParseError(f"cannot build operator {text!r}: {exc}") from None
    raise SpecParseError(f"unknown operator spec {text!r}")
