"""Legendre prox-function kernels.

Every kernel ``phi`` is strictly convex, smooth and super-coercive with
``phi(0) = 0`` and ``grad phi(0) = 0``.  The conjugate ``phi*`` and both
gradients are available in closed form.  A kernel carries an epi-scale
``scale`` so that the stored function is ``scale * phi(x / scale)``, whose
conjugate is ``scale * phi*``.

Public methods validate their input.  Methods with a leading underscore skip
validation and are meant for the inner loops of the solvers.
"""

from fractions import Fraction

import numpy as np

from ._validation import check_positive, check_vector
from .exceptions import SpecParseError


class ProxKernel:
    """Base class for prox-function kernels.

    Subclasses implement the unscaled functions ``_f0``, ``_fs0``, ``_g0``,
    ``_gs0`` and the curvature oracles ``_h0`` / ``_hs0``.  The curvature
    oracles return either a 1-d array (diagonal Hessian) or a 2-d array,
    and may contain ``inf`` where the Hessian does not exist.

    Parameters
    ----------
    scale : float
        Epi-scaling parameter ``lam`` in ``lam * phi(x / lam)``.
    dim : int or None
        Fixed dimension.  ``None`` accepts vectors of any length.
    """

    kind = "base"
    separable = True
    # Whether the Hessian of phi (resp. phi*) stays bounded on bounded sets.
    primal_curvature_bounded = True
    dual_curvature_bounded = True
    # Whether the Hessian of phi is finite everywhere (p < 2 fails at 0).
    finite_hess = True
    odd = True

    def __init__(self, scale=1.0, dim=None):
        self.scale = check_positive(scale, "scale")
        if dim is not None and (int(dim) != dim or dim < 1):
            raise ValueError(f"dim must be a positive integer, got {dim!r}")
        self.dim = None if dim is None else int(dim)

    # -- construction helpers -------------------------------------------------

    def _params(self):
        return {}

    def with_params(self, **kw):
        params = dict(self._params(), scale=self.scale, dim=self.dim)
        params.update(kw)
        return type(self)(**params)

    def epi_scale(self, lam):
        """Return the kernel ``lam * phi(. / lam)`` (scales compose)."""
        return self.with_params(scale=self.scale * check_positive(lam, "lam"))

    def __eq__(self, other):
        return (type(self) is type(other) and self._params() == other._params()
                and self.scale == other.scale and self.dim == other.dim)

    def __hash__(self):
        return hash((type(self).__name__, tuple(sorted(self._params().items())),
                     self.scale, self.dim))

    def __repr__(self):
        dim = "" if self.dim is None else f", dim={self.dim}"
        return f"{type(self).__name__}({self.spec()!r}{dim})"

    def spec(self):
        """Spec string that :func:`parse_kernel` maps back to this kernel."""
        parts = [self.kind] + [f"{k}={_fmt(v)}" for k, v in self._params().items()]
        text = parts[0] + ("" if len(parts) == 1 else ":" + ",".join(parts[1:]))
        if self.scale != 1.0:
            text += f":scale={_fmt(self.scale)}"
        return text

    # -- unvalidated scaled oracles ---------------------------------------------

    def _phi(self, x):
        s = self.scale
        return s * self._f0(x / s)

    def _phi_star(self, v):
        return self.scale * self._fs0(v)

    def _grad(self, x):
        return self._g0(x / self.scale)

    def _grad_star(self, v):
        return self.scale * self._gs0(v)

    def _hess(self, x):
        s = self.scale
        return self._h0(x / s) / s

    def _hess_star(self, v):
        return self.scale * self._hs0(v)

    # -- validated public API ---------------------------------------------------

    def _check(self, x, name):
        return check_vector(x, self.dim, name)

    def phi(self, x):
        """Value of the (epi-scaled) kernel at ``x``."""
        return float(self._phi(self._check(x, "x")))

    def phi_star(self, v):
        """Value of the convex conjugate at ``v``."""
        return float(self._phi_star(self._check(v, "v")))

    def grad(self, x):
        return self._grad(self._check(x, "x"))

    def grad_star(self, v):
        return self._grad_star(self._check(v, "v"))

    def hess(self, x):
        """Hessian of phi as a dense matrix; may contain ``inf`` entries."""
        return _as_matrix(self._hess(self._check(x, "x")))

    def hess_star(self, v):
        """Hessian of phi* as a dense matrix; may contain ``inf`` entries."""
        return _as_matrix(self._hess_star(self._check(v, "v")))

    def bregman(self, x, y):
        """Bregman distance ``D_phi(x, y)``."""
        x, y = self._check(x, "x"), self._check(y, "y")
        return _bregman(self._phi, self._grad, x, y)

    def bregman_star(self, u, v):
        """Bregman distance ``D_{phi*}(u, v)`` of the conjugate."""
        u, v = self._check(u, "u"), self._check(v, "v")
        return _bregman(self._phi_star, self._grad_star, u, v)


def _bregman(f, g, x, y):
    d = f(x) - f(y) - float(np.dot(g(y), x - y))
    # Rounding can push a tiny distance below zero.
    return max(float(d), 0.0)


def _as_matrix(h):
    h = np.asarray(h, dtype=float)
    return np.diag(h) if h.ndim == 1 else h


def _fmt(v):
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else str(v.numerator)
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def _exponent(p):
    """Return ``(p, q)`` as floats, keeping an exact fraction when given."""
    if isinstance(p, str):
        p = Fraction(p)
    pf = float(p)
    if not np.isfinite(pf) or pf <= 1:
        raise ValueError(f"exponent p must be > 1, got {p!r}")
    if isinstance(p, Fraction):
        return pf, float(p / (p - 1))
    return pf, pf / (pf - 1.0)


class SeparablePower(ProxKernel):
    """``phi(x) = sum |x_i|^p / p`` with conjugate ``sum |v_i|^q / q``."""

    kind = "sep_power"

    def __init__(self, p=2.0, scale=1.0, dim=None):
        super().__init__(scale, dim)
        self.p_raw = Fraction(p) if isinstance(p, str) else p
        self.p, self.q = _exponent(p)
        self.primal_curvature_bounded = self.finite_hess = self.p >= 2
        self.dual_curvature_bounded = self.p <= 2

    def _params(self):
        return {"p": self.p_raw}

    def _f0(self, x):
        return np.sum(np.abs(x) ** self.p) / self.p

    def _fs0(self, v):
        return np.sum(np.abs(v) ** self.q) / self.q

    def _g0(self, x):
        return np.sign(x) * np.abs(x) ** (self.p - 1)

    def _gs0(self, v):
        return np.sign(v) * np.abs(v) ** (self.q - 1)

    def _h0(self, x):
        with np.errstate(divide="ignore"):
            return (self.p - 1) * np.abs(x) ** (self.p - 2)

    def _hs0(self, v):
        with np.errstate(divide="ignore"):
            return (self.q - 1) * np.abs(v) ** (self.q - 2)


class IsotropicPower(ProxKernel):
    """``phi(x) = ||x||_2^p / p``; not separable unless ``p = 2``."""

    kind = "iso_power"

    def __init__(self, p=2.0, scale=1.0, dim=None):
        super().__init__(scale, dim)
        self.p_raw = Fraction(p) if isinstance(p, str) else p
        self.p, self.q = _exponent(p)
        self.separable = self.p == 2
        self.primal_curvature_bounded = self.finite_hess = self.p >= 2
        self.dual_curvature_bounded = self.p <= 2

    def _params(self):
        return {"p": self.p_raw}

    def _f0(self, x):
        return np.linalg.norm(x) ** self.p / self.p

    def _fs0(self, v):
        return np.linalg.norm(v) ** self.q / self.q

    @staticmethod
    def _radial(x, r):
        n = np.linalg.norm(x)
        if n == 0.0:
            return np.zeros_like(x)
        return n ** (r - 2) * x

    def _g0(self, x):
        return self._radial(x, self.p)

    def _gs0(self, v):
        return self._radial(v, self.q)

    @staticmethod
    def _radial_hess(x, r):
        n = np.linalg.norm(x)
        d = x.shape[0]
        if n == 0.0:
            if r == 2:
                return np.eye(d)
            return np.full((d, d), np.inf) if r < 2 else np.zeros((d, d))
        e = x / n
        return n ** (r - 2) * (np.eye(d) + (r - 2) * np.outer(e, e))

    def _h0(self, x):
        return self._radial_hess(x, self.p)

    def _hs0(self, v):
        return self._radial_hess(v, self.q)


class Cosh(ProxKernel):
    """``phi(x) = sum (cosh(x_i) - 1)`` with ``grad phi* = asinh``."""

    kind = "cosh"
    primal_curvature_bounded = False

    def _f0(self, x):
        return np.sum(2.0 * np.sinh(0.5 * x) ** 2)

    def _fs0(self, v):
        root = np.sqrt(1.0 + v * v)
        # v*asinh(v) - (sqrt(1+v^2) - 1), with the bracket written stably.
        return np.sum(v * np.arcsinh(v) - v * v / (root + 1.0))

    def _g0(self, x):
        return np.sinh(x)

    def _gs0(self, v):
        return np.arcsinh(v)

    def _h0(self, x):
        return np.cosh(x)

    def _hs0(self, v):
        return 1.0 / np.sqrt(1.0 + v * v)


class ExpPenalty(ProxKernel):
    """``phi(y) = sum rho (exp|y_i| - |y_i| - 1)``.

    The conjugate is ``sum (|v|+rho) log(1+|v|/rho) - |v|`` and its gradient
    ``sign(v) log(1+|v|/rho)``; both are closed form.  The kernel is twice
    differentiable with ``phi''(0) = rho``.
    """

    kind = "exp"
    primal_curvature_bounded = False

    def __init__(self, rho=0.01, scale=1.0, dim=None):
        super().__init__(scale, dim)
        self.rho = check_positive(float(rho), "rho")

    def _params(self):
        return {"rho": self.rho}

    def _f0(self, x):
        a = np.abs(x)
        return self.rho * np.sum(_expm1_minus_x(a))

    def _fs0(self, v):
        a = np.abs(v)
        t = a / self.rho
        # (a + rho) log1p(t) - a, written as rho*((1+t)log1p(t) - t).
        return self.rho * np.sum(_one_plus_t_log1p_minus_t(t))

    def _g0(self, x):
        return self.rho * np.sign(x) * np.expm1(np.abs(x))

    def _gs0(self, v):
        return np.sign(v) * np.log1p(np.abs(v) / self.rho)

    def _h0(self, x):
        return self.rho * np.exp(np.abs(x))

    def _hs0(self, v):
        return 1.0 / (self.rho + np.abs(v))


def _expm1_minus_x(a):
    """``exp(a) - 1 - a`` without cancellation for small ``a``."""
    a = np.asarray(a, dtype=float)
    out = np.expm1(a) - a
    small = a < 1e-2
    if np.any(small):
        s = a[small]
        out[small] = s * s * (0.5 + s * (1 / 6 + s * (1 / 24 + s * (1 / 120 + s / 720))))
    return out


def _one_plus_t_log1p_minus_t(t):
    """``(1+t) log(1+t) - t`` without cancellation for small ``t``."""
    t = np.asarray(t, dtype=float)
    out = (1.0 + t) * np.log1p(t) - t
    small = t < 1e-2
    if np.any(small):
        s = t[small]
        # Series: t^2/2 - t^3/6 + t^4/12 - t^5/20 + t^6/30
        out[small] = s * s * (0.5 - s * (1 / 6 - s * (1 / 12 - s * (1 / 20 - s / 30))))
    return out


_KINDS = {
    "sep_power": SeparablePower,
    "iso_power": IsotropicPower,
    "cosh": Cosh,
    "exp": ExpPenalty,
}


def _parse_number(text, name):
    text = text.strip()
    try:
        if "/" in text:
            return Fraction(text)
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise SpecParseError(f"bad value for {name}: {text!r}") from None


def parse_kernel(text, dim=None):
    """Build a kernel from a spec string.

    Examples: ``"sep_power:p=4"``, ``"iso_power:p=4/3"``, ``"cosh"``,
    ``"exp:rho=0.01"``, each optionally followed by ``":scale=0.5"``.
    Power kernels also accept the conjugate exponent as ``q=...``.
    """
    if not isinstance(text, str) or not text.strip():
        raise SpecParseError(f"empty kernel spec: {text!r}")
    head, *rest = [s.strip() for s in text.strip().split(":")]
    cls = _KINDS.get(head)
    if cls is None:
        raise SpecParseError(f"unknown kernel kind {head!r}")
    params = {}
    for chunk in rest:
        for item in filter(None, (s.strip() for s in chunk.split(","))):
            key, eq, val = item.partition("=")
            if not eq:
                raise SpecParseError(f"expected key=value in kernel spec, got {item!r}")
            params[key.strip()] = _parse_number(val, key)
    scale = float(params.pop("scale", 1.0))
    if "q" in params:
        if "p" in params:
            raise SpecParseError("give either p or q, not both")
        q = Fraction(params.pop("q")).limit_denominator(10**6)
        if q <= 1:
            raise SpecParseError(f"exponent q must be > 1, got {q}")
        params["p"] = q / (q - 1)
    allowed = {"sep_power": {"p"}, "iso_power": {"p"}, "cosh": set(), "exp": {"rho"}}[head]
    unknown = set(params) - allowed
    if unknown:
        raise SpecParseError(f"unknown parameter(s) {sorted(unknown)} for kernel {head!r}")
    try:
        return cls(**params, scale=scale, dim=dim)
    except ValueError as exc:
        raise SpecParseError(str(exc)) from None


# -- functional interface -------------------------------------------------------


def eval_phi(kernel, x):
    """Value of ``kernel`` at ``x``."""
    return kernel.phi(x)


def grad_phi(kernel, x):
    return kernel.grad(x)


def grad_phi_star(kernel, v):
    return kernel.grad_star(v)


def bregman_div(kernel, x, y):
    return kernel.bregman(x, y)


def bregman_div_star(kernel, u, v):
    return kernel.bregman_star(u, v)


def three_point_residual(kernel, u, v, w):
    """Defect in the three-point identity for ``D_{phi*}``.

    Returns ``D(w,v) - D(u,v) - D(w,u) - <grad*(u) - grad*(v), w - u>``,
    which is zero up to rounding for every kernel.  Distances are not clipped
    here so that the residual reflects the raw arithmetic.
    """
    u = kernel._check(u, "u")
    v = kernel._check(v, "v")
    w = kernel._check(w, "w")
    f, g = kernel._phi_star, kernel._grad_star

    def d(a, b):
        return f(a) - f(b) - np.dot(g(b), a - b)

    return float(d(w, v) - d(u, v) - d(w, u) - np.dot(g(u) - g(v), w - u))
