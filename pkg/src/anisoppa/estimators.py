"""Estimator-style wrappers over the functional core.

These follow the scikit-learn conventions where they fit: constructor
arguments are stored verbatim (so ``get_params``/``set_params``/``clone``
work), ``fit`` returns ``self`` and learned state ends in an underscore.
There is no training data in the statistical sense; ``fit`` takes a
starting point or a problem instead.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .alm import AlmConfig, primal_dual_gap, run_alm
from .ppa import PpaConfig, run_ppa
from .prox import ProxKernel, SeparablePower, parse_kernel
from .resolvents import SolverTolerances, anisotropic_resolvent


def _kernel(k):
    if k is None:
        return SeparablePower(2)
    if isinstance(k, ProxKernel):
        return k
    return parse_kernel(k)


class AnisotropicResolvent(TransformerMixin, BaseEstimator):
    """Row-wise anisotropic resolvent ``(id + grad phi* o T)^{-1}``.

    Parameters
    ----------
    operator : Operator
    kernel : ProxKernel or str, default "sep_power:p=2"
    tol : float, default 1e-12
        Residual tolerance of each solve.

    Examples
    --------
    >>> from anisoppa.operators import identity_operator
    >>> AnisotropicResolvent(identity_operator(2)).fit_transform([[2.0, 4.0]])
    array([[1., 2.]])
    """

    def __init__(self, operator=None, kernel="sep_power:p=2", tol=1e-12):
        self.operator = operator
        self.kernel = kernel
        self.tol = tol

    def fit(self, X=None, y=None):
        if self.operator is None:
            raise ValueError("an operator is required")
        self.kernel_ = _kernel(self.kernel)
        self.n_features_in_ = self.operator.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "kernel_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        tol = SolverTolerances(residual_tol=self.tol)
        out = np.empty_like(X)
        dual = np.empty_like(X)
        for i, x in enumerate(X):
            res = anisotropic_resolvent(self.operator, self.kernel_, x, tol)
            out[i], dual[i] = res.z, res.v
        self.dual_ = dual
        return out


class AnisotropicPPA(BaseEstimator):
    """Relaxed anisotropic proximal point method.

    Parameters
    ----------
    operator : Operator
    kernel : ProxKernel or str
    lam : float in (0, 1]
    max_outer : int
    dual_norm_tol, step_tol : float
        Stopping tolerances on ``||v^k||_q`` and ``||x^{k+1} - x^k||_inf``.
    eps0 : float
        Start of the inner tolerance schedule.
    x_star : array_like, optional
        Known zero, used for distance columns.  Defaults to the operator's
        ``zero`` metadata when present.

    Attributes
    ----------
    trace_ : IterateTrace
    solution_ : ndarray
    n_iter_ : int
    """

    def __init__(self, operator=None, kernel="sep_power:p=2", lam=1.0, max_outer=200,
                 dual_norm_tol=1e-10, step_tol=0.0, eps0=1e-12, x_star=None):
        self.operator = operator
        self.kernel = kernel
        self.lam = lam
        self.max_outer = max_outer
        self.dual_norm_tol = dual_norm_tol
        self.step_tol = step_tol
        self.eps0 = eps0
        self.x_star = x_star

    def fit(self, x0, y=None):
        if self.operator is None:
            raise ValueError("an operator is required")
        cfg = PpaConfig(kernel=_kernel(self.kernel), lam=self.lam, eps0=self.eps0,
                        max_outer=self.max_outer, dual_norm_tol=self.dual_norm_tol,
                        step_tol=self.step_tol)
        x_star = self.x_star if self.x_star is not None else getattr(self.operator, "zero", None)
        self.trace_ = run_ppa(self.operator, cfg, np.ravel(np.asarray(x0, dtype=float)), x_star)
        self.solution_ = self.trace_.x_final
        self.n_iter_ = len(self.trace_)
        return self

    def predict(self, X=None):
        """Return the computed zero (``X`` is ignored)."""
        check_is_fitted(self, "solution_")
        return self.solution_


class AnisotropicProximalALM(BaseEstimator):
    """Proximal augmented Lagrangian method with anisotropic kernels.

    Parameters
    ----------
    primal_kernel, dual_kernel : ProxKernel or str
    max_outer : int
    eps0 : float
        Start of the inner tolerance schedule.
    gap_tol, kkt_tol : float
        Optional stopping tolerances (0 disables).

    Attributes
    ----------
    x_, y_ : ndarray
    trace_ : AlmTrace
    gap_ : float
    n_iter_ : int
    """

    def __init__(self, primal_kernel="sep_power:p=2", dual_kernel="sep_power:p=2", max_outer=300,
                 eps0=1e-3, gap_tol=0.0, kkt_tol=0.0):
        self.primal_kernel = primal_kernel
        self.dual_kernel = dual_kernel
        self.max_outer = max_outer
        self.eps0 = eps0
        self.gap_tol = gap_tol
        self.kkt_tol = kkt_tol

    def fit(self, problem, y=None, x0=None, y0=None):
        cfg = AlmConfig(primal_kernel=_kernel(self.primal_kernel), dual_kernel=_kernel(self.dual_kernel),
                        max_outer=self.max_outer, eps0=self.eps0, gap_tol=self.gap_tol,
                        kkt_tol=self.kkt_tol)
        self.trace_ = run_alm(problem, cfg, x0, y0)
        self.x_, self.y_ = self.trace_.x[-1], self.trace_.y[-1]
        self.gap_ = primal_dual_gap(problem, self.x_, self.y_)
        self.n_iter_ = len(self.trace_) - 1
        return self
