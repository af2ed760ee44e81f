import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from anisoppa.alm import build_zero_sum_game
from anisoppa.estimators import AnisotropicPPA, AnisotropicProximalALM, AnisotropicResolvent
from anisoppa.operators import growth_instance_linear, identity_operator
from anisoppa.prox import SeparablePower
from anisoppa.resolvents import anisotropic_resolvent


def test_resolvent_transformer_matches_functional_core(rng):
    op = growth_instance_linear()
    X = rng.uniform(-5, 5, size=(6, 2))
    est = AnisotropicResolvent(op, "sep_power:p=3")
    Z = est.fit_transform(X)
    for x, z, v in zip(X, Z, est.dual_):
        res = anisotropic_resolvent(op, SeparablePower(3), x)
        assert np.array_equal(z, res.z) and np.array_equal(v, res.v)


def test_resolvent_transformer_validation():
    est = AnisotropicResolvent(identity_operator(2))
    with pytest.raises(NotFittedError):
        est.transform([[1.0, 2.0]])
    est.fit()
    with pytest.raises(ValueError):
        est.transform([[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        AnisotropicResolvent().fit()


def test_params_and_clone():
    est = AnisotropicPPA(growth_instance_linear(), kernel="sep_power:p=3", lam=0.5, max_outer=40)
    params = est.get_params()
    assert params["lam"] == 0.5 and params["kernel"] == "sep_power:p=3"
    twin = clone(est)
    assert twin.get_params()["max_outer"] == 40 and twin is not est
    est.set_params(lam=1.0)
    assert est.lam == 1.0


def test_ppa_estimator():
    est = AnisotropicPPA(growth_instance_linear(), kernel=SeparablePower(3), dual_norm_tol=1e-12)
    with pytest.raises(NotFittedError):
        est.predict()
    est.fit([0.0, 0.0])
    assert np.allclose(est.predict(), [2.0, -2.0], atol=1e-8)
    assert est.n_iter_ == len(est.trace_) <= 25
    assert est.trace_.meta["stop"] == "dual_norm"


def test_alm_estimator():
    game = build_zero_sum_game(6, 7, seed=2)
    est = AnisotropicProximalALM(primal_kernel="sep_power:p=3", gap_tol=1e-7).fit(game)
    assert est.gap_ <= 1e-7
    assert est.n_iter_ == len(est.trace_) - 1
    assert abs(est.x_.sum() - 1) <= 1e-12 and abs(est.y_.sum() - 1) <= 1e-9
