import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from anisoppa.exceptions import InsufficientData, ResolventFailure
from anisoppa.operators import (YosidaOperator, growth_instance_linear, identity_operator, skew2)
from anisoppa.ppa import (PPA_COLUMNS, PpaConfig, estimate_order, fejer_report, halfspace_report,
                          q_factor, run_ppa, uniform_monotone_suite)
from anisoppa.prox import Cosh, IsotropicPower, SeparablePower
from anisoppa.resolvents import SolverTolerances


def _cfg(kernel, **kw):
    kw.setdefault("dual_norm_tol", 0.0)
    return PpaConfig(kernel=kernel, **kw)


def test_start_at_zero_stops_immediately():
    op = growth_instance_linear()
    tr = run_ppa(op, PpaConfig(SeparablePower(3)), op.zero)
    assert len(tr) == 1 and np.all(tr.v[0] == 0)
    assert tr.meta["stop"] == "dual_norm"


def test_identity_quadratic_halves():
    tr = run_ppa(identity_operator(2), _cfg(SeparablePower(2), max_outer=10), [8.0, -4.0])
    xs = np.array(tr.x + [tr.x_final])
    assert np.allclose(xs[1:], xs[:-1] / 2, rtol=0, atol=1e-14)


def test_trace_invariants(rng):
    for lam in (1.0, 0.6):
        k = SeparablePower(3)
        tr = run_ppa(growth_instance_linear(), _cfg(k, lam=lam, max_outer=15), rng.uniform(-5, 5, 2))
        xs = tr.x + [tr.x_final]
        for i in range(len(tr)):
            assert np.max(np.abs(tr.v[i] - k.grad(tr.x[i] - tr.z[i]))) <= 1e-10
            assert np.array_equal(xs[i + 1], tr.x[i] + lam * (tr.z[i] - tr.x[i]))
        assert list(tr.rows[0]) == PPA_COLUMNS


def test_dual_bregman_equals_primal_bregman():
    k = SeparablePower(3)
    tr = run_ppa(growth_instance_linear(), _cfg(k, max_outer=10), [5.0, 1.0])
    for i in range(len(tr)):
        y = tr.x[i] - tr.x[i + 1] if i + 1 < len(tr) else tr.x[i] - tr.x_final
        assert tr.rows[i]["bregman_to_zero"] == pytest.approx(k.bregman(np.zeros(2), y), rel=1e-10,
                                                             abs=1e-14)


def test_skew_dual_fejer():
    k = SeparablePower(4)
    tr = run_ppa(skew2(), _cfg(k, max_outer=60), [1.0, 1.0])
    d = tr.column("bregman_to_zero")
    assert np.all(np.diff(d) <= 1e-12 * d[:-1])
    assert min(fejer_report(tr, k)) >= -1e-10


def test_skew_not_fejer_in_euclidean_norm():
    tr = run_ppa(skew2(), _cfg(SeparablePower(4), max_outer=200), [100.0, 100.0])
    d2 = np.array([np.linalg.norm(x) for x in tr.x])
    # Monotone in the conjugate exponent q = 4/3, not in p.
    dq = np.array([np.sum(np.abs(x) ** (4 / 3)) * 3 / 4 for x in tr.x])
    assert np.any(np.diff(d2) > 0)
    assert np.all(np.diff(dq) <= 1e-12 * dq[:-1])


def test_fejer_report_edge_cases():
    tr = run_ppa(identity_operator(2), _cfg(SeparablePower(2), max_outer=1), [1.0, 1.0])
    assert fejer_report(tr, SeparablePower(2)) == []


def test_fejer_identity_closed_form():
    # Iterates halve, so <x^{k+2} - x^{k+1}, v^{k+1} - v^k> = |x^0|^2 / 2^(2k+4) >= 0.
    tr = run_ppa(identity_operator(2), _cfg(SeparablePower(2), max_outer=8), [1.0, 2.0])
    xs = tr.x + [tr.x_final]
    for k in range(len(tr) - 1):
        term = np.dot(xs[k + 2] - xs[k + 1], tr.v[k + 1] - tr.v[k])
        assert term == pytest.approx(5.0 / 2 ** (2 * k + 4), rel=1e-12)
    assert min(fejer_report(tr, SeparablePower(2))) >= -1e-12


def test_halfspace_report():
    op = growth_instance_linear()
    tr = run_ppa(op, _cfg(SeparablePower(3), max_outer=20), [5.0, 3.0])
    rep = halfspace_report(tr, op.zero)
    assert all(old >= 0 for old, _ in rep)
    assert all(sol <= 1e-10 for _, sol in rep)
    tr0 = run_ppa(op, PpaConfig(SeparablePower(3)), op.zero)
    assert halfspace_report(tr0, op.zero) == [(0.0, 0.0)]


def test_skew_separation_strictly_positive():
    tr = run_ppa(skew2(), _cfg(SeparablePower(4), max_outer=30), [1.0, 1.0])
    rep = halfspace_report(tr, np.zeros(2))
    assert all(old > 0 for (old, _), v in zip(rep, tr.v) if np.any(v != 0))
    assert np.all(tr.v[-1] == 0) and rep[-1][0] == 0


# -- rates ---------------------------------------------------------------------------


def test_order_of_linear_sequence():
    order, rate = estimate_order(0.5 ** np.arange(30))
    assert order == pytest.approx(1.0, abs=1e-12) and rate == pytest.approx(0.5, rel=1e-10)


def test_order_of_quadratic_sequence():
    e = [0.5]
    for _ in range(5):
        e.append(e[-1] ** 2)
    order, rate = estimate_order(e)
    assert order == pytest.approx(2.0, abs=1e-10) and rate == pytest.approx(1.0, rel=1e-8)


def test_order_needs_three_pairs():
    with pytest.raises(InsufficientData):
        estimate_order([1.0, 0.5, 0.25])
    with pytest.raises(InsufficientData):
        estimate_order([1.0, 0.1, 1e-20, 1e-40])
    with pytest.raises(InsufficientData):
        q_factor([0.0, 0.0])


def test_euclidean_rate_on_growth_instance():
    op = growth_instance_linear()
    tr = run_ppa(op, _cfg(IsotropicPower(2), max_outer=300, dual_norm_tol=1e-12), [0.0, 0.0])
    d = tr.column("dist_2")
    order, rate = estimate_order(d, tail=20)
    assert order == pytest.approx(1.0, abs=0.02)
    assert q_factor(d, tail=20) <= 2 / np.sqrt(5) + 0.02
    # Each Euclidean step is an exact rotation-contraction by 2/sqrt(5).
    assert np.allclose(d[1:30] / d[:29], 2 / np.sqrt(5), rtol=1e-10)


def test_anisotropic_superlinear_on_growth_instance():
    op = growth_instance_linear()
    tr = run_ppa(op, _cfg(SeparablePower(3), max_outer=25, dual_norm_tol=1e-12), [0.0, 0.0])
    assert tr.meta["stop"] == "dual_norm"
    order, _ = estimate_order(tr.column("dist_p"), tail=3)
    assert order >= 1.9


# -- relaxation and uniform monotonicity ---------------------------------------------------


@pytest.mark.parametrize("lam", [0.5, 0.8])
def test_relaxation_matches_yosida_unit_step(lam):
    op = growth_instance_linear()
    k = SeparablePower(3)
    a = run_ppa(op, _cfg(k, lam=lam, max_outer=30), [4.0, 1.0])
    b = run_ppa(YosidaOperator(op, 1 - lam, k), _cfg(k.epi_scale(lam), max_outer=30), [4.0, 1.0])
    # The Yosida route may hit v = 0 exactly and stop first.
    assert len(b) >= 20 and b.meta["stop"] in ("max_outer", "dual_norm")
    assert max(np.max(np.abs(va - vb)) for va, vb in zip(a.v, b.v)) <= 1e-8


@pytest.mark.parametrize("kernel", [SeparablePower(2), SeparablePower(4), Cosh()])
def test_uniform_monotone_suite(kernel):
    rep = uniform_monotone_suite(kernel)
    assert rep["passed"]
    assert all(r["iterations"] <= 500 for r in rep["runs"])


def test_identity_p4_iterates_against_scalar_recursion():
    # Each step solves z + z^(1/3) = x per coordinate.
    tr = run_ppa(identity_operator(2), _cfg(SeparablePower(4), max_outer=10), [3.0, -2.0])
    xs = tr.x + [tr.x_final]
    for k in range(len(tr)):
        ref = [brentq(lambda z, t=t: z + np.cbrt(z) - t, -abs(t) - 1, abs(t) + 1, xtol=1e-300,
                      rtol=1e-15) if t != 0 else 0.0 for t in xs[k]]
        assert np.allclose(xs[k + 1], ref, rtol=1e-10, atol=1e-12)


# -- configuration, failures and output ------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        PpaConfig(SeparablePower(2), lam=0.0)
    with pytest.raises(ValueError):
        PpaConfig(SeparablePower(2), lam=1.5)
    with pytest.raises(ValueError):
        PpaConfig(SeparablePower(2), max_outer=0)
    with pytest.raises(TypeError):
        PpaConfig("sep_power:p=2")
    cfg = PpaConfig(SeparablePower(2), eps0=1e-3)
    assert cfg.inner_tol(0) == 1e-3 and cfg.inner_tol(100) == 1e-12


def test_resolvent_failure_carries_partial_trace():
    cfg = PpaConfig(SeparablePower(3), dual_norm_tol=0.0, max_outer=5, eps0=1e-12,
                    solver=SolverTolerances(max_iters=2))
    with pytest.raises(ResolventFailure) as info:
        run_ppa(growth_instance_linear(), cfg, [60.0, -40.0])
    assert info.value.trace is not None
    assert info.value.iteration == len(info.value.trace)


def test_csv_output():
    tr = run_ppa(identity_operator(2), _cfg(SeparablePower(2), max_outer=3), [1.0, 0.0])
    buf = io.StringIO()
    tr.to_csv(buf, header_lines=["kind=ppa"])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# kind=ppa"
    assert lines[1] == ",".join(PPA_COLUMNS)
    assert len(lines) == 2 + 3
    assert lines[2].split(",")[3] == "nan"  # no previous dual iterate at k = 0
    assert tr.to_csv_string() == "\n".join(lines[1:]) + "\n"


@given(st.floats(0.05, 1.0), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_dual_norm_decreases_for_skew(lam, x0):
    # Dual iterates of a monotone linear field never grow in the matching norm.
    k = SeparablePower(2)
    tr = run_ppa(skew2(), _cfg(k, lam=lam, max_outer=8), x0)
    d = tr.column("dual_norm_q")
    assert np.all(np.diff(d) <= 1e-12 * np.maximum(d[:-1], 1e-300) + 1e-300)
