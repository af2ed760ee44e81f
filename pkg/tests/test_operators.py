import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from anisoppa.exceptions import NotAffine, SetValuedError, SpecParseError
from anisoppa.operators import (AffineOperator, DiagonalOperator, EnlargementQuery, InverseOperator,
                                YosidaOperator, check_enlargement_member, coercivity_profile, eval,
                                growth_instance_linear,
                                identity_operator, monotonicity_gap, parse_operator,
                                probe_nonmonotonicity, skew2, zero_operator)
from anisoppa.prox import IsotropicPower, SeparablePower


def test_skew_evaluation():
    assert np.array_equal(eval(skew2(), [1.0, 2.0]), [2.0, -1.0])


@pytest.mark.parametrize("x", [[0.0, 0.0], [1.5, -3.0], [1e3, 7.0]])
def test_yosida_with_zero_rho_is_inner(x):
    op = growth_instance_linear()
    assert np.array_equal(YosidaOperator(op, 0.0, SeparablePower(3)).eval(x), op.eval(x))


def test_yosida_identity_quadratic():
    # v = x - v coordinate-wise.
    y = YosidaOperator(identity_operator(2), 1.0, SeparablePower(2))
    assert np.allclose(y.eval([2.0, 0.0]), [1.0, 0.0], rtol=0, atol=1e-14)


def test_growth_instance():
    op = growth_instance_linear()
    assert np.array_equal(op.eval([2.0, -2.0]), [0.0, 0.0])
    x = np.array([4.0, -2.0])
    assert np.array_equal(op.eval(x), [0.0, 1.0])
    assert np.linalg.norm(op.eval(x)) == pytest.approx(np.linalg.norm(x - op.zero) / 2)
    assert np.all(op.sym == 0)


def test_growth_norm_relation_random(rng):
    op = growth_instance_linear()
    for x in rng.uniform(-10, 10, size=(50, 2)):
        assert np.linalg.norm(op.eval(x)) == pytest.approx(0.5 * np.linalg.norm(x - op.zero), rel=1e-14)


def test_non_monotone_matrix_rejected():
    with pytest.raises(ValueError, match="not monotone"):
        AffineOperator([[1.0, 0.0], [0.0, -1e-6]])
    AffineOperator([[1.0, 0.0], [0.0, -1e-13]])  # within tolerance


def test_inverse_requires_affine_and_nonsingular():
    with pytest.raises(NotAffine):
        InverseOperator(DiagonalOperator(np.tanh, dim=2))
    inv = InverseOperator(zero_operator(2))
    assert inv.singular
    with pytest.raises(SetValuedError):
        inv.eval([1.0, 0.0])


def test_inverse_evaluation_against_solve(rng):
    op = growth_instance_linear()
    inv = InverseOperator(op)
    for u in rng.normal(size=(10, 2)):
        x = inv.eval(u)
        assert np.allclose(op.eval(x), u, atol=1e-14)
    assert np.array_equal(inv.zero, op.eval(np.zeros(2)))


def test_diagonal_operator():
    op = DiagonalOperator([np.tanh, lambda t: t ** 3], derivs=[lambda t: 1 - np.tanh(t) ** 2,
                                                                lambda t: 3 * t * t])
    assert np.allclose(op.eval([0.5, 2.0]), [np.tanh(0.5), 8.0])
    assert np.allclose(op.jacobian([0.0, 1.0]), np.diag([1.0, 3.0]))
    with pytest.raises(ValueError):
        DiagonalOperator(np.tanh)


# -- enlargement ---------------------------------------------------------------------


def test_enlargement_graph_point_is_member():
    op = skew2()
    x = np.array([0.3, -1.1])
    res = check_enlargement_member(op, EnlargementQuery(0.0, x, op.eval(x)))
    assert res.member and res.certificate == 0.0


@pytest.mark.parametrize("delta", [0.1, 1.0, 3.0])
def test_enlargement_identity_threshold(delta):
    op = identity_operator(2)
    u = np.array([delta, 0.0])
    res = check_enlargement_member(op, EnlargementQuery(delta ** 2 / 4, np.zeros(2), u))
    assert res.member
    assert res.certificate == pytest.approx(-delta ** 2 / 4, rel=1e-14)
    assert not check_enlargement_member(op, EnlargementQuery(0.99 * delta ** 2 / 4, np.zeros(2), u)).member


def test_enlargement_unbounded_for_skew():
    res = check_enlargement_member(skew2(), EnlargementQuery(1e9, np.zeros(2), np.array([1.0, 0.0])))
    assert not res.member and res.certificate == -np.inf


def test_enlargement_requires_affine():
    with pytest.raises(NotAffine):
        check_enlargement_member(DiagonalOperator(np.tanh, dim=2),
                                 EnlargementQuery(0.0, np.zeros(2), np.zeros(2)))
    with pytest.raises(ValueError):
        EnlargementQuery(-1.0, np.zeros(2), np.zeros(2))


def test_enlargement_certificate_against_numerical_infimum(rng):
    # Oracle: minimize <y - x, T(y) - u> over y with a generic optimizer.
    M = np.array([[2.0, 1.0], [-0.5, 1.0]])
    op = AffineOperator(M, b=[0.3, -0.2])
    for _ in range(5):
        x, u = rng.normal(size=(2, 2))
        cert = check_enlargement_member(op, EnlargementQuery(0.0, x, u)).certificate
        res = minimize(lambda y: (y - x) @ (op.eval(y) - u), x, method="BFGS",
                       options={"gtol": 1e-12})
        assert cert == pytest.approx(res.fun, abs=1e-9)
        # No sampled point may undercut the infimum.
        ys = x + rng.normal(scale=3.0, size=(200, 2))
        assert min((y - x) @ (op.eval(y) - u) for y in ys) >= cert - 1e-12


coords = st.floats(-5, 5, allow_nan=False)


@given(st.lists(coords, min_size=6, max_size=6), st.floats(0, 10), st.floats(0, 10))
def test_enlargement_nesting(vals, e1, extra):
    M = np.array([[1.0, 2.0], [-2.0, 0.5]])
    op = AffineOperator(M)
    x, u = np.array(vals[:2]), np.array(vals[2:4])
    if check_enlargement_member(op, EnlargementQuery(e1, x, u)).member:
        assert check_enlargement_member(op, EnlargementQuery(e1 + extra, x, u)).member


@given(st.lists(coords, min_size=2, max_size=2), st.sampled_from([0.25, 1.0]))
def test_yosida_value_is_in_enlargement_of_a_shifted_point(xs, rho):
    # The Yosida value sits in the enlargement at x once eps reaches ||x - v||^2 / 4.
    op = identity_operator(2)
    k = SeparablePower(2)
    x = np.array(xs)
    v = YosidaOperator(op, rho, k).eval(x)
    res = check_enlargement_member(op, EnlargementQuery(0.0, x, v))
    eps_needed = -res.certificate
    assert eps_needed == pytest.approx(0.25 * np.sum((x - v) ** 2), abs=1e-10)
    assert check_enlargement_member(op, EnlargementQuery(eps_needed + 1e-12, x, v)).member


# -- Yosida properties ------------------------------------------------------------------


@pytest.mark.parametrize("rho", [0.25, 1.0])
@pytest.mark.parametrize("p", [2, 3])
def test_yosida_preserves_zero(rho, p):
    op = growth_instance_linear()
    y = YosidaOperator(op, rho, SeparablePower(p))
    assert np.max(np.abs(y.eval(op.zero))) <= 1e-10


@pytest.mark.parametrize("p", [2, 3])
def test_yosida_monotone_on_samples(p, rng):
    y = YosidaOperator(growth_instance_linear(), 0.5, SeparablePower(p))
    pts = rng.uniform(-5, 5, size=(400, 2))
    assert monotonicity_gap(y, zip(pts[:200], pts[200:])) >= -1e-10


def test_yosida_jacobian_against_finite_differences(rng):
    y = YosidaOperator(growth_instance_linear(), 0.5, SeparablePower(3))
    x = rng.uniform(-3, 3, size=2)
    J = y.jacobian(x)
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1e-6
        col = (y.eval(x + e) - y.eval(x - e)) / 2e-6
        assert np.allclose(J[:, i], col, rtol=1e-5, atol=1e-7)


# -- probes ------------------------------------------------------------------------------


def test_probe_sep_power_witness():
    val = probe_nonmonotonicity(skew2(), SeparablePower(4), [((1.0, 2.0), (0.0, 0.0))])
    assert val == pytest.approx(2 ** (1 / 3) - 2, abs=1e-12)


def test_probe_iso_power_witness():
    # The witness uses q = 4 on the dual side, i.e. p = 4/3 for phi.
    val = probe_nonmonotonicity(skew2(), IsotropicPower("4/3"), [((1.0, 4.0), (2.0, 3.0))])
    assert val == pytest.approx(-20.0, abs=1e-9)


def test_probe_monotone_composition(rng):
    pts = rng.normal(size=(20, 2))
    pairs = list(zip(pts[:10], pts[10:]))
    val = probe_nonmonotonicity(identity_operator(2), SeparablePower(2), pairs)
    assert val == pytest.approx(min(np.sum((x - y) ** 2) for x, y in pairs), rel=1e-14)


# -- spec strings --------------------------------------------------------------------


def test_parse_named():
    assert repr(parse_operator("skew2")) == "skew2"
    assert parse_operator("identity:n=3").dim == 3
    assert parse_operator("zero").is_zero_map
    assert np.array_equal(parse_operator("growth_linear").zero, [2.0, -2.0])


def test_parse_affine_files(tmp_path):
    (tmp_path / "M.csv").write_text("1,0\n0,2\n")
    (tmp_path / "b.csv").write_text("1\n2\n")
    op = parse_operator("affine:file=M.csv,b.csv", base_dir=str(tmp_path))
    assert np.array_equal(op.eval([1.0, 1.0]), [0.0, 0.0])


def test_parse_yosida():
    op = parse_operator("yosida(identity;rho=1;kernel=sep_power:p=2)")
    assert isinstance(op, YosidaOperator)
    assert np.allclose(op.eval([2.0, 0.0]), [1.0, 0.0])


@pytest.mark.parametrize("text", ["", "rotate", "identity:m=2", "yosida(skew2;rho=1)",
                                  "yosida(skew2;rho=-1;kernel=cosh)", "affine:file=missing.csv",
                                  "yosida(skew2;rho=1;kernel=nope)"])
def test_parse_errors(text):
    with pytest.raises(SpecParseError):
        parse_operator(text)


def test_parse_rejects_nonmonotone_file(tmp_path):
    (tmp_path / "M.csv").write_text("-1,0\n0,1\n")
    with pytest.raises(SpecParseError):
        parse_operator(f"affine:file={tmp_path / 'M.csv'}")


def test_coercivity_profile():
    # Growth instance: ||T x||_2 = ||x - x*||_2 / 2 >= (r - ||x*||_2) / 2 on the sphere of radius r.
    prof = coercivity_profile(growth_instance_linear(), [10.0, 100.0, 1000.0])
    assert np.all(prof >= (np.array([10.0, 100.0, 1000.0]) - np.sqrt(8)) / 2 - 1e-12)
    assert np.all(np.diff(prof) > 0)
    assert np.array_equal(coercivity_profile(zero_operator(2), [1.0, 1e6]), [0.0, 0.0])
    with pytest.raises(ValueError):
        coercivity_profile(skew2(), [0.0])
