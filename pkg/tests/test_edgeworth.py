"""Expansion evaluation: dual paths, closed 1-D form, mass, Taylor terms."""

import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import random_model, random_moment_tensor, random_spd

from edgewidth.edgeworth import (
    EdgeworthModel,
    SHALLOW_ORDER_SPECS,
    density_taylor_term,
    edgeworth_density,
    edgeworth_density_grid,
    shallow_curve_coefficients,
    shallow_exact_curve,
    shallow_exact_h8_coefficient,
    shallow_relu_density,
    total_mass,
)
from edgewidth.gausslin import NotPositiveDefinite, as_spd, gaussian_density
from edgewidth.hermite import hermite_eval
from edgewidth.network import shallow_relu_moment_tensor, shallow_relu_moments


def shallow_model(n1, k_max):
    kernel = as_spd(np.array([[1.0]]))
    return EdgeworthModel(kernel, shallow_relu_moment_tensor(n1, 4), 1, k_max)


def test_from_order():
    model = EdgeworthModel.from_order(
        as_spd(np.eye(1)), shallow_relu_moment_tensor(30, 4), 2
    )
    assert model.k_max == 3


def test_validation():
    moments = shallow_relu_moment_tensor(30, 2)
    with pytest.raises(ValueError):
        EdgeworthModel(as_spd(np.eye(1)), moments, 1, 5)
    with pytest.raises(ValueError):
        EdgeworthModel(as_spd(np.eye(1)), moments, 1, 3)  # tensor only covers k<=2
    with pytest.raises(ValueError):
        EdgeworthModel(as_spd(np.eye(1)), moments, 0, 2)
    with pytest.raises(ValueError):
        EdgeworthModel(as_spd(np.eye(3)), random_moment_tensor(np.random.default_rng(0), 3, 2), 3, 2)


def test_one_dim_closed_form():
    """d = 1 curve equals phi_K (1 + sum E[Q^k]/(k! 2^k) H_2k(x/sqrt(K)))."""
    n1, k_max = 40, 3
    model = shallow_model(n1, k_max)
    xs = np.linspace(-5, 5, 101)
    got = edgeworth_density(model, xs.reshape(-1, 1))
    phi = np.exp(-0.5 * xs * xs) / math.sqrt(2 * math.pi)
    corr = np.ones_like(xs)
    for k in range(1, k_max + 1):
        coeff = float(shallow_relu_moments(n1, k)) / (math.factorial(k) * 2**k)
        corr += coeff * hermite_eval(2 * k, xs)
    np.testing.assert_allclose(got, phi * corr, rtol=0, atol=1e-14)


def test_matches_shallow_curve_helpers():
    """The general machinery reproduces the dedicated figure-curve evaluators."""
    n1 = 25
    xs = np.linspace(-4, 4, 81)
    got = edgeworth_density(shallow_model(n1, 3), xs.reshape(-1, 1))
    want = shallow_relu_density(n1, "intermediate", xs)
    np.testing.assert_allclose(got, want, atol=1e-15)
    got4 = edgeworth_density(shallow_model(n1, 4), xs.reshape(-1, 1))
    np.testing.assert_allclose(got4, shallow_exact_curve(n1, 4, xs), atol=1e-15)
    got1 = edgeworth_density(shallow_model(n1, 1), xs.reshape(-1, 1))
    np.testing.assert_allclose(got1, shallow_relu_density(n1, "gaussian", xs), atol=1e-15)


def test_gaussian_part_matches_block_product():
    rng = np.random.default_rng(3)
    kernel = random_spd(rng, 2)
    model = EdgeworthModel(kernel, random_moment_tensor(rng, 2, 2), 2, 0)
    pts = rng.normal(size=(7, 4))
    got = model.gaussian_part(pts)
    want = gaussian_density(kernel, pts[:, :2]) * gaussian_density(kernel, pts[:, 2:])
    np.testing.assert_allclose(got, want, rtol=1e-12)
    # k_max = 0 means the density is the Gaussian part itself
    np.testing.assert_allclose(edgeworth_density(model, pts), want, rtol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_dual_paths_agree_single_block(seed):
    rng = np.random.default_rng(100 + seed)
    model = random_model(rng, 2, k_max=3)
    pts = rng.normal(size=(5, 2)) * 1.5
    table = edgeworth_density(model, pts, method="table")
    tuples = edgeworth_density(model, pts, method="tuples")
    literal = edgeworth_density(model, pts, method="literal")
    np.testing.assert_allclose(table, tuples, rtol=0, atol=1e-12)
    np.testing.assert_allclose(table, literal, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_dual_paths_agree_two_blocks(seed):
    """Block-diagonal case: the literal path filters by block admissibility."""
    rng = np.random.default_rng(200 + seed)
    kernel = random_spd(rng, 2)
    model = EdgeworthModel(kernel, random_moment_tensor(rng, 2, 3), 2, 3)
    pts = rng.normal(size=(4, 4)) * 1.2
    table = edgeworth_density(model, pts, method="table")
    tuples = edgeworth_density(model, pts, method="tuples")
    literal = edgeworth_density(model, pts, method="literal")
    np.testing.assert_allclose(table, tuples, rtol=0, atol=1e-12)
    np.testing.assert_allclose(table, literal, rtol=0, atol=1e-12)


def test_density_grid_matches_pointwise():
    model = shallow_model(30, 3)
    pts = np.linspace(-6, 6, 501).reshape(-1, 1)
    np.testing.assert_array_equal(
        edgeworth_density_grid(model, pts), edgeworth_density(model, pts)
    )


def test_scalar_point_squeezes():
    model = shallow_model(30, 3)
    val = edgeworth_density(model, np.array([0.5]))
    assert isinstance(val, float)


def test_coefficient_table_shallow_values():
    model = shallow_model(20, 4)
    table = model.coefficient_table
    # the k = 1 key (2,) carries E[Q] = 0 and is dropped
    assert set(table) == {(4,), (6,), (8,)}
    assert table[(4,)] == pytest.approx(float(Fraction(5, 8 * 20)))
    assert table[(6,)] == pytest.approx(float(Fraction(11, 12 * 400)))
    assert table[(8,)] == pytest.approx(float(shallow_exact_h8_coefficient(20)))


def test_total_mass_one_dim():
    for k_max in (1, 2, 3, 4):
        mass = total_mass(shallow_model(25, k_max), tol=1e-7)
        assert abs(mass - 1.0) <= 1e-5


@pytest.mark.parametrize("seed", range(4))
def test_total_mass_seeded_two_dim(seed):
    rng = np.random.default_rng(300 + seed)
    model = random_model(rng, 2, k_max=3, magnitude=0.04)
    mass = total_mass(model, tol=1e-6)
    assert abs(mass - 1.0) <= 1e-5


def test_total_mass_two_blocks():
    rng = np.random.default_rng(41)
    kernel = random_spd(rng, 1)
    model = EdgeworthModel(kernel, random_moment_tensor(rng, 1, 3), 2, 3)
    assert abs(total_mass(model, tol=1e-6) - 1.0) <= 1e-5


def test_signed_density_goes_negative_at_tiny_width():
    """Low width makes the corrections oscillate below zero in the tails."""
    model = shallow_model(5, 3)
    xs = np.linspace(-8, 8, 2001).reshape(-1, 1)
    assert float(edgeworth_density_grid(model, xs).min()) < 0.0


# --- interpolated Taylor terms ------------------------------------------------


def fd_derivative(f, t, k, h):
    if k == 1:
        return (f(t + h) - f(t - h)) / (2 * h)
    if k == 2:
        return (f(t + h) - 2 * f(t) + f(t - h)) / (h * h)
    raise ValueError


@pytest.mark.parametrize("seed", range(20))
def test_taylor_term_matches_finite_differences(seed):
    rng = np.random.default_rng(400 + seed)
    d = int(rng.integers(1, 3))
    B = rng.normal(size=(d, d))
    K = B @ B.T + (1.5 + rng.uniform()) * np.eye(d)
    C = rng.normal(size=(d, d)) * 0.15
    A = K + C + C.T
    x = rng.normal(size=d)
    t0 = float(rng.uniform(0.2, 0.8))

    def phi(t):
        return density_taylor_term(K, A, 1, 0, t, x)

    for k in (1, 2):
        got = density_taylor_term(K, A, 1, k, t0, x)
        want = fd_derivative(phi, t0, k, 1e-3 if k == 2 else 1e-5)
        assert got == pytest.approx(want, rel=1e-5, abs=1e-9), f"k={k}"


def test_taylor_term_zero_order_is_gaussian():
    K = np.array([[1.0]])
    A = np.array([[1.3]])
    x = np.array([0.4])
    got = density_taylor_term(K, A, 1, 0, 1.0, x)
    assert got == pytest.approx(float(gaussian_density(A, x)), rel=1e-13)


def test_taylor_term_rejects_non_spd_interpolant():
    K = np.array([[1.0]])
    A = np.array([[-2.0]])
    with pytest.raises(NotPositiveDefinite):
        density_taylor_term(K, A, 1, 1, 0.9, np.array([0.0]))


# --- figure curves -------------------------------------------------------------


def test_order_spec_labels():
    assert SHALLOW_ORDER_SPECS == ("gaussian", "edg1", "intermediate", "edg2")
    with pytest.raises(ValueError):
        shallow_curve_coefficients(20, "edg3")


def test_printed_coefficients_pinned():
    coeffs = shallow_curve_coefficients(20, "edg2")
    assert coeffs[4] == Fraction(5, 8 * 20)
    assert coeffs[6] == Fraction(11, 12 * 20**2)
    assert coeffs[8] == Fraction(1573, 192 * 20**2) + Fraction(25 * 19, 64 * 20**2)


def test_printed_h8_differs_from_moment_consistent_value():
    """The published H8 rational is not E[Q^4]/384; both are kept, separately."""
    for n1 in (20, 100, 1000):
        printed = shallow_curve_coefficients(n1, "edg2")[8]
        exact = shallow_exact_h8_coefficient(n1)
        assert printed != exact
        assert exact == shallow_relu_moments(n1, 4) / 384


def test_gaussian_spec_is_standard_normal():
    xs = np.linspace(-3, 3, 7)
    want = np.exp(-0.5 * xs * xs) / math.sqrt(2 * math.pi)
    np.testing.assert_allclose(shallow_relu_density(50, "gaussian", xs), want, atol=1e-15)
