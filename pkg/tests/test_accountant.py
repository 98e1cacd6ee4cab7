import math

import numpy as np
import pytest

from latticefl.accountant import (
    AccountantState,
    RdpCurve,
    amplify_by_subsampling,
    base_curve,
    compose,
    default_alpha_grid,
    to_dp,
)
from latticefl.dgauss import DiscreteGaussian
from latticefl.lattice import LatticeSpec


def test_grid_covers_required_orders():
    grid = default_alpha_grid()
    for a in [1 + 1e-3, 1.5, 2, 3, 64, 128, 256]:
        assert a in grid
    assert set(range(2, 65)) <= {int(a) for a in grid if float(a).is_integer()}


def test_base_curve_simple_point():
    assert base_curve(1.0, 1.0).at(2.0) == pytest.approx(1.0)


def test_base_curve_quadruple_sensitivity():
    # clip bound 1 with sensitivity 4: eps(3) = 8 * 3 * 1 / sigma^2 at sigma=2
    assert base_curve(2.0, 4.0).at(3.0) == pytest.approx(6.0)


def test_base_curve_vanishes_with_large_sigma():
    curve = base_curve(1e9, 1.0)
    assert np.all(curve.eps < 1e-15)


def test_base_curve_rejects_nonpositive():
    with pytest.raises(ValueError):
        base_curve(0.0, 1.0)
    with pytest.raises(ValueError):
        base_curve(1.0, -1.0)


def test_curve_validation():
    with pytest.raises(ValueError):
        RdpCurve(np.array([1.0, 2.0]), np.array([0.0, 1.0]))  # order 1 not allowed
    with pytest.raises(ValueError):
        RdpCurve(np.array([3.0, 2.0]), np.array([0.0, 1.0]))  # not increasing


def test_amplify_gamma_one_is_identity():
    curve = base_curve(2.0, 1.0)
    assert amplify_by_subsampling(curve, 1.0) is curve


def test_amplify_rejects_bad_gamma():
    with pytest.raises(ValueError):
        amplify_by_subsampling(base_curve(1.0, 1.0), 0.0)
    with pytest.raises(ValueError):
        amplify_by_subsampling(base_curve(1.0, 1.0), 1.5)


def test_amplify_quadratic_in_gamma():
    curve = base_curve(4.0, 1.0)
    e_full = amplify_by_subsampling(curve, 1e-2).at(2.0)
    e_half = amplify_by_subsampling(curve, 5e-3).at(2.0)
    assert e_half <= e_full / 3.9


def test_amplify_matches_direct_formula():
    # independent re-evaluation at alpha = 2, sigma = 4 x sensitivity
    sigma, gamma = 4.0, 0.01
    eps2 = 2.0 / (2.0 * sigma**2)
    expected = math.log(
        1.0 + gamma**2 * 1.0 * min(4.0 * (math.exp(eps2) - 1.0), 2.0 * math.exp(eps2))
    )
    got = amplify_by_subsampling(base_curve(sigma, 1.0), gamma).at(2.0)
    assert got == pytest.approx(expected, rel=1e-12)


def test_amplify_direct_formula_alpha_four():
    # full sum including the j = 3, 4 terms, evaluated longhand
    sigma, gamma, alpha = 2.0, 0.05, 4
    eps = lambda j: j / (2.0 * sigma**2)
    total = 1.0 + gamma**2 * math.comb(alpha, 2) * min(
        4.0 * (math.exp(eps(2)) - 1.0), 2.0 * math.exp(eps(2))
    )
    for j in range(3, alpha + 1):
        total += 2.0 * gamma**j * math.comb(alpha, j) * math.exp((j - 1) * eps(j))
    expected = math.log(total) / (alpha - 1)
    got = amplify_by_subsampling(base_curve(sigma, 1.0), gamma).at(4.0)
    assert got == pytest.approx(expected, rel=1e-12)


def test_amplified_curve_nondecreasing():
    for gamma in (0.01, 0.1, 0.5):
        amped = amplify_by_subsampling(base_curve(3.0, 1.0), gamma)
        assert amped.is_nondecreasing(slack=1e-12)


def test_amplify_never_hurts_at_small_gamma():
    base = base_curve(3.0, 1.0)
    amped = amplify_by_subsampling(base, 0.05)
    # subsampling at small gamma shrinks the moderate orders
    for a in (2.0, 4.0, 8.0):
        assert amped.at(a) < base.at(a)


def test_compose_zero_rounds():
    curve = compose(base_curve(1.0, 1.0), 0)
    assert np.all(curve.eps == 0.0)


def test_compose_additivity():
    flat = RdpCurve(default_alpha_grid(), np.ones_like(default_alpha_grid()))
    assert np.all(compose(flat, 2).eps == 2.0)


def test_compose_rejects_negative():
    with pytest.raises(ValueError):
        compose(base_curve(1.0, 1.0), -1)


def test_sqrt_t_regime_ratio():
    amped = amplify_by_subsampling(base_curve(8.0, 1.0), 0.1)
    for T in (100, 400):
        eps_t, _ = to_dp(compose(amped, T), 1e-5)
        eps_4t, _ = to_dp(compose(amped, 4 * T), 1e-5)
        assert eps_4t / eps_t <= 2.2


def test_to_dp_flat_curve():
    flat = RdpCurve(default_alpha_grid(), np.ones_like(default_alpha_grid()))
    eps, _ = to_dp(flat, math.exp(-1.0))
    assert eps <= 2.0 + 1e-12  # candidate at alpha = 2 is 1 + 1/(2-1)


def test_to_dp_delta_near_one():
    curve = base_curve(1.0, 1.0)
    eps, alpha = to_dp(curve, 1.0 - 1e-12)
    assert eps == pytest.approx(curve.eps.min(), abs=1e-8)
    assert alpha == pytest.approx(curve.alphas[0])


def test_to_dp_matches_dense_grid():
    # Gaussian-style curve eps(alpha) = alpha / 2 at delta = 1e-5
    grid = default_alpha_grid()
    curve = RdpCurve(grid, grid / 2.0)
    dense = np.linspace(grid[0], grid[-1], 10 * grid.size)
    dense_curve = RdpCurve(dense, dense / 2.0)
    eps, _ = to_dp(curve, 1e-5)
    eps_dense, _ = to_dp(dense_curve, 1e-5)
    assert eps <= 1.02 * eps_dense
    assert eps >= eps_dense


def test_to_dp_rejects_bad_delta():
    with pytest.raises(ValueError):
        to_dp(base_curve(1.0, 1.0), 0.0)
    with pytest.raises(ValueError):
        to_dp(base_curve(1.0, 1.0), 1.0)


def test_epsilon_monotonicity():
    def eps(sigma=2.0, rounds=10, gamma=0.1, delta=1e-5):
        state = AccountantState(sigma=sigma, sensitivity=1.0, gamma=gamma)
        state.record_round(rounds)
        return state.epsilon(delta)[0]

    assert eps(sigma=3.0) < eps(sigma=2.0)  # strictly decreasing in sigma
    assert eps(rounds=20) > eps(rounds=10)
    assert eps(gamma=0.2) > eps(gamma=0.1)
    assert eps(delta=1e-3) < eps(delta=1e-7)


def test_closed_form_dominates_numeric_oracle():
    # gamma = 1: the accountant's curve must upper-bound the truncated-sum
    # divergence curve pointwise, hence also after conversion.
    spec = LatticeSpec(g_max=1.0, k=3, q=7)  # step 1
    sigma_units = 2.0
    d = DiscreteGaussian(sigma_units * spec.step, spec)
    grid = default_alpha_grid()
    closed = compose(base_curve(sigma_units, 1.0, grid), 5)
    numeric = RdpCurve(grid, 5 * np.array([d.renyi_divergence(1, a) for a in grid]))
    assert np.all(closed.eps >= numeric.eps - 1e-12)
    for delta in (1e-7, 1e-5, 1e-2):
        assert to_dp(closed, delta)[0] >= to_dp(numeric, delta)[0] - 1e-12


def test_accountant_state_ledger():
    state = AccountantState(sigma=2.0, sensitivity=1.0, gamma=0.5)
    assert state.epsilon(1e-5)[0] == 0.0
    state.record_round(3)
    np.testing.assert_allclose(state.cumulative.eps, 3 * state.per_round.eps)
    assert state.rounds_recorded == 3
