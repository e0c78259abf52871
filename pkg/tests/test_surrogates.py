import math

import numpy as np
import pytest
from conftest import random_binary_state
from hypothesis import given
from hypothesis import strategies as st

from rsmauav.channel import PropagationParams
from rsmauav.geometry import all_blockages
from rsmauav.rsma import Association, NetworkState, PowerAllocation, compute_rates, compute_rates_noma
from rsmauav.scenario import load_default_scenario
from rsmauav.surrogates import (
    LN2,
    NegativeMultiplier,
    build_expansion,
    penalty,
    penalty_terms,
    position_surrogate,
    power_assoc_surrogate,
)

SC = load_default_scenario()
BLOCK = SC.blockages()


def random_expansion(seed, common=True, lam_scale=0.05):
    rng = np.random.default_rng(seed)
    K, M = SC.n_users, SC.uav_count
    pos = np.column_stack([rng.uniform(0, 800, M), rng.uniform(0, 800, M), rng.uniform(101, 400, M)])
    state = random_binary_state(rng, K, M, p_max=SC.p_max, common=common, positions=pos)
    lam = rng.uniform(0, lam_scale, (K, M))
    return build_expansion(state, BLOCK, SC.users, SC.propagation, lam, SC.p_max, include_common=common)


def true_rate(exp):
    f = compute_rates if exp.include_common else compute_rates_noma
    return f(exp.state, exp.gains, exp.noise).per_user_total


def weakest_common(exp, positions=None):
    """Per UAV, the user holding the smallest common piece."""
    if not exp.include_common:
        return []
    com = exp.piece_values(exp.common_terms, positions)
    return [order[int(np.argmin(com[order]))] if order else None for order in exp.orders]


def sample_powers(rng, exp, n):
    """Random power vectors inside every UAV's budget (boundary included)."""
    M = exp.n_uavs
    out = []
    for _ in range(n):
        p = np.zeros_like(exp.p_vec)
        for m in range(M):
            idx = np.flatnonzero(exp.uav_of == m)
            if not exp.include_common:
                idx = idx[idx >= M]
            if len(idx) == 0:
                continue
            w = rng.dirichlet(np.ones(len(idx) + 1)) * exp.p_max
            p[idx] = w[:-1] if rng.random() < 0.7 else w[:-1] / w[:-1].sum() * exp.p_max
        out.append(p)
    return out


# ---------------------------------------------------------------- coefficients


def test_phi_for_free_space_exponent():
    params = PropagationParams()
    users = np.array([[0.0, 0.0, 0.0]])
    state = NetworkState([[30.0, 40.0, 120.0]], PowerAllocation([0.3], [[0.3]]), Association([[1.0]], [1]))
    exp = build_expansion(state, all_blockages(users, []), users, params)
    d2 = 30**2 + 40**2 + 120**2
    assert exp.phi[0, 0] == pytest.approx(params.beta_los / d2**2, rel=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_phi_is_minus_derivative_in_squared_distance(seed):
    exp = random_expansion(seed)
    y0 = exp.sqdist
    h = 1e-4 * y0
    g = lambda y: exp.beta / y ** (exp.alpha / 2)
    fd = (g(y0 + h) - g(y0 - h)) / (2 * h)
    assert np.allclose(fd, -exp.phi, rtol=1e-6, atol=0)


def test_theta_hat_without_power():
    users = np.array([[0.0, 0.0, 0.0], [50.0, 0.0, 0.0]])
    c = np.array([[1.0], [1.0]])
    state = NetworkState([[0.0, 0.0, 150.0]], PowerAllocation([0.0], [[0.0], [0.0]]), Association(c, [2]))
    exp = build_expansion(state, all_blockages(users, []), users, PropagationParams())
    assert np.allclose(exp.theta_hat, c / LN2)


@pytest.mark.parametrize("seed", range(10))
def test_coefficients_nonnegative_and_kstar(seed):
    exp = random_expansion(seed)
    for arr in (exp.phi, exp.theta_hat, exp.theta_hat_p, exp.theta_c, exp.theta_p):
        assert np.all(np.isfinite(arr)) and np.all(arr >= 0)
    for m, order in enumerate(exp.orders):
        if order:
            assert exp.kstar[m] == min(order, key=lambda k: (exp.gains[k, m], k))


# ---------------------------------------------------------------- anchoring


@pytest.mark.parametrize("common", [True, False])
@pytest.mark.parametrize("seed", range(20))
def test_surrogates_anchor_to_true_rate(seed, common):
    exp = random_expansion(seed, common)
    want = true_rate(exp)
    assert np.allclose(exp.frozen_rates(), want, rtol=0, atol=1e-9)
    ps = position_surrogate(exp)
    assert np.allclose(ps.value(exp.positions), want, rtol=0, atol=1e-9)
    assert np.allclose(ps.raw_value(exp.positions), want, rtol=0, atol=1e-9)
    pa = power_assoc_surrogate(exp)
    assert np.allclose(pa.value(exp.p_vec), want, rtol=0, atol=1e-9)
    c_t = exp.state.assoc.values
    rho, lb = penalty_terms(exp.lam, c_t, c_t)
    assert lb(c_t) == pytest.approx(rho, abs=1e-12)


def test_anchor_on_initial_state():
    from rsmauav.scenario import initialize

    state = initialize(SC)
    exp = build_expansion(state, BLOCK, SC.users, SC.propagation, None, SC.p_max)
    assert np.allclose(position_surrogate(exp).value(state.positions), true_rate(exp), atol=1e-9)


# ---------------------------------------------------------------- gradient


@pytest.mark.parametrize("common", [True, False])
@pytest.mark.parametrize("seed", range(20))
def test_position_gradient_matches_finite_differences(seed, common):
    exp = random_expansion(seed, common)
    ps = position_surrogate(exp)
    X0 = exp.positions
    h = 1e-3
    base = weakest_common(exp)
    fd_true = np.zeros((exp.n_users, X0.size))
    fd_sur = np.zeros_like(fd_true)
    for i in range(X0.size):
        e = np.zeros(X0.size)
        e[i] = h
        e = e.reshape(X0.shape)
        if weakest_common(exp, X0 + e) != base or weakest_common(exp, X0 - e) != base:
            pytest.skip("the weakest common user switches within one step; the min has a kink here")
        fd_true[:, i] = (exp.frozen_rates(X0 + e) - exp.frozen_rates(X0 - e)) / (2 * h)
        fd_sur[:, i] = (ps.value(X0 + e) - ps.value(X0 - e)) / (2 * h)
    for k in range(exp.n_users):
        scale = np.linalg.norm(fd_true[k])
        assert np.linalg.norm(fd_sur[k] - fd_true[k]) <= 1e-4 * scale + 1e-10


# ---------------------------------------------------------------- concavity


@pytest.mark.parametrize("seed", range(10))
def test_position_model_is_concave(seed):
    exp = random_expansion(seed)
    ps = position_surrogate(exp)
    assert np.all(ps.private.quad <= 0) and np.all(ps.common.quad <= 0)
    rng = np.random.default_rng(seed)
    obj = lambda X: ps.value(X).min()
    for _ in range(200):
        a = exp.positions + rng.normal(0, 30, exp.positions.shape)
        b = exp.positions + rng.normal(0, 30, exp.positions.shape)
        assert obj(0.5 * (a + b)) >= 0.5 * (obj(a) + obj(b)) - 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_power_model_is_concave_along_segments(seed):
    exp = random_expansion(seed)
    pa = power_assoc_surrogate(exp)
    rng = np.random.default_rng(seed)
    ps = sample_powers(rng, exp, 200)
    for a, b in zip(ps[::2], ps[1::2]):
        mid = pa.power_part(0.5 * (a + b))
        assert np.all(mid >= 0.5 * (pa.power_part(a) + pa.power_part(b)) - 1e-9)


# ---------------------------------------------------------------- power minorant


@pytest.mark.parametrize("common", [True, False])
@pytest.mark.parametrize("seed", range(5))
def test_power_surrogate_is_minorant(seed, common):
    exp = random_expansion(seed, common)
    pa = power_assoc_surrogate(exp)
    rng = np.random.default_rng(100 + seed)
    worst = -np.inf
    for p in sample_powers(rng, exp, 1000):
        worst = max(worst, np.max(pa.power_part(p) - exp.frozen_rates(p_vec=p)))
    assert worst <= 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_power_surrogate_affine_in_association(seed):
    exp = random_expansion(seed)
    pa = power_assoc_surrogate(exp)
    rng = np.random.default_rng(seed)
    c0 = exp.state.assoc.values
    d = rng.uniform(-1, 1, c0.shape)
    f = lambda s: pa.value(exp.p_vec, c0 + s * d)
    assert np.allclose(f(0.5), 0.5 * (f(0) + f(1)), atol=1e-12)
    assert np.allclose(f(2) - f(1), f(1) - f(0), atol=1e-12)


def test_association_sensitivity_matches_rates_on_served_pairs():
    exp = random_expansion(3)
    pa = power_assoc_surrogate(exp)
    want = true_rate(exp)
    for k, m in enumerate(exp.serving):
        assert pa.r[k, m] == pytest.approx(want[k], abs=1e-12)


# ---------------------------------------------------------------- penalty


def test_penalty_examples():
    assert penalty([[0.05, 0.05]], [[1.0, 0.0]]) == 0
    assert penalty([[0.05]], [[0.5]]) == pytest.approx(-0.0125, abs=1e-15)
    with pytest.raises(NegativeMultiplier):
        penalty_terms([[-0.1]], [[0.5]], [[0.5]])


@given(seed=st.integers(0, 2**32 - 1))
def test_penalty_minorant(seed):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0, 1, (4, 3))
    c_t = rng.uniform(0, 1, (4, 3))
    rho_t, lb = penalty_terms(lam, c_t, c_t)
    assert lb(c_t) == pytest.approx(rho_t, abs=1e-12)
    for _ in range(20):
        c = rng.uniform(0, 1, (4, 3))
        assert lb(c) <= penalty(lam, c) + 1e-12
