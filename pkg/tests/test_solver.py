import numpy as np
import pytest

from rsmauav.config import SolverConfig
from rsmauav.geometry import BuildingPrism
from rsmauav.rsma import Association, NetworkState, PowerAllocation
from rsmauav.scenario import Scenario, initialize, load_default_scenario
from rsmauav.solver import (
    TRACE_COLUMNS,
    forbidden_pairs,
    repair_power,
    round_association,
    run_bcd,
    solve_position,
    solve_power_assoc,
    threshold_association,
    true_rates,
    update_multipliers,
)
from rsmauav.surrogates import build_expansion, position_surrogate, power_assoc_surrogate

CFG = SolverConfig()
SC = load_default_scenario()


def tiny_scenario(users, uav_pos, caps=None, buildings=(), p_max=1.0):
    users = np.asarray(users, float)
    sc = Scenario((-1000, 1000, -1000, 1000), list(buildings), users, len(uav_pos), caps or [len(users)] * len(uav_pos), p_max=p_max)
    return sc


def expansion_for(sc, positions, c, power=None, lam=None, common=True):
    K, M = sc.n_users, len(positions)
    if power is None:
        n = np.asarray(c).sum(axis=0)
        pc = sc.p_max / (n + 1) if common else np.zeros(M)
        power = PowerAllocation(pc, np.asarray(c) * (sc.p_max / (n + 1))[None, :])
    state = NetworkState(positions, power, Association(c, sc.capacities))
    return build_expansion(state, sc.blockages(), sc.users, sc.propagation, lam, sc.p_max, common)


# ---------------------------------------------------------------- position step


def test_single_link_moves_full_trust_radius_toward_user():
    sc = tiny_scenario([[0, 0, 0]], [[200.0, 0, 400.0]])
    exp = expansion_for(sc, [[200.0, 0, 400.0]], [[1.0]])
    ps = position_surrogate(exp)
    X, _, info = solve_position(exp, ps, CFG, sc.blockages(), sc.bounds(), 50.0)
    step = X[0] - exp.positions[0]
    assert np.linalg.norm(step) == pytest.approx(50.0, abs=1e-5)
    # 1-D line-search oracle along the UAV-to-user direction
    u = -exp.positions[0] / np.linalg.norm(exp.positions[0])
    ts = np.linspace(0, 50, 50001)
    vals = [ps.value(exp.positions + t * u[None, :])[0] for t in ts]
    assert ts[int(np.argmax(vals))] == pytest.approx(50.0)
    assert np.allclose(step / 50.0, u, atol=1e-4)
    assert info.value >= max(vals) - 1e-6
    assert info.duality_gap <= 1e-6


def test_altitude_floor_binds():
    sc = tiny_scenario([[0, 0, 0]], [[0.0, 0, 120.0]])
    exp = expansion_for(sc, [[0.0, 0, 120.0]], [[1.0]])
    X, _, _ = solve_position(exp, position_surrogate(exp), CFG, sc.blockages(), sc.bounds(), 50.0)
    assert np.allclose(X[0], [0, 0, CFG.z_min], atol=1e-5)


def test_zero_trust_radius_keeps_positions():
    state = initialize(SC)
    exp = build_expansion(state, SC.blockages(), SC.users, SC.propagation, None, SC.p_max)
    X, _, _ = solve_position(exp, position_surrogate(exp), CFG, SC.blockages(), SC.bounds(), 0.0)
    assert np.array_equal(X, state.positions)


def test_position_step_on_default_city():
    state = initialize(SC)
    exp = build_expansion(state, SC.blockages(), SC.users, SC.propagation, None, SC.p_max)
    zeta = 50.0
    X, enforced, info = solve_position(exp, position_surrogate(exp), CFG, SC.blockages(), SC.bounds(), zeta)
    assert np.all(np.linalg.norm(X - state.positions, axis=1) <= zeta + 1e-6)
    lo, hi = SC.bounds()
    assert np.all(X >= lo - 1e-9) and np.all(X <= hi + 1e-9)
    for m, c, tgt in enforced:
        assert np.dot(c.normal, X[m]) - c.offset >= tgt - 1e-6
    assert info.value >= info.incumbent - CFG.subproblem_tol
    assert info.duality_gap <= 1e-6


def test_nlos_start_is_pushed_toward_los():
    box = BuildingPrism.box(10, 20, -50, 50, 300)
    sc = tiny_scenario([[0, 0, 0]], [[40.0, 0, 150.0]], buildings=[box])
    exp = expansion_for(sc, [[40.0, 0, 150.0]], [[1.0]])
    assert not exp.los[0, 0]
    X, enforced, _ = solve_position(exp, position_surrogate(exp), CFG, sc.blockages(), sc.bounds(), 50.0)
    (m, c, tgt) = enforced[0]
    assert np.dot(c.normal, X[0]) - c.offset > c.ref_distance + 1.0


# ---------------------------------------------------------------- power / association step


@pytest.mark.parametrize("common", [True, False])
def test_single_user_gets_all_power(common):
    sc = tiny_scenario([[0, 0, 0]], [[30.0, 0, 150.0]])
    exp = expansion_for(sc, [[30.0, 0, 150.0]], [[1.0]], common=common)
    p_vec, c, info = solve_power_assoc(exp, power_assoc_surrogate(exp), CFG, sc.capacities, include_common=common)
    assert p_vec.sum() == pytest.approx(sc.p_max, abs=1e-6)
    assert c[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert info.duality_gap <= 1e-6
    state = NetworkState(exp.positions, PowerAllocation(p_vec[:1], p_vec[1:].reshape(1, 1)), Association([[1.0]], [1]))
    br, _ = true_rates(sc, state, sc.blockages(), common)
    want = np.log2(1 + sc.p_max * exp.gains[0, 0] / exp.noise)
    assert br.min_rate == pytest.approx(want, abs=1e-5)


def test_capacity_one_pigeonhole():
    sc = tiny_scenario([[0, 0, 0], [20, 0, 0]], [[0.0, 0, 150], [500.0, 0, 150]], caps=[1, 1])
    # both users start on UAV 0, which violates capacity; the step has to split them
    exp = expansion_for(sc, [[0.0, 0, 150], [500.0, 0, 150]], [[1.0, 0.0], [0.0, 1.0]])
    p_vec, c, _ = solve_power_assoc(exp, power_assoc_surrogate(exp), CFG, sc.capacities)
    assert np.allclose(c.sum(axis=1), 1, atol=1e-6)
    assert np.all(c.sum(axis=0) <= 1 + 1e-6)
    r = round_association(c, CFG, sc.capacities)
    assert np.array_equal(r.sum(axis=0), [1, 1])


def test_power_step_on_default_city():
    state = initialize(SC)
    exp = build_expansion(state, SC.blockages(), SC.users, SC.propagation, np.full((12, 3), 0.05), SC.p_max)
    p_vec, c, info = solve_power_assoc(exp, power_assoc_surrogate(exp), CFG, SC.capacities, forbid=forbidden_pairs(exp))
    assert np.allclose(c.sum(axis=1), 1, atol=1e-6)
    assert np.all(c.sum(axis=0) <= np.array(SC.capacities) + 1e-6)
    for m in range(3):
        assert p_vec[exp.uav_of == m].sum() <= SC.p_max + 1e-6
    assert np.all(p_vec >= 0)
    assert info.value >= info.incumbent - CFG.subproblem_tol
    assert info.duality_gap <= 1e-6


def test_pinned_association_stays_put():
    state = initialize(SC)
    exp = build_expansion(state, SC.blockages(), SC.users, SC.propagation, None, SC.p_max)
    _, c, _ = solve_power_assoc(exp, power_assoc_surrogate(exp), CFG, SC.capacities, pin_assoc=True)
    assert np.allclose(c, state.assoc.values, atol=1e-9)


# ---------------------------------------------------------------- rounding and multipliers


def test_threshold_examples():
    c = np.array([[0.97, 0.02, 0.5]])
    assert threshold_association(c, CFG).tolist() == [[1.0, 0.0, 0.5]]


def test_round_examples():
    assert round_association([[0.6, 0.4]], CFG, [1, 1]).tolist() == [[1.0, 0.0]]
    assert round_association([[0.97, 0.03], [0.96, 0.04]], CFG, [1, 1]).tolist() == [[1.0, 0.0], [0.0, 1.0]]
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = rng.dirichlet(np.ones(3), size=7)
        r = round_association(c, CFG, [3, 3, 3])
        assert np.all(r.sum(axis=1) == 1) and np.all(r.sum(axis=0) <= 3)


def test_multiplier_examples():
    lam, mu = update_multipliers(np.zeros((1, 1)), [[0.5]], 0.1)
    assert lam[0, 0] == pytest.approx(0.4, abs=1e-15)
    assert mu == pytest.approx(0.2)
    lam0 = np.full((2, 2), 0.05)
    lam, mu = update_multipliers(lam0, np.eye(2), 0.4)
    assert np.array_equal(lam, lam0) and mu == 0.8
    mus = [0.1]
    for _ in range(4):
        _, m = update_multipliers(lam0, np.eye(2), mus[-1])
        mus.append(m)
    assert mus == pytest.approx([0.1, 0.2, 0.4, 0.8, 1.6])


def test_multipliers_never_decrease():
    rng = np.random.default_rng(1)
    lam, mu = np.zeros((5, 3)), 0.1
    for _ in range(20):
        new, mu = update_multipliers(lam, rng.uniform(0, 1, (5, 3)), mu)
        assert np.all(new >= lam)
        lam = new


def test_repair_power_moves_power_to_new_user():
    power = PowerAllocation([0.2, 0.2], [[0.3, 0.0], [0.5, 0.0], [0.0, 0.8]])
    old = np.array([[1, 0], [1, 0], [0, 1]], float)
    new = np.array([[1, 0], [0, 1], [0, 1]], float)
    out = repair_power(power, old, new, 1.0)
    assert out.private[1, 0] == 0
    assert np.all(out.uav_totals() <= 1.0 + 1e-12)
    assert out.private[1, 1] > 0


# ---------------------------------------------------------------- outer loop


@pytest.fixture(scope="module")
def short_runs():
    cfg = SolverConfig(t_max=4)
    return {s: run_bcd(SC, cfg, s) for s in ("rsma", "noma", "fixed_position", "fixed_power", "no_geometry")}


def test_trace_shape_and_zeta(short_runs):
    tr = short_runs["rsma"].trace
    assert len(tr) == 5
    assert [t.iter for t in tr] == list(range(5))
    assert [t.zeta for t in tr[1:]] == pytest.approx([50, 45, 40.5, 36.45])
    assert len(TRACE_COLUMNS) == len(tr[0].row())


@pytest.mark.parametrize("scheme", ["rsma", "noma", "fixed_position", "fixed_power", "no_geometry"])
def test_iterates_feasible_and_binary(short_runs, scheme):
    res = short_runs[scheme]
    st = res.state
    assert st.assoc.is_binary()
    st.assoc.check()
    st.power.check(SC.p_max, 1e-6)
    lo, hi = SC.bounds()
    assert np.all(st.positions >= lo - 1e-6) and np.all(st.positions <= hi + 1e-6)
    assert all(t.max_gap == 0 for t in res.trace)
    assert np.all(res.lam >= CFG.lambda0)


def test_scheme_definitions(short_runs):
    assert np.array_equal(short_runs["fixed_position"].state.positions, short_runs["fixed_position"].initial_state.positions)
    assert np.all(short_runs["noma"].state.power.common == 0)
    fp = short_runs["fixed_power"].state
    n = fp.assoc.values.sum(axis=0)
    assert np.allclose(fp.power.common, SC.p_max / (n + 1))
    ng = short_runs["no_geometry"]
    assert ng.assumed_breakdown.min_rate >= ng.breakdown.min_rate - 1e-12


def test_reported_rate_is_true_rate(short_runs):
    res = short_runs["rsma"]
    br, _ = true_rates(SC, res.state, SC.blockages())
    assert res.breakdown.min_rate == br.min_rate == res.trace[-1].min_rate


def test_deterministic(short_runs):
    again = run_bcd(SC, SolverConfig(t_max=4), "rsma")
    a = [t.row(timing=False) for t in short_runs["rsma"].trace]
    b = [t.row(timing=False) for t in again.trace]
    assert a == b
    assert np.array_equal(again.state.positions, short_runs["rsma"].state.positions)


def test_bad_scheme():
    with pytest.raises(ValueError):
        run_bcd(SC, CFG, "tdma")
