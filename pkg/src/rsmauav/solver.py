"""Penalized block-coordinate SCA: positions, then power and association."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .backend import BackendError, ConcaveExpr, ConvexSubproblem, Infeasible, backend_solve
from .channel import gain_matrix, link_states
from .config import SolverConfig
from .geometry import BlockagePlaneSet, active_los_constraints
from .rsma import Association, NetworkState, PowerAllocation, compute_rates, compute_rates_noma
from .scenario import Scenario, equal_power, initialize
from .surrogates import (
    ExpansionPoint,
    PositionSurrogate,
    PowerAssocSurrogate,
    build_expansion,
    penalty,
    position_surrogate,
    power_assoc_surrogate,
    power_from_vector,
)

log = logging.getLogger(__name__)

SCHEMES = ("rsma", "noma", "fixed_position", "fixed_power", "no_geometry")
MULTIPLIER_GUARD = 1e-18


class SubproblemInfeasible(RuntimeError):
    def __init__(self, msg, family=None):
        super().__init__(msg)
        self.family = family


class BackendFailure(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass
class IterationTrace:
    iter: int
    min_rate: float
    surrogate_obj: float
    penalty: float
    max_gap: float
    zeta: float
    los_violations: int
    wall_ms: float

    def row(self, timing: bool = True) -> list:
        return [
            self.iter,
            repr(float(self.min_rate)),
            repr(float(self.surrogate_obj)),
            repr(float(self.penalty)),
            repr(float(self.max_gap)),
            repr(float(self.zeta)),
            self.los_violations,
            f"{self.wall_ms:.3f}" if timing else "",
        ]


TRACE_COLUMNS = ["iter", "min_rate", "surrogate_obj", "penalty", "max_gap", "zeta", "los_violations", "wall_ms"]


@dataclass
class StepInfo:
    value: float = float("nan")
    incumbent: float = float("nan")
    duality_gap: float = float("nan")
    fallback: str = ""
    n_constraints: int = 0


# ------------------------------------------------------------------ position


def _los_targets(cons, zeta, margin):
    """Required directed distance per constraint; NLoS starts are pushed by zeta/2."""
    out = []
    for c in cons:
        if c.ref_distance >= margin:
            out.append(margin)
        else:
            out.append(min(margin, c.ref_distance + 0.5 * zeta))
    return out


def solve_position(
    exp: ExpansionPoint,
    surrogate: PositionSurrogate,
    config: SolverConfig,
    blockages,
    bounds,
    zeta: float,
):
    """Trust-region max-min step on the concave position model.

    Returns the new positions, the LoS constraints that were enforced (with
    their effective margins) and a :class:`StepInfo`.
    """
    X = exp.positions
    M = len(X)
    K = exp.n_users
    info = StepInfo()
    info.incumbent = float(surrogate.value(X).min())
    if zeta <= 0:
        info.value = info.incumbent
        return X.copy(), [], info

    lo, hi = bounds
    per_uav = []
    for m in range(M):
        users = exp.orders[m] if config.los_policy == "servedUsers" else range(K)
        per_uav.append(active_los_constraints(blockages, users, X[m], config.los_margin))

    n_rc = M if surrogate.common is not None else 0
    it = 3 * M
    n = 3 * M + 1 + n_rc
    priv, com = surrogate.private, surrogate.common

    def quad_expr(model, k):
        e = ConcaveExpr(n, const=float(model.const[k]))
        e.lin[:it] = zeta * model.grad[k].ravel()
        for m in range(M):
            e.add_quad(-zeta**2 * model.quad[k, m], np.arange(3 * m, 3 * m + 3), np.zeros(3))
        return e

    def build(targets):
        obj = ConcaveExpr(n)
        obj.lin[it] = 1.0
        prob = ConvexSubproblem(n, obj)
        prob.lb[:it] = ((lo[None, :] - X) / zeta).ravel()
        prob.ub[:it] = ((hi[None, :] - X) / zeta).ravel()
        for m in range(M):
            idx = np.arange(3 * m, 3 * m + 3)
            prob.balls.append((f"trust region uav {m}", idx, np.zeros(3), 1.0))
        for m, order in enumerate(exp.orders):
            if n_rc and not order:
                prob.lb[it + 1 + m] = prob.ub[it + 1 + m] = 0.0
            for j in order if n_rc else ():
                e = quad_expr(com, j)
                e.lin[it + 1 + m] = -1.0
                prob.hypographs.append((f"common rate uav {m} user {j}", e))
        for k in range(K):
            e = quad_expr(priv, k)
            m = exp.serving[k]
            if n_rc:
                e.lin[it + 1 + m] = 1.0 / len(exp.orders[m])
            e.lin[it] = -1.0
            prob.hypographs.append((f"rate user {k}", e))
        enforced = []
        for m, cons in enumerate(per_uav):
            for c, tgt in zip(cons, targets[m]):
                g = np.zeros(n)
                g[3 * m : 3 * m + 3] = -zeta * c.normal
                prob.ineqs.append((f"los uav {m} user {c.user_id} building {c.building_id}", g, c.ref_distance - tgt))
                enforced.append((m, c, tgt))
        return prob, enforced

    attempts = [
        ("push", [_los_targets(cons, zeta, config.los_margin) for cons in per_uav]),
        ("hold", [[min(config.los_margin, c.ref_distance) for c in cons] for cons in per_uav]),
    ]
    last = None
    for name, targets in attempts:
        prob, enforced = build(targets)
        try:
            sol = backend_solve(prob, tol=min(1e-8, config.subproblem_tol))
        except Infeasible as exc:
            last = exc
            info.fallback = name
            continue
        except BackendError as exc:
            raise BackendFailure(f"position step: {exc}") from exc
        s = sol.z[:it].reshape(M, 3)
        norms = np.linalg.norm(s, axis=1)
        s = s / np.maximum(norms, 1.0)[:, None]
        X_new = np.clip(X + zeta * s, lo, hi)
        val = float(surrogate.value(X_new).min())
        info.duality_gap = sol.certificate.duality_gap
        info.n_constraints = len(enforced)
        if val < info.incumbent - config.subproblem_tol and name == "hold":
            info.value = info.incumbent
            info.fallback = "incumbent"
            return X.copy(), enforced, info
        info.value = val
        return X_new, enforced, info
    family = "los" if last is not None and last.witness and last.witness.startswith("los") else "box"
    raise SubproblemInfeasible(f"position step infeasible: {last}", family)


# ------------------------------------------------------- power / association


def forbidden_pairs(exp: ExpansionPoint) -> np.ndarray:
    """New pairs that would be NLoS while the user still has a LoS UAV."""
    served = exp.state.assoc.values >= 0.5
    has_los = exp.los.any(axis=1, keepdims=True)
    return (~served) & (~exp.los) & has_los


def solve_power_assoc(
    exp: ExpansionPoint,
    surrogate: PowerAssocSurrogate,
    config: SolverConfig,
    capacities,
    optimize_power: bool = True,
    include_common: bool = True,
    forbid=None,
    pin_assoc: bool = False,
):
    """Convex power/association step.  Returns (p_vec, c_fractional, StepInfo).

    ``pin_assoc`` fixes the association at the expansion point so only the
    powers move.
    """
    K, M = exp.n_users, exp.n_uavs
    n_p = len(exp.p_vec) if optimize_power else 0
    nc = K * M
    n_rc = M if surrogate.common is not None else 0
    it = n_p + nc
    n = it + 1 + n_rc
    pmax = exp.p_max
    cap = np.asarray(capacities, float)
    c_t = surrogate.c_t
    lb_coef = surrogate.rho_lb.coef
    fixed_priv = surrogate.private.value(exp.p_vec)
    fixed_com = None if surrogate.common is None else surrogate.common.value(exp.p_vec)

    def cidx(k, m):
        return n_p + k * M + m

    def log_expr(model, k, fixed):
        e = ConcaveExpr(n)
        if optimize_power:
            e.const = float(model.const[k])
            e.lin[:n_p] = pmax * model.lin[k]
            for w, a in model.pos[k]:
                e.add_log(w, np.concatenate([pmax * a, np.zeros(n - n_p)]), 1.0)
        else:
            e.const = float(fixed[k])
        return e

    def build(forbid_mask):
        obj = ConcaveExpr(n, const=surrogate.rho_lb.const)
        obj.lin[it] = 1.0
        obj.lin[n_p : n_p + nc] = lb_coef.ravel()
        prob = ConvexSubproblem(n, obj)
        prob.lb[: n_p + nc] = 0.0
        prob.ub[n_p : n_p + nc] = 1.0
        for m, order in enumerate(exp.orders):
            if n_rc and not order:
                prob.lb[it + 1 + m] = prob.ub[it + 1 + m] = 0.0
            for j in order if n_rc else ():
                e = log_expr(surrogate.common, j, fixed_com)
                e.lin[it + 1 + m] = -1.0
                prob.hypographs.append((f"common rate uav {m} user {j}", e))
        for k in range(K):
            e = log_expr(surrogate.private, k, fixed_priv)
            m = exp.serving[k]
            if n_rc:
                e.lin[it + 1 + m] = 1.0 / len(exp.orders[m])
            e.const -= float(surrogate.r[k] @ c_t[k])
            for mm in range(M):
                e.lin[cidx(k, mm)] = surrogate.r[k, mm]
            e.lin[it] = -1.0
            prob.hypographs.append((f"rate user {k}", e))
        if optimize_power:
            for m in range(M):
                g = np.zeros(n)
                g[:n_p] = (exp.uav_of == m).astype(float)
                prob.ineqs.append((f"power budget uav {m}", g, 1.0))
            if not include_common:
                for m in range(M):
                    a = np.zeros(n)
                    a[m] = 1.0
                    prob.eqs.append((f"no common stream uav {m}", a, 0.0))
        for k in range(K):
            a = np.zeros(n)
            a[[cidx(k, m) for m in range(M)]] = 1.0
            prob.eqs.append((f"association row user {k}", a, 1.0))
        for m in range(M):
            g = np.zeros(n)
            g[[cidx(k, m) for k in range(K)]] = 1.0
            prob.ineqs.append((f"capacity uav {m}", g, cap[m]))
        if forbid_mask is not None:
            for k, m in zip(*np.nonzero(forbid_mask)):
                prob.ub[cidx(k, m)] = 0.0
        if pin_assoc:
            prob.lb[n_p : n_p + nc] = prob.ub[n_p : n_p + nc] = c_t.ravel()
        return prob

    info = StepInfo()
    p_scaled_t = exp.p_vec / pmax
    if forbid is not None and forbid.any() and not pin_assoc:
        attempts = [("los", forbid), ("free", None)]
    else:
        attempts = [("free", None)]
    last = None
    for name, mask in attempts:
        prob = build(mask)
        try:
            sol = backend_solve(prob, tol=min(1e-8, config.subproblem_tol))
        except Infeasible as exc:
            last = exc
            info.fallback = name
            continue
        except BackendError as exc:
            raise BackendFailure(f"power/association step: {exc}") from exc
        z = sol.z
        p_vec = np.maximum(z[:n_p], 0.0) * pmax if optimize_power else exp.p_vec.copy()
        if optimize_power and not include_common:
            p_vec[:M] = 0.0
        c = np.clip(z[n_p : n_p + nc].reshape(K, M), 0.0, 1.0)
        info.value = float(sol.value)
        rc_t = [fixed_com[o].min() if o else 0.0 for o in exp.orders] if n_rc else []
        zt = np.concatenate([p_scaled_t if optimize_power else [], c_t.ravel(), [surrogate.value(exp.p_vec).min()], rc_t])
        info.incumbent = float(prob.objective.value(zt))
        info.duality_gap = sol.certificate.duality_gap
        return p_vec, c, info
    raise SubproblemInfeasible(f"power/association step infeasible: {last}", "association")


# ------------------------------------------------------- rounding / penalty


def threshold_association(c, config: SolverConfig) -> np.ndarray:
    """Snap entries near 0 or 1; mid-range entries pass through."""
    out = np.asarray(c, float).copy()
    out[out <= config.round_low] = 0.0
    out[out >= config.round_high] = 1.0
    return out


def round_association(c, config: SolverConfig, capacities=None) -> np.ndarray:
    """Threshold, then make every row one-hot within capacity.

    Users are handled in order of their largest entry (ties by id) and take
    their highest-valued UAV that still has room.
    """
    th = threshold_association(c, config)
    K, M = th.shape
    room = np.full(M, K) if capacities is None else np.array(capacities, int)
    out = np.zeros_like(th)
    for k in sorted(range(K), key=lambda k: (-th[k].max(), k)):
        for m in sorted(range(M), key=lambda m: (-th[k, m], m)):
            if room[m] > 0:
                out[k, m] = 1.0
                room[m] -= 1
                break
        else:
            raise SolverError("capacities cannot host every user")
    return out


def update_multipliers(lam, c, mu: float):
    """Grow multipliers on fractional entries; the step size doubles every call."""
    lam = np.asarray(lam, float)
    if np.any(lam < 0):
        raise ValueError("multipliers must be nonnegative")
    c = np.asarray(c, float)
    frac = c * (1 - c)
    s = float(np.sum(frac**2))
    if s < MULTIPLIER_GUARD:
        return lam.copy(), 2.0 * mu
    gamma = mu / s
    return lam + gamma * frac, 2.0 * mu


def repair_power(power: PowerAllocation, old_c, new_c, p_max: float) -> PowerAllocation:
    """Move private power onto the new association.

    Dropped pairs lose their power; a newly served user gets the mean private
    power of the users its UAV kept (or an equal share if none were kept);
    a UAV then over budget is scaled down uniformly.
    """
    old = np.asarray(old_c) >= 0.5
    new = np.asarray(new_c) >= 0.5
    pc = power.common.copy()
    pp = power.private.copy()
    for m in range(len(pc)):
        if np.array_equal(old[:, m], new[:, m]):
            continue
        kept = old[:, m] & new[:, m]
        added = new[:, m] & ~old[:, m]
        fill = pp[kept, m].mean() if kept.any() else p_max / (new[:, m].sum() + 1.0)
        pp[~new[:, m], m] = 0.0
        pp[added, m] = fill
        total = pc[m] + pp[:, m].sum()
        if total > p_max:
            pc[m] *= p_max / total
            pp[:, m] *= p_max / total
    return PowerAllocation(pc, pp * new)


# ------------------------------------------------------------------ outer loop


@dataclass
class BcdResult:
    state: NetworkState
    initial_state: NetworkState
    trace: list
    breakdown: object
    assumed_breakdown: object = None
    lam: np.ndarray = None
    los_constraints_ok: bool = True
    notes: list = field(default_factory=list)


def empty_blockages(users) -> list:
    return [BlockagePlaneSet(k, np.asarray(u, float), {}) for k, u in enumerate(users)]


def true_rates(sc: Scenario, state: NetworkState, blockages, common: bool = True):
    los = link_states(blockages, state.positions)
    g = gain_matrix(sc.users, state.positions, los, sc.propagation)
    rates = compute_rates if common else compute_rates_noma
    return rates(state, g, sc.propagation.noise_power), los


def count_los_violations(state: NetworkState, los) -> int:
    served = state.assoc.served_mask()
    return int(np.sum(served & ~los))


def _repower(state, sc, cfg, blockages, lam, common, t):
    """Power-only step at a freshly rounded association, started from the repaired powers."""
    exp = build_expansion(state, blockages, sc.users, sc.propagation, lam, sc.p_max, common)
    try:
        p_vec, _, _ = solve_power_assoc(
            exp, power_assoc_surrogate(exp), cfg, sc.capacities, include_common=common, pin_assoc=True
        )
    except (SubproblemInfeasible, BackendFailure) as exc:
        raise SolverError(f"iteration {t + 1}: power repair: {exc}") from exc
    pc, pp = power_from_vector(p_vec, exp.serving, state.n_uavs)
    return NetworkState(state.positions, PowerAllocation(pc, pp), state.assoc)


def run_bcd(sc: Scenario, config: SolverConfig | None = None, scheme: str = "rsma") -> BcdResult:
    """Run the alternating optimization for ``config.t_max`` iterations."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    cfg = config or sc.solver
    common = scheme != "noma"
    K, M = sc.n_users, sc.uav_count
    users = sc.users
    blk_true = sc.blockages()
    blk_opt = empty_blockages(users) if scheme == "no_geometry" else blk_true
    bounds = sc.bounds()

    state = initialize(sc, common=common)
    initial = state.copy()
    lam = np.full((K, M), cfg.lambda0)
    mu = cfg.mu0
    zeta = cfg.zeta0

    br, los = true_rates(sc, state, blk_true, common)
    trace = [IterationTrace(0, br.min_rate, float("nan"), 0.0, 0.0, zeta, count_los_violations(state, los), 0.0)]
    los_ok = True

    for t in range(cfg.t_max):
        tic = time.perf_counter()
        try:
            exp = build_expansion(state, blk_opt, users, sc.propagation, lam, sc.p_max, common)
            if scheme == "fixed_position":
                X_new, enforced = state.positions.copy(), []
            else:
                X_new, enforced, _ = solve_position(exp, position_surrogate(exp), cfg, blk_opt, bounds, zeta)
            for m, c, tgt in enforced:
                if np.dot(c.normal, X_new[m]) - c.offset < tgt - 1e-6:
                    los_ok = False

            moved = state.with_positions(X_new)
            exp2 = build_expansion(moved, blk_opt, users, sc.propagation, lam, sc.p_max, common)
            surr = power_assoc_surrogate(exp2)
            forbid = forbidden_pairs(exp2)
            p_vec, c_frac, pinfo = solve_power_assoc(
                exp2,
                surr,
                cfg,
                sc.capacities,
                optimize_power=scheme != "fixed_power",
                include_common=common,
                forbid=forbid,
            )
        except (SubproblemInfeasible, BackendFailure) as exc:
            raise SolverError(f"iteration {t + 1}: {exc}") from exc

        pen = penalty(lam, c_frac)
        c_th = threshold_association(c_frac, cfg)
        c_new = round_association(c_frac, cfg, sc.capacities)
        if scheme == "fixed_power":
            power = equal_power(c_new, sc.p_max, common=True)
        else:
            pc, pp = power_from_vector(p_vec, exp2.serving, M)
            power = repair_power(PowerAllocation(pc, pp), state.assoc.values, c_new, sc.p_max)
        new_state = NetworkState(X_new, power, Association(c_new, sc.capacities))
        if scheme != "fixed_power" and not np.array_equal(c_new, state.assoc.values):
            new_state = _repower(new_state, sc, cfg, blk_opt, lam, common, t)
        state = new_state
        lam, mu = update_multipliers(lam, c_th, mu)

        br, los = true_rates(sc, state, blk_true, common)
        gap = float(np.max(c_new * (1 - c_new)))
        wall = (time.perf_counter() - tic) * 1e3
        trace.append(IterationTrace(t + 1, br.min_rate, pinfo.value, pen, gap, zeta, count_los_violations(state, los), wall))
        log.info("iter %d min_rate %.4f zeta %.2f", t + 1, br.min_rate, zeta)
        zeta *= cfg.eta

    assumed = None
    if scheme == "no_geometry":
        los_all = np.ones((K, M), bool)
        g = gain_matrix(users, state.positions, los_all, sc.propagation)
        assumed = compute_rates(state, g, sc.propagation.noise_power)
    return BcdResult(
        state=state,
        initial_state=initial,
        trace=trace,
        breakdown=br,
        assumed_breakdown=assumed,
        lam=lam,
        los_constraints_ok=los_ok,
    )
