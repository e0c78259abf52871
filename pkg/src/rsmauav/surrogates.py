"""SCA surrogates built at an expansion point.

Every per-user rate is written as a signed sum of ``log2(1 + a(X) . p)``
terms, where ``p`` is the flat power vector ``[p_c(0..M-1), p_priv(0..K-1)]``
(user k's private power sits at its serving UAV) and ``a`` holds
noise-normalized gains.  Each user owns two pieces: its private rate and the
rate at which it can decode its UAV's common stream.  A user's rate is its
private piece plus an equal share of the smallest common piece among the
users of its UAV.  Link states and SIC order are frozen at the expansion
point.  The same pieces yield

* the frozen-state rate (the quantity every surrogate is anchored to),
* the concave position model (gains linearized in squared distance),
* the power model (positive terms kept, negative terms replaced by their
  tangent upper bound) plus an association-linear part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import MIN_DISTANCE, PropagationParams, ZeroDistance, link_states
from .rsma import NetworkState, compute_rates, compute_rates_noma, served_sets_and_order, weakest_user

LN2 = math.log(2.0)


class NegativeMultiplier(ValueError):
    pass


@dataclass(frozen=True)
class LogTerm:
    """``sign * weight * log2(1 + sum_i mask_i p_i g[user, uav_i] / noise)``."""

    owner: int
    user: int
    sign: int
    weight: float
    mask: np.ndarray
    kind: str


@dataclass
class ExpansionPoint:
    positions: np.ndarray
    state: NetworkState
    users: np.ndarray
    params: PropagationParams
    p_max: float
    los: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gains: np.ndarray
    sqdist: np.ndarray
    phi: np.ndarray
    orders: list
    kstar: list
    serving: np.ndarray
    served_count: np.ndarray
    p_vec: np.ndarray
    uav_of: np.ndarray
    private_terms: list  # per user: list[LogTerm]
    common_terms: list  # per user: list[LogTerm], empty without a common stream
    lam: np.ndarray
    include_common: bool = True
    theta_hat: np.ndarray = None
    theta_hat_p: np.ndarray = None
    theta_c: np.ndarray = None
    theta_p: np.ndarray = None

    @property
    def noise(self) -> float:
        return self.params.noise_power

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_uavs(self) -> int:
        return len(self.positions)

    def frozen_gains(self, positions=None) -> np.ndarray:
        """Gains at ``positions`` with path-loss parameters frozen."""
        if positions is None:
            return self.gains
        x = np.asarray(positions, float)
        d = np.linalg.norm(x[None, :, :] - self.users[:, None, :], axis=2)
        return self.beta / np.maximum(d, MIN_DISTANCE) ** self.alpha

    def term_coef(self, term: LogTerm, gains=None) -> np.ndarray:
        g = self.gains if gains is None else gains
        return term.mask * g[term.user, self.uav_of] / self.noise

    def term_arg(self, term: LogTerm, gains=None, p_vec=None) -> float:
        p = self.p_vec if p_vec is None else p_vec
        return 1.0 + float(self.term_coef(term, gains) @ p)

    def piece_values(self, terms_per_user, positions=None, p_vec=None) -> np.ndarray:
        g = self.frozen_gains(positions)
        out = np.zeros(self.n_users)
        for k, terms in enumerate(terms_per_user):
            for t in terms:
                out[k] += t.sign * t.weight * math.log2(self.term_arg(t, g, p_vec))
        return out

    def frozen_rates(self, positions=None, p_vec=None) -> np.ndarray:
        """Per-user rate from the pieces at the frozen link states."""
        priv = self.piece_values(self.private_terms, positions, p_vec)
        com = self.piece_values(self.common_terms, positions, p_vec) if self.include_common else None
        return compose_rates(priv, com, self.orders)


def compose_rates(private, common, orders) -> np.ndarray:
    """Private piece plus an equal share of the weakest common piece per UAV."""
    out = np.array(private, float)
    if common is None:
        return out
    common = np.asarray(common, float)
    for order in orders:
        if order:
            out[order] += common[order].min() / len(order)
    return out


def power_vector(state: NetworkState, serving) -> np.ndarray:
    M = state.n_uavs
    K = state.n_users
    pv = np.zeros(M + K)
    pv[:M] = state.power.common
    pv[M:] = state.power.private[np.arange(K), serving]
    return pv


def power_from_vector(p_vec, serving, n_uavs) -> tuple:
    p_vec = np.asarray(p_vec, float)
    K = len(serving)
    common = p_vec[:n_uavs].copy()
    private = np.zeros((K, n_uavs))
    private[np.arange(K), serving] = p_vec[n_uavs:]
    return common, private


def _build_terms(orders, serving, M, K, include_common):
    n_p = M + K
    uav_of = np.concatenate([np.arange(M), serving]).astype(int)
    # indices of every power that UAV m radiates
    radiated = [np.flatnonzero(uav_of == m) for m in range(M)]
    private = [[] for _ in range(K)]
    common = [[] for _ in range(K)]
    for m, order in enumerate(orders):
        if not order:
            continue
        other = np.zeros(n_p, bool)
        for mm in range(M):
            if mm != m:
                other[radiated[mm]] = True
        full = other.copy()
        full[radiated[m]] = True
        priv_all = other.copy()
        priv_all[[M + j for j in order]] = True
        for pos, k in enumerate(order):
            if include_common:
                common[k].append(LogTerm(k, k, +1, 1.0, full, "hat_c"))
                common[k].append(LogTerm(k, k, -1, 1.0, priv_all, "bar_c"))
            later = other.copy()
            later[[M + j for j in order[pos + 1:]]] = True
            own = later.copy()
            own[M + k] = True
            private[k].append(LogTerm(k, k, +1, 1.0, own, "hat_p"))
            private[k].append(LogTerm(k, k, -1, 1.0, later, "bar_p"))
    return private, common, uav_of


def build_expansion(
    state: NetworkState,
    blockages,
    users,
    params: PropagationParams,
    lam=None,
    p_max: float = 1.0,
    include_common: bool = True,
) -> ExpansionPoint:
    """Freeze link states, gains and SIC structure at ``state``."""
    users = np.asarray(users, float)
    X = np.asarray(state.positions, float)
    K, M = len(users), len(X)
    los = link_states(blockages, X)
    alpha, beta = params.alpha_beta(los)
    diff = X[None, :, :] - users[:, None, :]
    sq = np.einsum("kmi,kmi->km", diff, diff)
    if np.any(sq == 0):
        raise ZeroDistance("UAV and user coincide")
    d = np.sqrt(sq)
    gains = beta / np.maximum(d, MIN_DISTANCE) ** alpha
    phi = alpha * beta / (2.0 * d ** (2.0 + alpha))

    orders = served_sets_and_order(state, gains)
    kstar = [weakest_user(o, gains, m) for m, o in enumerate(orders)]
    serving = state.assoc.serving_uav()
    served_count = np.array([len(o) for o in orders])
    p_vec = power_vector(state, serving)
    private, common, uav_of = _build_terms(orders, serving, M, K, include_common)
    lam = np.full((K, M), 0.0) if lam is None else np.asarray(lam, float)

    exp = ExpansionPoint(
        positions=X.copy(),
        state=state.copy(),
        users=users,
        params=params,
        p_max=p_max,
        los=los,
        alpha=alpha,
        beta=beta,
        gains=gains,
        sqdist=sq,
        phi=phi,
        orders=orders,
        kstar=kstar,
        serving=serving,
        served_count=served_count,
        p_vec=p_vec,
        uav_of=uav_of,
        private_terms=private,
        common_terms=common,
        lam=lam,
        include_common=include_common,
    )
    _fill_thetas(exp)
    return exp


def _fill_thetas(exp: ExpansionPoint):
    """Inverse-argument coefficients of the log terms (derivative of log2)."""
    K, M = exp.n_users, exp.n_uavs
    c = exp.state.assoc.values
    s = exp.noise
    tot = exp.state.power.common + (exp.state.power.private * (c >= 0.5)).sum(axis=0)
    p_total = (exp.gains * tot[None, :] / s).sum(axis=1)
    exp.theta_hat = c / (LN2 * (1.0 + p_total))[:, None]
    exp.theta_hat_p = np.zeros((K, M))
    exp.theta_p = np.zeros((K, M))
    exp.theta_c = np.zeros((K, M))
    for k in range(K):
        m = exp.serving[k]
        for t in exp.private_terms[k] + exp.common_terms[k]:
            th = 1.0 / (LN2 * exp.term_arg(t))
            if t.kind == "hat_p":
                exp.theta_hat_p[k, m] = th
            elif t.kind == "bar_p":
                exp.theta_p[k, m] = th
            elif t.kind == "bar_c":
                exp.theta_c[k, m] = th


@dataclass
class QuadModel:
    """``v_k(X) ~ const[k] + sum_m grad[k,m].(x_m - x_m^t) + quad[k,m] ||x_m - x_m^t||^2``.

    ``net[k, j, m]`` is the coefficient of ``||x_m - u_j||^2`` in the
    unconcavified model; ``quad`` keeps only its nonpositive entries.
    """

    anchor: np.ndarray
    users: np.ndarray
    const: np.ndarray
    grad: np.ndarray
    quad: np.ndarray
    net: np.ndarray

    def value(self, positions) -> np.ndarray:
        dx = np.asarray(positions, float) - self.anchor
        lin = np.einsum("kmi,mi->k", self.grad, dx)
        return self.const + lin + self.quad @ np.einsum("mi,mi->m", dx, dx)

    def raw_value(self, positions) -> np.ndarray:
        x = np.asarray(positions, float)
        diff = x[None, :, :] - self.users[:, None, :]
        sq = np.einsum("jmi,jmi->jm", diff, diff)
        diff0 = self.anchor[None, :, :] - self.users[:, None, :]
        sq0 = np.einsum("jmi,jmi->jm", diff0, diff0)
        return self.const + np.einsum("kjm,jm->k", self.net, sq - sq0)


def _quad_model(exp: ExpansionPoint, terms_per_user) -> QuadModel:
    K, M = exp.n_users, exp.n_uavs
    net = np.zeros((K, K, M))
    const = exp.piece_values(terms_per_user)
    for k, terms in enumerate(terms_per_user):
        for t in terms:
            theta = 1.0 / (LN2 * exp.term_arg(t))
            w_uav = np.bincount(exp.uav_of, weights=t.mask * exp.p_vec, minlength=M) / exp.noise
            # d g / d(sq dist) = -phi
            net[k, t.user, :] += t.sign * t.weight * theta * (-exp.phi[t.user, :]) * w_uav
    diff0 = exp.positions[None, :, :] - exp.users[:, None, :]  # (j, m, 3)
    grad = 2.0 * np.einsum("kjm,jmi->kmi", net, diff0)
    quad = np.minimum(net, 0.0).sum(axis=1)
    return QuadModel(exp.positions.copy(), exp.users, const, grad, quad, net)


@dataclass
class PositionSurrogate:
    """Concave position model of every user's rate, anchored at the expansion point."""

    private: QuadModel
    common: QuadModel | None
    orders: list

    @property
    def anchor(self) -> np.ndarray:
        return self.private.anchor

    def value(self, positions) -> np.ndarray:
        com = None if self.common is None else self.common.value(positions)
        return compose_rates(self.private.value(positions), com, self.orders)

    def raw_value(self, positions) -> np.ndarray:
        com = None if self.common is None else self.common.raw_value(positions)
        return compose_rates(self.private.raw_value(positions), com, self.orders)


def position_surrogate(exp: ExpansionPoint) -> PositionSurrogate:
    common = _quad_model(exp, exp.common_terms) if exp.include_common else None
    return PositionSurrogate(_quad_model(exp, exp.private_terms), common, exp.orders)


def association_sensitivity(exp: ExpansionPoint) -> np.ndarray:
    """Rate user k would draw from UAV m at the incumbent powers.

    Served pairs get their true rate.  For an unserved pair the user is
    inserted into m's SIC order with the mean private power of m's users and
    takes an equal share of m's common rate, capped by its own common rate.
    """
    st = exp.state
    g = exp.gains
    s = exp.noise
    K, M = exp.n_users, exp.n_uavs
    served = st.assoc.served_mask()
    if exp.include_common:
        true = compute_rates(st, g, s).per_user_total
    else:
        true = compute_rates_noma(st, g, s).per_user_total
    tot = st.power.common + (st.power.private * served).sum(axis=0)
    r = np.zeros((K, M))
    for m, order in enumerate(exp.orders):
        n = len(order)
        pc = st.power.common[m] if exp.include_common else 0.0
        priv = np.array([st.power.private[j, m] for j in order])
        p_new = priv.mean() if n else exp.p_max / 2.0
        if n and pc > 0:
            rc_m = []
            for j in order:
                i_other = float(np.dot(np.delete(tot, m), np.delete(g[j], m)))
                rc_m.append(math.log2(1 + pc * g[j, m] / (priv.sum() * g[j, m] + i_other + s)))
            rc_m = min(rc_m)
        else:
            rc_m = math.inf
        for k in range(K):
            if served[k, m]:
                r[k, m] = true[k]
                continue
            i_other = float(np.dot(np.delete(tot, m), np.delete(g[k], m)))
            later = sum(st.power.private[j, m] for j in order if (g[j, m], -j) < (g[k, m], -k))
            rp = math.log2(1 + p_new * g[k, m] / (later * g[k, m] + i_other + s))
            rc = 0.0
            if pc > 0:
                own = math.log2(1 + pc * g[k, m] / ((priv.sum() + p_new) * g[k, m] + i_other + s))
                rc = min(rc_m, own) / (n + 1)
            r[k, m] = rc + rp
    return r


@dataclass
class RhoLowerBound:
    """Linear minorant ``sum coef * c + const`` of the integrality penalty."""

    coef: np.ndarray
    const: float

    def __call__(self, c) -> float:
        return float(np.sum(self.coef * np.asarray(c, float)) + self.const)


def penalty(lam, c) -> float:
    lam = np.asarray(lam, float)
    c = np.asarray(c, float)
    return float(-np.sum(lam * c * (1 - c)))


def penalty_terms(lam, c, c_t):
    """Penalty value at ``c`` and its tangent minorant built at ``c_t``."""
    lam = np.asarray(lam, float)
    if np.any(lam < 0):
        raise NegativeMultiplier("penalty multipliers must be nonnegative")
    c_t = np.asarray(c_t, float)
    # lam * (c_t (2c - c_t) - c) = lam (2 c_t - 1) c - lam c_t^2
    lb = RhoLowerBound(lam * (2 * c_t - 1), float(-np.sum(lam * c_t**2)))
    return penalty(lam, c), lb


@dataclass
class LogAffineModel:
    """Per-user ``sum_pos w log2(1 + a.p) + lin.p + const``.

    Negative terms enter through their tangent upper bound at ``p_t``.
    """

    pos: list  # per user: list of (w, a)
    lin: np.ndarray  # (K, n_p)
    const: np.ndarray  # (K,)

    def value(self, p_vec) -> np.ndarray:
        p = np.asarray(p_vec, float)
        out = self.const + self.lin @ p
        for k, terms in enumerate(self.pos):
            for w, a in terms:
                out[k] += w * math.log2(1 + float(a @ p))
        return out


def _log_affine_model(exp: ExpansionPoint, terms_per_user) -> LogAffineModel:
    K = exp.n_users
    lin = np.zeros((K, len(exp.p_vec)))
    const = np.zeros(K)
    pos = [[] for _ in range(K)]
    for k, terms in enumerate(terms_per_user):
        for t in terms:
            a = exp.term_coef(t)
            if t.sign > 0:
                pos[k].append((t.weight, a))
            else:
                arg = 1.0 + float(a @ exp.p_vec)
                th = 1.0 / (LN2 * arg)
                const[k] -= t.weight * (math.log2(arg) - th * float(a @ exp.p_vec))
                lin[k] -= t.weight * th * a
    return LogAffineModel(pos, lin, const)


@dataclass
class PowerAssocSurrogate:
    """Concave-in-p, affine-in-c model of every user's rate.

    ``value(p, c)[k] = private_k(p) + min_{j served with k} common_j(p) / n
    + sum_m r[k, m] (c[k, m] - c_t[k, m])``
    """

    p_t: np.ndarray
    c_t: np.ndarray
    private: LogAffineModel
    common: LogAffineModel | None
    orders: list
    r: np.ndarray  # (K, M)
    rho_lb: RhoLowerBound

    def power_part(self, p_vec) -> np.ndarray:
        com = None if self.common is None else self.common.value(p_vec)
        return compose_rates(self.private.value(p_vec), com, self.orders)

    def assoc_part(self, c) -> np.ndarray:
        return np.sum(self.r * (np.asarray(c, float) - self.c_t), axis=1)

    def value(self, p_vec, c=None) -> np.ndarray:
        c = self.c_t if c is None else c
        return self.power_part(p_vec) + self.assoc_part(c)


def power_assoc_surrogate(exp: ExpansionPoint) -> PowerAssocSurrogate:
    """Power/association model at an expansion point built at the new positions."""
    c_t = exp.state.assoc.values.copy()
    _, lb = penalty_terms(exp.lam, c_t, c_t)
    common = _log_affine_model(exp, exp.common_terms) if exp.include_common else None
    return PowerAssocSurrogate(
        p_t=exp.p_vec.copy(),
        c_t=c_t,
        private=_log_affine_model(exp, exp.private_terms),
        common=common,
        orders=exp.orders,
        r=association_sensitivity(exp),
        rho_lb=lb,
    )
