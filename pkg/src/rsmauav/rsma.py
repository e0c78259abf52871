"""RSMA (and NOMA) downlink rates for a multi-UAV network state.

Arrays are indexed ``[k, m]`` for user k and UAV m.  Rates are in bit/s/Hz.
Association values are binary whenever true rates are evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

BINARY_BAND = (0.001, 0.999)
POWER_TOL = 1e-9


class NonBinaryAssociation(ValueError):
    pass


class NonZeroCommonPower(ValueError):
    pass


@dataclass
class PowerAllocation:
    common: np.ndarray  # (M,) watts
    private: np.ndarray  # (K, M) watts

    def __post_init__(self):
        self.common = np.asarray(self.common, dtype=float)
        self.private = np.asarray(self.private, dtype=float)

    def copy(self):
        return PowerAllocation(self.common.copy(), self.private.copy())

    def uav_totals(self, served=None) -> np.ndarray:
        priv = self.private if served is None else self.private * served
        return self.common + priv.sum(axis=0)

    def check(self, p_max: float, tol: float = POWER_TOL):
        if np.any(self.common < -tol) or np.any(self.private < -tol):
            raise ValueError("negative power")
        if np.any(self.uav_totals() > p_max + tol):
            raise ValueError("per-UAV power budget exceeded")


@dataclass
class Association:
    values: np.ndarray  # (K, M) in [0, 1]
    capacity: np.ndarray  # (M,) ints

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.capacity = np.asarray(self.capacity, dtype=int)

    def copy(self):
        return Association(self.values.copy(), self.capacity.copy())

    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0) | (self.values == 1)))

    def served_mask(self) -> np.ndarray:
        lo, hi = BINARY_BAND
        c = self.values
        if np.any((c > lo) & (c < hi)):
            raise NonBinaryAssociation("association has fractional entries")
        return c >= 0.5

    def serving_uav(self) -> np.ndarray:
        return np.argmax(self.served_mask(), axis=1)

    def check(self, tol: float = 1e-6):
        c = self.values
        if np.any(c < -tol) or np.any(c > 1 + tol):
            raise ValueError("association outside [0, 1]")
        if np.any(np.abs(c.sum(axis=1) - 1) > tol):
            raise ValueError("each user must be associated with exactly one UAV")
        if np.any(c.sum(axis=0) > self.capacity + tol):
            raise ValueError("UAV capacity exceeded")


@dataclass
class NetworkState:
    positions: np.ndarray  # (M, 3)
    power: PowerAllocation
    assoc: Association

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)

    @property
    def n_users(self) -> int:
        return self.assoc.values.shape[0]

    @property
    def n_uavs(self) -> int:
        return self.positions.shape[0]

    def copy(self):
        return NetworkState(self.positions.copy(), self.power.copy(), self.assoc.copy())

    def with_positions(self, positions):
        return replace(self, positions=np.asarray(positions, float).copy())


@dataclass
class RateBreakdown:
    per_user_common: np.ndarray
    per_user_private: np.ndarray
    per_user_total: np.ndarray
    min_rate: float

    def to_dict(self):
        return {
            "per_user_common": self.per_user_common.tolist(),
            "per_user_private": self.per_user_private.tolist(),
            "per_user_total": self.per_user_total.tolist(),
            "min_rate": self.min_rate,
        }


def served_sets_and_order(state: NetworkState, gains) -> list[list[int]]:
    """Served users of each UAV in SIC order (decreasing gain, ties by id)."""
    served = state.assoc.served_mask()
    g = np.asarray(gains, float)
    out = []
    for m in range(served.shape[1]):
        ks = np.flatnonzero(served[:, m])
        out.append(sorted(ks.tolist(), key=lambda k: (-g[k, m], k)))
    return out


def weakest_user(order: list[int], gains, m: int):
    """Served user with the smallest gain to UAV m (smaller id on ties)."""
    if not order:
        return None
    g = np.asarray(gains, float)
    return min(order, key=lambda k: (g[k, m], k))


def _uav_totals(state, served):
    return state.power.common + (state.power.private * served).sum(axis=0)


def interference_other(k: int, m: int, state: NetworkState, gains) -> float:
    """Power received at user k from every UAV other than m (watts)."""
    served = state.assoc.served_mask()
    tot = _uav_totals(state, served)
    g = np.asarray(gains, float)
    mask = np.arange(len(tot)) != m
    return float(np.dot(tot[mask], g[k, mask]))


def sinr_common(k: int, m: int, state: NetworkState, gains, noise: float) -> float:
    served = state.assoc.served_mask()
    g = float(np.asarray(gains)[k, m])
    own_private = float((state.power.private[:, m] * served[:, m]).sum())
    den = own_private * g + interference_other(k, m, state, gains) + noise
    return state.power.common[m] * g / den


def sinr_private(k: int, m: int, state: NetworkState, gains, noise: float, order=None) -> float:
    if order is None:
        order = served_sets_and_order(state, gains)[m]
    pos = order.index(k)
    g = float(np.asarray(gains)[k, m])
    later = sum(state.power.private[j, m] for j in order[pos + 1:])
    den = later * g + interference_other(k, m, state, gains) + noise
    return state.power.private[k, m] * g / den


def _rates(state: NetworkState, gains, noise: float, common: bool) -> RateBreakdown:
    g = np.asarray(gains, float)
    K, M = g.shape
    orders = served_sets_and_order(state, g)
    rc = np.zeros(K)
    rp = np.zeros(K)
    for m, order in enumerate(orders):
        if not order:
            continue
        if common:
            per = [np.log2(1 + sinr_common(k, m, state, g, noise)) for k in order]
            share = min(per) / len(order)
            for k in order:
                rc[k] += share
        for k in order:
            rp[k] += np.log2(1 + sinr_private(k, m, state, g, noise, order))
    total = rc + rp
    return RateBreakdown(rc, rp, total, float(total.min()) if K else 0.0)


def compute_rates(state: NetworkState, gains, noise: float) -> RateBreakdown:
    """True RSMA rates: min-rule common stream split equally, SIC private streams."""
    return _rates(state, gains, noise, common=True)


def compute_rates_noma(state: NetworkState, gains, noise: float) -> RateBreakdown:
    """Private-stream-only rates with full SIC; the common stream must be off."""
    if np.any(state.power.common > 0):
        raise NonZeroCommonPower("NOMA evaluation requires zero common power")
    return _rates(state, gains, noise, common=False)


@dataclass
class RateDecomposition:
    """Log-difference form of the rates, all powers normalized by noise.

    ``r_hat[k, m] = c log2(1 + p_total[k])`` with the total received power;
    ``r_hat_p`` keeps only k's own and later-decoded private powers plus
    inter-UAV interference, so that ``r_hat_p - r_bar_p`` is the private
    rate.  ``r_bar_c[k, m]`` is evaluated at the weakest user ``kstar[m]``
    and gated by ``c[k, m]``; the common rate of user k from UAV m is
    ``c[k, m] * r_hat[kstar[m], m] - r_bar_c[k, m]``.
    """

    r_hat: np.ndarray
    r_hat_p: np.ndarray
    r_bar_c: np.ndarray
    r_bar_p: np.ndarray
    p_total: np.ndarray
    i_other: np.ndarray
    kstar: list = field(default_factory=list)
    served_count: np.ndarray = None

    def common_rate(self, c) -> np.ndarray:
        K, M = c.shape
        out = np.zeros((K, M))
        for m, ks in enumerate(self.kstar):
            if ks is not None:
                out[:, m] = c[:, m] * self.r_hat[ks, m] - self.r_bar_c[:, m]
        return out

    def private_rate(self) -> np.ndarray:
        return self.r_hat_p - self.r_bar_p


def rate_decomposition(state: NetworkState, gains, noise: float) -> RateDecomposition:
    g = np.asarray(gains, float)
    K, M = g.shape
    served = state.assoc.served_mask()
    c = served.astype(float)
    orders = served_sets_and_order(state, g)
    tot = _uav_totals(state, served) / noise
    rx = g * tot[None, :]
    p_total = rx.sum(axis=1)
    # summed directly rather than as p_total - rx, which cancels badly
    i_other = rx @ (1.0 - np.eye(M))
    pp = state.power.private / noise

    r_hat = c * np.log2(1 + p_total)[:, None]
    r_hat_p = np.zeros((K, M))
    r_bar_p = np.zeros((K, M))
    r_bar_c = np.zeros((K, M))
    kstar = []
    for m, order in enumerate(orders):
        ks = weakest_user(order, g, m)
        kstar.append(ks)
        if ks is None:
            continue
        all_priv = sum(pp[j, m] for j in order)
        r_bar_c[:, m] = c[:, m] * np.log2(1 + all_priv * g[ks, m] + i_other[ks, m])
        for pos, k in enumerate(order):
            later = sum(pp[j, m] for j in order[pos + 1:])
            r_bar_p[k, m] = np.log2(1 + later * g[k, m] + i_other[k, m])
            r_hat_p[k, m] = np.log2(1 + (later + pp[k, m]) * g[k, m] + i_other[k, m])
    return RateDecomposition(
        r_hat=r_hat,
        r_hat_p=r_hat_p,
        r_bar_c=r_bar_c,
        r_bar_p=r_bar_p,
        p_total=p_total,
        i_other=i_other,
        kstar=kstar,
        served_count=served.sum(axis=0),
    )


def decomposed_user_rates(dec: RateDecomposition, c) -> np.ndarray:
    """Per-user rate assembled from the decomposition (weakest-user common rate)."""
    cnt = np.maximum(dec.served_count, 1)
    per = dec.common_rate(c) / cnt[None, :] + dec.private_rate()
    return per.sum(axis=1)
