"""Distance-based LoS/NLoS path loss."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import BlockagePlaneSet, is_los

MIN_DISTANCE = 1.0


class ZeroDistance(ValueError):
    pass


class LinkState(enum.IntEnum):
    LOS = 1
    NLOS = 0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w) + 30.0


@dataclass(frozen=True)
class PropagationParams:
    alpha_los: float = 2.0
    alpha_nlos: float = 3.3
    beta_los: float = db_to_linear(-46.43)
    beta_nlos: float = db_to_linear(-56.43)
    # -107 dBm taken as the total noise power of the 5 MHz band
    noise_power: float = dbm_to_watts(-107.0)

    def __post_init__(self):
        if not (self.alpha_nlos >= self.alpha_los > 0):
            raise ValueError("need alpha_nlos >= alpha_los > 0")
        if not (self.beta_los > self.beta_nlos > 0):
            raise ValueError("need beta_los > beta_nlos > 0")
        if not self.noise_power > 0:
            raise ValueError("noise power must be positive")

    def alpha(self, state) -> float:
        return self.alpha_los if state == LinkState.LOS else self.alpha_nlos

    def beta(self, state) -> float:
        return self.beta_los if state == LinkState.LOS else self.beta_nlos

    def alpha_beta(self, los_mask):
        """Arrays of (alpha, beta) for a boolean LoS mask."""
        los = np.asarray(los_mask, dtype=bool)
        return (
            np.where(los, self.alpha_los, self.alpha_nlos),
            np.where(los, self.beta_los, self.beta_nlos),
        )


def link_state(user_id: int, x, blockages) -> LinkState:
    bset: BlockagePlaneSet = blockages[user_id]
    return LinkState.LOS if is_los(bset, x) else LinkState.NLOS


def channel_gain(user, x, state, params: PropagationParams) -> float:
    """Effective power gain beta / d**alpha, with d clamped to at least 1 m."""
    d = float(np.linalg.norm(np.asarray(x, float) - np.asarray(user, float)))
    if d == 0:
        raise ZeroDistance("UAV and user coincide")
    d = max(d, MIN_DISTANCE)
    return params.beta(state) / d ** params.alpha(state)


def link_states(blockages, positions) -> np.ndarray:
    """Boolean LoS matrix of shape (K, M)."""
    pos = np.asarray(positions, float)
    return np.array([b.is_los_many(pos) for b in blockages], dtype=bool).reshape(len(blockages), len(pos))


def gain_matrix(users, positions, los, params: PropagationParams) -> np.ndarray:
    """Gains g[k, m] for every user/UAV pair under the given LoS matrix."""
    u = np.asarray(users, float)
    x = np.asarray(positions, float)
    d = np.linalg.norm(x[None, :, :] - u[:, None, :], axis=2)
    if np.any(d == 0):
        raise ZeroDistance("UAV and user coincide")
    d = np.maximum(d, MIN_DISTANCE)
    alpha, beta = params.alpha_beta(los)
    return beta / d**alpha
