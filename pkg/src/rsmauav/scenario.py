"""Scenario definition, generation, file I/O and initial deployment."""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.cluster.vq import kmeans2

from .channel import (
    PropagationParams,
    db_to_linear,
    dbm_to_watts,
    gain_matrix,
    link_states,
    linear_to_db,
    watts_to_dbm,
)
from .config import SolverConfig, to_camel
from .geometry import BuildingPrism, all_blockages
from .rsma import Association, NetworkState, PowerAllocation

SCHEMA_VERSION = 1
INIT_ALTITUDE = 300.0


class ParseError(ValueError):
    pass


class SchemaVersionMismatch(ParseError):
    pass


class GenerationFailure(RuntimeError):
    pass


class InfeasibleInit(ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    """Recipe for a random two-district city: tall left half, low right half."""

    area_size: float = 800.0
    n_tall: int = 25
    n_low: int = 25
    tall_heights: tuple = (60.0, 100.0)
    low_heights: tuple = (15.0, 40.0)
    footprint_sizes: tuple = (30.0, 80.0)
    building_gap: float = 15.0
    n_users: int = 12
    uav_count: int = 3
    capacity: int | None = None
    user_clearance: float = 5.0
    user_height: float = 0.0
    max_attempts: int = 20000

    def to_json(self) -> dict:
        return {to_camel(k): list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, data: dict) -> "GenSpec":
        known = {to_camel(f.name): f.name for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise KeyError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**{known[k]: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass
class Scenario:
    area: tuple  # (x_min, x_max, y_min, y_max)
    buildings: list
    users: np.ndarray
    uav_count: int
    capacities: list
    propagation: PropagationParams = field(default_factory=PropagationParams)
    p_max: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    name: str = "scenario"
    generator: GenSpec | None = None

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=float).reshape(-1, 3)
        self.area = tuple(float(v) for v in self.area)
        self.capacities = [int(c) for c in self.capacities]
        self.validate()

    @property
    def n_users(self) -> int:
        return len(self.users)

    def validate(self):
        x0, x1, y0, y1 = self.area
        if not (x0 < x1 and y0 < y1):
            raise ValueError("empty area")
        if self.uav_count < 1:
            raise ValueError("need at least one UAV")
        if len(self.capacities) != self.uav_count:
            raise ValueError("one capacity per UAV required")
        if sum(self.capacities) < self.n_users:
            raise ValueError("capacities cannot host every user")
        if not self.p_max > 0:
            raise ValueError("p_max must be positive")
        u = self.users
        if np.any(u[:, 0] < x0) or np.any(u[:, 0] > x1) or np.any(u[:, 1] < y0) or np.any(u[:, 1] > y1):
            raise ValueError("user outside the area")
        for k, uk in enumerate(u):
            for q, b in enumerate(self.buildings):
                if b.contains_xy(uk[:2]):
                    raise ValueError(f"user {k} inside building {q}")

    def blockages(self):
        return all_blockages(self.users, self.buildings)

    def bounds(self) -> tuple:
        """Lower and upper corner of the UAV flight box."""
        x0, x1, y0, y1 = self.area
        return np.array([x0, y0, self.solver.z_min]), np.array([x1, y1, self.solver.z_max])


# --------------------------------------------------------------------- files

_POWER_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*(W|dBm)\s*$")


def _parse_power(value, path):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        m = _POWER_RE.match(value)
        if m:
            v = float(m.group(1))
            return v if m.group(2) == "W" else dbm_to_watts(v)
    raise ParseError(f"{path}: expected a power like '1 W' or '30 dBm', got {value!r}")


def _db(x: float) -> float:
    return round(linear_to_db(x), 10)


def scenario_to_json(sc: Scenario) -> dict:
    pr = sc.propagation
    data = {
        "schemaVersion": SCHEMA_VERSION,
        "name": sc.name,
        "seed": int(sc.seed),
        "area": dict(zip(("xMin", "xMax", "yMin", "yMax"), sc.area)),
        "buildings": [{"footprint": [list(v) for v in b.footprint], "height": b.height} for b in sc.buildings],
        "users": sc.users.tolist(),
        "uavCount": int(sc.uav_count),
        "capacities": list(sc.capacities),
        "propagation": {
            "alphaLos": pr.alpha_los,
            "alphaNlos": pr.alpha_nlos,
            "betaLosDb": _db(pr.beta_los),
            "betaNlosDb": _db(pr.beta_nlos),
            "noisePower": f"{round(watts_to_dbm(pr.noise_power), 10)!r} dBm",
        },
        "pMax": f"{sc.p_max!r} W",
        "solver": sc.solver.to_json(),
    }
    if sc.generator is not None:
        data["generator"] = sc.generator.to_json()
    return data


def _req(d, key, path):
    if not isinstance(d, dict):
        raise ParseError(f"{path}: expected an object")
    if key not in d:
        raise ParseError(f"{path}: missing required key {key!r}")
    return d[key]


def scenario_from_json(data: dict) -> Scenario:
    version = _req(data, "schemaVersion", "$")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"schemaVersion {version!r} not supported (expected {SCHEMA_VERSION})")
    try:
        area = _req(data, "area", "$")
        area_t = tuple(float(_req(area, k, "$.area")) for k in ("xMin", "xMax", "yMin", "yMax"))
        buildings = []
        for i, b in enumerate(_req(data, "buildings", "$")):
            p = f"$.buildings[{i}]"
            try:
                buildings.append(BuildingPrism(tuple(map(tuple, _req(b, "footprint", p))), _req(b, "height", p)))
            except (ValueError, TypeError) as exc:
                raise ParseError(f"{p}: {exc}") from None
        pr = _req(data, "propagation", "$")
        prop = PropagationParams(
            alpha_los=float(_req(pr, "alphaLos", "$.propagation")),
            alpha_nlos=float(_req(pr, "alphaNlos", "$.propagation")),
            beta_los=db_to_linear(float(_req(pr, "betaLosDb", "$.propagation"))),
            beta_nlos=db_to_linear(float(_req(pr, "betaNlosDb", "$.propagation"))),
            noise_power=_parse_power(_req(pr, "noisePower", "$.propagation"), "$.propagation.noisePower"),
        )
        try:
            solver = SolverConfig.from_json(data.get("solver", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"$.solver: {exc}") from None
        gen = data.get("generator")
        try:
            gen = GenSpec.from_json(gen) if gen is not None else None
        except (KeyError, TypeError) as exc:
            raise ParseError(f"$.generator: {exc}") from None
        return Scenario(
            area=area_t,
            buildings=buildings,
            users=np.array(_req(data, "users", "$"), dtype=float),
            uav_count=int(_req(data, "uavCount", "$")),
            capacities=_req(data, "capacities", "$"),
            propagation=prop,
            p_max=_parse_power(_req(data, "pMax", "$"), "$.pMax"),
            solver=solver,
            seed=int(data.get("seed", 0)),
            name=str(data.get("name", "scenario")),
            generator=gen,
        )
    except ParseError:
        raise
    except (ValueError, TypeError) as exc:
        raise ParseError(f"$: {exc}") from None


def dumps_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_json(sc), indent=2) + "\n"


def save_scenario(sc: Scenario, path):
    Path(path).write_text(dumps_scenario(sc))


def loads_scenario(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_json(data)


def load_scenario(path) -> Scenario:
    return loads_scenario(Path(path).read_text())


def bundled_scenario_path(n_users: int = 12) -> Path:
    name = "default_scenario.json" if n_users == 12 else f"scenario_{n_users}users.json"
    return Path(str(resources.files("rsmauav") / "data" / name))


def load_default_scenario(n_users: int = 12) -> Scenario:
    return load_scenario(bundled_scenario_path(n_users))


# ---------------------------------------------------------------- generation


def _overlaps(rect, rects, gap):
    x0, x1, y0, y1 = rect
    for a0, a1, b0, b1 in rects:
        if x0 < a1 + gap and a0 < x1 + gap and y0 < b1 + gap and b0 < y1 + gap:
            return True
    return False


def generate_scenario(spec: GenSpec, seed: int, name: str | None = None, solver: SolverConfig | None = None) -> Scenario:
    """Seeded random city; deterministic in (spec, seed)."""
    rng = np.random.default_rng(seed)
    L = spec.area_size
    half = L / 2.0
    rects, buildings = [], []
    lo, hi = spec.footprint_sizes
    for side, count, heights in ((0, spec.n_tall, spec.tall_heights), (1, spec.n_low, spec.low_heights)):
        placed = 0
        attempts = 0
        while placed < count:
            attempts += 1
            if attempts > spec.max_attempts:
                raise GenerationFailure(f"could not place {count} buildings in half {side}")
            w, d = rng.uniform(lo, hi, size=2)
            x0 = rng.uniform(side * half, side * half + half - w)
            y0 = rng.uniform(0.0, L - d)
            rect = (x0, x0 + w, y0, y0 + d)
            if _overlaps(rect, rects, spec.building_gap):
                continue
            h = rng.uniform(*heights)
            rects.append(rect)
            buildings.append(BuildingPrism.box(*(round(v, 3) for v in rect), round(h, 3)))
            placed += 1

    users = []
    attempts = 0
    c = spec.user_clearance
    while len(users) < spec.n_users:
        attempts += 1
        if attempts > spec.max_attempts:
            raise GenerationFailure("could not place users in free space")
        x, y = (round(v, 3) for v in rng.uniform(0.0, L, size=2))
        if any(r[0] - c <= x <= r[1] + c and r[2] - c <= y <= r[3] + c for r in rects):
            continue
        users.append([x, y, spec.user_height])

    cap = spec.capacity or math.ceil(1.5 * spec.n_users / spec.uav_count)
    return Scenario(
        area=(0.0, L, 0.0, L),
        buildings=buildings,
        users=np.array(users),
        uav_count=spec.uav_count,
        capacities=[cap] * spec.uav_count,
        solver=solver or SolverConfig(),
        seed=seed,
        name=name or f"generated-seed{seed}",
        generator=spec,
    )


def reseeded(sc: Scenario, seed: int) -> Scenario:
    """Same recipe, new seed: regenerate when the scenario carries its recipe."""
    if sc.generator is None:
        return replace(sc, seed=seed)
    new = generate_scenario(sc.generator, seed, name=f"{sc.name}-seed{seed}", solver=sc.solver)
    return replace(new, propagation=sc.propagation, p_max=sc.p_max, capacities=list(sc.capacities))


# ------------------------------------------------------------ initialization


def _clusters(xy, k, seed):
    if k == 1:
        return np.zeros(len(xy), dtype=int)
    rng = np.random.default_rng(seed)
    for _ in range(50):
        _, labels = kmeans2(xy, k, minit="++", seed=rng)
        if len(np.unique(labels)) == k:
            return labels
    raise InfeasibleInit("k-means could not form non-empty clusters")


def greedy_association(gains, capacities) -> np.ndarray:
    """Assign users, strongest best-gain first, to their best UAV with room left."""
    g = np.asarray(gains, float)
    K, M = g.shape
    room = np.array(capacities, dtype=int)
    if room.sum() < K:
        raise InfeasibleInit("capacities cannot host every user")
    c = np.zeros((K, M))
    for k in sorted(range(K), key=lambda k: (-g[k].max(), k)):
        for m in sorted(range(M), key=lambda m: (-g[k, m], m)):
            if room[m] > 0:
                c[k, m] = 1.0
                room[m] -= 1
                break
    return c


def equal_power(assoc_values, p_max, common=True) -> PowerAllocation:
    """Split the budget equally over the common stream and every private stream."""
    c = np.asarray(assoc_values, float) >= 0.5
    n = c.sum(axis=0)
    K, M = c.shape
    if common:
        share = p_max / (n + 1.0)
        pc = share.copy()
    else:
        share = np.where(n > 0, p_max / np.maximum(n, 1), 0.0)
        pc = np.zeros(M)
    return PowerAllocation(pc, c * share[None, :])


def initialize(sc: Scenario, common: bool = True) -> NetworkState:
    """Cluster users, hover each UAV 300 m above its cluster medoid, associate greedily."""
    xy = sc.users[:, :2]
    labels = _clusters(xy, sc.uav_count, sc.seed)
    lo, hi = sc.bounds()
    pos = []
    for m in range(sc.uav_count):
        members = np.flatnonzero(labels == m)
        pts = xy[members]
        dsum = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2).sum(axis=1)
        med = pts[int(np.argmin(dsum))]
        pos.append(np.clip([med[0], med[1], INIT_ALTITUDE], lo, hi))
    pos = np.array(pos)
    los = link_states(sc.blockages(), pos)
    g = gain_matrix(sc.users, pos, los, sc.propagation)
    c = greedy_association(g, sc.capacities)
    power = equal_power(c, sc.p_max, common=common)
    return NetworkState(pos, power, Association(c, sc.capacities))
