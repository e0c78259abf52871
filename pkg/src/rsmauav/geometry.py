"""Building blockage geometry.

Each ground user sees a convex prism building as a silhouette made of the
top edges of the side faces turned toward it plus the outer vertical edges of
those faces.  A plane through the user and each silhouette edge bounds the
user's shadow cone for that building: a point lies in the shadow iff its
directed distance to every plane of the building is non-positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Directed distances within this band of zero are classified as non-positive.
BOUNDARY_TOL = 1e-9


class UserInsideBuilding(ValueError):
    pass


class InvalidBuilding(ValueError):
    pass


def as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite point {p!r}")
    return arr


def _polygon_area2(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class BuildingPrism:
    """Vertical prism with a convex counter-clockwise footprint, base at z=0."""

    footprint: tuple
    height: float

    def __post_init__(self):
        fp = tuple((float(x), float(y)) for x, y in self.footprint)
        object.__setattr__(self, "footprint", fp)
        object.__setattr__(self, "height", float(self.height))
        if len(fp) < 3:
            raise InvalidBuilding("footprint needs at least 3 vertices")
        if not self.height > 0:
            raise InvalidBuilding(f"height must be positive, got {self.height}")
        xy = np.array(fp)
        edges = np.roll(xy, -1, axis=0) - xy
        nxt = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        if np.any(cross <= 0):
            raise InvalidBuilding("footprint must be strictly convex and counter-clockwise")

    @classmethod
    def box(cls, x0, x1, y0, y1, height):
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)), height)

    @property
    def vertices(self) -> np.ndarray:
        return np.array(self.footprint)

    @property
    def outward_normals(self) -> np.ndarray:
        """Unit outward horizontal normal of each side face (edge i -> i+1)."""
        xy = self.vertices
        e = np.roll(xy, -1, axis=0) - xy
        n = np.column_stack([e[:, 1], -e[:, 0]])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def centroid(self) -> np.ndarray:
        """Volume centroid (area centroid of the footprint, half height)."""
        xy = self.vertices
        x, y = xy[:, 0], xy[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        w = x * yn - xn * y
        a = w.sum() / 2.0
        cx = ((x + xn) * w).sum() / (6.0 * a)
        cy = ((y + yn) * w).sum() / (6.0 * a)
        return np.array([cx, cy, self.height / 2.0])

    def contains_xy(self, xy, tol: float = 0.0) -> bool:
        """True if the horizontal point is inside or on the footprint."""
        v = self.vertices
        n = self.outward_normals
        s = np.einsum("ij,ij->i", n, np.asarray(xy, float)[None, :2] - v)
        return bool(np.all(s <= tol))

    def max_vertex_distance(self, xy) -> float:
        return float(np.max(np.linalg.norm(self.vertices - np.asarray(xy, float)[:2], axis=1)))


@dataclass(frozen=True)
class BlockingPlane:
    normal: np.ndarray
    origin_offset: float
    building_id: int
    edge_id: int

    def distance(self, p) -> float:
        return directed_distance(self, p)


def directed_distance(plane: BlockingPlane, p) -> float:
    """Signed distance of ``p`` along the plane's unit normal."""
    return float(np.dot(plane.normal, np.asarray(p, dtype=float)) - plane.origin_offset)


def visible_faces(user, building: BuildingPrism) -> list[int]:
    u = as_point(user)[:2]
    v = building.vertices
    mid = 0.5 * (v + np.roll(v, -1, axis=0))
    dots = np.einsum("ij,ij->i", building.outward_normals, mid - u)
    return [i for i in range(len(v)) if dots[i] < 0]


def _plane_through(s, a, b, sref, building_id, edge_id):
    n = np.cross(a - s, b - s)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("degenerate blocking plane")
    n = n / norm
    d0 = float(np.dot(n, s))
    if np.dot(n, sref) - d0 > 0:
        n, d0 = -n, -d0
    return BlockingPlane(n, d0, building_id, edge_id)


def build_blockage(user, building: BuildingPrism, building_id: int = 0) -> list[BlockingPlane]:
    """Blocking planes of one building as seen from ``user``.

    Edge ids: ``i`` is the top edge of face i (vertex i to i+1), ``n + i`` is
    the vertical edge standing on vertex i.
    """
    s = as_point(user)
    if building.contains_xy(s[:2]):
        raise UserInsideBuilding(f"user {tuple(s)} lies inside building {building_id}")
    h = building.height
    if s[2] >= h:
        return []
    faces = visible_faces(s, building)
    if not faces:
        return []
    v = building.vertices
    n = len(v)
    sref = s + 2.0 * (building.centroid - s)

    planes = []
    touch = {}
    for i in faces:
        a = np.array([v[i, 0], v[i, 1], h])
        b = np.array([v[(i + 1) % n, 0], v[(i + 1) % n, 1], h])
        planes.append(_plane_through(s, a, b, sref, building_id, i))
        touch[i] = touch.get(i, 0) + 1
        touch[(i + 1) % n] = touch.get((i + 1) % n, 0) + 1
    for j in sorted(touch):
        if touch[j] != 1:
            continue
        a = np.array([v[j, 0], v[j, 1], 0.0])
        b = np.array([v[j, 0], v[j, 1], h])
        planes.append(_plane_through(s, a, b, sref, building_id, n + j))
    return planes


@dataclass
class BlockagePlaneSet:
    """All blocking planes of one user, grouped by building."""

    user_id: int
    user: np.ndarray
    planes_by_building: dict = field(default_factory=dict)

    def __post_init__(self):
        planes = [p for q in sorted(self.planes_by_building) for p in self.planes_by_building[q]]
        self._normals = np.array([p.normal for p in planes]).reshape(-1, 3)
        self._offsets = np.array([p.origin_offset for p in planes], dtype=float)
        self._groups = np.array([p.building_id for p in planes], dtype=int)
        self._buildings = np.unique(self._groups)

    @property
    def planes(self) -> list[BlockingPlane]:
        return [p for q in sorted(self.planes_by_building) for p in self.planes_by_building[q]]

    def distances(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self._normals.T - self._offsets

    def is_los_many(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.ones(len(pts), dtype=bool)
        if len(self._offsets) == 0:
            return out
        pos = self.distances(pts) > BOUNDARY_TOL
        for q in self._buildings:
            out &= pos[:, self._groups == q].any(axis=1)
        return out


def user_blockage(user_id: int, user, buildings) -> BlockagePlaneSet:
    s = as_point(user)
    table = {}
    for q, b in enumerate(buildings):
        planes = build_blockage(s, b, q)
        if planes:
            table[q] = planes
    return BlockagePlaneSet(user_id, s, table)


def all_blockages(users, buildings) -> list[BlockagePlaneSet]:
    return [user_blockage(k, u, buildings) for k, u in enumerate(users)]


def is_los(blockage: BlockagePlaneSet, p) -> bool:
    """LoS iff every building has a plane with strictly positive distance."""
    return bool(blockage.is_los_many(as_point(p))[0])


def raycast_blocked_many(user, points, buildings) -> np.ndarray:
    """Exact segment/prism clipping for many segments sharing one endpoint."""
    s = as_point(user)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts - s
    blocked = np.zeros(len(pts), dtype=bool)
    for b in buildings:
        lo = np.zeros(len(pts))
        hi = np.ones(len(pts))
        ok = np.ones(len(pts), dtype=bool)
        # half-spaces written as f0 + t * df <= 0
        halfspaces = [
            (float(np.dot(n, s[:2] - v)), d[:, :2] @ n)
            for n, v in zip(b.outward_normals, b.vertices)
        ]
        halfspaces.append((-s[2], -d[:, 2]))
        halfspaces.append((s[2] - b.height, d[:, 2]))
        for f0, df in halfspaces:
            par = df == 0
            ok &= ~(par & (f0 > 0))
            with np.errstate(divide="ignore", invalid="ignore"):
                t = -f0 / df
            hi = np.where(df > 0, np.minimum(hi, t), hi)
            lo = np.where(df < 0, np.maximum(lo, t), lo)
        blocked |= ok & (hi - lo > 1e-12)
    return blocked


def raycast_blocked(user, p, buildings) -> bool:
    """True iff the segment from ``user`` to ``p`` passes through any prism."""
    return bool(raycast_blocked_many(user, as_point(p), buildings)[0])


@dataclass(frozen=True)
class LosConstraint:
    """Half-space ``normal . x >= offset + margin`` keeping a UAV out of a shadow."""

    normal: np.ndarray
    offset: float
    margin: float
    user_id: int
    building_id: int
    edge_id: int
    ref_distance: float
    infeasible_at_ref: bool

    def slack(self, x) -> float:
        return float(np.dot(self.normal, x) - self.offset - self.margin)


def active_los_constraints(blockages, served_users, x_ref, margin: float = 0.0) -> list[LosConstraint]:
    """Linearize the LoS region of each served user around ``x_ref``.

    For every (user, building) pair the plane with the largest directed
    distance at ``x_ref`` becomes a half-space constraint.
    """
    x = as_point(x_ref)
    out = []
    for k in served_users:
        bset = blockages[k]
        for q in sorted(bset.planes_by_building):
            planes = bset.planes_by_building[q]
            dist = [directed_distance(p, x) for p in planes]
            i = int(np.argmax(dist))
            best = planes[i]
            out.append(
                LosConstraint(
                    normal=best.normal,
                    offset=best.origin_offset,
                    margin=margin,
                    user_id=k,
                    building_id=q,
                    edge_id=best.edge_id,
                    ref_distance=dist[i],
                    infeasible_at_ref=dist[i] <= BOUNDARY_TOL,
                )
            )
    return out
