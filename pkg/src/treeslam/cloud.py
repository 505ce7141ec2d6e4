"""Sparse landmark clouds: frames, trimmed match error, density and view-cone overlap."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree
import shapely
from shapely import affinity
from shapely.geometry import Polygon

from treeslam.errors import DegenerateCloud, EmptyCloud
from treeslam.se3 import RigidTransform

ARC_SEGMENTS = 128
DEDUP_TOL = 1e-6


@dataclass(frozen=True)
class ViewCone:
    """Horizontal sector seen by the scanner: apex at the origin, facing +x."""

    half_angle: float = math.radians(60.0)
    max_range: float = 35.0

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        rng = np.linalg.norm(pts, axis=1)
        bearing = np.abs(np.arctan2(pts[:, 1], pts[:, 0]))
        return (rng <= self.max_range) & (bearing <= self.half_angle)

    @property
    def area(self) -> float:
        return self.half_angle * self.max_range**2


@dataclass(frozen=True, eq=False)
class Frame:
    """One scanner view: landmark points in scanner coordinates."""

    id: int
    points: np.ndarray
    cone: ViewCone = field(default_factory=ViewCone)

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"frame {self.id} has non-finite points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class ConePose:
    pose: RigidTransform
    cone: ViewCone


def as_points(cloud: Frame | np.ndarray) -> np.ndarray:
    if isinstance(cloud, Frame):
        return cloud.points
    return np.asarray(cloud, dtype=float).reshape(-1, 3)


def transform_cloud(frame: Frame, t: RigidTransform) -> Frame:
    return Frame(frame.id, t.apply(frame.points), frame.cone)


def keep_count(n: int, outlier_ratio: float) -> int:
    """Number of correspondences kept by trimming, ``ceil((1 - gamma) n)``."""
    return max(1, min(n, math.ceil((1.0 - outlier_ratio) * n - 1e-9)))


def trimmed_rms(distances: np.ndarray, keep: int) -> tuple[float, np.ndarray]:
    """RMS of the ``keep`` smallest distances and their indices (stable order)."""
    order = np.argsort(distances, kind="stable")[:keep]
    return float(np.sqrt(np.mean(distances[order] ** 2))), order


def match_error(
    p: Frame | np.ndarray, q: Frame | np.ndarray, outlier_ratio: float = 0.0, tree: cKDTree | None = None
) -> tuple[float, np.ndarray]:
    """Trimmed RMS distance from each point of ``q`` to its nearest point of ``p``.

    Returns the error and the retained correspondences as rows ``(q_index,
    p_index)``. The measure is directional: ``q`` is matched into ``p``.
    """
    pp, qq = as_points(p), as_points(q)
    if len(pp) == 0 or len(qq) == 0:
        raise EmptyCloud("match_error needs two nonempty clouds")
    if tree is None:
        tree = cKDTree(pp)
    dist, idx = tree.query(qq)
    err, kept = trimmed_rms(dist, keep_count(len(qq), outlier_ratio))
    return err, np.column_stack([kept, idx[kept]])


def horizontal_unique(points: np.ndarray, tol: float = DEDUP_TOL) -> np.ndarray:
    xy = np.asarray(points, dtype=float)[:, :2]
    keys = np.round(xy / tol).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return xy[np.sort(first)]


def delaunay_neighbors(xy: np.ndarray) -> list[np.ndarray]:
    try:
        tri = Delaunay(xy)
    except QhullError as exc:
        raise DegenerateCloud("points are collinear or coincident") from exc
    indptr, indices = tri.vertex_neighbor_vertices
    return [indices[indptr[k] : indptr[k + 1]] for k in range(len(xy))]


def mean_neighbor_distance(cloud: Frame | np.ndarray) -> float:
    """Mean over points of the mean Delaunay-edge length to natural neighbours.

    Computed on the horizontal projection after removing duplicate points.
    """
    xy = horizontal_unique(as_points(cloud))
    if len(xy) < 3:
        raise DegenerateCloud("need at least 3 distinct points")
    neighbours = delaunay_neighbors(xy)
    per_point = [np.linalg.norm(xy[nb] - xy[k], axis=1).mean() for k, nb in enumerate(neighbours)]
    return float(np.mean(per_point))


@lru_cache(maxsize=64)
def _sector(half_angle: float, max_range: float) -> Polygon:
    if half_angle >= math.pi:
        angles = np.linspace(-math.pi, math.pi, 2 * ARC_SEGMENTS, endpoint=False)
        return Polygon(np.column_stack([np.cos(angles), np.sin(angles)]) * max_range)
    angles = np.linspace(-half_angle, half_angle, ARC_SEGMENTS + 1)
    arc = np.column_stack([np.cos(angles), np.sin(angles)]) * max_range
    return Polygon(np.vstack([[0.0, 0.0], arc]))


def sector_polygon(cp: ConePose) -> Polygon:
    """The view cone of a pose projected to the horizontal plane."""
    base = _sector(cp.cone.half_angle, cp.cone.max_range)
    rotated = affinity.rotate(base, cp.pose.yaw, origin=(0, 0), use_radians=True)
    x, y = cp.pose.translation[:2]
    return affinity.translate(rotated, x, y)


def overlap_ratio(a: ConePose, b: ConePose) -> float:
    """Shared sector area over the smaller sector area, in ``[0, 1]``."""
    gap = np.linalg.norm(a.pose.translation[:2] - b.pose.translation[:2])
    if gap > a.cone.max_range + b.cone.max_range:
        return 0.0
    pa, pb = sector_polygon(a), sector_polygon(b)
    smaller = min(pa.area, pb.area)
    if smaller <= 0.0:
        return 0.0
    return float(min(1.0, pa.intersection(pb).area / smaller))


def overlap_ratios(cones: list[ConePose], i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """``overlap_ratio(cones[i[k]], cones[j[k]])`` for many pairs, each sector built once."""
    i, j = np.asarray(i, dtype=int), np.asarray(j, dtype=int)
    out = np.zeros(len(i))
    xy = np.array([c.pose.translation[:2] for c in cones]).reshape(-1, 2)
    reach = np.array([c.cone.max_range for c in cones])
    near = np.linalg.norm(xy[i] - xy[j], axis=1) <= reach[i] + reach[j]
    if not near.any():
        return out
    polys = np.array([sector_polygon(c) for c in cones], dtype=object)
    area = shapely.area(polys)
    a, b = i[near], j[near]
    smaller = np.minimum(area[a], area[b])
    shared = shapely.area(shapely.intersection(polys[a], polys[b]))
    with np.errstate(invalid="ignore", divide="ignore"):
        out[near] = np.where(smaller > 0.0, np.minimum(1.0, shared / smaller), 0.0)
    return out
