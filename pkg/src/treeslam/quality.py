"""Quality metrics of a fused landmark map: blur ratio, tree clusters and box dimension.

All grid metrics work on the horizontal projection by default, with the
rounding grid anchored at the bounding-box minimum of the map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from treeslam.chain import Chain
from treeslam.cloud import Frame
from treeslam.errors import DegenerateFit, EmptyMap, LengthMismatch, NoClusters

BLUR_FINE = 0.2
BLUR_COARSE = 10.0
CLUSTER_RADIUS = 0.5
CLUSTER_MIN_POINTS = 15


@dataclass(frozen=True, eq=False)
class FusedMap:
    """Every frame point in frame-0 coordinates, tagged with its frame index."""

    points: np.ndarray
    frame_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    @property
    def extents(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.points) == 0:
            raise EmptyMap("map has no points")
        return self.points.min(axis=0), self.points.max(axis=0)


@dataclass(frozen=True, eq=False)
class Cluster:
    points: np.ndarray
    frame_ids: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(np.sum((self.points - self.center) ** 2, axis=1))))

    def __len__(self) -> int:
        return len(self.points)


def build_map(frames: Sequence[Frame], chain: Chain, include: Sequence[int] | None = None) -> FusedMap:
    """Union of all frames moved by their chain totals (optionally a subset)."""
    if len(frames) != len(chain):
        raise LengthMismatch(f"{len(frames)} frames but {len(chain)} poses")
    idx = range(len(frames)) if include is None else sorted(include)
    parts = [chain.totals[k].apply(frames[k].points) for k in idx]
    ids = [np.full(len(frames[k]), k) for k in idx]
    if not parts:
        return FusedMap(np.zeros((0, 3)), np.zeros(0, dtype=int))
    return FusedMap(np.vstack(parts), np.concatenate(ids).astype(int))


def _coords(m: FusedMap, dim: int) -> np.ndarray:
    if len(m) == 0:
        raise EmptyMap("map has no points")
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    return m.points[:, :dim]


def occupied_cells(m: FusedMap, eps: float, dim: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Integer cells ``floor((x - min) / eps)`` that hold points, with point counts."""
    xy = _coords(m, dim)
    cells = np.floor((xy - xy.min(axis=0)) / eps).astype(np.int64)
    return np.unique(cells, axis=0, return_counts=True)


def blur_ratio(m: FusedMap, eps_fine: float = BLUR_FINE, eps_coarse: float = BLUR_COARSE, dim: int = 2) -> float:
    """Fine occupied area over coarse occupied area, ``N1 e1^d / (N2 e2^d)``."""
    if not 0 < eps_fine < eps_coarse:
        raise ValueError("need 0 < eps_fine < eps_coarse")
    fine = len(occupied_cells(m, eps_fine, dim)[0])
    coarse = len(occupied_cells(m, eps_coarse, dim)[0])
    return fine * eps_fine**dim / (coarse * eps_coarse**dim)


def cell_dump(m: FusedMap, eps: float = BLUR_FINE) -> np.ndarray:
    """Rows ``x y count`` for each occupied horizontal cell; x, y are cell centres."""
    cells, counts = occupied_cells(m, eps, 2)
    origin = m.points[:, :2].min(axis=0)
    centres = origin + (cells + 0.5) * eps
    return np.column_stack([centres, counts])


def cluster_map(m: FusedMap, r_alpha: float = CLUSTER_RADIUS, min_points: int = CLUSTER_MIN_POINTS) -> list[Cluster]:
    """Connected components of the horizontal ``2 r_alpha`` distance graph.

    Components smaller than ``min_points`` are dropped. Cluster order follows
    the smallest point index of each component.
    """
    if len(m) == 0:
        return []
    xy = m.points[:, :2]
    pairs = cKDTree(xy).query_pairs(2.0 * r_alpha, output_type="ndarray")
    n = len(xy)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    clusters = []
    for members in np.split(order, bounds):
        if len(members) >= min_points:
            clusters.append(Cluster(m.points[members], m.frame_ids[members]))
    return clusters


def discarded_fraction(m: FusedMap, clusters: Sequence[Cluster]) -> float:
    if len(m) == 0:
        return 0.0
    return 1.0 - sum(len(c) for c in clusters) / len(m)


def cluster_rmse(clusters: Sequence[Cluster]) -> float:
    """Mean of the per-cluster RMSE values."""
    if not clusters:
        raise NoClusters("no clusters to score")
    return float(np.mean([c.rmse for c in clusters]))


def pooled_rmse(clusters: Sequence[Cluster]) -> float:
    """RMS distance to the own cluster centre over all clustered points."""
    if not clusters:
        raise NoClusters("no clusters to score")
    sq = np.concatenate([np.sum((c.points - c.center) ** 2, axis=1) for c in clusters])
    return float(np.sqrt(sq.mean()))


def box_dimension(m: FusedMap, scales: Sequence[float], dim: int = 2) -> tuple[float, float]:
    """Box-counting dimension and the R^2 of the log-log fit."""
    eps = np.asarray(sorted(scales), dtype=float)
    if len(eps) < 3 or np.any(eps <= 0) or eps[-1] / eps[0] < 10.0 - 1e-9:
        raise DegenerateFit("need at least 3 positive scales spanning a decade")
    counts = np.array([len(occupied_cells(m, e, dim)[0]) for e in eps], dtype=float)
    x, y = np.log(1.0 / eps), np.log(counts)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), r2


@dataclass(frozen=True)
class MetricsReport:
    beta: float
    e_c: float
    clusters: int
    discarded: float
    dimension: float | None = None
    dimension_r2: float | None = None

    def format(self) -> str:
        parts = [f"beta={self.beta:.6g}", f"e_C={self.e_c:.6g}", f"clusters={self.clusters}", f"discarded={self.discarded:.4f}"]
        if self.dimension is not None:
            parts.insert(2, f"d={self.dimension:.4f}")
            parts.append(f"d_r2={self.dimension_r2:.4f}")
        return " ".join(parts)


def default_scales(m: FusedMap, finest: float = 0.2, steps: int = 6) -> list[float]:
    """Geometric scales from ``finest`` up to a tenth of the larger map side (at least one decade)."""
    lo, hi = m.extents
    top = max(10.0 * finest, 0.1 * float(np.max(hi[:2] - lo[:2])))
    return list(np.geomspace(finest, top, steps))


def measure(m: FusedMap, eps_fine=BLUR_FINE, eps_coarse=BLUR_COARSE, r_alpha=CLUSTER_RADIUS,
            min_points=CLUSTER_MIN_POINTS, scales: Sequence[float] | None = None, dim: int = 2) -> MetricsReport:
    clusters = cluster_map(m, r_alpha, min_points)
    e_c = cluster_rmse(clusters) if clusters else math.nan
    d = r2 = None
    if scales is not None:
        d, r2 = box_dimension(m, scales)
    return MetricsReport(blur_ratio(m, eps_fine, eps_coarse, dim), e_c, len(clusters), discarded_fraction(m, clusters), d, r2)
