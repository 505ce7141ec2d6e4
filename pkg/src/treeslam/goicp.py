"""Branch-and-bound global registration tuned for sparse near-uniform clouds.

The search space is an angle-axis box (yaw half-width ``horizontal_zone``,
roll/pitch half-width ``tilt_zone``) times a translation box. Rotations act
about the centroid of the initially placed source cloud, which keeps the
per-point rotation bound small. Cells are explored best-first by lower bound,
ties broken by centre error; every expanded cell seeds a local ICP at its
centre, and cells at the ``(sigma_t, sigma_r)`` granularity are not split
further because local ICP is trusted to finish from there.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from treeslam.cloud import Frame, as_points, keep_count
from treeslam.errors import EmptyCloud
from treeslam.icp import IcpResult, icp_match
from treeslam.se3 import RigidTransform, compose, rodrigues

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class BnbConfig:
    sigma_t: float
    sigma_r: float
    horizontal_zone: float
    tilt_zone: float
    translation_box: tuple[float, float, float] = (10.0, 10.0, 2.0)
    sigma_tilt: float | None = None
    tolerance: float = 0.0
    max_nodes: int = 100_000
    icp_max_iter: int = 60

    def __post_init__(self) -> None:
        if min(self.sigma_t, self.sigma_r, self.horizontal_zone, self.tilt_zone, *self.translation_box) <= 0:
            raise ValueError("BnB granularities, zones and box extents must be positive")
        if self.tilt_zone > self.horizontal_zone:
            raise ValueError("tilt_zone must not exceed horizontal_zone")

    @property
    def rotation_granularity(self) -> np.ndarray:
        tilt = self.sigma_tilt if self.sigma_tilt is not None else self.sigma_r
        return np.array([tilt, tilt, self.sigma_r])

    @property
    def rotation_half_widths(self) -> np.ndarray:
        return np.array([self.tilt_zone, self.tilt_zone, self.horizontal_zone])


# Tilt is confined to the tilt limit of local ICP; the search stops as soon as
# an incumbent reaches the success error, which is what ``tolerance`` encodes.
TILT_LIMIT = math.radians(8.2)
SUCCESS_ERROR = 0.2

PRESETS: dict[str, BnbConfig] = {
    "general": BnbConfig(
        sigma_t=1.2,
        sigma_r=math.radians(1.0),
        horizontal_zone=math.radians(90.0),
        tilt_zone=math.radians(90.0),
    ),
    "sparse-uniform": BnbConfig(
        sigma_t=1.9,
        sigma_r=math.radians(3.7),
        horizontal_zone=math.radians(30.0),
        tilt_zone=TILT_LIMIT,
        tolerance=SUCCESS_ERROR,
    ),
    # same search with the granularity computed from L0 = 3.5, gamma = 0.6, R = 35
    "sparse-uniform-derived": BnbConfig(
        sigma_t=1.75,
        sigma_r=1.75 / (math.sqrt(0.4) * 35.0),
        horizontal_zone=math.radians(30.0),
        tilt_zone=TILT_LIMIT,
        tolerance=SUCCESS_ERROR,
    ),
}


def preset(name: str) -> BnbConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown BnB preset {name!r}; choose from {sorted(PRESETS)}") from None


def bnb_cell_count(cfg: BnbConfig) -> int:
    """Initial-grid cell count: rotation extents over ``sigma_r`` times box over ``sigma_t``."""
    rot = np.prod([math.ceil(2.0 * h / cfg.sigma_r - 1e-9) for h in cfg.rotation_half_widths])
    trans = np.prod([math.ceil(e / cfg.sigma_t - 1e-9) for e in cfg.translation_box])
    return int(rot * trans)


def rotation_radius(half_diagonal: float, radii: np.ndarray) -> np.ndarray:
    """Largest displacement of points at ``radii`` under rotations within an angle."""
    return 2.0 * math.sin(min(0.5 * half_diagonal, 0.5 * math.pi)) * radii


def lower_bound(residuals: np.ndarray, radii: np.ndarray, sigma_t: float, sigma_r: float) -> float:
    """``sqrt(sum max(e_p - gamma_rp - gamma_t, 0)^2)`` for a cubic cell.

    ``gamma_t = sqrt(3) sigma_t`` and ``gamma_rp = 2 sin(min(sqrt(3) sigma_r / 2,
    pi / 2)) |p|`` with ``sigma_*`` the cell half-widths.
    """
    residuals = np.asarray(residuals, dtype=float)
    slack = rotation_radius(SQRT3 * sigma_r, np.asarray(radii, dtype=float)) + SQRT3 * sigma_t
    return float(np.sqrt(np.sum(np.maximum(residuals - slack, 0.0) ** 2)))


def trimmed_lower_bound(
    residuals: np.ndarray, radii: np.ndarray, rot_diag: float, trans_diag: float, keep: int
) -> float:
    """Lower bound of the trimmed RMS over a cell with the given half-diagonals.

    Every per-point residual is bounded below independently, so the RMS of the
    ``keep`` smallest bounds cannot exceed the trimmed RMS of any transform in
    the cell.
    """
    b = np.maximum(residuals - rotation_radius(rot_diag, radii) - trans_diag, 0.0)
    b = np.partition(b, keep - 1)[:keep] if keep < len(b) else b
    return float(np.sqrt(np.mean(b * b)))


@dataclass(order=True)
class BnbNode:
    lower: float
    upper: float
    order: int
    rot_center: np.ndarray = field(compare=False)
    rot_half: np.ndarray = field(compare=False)
    trans_center: np.ndarray = field(compare=False)
    trans_half: np.ndarray = field(compare=False)


def rotation_from_vector(r: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(r))
    if angle == 0.0:
        return np.eye(3)
    return rodrigues(r / angle, angle)


@dataclass
class SearchStats:
    nodes: int = 0
    icp_calls: int = 0
    pruned: int = 0
    truncated: bool = False
    incumbent_trace: list[float] = field(default_factory=list)


class _Problem:
    def __init__(self, p: np.ndarray, q: np.ndarray, init: RigidTransform, outlier_ratio: float, cfg: BnbConfig):
        self.p = p
        self.q = q
        self.init = init
        self.cfg = cfg
        self.outlier_ratio = outlier_ratio
        self.tree = cKDTree(p)
        placed = init.apply(q)
        self.center = placed.mean(axis=0)
        self.local = placed - self.center
        self.radii = np.linalg.norm(self.local, axis=1)
        self.keep = keep_count(len(q), outlier_ratio)

    def transform(self, r: np.ndarray, t: np.ndarray) -> RigidTransform:
        rot = rotation_from_vector(r)
        move = RigidTransform(rot, self.center + t - rot @ self.center)
        return compose(move, self.init)

    def evaluate(self, r: np.ndarray, t: np.ndarray, rot_half: np.ndarray, trans_half: np.ndarray):
        rot = rotation_from_vector(r)
        moved = self.local @ rot.T + (self.center + t)
        dist, _ = self.tree.query(moved)
        part = np.partition(dist, self.keep - 1)[: self.keep] if self.keep < len(dist) else dist
        upper = float(np.sqrt(np.mean(part * part)))
        lower = trimmed_lower_bound(
            dist, self.radii, float(np.linalg.norm(rot_half)), float(np.linalg.norm(trans_half)), self.keep
        )
        return lower, upper


def _split(center: np.ndarray, half: np.ndarray, granularity: np.ndarray):
    axes = [k for k in range(3) if half[k] > granularity[k] * (1 + 1e-9)]
    new_half = half.copy()
    new_half[axes] *= 0.5
    options = []
    for signs in itertools.product((-1.0, 1.0), repeat=len(axes)):
        c = center.copy()
        for k, s in zip(axes, signs):
            c[k] += s * new_half[k]
        options.append(c)
    return options, new_half


def go_icp(
    p: Frame | np.ndarray,
    q: Frame | np.ndarray,
    cfg: BnbConfig,
    outlier_ratio: float = 0.0,
    init: RigidTransform | None = None,
    stats: SearchStats | None = None,
) -> IcpResult:
    """Globally search for the transform mapping ``q`` into ``p``'s frame.

    The search space is centred on ``init``. Nodes whose lower bound reaches
    ``incumbent - tolerance`` are pruned. If ``max_nodes`` is exhausted the
    incumbent is returned with ``converged=False``. Serial and deterministic.
    """
    pp, qq = as_points(p), as_points(q)
    if len(pp) == 0 or len(qq) == 0:
        raise EmptyCloud("go_icp needs two nonempty clouds")
    init = init if init is not None else RigidTransform.identity()
    stats = stats if stats is not None else SearchStats()
    prob = _Problem(pp, qq, init, outlier_ratio, cfg)
    rot_gran = cfg.rotation_granularity
    trans_gran = np.full(3, cfg.sigma_t)

    def local(t0: RigidTransform) -> IcpResult:
        stats.icp_calls += 1
        return icp_match(pp, qq, outlier_ratio, t0, cfg.icp_max_iter, tree=prob.tree)

    best = local(init)
    stats.incumbent_trace.append(best.error)
    counter = itertools.count()
    root_r, root_t = np.zeros(3), np.zeros(3)
    root_rh, root_th = cfg.rotation_half_widths.copy(), 0.5 * np.asarray(cfg.translation_box, dtype=float)
    lo, up = prob.evaluate(root_r, root_t, root_rh, root_th)
    heap = [BnbNode(lo, up, next(counter), root_r, root_rh, root_t, root_th)]

    while heap:
        node = heapq.heappop(heap)
        if node.lower >= best.error - cfg.tolerance:
            stats.pruned += 1 + len(heap)
            break
        stats.nodes += 1
        if stats.nodes > cfg.max_nodes:
            stats.truncated = True
            break
        res = local(prob.transform(node.rot_center, node.trans_center))
        if res.error < best.error:
            best = res
            stats.incumbent_trace.append(best.error)
        rot_centers, rot_half = _split(node.rot_center, node.rot_half, rot_gran)
        trans_centers, trans_half = _split(node.trans_center, node.trans_half, trans_gran)
        if len(rot_centers) == 1 and len(trans_centers) == 1:
            continue
        for rc in rot_centers:
            for tc in trans_centers:
                lo, up = prob.evaluate(rc, tc, rot_half, trans_half)
                if lo < best.error - cfg.tolerance:
                    heapq.heappush(heap, BnbNode(lo, up, next(counter), rc, rot_half, tc, trans_half))
                else:
                    stats.pruned += 1
    return IcpResult(best.transform, best.error, stats.nodes, not stats.truncated)
