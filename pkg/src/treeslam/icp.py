"""Trimmed point-to-point ICP and the convergence-ellipse predicate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from treeslam.cloud import Frame, as_points, keep_count, trimmed_rms
from treeslam.errors import DegenerateCorrespondences, EmptyCloud, InvalidRatio
from treeslam.se3 import RigidTransform

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 60


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    error: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class ConvergenceLimits:
    delta0: float
    theta0: float
    phi0: float = math.radians(8.2)

    def __post_init__(self) -> None:
        if min(self.delta0, self.theta0, self.phi0) <= 0:
            raise ValueError("convergence limits must be positive")


def granularity(l0: float, outlier_ratio: float, max_range: float) -> tuple[float, float]:
    """Translation and rotation limits ``(delta0, theta0)`` of local ICP.

    ``delta0 = L0 / 2``; ``theta0`` is the rotation that displaces the boundary
    of the matched inner disc (area fraction ``1 - gamma``) by ``delta0``.
    """
    if not 0.0 <= outlier_ratio < 1.0:
        raise InvalidRatio(f"outlier ratio {outlier_ratio} outside [0, 1)")
    if l0 <= 0 or max_range <= 0:
        raise ValueError("L0 and range must be positive")
    delta0 = 0.5 * l0
    return delta0, delta0 / (math.sqrt(1.0 - outlier_ratio) * max_range)


def converges_test(delta: float, theta: float, phi: float, lim: ConvergenceLimits) -> bool:
    return (delta / lim.delta0) ** 2 + (theta / lim.theta0) ** 2 + (phi / lim.phi0) ** 2 <= 1.0


def rigid_fit(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rotation and translation taking ``src`` onto ``dst`` (Kabsch)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, cd - rot @ cs)


def icp_match(
    p: Frame | np.ndarray,
    q: Frame | np.ndarray,
    outlier_ratio: float = 0.0,
    init: RigidTransform | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    tree: cKDTree | None = None,
) -> IcpResult:
    """Register ``q`` onto ``p``; the result maps ``q`` into ``p``'s coordinates.

    Each iteration keeps the ``ceil((1 - gamma)|q|)`` closest nearest-neighbour
    pairs and refits the rigid transform on them. Iteration stops once the
    trimmed RMS improves by less than ``tol``. Only a local optimum is found.
    """
    pp, qq = as_points(p), as_points(q)
    if len(pp) == 0 or len(qq) == 0:
        raise EmptyCloud("icp_match needs two nonempty clouds")
    keep = keep_count(len(qq), outlier_ratio)
    if keep < 3 or len(pp) < 3:
        raise DegenerateCorrespondences(f"only {min(keep, len(pp))} correspondences retained")
    if tree is None:
        tree = cKDTree(pp)
    t = init if init is not None else RigidTransform.identity()
    prev = math.inf
    for it in range(1, max_iter + 1):
        dist, idx = tree.query(t.apply(qq))
        err, kept = trimmed_rms(dist, keep)
        if prev - err < tol:
            return IcpResult(t, err, it, it < max_iter)
        prev = err
        t = rigid_fit(qq[kept], pp[idx[kept]])
    dist, _ = tree.query(t.apply(qq))
    err, _ = trimmed_rms(dist, keep)
    return IcpResult(t, err, max_iter, False)
