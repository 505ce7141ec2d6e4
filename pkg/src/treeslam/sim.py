"""Synthetic forests, vehicle paths and limited-view scans.

A desk-scale stand-in for harvester data: trees are Poisson-disk samples in a
rectangle, the vehicle follows a polyline and each frame sees the trees inside
its horizontal view cone, with isotropic registration noise and random
dropout standing in for occlusion.

Noise convention: ``noise`` is the RMS length of the 3D displacement, so each
axis gets a normal deviate with standard deviation ``noise / sqrt(3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from treeslam.chain import Chain, chain_from_poses, steps_of
from treeslam.cloud import Frame, ViewCone, mean_neighbor_distance
from treeslam.errors import AreaTooSmall
from treeslam.se3 import RigidTransform, compose, rodrigues

# mean Delaunay edge over the Poisson-disk radius, starting guess for calibration
EDGE_PER_RADIUS = 1.45


@dataclass(frozen=True)
class ForestSpec:
    width: float = 180.0
    depth: float = 40.0
    target_l0: float = 3.5
    seed: int = 0
    height_spread: float = 0.5


@dataclass(frozen=True)
class ScanSpec:
    half_angle: float = math.radians(60.0)
    max_range: float = 35.0
    noise: float = 0.07
    dropout: float = 0.15
    tilt_jitter: float = 0.0

    @property
    def cone(self) -> ViewCone:
        return ViewCone(self.half_angle, self.max_range)


def _poisson_disk(spec: ForestSpec, radius: float) -> np.ndarray:
    engine = qmc.PoissonDisk(
        d=2,
        radius=radius,
        rng=np.random.default_rng(spec.seed),
        l_bounds=[0.0, 0.0],
        u_bounds=[spec.width, spec.depth],
    )
    return engine.fill_space()


def generate_forest(spec: ForestSpec, iterations: int = 6) -> np.ndarray:
    """Tree positions ``(N, 3)`` whose natural-neighbour distance is near target.

    The disk radius is rescaled a few times by ``target / measured``; the
    sample closest to the target is returned. Deterministic per seed.
    """
    if spec.width <= 0 or spec.depth <= 0 or spec.target_l0 <= 0:
        raise AreaTooSmall("forest dimensions must be positive")
    radius = spec.target_l0 / EDGE_PER_RADIUS
    best, best_gap = None, math.inf
    for _ in range(iterations):
        xy = _poisson_disk(spec, radius)
        if len(xy) < 10:
            raise AreaTooSmall(f"only {len(xy)} trees fit in {spec.width} x {spec.depth} m")
        l0 = mean_neighbor_distance(np.column_stack([xy, np.zeros(len(xy))]))
        gap = abs(l0 - spec.target_l0)
        if gap < best_gap:
            best, best_gap = xy, gap
        if gap < 0.005 * spec.target_l0:
            break
        radius *= spec.target_l0 / l0
    rng = np.random.default_rng([spec.seed, 1])
    z = rng.uniform(-spec.height_spread, spec.height_spread, len(best))
    return np.column_stack([best, z])


def simulate_path(
    waypoints: Sequence[Sequence[float]], n_frames: int, jitter: float = 0.0, seed: int = 0
) -> list[RigidTransform]:
    """Evenly spaced poses (frame to world) along a horizontal polyline.

    The heading follows the segment tangent; ``jitter`` adds normal roll and
    pitch with that standard deviation (radians).
    """
    wp = np.asarray(waypoints, dtype=float)
    if wp.shape[1] == 2:
        wp = np.column_stack([wp, np.zeros(len(wp))])
    seg = np.diff(wp, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    rng = np.random.default_rng(seed)
    poses = []
    for s in np.linspace(0.0, cum[-1], n_frames):
        k = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        frac = (s - cum[k]) / seg_len[k] if seg_len[k] > 0 else 0.0
        pos = wp[k] + frac * seg[k]
        yaw = math.atan2(seg[k, 1], seg[k, 0])
        rot = rodrigues(np.array([0.0, 0.0, 1.0]), yaw)
        if jitter > 0:
            roll, pitch = rng.normal(0.0, jitter, 2)
            rot = rot @ rodrigues(np.array([0.0, 1.0, 0.0]), pitch) @ rodrigues(np.array([1.0, 0.0, 0.0]), roll)
        poses.append(RigidTransform(rot, pos))
    return poses


def scan(
    trees: np.ndarray, pose: RigidTransform, spec: ScanSpec, seed: int | Sequence[int], frame_id: int = 0
) -> Frame:
    """Trees visible from ``pose`` in scanner coordinates, noisy and thinned."""
    rng = np.random.default_rng(seed)
    local = pose.inverse().apply(trees)
    cone = spec.cone
    visible = local[cone.contains(local)]
    noise = rng.normal(0.0, spec.noise / math.sqrt(3.0), visible.shape)
    kept = rng.random(len(visible)) >= spec.dropout
    return Frame(frame_id, (visible + noise)[kept], cone)


def scan_path(
    trees: np.ndarray, poses: Sequence[RigidTransform], spec: ScanSpec, seed: int
) -> list[Frame]:
    return [scan(trees, pose, spec, seed=[seed, k], frame_id=k) for k, pose in enumerate(poses)]


def perturb_odometry(
    chain: Chain, step_rot_bias: float, step_trans_noise: float, seed: int
) -> Chain:
    """Compose every step with a yaw bias and horizontal translation noise.

    The perturbation ``Rz(bias)`` followed by a horizontal shift whose RMS
    length is ``step_trans_noise`` is applied in the moving frame, so the
    heading error after ``k`` steps on a planar chain is exactly ``k * bias``.
    """
    rng = np.random.default_rng(seed)
    bias = RigidTransform.from_yaw(step_rot_bias)
    steps = []
    for step in steps_of(chain):
        dxy = rng.normal(0.0, step_trans_noise / math.sqrt(2.0), 2)
        nudge = compose(bias, RigidTransform.from_translation((dxy[0], dxy[1], 0.0)))
        steps.append(compose(step, nudge))
    return Chain.from_steps(steps, chain.step_errors)


def ground_truth_chain(poses: Sequence[RigidTransform]) -> Chain:
    return chain_from_poses(poses)
