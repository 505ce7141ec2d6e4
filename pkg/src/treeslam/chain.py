"""The odometry chain and correction propagation by SE(3) matrix powers.

Indices are 0-based positions in the frame sequence. ``totals[l]`` maps frame
``l`` coordinates into frame 0 coordinates, so ``totals[0]`` is the identity
and ``relative_transform(c, i, j) = totals[j]^-1 @ totals[i]`` maps frame ``i``
into frame ``j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from treeslam.cloud import Frame
from treeslam.errors import (
    DegenerateCorrespondences,
    EmptyCloud,
    EmptySpan,
    IndexOutOfRange,
    MatchFailed,
    NonFiniteTransform,
)
from treeslam.icp import icp_match
from treeslam.se3 import InterpolationPrecompute, RigidTransform, compose, inverse, rotation_log

RULES = ("index", "path_length", "error_cumulative", "se3_metric", "skew_projection")
GOLDEN_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class Correction:
    i: int
    j: int
    t_new: RigidTransform
    delta: RigidTransform
    rule: str
    u_values: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class Chain:
    totals: tuple[RigidTransform, ...]
    step_errors: tuple[float, ...] = ()
    log: tuple[Correction, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "totals", tuple(self.totals))
        errs = tuple(float(e) for e in self.step_errors) or (0.0,) * max(0, len(self.totals) - 1)
        object.__setattr__(self, "step_errors", errs)

    @classmethod
    def from_steps(cls, steps: Iterable[RigidTransform], step_errors: Sequence[float] = ()) -> Chain:
        """Globalise stepwise matches: ``totals[l+1] = totals[l] @ step[l]``."""
        totals = [RigidTransform.identity()]
        for step in steps:
            totals.append(compose(totals[-1], step))
        return cls(tuple(totals), tuple(step_errors))

    def __len__(self) -> int:
        return len(self.totals)


def chain_from_poses(poses: Sequence[RigidTransform]) -> Chain:
    """Chain whose totals are the poses expressed relative to the first one."""
    first_inv = inverse(poses[0])
    totals = [RigidTransform.identity()] + [compose(first_inv, p) for p in poses[1:]]
    return Chain(tuple(totals))


def steps_of(chain: Chain) -> list[RigidTransform]:
    return [relative_transform(chain, l + 1, l) for l in range(len(chain) - 1)]


def _check(chain: Chain, *indices: int) -> None:
    for k in indices:
        if not 0 <= k < len(chain):
            raise IndexOutOfRange(f"frame index {k} outside [0, {len(chain) - 1}]")


def relative_transform(chain: Chain, i: int, j: int) -> RigidTransform:
    """``t_ij``: maps frame ``i`` coordinates into frame ``j`` coordinates."""
    _check(chain, i, j)
    if i == j:
        return RigidTransform.identity()
    return compose(inverse(chain.totals[j]), chain.totals[i])


def path(chain: Chain) -> np.ndarray:
    return np.array([t.translation for t in chain.totals])


def run_initial_slam(
    frames: Sequence[Frame], outlier_ratio: float = 0.6, max_iter: int = 60, tol: float = 1e-4
) -> Chain:
    """Sequential ICP of each frame onto its predecessor, starting from identity."""
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    steps, errors = [], []
    for l in range(len(frames) - 1):
        try:
            res = icp_match(frames[l], frames[l + 1], outlier_ratio, None, max_iter, tol)
        except (EmptyCloud, DegenerateCorrespondences) as exc:
            raise MatchFailed(l + 1, str(exc)) from exc
        steps.append(res.transform)
        errors.append(res.error)
    return Chain.from_steps(steps, errors)


def se3_distance(t: RigidTransform, a: float = 1.0, b: float = 1.0) -> float:
    """``sqrt(a theta^2 + b |q|^2)`` of a transform."""
    theta = rotation_log(t.rotation)[1]
    return math.sqrt(a * theta * theta + b * float(t.translation @ t.translation))


def _normalised_cumsum(increments: np.ndarray) -> np.ndarray | None:
    total = increments.sum()
    if not total > 0:
        return None
    return np.concatenate([[0.0], np.cumsum(increments) / total])


def golden_section(f, lo: float, hi: float, tol: float = GOLDEN_TOL) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def power_coefficients(
    chain: Chain, i: int, j: int, rule: str = "index", a: float = 1.0, b: float = 1.0
) -> np.ndarray:
    """Interpolation powers ``u_l`` for ``l = j..i`` with ``u_j = 0``, ``u_i = 1``.

    Rules:
        index            ``(l - j) / (i - j)``
        path_length      cumulative path length along the span
        error_cumulative cumulative stepwise match error along the span
        se3_metric       ``d(t_lj) / d(t_ij)`` with ``d = sqrt(a th^2 + b |q|^2)``
        skew_projection  ``argmin_u d(t_ij^u ^-1 @ t_lj)`` by golden-section search

    Values are clamped to ``[0, 1]`` and made nondecreasing by a running max.
    Cumulative rules fall back to ``index`` when the span has zero total.
    """
    _check(chain, i, j)
    if i <= j:
        raise EmptySpan(f"need j < i, got j={j}, i={i}")
    n = i - j
    index = np.arange(n + 1) / n
    if rule == "index":
        u = index
    elif rule == "path_length":
        q = path(chain)[j : i + 1]
        u = _normalised_cumsum(np.linalg.norm(np.diff(q, axis=0), axis=1))
    elif rule == "error_cumulative":
        u = _normalised_cumsum(np.asarray(chain.step_errors[j:i], dtype=float))
    elif rule == "se3_metric":
        full = se3_distance(relative_transform(chain, i, j), a, b)
        u = None
        if full > 0:
            u = np.array([se3_distance(relative_transform(chain, l, j), a, b) / full for l in range(j, i + 1)])
    elif rule == "skew_projection":
        pre = InterpolationPrecompute.of(relative_transform(chain, i, j))
        u = np.zeros(n + 1)
        for k, l in enumerate(range(j + 1, i)):
            t_lj = relative_transform(chain, l, j)
            u[k + 1] = golden_section(lambda s: se3_distance(compose(inverse(pre.at(s)), t_lj), a, b), 0.0, 1.0)
    else:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    if u is None:
        u = index
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    u[0], u[-1] = 0.0, 1.0
    return np.maximum.accumulate(u)


def apply_correction(
    chain: Chain, i: int, j: int, t_ij_new: RigidTransform, rule: str = "index", a: float = 1.0, b: float = 1.0
) -> Chain:
    """Replace the span ``j..i`` with an improved match ``t_ij_new``.

    With ``dt = t_ij^-1 @ t_ij_new`` each frame in the span moves to
    ``t_j1 @ t_lj @ dt^u_l`` and every later frame ``k`` follows rigidly,
    ``t_k1 := t_i1' @ t_i1^-1 @ t_k1``.
    """
    _check(chain, i, j)
    if i <= j:
        raise EmptySpan(f"need j < i, got j={j}, i={i}")
    if not t_ij_new.is_valid(1e-6):
        raise NonFiniteTransform("new match is not a finite rigid transform")
    u = power_coefficients(chain, i, j, rule, a, b)
    delta = compose(inverse(relative_transform(chain, i, j)), t_ij_new)
    pre = InterpolationPrecompute.of(delta)
    totals = list(chain.totals)
    t_j1 = chain.totals[j]
    for k, l in enumerate(range(j + 1, i + 1)):
        t_lj = compose(inverse(t_j1), chain.totals[l])
        step = delta if l == i else pre.at(float(u[k + 1]))
        totals[l] = compose(compose(t_j1, t_lj), step).orthonormalized()
    suffix_lead = compose(totals[i], inverse(chain.totals[i]))
    for k in range(i + 1, len(totals)):
        totals[k] = compose(suffix_lead, chain.totals[k]).orthonormalized()
    for t in totals[j:]:
        if not np.all(np.isfinite(t.translation)):
            raise NonFiniteTransform("correction produced a non-finite pose")
    record = Correction(i, j, t_ij_new, delta, rule, tuple(float(x) for x in u))
    return replace(chain, totals=tuple(totals), log=chain.log + (record,))


def frame_weights(clusters, n_frames: int) -> np.ndarray:
    """Per-frame shares ``w_i`` of the pooled cluster mean squared error.

    ``sum(w) == mean over clustered points of |p - c|^2``; points outside any
    cluster do not contribute.
    """
    sq = np.zeros(n_frames)
    count = 0
    for cl in clusters:
        d2 = np.sum((cl.points - cl.center) ** 2, axis=1)
        np.add.at(sq, cl.frame_ids, d2)
        count += len(d2)
    return sq / count if count else sq


def remove_worst_frames(weights: Sequence[float], k: int) -> set[int]:
    """Indices of the ``k`` largest weights; ties go to the lower index."""
    if k <= 0:
        return set()
    if k >= len(weights):
        raise ValueError("k must be smaller than the number of frames")
    order = sorted(range(len(weights)), key=lambda idx: (-weights[idx], idx))
    return set(order[:k])
