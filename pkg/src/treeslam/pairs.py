"""Extra match pairs: screening, grid-rounded Poisson-disk thinning, ordering and the
improvement loop that feeds corrections back into the chain.

A pair ``(i, j)`` with ``j < i`` asks for the transform of frame ``i`` into
frame ``j``. Pairs live in the integer ``(i, j)`` index plane for sampling.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from treeslam.chain import Chain, apply_correction, relative_transform
from treeslam.cloud import ConePose, Frame, match_error, overlap_ratio, overlap_ratios
from treeslam.errors import (
    DegenerateCorrespondences,
    EmptyCandidateSet,
    EmptyCloud,
    NonFiniteTransform,
    UnknownStrategy,
)
from treeslam.goicp import BnbConfig, go_icp
from treeslam.icp import icp_match
from treeslam.quality import blur_ratio, build_map
from treeslam.se3 import near_half_turn

STRATEGIES = ("small_gaps_first", "medium_gaps_first", "random")
SHRINK = 0.8
MAX_SWEEP = 200


@dataclass(frozen=True)
class MatchPair:
    i: int
    j: int
    overlap: float
    error: float
    status: str = "candidate"

    def __post_init__(self) -> None:
        if self.j >= self.i:
            raise ValueError(f"pair needs j < i, got ({self.i}, {self.j})")

    @property
    def gap(self) -> int:
        return self.i - self.j


@dataclass(frozen=True)
class SelectionConfig:
    max_gap: int = 1000
    min_gap: int = 1
    lambda_min: float = 0.2
    lambda_apply: float = 0.4
    m: int = 100
    error_intercept: float = 0.3
    error_slope: float = 0.5
    outlier_ratio: float = 0.6
    exhaustive_limit: int = 2000
    sample_budget: int = 200_000
    patience: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_gap < 2 or not 1 <= self.min_gap <= self.max_gap:
            raise ValueError("need 1 <= min_gap <= max_gap and max_gap >= 2")
        if not 0 < self.lambda_min < 1:
            raise ValueError("lambda_min must lie in (0, 1)")
        if self.m < 1:
            raise ValueError("m must be at least 1")

    def gate(self, error: float, overlap: float) -> bool:
        """Screening inequality: enough overlap and error below the sloped border."""
        return overlap > self.lambda_min and error < self.error_intercept + self.error_slope * overlap

    def effective_outlier_ratio(self, overlap: float) -> float:
        # points outside the shared area cannot have partners
        return min(max(self.outlier_ratio, 1.0 - overlap), 0.95)


def _cone_poses(chain: Chain, frames: Sequence[Frame]) -> list[ConePose]:
    return [ConePose(t, f.cone) for t, f in zip(chain.totals, frames)]


def _span_pairs(n: int, cfg: SelectionConfig) -> list[tuple[int, int]]:
    pairs = [(i, j) for j in range(n) for i in range(j + cfg.min_gap, min(n, j + cfg.max_gap + 1))]
    if n > cfg.exhaustive_limit and len(pairs) > cfg.sample_budget:
        rng = np.random.default_rng(cfg.seed)
        keep = np.sort(rng.choice(len(pairs), cfg.sample_budget, replace=False))
        pairs = [pairs[k] for k in keep]
    return pairs


def candidate_pairs(
    chain: Chain, frames: Sequence[Frame], cfg: SelectionConfig, threads: int = 1
) -> list[MatchPair]:
    """Pairs passing the overlap floor and the error inequality in current global coordinates.

    With ``threads > 1`` the screening is split by target frame ``j``; the
    result does not depend on the thread count.
    """
    cones = _cone_poses(chain, frames)
    world = [t.apply(f.points) for t, f in zip(chain.totals, frames)]
    span = np.array(_span_pairs(len(frames), cfg), dtype=int).reshape(-1, 2)
    lams = overlap_ratios(cones, span[:, 0], span[:, 1])
    by_target: dict[int, list[tuple[int, float]]] = {}
    for (i, j), lam in zip(span.tolist(), lams.tolist()):
        if lam > cfg.lambda_min:
            by_target.setdefault(j, []).append((i, lam))

    def screen(j: int) -> list[MatchPair]:
        if len(world[j]) == 0:
            return []
        tree, found = None, []
        for i, lam in by_target[j]:
            if len(world[i]) == 0:
                continue
            tree = tree or cKDTree(world[j])
            err, _ = match_error(world[j], world[i], cfg.effective_outlier_ratio(lam), tree)
            if cfg.gate(err, lam):
                found.append(MatchPair(i, j, lam, err))
        return found

    targets = sorted(by_target)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            groups = list(pool.map(screen, targets))
    else:
        groups = [screen(j) for j in targets]
    return [p for g in groups for p in g]


def grid_round(points: np.ndarray, eps: float) -> np.ndarray:
    """The set ``{round(a / eps) * eps}`` as unique rows (half-way cases round up)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.unique(np.floor(pts / eps + 0.5), axis=0) * eps


def _cell_keys(points: np.ndarray, eps: float) -> np.ndarray:
    return np.floor(points / eps + 0.5).astype(np.int64)


def poisson_sample(pairs: Sequence[MatchPair], m: int) -> list[MatchPair]:
    """About ``m`` pairs spread evenly over the ``(i, j)`` plane.

    The grid spacing starts at ``sqrt(area / m)``, is enlarged while it still
    yields more than ``m`` cells and is then shrunk by 0.8 until the cell
    count reaches ``m``; the spacing whose count is closest to ``m`` wins.
    Every occupied cell contributes the member closest to its grid point.
    """
    if not pairs:
        raise EmptyCandidateSet("no candidate pairs to sample")
    if len(pairs) <= m:
        return list(pairs)
    pts = np.array([(p.i, p.j) for p in pairs], dtype=float)
    span = pts.max(axis=0) - pts.min(axis=0)
    area = float(span[0] * span[1])
    eps = math.sqrt(area / m) if area > 0 else max(float(span.max()), 1.0) / m
    count = lambda e: len(np.unique(_cell_keys(pts, e), axis=0))
    for _ in range(MAX_SWEEP):
        if count(eps) <= m:
            break
        eps /= SHRINK
    best_eps, best_gap = eps, abs(count(eps) - m)
    for _ in range(MAX_SWEEP):
        c = count(eps)
        if abs(c - m) < best_gap:
            best_eps, best_gap = eps, abs(c - m)
        if c >= m:
            break
        eps *= SHRINK
    keys = _cell_keys(pts, best_eps)
    dist = np.linalg.norm(pts - keys * best_eps, axis=1)
    order = np.lexsort((pts[:, 1], pts[:, 0], dist))
    chosen: dict[tuple[int, int], int] = {}
    for k in order:
        chosen.setdefault((int(keys[k, 0]), int(keys[k, 1])), int(k))
    return [pairs[k] for k in sorted(chosen.values(), key=lambda k: (pairs[k].i, pairs[k].j))]


def order_pairs(pairs: Sequence[MatchPair], strategy: str, seed: int = 0) -> list[MatchPair]:
    """Application order; ties always fall to the smaller ``j`` (then ``i``)."""
    if not pairs:
        raise EmptyCandidateSet("nothing to order")
    if strategy == "small_gaps_first":
        return sorted(pairs, key=lambda p: (p.gap, p.j, p.i))
    if strategy == "medium_gaps_first":
        median = float(np.median([p.gap for p in pairs]))
        return sorted(pairs, key=lambda p: (abs(p.gap - median), p.j, p.i))
    if strategy == "random":
        base = sorted(pairs, key=lambda p: (p.j, p.i))
        perm = np.random.default_rng(seed).permutation(len(base))
        return [base[k] for k in perm]
    raise UnknownStrategy(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def select_pairs(
    chain: Chain, frames: Sequence[Frame], cfg: SelectionConfig, threads: int = 1
) -> tuple[list[MatchPair], list[MatchPair]]:
    """Candidates and their Poisson-disk subset (marked ``selected``)."""
    candidates = candidate_pairs(chain, frames, cfg, threads)
    if not candidates:
        return [], []
    chosen = poisson_sample(candidates, cfg.m)
    return candidates, [replace(p, status="selected") for p in chosen]


@dataclass(frozen=True)
class PairOutcome:
    i: int
    j: int
    overlap: float
    error_before: float
    error_after: float
    method: str
    applied: bool
    seconds: float
    note: str = ""
    round: int = 0


@dataclass
class ImproveStats:
    outcomes: list[PairOutcome] = field(default_factory=list)
    beta_trace: list[float] = field(default_factory=list)
    timings: dict[str, list[float]] = field(default_factory=lambda: {"icp": [], "go_icp": []})
    stopped_early: bool = False

    @property
    def method_counts(self) -> Counter:
        return Counter({k: len(v) for k, v in self.timings.items()})

    @property
    def applied(self) -> int:
        return sum(o.applied for o in self.outcomes)


def _beta(chain: Chain, frames: Sequence[Frame]) -> float:
    return blur_ratio(build_map(frames, chain))


def improve(
    chain: Chain,
    frames: Sequence[Frame],
    ordered: Sequence[MatchPair],
    cfg: SelectionConfig,
    bnb: BnbConfig,
    rule: str = "index",
    a: float = 1.0,
    b: float = 1.0,
) -> tuple[Chain, ImproveStats]:
    """Rematch each pair, escalate to global search when local ICP misses the gate,
    and apply every passing match as a correction.

    Stops when the list is exhausted or the blur ratio has not reached a new
    minimum for ``cfg.patience`` consecutive pairs.
    """
    stats = ImproveStats()
    if not ordered:
        return chain, stats
    best_beta = _beta(chain, frames)
    stats.beta_trace.append(best_beta)
    stale = 0
    for pair in ordered:
        i, j = pair.i, pair.j
        lam = overlap_ratio(ConePose(chain.totals[i], frames[i].cone), ConePose(chain.totals[j], frames[j].cone))
        gamma = cfg.effective_outlier_ratio(lam)
        start = time.perf_counter()
        seed = relative_transform(chain, i, j)
        method, applied, note = "icp", False, ""
        try:
            before, _ = match_error(frames[j], seed.apply(frames[i].points), gamma)
            tic = time.perf_counter()
            result = icp_match(frames[j], frames[i], gamma, seed)
            stats.timings["icp"].append(time.perf_counter() - tic)
            if not cfg.gate(result.error, lam):
                tic = time.perf_counter()
                found = go_icp(frames[j], frames[i], bnb, gamma, seed)
                stats.timings["go_icp"].append(time.perf_counter() - tic)
                method = "go_icp"
                if found.error < result.error:
                    result = found
            after = result.error
            if cfg.gate(after, lam) and lam >= cfg.lambda_apply:
                chain = apply_correction(chain, i, j, result.transform, rule, a, b)
                applied = True
                if near_half_turn(chain.log[-1].delta):
                    note = "near_pi"
            else:
                note = "gate" if lam >= cfg.lambda_apply else "overlap"
        except (EmptyCloud, DegenerateCorrespondences, NonFiniteTransform) as exc:
            before = after = math.nan
            note = type(exc).__name__
        beta = _beta(chain, frames)
        stats.beta_trace.append(beta)
        stats.outcomes.append(
            PairOutcome(i, j, lam, before, after, method, applied, time.perf_counter() - start, note)
        )
        if beta < best_beta:
            best_beta, stale = beta, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                stats.stopped_early = True
                break
    return chain, stats


@dataclass
class RoundRecord:
    candidates: int
    selected: list[MatchPair]
    stats: ImproveStats


def run_improvement(
    chain: Chain,
    frames: Sequence[Frame],
    cfg: SelectionConfig,
    bnb: BnbConfig,
    strategy: str = "medium_gaps_first",
    rounds: int = 1,
    rule: str = "index",
    a: float = 1.0,
    b: float = 1.0,
    threads: int = 1,
) -> tuple[Chain, list[RoundRecord]]:
    """Repeated select, order and improve passes, each on the chain left by the last.

    A corrected chain brings distant frames into overlap, so later rounds see
    longer-span candidates. Stops early when a round finds no candidates or
    applies no correction.
    """
    records = []
    for r in range(rounds):
        candidates, selected = select_pairs(chain, frames, cfg, threads)
        if not selected:
            records.append(RoundRecord(len(candidates), [], ImproveStats()))
            break
        ordered = order_pairs(selected, strategy, cfg.seed + r)
        chain, stats = improve(chain, frames, ordered, cfg, bnb, rule, a, b)
        stats.outcomes = [replace(o, round=r) for o in stats.outcomes]
        records.append(RoundRecord(len(candidates), ordered, stats))
        if stats.applied == 0:
            break
    return chain, records
