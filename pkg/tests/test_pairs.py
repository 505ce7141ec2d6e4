import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protocols import drifted_run
from treeslam.chain import Chain
from treeslam.cloud import Frame
from treeslam.errors import EmptyCandidateSet, UnknownStrategy
from treeslam.goicp import preset
from treeslam.pairs import (
    MatchPair,
    SelectionConfig,
    candidate_pairs,
    grid_round,
    improve,
    order_pairs,
    poisson_sample,
    run_improvement,
    select_pairs,
)
from treeslam.quality import blur_ratio, build_map
from treeslam.se3 import RigidTransform


def pairs_from(ij):
    return [MatchPair(int(i), int(j), 0.5, 0.1) for i, j in ij]


def test_gate_examples():
    cfg = SelectionConfig()
    assert cfg.gate(0.45, 0.4)
    assert not cfg.gate(0.51, 0.4)
    assert not cfg.gate(0.0, 0.15)
    assert not cfg.gate(0.0, 0.2)


def test_config_and_pair_invariants():
    with pytest.raises(ValueError):
        SelectionConfig(max_gap=1)
    with pytest.raises(ValueError):
        SelectionConfig(lambda_min=1.0)
    with pytest.raises(ValueError):
        SelectionConfig(m=0)
    with pytest.raises(ValueError):
        MatchPair(3, 3, 0.5, 0.1)


def test_identical_consecutive_frames_qualify():
    pts = np.random.default_rng(0).uniform(0, 30, (60, 3)) * [1, 1, 0.05]
    frames = [Frame(0, pts), Frame(1, pts)]
    found = candidate_pairs(Chain.from_steps([RigidTransform.identity()]), frames, SelectionConfig())
    assert len(found) == 1
    pair = found[0]
    assert (pair.i, pair.j) == (1, 0)
    assert pair.overlap == pytest.approx(1.0) and pair.error < 1e-12


def test_candidates_respect_gate_and_thread_count():
    frames, _, odometry = drifted_run(0, 60, 20.0)
    cfg = SelectionConfig(max_gap=30)
    serial = candidate_pairs(odometry, frames, cfg)
    assert serial
    assert all(cfg.gate(p.error, p.overlap) and 0 < p.gap <= 30 for p in serial)
    assert candidate_pairs(odometry, frames, cfg, threads=4) == serial


def test_grid_round_examples():
    ints = np.array([[3, 1], [7, 2], [12, 5]], dtype=float)
    np.testing.assert_array_equal(grid_round(ints, 1.0), ints)
    np.testing.assert_array_equal(grid_round([[0.4, 0.4], [0.6, 0.6]], 1.0), [[0, 0], [1, 1]])
    clustered = np.random.default_rng(1).uniform(100, 110, (1000, 2))
    assert len(grid_round(clustered, 1000.0)) == 1
    with pytest.raises(ValueError):
        grid_round(ints, 0.0)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=40),
    st.floats(0.1, 50.0),
)
def test_grid_round_idempotent(points, eps):
    once = grid_round(np.array(points), eps)
    np.testing.assert_allclose(grid_round(once, eps), once)


def test_poisson_sample_small_sets_and_errors():
    pairs = pairs_from([(5, 1), (9, 2), (40, 30)])
    assert poisson_sample(pairs, 3) == pairs
    assert poisson_sample(pairs, 10) == pairs
    one = poisson_sample(pairs_from([(i + 5, i) for i in range(50)]), 1)
    assert len(one) == 1
    with pytest.raises(EmptyCandidateSet):
        poisson_sample([], 5)


def nn_cv(points: np.ndarray) -> float:
    d = np.linalg.norm(points[:, None] - points[None], axis=2)
    np.fill_diagonal(d, np.inf)
    nn = d.min(axis=1)
    return float(nn.std() / nn.mean())


def test_poisson_sample_spreads_evenly():
    rng = np.random.default_rng(3)
    j = rng.integers(0, 9000, 3500)
    gap = rng.integers(1, 1000, 3500)
    cands = pairs_from(sorted(set(zip(j + gap, j))))
    chosen = poisson_sample(cands, 100)
    assert 80 <= len(chosen) <= 125
    assert set(chosen) <= set(cands)
    assert len(set(chosen)) == len(chosen)
    pts = np.array([(p.i, p.j) for p in chosen], dtype=float)
    all_pts = np.array([(p.i, p.j) for p in cands], dtype=float)
    baseline = np.mean([nn_cv(all_pts[rng.choice(len(all_pts), len(pts), replace=False)]) for _ in range(20)])
    assert nn_cv(pts) < baseline


def test_order_pairs_examples():
    pairs = pairs_from([(60, 10), (13, 10), (20, 10)])
    gaps = lambda ps: [p.gap for p in ps]
    assert gaps(order_pairs(pairs, "small_gaps_first")) == [3, 10, 50]
    assert gaps(order_pairs(pairs, "medium_gaps_first")) == [10, 3, 50]
    shuffled = order_pairs(pairs, "random", seed=4)
    assert shuffled == order_pairs(list(reversed(pairs)), "random", seed=4)
    assert sorted(gaps(shuffled)) == [3, 10, 50]
    with pytest.raises(UnknownStrategy):
        order_pairs(pairs, "largest_first")
    with pytest.raises(EmptyCandidateSet):
        order_pairs([], "random")


def test_order_ties_go_to_smaller_j():
    pairs = pairs_from([(9, 4), (5, 0), (7, 2)])
    assert [p.j for p in order_pairs(pairs, "small_gaps_first")] == [0, 2, 4]
    assert [p.j for p in order_pairs(pairs, "medium_gaps_first")] == [0, 2, 4]


def test_improve_with_empty_list_is_a_no_op():
    frames, _, odometry = drifted_run(0, 60, 20.0)
    chain, stats = improve(odometry, frames, [], SelectionConfig(), preset("sparse-uniform"))
    assert chain is odometry
    assert stats.outcomes == [] and stats.beta_trace == [] and stats.applied == 0


def test_improve_twenty_pairs_lowers_blur():
    frames, _, odometry = drifted_run(0, 60, 20.0)
    cfg = SelectionConfig(m=20)
    _, selected = select_pairs(odometry, frames, cfg)
    assert all(p.status == "selected" and cfg.gate(p.error, p.overlap) for p in selected)
    ordered = order_pairs(selected, "medium_gaps_first")
    chain, stats = improve(odometry, frames, ordered, cfg, preset("sparse-uniform"))
    before = blur_ratio(build_map(frames, odometry))
    assert stats.beta_trace[0] == pytest.approx(before)
    assert blur_ratio(build_map(frames, chain)) < before
    assert stats.applied == len(chain.log) > 0
    counts = stats.method_counts
    assert counts["icp"] == len(stats.outcomes)
    assert counts["icp"] > 2 * counts["go_icp"]


def test_rounds_stop_when_nothing_is_found():
    pts = np.random.default_rng(0).uniform(0, 30, (60, 3))
    far = RigidTransform.from_translation((500.0, 0.0, 0.0))
    frames = [Frame(0, pts), Frame(1, pts)]
    chain, records = run_improvement(Chain.from_steps([far]), frames, SelectionConfig(), preset("sparse-uniform"), rounds=3)
    assert len(records) == 1 and records[0].candidates == 0 and len(chain.log) == 0
