import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visland.abstraction import (PartitionError, PartitionSpec, build_fsm, delta_zeta,
                                 fsm_from_sets, fsm_from_text, fsm_to_text, one_step_containment,
                                 partition, transition_monotonicity_check)
from visland.dynamics import DynamicsParams
from visland.pipeline import constant_controller
from visland.perception import PerceptionBuildSpec, assemble_perception_network, build_augmented_network

DESK_BOX = PartitionSpec((0.0, 0.0, 3.25), (8.0, 8.0, 11.25), 1.0)


def test_partition_examples():
    assert len(partition(PartitionSpec((0, 0, 0), (16, 16, 16), 1.0))) == 4096
    p = partition(PartitionSpec((0.0,), (2.0,), 1.0))
    np.testing.assert_array_equal(p.centers[:, 0], [0.5, 1.5])
    with pytest.raises(PartitionError):
        PartitionSpec((0.0,), (2.5,), 1.0)
    with pytest.raises(PartitionError):
        PartitionSpec((1.0,), (0.0,), 1.0)


def test_row_major_indexing():
    p = partition(PartitionSpec((0, 0, 0), (2, 3, 4), 1.0))
    assert p.cell_of([[0.5, 0.5, 3.5]]).tolist() == [3]
    assert p.cell_of([[1.5, 0.5, 0.5]]).tolist() == [12]
    assert p.cell_of([[2.5, 0.5, 0.5], [np.nan, 0, 0]]).tolist() == [-1, -1]


def test_every_point_in_exactly_one_cell():
    p = partition(DESK_BOX)
    pts = np.random.default_rng(0).uniform(DESK_BOX.lower, DESK_BOX.upper, size=(20_000, 3))
    idx = p.cell_of(pts)
    assert np.all(idx >= 0)
    lo, hi = p.centers - 0.5, p.centers + 0.5
    # brute force: count closed cells containing each point
    for x, k in zip(pts[:2000], idx[:2000]):
        inside = np.all((x >= lo) & (x <= hi), axis=1)
        assert inside[k]
        assert inside.sum() == 1


def test_delta_zeta_examples():
    assert delta_zeta(0.5, 0.0, 0.1) == pytest.approx(2.707104827848567, abs=1e-12)
    assert delta_zeta(1.0, 1.0, 0.1) == pytest.approx(7.766882381344338, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 2), st.floats(0, 2))
def test_delta_zeta_monotone(e1, e2, m1, m2):
    assert delta_zeta(min(e1, e2), min(m1, m2), 0.1) <= delta_zeta(max(e1, e2), max(m1, m2), 0.1)


@pytest.fixture(scope="module")
def zero_aug():
    perc = assemble_perception_network(PerceptionBuildSpec(8, 2))
    return build_augmented_network(perc, constant_controller(8, 0.0))


def test_small_ball_gives_single_successor(geo8, zero_aug):
    part = partition(DESK_BOX)
    frozen = DynamicsParams(tau=0.0)
    fsm = build_fsm(part, zero_aug, 0.0, geo8, frozen, inflation=0.1)
    trav = np.flatnonzero(fsm.traversable[:-1])
    assert len(trav) > 0
    for s in trav:
        assert fsm.successors(s).tolist() == [s]
    assert fsm.successors(fsm.sink).tolist() == [fsm.sink]


def test_full_ball_reaches_every_region(geo8, zero_aug):
    part = partition(DESK_BOX)
    fsm = build_fsm(part, zero_aug, 0.1, geo8, DynamicsParams(heading=-1), inflation=100.0)
    s = np.flatnonzero(fsm.traversable[:-1])[0]
    assert fsm.successors(s).tolist() == list(range(len(part) + 1))


def test_totality_and_labels(geo8, zero_aug):
    fsm = build_fsm(partition(DESK_BOX), zero_aug, 0.3, geo8, DynamicsParams(heading=-1),
                    unsafe_cells=[5])
    assert all(len(fsm.successors(s)) >= 1 for s in range(fsm.num_states))
    labels = fsm.labels()
    assert labels[5] == "unsafe" and labels[-1] == "sink"
    assert fsm.unsafe[fsm.sink]


def test_text_roundtrip(geo8, zero_aug):
    fsm = build_fsm(partition(DESK_BOX), zero_aug, 0.3, geo8, DynamicsParams(heading=-1),
                    unsafe_cells=[1, 2])
    back = fsm_from_text(fsm_to_text(fsm))
    np.testing.assert_array_equal(back.indptr, fsm.indptr)
    np.testing.assert_array_equal(back.indices, fsm.indices)
    np.testing.assert_array_equal(back.unsafe, fsm.unsafe)
    assert back.mu == fsm.mu
    assert fsm_to_text(back) == fsm_to_text(fsm)
    with pytest.raises(ValueError):
        fsm_from_text("states 3\nsink 2\n0: 1\n")


def test_monotonicity_examples():
    a = fsm_from_sets([[0, 1], [1], [2]])
    b = fsm_from_sets([[0, 1, 2], [1, 2], [2]])
    assert transition_monotonicity_check(a, a)
    assert transition_monotonicity_check(a, b)
    res = transition_monotonicity_check(b, a)
    assert not res and res.witness == 0


def test_desk_monotone_and_sound(desk_ctx):
    small, large = desk_ctx.fsm(0.1), desk_ctx.fsm(1.1)
    assert transition_monotonicity_check(small, large)
    rng = np.random.default_rng(0)
    for fsm in (small, large):
        bad, used, ex = one_step_containment(fsm, desk_ctx.partition, desk_ctx.geometry,
                                             desk_ctx.params, 10_000, rng)
        assert used == 10_000
        assert bad == 0, ex


def test_containment_detects_a_broken_abstraction(desk_ctx):
    # self loops only: the suite must notice the missing transitions
    fsm = desk_ctx.fsm(0.1)
    broken = fsm_from_sets([[s] for s in range(fsm.num_states)])
    broken.traversable, broken.center_u, broken.mu = fsm.traversable, fsm.center_u, fsm.mu
    bad, used, ex = one_step_containment(broken, desk_ctx.partition, desk_ctx.geometry,
                                         desk_ctx.params, 2000, np.random.default_rng(1))
    assert bad > 0 and ex is not None


def test_build_is_deterministic(geo8, zero_aug):
    part = partition(DESK_BOX)
    a = build_fsm(part, zero_aug, 0.6, geo8, DynamicsParams(heading=-1))
    b = build_fsm(part, zero_aug, 0.6, geo8, DynamicsParams(heading=-1))
    assert fsm_to_text(a) == fsm_to_text(b)
