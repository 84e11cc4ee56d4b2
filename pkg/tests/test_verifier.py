import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_net
from visland.abstraction import Region
from visland.enclosures import VacuousRegion, working_box_to_input_box
from visland.network import RELU, Layer, LayeredReluNetwork, evaluate, identity_network
from visland.verifier import (PROVED, SAFE, SKIPPED, UNKNOWN, UNSAFE_ENVELOPE, VIOLATED,
                              AGG_UNKNOWN, Envelope, RegionReport, Verdict, aggregate,
                              interval_bounds, region_domain, to_vnnlib, verify_region)


def test_ibp_examples():
    lo, hi = np.array([-1.0, 2.0]), np.array([0.5, 4.0])
    blo, bhi = interval_bounds(identity_network(2), lo, hi)
    np.testing.assert_allclose(blo, lo, rtol=1e-14)
    np.testing.assert_allclose(bhi, hi, rtol=1e-14)
    assert blo[0] <= lo[0] and bhi[1] >= hi[1]
    relu = LayeredReluNetwork((Layer(np.array([[1.0]]), np.zeros(1), RELU),))
    blo, bhi = interval_bounds(relu, [-2.0], [3.0])
    assert blo[0] == 0.0 and bhi[0] == pytest.approx(3.0, rel=1e-14)


def test_ibp_sampling_containment():
    rng = np.random.default_rng(0)
    for _ in range(10):
        net = random_net(rng, [4, 12, 1], scale=2.0)
        lo = rng.uniform(-1, 0, 4)
        hi = lo + rng.uniform(0, 1, 4)
        blo, bhi = interval_bounds(net, lo, hi)
        y = evaluate(net, lo + rng.uniform(size=(10_000, 4)) * (hi - lo))
        assert np.all(y >= blo) and np.all(y <= bhi)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_ibp_monotone_under_shrinking(seed):
    rng = np.random.default_rng(seed)
    net = random_net(rng, [3, 8, 8, 2])
    lo = rng.uniform(-1, 0, 3)
    hi = lo + rng.uniform(0, 1, 3)
    a = lo + rng.uniform(0, 0.5, 3) * (hi - lo)
    b = hi - rng.uniform(0, 0.5, 3) * (hi - lo)
    olo, ohi = interval_bounds(net, lo, hi)
    ilo, ihi = interval_bounds(net, a, b)
    assert np.all(ilo >= olo) and np.all(ihi <= ohi)


def test_verify_trivial_cases():
    rng = np.random.default_rng(1)
    net = random_net(rng, [3, 8, 1])
    lo, hi = -np.ones(3), np.ones(3)
    c = evaluate(net, np.zeros(3))
    v = verify_region(net, lo, hi, Envelope(c, 1e6))
    assert v.status == PROVED and v.splits == 0
    env = Envelope(c, 0.0)
    v = verify_region(net, lo, hi, env)
    assert v.status == VIOLATED
    y = evaluate(net, np.array(v.witness["input"]))
    assert env.violation(y)[0] >= 1e-9
    with pytest.raises(ValueError):
        verify_region(net, lo, hi, env, budget=0)


def test_budget_exhaustion_is_unknown():
    # tight envelope that holds but needs splitting: |x| on [-1, 1] vs radius 1 around 0
    net = LayeredReluNetwork((Layer(np.array([[1.0], [-1.0]]), np.zeros(2), RELU),
                              Layer(np.array([[1.0, 1.0]]), np.zeros(1), "identity")))
    env = Envelope(np.array([0.5]), 0.5 + 1e-6)
    v = verify_region(net, [-1.0], [1.0], env, budget=1)
    assert v.status in (UNKNOWN, PROVED)
    assert verify_region(net, [-1.0], [1.0], env, budget=10_000).status == PROVED


def brute_force_excess(net, lo, hi, env, step=1e-3):
    n = int(round((hi[0] - lo[0]) / step)) + 1
    g = np.linspace(0.0, 1.0, n)
    grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    return float(np.max(env.violation(evaluate(net, lo + grid * (hi - lo)))))


def test_agrees_with_dense_grid():
    rng = np.random.default_rng(2024)
    agree = checked = 0
    for k in range(200):
        hidden = [int(rng.integers(2, 17))] * int(rng.integers(1, 3))
        net = random_net(rng, [3] + hidden + [1])
        lo = rng.uniform(-1, 1, 3)
        hi = lo + 0.05
        c = evaluate(net, 0.5 * (lo + hi))
        spread = brute_force_excess(net, lo, hi, Envelope(c, 0.0))
        env = Envelope(c, spread * rng.uniform(0.5, 1.5))
        margin = brute_force_excess(net, lo, hi, env)
        v = verify_region(net, lo, hi, env, budget=20_000, seed=k)
        if v.status == VIOLATED:
            y = evaluate(net, np.array(v.witness["input"]))
            assert env.violation(y)[0] > 0
            assert np.all(np.array(v.witness["input"]) >= lo) and np.all(np.array(v.witness["input"]) <= hi)
        if abs(margin) <= 1e-3:
            continue
        checked += 1
        expected = VIOLATED if margin > 0 else PROVED
        agree += v.status == expected
    assert checked >= 100
    assert agree == checked


# ---------------------------------------------------------------------------
# enclosures of working-coordinate cells


def _feasible_cell(geo, rng, half):
    while True:
        s = np.array([rng.uniform(0.01, 0.15), 0.0, rng.uniform(0, 150), rng.uniform(500, 3000)])
        c = geo.working(s)
        return c - half, c + half


def test_zero_radius_box_is_exact(geo8):
    s = np.array([0.08, 0.0, 90.0, 1500.0])
    c = geo8.working(s)
    blo, bhi = working_box_to_input_box(c, c, geo8)
    z = geo8.full_zeta(s)
    np.testing.assert_allclose(blo, z, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(bhi, z, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("half", [0.5, 0.05])
def test_enclosure_contains_samples(geo16, half):
    rng = np.random.default_rng(int(half * 100))
    for _ in range(20):
        lo, hi = _feasible_cell(geo16, rng, half)
        try:
            blo, bhi = working_box_to_input_box(lo, hi, geo16)
        except VacuousRegion:
            continue
        pts = lo + rng.uniform(size=(1000, 3)) * (hi - lo)
        x, ok = region_domain(geo16).inputs(pts)
        x = x[ok]
        assert np.all(x >= blo) and np.all(x <= bhi)


def test_z5_is_interval_expression_of_components(geo8):
    lo, hi = _feasible_cell(geo8, np.random.default_rng(3), 0.25)
    blo, bhi = working_box_to_input_box(lo, hi, geo8)
    for base in (0, 5):
        z1, z2, z3, z4 = [(blo[base + i], bhi[base + i]) for i in range(4)]
        p = [a * b for a in z1 for b in z4]
        q = [a * b for a in z2 for b in z3]
        ref = (min(p) - max(q), max(p) - min(q))
        assert blo[base + 4] <= ref[0] + 1e-9 * abs(ref[0])
        assert bhi[base + 4] >= ref[1] - 1e-9 * abs(ref[1])
        assert blo[base + 4] == pytest.approx(ref[0], rel=1e-6, abs=1e-9)
        assert bhi[base + 4] == pytest.approx(ref[1], rel=1e-6, abs=1e-9)


def test_infeasible_cell_is_vacuous(geo8):
    # the far end projected left of the near end cannot happen for line L
    with pytest.raises(VacuousRegion):
        working_box_to_input_box(np.array([0.0, 4.0, 4.0]), np.array([0.5, 4.5, 4.5]), geo8)


# ---------------------------------------------------------------------------
# aggregation and export


def _rep(i, status):
    return RegionReport(i, np.zeros(3), Verdict(status))


def test_aggregate_examples():
    assert aggregate([_rep(0, PROVED), _rep(1, PROVED), _rep(2, SKIPPED)]) == (SAFE, None)
    assert aggregate([_rep(0, PROVED), _rep(4, VIOLATED), _rep(6, VIOLATED)]) == (UNSAFE_ENVELOPE, 4)
    assert aggregate([_rep(0, PROVED), _rep(1, UNKNOWN)]) == (AGG_UNKNOWN, None)


def test_vnnlib_text():
    text = to_vnnlib(np.array([0.0, -1.0]), np.array([1.0, 1.0]), Envelope(np.array([0.25]), 0.5), "demo")
    lines = text.splitlines()
    assert lines[0] == "; demo"
    assert "(declare-const X_1 Real)" in lines and "(declare-const Y_0 Real)" in lines
    assert "(assert (>= X_1 -1.0))" in lines
    assert lines[-1] == "(assert (or (and (>= Y_0 0.75)) (and (<= Y_0 -0.25))))"
    assert text.count("(") == text.count(")")
