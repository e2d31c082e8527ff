import math

import numpy as np
import pytest

from qhedge.grids import (
    adjust_control,
    paper_raw_values,
    build_explicit_control_set,
    build_linear_case_controls,
    build_paper_control_set,
    build_time_grid,
    build_xgrid,
)

SIGMA = 0.25


def test_adjust_control_benchmark_rows():
    c = adjust_control(3.0, 0.1, SIGMA)
    assert c.n_p == 1
    assert c.snapped == 2.5
    assert len(c.p_nodes) == 2

    c = adjust_control(1.0 / 3.0, 0.1, SIGMA)
    assert c.n_p == 8
    assert c.snapped == 0.3125
    assert len(c.p_nodes) == 9


def test_adjust_control_sign_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.uniform(0.05, 5.0)
        delta = rng.uniform(0.001, 0.5)
        plus = adjust_control(a, delta, SIGMA)
        minus = adjust_control(-a, delta, SIGMA)
        assert minus.n_p == plus.n_p
        assert minus.snapped == -plus.snapped


def test_adjust_control_exact_integer_ratio_not_bumped():
    # sigma/(|a|*delta) = 15 exactly in real arithmetic
    c = adjust_control(1.0 / 3.0, 0.05, SIGMA)
    assert c.n_p == 15
    assert c.snapped == pytest.approx(1.0 / 3.0, rel=1e-15)


def test_adjust_control_rejects_zero():
    with pytest.raises(ValueError):
        adjust_control(0.0, 0.1, SIGMA)


def test_span_identity_and_gap_bound():
    rng = np.random.default_rng(1)
    eps = np.finfo(float).eps
    for _ in range(200):
        a = rng.uniform(0.02, 6.0) * rng.choice([-1.0, 1.0])
        delta = rng.uniform(0.001, 0.9)
        c = adjust_control(a, delta, SIGMA)
        # an integer number of p-steps spans [0, 1] exactly
        assert abs(c.n_p * abs(c.snapped) * delta - SIGMA) <= 4 * eps * SIGMA
        gap = abs(c.raw) - abs(c.snapped)
        assert -1e-12 <= gap <= a * a * delta / SIGMA + 1e-12
        assert c.sign == (1 if a > 0 else -1)


def test_paper_control_set_counts_and_members():
    cs = build_paper_control_set(0.1, SIGMA)
    assert 0.0 not in {c.raw for c in cs}
    assert len(cs) == 12  # duplicates merged after snapping
    snapped = sorted(c.snapped for c in cs)
    assert snapped == sorted(-s for s in snapped)  # symmetric set


def test_paper_raw_values_before_snapping():
    raws = paper_raw_values()
    assert len(raws) == 22
    assert 2.0 in raws and -2.0 in raws
    assert 0.0 not in raws


def test_paper_control_set_full_resolution():
    cs = build_paper_control_set(0.005, SIGMA)
    assert len(cs) == 22
    amax = max(cs.controls, key=lambda c: abs(c.snapped))
    amin = min(cs.controls, key=lambda c: abs(c.snapped))
    assert abs(amax.snapped) == pytest.approx(2.9412, abs=1e-4)
    assert amax.n_p + 1 == 18
    assert abs(amin.snapped) == pytest.approx(1.0 / 3.0, rel=1e-12)
    assert amin.n_p + 1 == 151


def test_linear_case_geometry():
    for n, a_expect in ((3, 1.9099), (5, 3.1831)):
        delta, cs = build_linear_case_controls(n, SIGMA, 1.0)
        assert delta * n * n == 2.0 * math.pi * SIGMA * SIGMA
        a_max = max(c.snapped for c in cs)
        assert a_max == pytest.approx(n / (2.0 * math.pi * SIGMA), rel=1e-12)
        assert a_max == pytest.approx(a_expect, abs=1e-2)


def test_linear_case_counts_and_spacing():
    delta, cs = build_linear_case_controls(3, SIGMA, 1.0)
    assert len(cs) == 5
    values = [c.snapped for c in cs]
    assert all(v > 0 for v in values)
    assert all(a - b >= 1.0 / 3.0 - 1e-12 for a, b in zip(values, values[1:]))
    # raw values already sit on the snappable lattice
    assert all(c.snapped == c.raw for c in cs)

    _, cs5 = build_linear_case_controls(5, SIGMA, 1.0)
    assert len(cs5) == 12


def test_linear_case_rejects_small_n():
    with pytest.raises(ValueError):
        build_linear_case_controls(1, SIGMA, 1.0)


def test_explicit_control_set_dedup_keeps_first():
    cs = build_explicit_control_set([1.5, 4.0 / 3.0, 2.0], 0.1, SIGMA)
    # all three snap to 1.25 at delta = 0.1
    assert len(cs) == 1
    assert cs.controls[0].raw == 1.5


def test_xgrid_construction():
    xg = build_xgrid(math.log(10.0), math.log(45.0), 0.1)
    assert xg.num_nodes == 16
    assert xg.nodes[0] == math.log(10.0)
    assert xg.nodes[-1] <= math.log(45.0) + 1e-12
    with pytest.raises(ValueError):
        build_xgrid(1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        build_xgrid(0.0, 0.05, 0.1)  # fewer than 3 nodes


def test_time_grid_uniform_and_landing():
    tg = build_time_grid(1.0, 0.1)
    assert tg.num_steps == 10
    assert tg.nodes[-1] == 1.0
    assert tg.max_step == pytest.approx(0.1)

    tg = build_time_grid(1.0, 0.3)
    assert [round(t, 12) for t in tg.nodes] == [0.0, 0.3, 0.6, 0.9, 1.0]
    assert tg.step(3) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        build_time_grid(1.0, 1.5)


def test_time_grid_index_of():
    tg = build_time_grid(1.0, 0.25)
    assert tg.index_of(0.0) == 0
    assert tg.index_of(1.0) == tg.num_steps
    with pytest.raises(ValueError):
        tg.index_of(0.1)
