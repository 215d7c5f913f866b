import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kamlattice.iterate import build_schedule
from kamlattice.measure import (
    ParameterGrid,
    count_resonant_partners,
    enumerate_k,
    enumerate_l,
    excise,
    measure_sweep,
    resonance_width_check,
)
from kamlattice.spectra import FrequencyMap, SpectrumModel, classify_l, diophantine_threshold, divisor

SCHED = build_schedule(1e-4, tau=12.75, gamma0=1.0, nu_max=2)
FM2 = FrequencyMap([0.013, -0.007], [[1.0, 0.37], [-0.29, 1.0]])
SM2 = SpectrumModel(2 / 3)


def line_setup(res=1000):
    grid = ParameterGrid([-1.0], [1.0], res)
    return grid, FrequencyMap([0.0], [[1.0]]), SpectrumModel(1.0)


def test_enumerate_k_counts():
    assert len(enumerate_k(2, 2)) == 12
    assert len(enumerate_k(2, 2, 1)) == 8
    assert len(enumerate_k(2, 1, include_zero=True)) == 5
    assert len(enumerate_k(3, -1)) == 0


def test_enumerate_l_classes():
    ls = enumerate_l([1, 2, 3], I=3, d=1.0)
    assert {} in ls
    minus = [l for l in ls if classify_l(l).kind.name == "MINUS"]
    # minus vectors need the positive site below I
    assert all(min(s[0] for s, v in l.items() if v > 0) < 3 for l in minus)
    assert len(enumerate_l([1, 2, 3], None, 1.0, plus_cap=2.5)) < len(ls) + 2


def test_gamma_zero_excises_nothing():
    grid = ParameterGrid([-0.5, -0.5], [0.5, 0.5], 40)
    out = excise(grid, FM2, SM2, SCHED, 0.0, [0], range(1, 6), k_cap=3, i_cap=6)
    assert not out.excised.any()
    assert out.surviving_measure == pytest.approx(1.0)


def test_one_d_interval():
    grid, fm, sm = line_setup(2000)
    for gamma in (0.2, 0.05):
        out = excise(grid, fm, sm, SCHED, gamma, [0], [], k_cap=1)
        # |xi| < gamma / 2 from k = +-1
        assert abs(out.excised_measure - gamma) <= 2 * grid.cell_widths[0]
        x = grid.centers()[:, 0]
        assert np.all(out.excised == (np.abs(x) < gamma / 2))


def test_known_resonance_cell_is_excised():
    grid = ParameterGrid([-0.5, -0.5], [0.5, 0.5], 50)
    out = excise(grid, FM2, SM2, SCHED, 0.1, [0], range(1, 4), k_cap=2, i_cap=4)
    cent = grid.centers()
    for idx, (nu, k, l) in list(out.records.items())[:50]:
        thr = diophantine_threshold(k, classify_l(l), 0.1, SCHED.tau, SM2.d, 2.5)
        assert abs(divisor(k, l, cent[idx], FM2, SM2)) < thr
    # an exact zero of k = (1, 0), l = 0 lies in the box
    xi = np.linalg.solve(FM2.A, -FM2.omega0)
    hit = np.argmin(np.linalg.norm(cent - xi, axis=1))
    assert out.excised[hit]


def test_excision_monotone_and_nested():
    grid = ParameterGrid([-0.5, -0.5], [0.5, 0.5], 60)
    prev = None
    for gamma in (0.02, 0.05, 0.1):
        out = excise(grid, FM2, SM2, SCHED, gamma, [0], range(1, 5), k_cap=3, i_cap=5)
        if prev is not None:
            assert np.all(out.excised[prev])
        prev = out.excised.copy()


def test_width_check_line():
    grid, fm, sm = line_setup(4000)
    for k in (1, 2, 3):
        measured, bound = resonance_width_check([k], {}, grid, fm, sm, 0.1, 2.0)
        exact = 2 * 0.1 / ((1 + k ** 2) * k)
        assert abs(bound - exact) < 1e-12
        assert abs(measured - exact) <= 2 * grid.cell_widths[0]


def test_width_linear_in_gamma_and_monotone_in_k():
    grid = ParameterGrid([-0.5, -0.5], [0.5, 0.5], 200)
    w1 = resonance_width_check([1, 0], {}, grid, FM2, SM2, 0.05, 3.0)
    w2 = resonance_width_check([1, 0], {}, grid, FM2, SM2, 0.1, 3.0)
    assert math.isclose(w2[1], 2 * w1[1])
    assert abs(w2[0] - 2 * w1[0]) <= 4 * grid.cell_widths[0] * 1.5
    bounds = [resonance_width_check([k, 0], {}, grid, FM2, SM2, 0.1, 3.0)[1] for k in (1, 2, 3, 4)]
    assert all(b <= a for a, b in zip(bounds, bounds[1:]))


def test_partner_count_doctest_value():
    assert count_resonant_partners(100, 1, 0.5, 1.0).count == 41


def test_partner_count_bounded_by_k_power():
    # count <= C |k|^{1/d} |i| with one C across the sample
    cs = [count_resonant_partners(i, k, 0.5, 1.0).c for i in (1, 10, 50, 200) for k in (1, 2, 4, 8)]
    assert max(cs) < 4.0
    # for |i| = 1 the window is (1 + |k|)^2 wide, so the |k|^2 growth is attained
    counts = [count_resonant_partners(1, k, 0.5, 1.0).count for k in (8, 16, 32)]
    slope = np.polyfit(np.log([8, 16, 32]), np.log(counts), 1)[0]
    assert 1.8 < slope <= 2.0


@settings(max_examples=30)
@given(st.integers(1, 200), st.integers(1, 6))
def test_partner_count_brute_force(i, k):
    got = count_resonant_partners(i, k, 0.5, 1.0).count
    brute = sum(1 for j in range(1, 4 * (i + 100 * k * k) + 10)
                if abs(j ** 0.5 - i ** 0.5) <= k + 1e-12 * (i ** 0.5 + k))
    assert got == brute


def test_sweep_pure_l0_slope_one():
    grid = ParameterGrid([-0.5, -0.5], [0.5, 0.5], 200)
    res = measure_sweep(grid, [0.2, 0.1, 0.05, 0.025], FM2, SM2, SCHED, [0], [], k_cap=3)
    assert abs(res.slope - 1.0) < 0.1
    assert [r["gamma"] for r in res.rows] == [0.2, 0.1, 0.05, 0.025]


def test_sweep_single_gamma_has_no_slope():
    grid = ParameterGrid([-0.5, -0.5], [0.5, 0.5], 20)
    res = measure_sweep(grid, [0.1], FM2, SM2, SCHED, [0], [], k_cap=2)
    assert res.slope is None and len(res.rows) == 1


def test_sweep_empty_gamma_list():
    grid = ParameterGrid([-0.5, -0.5], [0.5, 0.5], 20)
    with pytest.raises(ValueError):
        measure_sweep(grid, [], FM2, SM2, SCHED, [0], [])


def test_refinement_stability():
    coarse = ParameterGrid([-0.5, -0.5], [0.5, 0.5], 80)
    fine = ParameterGrid([-0.5, -0.5], [0.5, 0.5], 160)
    kw = dict(nu_levels=[0], sites=range(1, 4), k_cap=2, i_cap=4)
    a = excise(coarse, FM2, SM2, SCHED, 0.05, **kw)
    b = excise(fine, FM2, SM2, SCHED, 0.05, **kw)
    # boundary cells of every zone bound the change
    zones = len({(k, str(l)) for _, k, l in a.records.values()}) or 1
    boundary = zones * 2 * 4 * coarse.cell_widths[0]
    assert abs(a.excised_measure - b.excised_measure) <= boundary


def test_grid_validation():
    with pytest.raises(ValueError):
        ParameterGrid([0.0], [0.0], 10)
