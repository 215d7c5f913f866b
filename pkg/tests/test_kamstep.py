import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from conftest import make_nf, random_R, series_strategy
from kamlattice.iterate import build_schedule
from kamlattice.kamstep import (
    InadmissibleParameter,
    NormalForm,
    SpecialFormViolation,
    StepMeasurements,
    alpha_exponent,
    apply_step,
    audit_hypotheses,
    c_sum,
    compute_cutoffs,
    gamma_sum,
    homological_residual,
    normal_part,
    propagate_diophantine,
    solve_homological,
    special_form_ok,
    tail_integral,
    truncate,
)
from kamlattice.series import DomainWeights, ModeKey, TaylorFourierSeries, majorant_xnorm, poisson_bracket

T = TaylorFourierSeries


# -- truncation -------------------------------------------------------------------

@given(series_strategy(max_deg=4, terms=10), st.integers(0, 3), st.integers(0, 3))
def test_truncate_exact_partition(P, K, I):
    R, tail = truncate(P, K, I)
    assert (R + tail) == P
    assert len(R) + len(tail) == len(P)


def test_truncate_classes():
    n = 1
    terms = {
        ModeKey.make([1]): 1.0,                      # kept: pure angle
        ModeKey.make([0]): 5.0,                      # constant: stays out
        ModeKey.make([0], [1]): 2.0,                 # kept: y-linear
        ModeKey.make([0], [2]): 2.0,                 # quadratic in y: out
        ModeKey.make([3], [1]): 2.0,                 # |k| > K: out
        ModeKey.make([1], None, {2: 1}): 1.0,        # z-linear
        ModeKey.make([0], None, {1: 1}, {2: 1}): 1.0,     # k=0, |i| != |j|: kept
        ModeKey.make([0], None, {1: 1}, {1: 1}): 1.0,     # diagonal: kept
        ModeKey.make([0], None, {1: 1}, {5: 1}): 1.0,     # |j| > I: out
        ModeKey.make([1], [1], {1: 1}): 1.0,         # y z: out
    }
    P = T.from_terms(terms, n, 1)
    R, tail = truncate(P, 2, 3)
    assert set(R.terms) == {ModeKey.make([1]), ModeKey.make([0], [1]), ModeKey.make([1], None, {2: 1}),
                            ModeKey.make([0], None, {1: 1}, {2: 1}), ModeKey.make([0], None, {1: 1}, {1: 1})}
    assert len(tail) == 5


def test_truncate_keeps_resonant_pair_out():
    P = T.from_terms({ModeKey.make([0], None, {(2,): 1}, {(-2,): 1}): 1.0}, 1, 1)
    R, tail = truncate(P, 3, 5)
    assert R.is_zero() and tail == P


def test_normal_part_and_special_form_guard():
    P = T.from_terms({ModeKey.make([0], [1]): 1.0, ModeKey.make([0], None, {1: 1}, {1: 1}): 2.0,
                      ModeKey.make([1], [1]): 3.0}, 1, 1)
    assert set(normal_part(P).terms) == {ModeKey.make([0], [1]), ModeKey.make([0], None, {1: 1}, {1: 1})}
    bad = T.from_terms({ModeKey.make([0], None, {(2,): 1}, {(-2,): 1}): 1.0}, 1, 1)
    with pytest.raises(SpecialFormViolation):
        normal_part(bad, special_form=True)


# -- homological equation -----------------------------------------------------------

@pytest.mark.parametrize("d", [0.5, 2.0])
def test_homological_residual_random(d):
    rng = np.random.default_rng(7)
    sites = [(i,) for i in range(1, 21)]
    done = 0
    while done < 10:
        nf = make_nf(rng, 2, range(1, 21), d)
        R = random_R(rng, 2, sites, 10)
        try:
            F = solve_homological(nf, R, 1e-9, 4.0, d, 2.5)
        except InadmissibleParameter:
            continue
        w = DomainWeights(0.05, 0.0, 0.1, 0.0, 0.5, 0.3)
        res = homological_residual(nf, R, F)
        assert majorant_xnorm(res, w) <= 1e-10 * majorant_xnorm(R, w)
        done += 1


def test_homological_single_term_exact():
    nf = NormalForm(0.0, [1.0, math.sqrt(2)], {3: 9.0})
    R = T.monomial(0.5, 2, 1, k=[1, 0], q={3: 1})
    F = solve_homological(nf, R, 0.01, 3.0, 2.0, 2.5)
    # D = 1 + 9
    assert F.terms == {ModeKey.make([1, 0], None, {3: 1}): -0.05j}


def test_homological_inadmissible():
    nf = NormalForm(0.0, [1.0, -1.0], {})
    R = T.monomial(1.0, 2, 1, k=[1, 1])
    with pytest.raises(InadmissibleParameter) as exc:
        solve_homological(nf, R, 0.1, 3.0, 1.0, 2.5)
    assert exc.value.k == (1, 1)


def test_homological_zero_R():
    nf = NormalForm(0.0, [1.0], {})
    assert solve_homological(nf, T.zero(1, 1), 0.1, 3.0, 1.0, 2.5).is_zero()


# -- step ---------------------------------------------------------------------------

def test_apply_step_zero_perturbation():
    nf = NormalForm(0.0, [1.0], {2: 4.0})
    res = apply_step(nf, T.zero(1, 1), T.zero(1, 1), T.zero(1, 1))
    assert res.P.is_zero() and res.drift_omega == 0.0
    assert np.array_equal(res.nf.omega, nf.omega)


def test_apply_step_identity_matches_direct_lie_series(rng):
    # the shortcut formula equals the plain transform of N + P
    from kamlattice.series import lie_transform
    nf = NormalForm(0.0, [1.0, math.sqrt(2)], {(1,): 1.3, (2,): 2.7})
    eps = 1e-3
    P = random_R(rng, 2, [(1,), (2,)], 2, terms=8).scale(eps)
    P = (P + P.conjugate()).scale(0.5)
    R, tail = truncate(P, 2, 2)
    F = solve_homological(nf, R, 1e-6, 3.0, 1.0, 2.5)
    res = apply_step(nf, P, F, R, max_degree=6, max_fourier=8)
    H = nf.as_series(1) + P
    direct = lie_transform(H, F, 6, 8)
    assert (direct - (res.nf.as_series(1) + res.P)).max_abs() < 1e-12


def test_apply_step_reduces_small_perturbation(rng):
    nf = NormalForm(0.0, [1.0, math.sqrt(2)], {(1,): 1.3, (2,): 2.7})
    P = random_R(rng, 2, [(1,), (2,)], 2, terms=8).scale(1e-4)
    P = (P + P.conjugate()).scale(0.5)
    R, tail = truncate(P, 2, 2)
    F = solve_homological(nf, R, 1e-6, 3.0, 1.0, 2.5)
    res = apply_step(nf, P, F, R)
    # what survives is the tail plus quadratically small terms
    assert (res.P - tail).max_abs() < 1e-6
    assert res.P.is_real(1e-9)


def test_special_form_ok():
    assert special_form_ok(T.zero(2, 1), [0, 3]) == (True, None)
    good = T.monomial(1.0, 2, 1, k=[0, 1], qbar={3: 1})
    assert special_form_ok(good, [0, 3])[0]
    bad = T.monomial(1.0, 2, 1, k=[0, 1], q={2: 1}, qbar={4: 1})
    ok, key = special_form_ok(bad, [0, 3])
    assert not ok and key == ModeKey.make([0, 1], None, {2: 1}, {4: 1})


def _momentum_series(rng, terms=6):
    """Random special-form series for tangential sites (0, 3)."""
    out = {}
    sites = [-2, -1, 1, 2, 4]
    while len(out) < terms:
        k = rng.integers(-2, 3, 2)
        a, b = (sites[int(rng.integers(0, 5))] for _ in range(2))
        if 3 * k[1] + a - b == 0:
            out[ModeKey.make(k, None, {a: 1}, {b: 1})] = complex(*rng.normal(size=2))
        if 3 * k[1] + a + b == 0:
            out[ModeKey.make(k, None, {a: 1, b: 1} if a != b else {a: 2})] = complex(*rng.normal(size=2))
    return T.from_terms(out, 2, 1)


@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_special_form_closed_under_bracket(s1, s2):
    F = _momentum_series(np.random.default_rng(s1))
    G = _momentum_series(np.random.default_rng(s2))
    assert special_form_ok(poisson_bracket(F, G), [0, 3])[0]


# -- cutoffs and sums ---------------------------------------------------------------

@pytest.mark.parametrize("X,power,rate", [(0.0, 3, 1.0), (5.0, 6, 0.3), (40.0, 2, 0.05)])
def test_tail_integral_quadrature(X, power, rate):
    val, _ = integrate.quad(lambda t: t ** power * math.exp(-rate * t), X, np.inf)
    assert math.isclose(tail_integral(X, power, rate), val, rel_tol=1e-8)


def test_gamma_and_c_sum_brute_force():
    K, n, tau, dr = 6, 2, 1.5, 2.0
    brute = sum(sum(map(abs, k)) ** (4 * tau + 4) * math.exp(-sum(map(abs, k)) * dr / 8)
                for k in itertools.product(range(-K, K + 1), repeat=n) if 0 < sum(map(abs, k)) <= K)
    assert math.isclose(gamma_sum(K, n, tau, dr), brute, rel_tol=1e-10)
    I, rho, c, da, r = 5, 2, 3.0, 0.4, 0.7
    brute = r * sum(sum(map(abs, i)) ** (2 * c + 2) * math.exp(-da * sum(map(abs, i)))
                    for i in itertools.product(range(-I, I + 1), repeat=rho) if 0 < sum(map(abs, i)) <= I)
    assert math.isclose(c_sum(I, rho, c, da, r), brute, rel_tol=1e-10)
    assert gamma_sum(0, 2, 1.0, 1.0) == 0.0


def test_alpha_exponent():
    a = alpha_exponent()
    assert (7 / 6) ** (3 * a - 1) >= 8 > (7 / 6) ** (3 * (a - 1) - 1)


def test_compute_cutoffs_override():
    st_ = build_schedule(1e-4, r0=0.1, a0=0.01).state(0, 2, 1, 2 / 3)
    rep = compute_cutoffs(st_)
    assert rep.H1_pass and rep.H2_pass
    assert rep.K >= 1 and rep.I >= 1


def _state(mu0):
    return build_schedule(mu0, r0=0.1, a0=0.01, gamma0=0.5).state(0, 2, 1, 2 / 3, max_fourier=6,
                                                                    mode_cutoff=12)


def test_audit_report_schema():
    meas = StepMeasurements(xp=1e-5, xf=1e-4, xp_plus=1e-10, drift_omega=0.0, drift_Omega=1e-7,
                            drift_Omega_max=1e-7, xr=1e-5)
    rep = audit_hypotheses(_state(1e-4), meas)
    js = json.loads(json.dumps(rep.to_json()))
    for h in [f"H{i}" for i in range(1, 10)]:
        assert set(js[h]) == {"lhs", "rhs", "pass"}
    for key in ("nu", "Gamma", "C", "K", "I", "norms"):
        assert key in js


def test_audit_flags_large_mu():
    meas = StepMeasurements(xp=1e-5, xf=1e-4, xp_plus=1e-10, drift_omega=0.0, drift_Omega=0.0, xr=1e-5)
    assert audit_hypotheses(_state(1e-4), meas).all_pass
    assert "H3" in audit_hypotheses(_state(0.5), meas).failures()


# -- Diophantine propagation --------------------------------------------------------

def test_propagate_unperturbed_passes_at_smaller_gamma():
    nf = NormalForm(0.0, [math.sqrt(2), math.sqrt(3)], {(i,): i ** 2 + 1 / math.pi for i in range(1, 5)})
    ok, viol = propagate_diophantine(nf, 0.01, 3.0, 2.0, 2.5, K=4, I=5)
    assert ok
    ok2, _ = propagate_diophantine(nf, 0.005, 3.0, 2.0, 2.5, K=4, I=5)
    assert ok2 and viol is None


def test_propagate_reports_adversarial_drift():
    nf = NormalForm(0.0, [math.sqrt(2), math.sqrt(3)], {(i,): i ** 2 + 1 / math.pi for i in range(1, 5)})
    drifted = nf.copy()
    drifted.omega = np.array([1.0, 1.0 + 1e-9])
    ok, viol = propagate_diophantine(drifted, 0.01, 3.0, 2.0, 2.5, K=4, I=5)
    assert not ok and abs(viol["divisor"]) < viol["threshold"]


def test_propagate_exhaustive_agrees_with_scan(rng):
    nf = make_nf(rng, 2, range(1, 4), 2.0)
    ok, viol = propagate_diophantine(nf, 1e-4, 2.0, 2.0, 2.5, K=3, I=4)
    from kamlattice.measure import enumerate_k, enumerate_l
    from kamlattice.spectra import classify_l, diophantine_threshold
    worst = min(
        abs(k @ nf.omega + sum(v * nf.Omega[s] for s, v in l.items()))
        / diophantine_threshold(k, classify_l(l), 1e-4, 2.0, 2.0, 2.5)
        for k in enumerate_k(2, 3, include_zero=True) for l in enumerate_l(list(nf.Omega), 4, 2.0)
        if np.any(k) or l
    )
    assert ok == (worst >= 1.0)
