import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from kamlattice.kamstep import NormalForm
from kamlattice.series import ModeKey, TaylorFourierSeries

T = TaylorFourierSeries

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SITES = [1, 2, 3]


def random_series(rng, n=2, rho=1, terms=6, max_deg=3, kmax=2, sites=SITES, real=False):
    """Random series of grading at most ``max_deg``."""
    out = {}
    for _ in range(terms):
        k = rng.integers(-kmax, kmax + 1, n)
        m = [0] * n
        q, qb = {}, {}
        budget = int(rng.integers(0, max_deg + 1))
        while budget > 0:
            kind = rng.integers(0, 3)
            if kind == 0 and budget >= 2:
                m[int(rng.integers(0, n))] += 1
                budget -= 2
                continue
            s = sites[int(rng.integers(0, len(sites)))]
            tgt = q if kind == 1 else qb
            tgt[s] = tgt.get(s, 0) + 1
            budget -= 1
        key = ModeKey.make(k, m, q, qb)
        out[key] = out.get(key, 0) + complex(rng.normal(), rng.normal())
    F = TaylorFourierSeries.from_terms(out, n, rho)
    if real:
        F = (F + F.conjugate()).scale(0.5)
    return F


def make_nf(rng, n=2, sites=range(1, 6), d=1.0):
    omega = rng.uniform(0.5, 1.5, n) * np.array([1.0, math.sqrt(2)])[:n]
    Omega = {(i,): i ** d + rng.uniform(-0.01, 0.01) for i in sites}
    return NormalForm(0.0, omega, Omega)


def random_R(rng, n, sites, K, terms=12):
    """Random series drawn from the classes kept by ``truncate``."""
    out = {}
    for _ in range(terms):
        k = rng.integers(-K, K + 1, n)
        kind = rng.integers(0, 5)
        i, j = (sites[int(rng.integers(0, len(sites)))] for _ in range(2))
        if kind == 0:
            key = ModeKey.make(k, None)
        elif kind == 1:
            m = [0] * n
            m[int(rng.integers(0, n))] = 1
            key = ModeKey.make(k, m)
        elif kind == 2:
            key = ModeKey.make(k, None, {i: 1}) if rng.integers(0, 2) else ModeKey.make(k, None, None, {i: 1})
        elif kind == 3:
            key = ModeKey.make(k, None, {i: 1, j: 1} if i != j else {i: 2})
        else:
            key = ModeKey.make(k, None, {i: 1}, {j: 1})
        if not any(key.k) and key.degree == 0:
            continue
        out[key] = out.get(key, 0) + complex(*rng.normal(size=2))
    return T.from_terms(out, n, 1)


@st.composite
def series_strategy(draw, n=2, max_deg=3, terms=5):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_series(np.random.default_rng(seed), n=n, terms=terms, max_deg=max_deg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
