import math

import numpy as np
import pytest
from scipy import integrate

from kamlattice.pde import (
    PdeSetup,
    action_angle_embed,
    check_special_form,
    kg_hamiltonian,
    nls_hamiltonian,
    regularity_check,
)
from kamlattice.series import DomainWeights, ModeKey


def nls_setup(**kw):
    base = dict(kind="nls", spatial=3, tangential_sites=[5, 10], mode_cutoff=12, nonlinearity=(1.0,),
                series_truncation=4, amplitudes=(1e-6, 1e-6))
    base.update(kw)
    return PdeSetup(**base)


def kg_setup(**kw):
    base = dict(kind="kg", spatial=1, tangential_sites=[0, 3], mode_cutoff=5, nonlinearity=1.0,
                series_truncation=4, amplitudes=(1e-6, 1e-6))
    base.update(kw)
    return PdeSetup(**base)


def momentum(key):
    return sum(s[0] * v for s, v in key.q) - sum(s[0] * v for s, v in key.qbar)


def test_setup_properties():
    s = nls_setup()
    assert math.isclose(s.d, 2 / 3) and s.rho == 1 and s.n == 2
    assert len(s.sites()) == 12 and (5,) not in s.normal_sites()
    k = kg_setup(spatial=2, tangential_sites=[(0, 0), (1, 1)], mode_cutoff=2)
    assert k.rho == 2 and k.d == 1.0 and all(sum(map(abs, x)) <= 2 for x in k.sites())


@pytest.mark.parametrize("bad", [dict(series_truncation=3), dict(kind="heat"), dict(tangential_sites=[5, 5]),
                                 dict(tangential_sites=[0, 5]), dict(tangential_sites=[5, 20])])
def test_setup_validation(bad):
    with pytest.raises(ValueError):
        nls_setup(**bad)


def test_kg_requires_zero_site():
    with pytest.raises(ValueError):
        kg_setup(tangential_sites=[1, 3])


def test_zero_nonlinearity_is_quadratic():
    model = nls_hamiltonian(nls_setup(nonlinearity=(0.0,)))
    assert model.G.is_zero()
    assert np.all(model.H.degrees() == 2)
    emb = action_angle_embed(model.H, [5, 10], [1e-6, 1e-6])
    assert emb.P.is_zero()
    assert np.allclose(emb.nf.omega, [5 ** (2 / 3), 10 ** (2 / 3)])


def test_nls_quadratic_spectrum_and_xi():
    model = nls_hamiltonian(nls_setup(), xi=[0.1, -0.2])
    assert math.isclose(model.lam[(7,)], 7 ** (2 / 3))
    assert math.isclose(model.lam[(5,)], 5 ** (2 / 3) + 0.1)
    assert math.isclose(model.lam[(10,)], 10 ** (2 / 3) - 0.2)


def test_nls_self_interaction_matches_quadrature():
    # int |phi_j|^4 / 2 over the circle, phi_j = e^{ijx} / sqrt(2 pi)
    val, _ = integrate.quad(lambda x: 0.5 * abs(np.exp(3j * x) / math.sqrt(2 * math.pi)) ** 4, 0, 2 * math.pi)
    model = nls_hamiltonian(nls_setup())
    c = model.G.coeff(ModeKey.make([], [], {3: 2}, {3: 2}))
    assert math.isclose(c.real, val, rel_tol=1e-10) and math.isclose(val, 1 / (4 * math.pi))
    # cross term |q_i|^2 |q_j|^2 counts four pairings
    c2 = model.G.coeff(ModeKey.make([], [], {2: 1, 3: 1}, {2: 1, 3: 1}))
    assert math.isclose(c2.real, 4 * val)


def test_nls_matches_field_integral(rng):
    # G(q) equals the quadrature of |u|^4 / 2 with u built from the modes
    model = nls_hamiltonian(nls_setup(mode_cutoff=4, tangential_sites=[1, 2]))
    q = {(j,): complex(*rng.normal(size=2)) * 0.3 for j in range(1, 5)}
    qb = {s: np.conj(v) for s, v in q.items()}

    def u(x):
        return sum(v * np.exp(1j * s[0] * x) for s, v in q.items()) / math.sqrt(2 * math.pi)

    val, _ = integrate.quad(lambda x: 0.5 * abs(u(x)) ** 4, 0, 2 * math.pi, limit=200)
    got = model.G.evaluate([], [], q, qb)
    assert abs(got - val) < 1e-10 * max(1.0, val)


def test_nls_momentum_and_reality():
    G = nls_hamiltonian(nls_setup()).G
    assert all(momentum(key) == 0 for key in G.terms)
    assert G.is_real(1e-14)


def test_kg_momentum_orthogonality_and_reality():
    model = kg_hamiltonian(kg_setup())
    assert all(momentum(key) == 0 for key in model.G.terms)
    assert model.G.is_real(1e-14)
    assert np.all(model.G.degrees() == 4)


def test_kg_matches_field_integral(rng):
    setup = kg_setup(mode_cutoff=2, tangential_sites=[0, 1])
    model = kg_hamiltonian(setup, xi=[1.5, 1.2])
    w = {s: complex(*rng.normal(size=2)) * 0.2 for s in setup.sites()}
    wb = {s: np.conj(v) for s, v in w.items()}

    def u(x):
        tot = 0.0
        for s, v in w.items():
            phi = np.exp(1j * s[0] * x) / math.sqrt(2 * math.pi)
            tot += (v * phi + np.conj(v * phi)) / math.sqrt(2 * model.lam[s])
        return tot.real

    val, _ = integrate.quad(lambda x: u(x) ** 4 / 4, 0, 2 * math.pi, limit=200)
    assert abs(model.G.evaluate([], [], w, wb) - val) < 1e-10 * max(1.0, val)


def test_kg_errors():
    with pytest.raises(ValueError):
        kg_hamiltonian(kg_setup(nonlinearity=0.0))
    with pytest.raises(ValueError):
        kg_hamiltonian(kg_setup(), xi=[-1.0, 1.0])


def test_embed_rejects_bad_amplitude():
    model = nls_hamiltonian(nls_setup())
    with pytest.raises(ValueError):
        action_angle_embed(model.H, [5, 10], [0.0, 1e-6])


def test_embed_special_form_kg():
    model = kg_hamiltonian(kg_setup(), xi=[1.5, 1.2])
    emb = action_angle_embed(model.H, [0, 3], [1e-6, 1e-6])
    ok, bad = check_special_form(emb.P, [0, 3])
    assert ok and bad is None


def test_embed_frequency_shift_linear_in_amplitude():
    model = nls_hamiltonian(nls_setup())
    lam = np.array([model.lam[(5,)], model.lam[(10,)]])
    a = action_angle_embed(model.H, [5, 10], [1e-6, 1e-6]).nf.omega - lam
    b = action_angle_embed(model.H, [5, 10], [2e-6, 2e-6]).nf.omega - lam
    assert np.allclose(b, 2 * a, rtol=1e-12)
    # d/dI of (I + A)^2 / (4 pi) plus the cross term
    assert math.isclose(a[0], 2e-6 / (4 * math.pi) + 4e-6 / (4 * math.pi))


def test_embed_substitution(rng):
    model = nls_hamiltonian(nls_setup(mode_cutoff=5, tangential_sites=[1, 3]))
    A = np.array([1e-3, 2e-3])
    emb = action_angle_embed(model.H, [1, 3], A)
    x = rng.uniform(0, 2 * math.pi, 2)
    z = {(j,): complex(*rng.normal(size=2)) * 0.01 for j in (2, 4, 5)}
    zb = {s: np.conj(v) for s, v in z.items()}

    def err(y):
        q = dict(z)
        for s, xv, yv, av in zip([(1,), (3,)], x, y, A):
            q[s] = math.sqrt(yv + av) * np.exp(1j * xv)
        qb = {s: np.conj(v) for s, v in q.items()}
        return abs(emb.full().evaluate(x, y, z, zb) - model.H.evaluate([], [], q, qb))

    # exact on y = 0; odd powers of sqrt(I + A) keep a linear jet, so the error is O(y^2)
    assert err(np.zeros(2)) < 1e-16
    e1, e2 = err(np.array([1e-5, 1e-5])), err(np.array([2e-5, 2e-5]))
    assert 3.5 < e2 / e1 < 4.5


def test_embedded_norm_small_for_small_amplitude():
    model = nls_hamiltonian(nls_setup())
    w = DomainWeights(0.01, 0.0, 0.02, 0.0, 0.1, 1e-4)
    small = action_angle_embed(model.H, [5, 10], [1e-6, 1e-6], weights=w).p_norm
    big = action_angle_embed(model.H, [5, 10], [4e-6, 4e-6], weights=w).p_norm
    assert small < 1e-4 and big > small


def test_regularity_exponent_cubic():
    G = nls_hamiltonian(nls_setup(mode_cutoff=6, tangential_sites=[1, 2])).G
    rep = regularity_check(G, 0.1, 1.0, [1e-3, 1e-2, 1e-1, 1.0])
    assert abs(rep.exponent - 3.0) < 0.05


def test_gradient_matches_finite_difference(rng):
    G = nls_hamiltonian(nls_setup(mode_cutoff=4, tangential_sites=[1, 2])).G
    q = {(j,): complex(*rng.normal(size=2)) * 0.3 for j in range(1, 5)}
    qb = {s: np.conj(v) for s, v in q.items()}
    h = 1e-6
    for s in q:
        up, dn = dict(qb), dict(qb)
        up[s] += h
        dn[s] -= h
        fd = (G.evaluate([], [], q, up) - G.evaluate([], [], q, dn)) / (2 * h)
        assert abs(G.dzbar(s).evaluate([], [], q, qb) - fd) < 1e-8
