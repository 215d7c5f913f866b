"""Galerkin Hamiltonians for NLS and Klein-Gordon and their KAM embedding.

Both models use the torus exponentials ``phi_j = e^{i<j,x>} / sqrt(2 pi)^rho``,
for which interaction integrals reduce to momentum conservation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .kamstep import NormalForm, special_form_ok
from .series import (
    DomainWeights,
    ModeKey,
    Site,
    TaylorFourierSeries,
    _as_site,
    majorant_xnorm,
    site_norm,
)
from .spectra import FrequencyMap, SpectrumModel

__all__ = [
    "PdeSetup",
    "PdeModel",
    "EmbeddedHamiltonian",
    "nls_hamiltonian",
    "kg_hamiltonian",
    "action_angle_embed",
    "check_special_form",
    "RegularityReport",
    "regularity_check",
]


@dataclass
class PdeSetup:
    """Description of a truncated PDE model.

    Parameters
    ----------
    kind : {"nls", "kg"}
    spatial : int
        Domain dimension ``m`` for NLS (sets ``d = 2/m``); torus dimension
        ``rho`` for Klein-Gordon.
    tangential_sites : sequence
        Sites carrying the torus; ``0`` must be one of them for KG.
    mode_cutoff : int
        Largest ``|j|`` kept.
    nonlinearity : sequence of float or float
        NLS: coefficients ``f_1, f_2, ...`` of ``f(t) = sum f_p t^p``.
        KG: the exponent ``alpha`` of ``u (e^{alpha u^2} - 1)``.
    series_truncation : int
        Largest total degree of the interaction (default 6).
    amplitudes : sequence of float
        Action values at the tangential sites.
    corrections : mapping, optional
        Lower-order spectrum corrections ``{site: value}``.
    """

    kind: str
    spatial: int
    tangential_sites: Sequence
    mode_cutoff: int
    nonlinearity: object = (1.0,)
    series_truncation: int = 6
    amplitudes: Sequence[float] = ()
    corrections: Mapping = field(default_factory=dict)
    delta: float = -1.0

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("nls", "kg"):
            raise ValueError("kind must be 'nls' or 'kg'")
        self.tangential_sites = tuple(_as_site(s) for s in self.tangential_sites)
        if len(set(self.tangential_sites)) != len(self.tangential_sites):
            raise ValueError("tangential sites must be distinct")
        if self.series_truncation < 4:
            raise ValueError("series_truncation must be >= 4")
        if self.amplitudes and len(self.amplitudes) != len(self.tangential_sites):
            raise ValueError("one amplitude per tangential site")
        if self.kind == "kg":
            zero = (0,) * self.spatial
            if zero not in self.tangential_sites:
                raise ValueError("0 must be a tangential site for Klein-Gordon")
            if any(len(s) != self.spatial for s in self.tangential_sites):
                raise ValueError("site dimension must equal rho")
        else:
            if any(len(s) != 1 or s[0] < 1 for s in self.tangential_sites):
                raise ValueError("NLS sites are positive integers")
            if any(s[0] > self.mode_cutoff for s in self.tangential_sites):
                raise ValueError("tangential site beyond mode_cutoff")

    @property
    def rho(self) -> int:
        return 1 if self.kind == "nls" else self.spatial

    @property
    def d(self) -> float:
        return 2.0 / self.spatial if self.kind == "nls" else 1.0

    @property
    def n(self) -> int:
        return len(self.tangential_sites)

    def sites(self) -> List[Site]:
        """All retained lattice sites."""
        if self.kind == "nls":
            return [(j,) for j in range(1, self.mode_cutoff + 1)]
        J = self.mode_cutoff
        return [s for s in itertools.product(range(-J, J + 1), repeat=self.spatial)
                if site_norm(s) <= J]

    def normal_sites(self) -> List[Site]:
        tang = set(self.tangential_sites)
        return [s for s in self.sites() if s not in tang]


@dataclass
class PdeModel:
    """Hamiltonian in mode coordinates with its spectrum data."""

    setup: PdeSetup
    H: TaylorFourierSeries
    G: TaylorFourierSeries
    lam: Dict[Site, float]
    fm: FrequencyMap
    sm: SpectrumModel
    xi: np.ndarray


def _power_rows(sites: Sequence[Site], weights: np.ndarray, r: int):
    """Rows of ``(sum_j c_j w_j e^{i<j,x>})^r``: exponent vectors, coefficients, momenta."""
    S = len(sites)
    sarr = np.array(sites, dtype=np.int64).reshape(S, -1)
    exps, coefs = [], []
    for combo in itertools.combinations_with_replacement(range(S), r):
        e = np.bincount(combo, minlength=S)
        mult = math.factorial(r) / np.prod([math.factorial(v) for v in e])
        exps.append(e)
        coefs.append(mult * np.prod(weights[list(combo)]))
    exps = np.array(exps, dtype=np.int64).reshape(-1, S)
    return exps, np.array(coefs, dtype=complex), exps @ sarr


def _pair_by_momentum(A, cA, momA, B, cB, momB, factor, S):
    """``sum`` over rows of ``A`` (as ``w``) and ``B`` (as ``wbar``) with matching momentum."""
    groups: Dict[Tuple[int, ...], List[int]] = {}
    for idx, mom in enumerate(map(tuple, momB)):
        groups.setdefault(mom, []).append(idx)
    out_e, out_c = [], []
    for ia, mom in enumerate(map(tuple, momA)):
        ib = groups.get(mom)
        if not ib:
            continue
        e = np.zeros((len(ib), 2 * S), dtype=np.int64)
        e[:, :S] = A[ia]
        e[:, S:] = B[ib]
        out_e.append(e)
        out_c.append(factor * cA[ia] * cB[ib])
    if not out_e:
        return np.zeros((0, 2 * S), dtype=np.int64), np.zeros(0, dtype=complex)
    return np.vstack(out_e), np.concatenate(out_c)


def _quadratic(lam: Mapping[Site, float], rho: int) -> TaylorFourierSeries:
    terms = {ModeKey.make([], [], {s: 1}, {s: 1}): v for s, v in lam.items()}
    return TaylorFourierSeries.from_terms(terms, 0, rho)


def nls_hamiltonian(setup: PdeSetup, xi=None) -> PdeModel:
    """``sum_j lambda_j |q_j|^2 + int F(u) dx`` with ``dF/d ubar = f(|u|^2) u``.

    ``lambda_j = j^{2/m} + corrections`` at normal sites and
    ``lambda_j + xi_l`` at the ``l``-th tangential site. With
    ``f(t) = sum_p f_p t^p`` one has ``F = sum_p f_p |u|^{2p+2} / (p+1)``
    and ``int |u|^{2P} dx = (2 pi)^{1-P} sum`` over momentum-balanced
    monomials with multinomial weights.

    Raises
    ------
    ValueError
        For a setup of the wrong kind.
    """
    if setup.kind != "nls":
        raise ValueError("setup is not an NLS model")
    n = setup.n
    xi = np.zeros(n) if xi is None else np.asarray(xi, dtype=float).reshape(n)
    sites = setup.sites()
    S = len(sites)
    corr = {_as_site(s): float(v) for s, v in dict(setup.corrections).items()}
    lam = {s: site_norm(s) ** setup.d + corr.get(s, 0.0) for s in sites}
    for l, s in enumerate(setup.tangential_sites):
        lam[s] += xi[l]
    f = list(np.atleast_1d(np.asarray(setup.nonlinearity, dtype=float)))
    weights = np.full(S, (2 * math.pi) ** -0.5)
    parts_e, parts_c = [], []
    for p, fp in enumerate(f, start=1):
        P = p + 1
        if fp == 0 or 2 * P > setup.series_truncation:
            continue
        A, cA, mA = _power_rows(sites, weights, P)
        e, c = _pair_by_momentum(A, cA, mA, A, cA.conj(), mA, 2 * math.pi * fp / P, S)
        parts_e.append(e)
        parts_c.append(c)
    if parts_e:
        G = TaylorFourierSeries(0, 1, sites, np.vstack(parts_e), np.concatenate(parts_c))
    else:
        G = TaylorFourierSeries.zero(0, 1)
    H = _quadratic(lam, 1) + G
    omega0 = np.array([site_norm(s) ** setup.d + corr.get(s, 0.0) for s in setup.tangential_sites])
    fm = FrequencyMap(omega0)
    sm = SpectrumModel(setup.d, setup.delta, 1, corr, {}, setup.tangential_sites)
    return PdeModel(setup, H, G, lam, fm, sm, xi)


def kg_hamiltonian(setup: PdeSetup, xi=None) -> PdeModel:
    """Klein-Gordon Hamiltonian ``sum_j lambda_j |w_j|^2 + int F(u) dx``.

    ``u = sum_j (w_j phi_j + wbar_j conj(phi_j)) / sqrt(2 lambda_j)`` and
    ``dF/du = u (e^{alpha u^2} - 1)``, so that
    ``F = sum_{p>=1} alpha^p u^{2p+2} / ((2p+2) p!)``, cut at
    ``series_truncation``. ``lambda_j = |j|`` at normal sites and
    ``|i_l| + xi_l - 1`` at the tangential ones.

    Raises
    ------
    ValueError
        If ``alpha == 0`` or a frequency is not positive.
    """
    if setup.kind != "kg":
        raise ValueError("setup is not a Klein-Gordon model")
    alpha = float(np.atleast_1d(setup.nonlinearity)[0])
    if alpha == 0:
        raise ValueError("alpha = 0 leaves no nonlinearity")
    rho, n = setup.rho, setup.n
    xi = np.ones(n) * 1.5 if xi is None else np.asarray(xi, dtype=float).reshape(n)
    sites = setup.sites()
    S = len(sites)
    corr = {_as_site(s): float(v) for s, v in dict(setup.corrections).items()}
    lam = {s: float(site_norm(s)) + corr.get(s, 0.0) for s in sites}
    for l, s in enumerate(setup.tangential_sites):
        lam[s] = site_norm(s) + xi[l] - 1.0
    if any(v <= 0 for v in lam.values()):
        raise ValueError("all frequencies must be positive; adjust xi")
    lam_arr = np.array([lam[s] for s in sites])
    weights = 1.0 / np.sqrt(2 * lam_arr) / (2 * math.pi) ** (rho / 2)
    vol = (2 * math.pi) ** rho
    parts_e, parts_c = [], []
    p = 1
    while 2 * p + 2 <= setup.series_truncation:
        N = 2 * p + 2
        coef = alpha ** p / (N * math.factorial(p))
        for r in range(N + 1):
            A, cA, mA = _power_rows(sites, weights, r)
            B, cB, mB = _power_rows(sites, weights, N - r)
            # conj factors carry momentum -j; match sum of w-momenta with wbar-momenta
            e, c = _pair_by_momentum(A, cA, mA, B, cB, mB, vol * coef * math.comb(N, r), S)
            parts_e.append(e)
            parts_c.append(c)
        p += 1
    G = TaylorFourierSeries(0, rho, sites, np.vstack(parts_e), np.concatenate(parts_c))
    H = _quadratic(lam, rho) + G
    omega0 = np.array([site_norm(s) - 1.0 for s in setup.tangential_sites])
    fm = FrequencyMap(omega0)
    sm = SpectrumModel(1.0, setup.delta, rho, corr, {}, setup.tangential_sites)
    return PdeModel(setup, H, G, lam, fm, sm, xi)


@dataclass
class EmbeddedHamiltonian:
    """Hamiltonian ``N + P`` in ``(x, y, z, zbar)``."""

    nf: NormalForm
    P: TaylorFourierSeries
    tangential: Tuple[Site, ...]
    normal_sites: List[Site]
    p_norm: Optional[float] = None

    def full(self) -> TaylorFourierSeries:
        return self.nf.as_series(self.P.rho, self.P.param_tag) + self.P


def _sqrt_jet(h2: int, A: float) -> List[Tuple[int, float]]:
    """``(I + A)^{h2/2}`` as ``[(power of I, coefficient)]``.

    Integer exponents expand exactly; half-integer ones keep the linear jet.
    """
    if h2 % 2 == 0:
        h = h2 // 2
        return [(t, math.comb(h, t) * A ** (h - t)) for t in range(h + 1)]
    h = h2 / 2
    return [(0, A ** h), (1, h * A ** (h - 1))]


def action_angle_embed(H: TaylorFourierSeries, tangential_sites: Sequence, amplitudes: Sequence[float],
                       fold: bool = True, weights: Optional[DomainWeights] = None,
                       param_tag: str = "") -> EmbeddedHamiltonian:
    """Substitute ``w_i = sqrt(I + A) e^{i x}`` at tangential sites.

    Parameters
    ----------
    H : TaylorFourierSeries
        Series with ``n = 0`` in mode coordinates.
    tangential_sites : sequence
    amplitudes : sequence of float
        Positive actions ``A``.
    fold : bool
        Move every ``k = 0`` term linear in ``y`` or diagonal in
        ``z zbar`` into the normal form, so that amplitude-dependent
        frequency shifts are part of ``omega`` and ``Omega``. Otherwise
        only the quadratic part of ``H`` is used.
    weights : DomainWeights, optional
        When given, ``|X_P|`` is reported.

    Raises
    ------
    ValueError
        On a non-positive amplitude.
    """
    tang = [_as_site(s) for s in tangential_sites]
    amps = [float(a) for a in amplitudes]
    if len(amps) != len(tang) or any(a <= 0 for a in amps):
        raise ValueError("positive amplitude required at every tangential site")
    n = len(tang)
    S = H.S
    idx = {s: j for j, s in enumerate(H.sites)}
    tcols = [idx.get(s) for s in tang]
    normal = [s for s in H.sites if s not in set(tang)]
    ncols = [idx[s] for s in normal]
    terms: Dict[ModeKey, complex] = {}
    for row in range(len(H)):
        q, qb = H.q[row], H.qbar[row]
        c = complex(H.coeffs[row])
        k = [0] * n
        jets = []
        for l, col in enumerate(tcols):
            a = int(q[col]) if col is not None else 0
            b = int(qb[col]) if col is not None else 0
            k[l] = a - b
            jets.append(_sqrt_jet(a + b, amps[l]) if a + b else [(0, 1.0)])
        zq = {normal[j]: int(q[col]) for j, col in enumerate(ncols) if q[col]}
        zqb = {normal[j]: int(qb[col]) for j, col in enumerate(ncols) if qb[col]}
        for combo in itertools.product(*jets):
            m = [t for t, _ in combo]
            coef = c * math.prod(v for _, v in combo)
            key = ModeKey.make(k, m, zq, zqb)
            terms[key] = terms.get(key, 0) + coef
    full = TaylorFourierSeries.from_terms(terms, n, H.rho, param_tag)
    if fold:
        src = full
    else:
        quad = H.filter((H.q.sum(axis=1) == 1) & (H.qbar.sum(axis=1) == 1) & np.all(H.q == H.qbar, axis=1))
        src = action_angle_embed(quad, tang, amps, True, None, param_tag).full()
    nf, P = _split_normal_form(src, full, n, normal)
    rep = majorant_xnorm(P, weights) if weights is not None else None
    return EmbeddedHamiltonian(nf, P, tuple(tang), normal, rep)


def _split_normal_form(src: TaylorFourierSeries, full: TaylorFourierSeries, n: int, normal: List[Site]):
    e = 0.0
    omega = np.zeros(n)
    Omega = {s: 0.0 for s in normal}
    k0 = src.fourier_orders() == 0
    msum = src.m.sum(axis=1)
    qs, qbs = src.q.sum(axis=1), src.qbar.sum(axis=1)
    take = np.zeros(len(src), dtype=bool)
    for row in np.nonzero(k0)[0]:
        c = float(np.real(src.coeffs[row]))
        if msum[row] == 0 and qs[row] == 0 and qbs[row] == 0:
            e += c
            take[row] = True
        elif msum[row] == 1 and qs[row] == 0 and qbs[row] == 0:
            omega[int(np.argmax(src.m[row]))] += c
            take[row] = True
        elif msum[row] == 0 and qs[row] == 1 and qbs[row] == 1 and np.array_equal(src.q[row], src.qbar[row]):
            Omega[src.sites[int(np.argmax(src.q[row]))]] += c
            take[row] = True
    nf = NormalForm(e, omega, Omega)
    P = full - nf.as_series(full.rho, full.param_tag)
    return nf, P


def check_special_form(P: TaylorFourierSeries, tangential_sites: Sequence) -> Tuple[bool, Optional[ModeKey]]:
    """Momentum conservation of every term of ``P``.

    Returns
    -------
    ok : bool
    violator : ModeKey or None
    """
    return special_form_ok(P, tangential_sites)


@dataclass
class RegularityReport:
    scales: List[float]
    q_norms: List[float]
    grad_norms: List[float]
    exponent: Optional[float]


def _norm_with_origin(vals: Mapping[Site, complex], a: float, p: float) -> float:
    tot = 0.0
    for s, v in vals.items():
        ni = site_norm(s)
        w = 1.0 if ni == 0 else ni ** p * math.exp(a * ni)
        tot += abs(v) ** 2 * w ** 2
    return math.sqrt(tot)


def regularity_check(G: TaylorFourierSeries, a: float, p: float, amplitude_list: Sequence[float],
                     seed: int = 0) -> RegularityReport:
    """Fit the exponent of ``|G_qbar|^{a,p}`` against ``|q|^{a,p}`` along a ray.

    The base point has random phases and moduli decaying like the
    weights; the site ``0`` carries unit weight.
    """
    rng = np.random.default_rng(seed)
    sites = list(G.sites)
    base = {}
    for s in sites:
        ni = site_norm(s)
        w = 1.0 if ni == 0 else ni ** p * math.exp(a * ni)
        base[s] = rng.uniform(0.5, 1.0) * np.exp(2j * math.pi * rng.uniform()) / (w * (1 + ni))
    grads = {s: G.dzbar(s) for s in sites}
    qn, gn = [], []
    for t in amplitude_list:
        z = {s: t * v for s, v in base.items()}
        zb = {s: np.conj(v) for s, v in z.items()}
        gv = {s: grads[s].evaluate([], [], z, zb) for s in sites}
        qn.append(_norm_with_origin(z, a, p))
        gn.append(_norm_with_origin(gv, a, p))
    pos = [(math.log(x), math.log(y)) for x, y in zip(qn, gn) if x > 0 and y > 0]
    expo = float(np.polyfit(*np.array(pos).T, 1)[0]) if len(pos) >= 2 else None
    return RegularityReport(list(amplitude_list), qn, gn, expo)
