"""Resonance excision over a sampled parameter box and measure estimates."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .series import Site, _as_site, site_norm
from .spectra import (
    DivisorKind,
    FrequencyMap,
    SpectrumModel,
    bracket_ld,
    classify_l,
    diophantine_threshold,
    divisor_affine,
)

__all__ = [
    "ParameterGrid",
    "enumerate_k",
    "enumerate_l",
    "excise",
    "resonance_width_check",
    "PartnerCount",
    "count_resonant_partners",
    "SweepResult",
    "measure_sweep",
]


def enumerate_k(n: int, K: int, K_lo: int = 0, include_zero: bool = False) -> np.ndarray:
    """Integer vectors with ``K_lo < |k|_1 <= K`` (plus ``0`` if asked)."""
    if K < 0:
        return np.zeros((0, n), dtype=np.int64)
    rng = range(-K, K + 1)
    out = [k for k in itertools.product(rng, repeat=n) if K_lo < sum(abs(v) for v in k) <= K]
    if include_zero and K_lo <= 0:
        out.insert(0, (0,) * n)
    return np.array(out, dtype=np.int64).reshape(-1, n)


def enumerate_l(sites: Sequence, I: Optional[float], d: float, plus_cap: Optional[float] = None) -> List[Dict[Site, int]]:
    """All ``l`` with ``|l| <= 2`` over ``sites``.

    Minus-class vectors ``e_i - e_j`` need ``|i| < I``. Plus-class vectors
    with ``<l>_d`` above ``plus_cap`` are dropped.
    """
    sites = [_as_site(s) for s in sites]
    out: List[Dict[Site, int]] = [{}]

    def keep_plus(l):
        return plus_cap is None or bracket_ld(l, d) <= plus_cap

    for a in sites:
        for sgn in (1, -1):
            for l in ({a: sgn}, {a: 2 * sgn}):
                if keep_plus(l):
                    out.append(l)
    for a, b in itertools.combinations(sites, 2):
        for sgn in (1, -1):
            l = {a: sgn, b: sgn}
            if keep_plus(l):
                out.append(l)
        for pos, neg in ((a, b), (b, a)):
            if I is None or site_norm(pos) < I:
                out.append({pos: 1, neg: -1})
    return out


def _l_matrix(ls: Sequence[Mapping], sites: Sequence[Site]) -> np.ndarray:
    idx = {s: j for j, s in enumerate(sites)}
    L = np.zeros((len(ls), len(sites)))
    for r, l in enumerate(ls):
        for s, v in l.items():
            L[r, idx[s]] = v
    return L


@dataclass
class ParameterGrid:
    """Cell-centred grid on an axis-aligned box.

    Parameters
    ----------
    lower, upper : array_like
        Box corners.
    resolution : int or sequence of int
        Cells per axis.
    """

    lower: np.ndarray
    upper: np.ndarray
    resolution: Tuple[int, ...]
    excised: np.ndarray = field(default=None, repr=False)
    records: Dict[int, Tuple[int, Tuple[int, ...], Dict]] = field(default_factory=dict, repr=False)
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        if np.isscalar(self.resolution) or isinstance(self.resolution, (int, np.integer)):
            self.resolution = (int(self.resolution),) * self.lower.size
        self.resolution = tuple(int(v) for v in self.resolution)
        if np.any(self.upper <= self.lower):
            raise ValueError("empty box")
        if self.excised is None:
            self.excised = np.zeros(self.n_cells, dtype=bool)

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def cell_widths(self) -> np.ndarray:
        return (self.upper - self.lower) / np.array(self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_widths))

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def centers(self) -> np.ndarray:
        axes = [self.lower[a] + (np.arange(self.resolution[a]) + 0.5) * self.cell_widths[a] for a in range(self.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))))

    def copy(self) -> "ParameterGrid":
        return ParameterGrid(self.lower.copy(), self.upper.copy(), self.resolution, self.excised.copy(),
                             dict(self.records), list(self.notes))

    def reset(self) -> "ParameterGrid":
        return ParameterGrid(self.lower.copy(), self.upper.copy(), self.resolution)

    @property
    def excised_measure(self) -> float:
        return float(self.excised.sum()) * self.cell_volume

    @property
    def surviving_fraction(self) -> float:
        return 1.0 - float(self.excised.mean())

    @property
    def surviving_measure(self) -> float:
        return self.surviving_fraction * self.volume


def _band_pairs(grid: ParameterGrid, fm: FrequencyMap, sm: SpectrumModel, ks: np.ndarray,
                ls: List[Dict[Site, int]], sites: Sequence[Site], gamma: float, tau: float, d: float,
                c_rho: float):
    """Yield ``(k, l, c0, g, threshold)`` for pairs that can violate on the box."""
    if not len(ks):
        return
    L = _l_matrix(ls, sites)
    base0 = np.zeros(len(sites))
    G = np.zeros((len(sites), grid.n))
    for j, s in enumerate(sites):
        c0, g = sm.affine(s)
        base0[j] = c0
        if g is not None:
            G[j] = g
    lc0 = L @ base0
    lg = L @ G
    factor = np.empty(len(ls))
    for r, l in enumerate(ls):
        cls = classify_l(l)
        if cls.kind is DivisorKind.ZERO:
            factor[r] = 1.0
        elif cls.kind is DivisorKind.PLUS:
            factor[r] = bracket_ld(l, d)
        else:
            factor[r] = site_norm(cls.site) ** (-c_rho)
    is_zero = np.array([not l for l in ls])
    corners = grid.corners()
    for k in ks:
        kn = int(np.abs(k).sum())
        c0 = float(k @ fm.omega0) + lc0
        g = (fm.A.T @ k)[None, :] + lg
        vals = c0[:, None] + g @ corners.T
        lo, hi = vals.min(axis=1), vals.max(axis=1)
        dist = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(np.abs(lo), np.abs(hi)))
        thr = gamma / (1.0 + float(kn) ** tau) * factor
        cand = dist < thr
        if kn == 0:
            cand &= ~is_zero
        for r in np.nonzero(cand)[0]:
            yield k, ls[r], c0[r], g[r], thr[r]


def excise(grid: ParameterGrid, fm: FrequencyMap, sm: SpectrumModel, schedule, gamma: float,
           nu_levels: Sequence[int], sites: Sequence, tau: Optional[float] = None,
           c_rho: Optional[float] = None, k_cap: Optional[int] = None, i_cap: Optional[int] = None,
           c8: Optional[float] = None) -> ParameterGrid:
    """Mark cells whose centre violates a Diophantine condition.

    For each level ``nu`` the band ``K_nu < |k| <= K_{nu+1}`` is scanned
    against every ``|l| <= 2`` over ``sites``; Minus-class sites satisfy
    ``|i| < I_{nu+1}``. The threshold uses ``gamma * gamma_nu / gamma_0``.
    ``k_cap`` and ``i_cap`` bound the schedule cutoffs, which are far too
    large to enumerate. Plus-class vectors are limited to
    ``<l>_d <= c8 * K_{nu+1}`` when ``c8`` is given.

    Returns
    -------
    ParameterGrid
        A new grid with flags and first-violation records.
    """
    out = grid.copy()
    tau = schedule.tau if tau is None else tau
    d = sm.d
    if c_rho is None:
        from .spectra import default_c_rho
        c_rho = default_c_rho(sm.rho)
    sites = [_as_site(s) for s in sites]
    if gamma <= 0:
        return out
    cent = out.centers()
    for nu in nu_levels:
        K_lo = int(schedule.K[nu])
        K_hi = int(schedule.K[nu + 1])
        I_hi = int(schedule.I[nu + 1])
        if k_cap is not None:
            K_lo, K_hi = min(K_lo, k_cap), min(K_hi, k_cap)
        if i_cap is not None:
            I_hi = min(I_hi, i_cap)
        if K_hi <= K_lo:
            out.notes.append(f"band nu={nu} empty after capping (K_nu={K_lo}, K_nu+1={K_hi})")
            continue
        g_nu = gamma * schedule.gamma[nu] / schedule.gamma0
        ks = enumerate_k(grid.n, K_hi, K_lo, include_zero=(K_lo == 0 and nu == 0))
        cap = None if c8 is None else c8 * K_hi
        ls = enumerate_l(sites, I_hi, d, cap)
        for k, l, c0, g, thr in _band_pairs(out, fm, sm, ks, ls, sites, g_nu, tau, d, c_rho):
            vals = c0 + cent @ g
            hit = (np.abs(vals) < thr) & ~out.excised
            if hit.any():
                for idx in np.nonzero(hit)[0]:
                    out.records[int(idx)] = (nu, tuple(int(v) for v in k), dict(l))
                out.excised |= hit
    return out


def resonance_width_check(k, l: Mapping, grid: ParameterGrid, fm: FrequencyMap, sm: SpectrumModel,
                          gamma: float, tau: float, c_rho: Optional[float] = None) -> Tuple[float, float]:
    """Excised measure of a single zone ``R_kl`` and an analytic bound.

    The bound is the slab ``|c0 + <g, xi>| < t`` cut by the box: exact for
    ``n = 1``, and ``2 t / |g| * diam^(n-1)`` otherwise.

    Returns
    -------
    measured, bound : float
    """
    from .spectra import default_c_rho

    c_rho = default_c_rho(sm.rho) if c_rho is None else c_rho
    l = {_as_site(s): v for s, v in dict(l).items() if v}
    thr = diophantine_threshold(k, classify_l(l), gamma, tau, sm.d, c_rho)
    c0, g = divisor_affine(k, l, fm, sm)
    vals = c0 + grid.centers() @ g
    measured = float((np.abs(vals) < thr).sum()) * grid.cell_volume
    gn = float(np.linalg.norm(g))
    if gn == 0:
        return measured, (grid.volume if abs(c0) < thr else 0.0)
    if grid.n == 1:
        a, b = sorted(((-thr - c0) / g[0], (thr - c0) / g[0]))
        bound = max(0.0, min(b, grid.upper[0]) - max(a, grid.lower[0]))
    else:
        diam = float(np.linalg.norm(grid.upper - grid.lower))
        bound = 2 * thr / gn * diam ** (grid.n - 1)
    return measured, bound


@dataclass
class PartnerCount:
    count: int
    bound: float
    c: float


def _shell_count(rho: int, N: int) -> int:
    return sum(2 ** j * math.comb(rho, j) * math.comb(N - 1, j - 1) for j in range(1, min(rho, N) + 1))


def count_resonant_partners(i, k, d: float, c8: float, rho: Optional[int] = None, c1_rho: Optional[float] = None,
                            positive: Optional[bool] = None) -> PartnerCount:
    """Count sites ``j`` with ``||i|^d - |j|^d| <= c8 |k|``.

    For ``rho = 1`` the lattice is the positive integers; otherwise all
    non-zero points of ``Z^rho``. The reported ``c`` is the smallest value
    with ``count <= (c + 1) |k|^{c1/d} |i|^{c1}``.

    Examples
    --------
    >>> count_resonant_partners(100, 1, 0.5, 1.0).count
    41
    """
    i = _as_site(i)
    rho = len(i) if rho is None else rho
    c1 = rho if c1_rho is None else c1_rho
    positive = (rho == 1) if positive is None else positive
    ni = site_norm(i)
    kn = float(np.abs(np.atleast_1d(k)).sum())
    w = c8 * kn
    center = ni ** d
    lo_v = center - w
    lo = 1 if lo_v <= 1 else max(1, int(math.floor(lo_v ** (1 / d))) - 1)
    hi = int(math.ceil((center + w) ** (1 / d))) + 1
    tol = 1e-12 * max(1.0, center + w)
    count = 0
    for N in range(lo, hi + 1):
        if abs(N ** d - center) <= w + tol:
            count += 1 if positive else _shell_count(rho, N)
    scale = kn ** (c1 / d) * ni ** c1
    return PartnerCount(count, scale, count / scale - 1.0)


@dataclass
class SweepResult:
    rows: List[dict]
    slope: Optional[float]
    intercept: Optional[float]
    notes: List[str] = field(default_factory=list)


def measure_sweep(grid: ParameterGrid, gamma_list: Sequence[float], fm: FrequencyMap, sm: SpectrumModel,
                  schedule, nu_levels: Sequence[int], sites: Sequence, **kw) -> SweepResult:
    """Run :func:`excise` per ``gamma`` and fit ``log(measure)`` against ``log(gamma)``.

    The slope is ``None`` when fewer than two ``gamma`` values excise
    anything.
    """
    if len(gamma_list) == 0:
        raise ValueError("empty gamma list")
    rows = []
    notes: List[str] = []
    for g in gamma_list:
        res = excise(grid.reset(), fm, sm, schedule, g, nu_levels, sites, **kw)
        notes.extend(n for n in res.notes if n not in notes)
        rows.append({"gamma": float(g), "excised_measure": res.excised_measure,
                     "surviving_fraction": res.surviving_fraction, "cells": res.n_cells,
                     "resolution": "x".join(str(r) for r in res.resolution)})
    pts = [(math.log(r["gamma"]), math.log(r["excised_measure"])) for r in rows
           if r["gamma"] > 0 and r["excised_measure"] > 0]
    if len({p[0] for p in pts}) < 2:
        return SweepResult(rows, None, None, notes + ["slope undefined: fewer than two positive measures"])
    x, y = np.array(pts).T
    slope, intercept = np.polyfit(x, y, 1)
    return SweepResult(rows, float(slope), float(intercept), notes)
