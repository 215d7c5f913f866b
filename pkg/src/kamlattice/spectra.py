"""Frequency maps, normal spectra and the modified Diophantine condition."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .series import Site, _as_site, site_norm

__all__ = [
    "FrequencyMap",
    "SpectrumModel",
    "DivisorKind",
    "DivisorClass",
    "DiophantineParams",
    "eval_omega",
    "eval_Omega",
    "classify_l",
    "bracket_ld",
    "divisor",
    "divisor_affine",
    "diophantine_threshold",
    "is_admissible",
    "weyl_lambda",
    "min_tau",
    "default_c_rho",
]


@dataclass(frozen=True)
class FrequencyMap:
    """Affine frequency map ``omega(xi) = omega0 + A xi``.

    Parameters
    ----------
    omega0 : array_like, shape (n,)
    A : array_like, shape (n, n), optional
        Invertible linear part; identity by default.
    """

    omega0: np.ndarray
    A: Optional[np.ndarray] = None

    def __post_init__(self):
        w0 = np.asarray(self.omega0, dtype=float).ravel()
        A = np.eye(w0.size) if self.A is None else np.asarray(self.A, dtype=float)
        if A.shape != (w0.size, w0.size):
            raise ValueError("A must be n x n")
        if abs(np.linalg.det(A)) < 1e-14:
            raise ValueError("A must be invertible")
        object.__setattr__(self, "omega0", w0)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.omega0.size

    def lipschitz(self) -> float:
        """Lipschitz constant in the sup norm (induced inf-norm of ``A``)."""
        return float(np.linalg.norm(self.A, np.inf))

    def lipschitz_inverse(self) -> float:
        return float(np.linalg.norm(np.linalg.inv(self.A), np.inf))


@dataclass(frozen=True)
class SpectrumModel:
    """Normal frequencies ``Omega_i(xi) = |i|^d + corr_i + <v_i, xi> |i|^delta``.

    Parameters
    ----------
    d : float
        Growth exponent, ``d > 0``.
    delta : float
        Exponent of the parameter-dependent correction, ``delta < 0``.
    rho : int
        Lattice dimension.
    corrections : mapping, optional
        Finite table ``{site: value}`` of lower-order corrections.
    tail : mapping, optional
        Finite table ``{site: v_i}`` of parameter directions.
    tangential : sequence of Site, optional
        Tangential sites; evaluating ``Omega`` there is an error.
    """

    d: float
    delta: float = -1.0
    rho: int = 1
    corrections: Mapping = field(default_factory=dict)
    tail: Mapping = field(default_factory=dict)
    tangential: Tuple[Site, ...] = ()

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError("d must be positive")
        if self.delta >= 0:
            raise ValueError("delta must be negative")
        object.__setattr__(self, "corrections", {_as_site(s): float(v) for s, v in dict(self.corrections).items()})
        object.__setattr__(self, "tail", {_as_site(s): np.asarray(v, dtype=float) for s, v in dict(self.tail).items()})
        object.__setattr__(self, "tangential", tuple(_as_site(s) for s in self.tangential))

    def affine(self, site) -> Tuple[float, Optional[np.ndarray]]:
        """Return ``(c0, g)`` with ``Omega_i(xi) = c0 + <g, xi>``."""
        site = _as_site(site)
        if site in self.tangential:
            raise ValueError(f"site {site} is tangential")
        ni = site_norm(site)
        if ni == 0:
            raise ValueError("normal sites need |i| >= 1")
        c0 = ni ** self.d + self.corrections.get(site, 0.0)
        v = self.tail.get(site)
        g = None if v is None else v * ni ** self.delta
        return c0, g


def eval_omega(fm: FrequencyMap, xi) -> np.ndarray:
    """Tangential frequencies ``omega0 + A xi``."""
    return fm.omega0 + fm.A @ np.asarray(xi, dtype=float).reshape(fm.n)


def eval_Omega(sm: SpectrumModel, i, xi=None) -> float:
    """Normal frequency at site ``i``.

    Examples
    --------
    >>> eval_Omega(SpectrumModel(d=2.0), 3)
    9.0
    """
    c0, g = sm.affine(i)
    if g is None or xi is None:
        return float(c0)
    return float(c0 + g @ np.asarray(xi, dtype=float).reshape(g.size))


class DivisorKind(enum.Enum):
    ZERO = "zero"
    PLUS = "plus"
    MINUS = "minus"


@dataclass(frozen=True)
class DivisorClass:
    """Class of a normal index vector ``l`` with ``|l| <= 2``.

    ``site`` is the positive site for ``MINUS``; ``l`` keeps the vector so
    that ``PLUS`` thresholds can use ``<l>_d``.
    """

    kind: DivisorKind
    site: Optional[Site] = None
    l: Tuple[Tuple[Site, int], ...] = ()

    def l_map(self) -> Dict[Site, int]:
        return dict(self.l)


def _clean_l(l: Mapping) -> Dict[Site, int]:
    return {_as_site(s): int(v) for s, v in dict(l).items() if int(v) != 0}


def classify_l(l: Mapping) -> DivisorClass:
    """Classify ``l`` as Zero, Plus or Minus.

    Raises
    ------
    ValueError
        If ``sum |l_i| > 2``.
    """
    l = _clean_l(l)
    if sum(abs(v) for v in l.values()) > 2:
        raise ValueError("|l| > 2 does not occur in the scheme")
    items = tuple(sorted(l.items()))
    if not l:
        return DivisorClass(DivisorKind.ZERO, None, items)
    pos = [s for s, v in l.items() if v == 1]
    neg = [s for s, v in l.items() if v == -1]
    if len(pos) == 1 and len(neg) == 1:
        return DivisorClass(DivisorKind.MINUS, pos[0], items)
    return DivisorClass(DivisorKind.PLUS, None, items)


def bracket_ld(l: Mapping, d: float) -> float:
    """``<l>_d = |sum_i l_i |i|^d|``."""
    return abs(sum(v * site_norm(s) ** d for s, v in _clean_l(l).items()))


def divisor_affine(k, l: Mapping, fm: FrequencyMap, sm: SpectrumModel) -> Tuple[float, np.ndarray]:
    """Return ``(c0, g)`` with ``divisor(k, l, xi) = c0 + <g, xi>``."""
    k = np.asarray(k, dtype=float).reshape(fm.n)
    c0 = float(k @ fm.omega0)
    g = fm.A.T @ k
    for s, v in _clean_l(l).items():
        a0, ag = sm.affine(s)
        c0 += v * a0
        if ag is not None:
            g = g + v * ag
    return c0, g


def divisor(k, l: Mapping, xi, fm: FrequencyMap, sm: SpectrumModel) -> float:
    """Small divisor ``<k, omega(xi)> + sum_i l_i Omega_i(xi)``."""
    l = _clean_l(l)
    if sum(abs(v) for v in l.values()) > 2:
        raise ValueError("|l| > 2 does not occur in the scheme")
    c0, g = divisor_affine(k, l, fm, sm)
    return float(c0 + g @ np.asarray(xi, dtype=float).reshape(fm.n))


def default_c_rho(rho: int, c1_rho: Optional[float] = None) -> float:
    """Exponent ``c(rho)``: ``5/2`` for ``rho = 1``, else ``c1 + rho``."""
    if rho == 1:
        return 2.5
    c1 = rho if c1_rho is None else c1_rho
    return float(c1 + rho)


def min_tau(n: int, c_rho: float, d: float) -> float:
    """Smallest admissible ``tau = n + (c(rho) + 2)/d + 4``."""
    return n + (c_rho + 2.0) / d + 4.0


@dataclass(frozen=True)
class DiophantineParams:
    """Constants of the modified Diophantine condition.

    ``check_tau`` enforces the lower bound on ``tau`` given ``n``.
    """

    gamma: float
    tau: float
    d: float
    c_rho: float
    rho: int = 1
    c1_rho: Optional[float] = None
    n: Optional[int] = None

    def __post_init__(self):
        c1 = self.rho if self.c1_rho is None else self.c1_rho
        if self.c_rho < c1 + self.rho - 1e-12 and not (self.rho == 1 and self.c_rho == 2.5):
            raise ValueError("need c(rho) >= c1(rho) + rho")
        if self.n is not None and self.tau < min_tau(self.n, self.c_rho, self.d) - 1e-12:
            raise ValueError(f"tau must be >= {min_tau(self.n, self.c_rho, self.d)}")


def diophantine_threshold(k, cls: DivisorClass, gamma: float, tau: float, d: float, c_rho: float) -> float:
    """Lower bound required of ``|divisor|`` for the class of ``l``.

    Examples
    --------
    >>> diophantine_threshold([1, 0], classify_l({}), 0.1, 10, 2, 2.5)
    0.05
    """
    knorm = float(np.sum(np.abs(np.asarray(k))))
    if knorm == 0 and cls.kind is DivisorKind.ZERO:
        raise ValueError("k = 0 with l = 0 is the excluded case")
    base = gamma / (1.0 + knorm ** tau)
    if cls.kind is DivisorKind.ZERO:
        return base
    if cls.kind is DivisorKind.PLUS:
        return base * bracket_ld(cls.l_map(), d)
    return base / site_norm(cls.site) ** c_rho


def is_admissible(xi, k, l: Mapping, gamma: float, params: DiophantineParams, fm: FrequencyMap,
                  sm: SpectrumModel) -> bool:
    """True iff ``|divisor| >= threshold`` (inclusive)."""
    cls = classify_l(l)
    thr = diophantine_threshold(k, cls, gamma, params.tau, params.d, params.c_rho)
    return abs(divisor(k, l, xi, fm, sm)) >= thr


def weyl_lambda(m: int, V: float, j: float) -> float:
    """Weyl-law eigenvalue model ``C_m (j/V)^{2/m}``.

    ``C_m = (2 pi)^2 B_m^{-2/m}`` with ``B_m`` the volume of the unit ball.
    """
    if m < 1 or V <= 0 or j < 1:
        raise ValueError("need m >= 1, V > 0, j >= 1")
    ball = math.pi ** (m / 2) / math.gamma(m / 2 + 1)
    cm = (2 * math.pi) ** 2 * ball ** (-2.0 / m)
    return cm * (j / V) ** (2.0 / m)
