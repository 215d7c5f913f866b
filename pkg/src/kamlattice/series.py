"""Sparse Taylor-Fourier series on T^n x R^n x l^{a,p} x l^{a,p}.

A series is a finite sum of monomials

    c * y^m * z^q * zbar^qbar * exp(1j * <k, x>)

stored in a dense exponent table. Each row holds ``[k | m | q | qbar]``,
where the ``q`` and ``qbar`` blocks index a per-series list of normal
lattice sites. This keeps the Poisson bracket vectorised with numpy.

Poisson bracket convention
--------------------------
The angle/action part is the standard one, and the normal part carries
a factor ``1j``::

    {F, G} = sum_j (F_xj G_yj - F_yj G_xj)
           + 1j * sum_i (F_zi G_zbar_i - F_zbar_i G_zi)

This is the bracket of the real symplectic form ``du ^ dv`` written in
``z = (u - 1j v)/sqrt(2)``. It is the only choice under which
``{N, z^q zbar^qbar e^{i<k,x>}}`` is a real multiple of ``1j`` times the
monomial. That keeps small divisors real and the flow of a real
generator real.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

Site = Tuple[int, ...]

__all__ = [
    "Site",
    "ModeKey",
    "TaylorFourierSeries",
    "DomainWeights",
    "SeriesMismatchError",
    "LieSeriesDivergence",
    "site_norm",
    "weighted_seq_norm",
    "poisson_bracket",
    "majorant_xnorm",
    "lipschitz_seminorm",
    "lie_transform",
    "coordinate_series",
]


class SeriesMismatchError(ValueError):
    """Raised when two series do not share ``n``, ``rho`` or ``param_tag``."""


class LieSeriesDivergence(ArithmeticError):
    """Raised when Lie-series terms stop decreasing."""


def site_norm(site: Site) -> int:
    """Return the l1 norm ``|i| = |i_1| + ... + |i_rho|`` of a lattice site."""
    return int(sum(abs(v) for v in site))


def _as_site(site) -> Site:
    if isinstance(site, (int, np.integer)):
        return (int(site),)
    return tuple(int(v) for v in site)


def _clean_powers(powers: Optional[Mapping]) -> Tuple[Tuple[Site, int], ...]:
    if not powers:
        return ()
    out = {}
    for site, pw in powers.items():
        pw = int(pw)
        if pw < 0:
            raise ValueError("negative power in monomial")
        if pw:
            s = _as_site(site)
            out[s] = out.get(s, 0) + pw
    return tuple(sorted(out.items()))


@dataclass(frozen=True)
class ModeKey:
    """Multi-index ``(k, m, q, qbar)`` of a monomial.

    Parameters
    ----------
    k : tuple of int
        Fourier index in the angles.
    m : tuple of int
        Powers of the actions ``y``.
    q, qbar : tuple of (site, power)
        Sorted sparse powers of ``z`` and ``zbar``; zero powers are never
        stored.
    """

    k: Tuple[int, ...]
    m: Tuple[int, ...]
    q: Tuple[Tuple[Site, int], ...] = ()
    qbar: Tuple[Tuple[Site, int], ...] = ()

    @classmethod
    def make(cls, k: Sequence[int], m: Optional[Sequence[int]] = None,
             q: Optional[Mapping] = None, qbar: Optional[Mapping] = None) -> "ModeKey":
        """Build a key from plain sequences and ``{site: power}`` maps.

        Integer sites are promoted to one-element tuples.
        """
        k = tuple(int(v) for v in k)
        m = tuple(int(v) for v in (m if m is not None else [0] * len(k)))
        if len(m) != len(k):
            raise ValueError("k and m must have the same length")
        if any(v < 0 for v in m):
            raise ValueError("negative action power")
        return cls(k, m, _clean_powers(q), _clean_powers(qbar))

    @property
    def degree(self) -> int:
        """Grading ``2|m| + |q| + |qbar|``."""
        return 2 * sum(self.m) + sum(p for _, p in self.q) + sum(p for _, p in self.qbar)

    @property
    def fourier_order(self) -> int:
        return int(sum(abs(v) for v in self.k))

    def conjugate(self) -> "ModeKey":
        """Key of the complex-conjugate monomial ``(-k, m, qbar, q)``."""
        return ModeKey(tuple(-v for v in self.k), self.m, self.qbar, self.q)

    def l_vector(self) -> Dict[Site, int]:
        """Signed normal index ``q - qbar`` as a sparse map."""
        out: Dict[Site, int] = {}
        for s, p in self.q:
            out[s] = out.get(s, 0) + p
        for s, p in self.qbar:
            out[s] = out.get(s, 0) - p
        return {s: v for s, v in out.items() if v}


@dataclass(frozen=True)
class DomainWeights:
    """Weights of the domain ``D_{a,p}(r, s)`` and of the target norm.

    Parameters
    ----------
    a, p : float
        Exponential and polynomial weights of the phase space.
    abar, pbar : float
        Weights of the vector-field norm; ``abar > a`` and ``pbar >= p``.
    r : float
        Half-width of the complex angle strip.
    s : float
        Size of the domain.
    """

    a: float
    p: float
    abar: float
    pbar: float
    r: float
    s: float

    def __post_init__(self):
        if not (self.abar > self.a >= 0):
            raise ValueError("need abar > a >= 0")
        if not (self.pbar >= self.p >= 0):
            raise ValueError("need pbar >= p >= 0")
        if self.r <= 0 or self.s <= 0:
            raise ValueError("need r > 0 and s > 0")

    def replace(self, **kw) -> "DomainWeights":
        vals = dict(a=self.a, p=self.p, abar=self.abar, pbar=self.pbar, r=self.r, s=self.s)
        vals.update(kw)
        return DomainWeights(**vals)


def weighted_seq_norm(z: Mapping, a: float, p: float) -> float:
    """Weighted l2 norm ``sqrt(sum |z_i|^2 |i|^{2p} e^{2a|i|})``.

    Parameters
    ----------
    z : mapping
        Finitely supported sequence ``{site: value}``.
    a, p : float
        Non-negative weights.

    Raises
    ------
    ValueError
        If a weight is negative or the support contains ``|i| = 0``.
    """
    if a < 0 or p < 0:
        raise ValueError("weights must be non-negative")
    total = 0.0
    for site, val in z.items():
        ni = site_norm(_as_site(site))
        if ni == 0:
            raise ValueError("site with |i| = 0 is tangential by convention")
        total += abs(val) ** 2 * ni ** (2 * p) * math.exp(2 * a * ni)
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# exponent-table helpers

def _merge_sorted(exps: np.ndarray, coeffs: np.ndarray):
    """Lexicographically sorted unique rows with summed coefficients."""
    N, W = exps.shape
    if N == 0:
        return exps, coeffs
    if W == 0:
        return exps[:1], np.add.reduceat(coeffs, [0])
    if N > 1:
        order = np.lexsort(exps.T[::-1])
        exps, coeffs = exps[order], coeffs[order]
        new = np.any(exps[1:] != exps[:-1], axis=1)
        if not new.all():
            starts = np.concatenate(([0], np.nonzero(new)[0] + 1))
            return exps[starts], np.add.reduceat(coeffs, starts)
    return exps, coeffs


def _format_site(site: Site) -> str:
    if len(site) == 1:
        return str(site[0])
    return "(" + ",".join(str(v) for v in site) + ")"


_SITE_RE = re.compile(r"\(([-\d,\s]*)\)|(-?\d+)")


def _parse_powers(text: str) -> Dict[Site, int]:
    text = text.strip()
    if not text:
        return {}
    out: Dict[Site, int] = {}
    pos = 0
    while pos < len(text):
        mt = _SITE_RE.match(text, pos)
        if mt is None:
            raise ValueError(f"bad site list: {text!r}")
        if mt.group(1) is not None:
            site = tuple(int(v) for v in mt.group(1).split(","))
        else:
            site = (int(mt.group(2)),)
        pos = mt.end()
        if text[pos] != ":":
            raise ValueError(f"bad site list: {text!r}")
        end = text.find(",", pos)
        end = len(text) if end < 0 else end
        out[site] = int(text[pos + 1:end])
        pos = end + 1
    return out


_LINE_RE = re.compile(
    r"k=\[(?P<k>[^\]]*)\]\s+m=\[(?P<m>[^\]]*)\]\s+q=\{(?P<q>[^}]*)\}\s+"
    r"qbar=\{(?P<qb>[^}]*)\}\s+re=(?P<re>\S+)\s+im=(?P<im>\S+)"
)


def _int_list(text: str) -> List[int]:
    text = text.strip()
    return [int(v) for v in text.split(",")] if text else []


class TaylorFourierSeries:
    """Immutable sparse series in canonical form.

    Parameters
    ----------
    n : int
        Number of angle/action pairs.
    rho : int
        Dimension of the normal lattice.
    sites : sequence of Site
        Normal sites indexing the ``q`` and ``qbar`` columns.
    exps : ndarray of int, shape (N, 2n + 2S)
        Exponent rows ``[k | m | q | qbar]``.
    coeffs : ndarray of complex, shape (N,)
        Coefficients.
    param_tag : str, optional
        Label of the parameter sample the series belongs to.
    dtype : numpy dtype, optional
        ``complex128`` or ``clongdouble`` for extended precision.

    Notes
    -----
    The constructor canonicalises: equal rows are merged, exact zeros
    dropped, unused site columns removed, and rows sorted.
    """

    __slots__ = ("n", "rho", "param_tag", "sites", "exps", "coeffs", "_terms")

    def __init__(self, n: int, rho: int, sites: Sequence[Site] = (),
                 exps: Optional[np.ndarray] = None, coeffs: Optional[np.ndarray] = None,
                 param_tag: str = "", dtype=np.complex128):
        self.n = int(n)
        self.rho = int(rho)
        self.param_tag = str(param_tag)
        sites = [_as_site(s) for s in sites]
        width = 2 * self.n + 2 * len(sites)
        if exps is None:
            exps = np.zeros((0, width), dtype=np.int64)
            coeffs = np.zeros(0, dtype=dtype)
        coeffs = np.asarray(coeffs, dtype=dtype).ravel()
        exps = np.asarray(exps, dtype=np.int64).reshape(coeffs.shape[0] if width == 0 else -1, width)
        if exps.shape[0] != coeffs.shape[0]:
            raise ValueError("exponent and coefficient counts differ")
        self._canonicalize(sites, exps, coeffs)
        self._terms = None

    def _canonicalize(self, sites, exps, coeffs):
        n = self.n
        S = len(sites)
        if len(set(sites)) != S:
            raise ValueError("duplicate sites")
        if S and any(a > b for a, b in zip(sites, sites[1:])):
            order = sorted(range(S), key=lambda j: sites[j])
            sites = [sites[j] for j in order]
            cols = list(range(2 * n)) + [2 * n + j for j in order] + [2 * n + S + j for j in order]
            exps = exps[:, cols]
        uexps, ucoef = _merge_sorted(exps, coeffs)
        keep = ucoef != 0
        if not keep.all():
            uexps, ucoef = uexps[keep], ucoef[keep]
        if S:
            used = np.any(uexps[:, 2 * n:2 * n + S] != 0, axis=0) | np.any(uexps[:, 2 * n + S:] != 0, axis=0)
            if not used.all():
                idx = np.nonzero(used)[0]
                sites = [sites[j] for j in idx]
                cols = list(range(2 * n)) + [2 * n + j for j in idx] + [2 * n + S + j for j in idx]
                # dropping all-zero columns keeps the lexicographic row order
                uexps = uexps[:, cols]
        uexps = np.ascontiguousarray(uexps)
        ucoef = np.ascontiguousarray(ucoef)
        uexps.setflags(write=False)
        ucoef.setflags(write=False)
        self.sites = tuple(sites)
        self.exps = uexps
        self.coeffs = ucoef

    # -- construction -----------------------------------------------------
    @classmethod
    def zero(cls, n: int, rho: int, param_tag: str = "", dtype=np.complex128) -> "TaylorFourierSeries":
        return cls(n, rho, (), None, None, param_tag, dtype)

    @classmethod
    def from_terms(cls, terms: Mapping[ModeKey, complex], n: int, rho: int,
                   param_tag: str = "", dtype=np.complex128) -> "TaylorFourierSeries":
        """Build a series from a ``{ModeKey: coefficient}`` map."""
        sites = sorted({s for key in terms for s, _ in key.q + key.qbar})
        index = {s: j for j, s in enumerate(sites)}
        S = len(sites)
        exps = np.zeros((len(terms), 2 * n + 2 * S), dtype=np.int64)
        coeffs = np.zeros(len(terms), dtype=dtype)
        for row, (key, c) in enumerate(terms.items()):
            if len(key.k) != n or len(key.m) != n:
                raise SeriesMismatchError("key length does not match n")
            exps[row, :n] = key.k
            exps[row, n:2 * n] = key.m
            for s, p in key.q:
                if len(s) != rho:
                    raise SeriesMismatchError("site dimension does not match rho")
                exps[row, 2 * n + index[s]] += p
            for s, p in key.qbar:
                if len(s) != rho:
                    raise SeriesMismatchError("site dimension does not match rho")
                exps[row, 2 * n + S + index[s]] += p
            coeffs[row] = c
        return cls(n, rho, sites, exps, coeffs, param_tag, dtype)

    @classmethod
    def monomial(cls, coeff: complex, n: int, rho: int, k=None, m=None, q=None, qbar=None,
                 param_tag: str = "", dtype=np.complex128) -> "TaylorFourierSeries":
        key = ModeKey.make(k if k is not None else [0] * n, m, q, qbar)
        return cls.from_terms({key: coeff}, n, rho, param_tag, dtype)

    def _new(self, sites, exps, coeffs) -> "TaylorFourierSeries":
        return TaylorFourierSeries(self.n, self.rho, sites, exps, coeffs, self.param_tag, self.dtype)

    def _same_rows(self, coeffs) -> "TaylorFourierSeries":
        """Copy with new non-zero coefficients on the same canonical rows."""
        out = object.__new__(TaylorFourierSeries)
        out.n, out.rho, out.param_tag, out.sites, out.exps = self.n, self.rho, self.param_tag, self.sites, self.exps
        coeffs = np.ascontiguousarray(coeffs)
        coeffs.setflags(write=False)
        out.coeffs = coeffs
        out._terms = None
        return out

    # -- basic properties ---------------------------------------------------
    @property
    def dtype(self):
        return self.coeffs.dtype

    @property
    def S(self) -> int:
        return len(self.sites)

    def __len__(self) -> int:
        return int(self.coeffs.shape[0])

    def is_zero(self) -> bool:
        return len(self) == 0

    @property
    def k(self) -> np.ndarray:
        return self.exps[:, :self.n]

    @property
    def m(self) -> np.ndarray:
        return self.exps[:, self.n:2 * self.n]

    @property
    def q(self) -> np.ndarray:
        return self.exps[:, 2 * self.n:2 * self.n + self.S]

    @property
    def qbar(self) -> np.ndarray:
        return self.exps[:, 2 * self.n + self.S:]

    def degrees(self) -> np.ndarray:
        """Per-row grading ``2|m| + |q| + |qbar|``."""
        return 2 * self.m.sum(axis=1) + self.q.sum(axis=1) + self.qbar.sum(axis=1)

    def fourier_orders(self) -> np.ndarray:
        return np.abs(self.k).sum(axis=1)

    def site_norms(self) -> np.ndarray:
        return np.array([site_norm(s) for s in self.sites], dtype=np.float64)

    def key_at(self, row: int) -> ModeKey:
        e = self.exps[row]
        n, S = self.n, self.S
        q = {self.sites[j]: int(e[2 * n + j]) for j in range(S) if e[2 * n + j]}
        qb = {self.sites[j]: int(e[2 * n + S + j]) for j in range(S) if e[2 * n + S + j]}
        return ModeKey(tuple(int(v) for v in e[:n]), tuple(int(v) for v in e[n:2 * n]),
                       tuple(sorted(q.items())), tuple(sorted(qb.items())))

    @property
    def terms(self) -> Dict[ModeKey, complex]:
        """Dictionary view ``{ModeKey: coefficient}``."""
        if self._terms is None:
            self._terms = {self.key_at(r): complex(self.coeffs[r]) for r in range(len(self))}
        return self._terms

    def items(self) -> Iterator[Tuple[ModeKey, complex]]:
        return iter(self.terms.items())

    def coeff(self, key: ModeKey) -> complex:
        return self.terms.get(key, 0j)

    def __repr__(self) -> str:
        return f"TaylorFourierSeries(n={self.n}, rho={self.rho}, terms={len(self)}, sites={len(self.sites)})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, TaylorFourierSeries):
            return NotImplemented
        return (self.n == other.n and self.rho == other.rho and self.param_tag == other.param_tag
                and self.sites == other.sites and np.array_equal(self.exps, other.exps)
                and np.array_equal(self.coeffs, other.coeffs))

    __hash__ = None

    # -- alignment ------------------------------------------------------------
    def _check(self, other: "TaylorFourierSeries"):
        if self.n != other.n or self.rho != other.rho or self.param_tag != other.param_tag:
            raise SeriesMismatchError("series differ in n, rho or param_tag")

    def with_sites(self, sites: Sequence[Site]) -> np.ndarray:
        """Exponent table re-expressed on a superset of the own sites."""
        if tuple(sites) == self.sites:
            return self.exps
        n, S = self.n, self.S
        T = len(sites)
        pos = {s: j for j, s in enumerate(sites)}
        out = np.zeros((len(self), 2 * n + 2 * T), dtype=np.int64)
        out[:, :2 * n] = self.exps[:, :2 * n]
        for j, s in enumerate(self.sites):
            out[:, 2 * n + pos[s]] = self.exps[:, 2 * n + j]
            out[:, 2 * n + T + pos[s]] = self.exps[:, 2 * n + S + j]
        return out

    @staticmethod
    def _union_sites(a: "TaylorFourierSeries", b: "TaylorFourierSeries"):
        if a.sites == b.sites:
            return list(a.sites)
        return sorted(set(a.sites) | set(b.sites))

    # -- arithmetic ---------------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, TaylorFourierSeries):
            self._check(other)
            sites = self._union_sites(self, other)
            exps = np.vstack([self.with_sites(sites), other.with_sites(sites)])
            dtype = np.result_type(self.dtype, other.dtype)
            coeffs = np.concatenate([self.coeffs.astype(dtype), other.coeffs.astype(dtype)])
            return TaylorFourierSeries(self.n, self.rho, sites, exps, coeffs, self.param_tag, dtype)
        if np.isscalar(other):
            return self + TaylorFourierSeries.monomial(other, self.n, self.rho, param_tag=self.param_tag,
                                                       dtype=self.dtype)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return self._same_rows(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c) -> "TaylorFourierSeries":
        return self._new(self.sites, self.exps, self.coeffs * c)

    def __mul__(self, other):
        if isinstance(other, TaylorFourierSeries):
            return self.product(other)
        if np.isscalar(other):
            return self.scale(other)
        return NotImplemented

    def __rmul__(self, other):
        if np.isscalar(other):
            return self.scale(other)
        return NotImplemented

    def __truediv__(self, other):
        if np.isscalar(other):
            return self.scale(1.0 / other)
        return NotImplemented

    def product(self, other: "TaylorFourierSeries") -> "TaylorFourierSeries":
        """Pointwise product of two series."""
        self._check(other)
        sites = self._union_sites(self, other)
        A, B = self.with_sites(sites), other.with_sites(sites)
        exps = (A[:, None, :] + B[None, :, :]).reshape(len(self) * len(other), A.shape[1])
        coeffs = (self.coeffs[:, None] * other.coeffs[None, :]).ravel()
        return TaylorFourierSeries(self.n, self.rho, sites, exps, coeffs, self.param_tag,
                                   np.result_type(self.dtype, other.dtype))

    def filter(self, mask: np.ndarray) -> "TaylorFourierSeries":
        """Keep the rows selected by a boolean mask."""
        return self._new(self.sites, self.exps[mask], self.coeffs[mask])

    def truncate(self, max_degree: Optional[int] = None, max_fourier: Optional[int] = None) -> "TaylorFourierSeries":
        """Drop terms above a degree or Fourier order."""
        mask = np.ones(len(self), dtype=bool)
        if max_degree is not None:
            mask &= self.degrees() <= max_degree
        if max_fourier is not None:
            mask &= self.fourier_orders() <= max_fourier
        return self if mask.all() else self.filter(mask)

    def with_tag(self, tag: str) -> "TaylorFourierSeries":
        return TaylorFourierSeries(self.n, self.rho, self.sites, self.exps, self.coeffs, tag, self.dtype)

    def astype(self, dtype) -> "TaylorFourierSeries":
        return TaylorFourierSeries(self.n, self.rho, self.sites, self.exps, self.coeffs.astype(dtype),
                                   self.param_tag, dtype)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if len(self) else 0.0

    def coeff_l1(self) -> float:
        return float(np.sum(np.abs(self.coeffs)))

    # -- derivatives --------------------------------------------------------------
    def dx(self, j: int) -> "TaylorFourierSeries":
        return self._new(self.sites, self.exps, 1j * self.k[:, j] * self.coeffs)

    def dy(self, j: int) -> "TaylorFourierSeries":
        mj = self.m[:, j]
        mask = mj > 0
        exps = self.exps[mask].copy()
        exps[:, self.n + j] -= 1
        return self._new(self.sites, exps, self.coeffs[mask] * mj[mask])

    def _dnormal(self, site, bar: bool) -> "TaylorFourierSeries":
        site = _as_site(site)
        if site not in self.sites:
            return self._new((), None, None)
        col = 2 * self.n + self.sites.index(site) + (self.S if bar else 0)
        pw = self.exps[:, col]
        mask = pw > 0
        exps = self.exps[mask].copy()
        exps[:, col] -= 1
        return self._new(self.sites, exps, self.coeffs[mask] * pw[mask])

    def dz(self, site) -> "TaylorFourierSeries":
        return self._dnormal(site, False)

    def dzbar(self, site) -> "TaylorFourierSeries":
        return self._dnormal(site, True)

    # -- reality ------------------------------------------------------------------
    def conjugate(self) -> "TaylorFourierSeries":
        """Series of the complex-conjugate function on the real phase space."""
        n, S = self.n, self.S
        exps = np.hstack([-self.k, self.m, self.qbar, self.q]) if len(self) else self.exps
        return self._new(self.sites, exps.reshape(len(self), 2 * n + 2 * S), np.conj(self.coeffs))

    def reality_defect(self) -> float:
        """Largest coefficient of ``F - conj(F)``."""
        return (self - self.conjugate()).max_abs()

    def is_real(self, rtol: float = 1e-12) -> bool:
        return self.reality_defect() <= rtol * max(self.max_abs(), 1e-300)

    # -- evaluation ---------------------------------------------------------------
    def evaluate(self, x: Sequence[float], y: Sequence[float], z: Mapping = None,
                 zbar: Mapping = None) -> complex:
        """Evaluate at one phase point.

        ``z`` and ``zbar`` map sites to values; missing sites are zero.
        """
        if len(self) == 0:
            return 0j
        z = {_as_site(s): v for s, v in (z or {}).items()}
        zbar = {_as_site(s): v for s, v in (zbar or {}).items()}
        x = np.asarray(x, dtype=float).reshape(self.n)
        y = np.asarray(y, dtype=complex).reshape(self.n)
        zv = np.array([z.get(s, 0) for s in self.sites], dtype=complex)
        zb = np.array([zbar.get(s, 0) for s in self.sites], dtype=complex)
        val = self.coeffs.astype(complex) * np.exp(1j * (self.k @ x))
        val = val * np.prod(y[None, :] ** self.m, axis=1)
        val = val * np.prod(zv[None, :] ** self.q, axis=1) * np.prod(zb[None, :] ** self.qbar, axis=1)
        return complex(val.sum())

    # -- text format --------------------------------------------------------------
    def to_text(self) -> str:
        """Serialise to the line-oriented text format."""
        lines = [f"# n={self.n} rho={self.rho} param_tag={self.param_tag}"]
        for r in range(len(self)):
            key = self.key_at(r)
            c = complex(self.coeffs[r])
            q = ",".join(f"{_format_site(s)}:{p}" for s, p in key.q)
            qb = ",".join(f"{_format_site(s)}:{p}" for s, p in key.qbar)
            lines.append(
                f"k=[{','.join(map(str, key.k))}] m=[{','.join(map(str, key.m))}] "
                f"q={{{q}}} qbar={{{qb}}} re={c.real!r} im={c.imag!r}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, n: Optional[int] = None, rho: Optional[int] = None,
                  param_tag: Optional[str] = None) -> "TaylorFourierSeries":
        """Parse the text format; header values fill unspecified arguments."""
        terms: Dict[ModeKey, complex] = {}
        header = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        a, b = tok.split("=", 1)
                        header[a] = b
                continue
            mt = _LINE_RE.fullmatch(line)
            if mt is None:
                raise ValueError(f"malformed series line: {line!r}")
            key = ModeKey.make(_int_list(mt["k"]), _int_list(mt["m"]),
                               _parse_powers(mt["q"]), _parse_powers(mt["qb"]))
            terms[key] = terms.get(key, 0) + complex(float(mt["re"]), float(mt["im"]))
        n = n if n is not None else int(header.get("n", 0))
        rho = rho if rho is not None else int(header.get("rho", 1))
        tag = param_tag if param_tag is not None else header.get("param_tag", "")
        return cls.from_terms(terms, n, rho, tag)


# ---------------------------------------------------------------------------
# bracket

def _pair_block(A, cA, ia, wa, B, cB, ib, wb, shift_col, factor, out_e, out_c, filt):
    """Append the outer-product contribution of selected row subsets."""
    if ia.size == 0 or ib.size == 0:
        return
    coef = (factor * (wa[ia] * cA[ia])[:, None] * (wb[ib] * cB[ib])[None, :]).ravel()
    exps = (A[ia][:, None, :] + B[ib][None, :, :]).reshape(ia.size * ib.size, A.shape[1])
    for col in shift_col:
        exps[:, col] -= 1
    if filt is not None:
        mask = filt(exps)
        exps, coef = exps[mask], coef[mask]
    out_e.append(exps)
    out_c.append(coef)


def poisson_bracket(F: TaylorFourierSeries, G: TaylorFourierSeries, max_degree: Optional[int] = None,
                    max_fourier: Optional[int] = None) -> TaylorFourierSeries:
    """Poisson bracket ``{F, G}``.

    Parameters
    ----------
    F, G : TaylorFourierSeries
        Operands sharing ``n``, ``rho`` and ``param_tag``.
    max_degree, max_fourier : int, optional
        Terms of the result above these orders are discarded.

    Returns
    -------
    TaylorFourierSeries

    Examples
    --------
    >>> z = TaylorFourierSeries.monomial(1, 0, 1, q={1: 1})
    >>> zz = TaylorFourierSeries.monomial(1, 0, 1, q={1: 1}, qbar={1: 1})
    >>> poisson_bracket(zz, z).coeff(ModeKey.make([], [], {1: 1})) == -1j
    True
    """
    F._check(G)
    if F == G:
        return TaylorFourierSeries.zero(F.n, F.rho, F.param_tag, np.result_type(F.dtype, G.dtype))
    # a fixed operand order makes {F, G} = -{G, F} hold bit for bit
    if _order_key(G) < _order_key(F):
        return -_bracket(G, F, max_degree, max_fourier)
    return _bracket(F, G, max_degree, max_fourier)


def _order_key(F: TaylorFourierSeries):
    return (len(F), F.S, repr(F.sites), F.exps.tobytes(), np.asarray(F.coeffs).tobytes())


def _bracket(F, G, max_degree, max_fourier):
    n = F.n
    sites = TaylorFourierSeries._union_sites(F, G)
    S = len(sites)
    A, B = F.with_sites(sites), G.with_sites(sites)
    cA, cB = F.coeffs, G.coeffs
    dtype = np.result_type(F.dtype, G.dtype)
    out_e: List[np.ndarray] = []
    out_c: List[np.ndarray] = []
    if len(F) and len(G):
        filt = None
        if max_degree is not None or max_fourier is not None:
            wdeg = np.concatenate([np.zeros(n), 2 * np.ones(n), np.ones(2 * S)]).astype(np.int64)

            def filt(e, _w=wdeg):
                mask = np.ones(e.shape[0], dtype=bool)
                if max_degree is not None:
                    mask &= e @ _w <= max_degree
                if max_fourier is not None:
                    mask &= np.abs(e[:, :n]).sum(axis=1) <= max_fourier
                return mask

        for j in range(n):
            kA, mA, kB, mB = A[:, j], A[:, n + j], B[:, j], B[:, n + j]
            _pair_block(A, cA, np.nonzero(kA)[0], kA, B, cB, np.nonzero(mB)[0], mB,
                        [n + j], 1j, out_e, out_c, filt)
            _pair_block(A, cA, np.nonzero(mA)[0], mA, B, cB, np.nonzero(kB)[0], kB,
                        [n + j], -1j, out_e, out_c, filt)
        for s in range(S):
            qc, qbc = 2 * n + s, 2 * n + S + s
            _pair_block(A, cA, np.nonzero(A[:, qc])[0], A[:, qc], B, cB, np.nonzero(B[:, qbc])[0], B[:, qbc],
                        [qc, qbc], 1j, out_e, out_c, filt)
            _pair_block(A, cA, np.nonzero(A[:, qbc])[0], A[:, qbc], B, cB, np.nonzero(B[:, qc])[0], B[:, qc],
                        [qc, qbc], -1j, out_e, out_c, filt)
    if out_e:
        exps = np.vstack(out_e)
        coeffs = np.concatenate(out_c).astype(dtype)
    else:
        exps, coeffs = None, None
    return TaylorFourierSeries(n, F.rho, sites, exps, coeffs, F.param_tag, dtype)


# ---------------------------------------------------------------------------
# norms

def _term_bounds(F: TaylorFourierSeries, w: DomainWeights):
    """Per-row sup bound of the monomial on D_{a,p}(r, s)."""
    ni = F.site_norms()
    logw = w.p * np.log(np.maximum(ni, 1.0)) + w.a * ni
    zdeg = F.q + F.qbar
    log_t = (np.log(np.abs(F.coeffs).astype(float)) + F.fourier_orders() * w.r
             + np.log(w.s) * F.degrees() - zdeg @ logw)
    return log_t, zdeg, ni


def majorant_xnorm(F: TaylorFourierSeries, w: DomainWeights) -> float:
    """Majorant of the weighted vector-field norm ``|X_F|``.

    Sums, term by term, bounds of ``|F_y|``, ``s^-2 |F_x|``,
    ``s^-1 |F_zbar|`` and ``s^-1 |F_z|`` on ``D_{a,p}(r, s)``. The normal
    components use the ``(abar, pbar)`` weights on the derivative index.

    Parameters
    ----------
    F : TaylorFourierSeries
    w : DomainWeights

    Returns
    -------
    float
    """
    if len(F) == 0:
        return 0.0
    log_t, zdeg, ni = _term_bounds(F, w)
    t = np.exp(log_t)
    yx = F.m.sum(axis=1) + F.fourier_orders()
    if F.S:
        ww = np.maximum(ni, 1.0) ** (w.p + w.pbar) * np.exp((w.a + w.abar) * ni)
        zpart = zdeg @ ww
    else:
        zpart = np.zeros(len(F))
    return float(np.sum(t * (yx + zpart)) / w.s ** 2)


def lipschitz_seminorm(family: Sequence[Tuple[Sequence[float], TaylorFourierSeries]], w: DomainWeights) -> float:
    """Largest difference quotient of ``majorant_xnorm`` over sample pairs.

    Parameters
    ----------
    family : sequence of (xi, series)
        At least two samples with distinct parameters.
    w : DomainWeights

    Raises
    ------
    ValueError
        With fewer than two samples.
    """
    if len(family) < 2:
        raise ValueError("need at least two parameter samples")
    best = 0.0
    for a in range(len(family)):
        for b in range(a + 1, len(family)):
            xa, Fa = family[a]
            xb, Fb = family[b]
            dist = float(np.linalg.norm(np.asarray(xa, float) - np.asarray(xb, float)))
            if dist == 0:
                continue
            diff = Fa.with_tag("") - Fb.with_tag("")
            best = max(best, majorant_xnorm(diff, w) / dist)
    return best


# ---------------------------------------------------------------------------
# Lie transform

def lie_transform(H: TaylorFourierSeries, F: TaylorFourierSeries, max_degree: Optional[int] = None,
                  max_fourier: Optional[int] = None, j_max: int = 32, kind: str = "flow",
                  rtol: float = 1e-17) -> TaylorFourierSeries:
    """Truncated Lie series of ``H`` along the time-one flow of ``F``.

    Parameters
    ----------
    H, F : TaylorFourierSeries
    max_degree, max_fourier : int, optional
        Truncation orders applied to every bracket.
    j_max : int
        Maximal number of brackets.
    kind : {"flow", "averaged"}
        ``"flow"`` returns ``sum_j ad_F^j H / j!``; ``"averaged"`` returns
        ``sum_j ad_F^j H / (j+1)!``, the time average of ``H`` along the
        flow.
    rtol : float
        The series stops once a term falls below ``rtol`` times ``H``.

    Raises
    ------
    LieSeriesDivergence
        If the coefficient norms of successive terms fail to decrease
        three times in a row.
    """
    if kind not in ("flow", "averaged"):
        raise ValueError("kind must be 'flow' or 'averaged'")
    shift = 0 if kind == "flow" else 1
    result = H.scale(1.0 / math.factorial(shift))
    if F.is_zero() or H.is_zero():
        return result
    scale_h = H.coeff_l1()
    term = H
    norms = [scale_h]
    for j in range(1, j_max + 1):
        term = poisson_bracket(term, F, max_degree, max_fourier)
        if term.is_zero():
            return result
        result = result + term.scale(1.0 / math.factorial(j + shift))
        nrm = term.coeff_l1()
        norms.append(nrm)
        if nrm <= rtol * scale_h:
            return result
        if len(norms) >= 4 and norms[-1] >= norms[-2] >= norms[-3] >= norms[-4]:
            raise LieSeriesDivergence(f"Lie series terms grew at j={j}: {norms[-4:]}")
    return result


def coordinate_series(name: str, index, n: int, rho: int, param_tag: str = "") -> TaylorFourierSeries:
    """Series of a coordinate function ``y_j``, ``z_i`` or ``zbar_i``."""
    if name == "y":
        m = [0] * n
        m[index] = 1
        return TaylorFourierSeries.monomial(1.0, n, rho, m=m, param_tag=param_tag)
    if name == "z":
        return TaylorFourierSeries.monomial(1.0, n, rho, q={index: 1}, param_tag=param_tag)
    if name == "zbar":
        return TaylorFourierSeries.monomial(1.0, n, rho, qbar={index: 1}, param_tag=param_tag)
    raise ValueError(f"no series for coordinate {name!r}")
