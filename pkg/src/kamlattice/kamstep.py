"""One KAM cycle: cutoffs, truncation, homological equation, transform, audit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp

from .series import (
    DomainWeights,
    LieSeriesDivergence,
    ModeKey,
    Site,
    TaylorFourierSeries,
    _as_site,
    lie_transform,
    majorant_xnorm,
    poisson_bracket,
    site_norm,
)
from .spectra import DivisorKind, classify_l, diophantine_threshold

__all__ = [
    "NormalForm",
    "StepState",
    "CutoffReport",
    "InadmissibleParameter",
    "SpecialFormViolation",
    "StepResult",
    "StepMeasurements",
    "HypothesisCheck",
    "HypothesisReport",
    "alpha_exponent",
    "tail_integral",
    "compute_cutoffs",
    "truncate",
    "normal_part",
    "solve_homological",
    "homological_residual",
    "apply_step",
    "gamma_sum",
    "c_sum",
    "audit_hypotheses",
    "propagate_diophantine",
    "special_form_ok",
]


class InadmissibleParameter(ArithmeticError):
    """A small divisor fell below its Diophantine threshold.

    The attributes describe the offending mode; the parameter has to be
    excised rather than the computation repaired.
    """

    def __init__(self, k, l, value, threshold):
        self.k = tuple(int(v) for v in k)
        self.l = dict(l)
        self.value = float(value)
        self.threshold = float(threshold)
        super().__init__(f"inadmissible divisor k={self.k} l={self.l}: |{self.value:.3e}| < {self.threshold:.3e}")


class SpecialFormViolation(ValueError):
    """A term breaks the momentum condition."""


@dataclass
class NormalForm:
    """Integrable part ``e + <omega, y> + sum_i Omega_i z_i zbar_i``."""

    e: float
    omega: np.ndarray
    Omega: Dict[Site, float]

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float).ravel()
        self.Omega = {_as_site(s): float(v) for s, v in dict(self.Omega).items()}

    @property
    def n(self) -> int:
        return self.omega.size

    def copy(self) -> "NormalForm":
        return NormalForm(self.e, self.omega.copy(), dict(self.Omega))

    def as_series(self, rho: int, param_tag: str = "") -> TaylorFourierSeries:
        n = self.n
        terms = {}
        if self.e:
            terms[ModeKey.make([0] * n)] = self.e
        for j, w in enumerate(self.omega):
            m = [0] * n
            m[j] = 1
            terms[ModeKey.make([0] * n, m)] = w
        for s, w in self.Omega.items():
            terms[ModeKey.make([0] * n, None, {s: 1}, {s: 1})] = w
        return TaylorFourierSeries.from_terms(terms, n, rho, param_tag)


def alpha_exponent(ratio: float = 7.0 / 6.0, target: float = 8.0) -> int:
    """Smallest integer ``alpha`` with ``ratio^(3 alpha - 1) >= target``."""
    return max(1, math.ceil((1.0 + math.log(target) / math.log(ratio)) / 3.0 - 1e-12))


@dataclass
class StepState:
    """Scalars of one KAM step and the fixed scheme constants.

    The ``*_0`` values are the initial ones used by the update rules.
    """

    r: float
    a: float
    gamma: float
    M: float
    s: float
    r0: float
    a0: float
    gamma0: float
    M0: float
    tau: float
    n: int
    rho: int
    d: float
    delta: float
    c_rho: float
    c1_rho: float
    alpha1: int
    alpha2: int
    p: float = 0.0
    abar: float = 1.0
    pbar: float = 0.0
    e: float = 0.0
    sigma: float = 0.75
    mu0: Optional[float] = None
    nu: int = 0
    log_base: float = math.e
    max_fourier: Optional[int] = None
    mode_cutoff: Optional[int] = None

    @property
    def mu(self) -> float:
        return math.sqrt(self.s)

    @property
    def eta(self) -> float:
        return self.mu ** (1.0 / 3.0)

    @property
    def r_plus(self) -> float:
        return self.r / 2 + self.r0 / 4

    @property
    def a_plus(self) -> float:
        return self.a / 2 + self.a0 / 4

    @property
    def gamma_plus(self) -> float:
        return self.gamma / 2 + self.gamma0 / 4

    @property
    def M_plus(self) -> float:
        return self.M / 2 + self.M0

    @property
    def s_plus(self) -> float:
        return self.eta * self.s

    @property
    def mu_plus(self) -> float:
        return math.sqrt(self.s_plus)

    @property
    def mu_star(self) -> float:
        mu0 = self.mu if self.mu0 is None else self.mu0
        return mu0 ** (1.0 - self.sigma)

    def _log_level(self) -> int:
        return int(math.floor(math.log(1.0 / self.mu) / math.log(self.log_base))) + 1

    @property
    def K_plus(self) -> int:
        return self._log_level() ** (3 * self.alpha1)

    @property
    def I_plus(self) -> int:
        return self._log_level() ** (3 * self.alpha2)

    @property
    def K_eff(self) -> int:
        return self.K_plus if self.max_fourier is None else min(self.K_plus, self.max_fourier)

    @property
    def I_eff(self) -> int:
        return self.I_plus if self.mode_cutoff is None else min(self.I_plus, self.mode_cutoff)

    def weights(self) -> DomainWeights:
        return DomainWeights(self.a, self.p, self.abar, self.pbar, self.r, self.s)

    def weights_plus(self) -> DomainWeights:
        return DomainWeights(self.a_plus, self.p, self.abar, self.pbar, self.r_plus, self.s_plus)

    def next(self, e: Optional[float] = None) -> "StepState":
        """State of the following step."""
        vals = asdict(self)
        vals.update(r=self.r_plus, a=self.a_plus, gamma=self.gamma_plus, M=self.M_plus,
                    s=self.s_plus, nu=self.nu + 1, e=self.e if e is None else e)
        return StepState(**vals)


# ---------------------------------------------------------------------------
# cutoffs

def tail_integral(X: float, power: int, rate: float) -> float:
    """``int_X^inf t^power e^{-rate t} dt`` for integer ``power >= 0``.

    Uses the finite closed form of the upper incomplete gamma function,
    summed in log space.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if math.isinf(X):
        return 0.0
    X = max(float(X), 0.0)
    j = np.arange(power + 1)
    logx = math.log(X) if X > 0 else -np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = gammaln(power + 1) - gammaln(j + 1) + np.where(j > 0, j * logx, 0.0) - (power - j + 1) * math.log(rate)
    return float(math.exp(min(logsumexp(logs) - rate * X, 700.0)))


def _min_cutoff(power: int, rate: float, bound: float) -> int:
    lo, hi = 0, 1
    while tail_integral(hi, power, rate) > bound:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tail_integral(mid, power, rate) > bound:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass
class CutoffReport:
    K: int
    I: int
    K_formula: int
    I_formula: int
    H1_lhs: float
    H2_lhs: float
    mu: float
    H1_override: bool = False
    H2_override: bool = False

    @property
    def H1_pass(self) -> bool:
        return self.H1_lhs <= self.mu

    @property
    def H2_pass(self) -> bool:
        return self.H2_lhs <= self.mu


def compute_cutoffs(state: StepState) -> CutoffReport:
    """Formula cutoffs ``K_+``, ``I_+`` with the tail-integral checks.

    If a tail integral exceeds ``mu``, the smallest integer cutoff that
    satisfies it replaces the formula value and the override is flagged.
    """
    mu = state.mu
    if not mu < 1:
        raise ValueError("need mu < 1")
    dr = state.r - state.r_plus
    da = state.a - state.a_plus
    if dr <= 0 or da <= 0:
        raise ValueError("need r > r_+ and a > a_+")
    K, I = state.K_plus, state.I_plus
    h1 = tail_integral(K, state.n + 4, dr / 16)
    h2 = tail_integral(I, state.rho + 4, da)
    rep = CutoffReport(K, I, K, I, h1, h2, mu)
    if h1 > mu:
        rep.K = _min_cutoff(state.n + 4, dr / 16, mu)
        rep.H1_lhs = tail_integral(rep.K, state.n + 4, dr / 16)
        rep.H1_override = True
    if h2 > mu:
        rep.I = _min_cutoff(state.rho + 4, da, mu)
        rep.H2_lhs = tail_integral(rep.I, state.rho + 4, da)
        rep.H2_override = True
    return rep


# ---------------------------------------------------------------------------
# truncation and normal part

def _zzbar_pairs(P: TaylorFourierSeries):
    """Site columns of the single ``z`` and ``zbar`` factors per row (or -1)."""
    q, qb = P.q, P.qbar
    zi = np.where(q.sum(axis=1) == 1, np.argmax(q, axis=1) if P.S else -1, -1)
    zj = np.where(qb.sum(axis=1) == 1, np.argmax(qb, axis=1) if P.S else -1, -1)
    return zi, zj


def truncate(P: TaylorFourierSeries, K: int, I: int) -> Tuple[TaylorFourierSeries, TaylorFourierSeries]:
    """Split ``P`` into the part ``R`` removed by the step and the rest.

    ``R`` collects, for ``|k| <= K``: terms at most linear in ``y`` without
    normal variables (the constant excluded), terms linear in ``z`` or
    ``zbar``, and quadratic normal terms. On the ``z_i zbar_j`` block the
    sites obey ``|i|, |j| <= I`` and terms with ``k = 0``, ``|i| = |j|``,
    ``i != j`` stay in the rest.

    Returns
    -------
    R, tail : TaylorFourierSeries
        ``R + tail == P`` coefficient by coefficient.
    """
    if len(P) == 0:
        return P, P
    kk = P.fourier_orders()
    msum = P.m.sum(axis=1)
    qs, qbs = P.q.sum(axis=1), P.qbar.sum(axis=1)
    zs = qs + qbs
    within = kk <= K
    r0 = within & (zs == 0) & (msum <= 1) & ~((kk == 0) & (msum == 0))
    r1 = within & (msum == 0) & (zs == 1)
    quad = within & (msum == 0) & (zs == 2)
    mixed = quad & (qs == 1) & (qbs == 1)
    if P.S:
        norms = P.site_norms()
        zi, zj = _zzbar_pairs(P)
        ni = np.where(zi >= 0, norms[np.maximum(zi, 0)], 0)
        nj = np.where(zj >= 0, norms[np.maximum(zj, 0)], 0)
        nonres = (kk + np.abs(ni - nj) != 0) | ((kk == 0) & (zi == zj))
        mixed_ok = mixed & nonres & (ni <= I) & (nj <= I)
    else:
        mixed_ok = mixed
    r2 = (quad & ~mixed) | mixed_ok
    mask = r0 | r1 | r2
    return P.filter(mask), P.filter(~mask)


def _normal_mask(R: TaylorFourierSeries) -> np.ndarray:
    kzero = R.fourier_orders() == 0
    msum = R.m.sum(axis=1)
    qs, qbs = R.q.sum(axis=1), R.qbar.sum(axis=1)
    ylin = kzero & (msum == 1) & (qs == 0) & (qbs == 0)
    if R.S:
        zi, zj = _zzbar_pairs(R)
        diag = kzero & (msum == 0) & (qs == 1) & (qbs == 1) & (zi == zj)
    else:
        diag = np.zeros(len(R), dtype=bool)
    return ylin | diag


def normal_part(R: TaylorFourierSeries, special_form: bool = False) -> TaylorFourierSeries:
    """Averaged part ``[R]``: ``k = 0`` terms linear in ``y`` or diagonal in ``z zbar``.

    Raises
    ------
    SpecialFormViolation
        If ``special_form`` is set and ``R`` holds an off-diagonal ``k = 0``
        term ``z_i zbar_j`` with ``|i| = |j|``.
    """
    if len(R) == 0:
        return R
    if special_form and R.S:
        kzero = R.fourier_orders() == 0
        zi, zj = _zzbar_pairs(R)
        norms = R.site_norms()
        mixed = kzero & (R.m.sum(axis=1) == 0) & (zi >= 0) & (zj >= 0) & (zi != zj)
        same = mixed & (norms[np.maximum(zi, 0)] == norms[np.maximum(zj, 0)])
        if same.any():
            raise SpecialFormViolation(f"resonant off-diagonal term {R.key_at(int(np.argmax(same)))}")
    return R.filter(_normal_mask(R))


# ---------------------------------------------------------------------------
# homological equation

def _divisors(nf: NormalForm, S: TaylorFourierSeries) -> np.ndarray:
    Om = np.array([nf.Omega[s] for s in S.sites]) if S.S else np.zeros(0)
    return S.k @ nf.omega + (S.q - S.qbar) @ Om


def _row_l(S: TaylorFourierSeries, row: int) -> Dict[Site, int]:
    l = S.q[row] - S.qbar[row]
    return {S.sites[j]: int(l[j]) for j in np.nonzero(l)[0]}


def solve_homological(nf: NormalForm, R: TaylorFourierSeries, gamma: float, tau: float, d: float,
                      c_rho: float, check: bool = True,
                      Rn: Optional[TaylorFourierSeries] = None) -> TaylorFourierSeries:
    """Generator ``F`` with ``{N, F} + R - [R] = 0``.

    Each coefficient is ``-1j * P / D`` with ``D = <k, omega> + <q - qbar, Omega>``;
    with the bracket of :mod:`kamlattice.series` this is the sign that
    solves the identity above.

    Parameters
    ----------
    nf : NormalForm
        Current frequencies at the parameter sample.
    R : TaylorFourierSeries
        Output of :func:`truncate`.
    gamma, tau, d, c_rho : float
        Diophantine constants.
    check : bool
        Raise on a divisor below its threshold.
    Rn : TaylorFourierSeries, optional
        Precomputed ``[R]``.

    Raises
    ------
    InadmissibleParameter
    """
    Rn = normal_part(R) if Rn is None else Rn
    S = R - Rn
    if len(S) == 0:
        return S
    missing = [s for s in S.sites if s not in nf.Omega]
    if missing:
        raise KeyError(f"no normal frequency for sites {missing[:3]}")
    D = _divisors(nf, S)
    if check:
        thr = np.empty(len(S))
        cache = {}
        knorm = S.fourier_orders()
        for row in range(len(S)):
            l = _row_l(S, row)
            key = (int(knorm[row]), tuple(sorted(l.items())))
            if key not in cache:
                if key[0] == 0 and not l:
                    raise InadmissibleParameter(S.k[row], l, D[row], np.inf)
                cache[key] = diophantine_threshold(S.k[row], classify_l(l), gamma, tau, d, c_rho)
            thr[row] = cache[key]
        bad = np.abs(D) < thr
        if bad.any():
            row = int(np.argmax(bad))
            raise InadmissibleParameter(S.k[row], _row_l(S, row), D[row], thr[row])
    elif np.any(D == 0):
        row = int(np.argmax(D == 0))
        raise InadmissibleParameter(S.k[row], _row_l(S, row), 0.0, 0.0)
    return TaylorFourierSeries(S.n, S.rho, S.sites, S.exps, -1j * S.coeffs / D, S.param_tag, S.dtype)


def homological_residual(nf: NormalForm, R: TaylorFourierSeries, F: TaylorFourierSeries,
                         Rn: Optional[TaylorFourierSeries] = None) -> TaylorFourierSeries:
    """Series ``{N, F} + R - [R]``, which vanishes for an exact solution."""
    Rn = normal_part(R) if Rn is None else Rn
    N = nf.as_series(R.rho, R.param_tag)
    return poisson_bracket(N, F) + R - Rn


# ---------------------------------------------------------------------------
# the step

def special_form_ok(P: TaylorFourierSeries, tangential: Sequence) -> Tuple[bool, Optional[ModeKey]]:
    """Momentum check ``sum_l k_l i_l + sum_i (q_i - qbar_i) i = 0`` on every term."""
    if len(P) == 0:
        return True, None
    tang = np.array([_as_site(s) for s in tangential], dtype=np.int64).reshape(P.n, P.rho)
    mom = P.k @ tang
    if P.S:
        sites = np.array(P.sites, dtype=np.int64).reshape(P.S, P.rho)
        mom = mom + (P.q - P.qbar) @ sites
    bad = np.any(mom != 0, axis=1)
    if bad.any():
        return False, P.key_at(int(np.argmax(bad)))
    return True, None


@dataclass
class StepResult:
    """Outcome of :func:`apply_step` with the quantities the audit needs."""

    nf: NormalForm
    P: TaylorFourierSeries
    F: TaylorFourierSeries
    R: TaylorFourierSeries
    Rn: TaylorFourierSeries
    tail: TaylorFourierSeries
    drift_omega: float
    drift_Omega: float
    drift_Omega_max: float
    special_form: Optional[bool] = None


def apply_step(nf: NormalForm, P: TaylorFourierSeries, F: TaylorFourierSeries,
               R: TaylorFourierSeries, Rn: Optional[TaylorFourierSeries] = None,
               delta: float = -1.0, max_degree: Optional[int] = None,
               max_fourier: Optional[int] = None, j_max: int = 32,
               tangential: Optional[Sequence] = None) -> StepResult:
    """Transform ``N + P`` by the time-one flow of ``F``.

    Uses ``H o Phi = N + [R] + (P - R) + sum_{j>=1} ad_F^j P / j!
    + sum_{j>=1} ad_F^j ([R] - R) / (j+1)!``, which follows from
    ``{N, F} = [R] - R`` and avoids cancelling the large normal form
    against itself. The ``k = 0`` constant and ``[R]`` move into the new
    normal form; the rest is the new perturbation.

    Raises
    ------
    LieSeriesDivergence
    """
    Rn = normal_part(R) if Rn is None else Rn
    new = nf.copy()
    tail = P - R
    if not F.is_zero():
        flowP = lie_transform(P, F, max_degree, max_fourier, j_max, "flow") - P
        D = Rn - R
        flowD = lie_transform(D, F, max_degree, max_fourier, j_max, "averaged") - D
        Pn = tail + flowP + flowD
    else:
        Pn = tail
    # constant goes into e
    const = (Pn.fourier_orders() == 0) & (Pn.degrees() == 0) if len(Pn) else np.zeros(0, bool)
    if const.any():
        new.e = nf.e + float(np.real(Pn.coeffs[const].sum()))
        Pn = Pn.filter(~const)
    n = nf.n
    domega = np.zeros(n)
    dOm: Dict[Site, float] = {}
    if len(Rn):
        for row in range(len(Rn)):
            c = float(np.real(Rn.coeffs[row]))
            mrow = Rn.m[row]
            if mrow.sum() == 1:
                domega[int(np.argmax(mrow))] += c
            else:
                s = Rn.sites[int(np.argmax(Rn.q[row]))]
                dOm[s] = dOm.get(s, 0.0) + c
    new.omega = nf.omega + domega
    for s, v in dOm.items():
        new.Omega[s] = new.Omega.get(s, 0.0) + v
    drift_O = max((abs(v) * site_norm(s) ** (-delta) for s, v in dOm.items()), default=0.0)
    drift_Omax = max((abs(v) for v in dOm.values()), default=0.0)
    sf = None
    if tangential is not None:
        sf = special_form_ok(Pn, tangential)[0]
    return StepResult(new, Pn, F, R, Rn, tail, float(np.max(np.abs(domega))) if n else 0.0,
                      drift_O, drift_Omax, sf)


# ---------------------------------------------------------------------------
# hypotheses

def _shell_log_counts(n: int, N: np.ndarray) -> np.ndarray:
    """log of #{k in Z^n : |k|_1 = N} for N >= 1."""
    N = np.asarray(N, dtype=float)
    js = np.arange(1, n + 1)
    # sum_j 2^j C(n, j) C(N-1, j-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lc = (js[None, :] * math.log(2) + gammaln(n + 1) - gammaln(js + 1) - gammaln(n - js + 1)
              + gammaln(N[:, None]) - gammaln(js[None, :]) - gammaln(N[:, None] - js[None, :] + 1))
    lc = np.where(N[:, None] - js[None, :] >= 0, lc, -np.inf)
    return logsumexp(lc, axis=1)


def gamma_sum(K: int, n: int, tau: float, dr: float, chunk: int = 200000) -> float:
    """``sum_{0<|k|<=K} |k|^{4 tau + 4} e^{-|k| dr / 8}`` by shell summation.

    The summand decays once past its peak, so the sum stops when later
    shells cannot change it in double precision.
    """
    if K < 1:
        return 0.0
    total = -np.inf
    start = 1
    peak = (4 * tau + 4 + n - 1) * 8.0 / dr
    while start <= K:
        stop = min(K, start + chunk - 1)
        N = np.arange(start, stop + 1, dtype=float)
        logs = _shell_log_counts(n, N) + (4 * tau + 4) * np.log(N) - N * dr / 8
        total = np.logaddexp(total, logsumexp(logs))
        if stop > peak and logs[-1] < total - 50:
            break
        start = stop + 1
    return float(np.exp(total)) if total < 709 else float("inf")


def c_sum(I: int, rho: int, c_rho: float, da: float, r: float, chunk: int = 200000) -> float:
    """``r * sum_{0<|i|<=I} |i|^{2 c + 2} e^{-da |i|}`` over ``Z^rho`` shells."""
    if I < 1:
        return 0.0
    total = -np.inf
    start = 1
    peak = (2 * c_rho + 2 + rho - 1) / da
    while start <= I:
        stop = min(I, start + chunk - 1)
        N = np.arange(start, stop + 1, dtype=float)
        logs = _shell_log_counts(rho, N) + (2 * c_rho + 2) * np.log(N) - da * N
        total = np.logaddexp(total, logsumexp(logs))
        if stop > peak and logs[-1] < total - 50:
            break
        start = stop + 1
    return float(r * np.exp(total)) if total < 709 else float("inf")


@dataclass
class StepMeasurements:
    """Norms measured on one step.

    ``xp`` is ``|X_P|`` on the current domain, ``xf`` is ``|X_F|``,
    ``xp_plus`` is ``|X_{P+}|`` on the next domain, drifts are
    ``|omega_+ - omega|`` and ``|Omega_+ - Omega|_{-delta}``. Lipschitz
    values are optional finite-difference estimates.
    """

    xp: float
    xf: float
    xp_plus: float
    drift_omega: float
    drift_Omega: float
    drift_Omega_max: float = 0.0
    xr: float = 0.0
    x_tail: float = 0.0
    xp_lip: Optional[float] = None
    xp_plus_lip: Optional[float] = None
    drift_lip: Optional[float] = None


@dataclass
class HypothesisCheck:
    lhs: float
    rhs: float
    passed: bool

    def to_json(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "pass": bool(self.passed)}


@dataclass
class HypothesisReport:
    """Per-hypothesis inequalities with measured constants."""

    nu: int
    checks: Dict[str, HypothesisCheck]
    Gamma: float
    C: float
    K: int
    I: int
    K_formula: int
    I_formula: int
    constants: Dict[str, float]
    norms: Dict[str, float]
    smallness: HypothesisCheck
    notes: List[str] = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> List[str]:
        return [k for k, c in self.checks.items() if not c.passed]

    def to_json(self) -> dict:
        out = {"nu": self.nu}
        for name in [f"H{i}" for i in range(1, 10)]:
            out[name] = self.checks[name].to_json()
        out.update(Gamma=self.Gamma, C=self.C, K=self.K, I=self.I, K_formula=self.K_formula,
                   I_formula=self.I_formula, constants=self.constants, norms=self.norms,
                   smallness=self.smallness.to_json(), notes=list(self.notes), all_pass=self.all_pass)
        return out


def audit_hypotheses(state: StepState, meas: StepMeasurements,
                     cutoffs: Optional[CutoffReport] = None) -> HypothesisReport:
    """Evaluate H1)-H9) with constants measured on this step.

    Constants of quantities that are linear in the truncation ``R``
    (``F`` and the frequency drifts) are normalised by ``mu_R = |X_R| / gamma``,
    e.g. ``c2 = |X_F| / (mu_R Gamma C)``; the new perturbation uses
    ``mu_in = |X_P| / gamma``. Each inequality is then evaluated at the
    schedule's ``mu``. ``Gamma``
    and ``C`` use the effective cutoffs ``min(K_+, max_fourier)`` and
    ``min(I_+, mode_cutoff)``, the largest orders present in the
    truncated problem.
    """
    cut = compute_cutoffs(state) if cutoffs is None else cutoffs
    mu, eta, g = state.mu, state.eta, state.gamma
    dr, da = state.r - state.r_plus, state.a - state.a_plus
    K = cut.K if state.max_fourier is None else min(cut.K, state.max_fourier)
    I = cut.I if state.mode_cutoff is None else min(cut.I, state.mode_cutoff)
    Gam = gamma_sum(K, state.n, state.tau, dr)
    Cc = c_sum(I, state.rho, state.c_rho, da, state.r)
    GC = Gam * Cc
    notes = []
    mu_in = meas.xp / g
    mu_r = meas.xr / g
    checks: Dict[str, HypothesisCheck] = {}
    checks["H1"] = HypothesisCheck(cut.H1_lhs, mu, cut.H1_pass)
    checks["H2"] = HypothesisCheck(cut.H2_lhs, mu, cut.H2_pass)
    if cut.H1_override:
        notes.append("H1 cutoff override")
    if cut.H2_override:
        notes.append("H2 cutoff override")

    def ratio(num, den):
        return num / den if den > 0 else 0.0

    c2 = ratio(meas.xf, mu_r * GC)
    base = c2 * mu * GC
    checks["H3"] = HypothesisCheck(base, dr / 8, base < dr / 8)
    checks["H4"] = HypothesisCheck(state.s ** 2 * base, 5 * state.s_plus ** 2, state.s ** 2 * base < 5 * state.s_plus ** 2)
    checks["H5"] = HypothesisCheck(state.s * base, state.s_plus, state.s * base < state.s_plus)

    if meas.drift_lip is not None:
        c4 = ratio(meas.drift_lip, state.M * mu_r)
    else:
        c4 = ratio(max(meas.drift_omega, meas.drift_Omega), g * mu_r)
    lhs6 = 2 * c4 * state.M * mu
    rhs6 = state.M0 - state.M / 2
    checks["H6"] = HypothesisCheck(lhs6, rhs6, lhs6 <= rhs6)

    c5 = ratio(meas.drift_omega + 2 * meas.drift_Omega_max, g * mu_r)
    lhs7 = c5 * mu * (1 + K) ** state.tau * K * I ** state.c_rho
    rhs7 = g - state.gamma_plus
    checks["H7"] = HypothesisCheck(lhs7, rhs7, lhs7 <= rhs7)

    def q8(m):
        e = m ** (1 / 3)
        return (g * m ** 2 + g * m ** 2 * Gam / (dr * e ** 2)) * Cc

    def q9(m):
        e = m ** (1 / 3)
        M = state.M
        return (M * m ** 2 * GC / (dr * e ** 2) + M * m ** 3 * GC ** 2 / (dr ** 2 * e ** 4) + M * m ** 2)

    c6 = ratio(meas.xp_plus, q8(mu_in)) if mu_in > 0 else 0.0
    lhs8 = c6 * q8(mu)
    checks["H8"] = HypothesisCheck(lhs8, state.gamma_plus * state.mu_plus, lhs8 <= state.gamma_plus * state.mu_plus)
    xpl = meas.xp_plus_lip if meas.xp_plus_lip is not None else meas.xp_plus * state.M / g
    c6l = ratio(xpl, q9(mu_in)) if mu_in > 0 else 0.0
    lhs9 = c6l * q9(mu)
    checks["H9"] = HypothesisCheck(lhs9, state.M_plus * state.mu_plus, lhs9 <= state.M_plus * state.mu_plus)

    c1 = ratio(meas.x_tail, g * mu_in ** 2)
    consts = {"c1": c1, "c2": c2, "c3": c2, "c4": c4, "c5": c5, "c6": c6, "c6_lip": c6l, "mu_in": mu_in, "mu_R": mu_r}
    norms = {"xp": meas.xp, "xf": meas.xf, "xp_plus": meas.xp_plus, "xr": meas.xr, "x_tail": meas.x_tail,
             "drift_omega": meas.drift_omega, "drift_Omega": meas.drift_Omega}
    small = HypothesisCheck(meas.xp, g * mu, meas.xp <= g * mu)
    return HypothesisReport(state.nu, checks, Gam, Cc, K, I, cut.K_formula, cut.I_formula,
                            consts, norms, small, notes)


# ---------------------------------------------------------------------------
# Diophantine propagation

def propagate_diophantine(nf: NormalForm, gamma: float, tau: float, d: float, c_rho: float,
                          K: int, I: int, sites: Optional[Sequence] = None,
                          plus_cap: Optional[float] = None) -> Tuple[bool, Optional[dict]]:
    """Scan every ``|k| <= K``, ``|l| <= 2`` against the thresholds at ``gamma``.

    Minus-class sites are limited to ``|i| < I``. Plus-class vectors with
    ``<l>_d`` above ``plus_cap`` are skipped when a cap is given.

    Returns
    -------
    ok : bool
    violation : dict or None
        ``{k, l, divisor, threshold}`` of the first failure.
    """
    from .measure import enumerate_k, enumerate_l

    n = nf.n
    sites = list(nf.Omega) if sites is None else [_as_site(s) for s in sites]
    Om = nf.Omega
    ls = enumerate_l(sites, I, d, plus_cap)
    for kvec in enumerate_k(n, K, include_zero=True):
        kn = int(np.abs(kvec).sum())
        kw = float(kvec @ nf.omega)
        for l in ls:
            if kn == 0 and not l:
                continue
            cls = classify_l(l)
            thr = diophantine_threshold(kvec, cls, gamma, tau, d, c_rho)
            val = kw + sum(v * Om[s] for s, v in l.items())
            if abs(val) < thr:
                return False, {"k": kvec.tolist(), "l": {str(s): v for s, v in l.items()},
                               "divisor": val, "threshold": thr}
    return True, None
