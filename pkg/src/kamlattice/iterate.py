"""Schedules, the iteration driver and convergence diagnostics."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .kamstep import (
    InadmissibleParameter,
    NormalForm,
    StepMeasurements,
    StepState,
    alpha_exponent,
    apply_step,
    audit_hypotheses,
    compute_cutoffs,
    normal_part,
    solve_homological,
    special_form_ok,
    truncate,
)
from .series import LieSeriesDivergence, TaylorFourierSeries, majorant_xnorm, site_norm
from .spectra import default_c_rho, min_tau

__all__ = [
    "Schedule",
    "build_schedule",
    "KamProblem",
    "StepRecord",
    "RunTrace",
    "run",
    "run_step",
    "Diagnostics",
    "convergence_report",
    "fit_decay",
]


@dataclass
class Schedule:
    """Sequences ``r_nu, a_nu, gamma_nu, M_nu, s_nu, mu_nu, eta_nu, K_nu, I_nu``.

    ``K[0] = I[0] = 0``; ``K[nu+1]`` is the cutoff used by step ``nu``.
    ``M_nu = M0 (2 - 2^-nu)``.
    """

    mu0: float
    s0: float
    r0: float
    a0: float
    gamma0: float
    M0: float
    tau: float
    alpha1: int
    alpha2: int
    nu_max: int
    log_base: float
    r: np.ndarray
    a: np.ndarray
    gamma: np.ndarray
    M: np.ndarray
    s: np.ndarray
    mu: np.ndarray
    eta: np.ndarray
    K: List[int]
    I: List[int]
    notes: List[str] = field(default_factory=list)

    def state(self, nu: int, n: int, rho: int, d: float, delta: float = -1.0, c_rho: Optional[float] = None,
              c1_rho: Optional[float] = None, p: float = 0.0, abar: Optional[float] = None, pbar: float = 0.0,
              sigma: float = 0.75, max_fourier: Optional[int] = None,
              mode_cutoff: Optional[int] = None, e: float = 0.0) -> StepState:
        """Step state at level ``nu`` with the given model constants."""
        c_rho = default_c_rho(rho, c1_rho) if c_rho is None else c_rho
        abar = 2 * self.a0 if abar is None else abar
        return StepState(r=float(self.r[nu]), a=float(self.a[nu]), gamma=float(self.gamma[nu]),
                         M=float(self.M[nu]), s=float(self.s[nu]), r0=self.r0, a0=self.a0,
                         gamma0=self.gamma0, M0=self.M0, tau=self.tau, n=n, rho=rho, d=d, delta=delta,
                         c_rho=c_rho, c1_rho=rho if c1_rho is None else c1_rho, alpha1=self.alpha1,
                         alpha2=self.alpha2, p=p, abar=abar, pbar=pbar, e=e, sigma=sigma, mu0=self.mu0,
                         nu=nu, log_base=self.log_base, max_fourier=max_fourier, mode_cutoff=mode_cutoff)

    def metadata(self) -> dict:
        return {"mu0": self.mu0, "s0": self.s0, "r0": self.r0, "a0": self.a0, "gamma0": self.gamma0,
                "M0": self.M0, "tau": self.tau, "alpha1": self.alpha1, "alpha2": self.alpha2,
                "nu_max": self.nu_max, "log_base": self.log_base,
                "M_rule": "M_nu = M0 (2 - 2^-nu)", "notes": list(self.notes)}


def build_schedule(mu0: float, s0: Optional[float] = None, r0: float = 1.0, a0: float = 0.1,
                   gamma0: float = 0.1, M0: float = 1.0, tau: float = 12.75, nu_max: int = 6,
                   log_base: float = math.e) -> Schedule:
    """Materialise all sequences up to ``nu_max + 1``.

    Parameters
    ----------
    mu0 : float
        Initial size, ``0 < mu0 < 1``.
    s0 : float, optional
        Initial domain size; must equal ``mu0**2`` if given.

    Raises
    ------
    ValueError
        If ``mu0`` is outside ``(0, 1)`` or inconsistent with ``s0``.

    Examples
    --------
    >>> round(float(build_schedule(1e-4).mu[1]), 10)
    2.15443e-05
    """
    if not 0 < mu0 < 1:
        raise ValueError("need 0 < mu0 < 1")
    if s0 is None:
        s0 = mu0 ** 2
    elif abs(math.sqrt(s0) - mu0) > 1e-12 * mu0:
        raise ValueError("s0 must equal mu0**2")
    for name, v in (("r0", r0), ("a0", a0), ("gamma0", gamma0), ("M0", M0), ("tau", tau)):
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    alpha = alpha_exponent()
    L = nu_max + 2
    nu = np.arange(L)
    expo = (7.0 / 6.0) ** nu
    mu = mu0 ** expo
    s = s0 ** expo
    frac = 0.5 + 0.5 ** (nu + 1)
    r, a, g = r0 * frac, a0 * frac, gamma0 * frac
    M = M0 * (2.0 - 0.5 ** nu)
    K = [0]
    I = [0]
    for j in range(L - 1):
        lvl = int(math.floor(math.log(1.0 / mu[j]) / math.log(log_base))) + 1
        K.append(lvl ** (3 * alpha))
        I.append(lvl ** (3 * alpha))
    return Schedule(mu0, s0, r0, a0, gamma0, M0, tau, alpha, alpha, nu_max, log_base, r, a, g, M, s, mu,
                    mu ** (1.0 / 3.0), K, I)


@dataclass
class KamProblem:
    """Hamiltonian ``N + P`` at one parameter sample plus model constants."""

    nf: NormalForm
    P: TaylorFourierSeries
    rho: int
    d: float
    delta: float = -1.0
    c_rho: Optional[float] = None
    c1_rho: Optional[float] = None
    p: float = 0.0
    abar: Optional[float] = None
    pbar: float = 0.0
    sigma: float = 0.75
    max_degree: Optional[int] = None
    max_fourier: Optional[int] = None
    mode_cutoff: Optional[int] = None
    j_max: int = 32
    tangential: Optional[Sequence] = None
    special_form: bool = False
    xi: Optional[Sequence[float]] = None

    @property
    def n(self) -> int:
        return self.nf.n

    def state(self, schedule: Schedule, nu: int) -> StepState:
        return schedule.state(nu, self.n, self.rho, self.d, self.delta, self.c_rho, self.c1_rho, self.p,
                              self.abar, self.pbar, self.sigma, self.max_fourier, self.mode_cutoff, self.nf.e)


@dataclass
class StepRecord:
    nu: int
    norm: float
    drift_omega: float
    drift_Omega: float
    step_drift: Optional[float] = None
    report: Optional[dict] = None
    special_form: Optional[bool] = None
    terms: int = 0
    wall_time: float = 0.0
    status: str = "ok"
    detail: Optional[dict] = None

    def to_json(self, timing: bool = True) -> dict:
        out = {"nu": self.nu, "norm": self.norm, "drift_omega": self.drift_omega,
               "drift_Omega": self.drift_Omega, "step_drift": self.step_drift,
               "special_form": self.special_form, "terms": self.terms, "status": self.status}
        if self.detail is not None:
            out["detail"] = self.detail
        if self.report is not None:
            out["report"] = self.report
        if timing:
            out["wall_time"] = self.wall_time
        return out


@dataclass
class RunTrace:
    """Records of ``P_0, P_1, ...`` plus the terminal status."""

    records: List[StepRecord]
    omega0: np.ndarray
    omega_star: np.ndarray
    Omega_star: Dict
    mu_star: float
    gamma0: float
    status: str = "completed"
    nf_final: Optional[NormalForm] = None
    P_final: Optional[TaylorFourierSeries] = None

    @property
    def completed_steps(self) -> int:
        return len(self.records) - 1

    def summary(self) -> dict:
        return {"summary": True, "status": self.status, "steps": self.completed_steps,
                "omega0": self.omega0.tolist(), "omega_star": self.omega_star.tolist(),
                "drift_total": float(np.max(np.abs(self.omega_star - self.omega0))) if self.omega0.size else 0.0,
                "drift_budget": self.gamma0 * self.mu_star, "mu_star": self.mu_star}


def _omega_drift(nf: NormalForm, nf0: NormalForm, delta: float):
    dw = float(np.max(np.abs(nf.omega - nf0.omega))) if nf.n else 0.0
    dO = 0.0
    for s, v in nf.Omega.items():
        dO = max(dO, abs(v - nf0.Omega.get(s, v)) * site_norm(s) ** (-delta))
    return dw, dO


def run_step(problem: KamProblem, nf: NormalForm, P: TaylorFourierSeries, state: StepState,
             lipschitz_family=None):
    """Perform one step and audit it.

    Returns
    -------
    result : StepResult
    report : HypothesisReport
    """
    cut = compute_cutoffs(state)
    K = cut.K if problem.max_fourier is None else min(cut.K, problem.max_fourier)
    I = cut.I if problem.mode_cutoff is None else min(cut.I, problem.mode_cutoff)
    R, tail = truncate(P, K, I)
    Rn = normal_part(R, problem.special_form)
    F = solve_homological(nf, R, state.gamma, state.tau, state.d, state.c_rho, check=True, Rn=Rn)
    res = apply_step(nf, P, F, R, Rn, state.delta, problem.max_degree, problem.max_fourier, problem.j_max,
                     problem.tangential if problem.special_form else None)
    w, wp = state.weights(), state.weights_plus()
    meas = StepMeasurements(xp=majorant_xnorm(P, w), xf=majorant_xnorm(F, w),
                            xp_plus=majorant_xnorm(res.P, wp), drift_omega=res.drift_omega,
                            drift_Omega=res.drift_Omega, drift_Omega_max=res.drift_Omega_max,
                            xr=majorant_xnorm(R, w), x_tail=majorant_xnorm(tail, w.replace(s=7 * state.eta * state.s)))
    report = audit_hypotheses(state, meas, cut)
    return res, report


def run(problem: KamProblem, schedule: Schedule, nu_max: Optional[int] = None,
        norm_floor: float = 1e-13) -> RunTrace:
    """Iterate KAM steps from ``problem`` along ``schedule``.

    Stops after ``nu_max`` steps, when ``|X_P|`` drops below ``norm_floor``,
    on excision (status ``"excised"``) or on Lie-series divergence
    (status ``"divergent"``).
    """
    nu_max = schedule.nu_max if nu_max is None else nu_max
    nf0 = problem.nf.copy()
    nf, P = problem.nf.copy(), problem.P
    state = problem.state(schedule, 0)
    records: List[StepRecord] = []
    status = "completed"
    sf0 = special_form_ok(P, problem.tangential)[0] if problem.special_form else None
    t0 = time.perf_counter()
    norm = majorant_xnorm(P, state.weights())
    records.append(StepRecord(0, norm, 0.0, 0.0, special_form=sf0, terms=len(P)))
    for nu in range(nu_max):
        if norm < norm_floor and nu > 0:
            status = "norm_floor"
            break
        if P.is_zero():
            nf_next, P_next, rep, step_drift = nf, P, None, 0.0
        else:
            try:
                res, rep = run_step(problem, nf, P, state)
            except InadmissibleParameter as exc:
                records[-1].status = "excised"
                records[-1].detail = {"k": list(exc.k), "l": {str(s): v for s, v in exc.l.items()},
                                      "divisor": exc.value, "threshold": exc.threshold}
                status = "excised"
                break
            except LieSeriesDivergence as exc:
                records[-1].status = "divergent"
                records[-1].detail = {"message": str(exc)}
                status = "divergent"
                break
            records[-1].report = rep.to_json()
            nf_next, P_next = res.nf, res.P
            step_drift = max(res.drift_omega, res.drift_Omega)
        records[-1].step_drift = step_drift
        nf, P = nf_next, P_next
        state = problem.state(schedule, nu + 1)
        state.e = nf.e
        norm = majorant_xnorm(P, state.weights())
        dw, dO = _omega_drift(nf, nf0, problem.delta)
        sf = special_form_ok(P, problem.tangential)[0] if problem.special_form else None
        records.append(StepRecord(nu + 1, norm, dw, dO, special_form=sf, terms=len(P),
                                  wall_time=time.perf_counter() - t0))
    mu_star = schedule.mu0 ** (1 - problem.sigma)
    return RunTrace(records, nf0.omega.copy(), nf.omega.copy(), dict(nf.Omega), mu_star, schedule.gamma0,
                    status, nf, P)


def fit_decay(norms: Sequence[float]) -> Optional[float]:
    """Least-squares ``beta`` in ``log x_{nu+1} = beta log x_nu`` through the origin."""
    pairs = [(math.log(a), math.log(b)) for a, b in zip(norms[:-1], norms[1:]) if a > 0 and b > 0]
    if not pairs:
        return None
    x, y = np.array(pairs).T
    den = float(x @ x)
    return float(x @ y / den) if den > 0 else None


@dataclass
class Diagnostics:
    beta: Optional[float]
    convergent: bool
    step_drifts: List[float]
    drift_total: float
    drift_budget: float
    drift_ok: bool
    halving_ok: bool
    pass_rates: Dict[str, float]

    def to_json(self) -> dict:
        return dict(self.__dict__)


def convergence_report(trace: RunTrace) -> Diagnostics:
    """Decay exponent, drift bookkeeping and hypothesis pass rates.

    ``halving_ok`` checks the per-step drift against ``gamma0 mu_* / 2^nu``,
    the geometric bound with a factor-two slack.
    """
    norms = [r.norm for r in trace.records]
    beta = fit_decay(norms)
    drifts = [r.step_drift for r in trace.records if r.step_drift is not None]
    budget = trace.gamma0 * trace.mu_star
    total = max((max(r.drift_omega, 0.0) for r in trace.records), default=0.0)
    halving = all(dv <= budget / 2 ** nu for nu, dv in enumerate(drifts))
    counts: Dict[str, List[bool]] = {}
    for r in trace.records:
        if r.report:
            for h in [f"H{i}" for i in range(1, 10)]:
                counts.setdefault(h, []).append(bool(r.report[h]["pass"]))
    rates = {h: float(np.mean(v)) for h, v in counts.items()}
    return Diagnostics(beta, beta is not None and beta > 1.0 + 1e-9, drifts, total, budget,
                       total <= budget, halving, rates)
