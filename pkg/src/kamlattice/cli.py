"""Command line front end: build, step, run, measure and check."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import yaml

from .iterate import KamProblem, Schedule, build_schedule, convergence_report, run, run_step
from .kamstep import InadmissibleParameter
from .measure import ParameterGrid, measure_sweep
from .pde import PdeSetup, action_angle_embed, kg_hamiltonian, nls_hamiltonian
from .series import LieSeriesDivergence, TaylorFourierSeries, _as_site
from .spectra import FrequencyMap, SpectrumModel, min_tau

__all__ = ["ConfigError", "RunConfig", "load_config", "build_problem", "main"]

log = logging.getLogger("kamlattice")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 2, 3

_SCHEME_DEFAULTS = {
    "mu0": 1e-4, "s0": None, "r0": 0.1, "a0": 0.01, "gamma0": 0.5, "M0": 1.0, "tau": None, "nu_max": 3,
    "sigma": 0.75, "log_base": math.e, "max_degree": 4, "max_fourier": 6, "j_max": 32,
    "p": 0.0, "abar": None, "pbar": 0.0, "norm_floor": 1e-13,
}
_GRID_DEFAULTS = {"resolution": 200, "nu_levels": [0, 1], "k_cap": 3, "i_cap": 10, "c8": None}


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


@dataclass
class RunConfig:
    """Validated configuration with every default filled in."""

    mode: str
    problem: Dict[str, Any]
    scheme: Dict[str, Any]
    box: Dict[str, Any]
    grid: Dict[str, Any]
    measure: Dict[str, Any]
    output: str = "out"
    precision: str = "double"
    seed: int = 0
    samples: int = 1
    c_rho: float = 2.5
    base_dir: Path = field(default_factory=Path.cwd)

    def to_json(self) -> dict:
        out = asdict(self)
        out.pop("base_dir")
        return out

    @property
    def special_form(self) -> bool:
        return self.mode == "theorem_a_prime"


def _setup_from(problem: Dict[str, Any]) -> PdeSetup:
    keys = ("kind", "spatial", "tangential_sites", "mode_cutoff", "nonlinearity", "series_truncation",
            "amplitudes", "corrections", "delta")
    kw = {k: problem[k] for k in keys if k in problem}
    if "corrections" in kw:
        kw["corrections"] = {int(s) if isinstance(s, (int, str)) and str(s).lstrip("-").isdigit() else s: v
                             for s, v in dict(kw["corrections"]).items()}
    try:
        return PdeSetup(**kw)
    except TypeError as exc:
        raise ConfigError(f"problem: {exc}") from exc


def load_config(path, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Parse and validate a YAML run configuration.

    ``path`` may also be an already parsed mapping; relative paths in it
    then resolve against the working directory.

    Raises
    ------
    ConfigError
        On unreadable files, unknown modes, non-positive scheme scalars
        or ``tau`` below its admissible minimum.
    """
    if isinstance(path, Mapping):
        raw, path = copy.deepcopy(dict(path)), Path("config.yaml")
    else:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    mode = str(raw.get("mode", "theorem_a")).lower().replace("'", "_prime").replace("-", "_")
    if mode not in ("theorem_a", "theorem_a_prime"):
        raise ConfigError(f"unknown mode {raw.get('mode')!r}")
    problem = raw.get("problem")
    if not isinstance(problem, dict):
        raise ConfigError("missing 'problem' table")
    scheme = dict(_SCHEME_DEFAULTS)
    scheme.update(raw.get("scheme") or {})
    grid = dict(_GRID_DEFAULTS)
    grid.update(raw.get("grid") or {})
    precision = str(raw.get("precision", "double"))
    if precision not in ("double", "extended"):
        raise ConfigError("precision must be 'double' or 'extended'")
    cfg = RunConfig(mode, dict(problem), scheme, dict(raw.get("box") or {}), grid, dict(raw.get("measure") or {}),
                    str(raw.get("output", "out")), precision, int(raw.get("seed", 0)), int(raw.get("samples", 1)),
                    path.parent)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    s = cfg.scheme
    for name in ("mu0", "r0", "a0", "gamma0", "M0", "sigma"):
        try:
            ok = float(s[name]) > 0
        except (TypeError, ValueError):
            ok = False
        if not ok:
            raise ConfigError(f"scheme.{name} must be positive")
    if not float(s["mu0"]) < 1:
        raise ConfigError("scheme.mu0 must be < 1")
    if "series_file" not in cfg.problem:
        try:
            setup = _setup_from(cfg.problem)
        except ValueError as exc:
            raise ConfigError(f"problem: {exc}") from exc
        n, rho, d = setup.n, setup.rho, setup.d
    else:
        try:
            n = len(cfg.problem["tangential_sites"])
            rho = int(cfg.problem.get("rho", 1))
            d = float(cfg.problem["d"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("series_file problems need tangential_sites, d and rho") from exc
    if cfg.mode == "theorem_a" and rho != 1:
        raise ConfigError("theorem_a mode requires rho = 1")
    c1 = float(cfg.problem.get("c1_rho", rho))
    c_rho = float(cfg.problem.get("c_rho", 2.5 if cfg.mode == "theorem_a" else c1 + rho))
    tmin = min_tau(n, c_rho, d)
    if s["tau"] is None:
        s["tau"] = tmin
    if float(s["tau"]) < tmin - 1e-12:
        raise ConfigError(f"scheme.tau = {s['tau']} is below n + (c+2)/d + 4 = {tmin}")
    cfg.c_rho = c_rho
    if cfg.samples < 1:
        raise ConfigError("samples must be >= 1")


@dataclass
class BuiltProblem:
    setup: Optional[PdeSetup]
    H: TaylorFourierSeries
    fm: FrequencyMap
    sm: SpectrumModel
    xi: np.ndarray
    tangential: tuple
    d: float
    rho: int


def _sample_xis(cfg: RunConfig, n: int) -> List[np.ndarray]:
    if "xi" in cfg.problem:
        xs = np.atleast_2d(np.asarray(cfg.problem["xi"], dtype=float))
        return [row.reshape(n) for row in xs]
    if not cfg.box:
        return [np.zeros(n)]
    rng = np.random.default_rng(cfg.seed)
    lo, hi = np.asarray(cfg.box["lower"], float), np.asarray(cfg.box["upper"], float)
    return [rng.uniform(lo, hi) for _ in range(cfg.samples)]


def build_problem(cfg: RunConfig, xi=None) -> BuiltProblem:
    """Hamiltonian in mode coordinates for one parameter sample."""
    prob = cfg.problem
    if "series_file" in prob:
        fpath = Path(prob["series_file"])
        if not fpath.is_absolute():
            fpath = cfg.base_dir / fpath
        try:
            H = TaylorFourierSeries.from_text(fpath.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load series file: {exc}") from exc
        tang = tuple(_as_site(s) for s in prob["tangential_sites"])
        d, rho = float(prob["d"]), int(prob.get("rho", 1))
        omega0 = np.asarray(prob.get("omega0", [0.0] * len(tang)), dtype=float)
        fm = FrequencyMap(omega0)
        sm = SpectrumModel(d, float(prob.get("delta", -1.0)), rho, {}, {}, tang)
        x = np.zeros(len(tang)) if xi is None else np.asarray(xi, float)
        return BuiltProblem(None, H, fm, sm, x, tang, d, rho)
    setup = _setup_from(prob)
    if xi is None:
        xi = _sample_xis(cfg, setup.n)[0]
    builder = nls_hamiltonian if setup.kind == "nls" else kg_hamiltonian
    try:
        model = builder(setup, xi)
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from exc
    return BuiltProblem(setup, model.H, model.fm, model.sm, model.xi, setup.tangential_sites, setup.d, setup.rho)


def _schedule(cfg: RunConfig) -> Schedule:
    s = cfg.scheme
    return build_schedule(float(s["mu0"]), s["s0"], float(s["r0"]), float(s["a0"]), float(s["gamma0"]),
                          float(s["M0"]), float(s["tau"]), int(s["nu_max"]), float(s["log_base"]))


def _kam_problem(cfg: RunConfig, built: BuiltProblem) -> KamProblem:
    prob, s = cfg.problem, cfg.scheme
    amps = prob.get("amplitudes")
    if not amps:
        raise ConfigError("problem.amplitudes required")
    H = built.H.astype(np.clongdouble) if cfg.precision == "extended" else built.H
    emb = action_angle_embed(H, built.tangential, amps, fold=bool(prob.get("fold", True)))
    cutoff = built.setup.mode_cutoff if built.setup is not None else prob.get("mode_cutoff")
    return KamProblem(emb.nf, emb.P, built.rho, built.d, float(prob.get("delta", -1.0)), cfg.c_rho,
                      prob.get("c1_rho"), float(s["p"]), s["abar"], float(s["pbar"]), float(s["sigma"]),
                      s["max_degree"], s["max_fourier"], cutoff, int(s["j_max"]), built.tangential,
                      cfg.special_form, built.xi.tolist())


def _out_dir(cfg: RunConfig, out: Optional[str]) -> Path:
    d = Path(out or cfg.output)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")


def _header(cfg: RunConfig, built: BuiltProblem) -> dict:
    return {"config": cfg.to_json(), "d": built.d, "rho": built.rho, "xi": built.xi.tolist(),
            "tangential_sites": [list(s) for s in built.tangential], "sites": [list(s) for s in built.H.sites],
            "terms": len(built.H)}


# ---------------------------------------------------------------------------
# subcommands

def cmd_build(cfg: RunConfig, out: Optional[str] = None) -> Path:
    """Write ``hamiltonian.series`` and ``header.json``."""
    built = build_problem(cfg)
    d = _out_dir(cfg, out)
    path = d / "hamiltonian.series"
    path.write_text(built.H.to_text())
    (d / "header.json").write_text(_dump(_header(cfg, built)) + "\n")
    return path


def cmd_step(cfg: RunConfig, out: Optional[str] = None) -> dict:
    """One KAM step at ``nu = 0``; writes the new perturbation and the audit."""
    built = build_problem(cfg)
    kp = _kam_problem(cfg, built)
    sch = _schedule(cfg)
    res, rep = run_step(kp, kp.nf, kp.P, kp.state(sch, 0))
    d = _out_dir(cfg, out)
    (d / "perturbation_1.series").write_text(res.P.to_text())
    payload = {"report": rep.to_json(), "omega": res.nf.omega.tolist(), "terms": len(res.P)}
    (d / "step.json").write_text(_dump(payload) + "\n")
    return payload


def _run_one(args):
    cfg, xi, timing = args
    built = build_problem(cfg, xi)
    kp = _kam_problem(cfg, built)
    trace = run(kp, _schedule(cfg), int(cfg.scheme["nu_max"]), float(cfg.scheme["norm_floor"]))
    lines = [r.to_json(timing) for r in trace.records]
    summ = trace.summary()
    if trace.completed_steps >= 2:
        summ["diagnostics"] = convergence_report(trace).to_json()
    return lines, summ, trace.status


def cmd_run(cfg: RunConfig, out: Optional[str] = None, workers: int = 1, timing: bool = False) -> int:
    """Iterate per parameter sample and stream ``trace.jsonl``.

    Returns the exit code: divergence of every sample gives 3.
    """
    built0 = build_problem(cfg)
    xis = _sample_xis(cfg, len(built0.tangential))
    jobs = [(cfg, xi, timing) for xi in xis]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    d = _out_dir(cfg, out)
    statuses = []
    with open(d / "trace.jsonl", "w") as fh:
        fh.write(_dump({"metadata": {"schedule": _schedule(cfg).metadata(), "config": cfg.to_json()}}) + "\n")
        for idx, (lines, summ, status) in enumerate(results):
            for rec in lines:
                rec["sample"] = idx
                rec["xi"] = xis[idx].tolist()
                fh.write(_dump(rec) + "\n")
            summ["sample"] = idx
            fh.write(_dump(summ) + "\n")
            statuses.append(status)
    if statuses and all(s == "divergent" for s in statuses):
        return EXIT_DIVERGENCE
    return EXIT_OK


def _measure_models(cfg: RunConfig):
    m = cfg.measure
    if "omega0" in m:
        fm = FrequencyMap(m["omega0"], m.get("A"))
        d = float(m.get("d", cfg.problem.get("d", 1.0)))
        sm = SpectrumModel(d, float(m.get("delta", -1.0)), int(m.get("rho", 1)))
        sites = m.get("sites") or list(range(1, int(cfg.grid["i_cap"]) + 1))
        tang = ()
    else:
        built = build_problem(cfg)
        fm, sm = built.fm, built.sm
        tang = set(built.tangential)
        sites = m.get("sites") or [s for s in built.H.sites if s not in tang]
    return fm, sm, [_as_site(s) for s in sites]


def cmd_measure(cfg: RunConfig, gammas: Sequence[float], out: Optional[str] = None) -> dict:
    """Excised measure per ``gamma``; writes ``measure.csv`` and ``measure_summary.json``."""
    if not gammas:
        raise ConfigError("empty gamma list")
    if not cfg.box:
        raise ConfigError("measure needs a 'box' table")
    fm, sm, sites = _measure_models(cfg)
    g = cfg.grid
    grid = ParameterGrid(cfg.box["lower"], cfg.box["upper"], g["resolution"])
    res = measure_sweep(grid, list(gammas), fm, sm, _schedule(cfg), g["nu_levels"], sites,
                        tau=float(cfg.scheme["tau"]), c_rho=cfg.c_rho, k_cap=g["k_cap"],
                        i_cap=g["i_cap"], c8=g["c8"])
    d = _out_dir(cfg, out)
    cols = ["gamma", "excised_measure", "surviving_fraction", "cells", "resolution"]
    with open(d / "measure.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in res.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    summary = {"slope": res.slope, "intercept": res.intercept, "notes": res.notes, "rows": len(res.rows)}
    (d / "measure_summary.json").write_text(_dump(summary) + "\n")
    return summary


def cmd_check(cfg: RunConfig, out: Optional[str] = None) -> dict:
    """Audit H1)-H9) on the first step; the step itself is discarded."""
    built = build_problem(cfg)
    kp = _kam_problem(cfg, built)
    _, rep = run_step(kp, kp.nf, kp.P, kp.state(_schedule(cfg), 0))
    report = rep.to_json()
    if out is not None or cfg.output:
        d = _out_dir(cfg, out)
        (d / "check.json").write_text(_dump(report) + "\n")
    return report


# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kamlattice", description="KAM iteration for lattice Hamiltonians.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("build", "step", "run", "measure", "check"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        if name == "run":
            sp.add_argument("--workers", type=int, default=1)
            sp.add_argument("--timing", action="store_true", help="record wall times")
        if name == "measure":
            sp.add_argument("--gamma", required=True, help="comma-separated gamma values")
    return p


def _parse_gammas(text: str) -> List[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --gamma list: {text!r}") from exc
    if not vals or any(v < 0 for v in vals):
        raise ConfigError("--gamma needs at least one non-negative value")
    return vals


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed})
        if args.command == "build":
            print(cmd_build(cfg, args.out))
        elif args.command == "step":
            print(_dump(cmd_step(cfg, args.out)["report"]))
        elif args.command == "run":
            return cmd_run(cfg, args.out, args.workers, args.timing)
        elif args.command == "measure":
            print(_dump(cmd_measure(cfg, _parse_gammas(args.gamma), args.out)))
        else:
            print(_dump(cmd_check(cfg, args.out)))
    except ConfigError as exc:
        log.error("%s", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LieSeriesDivergence as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except InadmissibleParameter as exc:
        print(f"parameter excised: {exc}", file=sys.stderr)
        return EXIT_OK
    return EXIT_OK
