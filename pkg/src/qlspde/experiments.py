"""Experiment configs, the coupled eps sweep, and the ``run`` dispatcher.

Config files are flat ``key = value`` text with ``#`` comments::

    kind = sweep_eps
    coeff.name = trig
    coeff.a1 = 0.5
    solver.n = 64
    solver.dt = 6e-5
    solver.T = 0.5
    eps_grid = 0.02, 0.01, 0.005, 0.0025
    seeds = 0:64            # or a comma list
    M_threshold = 50

Failures are reported with a machine-readable reason code.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .coefficients import CoefficientError, CoefficientSet, builtin
from .diagnostics import (
    CouplingError,
    MonitorTable,
    TrajectorySummary,
    ito_energy_residual,
    monotonicity_probe,
    operator_bound_check,
    random_band_fields,
    summarize,
    uniform_monitor,
    write_csv,
)
from .noise import generate
from .semigroup import HeatSemigroup, estimate_semigroup_constants
from .solver import SolverConfig, StabilityError, integrate_batch, write_energy_csv
from .torus import ScalarField, TorusGrid
from .uniqueness import uniqueness_experiment

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "SweepReport",
    "RunResult",
    "parse_config",
    "load_config",
    "sweep_eps",
    "run",
    "make_initial",
    "KINDS",
    "REASON_CODES",
]

KINDS = ("simulate", "sweep_eps", "uniqueness", "monotonicity", "constants")
REASON_CODES = (
    "CONFIG_PARSE",
    "CONFIG_UNKNOWN_KEY",
    "CONFIG_EPS_ORDER",
    "CONFIG_SEEDS",
    "COEFF_INVALID",
    "STABILITY_BOUND",
    "COUPLING_MISMATCH",
    "ASSERTION_FAILED",
)

_SOLVER_KEYS = {
    "n": int, "dim": int, "dt": float, "T": float, "K": int, "eps": float,
    "dealias": "bool", "theta_split": float, "clip_R": float, "snapshot_stride": int,
    "basis_product": "bool", "check_ellipticity": "bool",
}
_TOP_KEYS = {"kind", "eps_grid", "seeds", "M_threshold", "output_dir", "eta", "monitor_factor",
             "coeff.name", "threads"}
_PREFIXES = ("coeff.", "solver.", "u0.", "uniqueness.", "monotonicity.", "sweep.")


class ConfigError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _seeds(text: str) -> list[int]:
    text = text.strip()
    if ":" in text:
        lo, hi = (int(x) for x in text.split(":"))
        return list(range(lo, hi))
    return [int(x) for x in text.split(",") if x.strip()]


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    coeff_name: str = "trig"
    coeff_params: Mapping[str, float] = field(default_factory=dict)
    solver: Mapping[str, object] = field(default_factory=dict)
    eps_grid: tuple[float, ...] = ()
    seeds: tuple[int, ...] = (0,)
    M_threshold: float = 50.0
    output_dir: str = "out"
    eta: float = 0.5
    monitor_factor: float = 2.0
    u0: Mapping[str, str] = field(default_factory=dict)
    uniqueness: Mapping[str, str] = field(default_factory=dict)
    monotonicity: Mapping[str, str] = field(default_factory=dict)
    sweep: Mapping[str, str] = field(default_factory=dict)
    raw: Mapping[str, str] = field(default_factory=dict)
    ignored_keys: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("CONFIG_PARSE", f"unknown kind {self.kind!r}; expected one of {KINDS}")
        e = list(self.eps_grid)
        if e:
            if any(not math.isfinite(x) or x < 0 for x in e):
                raise ConfigError("CONFIG_EPS_ORDER", "eps_grid entries must be finite and >= 0")
            if any(b >= a for a, b in zip(e, e[1:])):
                raise ConfigError("CONFIG_EPS_ORDER", f"eps_grid must be strictly decreasing, got {e}")
            if 0.0 in e[:-1]:
                raise ConfigError("CONFIG_EPS_ORDER", "eps = 0 is allowed only as the last entry")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("CONFIG_SEEDS", "seeds must be distinct")
        if not self.seeds:
            raise ConfigError("CONFIG_SEEDS", "at least one seed is required")

    @property
    def dim(self) -> int:
        return int(self.solver.get("dim", 1))

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.dim, int(self.solver.get("n", 64)))

    def coefficients(self) -> CoefficientSet:
        try:
            c = builtin(self.coeff_name, dict(self.coeff_params), dim=self.dim)
        except (ValueError, CoefficientError) as exc:
            raise ConfigError("COEFF_INVALID", str(exc)) from exc
        report = c.default_report
        if not report.passed:
            try:
                report.raise_if_failed()
            except CoefficientError as exc:
                raise ConfigError("COEFF_INVALID", str(exc)) from exc
        return c

    def solver_config(self, c: CoefficientSet, eps: float | None = None) -> SolverConfig:
        s = dict(self.solver)
        s.pop("n", None)
        s.pop("dim", None)
        e = float(s.pop("eps", self.eps_grid[0] if self.eps_grid else 0.0)) if eps is None else eps
        s.setdefault("dt", 1e-4)
        s.setdefault("T", 0.1)
        s.setdefault("K", 32 if self.dim == 1 else 64)
        try:
            return SolverConfig.build(c, eps=e, grid=self.grid, **s)
        except StabilityError as exc:
            raise ConfigError("STABILITY_BOUND", str(exc)) from exc

    def with_seeds(self, seeds: Sequence[int]) -> "ExperimentConfig":
        return replace(self, seeds=tuple(seeds))

    def with_output(self, out: str) -> "ExperimentConfig":
        return replace(self, output_dir=str(out))


def parse_config(text: str, strict: bool = False) -> ExperimentConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("CONFIG_PARSE", f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("CONFIG_PARSE", f"line {lineno}: empty key")
        if key in raw:
            raise ConfigError("CONFIG_PARSE", f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    known, ignored = {}, []
    for key, value in raw.items():
        if key in _TOP_KEYS or key.startswith(_PREFIXES):
            if key.startswith("solver.") and key[7:] not in _SOLVER_KEYS:
                ignored.append(key)
                continue
            known[key] = value
        else:
            ignored.append(key)
    if ignored and strict:
        raise ConfigError("CONFIG_UNKNOWN_KEY", f"unknown keys: {', '.join(sorted(ignored))}")
    if "kind" not in known:
        raise ConfigError("CONFIG_PARSE", "missing required key 'kind'")

    try:
        solver = {}
        for key, value in known.items():
            if key.startswith("solver."):
                name = key[7:]
                kind = _SOLVER_KEYS[name]
                solver[name] = _bool(value) if kind == "bool" else kind(value)
        coeff = {k[6:]: float(v) for k, v in known.items()
                 if k.startswith("coeff.") and k != "coeff.name"}
        sub = {p: {k[len(p):]: v for k, v in known.items() if k.startswith(p)}
               for p in ("u0.", "uniqueness.", "monotonicity.", "sweep.")}
        return ExperimentConfig(
            kind=known["kind"],
            coeff_name=known.get("coeff.name", "trig"),
            coeff_params=coeff,
            solver=solver,
            eps_grid=tuple(_floats(known.get("eps_grid", ""))),
            seeds=tuple(_seeds(known.get("seeds", "0"))),
            M_threshold=float(known.get("M_threshold", 50.0)),
            output_dir=known.get("output_dir", "out"),
            eta=float(known.get("eta", 0.5)),
            monitor_factor=float(known.get("monitor_factor", 2.0)),
            u0=sub["u0."],
            uniqueness=sub["uniqueness."],
            monotonicity=sub["monotonicity."],
            sweep=sub["sweep."],
            raw=raw,
            ignored_keys=tuple(sorted(ignored)),
        )
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError("CONFIG_PARSE", str(exc)) from exc


def load_config(path: str | Path, strict: bool = False) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), strict=strict)


def make_initial(grid: TorusGrid, spec: Mapping[str, str]) -> ScalarField:
    """Initial data from ``u0.*`` keys: ``kind`` in {sin, cos, constant, random}."""
    kind = spec.get("kind", "sin")
    amp = float(spec.get("amplitude", 1.0))
    mode = int(spec.get("mode", 1))
    x = grid.coords()
    if kind == "sin":
        return ScalarField(grid, amp * np.sin(2 * np.pi * mode * x[0]))
    if kind == "cos":
        return ScalarField(grid, amp * np.cos(2 * np.pi * mode * x[0]))
    if kind == "constant":
        return ScalarField.constant(grid, float(spec.get("value", 0.0)))
    if kind == "random":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return ScalarField(grid, amp * random_band_fields(grid, 1, rng)[0])
    raise ConfigError("CONFIG_PARSE", f"unknown u0.kind {kind!r}")


def _seed_offset() -> int:
    try:
        return int(os.environ.get("SPDE_SEED_OFFSET", "0"))
    except ValueError as exc:
        raise ConfigError("CONFIG_PARSE", "SPDE_SEED_OFFSET must be an integer") from exc


# -- the eps sweep ------------------------------------------------------------

@dataclass(frozen=True)
class SweepReport:
    eps: tuple[float, ...]
    seeds: tuple[int, ...]
    pairs: tuple[tuple[float, float], ...]
    mean_D: np.ndarray
    stderr_D: np.ndarray
    mean_D_stopped: np.ndarray
    stderr_D_stopped: np.ndarray
    stop_fraction: np.ndarray
    exponent: float
    prefactor: float
    r_squared: float
    cauchy_to_min: np.ndarray
    cauchy_step_se: np.ndarray
    cauchy_monotone: bool
    stopped_le_unstopped: bool
    monitor: MonitorTable
    checksums: dict[int, int]
    semigroup_alpha: float | None = None

    def pair_rows(self):
        for i, (a, b) in enumerate(self.pairs):
            yield (a, b, a - b, self.mean_D[i], self.stderr_D[i], self.mean_D_stopped[i],
                   self.stderr_D_stopped[i], self.stop_fraction[i])

    PAIR_COLUMNS = ("eps_i", "eps_j", "delta_eps", "mean_D", "stderr_D", "mean_D_stopped",
                    "stderr_D_stopped", "p_tau_lt_T")


def _loglog_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    X, Y = np.log(x), np.log(y)
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    ss = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 0.0
    return float(slope), float(np.exp(intercept)), r2


def _run_seed_chunk(c, scfg, u0, eps, seeds, eta, M):
    paths = [generate(s, scfg.K, scfg.dt, scfg.steps) for s in seeds]
    members_paths = [p for p in paths for _ in eps]
    members_eps = [e for _ in paths for e in eps]
    trajs = integrate_batch(c, scfg, u0, members_paths, members_eps)
    return [summarize(t, eta, M) for t in trajs]


def sweep_eps(cfg: ExperimentConfig, threads: int = 1, chunk_members: int = 64,
              progress: Callable[[str], None] | None = None) -> SweepReport:
    """Coupled runs over ``eps_grid`` for every seed and the resulting Cauchy statistics.

    ``D(eps_i, eps_j) = |u^{eps_i}(T) - u^{eps_j}(T)|_H``.  The stopped
    version is ``D * 1{tau_M >= T}`` where ``tau_M`` is the first time the
    gradient sup of the ``eps_j`` run or the Hoelder norm of the ``eps_i``
    run reaches ``M``; truncation therefore never adds mass.
    """
    if len(cfg.eps_grid) < 3:
        raise ConfigError("CONFIG_EPS_ORDER", "sweep needs at least 3 eps values")
    c = cfg.coefficients()
    eps = tuple(cfg.eps_grid)
    scfg = cfg.solver_config(c, eps[0])
    grid = cfg.grid
    u0 = make_initial(grid, cfg.u0)
    offset = _seed_offset()
    seeds = tuple(s + offset for s in cfg.seeds)
    per_chunk = max(1, chunk_members // len(eps))
    chunks = [seeds[i:i + per_chunk] for i in range(0, len(seeds), per_chunk)]
    work = lambda ch: _run_seed_chunk(c, scfg, u0, eps, ch, cfg.eta, cfg.M_threshold)  # noqa: E731
    results: list[TrajectorySummary] = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, res in enumerate(pool.map(work, chunks)):
                results.extend(res)
                if progress:
                    progress(f"chunk {i + 1}/{len(chunks)}")
    else:
        for i, ch in enumerate(chunks):
            results.extend(work(ch))
            if progress:
                progress(f"chunk {i + 1}/{len(chunks)}")
    results.sort(key=lambda r: (r.seed, -r.eps))

    table: dict[tuple[int, float], TrajectorySummary] = {(r.seed, r.eps): r for r in results}
    checksums = {}
    for s in seeds:
        ks = {table[(s, e)].noise_checksum for e in eps}
        if len(ks) != 1:
            raise CouplingError(f"seed {s}: eps runs consumed different noise")
        checksums[s] = ks.pop()

    T = scfg.steps * scfg.dt
    pairs = [(eps[i], eps[j]) for i in range(len(eps)) for j in range(i + 1, len(eps))]
    D = np.empty((len(pairs), len(seeds)))
    Ds = np.empty_like(D)
    stopped = np.empty_like(D, dtype=bool)
    for p, (a, b) in enumerate(pairs):
        for si, s in enumerate(seeds):
            ra, rb = table[(s, a)], table[(s, b)]
            d = float(np.sqrt(grid.integrate((ra.final - rb.final) ** 2)))
            tau = min(rb.hit_grad, ra.hit_holder)
            D[p, si] = d
            stopped[p, si] = tau < T
            Ds[p, si] = 0.0 if tau < T else d
    nS = len(seeds)

    def se(a):
        return a.std(axis=1, ddof=1) / np.sqrt(nS) if nS > 1 else np.zeros(len(a))

    mean_D, mean_Ds = D.mean(axis=1), Ds.mean(axis=1)
    gaps = np.array([a - b for a, b in pairs])
    ok = mean_Ds > 0
    if ok.sum() >= 3:
        exponent, pref, r2 = _loglog_fit(gaps[ok], mean_Ds[ok])
    else:
        # distances vanish (e.g. constant diffusion): no rate to fit
        exponent = pref = r2 = float("nan")

    # distance of every eps to the smallest one, ordered from the largest eps down
    ref = eps[-1]
    to_min = np.array([[float(np.sqrt(grid.integrate((table[(s, e)].final - table[(s, ref)].final) ** 2)))
                        for s in seeds] for e in eps[:-1]])
    steps_se = np.array([float(np.std(to_min[k] - to_min[k + 1], ddof=1) / np.sqrt(nS)) if nS > 1 else 0.0
                         for k in range(len(to_min) - 1)])
    means_to_min = to_min.mean(axis=1)
    monotone = bool(all(means_to_min[k + 1] <= means_to_min[k] + steps_se[k]
                        for k in range(len(means_to_min) - 1)))
    monitor = uniform_monitor(results, factor=cfg.monitor_factor, eta=cfg.eta)
    alpha = None
    if cfg.sweep.get("compare_semigroup", "true").lower() in ("1", "true", "yes"):
        alpha = estimate_semigroup_constants(grid, cfg.eta).alpha_eta
    return SweepReport(
        eps=eps, seeds=seeds, pairs=tuple(pairs), mean_D=mean_D, stderr_D=se(D),
        mean_D_stopped=mean_Ds, stderr_D_stopped=se(Ds), stop_fraction=stopped.mean(axis=1),
        exponent=exponent, prefactor=pref, r_squared=r2, cauchy_to_min=means_to_min,
        cauchy_step_se=steps_se, cauchy_monotone=monotone,
        stopped_le_unstopped=bool(np.all(mean_Ds <= mean_D)), monitor=monitor,
        checksums=checksums, semigroup_alpha=alpha,
    )


# -- dispatcher ---------------------------------------------------------------

@dataclass
class RunResult:
    status: int
    assertions: dict[str, bool]
    reason: str | None
    out_dir: Path
    values: dict[str, object] = field(default_factory=dict)
    checksums: dict[int, int] = field(default_factory=dict)


def _write_plot(out: Path, name: str, x, y):
    d = out / "plotdata"
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"{float(a)!r} {float(b)!r}" for a, b in zip(x, y)]
    (d / f"{name}.dat").write_text("\n".join(lines) + "\n")


def _simulate(cfg, out, threads):
    c = cfg.coefficients()
    scfg = cfg.solver_config(c)
    u0 = make_initial(cfg.grid, cfg.u0)
    off = _seed_offset()
    seeds = [s + off for s in cfg.seeds]
    paths = [generate(s, scfg.K, scfg.dt, scfg.steps) for s in seeds]
    trajs = integrate_batch(c, scfg, u0, paths)
    asserts, values, sums = {}, {}, {}
    for s, t in zip(seeds, trajs):
        write_energy_csv(t, out / f"energy_seed{s}.csv")
        _write_plot(out, f"h_norm_sq_seed{s}", t.energy.times, t.energy.h_norm_sq)
        sums[s] = t.noise_checksum
    values["max_abs_ito_residual"] = max(float(np.abs(ito_energy_residual(t)).max()) for t in trajs)
    values["range_exceeded"] = any(t.range_exceeded for t in trajs)
    asserts["finite_energy"] = all(np.isfinite(t.energy.h_norm_sq).all() for t in trajs)
    heat = (c.name in ("frozen", "linear_probe") and c.sigma_zero and c.L_B == 0
            and cfg.u0.get("kind", "sin") in ("sin", "cos"))
    if heat:
        mode = int(cfg.u0.get("mode", 1))
        lam = (2 * np.pi * mode) ** 2 * c.delta
        t = trajs[0]
        fac = (1 + scfg.dt * scfg.theta_split * (2 * np.pi * mode) ** 2) ** -scfg.steps
        # explicit remainder is zero when theta equals the constant diffusion
        if scfg.theta_split == c.delta:
            err = float(np.abs(t.final.values - fac * t.initial.values).max())
            values["heat_implicit_error"] = err
            asserts["heat_oracle"] = err <= 1e-8
        values["heat_continuum_error"] = float(
            np.abs(t.final.values - np.exp(-lam * scfg.steps * scfg.dt) * t.initial.values).max())
    return asserts, values, sums


def _sweep(cfg, out, threads):
    rep = sweep_eps(cfg, threads=threads)
    write_csv(out / "sweep_pairs.csv", SweepReport.PAIR_COLUMNS, rep.pair_rows())
    write_csv(out / "monitor.csv", MonitorTable.header(), rep.monitor.rows())
    write_csv(out / "cauchy.csv", ("eps", "mean_D_to_min"),
              zip(rep.eps[:-1], rep.cauchy_to_min))
    _write_plot(out, "stopped_D_vs_delta_eps", [a - b for a, b in rep.pairs], rep.mean_D_stopped)
    values = {"exponent": rep.exponent, "r_squared": rep.r_squared,
              "semigroup_alpha": rep.semigroup_alpha,
              "monitor_ratios": dict(rep.monitor.ratios),
              "p_tau_lt_T": float(rep.stop_fraction.max())}
    asserts = {
        "exponent_positive": rep.exponent > 0,
        "r_squared_ge_0.9": rep.r_squared >= 0.9,
        "cauchy_monotone": rep.cauchy_monotone,
        "stopped_le_unstopped": rep.stopped_le_unstopped,
        "uniform_monitor": rep.monitor.passed,
    }
    return asserts, values, rep.checksums


def _uniqueness(cfg, out, threads):
    c = cfg.coefficients()
    scfg = cfg.solver_config(c)
    grid = cfg.grid
    u0 = make_initial(grid, cfg.u0)
    gap = float(cfg.uniqueness.get("gap", 1e-3))
    n_list = [int(x) for x in cfg.uniqueness.get("n_list", "2,4,8").split(",")]
    bump = np.cos(2 * np.pi * grid.coords()[0])
    bump = bump / grid.integrate(np.abs(bump)) * gap
    u0b = ScalarField(grid, u0.values + bump)
    off = _seed_offset()
    paths = [generate(s + off, scfg.K, scfg.dt, scfg.steps) for s in cfg.seeds]
    same = uniqueness_experiment(c, scfg, u0, u0, paths[:1], n_list)
    rep = uniqueness_experiment(c, scfg, u0, u0b, paths, n_list)
    rep.write(out / "uniqueness.csv")
    for n in n_list:
        _write_plot(out, f"mean_big_phi_n{n}", rep.times, rep.mean_big_phi[n])
    asserts = {"bit_identical": bool(same.bit_identical), "feasible_bound": rep.feasible}
    values = {"fitted_C": rep.fitted_C, "fitted_lambda": rep.fitted_lambda,
              "l1_gap_u0": rep.l1_gap_u0, "mean_l1_T": rep.mean_l1_T}
    return asserts, values, {p.seed: p.checksum for p in paths}


def _monotonicity(cfg, out, threads):
    c = cfg.coefficients()
    grid = cfg.grid
    samples = int(cfg.monotonicity.get("samples", 1000))
    eps_list = list(cfg.eps_grid) or [float(cfg.solver.get("eps", 0.01))]
    asserts, values = {}, {}
    rows = []
    for e in eps_list:
        rep = monotonicity_probe(c, HeatSemigroup(e, grid), samples, grid,
                                 seed=int(cfg.monotonicity.get("seed", 0)))
        rows.append((e, rep.sampled_pairs, rep.fitted_delta3, rep.fitted_C, rep.violations))
        asserts[f"delta3_positive_eps{e:g}"] = rep.fitted_delta3 > 0
        asserts[f"no_violations_eps{e:g}"] = rep.violations == 0
    write_csv(out / "monotonicity.csv",
              ("eps", "sampled_pairs", "fitted_delta3", "fitted_C", "violations"), rows)
    return asserts, values, {}


def _constants(cfg, out, threads):
    c = cfg.coefficients()
    grid = cfg.grid
    sc = estimate_semigroup_constants(grid, cfg.eta)
    write_csv(out / "semigroup_C_eps.csv", ("eps", "C_eps"), sorted(sc.C_eps.items()))
    write_csv(out / "semigroup_alpha.csv", ("delta_eps", "ratio"), zip(sc.differences, sc.ratios))
    ob = operator_bound_check(c, grid, list(cfg.eps_grid) or [0.0, 0.01])
    asserts = {"alpha_positive": sc.alpha_eta > 0, "alpha_reliable": sc.reliable,
               "operator_bound_finite": bool(np.isfinite(ob.C_fit))}
    values = {"alpha_eta": sc.alpha_eta, "r_squared": sc.r_squared, "C_fit": ob.C_fit,
              "band_fraction": ob.band_fraction}
    return asserts, values, {}


_DISPATCH = {"simulate": _simulate, "sweep_eps": _sweep, "uniqueness": _uniqueness,
             "monotonicity": _monotonicity, "constants": _constants}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run(cfg: ExperimentConfig, threads: int = 1) -> RunResult:
    """Dispatch on ``cfg.kind`` and write ``manifest.txt``, ``timing.txt`` and CSVs.

    Exit status 0 iff every assertion holds; otherwise 1 with reason
    ``ASSERTION_FAILED``, or 2 with the reason code of a config, coefficient,
    stability or coupling failure.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    reason = None
    asserts: dict[str, bool] = {}
    values: dict[str, object] = {}
    sums: dict[int, int] = {}
    try:
        asserts, values, sums = _DISPATCH[cfg.kind](cfg, out, threads)
    except ConfigError as exc:
        reason = exc.code
        values["error"] = str(exc)
    except CouplingError as exc:
        reason = "COUPLING_MISMATCH"
        values["error"] = str(exc)
    elapsed = time.perf_counter() - t0
    if reason is None and not all(asserts.values()):
        reason = "ASSERTION_FAILED"
    status = 0 if reason is None else (1 if reason == "ASSERTION_FAILED" else 2)

    lines = ["# run manifest", f"status = {status}", f"reason = {reason or 'OK'}",
             f"seed_offset = {_seed_offset()}"]
    lines += [f"config.{k} = {v}" for k, v in sorted(cfg.raw.items())]
    lines += [f"ignored_key = {k}" for k in cfg.ignored_keys]
    lines += [f"noise_checksum.seed{s} = {v:016x}" for s, v in sorted(sums.items())]
    lines += [f"assert.{k} = {'PASS' if v else 'FAIL'}" for k, v in sorted(asserts.items())]
    lines += [f"value.{k} = {_fmt(v)}" for k, v in sorted(values.items())]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    (out / "timing.txt").write_text(f"wall_clock_seconds = {elapsed:.3f}\n")
    return RunResult(status, asserts, reason, out, values, sums)
