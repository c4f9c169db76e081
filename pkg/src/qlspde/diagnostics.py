"""Checks of energy balances, monotonicity, weak form and uniform bounds on computed runs.

Everything here is a pure function of trajectories or of freshly sampled
fields.  Constants are found by feasibility (the smallest constant making a
bound hold on every sample), not by regression.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .coefficients import CoefficientSet
from .noise import fourier_basis, noise_modes
from .semigroup import HeatSemigroup
from .solver import Trajectory, _Kernel
from .torus import TorusGrid, holder_seminorm, spatial_holder_norm

__all__ = [
    "CouplingError",
    "MonotonicityError",
    "MonotonicityReport",
    "WeakResidualReport",
    "OperatorBoundReport",
    "MonitorTable",
    "TrajectorySummary",
    "ito_energy_residual",
    "monotonicity_probe",
    "weak_residual",
    "uniform_monitor",
    "summarize",
    "operator_bound_check",
    "energy_inequality_constant",
    "hitting_time",
    "random_band_fields",
    "write_csv",
    "MONITOR_COLUMNS",
]

MONITOR_COLUMNS = ("sup_h_sq", "h1_integral", "sup_l4_pow4", "sup_grad_sq", "holder")


class CouplingError(ValueError):
    """Trajectories that should share a noise path do not."""


class MonotonicityError(RuntimeError):
    """No admissible ``(C, delta3)`` with ``delta3 > 0`` fits the sampled pairs."""


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    lines = [",".join(columns)]
    lines.extend(",".join(fmt(v) for v in r) for r in rows)
    Path(path).write_text("\n".join(lines) + "\n")


# -- Ito energy balance -------------------------------------------------------

def ito_energy_residual(traj: Trajectory, c: CoefficientSet | None = None) -> np.ndarray:
    """``|u_m|^2 - |u_0|^2 - sum_{j<m} (2 dt <u_j, F_j> + 2 <u_j, xi_j> + dt sum_k |P sigma_k(u_j)|^2)``.

    Recomputed from the per-step logs of the run; ``c`` is accepted for
    interface symmetry and unused.
    """
    e = traj.energy
    n = len(e.h_norm_sq) - 1
    for name in ("drift_pairing", "martingale", "trace_increments"):
        log = getattr(e, name, None)
        if log is None or len(log) != n:
            raise ValueError(f"trajectory lacks the per-step {name} log")
    incr = 2.0 * e.dt * e.drift_pairing + e.martingale + e.trace_increments
    return e.h_norm_sq - e.h_norm_sq[0] - np.concatenate([[0.0], np.cumsum(incr)])


def energy_inequality_constant(traj: Trajectory, delta: float) -> float:
    """Smallest ``C >= 0`` with ``|u_{m+1}|^2 + 2 dt delta |grad u_{m+1}|^2 <= |u_m|^2 + C dt (1 + |u_m|^2)``."""
    e = traj.energy
    grad_sq = e.h1_norm_sq - e.h_norm_sq
    lhs = e.h_norm_sq[1:] + 2 * e.dt * delta * grad_sq[1:] - e.h_norm_sq[:-1]
    need = lhs / (e.dt * (1 + e.h_norm_sq[:-1]))
    return float(max(0.0, need.max()))


# -- random band-limited fields -----------------------------------------------

def random_band_fields(grid: TorusGrid, count: int, rng: np.random.Generator,
                       kmax: int | None = None, decay: float = 1.5) -> np.ndarray:
    """``count`` real trigonometric polynomials with modes ``|k_i| <= kmax``, unit ``H`` norm."""
    kmax = max(1, grid.n // 8) if kmax is None else kmax
    shape = (count,) + grid.shape
    rshape = (count,) + grid.laplacian_symbol.shape
    ks = grid.rfft_wavenumbers
    keep = np.ones(grid.laplacian_symbol.shape, bool)
    for k in ks:
        keep &= np.abs(k) <= kmax
    kabs = np.sqrt(sum(k.astype(float) ** 2 for k in ks))
    amp = keep / (1.0 + kabs) ** decay
    coef = (rng.normal(size=rshape) + 1j * rng.normal(size=rshape)) * amp
    f = grid.irfft(coef * grid.size)
    f = f.reshape(shape)
    nrm = np.sqrt(grid.integrate(f**2)).reshape((count,) + (1,) * grid.dim)
    return f / nrm


# -- monotonicity probe -------------------------------------------------------

@dataclass(frozen=True)
class MonotonicityReport:
    sampled_pairs: int
    fitted_delta3: float
    fitted_C: float
    violations: int
    eps: float
    min_C: float
    pairing: np.ndarray = field(repr=False)
    features: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.fitted_delta3 > 0 and self.violations == 0

    def rows(self):
        f = self.features
        return [(i, self.pairing[i], f[i, 0], f[i, 1], f[i, 2]) for i in range(len(self.pairing))]


def _dual_pairing_features(c, grid, eps, U, V, dealias):
    ker = _Kernel(c, grid, [eps] * len(U), dealias)
    FU = ker.drift(U, grid.rfft(U))[1]
    FV = ker.drift(V, grid.rfft(V))[1]
    W = U - V
    pairing = grid.integrate((FU - FV) * W)

    def h1_sq(X):
        Xh = grid.rfft(X)
        return grid.spectral_energy(Xh * np.sqrt(1.0 + grid.laplacian_symbol))

    w_h = grid.integrate(W**2)
    feats = np.column_stack([w_h, w_h * h1_sq(V), h1_sq(W)])
    return pairing, feats


def monotonicity_probe(
    c: CoefficientSet,
    P: HeatSemigroup,
    samples: int = 1000,
    grid: TorusGrid | None = None,
    amplitudes: Sequence[float] = (0.1, 0.5, 1.0, 2.0, 4.0),
    gaps: Sequence[float] = (1e-2, 0.1, 1.0),
    seed: int = 0,
    slack: float = 0.1,
    delta_grid: int = 400,
    dealias: bool = True,
) -> MonotonicityReport:
    """Feasibility fit of ``<F(u) - F(v), w> <= C (1 + |w|^2 + |w|^2 |v|_{H1}^2) - delta3 |w|_{H1}^2``.

    ``w = u - v``.  For each ``delta3`` the least admissible ``C`` is
    ``max_i (pairing_i + delta3 f4_i) / (1 + f2_i + f3_i)`` (clamped at 0).
    The reported ``delta3`` is the largest value on a uniform grid in
    ``(0, delta]`` whose ``C`` stays within ``1 + slack`` of the least ``C``
    at ``delta3 -> 0``.
    """
    if samples < 500:
        raise ValueError("samples must be >= 500")
    grid = P.grid if grid is None else grid
    if grid != P.grid:
        raise ValueError("grid differs from the semigroup grid")
    rng = np.random.default_rng(seed)
    base = random_band_fields(grid, samples, rng)
    pert = random_band_fields(grid, samples, rng)
    amp = np.asarray(amplitudes, float)[rng.integers(0, len(amplitudes), samples)]
    gap = np.asarray(gaps, float)[rng.integers(0, len(gaps), samples)]
    bshape = (samples,) + (1,) * grid.dim
    V = base * amp.reshape(bshape)
    U = V + pert * (amp * gap).reshape(bshape)
    # the diagonal u = v is always part of the sample
    U[0] = V[0]
    pairing, feats = _dual_pairing_features(c, grid, P.eps, U, V, dealias)
    denom = 1.0 + feats[:, 0] + feats[:, 1]

    def least_C(d3):
        return max(0.0, float(np.max((pairing + d3 * feats[:, 2]) / denom)))

    C0 = least_C(0.0)
    budget = (1 + slack) * C0 + 1e-12
    best = None
    for d3 in np.linspace(c.delta, 0.0, delta_grid, endpoint=False):
        if least_C(d3) <= budget:
            best = float(d3)
            break
    if best is None:
        i = int(np.argmax((pairing + c.delta / delta_grid * feats[:, 2]) / denom))
        raise MonotonicityError(
            f"no delta3 > 0 within slack {slack} of C={C0:.6g}; tightest pair #{i}: "
            f"pairing={pairing[i]:.6g}, features={feats[i].tolist()}")
    C = least_C(best)
    bound = C * denom - best * feats[:, 2]
    tol = 1e-10 * (1.0 + np.abs(pairing) + feats.sum(axis=1))
    violations = int(np.sum(pairing > bound + tol))
    return MonotonicityReport(samples, best, C, violations, P.eps, C0, pairing, feats)


# -- operator bound -----------------------------------------------------------

@dataclass(frozen=True)
class OperatorBoundReport:
    samples: int
    C_fit: float
    ratios: np.ndarray = field(repr=False)
    band_fraction: float = 1.0


def operator_bound_check(c: CoefficientSet, grid: TorusGrid, eps_values: Sequence[float],
                         samples: int = 200, amplitudes: Sequence[float] = (0.1, 1.0, 4.0),
                         seed: int = 0, dealias: bool = True) -> OperatorBoundReport:
    """Fit ``C`` in ``|F_eps(u)|_{H^-1} <= C (1 + |u|_{H1})`` over random band-limited ``u``.

    The dual norm is the discrete ``sup`` over band-limited unit-``H1`` fields,
    ``sum_k |F_k|^2 / (1 + |2 pi k|^2)``.  ``band_fraction`` is the share of
    wavevectors retained by the dealiasing band (the dual space truncation).
    """
    rng = np.random.default_rng(seed)
    ratios = []
    for eps in eps_values:
        U = random_band_fields(grid, samples, rng)
        amp = np.asarray(amplitudes, float)[rng.integers(0, len(amplitudes), samples)]
        U = U * amp.reshape((samples,) + (1,) * grid.dim)
        ker = _Kernel(c, grid, [eps] * samples, dealias)
        Uh = grid.rfft(U)
        Fh = ker.drift(U, Uh)[0]
        dual = np.sqrt(grid.spectral_energy(Fh / np.sqrt(1.0 + grid.laplacian_symbol)))
        h1 = np.sqrt(grid.spectral_energy(Uh * np.sqrt(1.0 + grid.laplacian_symbol)))
        ratios.append(dual / (1.0 + h1))
    ratios = np.concatenate(ratios)
    w = np.broadcast_to(grid.rfft_weights, grid.laplacian_symbol.shape)
    frac = float((grid.dealias_mask * w).sum() / w.sum()) if dealias else 1.0
    return OperatorBoundReport(len(ratios), float(ratios.max()), ratios, frac)


# -- weak form ----------------------------------------------------------------

@dataclass(frozen=True)
class WeakResidualReport:
    test_functions: int
    max_residual: float
    residuals: np.ndarray
    dt: float
    h: float


def weak_residual(traj: Trajectory, c: CoefficientSet, tests: int = 8) -> WeakResidualReport:
    """Weak-form defect against the first ``tests`` real Fourier functions.

    ``<u_T - u_0, phi> + sum_j dt_j <A_eps(u_j) grad u_j - B(u_j), grad phi> - sum_m <xi_m, phi>``
    with left-point time quadrature over the stored snapshots and noise
    rebuilt from the run's own path.
    """
    if tests < 5:
        raise ValueError("tests must be >= 5")
    cfg = traj.config
    g = cfg.grid
    stride = cfg.snapshot_stride
    if stride > 1:
        warnings.warn("snapshot_stride > 1: weak residual uses a coarser time quadrature",
                      stacklevel=2)
    phi = fourier_basis(g, tests)
    phi_h = g.rfft(phi)
    grad_phi = np.stack([g.irfft(s * phi_h) for s in g.derivative_symbols])  # (d, tests, *grid)
    U = traj.fields
    P = HeatSemigroup(cfg.eps, g)
    mask = g.dealias_mask if cfg.dealias else 1.0

    grad_u = np.stack([g.irfft(s * g.rfft(U)) for s in g.derivative_symbols])  # (d, S, *grid)
    A = P.smooth(c.A(U))
    if cfg.dealias:
        A = g.irfft(g.rfft(A) * mask)
    flux = np.einsum("ij...,j...->i...", A, grad_u) - c.B(U)  # (d, S, *grid)
    # <flux_j, grad phi_l> for every snapshot j and test l
    pair = np.einsum("dsx,dlx->sl", flux.reshape(g.dim, len(U), -1),
                     grad_phi.reshape(g.dim, tests, -1)) * g.cell_volume
    steps = traj.steps_stored
    dts = np.diff(traj.times)
    flux_term = (dts[:, None] * pair[:-1]).sum(axis=0)

    noise_term = np.zeros(tests)
    if not c.sigma_zero and traj.path is not None:
        inc = traj.path.increments[:, :cfg.K]
        G = noise_modes(c, U[:-1], cfg.K, g, cfg.basis_product)  # (K, S-1, *grid)
        dW = np.stack([inc[steps[j]:steps[j + 1]].sum(axis=0) for j in range(len(steps) - 1)])
        xi = np.einsum("sk,ks...->s...", dW, G)
        noise_term = (xi.reshape(len(xi), -1) @ phi.reshape(tests, -1).T).sum(axis=0) * g.cell_volume

    change = ((U[-1] - U[0]).reshape(-1) @ phi.reshape(tests, -1).T) * g.cell_volume
    res = change + flux_term - noise_term
    return WeakResidualReport(tests, float(np.max(np.abs(res))), res, cfg.dt, g.h)


# -- uniform-in-eps monitors --------------------------------------------------

@dataclass(frozen=True)
class TrajectorySummary:
    eps: float
    seed: int
    noise_checksum: int
    sup_h_sq: float
    h1_integral: float
    sup_l4_pow4: float
    sup_grad_sq: float
    holder: float
    final: np.ndarray = field(repr=False)
    hit_grad: float = float("inf")
    hit_holder: float = float("inf")

    def column(self, name: str) -> float:
        return getattr(self, name)


def hitting_time(traj: Trajectory, M: float, monitor: str, eta: float = 0.5) -> float:
    """First time the monitor reaches ``M``; ``inf`` if it never does.

    ``grad_sup`` is scanned at every step, ``holder`` (sup norm plus spatial
    ``eta``-seminorm) at the stored snapshots.
    """
    if monitor == "grad_sup":
        hit = np.nonzero(traj.energy.grad_sup >= M)[0]
        return float(traj.energy.times[hit[0]]) if hit.size else float("inf")
    if monitor == "holder":
        vals = np.atleast_1d(spatial_holder_norm(traj.fields, eta, grid=traj.grid))
        hit = np.nonzero(vals >= M)[0]
        return float(traj.times[hit[0]]) if hit.size else float("inf")
    raise ValueError(f"unknown monitor {monitor!r}")


def summarize(traj: Trajectory, eta: float = 0.5, M: float | None = None) -> TrajectorySummary:
    e = traj.energy
    hg = hh = float("inf")
    if M is not None:
        hg = hitting_time(traj, M, "grad_sup", eta)
        hh = hitting_time(traj, M, "holder", eta)
    return TrajectorySummary(
        eps=traj.config.eps,
        seed=traj.path.seed if traj.path is not None else -1,
        noise_checksum=traj.noise_checksum,
        sup_h_sq=float(e.h_norm_sq.max()),
        h1_integral=float(e.h1_integral[-1]),
        sup_l4_pow4=float(e.l4_pow4.max()),
        sup_grad_sq=float(e.grad_sup.max() ** 2),
        holder=holder_seminorm(traj.pairs(), eta),
        final=np.array(traj.fields[-1]),
        hit_grad=hg,
        hit_holder=hh,
    )


@dataclass(frozen=True)
class MonitorTable:
    eps: tuple[float, ...]
    means: dict[str, tuple[float, ...]]
    stderr: dict[str, tuple[float, ...]]
    ratios: dict[str, float]
    factor: float
    samples: int

    @property
    def passed(self) -> bool:
        return all(r <= self.factor for r in self.ratios.values())

    def rows(self):
        for i, e in enumerate(self.eps):
            yield (e,) + tuple(v for c in MONITOR_COLUMNS for v in (self.means[c][i], self.stderr[c][i]))

    @staticmethod
    def header():
        return ("eps",) + tuple(f"{c}_{s}" for c in MONITOR_COLUMNS for s in ("mean", "stderr"))


def uniform_monitor(items: Sequence[Trajectory | TrajectorySummary], factor: float = 2.0,
                    eta: float = 0.5) -> MonitorTable:
    """Monte Carlo means of the monitored norms per ``eps`` and their max/min ratio.

    All ``eps`` groups must have been driven by the same set of noise paths.
    """
    rows = [summarize(t, eta) if isinstance(t, Trajectory) else t for t in items]
    groups: dict[float, list[TrajectorySummary]] = {}
    for r in rows:
        groups.setdefault(r.eps, []).append(r)
    eps = tuple(sorted(groups, reverse=True))
    keys = None
    for e in eps:
        g = sorted(groups[e], key=lambda r: (r.seed, r.noise_checksum))
        groups[e] = g
        ks = [r.noise_checksum for r in g]
        if keys is None:
            keys = ks
        elif ks != keys:
            raise CouplingError(f"eps={e} was driven by different noise paths than eps={eps[0]}")
    means, errs, ratios = {}, {}, {}
    for col in MONITOR_COLUMNS:
        m, s = [], []
        for e in eps:
            v = np.array([r.column(col) for r in groups[e]])
            m.append(float(v.mean()))
            s.append(float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0)
        means[col] = tuple(m)
        errs[col] = tuple(s)
        lo, hi = min(m), max(m)
        ratios[col] = 1.0 if hi == lo else (hi / lo if lo > 0 else float("inf"))
    return MonitorTable(eps, means, errs, ratios, factor, len(keys or []))
