"""Semi-implicit spectral Euler-Maruyama integrator for the mollified equation.

One step, written in Fourier space with ``lam = |2 pi k|^2``::

    (1 + dt*theta*lam) u_hat[m+1] = u_hat[m] + dt*(F_hat(u[m]) + theta*lam*u_hat[m]) + xi_hat[m]

where ``F(u) = div(A_eps(u) grad u - B(u))`` and ``xi = sum_k G_k(u) dbeta_k``
are evaluated explicitly at ``u[m]``.  The implicit part is the constant
diffusion ``theta * Laplacian`` with ``theta <= delta``, so the explicit
remainder ``A_eps - theta I`` is nonnegative.

The engine integrates a batch of members at once (a leading axis on every
array).  Members share grid, time step and coefficients and may differ in
``eps``, initial data and noise path.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .coefficients import CoefficientSet
from .noise import NoisePath, noise_modes
from .semigroup import HeatSemigroup, check_ellipticity
from .torus import ScalarField, TorusGrid, write_field

__all__ = [
    "SolverConfig",
    "StabilityError",
    "IntegrationError",
    "EnergyReport",
    "Trajectory",
    "apply_drift",
    "step",
    "integrate",
    "integrate_batch",
    "stability_limit",
    "project_to_band",
    "export_trajectory",
    "write_energy_csv",
    "ENERGY_COLUMNS",
]

STABILITY_CONSTANT = 0.25
ENERGY_COLUMNS = ("time", "h_norm_sq", "h1_running", "grad_sup", "ito_residual")


class StabilityError(ValueError):
    """Time step exceeds the explicit-remainder bound."""


class IntegrationError(RuntimeError):
    def __init__(self, message: str, step: int, member: int = 0):
        super().__init__(f"{message} (step {step}, member {member})")
        self.step = step
        self.member = member


def stability_limit(grid: TorusGrid, C_A: float, theta: float) -> float:
    """``0.25 h^2 / (C_A - theta)``; infinite when nothing is treated explicitly."""
    excess = C_A - theta
    if excess <= 0:
        return float("inf")
    return STABILITY_CONSTANT * grid.h**2 / excess


@dataclass(frozen=True)
class SolverConfig:
    eps: float
    dt: float
    T: float
    grid: TorusGrid
    K: int = 32
    dealias: bool = True
    theta_split: float | None = None
    clip_R: float = 50.0
    snapshot_stride: int = 1
    basis_product: bool = False
    check_ellipticity: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps >= 0):
            raise ValueError(f"eps must be finite and >= 0, got {self.eps}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if self.theta_split is not None and not self.theta_split > 0:
            raise ValueError("theta_split must be positive")

    @property
    def steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    @classmethod
    def build(cls, coeffs: CoefficientSet, **kwargs) -> "SolverConfig":
        """Construct, fill ``theta_split`` from ``delta`` and enforce the stability bound."""
        return cls(**kwargs).resolve(coeffs)

    def resolve(self, coeffs: CoefficientSet) -> "SolverConfig":
        theta = coeffs.delta if self.theta_split is None else float(self.theta_split)
        if theta > coeffs.delta * (1 + 1e-12):
            raise ValueError(f"theta_split={theta} exceeds delta={coeffs.delta}")
        limit = stability_limit(self.grid, coeffs.C_A, theta)
        if self.dt > limit * (1 + 1e-12):
            raise StabilityError(
                f"dt={self.dt:g} exceeds stability bound {limit:g} "
                f"(0.25 h^2 / (C_A - theta) with h={self.grid.h:g}, C_A={coeffs.C_A:g}, theta={theta:g})")
        return replace(self, theta_split=theta)

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class EnergyReport:
    """Per-time series (length ``steps + 1``) and per-step logs (length ``steps``)."""

    times: np.ndarray
    h_norm_sq: np.ndarray
    h1_norm_sq: np.ndarray
    h1_integral: np.ndarray
    grad_sup: np.ndarray
    l4_pow4: np.ndarray
    trace_term: np.ndarray
    ito_residual: np.ndarray
    drift_pairing: np.ndarray
    martingale: np.ndarray
    trace_increments: np.ndarray
    dt: float

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if isinstance(v, np.ndarray):
                if not np.all(np.isfinite(v)):
                    raise ValueError(f"energy series {name} has non-finite entries")
                v = np.array(v, float, copy=True)
                v.setflags(write=False)
                object.__setattr__(self, name, v)


@dataclass(frozen=True, eq=False)
class Trajectory:
    config: SolverConfig
    times: np.ndarray
    fields: np.ndarray = field(repr=False)
    steps_stored: np.ndarray = field(repr=False)
    energy: EnergyReport = field(repr=False)
    noise_checksum: int
    path: NoisePath | None = field(default=None, repr=False)
    range_exceeded: bool = False
    max_abs: float = 0.0

    @property
    def grid(self) -> TorusGrid:
        return self.config.grid

    @property
    def snapshots(self) -> list[ScalarField]:
        return [ScalarField(self.grid, f) for f in self.fields]

    def snapshot(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.fields[i])

    @property
    def final(self) -> ScalarField:
        return self.snapshot(-1)

    @property
    def initial(self) -> ScalarField:
        return self.snapshot(0)

    def pairs(self) -> list[tuple[float, ScalarField]]:
        return list(zip(self.times.tolist(), self.snapshots))

    def checksum(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        h.update(np.ascontiguousarray(self.times).tobytes())
        h.update(np.ascontiguousarray(self.fields).tobytes())
        for name in ("h_norm_sq", "h1_integral", "grad_sup", "ito_residual"):
            h.update(np.ascontiguousarray(getattr(self.energy, name)).tobytes())
        h.update(int(self.noise_checksum).to_bytes(8, "little"))
        return int.from_bytes(h.digest(), "little")


class _Kernel:
    """Precomputed spectral arrays for a batch of members on one grid."""

    def __init__(self, c: CoefficientSet, grid: TorusGrid, eps: Sequence[float],
                 dealias: bool, theta: float = 0.0, dt: float = 0.0, K: int = 1,
                 basis_product: bool = False, check_ellipticity: bool = False):
        if c.dim != grid.dim:
            raise ValueError(f"coefficient set is {c.dim}-dimensional, grid is {grid.dim}-dimensional")
        self.c = c
        self.grid = grid
        self.B = len(eps)
        lam = grid.laplacian_symbol
        self.lam = lam
        self.dealias = dealias
        self.mask = grid.dealias_mask if dealias else np.ones_like(lam)
        eps = np.asarray(eps, float).reshape((-1,) + (1,) * grid.dim)
        self.mult = np.exp(-eps * lam)
        self.smooth = bool(np.any(eps > 0))
        self.sym = grid.derivative_symbols
        self.theta = theta
        self.dt = dt
        self.implicit = 1.0 / (1.0 + dt * theta * lam)
        # Parseval weights restricted to the retained band (mask is 0/1)
        self.trace_weights = grid.rfft_weights * self.mask / grid.size**2
        self.K = K
        self.basis_product = basis_product
        self.check_ellipticity = check_ellipticity

    def project(self, U: np.ndarray) -> np.ndarray:
        return self.grid.irfft(self.grid.rfft(U) * self.mask)

    def drift(self, U: np.ndarray, Uh: np.ndarray):
        """Return ``(F_hat, F, grad)`` for the batch state ``U``."""
        g = self.grid
        d = g.dim
        grad = np.stack([g.irfft(s * Uh) for s in self.sym])
        A = self.c.A(U)
        if self.smooth or self.dealias or self.check_ellipticity:
            Ah = g.rfft(A) * self.mult
            if self.check_ellipticity:
                check_ellipticity(np.moveaxis(g.irfft(Ah), (0, 1), (-2, -1)),
                                  self.c.delta, self.c.C_A)
            A = g.irfft(Ah * self.mask)
        flux = np.einsum("ij...,j...->i...", A, grad) - self.c.B(U)
        Fh = sum(self.sym[i] * g.rfft(flux[i]) for i in range(d)) * self.mask
        return Fh, g.irfft(Fh), grad

    def noise(self, U: np.ndarray, inc: np.ndarray):
        """Return ``(xi_hat, xi, trace)``; ``inc`` has shape ``(B, K)``."""
        g = self.grid
        if self.c.sigma_zero:
            zh = np.zeros((U.shape[0],) + self.lam.shape, complex)
            return zh, np.zeros_like(U), np.zeros(U.shape[0])
        G = noise_modes(self.c, U, self.K, g, self.basis_product)
        Gh = g.rfft(G)
        power = (Gh.real**2 + Gh.imag**2).sum(axis=0) * self.trace_weights
        trace = self.dt * power.sum(axis=g.axes)
        xih = np.einsum("bk,kb...->b...", inc, Gh) * self.mask
        return xih, g.irfft(xih), trace


def _as_batch(U: ScalarField) -> np.ndarray:
    return np.asarray(U.values, float)[None]


def project_to_band(u: ScalarField, warn: bool = True) -> ScalarField:
    """Remove modes outside the 2/3-rule box; warn when that changes ``u``."""
    g = u.grid
    out = g.irfft(g.rfft(u.values) * g.dealias_mask)
    change = float(np.max(np.abs(out - u.values)))
    if change <= 1e-12 * max(1.0, float(np.max(np.abs(u.values)))):
        # already band-limited: keep the exact input so snapshot 0 is u0 bit for bit
        return u
    if warn:
        warnings.warn(f"initial data projected onto the dealiased band (max change {change:.3e})",
                      stacklevel=3)
    return ScalarField(g, out)


def apply_drift(c: CoefficientSet, P: HeatSemigroup, u: ScalarField, dealias: bool = True,
                clip_R: float | None = None) -> ScalarField:
    """``F_eps(u) = div(A_eps(u) grad u - B(u))`` by spectral differentiation."""
    if P.grid != u.grid:
        raise ValueError("semigroup and field live on different grids")
    if clip_R is not None and float(np.max(np.abs(u.values))) > clip_R:
        warnings.warn(f"|u| exceeds clip_R={clip_R}; outside the validated coefficient range",
                      stacklevel=2)
    ker = _Kernel(c, u.grid, [P.eps], dealias)
    U = _as_batch(u)
    _, F, _ = ker.drift(U, u.grid.rfft(U))
    return ScalarField(u.grid, F[0])


def step(c: CoefficientSet, P: HeatSemigroup, u: ScalarField, path: NoisePath, m: int,
         cfg: SolverConfig) -> ScalarField:
    """One IMEX Euler-Maruyama step from ``u`` using increment row ``m`` of ``path``."""
    if not 0 <= m < path.steps:
        raise IndexError(f"step {m} outside path of {path.steps} steps")
    cfg = cfg.resolve(c)
    ker = _Kernel(c, cfg.grid, [P.eps], cfg.dealias, cfg.theta_split, cfg.dt, cfg.K,
                  cfg.basis_product, cfg.check_ellipticity)
    U = _as_batch(u)
    Uh = cfg.grid.rfft(U)
    Fh, _, _ = ker.drift(U, Uh)
    xih, _, _ = ker.noise(U, path.increments[m:m + 1, :cfg.K])
    new = cfg.grid.irfft((Uh + cfg.dt * (Fh + cfg.theta_split * ker.lam * Uh) + xih) * ker.implicit)
    if not np.all(np.isfinite(new)):
        raise IntegrationError("non-finite state", m + 1)
    return ScalarField(cfg.grid, new[0])


def integrate(c: CoefficientSet, cfg: SolverConfig, u0: ScalarField, path: NoisePath) -> Trajectory:
    return integrate_batch(c, cfg, [u0], [path])[0]


def integrate_batch(
    c: CoefficientSet,
    cfg: SolverConfig,
    u0: ScalarField | Sequence[ScalarField],
    paths: Sequence[NoisePath],
    eps_values: Sequence[float] | None = None,
) -> list[Trajectory]:
    """Integrate several members in lockstep; member ``b`` uses ``paths[b]`` and ``eps_values[b]``.

    Returns one :class:`Trajectory` per member, each identical to what
    :func:`integrate` produces for that member alone.
    """
    cfg = cfg.resolve(c)
    c.default_report.raise_if_failed()
    grid = cfg.grid
    B = len(paths)
    if B == 0:
        return []
    eps_values = [cfg.eps] * B if eps_values is None else [float(e) for e in eps_values]
    if len(eps_values) != B:
        raise ValueError("eps_values and paths differ in length")
    u0s = [u0] * B if isinstance(u0, ScalarField) else list(u0)
    if len(u0s) != B:
        raise ValueError("initial data and paths differ in length")
    N = cfg.steps
    for p in paths:
        if abs(p.dt - cfg.dt) > 1e-12 * cfg.dt:
            raise ValueError(f"noise path dt={p.dt} differs from solver dt={cfg.dt}")
        if p.steps < N:
            raise ValueError(f"noise path has {p.steps} steps, run needs {N}")
        if p.K < cfg.K:
            raise ValueError(f"noise path has {p.K} modes, run needs {cfg.K}")
    for u in u0s:
        if u.grid != grid:
            raise ValueError("initial data not on the solver grid")

    ker = _Kernel(c, grid, eps_values, cfg.dealias, cfg.theta_split, cfg.dt, cfg.K,
                  cfg.basis_product, cfg.check_ellipticity)
    starts = [project_to_band(u) if cfg.dealias else u for u in u0s]
    U = np.stack([u.values for u in starts])

    # unique paths, gathered per step
    uniq: dict[int, int] = {}
    plist: list[NoisePath] = []
    pidx = np.empty(B, int)
    for b, p in enumerate(paths):
        if id(p) not in uniq:
            uniq[id(p)] = len(plist)
            plist.append(p)
        pidx[b] = uniq[id(p)]

    stride = cfg.snapshot_stride
    stored = sorted(set(range(0, N + 1, stride)) | {N})
    store_at = {m: i for i, m in enumerate(stored)}
    fields = np.empty((B, len(stored)) + grid.shape)
    h_sq = np.empty((B, N + 1))
    h1_sq = np.empty((B, N + 1))
    gsup = np.empty((B, N + 1))
    l4 = np.empty((B, N + 1))
    drift = np.empty((B, N))
    mart = np.empty((B, N))
    trace = np.empty((B, N))
    max_abs = np.zeros(B)

    dt, theta, lam = cfg.dt, cfg.theta_split, ker.lam

    def record(m, U, grad):
        h_sq[:, m] = grid.integrate(U**2)
        gs = (grad**2).sum(axis=0)
        h1_sq[:, m] = h_sq[:, m] + grid.integrate(gs)
        gsup[:, m] = np.sqrt(gs.reshape(B, -1).max(axis=1))
        l4[:, m] = grid.integrate(U**4)
        np.maximum(max_abs, np.abs(U).reshape(B, -1).max(axis=1), out=max_abs)
        if m in store_at:
            fields[:, store_at[m]] = U

    for m in range(N):
        Uh = grid.rfft(U)
        Fh, F, grad = ker.drift(U, Uh)
        record(m, U, grad)
        inc = np.stack([p.increments[m, :cfg.K] for p in plist])[pidx]
        xih, xi, tr = ker.noise(U, inc)
        drift[:, m] = grid.integrate(U * F)
        mart[:, m] = 2.0 * grid.integrate(U * xi)
        trace[:, m] = tr
        U = grid.irfft((Uh + dt * (Fh + theta * lam * Uh) + xih) * ker.implicit)
        if not np.all(np.isfinite(U)):
            bad = int(np.argmax(~np.isfinite(U).reshape(B, -1).all(axis=1)))
            raise IntegrationError("non-finite state; time step likely beyond stability", m + 1, bad)
    grad = np.stack([grid.irfft(s * grid.rfft(U)) for s in ker.sym])
    record(N, U, grad)

    times_all = np.arange(N + 1) * dt
    out = []
    for b in range(B):
        h1_int = np.concatenate([[0.0], np.cumsum(dt * h1_sq[b, :N])])
        tr_cum = np.concatenate([[0.0], np.cumsum(trace[b])])
        budget = np.concatenate([[0.0], np.cumsum(2 * dt * drift[b] + mart[b] + trace[b])])
        energy = EnergyReport(
            times=times_all, h_norm_sq=h_sq[b], h1_norm_sq=h1_sq[b], h1_integral=h1_int,
            grad_sup=gsup[b], l4_pow4=l4[b], trace_term=tr_cum,
            ito_residual=h_sq[b] - h_sq[b, 0] - budget,
            drift_pairing=drift[b], martingale=mart[b], trace_increments=trace[b], dt=dt,
        )
        f = fields[b]
        f.setflags(write=False)
        out.append(Trajectory(
            config=cfg.with_(eps=eps_values[b]),
            times=np.asarray(stored, float) * dt,
            fields=f,
            steps_stored=np.asarray(stored),
            energy=energy,
            noise_checksum=paths[b].checksum,
            path=paths[b],
            range_exceeded=bool(max_abs[b] > cfg.clip_R),
            max_abs=float(max_abs[b]),
        ))
    return out


def write_energy_csv(traj: Trajectory, path: str | Path) -> None:
    e = traj.energy
    rows = np.column_stack([e.times, e.h_norm_sq, e.h1_integral, e.grad_sup, e.ito_residual])
    lines = [",".join(ENERGY_COLUMNS)]
    lines.extend(",".join(repr(float(v)) for v in r) for r in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def export_trajectory(traj: Trajectory, out_dir: str | Path, name: str = "run") -> Path:
    """Energy CSV, ``torus v1`` snapshot files and a manifest with the noise checksum."""
    out = Path(out_dir)
    snap = out / f"{name}_snapshots"
    snap.mkdir(parents=True, exist_ok=True)
    write_energy_csv(traj, out / f"{name}_energy.csv")
    for i, f in enumerate(traj.snapshots):
        write_field(snap / f"snap_{i:05d}.txt", f)
    cfg = traj.config
    lines = [f"{k} = {getattr(cfg, k)}" for k in cfg.__dataclass_fields__ if k != "grid"]
    lines += [f"grid.dim = {cfg.grid.dim}", f"grid.n = {cfg.grid.n}",
              f"noise_checksum = {traj.noise_checksum:016x}",
              f"trajectory_checksum = {traj.checksum():016x}",
              f"range_exceeded = {traj.range_exceeded}"]
    (out / f"{name}_manifest.txt").write_text("\n".join(lines) + "\n")
    return out
