"""Regularised absolute values ``phi_n`` and the coupled-trajectory uniqueness test.

``phi_n`` is even and convex with ``phi_n'' = psi_n(|x|)`` where
``psi_n(u) = 1/(n u)`` on ``(a_n, a_{n-1})`` and ``a_m = exp(-m(m+1)/2)``.
So ``phi_n = 0`` on ``|x| <= a_n``, ``|phi_n'| <= 1`` everywhere and
``phi_n(x) = |x| - c_n`` for ``|x| >= a_{n-1}``.

``phi_n'`` is tabulated on a geometric grid of the band by Gauss-Legendre
quadrature of ``psi_n``; ``phi_n`` is the exact integral of the piecewise
linear interpolant of that table.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .coefficients import CoefficientSet
from .diagnostics import CouplingError, write_csv
from .noise import NoisePath
from .solver import SolverConfig, integrate_batch
from .torus import ScalarField

__all__ = [
    "breakpoints",
    "PhiN",
    "build_phi",
    "big_phi",
    "UniquenessReport",
    "uniqueness_experiment",
    "REPORT_COLUMNS",
]

REPORT_COLUMNS = ("n", "t", "mean_big_phi", "stderr", "l1_gap_u0")
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def breakpoints(n: int) -> np.ndarray:
    """``a_0, ..., a_n`` with ``a_m = exp(-m(m+1)/2)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    m = np.arange(n + 1, dtype=float)
    return np.exp(-m * (m + 1) / 2)


def _cell_integrals(f, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    x = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    return half * (f(x) @ _GL_WEIGHTS)


@dataclass(frozen=True, eq=False)
class PhiN:
    n: int
    lower: float
    upper: float
    nodes: np.ndarray = field(repr=False)
    dphi_table: np.ndarray = field(repr=False)
    phi_table: np.ndarray = field(repr=False)
    psi_integral: float = 1.0

    @property
    def breakpoints(self) -> tuple[float, float]:
        return self.lower, self.upper

    @cached_property
    def slopes(self) -> np.ndarray:
        return np.diff(self.dphi_table) / np.diff(self.nodes)

    @property
    def offset(self) -> float:
        """``c_n`` in ``phi_n(x) = |x| - c_n`` above the band."""
        return float(self.upper - self.phi_table[-1])

    def psi(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        inside = (u > self.lower) & (u < self.upper)
        return np.where(inside, 1.0 / (self.n * np.where(inside, u, 1.0)), 0.0)

    def _locate(self, ax: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.nodes, ax, side="right") - 1, 0, len(self.nodes) - 2)

    def dphi(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        ax = np.abs(x)
        return np.sign(x) * np.interp(ax, self.nodes, self.dphi_table, left=0.0, right=1.0)

    def phi(self, x) -> np.ndarray:
        ax = np.abs(np.asarray(x, float))
        i = self._locate(ax)
        t = np.clip(ax, self.lower, self.upper) - self.nodes[i]
        band = self.phi_table[i] + self.dphi_table[i] * t + 0.5 * self.slopes[i] * t * t
        out = np.where(ax >= self.upper, ax - self.offset, band)
        return np.where(ax <= self.lower, 0.0, out)

    def d2phi(self, x) -> np.ndarray:
        """Piecewise-constant second derivative of the interpolated ``phi_n``."""
        ax = np.abs(np.asarray(x, float))
        inside = (ax > self.lower) & (ax < self.upper)
        return np.where(inside, self.slopes[self._locate(ax)], 0.0)


def build_phi(n: int, tol: float = 1e-10) -> PhiN:
    """Tabulate ``phi_n`` with interpolation error of ``phi_n'`` below ``tol``.

    Linear interpolation of ``phi_n'`` (second derivative ``-1/(n x^2)``) on
    cells of relative width ``r`` errs by at most ``r^2 / (8 n)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a = breakpoints(n)
    lo, hi = float(a[n]), float(a[n - 1])
    r = 0.9 * np.sqrt(8 * n * tol)  # margin for rounding
    cells = int(np.ceil(np.log(hi / lo) / np.log1p(r)))
    nodes = np.geomspace(lo, hi, cells + 1)
    nodes[0], nodes[-1] = lo, hi
    psi = lambda u: 1.0 / (n * u)  # noqa: E731
    pieces = _cell_integrals(psi, nodes[:-1], nodes[1:])
    dphi = np.concatenate([[0.0], np.cumsum(pieces)])
    total = float(dphi[-1])
    # normalise so the table ends at exactly 1; the correction is O(1e-15)
    dphi = dphi / total
    dphi[-1] = 1.0
    h = np.diff(nodes)
    cell_phi = h * (dphi[:-1] + dphi[1:]) / 2
    phi = np.concatenate([[0.0], np.cumsum(cell_phi)])
    return PhiN(n, lo, hi, nodes, dphi, phi, total)


def big_phi(p: PhiN, f: ScalarField | np.ndarray, grid=None) -> float | np.ndarray:
    """``int phi_n(f(z)) dz`` by the grid rule; accepts a stack of arrays with ``grid``."""
    if isinstance(f, ScalarField):
        return float(f.grid.integrate(p.phi(f.values)))
    return grid.integrate(p.phi(np.asarray(f, float)))


@dataclass(frozen=True)
class UniquenessReport:
    n_list: tuple[int, ...]
    times: np.ndarray
    mean_big_phi: dict[int, np.ndarray]
    stderr: dict[int, np.ndarray]
    l1_gap_u0: float
    mean_l1_T: float
    fitted_C: float
    fitted_lambda: float
    feasible: bool
    bit_identical: bool | None
    max_h_difference: float
    seeds: int
    energy_integral_mean: float

    def rows(self):
        for n in self.n_list:
            for i, t in enumerate(self.times):
                yield (n, float(t), float(self.mean_big_phi[n][i]), float(self.stderr[n][i]),
                       self.l1_gap_u0)

    def write(self, path) -> None:
        write_csv(path, REPORT_COLUMNS, self.rows())


def uniqueness_experiment(
    c: CoefficientSet,
    cfg: SolverConfig,
    u0_a: ScalarField,
    u0_b: ScalarField,
    paths: NoisePath | Sequence[NoisePath],
    n_list: Sequence[int] = (2, 4, 8),
) -> UniquenessReport:
    """Run both initial data under each shared path and track ``Phi_n(u_a - u_b)``.

    The bound ``mean Phi_n(T) <= C/n + exp(lambda T) * gap`` is fitted with
    ``lambda`` from the observed growth of the mean ``L^1`` gap and ``C`` the
    least value over ``n_list``.  With equal initial data the difference must
    vanish bit for bit.
    """
    if isinstance(paths, NoisePath):
        paths = [paths]
    paths = list(paths)
    B = len(paths)
    trajs = integrate_batch(c, cfg, [u0_a] * B + [u0_b] * B, paths + paths)
    ta, tb = trajs[:B], trajs[B:]
    for x, y in zip(ta, tb):
        if x.noise_checksum != y.noise_checksum:
            raise CouplingError("paired runs consumed different noise")
    grid = cfg.grid
    start_a, start_b = ta[0].fields[0], tb[0].fields[0]
    gap = float(grid.integrate(np.abs(start_a - start_b)))
    diffs = np.stack([x.fields - y.fields for x, y in zip(ta, tb)])  # (B, S, *grid)
    same_input = bool(np.array_equal(u0_a.values, u0_b.values))
    bit_identical = bool(np.all(diffs == 0)) if same_input else None
    max_h = float(np.sqrt(grid.integrate(diffs**2)).max())

    times = ta[0].times
    means, errs = {}, {}
    for n in n_list:
        vals = big_phi(build_phi(n), diffs, grid)  # (B, S)
        means[n] = vals.mean(axis=0)
        errs[n] = vals.std(axis=0, ddof=1) / np.sqrt(B) if B > 1 else np.zeros(len(times))
    T = float(times[-1])
    l1_T = float(grid.integrate(np.abs(diffs[:, -1])).mean())
    if gap > 0 and l1_T > 0:
        lam = max(0.0, float(np.log(l1_T / gap) / T))
    else:
        lam = 0.0
    envelope = np.exp(lam * T) * gap
    C = max(0.0, max(n * (means[n][-1] - envelope) for n in n_list))
    feasible = all(means[n][-1] <= C / n + envelope + 1e-15 for n in n_list)
    energy = float(np.mean([t.energy.h1_integral[-1] for t in trajs]))
    return UniquenessReport(tuple(n_list), times, means, errs, gap, l1_T, float(C), lam,
                            feasible, bit_identical, max_h, B, energy)
