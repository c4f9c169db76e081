"""Truncated cylindrical Wiener increments with counter-based reproducibility.

Column ``k`` (1-based mode index) of a path is drawn from a Philox stream keyed
by ``(seed, k)``; step ``m`` consumes 64-bit words ``2m`` and ``2m + 1`` of that
stream, which are turned into one standard normal by Box-Muller.  Any block
``(k, m0:m1)`` can therefore be regenerated on its own, a ``K = 16`` path
restricted to 8 columns equals the ``K = 8`` path, and runs sharing a path see
identical increments whatever their other settings.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .coefficients import CoefficientSet
from .torus import ScalarField, TorusGrid

__all__ = [
    "NoisePath",
    "NoiseStoreError",
    "generate",
    "column_block",
    "fourier_basis",
    "noise_modes",
    "evaluate_noise_term",
    "ito_isometry_check",
    "IsometryCheck",
    "DEFAULT_MAX_BYTES",
]

DEFAULT_MAX_BYTES = 2 * 1024**3
_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi


class NoiseStoreError(MemoryError):
    """The requested increment matrix would exceed the configured store size."""


def _uniforms(words: np.ndarray) -> np.ndarray:
    # 53-bit mantissa, shifted off zero so log() is finite
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def column_block(seed: int, k: int, m0: int, m1: int) -> np.ndarray:
    """Standard normals for mode ``k`` and steps ``m0 <= m < m1`` (unit variance)."""
    if not 0 <= m0 <= m1:
        raise ValueError("need 0 <= m0 <= m1")
    count = m1 - m0
    if count == 0:
        return np.empty(0)
    first_word = 2 * m0
    block, offset = divmod(first_word, 4)
    bg = np.random.Philox(key=[int(seed) & _MASK64, int(k) & _MASK64], counter=[block, 0, 0, 0])
    words = bg.random_raw(offset + 2 * count)[offset:]
    u1 = _uniforms(words[0::2])
    u2 = _uniforms(words[1::2])
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Brownian increments ``increments[m, k-1] = beta_k(t_{m+1}) - beta_k(t_m)``."""

    seed: int
    K: int
    dt: float
    steps: int
    increments: np.ndarray = field(repr=False)
    basis: str = "real_fourier"
    coarsening: int = 1

    def __post_init__(self):
        inc = np.asarray(self.increments, float)
        if inc.shape != (self.steps, self.K):
            raise ValueError(f"increments shape {inc.shape} != {(self.steps, self.K)}")
        if inc.flags.writeable:
            inc = inc.copy()
            inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @cached_property
    def checksum(self) -> int:
        """64-bit BLAKE2b digest of the increments and their shape and step size."""
        h = hashlib.blake2b(digest_size=8)
        h.update(np.asarray([self.steps, self.K], np.int64).tobytes())
        h.update(np.float64(self.dt).tobytes())
        h.update(np.ascontiguousarray(self.increments).tobytes())
        return int.from_bytes(h.digest(), "little")

    @property
    def T(self) -> float:
        return self.steps * self.dt

    def restrict(self, K: int) -> "NoisePath":
        """The first ``K`` modes (bit-identical to generating with ``K`` directly)."""
        if not 1 <= K <= self.K:
            raise ValueError(f"cannot restrict {self.K} modes to {K}")
        return NoisePath(self.seed, K, self.dt, self.steps, self.increments[:, :K],
                         self.basis, self.coarsening)

    def coarsen(self, factor: int = 2) -> "NoisePath":
        """Same Brownian path on a grid ``factor`` times coarser (increments summed)."""
        if factor < 1 or self.steps % factor:
            raise ValueError(f"steps={self.steps} not divisible by factor={factor}")
        inc = self.increments.reshape(self.steps // factor, factor, self.K).sum(axis=1)
        return NoisePath(self.seed, self.K, self.dt * factor, self.steps // factor, inc,
                         self.basis, self.coarsening * factor)


def generate(seed: int, K: int, dt: float, steps: int,
             max_bytes: int = DEFAULT_MAX_BYTES) -> NoisePath:
    if K < 1:
        raise ValueError("K must be >= 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    need = 8 * int(steps) * int(K)
    if need > max_bytes:
        raise NoiseStoreError(
            f"increment store for steps={steps}, K={K} needs {need / 2**20:.1f} MiB "
            f"(limit {max_bytes / 2**20:.1f} MiB)")
    inc = np.empty((steps, K))
    scale = np.sqrt(dt)
    for k in range(1, K + 1):
        inc[:, k - 1] = column_block(seed, k, 0, steps) * scale
    return NoisePath(int(seed), int(K), float(dt), int(steps), inc)


def _fourier_wavevectors(grid: TorusGrid) -> list[tuple[int, ...]]:
    """Half-space wavevectors ordered by ``|k|^2`` then lexicographically, Nyquist excluded."""
    half = grid.n // 2
    rng = range(-half + 1, half)
    if grid.dim == 1:
        cand = [(k,) for k in rng if k > 0]
    else:
        cand = [(a, b) for a in rng for b in rng if (a > 0) or (a == 0 and b > 0)]
    cand.sort(key=lambda k: (sum(c * c for c in k), k))
    return cand


def fourier_basis(grid: TorusGrid, K: int) -> np.ndarray:
    """First ``K`` functions of the real orthonormal Fourier basis, shape ``(K, *grid.shape)``.

    Order: the constant, then for each half-space wavevector ``sqrt(2) cos``
    followed by ``sqrt(2) sin``.
    """
    x = grid.coords()
    out = [np.ones(grid.shape)]
    for k in _fourier_wavevectors(grid):
        if len(out) >= K:
            break
        phase = _TWO_PI * sum(ki * xi for ki, xi in zip(k, x))
        out.append(np.sqrt(2) * np.cos(phase))
        out.append(np.sqrt(2) * np.sin(phase))
    if len(out) < K:
        raise ValueError(f"grid {grid} resolves only {len(out)} basis functions, asked for {K}")
    return np.stack(out[:K])


def noise_modes(c: CoefficientSet, u: np.ndarray, K: int, grid: TorusGrid,
                basis_product: bool = False) -> np.ndarray:
    """Per-mode noise fields ``G_k``, shape ``(K, *u.shape)``.

    By default ``G_k = sigma_k(u)``.  With ``basis_product`` each is further
    multiplied by the basis function ``e_k``.
    """
    G = c.sigma(u, K)
    if basis_product:
        G = G * fourier_basis(grid, K).reshape((K,) + (1,) * (u.ndim - grid.dim) + grid.shape)
    return G


def evaluate_noise_term(c: CoefficientSet, u: ScalarField, path: NoisePath, step: int,
                        K: int | None = None, basis_product: bool = False) -> ScalarField:
    """``sum_k G_k(u) * dbeta_k(step)`` on the grid."""
    if not 0 <= step < path.steps:
        raise IndexError(f"step {step} outside path of {path.steps} steps")
    K = path.K if K is None else K
    if K > path.K:
        raise ValueError(f"path has {path.K} modes, {K} requested")
    if c.sigma_zero:
        return ScalarField.constant(u.grid, 0.0)
    G = noise_modes(c, u.values, K, u.grid, basis_product)
    inc = path.increments[step, :K]
    return ScalarField(u.grid, np.tensordot(inc, G, axes=(0, 0)))


@dataclass(frozen=True)
class IsometryCheck:
    samples: int
    mean: float
    stderr: float
    expected: float

    @property
    def z_score(self) -> float:
        return (self.mean - self.expected) / self.stderr if self.stderr > 0 else 0.0


def ito_isometry_check(c: CoefficientSet, u: ScalarField, K: int, dt: float,
                       samples: int = 10_000, seed: int = 0,
                       basis_product: bool = False) -> IsometryCheck:
    """Monte Carlo ``E||sum_k G_k dbeta_k||_H^2`` against ``dt * sum_k ||G_k||_H^2``."""
    path = generate(seed, K, dt, samples)
    G = noise_modes(c, u.values, K, u.grid, basis_product).reshape(K, -1)
    fields = path.increments @ G
    sq = (fields**2).sum(axis=1) * u.grid.cell_volume
    expected = dt * float((G**2).sum()) * u.grid.cell_volume
    return IsometryCheck(samples, float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(samples)),
                         expected)
