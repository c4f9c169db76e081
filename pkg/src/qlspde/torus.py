"""Periodic grids on the unit torus, field containers, transforms and norms.

The torus is ``[0, 1]^d`` with ``d`` in {1, 2}, sampled on a uniform grid of
``n`` points per axis.  All integrals are the periodic Riemann sum
``h^d * sum(values)``, which is exact for trigonometric polynomials of degree
below ``n``.

Field arrays keep the spatial axes last, so a stack of fields of shape
``(batch, *grid.shape)`` can be pushed through the same transforms.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TorusGrid",
    "ScalarField",
    "SpectralField",
    "MatrixField",
    "forward_transform",
    "inverse_transform",
    "gradient",
    "divergence",
    "laplacian",
    "norm",
    "lp_norm",
    "sobolev_norm",
    "inner",
    "holder_seminorm",
    "spatial_holder_norm",
    "write_field",
    "read_field",
]

NORMS = ("L1", "L2", "H", "Linf", "H1", "grad_Linf")


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")

    @property
    def h(self) -> float:
        # 1/n is exact in binary floating point for powers of two
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    def coords(self) -> list[np.ndarray]:
        """Grid coordinates, one array of shape ``self.shape`` per axis."""
        x = np.arange(self.n) * self.h
        return list(np.meshgrid(*([x] * self.dim), indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Integer wavenumbers (full FFT layout), broadcastable per axis."""
        k = np.fft.fftfreq(self.n, 1.0 / self.n)
        out = []
        for axis in range(self.dim):
            shape = [1] * self.dim
            shape[axis] = self.n
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def rfft_wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Integer wavenumbers in ``rfftn`` layout (last axis halved)."""
        out = []
        for axis in range(self.dim):
            if axis == self.dim - 1:
                k = np.fft.rfftfreq(self.n, 1.0 / self.n)
            else:
                k = np.fft.fftfreq(self.n, 1.0 / self.n)
            shape = [1] * self.dim
            shape[axis] = k.size
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        """``|2 pi k|^2`` in rfft layout (the symbol of ``-Laplacian``)."""
        return sum((2 * np.pi * k) ** 2 for k in self.rfft_wavenumbers)

    @cached_property
    def derivative_symbols(self) -> tuple[np.ndarray, ...]:
        """``2 pi i k`` per axis in rfft layout, Nyquist entries set to zero."""
        out = []
        for k in self.rfft_wavenumbers:
            sym = 2j * np.pi * k
            sym = np.where(np.abs(k) == self.n // 2, 0.0, sym)
            out.append(sym)
        return tuple(out)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule box mask in rfft layout: keeps ``|k_i| < n/3`` on every axis."""
        keep = np.ones(np.broadcast_shapes(*(k.shape for k in self.rfft_wavenumbers)), bool)
        for k in self.rfft_wavenumbers:
            keep = keep & (3 * np.abs(k) < self.n)
        return keep.astype(float)

    @cached_property
    def rfft_weights(self) -> np.ndarray:
        """Parseval weights for half spectra (2 for interior last-axis modes)."""
        m = self.n // 2 + 1
        w = np.full(m, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        shape = [1] * self.dim
        shape[-1] = m
        return w.reshape(shape)

    def rfft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(a, axes=self.axes)

    def irfft(self, ah: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(ah, s=self.shape, axes=self.axes)

    def spectral_energy(self, ah: np.ndarray) -> np.ndarray:
        """``||f||_H^2`` from the unnormalised rfft of ``f`` (reduces spatial axes)."""
        e = self.rfft_weights * np.abs(ah) ** 2
        return e.sum(axis=self.axes) / self.size**2

    def integrate(self, a: np.ndarray) -> np.ndarray:
        return a.sum(axis=self.axes) * self.cell_volume


def _check_finite(values: np.ndarray, what: str):
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(f"{what} has non-finite entries (first at index {tuple(bad)})")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real grid function on a :class:`TorusGrid`; values are read-only."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            vals = vals.reshape(self.grid.shape)
        _check_finite(vals, "ScalarField")
        object.__setattr__(self, "values", _readonly(vals))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "ScalarField":
        return cls(grid, fn(*grid.coords()))

    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    def mean(self) -> float:
        return float(self.values.mean())

    def __add__(self, other):
        if isinstance(other, ScalarField):
            _same_grid(self.grid, other.grid)
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            _same_grid(self.grid, other.grid)
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients ``c_k`` with ``f(x) = sum_k c_k exp(2 pi i k.x)``.

    ``coeffs`` uses the standard FFT ordering (``grid.wavenumbers``), covering
    ``k in {-n/2, ..., n/2 - 1}^d``.
    """

    grid: TorusGrid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex, copy=True)
        if c.shape != self.grid.shape:
            raise ValueError(f"coeffs shape {c.shape} does not match grid {self.grid.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def coefficient(self, k: Sequence[int]) -> complex:
        idx = tuple(int(ki) % self.grid.n for ki in k)
        return complex(self.coeffs[idx])

    def hermitian_defect(self) -> float:
        """``max |c(-k) - conj(c(k))|``; zero for the transform of a real field."""
        c = self.coeffs
        flipped = c
        for axis in range(self.grid.dim):
            flipped = np.roll(np.flip(flipped, axis=axis), 1, axis=axis)
        return float(np.max(np.abs(flipped - np.conj(c))))


@dataclass(frozen=True, eq=False)
class MatrixField:
    """``dim x dim`` matrix per grid point, stored entry-major: ``values[i, j, *x]``."""

    grid: TorusGrid
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        d = self.grid.dim
        if vals.shape != (d, d) + self.grid.shape:
            raise ValueError(f"MatrixField values must have shape {(d, d) + self.grid.shape}")
        _check_finite(vals, "MatrixField")
        if self.symmetric:
            asym = np.max(np.abs(vals - np.swapaxes(vals, 0, 1)))
            if asym > 1e-12:
                raise ValueError(f"MatrixField flagged symmetric but asymmetry is {asym:.3e}")
        object.__setattr__(self, "values", _readonly(vals))

    def pointwise(self) -> np.ndarray:
        """Values as ``(*grid.shape, d, d)``."""
        return np.moveaxis(self.values, (0, 1), (-2, -1))

    def eigenvalue_range(self) -> tuple[float, float]:
        ev = np.linalg.eigvalsh(self.pointwise())
        return float(ev.min()), float(ev.max())


def _same_grid(a: TorusGrid, b: TorusGrid):
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


def forward_transform(f: ScalarField) -> SpectralField:
    _check_finite(f.values, "forward_transform input")
    coeffs = np.fft.fftn(f.values) / f.grid.size
    out = SpectralField(f.grid, coeffs)
    defect = out.hermitian_defect()
    scale = max(1.0, float(np.max(np.abs(f.values))))
    assert defect <= 1e-13 * scale, f"Hermitian symmetry broken ({defect:.3e})"
    return out


def inverse_transform(s: SpectralField) -> ScalarField:
    vals = np.fft.ifftn(s.coeffs * s.grid.size)
    return ScalarField(s.grid, vals.real)


def _grad_array(grid: TorusGrid, a: np.ndarray) -> np.ndarray:
    ah = grid.rfft(a)
    return np.stack([grid.irfft(sym * ah) for sym in grid.derivative_symbols])


def gradient(f: ScalarField) -> list[ScalarField]:
    """Spectral gradient, one component per axis."""
    return [ScalarField(f.grid, g) for g in _grad_array(f.grid, f.values)]


def divergence(components: Sequence[ScalarField]) -> ScalarField:
    grid = components[0].grid
    if len(components) != grid.dim:
        raise ValueError("divergence needs one component per axis")
    acc = 0
    for sym, c in zip(grid.derivative_symbols, components):
        _same_grid(grid, c.grid)
        acc = acc + sym * grid.rfft(c.values)
    return ScalarField(grid, grid.irfft(acc))


def laplacian(f: ScalarField) -> ScalarField:
    g = f.grid
    return ScalarField(g, g.irfft(-g.laplacian_symbol * g.rfft(f.values)))


def inner(f: ScalarField, g: ScalarField) -> float:
    _same_grid(f.grid, g.grid)
    return float(f.grid.integrate(f.values * g.values))


def lp_norm(f: ScalarField, p: float) -> float:
    if np.isinf(p):
        return float(np.max(np.abs(f.values)))
    return float(f.grid.integrate(np.abs(f.values) ** p) ** (1.0 / p))


def norm(f: ScalarField, which: str = "L2") -> float:
    """Discrete norms: ``L1``, ``L2`` (alias ``H``), ``Linf``, ``H1``, ``grad_Linf``."""
    if which == "L1":
        return lp_norm(f, 1)
    if which in ("L2", "H"):
        return lp_norm(f, 2)
    if which == "Linf":
        return lp_norm(f, np.inf)
    g = _grad_array(f.grid, f.values)
    if which == "H1":
        sq = f.grid.integrate(f.values**2) + sum(f.grid.integrate(gi**2) for gi in g)
        return float(np.sqrt(sq))
    if which == "grad_Linf":
        return float(np.sqrt((g**2).sum(axis=0)).max())
    raise ValueError(f"unknown norm {which!r}; expected one of {NORMS}")


def sobolev_norm(f: ScalarField, a: float) -> float:
    """Bessel-potential ``H^a`` norm via the multiplier ``(1 + |2 pi k|^2)^(a/2)``.

    Only ``a`` in {0, 1} is cross-checked against :func:`norm`.
    """
    g = f.grid
    ah = g.rfft(f.values) * (1.0 + g.laplacian_symbol) ** (a / 2)
    return float(np.sqrt(g.spectral_energy(ah)))


def _periodic_distance(grid: TorusGrid, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Euclidean torus distance between flat grid indices ``i`` and ``j``."""
    ci = np.stack(np.unravel_index(i, grid.shape))
    cj = np.stack(np.unravel_index(j, grid.shape))
    diff = np.abs(ci - cj)
    diff = np.minimum(diff, grid.n - diff) * grid.h
    return np.sqrt((diff**2).sum(axis=0))


def holder_seminorm(
    traj: Iterable[tuple[float, ScalarField]],
    eta: float,
    far_pairs: int = 10_000,
    seed: int = 0,
) -> float:
    """Sampled parabolic Hoelder seminorm of a space-time field.

    Ratios ``|u(t,x) - u(s,y)| / d^eta`` with
    ``d = max(|t - s|^(1/2), |x - y|)`` are maximised over nearest spatial
    neighbours at equal time, consecutive times at equal position, and
    ``far_pairs`` uniformly drawn pairs (fixed ``seed``, so the estimate is
    deterministic).  The result never exceeds the all-pairs value.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    items = list(traj)
    if len(items) < 2:
        raise ValueError("holder_seminorm needs at least two snapshots")
    times = np.array([t for t, _ in items], float)
    grid = items[0][1].grid
    U = np.stack([f.values for _, f in items])
    best = 0.0
    for axis in range(1, grid.dim + 1):
        du = np.abs(U - np.roll(U, 1, axis=axis))
        best = max(best, float(du.max()) / grid.h**eta)
    dt = np.diff(times)
    if np.any(dt <= 0):
        raise ValueError("snapshot times must be strictly increasing")
    du = np.abs(np.diff(U, axis=0)).reshape(len(dt), -1).max(axis=1)
    best = max(best, float(np.max(du / dt ** (eta / 2))))
    if far_pairs > 0:
        rng = np.random.default_rng(seed)
        flat = U.reshape(len(times), -1)
        ta = rng.integers(0, len(times), far_pairs)
        tb = rng.integers(0, len(times), far_pairs)
        xa = rng.integers(0, grid.size, far_pairs)
        xb = rng.integers(0, grid.size, far_pairs)
        d = np.maximum(np.sqrt(np.abs(times[ta] - times[tb])), _periodic_distance(grid, xa, xb))
        ok = d > 0
        if ok.any():
            ratio = np.abs(flat[ta, xa] - flat[tb, xb])[ok] / d[ok] ** eta
            best = max(best, float(ratio.max()))
    return best


def spatial_holder_norm(f: ScalarField | np.ndarray, eta: float, grid: TorusGrid | None = None,
                        far_pairs: int = 10_000, seed: int = 0) -> np.ndarray | float:
    """``sup|f| + [f]_eta`` on the torus.

    Exact over all point pairs in 1D.  In 2D nearest neighbours plus
    ``far_pairs`` sampled pairs are used.  Accepts a stack of arrays with the
    spatial axes last and returns one value per leading index.
    """
    if isinstance(f, ScalarField):
        grid, arr, scalar = f.grid, f.values[None], True
    else:
        arr = np.asarray(f, float)
        scalar = arr.ndim == grid.dim
        arr = arr.reshape((-1,) + grid.shape)
    flat = arr.reshape(arr.shape[0], -1)
    sup = np.abs(flat).max(axis=1)
    if grid.dim == 1:
        n = grid.n
        i, j = np.triu_indices(n, 1)
        d = np.minimum(j - i, n - (j - i)) * grid.h
        w = d**-eta
        semi = np.zeros(arr.shape[0])
        # chunk over the batch to bound memory
        for s in range(0, arr.shape[0], 64):
            blk = flat[s:s + 64]
            semi[s:s + 64] = (np.abs(blk[:, i] - blk[:, j]) * w).max(axis=1)
    else:
        semi = np.zeros(arr.shape[0])
        for axis in range(1, grid.dim + 1):
            du = np.abs(arr - np.roll(arr, 1, axis=axis)).reshape(arr.shape[0], -1).max(axis=1)
            semi = np.maximum(semi, du / grid.h**eta)
        rng = np.random.default_rng(seed)
        xa = rng.integers(0, grid.size, far_pairs)
        xb = rng.integers(0, grid.size, far_pairs)
        d = _periodic_distance(grid, xa, xb)
        ok = d > 0
        xa, xb, d = xa[ok], xb[ok], d[ok]
        semi = np.maximum(semi, (np.abs(flat[:, xa] - flat[:, xb]) / d**eta).max(axis=1))
    out = sup + semi
    return float(out[0]) if scalar else out


_HEADER = "torus v1 dim={dim} n={n}"


def write_field(path: str | Path, f: ScalarField) -> None:
    """Write the ``torus v1`` snapshot format (row-major, shortest round-trip reprs)."""
    lines = [_HEADER.format(dim=f.grid.dim, n=f.grid.n)]
    lines.extend(repr(float(v)) for v in f.values.ravel(order="C"))
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path: str | Path) -> ScalarField:
    lines = Path(path).read_text().splitlines()
    parts = lines[0].split()
    if len(parts) != 4 or parts[:2] != ["torus", "v1"]:
        raise ValueError(f"not a torus v1 snapshot: {lines[0]!r}")
    meta = dict(p.split("=") for p in parts[2:])
    grid = TorusGrid(int(meta["dim"]), int(meta["n"]))
    vals = np.array([float(s) for s in lines[1:] if s.strip()])
    if vals.size != grid.size:
        raise ValueError(f"expected {grid.size} values, found {vals.size}")
    return ScalarField(grid, vals.reshape(grid.shape))
