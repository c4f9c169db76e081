"""Independent reference computations used by the test-suite.

None of these share code with the package: they use direct sums, real-space
kernels and closed forms instead of FFTs and tables.
"""
from __future__ import annotations

import math

import numpy as np


def riemann_l2(values: np.ndarray, h: float) -> float:
    """Plain double loop-free sum ``sqrt(h^d sum v^2)`` via math.fsum."""
    d = values.ndim
    return math.sqrt(math.fsum((values.ravel() ** 2).tolist()) * h**d)


def dft_coefficients(values: np.ndarray) -> np.ndarray:
    """1-D ``c_k = (1/n) sum_j f_j exp(-2 pi i k j / n)`` by matrix product."""
    n = values.size
    j = np.arange(n)
    k = np.fft.fftfreq(n, 1.0 / n)
    return np.exp(-2j * np.pi * np.outer(k, j) / n) @ values / n


def theta_heat_kernel(n: int, eps: float, images: int = 8) -> np.ndarray:
    """Periodic heat kernel on the 1-D grid as a sum of Gaussian images.

    ``K(x) = sum_m (4 pi eps)^(-1/2) exp(-(x + m)^2 / (4 eps))`` sampled at
    ``x = j/n``; its grid convolution with weight ``1/n`` approximates
    ``P_eps``.  For ``eps`` resolved by the grid the discrete multiplier and
    this kernel agree to the aliasing level of the Gaussian tail.
    """
    x = np.arange(n) / n
    m = np.arange(-images, images + 1)[:, None]
    return (np.exp(-(x[None] + m) ** 2 / (4 * eps)).sum(axis=0)) / np.sqrt(4 * np.pi * eps)


def periodic_convolve(f: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """``(1/n) sum_j kernel[(i - j) mod n] f[j]`` by explicit index arithmetic."""
    n = f.size
    i = np.arange(n)
    idx = (i[:, None] - i[None, :]) % n
    return kernel[idx] @ f / n


def brute_holder(times: np.ndarray, U: np.ndarray, eta: float) -> float:
    """Exact parabolic Hoelder seminorm over all space-time pairs (1-D grids)."""
    S, n = U.shape
    t = np.repeat(times, n)
    x = np.tile(np.arange(n) / n, S)
    u = U.ravel()
    dx = np.abs(x[:, None] - x[None, :])
    dx = np.minimum(dx, 1 - dx)
    d = np.maximum(np.sqrt(np.abs(t[:, None] - t[None, :])), dx)
    du = np.abs(u[:, None] - u[None, :])
    ok = d > 0
    return float((du[ok] / d[ok] ** eta).max())


def brute_spatial_holder(f: np.ndarray, eta: float) -> float:
    n = f.size
    best = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            d = min(j - i, n - (j - i)) / n
            best = max(best, abs(f[i] - f[j]) / d**eta)
    return float(np.abs(f).max() + best)


def phi_closed_form(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(phi_n, phi_n')`` for ``psi_n = 1/(n u)`` on ``(a_n, a_{n-1})``."""
    lo = math.exp(-n * (n + 1) / 2)
    hi = math.exp(-(n - 1) * n / 2)
    ax = np.abs(np.asarray(x, float))
    c = np.clip(ax, lo, hi)
    dphi = np.log(c / lo) / n
    phi_band = (c * np.log(c / lo) - c + lo) / n
    phi = np.where(ax >= hi, ax - (hi - lo) / n, phi_band)
    phi = np.where(ax <= lo, 0.0, phi)
    return phi, np.sign(x) * dphi


def implicit_heat_factor(lam: float, dt: float, steps: int) -> float:
    return (1.0 + dt * lam) ** (-steps)
