"""Coefficient families for the flux ``B``, diffusion ``A`` and noise ``sigma_k``.

A :class:`CoefficientSet` bundles vectorised callables with the constants they
are claimed to satisfy.  :func:`validate` checks those claims by sampling the
real line on ``[-R, R]``; the solver refuses sets that fail.

Array conventions (``y`` of any shape ``S``):

* ``B(y)``         -> ``(dim, *S)``
* ``A(y)``         -> ``(dim, dim, *S)``, symmetric
* ``sigma(y, K)``  -> ``(K, *S)`` holding ``sigma_1 .. sigma_K``
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np
from scipy.stats import qmc

__all__ = [
    "CoefficientSet",
    "CoefficientError",
    "Check",
    "ValidationReport",
    "builtin",
    "validate",
    "BUILTINS",
]

BUILTINS = ("linear_probe", "trig", "rational", "frozen")

# max of |d/dy (1 + y^2)^-1| = 2|y|/(1 + y^2)^2, attained at y = 1/sqrt(3)
_RATIONAL_SLOPE = 3 * math.sqrt(3) / 8


class CoefficientError(ValueError):
    """A coefficient set violates one of its declared hypotheses."""


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    name: str
    dim: int
    B: Callable[[np.ndarray], np.ndarray]
    A: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray, int], np.ndarray]
    L_B: float
    delta: float
    C_A: float
    L_A: float
    C_sigma: float
    growth: float
    K_max: int | None = None
    sigma_lip_sq: Callable[[np.ndarray], np.ndarray] | None = None
    sigma_zero: bool = False
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.delta > 0:
            raise CoefficientError(f"ellipticity constant delta must be positive, got {self.delta}")
        if self.delta > self.C_A:
            raise CoefficientError(f"empty ellipticity window: delta={self.delta} > C_A={self.C_A}")
        for name in ("L_B", "L_A", "C_sigma", "growth"):
            if getattr(self, name) < 0:
                raise CoefficientError(f"{name} must be nonnegative")

    def sigma_tail(self, K: int, terms: int = 200_000) -> float:
        """Declared bound on ``sum_{k > K} sup |sigma_k'|^2`` (modes dropped by truncation)."""
        if self.sigma_zero:
            return 0.0
        if self.K_max is not None and K >= self.K_max:
            return 0.0
        if self.sigma_lip_sq is None:
            return float("nan")
        stop = K + terms if self.K_max is None else self.K_max
        k = np.arange(K + 1, stop + 1, dtype=float)
        return float(np.sum(self.sigma_lip_sq(k)))

    @cached_property
    def default_report(self) -> "ValidationReport":
        return validate(self)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    worst: float
    bound: float
    witness: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ValidationReport:
    name: str
    probe_points: int
    R: float
    checks: dict[str, Check]
    sigma_modes: int
    sigma_tail: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list[Check]:
        return [c for c in self.checks.values() if not c.passed]

    def raise_if_failed(self):
        bad = self.failures()
        if bad:
            msg = "; ".join(f"{c.name}: {c.worst:.6g} vs bound {c.bound:.6g} at y={c.witness}"
                            for c in bad)
            raise CoefficientError(f"coefficient set {self.name!r} rejected: {msg}")


def probe_sequence(count: int, R: float) -> np.ndarray:
    """First ``count`` points of the base-2 van der Corput sequence mapped to ``[-R, R]``.

    Prefixes are nested, so a witness found with ``count`` points is still
    present for any larger count.
    """
    x = qmc.Halton(d=1, scramble=False).random(count)[:, 0]
    return R * (2 * x - 1)


def _net_of_rounding(diff_norm, scale, entries):
    # a difference of two rounded values carries ~ulp(scale) per entry; discount it so
    # tiny declared constants are not rejected by cancellation noise over short gaps
    slack = 4 * np.finfo(float).eps * np.asarray(scale) * np.sqrt(entries)
    return np.maximum(np.asarray(diff_norm) - slack, 0.0)


def validate(c: CoefficientSet, probe_points: int = 400, R: float = 50.0,
             fd_step: float = 1e-5, rtol: float = 1e-6) -> ValidationReport:
    """Sample-based certification of the declared constants of ``c``."""
    if probe_points < 100:
        raise ValueError("probe_points must be >= 100")
    y = probe_sequence(probe_points, R)
    hs = fd_step
    checks: dict[str, Check] = {}

    def record(name, values, bound, points, upper=True):
        values = np.asarray(values, float)
        idx = int(np.argmax(values) if upper else np.argmin(values))
        worst = float(values[idx])
        ok = worst <= bound if upper else worst >= bound
        if not np.all(np.isfinite(values)):
            ok = False
        wit = tuple(float(p) for p in np.atleast_1d(points[idx]))
        checks[name] = Check(name, bool(ok), worst, float(bound), wit)

    Bp, Bm = c.B(y + hs), c.B(y - hs)
    slope_B = _net_of_rounding(np.sqrt(((Bp - Bm) ** 2).sum(axis=0)),
                               np.abs(Bp).max(axis=0) + np.abs(Bm).max(axis=0), c.dim) / (2 * hs)
    record("flux_lipschitz", slope_B, c.L_B * (1 + rtol) + 1e-12, y)

    Ay = c.A(y)
    Ay_pts = np.moveaxis(Ay, (0, 1), (-2, -1))
    asym = np.abs(Ay_pts - np.swapaxes(Ay_pts, -1, -2)).reshape(len(y), -1).max(axis=1)
    record("diffusion_symmetric", asym, 1e-12, y)
    ev = np.linalg.eigvalsh(0.5 * (Ay_pts + np.swapaxes(Ay_pts, -1, -2)))
    record("ellipticity_lower", ev.min(axis=1), c.delta * (1 - 1e-12), y, upper=False)
    record("ellipticity_upper", ev.max(axis=1), c.C_A * (1 + 1e-12), y)

    # Lipschitz ratios on sequence-consecutive pairs (nested in probe_points)
    # and on finite-difference pairs.
    y1 = np.concatenate([y[:-1], y])
    y2 = np.concatenate([y[1:], y + hs])
    gap = np.abs(y1 - y2)
    A1, A2 = c.A(y1), c.A(y2)
    dA_norm = np.linalg.norm(np.moveaxis(A1 - A2, (0, 1), (-2, -1)), ord=2, axis=(-2, -1))
    A_scale = np.abs(A1).max(axis=(0, 1)) + np.abs(A2).max(axis=(0, 1))
    record("diffusion_lipschitz", _net_of_rounding(dA_norm, A_scale, c.dim) / gap, c.L_A * (1 + rtol) + 1e-12,
           np.stack([y1, y2], axis=1))

    K = c.K_max if c.K_max is not None else 256
    if c.sigma_zero:
        K = 1
    s1, s2 = c.sigma(y1, K), c.sigma(y2, K)
    ds = _net_of_rounding(np.sqrt(((s1 - s2) ** 2).sum(axis=0)),
                          np.abs(s1).max(axis=0) + np.abs(s2).max(axis=0), K)
    record("noise_lipschitz_pairs", ds**2 / gap**2, c.C_sigma * (1 + rtol) + 1e-12,
           np.stack([y1, y2], axis=1))
    sp, sm = c.sigma(y + hs, K), c.sigma(y - hs, K)
    dsig = _net_of_rounding(np.sqrt(((sp - sm) ** 2).sum(axis=0)),
                            np.abs(sp).max(axis=0) + np.abs(sm).max(axis=0), K) / (2 * hs)
    record("noise_lipschitz_sum", dsig**2, c.C_sigma * (1 + rtol) + 1e-12, y)
    sq = (c.sigma(y, K) ** 2).sum(axis=0)
    record("noise_growth", sq / (1 + y**2), c.growth * (1 + rtol) + 1e-12, y)

    return ValidationReport(c.name, probe_points, R, checks, K, c.sigma_tail(K))


def _const_vector(dim: int, params: Mapping[str, float], key: str, default: float) -> np.ndarray:
    base = float(params.get(key, default))
    return np.array([float(params.get(f"{key}{i + 1}", base)) for i in range(dim)])


def _trig_sigma(s: float, K_max: int):
    def sigma(y, K):
        y = np.asarray(y, float)
        vals = np.zeros((K,) + y.shape)
        # sin(k y) by the recurrence s_{k+1} = 2 cos(y) s_k - s_{k-1}
        c2 = 2.0 * np.cos(y)
        prev, cur = np.zeros(y.shape), np.sin(y)
        for k in range(1, min(K, K_max) + 1):
            vals[k - 1] = (s * 2.0**-k / k) * cur
            prev, cur = cur, c2 * cur - prev
        return vals

    def lip_sq(k):
        k = np.asarray(k, float)
        return np.where(k <= K_max, s**2 * 4.0**-k, 0.0)

    C_sigma = s**2 * (1 - 4.0**-K_max) / 3
    growth = s**2 * float(np.sum(4.0 ** -np.arange(1, K_max + 1) / np.arange(1, K_max + 1) ** 2))
    return sigma, lip_sq, C_sigma, growth


def _scalar_diffusion(dim: int, a: Callable[[np.ndarray], np.ndarray]):
    eye = np.eye(dim)

    def A(y):
        y = np.asarray(y, float)
        return eye.reshape((dim, dim) + (1,) * y.ndim) * a(y)[None, None]

    return A


def builtin(name: str, params: Mapping[str, float] | None = None, dim: int = 1) -> CoefficientSet:
    """Construct one of the built-in families.

    ``trig``
        ``B_i = b_i sin y``, ``A = (a0 + a1 sin y) I`` with ``a0 > a1 >= 0``,
        ``sigma_k = s 2^-k sin(k y) / k``.
    ``rational``
        ``A = (delta + (C_A - delta) / (1 + y^2)) I``, ``B_i = b_i arctan y``,
        trig-type noise with amplitude ``s``.
    ``frozen``
        constant ``A = a I``, ``B = b``, additive noise ``sigma_k = s 2^-k``.
    ``linear_probe``
        ``B = 0``, ``A = I``, trig-type noise (stochastic heat equation).

    Vector parameters take a scalar ``b`` for every component, overridden per
    axis by ``b1``, ``b2``.  ``K_max`` (default 64) truncates the noise family.
    """
    p = dict(params or {})
    K_max = int(p.pop("K_max", 64))
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    if name not in BUILTINS:
        raise ValueError(f"unknown coefficient family {name!r}; expected one of {BUILTINS}")

    if name == "frozen":
        a = float(p.get("a", 1.0))
        s = float(p.get("s", 0.0))
        if a <= 0:
            raise ValueError("frozen: a must be positive")
        bvec = _const_vector(dim, p, "b", 0.0)

        def B(y):
            y = np.asarray(y, float)
            return np.broadcast_to(bvec.reshape((dim,) + (1,) * y.ndim), (dim,) + y.shape).copy()

        def sigma(y, K):
            y = np.asarray(y, float)
            k = np.arange(1, K + 1, dtype=float).reshape((K,) + (1,) * y.ndim)
            vals = np.broadcast_to(s * 2.0**-k, (K,) + y.shape).copy()
            if K > K_max:
                vals[K_max:] = 0.0
            return vals

        return CoefficientSet(
            name="frozen", dim=dim, B=B, A=_scalar_diffusion(dim, lambda y: np.full(y.shape, a)),
            sigma=sigma, L_B=0.0, delta=a, C_A=a, L_A=0.0, C_sigma=0.0,
            growth=s**2 * (1 - 4.0**-K_max) / 3, K_max=K_max,
            sigma_lip_sq=lambda k: np.zeros_like(np.asarray(k, float)),
            sigma_zero=(s == 0.0), params={"a": a, "s": s, **{f"b{i + 1}": v for i, v in enumerate(bvec)}},
        )

    s = float(p.get("s", 0.1))
    if s < 0:
        raise ValueError("noise amplitude s must be nonnegative")
    sigma, lip_sq, C_sigma, growth = _trig_sigma(s, K_max)

    if name == "linear_probe":
        return CoefficientSet(
            name=name, dim=dim, B=lambda y: np.zeros((dim,) + np.shape(y)),
            A=_scalar_diffusion(dim, lambda y: np.ones(np.shape(y))), sigma=sigma,
            L_B=0.0, delta=1.0, C_A=1.0, L_A=0.0, C_sigma=C_sigma, growth=growth,
            K_max=K_max, sigma_lip_sq=lip_sq, sigma_zero=(s == 0.0), params={"s": s},
        )

    if name == "trig":
        a0 = float(p.get("a0", 1.0))
        a1 = float(p.get("a1", 0.5))
        if not (a1 >= 0 and a0 > a1):
            raise ValueError(f"trig: need a0 > a1 >= 0 for ellipticity, got a0={a0}, a1={a1}")
        bvec = _const_vector(dim, p, "b", 0.3)

        def B(y):
            y = np.asarray(y, float)
            return bvec.reshape((dim,) + (1,) * y.ndim) * np.sin(y)[None]

        return CoefficientSet(
            name=name, dim=dim, B=B, A=_scalar_diffusion(dim, lambda y: a0 + a1 * np.sin(y)),
            sigma=sigma, L_B=float(np.linalg.norm(bvec)), delta=a0 - a1, C_A=a0 + a1, L_A=a1,
            C_sigma=C_sigma, growth=growth, K_max=K_max, sigma_lip_sq=lip_sq,
            sigma_zero=(s == 0.0),
            params={"a0": a0, "a1": a1, "s": s, **{f"b{i + 1}": v for i, v in enumerate(bvec)}},
        )

    # rational
    delta = float(p.get("delta", 0.5))
    C_A = float(p.get("C_A", 1.5))
    if not (0 < delta <= C_A):
        raise ValueError(f"rational: need 0 < delta <= C_A, got delta={delta}, C_A={C_A}")
    bvec = _const_vector(dim, p, "b", 0.0)

    def B(y):
        y = np.asarray(y, float)
        return bvec.reshape((dim,) + (1,) * y.ndim) * np.arctan(y)[None]

    return CoefficientSet(
        name=name, dim=dim, B=B,
        A=_scalar_diffusion(dim, lambda y: delta + (C_A - delta) / (1 + y**2)),
        sigma=sigma, L_B=float(np.linalg.norm(bvec)), delta=delta, C_A=C_A,
        L_A=(C_A - delta) * _RATIONAL_SLOPE, C_sigma=C_sigma, growth=growth, K_max=K_max,
        sigma_lip_sq=lip_sq, sigma_zero=(s == 0.0),
        params={"delta": delta, "C_A": C_A, "s": s, **{f"b{i + 1}": v for i, v in enumerate(bvec)}},
    )
