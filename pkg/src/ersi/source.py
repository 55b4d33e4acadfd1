"""Random source model: variance profiles, cubic grid, seeded white noise.

The white noise is discretised cell by cell: over a cube ``K_t`` of side ``h``
the noise is replaced by ``h**-1.5 * Z_t`` with ``Z_t`` standard normal, one
independent draw per cell and per component.

Draws come from a counter-based generator (Philox4x64) keyed on
``(seed, sample)`` with the cell index as counter, so any block of cells of
any sample can be produced independently and in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtri

from .errors import ValidationError

VANISH_TOL = 1e-9
_U53 = 2.0**-53
# key domain bit for measurement-noise streams (source noise uses sample < 2**63)
MEASUREMENT_STREAM = 1 << 63


def _as_points(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if any(not h > l for l, h in zip(self.lo, self.hi)):
            raise ValidationError(f"degenerate box {self.lo} .. {self.hi}")

    @classmethod
    def cube(cls, half: float) -> "Box":
        return cls((-half,) * 3, (half,) * 3)

    @property
    def sides(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    def contains(self, x) -> np.ndarray:
        x = _as_points(x)
        return np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=-1)

    def max_radius(self) -> float:
        """Largest distance from the origin to a point of the box."""
        far = np.maximum(np.abs(self.lo), np.abs(self.hi))
        return float(np.linalg.norm(far))


@dataclass(frozen=True)
class VarianceProfile:
    """Three nonnegative strength fields ``sigma_j`` with a declared support box.

    ``sigma_fns[j](x)`` evaluates the smooth extension on all of R^3;
    :meth:`sigma` multiplies by the indicator of the support box, which is
    the field the forward model actually discretises.
    """

    name: str
    sigma_fns: tuple[Callable, Callable, Callable]
    support: Box
    variance_grad_fns: tuple[Callable, Callable, Callable] | None = None

    def sigma_smooth(self, x) -> np.ndarray:
        x = _as_points(x)
        return np.stack([f(x) for f in self.sigma_fns], axis=-1)

    def sigma(self, x) -> np.ndarray:
        x = _as_points(x)
        s = self.sigma_smooth(x)
        return np.where(self.support.contains(x)[..., None], s, 0.0)

    def variance(self, x, smooth: bool = False) -> np.ndarray:
        s = self.sigma_smooth(x) if smooth else self.sigma(x)
        return s * s

    def variance_gradient(self, x, step: float = 1e-5) -> np.ndarray:
        """Gradient of the smooth ``sigma_j**2``, shape ``(..., 3 comps, 3 dirs)``.

        Analytic for the builtin profiles; central differences otherwise
        (accurate to roughly ``step**2``).
        """
        x = _as_points(x)
        if self.variance_grad_fns is not None:
            return np.stack([f(x) for f in self.variance_grad_fns], axis=-2)
        out = np.empty(x.shape[:-1] + (3, 3))
        for d in range(3):
            e = np.zeros(3)
            e[d] = step
            out[..., :, d] = (self.variance(x + e, smooth=True) - self.variance(x - e, smooth=True)) / (2 * step)
        return out


def _r2(x):
    return np.einsum("...i,...i->...", x, x)


_A3 = np.array([0.0, 0.4, 0.4])


def _s1(x):
    return np.exp(-2.0 * _r2(x))


def _s2(x):
    r2 = _r2(x)
    return 0.6 * np.exp(-8.0 * (np.sqrt(r2) - 0.75) * r2)


def _s3(x):
    return 0.8 * np.exp(-4.0 * _r2(x - _A3)) + 0.8 * np.exp(-4.0 * _r2(x + _A3))


def _dv1(x):
    return (-8.0 * np.exp(-4.0 * _r2(x)))[..., None] * x


def _dv2(x):
    r2 = _r2(x)
    r = np.sqrt(r2)
    v = 0.36 * np.exp(-16.0 * (r - 0.75) * r2)
    # d/dr of -16 r^3 + 12 r^2, times rhat
    return (v * (24.0 - 48.0 * r))[..., None] * x


def _dv3(x):
    ea = np.exp(-4.0 * _r2(x - _A3))[..., None]
    eb = np.exp(-4.0 * _r2(x + _A3))[..., None]
    s = 0.8 * (ea + eb)
    ds = 0.8 * (-8.0 * (x - _A3) * ea - 8.0 * (x + _A3) * eb)
    return 2.0 * s * ds


def builtin_profile(name: str = "paper3d") -> VarianceProfile:
    """Named test profiles.

    ``paper3d`` is the three-component benchmark on ``[-1, 1]^3``: a centred
    Gaussian, a radial shell-like bump, and a pair of off-centre Gaussians.
    """
    if name != "paper3d":
        raise ValidationError(f"unknown profile {name!r}; known: ['paper3d']")
    return VarianceProfile(
        name="paper3d",
        sigma_fns=(_s1, _s2, _s3),
        support=Box.cube(1.0),
        variance_grad_fns=(_dv1, _dv2, _dv3),
    )


def zero_profile(support: Box | None = None) -> VarianceProfile:
    zero = lambda x: np.zeros(np.shape(x)[:-1])  # noqa: E731
    return VarianceProfile("zero", (zero, zero, zero), support or Box.cube(1.0))


def constant_profile(values, support: Box | None = None) -> VarianceProfile:
    fns = tuple((lambda x, v=float(v): np.full(np.shape(x)[:-1], v)) for v in values)
    grads = tuple((lambda x: np.zeros(np.shape(x))) for _ in values)
    return VarianceProfile("constant", fns, support or Box.cube(1.0), grads)


@dataclass(frozen=True)
class SourceGrid:
    """Regular grid of cubic cells; ``centers`` are cell midpoints (C order)."""

    origin: tuple[float, float, float]
    h: float
    counts: tuple[int, int, int]

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @property
    def cell_volume(self) -> float:
        return self.h**3

    def axis(self, d: int) -> np.ndarray:
        return self.origin[d] + self.h * (np.arange(self.counts[d]) + 0.5)

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.axis(0), self.axis(1), self.axis(2)

    def centers(self, t0: int = 0, t1: int | None = None) -> np.ndarray:
        """Cell centres with flat indices ``t0 <= t < t1``, shape ``(n, 3)``."""
        t1 = self.n_cells if t1 is None else t1
        idx = np.unravel_index(np.arange(t0, t1), self.counts)
        return np.stack([self.axis(d)[idx[d]] for d in range(3)], axis=-1)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + self.h * np.asarray(self.counts)


def build_grid(support: Box, h: float) -> SourceGrid:
    if not h > 0:
        raise ValidationError(f"grid step must be positive, got {h}")
    # tolerate float noise in side/h (2/0.025 is 80.00000000000001)
    counts = tuple(int(math.ceil(s / h - 1e-9)) for s in support.sides)
    return SourceGrid(tuple(float(v) for v in support.lo), float(h), counts)


def philox_uniform(key_hi: int, key_lo: int, c0: int, n_blocks: int) -> np.ndarray:
    """Uniforms in (0, 1), shape ``(n_blocks, 4)``, for counters ``c0 .. c0+n_blocks-1``."""
    bg = np.random.Philox(key=np.array([key_hi, key_lo], dtype=np.uint64), counter=[c0, 0, 0, 0])
    raw = bg.random_raw(4 * n_blocks).reshape(n_blocks, 4)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def normal_draws(seed: int, j: int, t0: int, t1: int) -> np.ndarray:
    """Standard normals ``Z[t, m]`` for cells ``t0 <= t < t1`` of sample ``j``."""
    if t1 <= t0:
        return np.empty((0, 3))
    return ndtri(philox_uniform(seed, j, t0, t1 - t0)[:, :3])


@dataclass(frozen=True)
class NoiseRealization:
    sample: int
    draws: np.ndarray  # (n_cells, 3)


def sample_noise(grid: SourceGrid, seed: int, j: int) -> NoiseRealization:
    return NoiseRealization(j, normal_draws(seed, j, 0, grid.n_cells))


def noise_matrix(seed: int, samples, t0: int, t1: int) -> np.ndarray:
    """Draws for a cell block arranged as ``(3*(t1-t0), n_samples)``, row ``3t+m``."""
    samples = list(samples)
    out = np.empty((3 * (t1 - t0), len(samples)))
    for col, j in enumerate(samples):
        out[:, col] = normal_draws(seed, j, t0, t1).reshape(-1)
    return out


def active_cells(grid: SourceGrid, profile: VarianceProfile) -> np.ndarray:
    """Flat indices of cells where some ``sigma_j`` exceeds the vanishing tolerance."""
    s = profile.sigma(grid.centers())
    return np.flatnonzero(np.any(s > VANISH_TOL, axis=-1))
