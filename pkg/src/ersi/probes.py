"""Probe pairs and the 3x3 coefficient matrix for one frequency point.

For a frequency point ``xi`` with ``|xi| < 2 kappa_s`` every pair of real
plane-wave probes with ``zeta_1 + zeta_2 = xi`` has the form

    zeta_{1,2} = xi/2 +- sqrt(kappa_s^2 - |xi|^2/4) * alpha,  alpha . xi = 0.

Pair ``k`` picks ``alpha`` orthogonal to both ``xi`` and ``e_k`` and takes
each ``eta_l`` as the normalised projection of ``e_k`` onto ``zeta_l``'s
orthogonal complement, which maximises the diagonal entry
``eta_{1k} eta_{2k} = 1 - xi_k^2 / (4 kappa_s^2)``.  Pairs 2 and 3 are the
cyclic coordinate relabelling of pair 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elastics import MaterialParams, PlaneWaveProbe
from .errors import OutOfBandError
from .forward import fibonacci_directions

DEFAULT_COND_CEILING = 1e3


@dataclass(frozen=True)
class ProbePair:
    U1: PlaneWaveProbe
    U2: PlaneWaveProbe
    xi: np.ndarray
    alpha: np.ndarray
    k: int  # 1-based axis whose diagonal entry is maximised


@dataclass(frozen=True)
class ProbeTriple:
    pairs: tuple[ProbePair, ProbePair, ProbePair]
    A: np.ndarray
    cond: float
    norm: float
    ill_conditioned: bool

    @property
    def xi(self) -> np.ndarray:
        return self.pairs[0].xi


def _check_band(xi, kappa_s):
    r = np.linalg.norm(xi, axis=-1)
    if np.any(r >= 2 * kappa_s):
        raise OutOfBandError(f"|xi| = {np.max(r):.6g} not below 2 kappa_s = {2 * kappa_s:.6g}")
    return r


def _degenerate_alpha(k: int, theta: float) -> np.ndarray:
    a = np.zeros(3)
    a[(k + 1) % 3] = np.sin(theta)
    a[(k + 2) % 3] = np.cos(theta)
    return a


def _etas(zeta, k, kappa_s):
    """Normalised projection of e_k orthogonal to each zeta (last axis)."""
    zk = zeta[..., k] / kappa_s
    eta = -(zk / kappa_s)[..., None] * zeta
    eta[..., k] += 1.0
    return eta / np.sqrt(1.0 - zk * zk)[..., None]


def pair_arrays(xi, k: int, kappa_s: float, theta: float = 0.0):
    """Optimised pair ``k`` (0-based) for an array of frequency points.

    Returns ``(alpha, zeta1, zeta2, eta1, eta2)``, each of shape ``(n, 3)``.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    r = _check_band(xi, kappa_s)
    e = np.zeros(3)
    e[k] = 1.0
    cross = np.cross(e, xi)
    nrm = np.linalg.norm(cross, axis=-1)
    degenerate = nrm <= 1e-14 * kappa_s
    alpha = np.where(
        degenerate[:, None],
        _degenerate_alpha(k, theta),
        cross / np.where(degenerate, 1.0, nrm)[:, None],
    )
    c = np.sqrt(kappa_s**2 - 0.25 * r * r)[:, None]
    zeta1 = 0.5 * xi + c * alpha
    zeta2 = 0.5 * xi - c * alpha
    return alpha, zeta1, zeta2, _etas(zeta1, k, kappa_s), _etas(zeta2, k, kappa_s)


def triple_arrays(xi, kappa_s: float, theta: float = 0.0):
    """Vectorised triple design.

    Returns a dict with ``zeta`` and ``eta`` of shape ``(n, 3 pairs, 2, 3)``,
    ``A`` of shape ``(n, 3, 3)``, and per-point ``cond`` and ``norm``.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    n = len(xi)
    zeta = np.empty((n, 3, 2, 3))
    eta = np.empty((n, 3, 2, 3))
    alpha = np.empty((n, 3, 3))
    for k in range(3):
        alpha[:, k], zeta[:, k, 0], zeta[:, k, 1], eta[:, k, 0], eta[:, k, 1] = pair_arrays(xi, k, kappa_s, theta)
    A = eta[:, :, 0, :] * eta[:, :, 1, :]
    s = np.linalg.svd(A, compute_uv=False)
    with np.errstate(divide="ignore"):
        cond = s[:, 0] / s[:, 2]
    return {"xi": xi, "alpha": alpha, "zeta": zeta, "eta": eta, "A": A, "cond": cond, "norm": s[:, 0]}


def design_pair(xi, k: int, p: MaterialParams, theta: float = 0.0) -> ProbePair:
    """Probe pair maximising diagonal entry ``k`` (1-based) of the coefficient matrix."""
    if k not in (1, 2, 3):
        raise ValueError(f"axis index must be 1, 2 or 3, got {k}")
    xi = np.asarray(xi, dtype=float).reshape(3)
    alpha, z1, z2, e1, e2 = (a[0] for a in pair_arrays(xi, k - 1, p.kappa_s, theta))
    return ProbePair(
        U1=PlaneWaveProbe(e1, z1, p.kappa_s),
        U2=PlaneWaveProbe(e2, z2, p.kappa_s),
        xi=xi,
        alpha=alpha,
        k=k,
    )


def design_triple(xi, p: MaterialParams, theta: float = 0.0, cond_ceiling: float = DEFAULT_COND_CEILING) -> ProbeTriple:
    pairs = tuple(design_pair(xi, k, p, theta) for k in (1, 2, 3))
    A = np.array([pr.U1.eta * pr.U2.eta for pr in pairs])
    s = np.linalg.svd(A, compute_uv=False)
    cond = float(s[0] / s[2]) if s[2] > 0 else float("inf")
    return ProbeTriple(pairs=pairs, A=A, cond=cond, norm=float(s[0]), ill_conditioned=cond > cond_ceiling)


def _unit_perp_basis(v):
    """Two orthonormal vectors spanning the complement of each row of v."""
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    helper = np.where(np.abs(v[:, :1]) < 0.9, np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
    b1 = np.cross(v, helper)
    b1 /= np.linalg.norm(b1, axis=-1, keepdims=True)
    return b1, np.cross(v, b1)


def random_triple_arrays(xi, kappa_s: float, rng: np.random.Generator):
    """Admissible but unoptimised triples: alpha uniform on the circle
    orthogonal to xi, each eta uniform on the circle orthogonal to its zeta."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    r = _check_band(xi, kappa_s)
    n = len(xi)
    zeta = np.empty((n, 3, 2, 3))
    eta = np.empty((n, 3, 2, 3))
    c = np.sqrt(kappa_s**2 - 0.25 * r * r)[:, None]
    zero = r == 0
    safe = np.where(zero[:, None], np.array([0, 0, 1.0]), xi)
    b1, b2 = _unit_perp_basis(safe)
    for k in range(3):
        phi = rng.uniform(0, 2 * np.pi, n)[:, None]
        alpha = np.cos(phi) * b1 + np.sin(phi) * b2
        rand_dir = rng.normal(size=(n, 3))
        rand_dir /= np.linalg.norm(rand_dir, axis=-1, keepdims=True)
        alpha = np.where(zero[:, None], rand_dir, alpha)
        for l, sign in enumerate((1.0, -1.0)):
            z = 0.5 * xi + sign * c * alpha
            zeta[:, k, l] = z
            e1, e2 = _unit_perp_basis(z)
            psi = rng.uniform(0, 2 * np.pi, n)[:, None]
            eta[:, k, l] = np.cos(psi) * e1 + np.sin(psi) * e2
    A = eta[:, :, 0, :] * eta[:, :, 1, :]
    s = np.linalg.svd(A, compute_uv=False)
    with np.errstate(divide="ignore"):
        cond = s[:, 0] / s[:, 2]
    return {"xi": xi, "zeta": zeta, "eta": eta, "A": A, "cond": cond, "norm": s[:, 0]}


def conditioning_survey(radii, n_dirs: int, p: MaterialParams, seed: int = 0, theta: float = 0.0):
    """cond(A) statistics over Fibonacci directions at each radius.

    Returns rows ``{radius, construction, mean, max, median}`` for the
    optimised and a seeded random construction.
    """
    dirs = fibonacci_directions(n_dirs)
    rng = np.random.Generator(np.random.Philox(seed))
    rows = []
    for radius in radii:
        xi = float(radius) * dirs
        for name, stats in (
            ("optimized", triple_arrays(xi, p.kappa_s, theta)),
            ("random", random_triple_arrays(xi, p.kappa_s, rng)),
        ):
            c = stats["cond"]
            rows.append(
                {
                    "radius": float(radius),
                    "construction": name,
                    "mean": float(np.mean(c)),
                    "max": float(np.max(c)),
                    "median": float(np.median(c)),
                }
            )
    return rows
