"""Error metrics, sweeps, error budget and plot-ready CSV export."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elastics import MaterialParams
from .errors import ValidationError
from .forward import Dataset, ObservationSet, add_noise, simulate
from .probes import triple_arrays
from .reconstruct import (
    FourierField,
    VarianceField,
    build_lattice,
    correlation_stats,
    exact_fourier_field,
    fourier_data,
    synthesize,
    synthesize_axes,
)
from .source import Box, SourceGrid, VarianceProfile

SWEEP_BETAS = (0.8, 0.875, 1.0, 1.125, 1.25)


def fmt(v) -> str:
    """Floats at 17 significant digits so tables round-trip exactly."""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, columns, rows, header_text: str = "") -> None:
    """CSV with the run configuration echoed as leading ``#`` comment lines."""
    with open(path, "w", newline="\n") as fh:
        for line in header_text.splitlines():
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(row[c]) for c in columns) + "\n")


def truth_values(profile: VarianceProfile, grid: SourceGrid) -> np.ndarray:
    """``sigma_j^2`` at the cell centres, shape ``(3, nx, ny, nz)``."""
    return np.moveaxis(profile.variance(grid.centers()), -1, 0).reshape(3, *grid.counts)


@dataclass
class ErrorReport:
    errors: np.ndarray  # relative L2 error per component
    max_abs: float
    abs_l2: float  # || sigma_r^2 - sigma^2 ||_{L2(D)} over all components
    params: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    def row(self, parameter) -> dict:
        return {
            "parameter": parameter,
            "err1": float(self.errors[0]),
            "err2": float(self.errors[1]),
            "err3": float(self.errors[2]),
            "mean": self.mean,
        }


def run_params(data: Dataset, grid: SourceGrid, beta: float, delta_xi: float) -> dict:
    return {
        "kappa": data.params.kappa,
        "beta": float(beta),
        "n_samples": data.n_samples,
        "n_obs": data.obs.count,
        "h": grid.h,
        "noise": data.noise_level,
        "seed": data.seed,
        "delta_xi": float(delta_xi),
    }


def l2_relative_error(recon: VarianceField, truth: VarianceProfile, params: dict | None = None) -> ErrorReport:
    """Midpoint-rule relative L2 error of each reconstructed component."""
    grid = recon.grid
    if recon.values.shape != (3, *grid.counts):
        raise ValidationError(f"field of shape {recon.values.shape} does not match grid {grid.counts}")
    t = truth_values(truth, grid)
    diff = recon.values - t
    num = np.sqrt(np.sum(diff**2, axis=(1, 2, 3)))
    den = np.sqrt(np.sum(t**2, axis=(1, 2, 3)))
    with np.errstate(divide="ignore", invalid="ignore"):
        errors = np.where(den > 0, num / np.where(den > 0, den, 1), np.where(num > 0, np.inf, 0.0))
    abs_l2 = float(np.sqrt(np.sum(diff**2) * grid.cell_volume))
    return ErrorReport(errors=errors, max_abs=float(np.max(np.abs(diff))), abs_l2=abs_l2, params=dict(params or {}))


# ---------------------------------------------------------------- oracles

_A3 = np.array([0.0, 0.4, 0.4])


def _radial_transform(f, q, r_max=3.0, n=600):
    """``4 pi int_0^r_max f(r) r^2 sinc(q r) dr`` by Gauss-Legendre."""
    x, w = np.polynomial.legendre.leggauss(n)
    r = 0.5 * r_max * (x + 1)
    w = 0.5 * r_max * w
    q = np.asarray(q, float)
    kern = np.sinc(np.multiply.outer(q, r) / np.pi)
    return 4 * np.pi * kern @ (w * r * r * f(r))


def paper3d_variance_transform(xi) -> np.ndarray:
    """Transforms ``int sigma_j^2(x) exp(-i x.xi) dx`` of the smooth builtin
    profiles over R^3, shape ``(n, 3)`` (complex)."""
    xi = np.atleast_2d(np.asarray(xi, float))
    q2 = np.einsum("ij,ij->i", xi, xi)
    out = np.empty((len(xi), 3), complex)
    out[:, 0] = (np.pi / 4) ** 1.5 * np.exp(-q2 / 16)
    out[:, 1] = _radial_transform(lambda r: 0.36 * np.exp(-16 * r**3 + 12 * r**2), np.sqrt(q2))
    g = (np.pi / 8) ** 1.5 * np.exp(-q2 / 32)
    out[:, 2] = 0.64 * g * (2 * np.cos(xi @ _A3) + 2 * np.exp(-8 * _A3 @ _A3))
    return out


def h1_norms(profile: VarianceProfile, box: Box | None = None, n: int = 160) -> np.ndarray:
    """``||sigma_j^2||_{H^1}`` of the smooth profiles by midpoint quadrature.

    The default box is the support box widened by 1.5 on every side, which
    captures the R^3 norm of the builtin profiles to well below 1e-8.
    """
    if box is None:
        lo = np.asarray(profile.support.lo) - 1.5
        hi = np.asarray(profile.support.hi) + 1.5
        box = Box(tuple(lo), tuple(hi))
    hs = box.sides / n
    ax = [box.lo[d] + hs[d] * (np.arange(n) + 0.5) for d in range(3)]
    total = np.zeros(3)
    for x0 in ax[0]:
        pts = np.stack(np.meshgrid([x0], ax[1], ax[2], indexing="ij"), axis=-1).reshape(-1, 3)
        v = profile.variance(pts, smooth=True)
        g = profile.variance_gradient(pts)
        total += np.sum(v * v, axis=0) + np.sum(g * g, axis=(0, 2))
    return np.sqrt(total * np.prod(hs))


def l2_sigma_sq(profile: VarianceProfile, grid: SourceGrid) -> float:
    """``||sigma||_{L2(D)}^2 = sum_j int_D sigma_j^2`` by midpoint rule."""
    return float(np.sum(profile.variance(grid.centers())) * grid.cell_volume)


def truncation_error_sq(profile_transform, truth: VarianceProfile, p: MaterialParams, beta, delta_xi, grid) -> float:
    """``||e_1||^2_{L2(D)}`` for a synthesis fed with exact transforms."""
    lattice = build_lattice(beta, delta_xi, p)
    vf = synthesize(exact_fourier_field(profile_transform, lattice), grid)
    t = np.moveaxis(truth.variance(grid.centers(), smooth=True), -1, 0).reshape(3, *grid.counts)
    return float(np.sum((vf.values - t) ** 2) * grid.cell_volume)


def truncation_bound_sq(M: float, cutoff: float) -> float:
    return 3 * M * M / (1 + cutoff * cutoff)


# ---------------------------------------------------------------- budget


@dataclass
class ErrorBudget:
    M: float
    cutoff: float
    C1: float
    C2: float
    C3: float
    epsilon: float
    n_samples: int
    D1: float
    D2: float
    measured: float | None = None

    @property
    def truncation_term(self) -> float:
        return math.sqrt(3) * self.M / math.sqrt(1 + self.cutoff**2)

    @property
    def volume_factor(self) -> float:
        return math.sqrt(4 * math.pi / 3) * self.cutoff**1.5

    @property
    def mc_term(self) -> float:
        return self.volume_factor * self.C1 * self.C2 / math.sqrt(self.n_samples)

    @property
    def data_term(self) -> float:
        return self.volume_factor * self.C1 * self.C3 * self.epsilon

    @property
    def total(self) -> float:
        return self.mc_term + self.data_term + self.truncation_term

    @property
    def holds(self) -> bool:
        return self.measured is None or self.measured <= self.total


def amplification_constant(p: MaterialParams, cutoff: float, delta_xi: float = 0.5) -> float:
    """``max cond(A) / ||A||_2`` over the lattice points inside ``cutoff``."""
    lattice = build_lattice(cutoff / p.kappa_s, delta_xi, p)
    d = triple_arrays(lattice.points, p.kappa_s)
    return float(np.max(d["cond"] / d["norm"]))


def data_error_scale(clean: Dataset, noisy: Dataset) -> float:
    """``epsilon``: worst per-sample L1(sphere) deviation of u or Du."""
    w = clean.obs.weight
    du = w * np.sum(np.linalg.norm(noisy.u - clean.u, axis=-1), axis=-1)
    dDu = w * np.sum(np.linalg.norm(noisy.Du - clean.Du, axis=-1), axis=-1)
    return float(max(du.max(), dDu.max()))


def measure_c3(clean: Dataset, noisy: Dataset, p: MaterialParams, cutoff: float, delta_xi=0.5, n_points=64):
    """Measured ``C_3 = max ||b(noisy) - b(clean)|| / epsilon`` over lattice points.

    Points are an evenly strided subset of the half lattice (deterministic).
    Returns ``(C3, epsilon)``.
    """
    eps = data_error_scale(clean, noisy)
    lattice = build_lattice(cutoff / p.kappa_s, delta_xi, p)
    pts = lattice.points[lattice.half_mask()]
    stride = max(1, len(pts) // n_points)
    d = triple_arrays(pts[::stride], p.kappa_s)
    bc = correlation_stats(clean, d["zeta"], d["eta"]).b
    bn = correlation_stats(noisy, d["zeta"], d["eta"]).b
    if eps == 0:
        return 0.0, 0.0
    return float(np.max(np.linalg.norm(bn - bc, axis=-1)) / eps), eps


def error_budget(
    profile: VarianceProfile,
    p: MaterialParams,
    beta: float,
    n_samples: int,
    epsilon_measured: float,
    c3: float,
    grid: SourceGrid,
    *,
    delta_xi: float = 0.5,
    M: float | None = None,
    measured: float | None = None,
) -> ErrorBudget:
    cutoff = beta * p.kappa_s
    if M is None:
        M = float(np.max(h1_norms(profile)))
    l2sq = l2_sigma_sq(profile, grid)
    return ErrorBudget(
        M=M,
        cutoff=cutoff,
        C1=amplification_constant(p, cutoff, delta_xi),
        C2=math.sqrt(2) * l2sq,
        C3=c3,
        epsilon=epsilon_measured,
        n_samples=int(n_samples),
        # |U| = 1 and |DU| <= mu kappa_s ; E|I_l| <= ||sigma||_{L2}
        D1=1 + p.mu * p.kappa_s,
        D2=math.sqrt(l2sq),
        measured=measured,
    )


# ---------------------------------------------------------------- sweeps


def sweep_cutoff(
    data: Dataset,
    truth: VarianceProfile,
    grid: SourceGrid,
    xi_max_list,
    delta_xi: float = 0.5,
    *,
    theta: float = 0.0,
    workers: int = 1,
    fourier: FourierField | None = None,
):
    """One error report per cutoff, all from a single dataset.

    The Fourier data is computed once at the largest cutoff; smaller cutoffs
    are restrictions of it (probes depend only on xi and kappa_s).
    """
    xi_max_list = [float(v) for v in xi_max_list]
    if not xi_max_list:
        raise ValidationError("empty cutoff list")
    p = data.params
    if fourier is None:
        lattice = build_lattice(max(xi_max_list) / p.kappa_s, delta_xi, p)
        fourier = fourier_data(data, lattice, theta=theta, workers=workers)
    reports = []
    for xm in xi_max_list:
        vf = synthesize(fourier.truncated(xm), grid)
        reports.append(
            l2_relative_error(vf, truth, run_params(data, grid, xm / p.kappa_s, delta_xi) | {"xi_max": xm})
        )
    return reports, fourier


def sweep_frequency(
    kappa_list,
    *,
    lam: float,
    mu: float,
    grid: SourceGrid,
    profile: VarianceProfile,
    obs: ObservationSet,
    n_samples: int,
    seed: int,
    noise_level: float,
    noise_mode: str = "component",
    delta_xi: float = 0.5,
    betas=SWEEP_BETAS,
    workers: int = 1,
):
    """Best-cutoff error per frequency; every row reuses the same seeds."""
    kappa_list = [float(k) for k in kappa_list]
    if not kappa_list:
        raise ValidationError("empty frequency list")
    out = []
    for kappa in kappa_list:
        p = MaterialParams(lam, mu, kappa)
        data = simulate(grid, profile, p, obs, n_samples, seed, workers=workers)
        data = add_noise(data, noise_level, seed, mode=noise_mode)
        cutoffs = [b * p.kappa_s for b in betas]
        reports, _ = sweep_cutoff(data, profile, grid, cutoffs, delta_xi, workers=workers)
        best = min(range(len(reports)), key=lambda i: reports[i].mean)
        out.append(reports[best])
    return out


# ---------------------------------------------------------------- slices


def slice_rows(fourier: FourierField, truth: VarianceProfile, grid: SourceGrid):
    """Rows for the planes x=0, y=0, z=0 on the grid's in-plane cell centres."""
    axes = grid.axes
    rows = []
    for d, name in enumerate("xyz"):
        ax = [a for a in axes]
        ax[d] = np.array([0.0])
        vals, _ = synthesize_axes(fourier, *ax)
        pts = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
        t = np.moveaxis(truth.variance(pts), -1, 0)
        pts = pts.reshape(-1, 3)
        for j in range(3):
            r = vals[j].reshape(-1)
            tv = t[j].reshape(-1)
            for k in range(len(pts)):
                rows.append(
                    {
                        "plane": f"{name}=0",
                        "x": pts[k, 0],
                        "y": pts[k, 1],
                        "z": pts[k, 2],
                        "component": j + 1,
                        "reconstructed": r[k],
                        "truth": tv[k],
                        "difference": r[k] - tv[k],
                    }
                )
    return rows


SLICE_COLUMNS = ["plane", "x", "y", "z", "component", "reconstructed", "truth", "difference"]
TABLE_COLUMNS = ["parameter", "err1", "err2", "err3", "mean"]
SURVEY_COLUMNS = ["radius", "construction", "mean", "max", "median"]


def dataset_fourier(data: Dataset, p: MaterialParams, beta: float, delta_xi: float, workers: int = 1) -> FourierField:
    return fourier_data(data, build_lattice(beta, delta_xi, p), workers=workers)


__all__ = [
    "ErrorBudget",
    "ErrorReport",
    "SLICE_COLUMNS",
    "SURVEY_COLUMNS",
    "TABLE_COLUMNS",
    "amplification_constant",
    "data_error_scale",
    "error_budget",
    "h1_norms",
    "l2_relative_error",
    "l2_sigma_sq",
    "run_params",
    "measure_c3",
    "paper3d_variance_transform",
    "slice_rows",
    "sweep_cutoff",
    "sweep_frequency",
    "truncation_bound_sq",
    "truncation_error_sq",
    "truth_values",
    "write_csv",
]
