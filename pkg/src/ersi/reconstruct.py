"""Single-frequency variance reconstruction.

Pipeline per frequency point ``xi`` of a Cartesian lattice inside the ball
``|xi| <= beta * kappa_s``:

1. design three probe pairs (``probes.triple_arrays``),
2. evaluate the boundary functional of every probe on every sample,
3. average the per-sample products of paired functionals -> ``b``,
4. solve ``A x = b``; ``x`` holds the variance transforms at ``-xi``.

Only one point of each ``+-xi`` pair is solved; the other is filled by
conjugation, so the synthesised field is real up to rounding.  Synthesis is
a direct lattice sum evaluated separably along the three axes.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .elastics import MaterialParams, PlaneWaveProbe, probe_field, probe_traction
from .errors import FormatError, NumericalError, ValidationError
from .forward import Dataset
from .probes import DEFAULT_COND_CEILING, ProbeTriple, triple_arrays
from .source import SourceGrid

FIELD_MAGIC = b"ERSF"
FIELD_VERSION = 1
_FIELD_HEADER = struct.Struct("<4sIdddddIIIddddI")
_TRAILER_MAGIC = b"CONF"


@dataclass(frozen=True)
class FrequencyLattice:
    """Multiples of ``delta`` inside the closed ball of radius ``cutoff``."""

    delta: float
    cutoff: float
    half_width: int  # N: indices run over -N..N per axis
    indices: np.ndarray  # (n, 3) int

    @property
    def points(self) -> np.ndarray:
        return self.delta * self.indices

    @property
    def size(self) -> int:
        return len(self.indices)

    def half_mask(self) -> np.ndarray:
        """Origin plus the lexicographically positive member of each +-xi pair."""
        n = self.indices
        first = np.where(n[:, 0] != 0, n[:, 0], np.where(n[:, 1] != 0, n[:, 1], n[:, 2]))
        return first >= 0


def lattice_indices(cutoff: float, delta: float):
    n_max = int(math.floor(cutoff / delta + 1e-9))
    r = np.arange(-n_max, n_max + 1)
    idx = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    keep = delta * np.linalg.norm(idx, axis=-1) <= cutoff * (1 + 1e-12)
    return n_max, idx[keep]


def build_lattice(beta: float, delta_xi: float, p: MaterialParams) -> FrequencyLattice:
    if not 0 < beta < 2:
        raise ValidationError(f"beta must lie in (0, 2), got {beta}")
    if not delta_xi > 0:
        raise ValidationError(f"lattice spacing must be positive, got {delta_xi}")
    cutoff = beta * p.kappa_s
    n_max, idx = lattice_indices(cutoff, delta_xi)
    return FrequencyLattice(float(delta_xi), float(cutoff), n_max, idx)


def _data_matrix(data: Dataset) -> np.ndarray:
    """Stack ``[Du_m; u_m]`` as a ``(6 N_ob, N_s)`` matrix with rows (field, m, i)."""
    du = np.transpose(data.Du, (2, 1, 0)).reshape(-1, data.n_samples)
    u = np.transpose(data.u, (2, 1, 0)).reshape(-1, data.n_samples)
    return np.concatenate([du, u])


def _probe_rows(obs, zeta, eta, mu) -> np.ndarray:
    """Rows that contract with ``_data_matrix`` to give boundary functionals."""
    E = np.exp(1j * (zeta @ obs.points.T))  # (P, N_ob)
    F = zeta @ obs.normals.T
    left = (eta[:, :, None] * E[:, None, :]).reshape(len(zeta), -1)
    right = (-1j * mu) * (eta[:, :, None] * (E * F)[:, None, :]).reshape(len(zeta), -1)
    return obs.weight * np.concatenate([left, right], axis=1)


def boundary_functionals(data: Dataset, zeta, eta, *, dmat=None) -> np.ndarray:
    """Quadrature of ``Du . U - DU . u`` over the sphere for many probes.

    ``zeta``/``eta`` have shape ``(P, 3)``; returns ``(P, N_s)``.  Dot
    products are bilinear (no conjugation).
    """
    zeta = np.atleast_2d(zeta)
    eta = np.atleast_2d(eta)
    if dmat is None:
        dmat = _data_matrix(data)
    return _probe_rows(data.obs, zeta, eta, data.params.mu) @ dmat


def boundary_functional(data: Dataset, j: int, probe: PlaneWaveProbe, p: MaterialParams) -> complex:
    """Boundary functional of one probe on sample ``j`` (reference implementation)."""
    if not 0 <= j < data.n_samples:
        raise IndexError(f"sample {j} out of range for {data.n_samples} samples")
    obs = data.obs
    U = probe_field(probe, obs.points)
    DU = probe_traction(probe, obs.points, obs.normals, p)
    return complex(obs.weight * (np.sum(data.Du[j] * U) - np.sum(DU * data.u[j])))


@dataclass(frozen=True)
class Correlation:
    b: np.ndarray  # (..., 3) complex
    stderr: np.ndarray  # (..., 3) real
    s_var: np.ndarray  # (..., 3) sample variance of the per-sample products


def _correlate(I: np.ndarray) -> Correlation:
    """``I`` has shape (n_xi, 3 pairs, 2, N_s)."""
    s = I[:, :, 0, :] * I[:, :, 1, :]
    n = s.shape[-1]
    b = s.mean(axis=-1)
    if n > 1:
        var = s.real.var(axis=-1, ddof=1) + s.imag.var(axis=-1, ddof=1)
    else:
        var = np.zeros(b.shape)
    return Correlation(b=b, stderr=np.sqrt(var / n), s_var=var)


def correlation_stats(data: Dataset, zeta, eta, *, dmat=None) -> Correlation:
    """Correlation data for triples given as arrays of shape ``(n, 3, 2, 3)``."""
    if data.n_samples < 1:
        raise ValidationError("empty dataset")
    zeta = np.asarray(zeta)
    n = zeta.shape[0]
    I = boundary_functionals(data, zeta.reshape(-1, 3), np.asarray(eta).reshape(-1, 3), dmat=dmat)
    return _correlate(I.reshape(n, 3, 2, -1))


def _triple_stack(triple: ProbeTriple):
    zeta = np.array([[pr.U1.zeta, pr.U2.zeta] for pr in triple.pairs])[None]
    eta = np.array([[pr.U1.eta, pr.U2.eta] for pr in triple.pairs])[None]
    return zeta, eta


def correlation_rhs(data: Dataset, triple: ProbeTriple, p: MaterialParams | None = None) -> np.ndarray:
    """Monte Carlo mean of the paired boundary functionals, one entry per pair."""
    zeta, eta = _triple_stack(triple)
    return correlation_stats(data, zeta, eta).b[0]


def solve_point(triple: ProbeTriple, b) -> np.ndarray:
    """Solve ``A x = b``; ``x`` is the variance transform triple at ``-xi``."""
    if triple.ill_conditioned:
        raise NumericalError(f"coefficient matrix ill-conditioned (cond = {triple.cond:.3g})")
    try:
        return np.linalg.solve(triple.A, np.asarray(b, dtype=complex))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(str(exc)) from exc


@dataclass
class FourierField:
    """Variance transforms on a dense ``(2N+1)^3`` cube; zero outside the lattice ball."""

    delta: float
    cutoff: float
    values: np.ndarray  # (3, M, M, M) complex, axis index n + N
    inside: np.ndarray  # (M, M, M) bool
    cond: np.ndarray  # (M, M, M), nan outside
    skipped: np.ndarray  # (M, M, M) bool
    stderr: np.ndarray | None = None  # (3, M, M, M) standard error of b

    @property
    def half_width(self) -> int:
        return (self.values.shape[1] - 1) // 2

    @property
    def n_skipped(self) -> int:
        return int(self.skipped.sum())

    def radii(self) -> np.ndarray:
        r = self.delta * np.arange(-self.half_width, self.half_width + 1)
        return np.sqrt(r[:, None, None] ** 2 + r[None, :, None] ** 2 + r[None, None, :] ** 2)

    def truncated(self, cutoff: float) -> "FourierField":
        if cutoff > self.cutoff * (1 + 1e-12):
            raise ValidationError(f"cutoff {cutoff} exceeds computed cutoff {self.cutoff}")
        keep = self.inside & (self.radii() <= cutoff * (1 + 1e-12))
        return FourierField(
            delta=self.delta,
            cutoff=float(cutoff),
            values=np.where(keep, self.values, 0),
            inside=keep,
            cond=np.where(keep, self.cond, np.nan),
            skipped=self.skipped & keep,
            stderr=None if self.stderr is None else np.where(keep, self.stderr, 0),
        )

    def max_cond(self) -> float:
        c = self.cond[self.inside & ~self.skipped]
        return float(np.max(c)) if c.size else float("nan")


def _empty_field(lattice: FrequencyLattice) -> FourierField:
    m = 2 * lattice.half_width + 1
    inside = np.zeros((m, m, m), bool)
    pos = lattice.indices + lattice.half_width
    inside[tuple(pos.T)] = True
    return FourierField(
        delta=lattice.delta,
        cutoff=lattice.cutoff,
        values=np.zeros((3, m, m, m), complex),
        inside=inside,
        cond=np.full((m, m, m), np.nan),
        skipped=np.zeros((m, m, m), bool),
        stderr=np.zeros((3, m, m, m)),
    )


def fourier_data(
    data: Dataset,
    lattice: FrequencyLattice,
    *,
    theta: float = 0.0,
    cond_ceiling: float = DEFAULT_COND_CEILING,
    workers: int = 1,
    batch: int = 64,
) -> FourierField:
    """Solve every half-lattice point and fill the rest by conjugate symmetry."""
    p = data.params
    field = _empty_field(lattice)
    N = lattice.half_width
    idx = lattice.indices[lattice.half_mask()]
    design = triple_arrays(lattice.delta * idx, p.kappa_s, theta)
    ok = design["cond"] <= cond_ceiling
    solve_idx = np.flatnonzero(ok)
    dmat = _data_matrix(data)
    batches = [solve_idx[a : a + batch] for a in range(0, len(solve_idx), batch)]

    def work(sel):
        corr = correlation_stats(data, design["zeta"][sel], design["eta"][sel], dmat=dmat)
        x = np.linalg.solve(design["A"][sel], corr.b[..., None])[..., 0]
        return x, corr.stderr

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool, threadpool_limits(1, user_api="blas"):
        results = list(pool.map(work, batches))

    x = np.zeros((len(idx), 3), complex)
    se = np.zeros((len(idx), 3))
    for sel, (xs, ss) in zip(batches, results):
        x[sel] = xs
        se[sel] = ss

    # x sits at -xi; its conjugate at +xi
    neg = tuple((N - idx).T)
    pos = tuple((N + idx).T)
    origin = np.all(idx == 0, axis=1)
    for j in range(3):
        field.values[j][pos] = np.conj(x[:, j])
        field.values[j][neg] = x[:, j]
        field.values[j][tuple((N + idx[origin]).T)] = x[origin, j].real
        field.stderr[j][pos] = se[:, j]
        field.stderr[j][neg] = se[:, j]
    field.cond[pos] = design["cond"]
    field.cond[neg] = design["cond"]
    field.skipped[pos] = ~ok
    field.skipped[neg] = ~ok
    return field


def exact_fourier_field(transform, lattice: FrequencyLattice) -> FourierField:
    """Fourier field filled from a callable ``transform(xi) -> (n, 3)`` (oracle feed)."""
    field = _empty_field(lattice)
    vals = transform(lattice.points)
    pos = tuple((lattice.indices + lattice.half_width).T)
    for j in range(3):
        field.values[j][pos] = vals[:, j]
    field.cond[pos] = 1.0
    return field


def synthesize_axes(field: FourierField, xs, ys, zs):
    """Direct inverse-transform sum on the tensor grid ``xs x ys x zs``.

    Returns ``(real part (3, nx, ny, nz), max |imag| / max |real|)``.
    """
    N = field.half_width
    n = np.arange(-N, N + 1)
    ex, ey, ez = (np.exp(1j * field.delta * np.outer(np.asarray(a, float), n)) for a in (xs, ys, zs))
    out = np.einsum("jabc,zc->jabz", field.values, ez, optimize=True)
    out = np.einsum("jabz,yb->jayz", out, ey, optimize=True)
    out = np.einsum("jayz,xa->jxyz", out, ex, optimize=True)
    out *= (field.delta / (2 * math.pi)) ** 3
    scale = np.max(np.abs(out.real)) if out.size else 0.0
    residue = float(np.max(np.abs(out.imag)) / scale) if scale > 0 else 0.0
    return out.real.copy(), residue


@dataclass
class VarianceField:
    grid: SourceGrid
    values: np.ndarray  # (3, nx, ny, nz) raw reconstruction of sigma_j^2
    imag_residue: float = 0.0
    fourier: FourierField | None = None

    @property
    def clamped(self) -> np.ndarray:
        return np.maximum(self.values, 0.0)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.clamped)


def synthesize(field: FourierField, grid: SourceGrid) -> VarianceField:
    vals, residue = synthesize_axes(field, *grid.axes)
    return VarianceField(grid=grid, values=vals, imag_residue=residue, fourier=field)


def check_aliasing(delta_xi: float, grid: SourceGrid):
    half = float(np.max(np.maximum(np.abs(grid.origin), np.abs(grid.upper))))
    if delta_xi > math.pi / half:
        raise ValidationError(
            f"lattice spacing {delta_xi} aliases over half-width {half}; need <= {math.pi / half:.6g}"
        )


def reconstruct_variance(
    data: Dataset,
    p: MaterialParams,
    beta: float,
    delta_xi: float,
    eval_grid: SourceGrid,
    *,
    theta: float = 0.0,
    cond_ceiling: float = DEFAULT_COND_CEILING,
    workers: int = 1,
) -> VarianceField:
    """Reconstruct ``sigma_j^2`` on ``eval_grid`` from one dataset at one frequency."""
    if p != data.params:
        raise ValidationError("material parameters differ from those of the dataset")
    check_aliasing(delta_xi, eval_grid)
    lattice = build_lattice(beta, delta_xi, p)
    field = fourier_data(data, lattice, theta=theta, cond_ceiling=cond_ceiling, workers=workers)
    return synthesize(field, eval_grid)


def write_field(path, vf: VarianceField, p: MaterialParams, beta: float, config_text: str = "") -> None:
    """Binary dump of the raw reconstruction (f64, C order, component-major)."""
    g = vf.grid
    f = vf.fourier
    header = _FIELD_HEADER.pack(
        FIELD_MAGIC,
        FIELD_VERSION,
        p.lam,
        p.mu,
        p.kappa,
        float(beta),
        f.delta if f is not None else 0.0,
        *g.counts,
        *g.origin,
        g.h,
        f.n_skipped if f is not None else 0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(vf.values, dtype="<f8").tobytes())
        if config_text:
            blob = config_text.encode("utf-8")
            fh.write(_TRAILER_MAGIC + struct.pack("<I", len(blob)) + blob)


def read_field(path):
    """Return ``(values, grid, header dict, config text)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != FIELD_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    (_, version, lam, mu, kappa, beta, delta, nx, ny, nz, ox, oy, oz, h, skipped) = _FIELD_HEADER.unpack_from(raw)
    if version != FIELD_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = _FIELD_HEADER.size
    n = 3 * nx * ny * nz
    vals = np.frombuffer(raw, "<f8", n, off).reshape(3, nx, ny, nz).copy()
    off += 8 * n
    text = ""
    if raw[off : off + 4] == _TRAILER_MAGIC:
        (k,) = struct.unpack_from("<I", raw, off + 4)
        text = raw[off + 8 : off + 8 + k].decode("utf-8")
    grid = SourceGrid((ox, oy, oz), h, (nx, ny, nz))
    head = {"lambda": lam, "mu": mu, "kappa": kappa, "beta": beta, "delta_xi": delta, "skipped": skipped}
    return vals, grid, head, text
