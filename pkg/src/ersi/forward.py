"""Synthetic boundary data: displacement and traction on a sphere.

Each realisation is the Green-tensor convolution of the discretised source,

    u(x_i) = h**1.5 * sum_t G(x_i, x_t) diag(sigma(x_t)) Z_t,

and likewise for the traction with ``green_traction``.  The sum is organised
as dense products over (observation chunk) x (cell block) tiles so that the
full Green matrix is never held in memory.  Tiling is fixed and independent of
the worker count, which makes results bit-identical for any ``workers``.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .elastics import SINGULAR_RADIUS, MaterialParams, _tensor_terms
from .errors import FormatError, GeometryError, SingularPointError, ValidationError
from .source import (
    MEASUREMENT_STREAM,
    SourceGrid,
    VarianceProfile,
    active_cells,
    noise_matrix,
    philox_uniform,
)

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

DATASET_MAGIC = b"ERSI"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIddddIIdQ")
_TRAILER_MAGIC = b"CONF"

NOISE_MODES = ("component", "real", "vector")
_SUB_ROWS = 32


@dataclass(frozen=True)
class ObservationSet:
    points: np.ndarray  # (n, 3) on |x| = R
    normals: np.ndarray  # (n, 3) outward unit normals
    radius: float

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def weight(self) -> float:
        """Equal quadrature weight ``4 pi R^2 / N_ob``."""
        return 4.0 * math.pi * self.radius**2 / self.count


def fibonacci_directions(n: int) -> np.ndarray:
    """Unit vectors of the golden-angle spiral (``n >= 1``)."""
    if int(n) != n or n < 1:
        raise ValidationError(f"need at least one direction, got {n}")
    i = np.arange(int(n))
    z = 1.0 - (2.0 * i + 1.0) / n
    rxy = np.sqrt(1.0 - z * z)
    phi = GOLDEN_ANGLE * i
    d = np.stack([rxy * np.cos(phi), rxy * np.sin(phi), z], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def fibonacci_sphere(n: int, radius: float) -> ObservationSet:
    """Golden-angle spiral with colatitudes uniform in ``z``, scaled to ``radius``."""
    if int(n) != n or n < 2:
        raise ValidationError(f"need at least 2 observation points, got {n}")
    if not radius > 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    unit = fibonacci_directions(n)
    return ObservationSet(points=radius * unit, normals=unit, radius=float(radius))


@dataclass(frozen=True)
class Dataset:
    """Boundary data ``u[j, i, :]`` and ``Du[j, i, :]`` for sample j, point i."""

    params: MaterialParams
    obs: ObservationSet
    u: np.ndarray
    Du: np.ndarray
    noise_level: float = 0.0
    seed: int = 0
    clean: tuple[np.ndarray, np.ndarray] | None = None
    config_text: str = ""

    @property
    def n_samples(self) -> int:
        return self.u.shape[0]

    def __post_init__(self):
        shape = (self.u.shape[0], self.obs.count, 3)
        if self.u.shape != shape or self.Du.shape != shape:
            raise ValidationError(f"data arrays {self.u.shape}/{self.Du.shape} do not match {shape}")


def _check_geometry(grid: SourceGrid, profile: VarianceProfile, obs: ObservationSet):
    far = max(
        profile.support.max_radius(),
        float(np.linalg.norm(np.maximum(np.abs(grid.origin), np.abs(grid.upper)))),
    )
    if not far < obs.radius:
        raise GeometryError(f"source region reaches radius {far:.6g} >= observation radius {obs.radius}")


def _tile_matrix(x, nu, cells, p):
    """Real operator rows [Re G; Im G; Re DG; Im DG] for one observation chunk.

    Built entry by entry from the scalar coefficients of
    ``G_ij = dG delta_ij + pG r_i r_j`` and
    ``T_ij = dT delta_ij + a r_i nu_j + b nu_i r_j + c r_i r_j`` (see
    :func:`green_and_traction`), writing straight into the output layout.
    Columns are component-major (``j * nb + t``) so every write is contiguous.
    Rows are processed in sub-blocks of ``_SUB_ROWS`` to keep temporaries in cache.
    """
    nc, nb = len(x), len(cells)
    out = np.empty((4, nc, 3, 3, nb))
    for a in range(0, nc, _SUB_ROWS):
        _fill_tile(x[a : a + _SUB_ROWS], nu[a : a + _SUB_ROWS], cells, p, out[:, a : a + _SUB_ROWS])
    return out.reshape(12 * nc, 3 * nb)


def _fill_tile(x, nu, cells, p, out):
    r = x[:, None, :] - cells[None, :, :]
    rho = np.sqrt(np.einsum("abi,abi->ab", r, r))
    if np.any(rho < SINGULAR_RADIUS):
        raise SingularPointError("observation point coincides with a source cell")
    rhat = r / rho[..., None]
    gs, gs1, phi, psi, dpsi = _tensor_terms(rho, p)
    k2 = p.kappa**2
    inv = 1.0 / rho
    rn = np.einsum("abi,ai->ab", rhat, nu)
    a = p.mu * psi * inv / k2
    div = (p.lam + p.mu) * (gs1 / p.mu + (dpsi + 3 * psi * inv) / k2)
    coef = {
        "dG": gs / p.mu + phi / k2,
        "pG": psi / k2,
        "dT": (gs1 + a) * rn,
        "a": a,
        "b": a + div,
        "c": p.mu * (dpsi - 2 * psi * inv) * rn / k2,
    }
    re = {k: np.ascontiguousarray(v.real) for k, v in coef.items()}
    im = {k: np.ascontiguousarray(v.imag) for k, v in coef.items()}
    ri = [np.ascontiguousarray(rhat[..., i]) for i in range(3)]
    for i in range(3):
        for j in range(3):
            rr = ri[i] * ri[j]
            rnu = ri[i] * nu[:, None, j]
            nur = nu[:, None, i] * ri[j]
            for part, c in ((0, re), (1, im)):
                g = c["pG"] * rr
                t = c["a"] * rnu + c["b"] * nur + c["c"] * rr
                if i == j:
                    g += c["dG"]
                    t += c["dT"]
                out[part, :, i, j] = g
                out[part + 2, :, i, j] = t


def simulate(
    grid: SourceGrid,
    profile: VarianceProfile,
    p: MaterialParams,
    obs: ObservationSet,
    n_samples: int,
    seed: int,
    *,
    workers: int = 1,
    cell_block: int = 256,
    obs_chunk: int = 256,
    progress=None,
) -> Dataset:
    """Noiseless displacement/traction data for ``n_samples`` realisations."""
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValidationError(f"n_samples must be a positive integer, got {n_samples}")
    _check_geometry(grid, profile, obs)
    n_samples = int(n_samples)
    active = active_cells(grid, profile)
    chunks = [slice(a, min(a + obs_chunk, obs.count)) for a in range(0, obs.count, obs_chunk)]
    acc = [np.zeros((12 * (c.stop - c.start), n_samples)) for c in chunks]
    scale = grid.h**1.5
    samples = range(n_samples)

    blocks = [(t0, min(t0 + cell_block, grid.n_cells)) for t0 in range(0, grid.n_cells, cell_block)]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool, threadpool_limits(1, user_api="blas"):
        for b, (t0, t1) in enumerate(blocks):
            keep = active[(active >= t0) & (active < t1)] - t0
            if keep.size == 0:
                continue
            cells = grid.centers(t0, t1)[keep]
            sig = profile.sigma(cells)
            z = noise_matrix(seed, samples, t0, t1)
            z = z.reshape(t1 - t0, 3, n_samples)[keep] * (scale * sig)[:, :, None]
            z = z.transpose(1, 0, 2).reshape(3 * keep.size, n_samples)

            def work(k, cells=cells, z=z):
                c = chunks[k]
                m = _tile_matrix(obs.points[c], obs.normals[c], cells, p)
                acc[k] += m @ z

            list(pool.map(work, range(len(chunks))))
            if progress is not None:
                progress(b + 1, len(blocks))

    u = np.empty((n_samples, obs.count, 3), dtype=complex)
    Du = np.empty_like(u)
    for c, a in zip(chunks, acc):
        n = c.stop - c.start
        parts = a.reshape(4, n, 3, n_samples).transpose(0, 3, 1, 2)
        u[:, c, :] = parts[0] + 1j * parts[1]
        Du[:, c, :] = parts[2] + 1j * parts[3]
    return Dataset(params=p, obs=obs, u=u, Du=Du, noise_level=0.0, seed=int(seed))


def add_noise(data: Dataset, level: float, seed: int, *, mode: str = "component", keep_clean: bool = False) -> Dataset:
    """Multiplicative uniform noise ``value * (1 + level * r)``, ``r ~ U[-1, 1]``.

    ``mode`` selects how factors are shared: ``component`` draws one real
    factor per complex component, ``real`` separate factors for real and
    imaginary parts, ``vector`` one factor per 3-vector.  Fields u and Du
    always get independent factors.
    """
    if not level >= 0:
        raise ValidationError(f"noise level must be nonnegative, got {level}")
    if mode not in NOISE_MODES:
        raise ValidationError(f"unknown noise mode {mode!r}; known: {NOISE_MODES}")
    clean = (data.u, data.Du) if keep_clean else None
    if level == 0:
        return replace(data, u=data.u.copy(), Du=data.Du.copy(), clean=clean)

    n_obs = data.obs.count
    per_field = {"component": 3 * n_obs, "real": 6 * n_obs, "vector": n_obs}[mode]
    n_blocks = -(-2 * per_field // 4)
    u = np.empty_like(data.u)
    Du = np.empty_like(data.Du)
    for j in range(data.n_samples):
        r = 2.0 * philox_uniform(seed, MEASUREMENT_STREAM | j, 0, n_blocks).reshape(-1)[: 2 * per_field] - 1.0
        f = 1.0 + level * r
        for dst, src, fk in ((u, data.u, f[:per_field]), (Du, data.Du, f[per_field:])):
            if mode == "component":
                dst[j] = src[j] * fk.reshape(n_obs, 3)
            elif mode == "vector":
                dst[j] = src[j] * fk[:, None]
            else:
                fk = fk.reshape(n_obs, 3, 2)
                dst[j] = src[j].real * fk[..., 0] + 1j * src[j].imag * fk[..., 1]
    return replace(data, u=u, Du=Du, noise_level=float(level), clean=clean)


def write_dataset(path, data: Dataset, config_text: str | None = None) -> None:
    """Write the ERSI binary format; an optional config trailer follows the arrays."""
    p = data.params
    header = _HEADER.pack(
        DATASET_MAGIC,
        DATASET_VERSION,
        p.lam,
        p.mu,
        p.kappa,
        data.obs.radius,
        data.obs.count,
        data.n_samples,
        data.noise_level,
        data.seed,
    )
    text = data.config_text if config_text is None else config_text
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data.obs.points, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(data.u, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(data.Du, dtype="<c16").tobytes())
        if text:
            blob = text.encode("utf-8")
            fh.write(_TRAILER_MAGIC + struct.pack("<I", len(blob)) + blob)


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, lam, mu, kappa, radius, n_obs, n_s, level, seed = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    n_pts = 3 * n_obs * 8
    n_arr = n_s * n_obs * 3 * 16
    if len(raw) < off + n_pts + 2 * n_arr:
        raise FormatError(f"{path}: truncated arrays")
    pts = np.frombuffer(raw, "<f8", 3 * n_obs, off).reshape(n_obs, 3).copy()
    off += n_pts
    u = np.frombuffer(raw, "<c16", n_s * n_obs * 3, off).reshape(n_s, n_obs, 3).copy()
    off += n_arr
    Du = np.frombuffer(raw, "<c16", n_s * n_obs * 3, off).reshape(n_s, n_obs, 3).copy()
    off += n_arr
    text = ""
    if raw[off : off + 4] == _TRAILER_MAGIC:
        (n,) = struct.unpack_from("<I", raw, off + 4)
        text = raw[off + 8 : off + 8 + n].decode("utf-8")
    normals = pts / np.linalg.norm(pts, axis=-1, keepdims=True)
    obs = ObservationSet(points=pts, normals=normals, radius=radius)
    return Dataset(
        params=MaterialParams(lam, mu, kappa),
        obs=obs,
        u=u,
        Du=Du,
        noise_level=level,
        seed=seed,
        config_text=text,
    )
