"""Closed-form elastic wave kernels for a homogeneous isotropic medium.

Time-harmonic Navier operator ``mu*Lap(u) + (lam+mu)*grad(div u) + kappa^2 u``.
All kernels are evaluated from analytic radial derivatives of the scalar
Helmholtz fundamental solution ``g(r; k) = -exp(i k r) / (4 pi r)``; no
finite differences are used outside the test-suite.

Every function accepts broadcastable arrays of points with a trailing axis of
length 3, so the same code serves single evaluations and the blocked forward
solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularPointError, ValidationError

SINGULAR_RADIUS = 1e-14
_FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class MaterialParams:
    """Lamé constants and angular frequency; wavenumbers are derived."""

    lam: float
    mu: float
    kappa: float
    kappa_p: float = field(init=False)
    kappa_s: float = field(init=False)

    def __post_init__(self):
        if not self.mu > 0 or not self.lam + 2 * self.mu > 0:
            raise ValidationError(
                f"need mu > 0 and lambda + 2 mu > 0, got lambda={self.lam}, mu={self.mu}"
            )
        if not self.kappa > 0:
            raise ValidationError(f"kappa must be positive, got {self.kappa}")
        object.__setattr__(self, "kappa_p", self.kappa / math.sqrt(self.lam + 2 * self.mu))
        object.__setattr__(self, "kappa_s", self.kappa / math.sqrt(self.mu))


@dataclass(frozen=True)
class PlaneWaveProbe:
    """Homogeneous Navier solution ``eta * exp(i zeta . x)`` with real eta, zeta.

    The constructor enforces ``eta . zeta = 0``, ``|eta| = 1`` and, when
    ``kappa_s`` is given, ``|zeta| = kappa_s``.
    """

    eta: np.ndarray
    zeta: np.ndarray
    kappa_s: float | None = None
    tol: float = 1e-12

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float).reshape(3)
        zeta = np.asarray(self.zeta, dtype=float).reshape(3)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "zeta", zeta)
        scale = max(1.0, float(np.linalg.norm(zeta)))
        if abs(np.linalg.norm(eta) - 1.0) > self.tol:
            raise ValidationError(f"|eta| = {np.linalg.norm(eta)!r}, expected 1")
        if abs(eta @ zeta) > self.tol * scale:
            raise ValidationError(f"eta . zeta = {eta @ zeta!r}, expected 0")
        if self.kappa_s is not None and abs(np.linalg.norm(zeta) - self.kappa_s) > self.tol * self.kappa_s:
            raise ValidationError(f"|zeta| = {np.linalg.norm(zeta)!r}, expected {self.kappa_s}")


def _separation(x, y):
    r = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    rho = np.sqrt(np.einsum("...i,...i->...", r, r))
    if np.any(rho < SINGULAR_RADIUS):
        raise SingularPointError("kernel evaluated at its source point (|x - y| < 1e-14)")
    return r, rho


def radial_derivatives(rho, k):
    """Return ``g, g', g'', g'''`` of ``g(rho) = -exp(i k rho)/(4 pi rho)``."""
    rho = np.asarray(rho, dtype=float)
    inv = 1.0 / rho
    g = -np.exp(1j * k * rho) * inv / _FOUR_PI
    ik = 1j * k
    g1 = g * (ik - inv)
    g2 = g * (-k * k - 2 * ik * inv + 2 * inv * inv)
    g3 = g * (-1j * k**3 + 3 * k * k * inv + 6 * ik * inv * inv - 6 * inv**3)
    return g, g1, g2, g3


def helmholtz_g(x, y, kappa):
    """Fundamental solution ``-exp(i kappa |x-y|) / (4 pi |x-y|)``."""
    _, rho = _separation(x, y)
    return -np.exp(1j * kappa * rho) / (_FOUR_PI * rho)


def _tensor_terms(rho, p: MaterialParams):
    gs, gs1, gs2, gs3 = radial_derivatives(rho, p.kappa_s)
    _, gp1, gp2, gp3 = radial_derivatives(rho, p.kappa_p)
    f1, f2, f3 = gs1 - gp1, gs2 - gp2, gs3 - gp3
    inv = 1.0 / rho
    # Hessian of f(|r|) = phi*I + psi*rhat rhat^T
    phi = f1 * inv
    psi = f2 - f1 * inv
    dpsi = f3 - f2 * inv + f1 * inv * inv
    return gs, gs1, phi, psi, dpsi


def green_tensor(x, y, p: MaterialParams):
    """Green tensor ``G(x, y)`` of the Navier equation, shape ``(..., 3, 3)``.

    ``G = g_s I / mu + grad grad^T (g_s - g_p) / kappa^2`` with the gradients
    taken in ``x``.
    """
    r, rho = _separation(x, y)
    rhat = r / rho[..., None]
    gs, _, phi, psi, _ = _tensor_terms(rho, p)
    k2 = p.kappa**2
    diag = (gs / p.mu + phi / k2)[..., None, None]
    outer = rhat[..., :, None] * rhat[..., None, :]
    return diag * np.eye(3) + (psi / k2)[..., None, None] * outer


def green_traction(x, y, normal, p: MaterialParams):
    """Traction ``D_x`` of every column of ``G(x, y)``, shape ``(..., 3, 3)``.

    Column ``j`` is ``mu d_nu G e_j + (lam + mu) (div G e_j) nu`` evaluated at
    ``x`` with unit normal ``normal``.
    """
    r, rho = _separation(x, y)
    nu = np.asarray(normal, dtype=float)
    rhat = r / rho[..., None]
    gs, gs1, phi, psi, dpsi = _tensor_terms(rho, p)
    k2 = p.kappa**2
    inv = 1.0 / rho
    rn = np.einsum("...i,...i->...", rhat, nu)
    eye = np.eye(3)

    # nu_l d_l of the third-derivative tensor of (g_s - g_p)
    a = psi * inv
    c = dpsi - 2 * psi * inv
    nu_r = np.broadcast_to(nu, rhat.shape)[..., :, None] * rhat[..., None, :]
    out = (p.mu * (gs1 * rn / p.mu + a * rn / k2))[..., None, None] * eye
    out = out + (p.mu * a / k2)[..., None, None] * (nu_r + np.swapaxes(nu_r, -1, -2))
    out = out + (p.mu * c * rn / k2)[..., None, None] * (rhat[..., :, None] * rhat[..., None, :])
    # (lam + mu) (div column j) nu_i ; div column j = (g_s'/mu + (psi' + 3 psi/rho)/k2) rhat_j
    div = gs1 / p.mu + (dpsi + 3 * psi * inv) / k2
    out = out + ((p.lam + p.mu) * div)[..., None, None] * nu_r
    return out


def probe_field(probe: PlaneWaveProbe, x):
    """Evaluate ``eta * exp(i zeta . x)``."""
    x = np.asarray(x, dtype=float)
    phase = np.exp(1j * (x @ probe.zeta))
    return phase[..., None] * probe.eta


def probe_traction(probe: PlaneWaveProbe, x, normal, p: MaterialParams):
    """Traction of a probe: ``i mu (zeta . nu) eta exp(i zeta . x)``.

    The divergence term drops out because ``eta . zeta = 0``.
    """
    x = np.asarray(x, dtype=float)
    nu = np.asarray(normal, dtype=float)
    coef = 1j * p.mu * (nu @ probe.zeta) * np.exp(1j * (x @ probe.zeta))
    return coef[..., None] * probe.eta


def green_and_traction(x, y, normal, p: MaterialParams):
    """``(green_tensor, green_traction)`` sharing the radial evaluations."""
    r, rho = _separation(x, y)
    nu = np.asarray(normal, dtype=float)
    rhat = r / rho[..., None]
    gs, gs1, phi, psi, dpsi = _tensor_terms(rho, p)
    k2 = p.kappa**2
    inv = 1.0 / rho
    eye = np.eye(3)
    rr = rhat[..., :, None] * rhat[..., None, :]
    G = ((gs / p.mu + phi / k2)[..., None, None] * eye) + (psi / k2)[..., None, None] * rr

    rn = np.einsum("...i,...i->...", rhat, nu)
    a = p.mu * psi * inv / k2
    nu_r = np.broadcast_to(nu, rhat.shape)[..., :, None] * rhat[..., None, :]
    div = (p.lam + p.mu) * (gs1 / p.mu + (dpsi + 3 * psi * inv) / k2)
    T = ((gs1 + a) * rn)[..., None, None] * eye
    T = T + a[..., None, None] * np.swapaxes(nu_r, -1, -2)
    T = T + (a + div)[..., None, None] * nu_r
    T = T + (p.mu * (dpsi - 2 * psi * inv) * rn / k2)[..., None, None] * rr
    return G, T
