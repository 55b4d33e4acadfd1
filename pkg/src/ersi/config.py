"""Run configuration: flat ``dotted.key = value`` text with presets.

The worker count is deliberately not part of the configuration, so the text
echoed into output files does not depend on it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ValidationError
from .forward import NOISE_MODES

SUGGESTED_BETA = (0.8, 1.25)
CONFIG_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    material_lambda: float = 2.0
    material_mu: float = 1.0
    material_kappa: float = 16.0
    geometry_radius: float = 2.0
    geometry_n_obs: int = 2048
    source_profile: str = "paper3d"
    source_half_width: float = 1.0
    source_h: float = 0.025
    sampling_n_samples: int = 20000
    sampling_seed: int = 0
    sampling_noise_level: float = 0.05
    sampling_noise_mode: str = "component"
    reconstruction_beta: float = 0.875
    reconstruction_delta_xi: float = 0.5
    reconstruction_cond_ceiling: float = 1e3
    reconstruction_theta: float = 0.0
    output_dir: str = "."

    def to_text(self) -> str:
        lines = [f"config.version = {CONFIG_VERSION}"]
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{dotted(f.name)} = {v!r}" if isinstance(v, float) else f"{dotted(f.name)} = {v}")
        return "\n".join(lines) + "\n"

    def with_values(self, values: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        kw = {}
        for key, raw in values.items():
            name = key.replace(".", "_")
            if key == "config.version":
                continue
            if name not in types:
                raise ValidationError(f"unknown config key {key!r}")
            kw[name] = _coerce(key, raw, types[name])
        return replace(self, **kw)


def dotted(name: str) -> str:
    section, _, rest = name.partition("_")
    return f"{section}.{rest}"


def _coerce(key, raw, typ):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in ("float", float):
            return float(raw)
        if typ in ("int", int):
            return int(raw)
    except ValueError:
        raise ValidationError(f"{key}: cannot parse {raw!r} as {typ}") from None
    return raw.strip().strip("'\"")


PRESETS = {
    "paper": {},
    "desk": {
        "material.kappa": 8.0,
        "source.h": 0.05,
        "geometry.n_obs": 1024,
        "sampling.n_samples": 2000,
        "reconstruction.delta_xi": 0.5,
        "reconstruction.beta": 0.875,
    },
}


def parse_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {n}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then preset, then file, then overrides."""
    cfg = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ValidationError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
        cfg = cfg.with_values(PRESETS[preset])
    if path is not None:
        cfg = cfg.with_values(parse_text(Path(path).read_text()))
    if overrides:
        cfg = cfg.with_values(overrides)
    return cfg


def validate(cfg: RunConfig) -> RunConfig:
    """Check every downstream precondition before work starts."""
    from .elastics import MaterialParams
    from .reconstruct import check_aliasing
    from .source import Box, build_grid, builtin_profile

    MaterialParams(cfg.material_lambda, cfg.material_mu, cfg.material_kappa)
    if cfg.geometry_n_obs < 2:
        raise ValidationError(f"geometry.n_obs must be >= 2, got {cfg.geometry_n_obs}")
    if not cfg.source_h > 0 or not cfg.source_half_width > 0:
        raise ValidationError("source.h and source.half_width must be positive")
    if not math.sqrt(3) * cfg.source_half_width < cfg.geometry_radius:
        raise ValidationError("source box must lie strictly inside the observation sphere")
    builtin_profile(cfg.source_profile)
    if cfg.sampling_n_samples < 1:
        raise ValidationError(f"sampling.n_samples must be >= 1, got {cfg.sampling_n_samples}")
    if cfg.sampling_seed < 0:
        raise ValidationError("sampling.seed must be nonnegative")
    if not cfg.sampling_noise_level >= 0:
        raise ValidationError("sampling.noise_level must be nonnegative")
    if cfg.sampling_noise_mode not in NOISE_MODES:
        raise ValidationError(f"sampling.noise_mode must be one of {NOISE_MODES}")
    check_beta(cfg.reconstruction_beta)
    if not cfg.reconstruction_delta_xi > 0:
        raise ValidationError("reconstruction.delta_xi must be positive")
    if not cfg.reconstruction_cond_ceiling >= 1:
        raise ValidationError("reconstruction.cond_ceiling must be >= 1")
    check_aliasing(cfg.reconstruction_delta_xi, build_grid(Box.cube(cfg.source_half_width), cfg.source_h))
    return cfg


def check_beta(beta: float) -> None:
    if not 0 < beta < 2:
        raise ValidationError(f"beta must lie in (0, 2), got {beta}")
    lo, hi = SUGGESTED_BETA
    if not lo <= beta <= hi:
        warnings.warn(f"beta = {beta} is outside the suggested range [{lo}, {hi}]", stacklevel=2)
