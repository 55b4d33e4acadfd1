"""Command-line entry point: ``ersi <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import analysis
from .config import RunConfig, check_beta, load_config, validate
from .elastics import MaterialParams
from .errors import FormatError, HeaderMismatchError, NumericalError, ValidationError
from .forward import add_noise, fibonacci_sphere, read_dataset, simulate, write_dataset
from .probes import conditioning_survey
from .reconstruct import build_lattice, fourier_data, synthesize, write_field
from .source import Box, build_grid, builtin_profile

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4


def _params(cfg: RunConfig) -> MaterialParams:
    return MaterialParams(cfg.material_lambda, cfg.material_mu, cfg.material_kappa)


def _grid(cfg: RunConfig):
    return build_grid(Box.cube(cfg.source_half_width), cfg.source_h)


def _out(cfg: RunConfig) -> Path:
    d = Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _simulate(cfg: RunConfig, workers: int, kappa: float | None = None):
    p = _params(cfg) if kappa is None else MaterialParams(cfg.material_lambda, cfg.material_mu, kappa)
    obs = fibonacci_sphere(cfg.geometry_n_obs, cfg.geometry_radius)
    data = simulate(
        _grid(cfg), builtin_profile(cfg.source_profile), p, obs, cfg.sampling_n_samples, cfg.sampling_seed, workers=workers
    )
    return add_noise(data, cfg.sampling_noise_level, cfg.sampling_seed, mode=cfg.sampling_noise_mode)


def _parse_values(text: str) -> list[float]:
    """``"6,8,10"`` or ``"6:22:2"`` (inclusive range)."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        a, b, s = (float(v) for v in text.split(":"))
        if s <= 0:
            raise ValidationError("range step must be positive")
        return list(np.round(np.arange(a, b + 0.5 * s, s), 12))
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_simulate(cfg: RunConfig, args) -> int:
    t = time.perf_counter()
    data = _simulate(cfg, args.workers)
    path = _out(cfg) / "dataset.ersi"
    write_dataset(path, data, cfg.to_text())
    print(
        f"wrote {path}: {data.n_samples} samples x {data.obs.count} points, "
        f"{_grid(cfg).n_cells} cells, {time.perf_counter() - t:.1f} s"
    )
    return EXIT_OK


def _load_matching(cfg: RunConfig, path):
    data = read_dataset(path)
    p = data.params
    for name, file_v, cfg_v in (
        ("lambda", p.lam, cfg.material_lambda),
        ("mu", p.mu, cfg.material_mu),
        ("kappa", p.kappa, cfg.material_kappa),
        ("radius", data.obs.radius, cfg.geometry_radius),
    ):
        if file_v != cfg_v:
            raise HeaderMismatchError(f"dataset {name} = {file_v!r} but config has {cfg_v!r}")
    return data


def _reconstruct_outputs(cfg, data, fourier, out: Path, tag: str = ""):
    grid = _grid(cfg)
    truth = builtin_profile(cfg.source_profile)
    vf = synthesize(fourier, grid)
    text = cfg.to_text()
    write_field(out / f"field{tag}.ersf", vf, data.params, cfg.reconstruction_beta, text)
    analysis.write_csv(out / f"slices{tag}.csv", analysis.SLICE_COLUMNS, analysis.slice_rows(fourier, truth, grid), text)
    rep = analysis.l2_relative_error(
        vf, truth, analysis.run_params(data, grid, cfg.reconstruction_beta, cfg.reconstruction_delta_xi)
    )
    analysis.write_csv(out / f"report{tag}.csv", analysis.TABLE_COLUMNS, [rep.row(cfg.reconstruction_beta)], text)
    return rep, vf


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    out = _out(cfg)
    path = Path(args.dataset) if args.dataset else out / "dataset.ersi"
    data = _load_matching(cfg, path)
    lattice = build_lattice(cfg.reconstruction_beta, cfg.reconstruction_delta_xi, data.params)
    fourier = fourier_data(
        data,
        lattice,
        theta=cfg.reconstruction_theta,
        cond_ceiling=cfg.reconstruction_cond_ceiling,
        workers=args.workers,
    )
    if fourier.n_skipped:
        raise NumericalError(
            f"{fourier.n_skipped} lattice points exceed the condition ceiling {cfg.reconstruction_cond_ceiling:g}"
        )
    rep, vf = _reconstruct_outputs(cfg, data, fourier, out)
    print(
        "errors " + " ".join(f"{e:.4f}" for e in rep.errors) + f" mean {rep.mean:.4f} "
        f"max-abs {rep.max_abs:.4f} imag-residue {vf.imag_residue:.2e}"
    )
    return EXIT_OK


def cmd_sweep_cutoff(cfg: RunConfig, args) -> int:
    values = _parse_values(args.values)
    if not values:
        raise ValidationError("empty sweep list")
    out = _out(cfg)
    data = _load_matching(cfg, args.dataset) if args.dataset else _simulate(cfg, args.workers)
    for v in values:
        check_beta(v / data.params.kappa_s)
    reports, _ = analysis.sweep_cutoff(
        data, builtin_profile(cfg.source_profile), _grid(cfg), values, cfg.reconstruction_delta_xi,
        theta=cfg.reconstruction_theta, workers=args.workers,
    )
    rows = [r.row(v) for v, r in zip(values, reports)]
    analysis.write_csv(out / "sweep_cutoff.csv", analysis.TABLE_COLUMNS, rows, cfg.to_text())
    for r in rows:
        print(f"{r['parameter']:g}: mean {r['mean']:.4f}")
    return EXIT_OK


def cmd_sweep_frequency(cfg: RunConfig, args) -> int:
    values = _parse_values(args.values)
    if not values:
        raise ValidationError("empty sweep list")
    out = _out(cfg)
    reports = analysis.sweep_frequency(
        values,
        lam=cfg.material_lambda,
        mu=cfg.material_mu,
        grid=_grid(cfg),
        profile=builtin_profile(cfg.source_profile),
        obs=fibonacci_sphere(cfg.geometry_n_obs, cfg.geometry_radius),
        n_samples=cfg.sampling_n_samples,
        seed=cfg.sampling_seed,
        noise_level=cfg.sampling_noise_level,
        noise_mode=cfg.sampling_noise_mode,
        delta_xi=cfg.reconstruction_delta_xi,
        workers=args.workers,
    )
    rows = [r.row(v) for v, r in zip(values, reports)]
    for row, r in zip(rows, reports):
        row["beta"] = r.params["beta"]
    analysis.write_csv(out / "sweep_frequency.csv", analysis.TABLE_COLUMNS + ["beta"], rows, cfg.to_text())
    for r in rows:
        print(f"kappa {r['parameter']:g}: mean {r['mean']:.4f} at beta {r['beta']:g}")
    return EXIT_OK


def cmd_probe_survey(cfg: RunConfig, args) -> int:
    p = _params(cfg)
    radii = _parse_values(args.radii) if args.radii else list(p.kappa_s * np.array([0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75]))
    rows = conditioning_survey(radii, args.n_dirs, p, seed=cfg.sampling_seed, theta=cfg.reconstruction_theta)
    path = _out(cfg) / "probe_survey.csv"
    analysis.write_csv(path, analysis.SURVEY_COLUMNS, rows, cfg.to_text())
    print(f"wrote {path}: {len(rows)} rows")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "sweep-cutoff": cmd_sweep_cutoff,
    "sweep-frequency": cmd_sweep_frequency,
    "probe-survey": cmd_probe_survey,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--preset", choices=["paper", "desk"])
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out-dir")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    ap = argparse.ArgumentParser(prog="ersi", description="Random elastic source variance reconstruction")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a synthetic boundary dataset")
    r = sub.add_parser("reconstruct", parents=[common], help="reconstruct the variance from a dataset")
    r.add_argument("--dataset")
    s = sub.add_parser("sweep-cutoff", parents=[common], help="error table over cutoff frequencies")
    s.add_argument("--values", required=True, help="cutoffs |xi|_max, 'a,b,c' or 'start:stop:step'")
    s.add_argument("--dataset")
    f = sub.add_parser("sweep-frequency", parents=[common], help="error table over frequencies")
    f.add_argument("--values", required=True, help="frequencies kappa, 'a,b,c' or 'start:stop:step'")
    v = sub.add_parser("probe-survey", parents=[common], help="condition numbers of the probe matrix")
    v.add_argument("--radii", help="|xi| values; default spans (0, 2 kappa_s)")
    v.add_argument("--n-dirs", type=int, default=256)
    return ap


def config_from_args(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["sampling.seed"] = str(args.seed)
    if args.out_dir is not None:
        overrides["output.dir"] = args.out_dir
    return validate(load_config(args.config, args.preset, overrides))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda msg, *a, **k: print(f"warning: {msg}", file=sys.stderr)
            cfg = config_from_args(args)
            return COMMANDS[args.command](cfg, args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
