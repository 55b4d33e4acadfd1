import numpy as np
import pytest

from ersi.cli import main
from ersi.config import PRESETS, RunConfig, load_config, parse_text, validate
from ersi.errors import ValidationError
from ersi.forward import read_dataset
from ersi.reconstruct import read_field

SMALL = """\
# tiny run for tests
material.kappa = 4.0
geometry.n_obs = 64
source.h = 0.25
sampling.n_samples = 20
sampling.seed = 5
reconstruction.beta = 1.0
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL)
    return path


def run(cfg_file, out, *extra):
    return main([extra[0], "--config", str(cfg_file), "--out-dir", str(out), *extra[1:]])


def test_parse_and_override(cfg_file):
    cfg = load_config(cfg_file, overrides={"sampling.seed": "9"})
    assert cfg.material_kappa == 4.0 and cfg.geometry_n_obs == 64 and cfg.sampling_seed == 9
    assert parse_text("a.b = 1 # c\n\n") == {"a.b": "1"}
    with pytest.raises(ValidationError):
        parse_text("nonsense")
    with pytest.raises(ValidationError):
        load_config(overrides={"material.colour": "red"})
    with pytest.raises(ValidationError):
        load_config(overrides={"material.kappa": "fast"})


def test_text_round_trip():
    cfg = load_config(preset="desk")
    assert load_config(overrides=parse_text(cfg.to_text())) == cfg
    assert "config.version = 1" in cfg.to_text()


def test_paper_defaults_accepted():
    cfg = validate(RunConfig())
    assert (cfg.material_kappa, cfg.geometry_radius, cfg.geometry_n_obs) == (16.0, 2.0, 2048)
    assert (cfg.sampling_n_samples, cfg.source_h, cfg.sampling_noise_level) == (20000, 0.025, 0.05)
    assert "sampling.n_samples = 20000" in cfg.to_text()


def test_desk_preset():
    cfg = load_config(preset="desk")
    for k, v in PRESETS["desk"].items():
        assert getattr(cfg, k.replace(".", "_")) == v


@pytest.mark.parametrize(
    "key,value",
    [
        ("sampling.n_samples", "0"),
        ("reconstruction.beta", "2.0"),
        ("reconstruction.beta", "0"),
        ("geometry.radius", "1.5"),
        ("material.mu", "0"),
        ("reconstruction.delta_xi", "4.0"),
        ("sampling.noise_mode", "odd"),
    ],
)
def test_validation_exit_code(cfg_file, tmp_path, key, value, capsys):
    assert run(cfg_file, tmp_path, "simulate", "--set", f"{key}={value}") == 2
    assert "error" in capsys.readouterr().err


def test_simulate_reconstruct_and_outputs(cfg_file, tmp_path, capsys):
    out = tmp_path / "o"
    assert run(cfg_file, out, "simulate") == 0
    data = read_dataset(out / "dataset.ersi")
    assert data.n_samples == 20 and "material.kappa = 4.0" in data.config_text
    first = (out / "dataset.ersi").read_bytes()
    assert run(cfg_file, out, "simulate") == 0
    assert (out / "dataset.ersi").read_bytes() == first

    assert run(cfg_file, out, "reconstruct") == 0
    vals, grid, head, text = read_field(out / "field.ersf")
    assert vals.shape == (3, 8, 8, 8) and text == data.config_text
    for name in ("slices.csv", "report.csv"):
        body = (out / name).read_text()
        assert body.startswith("# config.version = 1\n")
    report = (out / "report.csv").read_text().splitlines()[-1].split(",")
    assert len(report) == 5 and all(float(v) >= 0 for v in report[1:])
    assert "errors" in capsys.readouterr().out


def test_header_mismatch(cfg_file, tmp_path):
    assert run(cfg_file, tmp_path, "simulate") == 0
    assert run(cfg_file, tmp_path, "reconstruct", "--set", "material.kappa=5.0") == 2


def test_missing_dataset_is_io_error(cfg_file, tmp_path):
    assert run(cfg_file, tmp_path, "reconstruct", "--dataset", str(tmp_path / "none.ersi")) == 3


def test_condition_ceiling_is_numerical_error(cfg_file, tmp_path):
    assert run(cfg_file, tmp_path, "simulate") == 0
    assert run(cfg_file, tmp_path, "reconstruct", "--set", "reconstruction.cond_ceiling=1.0") == 4


def test_beta_warning(cfg_file, tmp_path, capsys):
    assert run(cfg_file, tmp_path, "probe-survey", "--n-dirs", "8", "--set", "reconstruction.beta=1.5") == 0
    assert "suggested range" in capsys.readouterr().err


def test_sweeps(cfg_file, tmp_path):
    assert run(cfg_file, tmp_path, "sweep-cutoff", "--values", "") == 2
    assert run(cfg_file, tmp_path, "sweep-frequency", "--values", " ") == 2
    assert run(cfg_file, tmp_path, "simulate") == 0
    assert run(cfg_file, tmp_path, "reconstruct") == 0
    ds = str(tmp_path / "dataset.ersi")
    assert run(cfg_file, tmp_path, "sweep-cutoff", "--values", "4.0", "--dataset", ds) == 0
    one = (tmp_path / "sweep_cutoff.csv").read_text().splitlines()[-1].split(",")[1:]
    rec = (tmp_path / "report.csv").read_text().splitlines()[-1].split(",")[1:]
    assert one == rec
    assert run(cfg_file, tmp_path, "sweep-cutoff", "--values", "3:5:1", "--dataset", ds) == 0
    lines = (tmp_path / "sweep_cutoff.csv").read_text().splitlines()
    assert [ln for ln in lines if not ln.startswith("#")][0] == "parameter,err1,err2,err3,mean"
    assert [float(ln.split(",")[0]) for ln in lines[-3:]] == [3.0, 4.0, 5.0]


def test_single_frequency_sweep_matches_sweep_cutoff(cfg_file, tmp_path):
    assert run(cfg_file, tmp_path, "sweep-frequency", "--values", "4") == 0
    row = (tmp_path / "sweep_frequency.csv").read_text().splitlines()[-1].split(",")
    beta = float(row[-1])
    assert beta in (0.8, 0.875, 1.0, 1.125, 1.25)
    assert run(cfg_file, tmp_path, "simulate") == 0
    assert run(cfg_file, tmp_path, "sweep-cutoff", "--values", str(4 * beta), "--dataset", str(tmp_path / "dataset.ersi")) == 0
    row2 = (tmp_path / "sweep_cutoff.csv").read_text().splitlines()[-1].split(",")
    np.testing.assert_allclose([float(v) for v in row[1:5]], [float(v) for v in row2[1:5]], rtol=1e-12)


def test_probe_survey(cfg_file, tmp_path):
    assert run(cfg_file, tmp_path, "probe-survey", "--radii", "1,2,4,6", "--n-dirs", "32") == 0
    text = (tmp_path / "probe_survey.csv").read_text()
    assert text.count("optimized") == 4 and text.count("random") == 4
    assert run(cfg_file, tmp_path, "probe-survey", "--radii", "1,2,4,6", "--n-dirs", "32") == 0
    assert (tmp_path / "probe_survey.csv").read_text() == text
    assert run(cfg_file, tmp_path, "probe-survey", "--radii", "8.0", "--n-dirs", "4") == 2
