import json
import subprocess
import sys

import pytest

from mazya_lab import cli


@pytest.fixture(autouse=True)
def no_env_out(monkeypatch):
    monkeypatch.delenv(cli.ENV_OUT, raising=False)


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def summary(out, command):
    return json.loads((out / f"{command}.json").read_text())


def test_list(capsys):
    assert cli.run(["--list"]) == 0
    assert "sphere-eig" in capsys.readouterr().out.split()


def test_sphere_eig_hemisphere(tmp_path):
    cfg = write(tmp_path, "[run]\ncommand = sphere-eig\n\n[sphere-eig]\np = 2\nm = 3\n"
                          "theta0 = pi/2\nresolution = 64\n")
    out = tmp_path / "o"
    assert cli.run(["--config", cfg, "--out", str(out)]) == 0
    s = summary(out, "sphere-eig")
    assert s["exit_code"] == 0
    assert s["results"]["lambda"] == pytest.approx(2.25, rel=0.01)
    assert (out / "sphere-eig.csv").read_text().startswith("resolution,lambda")


def test_check_young(tmp_path):
    cfg = write(tmp_path, "[check-young]\nsamples = 5000\n")
    out = tmp_path / "o"
    assert cli.run(["check-young", "--config", cfg, "--out", str(out)]) == 0
    r = summary(out, "check-young")["results"]
    assert r["violations"] == 0 and r["misclassified"] == 0


def test_reproducible_byte_identical(tmp_path):
    cfg = write(tmp_path, "[check-young]\nsamples = 2000\n")
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.run(["check-young", "--config", cfg, "--out", str(d), "--reproducible"]) == 0
    assert (a / "check-young.csv").read_bytes() == (b / "check-young.csv").read_bytes()
    assert (a / "check-young.json").read_bytes() == (b / "check-young.json").read_bytes()
    assert "runtime_s" not in summary(a, "check-young")


def test_seed_changes_samples(tmp_path):
    cfg = write(tmp_path, "[check-young]\nsamples = 2000\n")
    a, b = tmp_path / "a", tmp_path / "b"
    cli.run(["check-young", "--config", cfg, "--out", str(a), "--seed", "1", "--reproducible"])
    cli.run(["check-young", "--config", cfg, "--out", str(b), "--seed", "2", "--reproducible"])
    assert (a / "check-young.csv").read_bytes() != (b / "check-young.csv").read_bytes()


def test_env_overrides_out(tmp_path, monkeypatch):
    env_dir = tmp_path / "env"
    monkeypatch.setenv(cli.ENV_OUT, str(env_dir))
    assert cli.run(["sigma-hat", "--out", str(tmp_path / "flag")]) == 0
    assert summary(env_dir, "sigma-hat")["results"]["sigma_hat"] == pytest.approx(0.375)
    assert not (tmp_path / "flag").exists()


@pytest.mark.parametrize("text,argv", [
    ("[sigma-hat]\nbogus = 1\n", ["sigma-hat"]),
    ("", ["no-such-command"]),
    ("", []),
    ("[sphere-eig]\np = 3\nm = 3\ntheta0 = pi\n", ["sphere-eig"]),
    ("[run]\ncommand = sigma-hat\ncolour = red\n", []),
])
def test_invalid_configs_exit_2(tmp_path, text, argv):
    cfg = write(tmp_path, text)
    assert cli.run(argv + ["--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_missing_config_exit_2(tmp_path):
    assert cli.run(["sigma-hat", "--config", str(tmp_path / "absent.ini")]) == 2


def test_budget_exhausted_exit_3(tmp_path):
    cfg = write(tmp_path, "[wedge-extremal]\nn_rho = 16\nn_theta = 4\nn_t = 16\nmax_iter = 2\n"
                          "n_starts = 1\ngrid_error = false\n")
    out = tmp_path / "o"
    assert cli.run(["wedge-extremal", "--config", cfg, "--out", str(out)]) == 3
    assert summary(out, "wedge-extremal")["exit_code"] == 3


def test_concentration_exit_4(tmp_path):
    # two steps on an 8-cell box leave the q-mass in the innermost dyadic ball;
    # the diagnostic outranks the exhausted budget
    cfg = write(tmp_path, "[wedge-extremal]\nn_rho = 8\nn_theta = 4\nn_t = 8\nmax_iter = 2\n"
                          "n_starts = 1\ngrid_error = false\n")
    out = tmp_path / "o"
    assert cli.run(["wedge-extremal", "--config", cfg, "--out", str(out)]) == 4
    s = summary(out, "wedge-extremal")
    assert s["message"] == "concentration" and s["results"]["mass_fractions"]["inner"] > 0.5


def test_sigma_zero_needs_diagnostic_flag(tmp_path):
    base = "[wedge-extremal]\nsigma = 0\nn_rho = 8\nn_theta = 4\nn_t = 8\nn_starts = 1\n" \
           "grid_error = false\n"
    out = tmp_path / "o"
    assert cli.run(["wedge-extremal", "--config", write(tmp_path, base), "--out", str(out)]) == 2
    cfg = write(tmp_path, base + "sigma0_diagnostic = true\n", "d.ini")
    assert cli.run(["wedge-extremal", "--config", cfg, "--out", str(out)]) in (0, 3, 4)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mazya_lab", "--list"], capture_output=True,
                         text=True, check=False)
    assert res.returncode == 0 and "attainability" in res.stdout
