import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fbsdexp.cli import ExperimentConfig, main
from fbsdexp.errors import ConfigError


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _run(tmp_path, body, *extra):
    cfg = _write(tmp_path, body)
    out = tmp_path / "out"
    return main(["--config", str(cfg), "--out", str(out), *extra]), out


def test_unknown_model_exit_2(tmp_path, capsys):
    code, _ = _run(tmp_path, 'command = "expand"\nmodel = "nope"\n')
    assert code == 2
    assert "unknown model" in capsys.readouterr().err


@pytest.mark.parametrize("body", [
    'command = "expand"\nmodel = "linear"\neps = [0.0]\n',
    'command = "expand"\nmodel = "linear"\neps = [1.5]\n',
    'command = "fly"\nmodel = "linear"\n',
    'command = "expand"\nmodel = "linear"\nbogus = 1\n',
    'model = "linear"\n',
    'command = "expand"\nmodel = "linear"\n[model_params]\nnot_a_param = 1\n',
    'command = "expand"\nmodel = "linear" = 3\n',
])
def test_config_errors_exit_2(tmp_path, body):
    assert _run(tmp_path, body)[0] == 2


def test_missing_config_file(tmp_path):
    assert main(["--config", str(tmp_path / "missing.toml")]) == 2


def test_order_limit(tmp_path):
    assert _run(tmp_path, 'command = "compare"\nmodel = "linear"\norder = 3\nn_paths = 100\n')[0] == 2


def test_expand_outputs(tmp_path):
    code, out = _run(tmp_path, 'command = "expand"\nmodel = "cir_like_smooth"\neps = [0.1, 0.2]\nn_steps = 64\n')
    assert code == 0
    coef = _rows(out / "coefficients.csv")
    assert len(coef) == 65
    assert list(coef[0]) == ["s", "X0", "Y0", "y1_1", "y1_0", "y2_2", "y2_11", "y2_1", "y2_0"]
    iv = _rows(out / "initial_values.csv")
    assert len(iv) == 6 and list(iv[0]) == ["eps", "order", "y0_expansion"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["model"] == "cir_like_smooth" and "version" in man and "backend" in man


def test_expand_levy(tmp_path):
    code, out = _run(tmp_path, 'command = "expand"\nmodel = "exp_levy"\norder = 4\nn_steps = 32\n')
    assert code == 0
    assert list(_rows(out / "coefficients.csv")[0]) == ["s", "Y0", "y1", "y2", "y3", "y4"]


def test_simulate_outputs(tmp_path):
    body = ('command = "simulate"\nmodel = "cir_like_smooth"\neps = [0.2]\nn_paths = 500\nmc_steps = 20\n'
            'n_steps = 20\nwrite_paths = 2\n')
    code, out = _run(tmp_path, body)
    assert code == 0
    s = _rows(out / "summary.csv")
    assert len(s) == 1 and float(s[0]["terminal_residual"]) >= 0
    paths = _rows(out / "paths.csv")
    assert len(paths) == 2 * 21
    assert list(paths[0]) == ["eps", "path_id", "node", "X_eps", "X1", "X2", "Y_hat", "Z_hat"]


def test_compare_plain_oracle_requires_zero_driver(tmp_path):
    body = 'command = "compare"\nmodel = "linear"\noracle = "plain"\nn_paths = 100\nmc_steps = 10\n'
    assert _run(tmp_path, body)[0] == 2


def test_compare_outputs(tmp_path):
    body = ('command = "compare"\nmodel = "quadratic_driver"\neps = [0.2, 0.3]\norder = 2\nn_paths = 4000\n'
            'mc_steps = 20\nn_steps = 64\n')
    code, out = _run(tmp_path, body)
    assert code == 0
    rows = _rows(out / "compare.csv")
    assert [r["eps"] for r in rows] == ["0.20000000000000001", "0.29999999999999999"]
    for r in rows:
        assert float(r["gap"]) == pytest.approx(float(r["y0_expansion"]) - float(r["y0_oracle"]), abs=1e-15)
    assert len(_rows(out / "lsmc_conditioning.csv")) == 2 * 20


def test_sweep_linear(tmp_path):
    body = ('command = "sweep"\nmodel = "linear"\neps = [0.1, 0.2, 0.4]\norder = 1\nn_paths = 20000\n'
            'mc_steps = 50\nn_steps = 64\n')
    code, out = _run(tmp_path, body)
    assert code == 0
    slope = _rows(out / "slope.csv")
    assert [r["order"] for r in slope] == ["0", "1"]
    rows = [r for r in _rows(out / "sweep.csv") if r["order"] == "1"]
    for r in rows:
        assert abs(float(r["gap"])) < 3 * float(r["std_error"])


def test_charfn_outputs(tmp_path):
    body = 'command = "charfn"\nmodel = "gaussian_jump_additive"\neps = [0.1]\norder = 4\nn_steps = 256\n'
    body += '[model_params]\nintensity = 0.0\n'
    code, out = _run(tmp_path, body)
    assert code == 0
    rows = _rows(out / "charfn.csv")
    assert list(rows[0]) == ["eps", "theta", "re", "im", "exact_re", "exact_im", "abs_gap"]
    assert all(float(r["abs_gap"]) < 1e-6 for r in rows)


def test_charfn_rejects_generic_model(tmp_path):
    assert _run(tmp_path, 'command = "charfn"\nmodel = "linear"\n')[0] == 2


def test_positional_command_and_seed_override(tmp_path):
    cfg = _write(tmp_path, 'command = "sweep"\nmodel = "linear"\nn_steps = 16\n')
    out = tmp_path / "o"
    assert main(["expand", "--config", str(cfg), "--out", str(out), "--seed", "9"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["command"] == "expand" and man["config"]["seed"] == 9


def test_byte_identical_reruns(tmp_path):
    body = ('command = "compare"\nmodel = "cir_like_smooth"\neps = [0.2]\nn_paths = 3000\nmc_steps = 16\n'
            'n_steps = 32\n')
    cfg = _write(tmp_path, body)
    outs = []
    for k, threads in enumerate(("1", "3")):
        out = tmp_path / f"o{k}"
        assert main(["--config", str(cfg), "--out", str(out), "--threads", threads]) == 0
        outs.append(out)
    for name in ("compare.csv", "lsmc_conditioning.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_from_mapping_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"command": "expand", "model": "linear", "n_paths": 0})
    cfg = ExperimentConfig.from_mapping({"command": "expand", "model": "linear", "eps": [1]})
    assert cfg.eps == [1.0]


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, 'command = "expand"\nmodel = "linear"\nn_steps = 8\n')
    r = subprocess.run([sys.executable, "-m", "fbsdexp", "--config", str(cfg), "--out", str(tmp_path / "m")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    data = np.loadtxt(tmp_path / "m" / "coefficients.csv", delimiter=",", skiprows=1)
    assert data.shape == (9, 9)
