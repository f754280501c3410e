import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mfbose import cli
from mfbose.config import config_hash, expand_grid, from_dict, load_config
from mfbose.errors import (AsymmetricCoefficient, NegativeCoefficient, NonHermitian, ValidationError)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
[lattice]
dimension = 1
cutoff = 1

[potential]
preset = "constant"
scale = 0.5

[observable]
preset = "cos-mode"
k = [1]

[grids]
N = [3, 4]
lambda = { start = 0.0, stop = 1.0, num = 6 }
x = [0.1, 0.3]
s = [0.0, 1.0]

[verify]
N = 3
lambda = [0.1]
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


class TestConfig:
    def test_defaults_and_grids(self):
        cfg = from_dict({"potential": {"preset": "zero"}})
        assert cfg.N_list == [4, 6, 8, 10, 12]
        assert len(cfg.lambdas) == 41 and cfg.lambdas[-1] == 2.0
        assert cfg.dense_limit == 4000
        assert cfg.observable.g_norm_sq == pytest.approx(0.5)

    def test_shipped_configs_load(self):
        for path in CONFIGS.glob("*.toml"):
            load_config(path)

    def test_expand_grid(self):
        np.testing.assert_array_equal(expand_grid({"start": 0, "stop": 1, "num": 3}, "g"), [0, 0.5, 1])
        with pytest.raises(ValidationError, match="g: range table"):
            expand_grid({"start": 0}, "g")
        with pytest.raises(ValidationError):
            expand_grid(["a"], "g")

    def test_hash_is_canonical(self):
        a = from_dict({"potential": {"preset": "zero"}, "lattice": {"cutoff": 1, "dimension": 1}})
        b = from_dict({"lattice": {"dimension": 1, "cutoff": 1}, "potential": {"preset": "zero"}})
        assert a.hash == b.hash == config_hash(a.raw)
        c = from_dict({"potential": {"preset": "constant"}})
        assert c.hash != a.hash

    def test_overrides(self):
        cfg = from_dict({"potential": {"preset": "zero"}}, overrides={"solver": {"dense_limit": 7, "tol": None}})
        assert cfg.dense_limit == 7 and cfg.tol == 1e-10

    @pytest.mark.parametrize("data, exc, match", [
        ({}, ValidationError, r"\[potential\]"),
        ({"potential": {"preset": "zero"}, "extra": {}}, ValidationError, r"\[extra\]"),
        ({"potential": {"preset": "zero", "bogus": 1}}, ValidationError, "bogus"),
        ({"potential": {"coefficients": [1.0, -1.0, 1.0]}}, NegativeCoefficient, r"\[potential\]"),
        ({"potential": {"coefficients": [1.0, 2.0, 3.0]}}, AsymmetricCoefficient, r"\[potential\]"),
        ({"potential": {"preset": "zero"}, "observable": {"matrix": [[0, 1, 0], [0, 0, 0], [0, 0, 0]]}},
         NonHermitian, r"\[observable\]"),
        ({"potential": {"preset": "zero"}, "grids": {"N": [1, 4]}}, ValidationError, "grids.N"),
        ({"potential": {"preset": "zero"}, "grids": {"s": [1.5]}}, ValidationError, "grids.s"),
        ({"potential": {"preset": "zero"}, "grids": {"lambda": [-1.0]}}, ValidationError, "grids.lambda"),
        ({"potential": {"preset": "zero"}, "grids": {"x": []}}, ValidationError, "grids.x"),
        ({"potential": {"preset": "zero"}, "solver": {"tol": 0}}, ValidationError, "solver.tol"),
        ({"potential": {"preset": "zero"}, "basis": {"mode_cap": "x"}}, ValidationError, "basis.mode_cap"),
        ({"potential": {"preset": "zero"}, "verify": {"N": 1}}, ValidationError, "verify.N"),
        ({"potential": {"preset": "zero"}, "lattice": {"cutoff": 0}}, ValidationError, r"\[lattice\]"),
    ])
    def test_validation(self, data, exc, match):
        with pytest.raises(exc, match=match):
            from_dict(data)

    def test_bad_toml(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[potential\n")
        with pytest.raises(ValidationError):
            load_config(p)
        with pytest.raises(ValidationError, match="cannot read"):
            load_config(tmp_path / "missing.toml")


def run(argv):
    return cli.main([str(a) for a in argv])


class TestCli:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as e:
            cli.main(["--version"])
        assert e.value.code == 0
        assert "mfbose" in capsys.readouterr().out

    def test_bogoliubov(self, small_cfg, tmp_path):
        out = tmp_path / "o"
        assert run(["bogoliubov", "--config", small_cfg, "--out", out]) == 0
        data = json.loads((out / "bogoliubov.json").read_text())
        assert data["active_convention"] == "paired"
        assert data["config_hash"] == load_config(small_cfg).hash
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["outputs"]["bogoliubov"] == ["bogoliubov.json"]

    def test_ed_and_export(self, small_cfg, tmp_path):
        out = tmp_path / "o"
        assert run(["ed", "--config", small_cfg, "--out", out, "--export-operators"]) == 0
        lines = (out / "ed.csv").read_text().splitlines()
        assert lines[0].startswith("# config_hash=") and len(lines) == 4
        from mfbose.fock import load_triplets

        H = load_triplets(out / "hamiltonian_N003.txt")
        assert H.shape == (10, 10)

    def test_ldp_and_sweep(self, small_cfg, tmp_path):
        out = tmp_path / "o"
        assert run(["ldp", "--config", small_cfg, "--out", out]) == 0
        assert run(["sweep", "--config", small_cfg, "--out", out, "--threads", "2"]) == 0
        for name in ("ldp_N003.json", "ldp_N004.json", "ldp_lambda.csv", "ldp_x.csv", "ldp_summary.json",
                     "sweep.csv", "diagnostics.csv", "sweep.json"):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["outputs"]) == {"ldp", "sweep"}

    def test_verify_passes(self, small_cfg, tmp_path):
        out = tmp_path / "o"
        assert run(["verify", "--config", small_cfg, "--out", out]) == 0
        data = json.loads((out / "verify.json").read_text())
        assert data["ok"] and not data["failures"]

    def test_fault_injection_exit_4(self, small_cfg, tmp_path, capsys):
        out = tmp_path / "o"
        assert run(["verify", "--config", small_cfg, "--out", out, "--inject-fault", "corrupt-q"]) == 4
        data = json.loads((out / "verify.json").read_text())
        assert not data["ok"]
        assert any(f.startswith("excitation_identity") for f in data["failures"])
        assert "FAILED excitation_identity" in capsys.readouterr().err

    def test_validation_exit_2(self, tmp_path, capsys):
        p = tmp_path / "neg.toml"
        p.write_text("[potential]\ncoefficients = [1.0, -2.0, 1.0]\n")
        assert run(["bogoliubov", "--config", p, "--out", tmp_path]) == 2
        assert "NegativeCoefficient" in capsys.readouterr().err
        assert run(["bogoliubov", "--config", tmp_path / "nope.toml"]) == 2

    def test_threads_exit_2(self, small_cfg, tmp_path):
        assert run(["ed", "--config", small_cfg, "--out", tmp_path, "--threads", "0"]) == 2

    def test_solver_exit_3(self, small_cfg, tmp_path):
        assert run(["ed", "--config", small_cfg, "--out", tmp_path, "--dense-limit", "1", "--tol", "1e-30"]) == 3

    def test_overflow_exit_2(self, tmp_path):
        p = tmp_path / "big.toml"
        p.write_text(SMALL.replace("N = [3, 4]", "N = [40]") + "\n[solver]\nmax_dim = 100\n")
        assert run(["ed", "--config", p, "--out", tmp_path]) == 2

    def test_byte_determinism(self, small_cfg, tmp_path):
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            for cmd in ("bogoliubov", "ed", "ldp", "verify", "sweep"):
                assert run([cmd, "--config", small_cfg, "--out", d]) == 0
        names = sorted(p.name for p in dirs[0].iterdir() if p.name != "manifest.json")
        assert names == sorted(p.name for p in dirs[1].iterdir() if p.name != "manifest.json")
        for n in names:
            assert (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes(), n

    def test_module_entry_point(self, small_cfg, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "mfbose", "bogoliubov", "--config", str(small_cfg),
                               "--out", str(tmp_path)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
