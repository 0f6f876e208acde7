import subprocess
import sys

import numpy as np
import pytest

from sbmrom.cli import main
from sbmrom.config import PRESETS, load_config, parabolic_inflow
from sbmrom.io import read_vtk

TINY = ["--set", "mesh.h=0.25", "--set", "experiment.name=exp2", "--set", "experiment.mu0=-0.8, 0.8",
        "--set", "experiment.mu1=0.2, 0.4", "--set", "experiment.mu2=0.8, 1.6",
        "--set", "experiment.center_y=0.0", "--set", "offline.n_train=2",
        "--set", "offline.n_modes=6", "--set", "offline.n_supremizers=2",
        "--set", "online.n_test=1", "--set", "online.n_sweep=2, 4"]


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load(name):
    cfg = load_config(name, env={})
    assert cfg.parameter_map.experiment == name.split("-")[0]
    assert cfg.n_train >= 60 and cfg.n_test == 10
    assert max(cfg.n_sweep) <= cfg.n_modes
    assert str(cfg.output_dir) == f"runs/{name}"


def test_small_presets_match_desk_scale():
    e1 = load_config("exp1-small", env={})
    assert (e1.h, e1.n_train, e1.n_sweep) == (0.1, 60, (5, 10, 20, 40))
    assert e1.parameter_map.n_free == 1
    e2 = load_config("exp2-small", env={})
    assert e2.parameter_map.n_free == 3 and e2.n_sweep == (10, 20, 40)
    assert load_config("exp1-full", env={}).h == 0.035


def test_defaults_and_overrides():
    cfg = load_config(None, ["fluid.nu=0.05", "newton.max_iter=7", "offline.energy=0.999"], env={})
    assert cfg.fluid.nu == 0.05 and cfg.newton.max_iter == 7 and cfg.energy == 0.999
    assert cfg.stabilization.gamma == 10.0 and cfg.newton.tol_rel == 1e-10
    assert cfg.boundary.walls == "slip" and cfg.snapshot_mode == "iterates"


@pytest.mark.parametrize("bad", ["fluid.mu=1", "nosection.x=1", "fluid.nu", "fluid=1"])
def test_bad_overrides_are_rejected(bad):
    with pytest.raises(ValueError):
        load_config(None, [bad], env={})


def test_invalid_values_are_rejected(tmp_path):
    with pytest.raises(ValueError):
        load_config(None, ["offline.snapshot_mode=everything"], env={})
    with pytest.raises(ValueError):
        load_config(None, ["boundary.inflow_profile=sine"], env={})
    with pytest.raises(ValueError):
        load_config(None, ["experiment.mu0=1, 0"], env={})
    ini = tmp_path / "x.ini"
    ini.write_text("[mesh]\nresolution = 3\n")
    with pytest.raises(ValueError, match="mesh.resolution"):
        load_config(ini, env={})
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "none.ini", env={})


def test_ini_file_and_env_override(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[mesh]\nh = 0.2\n[output]\ndir = somewhere\n")
    cfg = load_config(ini, env={"SROM_OUT": str(tmp_path / "env")})
    assert cfg.h == 0.2 and cfg.output_dir == tmp_path / "env"
    # the output directory does not change the configuration identity
    assert cfg.config_hash == load_config(ini, env={}).config_hash
    assert cfg.config_hash != load_config(ini, ["mesh.h=0.25"], env={}).config_hash


def test_parabolic_profile():
    f = parabolic_inflow(1.5, -1.0, 1.0)
    v = f(np.array([[-2.0, -1.0], [-2.0, 0.0], [-2.0, 0.5], [-2.0, 1.0]]))
    assert np.allclose(v[:, 0], [0.0, 1.5, 1.125, 0.0]) and np.all(v[:, 1] == 0)
    cfg = load_config(None, ["boundary.inflow_profile=parabolic"], env={})
    assert cfg.boundary.inflow(np.array([[-2.0, 0.0]]))[0, 0] == pytest.approx(1.0)


# -- command line -------------------------------------------------------------------

def test_mesh_command(tmp_path, capsys):
    vtk = tmp_path / "m.vtk"
    assert main(["mesh", *TINY, "--mu=0.1,0.3,1.2", "--vtk", str(vtk)]) == 0
    out = capsys.readouterr().out
    assert "16x8" in out and "active triangles" in out
    data = read_vtk(vtk)
    assert data["cells"].shape == (256, 3) and "level_set" in data["point_data"]


def test_fom_command(tmp_path, capsys):
    vtk = tmp_path / "f.vtk"
    assert main(["fom", *TINY, "--mu=-0.5,0.25,1.0", "--vtk", str(vtk)]) == 0
    assert "converged=True" in capsys.readouterr().out
    assert set(read_vtk(vtk)["point_data"]) >= {"velocity_fom", "pressure_fom"}


def test_full_cli_workflow(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SROM_OUT", str(tmp_path))
    assert main(["offline", *TINY]) == 0
    assert main(["supremizer", *TINY]) == 0
    assert main(["online", *TINY]) == 0
    assert main(["online", *TINY, "--supremizers"]) == 0
    capsys.readouterr()
    assert main(["report", *TINY]) == 0
    out = capsys.readouterr().out
    assert "report.csv" in out and "report_sup.csv" in out and "mean e_u" in out


def test_errors_exit_with_status_two(tmp_path, capsys):
    assert main(["online", "--set", f"output.dir={tmp_path}"]) == 2
    assert "run the offline stage first" in capsys.readouterr().err
    assert main(["mesh", "--set", "bogus.key=1"]) == 2
    with pytest.raises(SystemExit):
        main(["fom", "--mu=1,2"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sbmrom", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "offline" in res.stdout
