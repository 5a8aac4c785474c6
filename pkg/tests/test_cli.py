import numpy as np
import pytest
import yaml

from chanfusion import cli
from chanfusion import experiment as ex
from chanfusion.container import read_container
from chanfusion.nn import NonFiniteError

DATASET = {
    "scene": {"default": {"num_antennas": 8, "max_paths": 5, "seed": 3}},
    "n_train": 40, "n_test": 10, "t_unit": 2, "step": 0.02, "seed": 0,
    "area": [[-0.5, 0.5], [59.5, 60.5], [1.5, 1.5]],
}


@pytest.fixture
def cfg_dir(tmp_path):
    (tmp_path / "data.yaml").write_text(yaml.safe_dump(DATASET))
    (tmp_path / "exp.yaml").write_text(yaml.safe_dump({
        "name": "tiny", "dataset": "data.yaml", "wirings": ["{H}", "{U}"], "sweep": "t_unit",
        "values": [2], "seeds": [0], "train": {"epochs": 2, "batch_size": 16},
        "output": str(tmp_path / "out")}))
    return tmp_path


def test_generate_train_evaluate(cfg_dir, capsys):
    d = cfg_dir
    assert cli.main(["generate-dataset", "--config", str(d / "data.yaml"),
                     "--out", str(d / "ds.chf")]) == 0
    assert cli.main(["train", "--data", str(d / "ds.chf"), "--wiring", "H", "--epochs", "2",
                     "--batch-size", "16", "--out", str(d / "h.ckpt"),
                     "--traces", str(d / "tr.csv")]) == 0
    assert cli.main(["evaluate", "--model", str(d / "h.ckpt"), "--data", str(d / "ds.chf"),
                     "--out", str(d / "eval.csv")]) == 0
    lines = (d / "eval.csv").read_text().splitlines()
    assert lines[0] == ",".join(ex.RESULT_COLUMNS)
    assert lines[1].startswith("1,evaluate,")
    assert len((d / "tr.csv").read_text().splitlines()) == 3
    assert "NMSE" in capsys.readouterr().out


def test_generate_overrides(cfg_dir):
    d = cfg_dir
    assert cli.main(["generate-dataset", "--config", str(d / "exp.yaml"), "--out",
                     str(d / "ds.chf"), "--n-train", "6", "--n-test", "3", "--t-unit", "1"]) == 0
    arrays, meta = read_container(d / "ds.chf")
    assert arrays["train.label"].shape == (6, 8) and arrays["test.prev"].shape == (3, 1, 8)
    assert meta["config"]["t_unit"] == 1


def test_sweep_verb(cfg_dir):
    assert cli.main(["sweep", "--config", str(cfg_dir / "exp.yaml"), "--seeds", "0", "1"]) == 0
    rows = ex.read_results(cfg_dir / "out" / "results.csv")
    assert len(rows) == 4


def test_config_errors_exit_2(cfg_dir, tmp_path):
    assert cli.main(["generate-dataset", "--config", str(tmp_path / "missing.yaml"),
                     "--out", "x"]) == 2
    (tmp_path / "bad.yaml").write_text("n_train: 5\n")
    assert cli.main(["generate-dataset", "--config", str(tmp_path / "bad.yaml"), "--out", "x"]) == 2
    spec = yaml.safe_load((cfg_dir / "exp.yaml").read_text())
    spec["values"] = []
    (tmp_path / "empty.yaml").write_text(yaml.safe_dump(spec))
    assert cli.main(["sweep", "--config", str(tmp_path / "empty.yaml")]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep"])
    assert exc.value.code == 2


def test_runtime_error_exit_1(cfg_dir, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "generate", boom)
    assert cli.main(["generate-dataset", "--config", str(cfg_dir / "data.yaml"),
                     "--out", str(cfg_dir / "x.chf")]) == 1


def test_nan_flagged_exit_3(cfg_dir, monkeypatch):
    def diverge(*a, **k):
        raise NonFiniteError("loss is nan")

    monkeypatch.setattr(ex, "staged_train", diverge)
    assert cli.main(["sweep", "--config", str(cfg_dir / "exp.yaml")]) == 3
    rows = ex.read_results(cfg_dir / "out" / "results.csv")
    assert all(r["flagged"] == "1" for r in rows)


def test_import_paths_verb(tmp_path):
    (tmp_path / "scene.yaml").write_text("default: {num_antennas: 8, max_paths: 5, seed: 3}\n")
    (tmp_path / "p.csv").write_text("user_id,alpha,phi_deg,tau_sec,theta_az_deg,theta_el_deg\n"
                                    "0,1e-4,30,2e-7,10,90\n1,2e-4,0,1e-7,0,90\n")
    assert cli.main(["import-paths", "--paths", str(tmp_path / "p.csv"), "--scene",
                     str(tmp_path / "scene.yaml"), "--out", str(tmp_path / "ch.chf")]) == 0
    arrays, meta = read_container(tmp_path / "ch.chf", kind="channels")
    assert arrays["downlink"].shape == (2, 8) and np.array_equal(arrays["user_ids"], [0, 1])
    assert np.allclose(np.abs(arrays["downlink"][1]), 2e-4)
    (tmp_path / "p.csv").write_text("oops\n")
    assert cli.main(["import-paths", "--paths", str(tmp_path / "p.csv"), "--scene",
                     str(tmp_path / "scene.yaml"), "--out", str(tmp_path / "ch.chf")]) == 2
