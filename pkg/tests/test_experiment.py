import math

import numpy as np
import pytest

from chanfusion import experiment as ex
from chanfusion.dataset import ConfigError, DatasetConfig
from chanfusion.experiment import ExperimentSpec, baseline_rows, read_results, run
from chanfusion.fusion import TrainConfig
from chanfusion.nn import NonFiniteError


@pytest.fixture
def tiny(small_scene):
    return DatasetConfig(scene=small_scene, n_train=40, n_test=12, t_unit=2, step=0.02, seed=0)


def make_spec(ds, tmp_path=None, **kw):
    base = dict(dataset=ds, wirings=["H"], sweep="t_unit", values=[2], seeds=[0],
                train=TrainConfig(epochs=2, batch_size=16),
                output=None if tmp_path is None else str(tmp_path))
    base.update(kw)
    return ExperimentSpec(**base)


def test_spec_validation(tiny):
    for kw in (dict(values=[]), dict(seeds=[]), dict(sweep="epochs"), dict(wirings=["{H,Q}"]),
               dict(dtype="int8"), dict(workers=0)):
        with pytest.raises(ConfigError):
            make_spec(tiny, **kw).validate()


def test_spec_from_dict_rejects_unknown_keys(tiny):
    with pytest.raises(ConfigError, match="unknown experiment keys"):
        ExperimentSpec.from_dict({"dataset": tiny, "wirings": ["H"], "sweep": "t_unit",
                                  "values": [1], "colour": "red"})


def test_rerun_gives_identical_bytes(tiny, tmp_path):
    spec_a = make_spec(tiny, tmp_path / "a", wirings=["H", "L", "{H,L}_f"], seeds=[0, 1])
    spec_b = make_spec(tiny, tmp_path / "b", wirings=["H", "L", "{H,L}_f"], seeds=[0, 1])
    run(spec_a)
    ex._DATA_CACHE.clear()
    run(spec_b)
    for name in ("results.csv", "summary.csv", "traces.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_schema_and_summary(tiny, tmp_path):
    res = run(make_spec(tiny, tmp_path, wirings=["H", "U"], seeds=[0, 1, 2]))
    header = (tmp_path / "results.csv").read_text().splitlines()[0]
    assert header == ",".join(ex.RESULT_COLUMNS)
    rows = read_results(tmp_path / "results.csv")
    assert len(rows) == 6 and {r["schema_version"] for r in rows} == {"1"}
    med = {r["wiring"]: r["median_nmse"] for r in res.summary}
    h_vals = [r["nmse"] for r in res.rows if r["wiring"] == "H"]
    assert med["H"] == pytest.approx(np.median(h_vals))
    assert all(r["flops"] > 0 for r in res.rows)


def test_fusion_reuses_elementary_branch(tiny):
    res = run(make_spec(tiny, wirings=["{H,L}_f", "H"]))
    comps = [(t["wiring"], t["component"]) for t in res.traces]
    assert ("H", "H") in comps
    assert ("{H,L}_f", "H") not in comps and ("{H,L}_f", "Fus1") in comps


def test_nan_rows_flagged_and_run_continues(tiny, monkeypatch):
    real = ex.staged_train

    def flaky(graph, train, cfg=None, on_epoch=None):
        if graph.name == "{L}":
            raise NonFiniteError("loss is nan")
        return real(graph, train, cfg, on_epoch)

    monkeypatch.setattr(ex, "staged_train", flaky)
    res = run(make_spec(tiny, wirings=["L", "U"]))
    by = {r["wiring"]: r for r in res.rows}
    assert by["L"]["flagged"] == 1 and math.isnan(by["L"]["nmse"])
    assert by["U"]["flagged"] == 0 and math.isfinite(by["U"]["nmse"])
    assert res.flagged == 1


def test_snr_sweep_trains_once(tiny):
    res = run(make_spec(tiny, wirings=["{S,H}"], sweep="snr_db", values=[0, 5, 25],
                        train_snr_db=10.0, baselines=True))
    net = [r for r in res.rows if r["estimator"] == "net"]
    assert [r["value"] for r in net] == [0, 5, 25]
    assert len({r["epochs"] for r in net}) == 1
    epochs0 = [t["epoch"] for t in res.traces if t["component"] == "Fus1"]
    assert epochs0 == [0, 1]
    ls = {r["value"]: r["nmse"] for r in res.rows if r["estimator"] == "LS"}
    assert ls[0] > ls[5] > ls[25]


def test_learning_rate_sweep_traces(tiny):
    res = run(make_spec(tiny, wirings=["U"], sweep="learning_rate", values=[1e-3, 1e-4]))
    for lr in (1e-3, 1e-4):
        tr = [t for t in res.traces if t["value"] == lr]
        assert len(tr) == 2 and all(math.isfinite(t["test_nmse"]) for t in tr)


def test_t_fb_sweep_per_wiring_meaning(tiny):
    spec = make_spec(tiny, sweep="t_fb", values=[4])
    assert ex._dataset_for(spec, 4, 0, "{P,H}").m_fb == 4
    assert ex._dataset_for(spec, 4, 0, "{R,H,U}").t_p == 4
    res = run(make_spec(tiny, wirings=["P"], sweep="t_fb", values=[4, 8]))
    full = [r for r in res.rows if r["value"] == 8][0]
    assert full["nmse"] == 0.0 and full["epochs"] == 0


def test_baseline_rows(small_scene):
    noiseless = DatasetConfig(scene=small_scene, n_train=30, n_test=20, label_mode="perfect",
                              snr_db=float("inf"), seed=1)
    spec = make_spec(noiseless, sweep="t_p", values=[8], baselines=True)
    rows = {r["estimator"]: r for r in baseline_rows(spec, 8, 1)}
    assert rows["LS"]["nmse"] <= 1e-12
    assert list(rows["LS"]) == list(ex.RESULT_COLUMNS)
    noisy = DatasetConfig(scene=small_scene, n_train=300, n_test=200, snr_db=0.0, seed=1)
    spec = make_spec(noisy, sweep="snr_db", values=[0], baselines=True)
    rows = {r["estimator"]: r for r in baseline_rows(spec, 0, 1)}
    assert rows["LMMSE"]["nmse_true"] <= rows["LS"]["nmse_true"]


def test_short_pilots_skip_ls_row(tiny):
    spec = make_spec(tiny, sweep="t_p", values=[5], baselines=True)
    assert [r["estimator"] for r in baseline_rows(spec, 5, 0)] == ["LMMSE"]


def test_workers_match_serial(tiny, tmp_path):
    serial = run(make_spec(tiny, wirings=["U"], seeds=[0, 1]))
    ex._DATA_CACHE.clear()
    parallel = run(make_spec(tiny, wirings=["U"], seeds=[0, 1], workers=2))
    assert [r["nmse"] for r in serial.rows] == [r["nmse"] for r in parallel.rows]


def test_shipped_configs_load():
    from importlib import resources
    from pathlib import Path

    from chanfusion.cli import load_dataset_config

    root = Path(str(resources.files("chanfusion") / "configs"))
    files = sorted(root.glob("*.yaml"))
    assert len(files) >= 13
    for f in files:
        if f.stem.endswith("dataset"):
            assert load_dataset_config(f).n_train > 0
        else:
            spec = ex.load_spec(f)
            spec.validate()
            assert spec.name == f.stem
