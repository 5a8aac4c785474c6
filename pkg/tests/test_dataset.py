import warnings

import numpy as np
import pytest

from chanfusion.container import ContainerError, read_container, write_container
from chanfusion.dataset import (
    ConfigError, DatasetConfig, PathFileError, check_sample, channels_from_paths, export_paths,
    generate, import_paths, load_dataset, load_split, save_dataset, save_split,
)
from chanfusion.scene import F_DOWNLINK, channel_at, default_scene, derive_paths, reassemble


def assert_same(a, b):
    for k in a._ROWS + ("mask",):
        x, y = getattr(a, k), getattr(b, k)
        assert (x is None and y is None) or (x.dtype == y.dtype and np.array_equal(x, y)), k
    assert a.config == b.config


def test_default_split_and_invariants():
    cfg = DatasetConfig(scene=default_scene(num_antennas=8, max_paths=5, seed=1), t_unit=1, seed=2)
    assert (cfg.n_train, cfg.n_test) == (9000, 1000)
    train, test = generate(cfg)
    assert (len(train), len(test)) == (9000, 1000)
    assert not set(train.user_ids) & set(test.user_ids)
    bad = [(i, v) for ds in (train, test) for i in range(len(ds))
           for v in check_sample(ds[i], 8, cfg.t_p)]
    assert bad == []


def test_determinism(small_scene):
    cfg = dict(scene=small_scene, n_train=20, n_test=5, t_unit=2, step=0.02, seed=9)
    a, b = generate(DatasetConfig(**cfg)), generate(DatasetConfig(**cfg))
    assert_same(a[0], b[0])
    assert_same(a[1], b[1])
    c = generate(DatasetConfig(**{**cfg, "seed": 10}))
    assert not np.array_equal(a[0].label, c[0].label)


def test_perfect_labels_noiseless_ls_equals_label(small_scene):
    cfg = DatasetConfig(scene=small_scene, n_train=10, n_test=2, label_mode="perfect",
                        snr_db=float("inf"), t_p=8, seed=1)
    train, _ = generate(cfg)
    assert np.max(np.abs(train.ls - train.label)) <= 1e-12 * np.max(np.abs(train.label))
    np.testing.assert_array_equal(train.label, train.true)


def test_sample_contents(small_data, small_scene):
    train, _ = small_data
    s = train[0]
    assert s.prev_channels.shape == (2, 8)
    assert s.pilots.shape == (8, 8) and s.rx.shape == (8,)
    np.testing.assert_array_equal(reassemble(s.partial_known, s.partial_unknown, s.mask, 8), s.label)
    np.testing.assert_array_equal(s.true_channel, channel_at(small_scene, s.location, F_DOWNLINK).entries)
    assert train.config["history_order"] == "most-recent-first"


def test_ls_absent_when_short_pilots(small_scene):
    train, _ = generate(DatasetConfig(scene=small_scene, n_train=4, n_test=1, t_p=5, seed=0))
    assert train.ls is None and train[0].ls_est is None
    assert check_sample(train[0], 8, 5) == []


def test_config_errors(small_scene):
    with pytest.raises(ConfigError):
        generate(DatasetConfig(scene=small_scene, n_train=10, n_test=10, num_users=15))
    with pytest.raises(ConfigError):
        generate(DatasetConfig(scene=small_scene, n_train=2, n_test=1, label_snr_db=float("nan")))
    with pytest.raises(ConfigError):
        generate(DatasetConfig(scene=small_scene, n_train=2, n_test=1,
                               area=((-500, 0), (30, 90), (1.5, 1.5))))
    with pytest.raises(ConfigError):
        generate(DatasetConfig(scene=small_scene, n_train=2, n_test=1, m_fb=9))


def test_config_dict_round_trip(small_scene):
    cfg = DatasetConfig(scene=small_scene, n_train=3, n_test=2, t_unit=4, snr_db=10.0)
    assert DatasetConfig.from_dict(cfg.to_dict()) == cfg


def test_save_load_round_trip(tmp_path, small_data):
    train, test = small_data
    save_dataset(train, tmp_path / "train.chf")
    assert_same(load_dataset(tmp_path / "train.chf"), train)
    save_split(train, test, tmp_path / "split.chf")
    tr, te = load_split(tmp_path / "split.chf")
    assert_same(tr, train)
    assert_same(te, test)


def test_container_kind_and_magic(tmp_path):
    write_container(tmp_path / "x.chf", "checkpoint", {"a": np.arange(3)}, meta={"k": 1})
    arrays, meta = read_container(tmp_path / "x.chf")
    assert meta["k"] == 1 and np.array_equal(arrays["a"], np.arange(3))
    with pytest.raises(ContainerError):
        load_dataset(tmp_path / "x.chf")
    (tmp_path / "junk").write_bytes(b"not a container")
    with pytest.raises(ContainerError):
        read_container(tmp_path / "junk")


HEADER = "user_id,alpha,phi_deg,tau_sec,theta_az_deg,theta_el_deg\n"


def test_import_single_path(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text(HEADER + "0,1e-4,30.0,2e-7,10.0,90.0\n")
    ps = import_paths(f)
    assert list(ps) == [0] and len(ps[0]) == 1
    assert ps[0].phi[0] == pytest.approx(np.pi / 6)


def test_import_truncates_to_25(tmp_path):
    f = tmp_path / "p.csv"
    rows = [f"3,{(k + 1) * 1e-5},0,{1e-7 * (k + 1)},0,90\n" for k in range(26)]
    f.write_text(HEADER + "".join(rows))
    with pytest.warns(RuntimeWarning, match="keeping the strongest 25"):
        ps = import_paths(f)
    assert len(ps[3]) == 25
    assert ps[3].alpha.min() == pytest.approx(2e-5)


def test_import_parse_error_line_number(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text(HEADER + "0,1e-4,30,2e-7,10,90\n0,abc,30,2e-7,10,90\n")
    with pytest.raises(PathFileError, match=":3:"):
        import_paths(f)
    f.write_text("a,b\n")
    with pytest.raises(PathFileError, match=":1:"):
        import_paths(f)
    f.write_text(HEADER + "0,-1,30,2e-7,10,90\n")
    with pytest.raises(PathFileError, match=":2:"):
        import_paths(f)


def test_export_import_feeds_synthesis(tmp_path, small_scene):
    pos = (4.0, 55.0, 1.5)
    ref = derive_paths(small_scene, pos)
    export_paths({7: ref}, tmp_path / "p.csv")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        back = import_paths(tmp_path / "p.csv")
    h = channels_from_paths(small_scene, back, F_DOWNLINK)[7]
    want = channel_at(small_scene, pos, F_DOWNLINK).entries
    assert np.abs(h - want).max() <= 1e-9 * np.abs(want).max()
