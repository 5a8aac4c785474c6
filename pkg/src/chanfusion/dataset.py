"""Sample generation, dataset containers and path-list import.

A dataset is stored column-wise: one array per modality with the user axis
first. ``Dataset[i]`` returns a single :class:`Sample` view.

Path-list import format (CSV, header required, one row per (user, path))::

    user_id,alpha,phi_deg,tau_sec,theta_az_deg,theta_el_deg
    0,1.2e-4,35.0,2.1e-7,10.0,88.0

``alpha`` is a linear amplitude; angles are in degrees and converted to
radians on import.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import estimators as est
from .container import read_container, write_container
from .scene import (F_DOWNLINK, F_UPLINK, PathSet, SceneConfig, derive_paths, make_mask,
                    scene_from_dict, scene_to_dict, split_indices, synthesize_channel)

DATASET_KIND = "dataset"
IMPORT_COLUMNS = ("user_id", "alpha", "phi_deg", "tau_sec", "theta_az_deg", "theta_el_deg")

# per-user random stream ids
_S_PILOTS, _S_RX, _S_LABEL, _S_UPLINK, _S_HISTORY = range(5)


class ConfigError(ValueError):
    pass


class PathFileError(ValueError):
    pass


@dataclass
class DatasetConfig:
    """Everything that determines a generated dataset.

    ``snr_db`` drives the pilots/received signal/LS modalities. Channel-valued
    modalities (label, previous channels, uplink) go through the label
    estimator: exact channels for ``label_mode="perfect"``, otherwise LMMSE on
    an independent M-length sounding block at ``label_snr_db``
    (``history_snr_db`` overrides it for the previous channels).
    """

    scene: SceneConfig
    n_train: int = 9000
    n_test: int = 1000
    num_users: int | None = None
    area: tuple[tuple[float, float], ...] | None = None
    t_unit: int = 3
    t_p: int | None = None
    m_fb: int | None = None
    mask_mode: str = "prefix"
    step: float = 1.0
    snr_db: float = 25.0
    label_mode: str = "lmmse"
    label_snr_db: float = 25.0
    history_snr_db: float | None = None
    f_u: float = F_UPLINK
    f_d: float = F_DOWNLINK
    seed: int = 0

    def __post_init__(self):
        if self.num_users is None:
            self.num_users = self.n_train + self.n_test
        m = self.scene.num_antennas
        if self.t_p is None:
            self.t_p = m
        if self.m_fb is None:
            self.m_fb = max(1, (3 * m) // 4)
        if self.area is None:
            self.area = self.scene.service_area
        if self.area is None:
            raise ConfigError("no user area: set DatasetConfig.area or scene.service_area")
        self.area = tuple(tuple(float(v) for v in b) for b in self.area)

    def validate(self) -> None:
        m = self.scene.num_antennas
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test > self.num_users:
            raise ConfigError("split sizes exceed the number of users")
        if self.t_unit < 0 or self.t_p < 1:
            raise ConfigError("T_unit must be >= 0 and T_p >= 1")
        if not 1 <= self.m_fb <= m:
            raise ConfigError(f"M_fb must lie in 1..{m}")
        if self.label_mode not in ("perfect", "lmmse"):
            raise ConfigError(f"unknown label_mode {self.label_mode!r}")
        for name in ("label_snr_db", "step"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if math.isnan(self.snr_db):
            raise ConfigError("snr_db must not be NaN")
        if self.history_snr_db is not None and not math.isfinite(self.history_snr_db):
            raise ConfigError("history_snr_db must be finite")
        sa = self.scene.service_area
        if sa is not None:
            for (lo, hi), (slo, shi) in zip(self.area, sa):
                if lo < slo or hi > shi:
                    raise ConfigError(f"user area {self.area} lies outside the scene bounds {sa}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scene"] = scene_to_dict(self.scene)
        d["area"] = [list(b) for b in self.area]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        scene = d.pop("scene")
        if not isinstance(scene, SceneConfig):
            scene = scene_from_dict(scene)
        if d.get("area") is not None:
            d["area"] = tuple(tuple(b) for b in d["area"])
        if isinstance(d.get("snr_db"), str):
            d["snr_db"] = float(d["snr_db"])
        return cls(scene=scene, **d)


@dataclass
class Sample:
    user_id: int
    prev_channels: np.ndarray      # (T_unit, M), most recent first
    location: np.ndarray           # (3,)
    uplink: np.ndarray             # (M,)
    pilots: np.ndarray             # (M, T_p)
    rx: np.ndarray                 # (T_p,)
    ls_est: np.ndarray | None      # (M,) when T_p >= M
    partial_known: np.ndarray
    partial_unknown: np.ndarray
    label: np.ndarray              # (M,)
    true_channel: np.ndarray       # (M,) exact downlink channel
    mask: np.ndarray


@dataclass
class Dataset:
    user_ids: np.ndarray
    prev: np.ndarray
    location: np.ndarray
    uplink: np.ndarray
    pilots: np.ndarray
    rx: np.ndarray
    ls: np.ndarray | None
    known: np.ndarray
    unknown: np.ndarray
    label: np.ndarray
    true: np.ndarray
    mask: np.ndarray
    config: dict = field(default_factory=dict)

    _ROWS = ("user_ids", "prev", "location", "uplink", "pilots", "rx", "ls", "known",
             "unknown", "label", "true")

    def __len__(self) -> int:
        return len(self.user_ids)

    @property
    def num_antennas(self) -> int:
        return self.label.shape[1]

    @property
    def m_fb(self) -> int:
        return len(self.mask)

    def __getitem__(self, i: int) -> Sample:
        return Sample(
            user_id=int(self.user_ids[i]), prev_channels=self.prev[i], location=self.location[i],
            uplink=self.uplink[i], pilots=self.pilots[i], rx=self.rx[i],
            ls_est=None if self.ls is None else self.ls[i], partial_known=self.known[i],
            partial_unknown=self.unknown[i], label=self.label[i], true_channel=self.true[i],
            mask=self.mask)

    def subset(self, idx) -> "Dataset":
        kw = {k: (None if getattr(self, k) is None else getattr(self, k)[idx]) for k in self._ROWS}
        return Dataset(mask=self.mask, config=self.config, **kw)

    @classmethod
    def from_samples(cls, samples: list[Sample], config: dict | None = None) -> "Dataset":
        s0 = samples[0]
        ls = None if s0.ls_est is None else np.stack([s.ls_est for s in samples])
        return cls(
            user_ids=np.array([s.user_id for s in samples]),
            prev=np.stack([s.prev_channels for s in samples]),
            location=np.stack([s.location for s in samples]),
            uplink=np.stack([s.uplink for s in samples]),
            pilots=np.stack([s.pilots for s in samples]),
            rx=np.stack([s.rx for s in samples]), ls=ls,
            known=np.stack([s.partial_known for s in samples]),
            unknown=np.stack([s.partial_unknown for s in samples]),
            label=np.stack([s.label for s in samples]),
            true=np.stack([s.true_channel for s in samples]),
            mask=s0.mask, config=dict(config or {}))


def check_sample(s: Sample, m: int, t_p: int) -> list[str]:
    """Return the list of violated sample invariants (empty when valid)."""
    bad = []
    for name in ("uplink", "label", "true_channel"):
        if getattr(s, name).shape != (m,):
            bad.append(f"{name} has shape {getattr(s, name).shape}")
    if s.prev_channels.ndim != 2 or s.prev_channels.shape[1] != m:
        bad.append("prev_channels width != M")
    if (s.ls_est is not None) != (t_p >= m):
        bad.append("ls_est presence does not match T_p >= M")
    if len(s.mask) < m:
        idx = np.unique(s.mask)
        rebuilt = np.empty(m, dtype=complex)
        rebuilt[idx] = s.partial_known
        rebuilt[np.setdiff1d(np.arange(m), idx)] = s.partial_unknown
        if not np.array_equal(rebuilt, s.label):
            bad.append("partial split does not reassemble the label")
    arrays = [s.prev_channels, s.uplink, s.label, s.true_channel, s.rx, s.pilots]
    if s.ls_est is not None:
        arrays.append(s.ls_est)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        bad.append("non-finite entries")
    return bad


# ------------------------------------------------------------------ sampling
def sample_positions(area, n: int, rng: np.random.Generator) -> np.ndarray:
    """Jittered grid: n distinct cells of a grid covering ``area``, one point per cell."""
    (x0, x1), (y0, y1), (z0, z1) = area
    wx, wy = max(x1 - x0, 1e-9), max(y1 - y0, 1e-9)
    nx = max(1, math.ceil(math.sqrt(n * wx / wy)))
    ny = max(1, math.ceil(n / nx))
    cells = rng.permutation(nx * ny)[:n]
    ix, iy = cells % nx, cells // nx
    x = x0 + (ix + rng.uniform(size=n)) * (x1 - x0) / nx
    y = y0 + (iy + rng.uniform(size=n)) * (y1 - y0) / ny
    z = rng.uniform(z0, z1, size=n) if z1 > z0 else np.full(n, z0)
    return np.stack([x, y, z], axis=1)


def _user_rng(seed: int, user: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2, user, stream])


def _estimate(h: np.ndarray, r_h: np.ndarray, snr_db: float, rng: np.random.Generator
              ) -> np.ndarray:
    """LMMSE estimate of ``h`` from an independent M-length sounding block."""
    m = len(h)
    pilots = est.make_pilots(m, m, rng)
    noise = est.standard_noise(rng, m)
    clean = h @ pilots.s
    sigma2 = est.noise_variance(clean, snr_db)
    rx = est.receive(h, pilots, snr_db, noise=noise)
    return est.lmmse_estimate(rx, pilots, r_h, sigma2)


def generate(config: DatasetConfig) -> tuple[Dataset, Dataset]:
    """Build (train, test) datasets. Pure function of ``config``."""
    config.validate()
    scene = config.scene
    m, t_unit, t_p = scene.num_antennas, config.t_unit, config.t_p
    positions = sample_positions(config.area, config.num_users,
                                 np.random.default_rng([config.seed, 0]))
    perm = np.random.default_rng([config.seed, 1]).permutation(config.num_users)
    train_ids = np.sort(perm[:config.n_train])
    test_ids = np.sort(perm[config.n_train:config.n_train + config.n_test])
    users = np.concatenate([train_ids, test_ids])

    true_dl = np.empty((len(users), m), complex)
    true_ul = np.empty((len(users), m), complex)
    true_prev = np.empty((len(users), t_unit, m), complex)
    for row, u in enumerate(users):
        pos = positions[u]
        paths = derive_paths(scene, pos)
        true_dl[row] = synthesize_channel(scene, paths, config.f_d).entries
        true_ul[row] = synthesize_channel(scene, paths, config.f_u).entries
        for k in range(1, t_unit + 1):
            past = (pos[0], pos[1] - k * config.step, pos[2])
            true_prev[row, k - 1] = synthesize_channel(scene, derive_paths(scene, past),
                                                       config.f_d).entries

    n_tr = len(train_ids)
    source = true_dl[:n_tr] if n_tr else true_dl
    r_dl = est.empirical_covariance(source)
    r_ul = est.empirical_covariance(true_ul[:n_tr] if n_tr else true_ul)
    hist_snr = config.label_snr_db if config.history_snr_db is None else config.history_snr_db
    perfect = config.label_mode == "perfect"
    mask = make_mask(m, config.m_fb, config.mask_mode, seed=config.seed)
    if config.m_fb < m:
        known_idx, unknown_idx = split_indices(m, mask)
    else:
        known_idx, unknown_idx = np.arange(m), np.arange(0)

    label = np.empty_like(true_dl)
    uplink = np.empty_like(true_ul)
    prev = np.empty_like(true_prev)
    pilots = np.empty((len(users), m, t_p), complex)
    rx = np.empty((len(users), t_p), complex)
    ls = np.empty((len(users), m), complex) if t_p >= m else None
    for row, u in enumerate(users):
        block = est.make_pilots(m, t_p, _user_rng(config.seed, u, _S_PILOTS))
        noise = est.standard_noise(_user_rng(config.seed, u, _S_RX), t_p)
        sig = est.receive(true_dl[row], block, config.snr_db, noise=noise)
        pilots[row], rx[row] = block.s, sig.r
        if ls is not None:
            ls[row] = est.ls_estimate(sig, block)
        if perfect:
            label[row], uplink[row], prev[row] = true_dl[row], true_ul[row], true_prev[row]
            continue
        label[row] = _estimate(true_dl[row], r_dl, config.label_snr_db,
                               _user_rng(config.seed, u, _S_LABEL))
        uplink[row] = _estimate(true_ul[row], r_ul, config.label_snr_db,
                                _user_rng(config.seed, u, _S_UPLINK))
        hrng = _user_rng(config.seed, u, _S_HISTORY)
        for k in range(t_unit):
            prev[row, k] = _estimate(true_prev[row, k], r_dl, hist_snr, hrng)

    echo = config.to_dict()
    echo["history_order"] = "most-recent-first"
    echo["history_direction"] = "-y"
    full = Dataset(user_ids=users, prev=prev, location=positions[users], uplink=uplink,
                   pilots=pilots, rx=rx, ls=ls, known=label[:, known_idx],
                   unknown=label[:, unknown_idx], label=label, true=true_dl, mask=mask,
                   config=echo)
    return full.subset(slice(0, n_tr)), full.subset(slice(n_tr, None))


# ------------------------------------------------------------- serialization
def save_dataset(ds: Dataset, path) -> None:
    arrays = {k: getattr(ds, k) for k in Dataset._ROWS if getattr(ds, k) is not None}
    arrays["mask"] = ds.mask
    write_container(path, DATASET_KIND, arrays, meta={"config": ds.config})


def load_dataset(path) -> Dataset:
    arrays, meta = read_container(path, kind=DATASET_KIND)
    kw = {k: arrays.get(k) for k in Dataset._ROWS}
    return Dataset(mask=arrays["mask"], config=meta.get("config", {}), **kw)


def save_split(train: Dataset, test: Dataset, path) -> None:
    """Store a train/test pair in one container (arrays prefixed ``train.``/``test.``)."""
    arrays = {}
    for tag, ds in (("train", train), ("test", test)):
        for k in Dataset._ROWS:
            if getattr(ds, k) is not None:
                arrays[f"{tag}.{k}"] = getattr(ds, k)
    arrays["mask"] = train.mask
    write_container(path, DATASET_KIND, arrays, meta={"config": train.config, "split": True})


def load_split(path) -> tuple[Dataset, Dataset]:
    arrays, meta = read_container(path, kind=DATASET_KIND)
    out = []
    for tag in ("train", "test"):
        kw = {k: arrays.get(f"{tag}.{k}") for k in Dataset._ROWS}
        out.append(Dataset(mask=arrays["mask"], config=meta.get("config", {}), **kw))
    return out[0], out[1]


# ---------------------------------------------------------------- path import
def import_paths(path, max_paths: int = 25) -> dict[int, PathSet]:
    """Read an external path list into per-user PathSets (strongest ``max_paths`` kept)."""
    rows: dict[int, list[tuple[float, ...]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != IMPORT_COLUMNS:
            raise PathFileError(f"{path}:1: expected header {','.join(IMPORT_COLUMNS)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(IMPORT_COLUMNS):
                raise PathFileError(f"{path}:{lineno}: expected {len(IMPORT_COLUMNS)} fields, "
                                    f"got {len(rec)}")
            try:
                uid = int(rec[0])
                alpha, phi, tau, az, el = (float(c) for c in rec[1:])
            except ValueError as exc:
                raise PathFileError(f"{path}:{lineno}: {exc}") from None
            if not (alpha > 0 and tau > 0) or not all(map(math.isfinite, (phi, az, el))):
                raise PathFileError(f"{path}:{lineno}: alpha and tau must be positive, "
                                    "angles finite")
            rows.setdefault(uid, []).append((alpha, math.radians(phi), tau, math.radians(az),
                                             math.radians(el)))
    out = {}
    for uid, recs in rows.items():
        a = np.array(recs)
        ps = PathSet(a[:, 0], a[:, 1], a[:, 2], a[:, 3], a[:, 4])
        if len(ps) > max_paths:
            warnings.warn(f"user {uid}: {len(ps)} paths, keeping the strongest {max_paths}",
                          RuntimeWarning, stacklevel=2)
        out[uid] = ps.strongest(max_paths)
    return out


def export_paths(pathsets: dict[int, PathSet], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(IMPORT_COLUMNS)
        for uid, ps in pathsets.items():
            for a, p, t, az, el in zip(ps.alpha, ps.phi, ps.tau, ps.theta_az, ps.theta_el):
                w.writerow([uid, repr(float(a)), repr(math.degrees(p)), repr(float(t)),
                            repr(math.degrees(az)), repr(math.degrees(el))])


def channels_from_paths(scene: SceneConfig, pathsets: dict[int, PathSet], f: float
                        ) -> dict[int, np.ndarray]:
    """Synthesize channels from imported paths instead of the scene geometry."""
    return {uid: synthesize_channel(scene, ps, f).entries for uid, ps in pathsets.items()}
