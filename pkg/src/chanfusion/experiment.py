"""Configuration-driven sweeps over the fusion graphs, written as plot-ready CSV.

An experiment trains a list of wirings for every (sweep value, seed) cell and
records the test NMSE of each. Output directory layout::

    results.csv   one row per (value, wiring or estimator, seed)
    summary.csv   median over seeds per (value, wiring or estimator)
    traces.csv    per-epoch training loss (and test NMSE of the terminal net)
    timing.csv    wall time per row

Every file except ``timing.csv`` is a pure function of the spec in
single-threaded mode, so reruns produce identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import estimators as est
from .dataset import ConfigError, Dataset, DatasetConfig, generate
from .fusion import MODALITIES, Dims, FusionGraph, TrainConfig, build, predict, staged_train
from .fusion.graph import load_wirings
from .nn import NonFiniteError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RESULT_COLUMNS = ("schema_version", "experiment", "sweep", "value", "wiring", "estimator", "seed",
                  "nmse", "nmse_db", "nmse_true", "flops", "epochs", "flagged")
SUMMARY_COLUMNS = ("schema_version", "experiment", "sweep", "value", "wiring", "estimator",
                   "n_seeds", "n_flagged", "median_nmse", "median_nmse_db")
TRACE_COLUMNS = ("schema_version", "experiment", "sweep", "value", "wiring", "seed", "component",
                 "epoch", "train_loss", "test_nmse")
TIMING_COLUMNS = ("experiment", "sweep", "value", "wiring", "estimator", "seed", "wall_time_s")
SWEEPS = ("t_unit", "t_fb", "t_p", "snr_db", "learning_rate")


@dataclass
class ExperimentSpec:
    """One sweep.

    ``t_fb`` is read per wiring: the pilot length T_p for graphs with a Net{R}
    branch, the fed-back entry count M_fb otherwise. For ``snr_db`` each
    (wiring, seed) is trained once at ``train_snr_db`` and tested at every value.
    The cell seed drives dataset generation, initialisation and shuffling.
    """

    dataset: DatasetConfig
    wirings: list[str]
    sweep: str
    values: list
    seeds: list[int] = field(default_factory=lambda: [0])
    output: str | None = None
    name: str = "experiment"
    train: TrainConfig = field(default_factory=TrainConfig)
    dtype: str = "float64"
    baselines: bool = False
    train_snr_db: float = 10.0
    workers: int = 1
    trace_test: bool = True

    def validate(self) -> None:
        if self.sweep not in SWEEPS:
            raise ConfigError(f"sweep must be one of {SWEEPS}, got {self.sweep!r}")
        if not self.values:
            raise ConfigError("sweep values must be non-empty")
        if len(self.seeds) < 1:
            raise ConfigError("at least one seed is required")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        table = load_wirings()
        for w in self.wirings:
            if _wiring_name(w) not in table:
                raise ConfigError(f"unknown wiring {w!r}")
        if self.baselines and self.sweep == "learning_rate":
            raise ConfigError("baseline rows are not defined for a learning-rate sweep")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base_dir: Path | None = None) -> "ExperimentSpec":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        ds = d.get("dataset")
        if ds is None:
            raise ConfigError("experiment needs a dataset section")
        if isinstance(ds, str):
            path = Path(ds) if base_dir is None else base_dir / ds
            ds = yaml.safe_load(path.read_text())
        try:
            d["dataset"] = ds if isinstance(ds, DatasetConfig) else DatasetConfig.from_dict(ds)
            tr = d.get("train") or {}
            d["train"] = tr if isinstance(tr, TrainConfig) else TrainConfig(**tr)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"bad experiment config: {exc}") from None
        d["wirings"] = list(d.get("wirings", []))
        d["values"] = list(d.get("values", []))
        d["seeds"] = [int(s) for s in d.get("seeds", [0])]
        spec = cls(**d)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dataset"] = self.dataset.to_dict()
        return d


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return ExperimentSpec.from_dict(doc, base_dir=path.parent)


@dataclass
class Results:
    rows: list[dict]
    summary: list[dict]
    traces: list[dict]
    timing: list[dict]

    @property
    def flagged(self) -> int:
        return sum(int(r["flagged"]) for r in self.rows)


# ------------------------------------------------------------------ helpers
def _wiring_name(w: str) -> str:
    return f"{{{w}}}" if w in MODALITIES else w


def _branches(wiring: str) -> list[str]:
    return list(load_wirings()[_wiring_name(wiring)]["branches"])


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def _dataset_for(spec: ExperimentSpec, value, seed: int, wiring: str | None = None
                 ) -> DatasetConfig:
    cfg = dataclasses.replace(spec.dataset, seed=seed)
    sw = spec.sweep
    if sw == "t_unit":
        cfg = dataclasses.replace(cfg, t_unit=int(value))
    elif sw == "t_p":
        cfg = dataclasses.replace(cfg, t_p=int(value))
    elif sw == "t_fb":
        if wiring is not None and "R" in _branches(wiring):
            cfg = dataclasses.replace(cfg, t_p=int(value))
        else:
            cfg = dataclasses.replace(cfg, m_fb=int(value))
    elif sw == "snr_db":
        v = float(value)
        cfg = dataclasses.replace(cfg, snr_db=v, history_snr_db=v)
    return cfg


_DATA_CACHE: dict[str, tuple[Dataset, Dataset]] = {}


def _generate(cfg: DatasetConfig) -> tuple[Dataset, Dataset]:
    key = yaml.safe_dump(cfg.to_dict(), sort_keys=True)
    if key not in _DATA_CACHE:
        if len(_DATA_CACHE) > 8:
            _DATA_CACHE.clear()
        _DATA_CACHE[key] = generate(cfg)
    return _DATA_CACHE[key]


def _row(spec, value, wiring, estimator, seed, nmse, nmse_true, flops, epochs, flagged) -> dict:
    return {
        "schema_version": SCHEMA_VERSION, "experiment": spec.name, "sweep": spec.sweep,
        "value": value, "wiring": wiring, "estimator": estimator, "seed": seed,
        "nmse": nmse, "nmse_db": est.to_db(nmse) if np.isfinite(nmse) else float("nan"),
        "nmse_true": nmse_true, "flops": flops, "epochs": epochs, "flagged": int(flagged),
    }


def _safe_nmse(h_hat, h) -> float:
    if not np.all(np.isfinite(h_hat)):
        return float("nan")
    return est.nmse(h_hat, h)


# -------------------------------------------------------------- baselines
def baseline_rows(spec: ExperimentSpec, value, seed: int, data: tuple[Dataset, Dataset] | None = None
                  ) -> list[dict]:
    """LS and LMMSE rows for one cell, in the same schema as the network rows.

    LMMSE uses the training channels' second moment and the per-sample noise
    power; LS rows are skipped when T_p < M.
    """
    # in a t_fb sweep the classical estimators see the value as pilot length
    cfg = _dataset_for(spec, value, seed, "R" if spec.sweep == "t_fb" else None)
    train, test = data if data is not None else _generate(cfg)
    snr = cfg.snr_db
    rows = []
    if test.ls is not None:
        rows.append(_row(spec, value, "-", "LS", seed, _safe_nmse(test.ls, test.label),
                         _safe_nmse(test.ls, test.true), 0, 0, False))
    r_h = est.empirical_covariance(train.true if len(train) else test.true)
    lm = np.empty_like(test.true)
    for i in range(len(test)):
        block = est.PilotBlock(test.pilots[i])
        sigma2 = est.noise_variance(test.true[i] @ block.s, snr)
        lm[i] = est.lmmse_estimate(test.rx[i], block, r_h, sigma2)
    rows.append(_row(spec, value, "-", "LMMSE", seed, _safe_nmse(lm, test.label),
                     _safe_nmse(lm, test.true), 0, 0, False))
    return rows


# ------------------------------------------------------------------ cells
def _train_graph(spec: ExperimentSpec, wiring: str, train: Dataset, test: Dataset, seed: int,
                 value, trained: dict[str, FusionGraph], traces: list[dict]
                 ) -> tuple[FusionGraph, int]:
    cfg = dataclasses.replace(spec.train, seed=seed)
    if spec.sweep == "learning_rate":
        lr = float(value)
        cfg = dataclasses.replace(cfg, lr={c: lr for c in ["H", "L", "U", "P", "R", "S", "Fus1",
                                                          "Fus2", "Fus3"]})
    graph = build(wiring, Dims.of(train), seed=seed, dtype=np.dtype(spec.dtype))
    if graph.uses_partial() and train.m_fb >= train.num_antennas:
        # whole channel fed back: predict() returns it, nothing to train
        return graph, 0
    if graph.stages:
        for b in graph.trained_branches():
            if b in trained:
                graph.adopt(b, trained[b])
    terminal = graph.terminal

    def on_epoch(comp, epoch, loss):
        test_nmse = float("nan")
        if spec.trace_test and comp == terminal:
            test_nmse = _safe_nmse(predict(graph, test), test.label)
        traces.append({"schema_version": SCHEMA_VERSION, "experiment": spec.name,
                       "sweep": spec.sweep, "value": value, "wiring": wiring, "seed": seed,
                       "component": comp, "epoch": epoch, "train_loss": loss,
                       "test_nmse": test_nmse})

    res = staged_train(graph, train, cfg, on_epoch)
    if not graph.stages:
        trained[graph.terminal] = graph
    return graph, sum(len(t) for t in res.traces.values())


def _order_wirings(wirings: list[str]) -> list[str]:
    # elementary graphs first so fusions can adopt their trained branches
    return sorted(wirings, key=lambda w: (len(_branches(w)) > 1, wirings.index(w)))


def run_cell(spec: ExperimentSpec, value, seed: int) -> Results:
    """All wirings for one (value, seed); for SNR sweeps ``value`` is ignored."""
    rows, traces, timing = [], [], []
    trained: dict[str, FusionGraph] = {}
    snr_sweep = spec.sweep == "snr_db"
    groups: dict[str, list[str]] = {}
    for w in _order_wirings(spec.wirings):
        cfg = (_dataset_for(spec, spec.train_snr_db, seed) if snr_sweep
               else _dataset_for(spec, value, seed, w))
        groups.setdefault(yaml.safe_dump(cfg.to_dict(), sort_keys=True), []).append(w)
    for ws in groups.values():
        trained.clear()
        for w in ws:
            cfg = (_dataset_for(spec, spec.train_snr_db, seed) if snr_sweep
                   else _dataset_for(spec, value, seed, w))
            train, test = _generate(cfg)
            t0 = time.perf_counter()
            try:
                tr_value = spec.train_snr_db if snr_sweep else value
                graph, epochs = _train_graph(spec, w, train, test, seed, tr_value, trained, traces)
                flagged, flops = False, graph.flops()
            except NonFiniteError as exc:
                log.warning("%s seed %d value %s: non-finite loss (%s); row flagged", w, seed,
                            value, exc)
                graph, flagged, epochs, flops = None, True, 0, 0
            test_values = spec.values if snr_sweep else [value]
            for v in test_values:
                if snr_sweep:
                    _, test = _generate(_dataset_for(spec, v, seed))
                if graph is None:
                    nm = nt = float("nan")
                else:
                    h = predict(graph, test)
                    nm, nt = _safe_nmse(h, test.label), _safe_nmse(h, test.true)
                row_flag = flagged or not math.isfinite(nm)
                rows.append(_row(spec, v, w, "net", seed, nm, nt, flops, epochs, row_flag))
                timing.append({"experiment": spec.name, "sweep": spec.sweep, "value": v,
                               "wiring": w, "estimator": "net", "seed": seed,
                               "wall_time_s": round(time.perf_counter() - t0, 3)})
    if spec.baselines:
        for v in (spec.values if snr_sweep else [value]):
            t0 = time.perf_counter()
            for r in baseline_rows(spec, v, seed):
                rows.append(r)
                timing.append({"experiment": spec.name, "sweep": spec.sweep, "value": v,
                               "wiring": "-", "estimator": r["estimator"], "seed": seed,
                               "wall_time_s": round(time.perf_counter() - t0, 3)})
    return Results(rows, [], traces, timing)


def _run_cell_isolated(spec_dict: dict, value, seed: int) -> Results:
    spec = ExperimentSpec.from_dict(spec_dict)
    with threadpool_limits(1):
        return run_cell(spec, value, seed)


def summarize(spec: ExperimentSpec, rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["value"], r["wiring"], r["estimator"]), []).append(r)
    out = []
    for (value, wiring, estimator), rs in groups.items():
        good = [r["nmse"] for r in rs if not r["flagged"]]
        med = float(np.median(good)) if good else float("nan")
        out.append({"schema_version": SCHEMA_VERSION, "experiment": spec.name,
                    "sweep": spec.sweep, "value": value, "wiring": wiring,
                    "estimator": estimator, "n_seeds": len(rs),
                    "n_flagged": len(rs) - len(good), "median_nmse": med,
                    "median_nmse_db": est.to_db(med) if np.isfinite(med) else float("nan")})
    return out


def run(spec: ExperimentSpec, single_thread: bool = True) -> Results:
    """Run every cell, write the CSV files when ``spec.output`` is set, and return the tables."""
    spec.validate()
    values = [None] if spec.sweep == "snr_db" else spec.values
    cells = [(v, s) for v in values for s in spec.seeds]
    if spec.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            parts = list(pool.map(_run_cell_isolated, [spec.to_dict()] * len(cells),
                                  [c[0] for c in cells], [c[1] for c in cells]))
    elif single_thread:
        with threadpool_limits(1):
            parts = [run_cell(spec, v, s) for v, s in cells]
    else:
        parts = [run_cell(spec, v, s) for v, s in cells]
    rows = [r for p in parts for r in p.rows]
    res = Results(rows, summarize(spec, rows), [t for p in parts for t in p.traces],
                  [t for p in parts for t in p.timing])
    if spec.output:
        write_results(res, spec.output)
    return res


# --------------------------------------------------------------------- CSV
def _write(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def write_results(res: Results, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "results.csv", RESULT_COLUMNS, res.rows)
    _write(out / "summary.csv", SUMMARY_COLUMNS, res.summary)
    _write(out / "traces.csv", TRACE_COLUMNS, res.traces)
    _write(out / "timing.csv", TIMING_COLUMNS, res.timing)


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and int(rows[0]["schema_version"]) != SCHEMA_VERSION:
        raise ValueError(f"{path}: schema version {rows[0]['schema_version']} != {SCHEMA_VERSION}")
    return rows
