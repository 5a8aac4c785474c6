"""Declarative fusion graphs over the elementary networks.

A graph is a set of elementary branches plus an ordered list of fusion
stages. Each stage concatenates taps (``output``, ``hidden`` or ``input``) of
branches or earlier stages and feeds them to a dense fusion network. Graph
topologies live in ``wirings.yaml``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from .. import nn
from ..container import read_container, write_container
from ..dataset import Dataset, Sample
from ..estimators import xi, xi_inv
from ..nn import Tensor
from .networks import LSTMNet, MLP, Network, RNet, middle_index

CHECKPOINT_KIND = "checkpoint"
CHECKPOINT_VERSION = 1
TAPS = ("output", "hidden", "input")
LEVELS = ("elementary", "data", "feature", "decision", "hybrid")

# Default structure and learning rate per network.
ARCH: dict[str, dict] = {
    "H": {"kind": "lstm", "hidden": [256, 256], "lr": 5e-4},
    "L": {"kind": "dense", "hidden": [256, 256, 256, 256], "lr": 1e-4},
    "U": {"kind": "dense", "hidden": [256, 256, 256], "lr": 1e-3},
    "P": {"kind": "dense", "hidden": [256, 256, 256], "lr": 5e-4},
    "R": {"kind": "rnet", "hidden": [256, 128, 128], "filters": [16, 32, 8], "kernel": [5, 5],
          "fus_hidden": [512, 512, 256], "lr": 5e-4},
    "S": {"kind": "dense", "hidden": [256], "lr": 5e-4},
    "Fus": {"kind": "dense", "hidden": [512, 512, 256], "lr": 5e-4},
}

# network input keys per branch
MODALITIES: dict[str, tuple[str, ...]] = {
    "H": ("prev",), "L": ("location",), "U": ("uplink",), "P": ("partial",),
    "R": ("rx", "pilots"), "S": ("ls",),
}


class WiringError(ValueError):
    pass


class MissingModalityError(KeyError):
    def __str__(self):
        return str(self.args[0])


@dataclass(frozen=True)
class Dims:
    m: int
    m_fb: int
    t_unit: int
    t_p: int

    @classmethod
    def of(cls, ds: Dataset) -> "Dims":
        return cls(m=ds.num_antennas, m_fb=ds.m_fb, t_unit=ds.prev.shape[1], t_p=ds.pilots.shape[2])


@dataclass
class BranchSpec:
    name: str
    modalities: tuple[str, ...]
    kind: str
    hidden: tuple[int, ...]
    lr: float
    taps: tuple[str, ...] = ("output",)
    trainable: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def label_key(self) -> str:
        return "unknown" if self.name == "P" else "full"


@dataclass
class StageSpec:
    name: str
    inputs: tuple[tuple[str, str], ...]
    hidden: tuple[int, ...] = tuple(ARCH["Fus"]["hidden"])
    lr: float = ARCH["Fus"]["lr"]
    trainable: bool = True


def load_wirings(path=None) -> dict[str, dict]:
    """Parse a wiring file (the packaged presets by default)."""
    if path is None:
        text = resources.files("chanfusion.fusion").joinpath("wirings.yaml").read_text()
    else:
        text = Path(path).read_text()
    doc = yaml.safe_load(text)
    if doc.get("version") != 1:
        raise WiringError("unsupported wiring file version")
    return doc["wirings"]


def wiring_names() -> list[str]:
    return list(load_wirings())


def validate_wiring(name: str, w: Mapping) -> None:
    if w.get("level") not in LEVELS:
        raise WiringError(f"{name}: unknown level {w.get('level')!r}")
    branches = list(w.get("branches", []))
    for b in branches:
        if b not in MODALITIES:
            raise WiringError(f"{name}: unknown branch {b!r}")
    if not branches:
        raise WiringError(f"{name}: no branches")
    known = set(branches)
    stages = w.get("stages", [])
    if not stages and len(branches) != 1:
        raise WiringError(f"{name}: several branches but no fusion stage")
    for st in stages:
        for src, tap in st["inputs"]:
            if src not in known:
                raise WiringError(f"{name}: stage {st['name']} reads {src!r} before it exists")
            if tap not in TAPS:
                raise WiringError(f"{name}: unknown tap {tap!r}")
            if tap == "input" and src not in branches:
                raise WiringError(f"{name}: only branches expose an input tap")
        if st["name"] in known:
            raise WiringError(f"{name}: duplicate component {st['name']!r}")
        known.add(st["name"])
    # every component except the terminal one must feed something
    consumed = {src for st in stages for src, _ in st["inputs"]}
    terminal = stages[-1]["name"] if stages else branches[0]
    dangling = [c for c in known if c != terminal and c not in consumed]
    if dangling:
        raise WiringError(f"{name}: components {dangling} feed nothing")


class FusionGraph:
    """Branches + fusion stages, with the instantiated networks and input scaling."""

    def __init__(self, name: str, level: str, branches: list[BranchSpec],
                 stages: list[StageSpec], dims: Dims, seed: int = 0, dtype=np.float64):
        self.name, self.level = name, level
        self.branches = {b.name: b for b in branches}
        self.stages = list(stages)
        self.dims = dims
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.nets: dict[str, Network] = {}
        self.norm: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.label_scale = 1.0
        self.frozen: list[str] = []
        self.snapshots: dict[str, dict[str, np.ndarray]] = {}
        rng = np.random.default_rng([seed, 7])
        for b in branches:
            self.nets[b.name] = self._build_branch(b, rng)
        for st in self.stages:
            width = sum(self.tap_width(src, tap) for src, tap in st.inputs)
            self.nets[st.name] = MLP("x", width, st.hidden, 2 * dims.m, rng, self.dtype)

    # ----------------------------------------------------------- structure
    @property
    def terminal(self) -> str:
        return self.stages[-1].name if self.stages else next(iter(self.branches))

    def out_dim(self, comp: str) -> int:
        if comp == "P":
            return 2 * (self.dims.m - self.dims.m_fb)
        return 2 * self.dims.m

    def input_width(self, branch: str) -> int:
        d = self.dims
        return {"H": 2 * d.m, "L": 3, "U": 2 * d.m, "P": 2 * d.m_fb, "S": 2 * d.m,
                "R": 2 * d.t_p}[branch]

    def tap_width(self, comp: str, tap: str) -> int:
        if tap == "output":
            return self.out_dim(comp)
        if tap == "input":
            return self.input_width(comp)
        if comp in self.branches:
            spec = self.branches[comp]
            hidden = spec.extra["fus_hidden"] if spec.kind == "rnet" else spec.hidden
        else:
            hidden = next(s for s in self.stages if s.name == comp).hidden
        return hidden[middle_index(len(hidden))]

    def structure(self) -> list[tuple[str, tuple[tuple[str, str, int], ...]]]:
        """Per stage: (name, ((source, tap, width), ...)) in training order."""
        return [(st.name, tuple((src, tap, self.tap_width(src, tap)) for src, tap in st.inputs))
                for st in self.stages]

    def uses_partial(self) -> bool:
        return "P" in self.branches

    def components(self) -> list[str]:
        return list(self.branches) + [s.name for s in self.stages]

    def trained_branches(self) -> list[str]:
        """Branches whose weights matter: any consumed through output/hidden, or a lone branch."""
        if not self.stages:
            return list(self.branches)
        used = {src for st in self.stages for src, tap in st.inputs if tap != "input"}
        return [b for b in self.branches if b in used]

    def _build_branch(self, b: BranchSpec, rng) -> Network:
        d = self.dims
        n_out = self.out_dim(b.name)
        if b.kind == "lstm":
            return LSTMNet(b.modalities[0], 2 * d.m, b.hidden, n_out, d.t_unit, rng, self.dtype)
        if b.kind == "dense":
            return MLP(b.modalities[0], self.input_width(b.name), b.hidden, n_out, rng, self.dtype)
        if b.kind == "rnet":
            return RNet("rx", "pilots", 2 * d.t_p, (d.m, d.t_p), b.hidden, b.extra["filters"],
                        tuple(b.extra["kernel"]), b.extra["fus_hidden"], n_out, rng, self.dtype)
        raise WiringError(f"unknown branch kind {b.kind!r}")

    # --------------------------------------------------------------- inputs
    def modality_keys(self) -> list[str]:
        keys = []
        for b in self.branches.values():
            keys.extend(k for k in b.modalities if k not in keys)
        return keys

    def raw_inputs(self, data: Dataset) -> dict[str, np.ndarray]:
        out = {}
        for b in self.branches.values():
            for key in b.modalities:
                if key in out:
                    continue
                arr = _modality(data, key)
                if arr is None:
                    raise MissingModalityError(
                        f"branch Net{{{b.name}}} needs modality {key!r}, which the data lacks")
                out[key] = arr
        return out

    def fit_normalization(self, train: Dataset) -> None:
        """Per-feature standardisation of inputs and a global label scale, from training data."""
        for key, arr in self.raw_inputs(train).items():
            mean = arr.mean(axis=0)
            std = arr.std(axis=0)
            std = np.where(std > 1e-12 * max(np.abs(arr).max(), 1e-300), std, 1.0)
            self.norm[key] = (mean.astype(self.dtype), std.astype(self.dtype))
        lab = xi(train.label)
        rms = float(np.sqrt(np.mean(lab ** 2)))
        self.label_scale = rms if rms > 0 else 1.0

    def inputs(self, data: Dataset) -> dict[str, np.ndarray]:
        out = {}
        for key, arr in self.raw_inputs(data).items():
            if key in self.norm:
                mean, std = self.norm[key]
                arr = (arr - mean) / std
            out[key] = np.ascontiguousarray(arr, dtype=self.dtype)
        return out

    def labels(self, data: Dataset, key: str = "full") -> np.ndarray:
        src = data.unknown if key == "unknown" else data.label
        return np.ascontiguousarray(xi(src) / self.label_scale, dtype=self.dtype)

    # -------------------------------------------------------------- forward
    def taps(self, comp: str, inputs: Mapping[str, Tensor], cache: dict | None = None
             ) -> dict[str, Tensor]:
        """Evaluate a component and return its taps (memoised in ``cache``)."""
        cache = {} if cache is None else cache
        if comp in cache:
            return cache[comp]
        net = self.nets[comp]
        if comp in self.branches:
            spec = self.branches[comp]
            out, hid = net.forward(inputs)
            inp = nn.concat([inputs[k].reshape(inputs[k].shape[0], -1) for k in spec.modalities])
        else:
            st = next(s for s in self.stages if s.name == comp)
            inp = self.stage_input(st, inputs, cache)
            out, hid = net.run(inp)
        cache[comp] = {"output": out, "hidden": hid, "input": inp}
        return cache[comp]

    def stage_input(self, st: StageSpec, inputs, cache) -> Tensor:
        parts = [self.taps(src, inputs, cache)[tap] for src, tap in st.inputs]
        return nn.concat(parts, axis=-1)

    def forward(self, inputs: Mapping[str, Tensor]) -> Tensor:
        return self.taps(self.terminal, inputs)["output"]

    def forward_arrays(self, arrays: Mapping[str, np.ndarray], chunk: int = 1024) -> np.ndarray:
        n = len(next(iter(arrays.values())))
        outs = []
        with nn.no_grad():
            for i in range(0, n, chunk):
                batch = {k: Tensor(v[i:i + chunk]) for k, v in arrays.items()}
                outs.append(self.forward(batch).data)
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, self.out_dim(self.terminal)))

    # ---------------------------------------------------------- parameters
    def freeze(self, comp: str) -> None:
        self.nets[comp].set_trainable(False)
        if comp not in self.frozen:
            self.frozen.append(comp)
        self.snapshots[comp] = {k: v.data.copy() for k, v in self.nets[comp].params.items()}

    def frozen_intact(self) -> dict[str, bool]:
        """For each frozen component, whether its parameters still equal the freeze snapshot."""
        return {c: all(np.array_equal(self.nets[c].params[k].data, v)
                       for k, v in self.snapshots[c].items())
                for c in self.frozen}

    def adopt(self, name: str, source: "FusionGraph") -> None:
        """Copy a trained branch from ``source`` and freeze it, so staged training skips it."""
        if name not in self.branches or name not in source.branches:
            raise WiringError(f"both graphs need branch {name!r}")
        if source.branches[name].hidden != self.branches[name].hidden or source.dims != self.dims:
            raise WiringError(f"branch {name!r} differs between the two graphs")
        for k, v in source.nets[name].params.items():
            self.nets[name].params[k].data = v.data.astype(self.dtype, copy=True)
        self.freeze(name)

    def flops(self) -> int:
        comps = self.trained_branches() + [s.name for s in self.stages]
        return sum(nn.flop_count(spec) for c in comps for spec in self.nets[c].layer_specs())

    def clone(self) -> "FusionGraph":
        return copy.deepcopy(self)


def _modality(data: Dataset, key: str) -> np.ndarray | None:
    if key == "prev":
        return None if data.prev.shape[1] == 0 else xi(data.prev)
    if key == "location":
        return np.asarray(data.location, dtype=float)
    if key == "uplink":
        return xi(data.uplink)
    if key == "partial":
        return None if data.m_fb >= data.num_antennas else xi(data.known)
    if key == "rx":
        return xi(data.rx)
    if key == "pilots":
        return np.stack([data.pilots.real, data.pilots.imag], axis=1)
    if key == "ls":
        return None if data.ls is None else xi(data.ls)
    raise KeyError(key)


# ----------------------------------------------------------------- builders
def _branch_spec(name: str, taps=("output",), arch: Mapping | None = None) -> BranchSpec:
    a = dict(ARCH[name])
    if arch and name in arch:
        a.update(arch[name])
    extra = {k: a[k] for k in ("filters", "kernel", "fus_hidden") if k in a}
    return BranchSpec(name=name, modalities=MODALITIES[name], kind=a["kind"],
                      hidden=tuple(a["hidden"]), lr=float(a["lr"]), taps=tuple(taps), extra=extra)


def build_elementary(name: str, dims: Dims, seed: int = 0, dtype=np.float64,
                     arch: Mapping | None = None) -> FusionGraph:
    if name not in MODALITIES:
        raise WiringError(f"unknown elementary network {name!r}")
    return FusionGraph(f"{{{name}}}", "elementary", [_branch_spec(name, arch=arch)], [], dims,
                       seed, dtype)


def build_fusion(wiring: str, dims: Dims, seed: int = 0, dtype=np.float64,
                 arch: Mapping | None = None, level: str | None = None,
                 branches=None, wirings: Mapping | None = None) -> FusionGraph:
    """Build a named topology. ``level``/``branches``, when given, must match the wiring."""
    table = load_wirings() if wirings is None else wirings
    if wiring not in table:
        raise WiringError(f"unsupported wiring {wiring!r}")
    w = table[wiring]
    validate_wiring(wiring, w)
    if level is not None and level != w["level"]:
        raise WiringError(f"{wiring} is a {w['level']} wiring, not {level}")
    if branches is not None and sorted(branches) != sorted(w["branches"]):
        raise WiringError(f"{wiring} fuses {w['branches']}, not {list(branches)}")
    if w["level"] == "elementary":
        return build_elementary(w["branches"][0], dims, seed, dtype, arch)
    taps: dict[str, set] = {b: set() for b in w["branches"]}
    for st in w["stages"]:
        for src, tap in st["inputs"]:
            if src in taps:
                taps[src].add(tap)
    fus = dict(ARCH["Fus"])
    if arch and "Fus" in arch:
        fus.update(arch["Fus"])
    specs = [_branch_spec(b, tuple(sorted(taps[b])), arch) for b in w["branches"]]
    stages = [StageSpec(st["name"], tuple((s, t) for s, t in st["inputs"]),
                        tuple(fus["hidden"]), float(fus["lr"])) for st in w["stages"]]
    return FusionGraph(wiring, w["level"], specs, stages, dims, seed, dtype)


def build(wiring: str, dims: Dims, **kw) -> FusionGraph:
    """Build by wiring name; bare letters like ``"H"`` mean the elementary network."""
    if wiring in MODALITIES:
        wiring = f"{{{wiring}}}"
    return build_fusion(wiring, dims, **kw)


# --------------------------------------------------------------- prediction
def _as_dataset(data) -> Dataset:
    if isinstance(data, Sample):
        return Dataset.from_samples([data])
    return data


def predict(graph: FusionGraph, data) -> np.ndarray:
    """Complex downlink estimates, shape (N, M) (or (M,) for a single Sample).

    Partial-channel graphs put the fed-back entries back in place; with the
    whole channel fed back the known channel is returned as is.
    """
    single = isinstance(data, Sample)
    ds = _as_dataset(data)
    m = graph.dims.m
    if graph.uses_partial() and ds.m_fb >= m:
        out = ds.known.copy()
    else:
        raw = graph.forward_arrays(graph.inputs(ds)) * graph.label_scale
        pred = xi_inv(raw)
        if graph.uses_partial():
            idx = np.unique(ds.mask)
            rest = np.setdiff1d(np.arange(m), idx)
            if graph.terminal == "P":
                out = np.empty((len(ds), m), dtype=complex)
                out[:, rest] = pred
            else:
                out = pred.astype(complex)
            out[:, idx] = ds.known
        else:
            out = pred
    return out[0] if single else out


# --------------------------------------------------------------- checkpoints
def save_graph(graph: FusionGraph, path) -> None:
    arrays = {}
    for comp, net in graph.nets.items():
        for k, v in net.params.items():
            arrays[f"param/{comp}/{k}"] = v.data
    for key, (mean, std) in graph.norm.items():
        arrays[f"norm/{key}/mean"] = mean
        arrays[f"norm/{key}/std"] = std
    meta = {
        "version": CHECKPOINT_VERSION,
        "wiring": graph.name,
        "level": graph.level,
        "dims": vars(graph.dims),
        "seed": graph.seed,
        "dtype": graph.dtype.name,
        "label_scale": graph.label_scale,
        "frozen": graph.frozen,
        "branches": {n: {"hidden": list(b.hidden), "lr": b.lr, "kind": b.kind, "extra": b.extra}
                     for n, b in graph.branches.items()},
        "stages": [{"name": s.name, "hidden": list(s.hidden), "lr": s.lr} for s in graph.stages],
    }
    write_container(path, CHECKPOINT_KIND, arrays, meta)


def load_graph(path) -> FusionGraph:
    arrays, meta = read_container(path, kind=CHECKPOINT_KIND)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    arch = {n: {"hidden": b["hidden"], "lr": b["lr"], **b["extra"]}
            for n, b in meta["branches"].items()}
    if meta["stages"]:
        arch["Fus"] = {"hidden": meta["stages"][0]["hidden"], "lr": meta["stages"][0]["lr"]}
    graph = build(meta["wiring"].strip("{}") if meta["level"] == "elementary" else meta["wiring"],
                  Dims(**meta["dims"]), seed=meta["seed"], dtype=np.dtype(meta["dtype"]), arch=arch)
    for comp, net in graph.nets.items():
        for k, v in net.params.items():
            v.data = arrays[f"param/{comp}/{k}"].astype(graph.dtype)
    graph.norm = {}
    for name, arr in arrays.items():
        if name.startswith("norm/") and name.endswith("/mean"):
            key = name[len("norm/"):-len("/mean")]
            graph.norm[key] = (arr, arrays[f"norm/{key}/std"])
    graph.label_scale = meta["label_scale"]
    for comp in meta["frozen"]:
        graph.freeze(comp)
    return graph
