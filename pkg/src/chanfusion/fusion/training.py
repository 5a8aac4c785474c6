"""Freeze-then-fuse training.

Stage 1 trains every elementary branch on its own label and freezes it.
Each fusion stage is then trained in order on features read from the frozen
components below it, and frozen in turn. Because everything under a stage is
frozen, its input features are computed once per stage and cached. Branches
frozen before training starts (see ``FusionGraph.adopt``) are reused as is.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .. import nn
from ..dataset import ConfigError, Dataset
from ..nn import Tensor
from .graph import FusionGraph

log = logging.getLogger(__name__)

EpochCallback = Callable[[str, int, float], None]


@dataclass
class TrainConfig:
    """Epoch budget with a plateau stop on the training loss.

    ``epochs`` may be an int for every component or a mapping from component
    name (``H``, ``Fus1``...) to its budget; ``default_epochs`` covers names
    missing from the mapping.
    """

    epochs: int | Mapping[str, int] = 200
    default_epochs: int = 200
    patience: int = 20
    min_delta: float = 1e-5
    batch_size: int = 128
    seed: int = 0
    lr: Mapping[str, float] = field(default_factory=dict)

    def budget(self, comp: str) -> int:
        if isinstance(self.epochs, Mapping):
            return int(self.epochs.get(comp, self.default_epochs))
        return int(self.epochs)


@dataclass
class TrainResult:
    graph: FusionGraph
    traces: dict[str, list[float]]
    order: list[str]


def fit(forward: Callable[[dict[str, Tensor]], Tensor], params: list[Tensor],
        arrays: Mapping[str, np.ndarray], labels: np.ndarray, lr: float, epochs: int,
        cfg: TrainConfig, rng: np.random.Generator,
        on_epoch: Callable[[int, float], None] | None = None) -> list[float]:
    """Mini-batch ADAM on the batch-mean squared-norm loss. Returns per-epoch mean losses."""
    opt = nn.Adam(params, lr=lr)
    n = len(labels)
    trace: list[float] = []
    best, stale = np.inf, 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            batch = {k: Tensor(v[idx]) for k, v in arrays.items()}
            loss = nn.mse_loss(forward(batch), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        epoch_loss = total / n
        trace.append(epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
        if epoch_loss < best - cfg.min_delta:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return trace


def _cached_features(graph: FusionGraph, stage, arrays, chunk: int = 1024) -> np.ndarray:
    n = len(next(iter(arrays.values())))
    parts = []
    with nn.no_grad():
        for i in range(0, n, chunk):
            batch = {k: Tensor(v[i:i + chunk]) for k, v in arrays.items()}
            parts.append(graph.stage_input(stage, batch, {}).data)
    return np.concatenate(parts, axis=0)


def staged_train(graph: FusionGraph, train: Dataset, cfg: TrainConfig | None = None,
                 on_epoch: EpochCallback | None = None) -> TrainResult:
    """Train ``graph`` in place, stage by stage, and return its per-component loss traces."""
    cfg = cfg or TrainConfig()
    for comp in graph.trained_branches() + [s.name for s in graph.stages]:
        if comp not in graph.frozen and cfg.budget(comp) <= 0:
            raise ConfigError(f"epoch budget for trainable component {comp} must be positive")
    if len(train) == 0:
        raise ConfigError("empty training set")
    graph.fit_normalization(train)
    arrays = graph.inputs(train)
    traces: dict[str, list[float]] = {}
    order: list[str] = []

    for k, name in enumerate(graph.trained_branches()):
        if name in graph.frozen:
            # adopted from an already trained elementary graph
            continue
        spec = graph.branches[name]
        net = graph.nets[name]
        keys = spec.modalities
        sub = {key: arrays[key] for key in keys}
        rng = np.random.default_rng([cfg.seed, 1, k])
        cb = (lambda e, l, _n=name: on_epoch(_n, e, l)) if on_epoch else None
        lr = cfg.lr.get(name, spec.lr)
        log.info("training branch %s (lr=%g)", name, lr)
        traces[name] = fit(lambda b, _net=net: _net.forward(b)[0], net.parameters(), sub,
                           graph.labels(train, spec.label_key), lr, cfg.budget(name), cfg, rng, cb)
        graph.freeze(name)
        order.append(name)

    labels = graph.labels(train, "full")
    for k, st in enumerate(graph.stages):
        feats = _cached_features(graph, st, arrays)
        net = graph.nets[st.name]
        rng = np.random.default_rng([cfg.seed, 2, k])
        cb = (lambda e, l, _n=st.name: on_epoch(_n, e, l)) if on_epoch else None
        lr = cfg.lr.get(st.name, st.lr)
        log.info("training stage %s on %d features (lr=%g)", st.name, feats.shape[1], lr)
        traces[st.name] = fit(lambda b, _net=net: _net.run(b["x"])[0], net.parameters(),
                              {"x": feats}, labels, lr, cfg.budget(st.name), cfg, rng, cb)
        graph.freeze(st.name)
        order.append(st.name)

    broken = [c for c, ok in graph.frozen_intact().items() if not ok]
    if broken:
        raise RuntimeError(f"frozen components changed during training: {broken}")
    return TrainResult(graph, traces, order)
