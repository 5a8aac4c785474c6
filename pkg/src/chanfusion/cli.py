"""Command line entry point: ``chanfusion <verb> ...``.

Verbs: generate-dataset, train, evaluate, sweep, import-paths.

Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 finished
but some results were flagged as non-finite.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .container import ContainerError, write_container
from .dataset import (ConfigError, DatasetConfig, PathFileError, channels_from_paths, generate,
                      import_paths, load_split, save_split)
from .estimators import nmse, to_db
from .experiment import RESULT_COLUMNS, SCHEMA_VERSION, SWEEPS, load_spec, run
from .fusion import TrainConfig, build, load_graph, predict, save_graph, staged_train
from .fusion.graph import Dims, MissingModalityError, WiringError
from .nn import NonFiniteError
from .scene import F_DOWNLINK, F_UPLINK, load_scene

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_NAN = 0, 1, 2, 3
CONFIG_ERRORS = (ConfigError, WiringError, PathFileError, ContainerError, yaml.YAMLError,
                 FileNotFoundError, MissingModalityError)

log = logging.getLogger("chanfusion")


# ------------------------------------------------------------------ configs
def _load_yaml(path) -> dict:
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return doc


def load_dataset_config(path) -> DatasetConfig:
    """A dataset YAML file, or an experiment file's ``dataset`` section."""
    path = Path(path)
    doc = _load_yaml(path)
    if "dataset" in doc:
        doc = doc["dataset"]
        if isinstance(doc, str):
            return load_dataset_config(path.parent / doc)
    doc = dict(doc)
    scene = doc.get("scene")
    if isinstance(scene, str):
        doc["scene"] = load_scene(path.parent / scene)
    elif scene is None:
        raise ConfigError(f"{path}: dataset config needs a scene")
    try:
        return DatasetConfig.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _overrides(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


# -------------------------------------------------------------------- verbs
def cmd_generate(args) -> int:
    cfg = load_dataset_config(args.config)
    cfg = dataclasses.replace(cfg, **_overrides(args, ("seed", "n_train", "n_test", "t_unit",
                                                       "t_p", "m_fb", "snr_db", "step")))
    if args.n_train is not None or args.n_test is not None:
        cfg = dataclasses.replace(cfg, num_users=cfg.n_train + cfg.n_test)
    train, test = generate(cfg)
    save_split(train, test, args.out)
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    train, _ = load_split(args.data)
    cfg = TrainConfig(epochs=args.epochs, patience=args.patience, batch_size=args.batch_size,
                      seed=args.seed)
    if args.lr is not None:
        cfg.lr = {c: args.lr for c in ("H", "L", "U", "P", "R", "S", "Fus1", "Fus2", "Fus3")}
    graph = build(args.wiring, Dims.of(train), seed=args.seed, dtype=np.dtype(args.dtype))
    try:
        res = staged_train(graph, train, cfg)
    except NonFiniteError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_NAN
    save_graph(graph, args.out)
    if args.traces:
        with open(args.traces, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("schema_version", "wiring", "seed", "component", "epoch", "train_loss"))
            for comp in res.order:
                for e, loss in enumerate(res.traces[comp]):
                    w.writerow((SCHEMA_VERSION, graph.name, args.seed, comp, e, repr(loss)))
    last = {c: res.traces[c][-1] for c in res.order}
    print(f"trained {graph.name}: " + ", ".join(f"{c} loss {v:.4g}" for c, v in last.items()))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    graph = load_graph(args.model)
    train, test = load_split(args.data)
    data = test if args.split == "test" else train
    h = predict(graph, data)
    finite = bool(np.all(np.isfinite(h)))
    value = nmse(h, data.label) if finite else float("nan")
    value_true = nmse(h, data.true) if finite else float("nan")
    print(f"{graph.name} {args.split} NMSE {value:.6g} ({to_db(value):.2f} dB)" if finite
          else f"{graph.name}: non-finite predictions")
    if args.out:
        row = {"schema_version": SCHEMA_VERSION, "experiment": "evaluate", "sweep": "-",
               "value": "-", "wiring": graph.name, "estimator": "net", "seed": graph.seed,
               "nmse": repr(value), "nmse_db": repr(to_db(value)) if finite else "nan",
               "nmse_true": repr(value_true), "flops": graph.flops(), "epochs": "-",
               "flagged": int(not finite)}
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_COLUMNS)
            w.writerow([row[c] for c in RESULT_COLUMNS])
    return EXIT_OK if finite else EXIT_NAN


def cmd_sweep(args) -> int:
    spec = load_spec(args.config)
    over = _overrides(args, ("name", "sweep", "output", "dtype", "workers", "train_snr_db",
                             "baselines"))
    if args.wirings:
        over["wirings"] = args.wirings
    if args.values:
        over["values"] = [float(v) if spec.sweep in ("snr_db", "learning_rate") else int(v)
                          for v in args.values]
    if args.seeds:
        over["seeds"] = args.seeds
    spec = dataclasses.replace(spec, **over)
    if args.epochs is not None:
        spec.train = dataclasses.replace(spec.train, epochs=args.epochs)
    res = run(spec, single_thread=False)  # threads already limited by main()
    for r in res.summary:
        print(f"{r['value']!s:>8} {r['wiring']:>12} {r['estimator']:>6} "
              f"median NMSE {r['median_nmse']:.4g} over {r['n_seeds']} seed(s)")
    if spec.output:
        print(f"results in {spec.output}")
    if res.flagged:
        print(f"{res.flagged} row(s) flagged non-finite", file=sys.stderr)
        return EXIT_NAN
    return EXIT_OK


def cmd_import(args) -> int:
    scene = load_scene(args.scene)
    paths = import_paths(args.paths, max_paths=args.max_paths)
    uids = sorted(paths)
    dl = channels_from_paths(scene, paths, F_DOWNLINK)
    ul = channels_from_paths(scene, paths, F_UPLINK)
    write_container(args.out, "channels",
                    {"user_ids": np.array(uids), "downlink": np.stack([dl[u] for u in uids]),
                     "uplink": np.stack([ul[u] for u in uids])},
                    meta={"source": str(args.paths), "num_antennas": scene.num_antennas,
                          "f_downlink": F_DOWNLINK, "f_uplink": F_UPLINK})
    print(f"imported {len(uids)} user(s) from {args.paths} into {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chanfusion", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--log-level", default="WARNING")
    p.add_argument("--threads", choices=("single", "auto"), default="single",
                   help="single keeps BLAS single-threaded so reruns are bit-identical")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate-dataset", help="sample users and write a train/test container")
    g.add_argument("--config", required=True, help="dataset or experiment YAML")
    g.add_argument("--out", required=True)
    for name, typ in (("seed", int), ("n-train", int), ("n-test", int), ("t-unit", int),
                      ("t-p", int), ("m-fb", int), ("snr-db", float), ("step", float)):
        g.add_argument(f"--{name}", type=typ)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="staged training of one wiring")
    t.add_argument("--data", required=True)
    t.add_argument("--wiring", required=True, help='e.g. H or "{H,L}_f"')
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--patience", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float)
    t.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    t.add_argument("--traces", help="optional CSV of per-epoch losses")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="NMSE of a checkpoint on a dataset split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.add_argument("--out", help="results CSV (same schema as sweep results)")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="run an experiment YAML")
    s.add_argument("--config", required=True)
    s.add_argument("--name")
    s.add_argument("--wirings", nargs="+")
    s.add_argument("--sweep", choices=SWEEPS)
    s.add_argument("--values", nargs="+")
    s.add_argument("--seeds", nargs="+", type=int)
    s.add_argument("--output")
    s.add_argument("--epochs", type=int)
    s.add_argument("--dtype", choices=("float64", "float32"))
    s.add_argument("--workers", type=int)
    s.add_argument("--train-snr-db", type=float)
    s.add_argument("--baselines", action=argparse.BooleanOptionalAction, default=None)
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("import-paths", help="synthesize channels from an external path list")
    i.add_argument("--paths", required=True, help="CSV: " + "user_id,alpha,phi_deg,...")
    i.add_argument("--scene", required=True, help="scene YAML (array geometry)")
    i.add_argument("--out", required=True)
    i.add_argument("--max-paths", type=int, default=25)
    i.set_defaults(func=cmd_import)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    limit = threadpool_limits(1) if args.threads == "single" else nullcontext()
    try:
        with limit:
            return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
