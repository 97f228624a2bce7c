"""Command-line entry point: ``stackderm {synth,split,run,report}``.

A run is described by one JSON file::

    {
      "data": {"synth": {...SynthConfig fields...}, "dataset_dir": "data/primary",
               "aux": {"synth": {...}}},
      "train": {"CNN32": {...TrainConfig fields...}, "mlp": {...}},
      "experiment": {"n_repetitions": 10, "master_seed": 0, ...},
      "output_dir": "runs/default"
    }

``data`` may name a manifest instead (``{"manifest": "path/manifest.csv"}``),
and so may ``data.aux``. Unknown keys anywhere are rejected. Relative paths
are resolved against the config file's directory.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import traceback
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pipeline
from .data import SynthConfig, group_split, load_manifest, synth_generate, write_dataset
from .errors import ConfigError, StackdermError
from .nn import TrainConfig

log = logging.getLogger("stackderm")

QUICK_MAX_SAMPLES = 500
QUICK_MAX_RESOLUTION = 64
EXPERIMENT_KEYS = ("n_repetitions", "master_seed", "scratch_learners", "max_resolution",
                   "no_pretrained", "no_metadata", "ablations", "baselines")


@dataclass
class RunConfig:
    data: SynthConfig | str = field(default_factory=SynthConfig)
    aux: SynthConfig | str = field(default_factory=pipeline.default_aux_config)
    dataset_dir: str | None = None
    train: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    output_dir: str = "runs/default"

    def experiment_config(self, workers=1) -> pipeline.ExperimentConfig:
        return pipeline.ExperimentConfig(data=self.data, aux_data=self.aux, train=self.train,
                                         workers=workers, **self.experiment)

    def to_dict(self):
        data = _source_dict(self.data)
        data["aux"] = _source_dict(self.aux)
        if self.dataset_dir is not None:
            data["dataset_dir"] = self.dataset_dir
        return {"data": data,
                "train": {k: dataclasses.asdict(v) for k, v in sorted(self.train.items())},
                "experiment": dict(sorted(self.experiment.items())),
                "output_dir": self.output_dir}


def _source_dict(src):
    if isinstance(src, SynthConfig):
        return {"synth": src.to_dict()}
    return {"manifest": str(src)}


def _strict(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _dataclass_from(cls, d, where):
    names = [f.name for f in dataclasses.fields(cls)]
    _strict(d, names, where)
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_source(d, where, root):
    _strict(d, ("synth", "manifest"), where)
    if ("synth" in d) == ("manifest" in d):
        raise ConfigError(f"{where} needs exactly one of 'synth' or 'manifest'")
    if "manifest" in d:
        return str(_resolve(d["manifest"], root))
    return _dataclass_from(SynthConfig, d["synth"], f"{where}.synth")


def _resolve(path, root):
    p = Path(path)
    return p if p.is_absolute() or root is None else root / p


def parse_run_config(doc: dict, root=None) -> RunConfig:
    """Validate a config document; ``root`` anchors relative paths."""
    _strict(doc, ("data", "train", "experiment", "output_dir"), "config")
    cfg = RunConfig()
    if "data" in doc:
        data = dict(doc["data"])
        _strict(data, ("synth", "manifest", "aux", "dataset_dir"), "data")
        aux = data.pop("aux", None)
        ddir = data.pop("dataset_dir", None)
        if data:
            cfg.data = _parse_source(data, "data", root)
        if aux is not None:
            cfg.aux = _parse_source(aux, "data.aux", root)
            if isinstance(cfg.aux, SynthConfig) and not cfg.aux.aux:
                raise ConfigError("data.aux.synth must set \"aux\": true")
        if ddir is not None:
            cfg.dataset_dir = str(_resolve(ddir, root))
    for key, sub in (doc.get("train") or {}).items():
        cfg.train[pipeline._train_key(key)] = _dataclass_from(TrainConfig, sub, f"train.{key}")
    exp = doc.get("experiment") or {}
    _strict(exp, EXPERIMENT_KEYS, "experiment")
    cfg.experiment = dict(exp)
    if "output_dir" in doc:
        cfg.output_dir = str(_resolve(doc["output_dir"], root))
    cfg.experiment_config()  # validates the experiment section early
    return cfg


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return parse_run_config(doc, path.parent)


def apply_overrides(cfg: RunConfig, seed=None, reps=None, quick=False) -> RunConfig:
    """Fold command-line flags into the configuration."""
    exp = dict(cfg.experiment)
    if seed is not None:
        exp["master_seed"] = seed
    if quick:
        exp["max_resolution"] = min(exp.get("max_resolution", 256), QUICK_MAX_RESOLUTION)
        exp["n_repetitions"] = 1
        if isinstance(cfg.data, SynthConfig) and cfg.data.n_samples > QUICK_MAX_SAMPLES:
            n = QUICK_MAX_SAMPLES
            ratio = cfg.data.n_patients / cfg.data.n_samples
            cfg.data = dataclasses.replace(cfg.data, n_samples=n,
                                           n_patients=max(3, int(round(ratio * n))))
        train = pipeline.quick_train_configs()
        train.update(cfg.train)
        cfg.train = train
    if reps is not None:
        exp["n_repetitions"] = reps
    cfg.experiment = exp
    cfg.experiment_config()
    return cfg


@contextmanager
def output_lock(out_dir):
    """Exclusive ownership of ``out_dir`` through a ``.lock`` file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{out} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


# -- commands ------------------------------------------------------------------

def _load_source(src):
    return synth_generate(src) if isinstance(src, SynthConfig) else load_manifest(src)


def cmd_synth(args):
    cfg = apply_overrides(load_run_config(args.config), quick=args.quick)
    src = cfg.aux if args.aux else cfg.data
    if not isinstance(src, SynthConfig):
        raise ConfigError("synth needs a 'synth' data section, not a manifest")
    if args.seed is not None:
        src = dataclasses.replace(src, seed=args.seed)
    if args.aux and not src.aux:
        src = dataclasses.replace(src, aux=True)
    out = args.out or cfg.dataset_dir or str(Path(cfg.output_dir) / ("aux" if args.aux else "dataset"))
    samples = synth_generate(src)
    manifest = write_dataset(samples, out)
    pos = sum(s.label for s in samples)
    print(f"{len(samples)} samples, {pos} positive ({pos / len(samples):.2%}) -> {manifest}")
    return 0


def cmd_split(args):
    cfg = apply_overrides(load_run_config(args.config), quick=args.quick)
    src = cfg.aux if args.aux else cfg.data
    samples = _load_source(src)
    seed = args.seed if args.seed is not None else cfg.experiment.get("master_seed", 0)
    split = group_split([s.patient_id for s in samples], [s.label for s in samples], seed)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "split.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(split.to_json() + "\n")
    labels = np.array([s.label for s in samples])
    for name in ("train", "val", "test"):
        idx = list(getattr(split, name))
        print(f"{name}: {len(idx)} samples, {int(labels[idx].sum())} positive")
    print(f"-> {out}")
    return 0


def cmd_run(args):
    cfg = apply_overrides(load_run_config(args.config), args.seed, args.reps, args.quick)
    exp = cfg.experiment_config(workers=pipeline.env_workers())
    with output_lock(cfg.output_dir) as out:
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
        agg = pipeline.run_experiment(exp, out)
    print(pipeline.render_table(agg), end="")
    print(f"-> {out / 'aggregate.json'}")
    return 0


def read_aggregate(out_dir):
    path = Path(out_dir) / "aggregate.json"
    try:
        agg = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"no aggregate results at {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is corrupt: {exc}") from None
    if not isinstance(agg, dict) or not agg.get("repetitions"):
        raise ConfigError(f"{path} holds no repetitions")
    return agg


def cmd_report(args):
    out = args.output_dir or load_run_config(args.config).output_dir
    print(pipeline.render_table(read_aggregate(out)), end="")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="stackderm",
                                description="Stacked CNN + SVM ensemble experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_help):
        sp.add_argument("--config", metavar="PATH", help="JSON run configuration")
        sp.add_argument("--seed", type=_u64, metavar="U64", help=seed_help)
        sp.add_argument("--quick", action="store_true",
                        help=f"cap at {QUICK_MAX_SAMPLES} samples and "
                             f"{QUICK_MAX_RESOLUTION}x{QUICK_MAX_RESOLUTION} learners")

    sp = sub.add_parser("synth", help="generate a synthetic dataset on disk")
    common(sp, "generator seed")
    sp.add_argument("--aux", action="store_true", help="generate the balanced auxiliary set")
    sp.add_argument("--out", metavar="DIR", help="dataset directory")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("split", help="write a patient-grouped split as JSON")
    common(sp, "split seed (default: master_seed)")
    sp.add_argument("--aux", action="store_true", help="split the auxiliary set")
    sp.add_argument("--out", metavar="PATH", help="split JSON path")
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("run", help="run the repetition protocol with ablations and baselines")
    common(sp, "master seed")
    sp.add_argument("--reps", type=_positive, metavar="N", help="number of repetitions")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="print the result tables of a finished run")
    sp.add_argument("output_dir", nargs="?", help="run directory (default: from --config)")
    sp.add_argument("--config", metavar="PATH", help="JSON run configuration")
    sp.set_defaults(func=cmd_report)
    return p


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _origin(exc):
    """Name of the innermost package module the exception passed through."""
    names = [f.f_globals.get("__name__", "") for f, _ in traceback.walk_tb(exc.__traceback__)]
    names = [n for n in names if n.startswith("stackderm.") and n != "stackderm.cli"]
    return names[-1].split(".", 1)[1] if names else "cli"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StackdermError as exc:
        print(f"stackderm {args.command}: error: {_origin(exc)}: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
