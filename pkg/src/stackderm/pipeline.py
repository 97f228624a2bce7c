"""Stacked ensemble: base CNNs, SVM meta-learner, repetition protocol.

One repetition draws a patient-grouped split, trains the scratch CNNs on
the training part, scores every sample with the scratch and the frozen
pre-trained CNNs, and fits the RBF meta-SVM on the training-fold scores
plus the encoded metadata. Ablated meta-learners and the baselines reuse
the same split and base scores, so their differences isolate the
component that was removed.
"""
from __future__ import annotations

import json
import logging
import multiprocessing
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint, metrics, zoo
from .data import (SynthConfig, encode_metadata, group_split, load_manifest,
                   stack_images, synth_generate)
from .data.preprocess import apply_metadata
from .errors import ConfigError, StackdermError
from .nn import Network, TrainConfig, init_output_bias, train
from .svm import (BASELINE_C, BASELINE_KERNEL, META_C, META_KERNEL, META_TOL, SvmModel,
                  decision_function, fit_smo)
from .zoo import ArchitectureId as A

log = logging.getLogger(__name__)

META_NAMES = ("age", "sex_code", "site_code")
BASE_ORDER = (A.CNN32, A.CNN64, A.CNN128, A.CNN256, A.PRE32, A.PRE64)
BASELINES = ("knn", "mlp", "svm_poly")
KNN_K = 4
ABLATIONS = ("no_pretrained", "no_metadata")
METRIC_KEYS = ("f1", "auc_pr", "auc_roc", "f1_at_val_threshold")
LABELS = {
    "ensemble": "Ensemble",
    "no_pretrained": "Ensemble w/o pre-trained",
    "no_metadata": "Ensemble w/o metadata",
    "knn": "KNN (k=4)",
    "mlp": "MLP",
    "svm_poly": "SVM (poly)",
}
# purpose tags for derived seeds
_SPLIT, _SCRATCH, _PRE, _MLP, _AUX_SPLIT = range(5)

# Settings that keep one repetition of the 32/64 profile to a few minutes on
# a single core. The scratch CNNs see ~1.8 % positives, so the larger net gets
# smaller batches (more updates per epoch) instead of more epochs.
QUICK_TRAIN = {
    A.CNN32: TrainConfig(max_epochs=10, minibatch_size=32, early_stop_patience=5),
    A.CNN64: TrainConfig(max_epochs=4, minibatch_size=16, early_stop_patience=4),
    A.CNN128: TrainConfig(max_epochs=4, minibatch_size=16, early_stop_patience=4),
    A.CNN256: TrainConfig(max_epochs=3, minibatch_size=16, early_stop_patience=3),
    A.PRE32: TrainConfig(max_epochs=8, minibatch_size=32, early_stop_patience=4),
    A.PRE64: TrainConfig(max_epochs=4, minibatch_size=32, early_stop_patience=4),
    "mlp": TrainConfig(max_epochs=50, minibatch_size=250, early_stop_patience=10),
}


def derive_seed(*keys) -> int:
    """Deterministic 63-bit seed from a tuple of non-negative integers."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def default_aux_config():
    return SynthConfig(n_samples=1000, n_patients=250, aux=True, seed=1)


@dataclass
class ExperimentConfig:
    n_repetitions: int = 10
    master_seed: int = 0
    data: SynthConfig | str = field(default_factory=SynthConfig)  # or a manifest path
    aux_data: SynthConfig | str = field(default_factory=default_aux_config)
    train: dict = field(default_factory=dict)  # learner id or "mlp" -> TrainConfig
    scratch_learners: tuple = zoo.SCRATCH_IDS
    max_resolution: int = 256
    no_pretrained: bool = False
    no_metadata: bool = False
    ablations: bool = True
    baselines: tuple = BASELINES
    workers: int = 1

    def __post_init__(self):
        if self.n_repetitions < 1:
            raise ConfigError("n_repetitions must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.scratch_learners = tuple(A(a) for a in self.scratch_learners)
        for a in self.scratch_learners:
            if a not in zoo.SCRATCH_IDS:
                raise ConfigError(f"{a.value} is not a scratch learner")
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise ConfigError(f"unknown baselines: {sorted(unknown)}")
        self.train = {_train_key(k): v for k, v in self.train.items()}

    def train_config(self, key) -> TrainConfig:
        key = _train_key(key)
        return self.train.get(key, TrainConfig())

    @property
    def active_scratch(self):
        return tuple(a for a in self.scratch_learners
                     if zoo.input_size(a) <= self.max_resolution)

    @property
    def active_pretrained(self):
        if self.no_pretrained:
            return ()
        return tuple(a for a in zoo.PRETRAINED_IDS if zoo.input_size(a) <= self.max_resolution)

    def to_dict(self):
        d = {
            "n_repetitions": self.n_repetitions,
            "master_seed": self.master_seed,
            "data": _data_dict(self.data),
            "aux_data": _data_dict(self.aux_data),
            "train": {k: asdict(v) for k, v in sorted(self.train.items())},
            "scratch_learners": [a.value for a in self.scratch_learners],
            "max_resolution": self.max_resolution,
            "no_pretrained": self.no_pretrained,
            "no_metadata": self.no_metadata,
            "ablations": self.ablations,
            "baselines": list(self.baselines),
        }
        return d


def quick_train_configs():
    return {(k.value if isinstance(k, A) else k): v for k, v in QUICK_TRAIN.items()}


def _train_key(k):
    if k == "mlp":
        return k
    try:
        return A(k).value
    except ValueError:
        raise ConfigError(f"no training settings can be given for {k!r}") from None


def _data_dict(d):
    return d.to_dict() if isinstance(d, SynthConfig) else {"manifest": str(d)}


# -- data ----------------------------------------------------------------------

class Dataset:
    """Samples plus lazily built image stacks, one per resolution."""

    def __init__(self, samples):
        if not samples:
            raise ConfigError("dataset is empty")
        self.samples = list(samples)
        self.labels = np.array([s.label for s in self.samples], dtype=np.int64)
        self.patient_ids = [s.patient_id for s in self.samples]
        self._stacks = {}

    def __len__(self):
        return len(self.samples)

    def images(self, size):
        if size not in self._stacks:
            self._stacks[size] = stack_images(self.samples, size)
        return self._stacks[size]

    def baseline_features(self, encoded_meta):
        """Flattened 32x32 RGB pixels followed by the 3 metadata features."""
        x = self.images(32).reshape(len(self), -1).astype(np.float64)
        return np.concatenate([x, encoded_meta], axis=1)


def load_data(source) -> Dataset:
    if isinstance(source, SynthConfig):
        return Dataset(synth_generate(source))
    return Dataset(load_manifest(source))


# -- learners --------------------------------------------------------------------

def _fit_cnn(arch, x, y, x_val, y_val, cfg: TrainConfig, seed):
    net = Network(zoo.build(arch), seed=seed)
    init_output_bias(net, y)
    return train(net, x, y, replace(cfg, seed=seed), x_val, y_val)


def pretrain_aux_learners(aux: Dataset, configs: dict, seed: int, out_dir=None,
                          learners=zoo.PRETRAINED_IDS):
    """Train PRE32/PRE64 once on the balanced auxiliary set.

    Returns ``(networks, info)``; ``info`` holds the held-out AUC-ROC of
    each learner on the auxiliary test part. With ``out_dir`` the weights
    are checkpointed there and reused by later calls with the same
    fingerprint, so repetitions never retrain them.
    """
    rate = float(aux.labels.mean())
    if not 0.4 <= rate <= 0.6:
        warnings.warn(f"auxiliary set is not balanced: positive fraction {rate:.3f}",
                      RuntimeWarning, stacklevel=2)
    fingerprint = {"seed": seed, "n": len(aux), "positives": int(aux.labels.sum()),
                   "learners": [a.value for a in learners],
                   "train": {a.value: asdict(configs.get(a.value, TrainConfig()))
                             for a in learners}}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        nets = _load_pretrained(out, fingerprint, learners)
        if nets is not None:
            return nets
    split = group_split(aux.patient_ids, aux.labels, derive_seed(seed, _AUX_SPLIT))
    tr, va, te = (list(p) for p in (split.train, split.val, split.test))
    nets, info = {}, {}
    for j, arch in enumerate(learners):
        x = aux.images(zoo.input_size(arch))
        t0 = time.time()
        net, hist = _fit_cnn(arch, x[tr], aux.labels[tr], x[va], aux.labels[va],
                             configs.get(arch.value, TrainConfig()), derive_seed(seed, _PRE, j))
        auc = metrics.auc_roc(metrics.roc_curve(net.predict(x[te]), aux.labels[te]))
        log.info("pre-trained %s: held-out AUC-ROC %.3f (%.0f s)", arch.value, auc,
                 time.time() - t0)
        nets[arch] = net
        info[arch.value] = {"heldout_auc_roc": auc, "history": hist.to_dict()}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for arch, net in nets.items():
            checkpoint.save_network(net, out / f"{arch.value}.sdnn")
        (out / "pretrain.json").write_text(json.dumps(
            {"fingerprint": fingerprint, "info": info}, indent=2, sort_keys=True))
    return nets, info


def _load_pretrained(out, fingerprint, learners):
    meta = out / "pretrain.json"
    if not meta.exists():
        return None
    saved = json.loads(meta.read_text())
    if saved.get("fingerprint") != fingerprint:
        return None
    paths = {a: out / f"{a.value}.sdnn" for a in learners}
    if not all(p.exists() for p in paths.values()):
        return None
    nets = {a: checkpoint.load_network(p, zoo.build(a)) for a, p in paths.items()}
    log.info("reusing pre-trained checkpoints in %s", out)
    return nets, saved["info"]


def train_scratch_learners(data: Dataset, train_idx, val_idx, configs: dict, seeds: dict,
                           learners=zoo.SCRATCH_IDS, ckpt_dir=None):
    """Train each scratch CNN on its own resolution of the same samples.

    Returns ``(networks, histories)``. Checkpoints found in ``ckpt_dir``
    (written by an earlier call with the same seeds) are loaded instead of
    retrained.
    """
    nets, hists = {}, {}
    tr, va = list(train_idx), list(val_idx)
    for arch in learners:
        path = Path(ckpt_dir) / f"{arch.value}.sdnn" if ckpt_dir is not None else None
        if path is not None and path.exists():
            nets[arch] = checkpoint.load_network(path, zoo.build(arch))
            hists[arch.value] = None
            continue
        x = data.images(zoo.input_size(arch))
        t0 = time.time()
        net, hist = _fit_cnn(arch, x[tr], data.labels[tr], x[va], data.labels[va],
                             configs.get(arch.value, TrainConfig()), seeds[arch])
        log.info("trained %s: best epoch %d (%.0f s)", arch.value, hist.best_epoch,
                 time.time() - t0)
        nets[arch] = net
        hists[arch.value] = hist.to_dict()
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            checkpoint.save_network(net, path)
    return nets, hists


def base_scores(nets: dict, data: Dataset) -> dict:
    """Sigmoid outputs of every network on every sample, keyed by id."""
    return {a: nets[a].predict(data.images(zoo.input_size(a))).astype(np.float64)
            for a in nets}


def meta_layout(learners, no_pretrained=False, no_metadata=False):
    cols = [a.value for a in BASE_ORDER if a in learners
            and not (no_pretrained and a in zoo.PRETRAINED_IDS)]
    if not no_metadata:
        cols.extend(META_NAMES)
    return tuple(cols)


def meta_features(scores: dict, encoded_meta, no_pretrained=False, no_metadata=False):
    """Stack base scores and metadata as meta-learner inputs.

    Columns follow ``CNN32, CNN64, CNN128, CNN256, PRE32, PRE64, age,
    sex_code, site_code`` restricted to the learners present and the flags.
    Returns ``(matrix, layout)``.
    """
    scores = {A(k): v for k, v in scores.items()}
    layout = meta_layout(scores, no_pretrained, no_metadata)
    cols = [scores[A(name)] for name in layout if name not in META_NAMES]
    if not no_metadata:
        encoded_meta = np.asarray(encoded_meta, dtype=np.float64)
        if encoded_meta.ndim != 2 or encoded_meta.shape[1] != 3:
            raise ConfigError("encoded metadata must have 3 columns")
        cols.extend(encoded_meta.T)
    if not cols:
        raise ConfigError("meta-learner would have no input features")
    return np.column_stack(cols), layout


def train_meta(features, labels) -> SvmModel:
    """RBF meta-SVM with C=0.02 and gamma=0.0009 on standardized features."""
    return fit_smo(features, labels, META_C, META_KERNEL, tol=META_TOL)


@dataclass
class EnsembleModel:
    scratch_learners: dict
    pretrained_learners: dict
    meta: SvmModel
    meta_feature_layout: tuple
    meta_stats: object = None  # imputation statistics of the training fold

    def predict(self, data: Dataset):
        learners = {**self.scratch_learners, **self.pretrained_learners}
        no_meta = not set(META_NAMES) <= set(self.meta_feature_layout)
        meta = None if no_meta else apply_metadata(data.samples, self.meta_stats)
        feats, layout = meta_features(base_scores(learners, data), meta,
                                      no_metadata=no_meta)
        if layout != tuple(self.meta_feature_layout):
            raise ConfigError(f"meta features {layout} do not match the trained "
                              f"layout {tuple(self.meta_feature_layout)}")
        return decision_function(self.meta, feats)


# -- baselines -------------------------------------------------------------------

def standardizer(x):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def knn_scores(train_x, train_y, x, k=KNN_K):
    """Fraction of positives among the ``k`` nearest training points.

    Euclidean distance; equal distances keep the lower training index.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    train_y = np.asarray(train_y)
    if not 1 <= k <= len(train_x):
        raise ConfigError(f"k must lie in [1, {len(train_x)}]")
    out = np.empty(len(x))
    sq_train = (train_x ** 2).sum(1)
    for s in range(0, len(x), 256):
        xb = x[s:s + 256]
        d = (xb ** 2).sum(1)[:, None] + sq_train[None] - 2 * xb @ train_x.T
        nn_idx = np.argsort(d, axis=1, kind="stable")[:, :k]
        out[s:s + 256] = train_y[nn_idx].sum(1) / k
    return out


def run_baseline_models(data: Dataset, encoded_meta, train_idx, val_idx, baselines,
                        mlp_config: TrainConfig, seed):
    """Scores of the requested baselines on all samples, plus the input width."""
    tr, va = list(train_idx), list(val_idx)
    raw = data.baseline_features(encoded_meta)
    mean, std = standardizer(raw[tr])
    z = (raw - mean) / std
    y = data.labels
    out = {}
    if "knn" in baselines:
        out["knn"] = knn_scores(z[tr], y[tr], z, KNN_K)
    if "mlp" in baselines:
        z32 = z.astype(np.float32)
        net, _ = _fit_cnn(A.MLP_BASELINE, z32[tr], y[tr], z32[va], y[va], mlp_config, seed)
        out["mlp"] = net.predict(z32).astype(np.float64)
    if "svm_poly" in baselines:
        model = fit_smo(raw[tr], y[tr], BASELINE_C, BASELINE_KERNEL)
        out["svm_poly"] = decision_function(model, raw)
    return out, raw.shape[1]


# -- one repetition -----------------------------------------------------------------

def _evaluate(scores, labels, val_idx, test_idx):
    s_val, s_test = scores[val_idx], scores[test_idx]
    y_val, y_test = labels[val_idx], labels[test_idx]
    rep = metrics.evaluate(s_test, y_test)
    thr = metrics.best_f1(s_val, y_val)[0]
    f1_val = metrics.f1(metrics.confusion_at(s_test, y_test, thr))
    d = rep.to_dict()
    d["f1_at_val_threshold"] = f1_val
    d["val_threshold"] = thr
    return d, rep


def run_repetition(cfg: ExperimentConfig, data: Dataset, pretrained: dict, rep: int,
                   out_dir=None):
    """Train and evaluate every method on one grouped split.

    Returns a dict with the split, per-method metric dicts and curves.
    """
    rep_dir = Path(out_dir) / f"rep_{rep:02d}" if out_dir is not None else None
    split = group_split(data.patient_ids, data.labels,
                        derive_seed(cfg.master_seed, _SPLIT, rep))
    tr, va, te = (np.array(p) for p in (split.train, split.val, split.test))
    y = data.labels
    encoded, stats = encode_metadata(data.samples, tr)

    seeds = {a: derive_seed(cfg.master_seed, _SCRATCH, rep, j)
             for j, a in enumerate(zoo.SCRATCH_IDS)}
    configs = {a.value: cfg.train_config(a) for a in cfg.active_scratch}
    ckpt_dir = rep_dir / "checkpoints" if rep_dir is not None else None
    if rep_dir is not None:
        _check_rep_fingerprint(rep_dir, cfg, rep, seeds, configs)
    clock = time.perf_counter()
    timings = {}
    scratch, hists = train_scratch_learners(data, tr, va, configs, seeds,
                                            cfg.active_scratch, ckpt_dir)
    learners = {**scratch, **{a: pretrained[a] for a in cfg.active_pretrained}}
    scores = base_scores(learners, data)
    timings["base_learners"] = time.perf_counter() - clock

    clock = time.perf_counter()
    method_scores = {a.value: scores[a] for a in BASE_ORDER if a in scores}
    metas = {}
    variants = {"ensemble": (cfg.no_pretrained, cfg.no_metadata)}
    if cfg.ablations:
        if cfg.active_pretrained:
            variants["no_pretrained"] = (True, cfg.no_metadata)
        variants["no_metadata"] = (cfg.no_pretrained, True)
    for name, (np_flag, nm_flag) in variants.items():
        feats, layout = meta_features(scores, encoded, np_flag, nm_flag)
        model = train_meta(feats[tr], y[tr])
        metas[name] = (model, layout)
        method_scores[name] = decision_function(model, feats)
    timings["meta"] = time.perf_counter() - clock

    n_features = None
    if cfg.baselines:
        clock = time.perf_counter()
        bscores, n_features = run_baseline_models(
            data, encoded, tr, va, cfg.baselines, cfg.train_config("mlp"),
            derive_seed(cfg.master_seed, _MLP, rep))
        method_scores.update(bscores)
        timings["baselines"] = time.perf_counter() - clock

    results, curves = {}, {}
    for name, s in method_scores.items():
        results[name], report = _evaluate(s, y, va, te)
        curves[name] = (report.roc, report.pr)

    if rep_dir is not None:
        rep_dir.mkdir(parents=True, exist_ok=True)
        (rep_dir / "split.json").write_text(split.to_json())
        for name, (model, layout) in metas.items():
            checkpoint.save_svm(model, rep_dir / f"meta_{name}.ssvm")
        (rep_dir / "reports.json").write_text(json.dumps(
            {"repetition": rep, "metrics": results,
             "meta_layouts": {k: list(v[1]) for k, v in metas.items()}},
            indent=2, sort_keys=True))
        (rep_dir / "history.json").write_text(json.dumps(hists, indent=2, sort_keys=True))
        (rep_dir / "timing.json").write_text(json.dumps(timings, indent=2, sort_keys=True))
        cdir = rep_dir / "curves"
        cdir.mkdir(exist_ok=True)
        for name, (roc, pr) in curves.items():
            _write_points(cdir / f"{name}_roc.csv", roc, ("fpr", "tpr"))
            _write_points(cdir / f"{name}_pr.csv", pr, ("recall", "precision"))

    ensemble = EnsembleModel(scratch, {a: pretrained[a] for a in cfg.active_pretrained},
                             metas["ensemble"][0], metas["ensemble"][1], stats)
    return {"repetition": rep, "split": split, "metrics": results, "curves": curves,
            "n_baseline_features": n_features, "ensemble": ensemble,
            "scores": method_scores, "timings": timings}


def _check_rep_fingerprint(rep_dir, cfg, rep, seeds, configs):
    """Drop stale scratch checkpoints left by a different configuration."""
    fp = {"data": _data_dict(cfg.data), "rep": rep,
          "seeds": {a.value: s for a, s in seeds.items()}, "train": {
              k: asdict(v) for k, v in sorted(configs.items())}}
    path = rep_dir / "fingerprint.json"
    text = json.dumps(fp, indent=2, sort_keys=True)
    if path.exists() and path.read_text() != text:
        for f in (rep_dir / "checkpoints").glob("*.sdnn"):
            f.unlink()
    rep_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_points(path, curve, names):
    with open(path, "w") as fh:
        fh.write(f"{names[0]},{names[1]},threshold\n")
        for x, yv, t in zip(curve.x, curve.y, curve.thresholds):
            fh.write(f"{x!r},{yv!r},{t!r}\n")


# -- the protocol -------------------------------------------------------------------

_WORKER_STATE = {}


def _worker_rep(rep):
    st = _WORKER_STATE
    res = run_repetition(st["cfg"], st["data"], st["pretrained"], rep, st["out_dir"])
    res.pop("ensemble")  # networks stay in the worker; checkpoints are on disk
    return res


def prepare(cfg: ExperimentConfig, out_dir=None):
    """Load the primary data and the frozen auxiliary learners."""
    data = load_data(cfg.data)
    pretrained, info = {}, {}
    if cfg.active_pretrained:
        aux = load_data(cfg.aux_data)
        pre_dir = Path(out_dir) / "pretrained" if out_dir is not None else None
        configs = {a.value: cfg.train_config(a) for a in cfg.active_pretrained}
        pretrained, info = pretrain_aux_learners(
            aux, configs, derive_seed(cfg.master_seed, _PRE), pre_dir, cfg.active_pretrained)
    return data, pretrained, info


def run_experiment(cfg: ExperimentConfig, out_dir=None, data=None, pretrained=None):
    """Run repetitions ``1..n`` (repetition 0 is kept aside for tuning).

    Returns the aggregate dict; with ``out_dir`` the per-repetition files,
    ``aggregate.json``, ``table.txt`` and averaged curve CSVs are written.
    """
    pre_info = {}
    t_prep = time.time()
    if data is None or pretrained is None:
        data, pretrained, pre_info = prepare(cfg, out_dir)
    t_prep = time.time() - t_prep
    reps = list(range(1, cfg.n_repetitions + 1))
    t0 = time.time()
    if cfg.workers > 1 and len(reps) > 1:
        _WORKER_STATE.update(cfg=cfg, data=data, pretrained=pretrained, out_dir=out_dir)
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(min(cfg.workers, len(reps)), mp_context=ctx) as pool:
            results = list(pool.map(_worker_rep, reps))
        _WORKER_STATE.clear()
    else:
        results = []
        for rep in reps:
            try:
                results.append(run_repetition(cfg, data, pretrained, rep, out_dir))
            except StackdermError as exc:
                raise type(exc)(f"repetition {rep}: {exc}") from exc
            log.info("repetition %d done (%.0f s elapsed)", rep, time.time() - t0)
    agg = aggregate(results, cfg)
    agg["pretrained"] = {k: {"heldout_auc_roc": v["heldout_auc_roc"]}
                         for k, v in sorted(pre_info.items())}
    if out_dir is not None:
        write_outputs(agg, results, out_dir)
        (Path(out_dir) / "timing.json").write_text(json.dumps(
            {"prepare_seconds": t_prep, "repetition_seconds": time.time() - t0}, indent=2))
    agg["_results"] = results
    return agg


def ablate(cfg: ExperimentConfig, out_dir=None):
    """Reports of the no_pretrained and no_metadata ensembles.

    Splits and scratch checkpoints are shared with the full run (they are
    reused from ``out_dir`` when a full run already wrote them).
    """
    agg = run_experiment(replace(cfg, ablations=True, baselines=()), out_dir)
    return {k: agg["methods"][k] for k in ABLATIONS if k in agg["methods"]}


def run_baselines(cfg: ExperimentConfig, out_dir=None):
    """Aggregated KNN, MLP and polynomial-SVM reports on the ensemble's splits."""
    agg = run_experiment(replace(cfg, baselines=BASELINES), out_dir)
    return {k: agg["methods"][k] for k in BASELINES}


# -- aggregation and rendering ------------------------------------------------------------

def _ci_dict(values):
    values = [float(v) for v in values]
    d = {"mean": float(np.mean(values)), "values": values, "n": len(values)}
    if len(values) < 2:
        d.update(std=None, half_width=None, ci_defined=False)
    else:
        ci = metrics.confidence_interval(values)
        d.update(std=ci.std, half_width=ci.half_width, multiplier=ci.multiplier,
                 ci_defined=True)
    return d


def aggregate(results, cfg: ExperimentConfig):
    results = sorted(results, key=lambda r: r["repetition"])
    names = list(results[0]["metrics"])
    methods = {}
    for name in names:
        methods[name] = {k: _ci_dict([r["metrics"][name][k] for r in results])
                         for k in METRIC_KEYS}
    base = [a.value for a in BASE_ORDER if a.value in names]
    groups = {"ensemble": ["ensemble"] + base,
              "ablation": ["ensemble"] + [a for a in ABLATIONS if a in names],
              "baselines": [b for b in BASELINES if b in names] + ["ensemble"]}
    return {
        "config": cfg.to_dict(),
        "repetitions": [r["repetition"] for r in results],
        "n_baseline_features": results[0]["n_baseline_features"],
        "methods": methods,
        "groups": groups,
        "splits": {str(r["repetition"]): {"train": len(r["split"].train),
                                          "val": len(r["split"].val),
                                          "test": len(r["split"].test)} for r in results},
    }


def averaged_curves(results, name):
    """Vertically averaged ROC and PR curves of one method over repetitions."""
    rocs = [r["curves"][name][0] for r in results]
    prs = [r["curves"][name][1] for r in results]
    if len(results) == 1:  # a single curve averages to itself with zero spread
        rocs, prs = rocs * 2, prs * 2
    return metrics.average_curves(rocs), metrics.average_curves(prs)


def write_outputs(agg, results, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "aggregate.json").write_text(dump_aggregate(agg))
    (out / "table.txt").write_text(render_table(agg))
    cdir = out / "curves"
    cdir.mkdir(exist_ok=True)
    for name in agg["methods"]:
        (roc, pr) = averaged_curves(results, name)
        metrics.write_curve_csv(cdir / f"{name}_roc.csv", *roc)
        metrics.write_curve_csv(cdir / f"{name}_pr.csv", *pr)


def dump_aggregate(agg):
    clean = {k: v for k, v in agg.items() if not k.startswith("_")}
    return json.dumps(clean, indent=2, sort_keys=True) + "\n"


def _cell(stats, decimals=2):
    if stats["ci_defined"]:
        return f"{stats['mean']:.{decimals}f} ± {stats['half_width']:.{decimals}f}"
    return f"{stats['mean']:.{decimals}f}"


def render_table(agg):
    """Plain-text tables: ensemble vs base learners, ablations, baselines."""
    methods = agg.get("methods") or {}
    if not methods or not agg.get("repetitions"):
        raise ConfigError("aggregate holds no repetitions")
    n = len(agg["repetitions"])
    titles = {"ensemble": "Ensemble and base learners", "ablation": "Ablations",
              "baselines": "Baselines"}
    header = ("Method", "F1-measure", "AUC-PR", "AUC-ROC", "F1 (val threshold)")
    lines = [f"{n} repetition(s); cells are mean ± 95% CI half-width"
             if n > 1 else "1 repetition; no confidence interval (raw values)"]
    for group in titles:  # fixed order; JSON round trips sort the keys
        members = [m for m in agg["groups"].get(group, ()) if m in methods]
        if len(members) < 2 and group != "ensemble":
            continue
        rows = [header]
        for m in members:
            st = methods[m]
            rows.append((LABELS.get(m, m), _cell(st["f1"]), _cell(st["auc_pr"]),
                         _cell(st["auc_roc"]), _cell(st["f1_at_val_threshold"])))
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines += ["", titles[group]]
        for i, r in enumerate(rows):
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def env_workers(default=1):
    """Worker cap from ``STACKDERM_THREADS`` (unset or empty means ``default``)."""
    raw = os.environ.get("STACKDERM_THREADS", "").strip()
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"STACKDERM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"STACKDERM_THREADS must be a positive integer, got {raw!r}")
    return n
