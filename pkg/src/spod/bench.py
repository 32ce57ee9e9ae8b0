"""Benchmark and sweep harness.

A detector adapter is any object with a ``name`` and a
``score_batch(net, X) -> scores`` method (higher = more ID). The
runner scores one ID set against each OOD set per detector, isolating
failures per row, and reports AUROC / FPR-at-95%-TPR plus score
distributions, exact-certificate counts for subspace detectors, and
measured throughput.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import baselines, detector
from .certificates import STRICTNESS_TOL
from .data import LabeledDataset, LabelNoiseSpec, SyntheticSpec, generate_synthetic, inject_label_noise
from .errors import SpodError, ValidationError
from .metrics import ScoredSet, auroc, fpr_at_tpr
from .nn import Network, forward_batch, mlp, train_sgd

SWEEP_PARAMS = ("epsilon", "dice_p", "subset", "seed", "label_noise")

CSV_COLUMNS = ("detector", "dataset", "auroc", "fpr95", "n_id", "n_ood",
               "runtime_per_sample", "param", "value", "retained_k",
               "certified_id", "certified_ood", "error")


@dataclass
class EvalRow:
    detector: str
    dataset: str
    auroc: float | None = None
    fpr95: float | None = None
    n_id: int = 0
    n_ood: int = 0
    runtime_per_sample: float | None = None
    param: str | None = None
    value: object = None
    retained_k: int | None = None
    certified_id: int | None = None
    certified_ood: int | None = None
    error: str | None = None

    def to_dict(self, timing: bool = True) -> dict:
        d = {c: getattr(self, c) for c in CSV_COLUMNS}
        if not timing:
            d["runtime_per_sample"] = None
        return d


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int | None = None
    scores: dict = field(default_factory=dict)

    def to_json(self, timing: bool = True) -> str:
        payload = {
            "seed": self.seed,
            "config": self.config,
            "rows": [r.to_dict(timing) for r in self.rows],
            "scores": self.scores,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_csv(self, timing: bool = True) -> str:
        lines = [f"# {k} = {self.config[k]}" for k in sorted(self.config)]
        if self.seed is not None:
            lines.append(f"# seed = {self.seed}")
        lines.append(",".join(CSV_COLUMNS))
        for r in self.rows:
            d = r.to_dict(timing)
            cells = []
            for c in CSV_COLUMNS:
                v = d[c]
                if v is None:
                    cells.append("")
                elif isinstance(v, float):
                    cells.append(repr(v))
                else:
                    cells.append(str(v))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


@dataclass
class LogitScorer:
    """Adapter for the stateless logit scorers."""

    name: str
    fn: object

    def score_batch(self, net: Network, X) -> np.ndarray:
        logits, _ = forward_batch(net, X)
        return self.fn(logits)


class SubspaceScorer:
    """Adapter around a fitted subspace (single or per-head) state."""

    def __init__(self, name: str, state):
        self.name = name
        self.state = state

    @property
    def retained_k(self) -> int:
        if isinstance(self.state, detector.PerHeadSubspace):
            return max(s.k for s in self.state.states)
        return self.state.k

    def score_batch(self, net: Network, X) -> np.ndarray:
        if isinstance(self.state, detector.PerHeadSubspace):
            return detector.score_per_head_batch(self.state, net, X)
        return detector.score_batch(self.state, net, X)

    @staticmethod
    def certified_count(scores: np.ndarray) -> int:
        # exact certificate fires when 1 - score^2 exceeds the strictness margin
        return int(np.sum(1.0 - scores ** 2 > STRICTNESS_TOL))


_LOGIT_SCORERS = {
    "maxlogit": baselines.max_logit_score,
    "msp": baselines.msp_score,
    "odin": baselines.odin_score,
    "energy": baselines.energy_score,
}

DETECTOR_NAMES = ("subspace", "subspace_batch", "subspace_vec", "gradorth",
                  "maxlogit", "msp", "odin", "energy", "dice", "mahalanobis",
                  "knn", "react", "nci", "rpca", "corp")


def build_detector(name: str, net: Network, train: LabeledDataset,
                   cfg: detector.DetectorConfig | None = None, seed: int = 0):
    """Construct one adapter by registry name, fitting on ``train``."""
    cfg = cfg or detector.DetectorConfig()
    if name in _LOGIT_SCORERS:
        return LogitScorer(name, _LOGIT_SCORERS[name])
    if name == "subspace":
        from dataclasses import replace
        state = detector.fit(net, train, replace(cfg, variant="means"))
        return SubspaceScorer(name, state)
    if name == "subspace_batch":
        from dataclasses import replace
        state = detector.fit_batch_subspace(net, train, replace(cfg, variant="batch"))
        return SubspaceScorer(name, state)
    if name == "subspace_vec":
        from dataclasses import replace
        state = detector.fit_per_head(
            net, train, replace(cfg, variant="vec", aggregation=None))
        return SubspaceScorer(name, state)
    if name == "gradorth":
        from dataclasses import replace
        state = detector.fit_gradorth_subspace(
            net, train, replace(cfg, variant="gradorth", subset_groups=None))
        return SubspaceScorer(name, state)
    _, features = forward_batch(net, train.inputs)
    if name == "dice":
        return baselines.DiceDetector(net, p=0.7)
    if name == "mahalanobis":
        if not train.labeled:
            raise ValidationError("mahalanobis needs labels")
        return baselines.MahalanobisDetector(features, train.labels, train.num_classes)
    if name == "knn":
        return baselines.KnnDetector(features, k=10)
    if name == "react":
        return baselines.ReactDetector(net, features, quantile=0.9)
    if name == "nci":
        return baselines.NciDetector(net, features)
    if name == "rpca":
        return baselines.RevisitedPcaDetector(net, train.inputs, retained=0.9)
    if name == "corp":
        return baselines.CorpDetector(features, seed=seed)
    raise ValidationError(f"unknown detector {name!r}; known: {DETECTOR_NAMES}")


def _dataset_name(ds, fallback: str) -> str:
    name = getattr(ds, "name", "") or fallback
    return name


def run_benchmark(net: Network, detectors, id_test, ood_sets,
                  config: dict | None = None, seed: int | None = None,
                  tpr: float = 0.95) -> EvalReport:
    """Score every detector against every OOD set.

    ``ood_sets`` is a sequence of datasets (or input matrices). A
    detector failure is recorded in its rows and does not stop the
    others. Throughput is measured over all scoring calls per detector.
    """
    report = EvalReport(config=dict(config or {}), seed=seed)
    id_X = id_test.inputs if hasattr(id_test, "inputs") else np.asarray(id_test, np.float64)
    id_name = _dataset_name(id_test, "id")
    for det in detectors:
        t0 = time.perf_counter()
        try:
            id_scores = np.asarray(det.score_batch(net, id_X), dtype=np.float64)
        except SpodError as exc:
            for j, ood in enumerate(ood_sets):
                report.rows.append(EvalRow(
                    detector=det.name, dataset=_dataset_name(ood, f"ood{j}"),
                    error=f"{type(exc).__name__}: {exc}"))
            continue
        elapsed = time.perf_counter() - t0
        n_scored = id_X.shape[0]
        cert_id = (SubspaceScorer.certified_count(id_scores)
                   if isinstance(det, SubspaceScorer) else None)
        retained_k = det.retained_k if isinstance(det, SubspaceScorer) else None
        for j, ood in enumerate(ood_sets):
            ood_X = ood.inputs if hasattr(ood, "inputs") else np.asarray(ood, np.float64)
            ood_name = _dataset_name(ood, f"ood{j}")
            row = EvalRow(detector=det.name, dataset=ood_name,
                          n_id=id_X.shape[0], n_ood=ood_X.shape[0],
                          retained_k=retained_k, certified_id=cert_id)
            try:
                t1 = time.perf_counter()
                ood_scores = np.asarray(det.score_batch(net, ood_X), dtype=np.float64)
                elapsed += time.perf_counter() - t1
                n_scored += ood_X.shape[0]
                scored = ScoredSet(id_scores, ood_scores)
                row.auroc = auroc(scored)
                row.fpr95 = fpr_at_tpr(scored, tpr)
                if isinstance(det, SubspaceScorer):
                    row.certified_ood = SubspaceScorer.certified_count(ood_scores)
                report.scores[f"{det.name}|{ood_name}"] = {
                    "id_set": id_name,
                    "id": id_scores.tolist(),
                    "ood": ood_scores.tolist(),
                }
            except SpodError as exc:
                row.error = f"{type(exc).__name__}: {exc}"
            report.rows.append(row)
        per_sample = elapsed / max(n_scored, 1)
        for row in report.rows:
            if row.detector == det.name and row.error is None:
                row.runtime_per_sample = per_sample
    return report


def sweep(param: str, values, pipeline) -> EvalReport:
    """Run ``pipeline(param, value)`` per value and merge the row sets.

    A failing value contributes a single error row; the sweep continues.
    """
    if param not in SWEEP_PARAMS:
        raise ValidationError(f"param must be one of {SWEEP_PARAMS}")
    merged = EvalReport()
    for value in values:
        try:
            rep = pipeline(param, value)
        except SpodError as exc:
            merged.rows.append(EvalRow(detector="pipeline", dataset="",
                                       param=param, value=value,
                                       error=f"{type(exc).__name__}: {exc}"))
            continue
        if not merged.config:
            merged.config = rep.config
            merged.seed = rep.seed
        for row in rep.rows:
            row.param = param
            row.value = value
            merged.rows.append(row)
        for key, val in rep.scores.items():
            merged.scores[f"{param}={value}|{key}"] = val
    return merged


def _train_cache_key(cfg: dict) -> str:
    keys = [k for k in cfg
            if k.startswith(("data.", "model.", "train.")) or k == "seed"]
    return json.dumps({k: cfg[k] for k in sorted(keys)}, sort_keys=True)


def synthetic_pipeline(cfg: dict, param: str | None = None, value=None,
                       net_cache: dict | None = None) -> EvalReport:
    """Full desk pipeline from a flat config: generate, train, fit, evaluate.

    ``param``/``value`` override one swept knob. ``net_cache`` (optional
    dict) reuses trained networks across sweep values that share the
    same data/model/training configuration.
    """
    from .config import DEFAULTS, config_to_detector, finalize

    cfg = finalize({**DEFAULTS, **cfg})
    if param is not None:
        target = {"epsilon": "detector.epsilon", "dice_p": "detector.dice_p",
                  "subset": "detector.subset", "seed": "seed",
                  "label_noise": "data.label_noise"}[param]
        cfg[target] = value
        cfg = finalize(cfg)
    seed = cfg["seed"]
    spec = SyntheticSpec(
        num_classes=cfg["data.num_classes"], input_dim=cfg["data.input_dim"],
        samples_per_class=cfg["data.samples_per_class"],
        mean_scale=cfg["data.mean_scale"], noise_sigma=cfg["data.noise_sigma"],
        ood_mode=cfg["data.ood_mode"], seed=seed)
    bundle = generate_synthetic(spec)
    train = bundle.id_train
    if cfg["data.label_noise"] > 0.0:
        train = inject_label_noise(train, LabelNoiseSpec(cfg["data.label_noise"], seed))
    key = _train_cache_key(cfg)
    net = None if net_cache is None else net_cache.get(key)
    if net is None:
        net = mlp(spec.input_dim, cfg["model.hidden"], spec.num_classes,
                  activation=cfg["model.activation"], seed=seed)
        train_sgd(net, train, epochs=cfg["train.epochs"], lr=cfg["train.lr"],
                  momentum=cfg["train.momentum"],
                  weight_decay=cfg["train.weight_decay"], seed=seed,
                  batch_size=cfg["train.batch_size"])
        if net_cache is not None:
            net_cache[key] = net
    det_cfg = config_to_detector(cfg)
    detectors = [build_detector(name, net, train, det_cfg, seed=seed)
                 for name in cfg["eval.detectors"]]
    report = run_benchmark(net, detectors, bundle.id_test, [bundle.ood],
                           config=cfg, seed=seed, tpr=cfg["eval.tpr"])
    return report
