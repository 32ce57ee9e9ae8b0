"""Command-line interface.

Subcommands: gen-data, train, fit, score, detect, certify, ntk-inspect,
bench, sweep. Exit codes: 0 success, 1 validation/config error, 2
numerical failure. All outputs are deterministic for identical
configurations; benchmark timing columns are only written under
--timing because wall-clock numbers are not reproducible.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import config as config_mod
from . import detector as det_mod
from . import ntk as ntk_mod
from ._accel import set_thread_cap
from .certificates import STRICTNESS_TOL, certify_robust
from .data import (
    LabeledDataset,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .errors import NumericalError, SpodError, ValidationError
from .nn import forward_batch, load_checkpoint, mlp, save_checkpoint, train_sgd

_SCORE_CHUNK = 1024


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; route through the
    # validation path instead so 2 stays reserved for numerical failures
    def error(self, message):
        raise ValidationError(message)


def _add_common(p: _Parser, config: bool = True):
    if config:
        p.add_argument("--config", help="flat 'section.key = value' config file")
    p.add_argument("--seed", type=int, help="run seed (mandatory unless set in config)")
    p.add_argument("--threads", type=int, help="cap worker threads")


def _effective_config(args, overrides: dict | None = None) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(config_mod.load_config(args.config))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    return config_mod.finalize(cfg)


def _apply_threads(args):
    if getattr(args, "threads", None) is not None:
        set_thread_cap(args.threads)


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _json_safe(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def _jsonl(records) -> str:
    lines = []
    for rec in records:
        rec = {k: _json_safe(v) for k, v in rec.items()}
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    _apply_threads(args)
    cfg = _effective_config(args, {
        "data.num_classes": args.num_classes,
        "data.input_dim": args.input_dim,
        "data.samples_per_class": args.samples_per_class,
        "data.mean_scale": args.mean_scale,
        "data.noise_sigma": args.noise_sigma,
        "data.ood_mode": args.ood_mode,
    })
    spec = SyntheticSpec(
        num_classes=cfg["data.num_classes"], input_dim=cfg["data.input_dim"],
        samples_per_class=cfg["data.samples_per_class"],
        mean_scale=cfg["data.mean_scale"], noise_sigma=cfg["data.noise_sigma"],
        ood_mode=cfg["data.ood_mode"], seed=cfg["seed"])
    bundle = generate_synthetic(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, ds in (("id_train", bundle.id_train), ("id_test", bundle.id_test),
                     ("ood", bundle.ood)):
        path = out_dir / f"{name}.spdt"
        save_dataset(ds, path)
        files[name] = str(path)
    meta = {"config": {k: cfg[k] for k in sorted(cfg) if k.startswith(("data.",)) or k == "seed"},
            "files": files}
    (out_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n",
                                       encoding="utf-8")
    sys.stdout.write(json.dumps(meta, sort_keys=True) + "\n")


def cmd_train(args):
    _apply_threads(args)
    cfg = _effective_config(args, {
        "train.epochs": args.epochs,
        "train.lr": args.lr,
        "train.momentum": args.momentum,
        "train.weight_decay": args.weight_decay,
        "train.batch_size": args.batch_size,
        "model.hidden": [int(h) for h in args.hidden.split(",")] if args.hidden else None,
        "model.activation": args.activation,
    })
    ds = load_dataset(args.data)
    if not ds.labeled:
        raise ValidationError("training needs a labeled dataset")
    net = mlp(ds.input_dim, cfg["model.hidden"], ds.num_classes,
              activation=cfg["model.activation"], seed=cfg["seed"])
    log = train_sgd(net, ds, epochs=cfg["train.epochs"], lr=cfg["train.lr"],
                    momentum=cfg["train.momentum"],
                    weight_decay=cfg["train.weight_decay"], seed=cfg["seed"],
                    batch_size=cfg["train.batch_size"])
    save_checkpoint(net, args.out)
    summary = {
        "checkpoint": args.out,
        "config": {k: cfg[k] for k in sorted(cfg)
                   if k.startswith(("model.", "train.")) or k == "seed"},
        "final_accuracy": log.final_accuracy,
        "losses": log.losses,
        "accuracies": log.accuracies,
    }
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


_VARIANT_FLAGS = {"means": "means", "batch": "batch", "gradorth": "gradorth", "vec": "vec"}


def cmd_fit(args):
    _apply_threads(args)
    overrides = {
        "detector.variant": _VARIANT_FLAGS.get(args.variant, args.variant) if args.variant else None,
        "detector.epsilon": args.epsilon,
        "detector.dice_p": args.dice_p,
        "detector.subset": args.subset.split(",") if args.subset else None,
        "detector.delta": args.delta,
    }
    if args.agg:
        overrides["detector.aggregation"] = config_mod.SCHEMA["detector.aggregation"](args.agg)
    cfg = _effective_config(args, overrides)
    net = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    det_cfg = config_mod.config_to_detector(cfg)
    state = det_mod.fit(net, ds, det_cfg)
    det_mod.save_state(state, args.out)
    if isinstance(state, det_mod.PerHeadSubspace):
        summary = {"state": args.out, "kind": "per_head",
                   "k": [s.k for s in state.states],
                   "retained_fraction": [s.retained_fraction for s in state.states],
                   "config": det_cfg.to_dict()}
    else:
        summary = {"state": args.out, "kind": "single", "k": state.k,
                   "dim": state.dim, "retained_fraction": state.retained_fraction,
                   "config": det_cfg.to_dict()}
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


def _load_state_net_data(args):
    state = det_mod.load_state(args.state)
    net = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    return state, net, ds


def _state_config_echo(state) -> dict:
    if isinstance(state, det_mod.PerHeadSubspace):
        return {"kind": "per_head", "reduce": state.reduce,
                "config": state.states[0].config.to_dict()}
    return {"kind": "single", "config": state.config.to_dict()}


def _score_all(state, net, X) -> np.ndarray:
    parts = []
    for start in range(0, X.shape[0], _SCORE_CHUNK):
        chunk = X[start:start + _SCORE_CHUNK]
        if isinstance(state, det_mod.PerHeadSubspace):
            parts.append(det_mod.score_per_head_batch(state, net, chunk))
        else:
            parts.append(det_mod.score_batch(state, net, chunk))
    return np.concatenate(parts)


def cmd_score(args):
    _apply_threads(args)
    state, net, ds = _load_state_net_data(args)
    vals = _score_all(state, net, ds.inputs)
    records = [{"type": "config", "data": args.data, **_state_config_echo(state)}]
    records += [{"index": i, "score": float(v)} for i, v in enumerate(vals)]
    _emit(_jsonl(records), args.out)


def cmd_detect(args):
    _apply_threads(args)
    state, net, ds = _load_state_net_data(args)
    if isinstance(state, det_mod.PerHeadSubspace):
        delta = args.delta if args.delta is not None else state.states[0].config.threshold_delta
    else:
        delta = args.delta if args.delta is not None else state.config.threshold_delta
    if not 0.0 < delta <= 1.0:
        raise ValidationError("delta must lie in (0, 1]")
    vals = _score_all(state, net, ds.inputs)
    records = [{"type": "config", "data": args.data, "delta": delta,
                **_state_config_echo(state)}]
    records += [{"index": i, "score": float(v), "ood": int(v < delta)}
                for i, v in enumerate(vals)]
    _emit(_jsonl(records), args.out)


def cmd_certify(args):
    _apply_threads(args)
    state, net, ds = _load_state_net_data(args)
    if isinstance(state, det_mod.PerHeadSubspace):
        raise ValidationError("certificates need a single-subspace state, not per-head")
    if args.eps < 0:
        raise ValidationError("--eps must be >= 0")
    lambda_c = args.lambda_c if args.lambda_c is not None else float(state.eigenvalues[-1])
    vals = _score_all(state, net, ds.inputs)
    tie_flags = np.zeros(vals.size, dtype=bool)
    if state.grad_kind == "head" and state.aggregation == "max":
        logits, _ = forward_batch(net, ds.inputs)
        top2 = np.partition(logits, logits.shape[1] - 2, axis=1)[:, -2:]
        tie_flags = (top2[:, 1] - top2[:, 0]) < 1e-9
    records = [{"type": "config", "data": args.data, "eps": args.eps,
                "lambda_c": lambda_c, **_state_config_echo(state)}]
    for i, v in enumerate(vals):
        s_sq = min(float(v) ** 2, 1.0)
        exact_margin = 1.0 - s_sq
        rob = certify_robust(s_sq, lambda_c, args.eps)
        records.append({
            "index": i,
            "score": float(v),
            "s_sq": s_sq,
            "exact_holds": bool(exact_margin > STRICTNESS_TOL),
            "exact_margin": exact_margin,
            "robust_holds": rob.holds,
            "robust_margin": rob.margin,
            "robust_threshold": rob.threshold_used,
            "vacuous": rob.vacuous,
            "tie_flagged": bool(tie_flags[i]),
        })
    _emit(_jsonl(records), args.out)


def cmd_ntk_inspect(args):
    _apply_threads(args)
    net = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if not ds.labeled:
        raise ValidationError("ntk-inspect needs a labeled dataset")
    if args.max_samples is not None:
        # keep classes balanced: take an equal prefix from every class
        per_class = args.max_samples // ds.num_classes
        if per_class < 1:
            raise ValidationError("--max-samples must allow at least one sample per class")
        keep = np.concatenate([np.flatnonzero(ds.labels == c)[:per_class]
                               for c in range(ds.num_classes)])
        if keep.size != per_class * ds.num_classes:
            raise ValidationError("--max-samples needs every class present in the data")
        ds = LabeledDataset(ds.inputs[keep], ds.labels[keep], ds.num_classes, ds.name)
    groups = tuple(args.subset.split(",")) if args.subset else None
    subset = net.subset(groups) if groups else net.subset((net.groups[-1],))
    agg = config_mod.SCHEMA["detector.aggregation"](args.agg) if args.agg else "max"
    kernel = ntk_mod.empirical_ntk(net, ds, head=agg, subset=subset,
                                   per_head_sum=args.per_head_sum)
    det_cfg = det_mod.DetectorConfig(aggregation="max" if agg is None else agg,
                                     subset_groups=subset.groups)
    cmm = det_mod.fit_class_means(net, ds, det_cfg)
    counts = np.bincount(ds.labels, minlength=ds.num_classes)
    report = ntk_mod.block_structure(kernel, cmm.means, int(counts[0]))
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    heat_lines = [",".join(repr(float(v)) for v in row) for row in report.heatmap]
    (prefix.parent / (prefix.name + ".heatmap.csv")).write_text(
        "\n".join(heat_lines) + "\n", encoding="utf-8")
    payload = {
        "n": kernel.n,
        "samples_per_class": report.samples_per_class,
        "per_head_sum": args.per_head_sum,
        "aggregation": agg,
        "subset": list(subset.groups),
        "alignment_ratio": report.alignment_ratio,
        "alignment_ratio_with_diagonal": report.alignment_ratio_with_diagonal,
        "leading_norm": report.leading_norm,
        "residual_norm": report.residual_norm,
        "gram_means": report.gram_means.tolist(),
    }
    (prefix.parent / (prefix.name + ".report.json")).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    sys.stdout.write(json.dumps({"alignment_ratio": report.alignment_ratio,
                                 "residual_norm": report.residual_norm},
                                sort_keys=True) + "\n")


def cmd_bench(args):
    _apply_threads(args)
    overrides = {}
    if args.detectors:
        overrides["eval.detectors"] = args.detectors.split(",")
    if args.tpr is not None:
        overrides["eval.tpr"] = args.tpr
    cfg = _effective_config(args, overrides)
    net = load_checkpoint(args.checkpoint)
    train = load_dataset(args.train)
    id_test = load_dataset(args.id)
    ood_sets = [load_dataset(p) for p in args.ood]
    det_cfg = config_mod.config_to_detector(cfg)
    detectors = []
    failed = []
    for name in cfg["eval.detectors"]:
        try:
            detectors.append(bench_mod.build_detector(name, net, train, det_cfg,
                                                      seed=cfg["seed"]))
        except SpodError as exc:
            failed.append((name, f"{type(exc).__name__}: {exc}"))
    report = bench_mod.run_benchmark(net, detectors, id_test, ood_sets,
                                     config=cfg, seed=cfg["seed"], tpr=cfg["eval.tpr"])
    for name, err in failed:
        for j, ood in enumerate(ood_sets):
            report.rows.append(bench_mod.EvalRow(
                detector=name, dataset=ood.name or f"ood{j}", error=err))
    throughput = {}
    for row in report.rows:
        if row.runtime_per_sample:
            throughput[row.detector] = 1.0 / row.runtime_per_sample
    print(json.dumps({"throughput_samples_per_sec": throughput}, sort_keys=True),
          file=sys.stderr)
    if args.out_json:
        Path(args.out_json).write_text(report.to_json(timing=args.timing),
                                       encoding="utf-8")
    if args.out_csv:
        Path(args.out_csv).write_text(report.to_csv(timing=args.timing),
                                      encoding="utf-8")
    if not args.out_json and not args.out_csv:
        sys.stdout.write(report.to_json(timing=args.timing) + "\n")


def _parse_sweep_values(param: str, raw: str) -> list:
    chunks = raw.split(";") if ";" in raw else raw.split(",")
    values = []
    for chunk in chunks:
        chunk = chunk.strip()
        if not chunk:
            continue
        if param in ("epsilon", "dice_p", "label_noise"):
            values.append(config_mod._parse_float(chunk))
        elif param == "seed":
            values.append(config_mod._parse_int(chunk))
        else:
            values.append([g.strip() for g in chunk.split(",") if g.strip()])
    if not values:
        raise ValidationError("--values is empty")
    return values


def cmd_sweep(args):
    _apply_threads(args)
    cfg = _effective_config(args)
    values = _parse_sweep_values(args.param, args.values)
    cache = {}

    def pipeline(param, value):
        return bench_mod.synthetic_pipeline(cfg, param, value, net_cache=cache)

    report = bench_mod.sweep(args.param, values, pipeline)
    if args.out_json:
        Path(args.out_json).write_text(report.to_json(timing=args.timing),
                                       encoding="utf-8")
    if args.out_csv:
        Path(args.out_csv).write_text(report.to_csv(timing=args.timing),
                                      encoding="utf-8")
    if not args.out_json and not args.out_csv:
        sys.stdout.write(report.to_json(timing=args.timing) + "\n")


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="spod",
                     description="Spectral OOD detection from network gradients")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic datasets")
    _add_common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--input-dim", type=int)
    p.add_argument("--samples-per-class", type=int)
    p.add_argument("--mean-scale", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--ood-mode", choices=("shifted_means", "uniform_box",
                                          "orthogonal_subspace"))
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train an MLP on a labeled dataset")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden", help="comma-separated hidden widths")
    p.add_argument("--activation", choices=("relu", "tanh"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit", help="fit a detector state")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=("means", "batch", "gradorth", "vec"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--dice-p", type=float)
    p.add_argument("--subset", help="comma-separated parameter group names")
    p.add_argument("--agg", help="gradient head: max, sum, a class index, or none")
    p.add_argument("--delta", type=float)
    p.set_defaults(func=cmd_fit)

    for name, fn in (("score", cmd_score), ("detect", cmd_detect)):
        p = sub.add_parser(name, help=f"{name} a dataset with a fitted state")
        _add_common(p, config=False)
        p.add_argument("--state", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out")
        if name == "detect":
            p.add_argument("--delta", type=float)
        p.set_defaults(func=fn)

    p = sub.add_parser("certify", help="emit per-sample certificates")
    _add_common(p, config=False)
    p.add_argument("--state", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eps", type=float, required=True,
                   help="spectral perturbation bound for the robust certificate")
    p.add_argument("--lambda-c", type=float,
                   help="smallest retained eigenvalue (default: from the state)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("ntk-inspect", help="kernel block structure and heatmap")
    _add_common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--agg")
    p.add_argument("--subset")
    p.add_argument("--per-head-sum", action="store_true")
    p.add_argument("--max-samples", type=int)
    p.set_defaults(func=cmd_ntk_inspect)

    p = sub.add_parser("bench", help="run detectors against OOD sets")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--ood", action="append", required=True)
    p.add_argument("--detectors", help="comma-separated detector names")
    p.add_argument("--tpr", type=float)
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.add_argument("--timing", action="store_true",
                   help="write measured runtimes into the report")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="sweep one knob through the synthetic pipeline")
    _add_common(p)
    p.add_argument("--param", required=True, choices=bench_mod.SWEEP_PARAMS)
    p.add_argument("--values", required=True,
                   help="';'-separated values (',' also works for scalar params)")
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SpodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
