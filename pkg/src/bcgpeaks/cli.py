"""Command-line entry point: synth, train, eval, budget, report.

Exit codes: 0 success, 2 usage or input error, 3 runtime failure.
Settings resolve as flags > ``--config`` JSON file > built-in defaults;
the resolved values are echoed into ``run_manifest.json`` beside every
output.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import dataio
from .core import InvalidInputError, PeakAnnotation
from .diffcompute.budget import count_budget
from .metrics import EpochMetrics, SummaryRow, evaluate
from .models import BackboneConfig, DetrConfig, UNetConfig, build_model, config_to_dict
from .synthgen import SynthConfig, generate_dataset
from .tps import TpsConfig
from .trainer import (HISTORY_COLUMNS, ConfigError, DivergenceError, TrainConfig, prepare,
                      train_model)

DATA_ENV = "BCGPEAKS_DATA"
MANIFEST = "run_manifest.json"
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------------
def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} not found")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {p}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {p} must hold a JSON object")
    return cfg


def _resolve(defaults: dict, file_section: dict, flags: dict) -> dict:
    """flags > config file > defaults; unknown file keys are rejected."""
    unknown = set(file_section) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = dict(defaults)
    out.update(file_section)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _dataclass_defaults(cls) -> dict:
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


def _data_root(arg) -> Path:
    root = arg or os.environ.get(DATA_ENV)
    if not root:
        raise UsageError(f"no dataset given: pass --data or set {DATA_ENV}")
    root = Path(root)
    if not (root / dataio.MANIFEST_NAME).is_file():
        raise UsageError(f"no dataset at {root}")
    return root


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, np.generic):
        return v.item()
    return v


def write_run_manifest(out_dir: Path, command: str, config: dict, seed, inputs, outputs,
                       started: float):
    dataio.write_json(out_dir / MANIFEST, {
        "command": command,
        "config": _jsonable(config),
        "seed": seed,
        "tool_version": __version__,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "duration_s": round(time.time() - started, 3),
    })


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def write_csv(path: Path, header, rows):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    os.replace(tmp, path)


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_history(path: Path, history):
    write_csv(path, HISTORY_COLUMNS, [[r[c] for c in HISTORY_COLUMNS] for r in history.to_rows()])


# -- synth ---------------------------------------------------------------------------
def cmd_synth(args) -> list[Path]:
    started = time.time()
    file_cfg = _load_config(args.config).get("synth", {})
    flags = {
        "fs": args.fs, "epoch_seconds": args.seconds, "seed": args.seed,
        "mean_rr": args.mean_rr, "rr_jitter": args.rr_jitter,
        "j_amplitude": args.j_amplitude, "j_width": args.j_width, "j_freq": args.j_freq,
        "resp_amplitude": args.resp_amplitude, "resp_freq": args.resp_freq,
        "noise_std": args.noise_std, "artifact_rate": args.artifact_rate,
    }
    resolved = _resolve(_dataclass_defaults(SynthConfig), file_cfg, flags)
    n = args.n if args.n is not None else 10
    if n < 1:
        raise UsageError("--n must be >= 1")
    if args.subjects < 1:
        raise UsageError("--subjects must be >= 1")
    try:
        cfg = SynthConfig(**resolved)
    except (InvalidInputError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(args.out)
    data = []
    for s in range(args.subjects):
        sid = "synth" if args.subjects == 1 else f"sub-{s + 1:02d}"
        data += generate_dataset(cfg, n, base_seed=cfg.seed + s * n, subject_id=sid)
    dataio.save_dataset(data, out, cfg.epoch_seconds)
    write_run_manifest(out, "synth", {"synth": cfg.to_dict(), "n": n, "subjects": args.subjects},
                       cfg.seed, [], [out / dataio.MANIFEST_NAME], started)
    print(f"wrote {len(data)} epochs ({cfg.n_samples} samples at {cfg.fs:g} Hz) to {out}")
    return [out]


# -- train ---------------------------------------------------------------------------
def _model_config(kind: str, section: dict, seed: int, no_aux: bool):
    section = dict(section)
    section.setdefault("seed", seed)
    if no_aux and kind == "detr":
        section["aux_head"] = False
    try:
        return UNetConfig(**section) if kind == "unet" else DetrConfig(**section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"model config: {exc}") from exc


def _split(root: Path, fraction: float):
    manifest = dataio.load_manifest(root)
    try:
        split = dataio.chronological_split(manifest, fraction)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from exc
    return manifest, split


def cmd_train(args) -> list[Path]:
    started = time.time()
    file_all = _load_config(args.config)
    flags = {
        "model": args.model, "lr": args.lr, "batch_size": args.batch_size, "epochs": args.epochs,
        "lambda_cls": args.lambda_cls, "lambda_pt": args.lambda_pt, "lambda_aux": args.lambda_aux,
        "noobj_weight": args.noobj_weight, "seed": args.seed,
        "label_halfwidth": args.label_halfwidth, "clip_grad": args.clip_grad or None,
        "log_prob_cost": args.log_prob_cost or None,
    }
    resolved = _resolve(_dataclass_defaults(TrainConfig), file_all.get("train", {}), flags)
    try:
        tcfg = TrainConfig(**resolved)
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    fraction = args.train_fraction if args.train_fraction is not None else file_all.get(
        "train_fraction", 0.8)
    root = _data_root(args.data)
    manifest, split = _split(root, fraction)
    mcfg = _model_config(tcfg.model, file_all.get("model", {}), tcfg.seed, args.no_aux)
    if tcfg.model == "detr":
        if tcfg.lambda_aux > 0 and not mcfg.aux_head:
            raise UsageError("lambda_aux > 0 requires the auxiliary head (drop --no-aux or "
                             "set --lambda-aux 0)")
        try:
            mcfg.check_capacity(manifest.epoch_seconds, SynthConfig().rr_bounds[0])
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    groups = ({sid: [r for r in split.train if r.subject_id == sid] for sid in manifest.subjects}
              if args.per_subject else {None: split.train})
    test_groups = ({sid: [r for r in split.test if r.subject_id == sid] for sid in manifest.subjects}
                   if args.per_subject else {None: split.test})
    out = Path(args.out)
    if args.per_subject:
        out_dir = _out_dir(out)
    else:
        out_dir = _out_dir(out.parent if str(out.parent) else Path("."))
    outputs = []
    for sid, refs in groups.items():
        _, train_data = dataio.load_dataset(root, refs)
        test_refs = test_groups[sid]
        val = prepare(dataio.load_dataset(root, test_refs)[1], tcfg.label_halfwidth) if test_refs else None
        train = prepare(train_data, tcfg.label_halfwidth)
        model = build_model(mcfg)

        def progress(rec, sid=sid):
            if not args.quiet:
                tag = f"[{sid}] " if sid else ""
                extra = "" if rec.val_f1 is None else f"  val F1 {rec.val_f1:.4f}"
                print(f"{tag}epoch {rec.epoch:4d}  loss {rec.loss:.6f}{extra}", flush=True)

        model, history = train_model(model, train, tcfg, val, progress)
        ckpt = out_dir / f"{sid}.ckpt" if sid else out
        meta = {"data_fs": manifest.fs, "n_samples": train.n_samples, "train_fraction": fraction,
                "subject": sid}
        dataio.save_checkpoint(ckpt, model, tcfg.to_dict(), history.to_rows(), meta)
        hist_path = ckpt.with_suffix(".history.csv")
        write_history(hist_path, history)
        outputs += [ckpt, hist_path]
    config = {"train": tcfg.to_dict(), "model": config_to_dict(mcfg), "train_fraction": fraction,
              "per_subject": bool(args.per_subject)}
    write_run_manifest(out_dir, "train", config, tcfg.seed, [root], outputs, started)
    print(f"saved {', '.join(str(p) for p in outputs if p.suffix == '.ckpt')}")
    return outputs


# -- eval ----------------------------------------------------------------------------
def run_inference(model, x: np.ndarray, tps_cfg: TpsConfig, score_threshold: float,
                  threads: int = 1):
    """Detection sets for the rows of ``x``; chunks run on a thread pool and
    are reassembled in input order."""
    from .diffcompute.tensor import no_grad
    from .trainer import predict

    chunk = 16
    starts = list(range(0, x.shape[0], chunk))
    with no_grad():
        if threads <= 1 or len(starts) <= 1:
            parts = [predict(model, x[s : s + chunk], tps_cfg, score_threshold) for s in starts]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(
                    lambda s: predict(model, x[s : s + chunk], tps_cfg, score_threshold), starts))
    return [d for part in parts for d in part]


SUMMARY_COLUMNS = ("name", "F1", "P", "R", "MAE_ms", "MAE_samples", "RRerr_ms",
                   "RRerr_samples", "CardErr", "TP", "FP", "FN", "n_epochs")
EPOCH_COLUMNS = ("subject_id", "epoch_index", "TP", "FP", "FN", "F1", "MAE_ms", "RRerr_ms",
                 "CardErr", "n_pred", "n_ref")


def _summary_row(s: SummaryRow) -> list:
    return [s.name, s.f1, s.precision, s.recall, s.mae_ms, s.mae_samples, s.rr_err_ms,
            s.rr_err_samples, s.card_err, s.tp, s.fp, s.fn, s.n_epochs]


def _epoch_row(e: EpochMetrics) -> list:
    return [e.subject_id, e.epoch_index, e.tp, e.fp, e.fn, e.f1, e.mae_ms, e.rr_err_ms,
            e.card_err, e.tp + e.fp, e.tp + e.fn]


def _checkpoints(path: Path) -> dict:
    if path.is_dir():
        found = {p.stem: p for p in sorted(path.glob("*.ckpt"))}
        if not found:
            raise UsageError(f"no checkpoints in {path}")
        return found
    if not path.is_file():
        raise UsageError(f"checkpoint {path} not found")
    return {None: path}


def cmd_eval(args) -> list[Path]:
    started = time.time()
    file_all = _load_config(args.config).get("eval", {})
    defaults = {"delta_eval": 10, "tau": 0.5, "delta": None, "score_threshold": 0.5,
                "anchored": False, "train_fraction": 0.8}
    flags = {"delta_eval": args.delta_eval, "tau": args.tau, "delta": args.delta,
             "score_threshold": args.score_threshold, "anchored": args.anchored or None,
             "train_fraction": args.train_fraction}
    ecfg = _resolve(defaults, file_all, flags)
    root = _data_root(args.data)
    manifest, split = _split(root, ecfg["train_fraction"])
    if not split.test:
        raise UsageError("test split is empty")
    if ecfg["delta"] is None:
        ecfg["delta"] = TpsConfig.for_rate(manifest.fs).delta
    try:
        tps_cfg = TpsConfig(ecfg["tau"], int(ecfg["delta"]), bool(ecfg["anchored"]))
        if not 0.0 < ecfg["score_threshold"] < 1.0:
            raise InvalidInputError("score threshold must lie in (0, 1)")
    except (InvalidInputError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    ckpts = _checkpoints(Path(args.checkpoint))
    threads = args.threads if args.threads else (os.cpu_count() or 1)
    _, test_data = dataio.load_dataset(root, split.test)
    batch = prepare(test_data)
    preds = [None] * len(batch)
    kinds = set()
    for key, ckpt in ckpts.items():
        try:
            model, meta = dataio.load_checkpoint(ckpt)
        except dataio.CheckpointError as exc:
            raise UsageError(str(exc)) from exc
        kinds.add(model.kind)
        if meta.get("data_fs") is not None and float(meta["data_fs"]) != manifest.fs:
            raise UsageError(f"checkpoint trained at {meta['data_fs']} Hz, dataset is {manifest.fs} Hz")
        rows = [i for i, sid in enumerate(batch.subject_ids) if key is None or sid == key]
        if not rows:
            continue
        det = run_inference(model, batch.x[rows], tps_cfg, ecfg["score_threshold"], threads)
        for i, d in zip(rows, det):
            preds[i] = d
    missing = sorted({batch.subject_ids[i] for i, p in enumerate(preds) if p is None})
    if missing:
        raise UsageError(f"no checkpoint for subject(s) {missing}")
    anns = [PeakAnnotation(p, batch.n_samples) for p in batch.peaks]
    report = evaluate(preds, anns, int(ecfg["delta_eval"]), manifest.fs, batch.subject_ids,
                      batch.epoch_indices)
    out = _out_dir(args.out)
    summary = out / "summary.csv"
    write_csv(summary, SUMMARY_COLUMNS,
              [_summary_row(report.pooled)] + [_summary_row(s) for s in report.subjects.values()])
    epochs = out / "epochs.csv"
    write_csv(epochs, EPOCH_COLUMNS, [_epoch_row(e) for e in report.epochs])
    detections = out / "detections.csv"
    write_csv(detections, ("subject_id", "epoch_index", "sample", "score"),
              [[s, i, int(t), float(sc)] for s, i, d in zip(batch.subject_ids, batch.epoch_indices, preds)
               for t, sc in d.events])
    plot = out / "distributions.svg"
    plot_distributions(plot, {"|".join(sorted(kinds)): report.epochs})
    ecfg_out = dict(ecfg, checkpoint=str(args.checkpoint), threads=threads)
    write_run_manifest(out, "eval", ecfg_out, None, [root, args.checkpoint],
                       [summary, epochs, detections, plot], started)
    p = report.pooled
    print(f"F1 {p.f1:.4f}  P {p.precision:.4f}  R {p.recall:.4f}  MAE {_ms(p.mae_ms)}  "
          f"RRerr {_ms(p.rr_err_ms)}  CardErr {p.card_err:.3f}  ({p.n_epochs} epochs)")
    return [summary, epochs, detections, plot]


def _ms(v) -> str:
    return "n/a" if v is None else f"{v:.2f} ms"


# -- plots ---------------------------------------------------------------------------
PANELS = (("F1", "F1-score"), ("RRerr_ms", "RR interval error (ms)"), ("CardErr", "Cardinality error"))


def _metric_values(epochs, key):
    if isinstance(epochs[0], dict):
        vals = [r[key] for r in epochs]
        return [float(v) for v in vals if v not in ("", None)]
    attr = {"F1": "f1", "RRerr_ms": "rr_err_ms", "CardErr": "card_err"}[key]
    return [float(getattr(e, attr)) for e in epochs if getattr(e, attr) is not None]


def _svg_figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "bcgpeaks"
    return plt


def _violin(ax, groups: dict, key: str, title: str):
    labels = list(groups)
    data = [_metric_values(groups[k], key) or [math.nan] for k in labels]
    pos = np.arange(1, len(labels) + 1)
    finite = [d for d in data if not np.all(np.isnan(d))]
    if finite and all(np.ptp(d) > 0 for d in finite) and len(finite) == len(data):
        ax.violinplot(data, positions=pos, showmedians=True)
    else:
        ax.boxplot(data, positions=pos)
    ax.set_xticks(pos)
    ax.set_xticklabels(labels)
    ax.set_title(title)


def plot_distributions(path: Path, groups: dict):
    """Three panels (F1, RRerr, CardErr) of per-epoch value distributions."""
    plt = _svg_figure()
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.4))
    for ax, (key, title) in zip(axes, PANELS):
        _violin(ax, groups, key, title)
    fig.tight_layout()
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    os.replace(tmp, path)


def plot_panel(path: Path, groups: dict, key: str, title: str):
    plt = _svg_figure()
    fig, ax = plt.subplots(figsize=(4, 3.4))
    _violin(ax, groups, key, title)
    fig.tight_layout()
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    os.replace(tmp, path)


# -- budget --------------------------------------------------------------------------
def cmd_budget(args) -> list[Path]:
    file_all = _load_config(args.config)
    bb_section = file_all.get("backbone")
    n_samples = int(round(args.seconds * args.fs))
    try:
        bb = BackboneConfig(**bb_section) if bb_section else BackboneConfig()
        configs = {}
        kinds = ("unet", "detr") if args.model == "both" else (args.model,)
        for kind in kinds:
            section = dict(file_all.get(kind, {}))
            section["backbone"] = bb
            configs[kind] = UNetConfig(**section) if kind == "unet" else DetrConfig(**section)
        if args.model == "backbone":
            configs = {"backbone": bb}
    except (TypeError, ValueError) as exc:
        raise UsageError(f"model config: {exc}") from exc
    budgets = {k: count_budget(c, n_samples) for k, c in configs.items()}
    lines = [f"{'model':<10}{'params (M)':>22}{'FLOPs (G)':>22}    ({args.seconds:g} s at {args.fs:g} Hz)"]
    for k, b in budgets.items():
        lines.append(f"{k:<10}{b.params_total / 1e6:>11.4f} ({b.params_backbone / 1e6:.4f} BB)"
                     f"{b.flops_total / 1e9:>11.4f} ({b.flops_backbone / 1e9:.4f} BB)")
    if "unet" in budgets and "detr" in budgets:
        u, d = budgets["unet"], budgets["detr"]
        lines.append(f"detr vs unet: params {100 * (1 - d.params_total / u.params_total):.1f}% fewer, "
                     f"FLOPs {100 * (1 - d.flops_total / u.flops_total):.1f}% fewer")
    print("\n".join(lines))
    outputs = []
    if args.out:
        out = _out_dir(args.out)
        path = out / "budget.csv"
        write_csv(path, ("model", "params_total", "params_backbone", "params_head", "flops_total",
                         "flops_backbone", "flops_head"),
                  [[k, b.params_total, b.params_backbone, b.params_head, b.flops_total,
                    b.flops_backbone, b.flops_head] for k, b in budgets.items()])
        outputs.append(path)
    return outputs


# -- report --------------------------------------------------------------------------
def _load_eval(path: Path):
    s, e = path / "summary.csv", path / "epochs.csv"
    if not (s.is_file() and e.is_file()):
        raise UsageError(f"{path} is not an eval output directory")
    return read_csv(s), read_csv(e)


def cmd_report(args) -> list[Path]:
    started = time.time()
    dirs = [Path(d) for d in args.eval_dirs]
    if len(dirs) < 2:
        raise UsageError("report needs at least two eval directories")
    labels = args.labels or [d.name for d in dirs]
    if len(labels) != len(dirs):
        raise UsageError("--labels must give one label per eval directory")
    if len(set(labels)) != len(labels):
        labels = [f"{lab}#{i}" for i, lab in enumerate(labels)]
    evals = [_load_eval(d) for d in dirs]
    keys = [[(r["subject_id"], r["epoch_index"]) for r in ep] for _, ep in evals]
    if any(k != keys[0] for k in keys[1:]):
        raise UsageError("eval directories were scored on different test sets")
    out = _out_dir(args.out)
    metrics = ("F1", "P", "R", "MAE_ms", "RRerr_ms", "CardErr")

    def num(v):
        return None if v in ("", None) else float(v)

    ref_summary = {r["name"]: r for r in evals[0][0]}
    rows = []
    for lab, (summary, _) in zip(labels, evals):
        for r in summary:
            base = ref_summary.get(r["name"], {})
            vals = [num(r[m]) for m in metrics]
            deltas = [None if v is None or num(base.get(m)) is None else v - num(base[m])
                      for v, m in zip(vals, metrics)]
            rows.append([lab, r["name"], *vals, *deltas])
    comparison = out / "comparison.csv"
    write_csv(comparison, ("model", "name", *metrics, *(f"d_{m}" for m in metrics)), rows)

    subjects = sorted({r["name"] for r in evals[0][0] if r["name"] != "pooled"})
    subj_rows = []
    for sid in subjects:
        f1s = [num(next(r["F1"] for r in s if r["name"] == sid)) for s, _ in evals]
        subj_rows.append([sid, *f1s, *(f - f1s[0] for f in f1s[1:])])
    subject_f1 = out / "subject_f1.csv"
    write_csv(subject_f1, ("subject_id", *(f"F1_{lab}" for lab in labels),
                           *(f"dF1_{lab}" for lab in labels[1:])), subj_rows)

    groups = {lab: ep for lab, (_, ep) in zip(labels, evals)}
    plots = []
    for key, title in PANELS:
        name = {"F1": "f1", "RRerr_ms": "rr_err", "CardErr": "card_err"}[key]
        p = out / f"{name}.svg"
        plot_panel(p, groups, key, title)
        plots.append(p)
    outputs = [comparison, subject_f1, *plots]
    write_run_manifest(out, "report", {"eval_dirs": [str(d) for d in dirs], "labels": labels},
                       None, dirs, outputs, started)
    for lab, (summary, _) in zip(labels, evals):
        pooled = next(r for r in summary if r["name"] == "pooled")
        print(f"{lab:<16} F1 {float(pooled['F1']):.4f}  CardErr {float(pooled['CardErr']):.3f}")
    return outputs


# -- parser --------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bcgpeaks", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"bcgpeaks {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--n", type=int, help="epochs per subject (default 10)")
    s.add_argument("--subjects", type=int, default=1)
    s.add_argument("--seconds", type=float, help="epoch length in seconds (default 30)")
    s.add_argument("--fs", type=float, help="sampling rate in Hz (default 133)")
    s.add_argument("--seed", type=int)
    for name in ("mean-rr", "rr-jitter", "j-amplitude", "j-width", "j-freq", "resp-amplitude",
                 "resp-freq", "noise-std", "artifact-rate"):
        s.add_argument(f"--{name}", type=float)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model on the chronological train split")
    t.add_argument("--model", choices=("unet", "detr"))
    t.add_argument("--data", help=f"dataset directory (default ${DATA_ENV})")
    t.add_argument("--out", required=True, help="checkpoint path (a directory with --per-subject)")
    t.add_argument("--train-fraction", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--epochs", type=int, help="training epochs (default 200)")
    t.add_argument("--lambda-cls", type=float)
    t.add_argument("--lambda-pt", type=float)
    t.add_argument("--lambda-aux", type=float)
    t.add_argument("--noobj-weight", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--label-halfwidth", type=int)
    t.add_argument("--clip-grad", action="store_true", help="clip gradient norm at 10")
    t.add_argument("--log-prob-cost", action="store_true",
                   help="use -log p instead of -p as the matching class cost")
    t.add_argument("--no-aux", action="store_true", help="build DETR without the auxiliary head")
    t.add_argument("--per-subject", action="store_true", help="one model per subject")
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    e.add_argument("--checkpoint", required=True, help="checkpoint file or per-subject directory")
    e.add_argument("--data")
    e.add_argument("--out", required=True)
    e.add_argument("--delta-eval", type=int, help="match tolerance in samples (default 10)")
    e.add_argument("--tau", type=float, help="TPS threshold (default 0.5)")
    e.add_argument("--delta", type=int, help="TPS separation in samples (default round(0.33 fs))")
    e.add_argument("--anchored", action="store_true", help="anchored TPS clustering")
    e.add_argument("--score-threshold", type=float, help="DETR decode threshold (default 0.5)")
    e.add_argument("--train-fraction", type=float)
    e.add_argument("--threads", type=int, help="inference threads (default: logical cores)")
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("budget", help="parameter and FLOP budget")
    b.add_argument("--model", choices=("unet", "detr", "both", "backbone"), default="both")
    b.add_argument("--seconds", type=float, default=30.0)
    b.add_argument("--fs", type=float, default=133.0)
    b.add_argument("--out")
    b.add_argument("--config")
    b.set_defaults(func=cmd_budget)

    r = sub.add_parser("report", help="compare eval outputs")
    r.add_argument("eval_dirs", nargs="+")
    r.add_argument("--labels", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (UsageError, dataio.DatasetError, InvalidInputError) as exc:
        print(f"bcgpeaks {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"bcgpeaks {args.command}: training diverged at {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, ValueError, OSError, FloatingPointError) as exc:
        print(f"bcgpeaks {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
