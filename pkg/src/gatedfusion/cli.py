"""Command-line pipeline: synth → features → train → eval → ablate.

Every command echoes its fully resolved configuration into the output
directory, derives all randomness from explicit seeds, and exits 0 only
when the requested artifact was completely produced.
"""

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, from_payload, load_config, write_resolved
from .dataset import load_manifest, read_session_series, session_dir, sessions_in_split, write_dataset
from .features import (
    compute_fvtc,
    embed_text,
    load_embedding_table,
    load_text_grid,
    save_text_grid,
    segment_series,
    tokenize,
)
from .metrics import EvalReport, evaluate, parse_confusion, precision_recall_f1, weighted_f1
from .models import load_params, save_params
from .tnsr import read_tnsr, write_tnsr
from .training import (
    SessionInputs,
    attach_unimodal_predictions,
    grid_search,
    predict_split,
    run_grid_cell,
    save_grid_results,
    train,
)

TRAINABLE_KINDS = ("audio", "video", "text", "multimodal")


class CliError(Exception):
    """A user-facing failure: message to stderr, nonzero exit, no traceback."""


# ---------------------------------------------------------------------------
# shared plumbing


def _sha256_of(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


def split_fingerprint(manifest: dict) -> str:
    """Short stable hash of the subject split — equal hashes, equal splits."""
    return _sha256_of(manifest["splits"])[:12]


def new_run_dir(out_root, prefix: str) -> Path:
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    candidate = out_root / f"{prefix}-{stamp}"
    n = 1
    while candidate.exists():
        candidate = out_root / f"{prefix}-{stamp}-{n}"
        n += 1
    candidate.mkdir()
    return candidate


def features_dir(root, subject_id: str, session_id: str) -> Path:
    return session_dir(root, subject_id, session_id) / "features"


def load_split_inputs(root, manifest: dict, split: str) -> list:
    """SessionInputs for one split, read from the per-session feature files."""
    out = []
    for subject_id, session_id, label in sessions_in_split(manifest, split):
        fdir = features_dir(root, subject_id, session_id)
        if not (fdir / "audio.tnsr").exists():
            raise CliError(
                f"no features for {subject_id}/{session_id}; "
                f"run `gatedfusion features {root}` first"
            )
        out.append(
            SessionInputs(
                subject_id,
                session_id,
                label,
                audio=read_tnsr(fdir / "audio.tnsr"),
                video=read_tnsr(fdir / "video.tnsr"),
                text=load_text_grid(fdir / "text.tnsr"),
            )
        )
    return out


def find_checkpoint(kind: str, out_root, config: RunConfig) -> Path:
    """Explicit config path if set, else the newest `<kind>-*` run dir."""
    explicit = config.checkpoints.get(f"{kind}_checkpoint")
    if explicit:
        path = Path(explicit)
        if not (path / "manifest.json").exists():
            raise CliError(f"configured {kind}_checkpoint {path} holds no checkpoint")
        return path
    out_root = Path(out_root)
    candidates = sorted(
        d for d in out_root.glob(f"{kind}-*")
        if (d / "checkpoint" / "manifest.json").exists()
    )
    if not candidates:
        raise CliError(
            f"no trained '{kind}' model found under {out_root}; "
            f"run `gatedfusion train {kind} ...` first or set "
            f"train.{kind}_checkpoint in the config"
        )
    return candidates[-1] / "checkpoint"


def _load_unimodal(kinds, out_root, config: RunConfig) -> dict:
    loaded = {}
    for kind in kinds:
        path = find_checkpoint(kind, out_root, config)
        loaded[kind] = (load_params(path), path)
    return loaded


def render_report(report: EvalReport, split: str) -> str:
    conf = json.dumps(report.confusion, separators=(",", ":"))
    lines = [
        f"sessions evaluated: {report.n_sessions}   split: {split}",
        f"confusion matrix (rows = true): {conf}",
        "",
        f"{'class':<10}{'precision':>10}{'recall':>10}{'F1':>10}{'support':>10}",
    ]
    for row in report.per_class:
        lines.append(
            f"{row['class']:<10}{row['precision']:>10.4f}{row['recall']:>10.4f}"
            f"{row['f1']:>10.4f}{row['support']:>10d}"
        )
    lines += [
        "",
        f"Accuracy: {report.accuracy:.4f}",
        f"Weighted F1: {report.weighted_f1:.4f}"
        f"  (95% bootstrap CI [{report.f1_ci_low:.4f}, {report.f1_ci_high:.4f}])",
    ]
    if report.auc_weighted is not None:
        lines.append(f"AUC-ROC (weighted one-vs-rest): {report.auc_weighted:.4f}")
    return "\n".join(lines) + "\n"


def _evaluate_predictions(y_true, probs, manifest, eval_cfg) -> EvalReport:
    return evaluate(
        y_true,
        probs.argmax(axis=1),
        scores=probs,
        n_classes=len(manifest["classes"]),
        class_names=manifest["classes"],
        bootstrap_seed=eval_cfg.bootstrap_seed,
        n_resamples=eval_cfg.n_resamples,
    )


# ---------------------------------------------------------------------------
# synth


def _distribute_subjects(total: int):
    base, rem = divmod(total, 3)
    subjects = tuple(base + (1 if i < rem else 0) for i in range(3))
    return subjects, tuple(2 * s for s in subjects)


def cmd_synth(args) -> int:
    config = load_config(args.config)
    data = config.data
    if args.seed is not None:
        data = replace(data, seed=args.seed)
    if args.subjects is not None:
        subjects, sessions = _distribute_subjects(args.subjects)
        data = replace(data, subjects_per_class=subjects, sessions_per_class=sessions)
    config = replace(config, data=data)
    out = Path(args.out)
    manifest = write_dataset(out, data)
    write_resolved(out, config)
    print(f"wrote {manifest['n_sessions']} sessions for "
          f"{len(manifest['subjects'])} subjects to {out}")
    return 0


# ---------------------------------------------------------------------------
# features


def _segment_stack(series, window_s: float, overlap_s: float, max_delay: int,
                   per_lag_means: bool):
    segments = segment_series(series, window_s, overlap_s)
    fvtcs = [compute_fvtc(seg, max_delay, per_lag_means=per_lag_means) for seg in segments]
    stack = np.stack([f.values for f in fvtcs])
    degenerate = sorted({c for f in fvtcs for c in f.degenerate_channels})
    meta = {
        "n_segments": len(fvtcs),
        "window_s": window_s,
        "overlap_s": overlap_s,
        "max_delay": max_delay,
        "degenerate_channels": degenerate,
        "range_violations": int(sum(f.range_violations for f in fvtcs)),
    }
    return stack, meta


def _corpus_text_extents(root, manifest) -> tuple:
    s_max = w_max = 1
    for split in ("train", "val", "test"):
        for subject_id, session_id, _ in sessions_in_split(manifest, split):
            text = (session_dir(root, subject_id, session_id) / "text.txt").read_text(
                encoding="utf-8"
            )
            sentences = tokenize(text)
            if sentences:
                s_max = max(s_max, len(sentences))
                w_max = max(w_max, max(len(s) for s in sentences))
    return s_max, w_max


def cmd_features(args) -> int:
    config = load_config(args.config)
    root = Path(args.data)
    manifest = load_manifest(root)
    feat = config.features
    fingerprint = _sha256_of(
        {"features": config.to_dict()["features"], "manifest": manifest}
    )
    state_path = root / "features_state.json"
    if state_path.exists() and not args.force:
        state = json.loads(state_path.read_text(encoding="utf-8"))
        if state.get("fingerprint") == fingerprint:
            print(f"features up to date under {root} (use --force to recompute)")
            return 0

    dim = manifest["spec"]["embedding_dim"]
    table = load_embedding_table(root / "embeddings.txt", dim=dim)
    s_max, w_max = _corpus_text_extents(root, manifest)
    n_written = 0
    for split in ("train", "val", "test"):
        for subject_id, session_id, _ in sessions_in_split(manifest, split):
            audio, video, text = read_session_series(root, subject_id, session_id)
            fdir = features_dir(root, subject_id, session_id)
            fdir.mkdir(exist_ok=True)

            audio_stack, audio_meta = _segment_stack(
                audio, feat.audio_window_s, feat.audio_overlap_s,
                feat.audio_max_delay, feat.per_lag_means,
            )
            write_tnsr(fdir / "audio.tnsr", audio_stack)
            video_stack, video_meta = _segment_stack(
                video, feat.video_window_s, feat.video_overlap_s,
                feat.video_max_delay, feat.per_lag_means,
            )
            write_tnsr(fdir / "video.tnsr", video_stack)
            grid = embed_text(tokenize(text), table, s_max, w_max, dim=dim)
            save_text_grid(fdir / "text.tnsr", grid, s_max, w_max)
            (fdir / "meta.json").write_text(
                json.dumps({"audio": audio_meta, "video": video_meta},
                           indent=1, sort_keys=True) + "\n",
                encoding="utf-8",
            )
            n_written += 1

    state_path.write_text(
        json.dumps(
            {"fingerprint": fingerprint, "s_max": s_max, "w_max": w_max,
             "n_sessions": n_written},
            indent=1, sort_keys=True,
        ) + "\n",
        encoding="utf-8",
    )
    print(f"extracted features for {n_written} sessions under {root}")
    return 0


# ---------------------------------------------------------------------------
# train


def _apply_train_overrides(config: RunConfig, args) -> RunConfig:
    train_cfg = config.train
    if getattr(args, "seed", None) is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        train_cfg = replace(train_cfg, max_epochs=args.epochs)
    model_cfg = config.model
    if getattr(args, "variant", None) is not None:
        model_cfg = replace(model_cfg, mgmu_variant=args.variant)
    return replace(config, train=train_cfg, model=model_cfg)


def cmd_train(args) -> int:
    config = _apply_train_overrides(load_config(args.config), args)
    root = Path(args.data)
    manifest = load_manifest(root)
    splits = {
        "train": load_split_inputs(root, manifest, "train"),
        "val": load_split_inputs(root, manifest, "val"),
    }
    unimodal = None
    unimodal_paths = {}
    if args.kind == "multimodal":
        loaded = _load_unimodal(("audio", "video"), args.out, config)
        unimodal = {k: params for k, (params, _) in loaded.items()}
        unimodal_paths = {k: str(path) for k, (_, path) in loaded.items()}

    params, log = train(args.kind, splits, config.model, config.train, unimodal=unimodal)

    run_dir = new_run_dir(args.out, args.kind)
    write_resolved(run_dir, config)
    log.save_jsonl(run_dir / "train_log.jsonl")
    save_params(run_dir / "checkpoint", params)
    (run_dir / "run.json").write_text(
        json.dumps(
            {
                "kind": args.kind,
                "dataset": str(root.resolve()),
                "split_hash": split_fingerprint(manifest),
                "unimodal": unimodal_paths,
            },
            indent=1, sort_keys=True,
        ) + "\n",
        encoding="utf-8",
    )
    print(f"run directory: {run_dir}")
    print(f"best validation loss: {log.min_val_loss():.6f} "
          f"(epoch {log.best_epoch()})")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    run_meta_path = run_dir / "run.json"
    if not run_meta_path.exists():
        raise CliError(f"{run_dir} is not a training run directory (no run.json)")
    run_meta = json.loads(run_meta_path.read_text(encoding="utf-8"))
    config = from_payload(
        json.loads((run_dir / "resolved_config.json").read_text(encoding="utf-8"))
    )
    if args.seed is not None:
        config = replace(config, eval=replace(config.eval, bootstrap_seed=args.seed))

    root = Path(args.data)
    manifest = load_manifest(root)
    examples = load_split_inputs(root, manifest, args.split)
    params = load_params(run_dir / "checkpoint")
    unimodal = {
        kind: load_params(path) for kind, path in run_meta.get("unimodal", {}).items()
    }
    y_true, probs = predict_split(
        run_meta["kind"], examples, params, config.model, unimodal or None
    )
    report = _evaluate_predictions(y_true, probs, manifest, config.eval)

    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"report_{args.split}.json").write_text(report.to_json(), encoding="utf-8")
    text = render_report(report, args.split)
    (out_dir / f"report_{args.split}.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# ablation


ABLATION_ROWS = (
    ("L-F", "without mGMU"),
    ("L-F", "with mGMU"),
    ("I-F", "without mGMU"),
    ("I-F", "with mGMU"),
)


def _ablation_table(rows) -> str:
    header = f"{'fusion':<8}{'gating':<16}{'weighted F1':>12}{'AUC-ROC':>10}   split hash"
    lines = [header]
    for row in rows:
        lines.append(
            f"{row['fusion']:<8}{row['gating']:<16}"
            f"{row['weighted_f1']:>12.4f}{row['auc_weighted']:>10.4f}   {row['split_hash']}"
        )
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    config = _apply_train_overrides(load_config(args.config), args)
    root = Path(args.data)
    manifest = load_manifest(root)
    eval_split = config.ablation.split
    splits = {
        "train": load_split_inputs(root, manifest, "train"),
        "val": load_split_inputs(root, manifest, "val"),
    }
    held_out = load_split_inputs(root, manifest, eval_split)
    loaded = _load_unimodal(("audio", "video", "text"), args.out, config)
    unimodal = {k: params for k, (params, _) in loaded.items()}
    fingerprint = split_fingerprint(manifest)

    run_dir = new_run_dir(args.out, "ablate")
    write_resolved(run_dir, config)
    rows = []

    def add_row(fusion, gating, y_true, probs):
        report = _evaluate_predictions(y_true, probs, manifest, config.eval)
        rows.append(
            {
                "fusion": fusion,
                "gating": gating,
                "weighted_f1": report.weighted_f1,
                "auc_weighted": report.auc_weighted,
                "split_hash": fingerprint,
            }
        )
        return report

    # late fusion scores the unimodal probability vectors, gated or averaged
    attach_unimodal_predictions(
        splits["train"] + splits["val"] + held_out, unimodal, config.model
    )
    add_row("L-F", "without mGMU",
            *predict_split("late_mean", held_out, None, config.model))

    gate_params, gate_log = train("late_gate", splits, config.model, config.train)
    save_params(run_dir / "late_gate" / "checkpoint", gate_params)
    gate_log.save_jsonl(run_dir / "late_gate" / "train_log.jsonl")
    add_row("L-F", "with mGMU",
            *predict_split("late_gate", held_out, gate_params, config.model))

    concat_model = replace(config.model, fusion="concat")
    concat_params, concat_log = train(
        "multimodal", splits, concat_model, config.train, unimodal=unimodal
    )
    save_params(run_dir / "if_concat" / "checkpoint", concat_params)
    concat_log.save_jsonl(run_dir / "if_concat" / "train_log.jsonl")
    add_row("I-F", "without mGMU",
            *predict_split("multimodal", held_out, concat_params, concat_model, unimodal))

    mgmu_params, mgmu_log = train(
        "multimodal", splits, config.model, config.train, unimodal=unimodal
    )
    save_params(run_dir / "if_mgmu" / "checkpoint", mgmu_params)
    mgmu_log.save_jsonl(run_dir / "if_mgmu" / "train_log.jsonl")
    add_row("I-F", "with mGMU",
            *predict_split("multimodal", held_out, mgmu_params, config.model, unimodal))

    with open(run_dir / "ablation.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=("fusion", "gating", "weighted_f1", "auc_weighted", "split_hash")
        )
        writer.writeheader()
        writer.writerows(rows)
    table = _ablation_table(rows)
    (run_dir / "ablation.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    print(f"run directory: {run_dir}")
    return 0


# ---------------------------------------------------------------------------
# grid search


def cmd_grid(args) -> int:
    config = _apply_train_overrides(load_config(args.config), args)
    root = Path(args.data)
    manifest = load_manifest(root)
    base_splits = {
        "train": load_split_inputs(root, manifest, "train"),
        "val": load_split_inputs(root, manifest, "val"),
    }
    unimodal = None
    if args.kind == "multimodal":
        loaded = _load_unimodal(("audio", "video"), args.out, config)
        unimodal = {k: params for k, (params, _) in loaded.items()}

    spec = config.grid
    if args.kind not in ("audio", "video") and spec.segment_lengths_s:
        raise CliError("segment_lengths_s only applies to audio/video grids")

    raw_cache = {}
    stack_cache = {}

    def splits_for(cell):
        length = cell["segment_length_s"]
        if length is None:
            return base_splits
        if length not in stack_cache:
            feat = config.features
            overlap = getattr(feat, f"{args.kind}_overlap_s")
            max_delay = getattr(feat, f"{args.kind}_max_delay")
            rebuilt = {}
            for name, examples in base_splits.items():
                rebuilt[name] = []
                for ex in examples:
                    key = (ex.subject_id, ex.session_id)
                    if key not in raw_cache:
                        audio, video, _ = read_session_series(root, *key)
                        raw_cache[key] = {"audio": audio, "video": video}
                    series = raw_cache[key][args.kind]
                    stack, _ = _segment_stack(
                        series, length, overlap, max_delay, feat.per_lag_means
                    )
                    rebuilt[name].append(replace_stack(ex, args.kind, stack))
            stack_cache[length] = rebuilt
        return stack_cache[length]

    def evaluate_cell(cell):
        return run_grid_cell(
            cell, args.kind, splits_for(cell), config.model, config.train, unimodal
        )

    rows = grid_search(spec, evaluate_cell)
    run_dir = new_run_dir(args.out, f"grid-{args.kind}")
    write_resolved(run_dir, config)
    save_grid_results(run_dir / "grid.csv", rows)
    best = rows[0]
    print(f"{len(rows)} configurations ranked; results in {run_dir / 'grid.csv'}")
    print(
        f"best: lr={best['lr']} lr_patience={best['lr_patience']} "
        f"early_stop={best['early_stop_patience']} factor={best['lr_factor']} "
        f"segment={best['segment_length_s']} "
        f"val weighted F1={best['val_weighted_f1']:.4f}"
    )
    return 0


def replace_stack(ex: SessionInputs, kind: str, stack):
    clone = SessionInputs(
        ex.subject_id, ex.session_id, ex.label,
        audio=ex.audio, video=ex.video, text=ex.text,
    )
    setattr(clone, kind, stack)
    return clone


# ---------------------------------------------------------------------------
# metrics


def cmd_metrics(args) -> int:
    conf = parse_confusion(args.confusion)
    precision, recall, f1, support = precision_recall_f1(conf)
    print(f"{'class':<8}{'precision':>10}{'recall':>10}{'F1':>10}{'support':>10}")
    for c in range(conf.shape[0]):
        print(
            f"{c:<8}{precision[c]:>10.4f}{recall[c]:>10.4f}"
            f"{f1[c]:>10.4f}{int(support[c]):>10d}"
        )
    print(f"Weighted F1: {weighted_f1(conf):.4f}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatedfusion",
        description="Gated multimodal fusion pipeline on synthetic session cohorts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort on disk")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--subjects", type=int, default=None,
                   help="total subject count, split as evenly as possible over classes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="extract correlation and text features")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--config", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train one model kind")
    p.add_argument("kind", choices=TRAINABLE_KINDS)
    p.add_argument("data", help="dataset directory")
    p.add_argument("--out", default="runs", help="runs root directory")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--variant", choices=("as_written", "complementary"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a training run on one split")
    p.add_argument("run", help="run directory produced by `train`")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", default=None, help="report directory (defaults to the run dir)")
    p.add_argument("--seed", type=int, default=None,
                   help="bootstrap seed override for the F1 confidence interval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="four-way fusion ablation on one cohort")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--out", default="runs")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grid", help="hyperparameter grid search")
    p.add_argument("kind", choices=TRAINABLE_KINDS)
    p.add_argument("data", help="dataset directory")
    p.add_argument("--out", default="runs")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("metrics", help="recompute metrics from a confusion matrix")
    p.add_argument("confusion", help='bracket text, e.g. "[[6,2,0],[2,5,2],[1,1,4]]"')
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 — diagnostics belong on stderr
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
