"""Cohort persistence and subject-grouped splits.

On-disk layout:

    <root>/manifest.json
    <root>/embeddings.txt
    <root>/<subject>/<session>/audio.tnsr(+.json)
    <root>/<subject>/<session>/video.tnsr(+.json)
    <root>/<subject>/<session>/text.txt

The manifest carries subjects, per-session metadata, labels, the split
assignment, and the generating spec, so every later stage can run from the
directory alone.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .features import (
    ChannelSeries,
    load_channel_series,
    save_channel_series,
    save_embedding_table,
)
from .synth import CLASS_NAMES, CohortSpec, generate_cohort

SPLIT_NAMES = ("train", "val", "test")


def split_subjects(profiles, ratios=(0.70, 0.15, 0.15), seed: int = 0) -> dict:
    """Stratified subject-level split; all of a subject's sessions stay together.

    Per class, the validation and test splits each take
    ``floor(ratio·n + 0.5)`` subjects (at least 1); the remainder — i.e. any
    rounding slack — goes to train. Requires at least three subjects per
    class so every split sees every class.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three numbers summing to 1, got {ratios}")
    by_class = {}
    for p in profiles:
        by_class.setdefault(p.label, []).append(p.subject_id)
    for label, ids in sorted(by_class.items()):
        if len(ids) < 3:
            raise ValueError(
                f"class {CLASS_NAMES[label]} has {len(ids)} subjects; "
                "need at least 3 to populate train/val/test"
            )
    rng = np.random.default_rng(seed)
    out = {name: [] for name in SPLIT_NAMES}
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        rng.shuffle(ids)
        n = len(ids)
        n_val = max(1, int(np.floor(ratios[1] * n + 0.5)))
        n_test = max(1, int(np.floor(ratios[2] * n + 0.5)))
        if n_val + n_test >= n:
            raise ValueError(
                f"class {CLASS_NAMES[label]}: {n} subjects leave no training "
                f"subject after {n_val} val + {n_test} test"
            )
        out["val"].extend(ids[:n_val])
        out["test"].extend(ids[n_val : n_val + n_test])
        out["train"].extend(ids[n_val + n_test :])
    return {name: sorted(ids) for name, ids in out.items()}


def write_dataset(root, spec: CohortSpec, split_seed: int = None) -> dict:
    """Generate a cohort from ``spec`` and write everything under ``root``.

    Returns the manifest dict. ``split_seed`` defaults to the cohort seed.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    profiles, sessions, table = generate_cohort(spec)
    splits = split_subjects(
        profiles, seed=spec.seed if split_seed is None else split_seed
    )

    by_subject = {}
    for rec in sessions:
        by_subject.setdefault(rec.subject_id, []).append(rec)

    subjects_meta = []
    for p in profiles:
        sess_meta = []
        for rec in by_subject[p.subject_id]:
            sess_dir = root / rec.subject_id / rec.session_id
            sess_dir.mkdir(parents=True, exist_ok=True)
            audio = rec.audio
            video = rec.video
            # raw series are stored at half precision to keep cohorts small
            save_channel_series(
                sess_dir / "audio.tnsr", _as_f32(audio)
            )
            save_channel_series(
                sess_dir / "video.tnsr", _as_f32(video)
            )
            (sess_dir / "text.txt").write_text(rec.text + "\n", encoding="utf-8")
            sess_meta.append(
                {
                    "session_id": rec.session_id,
                    "duration_s": rec.duration_s,
                    "audio_frames": audio.n_frames,
                    "video_frames": video.n_frames,
                }
            )
        subjects_meta.append(
            {
                "subject_id": p.subject_id,
                "label": int(p.label),
                "class": CLASS_NAMES[p.label],
                "diagnosed": bool(p.diagnosed),
                "bprs": p.bprs.tolist(),
                "sessions": sess_meta,
            }
        )

    save_embedding_table(root / "embeddings.txt", table)
    manifest = {
        "classes": list(CLASS_NAMES),
        "seed": spec.seed,
        "spec": spec.to_dict(),
        "splits": splits,
        "subjects": subjects_meta,
        "n_sessions": len(sessions),
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def _as_f32(series):
    return ChannelSeries(
        series.modality,
        series.channel_names,
        series.frame_rate,
        series.values.astype(np.float32),
        valid_frames=series.valid_frames,
    )


def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def sessions_in_split(manifest: dict, split: str) -> list:
    """(subject_id, session_id, label) triples for one split, sorted."""
    if split not in SPLIT_NAMES:
        raise ValueError(f"split must be one of {SPLIT_NAMES}, got {split!r}")
    members = set(manifest["splits"][split])
    out = []
    for subj in manifest["subjects"]:
        if subj["subject_id"] in members:
            for sess in subj["sessions"]:
                out.append((subj["subject_id"], sess["session_id"], subj["label"]))
    return sorted(out)


def session_dir(root, subject_id: str, session_id: str) -> Path:
    return Path(root) / subject_id / session_id


def read_session_series(root, subject_id: str, session_id: str):
    d = session_dir(root, subject_id, session_id)
    audio = load_channel_series(d / "audio.tnsr")
    video = load_channel_series(d / "video.tnsr")
    if not (d / "text.txt").exists():
        raise FileNotFoundError(f"missing transcript for {session_id}")
    text = (d / "text.txt").read_text(encoding="utf-8")
    return audio, video, text
