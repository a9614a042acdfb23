"""Deterministic training loops: weighted loss, Adam, plateau LR, early stop.

The batch unit is one session — sessions vary in segment count and sentence
count, so every optimizer step consumes a whole session (or several, when
gradient accumulation is configured) rather than a fixed-size minibatch.
Audio and video classifiers train in two stages: a segment-level network
first, then a session-level head over the frozen segment embeddings.
"""

import csv
import itertools
import json
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from . import tensor as tc
from .metrics import confusion_matrix, weighted_f1
from .models import (
    ModelConfig,
    ModelParams,
    cnn_lstm_text_forward,
    init_late_fusion_model,
    init_multimodal_model,
    init_segment_model,
    init_session_model,
    init_text_model,
    late_fusion_combine,
    multimodal_forward,
    stscnn_segment_forward,
    stscnn_session_forward,
)
from .tensor import Tensor, softmax

MODEL_KINDS = ("audio", "video", "text", "multimodal", "late_gate")

# purpose keys for deriving independent RNG streams from one base seed
_INIT, _SHUFFLE = 0, 1
_STAGE_KEY = {"segment": 10, "session": 20, "text": 30, "multimodal": 40, "late_gate": 50}


@dataclass
class TrainConfig:
    max_epochs: int = 300
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_patience: int = 25
    lr_factor: float = 0.5
    early_stop_patience: int = 50
    accumulate_sessions: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be positive, got {self.max_epochs}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.lr_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be positive")
        if not 0.0 < self.lr_factor < 1.0:
            raise ValueError(f"lr_factor must lie in (0, 1), got {self.lr_factor}")
        if self.accumulate_sessions < 1:
            raise ValueError("accumulate_sessions must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown training options: {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class SessionInputs:
    """Precomputed model inputs for one session.

    ``audio``/``video`` are stacked per-segment correlation maps
    (N_seg, C², D+1); ``text`` is an embedded sentence grid; ``preds`` holds
    per-modality probability vectors once the unimodal models have run.
    """

    subject_id: str
    session_id: str
    label: int
    audio: np.ndarray = None
    video: np.ndarray = None
    text: object = None
    preds: dict = None


def derive_seed(base: int, *key: int) -> int:
    """Collapse (base seed, purpose key...) into one independent integer seed."""
    seq = np.random.SeedSequence([int(base), *map(int, key)])
    return int(seq.generate_state(1)[0])


def class_weights(counts) -> np.ndarray:
    """Balanced inverse-frequency weights w_c = N / (K * N_c)."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size < 2:
        raise ValueError(f"need a vector of at least 2 class counts, got {counts}")
    if np.any(counts <= 0):
        raise ValueError(f"every class needs at least one session, got {counts}")
    return counts.sum() / (counts.size * counts)


def verify_subject_disjoint(splits: dict):
    """Refuse any subject whose sessions straddle two splits."""
    seen = {}
    for split, examples in splits.items():
        for ex in examples:
            prior = seen.get(ex.subject_id)
            if prior is not None and prior != split:
                raise ValueError(
                    f"subject '{ex.subject_id}' appears in both "
                    f"'{prior}' and '{split}' splits"
                )
            seen[ex.subject_id] = split


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second gradient moments plus the shared step counter."""

    def __init__(self, params: ModelParams):
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}


def adam_step(
    params: ModelParams,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update, applied in parameter-name order.

    Parameters missing from ``grads`` are treated as having zero gradient
    (their stale momentum still decays).
    """
    state.t += 1
    for name, tens in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tens.data)
        elif not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter '{name}'")
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** state.t)
        v_hat = v / (1.0 - beta2 ** state.t)
        tens.data = tens.data - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# schedule and stopping


class PlateauScheduler:
    """Halve (by ``factor``) when validation loss stalls for ``patience`` epochs.

    Improvement means strictly lower loss; after a drop the waiting window
    restarts, so with a forever-flat loss the rate falls every ``patience``
    epochs.
    """

    def __init__(self, lr: float, patience: int = 25, factor: float = 0.5):
        if patience < 1:
            raise ValueError("patience must be positive")
        if not 0.0 < factor < 1.0:
            raise ValueError(f"factor must lie in (0, 1), got {factor}")
        self.lr = float(lr)
        self.patience = int(patience)
        self.factor = float(factor)
        self.best = np.inf
        self.wait = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; True when the rate dropped."""
        if val_loss < self.best:
            self.best = float(val_loss)
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience:
            self.lr *= self.factor
            self.wait = 0
            return True
        return False


class EarlyStopping:
    """Stop once ``patience`` epochs pass without a strictly better loss."""

    def __init__(self, patience: int = 50):
        if patience < 1:
            raise ValueError("patience must be positive")
        self.patience = int(patience)
        self.best = np.inf
        self.best_epoch = -1
        self.wait = 0
        self._epoch = -1

    def step(self, val_loss: float):
        """Returns (improved, stop) for the epoch just finished."""
        self._epoch += 1
        if val_loss < self.best:
            self.best = float(val_loss)
            self.best_epoch = self._epoch
            self.wait = 0
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience


# ---------------------------------------------------------------------------
# the log


class TrainLog:
    """Per-epoch records; the ``lr`` column shows the rate in force after
    that epoch's schedule update, so a drop is visible on the epoch it
    happened."""

    def __init__(self, entries=None):
        self.entries = list(entries or [])

    def stage_entries(self, stage: str = None) -> list:
        if stage is None:
            return list(self.entries)
        return [e for e in self.entries if e.get("stage") == stage]

    def min_val_loss(self, stage: str = None) -> float:
        entries = self.stage_entries(stage)
        if not entries:
            raise ValueError(f"no entries recorded for stage {stage!r}")
        return min(e["val_loss"] for e in entries)

    def best_epoch(self, stage: str = None) -> int:
        entries = self.stage_entries(stage)
        if not entries:
            raise ValueError(f"no entries recorded for stage {stage!r}")
        return min(entries, key=lambda e: e["val_loss"])["epoch"]

    def comparable(self) -> list:
        """Entries with wall time removed — everything a seed must fix."""
        return [{k: v for k, v in e.items() if k != "wall_time_s"} for e in self.entries]

    def save_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "TrainLog":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    entries.append(json.loads(line))
        return cls(entries)


# ---------------------------------------------------------------------------
# the epoch loop


def fit(
    params: ModelParams,
    loss_fn,
    train_examples: list,
    val_examples: list,
    config: TrainConfig,
    stage: str = None,
    log: TrainLog = None,
    val_loss_fn=None,
) -> TrainLog:
    """Run the full epoch protocol and leave ``params`` at the best epoch.

    ``loss_fn(example)`` must build a scalar loss over ``params``; a separate
    ``val_loss_fn`` may be supplied when the training loss is stochastic.
    """
    if not train_examples or not val_examples:
        raise ValueError("need non-empty train and validation example lists")
    rng = np.random.default_rng(config.seed)
    state = AdamState(params)
    sched = PlateauScheduler(config.lr, config.lr_patience, config.lr_factor)
    stopper = EarlyStopping(config.early_stop_patience)
    measure = val_loss_fn if val_loss_fn is not None else loss_fn
    log = log if log is not None else TrainLog()
    best_values = params.copy_values()

    for epoch in range(config.max_epochs):
        start = time.perf_counter()
        train_losses = []
        pending, n_pending = None, 0
        for pos in rng.permutation(len(train_examples)):
            params.zero_grads()
            loss = loss_fn(train_examples[pos])
            train_losses.append(float(loss.data))
            loss.backward()
            grads = {k: t.grad for k, t in params.items() if t.grad is not None}
            if config.accumulate_sessions == 1:
                adam_step(params, grads, state, sched.lr,
                          config.beta1, config.beta2, config.eps)
                continue
            if pending is None:
                pending = {k: g.copy() for k, g in grads.items()}
            else:
                for k, g in grads.items():
                    if k in pending:
                        pending[k] += g
                    else:
                        pending[k] = g.copy()
            n_pending += 1
            if n_pending == config.accumulate_sessions:
                adam_step(params, {k: g / n_pending for k, g in pending.items()},
                          state, sched.lr, config.beta1, config.beta2, config.eps)
                pending, n_pending = None, 0
        if pending is not None:
            adam_step(params, {k: g / n_pending for k, g in pending.items()},
                      state, sched.lr, config.beta1, config.beta2, config.eps)

        val_loss = float(np.mean([float(measure(ex).data) for ex in val_examples]))
        events = []
        improved, stop = stopper.step(val_loss)
        if improved:
            best_values = params.copy_values()
            events.append("best-checkpoint")
        if sched.step(val_loss):
            events.append("lr-drop")
        if stop:
            events.append("early-stop")

        entry = {}
        if stage is not None:
            entry["stage"] = stage
        entry.update(
            epoch=epoch,
            train_loss=float(np.mean(train_losses)),
            val_loss=val_loss,
            lr=sched.lr,
            wall_time_s=time.perf_counter() - start,
            events=events,
        )
        log.entries.append(entry)
        if stop:
            break

    params.load_values(best_values)
    return log


# ---------------------------------------------------------------------------
# stage plumbing

# Two-stage checkpoints store both networks in one flat map with dotted
# prefixes ("segment.conv0_w"), so one directory holds the whole model.


def merge_stages(**stages) -> ModelParams:
    out = {}
    for prefix, params in stages.items():
        for name, t in params.items():
            out[f"{prefix}.{name}"] = t
    return ModelParams(out)


def extract_stage(params: ModelParams, prefix: str) -> ModelParams:
    dotted = prefix + "."
    sub = {name[len(dotted):]: t for name, t in params.items() if name.startswith(dotted)}
    if not sub:
        raise KeyError(f"checkpoint holds no tensors under {prefix!r}")
    return ModelParams(sub)


def _features_of(example: SessionInputs, kind: str):
    value = getattr(example, kind)
    if value is None:
        raise ValueError(
            f"session {example.subject_id}/{example.session_id} "
            f"has no {kind} features"
        )
    return value


def _train_class_weights(train_examples, n_classes):
    counts = np.bincount([ex.label for ex in train_examples], minlength=n_classes)
    return class_weights(counts)


def segment_embeddings(stack, unimodal_params: ModelParams, config: ModelConfig):
    """Frozen segment-model embeddings, (N_seg, embed), as a plain array."""
    seg = extract_stage(unimodal_params, "segment")
    _, emb = stscnn_segment_forward(Tensor(np.asarray(stack)), seg, config)
    return emb.data


# ---------------------------------------------------------------------------
# per-kind trainers


def train_unimodal(kind, splits, model_config: ModelConfig, config: TrainConfig):
    if kind not in ("audio", "video", "text"):
        raise ValueError(f"unknown unimodal kind {kind!r}")
    verify_subject_disjoint(splits)
    train_ex, val_ex = splits["train"], splits["val"]
    weights = _train_class_weights(train_ex, model_config.n_classes)
    log = TrainLog()

    if kind == "text":
        rng = np.random.default_rng(derive_seed(config.seed, _STAGE_KEY["text"], _INIT))
        params = init_text_model(model_config, rng)

        def text_loss(ex):
            logits, _ = cnn_lstm_text_forward(_features_of(ex, "text"), params, model_config)
            return tc.weighted_softmax_cross_entropy(logits, ex.label, weights)

        stage_cfg = replace(config, seed=derive_seed(config.seed, _STAGE_KEY["text"], _SHUFFLE))
        fit(params, text_loss, train_ex, val_ex, stage_cfg, stage="text", log=log)
        return params, log

    input_channels = _features_of(train_ex[0], kind).shape[1]
    rng = np.random.default_rng(derive_seed(config.seed, _STAGE_KEY["segment"], _INIT))
    seg_params = init_segment_model(input_channels, model_config, rng)

    def segment_loss(ex):
        stack = _features_of(ex, kind)
        logits, _ = stscnn_segment_forward(Tensor(stack), seg_params, model_config)
        labels = np.full(stack.shape[0], ex.label)
        return tc.weighted_softmax_cross_entropy(logits, labels, weights)

    stage_cfg = replace(config, seed=derive_seed(config.seed, _STAGE_KEY["segment"], _SHUFFLE))
    fit(seg_params, segment_loss, train_ex, val_ex, stage_cfg, stage="segment", log=log)

    # stage two: freeze the segment network, train the session head on its
    # embeddings (computed once — the segment weights no longer move)
    merged = merge_stages(segment=seg_params)
    cache = {
        id(ex): segment_embeddings(_features_of(ex, kind), merged, model_config)
        for ex in train_ex + val_ex
    }
    rng = np.random.default_rng(derive_seed(config.seed, _STAGE_KEY["session"], _INIT))
    sess_params = init_session_model(model_config, rng)

    def session_loss(ex):
        logits = stscnn_session_forward(Tensor(cache[id(ex)]), sess_params, model_config)
        return tc.weighted_softmax_cross_entropy(logits, ex.label, weights)

    stage_cfg = replace(config, seed=derive_seed(config.seed, _STAGE_KEY["session"], _SHUFFLE))
    fit(sess_params, session_loss, train_ex, val_ex, stage_cfg, stage="session", log=log)
    return merge_stages(segment=seg_params, session=sess_params), log


def train_multimodal(splits, model_config: ModelConfig, config: TrainConfig, unimodal: dict):
    for need in ("audio", "video"):
        if not unimodal or need not in unimodal:
            raise ValueError(f"multimodal training needs the trained '{need}' model")
    verify_subject_disjoint(splits)
    train_ex, val_ex = splits["train"], splits["val"]
    weights = _train_class_weights(train_ex, model_config.n_classes)

    cache = {
        id(ex): (
            segment_embeddings(_features_of(ex, "audio"), unimodal["audio"], model_config),
            segment_embeddings(_features_of(ex, "video"), unimodal["video"], model_config),
        )
        for ex in train_ex + val_ex
    }
    rng = np.random.default_rng(derive_seed(config.seed, _STAGE_KEY["multimodal"], _INIT))
    params = init_multimodal_model(model_config, rng)

    def mm_loss(ex):
        a_seq, v_seq = cache[id(ex)]
        logits = multimodal_forward(a_seq, v_seq, _features_of(ex, "text"), params, model_config)
        return tc.weighted_softmax_cross_entropy(logits, ex.label, weights)

    stage_cfg = replace(config, seed=derive_seed(config.seed, _STAGE_KEY["multimodal"], _SHUFFLE))
    log = fit(params, mm_loss, train_ex, val_ex, stage_cfg, stage="multimodal")
    return params, log


def attach_unimodal_predictions(examples, unimodal: dict, model_config: ModelConfig):
    """Fill each example's ``preds`` with the three modality probabilities."""
    for need in ("audio", "video", "text"):
        if not unimodal or need not in unimodal:
            raise ValueError(f"late fusion needs the trained '{need}' model")
    for ex in examples:
        ex.preds = {
            kind: predict_unimodal(kind, ex, unimodal[kind], model_config)
            for kind in ("audio", "video", "text")
        }


def train_late_gate(splits, model_config: ModelConfig, config: TrainConfig, unimodal: dict = None):
    verify_subject_disjoint(splits)
    train_ex, val_ex = splits["train"], splits["val"]
    if any(ex.preds is None for ex in train_ex + val_ex):
        attach_unimodal_predictions(train_ex + val_ex, unimodal, model_config)
    weights = _train_class_weights(train_ex, model_config.n_classes)
    rng = np.random.default_rng(derive_seed(config.seed, _STAGE_KEY["late_gate"], _INIT))
    params = init_late_fusion_model(model_config, rng)

    def gate_loss(ex):
        preds = [ex.preds[m] for m in ("audio", "video", "text")]
        logits = late_fusion_combine(preds, "mgmu_pairwise", params, model_config)
        return tc.weighted_softmax_cross_entropy(logits, ex.label, weights)

    stage_cfg = replace(config, seed=derive_seed(config.seed, _STAGE_KEY["late_gate"], _SHUFFLE))
    log = fit(params, gate_loss, train_ex, val_ex, stage_cfg, stage="late_gate")
    return params, log


def train(kind, splits, model_config: ModelConfig, config: TrainConfig, unimodal: dict = None):
    """Train one model kind; returns (params, log)."""
    if kind in ("audio", "video", "text"):
        return train_unimodal(kind, splits, model_config, config)
    if kind == "multimodal":
        return train_multimodal(splits, model_config, config, unimodal)
    if kind == "late_gate":
        return train_late_gate(splits, model_config, config, unimodal)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


# ---------------------------------------------------------------------------
# inference


def predict_unimodal(kind, example: SessionInputs, params: ModelParams, config: ModelConfig):
    if kind == "text":
        logits, _ = cnn_lstm_text_forward(_features_of(example, "text"), params, config)
        return softmax(logits.data)
    emb = segment_embeddings(_features_of(example, kind), params, config)
    logits = stscnn_session_forward(Tensor(emb), extract_stage(params, "session"), config)
    return softmax(logits.data)


def predict_multimodal(example: SessionInputs, params: ModelParams, config: ModelConfig, unimodal: dict):
    a_seq = segment_embeddings(_features_of(example, "audio"), unimodal["audio"], config)
    v_seq = segment_embeddings(_features_of(example, "video"), unimodal["video"], config)
    logits = multimodal_forward(a_seq, v_seq, _features_of(example, "text"), params, config)
    return softmax(logits.data)


def predict_late(example: SessionInputs, method: str, params: ModelParams = None,
                 config: ModelConfig = None):
    if example.preds is None:
        raise ValueError("late fusion needs unimodal predictions attached first")
    preds = [example.preds[m] for m in ("audio", "video", "text")]
    out = late_fusion_combine(preds, method, params, config)
    return out.data if method == "mean" else softmax(out.data)


def predict_split(kind, examples, params, config: ModelConfig, unimodal: dict = None):
    """Per-session probabilities for a whole split; returns (y_true, probs)."""
    probs = []
    for ex in examples:
        if kind in ("audio", "video", "text"):
            probs.append(predict_unimodal(kind, ex, params, config))
        elif kind == "multimodal":
            probs.append(predict_multimodal(ex, params, config, unimodal))
        elif kind == "late_gate":
            probs.append(predict_late(ex, "mgmu_pairwise", params, config))
        elif kind == "late_mean":
            probs.append(predict_late(ex, "mean"))
        else:
            raise ValueError(f"unknown model kind {kind!r}")
    y_true = np.array([ex.label for ex in examples], dtype=np.int64)
    return y_true, np.vstack(probs)


# ---------------------------------------------------------------------------
# grid search


@dataclass(frozen=True)
class GridSpec:
    lrs: tuple = (1e-3, 5e-4, 1e-4)
    lr_patiences: tuple = (20, 25, 30)
    early_stop_patiences: tuple = (40, 50, 60)
    lr_factors: tuple = (0.75, 0.5, 0.25)
    segment_lengths_s: tuple = None  # only meaningful for audio/video models

    def __post_init__(self):
        for name in ("lrs", "lr_patiences", "early_stop_patiences", "lr_factors"):
            if not getattr(self, name):
                raise ValueError(f"grid axis {name} is empty")

    def cells(self) -> list:
        """Cartesian product in field order; enumeration order is the tiebreak."""
        seg_axis = self.segment_lengths_s if self.segment_lengths_s else (None,)
        product = itertools.product(
            self.lrs, self.lr_patiences, self.early_stop_patiences,
            self.lr_factors, seg_axis,
        )
        return [
            {
                "index": i,
                "lr": lr,
                "lr_patience": pat,
                "early_stop_patience": stop,
                "lr_factor": factor,
                "segment_length_s": seg,
            }
            for i, (lr, pat, stop, factor, seg) in enumerate(product)
        ]


def cell_train_config(base: TrainConfig, cell: dict) -> TrainConfig:
    """The base protocol with one grid cell's hyperparameters spliced in."""
    return replace(
        base,
        lr=cell["lr"],
        lr_patience=cell["lr_patience"],
        early_stop_patience=cell["early_stop_patience"],
        lr_factor=cell["lr_factor"],
        seed=derive_seed(base.seed, 100, cell["index"]),
    )


def grid_search(spec: GridSpec, evaluate) -> list:
    """Rank grid cells best-first by validation weighted F1.

    ``evaluate(cell) -> (val_weighted_f1, val_loss)``. Ties break toward the
    lower validation loss, then toward the earlier enumeration index.
    """
    rows = []
    for cell in spec.cells():
        f1, loss = evaluate(cell)
        rows.append({**cell, "val_weighted_f1": float(f1), "val_loss": float(loss)})
    rows.sort(key=lambda r: (-r["val_weighted_f1"], r["val_loss"], r["index"]))
    for rank, row in enumerate(rows):
        row["rank"] = rank
    return rows


_FINAL_STAGE = {
    "audio": "session",
    "video": "session",
    "text": "text",
    "multimodal": "multimodal",
    "late_gate": "late_gate",
}


def run_grid_cell(cell, kind, splits, model_config: ModelConfig,
                  base_config: TrainConfig, unimodal: dict = None):
    """Train one cell and score it on the validation split."""
    cfg = cell_train_config(base_config, cell)
    params, log = train(kind, splits, model_config, cfg, unimodal=unimodal)
    y_true, probs = predict_split(kind, splits["val"], params, model_config, unimodal)
    f1 = weighted_f1(confusion_matrix(y_true, probs.argmax(axis=1), model_config.n_classes))
    return f1, log.min_val_loss(stage=_FINAL_STAGE[kind])


GRID_CSV_COLUMNS = (
    "rank", "index", "lr", "lr_patience", "early_stop_patience",
    "lr_factor", "segment_length_s", "val_weighted_f1", "val_loss",
)


def save_grid_results(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=GRID_CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({col: row.get(col) for col in GRID_CSV_COLUMNS})


def load_grid_results(path) -> list:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
