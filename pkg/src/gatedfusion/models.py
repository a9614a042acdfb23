"""Model architectures: gated bimodal units, segment/session classifiers,
text classifier, and the three-unit intermediate-fusion network.

All forwards are pure functions of (inputs, ModelParams, ModelConfig) built
from the taped ops in :mod:`gatedfusion.tensor`, so one ``backward`` call on
the loss reaches every parameter.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as tc
from .features import TextGrid
from .tensor import Tensor
from .tnsr import read_tnsr, write_tnsr

MGMU_VARIANTS = ("as_written", "complementary")


@dataclass
class ModelConfig:
    """Layer sizes shared by every architecture in the package."""

    n_classes: int = 3
    # segment-level dilated conv stack (audio/video correlation inputs)
    dilations: tuple = (1, 3, 7, 15)
    conv_channels: int = 32
    conv_kernel: int = 3
    conv_padding: str = "same"
    segment_embedding: int = 128
    # session-level aggregation over stacked segment embeddings; kernel 1
    # keeps the classifier invariant to duplicating a segment list
    session_conv_channels: int = 64
    session_kernel: int = 1
    # text branch
    embedding_dim: int = 100
    text_conv_channels: int = 64
    text_kernel: int = 3
    text_lstm_hidden: int = 128
    # multimodal fusion network
    mm_lstm_hidden: int = 128
    mm_lstm_layers: int = 2
    mgmu_dim: int = 128
    fc_hidden: int = 96
    mgmu_variant: str = "complementary"
    # how the three branch latents meet: gated pairwise units, or a plain
    # concatenation straight into the FC head (the ablation's ungated row)
    fusion: str = "mgmu"
    late_mgmu_dim: int = 8
    dropout: float = 0.0

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        if self.mgmu_variant not in MGMU_VARIANTS:
            raise ValueError(
                f"mgmu_variant must be one of {MGMU_VARIANTS}, got {self.mgmu_variant!r}"
            )
        if self.fusion not in ("mgmu", "concat"):
            raise ValueError(f"fusion must be 'mgmu' or 'concat', got {self.fusion!r}")
        if self.conv_padding not in ("same", "valid"):
            raise ValueError(f"bad conv padding {self.conv_padding!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        for f in fields(self):
            if f.name in ("dilations", "conv_padding", "mgmu_variant", "fusion", "dropout"):
                continue
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be positive")

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**payload)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dilations"] = list(self.dilations)
        return out


class ModelParams:
    """Ordered name → learnable-Tensor map for one architecture."""

    def __init__(self, tensors: dict):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def names(self) -> list:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> list:
        return list(self._tensors.values())

    @property
    def total_parameter_count(self) -> int:
        return int(sum(t.data.size for t in self._tensors.values()))

    def zero_grads(self):
        tc.zero_grads(self._tensors.values())

    def copy_values(self) -> dict:
        """Snapshot of the raw arrays (for checkpoint-restore)."""
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def load_values(self, values: dict):
        for k, t in self._tensors.items():
            if t.data.shape != values[k].shape:
                raise ValueError(f"shape mismatch restoring {k}")
            t.data = values[k].copy()


@dataclass
class MgmuParams:
    """Gated bimodal unit: two modality projections and one gate, no biases."""

    W1: Tensor
    W2: Tensor
    Wz: Tensor
    variant: str = "complementary"

    def __post_init__(self):
        if self.variant not in MGMU_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        d_h, d1 = self.W1.shape
        d_h2, d2 = self.W2.shape
        if d_h2 != d_h or self.Wz.shape != (d_h, d1 + d2):
            raise tc.ShapeError(
                f"inconsistent unit shapes: W1 {self.W1.shape}, "
                f"W2 {self.W2.shape}, Wz {self.Wz.shape}"
            )


# ---------------------------------------------------------------------------
# initialization


def glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _dense_init(rng, n_out, n_in):
    W = Tensor(glorot(rng, (n_out, n_in), n_in, n_out), requires_grad=True)
    b = Tensor(np.zeros(n_out), requires_grad=True)
    return W, b


def _conv_init(rng, c_out, c_in, k):
    W = Tensor(glorot(rng, (c_out, c_in, k), c_in * k, c_out * k), requires_grad=True)
    b = Tensor(np.zeros(c_out), requires_grad=True)
    return W, b


def _lstm_init(rng, d_in, hidden):
    Wx = Tensor(glorot(rng, (4 * hidden, d_in), d_in, 4 * hidden), requires_grad=True)
    Wh = Tensor(glorot(rng, (4 * hidden, hidden), hidden, 4 * hidden), requires_grad=True)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget gate starts open
    return Wx, Wh, Tensor(b, requires_grad=True)


def _mgmu_init(rng, d1, d2, d_h):
    W1 = Tensor(glorot(rng, (d_h, d1), d1, d_h), requires_grad=True)
    W2 = Tensor(glorot(rng, (d_h, d2), d2, d_h), requires_grad=True)
    Wz = Tensor(glorot(rng, (d_h, d1 + d2), d1 + d2, d_h), requires_grad=True)
    return W1, W2, Wz


def init_segment_model(
    input_channels: int, config: ModelConfig, rng: np.random.Generator
) -> ModelParams:
    """Dilated-conv segment classifier over one correlation matrix."""
    out = {}
    c_in = input_channels
    for i, _ in enumerate(config.dilations):
        W, b = _conv_init(rng, config.conv_channels, c_in, config.conv_kernel)
        out[f"conv{i}_w"], out[f"conv{i}_b"] = W, b
        c_in = config.conv_channels
    out["embed_w"], out["embed_b"] = _dense_init(
        rng, config.segment_embedding, config.conv_channels
    )
    out["logits_w"], out["logits_b"] = _dense_init(
        rng, config.n_classes, config.segment_embedding
    )
    return ModelParams(out)


def init_session_model(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Session classifier over the stacked segment embeddings."""
    W, b = _conv_init(
        rng, config.session_conv_channels, config.segment_embedding, config.session_kernel
    )
    out = {"conv_w": W, "conv_b": b}
    out["out_w"], out["out_b"] = _dense_init(
        rng, config.n_classes, config.session_conv_channels
    )
    return ModelParams(out)


def init_text_model(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Sentence-conv + sentence-sequence LSTM text classifier."""
    out = {}
    out["conv_w"], out["conv_b"] = _conv_init(
        rng, config.text_conv_channels, config.embedding_dim, config.text_kernel
    )
    out["lstm_wx"], out["lstm_wh"], out["lstm_b"] = _lstm_init(
        rng, config.text_conv_channels, config.text_lstm_hidden
    )
    out["out_w"], out["out_b"] = _dense_init(
        rng, config.n_classes, config.text_lstm_hidden
    )
    return ModelParams(out)


def init_multimodal_model(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Three-branch fusion network.

    With ``config.fusion == "mgmu"`` the branch latents meet in three
    pairwise gated bimodal units; with ``"concat"`` they feed the FC head
    directly and no gate tensors exist.
    """
    out = {}
    u = config.mm_lstm_hidden
    for branch in ("audio", "video"):
        d_in = config.segment_embedding
        for layer in range(config.mm_lstm_layers):
            wx, wh, b = _lstm_init(rng, d_in, u)
            out[f"{branch}_lstm{layer}_wx"] = wx
            out[f"{branch}_lstm{layer}_wh"] = wh
            out[f"{branch}_lstm{layer}_b"] = b
            d_in = u
    out["text_conv_w"], out["text_conv_b"] = _conv_init(
        rng, config.text_conv_channels, config.embedding_dim, config.text_kernel
    )
    out["text_lstm_wx"], out["text_lstm_wh"], out["text_lstm_b"] = _lstm_init(
        rng, config.text_conv_channels, config.text_lstm_hidden
    )
    u_t = config.text_lstm_hidden
    if config.fusion == "mgmu":
        d_h = config.mgmu_dim
        for name, d1, d2 in (("av", u, u), ("at", u, u_t), ("vt", u, u_t)):
            W1, W2, Wz = _mgmu_init(rng, d1, d2, d_h)
            out[f"mgmu_{name}_w1"] = W1
            out[f"mgmu_{name}_w2"] = W2
            out[f"mgmu_{name}_wz"] = Wz
        fc_in = 3 * d_h
    else:
        fc_in = u + u + u_t
    out["fc0_w"], out["fc0_b"] = _dense_init(rng, config.fc_hidden, fc_in)
    out["fc1_w"], out["fc1_b"] = _dense_init(rng, config.n_classes, config.fc_hidden)
    return ModelParams(out)


def init_late_fusion_model(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Pairwise gated combination of three probability vectors."""
    K = config.n_classes
    d_h = config.late_mgmu_dim
    out = {}
    for name in ("av", "at", "vt"):
        W1, W2, Wz = _mgmu_init(rng, K, K, d_h)
        out[f"mgmu_{name}_w1"] = W1
        out[f"mgmu_{name}_w2"] = W2
        out[f"mgmu_{name}_wz"] = Wz
    out["out_w"], out["out_b"] = _dense_init(rng, K, 3 * d_h)
    return ModelParams(out)


def mgmu_view(params: ModelParams, name: str, variant: str) -> MgmuParams:
    return MgmuParams(
        params[f"mgmu_{name}_w1"],
        params[f"mgmu_{name}_w2"],
        params[f"mgmu_{name}_wz"],
        variant,
    )


# ---------------------------------------------------------------------------
# forward passes


def mgmu_forward(x1: Tensor, x2: Tensor, p: MgmuParams) -> Tensor:
    """h1 = tanh(W1·x1); h2 = tanh(W2·x2); z = σ(Wz·[x1,x2]); gated sum.

    ``as_written`` returns z⊙h1 + z⊙h2; ``complementary`` returns
    z⊙h1 + (1−z)⊙h2.
    """
    x1 = x1 if isinstance(x1, Tensor) else Tensor(x1)
    x2 = x2 if isinstance(x2, Tensor) else Tensor(x2)
    if x1.shape != (p.W1.shape[1],) or x2.shape != (p.W2.shape[1],):
        raise tc.ShapeError(
            f"unit expects inputs {(p.W1.shape[1],)}/{(p.W2.shape[1],)}, "
            f"got {x1.shape}/{x2.shape}"
        )
    h1 = tc.tanh(tc.matmul(p.W1, x1))
    h2 = tc.tanh(tc.matmul(p.W2, x2))
    z = tc.sigmoid(tc.matmul(p.Wz, tc.concat([x1, x2])))
    if p.variant == "as_written":
        return tc.add(tc.mul(z, h1), tc.mul(z, h2))
    one_minus_z = tc.add(tc.mul(z, -1.0), 1.0)
    return tc.add(tc.mul(z, h1), tc.mul(one_minus_z, h2))


def apply_dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no generator is given."""
    if rate <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return tc.mul(x, Tensor(mask))


def stscnn_segment_forward(
    x, params: ModelParams, config: ModelConfig, dropout_rng=None
):
    """Segment classifier: stacked dilated convs → mean-pool → embed → logits.

    ``x`` is one correlation matrix (C², D+1) or a batch (B, C², D+1).
    Returns (logits, embedding); the embedding is the 128-d tap consumed by
    the session-level and fusion models.
    """
    h = x if isinstance(x, Tensor) else Tensor(x)
    for i, dilation in enumerate(config.dilations):
        h = tc.conv1d_dilated(h, params[f"conv{i}_w"], dilation, config.conv_padding)
        h = tc.add_channel_bias(h, params[f"conv{i}_b"])
        h = tc.relu(h)
    pooled = tc.mean_axis(h, axis=h.ndim - 1)  # mean over the delay axis
    embedding = tc.tanh(tc.dense(pooled, params["embed_w"], params["embed_b"]))
    embedding = apply_dropout(embedding, config.dropout, dropout_rng)
    logits = tc.dense(embedding, params["logits_w"], params["logits_b"])
    return logits, embedding


def stscnn_session_forward(
    embeddings, params: ModelParams, config: ModelConfig, n_valid: int = None
) -> Tensor:
    """Session classifier over an (N_seg, embed) stack of segment embeddings.

    ``n_valid`` marks the real-segment prefix when the stack is zero-padded;
    padded rows are excluded before the convolution and pool.
    """
    e = embeddings if isinstance(embeddings, Tensor) else Tensor(embeddings)
    if e.ndim != 2 or e.shape[1] != config.segment_embedding:
        raise tc.ShapeError(
            f"expected (N_seg, {config.segment_embedding}), got {e.shape}"
        )
    n = e.shape[0] if n_valid is None else int(n_valid)
    if n < 1 or n > e.shape[0]:
        raise ValueError(f"invalid real-segment count {n} for stack {e.shape}")
    if n < e.shape[0]:
        e = tc.slice_axis(e, axis=0, start=0, stop=n)
    h = tc.transpose2d(e)  # (embed, N_seg): conv runs over the segment axis
    h = tc.conv1d_dilated(h, params["conv_w"], dilation=1, padding="same")
    h = tc.relu(tc.add_channel_bias(h, params["conv_b"]))
    pooled = tc.mean_axis(h, axis=1)
    return tc.dense(pooled, params["out_w"], params["out_b"])


def _sentence_vectors(grid: TextGrid, conv_w, conv_b):
    """Conv over the word axis + relu + max-pool, one vector per real sentence."""
    lengths = grid.sentence_lengths
    vectors = []
    for s in range(grid.n_sentences):
        w = int(lengths[s])
        if w == 0:
            raise ValueError(f"sentence {s} inside the real range is empty")
        words = Tensor(grid.values[s, :w].T)  # (E, w)
        h = tc.conv1d_dilated(words, conv_w, dilation=1, padding="same")
        h = tc.relu(tc.add_channel_bias(h, conv_b))
        vectors.append(tc.max_axis(h, axis=1))
    return vectors


def cnn_lstm_text_forward(grid: TextGrid, params: ModelParams, config: ModelConfig):
    """Text classifier: word-conv per sentence, LSTM over sentences, dense.

    Returns (logits, latent) where the latent is the last real sentence's
    hidden state. Pad-only sentences never enter the recurrence.
    """
    if grid.n_sentences < 1 or int(grid.sentence_lengths[: grid.n_sentences].min()) < 1:
        raise ValueError("text grid has no real sentence to classify")
    if grid.values.shape[2] != config.embedding_dim:
        raise tc.ShapeError(
            f"grid embedding width {grid.values.shape[2]} vs "
            f"configured {config.embedding_dim}"
        )
    vectors = _sentence_vectors(grid, params["conv_w"], params["conv_b"])
    seq = tc.stack_rows(vectors)
    latent = tc.lstm_sequence(
        seq, params["lstm_wx"], params["lstm_wh"], params["lstm_b"]
    )
    logits = tc.dense(latent, params["out_w"], params["out_b"])
    return logits, latent


def multimodal_forward(
    audio_seq,
    video_seq,
    grid: TextGrid,
    params: ModelParams,
    config: ModelConfig,
    dropout_rng=None,
) -> Tensor:
    """Intermediate fusion of the three branch latents.

    ``audio_seq``/``video_seq`` are the frozen unimodal segment-embedding
    stacks (N, embed). Audio and video each run through the configured stack
    of LSTM layers; text runs through its conv+LSTM branch. The three last
    hidden states are fused pairwise by gated units (audio-video, audio-text,
    video-text) — or simply concatenated when ``config.fusion == "concat"`` —
    and mapped by the fully connected head to class logits.
    """
    latents = {}
    for branch, seq in (("audio", audio_seq), ("video", video_seq)):
        h = seq if isinstance(seq, Tensor) else Tensor(seq)
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] != config.segment_embedding:
            raise tc.ShapeError(f"{branch} stack must be (N, {config.segment_embedding})")
        for layer in range(config.mm_lstm_layers):
            last = layer == config.mm_lstm_layers - 1
            h = tc.lstm_sequence(
                h,
                params[f"{branch}_lstm{layer}_wx"],
                params[f"{branch}_lstm{layer}_wh"],
                params[f"{branch}_lstm{layer}_b"],
                return_sequence=not last,
            )
        latents[branch] = h
    text_vectors = _sentence_vectors(grid, params["text_conv_w"], params["text_conv_b"])
    text_seq = tc.stack_rows(text_vectors)
    latents["text"] = tc.lstm_sequence(
        text_seq, params["text_lstm_wx"], params["text_lstm_wh"], params["text_lstm_b"]
    )

    if config.fusion == "mgmu":
        fused = [
            mgmu_forward(
                latents[a], latents[b], mgmu_view(params, name, config.mgmu_variant)
            )
            for name, a, b in (("av", "audio", "video"), ("at", "audio", "text"), ("vt", "video", "text"))
        ]
    else:
        fused = [latents["audio"], latents["video"], latents["text"]]
    h = tc.concat(fused)
    h = tc.relu(tc.dense(h, params["fc0_w"], params["fc0_b"]))
    h = apply_dropout(h, config.dropout, dropout_rng)
    return tc.dense(h, params["fc1_w"], params["fc1_b"])


def late_fusion_combine(
    preds: list, method: str, params: ModelParams = None, config: ModelConfig = None
) -> Tensor:
    """Combine three per-modality probability vectors into one decision.

    ``mean`` averages them elementwise (probabilities out); ``mgmu_pairwise``
    fuses them with three small gated units and a dense map (logits out).
    """
    if len(preds) != 3:
        raise ValueError(f"expected 3 modality predictions, got {len(preds)}")
    tens = [p if isinstance(p, Tensor) else Tensor(p) for p in preds]
    for p in tens:
        if abs(float(p.data.sum()) - 1.0) > 1e-9:
            raise ValueError(f"prediction {p.data} does not sum to 1")
    if method == "mean":
        return tc.mul(tc.add(tc.add(tens[0], tens[1]), tens[2]), 1.0 / 3.0)
    if method == "mgmu_pairwise":
        if params is None or config is None:
            raise ValueError("mgmu_pairwise needs params and config")
        pairs = (("av", 0, 1), ("at", 0, 2), ("vt", 1, 2))
        fused = [
            mgmu_forward(tens[i], tens[j], mgmu_view(params, name, config.mgmu_variant))
            for name, i, j in pairs
        ]
        return tc.dense(tc.concat(fused), params["out_w"], params["out_b"])
    raise ValueError(f"unknown late-fusion method {method!r}")


# ---------------------------------------------------------------------------
# checkpoints


def save_params(directory, params: ModelParams):
    """One TNSR file per tensor plus a manifest fixing the iteration order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    for idx, (name, t) in enumerate(params.items()):
        fname = f"{idx:03d}_{name}.tnsr"
        write_tnsr(directory / fname, t.data)
        manifest.append({"name": name, "file": fname, "shape": list(t.data.shape)})
    (directory / "manifest.json").write_text(
        json.dumps({"tensors": manifest}, indent=1) + "\n", encoding="utf-8"
    )


def load_params(directory) -> ModelParams:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    out = {}
    for entry in manifest["tensors"]:
        data = read_tnsr(directory / entry["file"])
        if list(data.shape) != entry["shape"]:
            raise ValueError(
                f"checkpoint tensor {entry['name']} has shape {data.shape}, "
                f"manifest says {entry['shape']}"
            )
        out[entry["name"]] = Tensor(data, requires_grad=True)
    return ModelParams(out)
