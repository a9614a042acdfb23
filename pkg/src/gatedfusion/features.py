"""Feature pipeline: segment windows, delayed-correlation tensors, text grids.

Turns per-session low-level channel time series and raw text into the
model-ready inputs: fixed-length segments, the (C·C)x(D+1) normalized
delayed auto-/cross-correlation matrix per segment, and the padded
sentence-by-word embedding grid per session.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tnsr import read_tnsr, write_tnsr

AUDIO_CHANNELS = [
    # 6 constriction-tract variables + 2 glottal energy parameters
    "LA", "LP", "TBCD", "TBCL", "TTCD", "TTCL", "periodic", "aperiodic",
]
VIDEO_CHANNELS = [
    # facial action units around the eyes and lips
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU10", "AU12", "AU14", "AU25",
]
DEFAULT_AUDIO_RATE = 100.0
DEFAULT_VIDEO_RATE = 30.0

# small built-in stopword list; callers may pass their own
DEFAULT_STOPWORDS = frozenset(
    """a an and are as at be but by for from had has have he her his i if in is
    it its me my of on or our she so that the their them they this to was we
    were what which who will with you your""".split()
)


@dataclass
class ChannelSeries:
    """Multichannel time series for one modality of one session or segment."""

    modality: str  # "audio" | "video"
    channel_names: list
    frame_rate: float
    values: np.ndarray  # (C, T)
    valid_frames: int = -1  # frames before the zero pad; -1 means all

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"values must be (C, T), got {self.values.shape}")
        if self.values.shape[1] < 1:
            raise ValueError("a series needs at least one frame")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series values must be finite")
        if len(self.channel_names) != self.values.shape[0]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for "
                f"{self.values.shape[0]} channels"
            )
        if self.valid_frames < 0:
            self.valid_frames = self.values.shape[1]

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def is_padded(self) -> bool:
        return self.valid_frames < self.n_frames


@dataclass
class FvtcTensor:
    """Normalized delayed-correlation matrix: C·C pair rows by D+1 delay columns.

    Row i*C+j, column d holds r_ij(d). Channels with zero variance produce
    all-zero rows/columns and are flagged; entries that escape [-1, 1] by more
    than 1e-9 (possible when T-d is very small) are counted, not clipped.
    """

    values: np.ndarray  # (C*C, D+1)
    n_channels: int
    max_delay: int
    degenerate_channels: list = field(default_factory=list)
    range_violations: int = 0

    def pair_row(self, i: int, j: int) -> np.ndarray:
        return self.values[i * self.n_channels + j]


@dataclass
class TextGrid:
    """Sentence-by-word embedding grid, zero-padded to corpus-level extents."""

    values: np.ndarray  # (S_max, W_max, E)
    mask: np.ndarray  # (S_max, W_max) bool, True on real words
    n_sentences: int
    truncated_sentences: int = 0
    truncated_words: int = 0

    @property
    def sentence_lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def segment_series(
    series: ChannelSeries, window_s: float, overlap_s: float
) -> list:
    """Cut a session series into fixed windows with the given overlap.

    hop = window - overlap; a trailing remainder shorter than the window is
    dropped; a session shorter than one window yields exactly one zero-padded
    segment whose ``valid_frames`` records the pad boundary.
    """
    if not 0 <= overlap_s < window_s:
        raise ValueError(
            f"overlap {overlap_s}s must be in [0, window) for window {window_s}s"
        )
    rate = series.frame_rate
    win = int(round(window_s * rate))
    hop = int(round((window_s - overlap_s) * rate))
    T = series.n_frames

    if T < win:
        padded = np.zeros((series.n_channels, win))
        padded[:, :T] = series.values
        return [
            ChannelSeries(
                series.modality, series.channel_names, rate, padded, valid_frames=T
            )
        ]

    count = (T - win) // hop + 1
    out = []
    for k in range(count):
        start = k * hop
        out.append(
            ChannelSeries(
                series.modality,
                series.channel_names,
                rate,
                series.values[:, start : start + win].copy(),
            )
        )
    return out


def segment_count(n_frames: int, window: int, hop: int) -> int:
    """Closed-form number of full windows (1 when the series is shorter)."""
    if n_frames < window:
        return 1
    return (n_frames - window) // hop + 1


def compute_fvtc(
    segment: ChannelSeries, max_delay: int, per_lag_means: bool = False
) -> FvtcTensor:
    """Delayed auto-/cross-correlation structure of one segment.

    With full-segment means m_i and population stds s_i,
    r_ij(d) = [1/(T-d)] * sum_t (x_i(t)-m_i)(x_j(t+d)-m_j) / (s_i s_j)
    for d = 0..max_delay. ``per_lag_means`` switches to the sensitivity
    variant that recomputes means and stds on each lag's overlapping windows.
    Zero-variance channels give zero rows/columns plus a degeneracy flag.
    """
    X = segment.values
    C, T = X.shape
    D = max_delay
    if D < 0:
        raise ValueError(f"max delay must be >= 0, got {D}")
    if T <= D:
        raise ValueError(f"segment length {T} must exceed max delay {D}")

    out = np.zeros((C * C, D + 1))
    degenerate = []

    if not per_lag_means:
        mu = X.mean(axis=1)
        sigma = X.std(axis=1)  # population std
        degenerate = [i for i in range(C) if sigma[i] == 0.0]
        ok = sigma > 0.0
        Xc = X - mu[:, None]
        denom = np.outer(sigma, sigma)
        denom[~ok, :] = 1.0  # avoid divide warnings; rows zeroed below
        denom[:, ~ok] = 1.0
        for d in range(D + 1):
            R = (Xc[:, : T - d] @ Xc[:, d:].T) / ((T - d) * denom)
            R[~ok, :] = 0.0
            R[:, ~ok] = 0.0
            out[:, d] = R.reshape(-1)
    else:
        degenerate_set = set()
        for d in range(D + 1):
            A = X[:, : T - d]
            B = X[:, d:]
            mu_a = A.mean(axis=1)
            mu_b = B.mean(axis=1)
            sd_a = A.std(axis=1)
            sd_b = B.std(axis=1)
            bad_a = sd_a == 0.0
            bad_b = sd_b == 0.0
            degenerate_set.update(np.nonzero(bad_a | bad_b)[0].tolist())
            sd_a[bad_a] = 1.0
            sd_b[bad_b] = 1.0
            R = ((A - mu_a[:, None]) @ (B - mu_b[:, None]).T) / (
                (T - d) * np.outer(sd_a, sd_b)
            )
            R[bad_a, :] = 0.0
            R[:, bad_b] = 0.0
            out[:, d] = R.reshape(-1)
        degenerate = sorted(degenerate_set)

    violations = int(np.count_nonzero(np.abs(out) > 1.0 + 1e-9))
    return FvtcTensor(out, C, D, degenerate, violations)


def tokenize(text: str, stopwords=DEFAULT_STOPWORDS, punctuation=None) -> list:
    """Split text into sentences of lowercased tokens.

    Sentences split on .!?; punctuation is stripped from tokens, stopwords
    removed, empty tokens and empty sentences dropped.
    """
    if punctuation is None:
        punctuation = set(string.punctuation)
    strip_table = str.maketrans("", "", "".join(punctuation))

    sentences = []
    for chunk in _split_sentences(text):
        tokens = []
        for word in chunk.split():
            tok = word.lower().translate(strip_table)
            if tok and tok not in stopwords:
                tokens.append(tok)
        if tokens:
            sentences.append(tokens)
    return sentences


def _split_sentences(text: str) -> list:
    parts = []
    buf = []
    for ch in text:
        if ch in ".!?":
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    parts.append("".join(buf))
    return parts


def embed_text(
    sentences: list, table: dict, s_max: int, w_max: int, dim: int = 100
) -> TextGrid:
    """Map tokenized sentences onto the fixed (S_max, W_max, E) grid.

    In-vocabulary tokens take their table row; out-of-vocabulary tokens map
    to the zero vector and stay masked out. Sentences/words beyond the grid
    are truncated and counted; everything below is zero-padded.
    """
    values = np.zeros((s_max, w_max, dim))
    mask = np.zeros((s_max, w_max), dtype=bool)
    truncated_sentences = max(0, len(sentences) - s_max)
    truncated_words = 0

    kept = sentences[:s_max]
    for s, sentence in enumerate(kept):
        truncated_words += max(0, len(sentence) - w_max)
        for w, token in enumerate(sentence[:w_max]):
            vec = table.get(token)
            mask[s, w] = True
            if vec is not None:
                if len(vec) != dim:
                    raise ValueError(
                        f"embedding for {token!r} has length {len(vec)}, expected {dim}"
                    )
                values[s, w] = vec
            # OOV tokens stay at the zero vector by design
    return TextGrid(values, mask, len(kept), truncated_sentences, truncated_words)


def load_embedding_table(path, dim: int = 100) -> dict:
    """Read a word-per-line embedding table (word v1 ... v_dim)."""
    table = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ValueError(
                    f"{path}:{line_no}: expected {dim + 1} fields, got {len(parts)}"
                )
            table[parts[0]] = np.array([float(v) for v in parts[1:]])
    return table


def save_embedding_table(path, table: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for word in table:
            vec = " ".join(repr(float(v)) for v in table[word])
            fh.write(f"{word} {vec}\n")


# ---------------------------------------------------------------------------
# on-disk representation: TNSR payload + JSON sidecar


def save_channel_series(path, series: ChannelSeries):
    write_tnsr(path, series.values)
    sidecar = {
        "kind": "channel_series",
        "modality": series.modality,
        "frame_rate": series.frame_rate,
        "channel_names": list(series.channel_names),
        "valid_frames": series.valid_frames,
    }
    _write_sidecar(path, sidecar)


def load_channel_series(path) -> ChannelSeries:
    meta = _read_sidecar(path)
    return ChannelSeries(
        meta["modality"],
        meta["channel_names"],
        meta["frame_rate"],
        read_tnsr(path),
        valid_frames=meta.get("valid_frames", -1),
    )


def save_fvtc(path, fvtc: FvtcTensor, modality: str):
    write_tnsr(path, fvtc.values)
    _write_sidecar(
        path,
        {
            "kind": "fvtc",
            "modality": modality,
            "D": fvtc.max_delay,
            "n_channels": fvtc.n_channels,
            "degenerate_flags": list(fvtc.degenerate_channels),
            "range_violations": fvtc.range_violations,
        },
    )


def load_fvtc(path) -> FvtcTensor:
    meta = _read_sidecar(path)
    return FvtcTensor(
        read_tnsr(path),
        meta["n_channels"],
        meta["D"],
        meta.get("degenerate_flags", []),
        meta.get("range_violations", 0),
    )


def save_text_grid(path, grid: TextGrid, s_max: int, w_max: int):
    write_tnsr(path, grid.values)
    _write_sidecar(
        path,
        {
            "kind": "text_grid",
            "S_max": s_max,
            "W_max": w_max,
            "n_sentences": grid.n_sentences,
            "mask": grid.mask.astype(int).tolist(),
            "truncated_sentences": grid.truncated_sentences,
            "truncated_words": grid.truncated_words,
        },
    )


def load_text_grid(path) -> TextGrid:
    meta = _read_sidecar(path)
    return TextGrid(
        read_tnsr(path),
        np.array(meta["mask"], dtype=bool),
        meta["n_sentences"],
        meta.get("truncated_sentences", 0),
        meta.get("truncated_words", 0),
    )


def _write_sidecar(tnsr_path, payload: dict):
    Path(str(tnsr_path) + ".json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def _read_sidecar(tnsr_path) -> dict:
    return json.loads(Path(str(tnsr_path) + ".json").read_text(encoding="utf-8"))
