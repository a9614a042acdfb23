"""Synthetic multimodal cohort generator.

The real interview corpus is private, so this module fabricates one with the
same shape: three diagnostic groups, one to five sessions per subject, an
8-channel articulatory series, a 10-channel facial series, and a transcript
per session. Class signal is planted where the models can reach it — in the
cross-channel coupling of a first-order vector-autoregressive process (which
delayed correlations pick up) and in class-specific marker-token rates (which
the text branch picks up). A single ``separation`` knob scales both.

Modalities carry complementary information on purpose: the series separate
the healthy group from the diagnosed groups sharply but the two diagnosed
groups only weakly, while the transcripts do the opposite. No single modality
suffices at moderate separation, which is what makes fusion worth testing.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .features import AUDIO_CHANNELS, VIDEO_CHANNELS, ChannelSeries

CLASS_NAMES = ("HC", "M-SZ", "P-SZ")
HC, M_SZ, P_SZ = 0, 1, 2

BPRS_ITEMS = (
    "somatic concern",
    "anxiety",
    "emotional withdrawal",
    "conceptual disorganization",
    "guilt feelings",
    "tension",
    "mannerisms and posturing",
    "grandiosity",
    "depressive mood",
    "hostility",
    "suspiciousness",
    "hallucinatory behavior",
    "motor retardation",
    "uncooperativeness",
    "unusual thought content",
    "blunted affect",
    "excitement",
    "disorientation",
)
# rating-scale item groups driving the class rule (0-based indices)
POSITIVE_ITEMS = (3, 7, 11, 14)  # disorganization, grandiosity, hallucinations, unusual thought
NEGATIVE_ITEMS = (2, 12, 15)  # withdrawal, motor retardation, blunted affect
POSITIVE_THRESHOLD = 3.5


@dataclass
class SubjectProfile:
    subject_id: str
    diagnosed: bool
    bprs: np.ndarray  # 18 item scores, each 1..7
    label: int
    n_sessions: int

    def __post_init__(self):
        self.bprs = np.asarray(self.bprs, dtype=np.int64)
        if not 1 <= self.n_sessions <= 5:
            raise ValueError(f"{self.subject_id}: session count must be 1..5")
        expected = assign_class(self.diagnosed, self.bprs)
        if expected != self.label:
            raise ValueError(
                f"{self.subject_id}: stored label {self.label} inconsistent with "
                f"item scores (rule says {expected})"
            )


@dataclass
class SessionRecord:
    subject_id: str
    session_id: str
    label: int
    duration_s: float
    audio: ChannelSeries
    video: ChannelSeries
    text: str


@dataclass
class CohortSpec:
    """Everything that determines a cohort, bit for bit."""

    subjects_per_class: tuple = (14, 16, 10)
    sessions_per_class: tuple = (54, 56, 30)
    separation: float = 0.5
    noise_level: float = 1.0
    audio_rate: float = 25.0
    video_rate: float = 10.0
    duration_range_s: tuple = (240.0, 720.0)
    vocab_size: int = 120
    markers_per_class: int = 6
    embedding_dim: int = 100
    seed: int = 0

    def __post_init__(self):
        self.subjects_per_class = tuple(int(n) for n in self.subjects_per_class)
        self.sessions_per_class = tuple(int(n) for n in self.sessions_per_class)
        self.duration_range_s = tuple(float(d) for d in self.duration_range_s)
        if len(self.subjects_per_class) != 3 or len(self.sessions_per_class) != 3:
            raise ValueError("exactly three classes")
        for n_subj, n_sess in zip(self.subjects_per_class, self.sessions_per_class):
            if n_subj < 1 or n_sess < 1:
                raise ValueError("subject and session counts must be positive")
            if not n_subj <= n_sess <= 5 * n_subj:
                raise ValueError(
                    f"{n_sess} sessions cannot be spread over {n_subj} subjects "
                    "at 1-5 sessions each"
                )
        if not 0.0 <= self.separation <= 1.0:
            raise ValueError("separation must be in [0, 1]")
        if self.noise_level <= 0:
            raise ValueError("noise level must be positive")
        lo, hi = self.duration_range_s
        if not 0 < lo <= hi:
            raise ValueError("bad duration range")

    @classmethod
    def tiny(cls, seed: int = 0) -> "CohortSpec":
        """Smallest legal cohort: three subjects per class, short sessions."""
        return cls(
            subjects_per_class=(3, 3, 3),
            sessions_per_class=(6, 6, 6),
            duration_range_s=(60.0, 120.0),
            seed=seed,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("subjects_per_class", "sessions_per_class", "duration_range_s"):
            out[key] = list(out[key])
        return out


def assign_class(diagnosed: bool, bprs) -> int:
    """Healthy stays HC; diagnosed subjects split on the positive-item mean.

    Mean of the four positive-symptom items at or above 3.5 is the prominent
    group, anything below is the mixed group.
    """
    bprs = np.asarray(bprs)
    if bprs.shape != (18,):
        raise ValueError(f"expected 18 item scores, got shape {bprs.shape}")
    if bprs.min() < 1 or bprs.max() > 7:
        raise ValueError("item scores must lie in 1..7")
    if not diagnosed:
        return HC
    if bprs[list(POSITIVE_ITEMS)].mean() >= POSITIVE_THRESHOLD:
        return P_SZ
    return M_SZ


# ---------------------------------------------------------------------------
# generator internals


def _subject_rng(seed: int, subject_index: int) -> np.random.Generator:
    # stable per-subject streams so generation order (or parallelism) cannot
    # change the output
    return np.random.default_rng((seed, 1 + subject_index))


def _cohort_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng((seed, 0))


def _stable_matrix(rng: np.random.Generator, build, max_tries: int = 50):
    """Draw candidate coupling matrices until the spectral radius is < 0.95."""
    for _ in range(max_tries):
        A = build(rng)
        radius = np.max(np.abs(np.linalg.eigvals(A)))
        if radius < 0.95:
            return A
    raise RuntimeError(f"no stable coupling matrix after {max_tries} draws")


def _coupling_matrices(
    rng: np.random.Generator, n_channels: int, separation: float, shared_fraction: float
):
    """One VAR coupling matrix per class.

    All classes share a base matrix; each adds a class perturbation scaled by
    ``separation`` (zero separation → identical dynamics). The two diagnosed
    classes share ``shared_fraction`` of their perturbation, which controls
    how much harder they are to tell apart than diagnosed-vs-healthy.
    """
    scale = 0.55 / np.sqrt(n_channels)
    base = _stable_matrix(
        rng, lambda r: scale * r.standard_normal((n_channels, n_channels))
    )
    if separation == 0.0:
        return [base, base, base]
    shared = rng.standard_normal((n_channels, n_channels))
    strength = separation * 0.35 / np.sqrt(n_channels)
    out = []
    for label in range(3):

        def candidate(r, _label=label):
            own = r.standard_normal((n_channels, n_channels))
            if _label == HC:
                d = own
            else:
                d = shared_fraction * shared + (1.0 - shared_fraction) * own
            return base + strength * d / np.linalg.norm(d) * np.sqrt(n_channels)

        out.append(_stable_matrix(rng, candidate))
    return out


def _var_series(
    rng: np.random.Generator, A: np.ndarray, n_frames: int, noise: float, burn_in: int = 100
) -> np.ndarray:
    """x(t+1) = A·x(t) + η, returned as (C, T) after a burn-in."""
    C = A.shape[0]
    eta = noise * rng.standard_normal((burn_in + n_frames, C))
    out = np.empty((burn_in + n_frames, C))
    x = eta[0]
    out[0] = x
    for t in range(1, burn_in + n_frames):
        x = A @ x + eta[t]
        out[t] = x
    return out[burn_in:].T.copy()


def _marker_rates(separation: float) -> np.ndarray:
    """rates[c, m]: probability a class-c token comes from marker pool m.

    Equal across classes at zero separation. The healthy class gets a muted
    boost on its own pool so transcripts mostly discriminate the two
    diagnosed classes.
    """
    base = 0.05
    rates = np.full((3, 3), base)
    for c in range(3):
        boost = 0.35 * separation * (0.4 if c == HC else 1.0)
        rates[c, c] = base + boost
    return rates


def _session_text(
    rng: np.random.Generator,
    label: int,
    duration_s: float,
    vocab: list,
    markers: list,
    rates: np.ndarray,
) -> str:
    n_sentences = max(3, int(round(duration_s / 30.0)))
    sentences = []
    for _ in range(n_sentences):
        length = int(rng.integers(4, 13))
        words = []
        for _ in range(length):
            u = rng.random()
            edges = np.cumsum(rates[label])
            pool = int(np.searchsorted(edges, u))
            if pool < 3:
                words.append(markers[pool][int(rng.integers(len(markers[pool])))])
            else:
                words.append(vocab[int(rng.integers(len(vocab)))])
        sentences.append(" ".join(words).capitalize() + ".")
    return " ".join(sentences)


def _build_vocabulary(rng: np.random.Generator, spec: CohortSpec):
    """Pseudo-word vocabulary, three marker pools, and a unit-norm table."""
    consonants = "bcdfgklmnprstvz"
    vowels = "aeiou"

    def word(r):
        n = int(r.integers(2, 5))
        return "".join(
            consonants[int(r.integers(len(consonants)))] + vowels[int(r.integers(len(vowels)))]
            for _ in range(n)
        )

    seen = set()
    def fresh(r):
        for _ in range(1000):
            w = word(r)
            if w not in seen:
                seen.add(w)
                return w
        raise RuntimeError("vocabulary exhausted")

    vocab = [fresh(rng) for _ in range(spec.vocab_size)]
    markers = [
        [fresh(rng) for _ in range(spec.markers_per_class)] for _ in range(3)
    ]
    table = {}
    for w in vocab + [m for pool in markers for m in pool]:
        v = rng.standard_normal(spec.embedding_dim)
        table[w] = v / np.linalg.norm(v)
    return vocab, markers, table


def _session_allocation(n_sessions: int, n_subjects: int) -> list:
    """Spread sessions over subjects, 1-5 each, deterministically."""
    base, rem = divmod(n_sessions, n_subjects)
    counts = [base + 1 if i < rem else base for i in range(n_subjects)]
    if counts[0] > 5 or counts[-1] < 1:
        raise ValueError(
            f"cannot allocate {n_sessions} sessions over {n_subjects} subjects"
        )
    return counts


def _sample_bprs(rng: np.random.Generator, label: int) -> np.ndarray:
    """Item scores consistent with the class rule by construction."""
    if label == HC:
        return rng.integers(1, 3, size=18, endpoint=True)
    scores = rng.integers(1, 5, size=18, endpoint=True)
    for idx in NEGATIVE_ITEMS:
        scores[idx] = rng.integers(2, 6, endpoint=True)
    pos = list(POSITIVE_ITEMS)
    if label == P_SZ:
        while True:
            scores[pos] = rng.integers(3, 7, size=4, endpoint=True)
            if scores[pos].mean() >= POSITIVE_THRESHOLD:
                return scores
    while True:
        scores[pos] = rng.integers(1, 4, size=4, endpoint=True)
        if scores[pos].mean() < POSITIVE_THRESHOLD:
            return scores


def generate_cohort(spec: CohortSpec):
    """Build the full cohort.

    Returns (profiles, sessions, embedding_table). Deterministic in
    ``spec.seed``; subjects draw from independent derived streams, so the
    result does not depend on generation order.
    """
    cohort_rng = _cohort_rng(spec.seed)
    vocab, markers, table = _build_vocabulary(cohort_rng, spec)
    audio_A = _coupling_matrices(
        cohort_rng, len(AUDIO_CHANNELS), spec.separation, shared_fraction=0.75
    )
    video_A = _coupling_matrices(
        cohort_rng, len(VIDEO_CHANNELS), spec.separation, shared_fraction=0.75
    )
    rates = _marker_rates(spec.separation)

    profiles = []
    sessions = []
    subject_index = 0
    for label in range(3):
        counts = _session_allocation(
            spec.sessions_per_class[label], spec.subjects_per_class[label]
        )
        for k, n_sess in enumerate(counts):
            rng = _subject_rng(spec.seed, subject_index)
            subject_id = f"S{subject_index:03d}"
            profile = SubjectProfile(
                subject_id=subject_id,
                diagnosed=label != HC,
                bprs=_sample_bprs(rng, label),
                label=label,
                n_sessions=n_sess,
            )
            profiles.append(profile)
            lo, hi = spec.duration_range_s
            for s in range(n_sess):
                duration = float(rng.uniform(lo, hi))
                n_audio = int(round(duration * spec.audio_rate))
                n_video = int(round(duration * spec.video_rate))
                audio = ChannelSeries(
                    "audio",
                    list(AUDIO_CHANNELS),
                    spec.audio_rate,
                    _var_series(rng, audio_A[label], n_audio, spec.noise_level),
                )
                video = ChannelSeries(
                    "video",
                    list(VIDEO_CHANNELS),
                    spec.video_rate,
                    _var_series(rng, video_A[label], n_video, spec.noise_level),
                )
                text = _session_text(rng, label, duration, vocab, markers, rates)
                sessions.append(
                    SessionRecord(
                        subject_id=subject_id,
                        session_id=f"{subject_id}_sess{s:02d}",
                        label=label,
                        duration_s=duration,
                        audio=audio,
                        video=video,
                        text=text,
                    )
                )
            subject_index += 1
    return profiles, sessions, table
