"""Run configuration: one JSON document with a section per pipeline stage.

``default.json`` (committed under ``configs/``) states every default
explicitly; a user file only needs the keys it overrides. Unknown sections
or keys are rejected rather than ignored, so typos fail loudly.
"""

import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .models import ModelConfig
from .synth import CohortSpec
from .training import GridSpec, TrainConfig

SECTIONS = ("data", "features", "model", "train", "eval", "ablation")

# JSON arrays that become tuples on the dataclasses
_TUPLE_FIELDS = {
    "subjects_per_class", "sessions_per_class", "duration_range_s",
    "lrs", "lr_patiences", "early_stop_patiences", "lr_factors",
    "segment_lengths_s",
}

_CHECKPOINT_KEYS = ("audio_checkpoint", "video_checkpoint", "text_checkpoint")


def _build(cls, payload: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ValueError(f"unknown {what} keys: {', '.join(unknown)}")
    coerced = {
        k: tuple(v) if k in _TUPLE_FIELDS and v is not None else v
        for k, v in payload.items()
    }
    return cls(**coerced)


@dataclass
class FeatureConfig:
    """Segmentation windows and correlation delays per modality."""

    audio_window_s: float = 40.0
    audio_overlap_s: float = 5.0
    audio_max_delay: int = 50
    video_window_s: float = 20.0
    video_overlap_s: float = 5.0
    video_max_delay: int = 45
    per_lag_means: bool = False

    def __post_init__(self):
        for mod in ("audio", "video"):
            window = getattr(self, f"{mod}_window_s")
            overlap = getattr(self, f"{mod}_overlap_s")
            if window <= 0 or overlap < 0 or overlap >= window:
                raise ValueError(
                    f"{mod} window/overlap ({window}, {overlap}) must satisfy "
                    "0 <= overlap < window"
                )
            if getattr(self, f"{mod}_max_delay") < 1:
                raise ValueError(f"{mod}_max_delay must be positive")


@dataclass
class EvalConfig:
    n_resamples: int = 1000
    bootstrap_seed: int = 0

    def __post_init__(self):
        if self.n_resamples < 1:
            raise ValueError("n_resamples must be positive")


@dataclass
class AblationConfig:
    split: str = "test"

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class RunConfig:
    data: CohortSpec
    features: FeatureConfig
    model: ModelConfig
    train: TrainConfig
    eval: EvalConfig
    ablation: AblationConfig
    grid: GridSpec
    checkpoints: dict  # optional explicit paths to trained unimodal models

    def to_dict(self) -> dict:
        """The fully resolved document, ready to echo into an output dir."""
        train = self.train.to_dict()
        train["grid"] = {
            "lrs": list(self.grid.lrs),
            "lr_patiences": list(self.grid.lr_patiences),
            "early_stop_patiences": list(self.grid.early_stop_patiences),
            "lr_factors": list(self.grid.lr_factors),
            "segment_lengths_s": (
                None if self.grid.segment_lengths_s is None
                else list(self.grid.segment_lengths_s)
            ),
        }
        for key in _CHECKPOINT_KEYS:
            train[key] = self.checkpoints.get(key)
        data = {f.name: getattr(self.data, f.name) for f in fields(self.data)}
        for key in ("subjects_per_class", "sessions_per_class", "duration_range_s"):
            data[key] = list(data[key])
        return {
            "data": data,
            "features": {f.name: getattr(self.features, f.name) for f in fields(self.features)},
            "model": self.model.to_dict(),
            "train": train,
            "eval": {f.name: getattr(self.eval, f.name) for f in fields(self.eval)},
            "ablation": {f.name: getattr(self.ablation, f.name) for f in fields(self.ablation)},
        }


def default_payload() -> dict:
    text = resources.files("gatedfusion").joinpath("configs/default.json").read_text(
        encoding="utf-8"
    )
    return json.loads(text)


def _merge_section(base: dict, override: dict, section: str):
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key].update(value)
        else:
            base[key] = value


def load_config(path=None) -> RunConfig:
    """Defaults merged with an optional user file, fully validated."""
    payload = default_payload()
    if path is not None:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(user, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = sorted(set(user) - set(SECTIONS))
        if unknown:
            raise ValueError(f"unknown config sections: {', '.join(unknown)}")
        for section, override in user.items():
            if not isinstance(override, dict):
                raise ValueError(f"config section {section!r} must be an object")
            _merge_section(payload[section], override, section)
    return from_payload(payload)


def from_payload(payload: dict) -> RunConfig:
    unknown = sorted(set(payload) - set(SECTIONS))
    if unknown:
        raise ValueError(f"unknown config sections: {', '.join(unknown)}")
    missing = sorted(set(SECTIONS) - set(payload))
    if missing:
        raise ValueError(f"missing config sections: {', '.join(missing)}")

    train_payload = dict(payload["train"])
    grid_payload = train_payload.pop("grid", {})
    checkpoints = {
        key: train_payload.pop(key, None) for key in _CHECKPOINT_KEYS
    }
    return RunConfig(
        data=_build(CohortSpec, payload["data"], "data"),
        features=_build(FeatureConfig, payload["features"], "features"),
        model=ModelConfig.from_dict(payload["model"]),
        train=TrainConfig.from_dict(train_payload),
        eval=_build(EvalConfig, payload["eval"], "eval"),
        ablation=_build(AblationConfig, payload["ablation"], "ablation"),
        grid=_build(GridSpec, grid_payload, "train.grid"),
        checkpoints={k: v for k, v in checkpoints.items() if v is not None},
    )


def write_resolved(directory, config: RunConfig):
    """Echo the merged configuration next to the artifacts it produced."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = directory / "resolved_config.json"
    out.write_text(
        json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return out
