"""Pipeline configuration: a flat, strictly-parsed key-value file.

Keys carry explicit units in their names (``n_window_days``), every value
is validated on load, and unknown keys are rejected by name.  Stage
artifacts are content-addressed by a hash of the configuration so stale
checkpoint/index combinations are detectable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .crossenc import COMBINERS


@dataclass
class Config:
    # Retrieval
    k_loc: int = 20
    k_evt: int = 50
    n_window_days: int = 7
    n_min_size: int = 3
    min_clusters: int = 2
    seed: int = 123

    # Bi-encoder training
    bi_epochs: int = 10
    bi_learning_rate: float = 3e-5
    bi_batch_size: int = 256
    n_random: float = 0.5
    temperature: float = 0.07
    bi_validation_k: int = 100

    # Location cross-encoder training
    loc_epochs: int = 5
    loc_learning_rate: float = 1e-3
    loc_weight_decay: float = 1e-3
    loc_batch_size: int = 128
    loc_combiners: str = "concatenation"

    # Event cross-encoder training
    evt_epochs: int = 15
    evt_learning_rate: float = 1e-3
    evt_weight_decay: float = 1e-5
    evt_batch_size: int = 128
    evt_combiners: str = "concatenation,multiplication,difference"

    # Shared by both cross-encoders
    n_negative: int = 4

    # Metric thresholds and weights
    great_t_decade: float = 5.0
    great_t_year: float = 10.0
    great_t_month: float = 6.0
    great_t_day: float = 15.0
    great_w_century: float = 1.0
    great_w_decade: float = 1.0
    great_w_year: float = 1.0
    great_w_month: float = 1.0
    great_w_day: float = 1.0
    great_date_weight: float = 0.5
    great_loc_weight: float = 0.5
    delta_form: str = "inverse"
    co_delta_form: str = "inverse"

    # Paths
    corpus_path: str = ""
    images_path: str = ""
    labels_path: str = ""
    image_embeddings_path: str = ""
    caption_embeddings_path: str = ""
    template_embeddings_path: str = ""
    gazetteer_path: str = ""
    checkpoints_dir: str = ""
    event_embedder: str = "hash"
    event_embedder_command: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("k_loc", "k_evt", "n_min_size", "min_clusters"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("bi_epochs", "loc_epochs", "evt_epochs", "n_window_days", "n_negative"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.n_random <= 1.0:
            raise ValueError(f"n_random must be in [0, 1], got {self.n_random}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        for name in (
            "bi_learning_rate",
            "loc_learning_rate",
            "evt_learning_rate",
            "great_t_decade",
            "great_t_year",
            "great_t_month",
            "great_t_day",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in (
            "great_w_century",
            "great_w_decade",
            "great_w_year",
            "great_w_month",
            "great_w_day",
            "great_date_weight",
            "great_loc_weight",
            "loc_weight_decay",
            "evt_weight_decay",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.great_date_weight + self.great_loc_weight <= 0:
            raise ValueError("great_date_weight + great_loc_weight must be positive")
        for name in ("delta_form", "co_delta_form"):
            if getattr(self, name) not in ("inverse", "linear"):
                raise ValueError(f"{name} must be 'inverse' or 'linear'")
        if self.event_embedder not in ("hash", "command"):
            raise ValueError("event_embedder must be 'hash' or 'command'")
        for name in ("loc_combiners", "evt_combiners"):
            for combiner in self.combiner_tuple(name):
                if combiner not in COMBINERS:
                    raise ValueError(f"{name}: unknown combiner {combiner!r}")

    def combiner_tuple(self, which: str) -> tuple[str, ...]:
        raw = getattr(self, which)
        return tuple(c.strip() for c in raw.split(",") if c.strip())

    def date_thresholds(self) -> dict[str, float]:
        return {
            "decade": self.great_t_decade,
            "year": self.great_t_year,
            "month": self.great_t_month,
            "day": self.great_t_day,
        }

    def date_weights(self) -> dict[str, float]:
        return {
            "century": self.great_w_century,
            "decade": self.great_w_decade,
            "year": self.great_w_year,
            "month": self.great_w_month,
            "day": self.great_w_day,
        }

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        """Content hash for stale-artifact detection in checkpoint names."""
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]

    def artifact_path(self, name: str, ext: str) -> Path:
        """Checkpoint/index path content-addressed by this configuration."""
        base = Path(self.checkpoints_dir or ".")
        return base / f"{name}.{self.hash()}.{ext}"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def load_config(path) -> Config:
    """Parse and validate a config file; unknown keys are named and rejected."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _FIELD_TYPES:
                raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
            if key in values:
                raise ValueError(f"{path}:{line_no}: duplicate config key {key!r}")
            values[key] = _parse_value(key, value, line_no, path)
    return Config(**values)


def _parse_value(key: str, value: str, line_no: int, path):
    declared = str(_FIELD_TYPES[key])
    try:
        if "int" in declared:
            return int(value)
        if "float" in declared:
            return float(value)
    except ValueError:
        raise ValueError(
            f"{path}:{line_no}: key {key!r} expects a number, got {value!r}"
        ) from None
    return value
