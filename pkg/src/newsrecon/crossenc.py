"""Linear cross-encoder scorers over combined frozen embedding pairs.

A scorer combines an (image, text-template) embedding pair into one feature
vector — any subset of concatenation, elementwise multiplication, and
difference — and maps it through a trained linear layer and sigmoid to a
relevance probability in (0, 1).  The location and event rerankers share
this machinery and differ only in their templates, training pairs, and
checkpoint magic.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .embedstore import _write_artifact, read_artifact

MAGIC_LOC_SCORER = b"NRXL"
MAGIC_EVT_SCORER = b"NRXE"

COMBINERS = ("concatenation", "multiplication", "difference")
_COMBINER_CODE = {name: i + 1 for i, name in enumerate(COMBINERS)}
_CODE_COMBINER = {code: name for name, code in _COMBINER_CODE.items()}

# Scores are clamped inside the open interval so downstream products and
# logs never see an exact 0 or 1.
_SCORE_EPS = 1e-12


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, _SCORE_EPS, 1.0 - _SCORE_EPS)


def combined_length(dim: int, combiners: tuple[str, ...]) -> int:
    total = 0
    for name in combiners:
        if name not in COMBINERS:
            raise ValueError(f"unknown combiner {name!r}")
        total += 2 * dim if name == "concatenation" else dim
    return total


@dataclass
class CrossScorer:
    """sigmoid(w · combine(image, text) + b)."""

    dim: int
    combiners: tuple[str, ...]
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.combiners = tuple(self.combiners)
        if not self.combiners:
            raise ValueError("scorer needs at least one combiner")
        self.weights = np.asarray(self.weights, dtype=np.float32)
        expected = combined_length(self.dim, self.combiners)
        if self.weights.shape != (expected,):
            raise ValueError(
                f"weights shape {self.weights.shape} != feature length {expected}"
            )
        if not np.isfinite(self.weights).all() or not np.isfinite(self.bias):
            raise ValueError("non-finite scorer parameters")

    @classmethod
    def zeros(cls, dim: int, combiners: tuple[str, ...]) -> "CrossScorer":
        return cls(
            dim=dim,
            combiners=tuple(combiners),
            weights=np.zeros(combined_length(dim, tuple(combiners)), dtype=np.float32),
            bias=0.0,
        )

    def features(self, image_vecs: np.ndarray, text_vecs: np.ndarray) -> np.ndarray:
        """Combined feature rows for aligned image/text embedding rows."""
        U = np.atleast_2d(np.asarray(image_vecs, dtype=np.float64))
        V = np.atleast_2d(np.asarray(text_vecs, dtype=np.float64))
        if U.shape != V.shape or U.shape[1] != self.dim:
            raise ValueError(
                f"feature inputs {U.shape}/{V.shape} do not match dim {self.dim}"
            )
        parts = []
        for name in self.combiners:
            if name == "concatenation":
                parts.append(U)
                parts.append(V)
            elif name == "multiplication":
                parts.append(U * V)
            else:
                parts.append(U - V)
        return np.concatenate(parts, axis=1)

    def score_batch(self, image_vecs: np.ndarray, text_vecs: np.ndarray) -> np.ndarray:
        f = self.features(image_vecs, text_vecs)
        z = f @ self.weights.astype(np.float64) + self.bias
        return sigmoid(z)

    def score(self, image_vec: np.ndarray, text_vec: np.ndarray) -> float:
        return float(self.score_batch(image_vec, text_vec)[0])


def save_scorer(scorer: CrossScorer, path, magic: bytes) -> None:
    body = struct.pack("<IB", scorer.dim, len(scorer.combiners))
    body += bytes(_COMBINER_CODE[name] for name in scorer.combiners)
    body += scorer.weights.astype("<f4").tobytes()
    body += struct.pack("<f", scorer.bias)
    _write_artifact(path, magic, body)


def load_scorer(path, magic: bytes) -> CrossScorer:
    body = read_artifact(path, magic)
    dim, n_comb = struct.unpack_from("<IB", body, 0)
    pos = 5
    combiners = tuple(_CODE_COMBINER[code] for code in body[pos : pos + n_comb])
    pos += n_comb
    length = combined_length(dim, combiners)
    weights = np.frombuffer(body, dtype="<f4", count=length, offset=pos).copy()
    pos += length * 4
    (bias,) = struct.unpack_from("<f", body, pos)
    return CrossScorer(dim=dim, combiners=combiners, weights=weights, bias=float(bias))


@dataclass
class CrossTrainConfig:
    epochs: int = 5
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    batch_size: int = 128
    n_negative: int = 4
    seed: int = 123


def train_cross_scorer(
    scorer: CrossScorer,
    image_vecs: np.ndarray,
    text_vecs: np.ndarray,
    targets: np.ndarray,
    cfg: CrossTrainConfig,
    dev_metric: Callable[[CrossScorer], float] | None = None,
) -> tuple[CrossScorer, list[dict]]:
    """Binary cross-entropy training over (image, text, 0/1) rows.

    Mini-batch gradient descent with weight decay; after each epoch the
    supplied dev metric (recall@1 in the pipeline) decides the best-epoch
    checkpoint.  Returns that checkpoint and the per-epoch log.
    """
    rng = np.random.default_rng(cfg.seed)
    n = len(targets)
    y = np.asarray(targets, dtype=np.float64)
    features = scorer.features(image_vecs, text_vecs) if n else None

    def snapshot() -> CrossScorer:
        return CrossScorer(
            dim=scorer.dim,
            combiners=scorer.combiners,
            weights=scorer.weights.copy(),
            bias=scorer.bias,
        )

    best_metric = dev_metric(scorer) if dev_metric else None
    best = snapshot()
    log: list[dict] = []

    for epoch in range(cfg.epochs):
        if not n:
            log.append({"epoch": epoch, "loss": 0.0, "r_at_1": best_metric})
            continue
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            f = features[idx]
            yb = y[idx]
            z = f @ scorer.weights.astype(np.float64) + scorer.bias
            p = sigmoid(z)
            loss = float(-np.mean(yb * np.log(p) + (1 - yb) * np.log(1 - p)))
            if np.isnan(loss):
                raise RuntimeError(
                    f"NaN loss at epoch {epoch} batch {start // cfg.batch_size} "
                    f"(seed {cfg.seed})"
                )
            losses.append(loss)
            dz = (p - yb) / len(idx)
            gw = f.T @ dz + cfg.weight_decay * scorer.weights.astype(np.float64)
            gb = dz.sum()
            weights = (
                scorer.weights.astype(np.float64) - cfg.learning_rate * gw
            ).astype(np.float32)
            bias = float(scorer.bias - cfg.learning_rate * gb)
            if not np.isfinite(weights).all() or not np.isfinite(bias):
                raise RuntimeError(
                    f"non-finite parameters at epoch {epoch} batch "
                    f"{start // cfg.batch_size} (seed {cfg.seed})"
                )
            scorer.weights = weights
            scorer.bias = bias
        record = {"epoch": epoch, "loss": float(np.mean(losses))}
        if dev_metric is not None:
            metric = dev_metric(scorer)
            record["r_at_1"] = metric
            if best_metric is None or metric > best_metric:
                best_metric = metric
                best = snapshot()
        else:
            best = snapshot()
        log.append(record)
    return best, log


def save_scorer_log(log: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
