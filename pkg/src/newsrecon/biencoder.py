"""Trainable projection heads over frozen image/caption embeddings.

The retrieval backbone stays frozen; what trains is a linear head per side,
initialized identity-like so that epoch 0 reproduces the frozen baseline.
Training uses a symmetric temperature-scaled contrastive loss over in-batch
pairs and a batch builder that guarantees no caption in a batch is
event-relevant to more than one image in it.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

from .embedstore import (
    EmbeddingMatrix,
    SearchHit,
    _write_artifact,
    read_artifact,
    split_row_id,
    top_k,
)
from .labeling import RelevanceLabels

MAGIC_HEADS = b"NRHD"


@dataclass
class ProjectionHead:
    """One linear projection: row vector -> row vector, then L2 normalize."""

    weight: np.ndarray  # (dim_in, dim_out) float32
    bias: np.ndarray  # (dim_out,) float32

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError(
                f"inconsistent head shapes {self.weight.shape} / {self.bias.shape}"
            )
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ValueError("non-finite head parameters")

    @property
    def dim_in(self) -> int:
        return self.weight.shape[0]

    @property
    def dim_out(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def identity(cls, dim_in: int, dim_out: int | None = None) -> "ProjectionHead":
        """Truncated-identity initialization: epoch 0 equals the frozen baseline."""
        dim_out = dim_in if dim_out is None else dim_out
        weight = np.zeros((dim_in, dim_out), dtype=np.float32)
        for i in range(min(dim_in, dim_out)):
            weight[i, i] = 1.0
        return cls(weight=weight, bias=np.zeros(dim_out, dtype=np.float32))

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(self.weight.copy(), self.bias.copy())

    def project(self, vectors: np.ndarray) -> np.ndarray:
        """Project and renormalize rows (float64 math, float64 result)."""
        x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        z = x @ self.weight.astype(np.float64) + self.bias.astype(np.float64)
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        norms[norms < 1e-12] = 1e-12
        out = z / norms
        return out[0] if np.asarray(vectors).ndim == 1 else out

    def project_matrix(self, matrix: EmbeddingMatrix) -> EmbeddingMatrix:
        projected = self.project(matrix.data).astype(np.float32)
        return EmbeddingMatrix(ids=list(matrix.ids), data=projected)


def save_heads(image_head: ProjectionHead, text_head: ProjectionHead, path) -> None:
    if image_head.dim_out != text_head.dim_out:
        raise ValueError("heads disagree on output dimension")
    body = struct.pack(
        "<III", image_head.dim_in, text_head.dim_in, image_head.dim_out
    )
    for head in (image_head, text_head):
        body += head.weight.astype("<f4").tobytes()
        body += head.bias.astype("<f4").tobytes()
    _write_artifact(path, MAGIC_HEADS, body)


def load_heads(path) -> tuple[ProjectionHead, ProjectionHead]:
    body = read_artifact(path, MAGIC_HEADS)
    if len(body) < 12:
        raise ValueError("head checkpoint header truncated")
    img_in, txt_in, dim_out = struct.unpack_from("<III", body, 0)
    pos = 12
    heads = []
    for dim_in in (img_in, txt_in):
        w_count = dim_in * dim_out
        weight = np.frombuffer(body, dtype="<f4", count=w_count, offset=pos)
        pos += w_count * 4
        bias = np.frombuffer(body, dtype="<f4", count=dim_out, offset=pos)
        pos += dim_out * 4
        heads.append(
            ProjectionHead(weight.reshape(dim_in, dim_out).copy(), bias.copy())
        )
    return heads[0], heads[1]


@dataclass
class BiEncoderTrainConfig:
    epochs: int = 10
    learning_rate: float = 3e-5
    batch_size: int = 256
    n_random: float = 0.5
    temperature: float = 0.07
    seed: int = 123
    validation_k: int = 100
    projection_dim: int | None = None
    momentum: float = 0.0
    weight_decay: float = 0.0
    max_resamples: int = 64

    def __post_init__(self):
        if not 0.0 <= self.n_random <= 1.0:
            raise ValueError(f"n_random must be in [0, 1], got {self.n_random}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


@dataclass
class TrainBatch:
    """(image id, caption row id) pairs plus the forbidden captions accumulated."""

    pairs: list[tuple[str, str]] = field(default_factory=list)
    forbidden: set[str] = field(default_factory=set)
    n_supervised: int = 0
    consumed: int = 0  # candidate images examined, including skipped ones


def info_nce_loss(
    image_vecs: np.ndarray, caption_vecs: np.ndarray, temperature: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Symmetric in-batch contrastive loss with analytic gradients.

    Rows are matched pairs of unit vectors.  Each direction applies a
    softmax over all candidates in the batch at the given temperature; the
    loss is the mean cross-entropy of the diagonal, averaged over the two
    directions.  Returns (loss, dL/d image_vecs, dL/d caption_vecs).
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    U = np.atleast_2d(np.asarray(image_vecs, dtype=np.float64))
    V = np.atleast_2d(np.asarray(caption_vecs, dtype=np.float64))
    if U.shape != V.shape:
        raise ValueError(f"shape mismatch {U.shape} vs {V.shape}")
    B = U.shape[0]
    logits = (U @ V.T) / temperature

    def _row_softmax(a: np.ndarray) -> np.ndarray:
        shifted = a - a.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    P = _row_softmax(logits)       # image -> captions
    Q = _row_softmax(logits.T)     # caption -> images
    eye = np.eye(B)
    tiny = 1e-300
    loss_i2t = -np.log(np.maximum(np.diag(P), tiny)).mean()
    loss_t2i = -np.log(np.maximum(np.diag(Q), tiny)).mean()
    loss = 0.5 * (loss_i2t + loss_t2i)

    d_logits = 0.5 / B * ((P - eye) + (Q - eye).T)
    d_scores = d_logits / temperature
    grad_img = d_scores @ V
    grad_cap = d_scores.T @ U
    return float(loss), grad_img, grad_cap


def build_batch(
    candidate_images: list[str],
    eligible_random_articles: list[str],
    labels: dict[str, RelevanceLabels],
    caption_rows: dict[str, list[str]],
    cfg: BiEncoderTrainConfig,
    rng: np.random.Generator,
) -> TrainBatch:
    """Assemble one training batch under the forbidden-caption rule.

    ceil((1-n_random)*B) pairs couple a train image with a caption of one of
    its event-relevant articles; floor(n_random*B) pairs couple a corpus
    article (event-relevant to no train image) with its own caption.  A
    candidate caption already forbidden — event-relevant to an image already
    in the batch — is resampled; an image whose inclusion would make an
    existing batch caption doubly relevant is skipped.  If candidates run
    out the batch is emitted short.
    """
    B = cfg.batch_size
    n_supervised = int(np.ceil((1.0 - cfg.n_random) * B))
    n_random = int(np.floor(cfg.n_random * B))

    batch = TrainBatch()
    batch_caption_articles: set[str] = set()

    cursor = 0
    while len(batch.pairs) < n_supervised and cursor < len(candidate_images):
        image_id = candidate_images[cursor]
        cursor += 1
        image_labels = labels.get(image_id)
        if image_labels is None or not image_labels.event_relevant:
            continue
        # An already-batched caption that is relevant to this image would
        # become relevant to two images; the image cannot join this batch.
        if batch_caption_articles & image_labels.event_relevant:
            continue
        relevant = sorted(
            a for a in image_labels.event_relevant if caption_rows.get(a)
        )
        if not relevant:
            continue
        chosen = None
        for _ in range(cfg.max_resamples):
            article_id = relevant[rng.integers(len(relevant))]
            rows = caption_rows[article_id]
            row_id = rows[rng.integers(len(rows))]
            if row_id not in batch.forbidden:
                chosen = (article_id, row_id)
                break
        if chosen is None:
            continue
        batch.pairs.append((image_id, chosen[1]))
        batch_caption_articles.add(chosen[0])
        for article_id in image_labels.event_relevant:
            batch.forbidden.update(caption_rows.get(article_id, ()))
    batch.n_supervised = len(batch.pairs)
    batch.consumed = cursor
    if batch.n_supervised < n_supervised and cursor >= len(candidate_images):
        log.warning(
            "emitting short batch: %d of %d supervised pairs (candidates exhausted)",
            batch.n_supervised,
            n_supervised,
        )

    if n_random and eligible_random_articles:
        take = min(n_random, len(eligible_random_articles))
        picks = rng.choice(len(eligible_random_articles), size=take, replace=False)
        for idx in sorted(picks):
            article_id = eligible_random_articles[idx]
            rows = caption_rows[article_id]
            row_id = rows[rng.integers(len(rows))]
            # The article's own image pairs with its own caption.
            batch.pairs.append((article_id, row_id))
    return batch


def eligible_random_articles(
    labels: dict[str, RelevanceLabels],
    caption_rows: dict[str, list[str]],
    train_image_ids: list[str],
) -> list[str]:
    """Corpus articles event-relevant to no train image (random-pair pool)."""
    relevant_somewhere: set[str] = set()
    for image_id in train_image_ids:
        image_labels = labels.get(image_id)
        if image_labels:
            relevant_somewhere |= image_labels.event_relevant
    return sorted(a for a in caption_rows if a not in relevant_somewhere and caption_rows[a])


def recall_at_k(
    image_head: ProjectionHead,
    projected_captions: EmbeddingMatrix,
    image_store: EmbeddingMatrix,
    labels: dict[str, RelevanceLabels],
    image_ids: list[str],
    k: int,
) -> float:
    """Fraction of images with >=1 event-relevant article in the top k."""
    evaluated = 0
    hits = 0
    for image_id in image_ids:
        image_labels = labels.get(image_id)
        if image_labels is None or not image_labels.event_relevant:
            continue
        if image_id not in image_store:
            continue
        evaluated += 1
        query = image_head.project(image_store.row(image_id))
        results = top_k(query, projected_captions, k)
        if any(hit.article_id in image_labels.event_relevant for hit in results):
            hits += 1
    return hits / evaluated if evaluated else 0.0


def train_biencoder(
    image_store: EmbeddingMatrix,
    caption_store: EmbeddingMatrix,
    labels: dict[str, RelevanceLabels],
    train_image_ids: list[str],
    dev_image_ids: list[str],
    cfg: BiEncoderTrainConfig,
) -> tuple[ProjectionHead, ProjectionHead, list[dict]]:
    """Train both heads; return the best-epoch checkpoint and the epoch log.

    Plain mini-batch gradient descent (momentum and weight decay are config
    options, off by default).  After each epoch the dev recall@k of
    event-relevant articles is measured and the best-epoch heads are kept.
    Bit-deterministic for a fixed config and seed on one machine.
    """
    rng = np.random.default_rng(cfg.seed)
    dim = image_store.dim
    image_head = ProjectionHead.identity(dim, cfg.projection_dim)
    text_head = ProjectionHead.identity(caption_store.dim, cfg.projection_dim)

    caption_rows: dict[str, list[str]] = {}
    for row_id in caption_store.ids:
        article_id, _ = split_row_id(row_id)
        caption_rows.setdefault(article_id, []).append(row_id)
    random_pool = eligible_random_articles(labels, caption_rows, train_image_ids)

    vel_iw = np.zeros_like(image_head.weight, dtype=np.float64)
    vel_ib = np.zeros_like(image_head.bias, dtype=np.float64)
    vel_tw = np.zeros_like(text_head.weight, dtype=np.float64)
    vel_tb = np.zeros_like(text_head.bias, dtype=np.float64)

    def dev_recall() -> float:
        projected = text_head.project_matrix(caption_store)
        return recall_at_k(
            image_head, projected, image_store, labels, dev_image_ids, cfg.validation_k
        )

    best = (dev_recall(), image_head.copy(), text_head.copy())
    log: list[dict] = []

    for epoch in range(cfg.epochs):
        order = list(train_image_ids)
        rng.shuffle(order)
        epoch_losses: list[float] = []
        cursor = 0
        batch_index = 0
        n_supervised = int(np.ceil((1.0 - cfg.n_random) * cfg.batch_size))
        while cursor < len(order):
            window = order[cursor:]
            batch = build_batch(
                window, random_pool, labels, caption_rows, cfg, rng
            )
            # Pure-random configs consume no images; treat a batch as one
            # pass worth of candidates so the epoch terminates.
            cursor += max(batch.consumed, 1 if n_supervised else cfg.batch_size)
            if len(batch.pairs) < 2:
                continue
            image_ids = [p[0] for p in batch.pairs]
            row_ids = [p[1] for p in batch.pairs]
            X_img = np.stack([image_store.row(i) for i in image_ids]).astype(np.float64)
            X_cap = np.stack([caption_store.row(r) for r in row_ids]).astype(np.float64)

            loss, gU, gV = _forward_backward_step(
                image_head, text_head, X_img, X_cap, cfg,
                (vel_iw, vel_ib, vel_tw, vel_tb),
            )
            if np.isnan(loss):
                raise RuntimeError(
                    f"NaN loss at epoch {epoch} batch {batch_index} (seed {cfg.seed})"
                )
            epoch_losses.append(loss)
            batch_index += 1
        recall = dev_recall()
        log.append(
            {
                "epoch": epoch,
                "loss": float(np.mean(epoch_losses)) if epoch_losses else 0.0,
                "r_at_100": recall,
            }
        )
        if recall > best[0]:
            best = (recall, image_head.copy(), text_head.copy())

    return best[1], best[2], log


def _forward_backward_step(image_head, text_head, X_img, X_cap, cfg, velocities):
    """One SGD step through projection + normalization; returns the loss."""
    vel_iw, vel_ib, vel_tw, vel_tb = velocities

    def forward(head, X):
        z = X @ head.weight.astype(np.float64) + head.bias.astype(np.float64)
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        norms[norms < 1e-12] = 1e-12
        return z, norms, z / norms

    z_i, n_i, U = forward(image_head, X_img)
    z_c, n_c, V = forward(text_head, X_cap)
    loss, gU, gV = info_nce_loss(U, V, cfg.temperature)

    def backprop(grad_out, Y, norms, X):
        inner = (Y * grad_out).sum(axis=1, keepdims=True)
        d_z = (grad_out - Y * inner) / norms
        return X.T @ d_z, d_z.sum(axis=0)

    gW_i, gb_i = backprop(gU, U, n_i, X_img)
    gW_t, gb_t = backprop(gV, V, n_c, X_cap)

    for head, gW, gb, vW, vb in (
        (image_head, gW_i, gb_i, vel_iw, vel_ib),
        (text_head, gW_t, gb_t, vel_tw, vel_tb),
    ):
        if cfg.weight_decay:
            gW = gW + cfg.weight_decay * head.weight.astype(np.float64)
        vW *= cfg.momentum
        vW += gW
        vb *= cfg.momentum
        vb += gb
        head.weight = (head.weight.astype(np.float64) - cfg.learning_rate * vW).astype(
            np.float32
        )
        head.bias = (head.bias.astype(np.float64) - cfg.learning_rate * vb).astype(
            np.float32
        )
    return loss, gU, gV


def retrieve_event_candidates(
    image_id: str,
    image_head: ProjectionHead,
    text_head: ProjectionHead,
    image_store: EmbeddingMatrix,
    caption_store: EmbeddingMatrix,
    k: int,
    projected_captions: EmbeddingMatrix | None = None,
) -> list[SearchHit]:
    """Top-k articles for an image through the trained heads.

    Pass ``projected_captions`` (the text head applied to the caption store
    once) when querying many images against one corpus; otherwise it is
    computed here.
    """
    if image_id not in image_store:
        raise KeyError(f"no embedding for image {image_id!r}")
    if projected_captions is None:
        projected_captions = text_head.project_matrix(caption_store)
    query = image_head.project(image_store.row(image_id))
    return top_k(query, projected_captions, k)


def save_train_log(log: list[dict], path) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
