"""Contrastive loss, batch construction, and head training."""

import numpy as np
import pytest

from newsrecon.biencoder import (
    BiEncoderTrainConfig,
    ProjectionHead,
    TrainBatch,
    build_batch,
    eligible_random_articles,
    info_nce_loss,
    load_heads,
    retrieve_event_candidates,
    save_heads,
    train_biencoder,
)
from newsrecon.embedstore import EmbeddingMatrix, normalize_rows, top_k
from newsrecon.labeling import RelevanceLabels


def unit_rows(rng, n, d):
    return normalize_rows(rng.standard_normal((n, d))).astype(np.float64)


def finite_difference_grads(U, V, tau, eps=1e-6):
    """Central finite differences of the loss w.r.t. both inputs."""
    gU = np.zeros_like(U)
    gV = np.zeros_like(V)
    for M, G in ((U, gU), (V, gV)):
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                orig = M[i, j]
                M[i, j] = orig + eps
                hi, _, _ = info_nce_loss(U, V, tau)
                M[i, j] = orig - eps
                lo, _, _ = info_nce_loss(U, V, tau)
                M[i, j] = orig
                G[i, j] = (hi - lo) / (2 * eps)
    return gU, gV


class TestInfoNceLoss:
    def test_single_pair_is_zero(self):
        U = np.array([[1.0, 0.0]])
        loss, gU, gV = info_nce_loss(U, U, 0.07)
        assert loss == 0.0
        np.testing.assert_allclose(gU, 0.0, atol=1e-15)
        np.testing.assert_allclose(gV, 0.0, atol=1e-15)

    def test_hand_computed_two_pairs(self):
        # Matched pairs identical, cross pairs orthogonal, tau=1:
        # loss = ln(1 + e^{-1}).
        U = np.eye(2)
        loss, _, _ = info_nce_loss(U, U, 1.0)
        assert loss == pytest.approx(np.log(1 + np.exp(-1)), abs=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        U = unit_rows(rng, 6, 8)
        V = unit_rows(rng, 6, 8)
        loss, gU, gV = info_nce_loss(U, V, 0.07)
        fU, fV = finite_difference_grads(U.copy(), V.copy(), 0.07)
        np.testing.assert_allclose(gU, fU, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(gV, fV, rtol=1e-5, atol=1e-9)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        U = unit_rows(rng, 5, 6)
        V = unit_rows(rng, 5, 6)
        loss, gU, gV = info_nce_loss(U, V, 0.5)
        perm = rng.permutation(5)
        loss_p, gU_p, gV_p = info_nce_loss(U[perm], V[perm], 0.5)
        assert loss == pytest.approx(loss_p, abs=1e-12)
        np.testing.assert_allclose(gU[perm], gU_p, atol=1e-12)
        np.testing.assert_allclose(gV[perm], gV_p, atol=1e-12)

    def test_invariant_under_common_rotation(self):
        rng = np.random.default_rng(8)
        U = unit_rows(rng, 4, 10)
        V = unit_rows(rng, 4, 10)
        Q, _ = np.linalg.qr(rng.standard_normal((10, 10)))
        loss, _, _ = info_nce_loss(U, V, 0.07)
        loss_rot, _, _ = info_nce_loss(U @ Q, V @ Q, 0.07)
        assert loss == pytest.approx(loss_rot, abs=1e-9)

    def test_invalid_temperature(self):
        U = np.eye(2)
        with pytest.raises(ValueError, match="temperature"):
            info_nce_loss(U, U, 0.0)


def make_label_world(n_images=6, n_articles=8, captions_per_article=2, shared=False):
    """Synthetic labels: image i relevant to article i (plus a shared one)."""
    caption_rows = {
        f"art{j}": [f"art{j}#{c}" for c in range(captions_per_article)]
        for j in range(n_articles)
    }
    labels = {}
    for i in range(n_images):
        relevant = {f"art{i % n_articles}"}
        if shared:
            relevant.add("art0")
        labels[f"img{i}"] = RelevanceLabels(
            image_id=f"img{i}", location_relevant=set(relevant), event_relevant=set(relevant)
        )
    return labels, caption_rows


def batch_violations(batch: TrainBatch, labels):
    """Count captions in the batch event-relevant to more than one batch image."""
    batch_images = {img for img, _ in batch.pairs}
    violations = 0
    for _, row_id in batch.pairs:
        article_id = row_id.rpartition("#")[0]
        relevant_to = {
            img
            for img in batch_images
            if img in labels and article_id in labels[img].event_relevant
        }
        if len(relevant_to) > 1:
            violations += 1
    return violations


class TestBuildBatch:
    def test_shared_article_used_at_most_once(self):
        labels, rows = make_label_world(n_images=2, n_articles=1)
        # Both images relevant ONLY to art0.
        cfg = BiEncoderTrainConfig(batch_size=2, n_random=0.0, seed=1)
        rng = np.random.default_rng(1)
        batch = build_batch(["img0", "img1"], [], labels, rows, cfg, rng)
        used = [r.rpartition("#")[0] for _, r in batch.pairs]
        assert used.count("art0") <= 1
        assert batch_violations(batch, labels) == 0

    def test_pure_random_batch(self):
        labels, rows = make_label_world(n_images=6, n_articles=16)
        cfg = BiEncoderTrainConfig(batch_size=4, n_random=1.0, seed=2)
        rng = np.random.default_rng(2)
        pool = eligible_random_articles(labels, rows, list(labels))
        batch = build_batch(list(labels), pool, labels, rows, cfg, rng)
        assert batch.n_supervised == 0
        assert len(batch.pairs) == 4
        # Self-pairs: the image id is the article id.
        assert all(img == row.rpartition("#")[0] for img, row in batch.pairs)

    def test_exact_proportions(self):
        labels, rows = make_label_world(n_images=10, n_articles=20)
        pool = eligible_random_articles(labels, rows, list(labels))
        cfg = BiEncoderTrainConfig(batch_size=8, n_random=0.5, seed=3)
        rng = np.random.default_rng(3)
        batch = build_batch(list(labels), pool, labels, rows, cfg, rng)
        assert batch.n_supervised == 4
        assert len(batch.pairs) == 8

    def test_random_pool_excludes_relevant_articles(self):
        labels, rows = make_label_world(n_images=4, n_articles=8)
        pool = eligible_random_articles(labels, rows, list(labels))
        assert set(pool) == {"art4", "art5", "art6", "art7"}

    def test_images_without_relevant_articles_skipped(self):
        labels = {
            "img0": RelevanceLabels("img0", set(), set()),
            "img1": RelevanceLabels("img1", {"art0"}, {"art0"}),
        }
        rows = {"art0": ["art0#0"]}
        cfg = BiEncoderTrainConfig(batch_size=2, n_random=0.0, seed=4)
        batch = build_batch(
            ["img0", "img1"], [], labels, rows, cfg, np.random.default_rng(4)
        )
        assert [img for img, _ in batch.pairs] == ["img1"]

    def test_adversarial_shared_labels_never_violate(self):
        # Every image shares art0; many also share art1.
        rng = np.random.default_rng(5)
        caption_rows = {f"art{j}": [f"art{j}#0", f"art{j}#1"] for j in range(6)}
        labels = {}
        for i in range(12):
            relevant = {"art0", "art1", f"art{i % 6}"}
            labels[f"img{i}"] = RelevanceLabels(f"img{i}", set(relevant), set(relevant))
        cfg = BiEncoderTrainConfig(batch_size=8, n_random=0.25, seed=6)
        for trial in range(200):
            order = list(labels)
            rng.shuffle(order)
            batch = build_batch(order, [], labels, caption_rows, cfg, rng)
            assert batch_violations(batch, labels) == 0


class TestProjectionHead:
    def test_identity_initialization_is_noop_ranking(self):
        rng = np.random.default_rng(9)
        matrix = EmbeddingMatrix(
            ids=[f"a{i}#0" for i in range(30)],
            data=normalize_rows(rng.standard_normal((30, 12))),
        )
        images = EmbeddingMatrix(
            ids=["q"], data=normalize_rows(rng.standard_normal((1, 12)))
        )
        head = ProjectionHead.identity(12)
        raw = top_k(images.data[0], matrix, 10)
        projected = retrieve_event_candidates(
            "q", head, head, images, matrix, 10
        )
        assert [h.article_id for h in raw] == [h.article_id for h in projected]
        np.testing.assert_allclose(
            [h.score for h in raw], [h.score for h in projected], atol=1e-6
        )

    def test_truncated_identity(self):
        head = ProjectionHead.identity(4, 2)
        out = head.project(np.array([3.0, 4.0, 5.0, 6.0]))
        np.testing.assert_allclose(out, np.array([3.0, 4.0]) / 5.0, atol=1e-12)

    def test_checkpoint_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        img = ProjectionHead(
            rng.standard_normal((8, 6)).astype(np.float32),
            rng.standard_normal(6).astype(np.float32),
        )
        txt = ProjectionHead(
            rng.standard_normal((10, 6)).astype(np.float32),
            rng.standard_normal(6).astype(np.float32),
        )
        path = tmp_path / "heads.nrhd"
        save_heads(img, txt, path)
        img2, txt2 = load_heads(path)
        np.testing.assert_array_equal(img.weight, img2.weight)
        np.testing.assert_array_equal(txt.bias, txt2.bias)
        # save -> load -> save byte identity
        path2 = tmp_path / "heads2.nrhd"
        save_heads(img2, txt2, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_dim_out_mismatch_rejected(self, tmp_path):
        a = ProjectionHead.identity(4, 3)
        b = ProjectionHead.identity(4, 2)
        with pytest.raises(ValueError):
            save_heads(a, b, tmp_path / "x.nrhd")


class TestTrainBiencoder:
    def _world(self, rng, n_images=12, n_articles=24, d=16):
        labels, caption_rows = {}, {}
        cap_ids, cap_rows = [], []
        img_ids, img_rows = [], []
        for j in range(n_articles):
            caption_rows[f"art{j}"] = [f"art{j}#0"]
            cap_ids.append(f"art{j}#0")
            cap_rows.append(rng.standard_normal(d))
            img_ids.append(f"art{j}")
            img_rows.append(rng.standard_normal(d))
        for i in range(n_images):
            img_ids.append(f"img{i}")
            img_rows.append(rng.standard_normal(d))
            labels[f"img{i}"] = RelevanceLabels(
                f"img{i}", {f"art{i % n_articles}"}, {f"art{i % n_articles}"}
            )
        captions = EmbeddingMatrix(cap_ids, normalize_rows(np.array(cap_rows)))
        images = EmbeddingMatrix(img_ids, normalize_rows(np.array(img_rows)))
        return labels, captions, images

    def test_zero_epochs_returns_initialization(self):
        rng = np.random.default_rng(11)
        labels, captions, images = self._world(rng)
        cfg = BiEncoderTrainConfig(epochs=0, seed=1)
        img_head, txt_head, log = train_biencoder(
            images, captions, labels, list(labels)[:8], list(labels)[8:], cfg
        )
        assert log == []
        identity = ProjectionHead.identity(16)
        np.testing.assert_array_equal(img_head.weight, identity.weight)
        np.testing.assert_array_equal(txt_head.weight, identity.weight)

    def test_deterministic_across_runs(self):
        rng = np.random.default_rng(12)
        labels, captions, images = self._world(rng)
        cfg = BiEncoderTrainConfig(
            epochs=2, learning_rate=0.1, batch_size=4, seed=42, validation_k=5
        )
        results = []
        for _ in range(2):
            img_head, txt_head, log = train_biencoder(
                images, captions, labels, list(labels)[:8], list(labels)[8:], cfg
            )
            results.append((img_head.weight.tobytes(), txt_head.weight.tobytes(), log))
        assert results[0] == results[1]

    def test_nan_diagnostic_names_seed(self):
        rng = np.random.default_rng(13)
        labels, captions, images = self._world(rng)
        cfg = BiEncoderTrainConfig(
            epochs=1, learning_rate=float("inf"), batch_size=4, seed=99, validation_k=5
        )
        with np.errstate(invalid="ignore"), pytest.raises(RuntimeError, match="seed 99"):
            train_biencoder(
                images, captions, labels, list(labels)[:8], list(labels)[8:], cfg
            )

    def test_log_schema(self):
        rng = np.random.default_rng(14)
        labels, captions, images = self._world(rng)
        cfg = BiEncoderTrainConfig(
            epochs=2, learning_rate=0.05, batch_size=4, seed=7, validation_k=5
        )
        _, _, log = train_biencoder(
            images, captions, labels, list(labels)[:8], list(labels)[8:], cfg
        )
        assert [r["epoch"] for r in log] == [0, 1]
        for record in log:
            assert set(record) == {"epoch", "loss", "r_at_100"}
