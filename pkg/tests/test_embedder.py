import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from retrieval_lab.core import Passage, Question
from retrieval_lab.embedder import (
    DualEncoderModel,
    backprop_batch,
    checkpoint_bytes,
    cosine_similarity,
    encode_passage,
    encode_question,
    encode_tokens,
    fnv1a64,
    from_checkpoint_dict,
    load_checkpoint,
    model_content_hash,
    relevance_score,
    save_checkpoint,
    to_checkpoint_dict,
    token_buckets,
)


@pytest.fixture
def model():
    return DualEncoderModel.initialize(hash_buckets=64, dim=8, rng_seed=42)


def forward_oracle(tower, tokens, hash_buckets):
    """Straight-line reimplementation of the forward rule with plain loops."""
    dim = tower.bias.shape[0]
    pooled = [0.0] * dim
    for token in tokens:
        row = tower.embedding[fnv1a64(token) % hash_buckets]
        for i in range(dim):
            pooled[i] += row[i] / len(tokens)
    out = []
    for j in range(dim):
        z = tower.bias[j]
        for i in range(dim):
            z += pooled[i] * tower.projection[i][j]
        out.append(math.tanh(z))
    return np.array(out)


class TestHashing:
    def test_fnv1a64_known_values(self):
        # classic FNV-1a test vectors
        assert fnv1a64("") == 0xCBF29CE484222325
        assert fnv1a64("a") == 0xAF63DC4C8601EC8C

    def test_buckets_stable(self):
        ids = token_buckets(("who", "wrote", "who"), 64)
        assert ids[0] == ids[2]
        assert (token_buckets(("who", "wrote", "who"), 64) == ids).all()


class TestEncode:
    def test_deterministic(self, model):
        q = Question(id="q", text="who wrote the anthem", answers=("x",))
        assert np.array_equal(encode_question(model, q), encode_question(model, q))

    def test_output_shape(self, model):
        q = Question(id="q", text="one two three", answers=("x",))
        assert encode_question(model, q).shape == (model.dim,)

    def test_forward_matches_straight_line_oracle(self, model):
        q = Question(id="q", text="who wrote the anthem of veltor", answers=("x",))
        expected = forward_oracle(model.question_tower, q.tokens, model.hash_buckets)
        np.testing.assert_allclose(encode_question(model, q), expected, rtol=0, atol=1e-12)

    def test_passage_uses_title_then_text_and_passage_tower(self, model):
        p = Passage(id="p", title="North Veltor", text="an old charter")
        expected = forward_oracle(model.passage_tower, p.tokens, model.hash_buckets)
        np.testing.assert_allclose(encode_passage(model, p), expected, rtol=0, atol=1e-12)

    def test_empty_tokens_rejected(self, model):
        with pytest.raises(ValueError):
            encode_tokens(model, "question", ())

    def test_initialization_pure_function_of_seed(self):
        a = DualEncoderModel.initialize(hash_buckets=32, dim=4, rng_seed=7)
        b = DualEncoderModel.initialize(hash_buckets=32, dim=4, rng_seed=7)
        c = DualEncoderModel.initialize(hash_buckets=32, dim=4, rng_seed=8)
        assert np.array_equal(a.question_tower.embedding, b.question_tower.embedding)
        assert not np.array_equal(a.question_tower.embedding, c.question_tower.embedding)

    def test_init_bound(self):
        m = DualEncoderModel.initialize(hash_buckets=128, dim=16, rng_seed=0)
        bound = 1 / math.sqrt(16)
        for arr in (m.question_tower.embedding, m.passage_tower.projection):
            assert np.abs(arr).max() <= bound


class TestScores:
    def test_inner_product(self):
        assert relevance_score(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0

    def test_zero_vector_annihilates(self):
        assert relevance_score(np.zeros(3), np.ones(3)) == 0.0

    def test_symmetric(self):
        a, b = np.array([1.0, -2.0, 0.5]), np.array([0.3, 4.0, -1.0])
        assert relevance_score(a, b) == relevance_score(b, a)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            relevance_score(np.ones(2), np.ones(3))

    def test_cosine_identity(self):
        v = np.array([0.3, -1.2, 2.0])
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_cosine_orthogonal(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_cosine_45_degrees(self):
        # hand value: 1/sqrt(2)
        got = cosine_similarity(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
        assert got == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_cosine_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            cosine_similarity(np.zeros(2), np.ones(2))

    @given(
        st.lists(st.floats(-10, 10), min_size=2, max_size=6),
        st.lists(st.floats(-10, 10), min_size=2, max_size=6),
    )
    def test_cosine_bounded(self, a, b):
        n = min(len(a), len(b))
        va, vb = np.array(a[:n]), np.array(b[:n])
        if np.linalg.norm(va) == 0 or np.linalg.norm(vb) == 0:
            return
        assert -1 - 1e-12 <= cosine_similarity(va, vb) <= 1 + 1e-12


class TestBackprop:
    def test_zero_upstream_gives_zero_grads(self, model):
        batch = [("question", ("who", "wrote")), ("passage", ("veltor", "charter"))]
        grads = backprop_batch(model, batch, np.zeros((2, model.dim)))
        for tower in (grads.question_tower, grads.passage_tower):
            assert not tower.embedding.any()
            assert not tower.projection.any()
            assert not tower.bias.any()

    def test_additive_over_batch_elements(self, model):
        items = [("question", ("who", "wrote")), ("question", ("the", "anthem"))]
        rng = np.random.default_rng(0)
        upstream = rng.normal(size=(2, model.dim))
        combined = backprop_batch(model, items, upstream)
        first = backprop_batch(model, items[:1], upstream[:1])
        second = backprop_batch(model, items[1:], upstream[1:])
        np.testing.assert_allclose(
            combined.question_tower.embedding,
            first.question_tower.embedding + second.question_tower.embedding,
            atol=1e-12,
        )

    def test_shape_mismatch_rejected(self, model):
        with pytest.raises(ValueError):
            backprop_batch(model, [("question", ("a",))], np.zeros((2, model.dim)))

    def test_gradient_matches_finite_differences(self, model):
        rng = np.random.default_rng(1)
        batch = [
            ("question", ("who", "wrote", "the", "anthem")),
            ("passage", ("veltor", "charter", "written", "by")),
        ]
        upstream = rng.normal(size=(2, model.dim))
        grads = backprop_batch(model, batch, upstream)

        def loss():
            total = 0.0
            for (kind, tokens), up in zip(batch, upstream):
                total += float(up @ encode_tokens(model, kind, tokens))
            return total

        h = 1e-4
        for tower, gtower in (
            (model.question_tower, grads.question_tower),
            (model.passage_tower, grads.passage_tower),
        ):
            for arr, garr in (
                (tower.embedding, gtower.embedding),
                (tower.projection, gtower.projection),
                (tower.bias, gtower.bias),
            ):
                flat, gflat = arr.ravel(), garr.ravel()
                idx = rng.choice(flat.size, size=min(40, flat.size), replace=False)
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + h
                    up_val = loss()
                    flat[i] = orig - h
                    down_val = loss()
                    flat[i] = orig
                    fd = (up_val - down_val) / (2 * h)
                    assert abs(fd - gflat[i]) <= 1e-7 + 1e-4 * abs(fd)


class TestCheckpoint:
    def test_round_trip_exact(self, model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert np.array_equal(loaded.question_tower.embedding, model.question_tower.embedding)
        assert np.array_equal(loaded.passage_tower.projection, model.passage_tower.projection)
        assert loaded.rng_seed == model.rng_seed
        assert checkpoint_bytes(loaded) == checkpoint_bytes(model)

    def test_content_hash_tracks_parameters(self, model):
        h1 = model_content_hash(model)
        other = model.copy()
        assert model_content_hash(other) == h1
        other.question_tower.bias[0] += 1e-9
        assert model_content_hash(other) != h1

    def test_version_field_checked(self, model):
        doc = to_checkpoint_dict(model)
        doc["version"] = 99
        with pytest.raises(ValueError):
            from_checkpoint_dict(doc)
