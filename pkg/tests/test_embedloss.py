import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hoirefine import embedloss as el


def oracle_loss(params, batch, metric):
    """Independent forward pass: explicit loops, no shared code paths with
    the batched implementation."""
    total = 0.0
    for i in range(batch.k):
        for j in range(batch.k):
            if not batch.gt_mask[i, j]:
                continue
            x = np.concatenate([batch.f_human[i, j], batch.f_inter[i, j],
                                batch.f_obj[i, j]])
            for w, b, act in params.layers:
                x = w @ x + b
                if act == "relu":
                    x = np.maximum(x, 0.0)
                elif act == "tanh":
                    x = np.tanh(x)
            e = batch.e_text[i, j]
            if metric == "l1":
                total += np.abs(x - e).sum()
            else:
                total += -float(x @ e) / (np.linalg.norm(x) * np.linalg.norm(e))
    return total


def small_setup(seed, metric="l1", k=3, d_f=4, d_e=5, hidden=(8,)):
    rng = np.random.default_rng(seed)
    batch = el.random_batch(rng, k=k, d_f=d_f, d_e=d_e)
    params = el.random_mlp(rng, d_in=3 * d_f, hidden=hidden, d_out=d_e)
    return params, batch


class TestPairDistance:
    def test_l1_hand_value(self):
        value, grad = el.pair_distance("l1", np.array([1.0, 2.0]), np.array([0.0, -0.5]))
        assert value == 3.5
        assert np.array_equal(grad, [1.0, 1.0])

    def test_l1_tie_subgradient_zero(self):
        _, grad = el.pair_distance("l1", np.array([0.7, 1.0]), np.array([0.7, 0.0]))
        assert np.array_equal(grad, [0.0, 1.0])

    def test_neg_cosine_hand_values(self):
        value, _ = el.pair_distance("neg_cosine", np.array([1.0, 0.0]), np.array([1.0, 0.0]))
        assert value == pytest.approx(-1.0)
        value, _ = el.pair_distance("neg_cosine", np.array([1.0, 0.0]), np.array([0.0, 2.0]))
        assert value == pytest.approx(0.0)
        value, _ = el.pair_distance("neg_cosine", np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert value == pytest.approx(-1.0 / math.sqrt(2.0))

    def test_neg_cosine_zero_vector_rejected(self):
        with pytest.raises(ZeroDivisionError):
            el.pair_distance("neg_cosine", np.zeros(3), np.ones(3))

    @given(st.integers(0, 2 ** 31 - 1), st.sampled_from([0.5, 2.0, 10.0]))
    @settings(max_examples=40)
    def test_neg_cosine_scale_invariant(self, seed, alpha):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=6) + 0.1
        e = rng.normal(size=6) + 0.1
        base, _ = el.pair_distance("neg_cosine", f, e)
        scaled, _ = el.pair_distance("neg_cosine", alpha * f, e)
        assert scaled == pytest.approx(base, abs=1e-12)

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            el.pair_distance("l2", np.ones(2), np.ones(2))

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30)
    def test_gradient_matches_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=5)
        e = rng.normal(size=5)
        for metric in ("l1", "neg_cosine"):
            _, grad = el.pair_distance(metric, f, e)
            h = 1e-6
            for idx in range(5):
                bumped = f.copy()
                bumped[idx] += h
                up, _ = el.pair_distance(metric, bumped, e)
                bumped[idx] -= 2 * h
                down, _ = el.pair_distance(metric, bumped, e)
                assert grad[idx] == pytest.approx((up - down) / (2 * h), abs=1e-4)


class TestLossForward:
    @pytest.mark.parametrize("metric", ["l1", "neg_cosine"])
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_matches_loop_oracle(self, metric, seed):
        params, batch = small_setup(seed, metric)
        f_model, _, _ = el.fused_forward(params, batch)
        loss, _ = el.tri_emb_loss(f_model, batch, metric)
        assert loss == pytest.approx(oracle_loss(params, batch, metric), rel=1e-12)

    def test_unmasked_cells_do_not_contribute(self):
        params, batch = small_setup(11)
        dense = el.EmbeddingBatch(
            f_human=batch.f_human, f_inter=batch.f_inter, f_obj=batch.f_obj,
            e_text=batch.e_text,
            gt_mask=~np.eye(batch.k, dtype=bool),
        )
        f_model, _, _ = el.fused_forward(params, dense)
        # perturb targets only where the sparse mask is off
        noisy = batch.e_text + 100.0 * (~batch.gt_mask)[:, :, None]
        loss_a, _ = el.tri_emb_loss(f_model, batch, "l1")
        loss_b, _ = el.tri_emb_loss(
            f_model,
            el.EmbeddingBatch(batch.f_human, batch.f_inter, batch.f_obj,
                              noisy, batch.gt_mask),
            "l1",
        )
        assert loss_a == pytest.approx(loss_b, rel=1e-12)

    def test_masked_cell_gradients_exactly_zero(self):
        params, batch = small_setup(5, metric="neg_cosine")
        f_model, _, _ = el.fused_forward(params, batch)
        # give every cell a nonzero vector so neg_cosine is defined
        f_model = f_model + np.where(f_model == 0.0, 0.5, 0.0)
        _, grads = el.tri_emb_loss(f_model, batch, "neg_cosine")
        off = ~batch.gt_mask
        assert np.all(grads[off] == 0.0)
        assert np.any(grads[batch.gt_mask] != 0.0)

    def test_diagonal_mask_rejected(self):
        rng = np.random.default_rng(0)
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        with pytest.raises(ValueError):
            el.EmbeddingBatch(
                f_human=rng.normal(size=(3, 3, 2)),
                f_inter=rng.normal(size=(3, 3, 2)),
                f_obj=rng.normal(size=(3, 3, 2)),
                e_text=rng.normal(size=(3, 3, 2)),
                gt_mask=mask,
            )


class TestParamGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_neg_cosine_finite_diff(self, seed):
        params, batch = small_setup(seed, "neg_cosine")
        assert el.finite_diff_check(params, batch, "neg_cosine", h=1e-5) <= 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_l1_finite_diff(self, seed):
        params, batch = small_setup(seed, "l1")
        assert el.finite_diff_check(params, batch, "l1", h=1e-7) <= 1e-4

    def test_bad_step_rejected(self):
        params, batch = small_setup(0)
        with pytest.raises(ValueError):
            el.finite_diff_check(params, batch, "l1", h=0.0)

    def test_flat_round_trip(self):
        params, _ = small_setup(9)
        flat = params.flat()
        rebuilt = params.with_flat(flat)
        assert np.array_equal(rebuilt.flat(), flat)


class TestDescentAndTotal:
    @pytest.mark.parametrize("metric", ["l1", "neg_cosine"])
    def test_loss_decreases(self, metric):
        params, batch = small_setup(3, metric)
        trajectory = el.toy_descent(params, batch, metric, steps=50,
                                    learning_rate=1e-3)
        assert len(trajectory) == 51
        assert trajectory[-1] < trajectory[0]

    def test_divergence_detected(self, monkeypatch):
        params, batch = small_setup(3, "l1")
        counter = {"n": 0}

        def rising_loss(p, b, metric):
            counter["n"] += 1
            zeros = [(np.zeros_like(w), np.zeros_like(bb)) for w, bb, _ in p.layers]
            return float(counter["n"]), zeros

        monkeypatch.setattr(el, "loss_and_param_grads", rising_loss)
        with pytest.raises(el.DivergenceError):
            el.toy_descent(params, batch, "l1", steps=200, learning_rate=1e-3)
        # aborted on the fifth consecutive increase, not at the horizon
        assert counter["n"] < 10

    def test_total_loss_hand_values(self):
        assert el.total_loss(1.0, 0.2, 0.5) == pytest.approx(1.1)
        assert el.total_loss(2.0, 1.0, 0.5) == pytest.approx(2.5)
        assert el.total_loss(3.0, 99.0, 0.0) == 3.0

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            el.total_loss(1.0, 1.0, -0.1)


class TestCaptionsAndSerialization:
    @pytest.mark.parametrize("relation,obj,expected", [
        ("ride", "bicycle", "A scene of a person ride a bicycle"),
        ("ride", "elephant", "A scene of a person ride an elephant"),
        ("sit on", "chair", "A scene of a person sit on a chair"),
        ("hold", "umbrella", "A scene of a person hold an umbrella"),
    ])
    def test_caption_template(self, relation, obj, expected):
        assert el.caption_for_triplet(relation, obj) == expected

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(42)
        batch = el.random_batch(rng, k=3, d_f=4, d_e=5)
        path = tmp_path / "batch.jsonl"
        el.save_embedding_batch(batch, "neg_cosine", str(path))
        loaded, metric = el.load_embedding_batch(str(path))
        assert metric == "neg_cosine"
        assert np.array_equal(loaded.gt_mask, batch.gt_mask)
        assert np.array_equal(loaded.f_human, batch.f_human)
        assert np.array_equal(loaded.e_text, batch.e_text)

    def test_load_rejects_truncated_file(self, tmp_path):
        rng = np.random.default_rng(42)
        batch = el.random_batch(rng, k=2, d_f=2, d_e=2)
        path = tmp_path / "batch.jsonl"
        el.save_embedding_batch(batch, "l1", str(path))
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ValueError):
            el.load_embedding_batch(str(path))
