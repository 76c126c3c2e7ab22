import math

import numpy as np
import pytest

from clzsl import mapping as M
from clzsl import tensor as T
from clzsl.tensor import Tape, Tensor, backward
from oracles import assert_grads_close, exp_normalize, finite_difference_grads


def make_params(d, d_a, seed=0):
    return M.MapParams.create(d, d_a, np.random.default_rng(seed))


def zero_params(d, d_a):
    return M.MapParams(Tensor(np.zeros((d_a, d))), Tensor(np.zeros((d_a, d))))


def test_attend_zero_weights_gives_uniform_attention():
    rng = np.random.default_rng(0)
    V, A = rng.standard_normal((4, 3)), rng.standard_normal((5, 2))
    alpha = M.attend(V, A, zero_params(3, 2)).values
    assert np.allclose(alpha, 0.25, atol=1e-15)


def test_attend_single_region_is_one():
    rng = np.random.default_rng(1)
    alpha = M.attend(rng.standard_normal((1, 3)), rng.standard_normal((5, 2)),
                     make_params(3, 2)).values
    assert np.allclose(alpha, 1.0, atol=1e-15)


def test_attend_matches_brute_force_exp_normalize():
    rng = np.random.default_rng(2)
    K, R, d, d_a = 3, 4, 2, 2
    V, A = rng.standard_normal((R, d)), rng.standard_normal((K, d_a))
    params = make_params(d, d_a, seed=3)
    alpha = M.attend(V, A, params).values
    for k in range(K):
        logits = [A[k] @ params.W1.values @ V[r] for r in range(R)]
        assert np.allclose(alpha[k], exp_normalize(logits), atol=1e-12)


def test_attend_rows_sum_to_one():
    rng = np.random.default_rng(3)
    alpha = M.attend(rng.standard_normal((6, 4)), rng.standard_normal((5, 3)),
                     make_params(4, 3)).values
    assert np.max(np.abs(alpha.sum(axis=1) - 1.0)) <= 1e-12


def test_attend_attribute_axis_switch():
    rng = np.random.default_rng(4)
    alpha = M.attend(rng.standard_normal((6, 4)), rng.standard_normal((5, 3)),
                     make_params(4, 3), axis="attributes").values
    assert np.max(np.abs(alpha.sum(axis=0) - 1.0)) <= 1e-12
    with pytest.raises(ValueError, match="attention axis"):
        M.attend(np.zeros((2, 2)), np.zeros((2, 2)), zero_params(2, 2), axis="bogus")


def test_aggregate_uniform_alpha_is_region_mean():
    rng = np.random.default_rng(5)
    V = rng.standard_normal((4, 3))
    alpha = np.full((5, 4), 0.25)
    F = M.aggregate(alpha, V).values
    assert np.allclose(F, np.tile(V.mean(axis=0), (5, 1)), atol=1e-12)


def test_aggregate_one_hot_selects_region():
    rng = np.random.default_rng(6)
    V = rng.standard_normal((4, 3))
    alpha = np.zeros((2, 4))
    alpha[:, 2] = 1.0
    assert np.allclose(M.aggregate(alpha, V).values, np.tile(V[2], (2, 1)))


def test_aggregate_equals_matrix_product():
    rng = np.random.default_rng(7)
    alpha, V = rng.random((5, 4)), rng.standard_normal((4, 3))
    assert np.allclose(M.aggregate(alpha, V).values, alpha @ V, atol=1e-14)


def test_embed_zero_map_gives_zero_vector():
    rng = np.random.default_rng(8)
    F, A = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
    assert np.array_equal(M.embed(F, A, zero_params(3, 2)).values, np.zeros(5))


def test_embed_identity_quadratic_form():
    rng = np.random.default_rng(9)
    F = rng.standard_normal((4, 3))
    params = M.MapParams(Tensor(np.zeros((3, 3))), Tensor(np.eye(3)))
    psi = M.embed(F, F, params).values
    assert np.allclose(psi, (F * F).sum(axis=1), atol=1e-12)


def test_embed_matches_per_attribute_scalars():
    rng = np.random.default_rng(10)
    K, d, d_a = 4, 3, 2
    F, A = rng.standard_normal((K, d)), rng.standard_normal((K, d_a))
    params = make_params(d, d_a, seed=11)
    psi = M.embed(F, A, params).values
    for k in range(K):
        assert psi[k] == pytest.approx(A[k] @ (params.W2.values @ F[k]), rel=1e-12)


def test_class_scores_examples():
    assert np.array_equal(M.class_scores(np.zeros(3), np.ones((4, 3))).values, np.zeros(4))
    psi = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(M.class_scores(psi, np.eye(3)).values, psi)
    Z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert np.array_equal(M.class_scores(np.array([1.0, 2.0]), Z).values, [1.0, 2.0, 3.0])


def test_ce_equal_scores_is_log_class_count():
    loss = M.ce_loss_per_sample(np.zeros(4), 1).item()
    assert loss == np.log(4.0)


def test_ce_confident_correct_limit():
    scores = np.array([60.0, 0.0, 0.0])
    assert M.ce_loss_per_sample(scores, 0).item() == pytest.approx(0.0, abs=1e-20)


def test_ce_direct_evaluation():
    loss = M.ce_loss_per_sample(np.array([2.0, 0.0]), 0).item()
    assert loss == pytest.approx(-math.log(math.exp(2) / (math.exp(2) + 1)), rel=1e-12)
    assert loss == pytest.approx(0.1269, abs=5e-5)


def test_ce_label_out_of_range():
    with pytest.raises(ValueError, match="label out of range"):
        M.ce_loss_per_sample(np.zeros(3), 3)


def test_ce_nonnegative():
    rng = np.random.default_rng(12)
    for _ in range(20):
        scores = rng.standard_normal(5)
        assert M.ce_loss_per_sample(scores, int(rng.integers(5))).item() >= 0.0


def test_sc_loss_single_pair_closed_form():
    # one seen, one unseen class, all raw scores zero
    loss = M.sc_loss(np.zeros(2), np.ones((2, 2)) * 0.0, [False, True]).item()
    expected = -math.log(math.e / (math.e + math.exp(-1)))
    assert loss == pytest.approx(expected, rel=1e-12)
    assert loss == pytest.approx(0.1269, abs=5e-5)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_sc_loss_balanced_zero_scores_closed_form(n):
    mask = [False] * n + [True] * n
    scores = T.Tensor(np.zeros((1, 2 * n)))
    loss = M.sc_losses(scores, mask).values[0]
    per_term = -math.log(math.e / (n * math.e + n * math.exp(-1)))
    assert loss == pytest.approx(n * per_term, rel=1e-12)


def test_sc_loss_vanishes_when_unseen_scores_dominate():
    scores = T.Tensor(np.array([[0.0, 200.0]]))
    loss = M.sc_losses(scores, [False, True]).values[0]
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_sc_loss_mask_mismatch():
    with pytest.raises(ValueError, match="mask"):
        M.sc_losses(T.Tensor(np.zeros((2, 3))), [True, False])


def test_sc_loss_batch_mean():
    rng = np.random.default_rng(13)
    psi = rng.standard_normal((3, 4))
    Z = rng.standard_normal((5, 4))
    mask = np.array([False, False, False, True, True])
    batched = M.sc_loss(psi, Z, mask).item()
    singles = [M.sc_loss(psi[i], Z, mask).item() for i in range(3)]
    assert batched == pytest.approx(np.mean(singles), rel=1e-12)


def test_predict_czsl_plain_argmax():
    # choose psi/Z so czsl scores are [0.2, 0.9, 0.1]
    Z = np.array([[0.2], [0.9], [0.1]])
    assert M.predict(np.array([1.0]), Z, "czsl") == 1


def test_predict_gzsl_calibration_flips_to_unseen():
    Z = np.array([[1.5], [0.0]])
    assert M.predict(np.array([1.0]), Z, "gzsl", unseen_mask=[False, True]) == 1


def test_predict_gzsl_strong_seen_score_wins():
    Z = np.array([[3.0], [0.0]])
    assert M.predict(np.array([1.0]), Z, "gzsl", unseen_mask=[False, True]) == 0


def test_predict_empty_candidates():
    with pytest.raises(ValueError, match="empty candidate"):
        M.predict(np.ones(2), np.zeros((0, 2)), "czsl")


def test_predict_constant_score_shift_keeps_argmax():
    # appending a constant-score attribute shifts every class equally
    rng = np.random.default_rng(14)
    psi, Z = rng.standard_normal(3), rng.standard_normal((5, 3))
    base = M.predict(psi, Z, "czsl")
    psi_aug = np.concatenate([psi, [7.5]])
    Z_aug = np.hstack([Z, np.ones((5, 1))])
    assert M.predict(psi_aug, Z_aug, "czsl") == base


def test_predict_czsl_ignores_indicator():
    rng = np.random.default_rng(15)
    psi, Z = rng.standard_normal(3), rng.standard_normal((4, 3))
    raw = np.argmax(Z @ psi)
    assert M.predict(psi, Z, "czsl") == raw
    assert M.predict(psi, Z, "gzsl", unseen_mask=[True] * 4) == raw


def test_batch_embeddings_match_per_sample_path():
    rng = np.random.default_rng(16)
    feats = rng.standard_normal((6, 4, 3))
    A = rng.standard_normal((5, 2))
    params = make_params(3, 2, seed=17)
    batched = M.batch_semantic_embeddings(feats, A, params).values
    for i in range(6):
        single = M.semantic_embedding(Tensor(feats[i]), A, params).values
        assert np.array_equal(batched[i], single)


def test_full_pipeline_gradient_matches_finite_differences():
    # regions -> attention -> pooling -> embedding -> scores -> CE,
    # differentiated w.r.t. the input regions and both bilinear maps.
    rng = np.random.default_rng(18)
    K, R, d, d_a, c_seen = 3, 4, 2, 2, 3
    V0 = rng.standard_normal((R, d))
    A = rng.standard_normal((K, d_a))
    Z = rng.standard_normal((c_seen, K))
    W1_0 = rng.standard_normal((d_a, d)) * 0.5
    W2_0 = rng.standard_normal((d_a, d)) * 0.5
    label = 1

    def build(v_arr, w1_arr, w2_arr):
        V = Tensor(v_arr, requires_grad=True)
        params = M.MapParams(Tensor(w1_arr, requires_grad=True),
                             Tensor(w2_arr, requires_grad=True))
        psi = M.semantic_embedding(V, A, params)
        loss = M.ce_loss_per_sample(M.class_scores(psi, Z), label)
        return V, params, loss

    with Tape() as tape:
        V, params, loss = build(V0, W1_0, W2_0)
    grads = backward(tape, loss)

    def f(arrays):
        return build(*arrays)[2].item()

    fd = finite_difference_grads(f, [V0, W1_0, W2_0])
    assert_grads_close(grads[V].values, fd[0])
    assert_grads_close(grads[params.W1].values, fd[1])
    assert_grads_close(grads[params.W2].values, fd[2])
