import numpy as np
import pytest

from subuda.exceptions import ShapeError, UsageError
from subuda.numeric import (
    EncoderParams,
    OptimizerState,
    backward,
    clone_rng,
    forward,
    init_encoder,
    load_checkpoint,
    make_rng,
    opt_step,
    save_checkpoint,
)
from subuda.gradcheck import encoder_gradcheck, relative_error


def _linear(w, b, final="identity"):
    w = np.asarray(w, dtype=float)
    return EncoderParams((w.shape[0], w.shape[1]), [w], [np.asarray(b, dtype=float)], final_activation=final)


def test_identity_layer():
    params = _linear(np.eye(2), np.zeros(2))
    out, _ = forward(params, np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(out, [[1.0, 2.0]])


def test_zero_weights_give_final_bias():
    rng = make_rng(0)
    params = init_encoder((3, 4, 5), rng)
    for w in params.weights:
        w[:] = 0.0
    params.biases[-1][:] = [0.5, 1.0, 0.0, 2.0, 3.0]
    out, _ = forward(params, rng.standard_normal((6, 3)))
    np.testing.assert_array_equal(out, np.tile(params.biases[-1], (6, 1)))


def test_dropout_masks_replay_from_same_rng_state():
    params = init_encoder((5, 8), make_rng(1), head_dims=(6, 4))
    x = make_rng(2).standard_normal((10, 5))
    rng = make_rng(3)
    twin = clone_rng(rng)
    a, ca = forward(params, x, train_mode=True, rng=rng)
    b, cb = forward(params, x, train_mode=True, rng=twin)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(ca.dropout_mask, cb.dropout_mask)


def test_dropout_train_mean_matches_eval():
    params = init_encoder((4, 6), make_rng(0), head_dims=(32, 3), final_activation="identity")
    x = make_rng(1).standard_normal((1, 4))
    eval_out, _ = forward(params, x)
    rng = make_rng(2)
    draws = np.vstack([forward(params, x, train_mode=True, rng=rng)[0] for _ in range(10000)])
    se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - eval_out[0]) < 3 * se + 1e-12)


def test_shape_error():
    params = init_encoder((3, 4), make_rng(0))
    with pytest.raises(ShapeError):
        forward(params, np.zeros((2, 5)))


def test_zero_feature_grad_gives_zero_param_grads():
    params = init_encoder((8, 16, 8), make_rng(0), head_dims=(8, 4))
    x = make_rng(1).standard_normal((5, 8))
    out, cache = forward(params, x)
    grads, gx = backward(params, cache, np.zeros_like(out))
    assert all(np.all(g == 0) for g in grads)
    assert np.all(gx == 0)


def test_sum_of_squares_gradcheck():
    rng = make_rng(7)
    params = init_encoder((8, 16, 8), rng, final_activation="identity")
    x = rng.standard_normal((8, 8))
    err = encoder_gradcheck(params, x, lambda f: (np.sum(f**2), 2 * f), h=1e-5)
    assert err < 1e-5


def test_linear_weight_gradient_structure():
    rng = make_rng(3)
    w = rng.standard_normal((3, 2))
    params = _linear(w, np.zeros(2))
    x = rng.standard_normal((4, 3))
    out, cache = forward(params, x)
    grads, _ = backward(params, cache, np.ones_like(out))
    gw = grads[0]
    # d sum(xW) / dW[i, j] = sum_b x[b, i] for every output column j
    np.testing.assert_allclose(gw, np.tile(x.sum(axis=0)[:, None], (1, 2)))
    np.testing.assert_allclose(gw.sum(axis=0), np.full(2, x.sum()))
    # cross-check against finite differences
    h = 1e-6
    fd = np.zeros_like(w)
    for i in range(3):
        for j in range(2):
            wp, wm = w.copy(), w.copy()
            wp[i, j] += h
            wm[i, j] -= h
            fd[i, j] = ((x @ wp).sum() - (x @ wm).sum()) / (2 * h)
    np.testing.assert_allclose(gw, fd, rtol=1e-7)


def test_stale_cache_rejected():
    params = init_encoder((3, 4), make_rng(0))
    x = np.ones((2, 3))
    out, cache = forward(params, x)
    state = OptimizerState.for_params(params)
    opt_step(state, params, [np.ones_like(a) for a in params.arrays()])
    with pytest.raises(UsageError):
        backward(params, cache, np.ones_like(out))
    with pytest.raises(UsageError):
        backward(params.copy(), forward(params, x)[1], np.ones_like(out))


def test_adam_zero_gradient_is_noop():
    params = init_encoder((3, 4), make_rng(0))
    before = [a.copy() for a in params.arrays()]
    state = OptimizerState.for_params(params, learning_rate=0.1)
    opt_step(state, params, [np.zeros_like(a) for a in params.arrays()])
    for a, b in zip(params.arrays(), before):
        np.testing.assert_array_equal(a, b)
    assert all(np.all(m == 0) for m in state.first_moment + state.second_moment)
    assert state.step_count == 1


def test_adam_first_step_is_learning_rate():
    # t=1: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
    params = _linear([[1.0, 1.0]], [0.0, 0.0])
    state = OptimizerState.for_params(params, learning_rate=0.1)
    g = 0.3
    opt_step(state, params, [np.array([[g, -g]]), np.zeros(2)])
    expected = 0.1 * g / (g + 1e-8)
    np.testing.assert_allclose(params.weights[0], [[1.0 - expected, 1.0 + expected]], rtol=0, atol=1e-15)
    assert abs(expected - 0.1) < 1e-7


def test_checkpoint_round_trip(tmp_path):
    params = init_encoder((5, 7), make_rng(4), head_dims=(6, 3))
    params.norm_mean = make_rng(5).standard_normal(6)
    path = tmp_path / "enc.json"
    save_checkpoint(path, params, {"note": 1})
    loaded, extra = load_checkpoint(path)
    assert extra == {"note": 1}
    for a, b in zip(params.arrays(), loaded.arrays()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(params.norm_mean, loaded.norm_mean)
    save_checkpoint(tmp_path / "again.json", loaded, {"note": 1})
    assert path.read_bytes() == (tmp_path / "again.json").read_bytes()


def test_relative_error_handles_zeros():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
