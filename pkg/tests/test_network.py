import json
import math

import numpy as np
import numpy.testing as npt
import pytest

from dspace.network import (
    NetConfig,
    OptimizerState,
    adam_step,
    attention_forward,
    backward,
    expected_shapes,
    forward,
    init_optimizer_state,
    init_params,
    model_from_json,
    model_to_json,
)


def cfg28():
    return NetConfig(input_dim=28, hidden_dims=(64, 32), output_mode="logits", init_seed=0)


# ------------------------------------------------------------------ init

def test_init_shapes():
    params = init_params(cfg28())
    assert params.layers[0].weights.shape == (28, 64)
    assert params.layers[1].weights.shape == (64, 32)
    assert params.head_weights.shape == (32, 2)
    emb = init_params(NetConfig(input_dim=28, output_mode="embedding", init_seed=0))
    assert emb.head_weights is None


def test_init_deterministic_bitwise():
    a = init_params(cfg28())
    b = init_params(cfg28())
    for name, arr in a.trainable().items():
        npt.assert_array_equal(arr, b.trainable()[name])


def test_init_kaiming_bound():
    params = init_params(cfg28())
    for i, layer in enumerate(params.layers):
        fan_in = layer.weights.shape[0]
        assert np.all(np.abs(layer.weights) <= math.sqrt(6.0 / fan_in))
    assert np.all(params.layers[0].biases == 0)
    assert np.all(params.layers[0].bn_gamma == 1)
    assert np.all(params.layers[0].bn_running_var == 1)


# ------------------------------------------------------------- attention

def test_attention_zero_weights_uniform():
    x = np.array([[1.0, 2.0, 3.0]])
    eps = 1e-9
    weighted, attn = attention_forward(x, np.zeros((3, 3)), eps)
    npt.assert_allclose(attn, 1.0 / (3 + eps))
    npt.assert_allclose(weighted, x / (3 + eps))


def test_attention_worked_example():
    # oracle: direct high-precision evaluation of the step formulas
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 30
    t0 = mp.tanh(2)
    s = mp.e**t0 + 1 + mp.mpf("1e-9")
    expected_attn = [float(mp.e**t0 / s), float(1 / s)]
    x = np.array([[2.0, 0.0]])
    weighted, attn = attention_forward(x, np.eye(2), 1e-9)
    npt.assert_allclose(attn[0], expected_attn, atol=1e-12)
    npt.assert_allclose(weighted[0], [2.0 * expected_attn[0], 0.0], atol=1e-12)
    # the same values at the coarser published precision
    npt.assert_allclose(attn[0], [0.723929, 0.276071], atol=1e-5)
    npt.assert_allclose(weighted[0], [1.447858, 0.0], atol=1e-5)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 9)) * 10
    _, attn = attention_forward(x, rng.normal(size=(9, 9)), 1e-9)
    assert np.all((attn > 0) & (attn < 1))
    sums = attn.sum(axis=1)
    assert np.all((sums > 1 - 1e-6) & (sums <= 1.0))


def test_attention_rejects_non_finite():
    with pytest.raises(ValueError, match="finite"):
        attention_forward(np.array([[np.inf, 1.0]]), np.zeros((2, 2)), 1e-9)


# --------------------------------------------------------------- forward

def test_forward_embedding_width():
    cfg = NetConfig(input_dim=6, hidden_dims=(5, 4), output_mode="embedding", init_seed=1)
    out, trace = forward(init_params(cfg), cfg, np.zeros((3, 6)), "eval")
    assert out.shape == (3, 4)
    assert trace is None


def test_forward_eval_deterministic_and_pure():
    cfg = NetConfig(input_dim=4, hidden_dims=(3,), dropout_p=0.5, init_seed=2)
    params = init_params(cfg)
    snapshot = params.copy()
    x = np.random.default_rng(0).normal(size=(5, 4))
    a, _ = forward(params, cfg, x, "eval")
    b, _ = forward(params, cfg, x, "eval")
    npt.assert_array_equal(a, b)
    for name, arr in params.trainable().items():
        npt.assert_array_equal(arr, snapshot.trainable()[name])
    for i in range(len(params.layers)):
        npt.assert_array_equal(
            params.layers[i].bn_running_mean, snapshot.layers[i].bn_running_mean
        )


def test_forward_train_batch_of_one_rejected():
    cfg = NetConfig(input_dim=4, hidden_dims=(3,), init_seed=0)
    with pytest.raises(ValueError, match="at least 2"):
        forward(init_params(cfg), cfg, np.zeros((1, 4)), "train", 0)


def test_forward_shape_mismatch():
    cfg = NetConfig(input_dim=4, hidden_dims=(3,), init_seed=0)
    with pytest.raises(ValueError, match="incompatible"):
        forward(init_params(cfg), cfg, np.zeros((2, 5)), "eval")


def test_forward_single_layer_against_straight_line_recompute():
    # independent scalar re-computation of one training-mode pass, no dropout
    cfg = NetConfig(input_dim=3, hidden_dims=(2,), output_mode="embedding",
                    dropout_p=0.0, init_seed=3)
    params = init_params(cfg)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 3))
    out, _ = forward(params, cfg, x, "train", 0)

    w, b = params.layers[0].weights, params.layers[0].biases
    z = np.empty((4, 2))
    for i in range(4):
        for j in range(2):
            z[i, j] = sum(x[i, k] * w[k, j] for k in range(3)) + b[j]
    expected = np.empty_like(z)
    for j in range(2):
        col = z[:, j]
        mu = sum(col) / 4
        var = sum((v - mu) ** 2 for v in col) / 4
        for i in range(4):
            xhat = (col[i] - mu) / math.sqrt(var + cfg.batchnorm_eps)
            expected[i, j] = max(xhat, 0.0)  # gamma 1, beta 0
    npt.assert_allclose(out, expected, atol=1e-12)


def test_batchnorm_train_statistics():
    cfg = NetConfig(input_dim=4, hidden_dims=(6,), output_mode="embedding",
                    dropout_p=0.0, batchnorm_eps=1e-9, init_seed=5)
    params = init_params(cfg)
    x = np.random.default_rng(2).normal(size=(256, 4)) * 10
    z = x @ params.layers[0].weights + params.layers[0].biases
    mu = z.mean(axis=0)
    var = z.var(axis=0)
    xhat = (z - mu) / np.sqrt(var + cfg.batchnorm_eps)
    assert np.all(np.abs(xhat.mean(axis=0)) < 1e-6)
    assert np.all(np.abs(xhat.var(axis=0) - 1.0) < 1e-6)


def test_dropout_inverted_scaling_expectation():
    # averaging train-mode outputs over many mask draws approximates the
    # eval-mode output once running stats equal the batch stats
    cfg = NetConfig(input_dim=3, hidden_dims=(8,), output_mode="embedding",
                    dropout_p=0.3, init_seed=7)
    params = init_params(cfg)
    x = np.random.default_rng(3).normal(size=(16, 3))
    z = x @ params.layers[0].weights + params.layers[0].biases
    params.layers[0].bn_running_mean[:] = z.mean(axis=0)
    params.layers[0].bn_running_var[:] = z.var(axis=0)
    cfg_eval = NetConfig(input_dim=3, hidden_dims=(8,), output_mode="embedding",
                         dropout_p=0.3, batchnorm_eps=cfg.batchnorm_eps, init_seed=7)
    eval_out, _ = forward(params, cfg_eval, x, "eval")

    draws = 10_000
    total = np.zeros_like(eval_out)
    total_sq = np.zeros_like(eval_out)
    for seed in range(draws):
        out, _ = forward(params, cfg, x, "train", seed)
        total += out
        total_sq += out * out
    mean = total / draws
    se = np.sqrt(np.maximum(total_sq / draws - mean**2, 0.0) / draws)
    diff = np.abs(mean - eval_out)
    assert np.all(diff <= 3 * se + 1e-12)


# -------------------------------------------------------------- backward

def test_backward_zero_upstream_gives_zero_grads():
    cfg = NetConfig(input_dim=4, hidden_dims=(3, 2), use_attention=True, init_seed=8)
    params = init_params(cfg)
    x = np.random.default_rng(4).normal(size=(6, 4))
    out, trace = forward(params, cfg, x, "train", 11)
    grads = backward(trace, np.zeros_like(out))
    for arr in grads.values():
        npt.assert_array_equal(arr, 0.0)


def test_backward_finite_on_random_input():
    cfg = NetConfig(input_dim=5, hidden_dims=(4,), output_mode="logits",
                    use_attention=True, init_seed=9)
    params = init_params(cfg)
    x = np.random.default_rng(5).normal(size=(7, 5))
    out, trace = forward(params, cfg, x, "train", 13)
    grads = backward(trace, np.random.default_rng(6).normal(size=out.shape))
    for name, arr in grads.items():
        assert np.all(np.isfinite(arr)), name


def test_backward_requires_trace():
    with pytest.raises(ValueError, match="trace"):
        backward(None, np.zeros((2, 2)))


# ------------------------------------------------------------------ adam

def test_adam_zero_grad_no_decay_fixed_point():
    cfg = NetConfig(input_dim=3, hidden_dims=(2,), init_seed=10)
    params = init_params(cfg)
    before = params.copy()
    state = init_optimizer_state(params, weight_decay=0.0)
    grads = {k: np.zeros_like(v) for k, v in params.trainable().items()}
    adam_step(params, grads, state)
    for name, arr in params.trainable().items():
        npt.assert_array_equal(arr, before.trainable()[name])
    assert state.step_count == 1


def test_adam_scalar_first_step():
    # oracle: hand evaluation of the bias-corrected update at t=1
    cfg = NetConfig(input_dim=1, hidden_dims=(1,), dropout_p=0.0, init_seed=0)
    params = init_params(cfg)
    params.layers[0].weights[:] = 1.0
    state = init_optimizer_state(params, lr=1e-3, weight_decay=0.01)
    grads = {k: np.zeros_like(v) for k, v in params.trainable().items()}
    grads["layer0.weights"][:] = 1.0
    adam_step(params, grads, state)
    w = params.layers[0].weights[0, 0]
    assert abs(w - 0.99899) < 1e-6


def test_adam_decay_skips_non_weights():
    cfg = NetConfig(input_dim=2, hidden_dims=(2,), init_seed=1)
    params = init_params(cfg)
    params.layers[0].bn_gamma[:] = 2.0
    params.layers[0].biases[:] = 3.0
    state = init_optimizer_state(params, weight_decay=0.5)
    grads = {k: np.zeros_like(v) for k, v in params.trainable().items()}
    adam_step(params, grads, state)
    npt.assert_array_equal(params.layers[0].bn_gamma, 2.0)  # no decay
    npt.assert_array_equal(params.layers[0].biases, 3.0)
    assert np.all(params.layers[0].weights != init_params(cfg).layers[0].weights)


def test_adam_bitwise_reproducible_trajectory():
    def run():
        cfg = NetConfig(input_dim=4, hidden_dims=(3,), output_mode="logits", init_seed=2)
        params = init_params(cfg)
        state = init_optimizer_state(params)
        rng = np.random.default_rng(0)
        for step in range(5):
            x = rng.normal(size=(6, 4))
            out, trace = forward(params, cfg, x, "train", step)
            grads = backward(trace, np.ones_like(out) / 6)
            adam_step(params, grads, state)
        return params

    a, b = run(), run()
    for name, arr in a.trainable().items():
        npt.assert_array_equal(arr, b.trainable()[name])


def test_adam_shape_mismatch():
    cfg = NetConfig(input_dim=2, hidden_dims=(2,), init_seed=3)
    params = init_params(cfg)
    state = init_optimizer_state(params)
    grads = {k: np.zeros_like(v) for k, v in params.trainable().items()}
    grads["layer0.weights"] = np.zeros((5, 5))
    with pytest.raises(ValueError, match="shape"):
        adam_step(params, grads, state)


# --------------------------------------------------------- serialization

def test_model_json_round_trip_bitwise():
    cfg = NetConfig(input_dim=5, hidden_dims=(4, 3), output_mode="logits",
                    use_attention=True, init_seed=4)
    params = init_params(cfg)
    x = np.random.default_rng(7).normal(size=(8, 5))
    out, trace = forward(params, cfg, x, "train", 17)
    state = init_optimizer_state(params)
    adam_step(params, backward(trace, np.ones_like(out)), state)

    text = model_to_json(params, cfg, state)
    params2, cfg2, state2 = model_from_json(text)
    assert cfg2 == cfg
    for name, arr in params.trainable().items():
        npt.assert_array_equal(arr, params2.trainable()[name])
    npt.assert_array_equal(
        params.layers[0].bn_running_mean, params2.layers[0].bn_running_mean
    )
    for name in state.m:
        npt.assert_array_equal(state.m[name], state2.m[name])
    assert state2.step_count == 1

    eval_a, _ = forward(params, cfg, x, "eval")
    eval_b, _ = forward(params2, cfg2, x, "eval")
    npt.assert_array_equal(eval_a, eval_b)


def test_model_json_shape_validation():
    cfg = NetConfig(input_dim=3, hidden_dims=(2,), init_seed=5)
    doc = json.loads(model_to_json(init_params(cfg), cfg))
    doc["net_config"]["hidden_dims"] = [4]
    with pytest.raises(ValueError, match="shape|missing"):
        model_from_json(json.dumps(doc))


def test_expected_shapes_cover_all_params():
    cfg = NetConfig(input_dim=6, hidden_dims=(5, 4), output_mode="logits",
                    use_attention=True, init_seed=6)
    params = init_params(cfg)
    shapes = expected_shapes(cfg)
    for name, arr in params.trainable().items():
        assert shapes[name] == arr.shape
