import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import central_diff, conv2d_ref, deconv2d_ref, param_fd, rel_err, tiny_net
from reprlab.agent.dqn import dqn_loss
from reprlab.errors import ConfigurationError, ContractError, NumericError
from reprlab.tensor import autodiff as ad
from reprlab.tensor.autodiff import Tensor
from reprlab.tensor.checkpoint import load_params, save_params
from reprlab.tensor.nn import (INIT_BIAS, INIT_STD, Network, NetworkParams, NetworkSpec,
                               backward, differentiable, truncated_normal)
from reprlab.tensor.optim import (adam, adam_step, clip_global_norm, global_norm, rmsprop,
                                  rmsprop_step)


def _vec_params(values):
    net = Network(NetworkSpec.from_dict({"input_shape": [len(values)],
                                         "layers": [{"kind": "dense", "units": 1}]}))
    p = net.init(np.random.default_rng(0))
    flat = np.zeros(p.flat.size)
    flat[:len(values)] = values
    return p.with_flat(flat)


# -- forward --------------------------------------------------------------------
def test_identity_dense_layer_returns_input():
    net = Network(NetworkSpec.from_dict({"input_shape": [3], "layers": [{"kind": "dense", "units": 3}]}))
    p = net.init(np.random.default_rng(0))
    flat = p.flat.copy()
    flat[:9] = np.eye(3).reshape(-1)
    flat[9:] = 0.0
    v = np.array([[0.5, -2.0, 7.0]])
    assert np.array_equal(net.apply(p.with_flat(flat), v).data, v)


def test_leaky_relu_slope():
    out = ad.leaky_relu(Tensor(np.array([-1.0, 2.0])), 0.2)
    assert out.data[0] == pytest.approx(-0.2, abs=1e-15)
    assert out.data[1] == 2.0


def test_two_layer_forward_matches_straight_line_numpy():
    net, p = tiny_net([{"kind": "dense", "units": 6}, {"kind": "relu"},
                       {"kind": "dense", "units": 3}], (4,), seed=3)
    x = np.random.default_rng(9).normal(size=(5, 4))
    h = np.maximum(x @ p["l0_dense.W"] + p["l0_dense.b"], 0.0)
    expect = h @ p["l2_dense.W"] + p["l2_dense.b"]
    assert np.max(np.abs(net.apply(p, x).data - expect)) <= 1e-10


def test_conv_matches_direct_loop():
    net, p = tiny_net([{"kind": "conv2d", "filters": 3, "kernel": 3, "stride": 2, "padding": 1}],
                      (2, 5, 5), seed=1)
    x = np.random.default_rng(2).normal(size=(2, 2, 5, 5))
    ref = conv2d_ref(x, p["l0_conv2d.W"], p["l0_conv2d.b"], 2, 1)
    assert np.max(np.abs(net.apply(p, x).data - ref)) <= 1e-12


@pytest.mark.parametrize("k,s,pad,op", [(4, 2, 1, 0), (3, 1, 1, 0), (5, 2, 2, 1), (5, 3, 1, 0)])
def test_deconv_matches_scatter_oracle(k, s, pad, op):
    net, p = tiny_net([{"kind": "deconv2d", "filters": 2, "kernel": k, "stride": s,
                        "padding": pad, "output_padding": op}], (3, 3, 3), seed=4)
    x = np.random.default_rng(5).normal(size=(2, 3, 3, 3))
    ref = deconv2d_ref(x, p["l0_deconv2d.W"], p["l0_deconv2d.b"], s, pad, op)
    out = net.apply(p, x).data
    assert out.shape == ref.shape
    assert np.max(np.abs(out - ref)) <= 1e-12


def test_input_shape_mismatch_is_configuration_error():
    net, p = tiny_net([{"kind": "dense", "units": 2}], (3,))
    with pytest.raises(ConfigurationError):
        net.apply(p, np.zeros((1, 4)))


def test_non_finite_output_names_the_layer():
    net, p = tiny_net([{"kind": "dense", "units": 2}, {"kind": "tanh"}], (2,))
    with pytest.raises(NumericError, match="l0_dense"):
        net.apply(p, np.array([[np.inf, 0.0]]))


def test_forward_is_deterministic():
    net, p = tiny_net([{"kind": "conv2d", "filters": 4, "kernel": 3, "padding": 1}, {"kind": "relu"},
                       {"kind": "dense", "units": 3}], (2, 4, 4), seed=7)
    x = np.random.default_rng(1).normal(size=(3, 2, 4, 4))
    assert np.array_equal(net.apply(p, x).data, net.apply(p, x).data)


def test_batch_norm_mode_is_explicit():
    net, p = tiny_net([{"kind": "dense", "units": 3}, {"kind": "batch-norm"}], (2,), seed=2)
    x = np.random.default_rng(0).normal(size=(8, 2))
    train_out = net.apply(p, x, training=True).data
    # batch statistics: every unit is standardised before the affine part
    z = (train_out - p["l1_batch_norm.beta"]) / p["l1_batch_norm.gamma"]
    assert np.allclose(z.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(p.buffers["l1_batch_norm.running_mean"],
                       0.1 * (x @ p["l0_dense.W"] + p["l0_dense.b"]).mean(axis=0))
    p.buffers["l1_batch_norm.running_mean"][:] = 0.0
    p.buffers["l1_batch_norm.running_var"][:] = 1.0
    infer = net.apply(p, x, training=False).data
    h = x @ p["l0_dense.W"] + p["l0_dense.b"]
    expect = h / np.sqrt(1 + 1e-5) * p["l1_batch_norm.gamma"] + p["l1_batch_norm.beta"]
    assert np.allclose(infer, expect, atol=1e-12)


# -- initialisation -------------------------------------------------------------
def test_truncated_normal_redraws_outliers():
    rng = np.random.default_rng(0)
    w = truncated_normal(rng, (200_000,), INIT_STD)
    assert np.abs(w).max() <= 2 * INIT_STD
    # clamping would leave about 4.6% of the draws sitting exactly on the bounds
    assert np.count_nonzero(np.abs(w) == 2 * INIT_STD) == 0
    # std of a normal truncated at 2 sigma is 0.8796 sigma
    assert w.std() == pytest.approx(0.8796 * INIT_STD, rel=0.01)


def test_default_init_matches_documented_scheme():
    net = Network(NetworkSpec.from_dict({"input_shape": [50], "layers": [{"kind": "dense", "units": 40}]}))
    p = net.init(np.random.default_rng(0))
    assert np.all(p["l0_dense.b"] == INIT_BIAS)
    assert np.abs(p["l0_dense.W"]).max() <= 2 * INIT_STD


def test_fan_in_init_scales_with_inputs():
    net = Network(NetworkSpec.from_dict({"input_shape": [200], "init": "fan-in",
                                         "layers": [{"kind": "dense", "units": 100}]}))
    w = net.init(np.random.default_rng(0))["l0_dense.W"]
    assert w.std() == pytest.approx(0.8796 * math.sqrt(2 / 200), rel=0.03)


def test_layout_compatibility_follows_layout_id():
    a = tiny_net([{"kind": "dense", "units": 3}], (2,))[1]
    b = tiny_net([{"kind": "dense", "units": 3}], (2,), seed=5)[1]
    c = tiny_net([{"kind": "dense", "units": 4}], (2,))[1]
    a.check_compatible(b)
    with pytest.raises(ContractError):
        a.check_compatible(c)


def test_spec_round_trip():
    d = {"input_shape": [4, 6, 6], "init": "fan-in",
         "layers": [{"kind": "conv2d", "filters": 3, "kernel": 3, "stride": 2, "padding": 1},
                    {"kind": "leaky-relu", "slope": 0.2}, {"kind": "dense", "units": 5}]}
    spec = NetworkSpec.from_dict(d)
    assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_unknown_layer_kind_rejected():
    with pytest.raises(ConfigurationError):
        NetworkSpec.from_dict({"input_shape": [2], "layers": [{"kind": "maxpool"}]})


def test_checkpoint_round_trip(tmp_path):
    net, p = tiny_net([{"kind": "dense", "units": 3}, {"kind": "batch-norm"}], (2,))
    p.buffers["l1_batch_norm.running_mean"][:] = [1.0, 2.0, 3.0]
    save_params(tmp_path / "p.ckpt", p, {"note": "x"})
    q, meta = load_params(tmp_path / "p.ckpt")
    assert q.equal(p)
    assert meta["note"] == "x"


# -- backward -------------------------------------------------------------------
def test_square_gradient():
    t = Tensor(np.array(3.0), requires_grad=True)
    (g,) = ad.grad(t * t, [t])
    assert g.item() == 6.0


def test_constant_loss_gives_zero_gradients():
    net, p = tiny_net([{"kind": "dense", "units": 2}], (2,))
    pair = differentiable(p)
    g = backward(Tensor(np.array(4.0)), pair)
    assert np.all(g.flat == 0.0)
    assert g.layout_id == p.layout_id


def test_parameters_off_the_path_get_zero_gradient():
    net, p = tiny_net([{"kind": "dense", "units": 2}], (2,))
    pair = differentiable(p)
    loss = (pair[1]["l0_dense.W"] * pair[1]["l0_dense.W"]).sum()
    g = backward(loss, pair)
    assert np.all(g["l0_dense.b"] == 0.0)
    assert np.allclose(g["l0_dense.W"], 2 * p["l0_dense.W"])


def test_argmax_is_not_differentiable():
    t = Tensor(np.array([1.0, 3.0, 2.0]), requires_grad=True)
    out = ad.argmax(t) * 1.0
    with pytest.raises(ContractError):
        ad.grad(out, [t])


def test_dqn_loss_gradient_on_one_parameter_linear_q():
    net = Network(NetworkSpec.from_dict({"input_shape": [1], "layers": [{"kind": "dense", "units": 1}]}))
    p = net.init(np.random.default_rng(0)).with_flat(np.array([0.7, 0.0]))
    s, a, y = np.array([[1.5], [-0.4], [2.0]]), np.array([0, 0, 0]), np.array([2.0, 0.3, -1.0])
    pair = differentiable(p)
    g = backward(dqn_loss(net, pair, s, a, y), pair)
    fd = param_fd(lambda q: dqn_loss(net, q, s, a, y).item(), p)
    assert abs(g.flat[0] - fd[0]) / abs(fd[0]) <= 1e-6


LAYER_CASES = {
    "dense+tanh": ([{"kind": "dense", "units": 4}, {"kind": "tanh"}, {"kind": "dense", "units": 2}], (3,)),
    "relu": ([{"kind": "dense", "units": 4}, {"kind": "relu"}, {"kind": "dense", "units": 2}], (3,)),
    "leaky-relu": ([{"kind": "dense", "units": 4}, {"kind": "leaky-relu", "slope": 0.2},
                    {"kind": "dense", "units": 2}], (3,)),
    "softmax": ([{"kind": "dense", "units": 4}, {"kind": "softmax"}], (3,)),
    "conv2d": ([{"kind": "conv2d", "filters": 2, "kernel": 3, "stride": 2, "padding": 1},
                {"kind": "tanh"}, {"kind": "dense", "units": 2}], (2, 4, 4)),
    "deconv2d": ([{"kind": "deconv2d", "filters": 2, "kernel": 4, "stride": 2, "padding": 1},
                  {"kind": "tanh"}], (2, 2, 2)),
    "batch-norm": ([{"kind": "dense", "units": 3}, {"kind": "batch-norm"}, {"kind": "tanh"},
                    {"kind": "dense", "units": 2}], (3,)),
    "reshape": ([{"kind": "dense", "units": 8}, {"kind": "reshape", "shape": [2, 2, 2]},
                 {"kind": "conv2d", "filters": 1, "kernel": 2}], (3,)),
}


@pytest.mark.parametrize("case", sorted(LAYER_CASES))
def test_layer_gradients_match_finite_differences(case):
    layers, in_shape = LAYER_CASES[case]
    net, p = tiny_net(layers, in_shape, seed=11)
    assert net.num_params() <= 200
    x = np.random.default_rng(12).normal(size=(4,) + in_shape)
    c = np.random.default_rng(13).normal(size=(4,) + net.output_shape)
    training = case == "batch-norm"

    def loss_fn(params):
        return (net.apply(params, x, training=training) * c).sum()

    pair = differentiable(p)
    g = backward(loss_fn(pair), pair)
    fd = param_fd(lambda q: loss_fn(q).item(), p)
    assert rel_err(g.flat, fd) <= 1e-4


def test_input_gradient_matches_finite_differences():
    net, p = tiny_net(*LAYER_CASES["conv2d"], seed=3)
    x = np.random.default_rng(4).normal(size=(1, 2, 4, 4))
    xt = Tensor(x, requires_grad=True)
    (g,) = ad.grad(net.apply(p, xt).sum(), [xt])
    fd = central_diff(lambda v: net.apply(p, v.reshape(x.shape)).data.sum(), x.reshape(-1))
    assert rel_err(g.data.reshape(-1), fd) <= 1e-6


# -- clipping ---------------------------------------------------------------------
def test_clip_below_threshold_is_identity():
    g = _vec_params([3.0, 4.0])
    assert clip_global_norm(g, 10.0) is g


def test_clip_three_four_five():
    g = clip_global_norm(_vec_params([3.0, 4.0]), 1.0)
    assert np.allclose(g.flat[:2], [0.6, 0.8], atol=1e-15)


def test_clip_rejects_non_positive_bound():
    with pytest.raises(ContractError):
        clip_global_norm(_vec_params([1.0, 1.0]), 0.0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 2, elements=st.floats(-1e3, 1e3)), st.floats(1e-3, 1e3))
def test_clip_norm_and_idempotence(values, max_norm):
    g = _vec_params(values)
    once = clip_global_norm(g, max_norm)
    assert global_norm(once) == pytest.approx(min(global_norm(g), max_norm), rel=1e-12, abs=1e-300)
    twice = clip_global_norm(once, max_norm)
    assert np.allclose(twice.flat, once.flat, rtol=1e-12, atol=0)


# -- optimisers -----------------------------------------------------------------
def test_rmsprop_zero_gradient_is_no_op():
    p = _vec_params([1.0, -2.0])
    st_ = rmsprop(p)
    assert np.array_equal(rmsprop_step(st_, p, p.zeros_like()).flat, p.flat)


def test_rmsprop_first_step_value():
    p = _vec_params([0.0, 0.0])
    st_ = rmsprop(p, lr=0.00025, decay=0.99, eps=1e-6)
    q = rmsprop_step(st_, p, p.with_flat(np.ones_like(p.flat)))
    assert q.flat[0] == pytest.approx(-0.00025 / math.sqrt(0.01 + 1e-6), rel=1e-12)


def test_rmsprop_descends_quadratic_bowl():
    p = _vec_params([1.0, -2.0])
    st_ = rmsprop(p, lr=0.01)
    losses = []
    for _ in range(100):
        losses.append(float(np.sum(p.flat ** 2)))
        p = rmsprop_step(st_, p, p.with_flat(2 * p.flat))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_rmsprop_layout_mismatch():
    p = _vec_params([1.0, 1.0])
    other = tiny_net([{"kind": "dense", "units": 5}], (2,))[1]
    with pytest.raises(ContractError):
        rmsprop_step(rmsprop(p), p, other)


def test_adam_zero_gradient_is_no_op():
    p = _vec_params([1.0, -2.0])
    assert np.array_equal(adam_step(adam(p), p, p.zeros_like()).flat, p.flat)


def test_adam_first_step_value():
    p = _vec_params([0.0, 0.0])
    q = adam_step(adam(p, lr=0.001, beta1=0.0, beta2=0.99, eps=1e-8), p,
                  p.with_flat(np.ones_like(p.flat)))
    assert q.flat[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)


def test_adam_converges_on_quadratic_bowl():
    target = np.array([0.3, -0.2, 0.0])
    p = _vec_params([1.0, -1.0])
    target = np.resize(target, p.flat.size)
    st_ = adam(p, lr=0.01, beta1=0.9, beta2=0.99)
    for _ in range(500):
        p = adam_step(st_, p, p.with_flat(2 * (p.flat - target)))
    assert np.max(np.abs(p.flat - target)) < 1e-3
