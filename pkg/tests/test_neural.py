import json

import numpy as np
import pytest

from ddmd.errors import InvalidArgument
from ddmd.neural import (
    MlpParams,
    MlpSpec,
    NeuralDictionary,
    activation,
    activation_grad,
    backward,
    draw_masks,
    forward,
    init_params,
    preset,
)
from ddmd.numerics import Rng

EPS = 1e-6


def _fd_check(spec, params, y, upstream, masks=None):
    """Worst relative error of backward against central differences over every parameter entry."""
    mode = "train" if masks is not None else "eval"
    _, tape = forward(spec, params, y, mode, masks=masks)
    grads = backward(spec, params, tape, upstream)

    def objective():
        return float(np.sum(upstream * forward(spec, params, y, mode, masks=masks)[0]))

    worst = 0.0
    for arr, g in zip(params.arrays(), grads.arrays()):
        fd = np.empty_like(arr)
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + EPS
            hi = objective()
            arr[idx] = keep - EPS
            lo = objective()
            arr[idx] = keep
            fd[idx] = (hi - lo) / (2 * EPS)
        scale = max(np.abs(fd).max(), np.abs(g).max(), 1e-10)
        worst = max(worst, np.abs(g - fd).max() / scale)
    return worst


@pytest.mark.parametrize("instance", range(20))
def test_backward_matches_finite_differences(instance):
    rng = Rng(1000 + instance)
    depth = 1 + instance % 5
    widths = tuple(int(w) for w in 2 + (rng.uniform(depth) * 15).astype(int))
    kind = ("elu", "tanh", "elu", "crelu")[instance % 4]
    spec = MlpSpec(1 + instance % 4, widths[:-1], widths[-1], kind, residual=instance % 3 == 0)
    params = init_params(spec, rng)
    for b in params.biases:
        b[:] = rng.normal(b.shape, scale=0.1)
    y = rng.normal((3, spec.input_dim))
    upstream = rng.normal((3, spec.lifted_dim))
    assert _fd_check(spec, params, y, upstream) < 1e-5


def test_backward_with_dropout_masks():
    rng = Rng(5)
    spec = MlpSpec(3, (8, 8), 6, "elu", dropout_rate=0.3)
    params = init_params(spec, rng)
    y = rng.normal((4, 3))
    masks = draw_masks(spec, 4, rng)
    upstream = rng.normal((4, spec.lifted_dim))
    assert _fd_check(spec, params, y, upstream, masks) < 1e-5


def test_backward_input_gradient():
    rng = Rng(6)
    spec = MlpSpec(3, (6,), 4, "tanh")
    params = init_params(spec, rng)
    y = rng.normal((2, 3))
    up = rng.normal((2, spec.lifted_dim))
    _, tape = forward(spec, params, y)
    g = backward(spec, params, tape, up).input
    fd = np.empty_like(y)
    for idx in np.ndindex(y.shape):
        yp, ym = y.copy(), y.copy()
        yp[idx] += EPS
        ym[idx] -= EPS
        fd[idx] = (np.sum(up * forward(spec, params, yp)[0]) - np.sum(up * forward(spec, params, ym)[0])) / (2 * EPS)
    assert np.abs(g - fd).max() < 1e-8


def test_backward_zero_upstream():
    rng = Rng(7)
    spec = MlpSpec(2, (5, 5), 3, "elu")
    params = init_params(spec, rng)
    _, tape = forward(spec, params, rng.normal((4, 2)))
    grads = backward(spec, params, tape, np.zeros((4, spec.lifted_dim)))
    assert all(not a.any() for a in grads.arrays())


def test_relu_positive_regime_is_linear_chain():
    rng = Rng(8)
    spec = MlpSpec(3, (4, 5), 2, "relu")
    params = MlpParams([np.abs(rng.normal(s)) for s in spec.layer_shapes()],
                       [np.full(s[0], 0.1) for s in spec.layer_shapes()])
    y = np.abs(rng.normal((1, 3)))
    up = rng.normal((1, spec.lifted_dim))
    _, tape = forward(spec, params, y)
    g = backward(spec, params, tape, up)
    w1, w2, w3 = params.weights
    # linear network: d/dy of up_out . (W3 (W2 (W1 y + b1) + b2) + b3)
    chain = up[0, 3:] @ w3 @ w2 @ w1
    np.testing.assert_allclose(g.input[0], up[0, :3] + chain, atol=1e-12)
    h1 = w1 @ y[0] + 0.1
    np.testing.assert_allclose(g.weights[1], np.outer(up[0, 3:] @ w3, h1), atol=1e-12)


def test_zero_params_relu():
    spec = MlpSpec(2, (4,), 3, "relu")
    lifted, _ = forward(spec, MlpParams.zeros(spec), np.array([1.5, -2.0]))
    np.testing.assert_array_equal(lifted, [1.5, -2.0, 0, 0, 0])


def test_no_dropout_train_equals_eval():
    rng = Rng(9)
    spec = MlpSpec(3, (6, 6), 4, "elu")
    params = init_params(spec, rng)
    y = rng.normal((5, 3))
    a, _ = forward(spec, params, y, "eval")
    b, _ = forward(spec, params, y, "train", rng=Rng(1))
    assert np.array_equal(a, b)


def test_single_layer_tanh_by_hand():
    spec = MlpSpec(2, (), 2, "tanh")
    w = np.array([[0.5, -0.25], [1.0, 2.0]])
    b = np.array([0.1, -0.3])
    lifted, _ = forward(spec, MlpParams([w], [b]), np.array([0.4, 0.2]))
    expected = [0.4, 0.2, np.tanh(0.5 * 0.4 - 0.25 * 0.2 + 0.1), np.tanh(0.4 + 0.4 - 0.3)]
    np.testing.assert_allclose(lifted, expected, atol=1e-12)


def test_activation_values():
    assert activation("elu", 0.0) == 0.0
    assert activation_grad("elu", 0.0) == 1.0
    assert activation("elu", -1.0) == pytest.approx(np.exp(-1.0) - 1.0)
    assert activation_grad("relu", 0.0) == 0.0
    np.testing.assert_array_equal(activation("crelu", np.array([-2.0])), [0.0, 2.0])
    z = np.linspace(-2, 2, 21)
    fd = (np.tanh(z + EPS) - np.tanh(z - EPS)) / (2 * EPS)
    assert np.abs(activation_grad("tanh", z) - fd).max() < 1e-8
    with pytest.raises(InvalidArgument):
        activation("swish", 1.0)


def test_crelu_lifted_dim():
    spec = MlpSpec(3, (4, 4), 5, "crelu")
    params = init_params(spec, Rng(1))
    lifted, _ = forward(spec, params, np.ones((2, 3)))
    assert spec.lifted_dim == 3 + 10 == lifted.shape[1]
    assert MlpSpec(3, (4,), 5, "elu").lifted_dim == 8


def test_init_statistics():
    spec = MlpSpec(64, (), 4096, "elu")
    params = init_params(spec, Rng(2))
    w = params.weights[0]
    assert abs(w.std() / np.sqrt(2.0 / 64) - 1.0) < 0.2
    assert not params.biases[0].any()
    again = init_params(spec, Rng(2))
    assert np.array_equal(again.weights[0], w)


def test_dropout_expectation():
    # one hidden layer in the linear regime of relu: the mean of the
    # train-mode output over many masks must equal the eval output
    rng = Rng(3)
    spec = MlpSpec(3, (16,), 4, "relu", dropout_rate=0.5)
    params = MlpParams([np.abs(rng.normal(s)) for s in spec.layer_shapes()],
                       [np.zeros(s[0]) for s in spec.layer_shapes()])
    y = np.array([[0.5, 1.0, 0.2]])
    eval_out, _ = forward(spec, params, y)
    rep = np.repeat(y, 10_000, axis=0)
    train_out, _ = forward(spec, params, rep, "train", rng=Rng(4))
    mean = train_out[:, 3:].mean(axis=0)
    assert np.all(np.abs(mean / eval_out[0, 3:] - 1.0) < 0.02)


def test_train_mode_deterministic_given_seed():
    spec = MlpSpec(2, (8, 8), 3, "elu", dropout_rate=0.2)
    params = init_params(spec, Rng(1))
    y = Rng(2).normal((6, 2))
    a, _ = forward(spec, params, y, "train", rng=Rng(7))
    b, _ = forward(spec, params, y, "train", rng=Rng(7))
    assert np.array_equal(a, b)
    with pytest.raises(InvalidArgument):
        forward(spec, params, y, "train")


def test_residual_skip_adds_input():
    spec = MlpSpec(2, (4, 4), 4, "relu", residual=True)
    params = MlpParams.zeros(spec)
    params.biases[0][:] = 1.0
    lifted, _ = forward(spec, params, np.zeros(2))
    np.testing.assert_array_equal(lifted[2:], np.ones(4))


def test_neural_dictionary_round_trip_and_rows():
    spec = preset("small", 3)
    d = NeuralDictionary(spec, init_params(spec, Rng(4)))
    back = NeuralDictionary.from_dict(json.loads(json.dumps(d.to_dict())))
    y = Rng(5).normal((7, 3))
    batch = back.lift(y)
    assert np.array_equal(batch, d.lift(y))
    assert np.array_equal(batch[:, :3], y)
    for i in range(7):
        assert np.array_equal(d.lift(y[i]), batch[i])


def test_spec_validation():
    with pytest.raises(InvalidArgument):
        MlpSpec(0)
    with pytest.raises(InvalidArgument):
        MlpSpec(2, dropout_rate=1.0)
    with pytest.raises(InvalidArgument):
        NeuralDictionary(MlpSpec(2, (3,), 2), MlpParams.zeros(MlpSpec(2, (4,), 2)))
    assert preset("deep20", 18).depth == 20
