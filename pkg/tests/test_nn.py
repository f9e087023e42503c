import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_mlp
from dissect.errors import (
    DivergenceError,
    MissingSnapshotError,
    NumericError,
    ParseError,
    ResourceError,
    ShapeError,
    UnsupportedError,
)
from dissect.nn import (
    NO_SNAPSHOT,
    Conv2d,
    Dense,
    Flatten,
    Network,
    TrainConfig,
    accuracy,
    build_mlp,
    build_toy_net,
    conv_as_matrix,
    dumps_network,
    forward,
    grad_input,
    jacobian,
    jacobian_path_sum,
    load_network,
    loads_network,
    predict,
    save_network,
    train,
)

# --------------------------------------------------------------------------
# Independent oracles
# --------------------------------------------------------------------------


def naive_dense_forward(weights, biases, activations, x):
    """Per-neuron double loop, no numpy linear algebra."""
    a = list(map(float, x))
    for W, b, act in zip(weights, biases, activations):
        out = []
        for v in range(len(W)):
            s = 0.0 if b is None else float(b[v])
            for u in range(len(a)):
                s += float(W[v][u]) * a[u]
            out.append(max(s, 0.0) if act == "relu" else s)
        a = out
    return np.array(a)


def naive_conv(x, k, stride, padding):
    """Direct convolution by explicit loops over every output position."""
    c, h, w = x.shape
    oc, ic, kh, kw = k.shape
    xp = np.zeros((c, h + 2 * padding, w + 2 * padding))
    xp[:, padding : padding + h, padding : padding + w] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((oc, oh, ow))
    for o in range(oc):
        for r in range(oh):
            for q in range(ow):
                s = 0.0
                for i in range(ic):
                    for a in range(kh):
                        for b in range(kw):
                            s += k[o, i, a, b] * xp[i, r * stride + a, q * stride + b]
                out[o, r, q] = s
    return out


def finite_difference(f, x, h=1e-4):
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h
        e = e.reshape(x.shape)
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def min_abs_preactivation(net, x):
    _, record = forward(net, x)
    return min(np.abs(z).min() for z, layer in zip(record.pre_activations, net.layers)
               if layer.activation == "relu")


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------


def test_identity_dense_forward():
    net = Network([Dense(np.eye(2), activation="identity")], (2,))
    logits, record = forward(net, [1.0, 2.0])
    np.testing.assert_array_equal(logits, [1.0, 2.0])
    assert len(record.outputs) == 2


def test_hand_computed_three_layer_net():
    # hand-built weights; activations worked out by hand
    W1 = np.array([[1, 0, 1, 0], [0, 1, 0, -1], [1, 1, 1, 1]], dtype=float)
    W2 = np.array([[1, 2, 1], [-1, 0, 2]], dtype=float)
    W3 = np.array([[1, -1], [2, 1]], dtype=float)
    net = Network([Dense(W1), Dense(W2), Dense(W3, activation="identity")], (4,))
    logits, record = forward(net, [1, 2, -1, 3])
    np.testing.assert_array_equal(record.pre_activations[0], [0, -1, 5])
    np.testing.assert_array_equal(record.outputs[1], [0, 0, 5])
    np.testing.assert_array_equal(record.outputs[2], [5, 10])
    np.testing.assert_array_equal(logits, [-5, 20])


def test_forward_matches_naive_evaluator():
    rng = np.random.default_rng(0)
    for _ in range(50):
        depth = rng.integers(1, 4)
        widths = list(rng.integers(1, 6, size=depth + 1))
        net = random_mlp(rng, widths, bias=bool(rng.integers(2)))
        x = rng.normal(size=widths[0])
        ws = [l.weight for l in net.layers]
        bs = [l.bias for l in net.layers]
        acts = [l.activation for l in net.layers]
        np.testing.assert_allclose(forward(net, x)[0], naive_dense_forward(ws, bs, acts, x),
                                   rtol=0, atol=1e-12)


def test_forward_is_deterministic():
    net = build_toy_net(3)
    x = np.random.default_rng(1).uniform(size=(1, 3, 3))
    a, _ = forward(net, x)
    b, _ = forward(net, x)
    assert a.tobytes() == b.tobytes()


def test_record_shapes_follow_layers():
    net = build_toy_net(0)
    _, record = forward(net, np.zeros((1, 3, 3)))
    assert [o.shape for o in record.outputs] == net.shapes
    assert len(record.pre_activations) == len(net.layers)


def test_forward_rejects_wrong_shape():
    net = build_mlp([3, 2], 0)
    with pytest.raises(ShapeError, match=r"\(3,\).*\(4,\)"):
        forward(net, np.zeros(4))


def test_layer_shapes_must_compose():
    with pytest.raises(ShapeError):
        Network([Dense(np.ones((2, 3))), Dense(np.ones((2, 4)))], (3,))


def test_softmax_output_logits_are_pre_softmax():
    W = np.array([[1.0, 0.0], [0.0, 2.0]])
    net = Network([Dense(W, activation="softmax")], (2,))
    logits, record = forward(net, [1.0, 1.0])
    np.testing.assert_allclose(logits, [1.0, 2.0])
    np.testing.assert_allclose(record.outputs[-1].sum(), 1.0)


# --------------------------------------------------------------------------
# grad_input
# --------------------------------------------------------------------------


def test_linear_gradient_closed_form():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(3, 4))
    net = Network([Dense(W, activation="identity")], (4,))
    x = rng.normal(size=4)
    z = W @ x
    p = np.exp(z - z.max())
    p /= p.sum()
    e = np.eye(3)[1]
    np.testing.assert_allclose(grad_input(net, x, 1), W.T @ (p - e), atol=1e-14)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 100:
        net = random_mlp(rng, [4, 5, 5, 3], bias=True)
        x = rng.normal(size=4)
        if min_abs_preactivation(net, x) < 1e-3:
            continue
        y = int(rng.integers(3))

        def loss(v):
            z = forward(net, v)[0]
            z = z - z.max()
            return -(z[y] - np.log(np.exp(z).sum()))

        fd = finite_difference(loss, x)
        g = grad_input(net, x, y)
        assert np.linalg.norm(g - fd) <= 1e-3 * max(np.linalg.norm(fd), 1e-8)
        checked += 1


def test_zero_network_has_zero_gradient():
    net = Network([Dense(np.zeros((4, 3))), Dense(np.zeros((2, 4)), activation="identity")], (3,))
    np.testing.assert_array_equal(grad_input(net, np.ones(3), 0), np.zeros(3))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_is_rejected():
    net = Network([Dense(np.array([[np.inf, 0.0], [0.0, 1.0]]), activation="identity")], (2,))
    with pytest.raises(NumericError):
        grad_input(net, np.array([1.0, 1.0]), 0)


def test_conv_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    net = Network(
        [Conv2d(rng.normal(size=(2, 2, 2, 2)), rng.normal(size=2), stride=1, padding=1),
         Flatten(), Dense(rng.normal(size=(3, 32)), activation="identity")],
        (2, 3, 3),
    )
    x = rng.normal(size=(2, 3, 3))

    def loss(v):
        z = forward(net, v)[0]
        z = z - z.max()
        return -(z[2] - np.log(np.exp(z).sum()))

    np.testing.assert_allclose(grad_input(net, x, 2), finite_difference(loss, x).reshape(x.shape),
                               rtol=1e-5, atol=1e-7)


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def test_training_keeps_the_snapshot():
    net = build_toy_net(0)
    before = net.snapshot_digest()
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(64, 1, 3, 3))
    y = rng.integers(0, 2, size=64)
    trained = train(net, X, y, TrainConfig(epochs=3))
    assert trained.snapshot_digest() == before
    assert net.snapshot_digest() == before
    for a, b in zip(trained.init_params, net.params()):
        np.testing.assert_array_equal(a, b)
    assert any(not np.array_equal(a, b) for a, b in zip(trained.params(), net.params()))


def test_snapshot_arrays_are_read_only():
    net = build_toy_net(0)
    with pytest.raises(ValueError):
        net.init_params[0][0] = 1.0


def test_separable_blobs_reach_full_accuracy():
    rng = np.random.default_rng(5)
    X = np.concatenate([rng.normal(-2, 0.3, size=(50, 2)), rng.normal(2, 0.3, size=(50, 2))])
    y = np.repeat([0, 1], 50)
    net = train(build_mlp([2, 8, 2], 0), X, y, TrainConfig(epochs=30, lr=1e-2))
    assert accuracy(net, X, y) == 1.0


def test_memorization_loss_mostly_decreases():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(32, 6))
    y = rng.integers(0, 3, size=32)
    losses = []
    train(build_mlp([6, 16, 3], 1), X, y, TrainConfig(epochs=100, lr=1e-2),
          on_epoch=lambda e, l: losses.append(l))
    assert len(losses) == 100
    assert sum(b > a for a, b in zip(losses, losses[1:])) <= 5


def test_sgd_optimizer_trains():
    rng = np.random.default_rng(7)
    X = np.concatenate([rng.normal(-1, 0.2, size=(40, 2)), rng.normal(1, 0.2, size=(40, 2))])
    y = np.repeat([0, 1], 40)
    net = train(build_mlp([2, 4, 2], 0), X, y, TrainConfig(optimizer="sgd", lr=0.1, epochs=20))
    assert accuracy(net, X, y) == 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch_and_batch():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(8, 2))
    y = rng.integers(0, 2, size=8)
    with pytest.raises(DivergenceError) as info:
        train(build_mlp([2, 4, 2], 0), X, y, TrainConfig(optimizer="sgd", lr=1e300, epochs=5, batch_size=4))
    assert 0 <= info.value.epoch < 5
    assert 0 <= info.value.batch < 2


def test_training_validates_labels():
    net = build_mlp([2, 2], 0)
    with pytest.raises(ValueError):
        train(net, np.zeros((2, 2)), [0, 2])
    with pytest.raises(ValueError):
        train(net, np.zeros((0, 2)), [])


# --------------------------------------------------------------------------
# conv_as_matrix
# --------------------------------------------------------------------------

PRINTED_TOEPLITZ = np.array([
    [10, 20, 0, 30, 40, 0, 0, 0, 0],
    [0, 10, 20, 0, 30, 40, 0, 0, 0],
    [0, 0, 0, 10, 20, 0, 30, 40, 0],
    [0, 0, 0, 0, 10, 20, 0, 30, 40],
], dtype=float)


def test_toeplitz_example():
    layer = Conv2d(np.array([[[[10.0, 20.0], [30.0, 40.0]]]]))
    m = conv_as_matrix(layer, (1, 3, 3))
    np.testing.assert_array_equal(m.toarray(), PRINTED_TOEPLITZ)
    x = np.arange(1, 10, dtype=float)
    np.testing.assert_array_equal(m.matvec(x), PRINTED_TOEPLITZ @ x)


def test_one_by_one_kernel_is_scaled_identity():
    layer = Conv2d(np.full((1, 1, 1, 1), 2.5))
    np.testing.assert_array_equal(conv_as_matrix(layer, (1, 3, 4)).toarray(), 2.5 * np.eye(12))


def test_conv_matrix_matches_direct_convolution():
    rng = np.random.default_rng(8)
    worst = 0.0
    for ic in (1, 2, 3):
        for oc in (1, 2, 3):
            for stride in (1, 2):
                for padding in (0, 1):
                    k = rng.normal(size=(oc, ic, 2 + int(rng.integers(2)), 2))
                    layer = Conv2d(k, stride=stride, padding=padding)
                    shape = (ic, 5, 4)
                    m = conv_as_matrix(layer, shape)
                    for _ in range(50):
                        x = rng.normal(size=shape)
                        ref = naive_conv(x, k, stride, padding).ravel()
                        worst = max(worst, np.abs(m.matvec(x) - ref).max())
                        worst = max(worst, np.abs(layer.linear(x[None])[0].ravel() - ref).max())
    assert worst <= 1e-10


def test_conv_matrix_entries_point_to_their_kernel_entry():
    rng = np.random.default_rng(9)
    k = rng.normal(size=(2, 3, 2, 2))
    m = conv_as_matrix(Conv2d(k, stride=2, padding=1), (3, 4, 4))
    np.testing.assert_array_equal(m.values, k.ravel()[m.params])
    order = np.lexsort((m.cols, m.rows))
    np.testing.assert_array_equal(order, np.arange(len(order)))


def test_conv_matrix_needs_conv_layer():
    with pytest.raises(UnsupportedError):
        conv_as_matrix(Dense(np.eye(2)), (2,))


# --------------------------------------------------------------------------
# Jacobians
# --------------------------------------------------------------------------


def test_linear_jacobian_is_the_weight():
    W = np.random.default_rng(10).normal(size=(3, 5))
    net = Network([Dense(W, activation="identity")], (5,))
    np.testing.assert_array_equal(jacobian(net, np.ones(5)), W)
    np.testing.assert_allclose(jacobian_path_sum(net, np.ones(5)), W, atol=0)


def test_all_active_two_layer_jacobian():
    rng = np.random.default_rng(11)
    W1 = np.abs(rng.normal(size=(4, 3)))
    W2 = rng.normal(size=(2, 4))
    net = Network([Dense(W1), Dense(W2, activation="identity")], (3,))
    np.testing.assert_allclose(jacobian(net, np.ones(3)), W2 @ W1, atol=1e-14)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(12)
    checked = 0
    while checked < 30:
        net = random_mlp(rng, [4, 6, 5, 3], bias=True)
        x = rng.normal(size=4)
        if min_abs_preactivation(net, x) < 1e-3:
            continue
        fd = finite_difference(lambda v: forward(net, v)[0], x)
        np.testing.assert_allclose(jacobian(net, x), fd, rtol=1e-4, atol=1e-8)
        checked += 1


def test_conv_jacobian_matches_finite_differences():
    net = build_toy_net(4)
    x = np.random.default_rng(13).uniform(size=(1, 3, 3))
    fd = finite_difference(lambda v: forward(net, v)[0], x).reshape(2, -1)
    np.testing.assert_allclose(jacobian(net, x), fd, rtol=1e-4, atol=1e-8)


def test_dead_neuron_paths_contribute_nothing():
    W1 = np.array([[1.0, 1.0], [-1.0, -1.0]])
    W2 = np.array([[2.0, 3.0]])
    net = Network([Dense(W1), Dense(W2, activation="identity")], (2,))
    # second hidden neuron has pre-activation -2 and is dead
    np.testing.assert_array_equal(jacobian_path_sum(net, [1.0, 1.0]), [[2.0, 2.0]])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_path_sum_equals_jacobian(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 5))
    widths = [int(w) for w in rng.integers(1, 7, size=depth + 1)]
    net = random_mlp(rng, widths)
    x = rng.normal(size=widths[0])
    np.testing.assert_allclose(jacobian_path_sum(net, x), jacobian(net, x), rtol=0, atol=1e-9)


def test_path_sum_rejects_biases_and_conv():
    with pytest.raises(UnsupportedError):
        jacobian_path_sum(build_mlp([2, 2, 2], 0, bias=True), np.ones(2))
    with pytest.raises(UnsupportedError):
        jacobian_path_sum(build_toy_net(0), np.ones((1, 3, 3)))


def test_path_sum_guard():
    net = build_mlp([10, 10, 10, 10, 10], 0, bias=False)
    with pytest.raises(ResourceError):
        jacobian_path_sum(net, np.ones(10), max_paths=10**4)


def test_jacobian_rejects_softmax():
    net = Network([Dense(np.eye(2), activation="softmax")], (2,))
    with pytest.raises(UnsupportedError):
        jacobian(net, np.ones(2))


# --------------------------------------------------------------------------
# Serialization and snapshots
# --------------------------------------------------------------------------


def test_network_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(14)
    X = rng.uniform(size=(32, 1, 3, 3))
    net = train(build_toy_net(2), X, rng.integers(0, 2, 32), TrainConfig(epochs=2))
    path = tmp_path / "net.dsct"
    save_network(net, path)
    back = load_network(path)
    assert dumps_network(back) == dumps_network(net)
    for a, b in zip(back.params() + list(back.init_params), net.params() + list(net.init_params)):
        assert a.tobytes() == b.tobytes()
    assert back.seed == 2


def test_round_trip_without_snapshot():
    net = build_mlp([3, 2], 0).without_snapshot()
    back = loads_network(dumps_network(net))
    assert not back.has_snapshot
    with pytest.raises(MissingSnapshotError):
        back.init_weight(0)


def test_truncated_network_file():
    data = dumps_network(build_toy_net(0))
    with pytest.raises(ParseError) as info:
        loads_network(data[:-5])
    assert info.value.offset > 0
    with pytest.raises(ParseError):
        loads_network(b"XXXX" + data[4:])


def test_snapshot_shape_mismatch():
    with pytest.raises(ShapeError):
        Network([Dense(np.eye(2))], (2,), init_params=[np.eye(3)])


def test_explicit_no_snapshot_sentinel():
    net = Network([Dense(np.eye(2))], (2,), init_params=NO_SNAPSHOT)
    assert not net.has_snapshot


def test_predict_on_batches():
    net = build_toy_net(0)
    X = np.random.default_rng(15).uniform(size=(5, 1, 3, 3))
    expected = [int(np.argmax(forward(net, x)[0])) for x in X]
    np.testing.assert_array_equal(predict(net, X, batch_size=2), expected)
