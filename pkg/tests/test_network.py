import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_net
from visland.network import (IDENTITY, RELU, Layer, LayeredReluNetwork, NetworkError,
                             WeightFileError, compose, dumps, evaluate, identity_network,
                             load_weights, loads, save_weights, stack_parallel)
from visland.perception import build_abs_gadget, build_pixel_gadget


def interpret(net, x):
    # plain-Python forward pass, one scalar at a time
    x = [float(v) for v in x]
    for layer in net.layers:
        w = layer.weight.toarray() if sp.issparse(layer.weight) else layer.weight
        out = []
        for i in range(layer.out_dim):
            acc = float(layer.bias[i])
            for j in range(layer.in_dim):
                acc += float(w[i, j]) * x[j]
            out.append(max(acc, 0.0) if layer.activation == RELU else acc)
        x = out
    return np.array(x)


def test_identity_evaluates_to_input():
    np.testing.assert_array_equal(evaluate(identity_network(2), [3.0, -2.0]), [3.0, -2.0])


def test_single_relu():
    net = LayeredReluNetwork((Layer(np.array([[1.0]]), np.zeros(1), RELU),))
    assert evaluate(net, [-5.0]).tolist() == [0.0]


def test_matches_straight_line_interpreter():
    rng = np.random.default_rng(0)
    for _ in range(20):
        net = random_net(rng, [4, 7, 5, 3])
        x = rng.normal(size=4)
        np.testing.assert_allclose(evaluate(net, x), interpret(net, x), rtol=1e-12, atol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(NetworkError):
        evaluate(identity_network(3), np.zeros(2))
    with pytest.raises(NetworkError):
        Layer(np.ones((2, 3)), np.zeros(3), RELU)
    with pytest.raises(NetworkError):
        compose(identity_network(2), identity_network(3))


def test_nonfinite_weights_rejected():
    with pytest.raises(NetworkError):
        Layer(np.array([[np.nan]]), np.zeros(1), RELU)


def test_compose_identity_and_negation():
    rng = np.random.default_rng(1)
    net = random_net(rng, [3, 6, 2])
    x = rng.normal(size=(50, 3))
    np.testing.assert_allclose(evaluate(compose(identity_network(3), net), x), evaluate(net, x),
                               rtol=1e-12, atol=1e-12)
    neg = LayeredReluNetwork((Layer(-np.eye(3), np.zeros(3), IDENTITY),))
    np.testing.assert_array_equal(evaluate(compose(neg, neg), x), x)


def test_compose_keeps_relu_boundary():
    rng = np.random.default_rng(2)
    a = random_net(rng, [3, 4, 4])
    a = LayeredReluNetwork(a.layers[:-1] + (Layer(a.layers[-1].weight, a.layers[-1].bias, RELU),))
    b = random_net(rng, [4, 5, 1])
    assert len(compose(a, b, fuse=True).layers) == len(a.layers) + len(b.layers)
    # identity output layer is folded
    c = random_net(rng, [3, 4, 4])
    assert len(compose(c, b, fuse=True).layers) == len(c.layers) + len(b.layers) - 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_compose_is_function_composition(seed, fuse):
    rng = np.random.default_rng(seed)
    f = random_net(rng, [3, 5, 4])
    g = random_net(rng, [4, 6, 2])
    x = rng.normal(size=(16, 3))
    np.testing.assert_allclose(evaluate(compose(f, g, fuse=fuse), x),
                               evaluate(g, evaluate(f, x)), rtol=1e-9, atol=1e-9)


def test_stack_of_one_and_abs_pair():
    rng = np.random.default_rng(3)
    net = random_net(rng, [2, 3, 1])
    x = rng.normal(size=(10, 2))
    np.testing.assert_array_equal(evaluate(stack_parallel([net]), x), evaluate(net, x))
    pair = stack_parallel([build_abs_gadget(), build_abs_gadget()])
    assert evaluate(pair, [-2.0, 3.0]).tolist() == [2.0, 3.0]
    with pytest.raises(NetworkError):
        stack_parallel([])


def test_stack_of_64_pixel_gadgets():
    gadgets = [build_pixel_gadget((i, j)) for i in range(1, 9) for j in range(1, 9)]
    stacked = stack_parallel(gadgets, sparse=True)
    rng = np.random.default_rng(4)
    z = rng.uniform(0, 8, size=(20, 4))
    zeta = np.column_stack([z, z[:, 0] * z[:, 3] - z[:, 1] * z[:, 2]])
    out = evaluate(stacked, np.tile(zeta, (1, 64)))
    ref = np.column_stack([evaluate(g, zeta)[:, 0] for g in gadgets])
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(1, 3), st.integers(0, 1000))
def test_stack_is_concatenation(widths, depth, seed):
    rng = np.random.default_rng(seed)
    nets = [random_net(rng, [w] + [3] * (depth - 1) + [2]) for w in widths]
    x = rng.normal(size=(5, sum(widths)))
    out = evaluate(stack_parallel(nets), x)
    cuts = np.cumsum([0] + widths)
    ref = np.hstack([evaluate(n, x[:, cuts[k]:cuts[k + 1]]) for k, n in enumerate(nets)])
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_weight_roundtrip(tmp_path):
    p = tmp_path / "id.json"
    save_weights(identity_network(3), p)
    assert load_weights(p).equals(identity_network(3))
    rng = np.random.default_rng(5)
    net = random_net(rng, [5, 8, 8, 2])
    p = tmp_path / "net.json"
    save_weights(net, p)
    back = load_weights(p)
    for a, b in zip(net.layers, back.layers):
        assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
    assert dumps(back) == p.read_text()


def test_sparse_roundtrip_is_byte_identical():
    net = stack_parallel([build_pixel_gadget((1, 1)), build_pixel_gadget((2, 3))], sparse=True)
    text = dumps(net)
    assert dumps(loads(text)) == text


def test_mismatched_bias_is_rejected():
    text = dumps(identity_network(2)).replace('"bias":[0.0,0.0]', '"bias":[0.0]')
    with pytest.raises(WeightFileError) as err:
        loads(text)
    assert err.value.lineno == 6


def test_parse_errors_carry_line_numbers():
    text = dumps(identity_network(2))
    broken = text.replace('"activation":"identity"', '"activation":identity')
    with pytest.raises(WeightFileError) as err:
        loads(broken)
    assert err.value.lineno == 6
    with pytest.raises(WeightFileError):
        loads(text.replace("1.0", "NaN", 1))
    with pytest.raises(WeightFileError):
        loads(text.replace("visland-relu-net", "other"))
