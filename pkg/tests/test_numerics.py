import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charnmt import numerics as nm
from charnmt.errors import ContractError, DimensionError, DomainError, NonFiniteError

from fdcheck import assert_grads_close, finite_difference_grads


def wide(data):
    return nm.tensor(data, "wide")


# --- affine ---

def test_affine_identity():
    x = wide([1.0, 2.0])
    W = wide([[1.0, 0.0], [0.0, 1.0]])
    b = wide([0.0, 0.0])
    assert np.allclose(nm.affine(x, W, b).data, [1.0, 2.0])


def test_affine_hand_computed():
    # [1,1] @ [[2,3],[4,5]] + [1,1] = [7,9]
    y = nm.affine(wide([1.0, 1.0]), wide([[2.0, 3.0], [4.0, 5.0]]), wide([1.0, 1.0]))
    assert np.allclose(y.data, [7.0, 9.0])


def test_affine_zero_input_yields_bias():
    y = nm.affine(wide([0.0, 0.0]), wide([[3.0, 1.0], [2.0, 8.0]]), wide([4.0, -2.0]))
    assert np.allclose(y.data, [4.0, -2.0])


def test_affine_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(3,\).*\(2, 2\)"):
        nm.affine(wide([1.0, 2.0, 3.0]), wide(np.eye(2)), wide([0.0, 0.0]))
    with pytest.raises(DimensionError, match="bias"):
        nm.affine(wide([1.0, 2.0]), wide(np.eye(2)), wide([0.0, 0.0, 0.0]))


# --- pointwise ---

def test_sigmoid_symmetry_point():
    assert nm.sigmoid(wide(0.0)).data == 0.5


def test_sigmoid_saturates_without_overflow():
    y = nm.sigmoid(wide([-1000.0, 1000.0])).data
    assert y[0] == 0.0 and y[1] == 1.0


def test_tanh_odd_function():
    assert nm.tanh(wide(0.0)).data == 0.0


def test_multiply_definition():
    assert np.allclose(nm.mul(wide([1.0, 2.0]), wide([3.0, 4.0])).data, [3.0, 8.0])


def test_pointwise_shape_mismatch():
    with pytest.raises(DimensionError):
        nm.mul(wide([1.0, 2.0]), wide([1.0, 2.0, 3.0]))


def test_one_minus():
    assert np.allclose(nm.one_minus(wide([0.25, 1.0])).data, [0.75, 0.0])


# --- softmax ---

def test_softmax_symmetry():
    assert np.allclose(nm.softmax(wide([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_softmax_large_logits_no_overflow():
    y = nm.softmax(wide([1000.0, 1000.0])).data
    assert np.all(np.isfinite(y)) and np.allclose(y, [0.5, 0.5])


def test_softmax_hand_computed():
    y = nm.softmax(wide([np.log(1.0), np.log(3.0)])).data
    assert np.allclose(y, [0.25, 0.75])


def test_softmax_empty_input():
    with pytest.raises(DomainError):
        nm.softmax(wide(np.zeros((0,))))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=7))
def test_softmax_is_probability_vector(logits):
    y = nm.softmax(wide(logits)).data
    assert y.min() >= 0.0
    assert abs(y.sum() - 1.0) < 1e-6


def test_masked_softmax_zeroes_invalid_positions():
    y = nm.softmax(wide([[1.0, 2.0, 3.0]]), mask=np.array([[1, 1, 0]])).data
    assert y[0, 2] == 0.0
    assert abs(y[0, :2].sum() - 1.0) < 1e-12


# --- backward: stated examples ---

def test_backward_sum_of_leaf_is_ones():
    store = nm.ParameterStore("wide")
    store.add("x", [1.0, -2.0, 3.0])
    with nm.Graph(store) as g:
        loss = nm.sum_all(store["x"])
    grads = nm.backward(g, loss)
    assert np.array_equal(grads["x"].data, np.ones(3))


def test_backward_quadratic():
    store = nm.ParameterStore("wide")
    store.add("x", [1.0, 2.0])
    with nm.Graph(store) as g:
        x = store["x"]
        loss = nm.sum_all(nm.mul(x, x))
    grads = nm.backward(g, loss)
    assert np.allclose(grads["x"].data, [2.0, 4.0])


def test_backward_requires_scalar_loss():
    store = nm.ParameterStore("wide")
    store.add("x", [1.0, 2.0])
    with nm.Graph(store) as g:
        y = nm.mul(store["x"], store["x"])
    with pytest.raises(ContractError):
        nm.backward(g, y)


def test_backward_loss_from_other_graph_rejected():
    store = nm.ParameterStore("wide")
    store.add("x", [1.0])
    with nm.Graph(store) as g1:
        loss = nm.sum_all(store["x"])
    with nm.Graph(store) as g2:
        nm.sum_all(store["x"])
    nm.backward(g1, loss)
    with pytest.raises(ContractError):
        nm.backward(g2, loss)


def test_backward_untouched_parameter_gets_zeros():
    store = nm.ParameterStore("wide")
    store.add("x", [1.0, 2.0])
    store.add("unused", np.ones((2, 3)))
    with nm.Graph(store) as g:
        loss = nm.sum_all(store["x"])
    grads = nm.backward(g, loss)
    assert grads["unused"].shape == (2, 3)
    assert np.all(grads["unused"].data == 0.0)


# --- gradient oracle over every primitive ---

def _rand(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def _primitive_cases():
    rng = np.random.default_rng(7)
    cases = {}

    def case(name, params, fn):
        cases[name] = (params, fn)

    case("affine_2d", {"x": _rand(rng, 3, 4), "W": _rand(rng, 4, 5), "b": _rand(rng, 5)},
         lambda s: nm.affine(s["x"], s["W"], s["b"]))
    case("affine_3d", {"x": _rand(rng, 2, 3, 4), "W": _rand(rng, 4, 2), "b": _rand(rng, 2)},
         lambda s: nm.affine(s["x"], s["W"], s["b"]))
    case("linear", {"x": _rand(rng, 3, 4), "W": _rand(rng, 4, 5)},
         lambda s: nm.linear(s["x"], s["W"]))
    case("tanh", {"x": _rand(rng, 4, 3)}, lambda s: nm.tanh(s["x"]))
    case("sigmoid", {"x": _rand(rng, 4, 3)}, lambda s: nm.sigmoid(s["x"]))
    case("mul", {"a": _rand(rng, 3, 4), "b": _rand(rng, 3, 4)},
         lambda s: nm.mul(s["a"], s["b"]))
    case("mul_broadcast", {"a": _rand(rng, 2, 3, 4), "b": _rand(rng, 2, 1, 4)},
         lambda s: nm.mul(s["a"], s["b"]))
    case("add_broadcast", {"a": _rand(rng, 2, 3, 4), "b": _rand(rng, 4)},
         lambda s: nm.add(s["a"], s["b"]))
    case("one_minus", {"x": _rand(rng, 5)}, lambda s: nm.one_minus(s["x"]))
    case("scale", {"x": _rand(rng, 3, 2)}, lambda s: nm.scale(s["x"], 2.5))
    case("softmax", {"x": _rand(rng, 3, 6)}, lambda s: nm.softmax(s["x"]))
    mask = np.array([[1, 1, 0, 1], [1, 0, 1, 1]])
    case("softmax_masked", {"x": _rand(rng, 2, 4)}, lambda s: nm.softmax(s["x"], mask=mask))
    case("log_softmax", {"x": _rand(rng, 3, 6)}, lambda s: nm.log_softmax(s["x"]))
    ids = np.array([2, 0, 2, 1])
    case("embed", {"t": _rand(rng, 3, 4)}, lambda s: nm.embed(s["t"], ids))
    case("concat", {"a": _rand(rng, 3, 2), "b": _rand(rng, 3, 4)},
         lambda s: nm.concat([s["a"], s["b"]]))
    case("stack_time", {"a": _rand(rng, 3, 2), "b": _rand(rng, 3, 2)},
         lambda s: nm.stack_time([s["a"], s["b"]]))
    case("attn_mix", {"alpha": _rand(rng, 2, 3), "ctx": _rand(rng, 2, 3, 4)},
         lambda s: nm.attn_mix(s["alpha"], s["ctx"]))
    pick_ids = np.array([1, 3, 0])
    case("pick", {"x": _rand(rng, 3, 5)}, lambda s: nm.pick(s["x"], pick_ids))
    case("reshape", {"x": _rand(rng, 2, 6)}, lambda s: nm.reshape(s["x"], (3, 4)))
    case("mul_const", {"x": _rand(rng, 3, 4)},
         lambda s: nm.mul_const(s["x"], np.linspace(0.5, 2.0, 4)))
    return cases


@pytest.mark.parametrize("name", sorted(_primitive_cases()))
def test_primitive_gradient_matches_finite_differences(name):
    params, fn = _primitive_cases()[name]
    store = nm.ParameterStore("wide")
    probe = None
    for pname, val in params.items():
        store.add(pname, val)

    def loss_fn():
        nonlocal probe
        with nm.Graph(store) as g:
            out = fn(store)
            if probe is None:
                probe = np.random.default_rng(11).uniform(-1, 1, out.shape)
            loss = nm.sum_all(nm.mul_const(out, probe))
        loss_fn.graph, loss_fn.loss = g, loss
        return float(loss.data)

    loss_fn()
    analytic = nm.backward(loss_fn.graph, loss_fn.loss)
    numeric = finite_difference_grads(loss_fn, store)
    assert_grads_close(analytic, numeric)


def test_composite_graph_matches_finite_differences():
    rng = np.random.default_rng(3)
    store = nm.ParameterStore("wide")
    store.add("W1", rng.uniform(-0.5, 0.5, (4, 6)))
    store.add("b1", rng.uniform(-0.5, 0.5, 6))
    store.add("W2", rng.uniform(-0.5, 0.5, (6, 3)))
    store.add("b2", rng.uniform(-0.5, 0.5, 3))
    x = rng.uniform(-1, 1, (5, 4))
    ids = np.array([0, 2, 1, 2, 0])

    def loss_fn():
        with nm.Graph(store) as g:
            h = nm.tanh(nm.affine(nm.tensor(x, "wide"), store["W1"], store["b1"]))
            h = nm.mul(h, nm.sigmoid(h))
            logits = nm.affine(h, store["W2"], store["b2"])
            loss = nm.scale(nm.sum_all(nm.pick(nm.log_softmax(logits), ids)), -1.0)
        loss_fn.graph, loss_fn.loss = g, loss
        return float(loss.data)

    loss_fn()
    analytic = nm.backward(loss_fn.graph, loss_fn.loss)
    numeric = finite_difference_grads(loss_fn, store)
    assert_grads_close(analytic, numeric)


# --- graph behaviour ---

def test_replay_determinism_bit_identical():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (4, 4)).astype(np.float32)

    def run():
        t = nm.Tensor(x.copy())
        return nm.softmax(nm.tanh(nm.mul(t, t))).data

    assert np.array_equal(run(), run())


def test_inference_mode_records_nothing():
    store = nm.ParameterStore("wide")
    store.add("x", [1.0])
    with nm.Graph(store) as g:
        pass
    nm.tanh(nm.tensor([1.0], "wide"))  # outside the graph
    assert g.nodes == []


def test_precision_mixing_rejected():
    store = nm.ParameterStore("narrow")
    store.add("x", [1.0])
    with nm.Graph(store):
        with pytest.raises(ContractError):
            nm.tanh(nm.tensor([1.0], "wide"))


def test_debug_checks_flag_non_finite():
    nm.debug_checks(True)
    try:
        with pytest.raises(NonFiniteError):
            nm.mul_const(nm.tensor([1.0], "wide"), np.array([np.inf]))
    finally:
        nm.debug_checks(False)


def test_store_snapshot_is_independent():
    store = nm.ParameterStore("narrow")
    store.add("w", np.ones(3))
    snap = store.snapshot()
    store.assign("w", np.zeros(3))
    assert np.all(snap["w"].data == 1.0)
