import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgikit.autodiff import AdamState, NonFiniteError, ShapeError, Tape, Tensor, adam_step, backward, ops

from oracles import central_fd, rel_err


def grad_check(build, arrays, tol=1e-5, h=1e-5):
    """Compare tape gradients of ``build(*tensors) -> scalar`` with central differences."""
    with Tape() as tape:
        tracked = [tape.watch(a) for a in arrays]
        loss = build(*tracked)
    grads = backward(tape, loss)
    worst = 0.0
    for a, t in zip(arrays, tracked):
        g = grads[t.node]
        for idx in np.ndindex(a.shape):
            fd = central_fd(lambda: build(*[Tensor(x) for x in arrays]).item(), a, idx, h)
            worst = max(worst, rel_err(g[idx], fd))
    assert worst < tol, worst


def test_sigmoid_of_zero():
    out = ops.sigmoid(np.zeros((2, 2)))
    assert np.all(out.data == 0.5)


def test_softmax_large_equal_logits():
    out = ops.softmax(np.array([1000.0, 1000.0]))
    assert np.array_equal(out.data, [0.5, 0.5])


def test_concat_shape():
    out = ops.concat([np.zeros((4, 3)), np.zeros((4, 512))])
    assert out.shape == (4, 515)


def test_sum_gradient_is_ones():
    with Tape() as tape:
        w = tape.watch(np.arange(6.0).reshape(2, 3))
        loss = ops.sum(w)
    assert np.array_equal(backward(tape, loss)[w.node], np.ones((2, 3)))


def test_half_squared_norm_gradient():
    with Tape() as tape:
        x = tape.watch([3.0, 4.0])
        loss = ops.scale(ops.sum(ops.mul(x, x)), 0.5)
    assert np.allclose(backward(tape, loss)[x.node], [3.0, 4.0], rtol=0, atol=0)


def test_untouched_leaf_gets_zero_gradient():
    with Tape() as tape:
        a = tape.watch([1.0, 2.0])
        b = tape.watch(np.ones((3, 3)))
        loss = ops.sum(a)
    grads = backward(tape, loss)
    assert np.array_equal(grads[b.node], np.zeros((3, 3)))


def test_backward_rejects_vector_loss():
    with Tape() as tape:
        a = tape.watch([1.0, 2.0])
        v = ops.scale(a, 2.0)
    with pytest.raises(ShapeError):
        backward(tape, v)


def test_backward_rejects_foreign_loss():
    with Tape() as tape:
        a = tape.watch([1.0])
        loss = ops.sum(a)
    with pytest.raises(ValueError):
        backward(Tape(), loss)


def test_constants_are_not_recorded():
    with Tape() as tape:
        out = ops.add(np.ones(3), np.ones(3))
    assert not out.tracked
    assert tape.nodes == []


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ops.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        ops.add(np.zeros(3), np.zeros(4))


def test_non_finite_detected():
    with pytest.raises(NonFiniteError):
        ops.log(np.array([0.0, 1.0]))
    with pytest.raises(NonFiniteError):
        ops.exp(np.array([1e4]))


def test_max_rows_routes_to_first_maximum():
    with Tape() as tape:
        x = tape.watch([[1.0, 5.0], [3.0, 5.0], [3.0, 2.0]])
        loss = ops.sum(ops.max_rows(x))
    g = backward(tape, loss)[x.node]
    assert np.array_equal(g, [[0, 1], [1, 0], [0, 0]])


def test_gather_rows_accumulates_repeats():
    with Tape() as tape:
        x = tape.watch(np.arange(6.0).reshape(3, 2))
        loss = ops.sum(ops.gather_rows(x, [[0, 0], [2, 0]]))
    assert np.array_equal(backward(tape, loss)[x.node], [[3, 3], [0, 0], [1, 1]])


rng = np.random.default_rng(1234)


@pytest.mark.parametrize("name,build,shapes", [
    ("matmul+bias", lambda a, b, c: ops.sum(ops.bias_add(ops.matmul(a, b), c)), [(4, 3), (3, 5), (5,)]),
    ("mul/div", lambda a, b: ops.sum(ops.div(ops.mul(a, b), ops.add(ops.mul(b, b), 1.0))), [(3, 4), (3, 4)]),
    ("broadcast sub", lambda a, b: ops.sum(ops.square_diff(a, b)), [(5, 1, 2), (5, 3, 2)]),
    ("sigmoid", lambda a: ops.sum(ops.sigmoid(a)), [(3, 3)]),
    ("exp/log", lambda a: ops.mean(ops.log(ops.add(ops.exp(a), 1.0))), [(6,)]),
    ("softmax", lambda a, w: ops.sum(ops.mul(ops.softmax(a, axis=1), w)), [(4, 5), (4, 5)]),
    ("norm", lambda a: ops.sum(ops.norm(a)), [(6, 3)]),
    ("concat", lambda a, b: ops.sum(ops.mul(ops.concat([a, b]), ops.concat([b, a]))), [(3, 2), (3, 2)]),
    ("reshape+sum axis", lambda a: ops.sum(ops.mul(ops.sum(ops.reshape(a, (3, 4)), axis=1), ops.sum(a))), [(12,)]),
    ("broadcast_rows", lambda a, b: ops.sum(ops.mul(ops.broadcast_rows(a, 3), b)), [(4,), (3, 4)]),
    ("abs", lambda a: ops.sum(ops.absolute(a)), [(5,)]),
])
def test_gradients_match_finite_differences(name, build, shapes):
    arrays = [rng.normal(size=s) for s in shapes]
    grad_check(build, arrays)


def test_relu_and_max_rows_gradients():
    # keep values away from the ReLU kink and from max ties
    x = rng.normal(size=(6, 4))
    x[np.abs(x) < 0.05] += 0.2
    grad_check(lambda a: ops.sum(ops.mul(ops.max_rows(ops.relu(a)), [1.0, 2.0, 3.0, 4.0])), [x])


def test_gather_rows_gradient():
    x = rng.normal(size=(5, 3))
    idx = np.array([[0, 4], [4, 2], [1, 1]])
    grad_check(lambda a: ops.sum(ops.mul(ops.gather_rows(a, idx), ops.gather_rows(a, idx))), [x])


def test_maximum_gradient_away_from_floor():
    x = np.array([0.5, -2.0, 3.0])
    grad_check(lambda a: ops.sum(ops.mul(ops.maximum(a, 0.1), a)), [x])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e8, 1e8), min_size=1, max_size=20))
def test_softmax_rows_sum_to_one(values):
    out = ops.softmax(np.array(values))
    assert np.all(np.isfinite(out.data))
    assert abs(out.data.sum() - 1.0) < 1e-12


def test_replay_is_bit_identical():
    x = rng.normal(size=(8, 3))
    w = rng.normal(size=(3, 2))

    def run():
        with Tape() as tape:
            a = tape.watch(x)
            b = tape.watch(w)
            loss = ops.mean(ops.sigmoid(ops.matmul(a, b)))
        g = backward(tape, loss)
        return loss.item(), g[a.node].tobytes(), g[b.node].tobytes()

    assert run() == run()


# -- Adam ----------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0])]
    state = AdamState.for_params(p)
    new, state2 = adam_step(p, [np.zeros(2)], state)
    assert np.array_equal(new[0], p[0])
    assert state2.step == 1


def test_adam_first_step_hand_computed():
    p = np.array([0.5, -1.0, 2.0])
    g = np.array([0.2, -3.0, 0.0])
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    state = AdamState.for_params([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
    (new,), _ = adam_step([p], [g], state)
    # one step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    expected = [0.5 - lr * 0.2 / (0.2 + eps), -1.0 + lr * 3.0 / (3.0 + eps), 2.0]
    assert np.allclose(new, expected, rtol=0, atol=1e-15)


def test_adam_is_deterministic_and_pure():
    p = [rng.normal(size=(3, 3)), rng.normal(size=3)]
    g = [rng.normal(size=(3, 3)), rng.normal(size=3)]
    state = AdamState.for_params(p)
    a, sa = adam_step(p, g, state)
    b, sb = adam_step(p, g, state)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sa.step == sb.step == 1
    assert state.step == 0


def test_adam_shape_mismatch():
    state = AdamState.for_params([np.zeros(3)])
    with pytest.raises(ShapeError):
        adam_step([np.zeros(3)], [np.zeros(4)], state)
