import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tsrnet.autograd import NonFiniteError, Tape, Tensor, backward, grad_check, make_output
from tsrnet.ops import Conv2dParams, conv2d, mse_loss, pixel_shuffle, relu, residual_add, sum_all
from tsrnet.scs import ScsParams, scs_conv2d


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_tensor_rejects_non_finite_and_bad_dtype():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1.0, np.nan]))
    with pytest.raises(TypeError):
        Tensor([1, 2], dtype=np.float16)
    assert Tensor([1, 2]).dtype == np.float32


def test_scalar_reshaped_and_item():
    t = Tensor(np.float64(3.0))
    assert t.shape == (1,)
    assert t.item() == 3.0


def test_sum_gradient_is_ones():
    x = t64([1.0, -2.0, 3.0])
    with Tape() as tape:
        loss = sum_all(x)
    backward(tape, loss)
    np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])
    assert x.grad.dtype == x.dtype


def test_mse_of_self_has_zero_grad():
    x = t64(np.random.default_rng(0).standard_normal((2, 3)))
    with Tape() as tape:
        loss = mse_loss(x, x)
    backward(tape, loss)
    np.testing.assert_array_equal(x.grad, np.zeros((2, 3)))


def test_accumulation_when_tensor_used_twice():
    rng = np.random.default_rng(1)
    x = t64(rng.standard_normal((1, 2, 3, 3)))
    y = t64(rng.standard_normal((1, 2, 3, 3)), grad=False)
    with Tape() as tape:
        loss = mse_loss(residual_add(x, x), y)
    backward(tape, loss)
    n = x.size
    np.testing.assert_allclose(x.grad, 2 * (2 * x.data - y.data) / n, rtol=1e-12)


def test_backward_requires_scalar_loss():
    x = t64([1.0, 2.0])
    with Tape() as tape:
        out = relu(x)
    with pytest.raises(ValueError, match="scalar"):
        backward(tape, out)


def test_loss_from_other_tape_rejected():
    x = t64([1.0, 2.0])
    with Tape():
        loss = sum_all(x)
    with Tape() as other:
        sum_all(x)
    with pytest.raises(ValueError, match="not produced on this tape"):
        backward(other, loss)


def test_no_recording_without_tape_or_grad():
    x = t64([1.0, -1.0])
    relu(x)  # no tape active: nothing to record
    with Tape() as tape:
        relu(t64([1.0], grad=False))
    assert len(tape) == 0


def test_tape_order_and_single_visit():
    rng = np.random.default_rng(2)
    x = t64(rng.standard_normal((1, 1, 4, 4)))
    w = t64(rng.standard_normal((2, 1, 3, 3)))
    b = t64(np.zeros(2))
    with Tape() as tape:
        h = relu(conv2d(x, Conv2dParams(w, b)))
        sum_all(h)
    ids = {id(n.output): i for i, n in enumerate(tape.nodes)}
    for i, node in enumerate(tape.nodes):
        for inp in node.inputs:
            assert ids.get(id(inp), -1) < i
    assert [n.op for n in tape.nodes] == ["conv2d", "relu", "sum"]


def test_non_finite_op_output_raises():
    x = Tensor(np.array([1e308, 1e308]))
    with pytest.raises(NonFiniteError), np.errstate(over="ignore"):
        make_output("boom", x.data * 10.0, [x], lambda g: [g])


def test_replay_bit_identical():
    rng = np.random.default_rng(3)
    x = t64(rng.standard_normal((1, 2, 5, 5)))
    w = t64(rng.standard_normal((2, 2, 3, 3)))
    b = t64(rng.standard_normal(2))
    grads = []
    for _ in range(2):
        with Tape() as tape:
            loss = sum_all(relu(conv2d(x, Conv2dParams(w, b))))
        backward(tape, loss)
        grads.append(w.grad.copy())
    assert np.array_equal(grads[0], grads[1])


def test_grad_check_relu_linear_region():
    x = t64(np.random.default_rng(4).uniform(1.0, 2.0, (2, 3)))
    rep = grad_check(lambda x: sum_all(relu(x)), [x])
    assert rep.passed
    assert rep.max_rel_err < 1e-9


def test_grad_check_pixel_shuffle():
    rng = np.random.default_rng(5)
    x = t64(rng.standard_normal((1, 8, 2, 3)))
    y = t64(rng.standard_normal((1, 2, 4, 6)), grad=False)
    assert grad_check(lambda x: mse_loss(pixel_shuffle(x, 2), y), [x], 1e-4).passed


def test_grad_check_scs_sum():
    rng = np.random.default_rng(6)
    x = t64(rng.uniform(0.2, 1.0, (1, 2, 4, 4)))
    w = t64(rng.uniform(0.2, 1.0, (2, 2, 3, 3)))
    p = t64([1.3, 0.7])
    e = t64([0.05])
    rep = grad_check(lambda x, w, p, e: sum_all(scs_conv2d(x, ScsParams(w, p, e))), [x, w, p, e], 1e-4)
    assert rep.passed, str(rep)


def test_grad_check_conv_weight():
    rng = np.random.default_rng(7)
    x = t64(rng.standard_normal((1, 2, 5, 5)), grad=False)
    w = t64(rng.standard_normal((3, 2, 3, 3)))
    b = t64(rng.standard_normal(3))
    y = t64(rng.standard_normal((1, 3, 5, 5)), grad=False)
    rep = grad_check(lambda w, b: mse_loss(conv2d(x, Conv2dParams(w, b)), y), [w, b], 1e-4)
    assert rep.passed
    assert rep.n_checked == w.size + b.size


def test_grad_check_detects_wrong_gradient():
    def bad_square(x):
        out = x.data ** 2
        return make_output("bad_square", out, [x], lambda g: [g * x.data])  # missing factor 2

    x = t64([0.5, 1.5])
    rep = grad_check(lambda x: sum_all(bad_square(x)), [x], 1e-4)
    assert not rep.passed
    assert rep.max_rel_err > 0.1


def test_grad_check_requires_f64():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(TypeError):
        grad_check(lambda x: sum_all(x), [x])


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-5, 5)))
def test_sum_grad_property(vals):
    x = t64(vals)
    with Tape() as tape:
        loss = sum_all(x)
    backward(tape, loss)
    assert x.grad.shape == x.shape
    assert np.all(x.grad == 1.0)
