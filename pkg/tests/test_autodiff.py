"""
Test cases for the tape autodiff engine, Adam and the learning-rate schedule
"""

import numpy as np
import pytest

from cmixer_workbench.autodiff import (
    AdamState,
    LrSchedule,
    Tape,
    Tensor,
    active_tape,
    adam_step,
    add,
    affine,
    backward,
    finite_difference_gradient,
    gelu,
    layer_norm,
    lr_at,
    mse_loss,
    relu,
    reshape,
    select,
    stack,
    swap_axes,
    tensor_sum,
    transpose_last2,
)
from cmixer_workbench.errors import ShapeError, ValidationError


def _param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _relative_error(analytic, numeric):
    return np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)


def _check_gradients(build_loss, tensors, tol=1e-6):
    """Compare tape gradients of build_loss() against central differences."""
    with Tape() as tape:
        loss = build_loss()
    grads = backward(loss, tape)
    for tensor in tensors:
        numeric = finite_difference_gradient(build_loss, tensor)
        assert _relative_error(grads[tensor], numeric) < tol


def _weighted(out, weights):
    """Scalar sum(out * weights) so every output entry gets a distinct weight."""
    return tensor_sum(affine(reshape(out, (1, out.size)), Tensor(weights.reshape(1, -1))))


# -------------------------
# Forward values
# -------------------------
def test_affine_identity_and_zero_input():
    """Test W = I, b = 0 gives y = x and x = 0 gives y = b."""
    x = Tensor(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(affine(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)
    b = Tensor(np.array([1.0, -2.0]))
    out = affine(Tensor(np.zeros((4, 3))), Tensor(np.ones((2, 3))), b)
    np.testing.assert_array_equal(out.data, np.tile(b.data, (4, 1)))


def test_affine_shape_mismatch():
    """Test that a wrong input width raises ShapeError."""
    with pytest.raises(ShapeError, match="incompatible"):
        affine(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 3))))


def test_affine_batched_matches_per_row(rng):
    """Test that a 4-D input gives the per-row products and gradients of a 2-D one."""
    x, W, b = _param(rng, 2, 3, 4, 5), _param(rng, 6, 5), _param(rng, 6)
    weights = rng.standard_normal((2, 3, 4, 6))
    with Tape() as tape:
        loss = _weighted(affine(x, W, b), weights)
    grads = backward(loss, tape)

    rows = x.data.reshape(-1, 5)
    np.testing.assert_allclose(affine(x, W, b).data.reshape(-1, 6), rows @ W.data.T + b.data,
                               rtol=1e-10, atol=1e-12)
    g = weights.reshape(-1, 6)
    np.testing.assert_allclose(grads[x], (g @ W.data).reshape(x.shape), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(grads[W], g.T @ rows, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(grads[b], g.sum(axis=0), rtol=1e-10, atol=1e-12)


def test_op_outputs_keep_their_buffer():
    """Test that recorded outputs wrap the computed array while user tensors copy their input."""
    values = np.arange(6.0).reshape(2, 3)
    x = Tensor(values)
    assert not np.shares_memory(x.data, values)
    assert np.shares_memory(reshape(x, (3, 2)).data, x.data)


def test_layer_norm_constant_slice_is_zero():
    """Test that a constant slice normalizes to zero."""
    out = layer_norm(Tensor(np.full((2, 5), 3.0)), Tensor(np.ones(5)), Tensor(np.zeros(5)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_already_normalized():
    """Test that a zero-mean unit-variance slice is only scaled by 1/sqrt(1 + eps)."""
    x = np.array([[1.0, -1.0, 1.0, -1.0]])
    out = layer_norm(Tensor(x))
    np.testing.assert_allclose(out.data, x / np.sqrt(1.0 + 1e-5), rtol=1e-12)


def test_layer_norm_rejects_width_one():
    """Test that a trailing dimension of 1 raises ValidationError."""
    with pytest.raises(ValidationError, match="at least 2"):
        layer_norm(Tensor(np.zeros((3, 1))))


def test_gelu_and_relu_values():
    """Test gelu(0) = 0 and the ReLU clamp."""
    assert gelu(Tensor(np.array(0.0))).data == 0.0
    assert gelu(Tensor(np.array(3.0))).data == pytest.approx(2.99636, abs=1e-5)
    np.testing.assert_array_equal(relu(Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0.0, 0.0, 2.0])


def test_reshape_round_trip_and_errors():
    """Test reshape followed by its inverse, and a bad element count."""
    x = Tensor(np.arange(24.0).reshape(2, 3, 4))
    back = reshape(reshape(x, (6, 4)), (2, 3, 4))
    np.testing.assert_array_equal(back.data, x.data)
    with pytest.raises(ShapeError, match="cannot reshape"):
        reshape(x, (5, 5))


def test_transpose_and_swap():
    """Test that transpose_last2 swaps the trailing axes."""
    x = Tensor(np.arange(6.0).reshape(1, 2, 3))
    np.testing.assert_array_equal(transpose_last2(x).data, x.data.transpose(0, 2, 1))
    np.testing.assert_array_equal(swap_axes(x, 0, 1).data, x.data.swapaxes(0, 1))


def test_mse_loss_values(rng):
    """Test the identical-input, all-ones and loop-oracle cases."""
    pred = rng.standard_normal((3, 2, 2, 2))
    assert float(mse_loss(Tensor(pred), pred).data) == 0.0
    ones = mse_loss(Tensor(np.ones((1, 2, 2, 2))), np.zeros((1, 2, 2, 2)))
    assert float(ones.data) == 8.0

    target = rng.standard_normal(pred.shape)
    expected = 0.0
    for s in range(pred.shape[0]):
        for value in (pred[s] - target[s]).ravel():
            expected += value * value
    expected /= pred.shape[0]
    assert float(mse_loss(Tensor(pred), target).data) == pytest.approx(expected, rel=1e-12)


def test_mse_loss_shape_mismatch():
    """Test that mismatched shapes raise ShapeError."""
    with pytest.raises(ShapeError, match="differs"):
        mse_loss(Tensor(np.zeros((2, 3))), np.zeros((3, 2)))


# -------------------------
# Gradients
# -------------------------
def test_backward_sum_gives_ones(rng):
    """Test d sum(x) / dx = 1."""
    x = _param(rng, 3, 4)
    with Tape() as tape:
        loss = tensor_sum(x)
    grads = backward(loss, tape)
    np.testing.assert_array_equal(grads[x], np.ones((3, 4)))
    assert x.grad is grads[x]


def test_backward_scalar_square():
    """Test d mse(x, 0) / dx = 2x for a scalar."""
    x = Tensor(np.array(1.5), requires_grad=True)
    with Tape() as tape:
        loss = mse_loss(x, np.array(0.0))
    assert float(backward(loss, tape)[x]) == pytest.approx(3.0)


def test_backward_accumulates_reused_tensor(rng):
    """Test that a tensor used twice receives the sum of both contributions."""
    x = _param(rng, 2, 3)
    with Tape() as tape:
        loss = tensor_sum(add(x, x))
    np.testing.assert_array_equal(backward(loss, tape)[x], np.full((2, 3), 2.0))


def test_backward_rejects_bad_loss(rng):
    """Test non-scalar losses and losses produced off the tape."""
    x = _param(rng, 2, 2)
    with Tape() as tape:
        out = add(x, x)
    with pytest.raises(ValidationError, match="scalar"):
        backward(out, tape)
    loss = tensor_sum(x)
    with pytest.raises(ValidationError, match="not produced on this tape"):
        backward(loss, tape)


def test_operations_outside_tape_record_nothing(rng):
    """Test that forward values match with and without a tape, and no tape leaks."""
    x = _param(rng, 2, 3)
    W = _param(rng, 4, 3)
    plain = gelu(affine(x, W)).data
    with Tape() as tape:
        recorded = gelu(affine(x, W)).data
    assert len(tape) == 2
    assert active_tape() is None
    np.testing.assert_array_equal(plain, recorded)


def test_constants_are_not_recorded():
    """Test that operations on constants leave the tape empty."""
    with Tape() as tape:
        gelu(Tensor(np.ones(3)))
    assert len(tape) == 0


def test_affine_gradients(rng):
    """Test affine gradients on a (4, 3) input mapped to width 2."""
    x, W, b = _param(rng, 4, 3), _param(rng, 2, 3), _param(rng, 2)
    weights = rng.standard_normal(8)
    _check_gradients(lambda: _weighted(affine(x, W, b), weights), [x, W, b])


def test_layer_norm_gradients(rng):
    """Test layer-norm gradients on a (6, 8) input."""
    x, gain, bias = _param(rng, 6, 8), _param(rng, 8), _param(rng, 8)
    weights = rng.standard_normal(48)
    _check_gradients(lambda: _weighted(layer_norm(x, gain, bias), weights), [x, gain, bias])


def test_gelu_gradient_at_integers():
    """Test the GELU derivative at -2..2."""
    x = Tensor(np.array([-2.0, -1.0, 0.0, 1.0, 2.0]), requires_grad=True)
    _check_gradients(lambda: tensor_sum(gelu(x)), [x])


def test_shape_primitive_gradients(rng):
    """Test reshape, swap, select and stack gradients."""
    x = _param(rng, 2, 3, 2)
    weights = rng.standard_normal(12)

    def loss_fn():
        real, imag = select(x, 0), select(x, 1)
        mixed = stack([imag, add(real, imag)], axis=-1)
        return _weighted(transpose_last2(swap_axes(mixed, 0, 1)), weights)

    _check_gradients(loss_fn, [x])


def test_relu_and_mse_gradients(rng):
    """Test ReLU and MSE gradients away from the kink."""
    x = Tensor(rng.uniform(0.1, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4)), requires_grad=True)
    target = rng.standard_normal((3, 4))
    _check_gradients(lambda: mse_loss(relu(x), target), [x])


# -------------------------
# Adam
# -------------------------
def test_adam_zero_gradient_is_null_update(rng):
    """Test that zero gradients leave parameters untouched and advance the step."""
    w = _param(rng, 3)
    before = w.data.copy()
    state = adam_step({'w': w}, {'w': np.zeros(3)}, AdamState(), lr=1e-3)
    np.testing.assert_array_equal(w.data, before)
    assert state.step == 1


def test_adam_single_step_magnitude():
    """Test that one step with a constant gradient moves by about lr."""
    for g in (0.5, -3.0):
        w = Tensor(np.array([1.0]), requires_grad=True)
        adam_step({'w': w}, {'w': np.array([g])}, AdamState(), lr=1e-3)
        assert w.data[0] - 1.0 == pytest.approx(-1e-3 * np.sign(g), rel=1e-6)


def test_adam_is_deterministic(rng):
    """Test that identical runs give identical trajectories."""
    start = rng.standard_normal(4)
    grads = [rng.standard_normal(4) for _ in range(5)]
    finals = []
    for _ in range(2):
        w = Tensor(start.copy(), requires_grad=True)
        state = AdamState()
        for g in grads:
            adam_step({'w': w}, {'w': g}, state, lr=1e-2)
        finals.append(w.data.copy())
    np.testing.assert_array_equal(finals[0], finals[1])


def test_adam_gradient_shape_mismatch():
    """Test that a gradient of the wrong shape raises ShapeError."""
    w = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ShapeError, match="gradient shape"):
        adam_step({'w': w}, {'w': np.zeros(4)}, AdamState(), lr=1e-3)


# -------------------------
# Schedule
# -------------------------
@pytest.mark.parametrize("epoch, expected", [
    (1, 1e-3),
    (500, 1e-3),
    (501, 2e-4),
    (1000, 2e-4),
    (1001, 4e-5),
    (1501, 8e-6),
])
def test_lr_schedule_boundaries(epoch, expected):
    """Test the warm period and each decay boundary."""
    assert lr_at(epoch, LrSchedule()) == pytest.approx(expected, rel=1e-12)


def test_lr_schedule_validation():
    """Test epoch 0 and an invalid decay factor."""
    with pytest.raises(ValidationError, match="1-based"):
        lr_at(0, LrSchedule())
    with pytest.raises(ValidationError, match="schedule"):
        LrSchedule(decay_factor=1.5)
