"""
Autodiff module for the CMixer workbench
Dense numpy tensors with tape-based reverse-mode gradients, the layer
primitives the mixer needs, MSE loss, Adam and the step learning-rate schedule.
"""

import math
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError, ValidationError
from .utils import log_error

GELU_COEFF = 0.7978845608  # sqrt(2 / pi)
GELU_CUBIC = 0.044715
LAYER_NORM_EPS = 1e-5

_ACTIVE_TAPE: ContextVar[Optional['Tape']] = ContextVar('cmixer_active_tape', default=None)


class Tensor:
    """
    Dense real-valued array with optional gradient tracking.

    Args:
        data: Array-like values
        requires_grad: Whether backward() should produce a gradient for it
        name: Optional label (parameter name)
        dtype: numpy float dtype; defaults to the input's float dtype or float64
        copy: Copy the values; operation outputs already own fresh arrays and skip it
    """

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None,
                 copy: bool = True):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == 'f' else np.float64
        self.data = np.array(data, dtype=dtype) if copy else np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"


@dataclass
class Node:
    """One recorded operation: inputs, output and the rule mapping dOut to dInputs."""

    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """
    Ordered record of operations, active inside a ``with`` block.

    Operations only record while a tape is active and at least one input
    requires a gradient; forward values are the same either way.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self._token = None

    def record(self, node: Node):
        self.nodes.append(node)

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def _as_tensor(value, dtype=None) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def _emit(name: str, data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires, dtype=data.dtype, copy=False)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and requires:
        tape.record(Node(name, tuple(inputs), out, backward))
    return out


def _shape_error(message: str):
    log_error(message)
    raise ShapeError(message)


# -------------------------
# Primitives
# -------------------------
def affine(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    y[..., o] = sum_i W[o, i] x[..., i] + b[o].

    Raises:
        ShapeError: If the trailing dimension of x differs from W's input width
    """
    if W.ndim != 2 or x.ndim < 1 or x.shape[-1] != W.shape[1]:
        _shape_error(f"affine: input shape {x.shape} incompatible with weight shape {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        _shape_error(f"affine: bias shape {b.shape} does not match weight shape {W.shape}")
    n_in, n_out = W.shape[1], W.shape[0]
    # one GEMM over all leading dimensions
    x2 = x.data.reshape(-1, n_in)
    out = x2 @ W.data.T
    if b is not None:
        out += b.data
    out = out.reshape(x.shape[:-1] + (n_out,))

    def backward(g):
        g2 = g.reshape(-1, n_out)
        gx = (g2 @ W.data).reshape(x.shape) if x.requires_grad else None
        gW = g2.T @ x2 if W.requires_grad else None
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        return (gx, gW, gb) if b is not None else (gx, gW)

    inputs = (x, W, b) if b is not None else (x, W)
    return _emit('affine', out, inputs, backward)


def layer_norm(x: Tensor, gain: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """
    Normalize each trailing slice to zero mean and unit population variance,
    then apply the elementwise gain and bias.

    Raises:
        ValidationError: If the trailing dimension is 1
        ShapeError: If gain/bias do not match the trailing dimension
    """
    dim = x.shape[-1] if x.ndim else 0
    if dim < 2:
        log_error(f"layer_norm over trailing dimension {dim}")
        raise ValidationError(f"layer_norm needs a trailing dimension of at least 2, got {dim}.")
    for label, t in (('gain', gain), ('bias', bias)):
        if t is not None and t.shape != (dim,):
            _shape_error(f"layer_norm: {label} shape {t.shape} does not match trailing dimension {dim}")

    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gxhat = g * gain.data if gain is not None else g
        gx = None
        if x.requires_grad:
            gx = inv_std * (gxhat
                            - gxhat.mean(axis=-1, keepdims=True)
                            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=lead) if gain.requires_grad else None)
        if bias is not None:
            grads.append(g.sum(axis=lead) if bias.requires_grad else None)
        return grads

    inputs = [x] + [t for t in (gain, bias) if t is not None]
    return _emit('layer_norm', out, inputs, backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))."""
    xd = x.data
    t = np.tanh(GELU_COEFF * (xd + GELU_CUBIC * xd * xd * xd))
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        du = GELU_COEFF * (1.0 + 3.0 * GELU_CUBIC * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return _emit('gelu', out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0).astype(x.dtype)
    return _emit('relu', out, (x,), lambda g: (g * mask,))


ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    'gelu': gelu,
    'relu': relu,
}


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        _shape_error(f"add: shapes {x.shape} and {y.shape} differ")
    return _emit('add', x.data + y.data, (x, y), lambda g: (g, g))


def reshape(x: Tensor, shape) -> Tensor:
    """
    Raises:
        ShapeError: If the element count changes
    """
    shape = tuple(int(s) for s in shape)
    if -1 in shape or int(np.prod(shape)) != x.size:
        _shape_error(f"reshape: cannot reshape {x.shape} into {shape}")
    original = x.shape
    return _emit('reshape', x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def swap_axes(x: Tensor, axis1: int, axis2: int) -> Tensor:
    # strided view both ways; a following reshape copies only when it must
    return _emit('swap_axes', np.swapaxes(x.data, axis1, axis2), (x,),
                 lambda g: (np.swapaxes(g, axis1, axis2),))


def transpose_last2(x: Tensor) -> Tensor:
    if x.ndim < 2:
        _shape_error(f"transpose_last2 needs at least 2 dimensions, got shape {x.shape}")
    return swap_axes(x, -2, -1)


def select(x: Tensor, index: int, axis: int = -1) -> Tensor:
    """Take one index along an axis, dropping that axis."""
    axis = axis % x.ndim
    out = np.ascontiguousarray(np.take(x.data, index, axis=axis))

    def backward(g):
        full = np.zeros_like(x.data)
        slicer = [slice(None)] * x.ndim
        slicer[axis] = index
        full[tuple(slicer)] = g
        return (full,)

    return _emit('select', out, (x,), backward)


def stack(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Stack equally shaped tensors along a new axis."""
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        _shape_error(f"stack: mismatched shapes {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    count = len(tensors)

    def backward(g):
        return [np.take(g, i, axis=axis) for i in range(count)]

    return _emit('stack', out, tuple(tensors), backward)


def tensor_sum(x: Tensor) -> Tensor:
    return _emit('sum', np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                 lambda g: (np.full_like(x.data, g),))


def mse_loss(pred: Tensor, target) -> Tensor:
    """
    Batch-mean of per-sample squared Euclidean error.

    The leading axis indexes samples; a 0-d input counts as one sample.

    Raises:
        ShapeError: If pred and target shapes differ
    """
    target = _as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        _shape_error(f"mse_loss: prediction shape {pred.shape} differs from target shape {target.shape}")
    n_batch = pred.shape[0] if pred.ndim else 1
    diff = pred.data - target.data
    out = np.asarray((diff * diff).sum() / n_batch, dtype=pred.dtype)

    def backward(g):
        gp = (2.0 / n_batch) * g * diff
        return (gp if pred.requires_grad else None, -gp if target.requires_grad else None)

    return _emit('mse_loss', out, (pred, target), backward)


# -------------------------
# Reverse pass
# -------------------------
def backward(loss: Tensor, tape: Tape) -> Dict[Tensor, np.ndarray]:
    """
    Propagate dLoss/dTensor through the tape in reverse order.

    Gradients of tensors consumed by several operations are summed. Every
    tensor that requires a gradient and lies on a path to the loss gets its
    ``grad`` attribute set.

    Returns:
        Mapping from tensor to gradient array

    Raises:
        ValidationError: If the loss is not a scalar or was not recorded on the tape
    """
    if loss.size != 1:
        log_error(f"backward called on non-scalar tensor of shape {loss.shape}")
        raise ValidationError(f"Loss must be a scalar, got shape {loss.shape}.")
    if not loss.requires_grad or not any(node.output is loss for node in tape.nodes):
        log_error("backward called on a loss that was not produced on the tape")
        raise ValidationError("Loss was not produced on this tape.")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: Dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        for tensor, g_in in zip(node.inputs, node.backward(g)):
            if g_in is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g_in
            else:
                grads[key] = np.asarray(g_in, dtype=tensor.dtype).reshape(tensor.shape)
                owners[key] = tensor

    result = {}
    for key, tensor in owners.items():
        tensor.grad = grads[key]
        result[tensor] = grads[key]
    return result


def finite_difference_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """
    Central finite-difference estimate of d fn() / d tensor.

    ``fn`` must re-run the forward pass from scratch and return a scalar.
    """
    grad = np.zeros_like(tensor.data, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = float(fn().data)
        flat[i] = original - h
        lower = float(fn().data)
        flat[i] = original
        out[i] = (upper - lower) / (2.0 * h)
    return grad


# -------------------------
# Optimizer and schedule
# -------------------------
@dataclass
class AdamState:
    """Per-parameter moment accumulators for Adam."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState, lr: float) -> AdamState:
    """
    Bias-corrected Adam update, applied to the parameter arrays in place.

    Parameters missing from ``grads`` are treated as having zero gradient.

    Raises:
        ShapeError: If a gradient's shape differs from its parameter's
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step

    for name, param in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(param.data)
        elif g.shape != param.shape:
            _shape_error(f"adam_step: gradient shape {g.shape} differs from parameter '{name}' shape {param.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        param.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)
    return state


@dataclass(frozen=True)
class LrSchedule:
    """Step decay: base_lr, multiplied by decay_factor every period epochs after warm_period."""

    base_lr: float = 1e-3
    decay_factor: float = 0.2
    period: int = 500
    warm_period: int = 500

    def __post_init__(self):
        if self.base_lr < 0 or not 0 < self.decay_factor <= 1 or self.period < 1 or self.warm_period < 0:
            log_error(f"Invalid learning-rate schedule {self}")
            raise ValidationError(f"Invalid learning-rate schedule: {self}.")


def lr_at(epoch: int, schedule: LrSchedule) -> float:
    """
    Learning rate for a 1-based epoch; the first decay lands on warm_period + 1.

    Raises:
        ValidationError: If epoch < 1
    """
    if epoch < 1:
        log_error(f"lr_at called with epoch {epoch}")
        raise ValidationError(f"Epochs are 1-based, got {epoch}.")
    decays = math.ceil(max(0, epoch - schedule.warm_period) / schedule.period)
    return schedule.base_lr * schedule.decay_factor ** decays
