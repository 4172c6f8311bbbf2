"""
CMixer module for the CMixer workbench
Complex-domain MLP blocks, the interleaved space/frequency mixing layer, the
full channel-mapping model, its ablation variants and parameter/FLOP accounting.

Tensors use the layout [..., N_c, N_t, 2]: subcarrier-major, antenna-minor,
real and imaginary parts in the last axis.
"""

from collections import OrderedDict
from dataclasses import dataclass, asdict, fields
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from config import MODEL_DEFAULTS, ABLATION_CONFIG
from .autodiff import (
    ACTIVATIONS, Tensor, add, affine, layer_norm, reshape, select, stack, swap_axes,
)
from .errors import ConfigurationError, ShapeError, ValidationError
from .utils import get_logger, log_error

BLOCK_KINDS = ('cmlp', 'mlp')


class ModelVariant(str, Enum):
    CMIXER = 'cmixer'
    REAL_PARALLEL = 'real_parallel'
    PURE_MLP = 'pure_mlp'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            log_error(f"Unknown model variant '{value}'")
            raise ConfigurationError(
                f"Unknown model variant '{value}'; expected one of {[v.value for v in cls]}."
            ) from None


class FlopConvention(str, Enum):
    """MAC counts one multiply-accumulate as one operation; MUL_ADD counts it as two."""

    MAC = 'mac'
    MUL_ADD = 'mul_add'

    @property
    def per_mac(self) -> int:
        return 1 if self is FlopConvention.MAC else 2


@dataclass(frozen=True)
class ModelHyperparams:
    """Architecture settings; names follow the model descriptor keys."""

    K: int = MODEL_DEFAULTS['K']
    N_t: int = MODEL_DEFAULTS['N_t']
    N_c: int = MODEL_DEFAULTS['N_c']
    N_t_prime: int = MODEL_DEFAULTS['N_t_prime']
    N_c_prime: int = MODEL_DEFAULTS['N_c_prime']
    S_t: int = MODEL_DEFAULTS['S_t']
    S_c: int = MODEL_DEFAULTS['S_c']
    N_t0: int = MODEL_DEFAULTS['N_t0']
    N_c0: int = MODEL_DEFAULTS['N_c0']
    activation: str = MODEL_DEFAULTS['activation']
    space_block: str = MODEL_DEFAULTS['space_block']
    freq_block: str = MODEL_DEFAULTS['freq_block']
    layer_norm_affine: bool = MODEL_DEFAULTS['layer_norm_affine']
    baseline_hidden: Optional[int] = None
    baseline_layers: int = ABLATION_CONFIG['baseline_hidden_layers']

    def __post_init__(self):
        problems = []
        if self.K < 0:
            problems.append(f"K must be non-negative, got {self.K}")
        for name in ('N_t', 'N_c', 'N_t_prime', 'N_c_prime', 'S_t', 'S_c', 'N_t0', 'N_c0'):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive, got {getattr(self, name)}")
        if self.N_t0 > self.N_t or self.N_c0 > self.N_c:
            problems.append(f"known size {self.N_t0}x{self.N_c0} exceeds full size {self.N_t}x{self.N_c}")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation must be one of {sorted(ACTIVATIONS)}, got '{self.activation}'")
        for name in ('space_block', 'freq_block'):
            if getattr(self, name) not in BLOCK_KINDS:
                problems.append(f"{name} must be one of {BLOCK_KINDS}, got '{getattr(self, name)}'")
        if self.baseline_hidden is not None and self.baseline_hidden < 1:
            problems.append(f"baseline_hidden must be positive, got {self.baseline_hidden}")
        if self.baseline_layers < 1:
            problems.append(f"baseline_layers must be positive, got {self.baseline_layers}")
        if problems:
            log_error(f"Invalid model hyperparameters: {'; '.join(problems)}")
            raise ConfigurationError("Invalid model hyperparameters: " + "; ".join(problems))

    def with_known(self, n_t0: int, n_c0: int) -> 'ModelHyperparams':
        return ModelHyperparams(**{**asdict(self), 'N_t0': n_t0, 'N_c0': n_c0})

    def with_blocks(self, space_block: str, freq_block: str) -> 'ModelHyperparams':
        return ModelHyperparams(**{**asdict(self), 'space_block': space_block, 'freq_block': freq_block})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'ModelHyperparams':
        if not isinstance(data, dict):
            raise ConfigurationError(f"Model hyperparameters must be a JSON object, got {type(data).__name__}.")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            log_error(f"Unknown hyperparameter keys {sorted(unknown)}")
            raise ConfigurationError(f"Unknown hyperparameter keys: {sorted(unknown)}.")
        try:
            return cls(**data)
        except ValidationError:
            raise
        except (TypeError, ValueError) as e:
            log_error(f"Malformed model hyperparameters: {e}")
            raise ConfigurationError(f"Malformed model hyperparameters: {e}.") from e


# -------------------------
# Building blocks
# -------------------------
class Module:
    """Ordered container of named parameters and child modules."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def register(self, name: str, tensor: Tensor) -> Tensor:
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def child(self, name: str, module: 'Module') -> 'Module':
        self._children[name] = module
        return module

    def parameters(self, prefix: str = '') -> "OrderedDict[str, Tensor]":
        out = OrderedDict((prefix + name, t) for name, t in self._params.items())
        for name, module in self._children.items():
            out.update(module.parameters(prefix + name + '.'))
        return out

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, t.data.copy()) for name, t in self.parameters().items())

    def load_state(self, state: Dict[str, np.ndarray]):
        """
        Copy arrays into the parameters, requiring identical names and shapes.

        Raises:
            ConfigurationError: If names differ
            ShapeError: If a shape differs
        """
        params = self.parameters()
        if list(state) != list(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            log_error(f"State mismatch: missing {missing}, unexpected {extra}")
            raise ConfigurationError(f"Checkpoint does not match the model: missing {missing}, unexpected {extra}.")
        for name, tensor in params.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                log_error(f"Shape mismatch for '{name}': {value.shape} vs {tensor.shape}")
                raise ShapeError(f"Parameter '{name}' has shape {tensor.shape}, checkpoint has {value.shape}.")
            tensor.data[...] = value


class Affine(Module):
    """Dense layer W x + b with W uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)) and zero bias."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        bound = 1.0 / np.sqrt(in_dim)
        self.W = self.register('W', Tensor(rng.uniform(-bound, bound, size=(out_dim, in_dim)),
                                           requires_grad=True, dtype=dtype))
        self.b = self.register('b', Tensor(np.zeros(out_dim), requires_grad=True, dtype=dtype))

    @property
    def macs(self) -> int:
        return self.in_dim * self.out_dim

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.W, self.b)


class LayerNorm(Module):
    def __init__(self, dim: int, affine_params: bool = True, dtype=np.float32):
        super().__init__()
        self.dim = dim
        self.gain = self.bias = None
        if affine_params:
            self.gain = self.register('gain', Tensor(np.ones(dim), requires_grad=True, dtype=dtype))
            self.bias = self.register('bias', Tensor(np.zeros(dim), requires_grad=True, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


def _check_complex_width(x: Tensor, width: int, where: str):
    if x.ndim < 2 or x.shape[-2:] != (width, 2):
        log_error(f"{where}: expected trailing shape ({width}, 2), got {x.shape}")
        raise ShapeError(f"{where}: expected trailing shape ({width}, 2), got {x.shape}.")


class CmlpBlock(Module):
    """
    Complex-domain MLP: flatten (X, 2) to an interleaved 2X vector
    [r0, m0, r1, m1, ...], run 2X -> S -> 2X, and fold back to (X, 2).
    """

    def __init__(self, width: int, hidden: int, activation: str, rng, dtype=np.float32):
        super().__init__()
        self.width, self.hidden, self.activation = width, hidden, activation
        self.fc1 = self.child('fc1', Affine(2 * width, hidden, rng, dtype))
        self.fc2 = self.child('fc2', Affine(hidden, 2 * width, rng, dtype))

    @property
    def macs(self) -> int:
        return self.fc1.macs + self.fc2.macs

    def __call__(self, x: Tensor) -> Tensor:
        _check_complex_width(x, self.width, 'cmlp_forward')
        lead = x.shape[:-2]
        flat = reshape(x, lead + (2 * self.width,))
        hidden = ACTIVATIONS[self.activation](self.fc1(flat))
        return reshape(self.fc2(hidden), lead + (self.width, 2))


class RealParallelBlock(Module):
    """Two independent X -> S -> X MLPs, one on real parts and one on imaginary parts."""

    def __init__(self, width: int, hidden: int, activation: str, rng, dtype=np.float32):
        super().__init__()
        self.width, self.hidden, self.activation = width, hidden, activation
        self.real_fc1 = self.child('real_fc1', Affine(width, hidden, rng, dtype))
        self.real_fc2 = self.child('real_fc2', Affine(hidden, width, rng, dtype))
        self.imag_fc1 = self.child('imag_fc1', Affine(width, hidden, rng, dtype))
        self.imag_fc2 = self.child('imag_fc2', Affine(hidden, width, rng, dtype))

    @property
    def macs(self) -> int:
        return self.real_fc1.macs + self.real_fc2.macs + self.imag_fc1.macs + self.imag_fc2.macs

    def __call__(self, x: Tensor) -> Tensor:
        _check_complex_width(x, self.width, 'real_parallel_forward')
        act = ACTIVATIONS[self.activation]
        real = self.real_fc2(act(self.real_fc1(select(x, 0, axis=-1))))
        imag = self.imag_fc2(act(self.imag_fc1(select(x, 1, axis=-1))))
        return stack([real, imag], axis=-1)


def _mixing_block(kind: str, width: int, hidden: int, activation: str, rng, dtype):
    if kind == 'cmlp':
        return CmlpBlock(width, hidden, activation, rng, dtype)
    return RealParallelBlock(width, hidden, activation, rng, dtype)


def cmlp_forward(block, x: Tensor) -> Tensor:
    return block(x)


class MixerLayer(Module):
    """
    Space mixing shared over subcarriers, then frequency mixing shared over
    antennas, each wrapped as x + M(LN(x)). Maps (N_c', N_t', 2) to itself.
    """

    def __init__(self, hp: ModelHyperparams, rng, dtype=np.float32):
        super().__init__()
        self.n_t, self.n_c = hp.N_t_prime, hp.N_c_prime
        self.ln_space = self.child('ln_space', LayerNorm(2 * self.n_t, hp.layer_norm_affine, dtype))
        self.sm = self.child('sm', _mixing_block(hp.space_block, self.n_t, hp.S_t, hp.activation, rng, dtype))
        self.ln_freq = self.child('ln_freq', LayerNorm(2 * self.n_c, hp.layer_norm_affine, dtype))
        self.fm = self.child('fm', _mixing_block(hp.freq_block, self.n_c, hp.S_c, hp.activation, rng, dtype))

    def __call__(self, inp: Tensor) -> Tensor:
        if inp.ndim < 3 or inp.shape[-3:] != (self.n_c, self.n_t, 2):
            log_error(f"mixer layer expected (..., {self.n_c}, {self.n_t}, 2), got {inp.shape}")
            raise ShapeError(f"Mixer layer expects trailing shape ({self.n_c}, {self.n_t}, 2), got {inp.shape}.")
        lead = inp.shape[:-3]

        # space mixing: one map over the antenna axis, applied to every subcarrier row
        normed = self.ln_space(reshape(inp, lead + (self.n_c, 2 * self.n_t)))
        v = add(inp, self.sm(reshape(normed, lead + (self.n_c, self.n_t, 2))))

        # frequency mixing: one map over the subcarrier axis, applied to every antenna
        vt = swap_axes(v, -3, -2)
        normed = self.ln_freq(reshape(vt, lead + (self.n_t, 2 * self.n_c)))
        out = add(vt, self.fm(reshape(normed, lead + (self.n_t, self.n_c, 2))))
        return swap_axes(out, -3, -2)


def mixer_layer_forward(layer: MixerLayer, inp: Tensor) -> Tensor:
    return layer(inp)


def _map_axis(x: Tensor, layer: Affine, rows: int, width_in: int, width_out: int) -> Tensor:
    """Apply an affine map to the minor complex axis of [..., rows, width_in, 2]."""
    lead = x.shape[:-3]
    y = layer(reshape(x, lead + (rows, 2 * width_in)))
    return reshape(y, lead + (rows, width_out, 2))


# -------------------------
# Models
# -------------------------
class CMixerModel(Module):
    """Embedding affines, K mixer layers and head affines."""

    def __init__(self, hp: ModelHyperparams, seed: int = 0, dtype=np.float32,
                 variant: ModelVariant = ModelVariant.CMIXER):
        super().__init__()
        self.hp, self.variant, self.dtype = hp, variant, np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.embed_ant = self.child('embed_ant', Affine(2 * hp.N_t0, 2 * hp.N_t_prime, rng, dtype))
        self.embed_sub = self.child('embed_sub', Affine(2 * hp.N_c0, 2 * hp.N_c_prime, rng, dtype))
        self.layers: List[MixerLayer] = []
        for k in range(hp.K):
            self.layers.append(self.child(f'layers.{k}', MixerLayer(hp, rng, dtype)))
        self.head_ant = self.child('head_ant', Affine(2 * hp.N_t_prime, 2 * hp.N_t, rng, dtype))
        self.head_sub = self.child('head_sub', Affine(2 * hp.N_c_prime, 2 * hp.N_c, rng, dtype))

    @property
    def input_shape(self):
        return (self.hp.N_c0, self.hp.N_t0, 2)

    def __call__(self, h0: Tensor) -> Tensor:
        hp = self.hp
        if h0.ndim < 3 or h0.shape[-3:] != self.input_shape:
            log_error(f"model_forward expected (..., {hp.N_c0}, {hp.N_t0}, 2), got {h0.shape}")
            raise ShapeError(f"Model expects trailing shape {self.input_shape}, got {h0.shape}.")
        x = _map_axis(h0, self.embed_ant, hp.N_c0, hp.N_t0, hp.N_t_prime)
        x = swap_axes(_map_axis(swap_axes(x, -3, -2), self.embed_sub, hp.N_t_prime, hp.N_c0, hp.N_c_prime), -3, -2)
        for layer in self.layers:
            x = layer(x)
        x = _map_axis(x, self.head_ant, hp.N_c_prime, hp.N_t_prime, hp.N_t)
        x = swap_axes(_map_axis(swap_axes(x, -3, -2), self.head_sub, hp.N_t, hp.N_c_prime, hp.N_c), -3, -2)
        return x

    def param_breakdown(self) -> Dict[str, int]:
        params = self.parameters()
        out = {'embedding': 0, 'mixer': 0, 'heads': 0}
        for name, t in params.items():
            stage = 'embedding' if name.startswith('embed') else 'heads' if name.startswith('head') else 'mixer'
            out[stage] += t.size
        return out

    def mac_breakdown(self) -> Dict[str, int]:
        hp = self.hp
        mixer = sum(hp.N_c_prime * layer.sm.macs + hp.N_t_prime * layer.fm.macs for layer in self.layers)
        return {
            'embedding': hp.N_c0 * self.embed_ant.macs + hp.N_t_prime * self.embed_sub.macs,
            'mixer': mixer,
            'heads': hp.N_c_prime * self.head_ant.macs + hp.N_t * self.head_sub.macs,
        }


class PureMlpBaseline(Module):
    """Flatten the known channel, run hidden affine+activation layers, emit the full CSI."""

    def __init__(self, hp: ModelHyperparams, seed: int = 0, dtype=np.float32):
        super().__init__()
        self.hp, self.variant, self.dtype = hp, ModelVariant.PURE_MLP, np.dtype(dtype)
        self.in_dim = 2 * hp.N_t0 * hp.N_c0
        self.out_dim = 2 * hp.N_t * hp.N_c
        self.hidden = hp.baseline_hidden or matched_baseline_width(hp)
        rng = np.random.default_rng(seed)
        self.hidden_layers: List[Affine] = []
        width_in = self.in_dim
        for i in range(hp.baseline_layers):
            self.hidden_layers.append(self.child(f'hidden.{i}', Affine(width_in, self.hidden, rng, dtype)))
            width_in = self.hidden
        self.output = self.child('output', Affine(width_in, self.out_dim, rng, dtype))

    @property
    def input_shape(self):
        return (self.hp.N_c0, self.hp.N_t0, 2)

    def __call__(self, h0: Tensor) -> Tensor:
        if h0.ndim < 3 or h0.shape[-3:] != self.input_shape:
            log_error(f"baseline expected (..., {self.input_shape}), got {h0.shape}")
            raise ShapeError(f"Model expects trailing shape {self.input_shape}, got {h0.shape}.")
        lead = h0.shape[:-3]
        act = ACTIVATIONS[self.hp.activation]
        x = reshape(h0, lead + (self.in_dim,))
        for layer in self.hidden_layers:
            x = act(layer(x))
        return reshape(self.output(x), lead + (self.hp.N_c, self.hp.N_t, 2))

    def param_breakdown(self) -> Dict[str, int]:
        hidden = sum(t.size for name, t in self.parameters().items() if name.startswith('hidden'))
        return {'hidden': hidden, 'output': self.output.W.size + self.output.b.size}

    def mac_breakdown(self) -> Dict[str, int]:
        return {'hidden': sum(layer.macs for layer in self.hidden_layers), 'output': self.output.macs}


def model_forward(model, h0: Tensor) -> Tensor:
    return model(h0)


def cmixer_param_count(hp: ModelHyperparams) -> int:
    """Closed-form parameter count of a mixer model with these hyperparameters."""
    def dense(n_in, n_out):
        return (n_in + 1) * n_out

    def block(kind, x, s):
        if kind == 'cmlp':
            return dense(2 * x, s) + dense(s, 2 * x)
        return 2 * (dense(x, s) + dense(s, x))

    ln = 2 if hp.layer_norm_affine else 0
    layer = (ln * 2 * hp.N_t_prime + block(hp.space_block, hp.N_t_prime, hp.S_t)
             + ln * 2 * hp.N_c_prime + block(hp.freq_block, hp.N_c_prime, hp.S_c))
    return (dense(2 * hp.N_t0, 2 * hp.N_t_prime) + dense(2 * hp.N_c0, 2 * hp.N_c_prime)
            + hp.K * layer
            + dense(2 * hp.N_t_prime, 2 * hp.N_t) + dense(2 * hp.N_c_prime, 2 * hp.N_c))


def baseline_param_count(hp: ModelHyperparams, width: int) -> int:
    n_in, n_out = 2 * hp.N_t0 * hp.N_c0, 2 * hp.N_t * hp.N_c
    return (n_in + 1) * width + (hp.baseline_layers - 1) * (width + 1) * width + (width + 1) * n_out


def matched_baseline_width(hp: ModelHyperparams) -> int:
    """Hidden width whose baseline parameter count is closest to the CMixer count."""
    target = cmixer_param_count(hp)
    width = 1
    while baseline_param_count(hp, width) < target:
        width += 1
    if width > 1 and target - baseline_param_count(hp, width - 1) <= baseline_param_count(hp, width) - target:
        width -= 1
    return width


def count_params(model) -> int:
    """Exact number of learnable scalars."""
    return int(sum(t.size for t in model.parameters().values()))


def flop_breakdown(model, convention: FlopConvention = FlopConvention.MAC) -> Dict[str, int]:
    """Per-stage forward FLOPs for one sample; biases, activations and layer norms excluded."""
    convention = FlopConvention(convention)
    return {stage: macs * convention.per_mac for stage, macs in model.mac_breakdown().items()}


def count_flops(model, convention: FlopConvention = FlopConvention.MAC) -> int:
    return int(sum(flop_breakdown(model, convention).values()))


def build_variant(variant, hp: ModelHyperparams, seed: int = 0, dtype=np.float32):
    """
    Build a model for the given variant.

    CMIXER honours hp.space_block / hp.freq_block (the CMLP ablation grid);
    REAL_PARALLEL forces real/imaginary-parallel MLPs in both mixings;
    PURE_MLP builds the flat baseline.

    Raises:
        ConfigurationError: If the variant is unknown
    """
    variant = ModelVariant.parse(variant)
    if variant is ModelVariant.PURE_MLP:
        model = PureMlpBaseline(hp, seed, dtype)
    elif variant is ModelVariant.REAL_PARALLEL:
        model = CMixerModel(hp.with_blocks('mlp', 'mlp'), seed, dtype, variant)
    else:
        model = CMixerModel(hp, seed, dtype, variant)
    get_logger().info(f"Built {variant.value} model with {count_params(model)} parameters")
    return model


def model_descriptor(model, training_scale: Optional[float] = None) -> dict:
    """
    Architecture descriptor stored next to a checkpoint.

    training_scale is the RMS the training inputs were divided by; callers that
    feed raw CSI to the model divide by it first.
    """
    descriptor = {'variant': model.variant.value}
    descriptor.update(model.hp.to_dict())
    if isinstance(model, PureMlpBaseline):
        descriptor['baseline_hidden'] = model.hidden
    if training_scale is not None:
        descriptor['training_scale'] = float(training_scale)
    return descriptor


def build_from_descriptor(descriptor: dict, dtype=np.float32):
    data = dict(descriptor)
    variant = data.pop('variant', ModelVariant.CMIXER.value)
    data.pop('training_scale', None)
    return build_variant(variant, ModelHyperparams.from_dict(data), seed=0, dtype=dtype)
