"""Desk-scale backbones built from shared layers and FiLM batch-norm layers.

Three builders are provided:

* ``mlp``: [linear -> FiLM-BN -> relu] x len(widths), linear head.
* ``conv2d_small``: [conv3x3 -> FiLM-BN -> relu] blocks with 2x2 max-pooling
  between them, global average pooling, linear head.
* ``conv1d_genome``: five [conv1d(k=10) -> relu -> FiLM-BN -> dropout] blocks
  with 256 filters over one-hot (4, 41) DNA sequences, linear head.

Only the FiLM rows differ between members; a convolution or linear layer that
feeds a normalization layer carries no bias.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .film import FiLMBatchNorm, replicate_batch, split_members
from .rng import stream

KINDS = ("mlp", "conv2d_small", "conv1d_genome")
DEFAULT_WIDTHS = {"mlp": (64, 64), "conv2d_small": (32, 64, 128), "conv1d_genome": (256,) * 5}
GENOME_SHAPE = (4, 41)


@dataclass
class ModelConfig:
    kind: str
    input_shape: tuple
    num_classes: int
    M: int = 1
    rho: float = 2.0
    dropout_rate: float = 0.5
    widths: tuple = None
    dtype: str = "float32"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.widths = tuple(int(w) for w in (self.widths or DEFAULT_WIDTHS[self.kind]))
        if self.M < 1:
            raise ConfigError(f"ensemble size M must be >= 1, got {self.M}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.rho < 0:
            raise ConfigError(f"gain rho must be >= 0, got {self.rho}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not self.widths or min(self.widths) < 1:
            raise ConfigError(f"widths must be positive, got {self.widths}")

    def to_dict(self):
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "M": self.M,
            "rho": self.rho,
            "dropout_rate": self.dropout_rate,
            "widths": list(self.widths),
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{**d, "input_shape": tuple(d["input_shape"]), "widths": tuple(d["widths"])})


# layers -------------------------------------------------------------------------

def _kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(T.get_default_dtype())


def _bias_uniform(rng, n, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=n).astype(T.get_default_dtype())


class Layer:
    def forward(self, x, mode, rng=None):
        raise NotImplementedError

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def load_buffers(self, buffers):
        pass


class Linear(Layer):
    def __init__(self, n_in, n_out, rng, bias=True):
        self.weight = T.Tensor(_kaiming_uniform(rng, (n_in, n_out), n_in), requires_grad=True)
        self.bias = T.Tensor(_bias_uniform(rng, n_out, n_in), requires_grad=True) if bias else None

    def forward(self, x, mode, rng=None):
        return T.linear(x, self.weight, self.bias)

    def parameters(self):
        return {"weight": self.weight} if self.bias is None else {"weight": self.weight, "bias": self.bias}


class Conv2d(Layer):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, bias=True):
        fan_in = c_in * k * k
        self.weight = T.Tensor(_kaiming_uniform(rng, (c_out, c_in, k, k), fan_in), requires_grad=True)
        self.bias = T.Tensor(_bias_uniform(rng, c_out, fan_in), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x, mode, rng=None):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def parameters(self):
        return {"weight": self.weight} if self.bias is None else {"weight": self.weight, "bias": self.bias}


class Conv1d(Conv2d):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, bias=True):
        fan_in = c_in * k
        self.weight = T.Tensor(_kaiming_uniform(rng, (c_out, c_in, k), fan_in), requires_grad=True)
        self.bias = T.Tensor(_bias_uniform(rng, c_out, fan_in), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x, mode, rng=None):
        return T.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ReLU(Layer):
    def forward(self, x, mode, rng=None):
        return T.relu(x)


class MaxPool2d(Layer):
    def forward(self, x, mode, rng=None):
        return T.max_pool2d(x, 2)


class GlobalAvgPool(Layer):
    def forward(self, x, mode, rng=None):
        return T.mean(x, axis=(2, 3))


class Flatten(Layer):
    def forward(self, x, mode, rng=None):
        return T.reshape(x, (x.shape[0], -1))


class Dropout(Layer):
    def __init__(self, rate):
        self.rate = rate

    def forward(self, x, mode, rng=None):
        return T.dropout(x, self.rate, mode, rng)


# model ----------------------------------------------------------------------------

class Model:
    """An ordered stack of layers evaluated on an M-fold replicated batch."""

    def __init__(self, config, layers):
        self.config = config
        self.layers = layers
        self.mode = "train"

    @property
    def M(self):
        return self.config.M

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def film_layers(self):
        return [l for l in self.layers if isinstance(l, FiLMBatchNorm)]

    def named_parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters().items():
                out[f"layers.{i}.{name}"] = p
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def shared_parameters(self):
        return [p for l in self.layers if not isinstance(l, FiLMBatchNorm) for p in l.parameters().values()]

    def named_buffers(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers().items():
                out[f"layers.{i}.{name}"] = b
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def forward(self, x, mode=None, rng=None):
        return model_forward(self, x, mode or self.mode, rng)

    __call__ = forward

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self


def model_forward(model, x, mode, rng=None):
    """Run all members on batch ``x``; returns a list of M logit tensors of shape (B, K)."""
    if not isinstance(x, T.Tensor):
        x = T.Tensor(np.asarray(x, dtype=model.dtype))
    elif x.dtype != model.dtype:
        x = T.Tensor(x.data.astype(model.dtype))
    if tuple(x.shape[1:]) != model.config.input_shape:
        raise ConfigError(f"input sample shape {x.shape[1:]} does not match model {model.config.input_shape}")
    h = replicate_batch(x, model.M) if model.M > 1 else x
    for layer in model.layers:
        h = layer.forward(h, mode, rng)
    return split_members(h, model.M)


def _build(config, seed, make_layers):
    with T.default_dtype(config.dtype):
        rng = stream(seed, "init", config.kind)
        layers = make_layers(config, rng)
    return Model(config, layers)


def _mlp_layers(config, rng):
    if len(config.input_shape) != 1:
        raise ConfigError(f"mlp expects a flat input shape, got {config.input_shape}")
    layers = []
    n_in = config.input_shape[0]
    for w in config.widths:
        layers += [Linear(n_in, w, rng, bias=False), FiLMBatchNorm(w, config.M, config.rho, rng), ReLU()]
        n_in = w
    layers.append(Linear(n_in, config.num_classes, rng))
    return layers


def _conv2d_small_layers(config, rng):
    if len(config.input_shape) != 3:
        raise ConfigError(f"conv2d_small expects C x H x W input, got {config.input_shape}")
    c, h, w = config.input_shape
    pools = len(config.widths) - 1
    if h < 8 or w < 8 or (h >> pools) < 1 or (w >> pools) < 1:
        raise ConfigError(f"input {config.input_shape} too small for {len(config.widths)} blocks")
    layers = []
    for i, width in enumerate(config.widths):
        if i:
            layers.append(MaxPool2d())
        layers += [
            Conv2d(c, width, 3, rng, padding=1, bias=False),
            FiLMBatchNorm(width, config.M, config.rho, rng),
            ReLU(),
        ]
        c = width
    layers += [GlobalAvgPool(), Linear(c, config.num_classes, rng)]
    return layers


def _conv1d_genome_layers(config, rng):
    if config.input_shape != GENOME_SHAPE:
        raise ConfigError(f"conv1d_genome expects input shape {GENOME_SHAPE}, got {config.input_shape}")
    c, length = config.input_shape
    layers = []
    for i, width in enumerate(config.widths):
        pad = 5 if i == 0 else 0
        if length + 2 * pad < 10:
            raise ConfigError(f"sequence length {length} too short for block {i}")
        layers += [
            Conv1d(c, width, 10, rng, padding=pad),
            ReLU(),
            FiLMBatchNorm(width, config.M, config.rho, rng),
            Dropout(config.dropout_rate),
        ]
        c = width
        length = length + 2 * pad - 10 + 1
    layers += [Flatten(), Linear(c * length, config.num_classes, rng)]
    return layers


def build_mlp(config, seed=0):
    return _build(config, seed, _mlp_layers)


def build_conv2d_small(config, seed=0):
    return _build(config, seed, _conv2d_small_layers)


def build_conv1d_genome(config, seed=0):
    return _build(config, seed, _conv1d_genome_layers)


BUILDERS = {"mlp": build_mlp, "conv2d_small": build_conv2d_small, "conv1d_genome": build_conv1d_genome}


def build_model(config, seed=0):
    return BUILDERS[config.kind](config, seed)


# parameter accounting -------------------------------------------------------------

@dataclass
class ParamBudget:
    shared_count: int
    per_member_count: int
    extra_vs_single: int
    overhead_ratio: float
    film_channels: list = field(default_factory=list)

    @property
    def total(self):
        return self.shared_count + self.per_member_count + self.extra_vs_single


def count_parameters(model):
    """Split trainable parameters into shared weights and per-member FiLM rows.

    ``overhead_ratio`` is the extra parameter count relative to the same
    network with a single member.
    """
    if isinstance(model, DeepEnsemble):
        single = count_parameters(model.members[0])
        total_single = single.shared_count + single.per_member_count
        extra = (len(model.members) - 1) * total_single
        return ParamBudget(
            shared_count=0,
            per_member_count=total_single,
            extra_vs_single=extra,
            overhead_ratio=extra / total_single,
        )
    shared = sum(p.size for p in model.shared_parameters())
    dims = [l.D for l in model.film_layers()]
    per_member = 2 * sum(dims)
    extra = (model.M - 1) * per_member
    return ParamBudget(
        shared_count=int(shared),
        per_member_count=int(per_member),
        extra_vs_single=int(extra),
        overhead_ratio=extra / (shared + per_member),
        film_channels=dims,
    )


def count_trainable(model):
    """Total number of trainable scalars actually allocated."""
    if isinstance(model, DeepEnsemble):
        return sum(count_trainable(m) for m in model.members)
    return int(sum(p.size for p in model.parameters()))


# explicit ensemble baseline -------------------------------------------------------

class DeepEnsemble:
    """M independently initialized single-member networks."""

    def __init__(self, members, seeds):
        self.members = members
        self.seeds = list(seeds)
        self.mode = "train"

    @property
    def M(self):
        return len(self.members)

    @property
    def config(self):
        return self.members[0].config

    def parameters(self):
        return [p for m in self.members for p in m.parameters()]

    def forward(self, x, mode=None, rng=None):
        mode = mode or self.mode
        return [m.forward(x, mode, rng)[0] for m in self.members]

    __call__ = forward

    def train(self):
        self.mode = "train"
        for m in self.members:
            m.train()
        return self

    def eval(self):
        self.mode = "eval"
        for m in self.members:
            m.eval()
        return self


def build_deep_ensemble(config, M, seeds):
    """Build M single-member copies of ``config``, each from its own seed."""
    seeds = list(seeds)
    if len(seeds) != M:
        raise ConfigError(f"need {M} seeds, got {len(seeds)}")
    if len(set(seeds)) != len(seeds):
        warnings.warn(f"duplicate seeds {seeds}: some ensemble members will start identical", stacklevel=2)
    single = ModelConfig.from_dict({**config.to_dict(), "M": 1})
    return DeepEnsemble([build_model(single, s) for s in seeds], seeds)
