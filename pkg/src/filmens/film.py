"""FiLM batch normalization with one affine parameter set per ensemble member.

Ensemble members share every weight of the network except the per-channel
scale and shift of the normalization layers. All members run in a single
forward pass: the input batch is replicated M times along the batch axis
(member-major, rows ``[m*B, (m+1)*B)`` belong to member ``m``) and each block
is modulated with its member's ``(gamma, beta)`` row.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, LayoutError, ParameterError, StateError


@dataclass
class FiLMParams:
    gamma: T.Tensor  # (M, D)
    beta: T.Tensor  # (M, D)

    def __post_init__(self):
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 2:
            raise DimensionError(
                f"gamma {self.gamma.shape} and beta {self.beta.shape} must both be (M, D)"
            )

    @property
    def M(self):
        return self.gamma.shape[0]

    @property
    def D(self):
        return self.gamma.shape[1]


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def fresh(cls, d, dtype=None, eps=1e-5, momentum=0.1):
        dtype = dtype or T.get_default_dtype()
        return cls(np.zeros(d, dtype=dtype), np.ones(d, dtype=dtype), eps, momentum)


@dataclass(frozen=True)
class EnsembleLayout:
    M: int
    B: int

    def __post_init__(self):
        if self.M < 1 or self.B < 1:
            raise LayoutError(f"layout needs M >= 1 and B >= 1, got M={self.M}, B={self.B}")

    @classmethod
    def from_rows(cls, rows, M):
        if M < 1:
            raise LayoutError(f"ensemble size must be >= 1, got {M}")
        if rows % M:
            raise LayoutError(f"{rows} rows cannot be split into {M} member blocks")
        return cls(M, rows // M)

    @property
    def rows(self):
        return self.M * self.B


def init_film(M, D, rho, rng, dtype=None):
    """Draw every gamma and beta entry from U(-a, a) with ``a = sqrt(3 / D) * rho``."""
    if M < 1 or D < 1:
        raise ParameterError(f"need M >= 1 and D >= 1, got M={M}, D={D}")
    if rho < 0:
        raise ParameterError(f"gain rho must be >= 0, got {rho}")
    dtype = dtype or T.get_default_dtype()
    bound = math.sqrt(3.0) / math.sqrt(D) * rho
    gamma = rng.uniform(-bound, bound, size=(M, D)).astype(dtype)
    beta = rng.uniform(-bound, bound, size=(M, D)).astype(dtype)
    return FiLMParams(T.Tensor(gamma, requires_grad=True), T.Tensor(beta, requires_grad=True))


def replicate_batch(x, M):
    """Stack M copies of the batch, member-major."""
    if M < 1:
        raise ParameterError(f"ensemble size must be >= 1, got {M}")
    if x.shape[0] < 1:
        raise LayoutError("cannot replicate an empty batch")
    return T.repeat_rows(x, M)


def _check_layout(F, params, layout):
    if F.ndim < 2:
        raise DimensionError(f"FiLM input needs a channel axis, got shape {F.shape}")
    if F.shape[0] % params.M:
        raise LayoutError(f"{F.shape[0]} rows cannot be split into {params.M} member blocks")
    if layout is None:
        layout = EnsembleLayout.from_rows(F.shape[0], params.M)
    if layout.M != params.M or layout.rows != F.shape[0]:
        raise LayoutError(
            f"layout M={layout.M}, B={layout.B} does not match {F.shape[0]} rows and M={params.M}"
        )
    if F.shape[1] != params.D:
        raise DimensionError(f"input has {F.shape[1]} channels, FiLM parameters have D={params.D}")
    return layout


def film_apply(F, params, layout=None):
    """Apply ``gamma[m] * F + beta[m]`` to member block m, broadcasting over trailing axes."""
    layout = _check_layout(F, params, layout)
    M, B = layout.M, layout.B
    rest = F.shape[2:]
    spatial = (1,) * len(rest)
    F4 = F.data.reshape((M, B) + F.shape[1:])
    g = params.gamma.data.reshape((M, 1, params.D) + spatial)
    b = params.beta.data.reshape((M, 1, params.D) + spatial)
    out = (F4 * g + b).reshape(F.shape)
    red = (1,) + tuple(range(3, 3 + len(rest)))

    def grad_fn(grad):
        g4 = grad.reshape(F4.shape)
        dF = (g4 * g).reshape(F.shape) if F.requires_grad else None
        dgamma = (g4 * F4).sum(axis=red) if params.gamma.requires_grad else None
        dbeta = g4.sum(axis=red) if params.beta.requires_grad else None
        return dF, dgamma, dbeta

    return T.record(out, (F, params.gamma, params.beta), "film_apply", grad_fn)


def batch_normalize(x, state, mode):
    """Standardize each channel (axis 1).

    Train mode uses the biased batch variance over every non-channel axis and
    updates the running statistics (unbiased variance). Eval mode uses the
    running statistics.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    shape = [1] * x.ndim
    shape[1] = x.shape[1]
    if mode == "train":
        if x.shape[0] < 2:
            raise StateError("train-mode batch statistics need at least two rows")
        n = x.size // x.shape[1]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.dtype.type(state.momentum)
        state.running_mean = (1 - m) * state.running_mean + m * mu.astype(state.running_mean.dtype)
        unbiased = var * (n / (n - 1))
        state.running_var = (1 - m) * state.running_var + m * unbiased.astype(state.running_var.dtype)
        inv_std = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)
        xhat = (x.data - mu.reshape(shape)) * inv_std.reshape(shape)

        def grad_fn(g):
            s1 = g.sum(axis=axes, keepdims=True)
            s2 = (g * xhat).sum(axis=axes, keepdims=True)
            return (inv_std.reshape(shape) / n * (n * g - s1 - xhat * s2),)

        return T.record(xhat, (x,), "batchnorm_train", grad_fn)
    if mode == "eval":
        inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).astype(x.dtype).reshape(shape)
        xhat = (x.data - state.running_mean.astype(x.dtype).reshape(shape)) * inv_std
        return T.record(xhat, (x,), "batchnorm_eval", lambda g: (g * inv_std,))
    raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")


def film_batchnorm_forward(x, params, state, layout=None, mode="train"):
    """Batch normalization whose affine step is member-specific.

    Statistics are shared by all members: they are taken over the whole
    replicated batch in train mode, and one set of running statistics is kept.
    """
    layout = _check_layout(x, params, layout)
    return film_apply(batch_normalize(x, state, mode), params, layout)


def split_members(y, layout_or_M):
    """Cut a replicated output into M per-member blocks of B rows."""
    if isinstance(layout_or_M, EnsembleLayout):
        layout = layout_or_M
        if layout.rows != y.shape[0]:
            raise LayoutError(f"layout expects {layout.rows} rows, got {y.shape[0]}")
    else:
        layout = EnsembleLayout.from_rows(y.shape[0], int(layout_or_M))
    if layout.M == 1:
        return [y]
    B = layout.B
    return [T.slice_rows(y, m * B, (m + 1) * B) for m in range(layout.M)]


def ensemble_average(member_probs):
    """Mean of the members' probability rows."""
    if len(member_probs) == 0:
        raise ParameterError("ensemble_average needs at least one member")
    arrs = [p.data if isinstance(p, T.Tensor) else np.asarray(p) for p in member_probs]
    shape = arrs[0].shape
    for a in arrs[1:]:
        if a.shape != shape:
            raise DimensionError(f"member shapes differ: {shape} vs {a.shape}")
    # shifted mean: exactly reproduces the members when they are all identical
    base = arrs[0]
    return base + np.mean(np.stack(arrs) - base, axis=0)


class FiLMBatchNorm:
    """Normalization layer carrying M rows of FiLM parameters."""

    def __init__(self, d, M, rho, rng, eps=1e-5, momentum=0.1):
        self.film = init_film(M, d, rho, rng)
        self.state = BatchNormState.fresh(d, eps=eps, momentum=momentum)

    @property
    def D(self):
        return self.film.D

    def forward(self, x, mode, rng=None):
        return film_batchnorm_forward(x, self.film, self.state, mode=mode)

    def parameters(self):
        return {"gamma": self.film.gamma, "beta": self.film.beta}

    def buffers(self):
        return {"running_mean": self.state.running_mean, "running_var": self.state.running_var}

    def load_buffers(self, buffers):
        self.state.running_mean = buffers["running_mean"]
        self.state.running_var = buffers["running_var"]
