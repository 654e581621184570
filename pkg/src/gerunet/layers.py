"""Group layers on D4 feature maps, plus their regular (planar) counterparts.

Layouts::

    planar map   B x C x H x W
    group map    B x C x 8 x H x W      (axis 2 indexed by GroupElement.index)

Filters are stored once.  Every forward pass expands the stored tensor into the
8 transformed copies with a precomputed gather index, so the adjoint of the
expansion is a scatter-add back onto the stored weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np

from . import group as G
from .errors import InvalidArgument, ShapeMismatch
from .ops import batch_norm, conv2d, upsample2d
from .tensor import Tensor, as_tensor, concat, mean_axis, reshape, take, add


def _check_kernel(k: int, stride: int):
    # Odd kernels keep a centre pixel.  Strided layers may use even kernels:
    # on an even grid only those sample a centre-symmetric set of positions.
    if k < 1:
        raise InvalidArgument(f"kernel size must be positive, got {k}")
    if stride < 1:
        raise InvalidArgument(f"stride must be >= 1, got {stride}")
    if stride == 1 and k % 2 == 0:
        raise InvalidArgument(f"stride-1 kernels must have odd size, got {k}")


@lru_cache(maxsize=None)
def lift_index(out_ch: int, in_ch: int, k: int) -> np.ndarray:
    """Gather index (O*8, C, k, k) into a stored (O, C, k, k) lifting filter."""
    base = np.arange(out_ch * in_ch * k * k).reshape(out_ch, in_ch, k, k)
    idx = np.stack([G.transform_plane(g, base) for g in G.ELEMENTS], axis=1)
    idx = idx.reshape(out_ch * G.ORDER, in_ch, k, k)
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def group_index(out_ch: int, in_ch: int, k: int) -> np.ndarray:
    """Gather index (O*8, C*8, k, k) into a stored (O, C, 8, k, k) group filter.

    Output orientation g reads ``transform_plane(g, w[:, :, idx(g^-1 h)])`` for
    input orientation h.
    """
    base = np.arange(out_ch * in_ch * G.ORDER * k * k).reshape(out_ch, in_ch, G.ORDER, k, k)
    slabs = []
    for g in G.ELEMENTS:
        ginv = G.inverse(g)
        src = [G.compose(ginv, h).index for h in G.ELEMENTS]
        slabs.append(G.transform_plane(g, base[:, :, src]))
    idx = np.stack(slabs, axis=1).reshape(out_ch * G.ORDER, in_ch * G.ORDER, k, k)
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def _bias_index(out_ch: int) -> np.ndarray:
    idx = np.repeat(np.arange(out_ch), G.ORDER)
    idx.setflags(write=False)
    return idx


def _batched(f: Tensor, ndim: int) -> tuple[Tensor, bool]:
    if f.ndim == ndim - 1:
        return reshape(f, (1,) + f.shape), True
    if f.ndim != ndim:
        raise ShapeMismatch(f"expected a {ndim - 1}- or {ndim}-d map, got shape {f.shape}")
    return f, False


def lift_conv(f, w, bias=None, stride: int = 1, padding: int | None = None) -> Tensor:
    """Lifting convolution Z^2 -> G: correlate with all 8 transformed copies of ``w``.

    ``f`` is (B,)C,H,W and ``w`` is (O, C, k, k); returns (B,)O,8,H',W'.
    """
    f, w = as_tensor(f), as_tensor(w)
    O, C, k, k2 = w.shape
    if k != k2:
        raise InvalidArgument("kernels must be square")
    _check_kernel(k, stride)
    padding = (k - 1) // 2 if padding is None else padding
    f, squeeze = _batched(f, 4)
    if f.shape[1] != C:
        raise InvalidArgument(f"lift_conv: kernel expects {C} channels, input has {f.shape[1]}")
    wx = take(w, lift_index(O, C, k))
    bx = take(bias, _bias_index(O)) if bias is not None else None
    out = conv2d(f, wx, bx, stride=stride, padding=padding)
    B, _, Ho, Wo = out.shape
    out = reshape(out, (B, O, G.ORDER, Ho, Wo))
    return reshape(out, out.shape[1:]) if squeeze else out


def group_conv(f, w, bias=None, stride: int = 1, padding: int | None = None) -> Tensor:
    """Group convolution G -> G.  ``f`` is (B,)C,8,H,W and ``w`` is (O, C, 8, k, k)."""
    f, w = as_tensor(f), as_tensor(w)
    if w.ndim != 5 or w.shape[2] != G.ORDER:
        raise ShapeMismatch(f"group kernel must be O x C x 8 x k x k, got {w.shape}")
    O, C, _, k, k2 = w.shape
    if k != k2:
        raise InvalidArgument("kernels must be square")
    _check_kernel(k, stride)
    padding = (k - 1) // 2 if padding is None else padding
    f, squeeze = _batched(f, 5)
    B, Cf, n, H, W = f.shape
    if n != G.ORDER:
        raise ShapeMismatch(f"orientation axis must have length 8, got {n}")
    if Cf != C:
        raise InvalidArgument(f"group_conv: kernel expects {C} channels, input has {Cf}")
    wx = take(w, group_index(O, C, k))
    bx = take(bias, _bias_index(O)) if bias is not None else None
    out = conv2d(reshape(f, (B, C * G.ORDER, H, W)), wx, bx, stride=stride, padding=padding)
    _, _, Ho, Wo = out.shape
    out = reshape(out, (B, O, G.ORDER, Ho, Wo))
    return reshape(out, out.shape[1:]) if squeeze else out


@dataclass
class BNState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, dtype=np.float64) -> "BNState":
        return cls(Tensor(np.ones(channels, dtype), requires_grad=True),
                   Tensor(np.zeros(channels, dtype), requires_grad=True),
                   np.zeros(channels, dtype), np.ones(channels, dtype))


def group_batchnorm(f, state: BNState, mode: str = "train") -> Tensor:
    """Batch-norm with one statistic per channel, pooled over batch, orientations and space."""
    if mode not in ("train", "eval"):
        raise InvalidArgument(f"mode must be 'train' or 'eval', got {mode!r}")
    f = as_tensor(f)
    if f.ndim < 3:
        raise ShapeMismatch("batch norm needs a batch axis")
    return batch_norm(f, state.gamma, state.beta, state.running_mean, state.running_var,
                      training=mode == "train", momentum=state.momentum, eps=state.eps)


def group_upsample(f, factor: int = 2, mode: str = "nearest") -> Tensor:
    """Upsample each orientation plane on its own."""
    return upsample2d(f, factor, mode)


def group_skip(a, b, mode: str = "add") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.shape[2:] != b.shape[2:] or a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"skip: incompatible maps {a.shape} and {b.shape}")
    if mode == "add":
        return add(a, b)
    if mode == "concat":
        return concat([a, b], axis=1)
    raise InvalidArgument(f"unknown skip mode {mode!r}")


def orientation_pool(f) -> Tensor:
    """Average over the orientation axis: (B,)C,8,H,W -> (B,)C,H,W."""
    f = as_tensor(f)
    if f.ndim < 3 or f.shape[-3] != G.ORDER:
        raise ShapeMismatch(f"expected orientation axis of length 8, got shape {f.shape}")
    return mean_axis(f, f.ndim - 3)


# -- modules -----------------------------------------------------------------

class Module:
    """Minimal container: named parameters, buffers and child modules in insertion order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kw):
        return self.forward(*args, **kw)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for n, p in self._params.items():
            yield prefix + n, p
        for n, c in self._children.items():
            yield from c.named_parameters(f"{prefix}{n}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for n, b in self._buffers.items():
            yield prefix + n, b
        for n, c in self._children.items():
            yield from c.named_buffers(f"{prefix}{n}.")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for n, c in self._children.items():
            yield from c.named_modules(f"{prefix}{n}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True):
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        for _, m in self.named_modules():
            for p in m._params.values():
                p.data = p.data.astype(dtype)
            for k, b in m._buffers.items():
                m._set_buffer(k, b.astype(dtype))
        return self

    def _set_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LiftConv(Module):
    def __init__(self, in_ch, out_ch, k=3, stride=1, padding=None, bias=False, rng=None, dtype=np.float32):
        super().__init__()
        _check_kernel(k, stride)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding = stride, (k - 1) // 2 if padding is None else padding
        self.weight = Tensor(_uniform(rng, (out_ch, in_ch, k, k), k * k * in_ch).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype), requires_grad=True) if bias else None

    def forward(self, x):
        return lift_conv(x, self.weight, self.bias, self.stride, self.padding)


class GroupConv(Module):
    def __init__(self, in_ch, out_ch, k=3, stride=1, padding=None, bias=False, rng=None, dtype=np.float32):
        super().__init__()
        _check_kernel(k, stride)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding = stride, (k - 1) // 2 if padding is None else padding
        self.weight = Tensor(
            _uniform(rng, (out_ch, in_ch, G.ORDER, k, k), k * k * G.ORDER * in_ch).astype(dtype),
            requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype), requires_grad=True) if bias else None

    def forward(self, x):
        return group_conv(x, self.weight, self.bias, self.stride, self.padding)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, k=3, stride=1, padding=None, bias=False, rng=None, dtype=np.float32):
        super().__init__()
        _check_kernel(k, stride)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding = stride, (k - 1) // 2 if padding is None else padding
        self.weight = Tensor(_uniform(rng, (out_ch, in_ch, k, k), k * k * in_ch).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype), requires_grad=True) if bias else None

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    """Per-channel batch-norm; serves planar and group maps alike (channel axis 1)."""

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.state = BNState.fresh(channels, dtype)
        self.state.momentum, self.state.eps = momentum, eps
        self.gamma = self.state.gamma
        self.beta = self.state.beta
        self._buffers["running_mean"] = self.state.running_mean
        self._buffers["running_var"] = self.state.running_var

    def _set_buffer(self, name, value):
        value = np.array(value)
        self._buffers[name] = value
        setattr(self.state, name, value)

    def forward(self, x):
        return group_batchnorm(x, self.state, "train" if self.training else "eval")
