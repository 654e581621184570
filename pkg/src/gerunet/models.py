"""GER-UNet and the matched regular residual U-Net.

Both share one topology::

    stem        lift/conv 3x3 -> BN -> ReLU                       width w
    enc1..enc4  2 residual blocks each, widths w, 2w, 4w, 8w; the first block
                of enc2..enc4 downsamples with a stride-2 4x4 conv
    dec3..dec1  1x1 conv (halve width) -> upsample x2 -> skip with encoder
                stage -> 1 residual block
    head        1x1 conv -> orientation pool (group model only)

Group widths are the regular widths scaled by 1/sqrt(8), which keeps the two
parameter counts close.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument
from .layers import (BatchNorm, Conv2d, GroupConv, LiftConv, Module, group_skip,
                     group_upsample, orientation_pool)
from .tensor import DTYPES, Tensor, add, as_tensor, relu

ARCHS = ("ger-unet", "r-unet")
STAGES = 4
BLOCKS_PER_STAGE = 2


@dataclass
class ModelConfig:
    in_channels: int = 1
    num_classes: int = 2
    base_channels: int = 32
    skip_mode: str = "add"
    upsample_mode: str = "nearest"
    seed: int = 0
    dtype: str = "f32"

    def validate(self):
        if self.base_channels < 4:
            raise InvalidArgument("base_channels must be >= 4")
        if self.num_classes < 2:
            raise InvalidArgument("num_classes must be >= 2")
        if self.in_channels < 1:
            raise InvalidArgument("in_channels must be >= 1")
        if self.skip_mode not in ("add", "concat"):
            raise InvalidArgument(f"skip_mode must be add or concat, got {self.skip_mode!r}")
        if self.upsample_mode not in ("nearest", "bilinear"):
            raise InvalidArgument(f"upsample_mode must be nearest or bilinear, got {self.upsample_mode!r}")
        if self.dtype not in DTYPES:
            raise InvalidArgument(f"dtype must be one of {sorted(DTYPES)}")
        return self


def scale_width(channels: int) -> int:
    """Channel count for a group layer standing in for a regular layer of ``channels``."""
    if channels < 1:
        raise InvalidArgument("channels must be >= 1")
    return max(1, round(channels / math.sqrt(8)))


class ResBlock(Module):
    def __init__(self, conv, cin, cout, stride, dtype):
        super().__init__()
        if stride == 1:
            self.conv1 = conv(cin, cout, 3, 1, 1)
        else:
            self.conv1 = conv(cin, cout, 4, 2, 1)
        self.bn1 = BatchNorm(cout, dtype=dtype)
        self.conv2 = conv(cout, cout, 3, 1, 1)
        self.bn2 = BatchNorm(cout, dtype=dtype)
        self.proj = None
        if stride != 1:
            self.proj = conv(cin, cout, 2, 2, 0)
        elif cin != cout:
            self.proj = conv(cin, cout, 1, 1, 0)

    def forward(self, x):
        h = relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        short = self.proj(x) if self.proj is not None else x
        return relu(add(h, short))


class Stage(Module):
    def __init__(self, conv, cin, cout, stride, dtype):
        super().__init__()
        self.block1 = ResBlock(conv, cin, cout, stride, dtype)
        self.block2 = ResBlock(conv, cout, cout, 1, dtype)

    def forward(self, x):
        return self.block2(self.block1(x))


class DecoderStep(Module):
    def __init__(self, conv, cin, cout, skip_mode, upsample_mode, dtype):
        super().__init__()
        self.skip_mode, self.upsample_mode = skip_mode, upsample_mode
        self.reduce = conv(cin, cout, 1, 1, 0)
        fused = cout if skip_mode == "add" else 2 * cout
        self.block = ResBlock(conv, fused, cout, 1, dtype)

    def forward(self, x, skip):
        h = group_upsample(self.reduce(x), 2, self.upsample_mode)
        return self.block(group_skip(h, skip, self.skip_mode))


class Stem(Module):
    def __init__(self, conv, cin, cout, dtype):
        super().__init__()
        self.conv = conv(cin, cout, 3, 1, 1)
        self.bn = BatchNorm(cout, dtype=dtype)

    def forward(self, x):
        return relu(self.bn(self.conv(x)))


class Model(Module):
    """Image B x C x H x W -> logits B x num_classes x H x W."""

    def __init__(self, arch: str, cfg: ModelConfig):
        super().__init__()
        if arch not in ARCHS:
            raise InvalidArgument(f"arch must be one of {ARCHS}, got {arch!r}")
        cfg.validate()
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "cfg", cfg)
        dtype = DTYPES[cfg.dtype]
        rng = np.random.default_rng(cfg.seed)
        grouped = arch == "ger-unet"
        layer = GroupConv if grouped else Conv2d

        def conv(cin, cout, k, stride, padding, bias=False):
            return layer(cin, cout, k, stride, padding, bias=bias, rng=rng, dtype=dtype)

        w = scale_width(cfg.base_channels) if grouped else cfg.base_channels
        widths = [w * 2 ** s for s in range(STAGES)]
        object.__setattr__(self, "widths", widths)

        if grouped:
            self.stem = Stem(lambda ci, co, k, s, p: LiftConv(ci, co, k, s, p, rng=rng, dtype=dtype),
                             cfg.in_channels, w, dtype)
        else:
            self.stem = Stem(conv, cfg.in_channels, w, dtype)
        cin = w
        for s, width in enumerate(widths):
            setattr(self, f"enc{s + 1}", Stage(conv, cin, width, 1 if s == 0 else 2, dtype))
            cin = width
        for s in reversed(range(STAGES - 1)):
            setattr(self, f"dec{s + 1}", DecoderStep(conv, widths[s + 1], widths[s],
                                                     cfg.skip_mode, cfg.upsample_mode, dtype))
        self.head = conv(widths[0], cfg.num_classes, 1, 1, 0, bias=True)

    @property
    def grouped(self) -> bool:
        return self.arch == "ger-unet"

    def forward(self, x, trace: list | None = None) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4:
            raise InvalidArgument(f"expected B x C x H x W input, got {x.shape}")
        H, W = x.shape[-2:]
        if H % 8 or W % 8:
            raise InvalidArgument(f"input size {H}x{W} must be divisible by 8")

        def log(name, t):
            if trace is not None:
                trace.append((name, t))
            return t

        h = log("stem", self.stem(x))
        skips = []
        for s in range(STAGES):
            h = log(f"enc{s + 1}", getattr(self, f"enc{s + 1}")(h))
            skips.append(h)
        for s in reversed(range(STAGES - 1)):
            h = log(f"dec{s + 1}", getattr(self, f"dec{s + 1}")(h, skips[s]))
        h = log("head", self.head(h))
        if self.grouped:
            h = log("pool", orientation_pool(h))
        return h

    def predict(self, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
        """Argmax class map for a stack of images (N x C x H x W), eval mode."""
        was = self.training
        self.eval()
        dtype = self.parameters()[0].dtype
        out = []
        for i in range(0, len(images), batch_size):
            logits = self.forward(Tensor(np.asarray(images[i:i + batch_size], dtype=dtype)))
            out.append(np.argmax(logits.data, axis=1))
        self.train(was)
        return np.concatenate(out) if out else np.zeros((0,) + images.shape[2:], np.int64)

    def state(self) -> dict[str, np.ndarray]:
        d = {f"param:{n}": p.data for n, p in self.named_parameters()}
        d.update({f"buffer:{n}": b for n, b in self.named_buffers()})
        return d


def build_ger_unet(cfg: ModelConfig) -> Model:
    return Model("ger-unet", cfg)


def build_regular_runet(cfg: ModelConfig) -> Model:
    return Model("r-unet", cfg)


def build_model(arch: str, cfg: ModelConfig) -> Model:
    return Model(arch, cfg)


def count_parameters(m: Module) -> tuple[int, list[tuple[str, int]]]:
    """Stored parameter count (derived kernel copies excluded) and a per-layer table."""
    table = []
    for name, mod in m.named_modules():
        n = sum(p.data.size for p in mod._params.values())
        if n:
            table.append((name, n))
    return sum(n for _, n in table), table


def config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
