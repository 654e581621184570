"""Differentiable image primitives: conv2d, interpolation, batch-norm."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgument, ShapeMismatch
from .tensor import Tensor, as_tensor, record


def conv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (B,C,H,W) with ``w`` (O,C,kh,kw), zero padding.

    im2col + one GEMM; the adjoint scatters columns back in ascending (i, j) order.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-d input and kernel, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if Cw != C:
        raise InvalidArgument(f"conv2d: kernel expects {Cw} input channels, got {C}")
    if stride < 1 or padding < 0:
        raise InvalidArgument(f"bad stride/padding {stride}/{padding}")
    Ho, Wo = conv_out_size(H, kh, stride, padding), conv_out_size(W, kw, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input {H}x{W}")
    if x.dtype != w.dtype:
        raise ShapeMismatch(f"conv2d dtype mismatch {x.dtype} vs {w.dtype}")

    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(C * kh * kw, B * Ho * Wo)
    w2 = w.data.reshape(O, C * kh * kw)
    out = (w2 @ cols).reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)
    inputs = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (O,):
            raise ShapeMismatch(f"bias must have shape ({O},), got {bias.shape}")
        out = out + bias.data[None, :, None, None]
        inputs.append(bias)
    out = np.ascontiguousarray(out)

    def vjp(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, B * Ho * Wo)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(C, kh, kw, B, Ho, Wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += \
                        dcols[:, i, j].transpose(1, 0, 2, 3)
            gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
            gx = np.ascontiguousarray(gx)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if bias.requires_grad else None)
        return grads

    return record("conv2d", out, inputs, vjp)


@lru_cache(maxsize=64)
def interp_matrix(n: int, factor: int, mode: str, dtype_str: str) -> np.ndarray:
    """(factor*n, n) matrix mapping a line of samples to its upsampled version."""
    m = factor * n
    A = np.zeros((m, n), dtype=np.float64)
    if mode == "nearest":
        A[np.arange(m), np.arange(m) // factor] = 1.0
    elif mode == "bilinear":
        # corner aligned: sample i sits at i*(n-1)/(m-1); symmetric under i -> m-1-i
        if n == 1:
            A[:, 0] = 1.0
        else:
            for i in range(m):
                num = i * (n - 1)
                lo, rem = divmod(num, m - 1)
                t = rem / (m - 1)
                A[i, lo] += 1.0 - t
                if rem:
                    A[i, lo + 1] += t
    else:
        raise InvalidArgument(f"unknown upsample mode {mode!r}")
    A = A.astype(dtype_str)
    A.setflags(write=False)
    return A


def upsample2d(x, factor: int = 2, mode: str = "nearest") -> Tensor:
    """Upsample every plane over the last two axes independently."""
    x = as_tensor(x)
    if factor < 2:
        raise InvalidArgument(f"upsample factor must be >= 2, got {factor}")
    H, W = x.shape[-2:]
    Ah = interp_matrix(H, factor, mode, x.dtype.str)
    Aw = interp_matrix(W, factor, mode, x.dtype.str)
    out = Ah @ x.data @ Aw.T
    return record("upsample2d", out, (x,), lambda g: (Ah.T @ g @ Aw,))


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation of ``x`` (B,C,...), statistics pooled over every other axis.

    In training mode the running buffers are updated in place.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    B, C = x.shape[:2]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeMismatch(f"batch_norm params must be ({C},)")
    xr = x.data.reshape(B, C, -1)
    n = B * xr.shape[2]
    dt = x.dtype.type
    if training:
        mu = xr.mean(axis=(0, 2))
        xc = xr - mu[None, :, None]
        var = (xc * xc).mean(axis=(0, 2))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
        xc = xr - mu[None, :, None]
    inv = (1.0 / np.sqrt(var + dt(eps))).astype(x.dtype)
    xhat = xc * inv[None, :, None]
    out = (xhat * gamma.data[None, :, None] + beta.data[None, :, None]).reshape(x.shape)

    def vjp(g):
        gr = g.reshape(B, C, -1)
        gbeta = gr.sum(axis=(0, 2))
        ggamma = (gr * xhat).sum(axis=(0, 2))
        dxhat = gr * gamma.data[None, :, None]
        if training:
            s1 = dxhat.sum(axis=(0, 2))[None, :, None]
            s2 = (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
            gx = (inv[None, :, None] / dt(n)) * (dt(n) * dxhat - s1 - xhat * s2)
        else:
            gx = dxhat * inv[None, :, None]
        return gx.reshape(x.shape).astype(x.dtype), ggamma, gbeta

    return record("batch_norm", out.astype(x.dtype), (x, gamma, beta), vjp)
