"""Convolution, transposed convolution and batch normalization on NCHW tensors.

Both convolutions lower to a single matrix product through an im2col view;
the transposed convolution is implemented as the exact adjoint of
:func:`conv2d`, so each operation's input gradient is the other operation's
forward pass.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigError, ShapeError
from .tensor import make_node


def _pair(v):
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass(frozen=True)
class ConvSpec:
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)

    def __post_init__(self):
        stride, padding = _pair(self.stride), _pair(self.padding)
        if min(stride) < 1:
            raise ConfigError(f"stride must be positive, got {stride}")
        if min(padding) < 0:
            raise ConfigError(f"padding must be non-negative, got {padding}")
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "padding", padding)

    def output_extent(self, size, kernel):
        """Spatial output size of :func:`conv2d` for input ``size`` (h, w)."""
        out = tuple((n + 2 * p - k) // s + 1 for n, k, s, p in zip(size, kernel, self.stride, self.padding))
        if min(out) < 1:
            raise ConfigError(
                f"input extent {tuple(size)} with kernel {tuple(kernel)}, stride {self.stride}, "
                f"padding {self.padding} gives empty output {out}"
            )
        return out

    def transpose_extent(self, size, kernel):
        """Spatial output size of :func:`conv_transpose2d`."""
        out = tuple((n - 1) * s - 2 * p + k for n, k, s, p in zip(size, kernel, self.stride, self.padding))
        if min(out) < 1:
            raise ConfigError(f"transposed convolution of extent {tuple(size)} gives empty output {out}")
        return out


def _im2col(xp, kh, kw, sh, sw, oh, ow):
    """Receptive-field rows (N*oh*ow, kh*kw*C) from a padded channels-last array."""
    n, _, _, c = xp.shape
    s0, s1, s2, s3 = xp.strides
    view = as_strided(xp, (n, oh, ow, kh, kw, c), (s0, s1 * sh, s2 * sw, s1, s2, s3), writeable=False)
    return view.reshape(n * oh * ow, kh * kw * c)


def _col2im(cols, shape, kh, kw, sh, sw, oh, ow):
    """Scatter-add im2col rows back into a padded channels-last array of ``shape``."""
    n, _, _, c = shape
    out = np.zeros(shape, dtype=cols.dtype)
    cols = cols.reshape(n, oh, ow, kh, kw, c)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] += cols[:, :, :, i, j, :]
    return out


def _to_nhwc(x, ph, pw):
    x = x.transpose(0, 2, 3, 1)
    if ph or pw:
        return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    return np.ascontiguousarray(x)


def _to_nchw(x, ph, pw):
    h, w = x.shape[1:3]
    return np.ascontiguousarray(x[:, ph:h - ph, pw:w - pw, :].transpose(0, 3, 1, 2))


def _check_rank4(t, what):
    if t.data.ndim != 4:
        raise ShapeError(f"{what} must be rank 4 (N, C, H, W), got shape {t.shape}")


def _check_bias(bias, channels, what):
    if bias is not None and bias.shape != (channels,):
        raise ShapeError(f"{what} bias shape {bias.shape} does not match {channels} output channels")


def conv2d(x, kernel, bias=None, spec=ConvSpec()):
    """Cross-correlation of ``x`` (N, C, H, W) with ``kernel`` (O, C, kh, kw)."""
    _check_rank4(x, "conv2d input")
    _check_rank4(kernel, "conv2d kernel")
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    if c != ic:
        raise ShapeError(f"conv2d: input shape {x.shape} has {c} channels but kernel shape {kernel.shape} expects {ic}")
    _check_bias(bias, oc, "conv2d")
    oh, ow = spec.output_extent((h, w), (kh, kw))
    (sh, sw), (ph, pw) = spec.stride, spec.padding

    xp = _to_nhwc(x.data, ph, pw)
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
    wmat = kernel.data.transpose(0, 2, 3, 1).reshape(oc, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = _to_nchw(out.reshape(n, oh, ow, oc), 0, 0)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def grad_fn(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, oc)
        gx = gk = gb = None
        if x.requires_grad:
            gx = _to_nchw(_col2im(gmat @ wmat, xp.shape, kh, kw, sh, sw, oh, ow), ph, pw)
        if kernel.requires_grad:
            gk = np.ascontiguousarray((gmat.T @ cols).reshape(oc, kh, kw, ic).transpose(0, 3, 1, 2))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    return make_node(out, parents, grad_fn, "conv2d")


def conv_transpose2d(x, kernel, bias=None, spec=ConvSpec()):
    """Adjoint of :func:`conv2d`: ``x`` (N, Ci, H, W), ``kernel`` (Ci, Co, kh, kw).

    The kernel layout is that of the forward convolution mapping Co channels
    to Ci channels, so ``<conv2d(u, k), v> == <u, conv_transpose2d(v, k)>``.
    """
    _check_rank4(x, "conv_transpose2d input")
    _check_rank4(kernel, "conv_transpose2d kernel")
    n, c, h, w = x.shape
    ic, oc, kh, kw = kernel.shape
    if c != ic:
        raise ShapeError(
            f"conv_transpose2d: input shape {x.shape} has {c} channels but kernel shape {kernel.shape} expects {ic}"
        )
    _check_bias(bias, oc, "conv_transpose2d")
    ho, wo = spec.transpose_extent((h, w), (kh, kw))
    (sh, sw), (ph, pw) = spec.stride, spec.padding
    padded_shape = (n, ho + 2 * ph, wo + 2 * pw, oc)

    xmat = x.data.transpose(0, 2, 3, 1).reshape(-1, ic)
    kmat = kernel.data.transpose(0, 2, 3, 1).reshape(ic, -1)
    out = _to_nchw(_col2im(xmat @ kmat, padded_shape, kh, kw, sh, sw, h, w), ph, pw)
    if bias is not None:
        out += bias.data.reshape(1, oc, 1, 1)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def grad_fn(g):
        gcols = _im2col(_to_nhwc(g, ph, pw), kh, kw, sh, sw, h, w)
        gx = gk = gb = None
        if x.requires_grad:
            gx = _to_nchw((gcols @ kmat.T).reshape(n, h, w, ic), 0, 0)
        if kernel.requires_grad:
            gk = np.ascontiguousarray((xmat.T @ gcols).reshape(ic, kh, kw, oc).transpose(0, 3, 1, 2))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    return make_node(out, parents, grad_fn, "conv_transpose2d")


class BatchNormState:
    """Running per-channel statistics for one batch-norm layer."""

    def __init__(self, channels, momentum=0.1, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum

    def update(self, mean, var_unbiased):
        m = self.momentum
        self.running_mean[...] = (1 - m) * self.running_mean + m * mean
        self.running_var[...] = (1 - m) * self.running_var + m * var_unbiased


def batch_norm2d(x, gamma, beta, state, mode="train", eps=1e-5):
    """Per-channel normalization over (N, H, W).

    Train mode normalizes with batch statistics and folds them into ``state``
    (the running variance uses the unbiased estimate); eval mode uses the
    running statistics.
    """
    _check_rank4(x, "batch_norm2d input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d: gamma {gamma.shape} / beta {beta.shape} do not match {c} channels")
    if eps <= 0:
        raise ConfigError("batch_norm2d eps must be positive")
    if mode not in ("train", "eval"):
        raise ConfigError(f"batch_norm2d mode must be 'train' or 'eval', got {mode!r}")

    data = x.data
    count = data.size // c
    if mode == "train":
        mu = data.mean(axis=(0, 2, 3))
        centered = data - mu.reshape(1, c, 1, 1)
        var = (centered * centered).mean(axis=(0, 2, 3))
        if state is not None:
            state.update(mu, var * count / max(count - 1, 1))
    else:
        mu, var = state.running_mean, state.running_var
        centered = data - mu.reshape(1, c, 1, 1)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv_std.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def grad_fn(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(1, c, 1, 1)
            if mode == "train":
                s1 = gxhat.mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                s2 = (gxhat * xhat).mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                gx = (gxhat - s1 - xhat * s2) * inv_std.reshape(1, c, 1, 1)
            else:
                gx = gxhat * inv_std.reshape(1, c, 1, 1)
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), grad_fn, "batch_norm2d")
