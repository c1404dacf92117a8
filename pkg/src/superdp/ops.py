"""Differentiable primitives with explicit forward/backward passes.

Tensors are float64 ``numpy.ndarray`` objects. Image ops take batched input
``(B, C, H, W)``; a single ``(C, H, W)`` sample is accepted and returned
without the batch axis. Every ``*_forward`` returns ``(out, ctx)`` and the
matching ``*_backward`` consumes the context exactly once.

Parameter gradients can be kept per sample (``per_sample=True``), giving a
leading batch axis instead of a sum over the batch. DP-SGD clipping needs
that form.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, InputError, UsageError


@dataclass
class OpContext:
    """Saved state from a forward pass, valid for a single backward."""

    op: str
    saved: dict = field(default_factory=dict)
    used: bool = False

    def consume(self):
        if self.used:
            raise UsageError(f"{self.op}: backward already called for this forward pass")
        self.used = True
        return self.saved


def _f64(x):
    return np.asarray(x, dtype=np.float64)


def matmul(a, b):
    a, b = _f64(a), _f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def conv_output_size(size, k, stride, pad):
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise ConfigError(
            f"non-integral conv output: size={size} kernel={k} stride={stride} padding={pad}")
    return span // stride + 1


def conv2d_forward(x, kernels_, bias, stride=1, padding=0):
    x = _f64(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects (B, C, H, W) input, got {x.shape}")
    w = _f64(kernels_)
    bias = _f64(bias)
    c_out, c_in, kh, kw = w.shape
    b, c, h, wd = x.shape
    if c != c_in:
        raise DimensionError(f"input has {c} channels, kernels expect {c_in}")
    if bias.shape != (c_out,):
        raise DimensionError(f"bias shape {bias.shape} != ({c_out},)")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(wd, kw, stride, padding)
    cols = kernels.im2col(x, kh, kw, stride, padding)  # (B, C*kh*kw, OH*OW)
    wmat = w.reshape(c_out, -1)
    out = np.matmul(wmat, cols) + bias[:, None]
    out = out.reshape(b, c_out, oh, ow)
    ctx = OpContext("conv2d", {"cols": cols, "w": w, "x_shape": x.shape,
                               "stride": stride, "padding": padding, "single": single})
    return (out[0] if single else out), ctx


def conv2d_backward(ctx, grad_out, per_sample=False, need_input_grad=True):
    s = ctx.consume()
    w = s["w"]
    c_out, c_in, kh, kw = w.shape
    g = _f64(grad_out)
    if s["single"]:
        g = g[None]
    b = g.shape[0]
    g = g.reshape(b, c_out, -1)  # (B, O, P)
    cols = s["cols"]
    gw = np.matmul(g, cols.transpose(0, 2, 1))  # (B, O, C*kh*kw)
    gb = g.sum(axis=2)
    if per_sample:
        gw = gw.reshape(b, c_out, c_in, kh, kw)
    else:
        gw = gw.sum(axis=0).reshape(w.shape)
        gb = gb.sum(axis=0)
    gx = None
    if need_input_grad:
        gcols = np.matmul(w.reshape(c_out, -1).T, g)  # (B, C*kh*kw, P)
        gx = kernels.col2im(gcols, s["x_shape"], kh, kw, s["stride"], s["padding"])
        if s["single"]:
            gx = gx[0]
    if s["single"] and per_sample:
        gw, gb = gw[0], gb[0]
    return gx, gw, gb


def dense_forward(x, w, b):
    """``x @ w.T + b`` with ``w`` shaped (out, in)."""
    x = _f64(x)
    single = x.ndim == 1
    if single:
        x = x[None]
    w, b = _f64(w), _f64(b)
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"dense input width {x.shape[1]} != {w.shape[1]}")
    out = x @ w.T + b
    ctx = OpContext("dense", {"x": x, "w": w, "single": single})
    return (out[0] if single else out), ctx


def dense_backward(ctx, grad_out, per_sample=False, need_input_grad=True):
    s = ctx.consume()
    x, w = s["x"], s["w"]
    g = _f64(grad_out)
    if s["single"]:
        g = g[None]
    if per_sample:
        gw = g[:, :, None] * x[:, None, :]
        gb = g.copy()
        if s["single"]:
            gw, gb = gw[0], gb[0]
    else:
        gw = g.T @ x
        gb = g.sum(axis=0)
    gx = None
    if need_input_grad:
        gx = g @ w
        if s["single"]:
            gx = gx[0]
    return gx, gw, gb


def relu_forward(x):
    x = _f64(x)
    mask = x > 0
    return np.where(mask, x, 0.0), OpContext("relu", {"mask": mask})


def relu_backward(ctx, grad_out):
    return np.where(ctx.consume()["mask"], _f64(grad_out), 0.0)


def maxpool2x2_forward(x):
    x = _f64(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise DimensionError(f"maxpool2x2 needs spatial size >= 2, got {x.shape[2:]}")
    out, idx = kernels.maxpool2x2_forward(x)
    ctx = OpContext("maxpool2x2", {"idx": idx, "x_shape": x.shape, "single": single})
    return (out[0] if single else out), ctx


def maxpool2x2_backward(ctx, grad_out):
    s = ctx.consume()
    g = _f64(grad_out)
    if s["single"]:
        g = g[None]
    gx = kernels.maxpool2x2_backward(g, s["idx"], s["x_shape"])
    return gx[0] if s["single"] else gx


def check_dropout_rate(p):
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {p}")


def dropout_mask(shape, p, rng):
    """Keep-mask for inverted dropout; ``p == 0`` keeps everything without drawing."""
    check_dropout_rate(p)
    if p == 0.0:
        return np.ones(shape, dtype=bool)
    return rng.random(shape) >= p


def dropout_forward(x, p, rng=None, train=True, mask=None, channelwise=False):
    """Inverted dropout. Pass ``mask`` to replay a previously drawn mask.

    With ``channelwise`` on (B, C, H, W) input, whole feature maps are kept
    or dropped together; the drawn mask is shaped (B, C, 1, 1). Replayed
    masks only need to broadcast against ``x``.
    """
    check_dropout_rate(p)
    x = _f64(x)
    if not train or p == 0.0:
        return x, OpContext("dropout", {"scale": None})
    if mask is None:
        if rng is None:
            raise UsageError("dropout in train mode needs an rng or an explicit mask")
        shape = x.shape
        if channelwise:
            if x.ndim != 4:
                raise DimensionError(f"channel-wise dropout needs (B, C, H, W) input, got {x.shape}")
            shape = x.shape[:2] + (1, 1)
        mask = dropout_mask(shape, p, rng)
    scale = np.where(mask, 1.0 / (1.0 - p), 0.0)
    return x * scale, OpContext("dropout", {"scale": scale})


def dropout_backward(ctx, grad_out):
    scale = ctx.consume()["scale"]
    g = _f64(grad_out)
    return g if scale is None else g * scale


def softmax_cross_entropy(logits, label):
    """Loss and logit gradient for one sample or a batch.

    Batched input ``(B, K)`` with ``B`` labels returns per-sample losses
    ``(B,)`` and per-sample gradients ``(B, K)``.
    """
    z = _f64(logits)
    labels = np.asarray(label)
    single = z.ndim == 1
    if single:
        z = z[None]
        labels = labels.reshape(1)
    k = z.shape[1]
    if labels.shape != (z.shape[0],):
        raise InputError(f"{z.shape[0]} logit rows but labels shaped {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"label out of range for {k} classes")
    labels = labels.astype(np.intp)
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - lse[:, None]
    rows = np.arange(z.shape[0])
    loss = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return loss, grad
