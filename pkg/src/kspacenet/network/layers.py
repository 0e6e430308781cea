"""Layer primitives with hand-written backward passes.

Internal activations are channels-last ``(N, H, W, C)`` so every kernel tap is
one matrix product over channels. The public :class:`Tensor4` helpers use
the ``NCHW`` layout.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgument
from ..phantom import KSpaceStack

__all__ = [
    "Tensor4", "complex_split", "complex_merge", "haar_decompose", "haar_recompose",
    "conv_forward", "conv_backward", "bn_forward", "bn_backward", "relu_forward",
    "relu_backward", "split_nhwc", "merge_nhwc",
]


@dataclass
class Tensor4:
    data: np.ndarray
    axes: str = "NCHW"

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 4 or sorted(self.axes) != sorted("NCHW"):
            raise InvalidArgument(f"need a 4-D tensor with axes NCHW, got {self.data.shape} {self.axes}")

    def to(self, axes):
        perm = [self.axes.index(a) for a in axes]
        return Tensor4(self.data.transpose(perm), axes)

    @property
    def shape(self):
        return dict(zip(self.axes, self.data.shape))


def complex_split(ks, dtype=np.float64):
    """``(P, ny, nx)`` complex k-space (or a batch ``(N, P, ny, nx)``) to ``2P`` real channels.

    Channels ``2i`` and ``2i + 1`` hold the real and imaginary parts of coil ``i``.
    """
    data = ks.data if isinstance(ks, KSpaceStack) else np.asarray(ks)
    if data.ndim == 3:
        data = data[None]
    n, p, ny, nx = data.shape
    out = np.empty((n, 2 * p, ny, nx), dtype=dtype)
    out[:, 0::2] = data.real
    out[:, 1::2] = data.imag
    return Tensor4(out, "NCHW")


def complex_merge(t):
    """Inverse of :func:`complex_split`; returns a ``(N, P, ny, nx)`` complex array."""
    t = t.to("NCHW") if isinstance(t, Tensor4) else Tensor4(t)
    if t.data.shape[1] % 2:
        raise InvalidArgument(f"channel count {t.data.shape[1]} is odd")
    return t.data[:, 0::2] + 1j * t.data[:, 1::2]


def split_nhwc(z, dtype):
    """Complex ``(N, P, H, W)`` to real channels-last ``(N, H, W, 2P)``."""
    n, p, h, w = z.shape
    out = np.empty((n, h, w, 2 * p), dtype=dtype)
    zt = z.transpose(0, 2, 3, 1)
    out[..., 0::2] = zt.real
    out[..., 1::2] = zt.imag
    return out


def merge_nhwc(t):
    return (t[..., 0::2] + 1j * t[..., 1::2]).transpose(0, 3, 1, 2)


def _haar_axes(t, axes):
    if isinstance(t, Tensor4):
        t4 = t.to("NCHW")
        return t4.data, (2, 3), True
    return np.asarray(t), axes, False


def _blocks(x, ay, ax):
    def sl(axis, start):
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, None, 2)
        return tuple(idx)
    a = x[sl(ay, 0)][sl(ax, 0)]
    b = x[sl(ay, 0)][sl(ax, 1)]
    c = x[sl(ay, 1)][sl(ax, 0)]
    d = x[sl(ay, 1)][sl(ax, 1)]
    return a, b, c, d


def haar_decompose(t, axes=(1, 2)):
    """Orthonormal 2-D Haar analysis on non-overlapping 2x2 blocks.

    Accepts a :class:`Tensor4` (spatial axes ``H, W``) or an array with
    spatial ``axes`` (default channels-last). Returns ``(LL, LH, HL, HH)``; a
    constant input ``c`` gives ``LL = 2c`` and vanishing detail bands.
    """
    x, (ay, ax), wrap = _haar_axes(t, axes)
    if x.shape[ay] % 2 or x.shape[ax] % 2:
        raise InvalidArgument(f"Haar needs even spatial sizes, got {x.shape}")
    a, b, c, d = _blocks(x, ay, ax)
    ll = (a + b + c + d) * 0.5
    lh = (a - b + c - d) * 0.5
    hl = (a + b - c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    if wrap:
        return tuple(Tensor4(v, "NCHW") for v in (ll, lh, hl, hh))
    return ll, lh, hl, hh


def haar_recompose(ll, lh, hl, hh, axes=(1, 2)):
    """Inverse (and adjoint) of :func:`haar_decompose`."""
    wrap = isinstance(ll, Tensor4)
    if wrap:
        ll, lh, hl, hh = (v.to("NCHW").data for v in (ll, lh, hl, hh))
        axes = (2, 3)
    ll, lh, hl, hh = (np.asarray(v) for v in (ll, lh, hl, hh))
    if not ll.shape == lh.shape == hl.shape == hh.shape:
        raise InvalidArgument("Haar bands must share one shape")
    ay, ax = axes
    shape = list(ll.shape)
    shape[ay] *= 2
    shape[ax] *= 2
    out = np.empty(shape, dtype=np.result_type(ll, lh, hl, hh))

    def sl(sy, sx):
        idx = [slice(None)] * out.ndim
        idx[ay] = slice(sy, None, 2)
        idx[ax] = slice(sx, None, 2)
        return tuple(idx)
    out[sl(0, 0)] = (ll + lh + hl + hh) * 0.5
    out[sl(0, 1)] = (ll - lh + hl - hh) * 0.5
    out[sl(1, 0)] = (ll + lh - hl - hh) * 0.5
    out[sl(1, 1)] = (ll - lh - hl + hh) * 0.5
    return Tensor4(out, "NCHW") if wrap else out


def _pad(x, r, mode):
    if r == 0:
        return x
    return np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)), mode="wrap" if mode == "periodic" else "constant")


def _unpad(g, r, mode):
    if r == 0:
        return g
    if mode == "periodic":
        g = g.copy()
        g[:, -2 * r:-r] += g[:, :r]
        g[:, r:2 * r] += g[:, -r:]
        g[:, :, -2 * r:-r] += g[:, :, :r]
        g[:, :, r:2 * r] += g[:, :, -r:]
    return g[:, r:-r, r:-r]


def conv_forward(x, w, b=None, padding="zero"):
    """Stride-1 'same' convolution (cross-correlation), channels-last.

    ``x`` is ``(N, H, W, Cin)``, ``w`` is ``(k, k, Cin, Cout)``.
    """
    n, h, wd, cin = x.shape
    k = w.shape[0]
    r = k // 2
    if w.shape[2] != cin:
        raise InvalidArgument(f"conv expects {w.shape[2]} input channels, got {cin}")
    if k == 1:
        out = x.reshape(-1, cin) @ w[0, 0]
    else:
        xp = _pad(x, r, padding)
        out = np.zeros((n * h * wd, w.shape[3]), dtype=np.result_type(x, w))
        for dy in range(k):
            for dx in range(k):
                out += xp[:, dy:dy + h, dx:dx + wd, :].reshape(-1, cin) @ w[dy, dx]
    if b is not None:
        out += b
    return out.reshape(n, h, wd, w.shape[3])


def conv_backward(g, x, w, padding="zero", need_dx=True):
    """Gradients ``(dx, dw, db)`` of :func:`conv_forward` given upstream ``g``."""
    n, h, wd, cin = x.shape
    k = w.shape[0]
    r = k // 2
    cout = w.shape[3]
    g2 = g.reshape(-1, cout)
    db = g2.sum(axis=0)
    dw = np.empty_like(w)
    if k == 1:
        dw[0, 0] = x.reshape(-1, cin).T @ g2
        dx = (g2 @ w[0, 0].T).reshape(x.shape) if need_dx else None
        return dx, dw, db
    xp = _pad(x, r, padding)
    dxp = np.zeros(xp.shape, dtype=np.result_type(g, w)) if need_dx else None
    for dy in range(k):
        for dx in range(k):
            patch = xp[:, dy:dy + h, dx:dx + wd, :].reshape(-1, cin)
            dw[dy, dx] = patch.T @ g2
            if need_dx:
                dxp[:, dy:dy + h, dx:dx + wd, :] += (g2 @ w[dy, dx].T).reshape(n, h, wd, cin)
    return (_unpad(dxp, r, padding) if need_dx else None), dw, db


def bn_forward(x, gamma, beta, state, training, eps=1e-5, momentum=0.1):
    """Batch normalization over ``(N, H, W)`` per channel.

    ``state`` holds ``running_mean`` and ``running_var`` and is updated in
    place when ``training``. Returns ``(y, cache)``.
    """
    if training:
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        m = x.shape[0] * x.shape[1] * x.shape[2]
        unbiased = var * (m / max(m - 1, 1))
        state["running_mean"] = ((1 - momentum) * state["running_mean"] + momentum * mean).astype(
            state["running_mean"].dtype)
        state["running_var"] = ((1 - momentum) * state["running_var"] + momentum * unbiased).astype(
            state["running_var"].dtype)
    else:
        mean = state["running_mean"]
        var = state["running_var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return xhat * gamma + beta, (xhat, inv, training)


def bn_backward(g, gamma, cache):
    xhat, inv, training = cache
    dgamma = np.sum(g * xhat, axis=(0, 1, 2))
    dbeta = np.sum(g, axis=(0, 1, 2))
    gx = g * gamma
    if not training:
        return gx * inv, dgamma, dbeta
    mean_g = gx.mean(axis=(0, 1, 2))
    mean_gx = np.mean(gx * xhat, axis=(0, 1, 2))
    dx = (gx - mean_g - xhat * mean_gx) * inv
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(g, y):
    return g * (y > 0)
