"""Wrap-around Hankel lifting and multi-channel periodic convolution.

The lifted matrix of a ``P``-coil k-space grid has one row per cyclic shift
``(y, x)`` of the grid (raster order) and ``P`` side-by-side column blocks;
block ``c`` holds the ``dy x dx`` patch of coil ``c`` starting at the shift,
read with periodic wrap, in raster order. With this layout

    mimo_conv(Z, psi) == lift(Z) @ psi.reshape(P * dy * dx, Q)

for a filter bank ``psi`` of shape ``(P, dy, dx, Q)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .phantom import KSpaceStack

__all__ = [
    "HankelConfig",
    "LiftedMatrix",
    "hankel_1d",
    "lift",
    "unlift",
    "lift_array",
    "unlift_array",
    "lift_adjoint",
    "circ_conv",
    "periodic_flip",
    "mimo_conv",
    "mimo_conv2",
]


@dataclass(frozen=True)
class HankelConfig:
    d: tuple  # (dy, dx) pencil sizes in array order
    p: int = 1

    def __post_init__(self):
        dy, dx = self.d
        if dy < 1 or dx < 1 or self.p < 1:
            raise InvalidArgument(f"invalid Hankel config d={self.d}, p={self.p}")

    @property
    def area(self):
        return self.d[0] * self.d[1]

    def validate(self, shape):
        ny, nx = shape
        dy, dx = self.d
        if dy > ny or dx > nx:
            raise InvalidArgument(f"pencil {self.d} larger than grid {shape}")


@dataclass
class LiftedMatrix:
    entries: np.ndarray  # (ny*nx, P*dy*dx)
    config: HankelConfig
    shape: tuple  # (ny, nx)
    frame_index: int = 0


def hankel_1d(f, d):
    """Wrap-around Hankel matrix: row ``n`` is ``f[n], f[n+1], ..., f[n+d-1]`` (mod N)."""
    f = np.asarray(f)
    n = f.shape[-1]
    if not 1 <= d <= n:
        raise InvalidArgument(f"pencil size {d} outside 1..{n}")
    idx = (np.arange(n)[:, None] + np.arange(d)[None, :]) % n
    return f[..., idx]


def _patch_index(shape, d):
    # flat source index of every (row, patch element) pair
    ny, nx = shape
    dy, dx = d
    y = np.arange(ny)[:, None, None, None]
    x = np.arange(nx)[None, :, None, None]
    a = np.arange(dy)[None, None, :, None]
    b = np.arange(dx)[None, None, None, :]
    flat = ((y + a) % ny) * nx + (x + b) % nx
    return flat.reshape(ny * nx, dy * dx)


def lift_array(data, d):
    """Lift a ``(P, ny, nx)`` array into its ``(ny*nx, P*dy*dx)`` extended Hankel matrix."""
    data = np.asarray(data)
    p, ny, nx = data.shape
    idx = _patch_index((ny, nx), d)
    m = data.reshape(p, ny * nx)[:, idx]  # (P, rows, dy*dx)
    return m.transpose(1, 0, 2).reshape(ny * nx, p * idx.shape[1])


def lift_adjoint(m, d, shape, p):
    """Adjoint of :func:`lift_array`: scatter-add every lifted copy back to its source."""
    ny, nx = shape
    idx = _patch_index(shape, d)
    k = idx.shape[1]
    blocks = np.asarray(m).reshape(ny * nx, p, k).transpose(1, 0, 2)
    flat = idx.ravel()
    out = np.zeros((p, ny * nx), dtype=complex if np.iscomplexobj(m) else float)
    for c in range(p):
        vals = blocks[c].ravel()
        if np.iscomplexobj(vals):
            out[c] = (np.bincount(flat, vals.real, ny * nx)
                      + 1j * np.bincount(flat, vals.imag, ny * nx))
        else:
            out[c] = np.bincount(flat, vals, ny * nx)
    return out.reshape(p, ny, nx)


def unlift_array(m, d, shape, p):
    """Average all lifted copies of each entry (left inverse of :func:`lift_array`)."""
    return lift_adjoint(m, d, shape, p) / (d[0] * d[1])


def lift(ks, cfg):
    data = ks.data if isinstance(ks, KSpaceStack) else np.asarray(ks)
    if data.shape[0] != cfg.p:
        raise InvalidArgument(f"config expects {cfg.p} coils, data has {data.shape[0]}")
    cfg.validate(data.shape[1:])
    frame = ks.frame_index if isinstance(ks, KSpaceStack) else 0
    return LiftedMatrix(lift_array(data, cfg.d), cfg, tuple(data.shape[1:]), frame)


def unlift(m):
    ny, nx = m.shape
    expected = (ny * nx, m.config.p * m.config.area)
    if m.entries.shape != expected:
        raise InvalidArgument(f"lifted matrix shape {m.entries.shape}, expected {expected}")
    data = unlift_array(m.entries, m.config.d, m.shape, m.config.p)
    return KSpaceStack(data, frame_index=m.frame_index)


def circ_conv(f, h):
    """Periodic convolution ``y[n] = sum_j f[n - j] h[j]`` of a signal with a shorter filter."""
    f = np.asarray(f)
    h = np.asarray(h)
    n = f.shape[-1]
    if h.shape[-1] > n:
        raise InvalidArgument("filter longer than signal")
    y = np.zeros(np.broadcast_shapes(f.shape[:-1], h.shape[:-1]) + (n,),
                 dtype=np.result_type(f, h))
    for j in range(h.shape[-1]):
        y = y + h[..., j, None] * np.roll(f, j, axis=-1)
    return y


def periodic_flip(h, n):
    """Length-``n`` filter ``g`` with ``g[-j mod n] = h[j]`` (the flipped filter)."""
    h = np.asarray(h)
    g = np.zeros(h.shape[:-1] + (n,), dtype=h.dtype)
    g[..., (-np.arange(h.shape[-1])) % n] = h
    return g


def mimo_conv(z, psi):
    """1-D multi-channel periodic correlation.

    ``z`` has shape ``(P, N)`` and ``psi`` shape ``(P, d, Q)``; output channel
    ``q`` is ``sum_p sum_j z[p, n + j] psi[p, j, q]``, i.e. each input channel
    convolved with the flipped filter, summed over inputs.
    """
    z = np.asarray(z)
    psi = np.asarray(psi)
    if psi.shape[0] != z.shape[0]:
        raise InvalidArgument(f"filter bank expects {psi.shape[0]} channels, input has {z.shape[0]}")
    if psi.shape[1] > z.shape[1]:
        raise InvalidArgument("filter longer than signal")
    y = np.zeros((psi.shape[2], z.shape[1]), dtype=np.result_type(z, psi))
    for j in range(psi.shape[1]):
        y += psi[:, j, :].T @ np.roll(z, -j, axis=1)
    return y


def mimo_conv2(z, psi):
    """2-D version of :func:`mimo_conv`; ``z`` is ``(P, ny, nx)``, ``psi`` is ``(P, dy, dx, Q)``."""
    z = np.asarray(z)
    psi = np.asarray(psi)
    p, ny, nx = z.shape
    if psi.shape[0] != p:
        raise InvalidArgument(f"filter bank expects {psi.shape[0]} channels, input has {p}")
    _, dy, dx, q = psi.shape
    if dy > ny or dx > nx:
        raise InvalidArgument("filter larger than grid")
    y = np.zeros((q, ny, nx), dtype=np.result_type(z, psi))
    for a in range(dy):
        for b in range(dx):
            shifted = np.roll(z, (-a, -b), axis=(1, 2))
            y += np.tensordot(psi[:, a, b, :], shifted, axes=(0, 0))
    return y
