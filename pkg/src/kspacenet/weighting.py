"""Finite-difference spectral weight and its inverse with measured-data fallback."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .phantom import ImageGrid, KSpaceStack

__all__ = ["WeightMap", "weight_map", "apply_weight", "remove_weight", "EPS"]

EPS = 1e-8


@dataclass
class WeightMap:
    values: np.ndarray  # (ny, nx), real in [0, 1]
    mode: str = "radial"

    @property
    def shape(self):
        return self.values.shape


def weight_map(grid, mode="radial"):
    """``sin(pi * |k|)`` on normalized frequencies, clamped at ``|k| = 1/2``.

    ``mode="radial"`` uses the Euclidean norm of ``(kx, ky)``;
    ``mode="per-axis"`` uses ``sin(pi |kx|) * sin(pi |ky|)``.
    """
    if not isinstance(grid, ImageGrid):
        ny, nx = grid
        grid = ImageGrid(nx=nx, ny=ny)
    ky, kx = grid.kcoords()
    if mode == "radial":
        values = np.sin(np.pi * np.minimum(np.hypot(kx, ky), 0.5))
    elif mode == "per-axis":
        values = np.sin(np.pi * np.abs(kx)) * np.sin(np.pi * np.abs(ky))
    else:
        raise InvalidArgument(f"unknown weighting mode {mode!r}")
    return WeightMap(values=values, mode=mode)


def _check(ks, w):
    if ks.shape != w.shape:
        raise InvalidArgument(f"k-space grid {ks.shape} does not match weight {w.shape}")


def apply_weight(ks, w):
    _check(ks, w)
    return KSpaceStack(ks.data * w.values[None], frame_index=ks.frame_index)


def remove_weight(ks_w, w, measured, m, eps=EPS):
    """Undo the weighting, then overwrite measured entries with the measurements.

    Entries whose weight is below ``eps`` cannot be divided; they take the
    measured value when sampled and 0 otherwise.
    """
    _check(ks_w, w)
    _check(measured, w)
    if m.shape != w.shape:
        raise InvalidArgument(f"mask grid {m.shape} does not match weight {w.shape}")
    return KSpaceStack(unweight_array(ks_w.data, w.values, measured.data, m.keep, eps),
                       frame_index=ks_w.frame_index)


def unweight_array(z, w, measured, keep, eps=EPS, consistency=True):
    """Array form of :func:`remove_weight`; broadcasts over leading axes."""
    safe = w >= eps
    out = np.where(safe, z / np.where(safe, w, 1.0), 0)
    out = np.where(~safe & keep, measured, out)
    if consistency:
        out = np.where(keep, measured, out)
    return out
