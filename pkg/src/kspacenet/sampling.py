"""TWIST-style view-sharing schedules, GRAPPA lattices and the sampling projection."""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidArgument
from .phantom import KSpaceStack, as_shape

__all__ = [
    "SamplingMask",
    "ViewShareSchedule",
    "uniform_lattice_mask",
    "lattice_points",
    "acs_block",
    "central_block",
    "build_twist_schedule",
    "mask_for_frame",
    "window_frames",
    "view_shared_kspace",
    "apply_mask",
]


@dataclass
class SamplingMask:
    keep: np.ndarray  # (ny, nx) bool

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=bool)
        if self.keep.ndim != 2:
            raise InvalidArgument(f"mask must be 2-D, got shape {self.keep.shape}")
        if not self.keep.any():
            raise InvalidArgument("mask keeps no points")

    @property
    def shape(self):
        return self.keep.shape

    @property
    def num_kept(self):
        return int(self.keep.sum())

    @property
    def acceleration(self):
        return Fraction(self.keep.size, self.num_kept)

    def __or__(self, other):
        return SamplingMask(self.keep | other.keep)

    def issubset(self, other):
        return bool(np.all(other.keep[self.keep]))


def lattice_points(shape, rx, ry):
    """Boolean grid of the ``ry x rx`` lattice anchored at the DC sample."""
    ny, nx = shape
    iy = np.arange(ny) - ny // 2
    ix = np.arange(nx) - nx // 2
    return ((iy % ry) == 0)[:, None] & ((ix % rx) == 0)[None, :]


def _centered_box(shape, size):
    ny, nx = shape
    ay, ax = size
    box = np.zeros(shape, dtype=bool)
    if ay > 0 and ax > 0:
        y0 = ny // 2 - ay // 2
        x0 = nx // 2 - ax // 2
        box[y0:y0 + ay, x0:x0 + ax] = True
    return box


def acs_block(shape, acs_size):
    """Centered ``acs_size = (ay, ax)`` box; rows/cols are ``c - a//2 .. c - a//2 + a - 1``."""
    ay, ax = _pair(acs_size)
    ny, nx = shape
    if ay > ny or ax > nx or ay < 0 or ax < 0:
        raise InvalidArgument(f"ACS {ay}x{ax} does not fit in grid {ny}x{nx}")
    return _centered_box(shape, (ay, ax))


def central_block(mask):
    """Largest fully kept box ``(y0, y1, x0, x1)`` (half-open) grown symmetrically from DC."""
    keep = mask.keep if isinstance(mask, SamplingMask) else np.asarray(mask)
    ny, nx = keep.shape
    cy, cx = ny // 2, nx // 2
    if not keep[cy, cx]:
        raise InvalidArgument("DC sample is not measured")
    y0, y1, x0, x1 = cy, cy + 1, cx, cx + 1
    grown = True
    while grown:
        grown = False
        if y0 > 0 and keep[y0 - 1, x0:x1].all():
            y0 -= 1
            grown = True
        if y1 < ny and keep[y1, x0:x1].all():
            y1 += 1
            grown = True
        if x0 > 0 and keep[y0:y1, x0 - 1].all():
            x0 -= 1
            grown = True
        if x1 < nx and keep[y0:y1, x1].all():
            x1 += 1
            grown = True
    return y0, y1, x0, x1


def _pair(v):
    if np.isscalar(v):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def uniform_lattice_mask(grid, rx, ry, acs_size=(0, 0)):
    """GRAPPA lattice (stride ``rx`` along kx, ``ry`` along ky) plus a central ACS box."""
    if rx < 1 or ry < 1:
        raise InvalidArgument(f"lattice strides must be >= 1, got rx={rx}, ry={ry}")
    shape = as_shape(grid)
    return SamplingMask(lattice_points(shape, rx, ry) | acs_block(shape, acs_size))


@dataclass(frozen=True)
class ViewShareSchedule:
    """A/B interleave assignment of a TWIST acquisition.

    ``labels`` holds, per k-space point, the interleave index of a B-region
    lattice point, ``-1`` inside the A block and ``-2`` everywhere else.
    """

    shape: tuple
    num_frames: int
    num_interleaves: int
    rx: int
    ry: int
    a_half_width: tuple
    acs_size: tuple
    labels: np.ndarray

    def interleave_of_frame(self, t):
        return int(t) % self.num_interleaves

    @property
    def a_block(self):
        return self.labels == -1

    @property
    def lattice(self):
        return lattice_points(self.shape, self.rx, self.ry)

    def interleave_mask(self, j):
        return self.labels == j

    def interleave_counts(self):
        return np.bincount(self.labels[self.labels >= 0], minlength=self.num_interleaves)


def build_twist_schedule(grid, num_frames, num_interleaves=5, rx=3, ry=2,
                         a_half_width=(8, 8), acs_size=(16, 16)):
    """Partition the B-region lattice into interleaves by raster round-robin."""
    shape = as_shape(grid)
    ny, nx = shape
    hy, hx = _pair(a_half_width)
    acs = _pair(acs_size)
    if num_interleaves < 2:
        raise InvalidArgument("need at least two interleaves")
    if hy < 0 or hx < 0 or 2 * hy + 1 > ny or 2 * hx + 1 > nx:
        raise InvalidArgument(f"A block half widths {(hy, hx)} do not fit grid {shape}")
    cy, cx = ny // 2, nx // 2
    a = np.zeros(shape, dtype=bool)
    a[cy - hy:cy + hy + 1, cx - hx:cx + hx + 1] = True
    acs_mask = acs_block(shape, acs)
    if np.any(acs_mask & ~a):
        raise InvalidArgument(f"A block {(2 * hy + 1, 2 * hx + 1)} does not contain ACS {acs}")
    b_points = lattice_points(shape, rx, ry) & ~a
    count = int(b_points.sum())
    if num_interleaves > count:
        raise InvalidArgument(
            f"{num_interleaves} interleaves exceed the {count} B-region lattice points")
    labels = np.full(shape, -2, dtype=np.int64)
    labels[a] = -1
    labels[b_points] = np.arange(count) % num_interleaves  # raster order
    return ViewShareSchedule(shape=shape, num_frames=int(num_frames),
                             num_interleaves=int(num_interleaves), rx=int(rx), ry=int(ry),
                             a_half_width=(hy, hx), acs_size=acs, labels=labels)


def window_frames(sched, t, vs):
    """Frames whose B interleaves are shared into frame ``t``.

    The window covers ``t - (vs-1)//2 .. t + ceil((vs-1)/2)``; near the ends
    of the series it is shifted (not truncated) to stay inside the valid frames.
    """
    if not 1 <= vs <= sched.num_interleaves:
        raise InvalidArgument(f"view sharing {vs} outside 1..{sched.num_interleaves}")
    if not 0 <= t < sched.num_frames:
        raise InvalidArgument(f"frame {t} outside 0..{sched.num_frames - 1}")
    back = (vs - 1) // 2
    lo = min(max(t - back, 0), max(sched.num_frames - vs, 0))
    return list(range(lo, min(lo + vs, sched.num_frames)))


def mask_for_frame(sched, t, vs):
    keep = sched.a_block.copy()
    for f in window_frames(sched, t, vs):
        keep |= sched.interleave_mask(sched.interleave_of_frame(f))
    return SamplingMask(keep)


def view_shared_kspace(sched, frames, t, vs):
    """Assemble the k-space of frame ``t`` as acquired with ``vs`` view sharing.

    ``frames`` is a sequence of fully sampled :class:`KSpaceStack` (or arrays),
    one per time frame. The A block comes from frame ``t``; each shared
    interleave comes from the frame that acquired it.
    """
    def arr(f):
        return f.data if isinstance(f, KSpaceStack) else np.asarray(f)

    out = np.zeros_like(arr(frames[t]))
    a = sched.a_block
    out[:, a] = arr(frames[t])[:, a]
    for f in window_frames(sched, t, vs):
        sel = sched.interleave_mask(sched.interleave_of_frame(f))
        out[:, sel] = arr(frames[f])[:, sel]
    return KSpaceStack(out, frame_index=t), mask_for_frame(sched, t, vs)


def apply_mask(ks, m):
    """The sampling projection: keep measured entries, zero the rest."""
    if ks.shape != m.shape:
        raise InvalidArgument(f"k-space grid {ks.shape} does not match mask {m.shape}")
    return KSpaceStack(np.where(m.keep[None], ks.data, 0), frame_index=ks.frame_index)
