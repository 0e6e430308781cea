"""2-D GRAPPA on a Cartesian ``ry x rx`` lattice anchored at the DC sample.

For a missing point with lattice offset ``(oy, ox)`` (``0 <= oy < ry``,
``0 <= ox < rx``, not both zero) the sources are the lattice points
``base + (jy * ry, jx * rx)`` where ``base`` is the lattice point at
``target - (oy, ox)`` and ``jy, jx`` run over the kernel window, e.g.
``-2..2`` for a 5-point kernel. Every offset class has its own weights,
which map all coils' sources to all coils' targets.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CalibrationError, InvalidArgument
from .phantom import KSpaceStack
from .sampling import acs_block, lattice_points

__all__ = ["GrappaGeometry", "GrappaKernel", "calibrate", "interpolate", "source_offsets",
           "offset_classes", "grappa_recon"]


@dataclass(frozen=True)
class GrappaGeometry:
    rx: int = 3
    ry: int = 2
    kernel: tuple = (5, 5)  # (ky, kx) in lattice units
    acs: tuple = (24, 24)  # (ay, ax) in grid points

    def __post_init__(self):
        if self.rx < 1 or self.ry < 1:
            raise InvalidArgument(f"lattice strides must be >= 1, got {self.rx}, {self.ry}")
        if min(self.kernel) < 1:
            raise InvalidArgument(f"kernel size must be positive, got {self.kernel}")


@dataclass
class GrappaKernel:
    geometry: GrappaGeometry
    offsets: list  # [(oy, ox), ...]
    weights: np.ndarray  # (n_classes, P_src * ky * kx, P_tgt)
    lam: float | None = None  # None: scale-relative default per class
    num_coils: int = 0
    lam_used: dict = field(default_factory=dict)

    def weight_tensor(self):
        """Weights as ``(class, target coil, source coil, ky, kx)``."""
        ky, kx = self.geometry.kernel
        n, _, p = self.weights.shape
        return self.weights.reshape(n, p, ky, kx, p).transpose(0, 4, 1, 2, 3)


def source_offsets(n, r):
    """Source displacements in grid points for an ``n``-point kernel with stride ``r``."""
    return (np.arange(n) - (n - 1) // 2) * r


def offset_classes(rx, ry):
    return [(oy, ox) for oy in range(ry) for ox in range(rx) if (oy, ox) != (0, 0)]


def _sources(data, ys, xs, oy, ox, geometry, wrap):
    """Gather the source neighbourhoods of targets ``ys x xs`` into ``(ny_t*nx_t, P*ky*kx)``."""
    p, ny, nx = data.shape
    ky, kx = geometry.kernel
    dys = source_offsets(ky, geometry.ry)
    dxs = source_offsets(kx, geometry.rx)
    rows = ys[:, None] - oy + dys[None, :]  # (nty, ky)
    cols = xs[:, None] - ox + dxs[None, :]  # (ntx, kx)
    if wrap:
        rows %= ny
        cols %= nx
    g = data[:, rows[:, None, :, None], cols[None, :, None, :]]  # (P, nty, ntx, ky, kx)
    return g.transpose(1, 2, 0, 3, 4).reshape(len(ys) * len(xs), p * ky * kx)


def calibrate(ks, mask, geometry, lam=None, shifts="all"):
    """Fit GRAPPA weights on the ACS block by regularized least squares.

    Parameters
    ----------
    ks : KSpaceStack
        k-space whose ACS block (``geometry.acs``, centred) is fully measured.
    mask : SamplingMask
        Sampling mask; used to check the ACS block is measured.
    geometry : GrappaGeometry
    lam : float, optional
        Tikhonov weight. ``None`` uses ``1e-6 * sigma_max(S)**2`` per offset
        class, with ``S`` the calibration source matrix; 0 gives plain least
        squares.
    shifts : {"all", "lattice"}
        ``"all"`` slides the kernel over every position whose whole
        neighbourhood lies inside the ACS block. ``"lattice"`` keeps only
        positions whose source points lie on the sampling lattice, which is
        what data generated by an exact lattice kernel relation satisfy.

    Raises
    ------
    CalibrationError
        If an offset class has fewer than half as many equations as unknowns
        (or fewer than the unknowns when ``lam == 0``).
    """
    data = ks.data
    p, ny, nx = data.shape
    if shifts not in ("all", "lattice"):
        raise InvalidArgument(f"unknown calibration shift mode {shifts!r}")
    classes = offset_classes(geometry.rx, geometry.ry)
    ky, kx = geometry.kernel
    unknowns = p * ky * kx
    if not classes:
        return GrappaKernel(geometry, [], np.zeros((0, unknowns, p), dtype=data.dtype),
                            lam=0.0 if lam is None else lam, num_coils=p)

    acs = acs_block((ny, nx), geometry.acs)
    if np.any(acs & ~mask.keep):
        raise InvalidArgument("ACS block is not fully measured by the mask")
    rows_in = np.flatnonzero(acs.any(axis=1))
    cols_in = np.flatnonzero(acs.any(axis=0))
    if rows_in.size == 0:
        raise CalibrationError("empty ACS block", offset=classes[0])
    y_lo, y_hi = rows_in[0], rows_in[-1]
    x_lo, x_hi = cols_in[0], cols_in[-1]
    dys = source_offsets(ky, geometry.ry)
    dxs = source_offsets(kx, geometry.rx)

    weights = np.zeros((len(classes), unknowns, p), dtype=np.result_type(data, np.complex128))
    lam_used = {}
    for ci, (oy, ox) in enumerate(classes):
        # target position t = base + (oy, ox); every source base + d must lie in the ACS
        ys = np.arange(ny)
        xs = np.arange(nx)
        by, bx = ys - oy, xs - ox
        ok_y = (ys >= y_lo) & (ys <= y_hi) & (by + dys.min() >= y_lo) & (by + dys.max() <= y_hi)
        ok_x = (xs >= x_lo) & (xs <= x_hi) & (bx + dxs.min() >= x_lo) & (bx + dxs.max() <= x_hi)
        if shifts == "lattice":
            ok_y &= ((by - ny // 2) % geometry.ry) == 0
            ok_x &= ((bx - nx // 2) % geometry.rx) == 0
        ty, tx = ys[ok_y], xs[ok_x]
        neq = ty.size * tx.size
        need = unknowns if lam == 0 else (unknowns + 1) // 2
        if neq < need:
            raise CalibrationError(
                f"offset class {(oy, ox)}: {neq} calibration equations for {unknowns} unknowns",
                offset=(oy, ox))
        src = _sources(data, ty, tx, oy, ox, geometry, wrap=False)
        tgt = data[:, ty[:, None], tx[None, :]].reshape(p, -1).T
        if lam is None:
            smax = np.linalg.norm(src, 2)
            lam_c = 1e-6 * smax**2
        else:
            lam_c = float(lam)
        lam_used[(oy, ox)] = lam_c
        if lam_c > 0:
            a = np.vstack([src, np.sqrt(lam_c) * np.eye(unknowns)])
            b = np.vstack([tgt, np.zeros((unknowns, p))])
        else:
            a, b = src, tgt
        weights[ci] = scipy.linalg.lstsq(a, b, lapack_driver="gelsd")[0]
    return GrappaKernel(geometry, classes, weights, lam=lam,
                        num_coils=p, lam_used=lam_used)


def interpolate(ks_masked, mask, kernel):
    """Fill every unmeasured point from its lattice neighbours (periodic wrap).

    Measured entries are returned bit for bit. On grids whose size is not a
    multiple of the stride, sources that wrap onto off-lattice positions read
    whatever the input holds there (zero when unmeasured).
    """
    data = ks_masked.data
    p, ny, nx = data.shape
    g = kernel.geometry
    if mask.shape != (ny, nx):
        raise InvalidArgument(f"mask grid {mask.shape} does not match k-space {(ny, nx)}")
    if kernel.offsets and kernel.num_coils != p:
        raise InvalidArgument(f"kernel calibrated for {kernel.num_coils} coils, data has {p}")
    lattice = lattice_points((ny, nx), g.rx, g.ry)
    if np.any(lattice & ~mask.keep):
        raise InvalidArgument("mask does not contain the kernel's sampling lattice")
    out = data.copy()
    iy = np.arange(ny)
    ix = np.arange(nx)
    for ci, (oy, ox) in enumerate(kernel.offsets):
        ty = iy[((iy - ny // 2) % g.ry) == oy]
        tx = ix[((ix - nx // 2) % g.rx) == ox]
        src = _sources(data, ty, tx, oy, ox, g, wrap=True)
        pred = (src @ kernel.weights[ci]).T.reshape(p, ty.size, tx.size)
        keep = mask.keep[ty[:, None], tx[None, :]]
        block = out[:, ty[:, None], tx[None, :]]
        out[:, ty[:, None], tx[None, :]] = np.where(keep[None], block, pred)
    return KSpaceStack(out, frame_index=ks_masked.frame_index)


def grappa_recon(ks_masked, mask, geometry, lam=None, shifts="all"):
    kernel = calibrate(ks_masked, mask, geometry, lam=lam, shifts=shifts)
    return interpolate(ks_masked, mask, kernel), kernel
