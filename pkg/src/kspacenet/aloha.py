"""Low-rank extended-Hankel completion of weighted multi-coil k-space.

The solver factors the lifted matrix as ``U V^H`` and runs ADMM on

    min 1/2 (|U|_F^2 + |V|_F^2)   s.t.  H(z) = U V^H,  z = y on measured entries

which is the factored surrogate of nuclear-norm minimization. Each outer
iteration performs one alternating least-squares sweep over ``U`` and ``V``,
one data-consistent least-squares update of ``z`` and one dual step.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .hankel import lift_array, unlift_array
from .phantom import KSpaceStack
from .sampling import central_block
from .weighting import apply_weight, remove_weight

log = logging.getLogger(__name__)

__all__ = ["AlohaConfig", "AlohaResult", "complete", "estimate_rank"]


@dataclass(frozen=True)
class AlohaConfig:
    filter: tuple = (13, 5)  # (dy, dx) in array order
    rank: int | str = "auto"
    mu: float = 1e-1
    tol: float = 1e-4
    max_outer: int = 200
    max_inner: int = 1
    levels: int = 1
    rank_cutoff: float = 1e-2
    rank_min: int = 1
    rank_max: int | None = None
    init_rank_from_svd: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise InvalidArgument("tol must be positive")
        if self.levels != 1:
            raise InvalidArgument("only a single pyramid level is supported")
        if self.mu <= 0:
            raise InvalidArgument("mu must be positive")
        if isinstance(self.rank, str) and self.rank != "auto":
            raise InvalidArgument(f"rank must be a positive integer or 'auto', got {self.rank!r}")
        if not isinstance(self.rank, str) and self.rank < 1:
            raise InvalidArgument(f"rank must be positive, got {self.rank}")


@dataclass
class AlohaResult:
    kspace: KSpaceStack
    rank: int
    iterations: int
    converged: bool
    objective: list = field(default_factory=list)
    changes: list = field(default_factory=list)


def estimate_rank(ks_acs, cfg):
    """Numerical rank of the lifted calibration block.

    ``ks_acs`` holds only the calibration region. Rows of its lift whose
    patch would wrap around the block are dropped, so every remaining row is a
    genuine neighbourhood; the rank is the smallest ``r`` with
    ``sigma[r] / sigma[0] <= cfg.rank_cutoff``, clamped to
    ``[cfg.rank_min, upper]`` where ``upper`` is ``cfg.rank_max`` or the
    smaller matrix dimension.
    """
    data = ks_acs.data if isinstance(ks_acs, KSpaceStack) else np.asarray(ks_acs)
    p, ay, ax = data.shape
    if ay == 0 or ax == 0:
        raise InvalidArgument("empty calibration region")
    dy, dx = min(cfg.filter[0], ay), min(cfg.filter[1], ax)
    m = lift_array(data, (dy, dx))
    yy, xx = np.divmod(np.arange(ay * ax), ax)
    inside = (yy + dy <= ay) & (xx + dx <= ax)
    if inside.any():
        m = m[inside]
    sv = np.linalg.svd(m, compute_uv=False)
    upper = min(m.shape) if cfg.rank_max is None else min(cfg.rank_max, min(m.shape))
    if sv[0] == 0:
        return max(cfg.rank_min, 1)
    small = np.flatnonzero(sv / sv[0] <= cfg.rank_cutoff)
    r = int(small[0]) if small.size else len(sv)
    return int(np.clip(r, cfg.rank_min, upper))


def _objective(u, v, h, lam, mu):
    # scaled-form augmented Lagrangian
    return (0.5 * (np.vdot(u, u).real + np.vdot(v, v).real)
            + 0.5 * mu * (np.linalg.norm(h - u @ v.conj().T + lam) ** 2 - np.linalg.norm(lam) ** 2))


def complete(ks_masked, mask, w, cfg=AlohaConfig()):
    """Interpolate missing k-space by weighted low-rank Hankel completion.

    Returns an :class:`AlohaResult`; the completed k-space equals the input
    on every measured entry. Hitting ``cfg.max_outer`` without meeting the
    tolerance is reported through ``converged=False`` and a warning.
    """
    p, ny, nx = ks_masked.data.shape
    d = tuple(cfg.filter)
    if d[0] > ny or d[1] > nx:
        raise InvalidArgument(f"filter {d} larger than grid {(ny, nx)}")
    keep = mask.keep
    ncols = p * d[0] * d[1]
    nrows = ny * nx

    if cfg.rank == "auto":
        y0, y1, x0, x1 = central_block(mask)
        calib = apply_weight(ks_masked, w).data[:, y0:y1, x0:x1]
        q = estimate_rank(calib, cfg)
    else:
        q = int(cfg.rank)
    if q > min(nrows, ncols):
        raise InvalidArgument(f"rank {q} exceeds lifted dimensions {(nrows, ncols)}")

    zw = apply_weight(ks_masked, w).data
    scale = float(np.sqrt(np.mean(np.abs(zw[:, keep]) ** 2))) or 1.0
    y = zw / scale
    z = np.where(keep[None], y, 0)

    h = lift_array(z, d)
    if cfg.init_rank_from_svd:
        uu, ss, vvh = np.linalg.svd(h, full_matrices=False)
        root = np.sqrt(ss[:q])
        u = uu[:, :q] * root
        v = vvh[:q].conj().T * root
    else:
        rng = np.random.default_rng(0)
        u = rng.standard_normal((nrows, q)) + 0j
        v = np.zeros((ncols, q), dtype=complex)
    lam = np.zeros_like(h)
    eye = np.eye(q)
    mu = cfg.mu

    objective = []
    changes = []
    converged = False
    it = 0
    for it in range(1, cfg.max_outer + 1):
        for _ in range(cfg.max_inner):
            target = h + lam
            u = mu * target @ v @ np.linalg.inv(eye + mu * (v.conj().T @ v))
            v = mu * target.conj().T @ u @ np.linalg.inv(eye + mu * (u.conj().T @ u))
        z_new = unlift_array(u @ v.conj().T - lam, d, (ny, nx), p)
        z_new = np.where(keep[None], y, z_new)
        change = np.linalg.norm(z_new - z) / max(np.linalg.norm(z), 1e-30)
        z = z_new
        h = lift_array(z, d)
        lam = lam + h - u @ v.conj().T
        objective.append(float(_objective(u, v, h, lam, mu)))
        changes.append(float(change))
        if change <= cfg.tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"ALOHA stopped at max_outer={cfg.max_outer} "
                      f"with relative change {changes[-1]:.2e} > tol {cfg.tol:.1e}",
                      RuntimeWarning, stacklevel=2)
    log.debug("aloha rank=%d iterations=%d converged=%s", q, it, converged)

    completed = KSpaceStack(z * scale, frame_index=ks_masked.frame_index)
    out = remove_weight(completed, w, ks_masked, mask)
    return AlohaResult(out, q, it, converged, objective, changes)
