"""Dynamic multi-coil phantoms and the centered unitary Fourier transform.

All image and k-space arrays use array order ``(..., ny, nx)``; the DC sample
sits at index ``(ny // 2, nx // 2)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "ImageGrid",
    "GammaVariate",
    "Ellipse",
    "Scene",
    "DynamicPhantom",
    "CoilSensitivities",
    "CoilImages",
    "KSpaceStack",
    "fft2c",
    "ifft2c",
    "make_dynamic_phantom",
    "make_coil_sensitivities",
    "apply_sensitivities",
    "forward_kspace",
    "inverse_kspace",
    "enhancement_scene",
    "point_source_image",
]


@dataclass(frozen=True)
class ImageGrid:
    nx: int
    ny: int

    def __post_init__(self):
        for name in ("nx", "ny"):
            n = getattr(self, name)
            if int(n) != n or n <= 0:
                raise InvalidArgument(f"{name} must be a positive integer, got {n!r}")
            if n % 2:
                raise InvalidArgument(f"{name} must be even, got {n}")

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    def kcoords(self):
        """Normalized frequencies ``(ky, kx)`` in [-1/2, 1/2), broadcast to the grid."""
        ky = (np.arange(self.ny) - self.ny // 2) / self.ny
        kx = (np.arange(self.nx) - self.nx // 2) / self.nx
        return np.meshgrid(ky, kx, indexing="ij")

    def rcoords(self):
        """Pixel-centre coordinates ``(y, x)`` scaled to [-1, 1)."""
        y = (np.arange(self.ny) - self.ny / 2) / (self.ny / 2)
        x = (np.arange(self.nx) - self.nx / 2) / (self.nx / 2)
        return np.meshgrid(y, x, indexing="ij")


def as_shape(grid):
    """Accept an :class:`ImageGrid` or a plain ``(ny, nx)`` tuple."""
    if isinstance(grid, ImageGrid):
        return grid.shape
    ny, nx = (int(v) for v in grid)
    if ny <= 0 or nx <= 0:
        raise InvalidArgument(f"grid dimensions must be positive, got {(ny, nx)}")
    return (ny, nx)


@dataclass(frozen=True)
class GammaVariate:
    """Contrast uptake ``A * tau**decay * exp(decay * (1 - tau))``, ``tau = (t - onset) / rise``.

    The curve is zero up to ``onset`` and peaks with value ``amplitude`` at
    frame ``onset + rise``; ``decay`` sets how quickly it falls afterwards.
    """

    amplitude: float
    onset: float
    rise: float
    decay: float = 2.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tau = np.maximum(t - self.onset, 0.0) / self.rise
        return self.amplitude * tau**self.decay * np.exp(self.decay * (1.0 - tau))

    @property
    def peak_frame(self):
        return self.onset + self.rise


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in [-1, 1) image coordinates; ``enhancement`` adds a time curve."""

    cx: float
    cy: float
    rx: float
    ry: float
    intensity: float = 1.0
    angle: float = 0.0
    enhancement: GammaVariate | None = None
    name: str = ""

    def mask(self, grid, dx=0.0, dy=0.0, scale=1.0):
        y, x = grid.rcoords()
        c, s = np.cos(self.angle), np.sin(self.angle)
        xr = (x - self.cx - dx) * c + (y - self.cy - dy) * s
        yr = -(x - self.cx - dx) * s + (y - self.cy - dy) * c
        return (xr / (self.rx * scale)) ** 2 + (yr / (self.ry * scale)) ** 2 <= 1.0


@dataclass(frozen=True)
class Scene:
    """Scene description for :func:`make_dynamic_phantom`.

    ``jitter`` perturbs every ellipse centre by up to that amount and its size
    by up to ``jitter`` relative, drawn from the seed; 0 gives the nominal
    geometry. ``noise_std`` adds real Gaussian noise to frames (clipped at 0).
    """

    ellipses: tuple
    num_frames: int
    jitter: float = 0.0
    noise_std: float = 0.0


@dataclass
class DynamicPhantom:
    frames: np.ndarray  # (T, ny, nx), real, >= 0
    scene: Scene
    grid: ImageGrid
    region_masks: dict = field(default_factory=dict)

    @property
    def num_frames(self):
        return self.frames.shape[0]


@dataclass
class CoilSensitivities:
    maps: np.ndarray  # (P, ny, nx) complex
    k_support: int

    @property
    def num_coils(self):
        return self.maps.shape[0]


@dataclass
class CoilImages:
    images: np.ndarray  # (P, ny, nx) complex

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim != 3 or self.images.shape[0] < 1:
            raise InvalidArgument(
                f"coil images must have shape (P, ny, nx), got {self.images.shape}")

    @property
    def num_coils(self):
        return self.images.shape[0]

    @property
    def shape(self):
        return self.images.shape[1:]


@dataclass
class KSpaceStack:
    data: np.ndarray  # (P, ny, nx) complex
    frame_index: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise InvalidArgument(f"k-space must have shape (P, ny, nx), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidArgument("k-space contains non-finite values")

    @property
    def num_coils(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape[1:]


def fft2c(x):
    """Unitary 2-D DFT over the last two axes with centered DC."""
    x = np.fft.ifftshift(x, axes=(-2, -1))
    return np.fft.fftshift(np.fft.fft2(x, norm="ortho"), axes=(-2, -1))


def ifft2c(k):
    k = np.fft.ifftshift(k, axes=(-2, -1))
    return np.fft.fftshift(np.fft.ifft2(k, norm="ortho"), axes=(-2, -1))


def make_dynamic_phantom(grid, spec, seed=0):
    """Render a piecewise-constant dynamic phantom.

    Each frame is the sum over ellipses of ``intensity + enhancement(t)`` on
    the ellipse support, so overlapping regions add.
    """
    if spec.num_frames <= 0:
        raise InvalidArgument("frame count must be positive")
    if len(spec.ellipses) < 1:
        raise InvalidArgument("scene needs at least one ellipse")
    rng = np.random.default_rng(seed)
    t = np.arange(spec.num_frames)
    frames = np.zeros((spec.num_frames,) + grid.shape)
    masks = {}
    for i, e in enumerate(spec.ellipses):
        if spec.jitter > 0:
            dx, dy = rng.uniform(-spec.jitter, spec.jitter, 2)
            scale = 1.0 + rng.uniform(-spec.jitter, spec.jitter)
        else:
            dx = dy = 0.0
            scale = 1.0
        m = e.mask(grid, dx, dy, scale)
        masks[e.name or f"region{i}"] = m
        curve = np.full(spec.num_frames, float(e.intensity))
        if e.enhancement is not None:
            curve = curve + e.enhancement(t)
        frames += curve[:, None, None] * m[None]
    if spec.noise_std > 0:
        frames = frames + spec.noise_std * rng.standard_normal(frames.shape)
    # negative-intensity ellipses may poke outside their host region under jitter
    frames = np.maximum(frames, 0.0)
    return DynamicPhantom(frames=frames, scene=spec, grid=grid, region_masks=masks)


def enhancement_scene(num_frames=10, onset=2.0, rise=3.0, decay=2.0, vessel_peak=2.0, jitter=0.0):
    """Head-and-neck style scene: static tissue plus two enhancing vessels."""
    enh = GammaVariate(vessel_peak, onset, rise, decay)
    late = GammaVariate(0.6 * vessel_peak, onset + 1.0, rise + 1.0, decay)
    ellipses = (
        Ellipse(0.0, 0.0, 0.72, 0.85, 1.0, name="background"),
        Ellipse(-0.3, 0.2, 0.22, 0.3, 0.4, angle=0.3, name="tissue"),
        Ellipse(0.35, -0.25, 0.12, 0.12, 0.0, enhancement=enh, name="vessel"),
        Ellipse(-0.35, -0.3, 0.1, 0.16, 0.0, enhancement=late, name="vein"),
        Ellipse(0.25, 0.45, 0.15, 0.08, -0.3, name="dark"),
    )
    return Scene(ellipses=ellipses, num_frames=num_frames, jitter=jitter)


def _random_unitary(p, rng):
    z = rng.standard_normal((p, p)) + 1j * rng.standard_normal((p, p))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _factor(p):
    py = int(np.floor(np.sqrt(p)))
    while p % py:
        py -= 1
    return py, p // py


def _beams(n, size, rng):
    """``n`` DFT beams along one axis whose squared moduli sum to 1 everywhere.

    Beam ``m`` mixes the frequencies ``-(n-1)//2 .. n//2`` with DFT weights,
    giving a Dirichlet-shaped profile centred near ``size * (m + 1/2) / n``
    (plus a seeded jitter) from the left edge of the field of view.
    """
    f = np.arange(n) - (n - 1) // 2
    idx = np.arange(size) - size // 2
    phi = np.pi * (1.0 - 1.0 / n) + rng.uniform(-0.25, 0.25) * 2 * np.pi / n
    dft = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n) / np.sqrt(n)
    waves = np.exp(1j * (2 * np.pi * np.outer(f, idx) / size + phi * f[:, None]))
    return dft @ waves / np.sqrt(n)


def make_coil_sensitivities(grid, p, k_support, seed=0):
    """Band-limited coil maps whose square root of sum of squares is exactly 1.

    Maps are built in k-space from a few frequencies inside the central
    ``k_support x k_support`` block. When ``p = py * px`` fits (``py, px <=
    k_support``), coil ``(a, b)`` is the product of the ``a``-th of ``py``
    beams along y and the ``b``-th of ``px`` beams along x, which localizes
    each coil in one tile of the field of view. Otherwise each map is a random
    unitary mixture of ``p`` unit-modulus exponentials. Both constructions are
    unitary combinations of functions whose squared moduli sum to one, so no
    normalizing division is needed and the k-space support stays exact.
    """
    if k_support % 2 == 0 or k_support < 1:
        raise InvalidArgument(f"k_support must be a positive odd integer, got {k_support}")
    if p < 1:
        raise InvalidArgument(f"coil count must be >= 1, got {p}")
    if k_support > min(grid.nx, grid.ny) // 4 and k_support > 1:
        raise InvalidArgument(
            f"k_support {k_support} exceeds a quarter of the grid {grid.shape}")
    rng = np.random.default_rng(seed)
    ny, nx = grid.shape
    py, px = _factor(p)
    if max(py, px) <= k_support:
        by = _beams(py, ny, rng)
        bx = _beams(px, nx, rng)
        maps = (by[:, None, :, None] * bx[None, :, None, :]).reshape(p, ny, nx)
        maps = maps * np.exp(1j * rng.uniform(0, 2 * np.pi, p))[:, None, None]
        return CoilSensitivities(maps=maps, k_support=k_support)

    h = (k_support - 1) // 2
    offsets = [(a, b) for a in range(-h, h + 1) for b in range(-h, h + 1)]
    pick = rng.choice(len(offsets), size=p, replace=p > len(offsets))
    amps = rng.uniform(0.5, 1.5, p)
    amps /= np.sqrt(np.sum(amps**2))
    phases = rng.uniform(0, 2 * np.pi, p)
    iy = (np.arange(ny) - ny // 2)[:, None]
    ix = (np.arange(nx) - nx // 2)[None, :]
    basis = np.empty((p, ny, nx), dtype=complex)
    for j, i in enumerate(pick):
        fy, fx = offsets[i]
        basis[j] = amps[j] * np.exp(1j * (2 * np.pi * (fy * iy / ny + fx * ix / nx) + phases[j]))
    maps = np.tensordot(_random_unitary(p, rng), basis, axes=(1, 0))
    return CoilSensitivities(maps=maps, k_support=k_support)


def apply_sensitivities(x, s):
    x = np.asarray(x)
    if x.shape != s.maps.shape[1:]:
        raise InvalidArgument(f"image shape {x.shape} does not match maps {s.maps.shape[1:]}")
    return CoilImages(images=s.maps * x[None])


def forward_kspace(g, frame_index=0):
    return KSpaceStack(data=fft2c(g.images), frame_index=frame_index)


def inverse_kspace(ks):
    return CoilImages(images=ifft2c(ks.data))


def point_source_image(grid, num_sources, seed=0, margin=4):
    """Image with ``num_sources`` unit-ish spikes at distinct random pixels."""
    rng = np.random.default_rng(seed)
    ny, nx = grid.shape
    x = np.zeros(grid.shape)
    flat = rng.choice((ny - 2 * margin) * (nx - 2 * margin), size=num_sources, replace=False)
    ys, xs = np.divmod(flat, nx - 2 * margin)
    x[ys + margin, xs + margin] = rng.uniform(0.5, 1.5, num_sources)
    return x
