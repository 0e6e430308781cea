"""File formats: the volume container, mask and image PNGs, manifests.

Volume layout::

    KSVOL 1
    dims=<coils>,<ny>,<nx>
    axes=coil,ky,kx
    coils=<coils>
    frame=<frame index>
    dtype=f8            (or f4)
    kind=kspace         (kspace, image or mask)
    end

followed immediately by the payload: little-endian floats, interleaved
(real, imaginary) pairs in row-major ``(coil, ky, kx)`` order. Header lines
are ASCII and end with a single newline.
"""

import hashlib
import json
import os
import tempfile

import numpy as np
from PIL import Image

from .errors import InvalidArgument, MissingFile, SchemaError
from .phantom import CoilImages, KSpaceStack
from .sampling import SamplingMask

__all__ = ["write_volume", "read_volume", "read_volume_raw", "write_mask_png", "read_mask_png",
           "write_image_png", "atomic_write_bytes", "sha256_file", "write_json"]

MAGIC = "KSVOL 1"
KINDS = ("kspace", "image", "mask")
AXES = "coil,ky,kx"
_DTYPES = {"f4": "<f4", "f8": "<f8"}


def atomic_write_bytes(path, blob):
    """Write via a temp file in the target directory and rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _as_array(obj):
    if isinstance(obj, KSpaceStack):
        return obj.data, "kspace", obj.frame_index
    if isinstance(obj, CoilImages):
        return obj.images, "image", 0
    if isinstance(obj, SamplingMask):
        return obj.keep[None].astype(float), "mask", 0
    return np.asarray(obj), None, 0


def encode_volume(obj, kind=None, frame=None, dtype="f8"):
    data, k, f = _as_array(obj)
    kind = kind or k or "kspace"
    frame = f if frame is None else frame
    if kind not in KINDS:
        raise InvalidArgument(f"unknown volume kind {kind!r}")
    if dtype not in _DTYPES:
        raise InvalidArgument(f"dtype must be f4 or f8, got {dtype!r}")
    if data.ndim == 2:
        data = data[None]
    if data.ndim != 3 or min(data.shape) < 1:
        raise InvalidArgument(f"volume must be (coil, ky, kx), got {data.shape}")
    p, ny, nx = data.shape
    head = "\n".join([MAGIC, f"dims={p},{ny},{nx}", f"axes={AXES}", f"coils={p}",
                      f"frame={int(frame)}", f"dtype={dtype}", f"kind={kind}", "end"]) + "\n"
    c = np.asarray(data, dtype=complex)
    inter = np.empty(c.shape + (2,), dtype=_DTYPES[dtype])
    inter[..., 0] = c.real
    inter[..., 1] = c.imag
    return head.encode("ascii") + inter.tobytes()


def write_volume(path, obj, kind=None, frame=None, dtype="f8"):
    atomic_write_bytes(path, encode_volume(obj, kind, frame, dtype))


def read_volume_raw(path):
    """Parse a volume file; returns ``(header dict, complex array (coil, ky, kx))``."""
    if not os.path.exists(path):
        raise MissingFile(f"volume {path} not found")
    with open(path, "rb") as fh:
        blob = fh.read()
    header = {}
    pos = 0
    lines = []
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise SchemaError(f"{path}: header is not terminated")
        line = blob[pos:nl].decode("ascii", errors="replace")
        pos = nl + 1
        lines.append(line)
        if line == "end":
            break
        if len(lines) > 64:
            raise SchemaError(f"{path}: header too long")
    if lines[0] != MAGIC:
        raise SchemaError(f"{path}: not a volume file")
    for line in lines[1:-1]:
        key, sep, value = line.partition("=")
        if not sep:
            raise SchemaError(f"{path}: malformed header line {line!r}")
        header[key] = value
    try:
        dims = tuple(int(v) for v in header["dims"].split(","))
        dtype = _DTYPES[header["dtype"]]
        kind = header.get("kind", "kspace")
        frame = int(header.get("frame", 0))
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: bad header ({exc})") from exc
    if len(dims) != 3 or min(dims) < 1:
        raise SchemaError(f"{path}: dims must be three positive integers, got {dims}")
    if header.get("axes", AXES) != AXES or int(header.get("coils", dims[0])) != dims[0]:
        raise SchemaError(f"{path}: axes or coil count disagree with dims")
    if kind not in KINDS:
        raise SchemaError(f"{path}: unknown kind {kind!r}")
    size = np.dtype(dtype).itemsize
    expect = 2 * int(np.prod(dims)) * size
    if len(blob) - pos != expect:
        raise SchemaError(f"{path}: payload has {len(blob) - pos} bytes, expected {expect}")
    raw = np.frombuffer(blob, dtype=dtype, offset=pos).reshape(dims + (2,))
    data = raw[..., 0].astype(np.float64) + 1j * raw[..., 1].astype(np.float64)
    header.update(dims=dims, kind=kind, frame=frame)
    return header, data


def read_volume(path):
    """Read a volume as :class:`KSpaceStack`, :class:`CoilImages` or :class:`SamplingMask`."""
    header, data = read_volume_raw(path)
    if header["kind"] == "kspace":
        return KSpaceStack(data, frame_index=header["frame"])
    if header["kind"] == "image":
        return CoilImages(data)
    return SamplingMask(data[0].real > 0.5)


def write_mask_png(path, mask):
    """1-bit PNG, white where sampled; row 0 is ky index 0."""
    keep = mask.keep if isinstance(mask, SamplingMask) else np.asarray(mask, bool)
    img = Image.fromarray(keep.astype(np.uint8) * 255).convert("1")
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".png")
    os.close(fd)
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def read_mask_png(path):
    if not os.path.exists(path):
        raise MissingFile(f"mask {path} not found")
    with Image.open(path) as img:
        return SamplingMask(np.asarray(img.convert("L")) > 127)


def write_image_png(path, image):
    """8-bit min-max normalized PNG; returns the ``(lo, hi)`` scale used."""
    x = np.asarray(image, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    span = hi - lo if hi > lo else 1.0
    u8 = np.clip(np.round((x - lo) / span * 255), 0, 255).astype(np.uint8)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".png")
    os.close(fd)
    Image.fromarray(u8).save(tmp, format="PNG")
    os.replace(tmp, path)
    return lo, hi
