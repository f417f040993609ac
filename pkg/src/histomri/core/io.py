"""File I/O: PNG images with JSON spacing sidecars and ``.nvol`` volumes.

``.nvol`` is a small NRRD-like format: an ASCII header of ``key: value``
lines terminated by an empty line, followed by C-ordered little-endian
float32 samples (channels vary fastest).
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import cv2
import numpy as np

from ..errors import HeaderMismatch, UnreadableFile, UnsupportedEncoding, UnsupportedFormat
from .containers import BinaryMask, Geometry, RasterImage, VoxelVolume

logger = logging.getLogger(__name__)

NVOL_MAGIC = "NVOL0001"
NVOL_ENCODING = "raw-float32-le"


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def load_image(path) -> RasterImage:
    """Read an 8/16-bit, 1- or 3-channel PNG as a RasterImage in [0, 1].

    Pixel spacing comes from ``<stem>.json`` (``{"spacing": [sy, sx]}``) when
    that sidecar exists, else 1 mm.
    """
    path = Path(path)
    if not path.is_file():
        raise UnreadableFile(f"no such file: {path}")
    if path.suffix.lower() != ".png":
        raise UnsupportedFormat(f"only PNG images are supported, got {path.suffix!r}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise UnreadableFile(f"could not decode {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise UnsupportedFormat(f"unsupported PNG sample type {raw.dtype}")
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            raw = raw[..., :3]
        if raw.shape[2] != 3:
            raise UnsupportedFormat(f"unsupported channel count {raw.shape[2]}")
        raw = raw[..., ::-1]  # BGR -> RGB
    data = raw.astype(np.float64) / scale
    spacing = (1.0, 1.0)
    side = sidecar_path(path)
    if side.is_file():
        meta = json.loads(side.read_text())
        if "spacing" in meta:
            spacing = tuple(float(s) for s in meta["spacing"])
    return RasterImage(data, spacing)


def save_image(image, path, bit_depth: int = 16, sidecar: bool = True) -> Path:
    """Write a RasterImage (or BinaryMask, as 0/255 8-bit) to PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(image, BinaryMask):
        raw = np.where(image.data, 255, 0).astype(np.uint8)
    else:
        if bit_depth not in (8, 16):
            raise UnsupportedFormat(f"bit depth must be 8 or 16, got {bit_depth}")
        data = np.clip(image.data, 0.0, 1.0)
        maxval = 255 if bit_depth == 8 else 65535
        dtype = np.uint8 if bit_depth == 8 else np.uint16
        raw = np.rint(data * maxval).astype(dtype)
        if raw.ndim == 3:
            raw = np.ascontiguousarray(raw[..., ::-1])
    if not cv2.imwrite(str(path), raw):
        raise UnreadableFile(f"could not write {path}")
    if sidecar:
        sidecar_path(path).write_text(json.dumps({"spacing": list(image.spacing)}))
    return path


def load_mask(path) -> BinaryMask:
    """Masks are stored as 1-channel PNG (0/255) or as ``.nvol``."""
    path = Path(path)
    if path.suffix == ".nvol":
        data, meta = read_nvol(path)
        return BinaryMask(data > 0.5, meta["spacing"], meta["origin"])
    img = load_image(path)
    gray = img.data if img.channels == 1 else img.data.mean(axis=2)
    return BinaryMask(gray > 0.5, img.spacing)


def _fmt(values) -> str:
    return " ".join(repr(float(v)) if not isinstance(v, (int, np.integer)) else str(int(v)) for v in values)


def write_nvol(path, data, spacing, origin=None, extra: dict | None = None) -> Path:
    """Low-level writer; ``data`` has 2 or 3 spatial axes plus optional channels.

    The number of spatial axes is ``len(spacing)``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(data)
    nd = len(spacing)
    dims = data.shape[:nd]
    channels = 1 if data.ndim == nd else int(np.prod(data.shape[nd:]))
    origin = tuple(origin) if origin is not None else (0.0,) * nd
    lines = [
        NVOL_MAGIC,
        f"dims: {_fmt(dims)}",
        f"spacing: {' '.join(repr(float(s)) for s in spacing)}",
        f"origin: {' '.join(repr(float(o)) for o in origin)}",
        f"channels: {channels}",
        f"encoding: {NVOL_ENCODING}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value}")
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    return path


def read_nvol(path) -> tuple[np.ndarray, dict]:
    """Returns ``(samples as float64, header dict)``."""
    path = Path(path)
    if not path.is_file():
        raise UnreadableFile(f"no such file: {path}")
    blob = path.read_bytes()
    sep = blob.find(b"\n\n")
    if not blob.startswith(NVOL_MAGIC.encode()) or sep < 0:
        raise UnsupportedFormat(f"{path} is not an .nvol file")
    meta: dict = {}
    for line in blob[:sep].decode("ascii").splitlines()[1:]:
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    encoding = meta.get("encoding", "")
    if encoding != NVOL_ENCODING:
        raise UnsupportedEncoding(f"unsupported encoding {encoding!r}")
    dims = tuple(int(v) for v in meta["dims"].split())
    spacing = tuple(float(v) for v in meta["spacing"].split())
    origin = tuple(float(v) for v in meta.get("origin", " ".join(["0"] * len(dims))).split())
    channels = int(meta.get("channels", 1))
    payload = blob[sep + 2:]
    expected = int(np.prod(dims)) * channels * 4
    if len(payload) != expected:
        raise HeaderMismatch(
            f"header declares {int(np.prod(dims)) * channels} samples, payload holds {len(payload) / 4:g}"
        )
    shape = dims if channels == 1 else dims + (channels,)
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    meta.update(dims=dims, spacing=spacing, origin=origin, channels=channels)
    return data, meta


def load_volume(path) -> VoxelVolume:
    data, meta = read_nvol(path)
    if len(meta["dims"]) != 3:
        raise UnsupportedFormat(f"{path} holds a {len(meta['dims'])}D grid, expected 3D")
    return VoxelVolume(data, meta["spacing"], meta["origin"], meta.get("orientation", "axial"))


def save_volume(volume, path) -> Path:
    if isinstance(volume, BinaryMask):
        return write_nvol(path, volume.data.astype(np.float32), volume.spacing, volume.origin)
    extra = {"orientation": volume.orientation} if isinstance(volume, VoxelVolume) else None
    return write_nvol(path, volume.data, volume.spacing, volume.origin, extra)


def load_grid(path):
    """Load any ``.nvol`` as RasterImage (2D) or VoxelVolume (3D)."""
    data, meta = read_nvol(path)
    if len(meta["dims"]) == 2:
        return RasterImage(data, meta["spacing"])
    return VoxelVolume(data, meta["spacing"], meta["origin"], meta.get("orientation", "axial"))


def geometry_of(path) -> Geometry:
    _, meta = read_nvol(path)
    return Geometry(meta["dims"], meta["spacing"], meta["origin"])
