"""Grayscale image handling: PGM/PFM I/O, cropping, dihedral augmentation.

Images are plain 2-D ``float64`` numpy arrays on a nominal [0, 1] scale.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ImageIOError
from .rng import RngState

_HEADER_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def as_image(data) -> np.ndarray:
    """Validate and convert to a finite 2-D float64 array."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def _read_tokens(buf: bytes, count: int, path) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    for _ in range(count):
        m = _HEADER_TOKEN.match(buf, pos)
        if m is None:
            raise ImageIOError(path, "truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageIOError(path, "malformed header")
    return tokens, pos + 1


def _parse_dims(tokens, path) -> tuple[int, int]:
    try:
        w, h = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise ImageIOError(path, "non-integer dimensions") from None
    if w <= 0 or h <= 0:
        raise ImageIOError(path, f"invalid dimensions {w}x{h}")
    return w, h


def load_image(path) -> np.ndarray:
    """Read a binary PGM (8/16-bit, scaled by 255 or 65535) or grayscale PFM.

    PFM values are returned unscaled.
    """
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(path, exc.strerror or str(exc)) from None

    magic = buf[:2]
    if magic == b"P5":
        tokens, offset = _read_tokens(buf[2:], 3, path)
        offset += 2
        w, h = _parse_dims(tokens, path)
        maxval = int(tokens[2])
        if not 0 < maxval < 65536:
            raise ImageIOError(path, f"invalid maxval {maxval}")
        if maxval < 256:
            dtype, scale = np.dtype(np.uint8), 255.0
        else:
            dtype, scale = np.dtype(">u2"), 65535.0
        raster = buf[offset:]
        expected = w * h * dtype.itemsize
        if len(raster) < expected:
            raise ImageIOError(path, f"truncated raster: {len(raster)} of {expected} bytes")
        if len(raster) > expected:
            raise ImageIOError(path, f"dimension mismatch: {len(raster) - expected} trailing bytes")
        data = np.frombuffer(raster, dtype=dtype).reshape(h, w)
        return data.astype(np.float64) / scale

    if magic == b"Pf":
        tokens, offset = _read_tokens(buf[2:], 3, path)
        offset += 2
        w, h = _parse_dims(tokens, path)
        try:
            scale = float(tokens[2])
        except ValueError:
            raise ImageIOError(path, "invalid scale") from None
        if scale == 0.0:
            raise ImageIOError(path, "zero scale")
        dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
        raster = buf[offset:]
        expected = w * h * 4
        if len(raster) < expected:
            raise ImageIOError(path, f"truncated raster: {len(raster)} of {expected} bytes")
        if len(raster) > expected:
            raise ImageIOError(path, f"dimension mismatch: {len(raster) - expected} trailing bytes")
        # PFM stores rows bottom-to-top
        data = np.frombuffer(raster, dtype=dtype).reshape(h, w)[::-1]
        img = data.astype(np.float64)
        if not np.all(np.isfinite(img)):
            raise ImageIOError(path, "non-finite pixel values")
        return img

    if magic == b"PF":
        raise ImageIOError(path, "color PFM is not supported")
    raise ImageIOError(path, f"unsupported format (magic {magic!r})")


def save_image(img, path, bit_depth: int = 8) -> None:
    """Write ``img``; the format follows the suffix (``.pfm`` or ``.pgm``).

    PGM values are mapped with ``clamp(round(v * maxval), 0, maxval)``.
    """
    img = as_image(img)
    path = Path(path)
    h, w = img.shape
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
        raster = np.ascontiguousarray(img[::-1], dtype="<f4").tobytes()
    elif suffix == ".pgm":
        if bit_depth == 8:
            maxval, dtype = 255, np.uint8
        elif bit_depth == 16:
            maxval, dtype = 65535, ">u2"
        else:
            raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
        q = np.clip(np.floor(img * maxval + 0.5), 0, maxval)
        header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
        raster = q.astype(dtype).tobytes()
    else:
        raise ImageIOError(path, f"unknown image suffix {path.suffix!r} (use .pfm or .pgm)")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(raster)
    except OSError as exc:
        raise ImageIOError(path, exc.strerror or str(exc)) from None


def list_images(path) -> list[Path]:
    """Image files under a directory (sorted), or the path itself."""
    path = Path(path)
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() in (".pfm", ".pgm"))
    if not path.exists():
        raise ImageIOError(path, os.strerror(2))
    return [path]


def random_crop(img: np.ndarray, size: int, rng: RngState) -> np.ndarray:
    h, w = img.shape
    if size < 1 or size > min(h, w):
        raise ValueError(f"crop size {size} does not fit a {h}x{w} image")
    top = rng.integers(h - size + 1)
    left = rng.integers(w - size + 1)
    return img[top:top + size, left:left + size].copy()


@dataclass(frozen=True)
class AugmentOp:
    """Counter-clockwise rotation by ``rotation`` degrees, then optional flips."""

    rotation: int = 0
    flip_h: bool = False
    flip_v: bool = False

    def __post_init__(self):
        if self.rotation not in (0, 90, 180, 270):
            raise ValueError(f"rotation must be a multiple of 90 in [0, 270], got {self.rotation}")

    def inverse(self) -> "AugmentOp":
        k = self.rotation // 90
        if self.flip_h != self.flip_v:
            # a single reflection composed with a rotation is an involution
            return self
        if self.flip_h:
            # both flips == rot180
            return AugmentOp(rotation=((-k - 2) % 4) * 90)
        return AugmentOp(rotation=((-k) % 4) * 90)

    @classmethod
    def random(cls, rng: RngState) -> "AugmentOp":
        r = rng.integers(8)
        return cls(rotation=(r % 4) * 90, flip_h=bool(r // 4), flip_v=False)

    @classmethod
    def all(cls) -> list["AugmentOp"]:
        return [cls(r, fh, fv) for r in (0, 90, 180, 270) for fh in (False, True) for fv in (False, True)]


def augment(img: np.ndarray, op: AugmentOp) -> np.ndarray:
    out = np.rot90(img, k=op.rotation // 90)
    if op.flip_h:
        out = out[:, ::-1]
    if op.flip_v:
        out = out[::-1, :]
    return np.ascontiguousarray(out)
