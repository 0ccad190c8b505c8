"""Dependency-free spectrogram rasters: PPM always, PNG via stdlib zlib."""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .align import MaskRegion
from .melkit import MelSpectrogram

# blue -> yellow ramp endpoints
_COLD = np.array([20, 20, 90], dtype=np.float64)
_HOT = np.array([250, 230, 80], dtype=np.float64)


def mel_to_image(mel: MelSpectrogram, mask: MaskRegion | None = None,
                 cell: int = 4) -> np.ndarray:
    """H x W x 3 uint8 raster, low mel bands at the bottom, time left to
    right; the mask region, if given, is overdrawn with diagonal hatching."""
    t, m = mel.frames.shape
    lo = float(mel.frames.min())
    hi = float(mel.frames.max())
    span = hi - lo if hi > lo else 1.0
    norm = (mel.frames - lo) / span  # T x M in [0,1]
    img = _COLD[None, None, :] + norm[:, :, None] * (_HOT - _COLD)[None, None, :]
    img = img.transpose(1, 0, 2)[::-1]  # M x T x 3, band 0 at bottom
    img = np.repeat(np.repeat(img, cell, axis=0), cell, axis=1)
    if mask is not None:
        if mask.end > t:
            raise ValueError("mask region outside spectrogram")
        x0, x1 = mask.start * cell, mask.end * cell
        h = img.shape[0]
        for y in range(h):
            for x in range(x0, x1):
                if (x + y) % 6 == 0:
                    img[y, x] = [255, 255, 255]
    return img.clip(0, 255).astype(np.uint8)


def write_ppm(img: np.ndarray, path):
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())


def write_png(img: np.ndarray, path):
    h, w, _ = img.shape
    raw = b"".join(b"\x00" + img[y].tobytes() for y in range(h))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        body = tag + payload
        return struct.pack(">I", len(payload)) + body + struct.pack(
            ">I", zlib.crc32(body) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(chunk(b"IHDR", ihdr))
        f.write(chunk(b"IDAT", zlib.compress(raw, 9)))
        f.write(chunk(b"IEND", b""))
