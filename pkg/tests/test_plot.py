import struct
import zlib

import numpy as np
import pytest

from melstitch.align import MaskRegion
from melstitch.melkit import MelConfig, MelSpectrogram
from melstitch.plot import mel_to_image, write_png, write_ppm

SMALL = MelConfig(n_mels=8)


def mel_of(t=6):
    rng = np.random.default_rng(t)
    return MelSpectrogram(rng.standard_normal((t, 8)) - 3, SMALL)


class TestMelToImage:
    def test_shape_and_dtype(self):
        img = mel_to_image(mel_of(6), cell=3)
        assert img.shape == (8 * 3, 6 * 3, 3)
        assert img.dtype == np.uint8

    def test_extremes_hit_ramp_endpoints(self):
        frames = np.full((2, 8), -5.0)
        frames[0, 0] = -1.0
        mel = MelSpectrogram(frames, SMALL)
        img = mel_to_image(mel, cell=1)
        # band 0 is drawn at the bottom row
        assert list(img[-1, 0]) == [250, 230, 80]
        assert list(img[0, 1]) == [20, 20, 90]

    def test_constant_input_does_not_divide_by_zero(self):
        img = mel_to_image(MelSpectrogram(np.full((3, 8), -2.0), SMALL))
        assert np.all(np.isfinite(img))

    def test_mask_hatching_changes_pixels(self):
        mel = mel_of(10)
        plain = mel_to_image(mel)
        hatched = mel_to_image(mel, mask=MaskRegion(3, 6))
        cell = 4
        assert np.array_equal(plain[:, : 3 * cell], hatched[:, : 3 * cell])
        assert np.array_equal(plain[:, 6 * cell :], hatched[:, 6 * cell :])
        assert not np.array_equal(plain[:, 3 * cell : 6 * cell],
                                  hatched[:, 3 * cell : 6 * cell])

    def test_mask_out_of_bounds(self):
        with pytest.raises(ValueError):
            mel_to_image(mel_of(4), mask=MaskRegion(2, 9))


class TestWriters:
    def test_ppm_header_and_payload(self, tmp_path):
        img = mel_to_image(mel_of(5), cell=2)
        path = tmp_path / "x.ppm"
        write_ppm(img, path)
        raw = path.read_bytes()
        h, w, _ = img.shape
        header = f"P6\n{w} {h}\n255\n".encode()
        assert raw.startswith(header)
        assert raw[len(header):] == img.tobytes()

    def test_png_decodes_back(self, tmp_path):
        img = mel_to_image(mel_of(4), cell=2)
        path = tmp_path / "x.png"
        write_png(img, path)
        raw = path.read_bytes()
        assert raw.startswith(b"\x89PNG\r\n\x1a\n")
        # parse IHDR and inflate IDAT, then undo the per-row null filter
        pos = 8
        chunks = {}
        while pos < len(raw):
            (length,) = struct.unpack(">I", raw[pos : pos + 4])
            tag = raw[pos + 4 : pos + 8]
            chunks[tag] = raw[pos + 8 : pos + 8 + length]
            pos += 12 + length
        w, h, depth, color = struct.unpack(">IIBB", chunks[b"IHDR"][:10])
        assert (w, h, depth, color) == (img.shape[1], img.shape[0], 8, 2)
        data = zlib.decompress(chunks[b"IDAT"])
        rows = []
        stride = w * 3 + 1
        for y in range(h):
            row = data[y * stride : (y + 1) * stride]
            assert row[0] == 0
            rows.append(np.frombuffer(row[1:], dtype=np.uint8).reshape(w, 3))
        assert np.array_equal(np.stack(rows), img)
