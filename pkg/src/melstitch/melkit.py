"""Waveform I/O, STFT, mel extraction, Griffin-Lim inversion, and MCD."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.io.wavfile


class AudioFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 22050
    n_fft: int = 1024
    hop: int = 256
    win: int = 1024
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5

    def __post_init__(self):
        if not (0 < self.hop <= self.win <= self.n_fft):
            raise ValueError("need 0 < hop <= win <= n_fft")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ValueError("need 0 <= fmin < fmax <= nyquist")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")

    def fingerprint(self) -> str:
        return (f"{self.sample_rate}:{self.n_fft}:{self.hop}:{self.win}:"
                f"{self.n_mels}:{self.fmin:g}:{self.fmax:g}:{self.log_floor:g}")


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite samples")


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # T x M log-mel
    config: MelConfig

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError("frames must be T x M")
        if self.frames.shape[1] != self.config.n_mels:
            raise ValueError("frame width does not match config n_mels")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("non-finite mel values")

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class CepstraSequence:
    coeffs: np.ndarray  # T x K, c0 excluded

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 2:
            raise ValueError("coeffs must be T x K")

    def __len__(self):
        return self.coeffs.shape[0]


# ---------------------------------------------------------------------------
# WAV I/O


def load_wav(path) -> Waveform:
    """Read a RIFF WAV (PCM16 or float32); stereo is averaged to mono."""
    try:
        sr, data = scipy.io.wavfile.read(path)
    except Exception as e:  # scipy raises bare ValueError on bad RIFF
        raise AudioFormatError(f"cannot read {path}: {e}") from e
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"unsupported sample format {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return Waveform(samples, int(sr))


def save_wav(w: Waveform, path):
    """Write mono PCM16. Round trip with load_wav is exact to 1/32768."""
    clipped = np.clip(w.samples, -1.0, 1.0)
    pcm = np.clip(np.round(clipped * 32768.0), -32768, 32767).astype(np.int16)
    scipy.io.wavfile.write(path, w.sample_rate, pcm)


# ---------------------------------------------------------------------------
# spectral analysis


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the analysis-window convention for STFT
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frame_signal(samples: np.ndarray, cfg: MelConfig) -> np.ndarray:
    pad = cfg.n_fft // 2
    x = np.pad(samples, (pad, pad), mode="reflect")
    t = 1 + len(samples) // cfg.hop
    window = _hann(cfg.win)
    if cfg.win < cfg.n_fft:
        lead = (cfg.n_fft - cfg.win) // 2
        window = np.pad(window, (lead, cfg.n_fft - cfg.win - lead))
    idx = np.arange(cfg.n_fft)[None, :] + cfg.hop * np.arange(t)[:, None]
    return x[idx] * window[None, :]


def stft(w: Waveform, cfg: MelConfig) -> np.ndarray:
    """Complex STFT, T x (n_fft/2 + 1), centered with reflect padding."""
    if len(w.samples) < cfg.win:
        raise ValueError("signal shorter than one analysis window")
    return np.fft.rfft(_frame_signal(w.samples, cfg), axis=1)


def stft_mag(w: Waveform, cfg: MelConfig) -> np.ndarray:
    return np.abs(stft(w, cfg))


def istft(spec: np.ndarray, cfg: MelConfig, length: int) -> np.ndarray:
    """Inverse of stft via windowed overlap-add."""
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1)
    window = _hann(cfg.win)
    if cfg.win < cfg.n_fft:
        lead = (cfg.n_fft - cfg.win) // 2
        window = np.pad(window, (lead, cfg.n_fft - cfg.win - lead))
    pad = cfg.n_fft // 2
    total = pad * 2 + length
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(spec.shape[0]):
        lo = t * cfg.hop
        if lo + cfg.n_fft > total:
            break
        out[lo : lo + cfg.n_fft] += frames[t] * window
        norm[lo : lo + cfg.n_fft] += window ** 2
    norm[norm < 1e-10] = 1.0
    return (out / norm)[pad : pad + length]


def _hz_to_mel(f):
    # Slaney scale: linear below 1 kHz, log above
    f = np.asarray(f, dtype=np.float64)
    mel = f / (200.0 / 3.0)
    log_step = np.log(6.4) / 27.0
    above = f >= 1000.0
    mel = np.where(above, 15.0 + np.log(np.maximum(f, 1000.0) / 1000.0) / log_step, mel)
    return mel


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = m * (200.0 / 3.0)
    log_step = np.log(6.4) / 27.0
    above = m >= 15.0
    return np.where(above, 1000.0 * np.exp(log_step * (m - 15.0)), f)


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Slaney-normalized triangular filters, M x (n_fft/2 + 1)."""
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, cfg.sample_rate / 2.0, n_bins)
    mel_pts = np.linspace(_hz_to_mel(cfg.fmin), _hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - lo) / max(ctr - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - ctr, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        fb[m] *= 2.0 / (hi - lo)  # Slaney area normalization
    return fb


def filter_centers(cfg: MelConfig) -> np.ndarray:
    mel_pts = np.linspace(_hz_to_mel(cfg.fmin), _hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return _mel_to_hz(mel_pts)[1:-1]


def wav_to_mel(w: Waveform, cfg: MelConfig) -> MelSpectrogram:
    """Log power-mel spectrogram, floored at cfg.log_floor before the log."""
    mag = stft_mag(w, cfg)
    power = mag ** 2
    mel = power @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)), cfg)


# ---------------------------------------------------------------------------
# Griffin-Lim inversion (vocoder stand-in)


def mel_to_linear_mag(mel: MelSpectrogram) -> np.ndarray:
    fb = mel_filterbank(mel.config)
    # floor-level energy is the "nothing there" marker; map it to true silence
    mel_power = np.maximum(np.exp(mel.frames) - mel.config.log_floor, 0.0)
    power = np.linalg.pinv(fb) @ mel_power.T  # bins x T
    return np.sqrt(np.maximum(power, 0.0)).T


def spectral_convergence(mag_est: np.ndarray, mag_ref: np.ndarray) -> float:
    denom = np.linalg.norm(mag_ref)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(mag_est - mag_ref) / denom)


def griffin_lim(mel: MelSpectrogram, iters: int = 32, seed: int = 0,
                normalize: bool = True) -> Waveform:
    """Iterative phase reconstruction from a log-mel spectrogram.

    The mel is lifted back to a linear magnitude spectrogram with the
    filterbank pseudo-inverse (clamped at zero), then standard Griffin-Lim
    alternates between the magnitude constraint and signal consistency.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    cfg = mel.config
    mag = mel_to_linear_mag(mel)
    length = max((mag.shape[0] - 1) * cfg.hop, cfg.win)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    spec = mag * phase
    x = istft(spec, cfg, length)
    for _ in range(iters - 1):
        re = stft(Waveform(x, cfg.sample_rate), cfg)[: mag.shape[0]]
        spec = mag * np.exp(1j * np.angle(re))
        x = istft(spec, cfg, length)
    if normalize:
        peak = np.max(np.abs(x))
        if peak > 1e-8:
            x = 0.95 * x / peak
    return Waveform(x, cfg.sample_rate)


# ---------------------------------------------------------------------------
# cepstra and MCD


def mel_to_cepstra(mel: MelSpectrogram, k: int, keep_c0: bool = False) -> CepstraSequence:
    """Orthonormal DCT-II over the mel axis; keeps c1..cK (c0 dropped)."""
    if not 1 <= k < mel.config.n_mels:
        raise ValueError(f"K must be in [1, n_mels), got {k}")
    cep = scipy.fft.dct(mel.frames, type=2, norm="ortho", axis=1)
    if keep_c0:
        return CepstraSequence(cep[:, : k + 1])
    return CepstraSequence(cep[:, 1 : k + 1])


def cepstra_to_mel_frames(cep_with_c0: np.ndarray, n_mels: int) -> np.ndarray:
    """Debug inverse of mel_to_cepstra(keep_c0=True); pads truncated coeffs."""
    t, kk = cep_with_c0.shape
    full = np.zeros((t, n_mels))
    full[:, :kk] = cep_with_c0
    return scipy.fft.idct(full, type=2, norm="ortho", axis=1)


MCD_SCALE = 10.0 / np.log(10.0)


def _frame_mcd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return MCD_SCALE * np.sqrt(2.0 * np.sum((a - b) ** 2, axis=-1))


def dtw_path(a: np.ndarray, b: np.ndarray) -> list[tuple[int, int]]:
    """Monotone end-to-end alignment with steps (1,0), (0,1), (1,1)."""
    ta, tb = len(a), len(b)
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    acc = np.full((ta, tb), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(ta):
        for j in range(tb):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0:
                best = min(best, acc[i - 1, j])
            if j > 0:
                best = min(best, acc[i, j - 1])
            if i > 0 and j > 0:
                best = min(best, acc[i - 1, j - 1])
            acc[i, j] = cost[i, j] + best
    path = [(ta - 1, tb - 1)]
    i, j = ta - 1, tb - 1
    while (i, j) != (0, 0):
        cands = []
        if i > 0 and j > 0:
            cands.append((acc[i - 1, j - 1], (i - 1, j - 1)))
        if i > 0:
            cands.append((acc[i - 1, j], (i - 1, j)))
        if j > 0:
            cands.append((acc[i, j - 1], (i, j - 1)))
        i, j = min(cands, key=lambda c: c[0])[1]
        path.append((i, j))
    path.reverse()
    return path


def mcd(a: CepstraSequence, b: CepstraSequence, align: str = "none") -> float:
    """Mel-cepstral distortion in dB, averaged over aligned frame pairs."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty cepstra sequence")
    if a.coeffs.shape[1] != b.coeffs.shape[1]:
        raise ValueError("cepstral order mismatch")
    if align == "none":
        if len(a) != len(b):
            raise ValueError("align='none' requires equal lengths")
        return float(_frame_mcd(a.coeffs, b.coeffs).mean())
    if align == "dtw":
        path = dtw_path(a.coeffs, b.coeffs)
        ia = np.array([p[0] for p in path])
        ib = np.array([p[1] for p in path])
        return float(_frame_mcd(a.coeffs[ia], b.coeffs[ib]).mean())
    raise ValueError(f"unknown alignment mode {align!r}")


# ---------------------------------------------------------------------------
# .melb binary format


MELB_MAGIC = b"MELB"
MELB_VERSION = 1


def save_melb(mel: MelSpectrogram, path):
    t, m = mel.frames.shape
    with open(path, "wb") as f:
        f.write(MELB_MAGIC)
        f.write(struct.pack("<IIIfI", MELB_VERSION, t, m,
                            float(mel.config.sample_rate), mel.config.hop))
        f.write(mel.frames.astype("<f4").tobytes())


def load_melb(path, config: MelConfig | None = None) -> MelSpectrogram:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MELB_MAGIC:
            raise AudioFormatError(f"{path}: bad magic {magic!r}")
        header = f.read(20)
        if len(header) != 20:
            raise AudioFormatError(f"{path}: truncated header")
        version, t, m, sr, hop = struct.unpack("<IIIfI", header)
        if version != MELB_VERSION:
            raise AudioFormatError(f"{path}: unsupported version {version}")
        raw = f.read(4 * t * m)
        if len(raw) != 4 * t * m:
            raise AudioFormatError(f"{path}: truncated payload")
        frames = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(t, m)
    if config is None:
        config = MelConfig(sample_rate=int(round(sr)), hop=int(hop), n_mels=m)
    if config.n_mels != m:
        raise AudioFormatError(f"{path}: mel count {m} does not match config")
    return MelSpectrogram(frames, config)
