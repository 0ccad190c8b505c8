"""Frozen synthesizer stand-ins: a deterministic template-based toy model,
a duration-predictor lookup, prosody extraction, and external mel import."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import Alignment
from .melkit import MelConfig, MelSpectrogram, load_melb


class SynthError(ValueError):
    pass


class PhonemeInventory:
    """Bijective phoneme token <-> dense id mapping."""

    def __init__(self, tokens: list[str]):
        if len(set(tokens)) != len(tokens):
            raise SynthError("duplicate phoneme tokens")
        self.tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise SynthError(f"unknown phoneme {token!r}") from None

    def token_of(self, pid: int) -> str:
        return self.tokens[pid]


@dataclass
class ProsodyFeatures:
    energy: np.ndarray    # per phone, >= 0
    pitch: np.ndarray     # per phone, 0 = unvoiced
    duration: np.ndarray  # per phone, frames

    def __post_init__(self):
        self.energy = np.asarray(self.energy, dtype=np.float64)
        self.pitch = np.asarray(self.pitch, dtype=np.float64)
        self.duration = np.asarray(self.duration, dtype=np.int64)
        n = len(self.energy)
        if len(self.pitch) != n or len(self.duration) != n:
            raise SynthError("prosody feature lengths disagree")
        if np.any(self.duration < 0) or np.any(self.energy < 0):
            raise SynthError("durations and energies must be >= 0")


@dataclass
class ToySynthParams:
    """Deterministic per-phoneme spectral templates plus prosody couplings."""

    templates: np.ndarray       # P x M
    speaker_bias: np.ndarray    # S x M (row 0 = default speaker)
    energy_gain: float
    pitch_shift_coeff: float
    default_energy: np.ndarray  # per phoneme
    default_pitch: np.ndarray   # per phoneme

    @classmethod
    def seeded(cls, n_phones: int, n_mels: int, seed: int = 0, n_speakers: int = 1):
        rng = np.random.default_rng(seed)
        # templates stay clearly negative like real log-mels, so an exact
        # zero only ever means "masked frame"
        base = -3.2 + 1.2 * rng.standard_normal((n_phones, n_mels))
        # smooth across mel bins so templates look spectrogram-like
        kernel = np.array([0.25, 0.5, 0.25])
        smooth = np.apply_along_axis(
            lambda r: np.convolve(r, kernel, mode="same"), 1, base)
        return cls(
            templates=np.clip(smooth, -5.5, -1.5),
            speaker_bias=0.15 * rng.standard_normal((n_speakers, n_mels)),
            energy_gain=0.25,
            pitch_shift_coeff=0.6,
            default_energy=1.0 + rng.random(n_phones),
            default_pitch=rng.uniform(2.0, float(n_mels) * 0.6, n_phones),
        )

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "toy.templates": self.templates,
            "toy.speaker_bias": self.speaker_bias,
            "toy.coeffs": np.array([self.energy_gain, self.pitch_shift_coeff]),
            "toy.default_energy": self.default_energy,
            "toy.default_pitch": self.default_pitch,
        }

    @classmethod
    def from_tensors(cls, t: dict[str, np.ndarray]):
        return cls(
            templates=t["toy.templates"],
            speaker_bias=t["toy.speaker_bias"],
            energy_gain=float(t["toy.coeffs"][0]),
            pitch_shift_coeff=float(t["toy.coeffs"][1]),
            default_energy=t["toy.default_energy"],
            default_pitch=t["toy.default_pitch"],
        )


def _pitch_bump(pitch: float, n_mels: int, coeff: float) -> np.ndarray:
    """Gaussian bump centered at the mel band selected by the pitch scalar."""
    if pitch <= 0.0:
        return np.zeros(n_mels)
    center = min(pitch, n_mels - 1.0)
    bands = np.arange(n_mels)
    return coeff * np.exp(-0.5 * ((bands - center) / 2.0) ** 2)


def toy_synthesize(phone_ids, prosody: ProsodyFeatures, params: ToySynthParams,
                   config: MelConfig, speaker: int = 0) -> MelSpectrogram:
    """Deterministic mel synthesis: each phone holds its template for
    `duration` frames, shifted by energy gain, pitch bump, and speaker bias."""
    phone_ids = list(phone_ids)
    if len(phone_ids) != len(prosody.energy):
        raise SynthError("prosody length does not match phone count")
    n_mels = params.templates.shape[1]
    if n_mels != config.n_mels:
        raise SynthError("template width does not match mel config")
    if not 0 <= speaker < params.speaker_bias.shape[0]:
        raise SynthError(f"unknown speaker {speaker}")
    floor = np.log(config.log_floor)
    rows = []
    for pid, en, pi, du in zip(phone_ids, prosody.energy, prosody.pitch, prosody.duration):
        if not 0 <= pid < params.templates.shape[0]:
            raise SynthError(f"unknown phoneme id {pid}")
        frame = (params.templates[pid]
                 + params.energy_gain * en
                 + _pitch_bump(float(pi), n_mels, params.pitch_shift_coeff)
                 + params.speaker_bias[speaker])
        frame = np.maximum(frame, floor)
        rows.append(np.tile(frame, (int(du), 1)))
    if rows:
        frames = np.concatenate(rows)
    else:
        frames = np.zeros((0, n_mels))
    return MelSpectrogram(frames, config)


def predict_durations(phone_ids, table: np.ndarray) -> np.ndarray:
    """Duration-predictor stub: per-phoneme corpus means, banker's rounding,
    clamped to at least one frame."""
    phone_ids = np.asarray(list(phone_ids), dtype=np.int64)
    if phone_ids.size and (phone_ids.min() < 0 or phone_ids.max() >= len(table)):
        raise SynthError("phoneme id not covered by duration table")
    if phone_ids.size == 0:
        return np.zeros(0, dtype=np.int64)
    means = table[phone_ids]
    if np.any(~np.isfinite(means)):
        raise SynthError("duration table has uncovered entries")
    return np.maximum(1, np.round(means).astype(np.int64))


def extract_prosody(ref_mel: MelSpectrogram, a: Alignment) -> ProsodyFeatures:
    """Phoneme-level features from a reference mel: linear-power L2 energy,
    band-centroid pitch proxy, and the alignment's durations."""
    if a.total_frames != len(ref_mel):
        raise SynthError("alignment total does not match mel length")
    power = np.exp(ref_mel.frames)
    bands = np.arange(ref_mel.frames.shape[1], dtype=np.float64)
    energies, pitches, durs = [], [], []
    pos = 0
    for ph in a.phones:
        seg = power[pos : pos + ph.duration]
        pos += ph.duration
        durs.append(ph.duration)
        if ph.duration == 0:
            energies.append(0.0)
            pitches.append(0.0)
            continue
        energies.append(float(np.mean(np.linalg.norm(seg, axis=1))))
        weights = seg.sum(axis=0)
        pitches.append(float((weights * bands).sum() / weights.sum()))
    return ProsodyFeatures(np.array(energies), np.array(pitches),
                           np.array(durs, dtype=np.int64))


def import_external_mel(path, config: MelConfig | None = None) -> MelSpectrogram:
    """Load an externally produced .melb (e.g. a real TTS model's output)."""
    return load_melb(path, config)
