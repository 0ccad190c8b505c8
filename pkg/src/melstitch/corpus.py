"""Synthetic training corpus: toy-synthesizer utterances with a systematic
style shift plus noise standing in for real recorded references."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .align import Alignment, Phone, parse_alignment, serialize_alignment
from .melkit import MelConfig, MelSpectrogram, load_melb, save_melb
from .synth import (PhonemeInventory, ProsodyFeatures, ToySynthParams,
                    toy_synthesize)

# compact ARPAbet-ish token set for the toy inventory
DEFAULT_TOKENS = [
    "aa", "ae", "ah", "ao", "ay", "b", "d", "eh", "er", "ey", "f", "g",
    "ih", "iy", "k", "l", "m", "n", "ow", "p", "r", "s", "t", "uw", "v", "z",
]

TOY_MEL_CONFIG = MelConfig(n_mels=24)

# fixed "recording channel" mismatch between the synthesizer and references
STYLE_GAIN = 0.9
STYLE_BIAS = -0.35
EQ_AMP = 0.7
WOBBLE_AMP = 0.08
NOISE_SIGMA = 0.02


def channel_eq(n_mels: int) -> np.ndarray:
    """Smooth band-dependent coloration of the 'recording channel'."""
    m = np.arange(n_mels) / n_mels
    return EQ_AMP * np.sin(2.0 * np.pi * 1.5 * m + 1.0)


@dataclass
class CorpusItem:
    item_id: str
    ref_mel: MelSpectrogram
    alignment: Alignment
    prosody: ProsodyFeatures  # generating prosody, kept for oracle tests


def random_utterance(inventory: PhonemeInventory, rng: np.random.Generator,
                     n_words=None) -> tuple[Alignment, ProsodyFeatures]:
    if n_words is None:
        n_words = int(rng.integers(3, 7))
    words = []
    phones = []
    for w in range(n_words):
        n_ph = int(rng.integers(2, 5))
        toks = [inventory.token_of(int(rng.integers(0, len(inventory))))
                for _ in range(n_ph)]
        words.append("".join(toks))
        for tok in toks:
            phones.append(Phone(tok, int(rng.integers(3, 9)), w))
    align = Alignment(phones, words, hop=TOY_MEL_CONFIG.hop,
                      sample_rate=TOY_MEL_CONFIG.sample_rate)
    n = len(phones)
    prosody = ProsodyFeatures(
        energy=0.8 + 0.8 * rng.random(n),
        pitch=rng.uniform(3.0, 15.0, n),
        duration=np.array([ph.duration for ph in phones], dtype=np.int64),
    )
    return align, prosody


def stylize(clean: MelSpectrogram, rng: np.random.Generator) -> MelSpectrogram:
    """Apply the corpus-wide style shift, a smooth per-utterance wobble,
    and small observation noise, floored like any log-mel."""
    t, m = clean.frames.shape
    phase = rng.uniform(0.0, 2.0 * np.pi)
    period = rng.uniform(20.0, 40.0)
    wobble = WOBBLE_AMP * np.sin(2.0 * np.pi * np.arange(t) / period + phase)
    frames = (STYLE_GAIN * clean.frames + STYLE_BIAS
              + channel_eq(m)[None, :]
              + wobble[:, None]
              + NOISE_SIGMA * rng.standard_normal((t, m)))
    frames = np.maximum(frames, np.log(clean.config.log_floor))
    return MelSpectrogram(frames, clean.config)


def make_toy_corpus(n_items: int, seed: int = 0,
                    config: MelConfig = TOY_MEL_CONFIG,
                    synth_seed: int = 7) -> tuple[list[CorpusItem], PhonemeInventory, ToySynthParams]:
    rng = np.random.default_rng(seed)
    inventory = PhonemeInventory(DEFAULT_TOKENS)
    params = ToySynthParams.seeded(len(inventory), config.n_mels, seed=synth_seed)
    items = []
    for i in range(n_items):
        align, prosody = random_utterance(inventory, rng)
        ids = [inventory.id_of(ph.phoneme) for ph in align.phones]
        clean = toy_synthesize(ids, prosody, params, config)
        ref = stylize(clean, rng)
        items.append(CorpusItem(f"utt{i:04d}", ref, align, prosody))
    return items, inventory, params


def duration_table(alignments, inventory: PhonemeInventory) -> np.ndarray:
    """Per-phoneme mean duration in frames; uncovered phonemes become NaN."""
    totals = np.zeros(len(inventory))
    counts = np.zeros(len(inventory))
    for a in alignments:
        for ph in a.phones:
            pid = inventory.id_of(ph.phoneme)
            totals[pid] += ph.duration
            counts[pid] += 1
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, totals / np.maximum(counts, 1), np.nan)


# ---------------------------------------------------------------------------
# on-disk layout: {id}.melb + {id}.align.json + manifest.json


def write_corpus(items: list[CorpusItem], inventory: PhonemeInventory,
                 out_dir, config: MelConfig, synth_seed: int):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "mel_config": {
            "sample_rate": config.sample_rate, "n_fft": config.n_fft,
            "hop": config.hop, "win": config.win, "n_mels": config.n_mels,
            "fmin": config.fmin, "fmax": config.fmax,
            "log_floor": config.log_floor,
        },
        "inventory": inventory.tokens,
        "synth_seed": synth_seed,
        "items": [],
        "warnings": [],
    }
    for item in items:
        melb = f"{item.item_id}.melb"
        alignj = f"{item.item_id}.align.json"
        save_melb(item.ref_mel, out / melb)
        (out / alignj).write_text(serialize_alignment(item.alignment))
        manifest["items"].append({
            "id": item.item_id, "melb": melb, "align": alignj,
            "frames": len(item.ref_mel),
        })
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out / "manifest.json"


def load_manifest(manifest_path):
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    config = MelConfig(**doc["mel_config"])
    inventory = PhonemeInventory(doc["inventory"])
    root = manifest_path.parent
    pairs = []
    for entry in doc["items"]:
        mel = load_melb(root / entry["melb"], config)
        align = parse_alignment((root / entry["align"]).read_text())
        if align.total_frames != len(mel):
            raise ValueError(f"{entry['id']}: alignment/mel length mismatch")
        pairs.append((entry["id"], mel, align))
    return doc, config, inventory, pairs
