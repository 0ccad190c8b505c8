"""Phoneme alignments, word-boundary arithmetic, and edit-mask construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .melkit import MelSpectrogram


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Phone:
    phoneme: str
    duration: int  # mel frames
    word_index: int


@dataclass
class Alignment:
    phones: list[Phone]
    words: list[str]
    hop: int = 256
    sample_rate: int = 22050

    def __post_init__(self):
        prev = 0
        for ph in self.phones:
            if ph.duration < 0:
                raise AlignmentError(f"negative duration for {ph.phoneme}")
            if ph.word_index < prev:
                raise AlignmentError("word_index must be non-decreasing")
            if not 0 <= ph.word_index < len(self.words):
                raise AlignmentError(f"word_index {ph.word_index} out of range")
            prev = ph.word_index

    @property
    def total_frames(self) -> int:
        return sum(ph.duration for ph in self.phones)

    def phoneme_ids(self, inventory) -> list[int]:
        return [inventory.id_of(ph.phoneme) for ph in self.phones]


@dataclass(frozen=True)
class MaskRegion:
    start: int
    end: int  # half-open

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise AlignmentError(f"bad mask region [{self.start}, {self.end})")

    def __len__(self):
        return self.end - self.start


@dataclass
class EditRequest:
    """Replace words [word_lo, word_hi] of the reference with new content.

    replacement_phones carries (phoneme, word offset) pairs, word offsets
    dense starting at 0 and indexing into replacement_words.
    """

    ref_mel_path: str
    ref_align: Alignment
    word_lo: int
    word_hi: int
    replacement_words: list[str]
    replacement_phones: list[tuple[str, int]]
    speaker_id: str | None = None

    def __post_init__(self):
        if not 0 <= self.word_lo <= self.word_hi < len(self.ref_align.words):
            raise AlignmentError("edit word span out of range")
        if not self.replacement_phones or not self.replacement_words:
            raise AlignmentError("replacement must be non-empty")
        for _, w in self.replacement_phones:
            if not 0 <= w < len(self.replacement_words):
                raise AlignmentError("replacement word offset out of range")


def word_frame_range(a: Alignment, word_lo: int, word_hi: int) -> MaskRegion:
    """Frame interval covering exactly the phones of words [word_lo, word_hi]."""
    if not 0 <= word_lo <= word_hi < len(a.words):
        raise AlignmentError("word span out of range")
    pos = 0
    start = None
    end = None
    for ph in a.phones:
        if ph.word_index == word_lo and start is None:
            start = pos
        pos += ph.duration
        if ph.word_index <= word_hi:
            end = pos
    if start is None:
        # no phones carry the span's word index; degenerate empty region
        pos = 0
        for ph in a.phones:
            if ph.word_index >= word_lo:
                break
            pos += ph.duration
        return MaskRegion(pos, pos)
    return MaskRegion(start, end)


def sample_training_mask(t: int, fraction: float, rng: np.random.Generator) -> MaskRegion:
    """Center-biased zero-mask: length round(fraction*T), center in [0.4T, 0.6T]."""
    if t < 10:
        raise AlignmentError("spectrogram too short to mask")
    if not 0.0 < fraction < 1.0:
        raise AlignmentError("mask fraction must be in (0, 1)")
    length = max(1, round(fraction * t))
    center = rng.uniform(0.4 * t, 0.6 * t)
    start = int(round(center - length / 2.0))
    start = min(max(start, 0), t - length)
    return MaskRegion(start, start + length)


def apply_mask(mel: MelSpectrogram, r: MaskRegion) -> MelSpectrogram:
    if r.end > len(mel):
        raise AlignmentError("mask region outside spectrogram")
    frames = mel.frames.copy()
    frames[r.start : r.end] = 0.0
    return MelSpectrogram(frames, mel.config)


def splice_reference(ref_mel: MelSpectrogram, old: MaskRegion, new_len: int) -> MelSpectrogram:
    """Cut the old span out and insert new_len zero frames in its place."""
    if old.end > len(ref_mel):
        raise AlignmentError("splice region outside spectrogram")
    if new_len < 0:
        raise AlignmentError("new_len must be >= 0")
    m = ref_mel.frames.shape[1]
    frames = np.concatenate([
        ref_mel.frames[: old.start],
        np.zeros((new_len, m)),
        ref_mel.frames[old.end :],
    ])
    return MelSpectrogram(frames, ref_mel.config)


def resize_for_edit(ref_align: Alignment, req: EditRequest,
                    predicted_durs: list[int]) -> tuple[Alignment, MaskRegion, int]:
    """Build the edited-utterance alignment and the mask on the spliced timeline.

    Phones outside the edited span keep their reference durations; the
    replacement phones get the predicted ones. Returns (edited alignment,
    mask over the replacement slot, spliced timeline length T').
    """
    if len(predicted_durs) != len(req.replacement_phones):
        raise AlignmentError("predicted durations must match replacement phones")
    if any(d < 1 for d in predicted_durs):
        raise AlignmentError("predicted durations must be >= 1")

    old_region = word_frame_range(ref_align, req.word_lo, req.word_hi)
    new_len = sum(predicted_durs)

    words: list[str] = []
    phones: list[Phone] = []
    word_remap: dict[int, int] = {}

    def mapped_word(idx: int, label: str) -> int:
        if idx not in word_remap:
            word_remap[idx] = len(words)
            words.append(label)
        return word_remap[idx]

    inserted = False
    for ph in ref_align.phones:
        if req.word_lo <= ph.word_index <= req.word_hi:
            if not inserted:
                inserted = True
                base = len(words)
                words.extend(req.replacement_words)
                for (p, w), d in zip(req.replacement_phones, predicted_durs):
                    phones.append(Phone(p, d, base + w))
            continue
        key = ph.word_index if ph.word_index < req.word_lo else ph.word_index + 10**6
        phones.append(Phone(ph.phoneme, ph.duration,
                            mapped_word(key, ref_align.words[ph.word_index])))
    if not inserted:
        # span had zero phones (possible only with empty words); append at slot
        words.extend(req.replacement_words)

    edited = Alignment(phones, words, hop=ref_align.hop, sample_rate=ref_align.sample_rate)
    t_prime = ref_align.total_frames - len(old_region) + new_len
    mask = MaskRegion(old_region.start, old_region.start + new_len)
    if edited.total_frames != t_prime:
        raise AlignmentError("internal: spliced alignment length mismatch")
    return edited, mask, t_prime


# ---------------------------------------------------------------------------
# JSON schema: {"words": [...], "phones": [{"p","d","w"}], "hop", "sample_rate"}


def parse_alignment(text: str) -> Alignment:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise AlignmentError(f"invalid JSON: {e}") from e
    for key in ("words", "phones", "hop", "sample_rate"):
        if key not in doc:
            raise AlignmentError(f"missing key {key!r}")
    phones = []
    for i, entry in enumerate(doc["phones"]):
        try:
            phones.append(Phone(str(entry["p"]), int(entry["d"]), int(entry["w"])))
        except (KeyError, TypeError, ValueError) as e:
            raise AlignmentError(f"bad phone entry {i}: {e}") from e
    return Alignment(phones, [str(w) for w in doc["words"]],
                     hop=int(doc["hop"]), sample_rate=int(doc["sample_rate"]))


def serialize_alignment(a: Alignment) -> str:
    return json.dumps({
        "words": a.words,
        "phones": [{"p": ph.phoneme, "d": ph.duration, "w": ph.word_index}
                   for ph in a.phones],
        "hop": a.hop,
        "sample_rate": a.sample_rate,
    }, indent=2)
