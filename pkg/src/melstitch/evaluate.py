"""Held-out edit generation and MCD scoring across editing methods."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import Alignment, EditRequest
from .baselines import complete_synthesis_swap, featswitch
from .melkit import MelSpectrogram, mcd, mel_to_cepstra
from .stitcher import StitchModel, edit

MCD_ORDER = 13

METHODS = ("attentionstitch", "swap", "featswitch")


def identity_edit_request(item_id: str, ref_align: Alignment, word: int) -> EditRequest:
    """Replace one word with itself; the unedited reference is then the
    ground truth the edited output is scored against."""
    span_phones = [(ph.phoneme, 0) for ph in ref_align.phones
                   if ph.word_index == word]
    return EditRequest(
        ref_mel_path=item_id,
        ref_align=ref_align,
        word_lo=word,
        word_hi=word,
        replacement_words=[ref_align.words[word]],
        replacement_phones=span_phones,
    )


def sample_edits(pairs, n_edits: int, rng: np.random.Generator):
    """Deterministic held-out edit set: (item_id, ref_mel, request) triples."""
    edits = []
    for _ in range(n_edits):
        item_id, mel, align = pairs[int(rng.integers(0, len(pairs)))]
        word = int(rng.integers(0, len(align.words)))
        edits.append((item_id, mel, identity_edit_request(item_id, align, word)))
    return edits


def run_method(method: str, ref_mel: MelSpectrogram, req: EditRequest,
               model: StitchModel) -> MelSpectrogram:
    if method == "attentionstitch":
        out_mel, _ = edit(req, model, ref_mel=ref_mel, render_audio=False)
        return out_mel
    if method == "swap":
        return complete_synthesis_swap(ref_mel, req.ref_align, req, model).mel
    if method == "featswitch":
        return featswitch(ref_mel, req.ref_align, req, model).mel
    raise ValueError(f"unknown method {method!r}")


def score_edit(out_mel: MelSpectrogram, ref_mel: MelSpectrogram,
               order: int = MCD_ORDER) -> float:
    a = mel_to_cepstra(out_mel, order)
    b = mel_to_cepstra(ref_mel, order)
    return mcd(a, b, align="dtw")


@dataclass
class EvalRow:
    item: str
    method: str
    mcd: float


def evaluate_methods(methods, pairs, model: StitchModel, n_edits: int,
                     seed: int = 0) -> list[EvalRow]:
    rng = np.random.default_rng(seed)
    edits = sample_edits(pairs, n_edits, rng)
    rows = []
    for i, (item_id, mel, req) in enumerate(edits):
        for method in methods:
            out = run_method(method, mel, req, model)
            rows.append(EvalRow(f"{item_id}#{i}", method, score_edit(out, mel)))
    return rows


def mean_mcd(rows: list[EvalRow], method: str) -> float:
    vals = [r.mcd for r in rows if r.method == method]
    return float(np.mean(vals)) if vals else float("nan")
