"""Comparison editing methods: naive synthesize-and-swap and prosody
feature switching, both driven by the same frozen synthesizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .align import Alignment, EditRequest
from .melkit import MelSpectrogram
from .stitcher import StitchModel, plan_edit, synth_for_alignment
from .synth import ProsodyFeatures


@dataclass
class BaselineResult:
    method: str
    mel: MelSpectrogram
    seams: tuple[int, int]  # splice points, frame indices into mel
    edited_align: Alignment | None = None
    prosody: ProsodyFeatures | None = None
    provenance: list[str] = field(default_factory=list)  # per phone: "ref"|"pred"

    def __post_init__(self):
        t = len(self.mel)
        if not (0 <= self.seams[0] <= self.seams[1] <= t):
            raise ValueError("seam indices outside mel")


def complete_synthesis_swap(ref_mel: MelSpectrogram, ref_align: Alignment,
                            req: EditRequest, model: StitchModel,
                            predicted_durs=None,
                            target_energy=None, target_pitch=None) -> BaselineResult:
    """Synthesize the whole edited transcript, then paste only the frames of
    the replacement word(s) over the original span. Everything outside the
    span stays bit-identical to the reference."""
    edited_align, mask, t_prime, prosody, old_region = plan_edit(
        ref_mel, req, model, predicted_durs, target_energy, target_pitch)
    synth = synth_for_alignment(edited_align, prosody, model)
    frames = np.concatenate([
        ref_mel.frames[: old_region.start],
        synth.frames[mask.start : mask.end],
        ref_mel.frames[old_region.end :],
    ])
    assert frames.shape[0] == t_prime
    return BaselineResult(
        method="swap",
        mel=MelSpectrogram(frames, ref_mel.config),
        seams=(mask.start, mask.end),
        edited_align=edited_align,
        prosody=prosody,
    )


def featswitch(ref_mel: MelSpectrogram, ref_align: Alignment,
               req: EditRequest, model: StitchModel,
               predicted_durs=None,
               target_energy=None, target_pitch=None) -> BaselineResult:
    """Resynthesize the whole edited utterance with spliced prosody tracks:
    reference-extracted features on non-target phones, predicted features
    on the replacement phones."""
    edited_align, mask, t_prime, prosody, _ = plan_edit(
        ref_mel, req, model, predicted_durs, target_energy, target_pitch)
    synth = synth_for_alignment(edited_align, prosody, model)
    n_target = len(req.replacement_phones)
    n_before = sum(1 for ph in ref_align.phones if ph.word_index < req.word_lo)
    provenance = (["ref"] * n_before
                  + ["pred"] * n_target
                  + ["ref"] * (len(edited_align.phones) - n_before - n_target))
    return BaselineResult(
        method="featswitch",
        mel=synth,
        seams=(mask.start, mask.end),
        edited_align=edited_align,
        prosody=prosody,
        provenance=provenance,
    )
