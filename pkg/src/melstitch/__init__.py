"""Mel-spectrogram speech editing: a frozen toy synthesizer, an
attention-based stitching model trained with MAE, swap/feature-switch
baselines, and MCD evaluation tooling."""

from .align import Alignment, EditRequest, MaskRegion, Phone
from .melkit import (CepstraSequence, MelConfig, MelSpectrogram, Waveform,
                     griffin_lim, load_melb, load_wav, mcd, mel_to_cepstra,
                     save_melb, save_wav, wav_to_mel)
from .stitcher import (StitchModel, TrainConfig, edit, load_checkpoint,
                       save_checkpoint, stitch_forward, train)
from .synth import PhonemeInventory, ProsodyFeatures, ToySynthParams

__all__ = [
    "Alignment", "EditRequest", "MaskRegion", "Phone",
    "CepstraSequence", "MelConfig", "MelSpectrogram", "Waveform",
    "griffin_lim", "load_melb", "load_wav", "mcd", "mel_to_cepstra",
    "save_melb", "save_wav", "wav_to_mel",
    "StitchModel", "TrainConfig", "edit", "load_checkpoint",
    "save_checkpoint", "stitch_forward", "train",
    "PhonemeInventory", "ProsodyFeatures", "ToySynthParams",
]

__version__ = "0.1.0"
