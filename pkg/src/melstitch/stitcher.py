"""Mel-stitching core: the gather/distribute attention block over a
masked-reference + synthesized mel pair, a convolutional postnet, MAE
training, and the end-to-end edit pipeline."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .align import (Alignment, EditRequest, MaskRegion, apply_mask,
                    resize_for_edit, sample_training_mask, splice_reference,
                    word_frame_range)
from .melkit import MelConfig, MelSpectrogram, griffin_lim, load_melb
from .synth import (PhonemeInventory, ProsodyFeatures, ToySynthParams,
                    extract_prosody, predict_durations, toy_synthesize)
from .tensorcore import Tensor


class StitchError(ValueError):
    pass


POSTNET_LAYERS = 5
POSTNET_KERNEL = 5


@dataclass
class DaParams:
    """1x1 lifts for the two-channel mel stack plus the output projection."""

    w_a: Tensor  # c_m x 2
    w_b: Tensor  # c_n x 2
    w_v: Tensor  # c_n x 2
    w_o: Tensor  # 1 x c_m

    @property
    def c_m(self) -> int:
        return self.w_a.shape[0]

    @property
    def c_n(self) -> int:
        return self.w_b.shape[0]

    def params(self) -> list[Tensor]:
        return [self.w_a, self.w_b, self.w_v, self.w_o]

    @classmethod
    def init(cls, c_m: int, c_n: int, rng: np.random.Generator):
        # w_o starts at zero so the block is the identity at step 0
        def u(rows, cols):
            bound = 1.0 / np.sqrt(cols)
            return Tensor(rng.uniform(-bound, bound, (rows, cols)), requires_grad=True)

        return cls(u(c_m, 2), u(c_n, 2), u(c_n, 2),
                   Tensor(np.zeros((1, c_m)), requires_grad=True))

    @classmethod
    def zeros(cls, c_m: int, c_n: int):
        return cls(Tensor(np.zeros((c_m, 2)), requires_grad=True),
                   Tensor(np.zeros((c_n, 2)), requires_grad=True),
                   Tensor(np.zeros((c_n, 2)), requires_grad=True),
                   Tensor(np.zeros((1, c_m)), requires_grad=True))


@dataclass
class PostnetParams:
    """Five same-padded 1-D convolutions, tanh on the first four."""

    weights: list[Tensor]  # each C_out x C_in x 5
    biases: list[Tensor]

    @property
    def width(self) -> int:
        return self.weights[0].shape[0]

    def params(self) -> list[Tensor]:
        return [*self.weights, *self.biases]

    @classmethod
    def init(cls, n_mels: int, width: int, rng: np.random.Generator):
        dims = [n_mels] + [width] * (POSTNET_LAYERS - 1)
        weights, biases = [], []
        for i in range(POSTNET_LAYERS):
            c_in = dims[i]
            c_out = n_mels if i == POSTNET_LAYERS - 1 else width
            if i == POSTNET_LAYERS - 1:
                w = np.zeros((c_out, c_in, POSTNET_KERNEL))
            else:
                bound = 1.0 / np.sqrt(c_in * POSTNET_KERNEL)
                w = rng.uniform(-bound, bound, (c_out, c_in, POSTNET_KERNEL))
            weights.append(Tensor(w, requires_grad=True))
            biases.append(Tensor(np.zeros(c_out), requires_grad=True))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, n_mels: int, width: int):
        dims = [n_mels] + [width] * (POSTNET_LAYERS - 1)
        weights, biases = [], []
        for i in range(POSTNET_LAYERS):
            c_in = dims[i]
            c_out = n_mels if i == POSTNET_LAYERS - 1 else width
            weights.append(Tensor(np.zeros((c_out, c_in, POSTNET_KERNEL)),
                                  requires_grad=True))
            biases.append(Tensor(np.zeros(c_out), requires_grad=True))
        return cls(weights, biases)


def gather(a: Tensor, b: Tensor) -> Tensor:
    """Attention pooling: G = A . softmax_over_positions(B)^T, c_m x c_n."""
    if a.shape[1] != b.shape[1]:
        raise tc.ShapeError("gather: position counts disagree")
    attn = tc.softmax(b, axis=1)
    return tc.matmul(a, tc.transpose(attn))


def distribute(g: Tensor, v: Tensor) -> Tensor:
    """Per-position redistribution: Z = G . softmax_over_channels(V)."""
    if g.shape[1] != v.shape[0]:
        raise tc.ShapeError("distribute: channel counts disagree")
    sel = tc.softmax(v, axis=0)
    return tc.matmul(g, sel)


def da_forward(masked_ref: np.ndarray, synth: np.ndarray, p: DaParams) -> Tensor:
    """Two-channel stack -> gather -> distribute -> 1x1 out + residual."""
    if masked_ref.shape != synth.shape:
        raise StitchError(f"mel shapes differ: {masked_ref.shape} vs {synth.shape}")
    t, m = masked_ref.shape
    x = Tensor(np.stack([masked_ref.reshape(-1), synth.reshape(-1)]))  # 2 x N
    a = tc.matmul(p.w_a, x)
    b = tc.matmul(p.w_b, x)
    v = tc.matmul(p.w_v, x)
    z = distribute(gather(a, b), v)
    out = tc.reshape(tc.matmul(p.w_o, z), (t, m))
    return tc.add(out, Tensor(masked_ref))


def postnet_forward(x: Tensor, p: PostnetParams) -> Tensor:
    """Residual refinement: x + conv stack(x), channels = mel bins."""
    if x.shape[1] != p.weights[0].shape[1]:
        raise StitchError("postnet channel count does not match input")
    h = tc.transpose(x)  # M x T
    for i in range(POSTNET_LAYERS):
        h = tc.conv1d(h, p.weights[i], p.biases[i], padding="same")
        if i < POSTNET_LAYERS - 1:
            h = tc.tanh(h)
    return tc.add(x, tc.transpose(h))


@dataclass
class StitchModel:
    da: DaParams
    postnet: PostnetParams
    mel_config: MelConfig
    inventory: PhonemeInventory
    synth_params: ToySynthParams
    duration_table: np.ndarray
    steps: int = 0
    loss_history: list[float] = field(default_factory=list)

    @property
    def fingerprint(self) -> str:
        return self.mel_config.fingerprint()

    def params(self) -> list[Tensor]:
        return self.da.params() + self.postnet.params()

    @classmethod
    def init(cls, mel_config: MelConfig, inventory: PhonemeInventory,
             synth_params: ToySynthParams, duration_table: np.ndarray,
             c_m: int = 32, c_n: int = 16, postnet_width: int = 512,
             seed: int = 0, zero: bool = False):
        rng = np.random.default_rng(seed)
        if zero:
            da = DaParams.zeros(c_m, c_n)
            pn = PostnetParams.zeros(mel_config.n_mels, postnet_width)
        else:
            da = DaParams.init(c_m, c_n, rng)
            pn = PostnetParams.init(mel_config.n_mels, postnet_width, rng)
        return cls(da, pn, mel_config, inventory, synth_params,
                   np.asarray(duration_table, dtype=np.float64))


def stitch_forward(masked_ref: MelSpectrogram, synth: MelSpectrogram,
                   model: StitchModel) -> tuple[Tensor, Tensor]:
    """Run the attention block then the postnet; returns both stages."""
    if masked_ref.frames.shape != synth.frames.shape:
        raise StitchError("masked reference and synthesized mel must match in shape")
    if masked_ref.config.fingerprint() != model.fingerprint:
        raise StitchError("mel config fingerprint does not match checkpoint")
    pre = da_forward(masked_ref.frames, synth.frames, model.da)
    final = postnet_forward(pre, model.postnet)
    return pre, final


def synth_for_alignment(a: Alignment, prosody: ProsodyFeatures,
                        model: StitchModel, speaker: int = 0) -> MelSpectrogram:
    ids = a.phoneme_ids(model.inventory)
    return toy_synthesize(ids, prosody, model.synth_params, model.mel_config,
                          speaker=speaker)


def train_step(batch, model: StitchModel, opt: tc.AdamState,
               rng: np.random.Generator, mask_fraction: float = 0.1) -> float:
    """One optimizer step on the attention block and postnet.

    Each batch item is (ref_mel, alignment). The synthesized mel uses
    ground-truth durations and reference-extracted prosody so lengths match.
    Loss = MAE(pre, ref) + MAE(final, ref), averaged over the batch.
    """
    if not batch:
        raise StitchError("empty batch")
    tc.zero_grads(model.params())
    with tc.Tape() as tape:
        loss = None
        for ref_mel, alignment in batch:
            if alignment.total_frames != len(ref_mel):
                raise StitchError("alignment total does not match mel length")
            t = len(ref_mel)
            region = sample_training_mask(t, mask_fraction, rng)
            masked = apply_mask(ref_mel, region)
            prosody = extract_prosody(ref_mel, alignment)
            synth = synth_for_alignment(alignment, prosody, model)
            pre, final = stitch_forward(masked, synth, model)
            target = Tensor(ref_mel.frames)
            item_loss = tc.add(tc.mae_loss(pre, target), tc.mae_loss(final, target))
            loss = item_loss if loss is None else tc.add(loss, item_loss)
        if len(batch) > 1:
            loss = tc.scale(loss, 1.0 / len(batch))
        tc.backward(loss, tape)
    tc.adam_step(model.params(), opt)
    return loss.item()


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    seed: int = 0
    mask_fraction: float = 0.1
    batch_size: int = 1
    c_m: int = 32
    c_n: int = 16
    postnet_width: int = 512
    lr_decay: str = "none"  # "none" | "cosine"
    final_lr_frac: float = 0.05


def train(cfg: TrainConfig, corpus, model: StitchModel,
          opt: tc.AdamState | None = None) -> StitchModel:
    """Train in place over (ref_mel, alignment) pairs; appends loss history."""
    if not corpus:
        raise StitchError("empty corpus")
    if cfg.lr_decay not in ("none", "cosine"):
        raise StitchError(f"unknown lr_decay {cfg.lr_decay!r}")
    if opt is None:
        opt = tc.AdamState(model.params(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + model.steps)
    for s in range(cfg.steps):
        if cfg.lr_decay == "cosine":
            frac = cfg.final_lr_frac
            opt.lr = cfg.lr * (frac + (1.0 - frac)
                               * 0.5 * (1.0 + np.cos(np.pi * s / cfg.steps)))
        idx = rng.integers(0, len(corpus), size=cfg.batch_size)
        batch = [corpus[i] for i in idx]
        loss = train_step(batch, model, opt, rng, cfg.mask_fraction)
        model.steps += 1
        model.loss_history.append(loss)
    return model


def plan_edit(ref_mel: MelSpectrogram, req: EditRequest, model: StitchModel,
              predicted_durs=None, target_energy=None, target_pitch=None):
    """Shared front half of every editing method.

    Resolves replacement durations, builds the edited alignment and its
    mask on the spliced timeline, and splices prosody: reference-extracted
    features for untouched phones, synthesizer defaults (or the supplied
    overrides) for the replacement phones.

    Returns (edited alignment, mask, t_prime, prosody, old reference region).
    """
    a = req.ref_align
    if a.total_frames != len(ref_mel):
        raise StitchError("reference alignment does not match mel length")
    repl_ids = [model.inventory.id_of(p) for p, _ in req.replacement_phones]
    if predicted_durs is None:
        predicted_durs = predict_durations(repl_ids, model.duration_table)
    predicted_durs = [int(d) for d in predicted_durs]

    edited_align, mask, t_prime = resize_for_edit(a, req, predicted_durs)
    old_region = word_frame_range(a, req.word_lo, req.word_hi)

    if target_energy is None:
        target_energy = model.synth_params.default_energy[repl_ids]
    if target_pitch is None:
        target_pitch = model.synth_params.default_pitch[repl_ids]

    ref_prosody = extract_prosody(ref_mel, a)
    energy, pitch, dur = [], [], []
    inserted = False
    for ref_i, ph in enumerate(a.phones):
        in_span = req.word_lo <= ph.word_index <= req.word_hi
        if in_span and not inserted:
            inserted = True
            energy.extend(target_energy)
            pitch.extend(target_pitch)
            dur.extend(predicted_durs)
        if not in_span:
            energy.append(ref_prosody.energy[ref_i])
            pitch.append(ref_prosody.pitch[ref_i])
            dur.append(ph.duration)
    prosody = ProsodyFeatures(np.array(energy), np.array(pitch),
                              np.array(dur, dtype=np.int64))
    return edited_align, mask, t_prime, prosody, old_region


def edit(req: EditRequest, model: StitchModel,
         ref_mel: MelSpectrogram | None = None,
         predicted_durs=None, griffin_lim_iters: int = 32,
         render_audio: bool = True):
    """Full editing pipeline: resize, splice, synthesize, stitch, render.

    Returns (edited MelSpectrogram, edited Waveform or None). predicted_durs
    overrides the duration-table prediction (used for identity edits).
    """
    if ref_mel is None:
        ref_mel = load_melb(req.ref_mel_path, model.mel_config)
    if ref_mel.config.fingerprint() != model.fingerprint:
        raise StitchError("reference mel config does not match checkpoint")

    edited_align, mask, t_prime, prosody, old_region = plan_edit(
        ref_mel, req, model, predicted_durs)
    spliced = splice_reference(ref_mel, old_region, len(mask))
    synth = synth_for_alignment(edited_align, prosody, model)
    if len(synth) != t_prime or len(spliced) != t_prime:
        raise StitchError("synthesized length does not match spliced timeline")

    _, final = stitch_forward(spliced, synth, model)
    out_mel = MelSpectrogram(final.data, model.mel_config)
    if not render_audio:
        return out_mel, None
    wav = griffin_lim(out_mel, iters=griffin_lim_iters)
    return out_mel, wav


# ---------------------------------------------------------------------------
# checkpoint container ".asck"

ASCK_MAGIC = b"ASCK"
ASCK_VERSION = 1


def _model_tensors(model: StitchModel) -> dict[str, np.ndarray]:
    out = {
        "da.w_a": model.da.w_a.data,
        "da.w_b": model.da.w_b.data,
        "da.w_v": model.da.w_v.data,
        "da.w_o": model.da.w_o.data,
    }
    for i in range(POSTNET_LAYERS):
        out[f"postnet.w{i}"] = model.postnet.weights[i].data
        out[f"postnet.b{i}"] = model.postnet.biases[i].data
    out.update(model.synth_params.tensors())
    out["duration_table"] = model.duration_table
    return out


def save_checkpoint(model: StitchModel, path):
    tensors = _model_tensors(model)
    header = {
        "version": ASCK_VERSION,
        "fingerprint": model.fingerprint,
        "mel_config": {
            "sample_rate": model.mel_config.sample_rate,
            "n_fft": model.mel_config.n_fft,
            "hop": model.mel_config.hop,
            "win": model.mel_config.win,
            "n_mels": model.mel_config.n_mels,
            "fmin": model.mel_config.fmin,
            "fmax": model.mel_config.fmax,
            "log_floor": model.mel_config.log_floor,
        },
        "inventory": model.inventory.tokens,
        "steps": model.steps,
        "loss_history": model.loss_history,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(ASCK_MAGIC)
        f.write(struct.pack("<II", ASCK_VERSION, len(blob)))
        f.write(blob)
        for v in tensors.values():
            tc.write_tensor(f, v)


def load_checkpoint(path) -> StitchModel:
    with open(path, "rb") as f:
        if f.read(4) != ASCK_MAGIC:
            raise StitchError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != ASCK_VERSION:
            raise StitchError(f"{path}: unsupported version {version}")
        header = json.loads(f.read(hlen))
        tensors = {}
        for entry in header["tensors"]:
            arr = tc.read_tensor(f)
            if list(arr.shape) != entry["shape"]:
                raise StitchError(f"{path}: shape mismatch for {entry['name']}")
            tensors[entry["name"]] = arr
    cfg = MelConfig(**header["mel_config"])
    if cfg.fingerprint() != header["fingerprint"]:
        raise StitchError(f"{path}: fingerprint mismatch")
    da = DaParams(*(Tensor(tensors[f"da.{n}"], requires_grad=True)
                    for n in ("w_a", "w_b", "w_v", "w_o")))
    pn = PostnetParams(
        [Tensor(tensors[f"postnet.w{i}"], requires_grad=True)
         for i in range(POSTNET_LAYERS)],
        [Tensor(tensors[f"postnet.b{i}"], requires_grad=True)
         for i in range(POSTNET_LAYERS)])
    model = StitchModel(
        da=da, postnet=pn, mel_config=cfg,
        inventory=PhonemeInventory(header["inventory"]),
        synth_params=ToySynthParams.from_tensors(tensors),
        duration_table=tensors["duration_table"],
        steps=int(header["steps"]),
        loss_history=[float(x) for x in header["loss_history"]],
    )
    return model
