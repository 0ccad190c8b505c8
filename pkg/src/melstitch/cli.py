"""Command-line surface: corpus prep, training, editing, evaluation, plots.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import evaluate as eval_mod
from .align import AlignmentError, MaskRegion, parse_alignment
from .baselines import complete_synthesis_swap, featswitch
from .melkit import (AudioFormatError, MelConfig, griffin_lim, load_melb,
                     load_wav, save_melb, save_wav, wav_to_mel)
from .plot import mel_to_image, write_png, write_ppm
from .stitcher import (StitchModel, TrainConfig, edit, load_checkpoint,
                       save_checkpoint, train)
from .synth import SynthError
from .tensorcore import AdamState, NumericError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _load_config_file(path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(text.decode())
    return json.loads(text)


def _mel_config_from(doc: dict) -> MelConfig:
    return MelConfig(**doc)


def _parse_span(text: str) -> tuple[int, int]:
    parts = text.split(":")
    if len(parts) == 1:
        lo = hi = int(parts[0])
    elif len(parts) == 2:
        lo, hi = int(parts[0]), int(parts[1])
    else:
        raise ValueError(f"bad span {text!r}")
    return lo, hi


def _parse_replacement(text: str) -> tuple[list[str], list[tuple[str, int]]]:
    """Syntax: 'word=p1,p2+word2=p3' -> words plus (phone, word idx) pairs."""
    words, phones = [], []
    for w, group in enumerate(text.split("+")):
        if "=" not in group:
            raise ValueError(f"bad replacement group {group!r}")
        word, plist = group.split("=", 1)
        words.append(word)
        for p in plist.split(","):
            p = p.strip()
            if p:
                phones.append((p, w))
    if not words or not phones:
        raise ValueError("empty replacement")
    return words, phones


# ---------------------------------------------------------------------------
# subcommands


def cmd_make_toy_corpus(args) -> int:
    items, inventory, _ = corpus_mod.make_toy_corpus(
        args.items, seed=args.seed, synth_seed=args.synth_seed)
    manifest = corpus_mod.write_corpus(items, inventory, args.out,
                                       corpus_mod.TOY_MEL_CONFIG, args.synth_seed)
    print(f"wrote {args.items} items, manifest {manifest}")
    return EXIT_OK


def cmd_extract(args) -> int:
    src = Path(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = MelConfig() if args.config is None else _mel_config_from(
        _load_config_file(args.config).get("mel_config", {}))
    entries, warnings, tokens = [], [], set()
    for wav_path in sorted(src.glob("*.wav")):
        stem = wav_path.stem
        align_path = src / f"{stem}.align.json"
        if not align_path.exists():
            warnings.append(f"{stem}: no alignment file")
            continue
        try:
            align = parse_alignment(align_path.read_text())
            mel = wav_to_mel(load_wav(wav_path), cfg)
        except (AlignmentError, AudioFormatError, ValueError) as e:
            warnings.append(f"{stem}: {e}")
            continue
        if align.total_frames != len(mel):
            warnings.append(f"{stem}: alignment sums to {align.total_frames} "
                            f"frames, mel has {len(mel)}")
            continue
        save_melb(mel, out / f"{stem}.melb")
        (out / f"{stem}.align.json").write_text(align_path.read_text())
        tokens.update(ph.phoneme for ph in align.phones)
        entries.append({"id": stem, "melb": f"{stem}.melb",
                        "align": f"{stem}.align.json", "frames": len(mel)})
    manifest = {
        "mel_config": {
            "sample_rate": cfg.sample_rate, "n_fft": cfg.n_fft, "hop": cfg.hop,
            "win": cfg.win, "n_mels": cfg.n_mels, "fmin": cfg.fmin,
            "fmax": cfg.fmax, "log_floor": cfg.log_floor,
        },
        "inventory": sorted(tokens),
        "synth_seed": args.synth_seed,
        "items": entries,
        "warnings": warnings,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{len(entries)} items, {len(warnings)} warnings")
    return EXIT_OK


def cmd_train(args) -> int:
    doc, cfg, inventory, pairs = corpus_mod.load_manifest(args.manifest)
    if not pairs:
        print("error: empty manifest", file=sys.stderr)
        return EXIT_DATA
    corpus = [(mel, align) for _, mel, align in pairs]
    table = corpus_mod.duration_table([a for _, a in corpus], inventory)
    from .synth import ToySynthParams
    params = ToySynthParams.seeded(len(inventory), cfg.n_mels,
                                   seed=doc.get("synth_seed", 7))
    model = StitchModel.init(cfg, inventory, params, table,
                             c_m=args.cm, c_n=args.cn,
                             postnet_width=args.postnet_width, seed=args.seed)
    tcfg = TrainConfig(steps=args.steps, lr=args.lr, seed=args.seed,
                       mask_fraction=args.mask_fraction,
                       batch_size=args.batch_size, c_m=args.cm, c_n=args.cn,
                       postnet_width=args.postnet_width,
                       lr_decay=args.lr_decay)
    opt = AdamState(model.params(), lr=tcfg.lr)
    train(tcfg, corpus, model, opt)
    save_checkpoint(model, args.out)
    loss_csv = args.loss_csv or str(Path(args.out).with_suffix(".loss.csv"))
    with open(loss_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for i, loss in enumerate(model.loss_history):
            w.writerow([i, f"{loss:.8f}"])
    print(f"trained {args.steps} steps, checkpoint {args.out}, losses {loss_csv}")
    return EXIT_OK


def cmd_edit(args) -> int:
    model = load_checkpoint(args.checkpoint)
    _, _, _, pairs = corpus_mod.load_manifest(args.manifest)
    match = [(i, m, a) for i, m, a in pairs if i == args.utt]
    if not match:
        print(f"error: unknown utterance {args.utt!r}", file=sys.stderr)
        return EXIT_DATA
    _, ref_mel, ref_align = match[0]
    lo, hi = _parse_span(args.span)
    words, phones = _parse_replacement(args.replacement)
    from .align import EditRequest
    req = EditRequest(ref_mel_path=args.utt, ref_align=ref_align,
                      word_lo=lo, word_hi=hi,
                      replacement_words=words, replacement_phones=phones)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = eval_mod.METHODS if args.method == "all" else (args.method,)
    for method in methods:
        mel = eval_mod.run_method(method, ref_mel, req, model)
        save_melb(mel, out / f"{args.utt}_{method}.melb")
        wav = griffin_lim(mel, iters=args.gl_iters)
        save_wav(wav, out / f"{args.utt}_{method}.wav")
        if method in ("swap", "featswitch") and args.seam_report:
            fn = complete_synthesis_swap if method == "swap" else featswitch
            res = fn(ref_mel, ref_align, req, model)
            (out / f"{args.utt}_{method}.seams.json").write_text(
                json.dumps({"method": method, "seams": list(res.seams)}))
        print(f"{method}: {len(mel)} frames -> {out / (args.utt + '_' + method)}.*")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    _, _, _, pairs = corpus_mod.load_manifest(args.manifest)
    if not pairs:
        print("error: empty manifest", file=sys.stderr)
        return EXIT_DATA
    methods = eval_mod.METHODS if args.method == "all" else (args.method,)
    rows = eval_mod.evaluate_methods(methods, pairs, model, args.edits,
                                     seed=args.seed)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["item", "method", "mcd"])
        for r in rows:
            w.writerow([r.item, r.method, f"{r.mcd:.6f}"])
        for method in methods:
            w.writerow(["mean", method, f"{eval_mod.mean_mcd(rows, method):.6f}"])
    for method in methods:
        print(f"{method}: mean MCD {eval_mod.mean_mcd(rows, method):.4f} dB")
    return EXIT_OK


def cmd_plot(args) -> int:
    mask = None
    if args.mask:
        s, e = args.mask.split(":")
        mask = MaskRegion(int(s), int(e))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.melb:
        mel = load_melb(path)
        img = mel_to_image(mel, mask)
        ext = args.format
        dest = out / (Path(path).stem + "." + ext)
        (write_png if ext == "png" else write_ppm)(img, dest)
        print(f"{path} -> {dest}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="melstitch",
                                description="mel-spectrogram speech editing toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    tp = sub.add_parser("make-toy-corpus", help="generate a synthetic corpus")
    tp.add_argument("--out", required=True)
    tp.add_argument("--items", type=int, default=60)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--synth-seed", type=int, default=7)
    tp.set_defaults(fn=cmd_make_toy_corpus)

    ep = sub.add_parser("extract", help="wav+alignment dir -> melb + manifest")
    ep.add_argument("--corpus", required=True)
    ep.add_argument("--out", required=True)
    ep.add_argument("--config", help="json/toml with a mel_config table")
    ep.add_argument("--synth-seed", type=int, default=7)
    ep.set_defaults(fn=cmd_extract)

    tr = sub.add_parser("train", help="train the stitch model")
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--steps", type=int, default=2000)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--mask-fraction", type=float, default=0.1)
    tr.add_argument("--batch-size", type=int, default=1)
    tr.add_argument("--cm", type=int, default=32)
    tr.add_argument("--cn", type=int, default=16)
    tr.add_argument("--postnet-width", type=int, default=512)
    tr.add_argument("--lr-decay", default="none", choices=["none", "cosine"])
    tr.add_argument("--loss-csv")
    tr.set_defaults(fn=cmd_train)

    ed = sub.add_parser("edit", help="edit one utterance")
    ed.add_argument("--checkpoint", required=True)
    ed.add_argument("--manifest", required=True)
    ed.add_argument("--utt", required=True)
    ed.add_argument("--span", required=True, help="word index LO[:HI]")
    ed.add_argument("--replacement", required=True,
                    help="'word=p1,p2+word2=p3,p4'")
    ed.add_argument("--method", default="attentionstitch",
                    choices=[*eval_mod.METHODS, "all"])
    ed.add_argument("--out", required=True)
    ed.add_argument("--gl-iters", type=int, default=32)
    ed.add_argument("--seam-report", action="store_true")
    ed.set_defaults(fn=cmd_edit)

    ev = sub.add_parser("eval", help="MCD table over held-out edits")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--method", default="all",
                    choices=[*eval_mod.METHODS, "all"])
    ev.add_argument("--edits", type=int, default=20)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", required=True)
    ev.set_defaults(fn=cmd_eval)

    pl = sub.add_parser("plot", help="render melb files to images")
    pl.add_argument("melb", nargs="+")
    pl.add_argument("--out", required=True)
    pl.add_argument("--mask", help="START:END frame overlay")
    pl.add_argument("--format", default="png", choices=["png", "ppm"])
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AlignmentError, AudioFormatError, SynthError, ValueError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
