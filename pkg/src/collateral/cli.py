"""Command-line interface.

Exit codes: 0 success, 1 internal error, 2 input error. The log level is
read from the ``COLLATERAL_LOG`` environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from collections import defaultdict
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, dsp
from .annotation_io import (
    AlignedUtterance,
    annotation_from_words,
    dumps_alignment,
    read_alignment_json,
    read_textgrid,
    textgrid_to_utterance,
    words_from_annotation,
)
from .baseline import LinearModel, frames_to_annotation, predict_codes
from .errors import InputError
from .metrics import (
    SesInput,
    aggregate,
    detection_counts,
    detection_report,
    identification_counts,
    identification_report,
    ses,
    ses_input,
)
from .pipeline import (
    FEATURE_SETS,
    ExperimentConfig,
    dataset_of,
    fit_model,
    frame_features,
    load_files,
    load_manifest,
    normalized_fbank,
    run_loso,
)
from .span_features import AsfConfig, audio_span_features
from .timeline import COLLATERAL_LABELS, Annotation, Segment
from .word_features import read_token_table, utterance_features

log = logging.getLogger("collateral")

FEATURE_KINDS = ("fbank", "f0", "prosodic", "concat", "asf", "stacked", "wordfeat")


def sha256_of(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def run_manifest(command: str, config: dict, inputs: Sequence[str], seed: int | None = None) -> dict:
    """Reproducibility record; contains nothing that varies between identical runs."""
    return {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "inputs": {str(p): sha256_of(p) for p in inputs},
        "seed": seed,
    }


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, ensure_ascii=False, allow_nan=False) + "\n"


def emit(text: str | bytes, output: str | None) -> None:
    if output is None or output == "-":
        if isinstance(text, bytes):
            sys.stdout.buffer.write(text)
        else:
            sys.stdout.write(text)
        return
    Path(output).write_bytes(text if isinstance(text, bytes) else text.encode("utf-8"))


def emit_sidecar(manifest: dict, output: str | None) -> None:
    if output and output != "-":
        Path(output + ".manifest.json").write_text(dump_json(manifest), encoding="utf-8")


# --------------------------------------------------------------------------
# commands


def cmd_convert(args) -> int:
    label_map = None
    if args.label_map:
        try:
            label_map = json.loads(Path(args.label_map).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InputError(f"{args.label_map}: invalid label map JSON ({e})") from None
    doc = read_textgrid(args.textgrid)
    stem = Path(args.textgrid).stem
    utt = textgrid_to_utterance(doc, args.tier, label_map, args.strict_labels,
                                args.file_id or stem, args.speaker_id or stem)
    emit(dumps_alignment([utt], with_phones=False), args.output)
    config = {"tier": args.tier, "strict_labels": args.strict_labels,
              "file_id": utt.file_id, "speaker_id": utt.speaker_id}
    inputs = [args.textgrid] + ([args.label_map] if args.label_map else [])
    emit_sidecar(run_manifest("convert", config, inputs), args.output)
    return 0


def _read_corpus(paths: Sequence[str]) -> dict[str, AlignedUtterance]:
    out: dict[str, AlignedUtterance] = {}
    for p in paths:
        for utt in read_alignment_json(p):
            if utt.file_id in out:
                raise InputError(f"{p}: duplicate file_id {utt.file_id!r}")
            out[utt.file_id] = utt
    return out


def cmd_eval(args) -> int:
    refs, hyps = _read_corpus(args.ref), _read_corpus(args.hyp)
    missing_hyp = sorted(set(refs) - set(hyps))
    missing_ref = sorted(set(hyps) - set(refs))
    if missing_hyp or missing_ref:
        raise InputError(f"unmatched file ids: no hypothesis for {missing_hyp}, "
                         f"no reference for {missing_ref}")
    files, det, ident = [], [], []
    ses_ref, ses_hyp = SesInput(0, 0), SesInput(0, 0)
    for fid in sorted(refs):
        ref_u, hyp_u = refs[fid], hyps[fid]
        ref = annotation_from_words(ref_u, args.merge_gap)
        hyp = annotation_from_words(hyp_u, args.merge_gap)
        dc, ic = detection_counts(ref, hyp), identification_counts(ref, hyp)
        if dc.t_collateral_ref <= 0:
            log.warning("%s: reference has no collateral time; error rates undefined", fid)
        det.append(dc)
        ident.append(ic)
        speech = ref_u.speech() if ref_u.words else None
        s_ref, s_hyp = ses_input(ref, speech), ses_input(hyp, speech)
        ses_ref, ses_hyp = ses_ref + s_ref, ses_hyp + s_hyp
        files.append({
            "file_id": fid,
            "speaker_id": ref_u.speaker_id,
            "detection": detection_report(dc).to_dict(),
            "identification": identification_report(ic).to_dict(),
            "ses": {"reference": ses(s_ref), "hypothesis": ses(s_hyp)},
        })
    report = {
        "manifest": run_manifest("eval", {"merge_gap": args.merge_gap}, list(args.ref) + list(args.hyp)),
        "files": files,
        "pooled": {
            "detection": aggregate(det).to_dict() if det else None,
            "identification": aggregate(ident).to_dict() if ident else None,
            "ses": {"reference": ses(ses_ref), "hypothesis": ses(ses_hyp)},
        },
    }
    emit(dump_json(report), args.output)
    return 0


def corpus_stats(utterances: Sequence[AlignedUtterance]) -> dict:
    per = defaultdict(lambda: {"counts": {l.value: 0 for l in COLLATERAL_LABELS},
                               "durations": {l.value: 0.0 for l in COLLATERAL_LABELS}})
    for utt in utterances:
        row = per[utt.speaker_id]
        for seg, lab in annotation_from_words(utt).segments:
            row["counts"][lab.value] += 1
            row["durations"][lab.value] += seg.duration
    speakers = [{"speaker_id": sid, **per[sid]} for sid in sorted(per)]
    totals = {"counts": {l.value: sum(s["counts"][l.value] for s in speakers) for l in COLLATERAL_LABELS},
              "durations": {l.value: sum(s["durations"][l.value] for s in speakers)
                            for l in COLLATERAL_LABELS}}
    return {"speakers": speakers, "totals": totals}


def write_stats_svg(stats: dict, path: str) -> None:
    try:
        import matplotlib
    except ImportError:
        raise InputError("--svg needs matplotlib (pip install 'artifact[plot]')") from None

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "collateral"
    ids = [s["speaker_id"] for s in stats["speakers"]]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(ids) + 2), 3.5))
    bottom = np.zeros(len(ids))
    for lab in COLLATERAL_LABELS:
        counts = np.array([s["counts"][lab.value] for s in stats["speakers"]], dtype=float)
        ax.bar(ids, counts, bottom=bottom, label=lab.value)
        bottom += counts
    ax.set_ylabel("disfluencies")
    ax.set_xlabel("speaker")
    ax.legend(fontsize="small", ncol=len(COLLATERAL_LABELS))
    plt.setp(ax.get_xticklabels(), rotation=45, ha="right")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_stats(args) -> int:
    utts = [u for p in args.annotations for u in read_alignment_json(p)]
    stats = corpus_stats(utts)
    report = {"manifest": run_manifest("stats", {}, list(args.annotations)), **stats}
    emit(dump_json(report), args.output)
    if args.svg:
        write_stats_svg(stats, args.svg)
    return 0


def _features(args, wave: dsp.Waveform, utts: list[AlignedUtterance]) -> dsp.FrameMatrix:
    kind = args.kind
    if kind == "f0":
        f0 = dsp.f0_track(wave)
        return dsp.FrameMatrix(np.column_stack([f0.values, f0.voiced.astype(float)]), f0.hop, 0.0)
    if kind == "wordfeat":
        if not utts:
            raise InputError("wordfeat needs an alignment with words")
        fbank = normalized_fbank(wave, utts)
        f0 = dsp.f0_track(wave)
        table = read_token_table(args.token_table) if args.token_table else None
        if table is not None and len(utts) != 1:
            raise InputError("a token table can only accompany a single-utterance alignment")
        rows = [utterance_features(u, table, fbank, f0) for u in utts]
        return dsp.FrameMatrix(np.vstack(rows), 0.0, 0.0)
    fbank = normalized_fbank(wave, utts)
    if kind == "fbank":
        return fbank
    if kind == "asf":
        return audio_span_features(fbank, AsfConfig(hop=fbank.hop))
    pros = dsp.prosodic_frames(dsp.f0_track(wave), fbank.frame_centers())
    if kind == "prosodic":
        return dsp.FrameMatrix(pros.data, fbank.hop, fbank.window)
    concat = fbank.hstack(pros)
    if kind == "concat":
        return concat
    return dsp.stack_frames(concat, args.context)


def cmd_features(args) -> int:
    wave = dsp.load_wav(args.wav)
    utts = read_alignment_json(args.alignment) if args.alignment else []
    fm = _features(args, wave, utts)
    payload = dsp.frame_matrix_to_csv(fm) if args.format == "csv" else dsp.frame_matrix_to_bytes(fm)
    emit(payload, args.output)
    inputs = [args.wav] + [p for p in (args.alignment, args.token_table) if p]
    config = {"kind": args.kind, "format": args.format, "context": args.context,
              "T": fm.n_frames, "D": fm.dim}
    emit_sidecar(run_manifest("features", config, inputs), args.output)
    log.info("%s: %d x %d", args.kind, fm.n_frames, fm.dim)
    return 0


def _experiment_config(args) -> ExperimentConfig:
    return ExperimentConfig(args.features, args.context, args.undersample_ratio, args.seed,
                            args.l2, args.lr, args.epochs, args.min_duration)


def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    records = load_manifest(args.manifest)
    files = load_files(records, cfg.features, cfg.context, args.jobs)
    model = fit_model(dataset_of(files), cfg)
    inputs = [args.manifest] + [p for r in records for p in (r.wav, r.alignment) if p]
    out = {"manifest": run_manifest("train", asdict(cfg), inputs, cfg.seed),
           "features": cfg.features, "context": cfg.context, "hop": files[0].hop,
           "model": model.to_dict()}
    emit(dump_json(out), args.output)
    return 0


def cmd_predict(args) -> int:
    try:
        saved = json.loads(Path(args.model).read_text(encoding="utf-8"))
        model = LinearModel.from_dict(saved["model"])
        kind, context = saved["features"], int(saved["context"])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise InputError(f"{args.model}: not a model file ({e})") from None
    wave = dsp.load_wav(args.wav)
    utts = read_alignment_json(args.alignment) if args.alignment else []
    fm = frame_features(wave, utts, kind, context)
    codes = predict_codes(model, fm.data)
    whole = frames_to_annotation(codes, fm.hop, args.min_duration,
                                 extent=Segment(0.0, max(wave.duration, fm.n_frames * fm.hop)))
    stem = Path(args.wav).stem
    if utts:
        hyps = [words_from_annotation(Annotation(u.file_id, u.speaker_id, u.extent,
                                             whole.clip(u.extent).segments)) for u in utts]
    else:
        hyps = [words_from_annotation(Annotation(stem, stem, whole.extent, whole.segments))]
    emit(dumps_alignment(hyps, with_phones=False), args.output)
    inputs = [args.model, args.wav] + ([args.alignment] if args.alignment else [])
    emit_sidecar(run_manifest("predict", {"min_duration": args.min_duration}, inputs), args.output)
    return 0


def cmd_loso(args) -> int:
    cfg = _experiment_config(args)
    records = load_manifest(args.manifest)
    if len({r.speaker_id for r in records}) < 2:
        raise InputError("leave-one-speaker-out needs at least 2 speakers")
    files = load_files(records, cfg.features, cfg.context, args.jobs)
    result = run_loso(files, cfg, args.jobs)
    inputs = [args.manifest] + [p for r in records for p in (r.wav, r.alignment) if p]
    report = {"manifest": run_manifest("loso", result.pop("config"), inputs, cfg.seed), **result}
    emit(dump_json(report), args.output)
    return 0


# --------------------------------------------------------------------------
# parser


def _ratio(text: str) -> float | None:
    if text.lower() in ("none", "inf", "off"):
        return None
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("ratio must be positive")
    return value


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--features", choices=FEATURE_SETS, default="baseline")
    p.add_argument("--context", type=int, default=7, help="stacked frames (odd)")
    p.add_argument("--undersample-ratio", type=_ratio, default=None,
                   help="fluent:disfluent frame ratio after sampling ('none' disables)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--lr", type=float, default=1.0, help="gradient step (capped at 1/L)")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--min-duration", type=float, default=0.030,
                   help="drop decoded segments shorter than this (s)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--output")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="collateral", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="TextGrid tier -> annotation JSON")
    p.add_argument("textgrid")
    p.add_argument("--tier", required=True)
    p.add_argument("--label-map", help="JSON object mapping interval text to F/R/MR/PR/RT")
    p.add_argument("--strict-labels", action="store_true",
                   help="fail on non-empty texts missing from the label map")
    p.add_argument("--file-id")
    p.add_argument("--speaker-id")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("eval", help="time-based detection/identification metrics and SES")
    p.add_argument("--ref", nargs="+", required=True)
    p.add_argument("--hyp", nargs="+", required=True)
    p.add_argument("--merge-gap", type=float, default=1e-3)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="per-speaker disfluency counts and durations")
    p.add_argument("annotations", nargs="*")
    p.add_argument("--svg", help="also write a stacked bar chart")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("features", help="extract a feature container from a WAV file")
    p.add_argument("wav")
    p.add_argument("--alignment")
    p.add_argument("--kind", choices=FEATURE_KINDS, required=True)
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.add_argument("--context", type=int, default=7)
    p.add_argument("--token-table", help="TSV of word_index, pos, embedding (wordfeat only)")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a frame classifier on a dataset manifest")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="decode a WAV file with a trained model")
    p.add_argument("wav")
    p.add_argument("--model", required=True)
    p.add_argument("--alignment")
    p.add_argument("--min-duration", type=float, default=0.030)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("loso", help="leave-one-speaker-out experiment")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_loso)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    level = getattr(logging, os.environ.get("COLLATERAL_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, OSError) as e:
        log.error("%s", e)
        return 2
    except Exception:
        log.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
