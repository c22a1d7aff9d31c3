"""``vawsvc`` command line: extract, train, convert, evaluate, stats.

Every command prints line-oriented JSON records. Exit status is 0 when no
item failed, 1 when some items failed, 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
import wave
from pathlib import Path
from typing import Dict, List, Optional

from .config import DEFAULT_VOCODER, RunConfig, load_config
from .conversion import ConversionRequest, convert, resynthesize, run_vocoder
from .errors import CompatibilityError, ConfigurationError, DivergenceError, VocoderError
from .evaluation import summarize, track_mcd, write_report
from .features import (
    compute_f0_stats,
    fit_scaler,
    normalize_track,
    read_feature_file,
    write_feature_file,
)
from .model import ModelCheckpoint
from .training import train

log = logging.getLogger("vawsvc")

EXPECTED_RATE = 16000


def emit(record: dict, stream=None):
    print(json.dumps(record, sort_keys=True), file=stream or sys.stdout, flush=True)


def _config(args, required=False) -> Optional[RunConfig]:
    if args.config is None:
        if required:
            raise ConfigurationError("this command needs --config PATH")
        return None
    return load_config(args.config, seed=args.seed)


# ---------------------------------------------------------------------------
# extract


def check_wav(path: Path):
    with wave.open(str(path), "rb") as w:
        rate, channels, width = w.getframerate(), w.getnchannels(), w.getsampwidth()
    if rate != EXPECTED_RATE:
        raise ValueError(f"sample rate {rate} Hz rejected: resample to {EXPECTED_RATE} Hz first")
    if channels != 1:
        raise ValueError(f"{channels} channels rejected: input must be mono")
    if width != 2:
        raise ValueError("only 16-bit PCM WAV is supported")


def cmd_extract(args) -> int:
    cfg = _config(args)
    audio_dir = Path(args.audio_dir or (cfg.corpus_root if cfg else "."))
    out_dir = Path(args.out_dir or (cfg.feature_cache if cfg else "features"))
    template = (cfg.vocoder if cfg else DEFAULT_VOCODER)["analysis"]
    if not audio_dir.is_dir():
        raise ConfigurationError(f"audio directory not found: {audio_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg:
        cfg.dump(out_dir / "config.resolved.yaml")
    errors = 0
    for wav in sorted(p for p in audio_dir.rglob("*") if p.suffix.lower() == ".wav"):
        out = out_dir / wav.relative_to(audio_dir).with_suffix(".svcf")
        rec = {"input": str(wav), "output": str(out)}
        if out.exists() and out.stat().st_mtime >= wav.stat().st_mtime:
            emit(dict(rec, status="cached"))
            continue
        try:
            check_wav(wav)
            out.parent.mkdir(parents=True, exist_ok=True)
            run_vocoder(template, wav, out)
            read_feature_file(out)
        except (wave.Error, EOFError, ValueError, VocoderError) as exc:
            errors += 1
            out.unlink(missing_ok=True)
            emit(dict(rec, status="error", message=str(exc).splitlines()[0]))
            continue
        emit(dict(rec, status="extracted"))
    return 1 if errors else 0


# ---------------------------------------------------------------------------
# train


def load_feature_cache(cfg: RunConfig):
    cache = cfg.feature_cache
    if not cache.is_dir():
        raise ConfigurationError(
            f"feature cache {cache} is missing; run `vawsvc extract` to populate it first"
        )
    tracks = []
    for name, index in sorted(cfg.singers.items(), key=lambda kv: kv[1]):
        files = sorted((cache / name).glob("*.svcf"))
        tracks.extend(read_feature_file(f, singer_id=index) for f in files)
    present = {t.singer_id for t in tracks}
    if not tracks:
        raise ConfigurationError(
            f"no .svcf files under {cache}/<singer>/; run `vawsvc extract` to populate the cache"
        )
    return tracks, present


def cmd_train(args) -> int:
    cfg = _config(args, required=True)
    if len(cfg.singers) < 2:
        raise ConfigurationError("training needs at least two singers in the roster")
    tracks, present = load_feature_cache(cfg)
    if len(present) < 2:
        raise ConfigurationError(f"features found for only {len(present)} singer(s); need at least two")
    scaler = fit_scaler(tracks)
    dataset = [normalize_track(t, scaler) for t in tracks]
    out = cfg.checkpoint_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.resolved.yaml")
    log_path = out / "train.log"
    log_path.unlink(missing_ok=True)
    try:
        ckpt = train(dataset, cfg.training, cfg.model, scaler, singers=cfg.singers,
                     checkpoint_dir=out, log_path=log_path)
    except DivergenceError as exc:
        emit({"status": "diverged", "message": str(exc), "last_good": str(out / "last_good.vawc")})
        return 1
    emit({"status": "trained", "checkpoint": str(out / "final.vawc"), "digest": ckpt.digest(),
          "seed": cfg.seed, "step": ckpt.training_step})
    return 0


# ---------------------------------------------------------------------------
# convert


def _roster(ckpt: ModelCheckpoint, cfg: Optional[RunConfig]) -> Dict[str, int]:
    if cfg is not None and ckpt.singers and cfg.singers != ckpt.singers:
        raise CompatibilityError(
            f"config roster {cfg.singers} does not match the checkpoint roster {ckpt.singers}"
        )
    return ckpt.singers or (cfg.singers if cfg else {})


def cmd_convert(args) -> int:
    cfg = _config(args)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else (cfg.checkpoint_dir / "final.vawc" if cfg else None)
    if ckpt_path is None:
        raise ConfigurationError("pass --checkpoint or a --config with checkpoint_dir")
    ckpt = ModelCheckpoint.load(ckpt_path)
    roster = _roster(ckpt, cfg)
    if args.target not in roster:
        raise ConfigurationError(f"unknown singer {args.target!r}; known singers: {', '.join(sorted(roster))}")
    source_id = None
    if args.source is not None:
        if args.source not in roster:
            raise ConfigurationError(f"unknown source singer {args.source!r}; known singers: {', '.join(sorted(roster))}")
        source_id = roster[args.source]
    vocoder = cfg.vocoder if cfg else DEFAULT_VOCODER
    inp = Path(args.input)
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    out_svcf, out_wav = stem.with_suffix(".svcf"), stem.with_suffix(".wav")
    with tempfile.TemporaryDirectory() as tmp:
        if inp.suffix.lower() == ".wav":
            check_wav(inp)
            feat = Path(tmp) / "source.svcf"
            run_vocoder(vocoder["analysis"], inp, feat)
            source = read_feature_file(feat, singer_id=source_id)
        else:
            source = read_feature_file(inp, singer_id=source_id)
    converted = convert(ConversionRequest(source, roster[args.target], ckpt))
    write_feature_file(converted, out_svcf)
    rec = {"status": "converted", "input": str(inp), "target": args.target, "features": str(out_svcf)}
    if not args.features_only:
        resynthesize(converted, vocoder["synthesis"], out_wav)
        rec["wav"] = str(out_wav)
    emit(rec)
    return 0


# ---------------------------------------------------------------------------
# evaluate


def parse_manifest(path) -> List[tuple]:
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        entries.append((lineno, line.split()))
    return entries


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    conv_dir, ref_dir = Path(args.converted_dir), Path(args.reference_dir)
    records, errors = [], 0
    for lineno, cols in parse_manifest(args.manifest):
        try:
            if len(cols) not in (3, 4):
                raise ValueError("expected: direction converted reference [source]")
            direction, conv_name, ref_name = cols[:3]
            conv = read_feature_file(conv_dir / conv_name)
            ref = read_feature_file(ref_dir / ref_name)
            rep = track_mcd(conv, ref, (conv_name, ref_name))
            rec = {"type": "pair", "direction": direction, "converted": conv_name, "reference": ref_name,
                   "mcd_db": rep.mcd_db, "n_aligned_frames": rep.n_aligned_frames,
                   "alignment_path_length": rep.alignment_path_length, "zero_effort_mcd_db": None}
            if len(cols) == 4:
                src = read_feature_file(ref_dir / cols[3])
                rec["source"] = cols[3]
                rec["zero_effort_mcd_db"] = track_mcd(src, ref, (cols[3], ref_name)).mcd_db
        except (OSError, ValueError) as exc:
            errors += 1
            rec = {"type": "error", "line": lineno, "entry": " ".join(cols), "message": str(exc)}
        records.append(rec)
    records.extend(summarize(records))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(records, out)
    if cfg:
        cfg.dump(out.with_name(out.name + ".config.yaml"))
    for r in records:
        emit(r)
    return 1 if errors else 0


# ---------------------------------------------------------------------------
# stats


def cmd_stats(args) -> int:
    cfg = _config(args)
    if args.checkpoint:
        ckpt = ModelCheckpoint.load(args.checkpoint)
        names = {i: n for n, i in ckpt.singers.items()}
        for index, st in sorted(ckpt.f0_stats_per_singer.items()):
            emit(dict(st.to_dict(), singer=names.get(index, str(index)), index=index))
        return 0
    if cfg is None:
        raise ConfigurationError("pass --checkpoint or --config")
    tracks, _ = load_feature_cache(cfg)
    errors = 0
    for name, index in sorted(cfg.singers.items(), key=lambda kv: kv[1]):
        mine = [t for t in tracks if t.singer_id == index]
        try:
            emit(dict(compute_f0_stats(mine).to_dict(), singer=name, index=index))
        except ValueError as exc:
            errors += 1
            emit({"singer": name, "index": index, "error": str(exc)})
    return 1 if errors else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vawsvc", description="Non-parallel singing voice conversion (VAW-GAN).")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("extract", help="run vocoder analysis on 16 kHz WAV files")
    e.add_argument("audio_dir", nargs="?")
    e.add_argument("out_dir", nargs="?")
    e.set_defaults(func=cmd_extract)

    t = sub.add_parser("train", help="train on the feature cache")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("convert", help="convert one utterance to a target singer")
    c.add_argument("input", help="source .wav or .svcf")
    c.add_argument("--target", required=True, help="target singer name")
    c.add_argument("--source", help="source singer name (uses utterance F0 statistics if omitted)")
    c.add_argument("--checkpoint")
    c.add_argument("--out", required=True, help="output path stem; writes <stem>.svcf and <stem>.wav")
    c.add_argument("--features-only", action="store_true", help="skip waveform synthesis")
    c.set_defaults(func=cmd_convert)

    v = sub.add_parser("evaluate", help="MCD report for a pairing manifest")
    v.add_argument("converted_dir")
    v.add_argument("reference_dir")
    v.add_argument("manifest", help="lines of: direction converted reference [source]")
    v.add_argument("--out", required=True, help="report path (JSON lines)")
    v.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("stats", help="per-singer log-F0 statistics")
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, CompatibilityError, VocoderError) as exc:
        emit({"status": "error", "message": str(exc)}, stream=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
