"""Command-line WORLD analysis/synthesis adapter (requires ``pyworld``).

This is the default external vocoder program for the toolkit::

    vawsvc-world analyze input.wav output.svcf
    vawsvc-world synthesize input.svcf output.wav

Analysis uses Harvest for F0, CheapTrick for the spectral envelope and D4C
for aperiodicity with a 1024-point FFT (513 bins) at 5 ms frame shift.
Any program honouring the same two command shapes can replace it.
"""
from __future__ import annotations

import argparse
import sys
import wave
from pathlib import Path

import numpy as np

from .features import FeatureTrack, read_feature_file, write_feature_file

FFT_SIZE = 1024


def read_wav(path):
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM WAV is supported")
        rate, channels = w.getframerate(), w.getnchannels()
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    if channels != 1:
        raise ValueError(f"{path}: expected mono audio, got {channels} channels")
    return data.astype(np.float64) / 32768.0, rate


def write_wav(path, x, rate):
    pcm = np.clip(np.round(np.asarray(x) * 32767.0), -32768, 32767).astype("<i2")
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with wave.open(str(tmp), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(rate))
        w.writeframes(pcm.tobytes())
    tmp.replace(path)


def analyze(wav_path, svcf_path, frame_period_ms: float = 5.0, f0_floor: float = 71.0, f0_ceil: float = 800.0):
    import pyworld

    x, fs = read_wav(wav_path)
    f0, t = pyworld.harvest(x, fs, frame_period=frame_period_ms, f0_floor=f0_floor, f0_ceil=f0_ceil)
    sp = pyworld.cheaptrick(x, f0, t, fs, fft_size=FFT_SIZE)
    ap = np.clip(pyworld.d4c(x, f0, t, fs, fft_size=FFT_SIZE), 0.0, 1.0)
    track = FeatureTrack(fs, int(round(frame_period_ms * 1000)), f0.astype(np.float32),
                         sp.astype(np.float32), ap.astype(np.float32))
    write_feature_file(track, svcf_path)
    return track


def synthesize(svcf_path, wav_path):
    import pyworld

    track = read_feature_file(svcf_path)
    y = pyworld.synthesize(
        track.f0.astype(np.float64),
        np.ascontiguousarray(track.sp, dtype=np.float64),
        np.ascontiguousarray(track.ap, dtype=np.float64),
        track.sample_rate_hz,
        track.frame_shift_us / 1000.0,
    )
    write_wav(wav_path, y, track.sample_rate_hz)
    return y


def main(argv=None):
    parser = argparse.ArgumentParser(prog="vawsvc-world", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze")
    a.add_argument("input")
    a.add_argument("output")
    a.add_argument("--frame-period", type=float, default=5.0)
    s = sub.add_parser("synthesize")
    s.add_argument("input")
    s.add_argument("output")
    args = parser.parse_args(argv)
    try:
        if args.command == "analyze":
            analyze(args.input, args.output, args.frame_period)
        else:
            synthesize(args.input, args.output)
    except Exception as exc:  # noqa: BLE001
        print(f"vawsvc-world: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
