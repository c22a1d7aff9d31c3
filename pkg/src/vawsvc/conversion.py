"""Run-time conversion and external-vocoder resynthesis."""
from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from .errors import CompatibilityError, VocoderError
from .features import (
    F0_MAX_HZ,
    F0_MIN_HZ,
    LOG_FLOOR,
    FeatureTrack,
    NormalizedTrack,
    compute_f0_stats,
    denormalize_track,
    lg_transform_f0,
    normalize_track,
    write_feature_file,
)
from .model import ModelCheckpoint, VAWGAN

log = logging.getLogger(__name__)


@dataclass
class ConversionRequest:
    source_track: FeatureTrack
    target_singer: int
    checkpoint: ModelCheckpoint


def _check_request(req: ConversionRequest):
    ckpt = req.checkpoint
    n = ckpt.config.n_singers
    if not 0 <= req.target_singer < n or req.target_singer not in ckpt.f0_stats_per_singer:
        raise IndexError(f"target singer {req.target_singer} not in checkpoint (singers 0..{n - 1})")
    src = req.source_track
    if ckpt.sample_rate_hz is not None and src.sample_rate_hz != ckpt.sample_rate_hz:
        raise CompatibilityError(
            f"source sample rate {src.sample_rate_hz} Hz != model {ckpt.sample_rate_hz} Hz"
        )
    if ckpt.frame_shift_us is not None and src.frame_shift_us != ckpt.frame_shift_us:
        raise CompatibilityError(
            f"source frame shift {src.frame_shift_us} us != model {ckpt.frame_shift_us} us"
        )
    if src.sp.shape[1] != ckpt.config.sp_dim:
        raise CompatibilityError(f"source SP has {src.sp.shape[1]} bins, model expects {ckpt.config.sp_dim}")


@torch.no_grad()
def decode_converted(model: VAWGAN, norm: NormalizedTrack, target: int, f0_cond: np.ndarray,
                     batch_size: int = 4096) -> np.ndarray:
    """Posterior-mean latents of ``norm`` decoded for ``target``."""
    out = []
    frames = torch.from_numpy(norm.log_sp_norm.astype(np.float32))
    f0 = torch.from_numpy(f0_cond.astype(np.float32))
    for start in range(0, frames.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        code = model.encode(frames[sl])
        singer = torch.full((code.mean.shape[0],), target, dtype=torch.long)
        out.append(model.decode(code.mean, singer, f0[sl]).double().numpy())
    if not out:
        return np.zeros((0, model.cfg.sp_dim))
    return np.concatenate(out)


def convert(request: ConversionRequest, model: Optional[VAWGAN] = None) -> FeatureTrack:
    """Convert ``request.source_track`` to the target singer.

    SP is re-estimated by the decoder and recombined with the source frame
    energy; F0 follows the log-Gaussian transform; AP is copied. A loaded
    ``model`` may be passed to avoid rebuilding it from the checkpoint.
    """
    _check_request(request)
    ckpt = request.checkpoint
    src = request.source_track
    model = model or ckpt.build_model()
    norm = normalize_track(src, ckpt.scaler)

    src_stats = ckpt.f0_stats_per_singer.get(src.singer_id) if src.singer_id is not None else None
    if src_stats is None:
        log.warning("source singer %r not in checkpoint; using utterance F0 statistics", src.singer_id)
        src_stats = compute_f0_stats([src])
    tgt_stats = ckpt.f0_stats_per_singer[request.target_singer]
    f0_hat = lg_transform_f0(src.f0, src_stats, tgt_stats)
    voiced = src.f0 > 0
    f0_hat[voiced] = np.clip(f0_hat[voiced], F0_MIN_HZ, F0_MAX_HZ)

    x_hat = decode_converted(model, norm, request.target_singer, ckpt.scaler.scale(f0_hat))
    # project onto unit-sum shapes so the source energy is carried exactly
    x_hat = x_hat - x_hat.max(axis=1, keepdims=True)
    shape = np.exp(x_hat)
    shape /= shape.sum(axis=1, keepdims=True)
    converted = NormalizedTrack(
        log_sp_norm=np.log(shape + LOG_FLOOR),
        energy=norm.energy,
        f0_scaled=ckpt.scaler.scale(f0_hat),
        voicing=voiced,
    )
    sp = denormalize_track(converted)
    return FeatureTrack(
        sample_rate_hz=src.sample_rate_hz,
        frame_shift_us=src.frame_shift_us,
        f0=f0_hat.astype(np.float32),
        sp=sp.astype(np.float32),
        ap=src.ap.copy(),
        singer_id=request.target_singer,
    )


# ---------------------------------------------------------------------------
# external vocoder


def format_command(template: Union[str, Sequence[str]], **fields) -> list:
    """Expand ``{input}``/``{output}`` placeholders in a command template."""
    parts = shlex.split(template) if isinstance(template, str) else list(template)
    return [p.format(**fields) for p in parts]


def run_vocoder(template, input_path, output_path, timeout: Optional[float] = None) -> None:
    """Run the external program; on failure no partial output is left."""
    output_path = Path(output_path)
    cmd = format_command(template, input=str(input_path), output=str(output_path))
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
    except FileNotFoundError as exc:
        output_path.unlink(missing_ok=True)
        raise VocoderError(f"vocoder program not found: {cmd[0]}", stderr=str(exc)) from exc
    except subprocess.TimeoutExpired as exc:
        output_path.unlink(missing_ok=True)
        raise VocoderError(f"vocoder timed out: {' '.join(cmd)}") from exc
    if proc.returncode != 0 or not output_path.exists():
        output_path.unlink(missing_ok=True)
        raise VocoderError(
            f"vocoder failed (exit {proc.returncode}): {' '.join(cmd)}\n{proc.stderr.strip()}",
            returncode=proc.returncode,
            stderr=proc.stderr,
        )


def resynthesize(track: FeatureTrack, vocoder_cmd, out_wav, feature_path=None) -> Path:
    """Write ``track`` as SVCF and synthesize a WAV with the external vocoder."""
    out_wav = Path(out_wav)
    with tempfile.TemporaryDirectory() as tmp:
        svcf = Path(feature_path) if feature_path else Path(tmp) / "track.svcf"
        write_feature_file(track, svcf)
        run_vocoder(vocoder_cmd, svcf, out_wav)
    return out_wav


def wav_duration(path) -> float:
    with wave.open(str(path), "rb") as w:
        return w.getnframes() / float(w.getframerate())
