"""Vocoder feature tracks: SVCF file I/O, normalization and F0 statistics.

Feature extraction itself is done by an external WORLD-style analysis
program; this module only reads and writes its output and applies the
per-frame transforms the model is trained on:

* spectral envelopes are split into a unit-sum shape (kept in log domain)
  and a per-frame energy that is passed through untouched;
* voiced log-F0 is mapped linearly onto [-1, 1] with corpus-level bounds;
* F0 is converted between singers with a log-Gaussian linear transform.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateFrameError,
    FeatureCorruptionError,
    FeatureFormatError,
    InsufficientDataError,
    PreconditionError,
)

MAGIC = b"SVCF"
VERSION = 1
HEADER = struct.Struct("<4sIIIIII")
HEADER_SIZE = HEADER.size  # 28 bytes

SP_DIM = 513
LOG_FLOOR = 1e-10
F0_MIN_HZ = 20.0
F0_MAX_HZ = 2000.0
UNVOICED = 0.0  # conditioning value for unvoiced frames


@dataclass
class FeatureTrack:
    """One utterance worth of vocoder frames.

    ``f0`` is in Hz with 0.0 marking unvoiced frames, ``sp`` is the linear
    power spectral envelope and ``ap`` the aperiodicity, both ``(n, dim)``.
    ``singer_id`` is not part of the SVCF file; it is attached by whoever
    knows which singer the file belongs to (None when unknown).
    """

    sample_rate_hz: int
    frame_shift_us: int
    f0: np.ndarray
    sp: np.ndarray
    ap: np.ndarray
    singer_id: Optional[int] = None

    def __post_init__(self):
        self.f0 = np.asarray(self.f0)
        self.sp = np.asarray(self.sp)
        self.ap = np.asarray(self.ap)

    @property
    def n_frames(self) -> int:
        return int(self.f0.shape[0])

    @property
    def voicing(self) -> np.ndarray:
        return self.f0 > 0

    def validate(self) -> "FeatureTrack":
        """Raise PreconditionError unless every track invariant holds."""
        n = self.f0.shape[0]
        if self.f0.ndim != 1:
            raise PreconditionError("f0 must be one-dimensional")
        if self.sp.ndim != 2 or self.ap.ndim != 2:
            raise PreconditionError("sp and ap must be (n_frames, dim) arrays")
        if self.sp.shape[0] != n or self.ap.shape[0] != n:
            raise PreconditionError(
                f"frame count mismatch: f0={n} sp={self.sp.shape[0]} ap={self.ap.shape[0]}"
            )
        if self.sample_rate_hz <= 0 or self.frame_shift_us <= 0:
            raise PreconditionError("sample rate and frame shift must be positive")
        for name, arr in (("f0", self.f0), ("sp", self.sp), ("ap", self.ap)):
            if not np.all(np.isfinite(arr)):
                raise PreconditionError(f"{name} contains non-finite values")
        if np.any(self.sp < 0):
            raise PreconditionError("sp must be non-negative")
        if np.any((self.ap < 0) | (self.ap > 1)):
            raise PreconditionError("ap must lie in [0, 1]")
        voiced = self.f0[self.f0 != 0]
        if np.any((voiced < F0_MIN_HZ) | (voiced > F0_MAX_HZ)):
            raise PreconditionError(
                f"f0 values must be 0 or within [{F0_MIN_HZ}, {F0_MAX_HZ}] Hz"
            )
        return self

    def identical(self, other: "FeatureTrack") -> bool:
        """Bitwise equality of metadata and float32 payload."""
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.frame_shift_us == other.frame_shift_us
            and self.singer_id == other.singer_id
            and self.sp.shape == other.sp.shape
            and self.ap.shape == other.ap.shape
            and _f32(self.f0).tobytes() == _f32(other.f0).tobytes()
            and _f32(self.sp).tobytes() == _f32(other.sp).tobytes()
            and _f32(self.ap).tobytes() == _f32(other.ap).tobytes()
        )


def _f32(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype="<f4")


def write_feature_file(track: FeatureTrack, path) -> None:
    """Write ``track`` in SVCF v1 layout (little-endian, float32 payload)."""
    track.validate()
    n = track.n_frames
    sp_dim = track.sp.shape[1]
    ap_dim = track.ap.shape[1]
    header = HEADER.pack(
        MAGIC, VERSION, int(track.sample_rate_hz), int(track.frame_shift_us), n, sp_dim, ap_dim
    )
    records = np.empty((n, 1 + sp_dim + ap_dim), dtype="<f4")
    records[:, 0] = track.f0
    records[:, 1 : 1 + sp_dim] = track.sp
    records[:, 1 + sp_dim :] = track.ap
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(records.tobytes())
        os.replace(tmp, path)
    except OSError:
        if tmp.exists():
            tmp.unlink()
        raise


def read_feature_file(path, singer_id: Optional[int] = None) -> FeatureTrack:
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        raise FeatureFormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, sr, shift, n, sp_dim, ap_dim = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FeatureFormatError(f"{path}: unsupported SVCF version {version}")
    if sp_dim == 0 or ap_dim == 0:
        raise FeatureCorruptionError(f"{path}: zero spectral dimension in header")
    width = 1 + sp_dim + ap_dim
    expected = HEADER_SIZE + 4 * n * width
    if len(data) != expected:
        raise FeatureCorruptionError(
            f"{path}: header declares {n} frames ({expected} bytes) but file has {len(data)} bytes"
        )
    records = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE).reshape(n, width)
    track = FeatureTrack(
        sample_rate_hz=sr,
        frame_shift_us=shift,
        f0=records[:, 0].astype(np.float32),
        sp=records[:, 1 : 1 + sp_dim].astype(np.float32),
        ap=records[:, 1 + sp_dim :].astype(np.float32),
        singer_id=singer_id,
    )
    try:
        track.validate()
    except PreconditionError as exc:
        raise FeatureCorruptionError(f"{path}: {exc}") from exc
    return track


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class CorpusScaler:
    """Log-F0 bounds used to map voiced F0 onto [-1, 1]."""

    log_f0_min: float
    log_f0_max: float

    def __post_init__(self):
        if not (np.isfinite(self.log_f0_min) and np.isfinite(self.log_f0_max)):
            raise PreconditionError("scaler bounds must be finite")
        if not self.log_f0_min < self.log_f0_max:
            raise PreconditionError("log_f0_min must be below log_f0_max")

    def scale(self, f0) -> np.ndarray:
        """Scaled F0 for voiced frames (clamped to [-1, 1]), 0.0 elsewhere."""
        f0 = np.asarray(f0, dtype=np.float64)
        out = np.full(f0.shape, UNVOICED)
        voiced = f0 > 0
        span = self.log_f0_max - self.log_f0_min
        out[voiced] = 2.0 * (np.log(f0[voiced]) - self.log_f0_min) / span - 1.0
        np.clip(out, -1.0, 1.0, out=out)
        return out

    def unscale(self, f0_scaled, voicing) -> np.ndarray:
        f0_scaled = np.asarray(f0_scaled, dtype=np.float64)
        voicing = np.asarray(voicing, dtype=bool)
        span = self.log_f0_max - self.log_f0_min
        out = np.zeros(f0_scaled.shape)
        out[voicing] = np.exp((f0_scaled[voicing] + 1.0) * 0.5 * span + self.log_f0_min)
        return out

    def to_dict(self) -> dict:
        return {"log_f0_min": self.log_f0_min, "log_f0_max": self.log_f0_max}

    @classmethod
    def from_dict(cls, d) -> "CorpusScaler":
        return cls(float(d["log_f0_min"]), float(d["log_f0_max"]))


def fit_scaler(tracks: Iterable[FeatureTrack]) -> CorpusScaler:
    """Corpus-level log-F0 min/max over voiced frames."""
    logs = [np.log(t.f0[t.f0 > 0].astype(np.float64)) for t in tracks]
    logs = np.concatenate(logs) if logs else np.empty(0)
    if logs.size == 0:
        raise InsufficientDataError("no voiced frames to fit the F0 scaler")
    lo, hi = float(logs.min()), float(logs.max())
    if not lo < hi:
        raise InsufficientDataError("voiced F0 is constant across the corpus; cannot rescale")
    return CorpusScaler(lo, hi)


@dataclass
class NormalizedTrack:
    """Model-facing view of a track.

    ``log_sp_norm`` is ``log(sp / energy + LOG_FLOOR)``; ``f0_scaled`` holds
    the [-1, 1] scaled log-F0 for voiced frames and 0.0 for unvoiced ones,
    with the mask kept separately in ``voicing``.
    """

    log_sp_norm: np.ndarray
    energy: np.ndarray
    f0_scaled: np.ndarray
    voicing: np.ndarray
    f0_hz: np.ndarray = field(default=None)
    singer_id: Optional[int] = None
    sample_rate_hz: int = 16000
    frame_shift_us: int = 5000

    @property
    def n_frames(self) -> int:
        return int(self.energy.shape[0])


def normalize_track(track: FeatureTrack, scaler: CorpusScaler) -> NormalizedTrack:
    track.validate()
    sp = track.sp.astype(np.float64)
    energy = sp.sum(axis=1)
    bad = np.flatnonzero(energy <= 0)
    if bad.size:
        raise DegenerateFrameError(f"all-zero spectral frames at indices {bad[:10].tolist()}")
    log_sp_norm = np.log(sp / energy[:, None] + LOG_FLOOR)
    f0 = track.f0.astype(np.float64)
    return NormalizedTrack(
        log_sp_norm=log_sp_norm,
        energy=energy,
        f0_scaled=scaler.scale(f0),
        voicing=f0 > 0,
        f0_hz=f0,
        singer_id=track.singer_id,
        sample_rate_hz=track.sample_rate_hz,
        frame_shift_us=track.frame_shift_us,
    )


def denormalize_track(norm: NormalizedTrack, scaler: Optional[CorpusScaler] = None) -> np.ndarray:
    """Recover linear SP from the log unit-sum shape and per-frame energy.

    The log floor is subtracted again so the round trip through
    normalize_track is exact up to rounding. ``scaler`` is accepted for
    symmetry with normalize_track; SP does not depend on it.
    """
    shape = np.exp(np.asarray(norm.log_sp_norm, dtype=np.float64)) - LOG_FLOOR
    np.maximum(shape, 0.0, out=shape)
    return shape * np.asarray(norm.energy, dtype=np.float64)[:, None]


# ---------------------------------------------------------------------------
# F0 statistics and log-Gaussian transform


@dataclass(frozen=True)
class F0Stats:
    mean_log_f0: float
    std_log_f0: float
    n_voiced_frames: int

    def __post_init__(self):
        if not self.std_log_f0 > 0:
            raise PreconditionError("std_log_f0 must be positive")

    def to_dict(self) -> dict:
        return {
            "mean_log_f0": self.mean_log_f0,
            "std_log_f0": self.std_log_f0,
            "n_voiced_frames": self.n_voiced_frames,
        }

    @classmethod
    def from_dict(cls, d) -> "F0Stats":
        return cls(float(d["mean_log_f0"]), float(d["std_log_f0"]), int(d["n_voiced_frames"]))


def _voiced_log_f0(f0_arrays: Iterable[np.ndarray]) -> np.ndarray:
    parts = []
    for f0 in f0_arrays:
        f0 = np.asarray(f0, dtype=np.float64)
        parts.append(np.log(f0[f0 > 0]))
    return np.concatenate(parts) if parts else np.empty(0)


def f0_stats_from_arrays(f0_arrays: Iterable[np.ndarray]) -> F0Stats:
    logs = _voiced_log_f0(f0_arrays)
    if logs.size == 0:
        raise InsufficientDataError("no voiced frames: cannot compute F0 statistics")
    mean = float(logs.mean())
    std = float(logs.std())  # population formula
    if not std > 1e-12:
        raise InsufficientDataError(
            "voiced log-F0 has zero variance; the log-Gaussian transform is undefined"
        )
    return F0Stats(mean, std, int(logs.size))


def compute_f0_stats(tracks: Sequence[FeatureTrack]) -> F0Stats:
    """Natural-log F0 mean and population std over voiced frames of ``tracks``."""
    return f0_stats_from_arrays(t.f0 for t in tracks)


def lg_transform_f0(f0, src: F0Stats, tgt: F0Stats) -> np.ndarray:
    """Map voiced F0 from source to target log-F0 statistics; unvoiced stays 0."""
    f0 = np.asarray(f0, dtype=np.float64)
    out = np.zeros(f0.shape)
    voiced = f0 > 0
    z = (np.log(f0[voiced]) - src.mean_log_f0) / src.std_log_f0
    out[voiced] = np.exp(z * tgt.std_log_f0 + tgt.mean_log_f0)
    return out
