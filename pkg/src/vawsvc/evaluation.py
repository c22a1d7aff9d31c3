"""Objective evaluation: mel-cepstra, DTW alignment and mel-cepstral distortion."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from . import kernels
from .errors import DegenerateFrameError, ShapeError
from .features import LOG_FLOOR, FeatureTrack

MCEP_ORDER = 24
MCEP_ALPHA = 0.42  # all-pass warping constant for 16 kHz
MCD_CONST = 10.0 / math.log(10.0)


@dataclass
class McepSequence:
    """Mel-cepstra c1..cD per frame (c0, the gain term, is dropped)."""

    frames: np.ndarray
    utterance_id: str = ""
    singer_id: Optional[int] = None

    def __len__(self):
        return int(self.frames.shape[0])

    @property
    def dim(self) -> int:
        return int(self.frames.shape[1])


@dataclass
class MetricReport:
    mcd_db: float
    n_aligned_frames: int
    alignment_path_length: int
    pair: Tuple[str, str] = ("", "")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pair"] = list(self.pair)
        return d


# ---------------------------------------------------------------------------
# mel-cepstral analysis


def freqt(c: np.ndarray, order: int, alpha: float) -> np.ndarray:
    """All-pass frequency warping of cepstra (rows of ``c``) to ``order``.

    Standard recursive form: input coefficients are fed from the highest
    quefrency down to c(0).
    """
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    n_in = c.shape[1]
    beta = 1.0 - alpha * alpha
    d = np.zeros((c.shape[0], order + 1))
    for i in range(n_in - 1, -1, -1):
        prev = d.copy()
        d[:, 0] = c[:, i] + alpha * prev[:, 0]
        if order >= 1:
            d[:, 1] = beta * prev[:, 0] + alpha * prev[:, 1]
        for j in range(2, order + 1):
            d[:, j] = prev[:, j - 1] + alpha * (prev[:, j] - d[:, j - 1])
    return d


@lru_cache(maxsize=8)
def warping_matrix(n_in: int, order: int, alpha: float) -> np.ndarray:
    """freqt is linear; precompute it as an (n_in, order + 1) matrix."""
    w = freqt(np.eye(n_in), order, alpha)
    w.setflags(write=False)
    return w


def sp_to_mcep(sp, order: int = MCEP_ORDER, alpha: float = MCEP_ALPHA, utterance_id: str = "",
               singer_id: Optional[int] = None, keep_c0: bool = False) -> McepSequence:
    """Mel-cepstrum (gamma = 0) of power spectral envelopes.

    ``sp`` holds ``n_fft // 2 + 1`` bins per frame. Each frame is divided
    by its maximum and floored at ``LOG_FLOOR`` before the log, so the floor
    scales with the frame and c1..cD are gain invariant (bit-exactly for
    power-of-two gains). The gain goes back into c0.
    """
    sp = np.atleast_2d(np.asarray(sp, dtype=np.float64))
    if sp.ndim != 2 or sp.shape[1] < 2:
        raise ShapeError("sp must be a (T, n_bins) array")
    peak = sp.max(axis=1, keepdims=True)
    bad = np.flatnonzero(~(peak[:, 0] > 0))
    if bad.size:
        raise DegenerateFrameError(f"non-positive spectral frames at indices {bad[:10].tolist()}")
    n_bins = sp.shape[1]
    n_fft = 2 * (n_bins - 1)
    log_p = np.log(np.maximum(sp / peak, LOG_FLOOR))
    r = np.fft.irfft(log_p, n=n_fft, axis=1)[:, :n_bins]
    r[:, 0] *= 0.5
    r[:, -1] *= 0.5
    mc = r @ warping_matrix(n_bins, order, float(alpha))
    if keep_c0:
        # a log-power offset enters only c0, at half weight (log amplitude)
        mc[:, 0] += 0.5 * np.log(peak[:, 0])
    frames = mc if keep_c0 else mc[:, 1:]
    return McepSequence(np.ascontiguousarray(frames), utterance_id, singer_id)


# ---------------------------------------------------------------------------
# alignment and distortion


def _frames(seq) -> np.ndarray:
    return np.asarray(seq.frames if isinstance(seq, McepSequence) else seq, dtype=np.float64)


def dtw_align(a, b, return_cost: bool = False):
    """Minimum-cost monotone alignment under Euclidean frame distance.

    Returns an ``(L, 2)`` array of ``(index_in_a, index_in_b)`` pairs from
    (0, 0) to (len(a) - 1, len(b) - 1) using steps (1,0), (0,1), (1,1).
    """
    fa, fb = _frames(a), _frames(b)
    if fa.shape[0] == 0 or fb.shape[0] == 0:
        raise ValueError("dtw_align needs two non-empty sequences")
    if fa.shape[1] != fb.shape[1]:
        raise ShapeError("sequences differ in coefficient dimension")
    acc = kernels.accumulated_cost(cdist(fa, fb))
    path = kernels.backtrack(acc)
    if return_cost:
        return path, float(acc[-1, -1])
    return path


def path_cost(a, b, path) -> float:
    fa, fb = _frames(a), _frames(b)
    path = np.asarray(path)
    return float(np.linalg.norm(fa[path[:, 0]] - fb[path[:, 1]], axis=1).sum())


def mcd(converted, target, path=None) -> MetricReport:
    """Mel-cepstral distortion in dB over aligned frame pairs.

    ``path`` pairs (converted index, target index); when omitted the two
    sequences must have equal length and are compared frame by frame.
    """
    fc, ft = _frames(converted), _frames(target)
    if path is None:
        if fc.shape[0] != ft.shape[0]:
            raise ValueError("sequences differ in length; pass an alignment path")
        path = np.stack([np.arange(fc.shape[0])] * 2, axis=1)
    path = np.asarray(path, dtype=np.int64).reshape(-1, 2)
    if path.shape[0] == 0:
        raise ValueError("empty alignment path")
    if (path < 0).any() or path[:, 0].max() >= fc.shape[0] or path[:, 1].max() >= ft.shape[0]:
        raise ValueError("alignment path index out of range")
    diff = ft[path[:, 1]] - fc[path[:, 0]]
    dist = np.sqrt(2.0 * np.sum(diff * diff, axis=1))
    value = MCD_CONST * dist.sum() / path.shape[0]
    pair = (
        getattr(converted, "utterance_id", ""),
        getattr(target, "utterance_id", ""),
    )
    return MetricReport(float(value), int(np.unique(path[:, 0]).size), int(path.shape[0]), pair)


def track_mcd(converted: FeatureTrack, target: FeatureTrack, ids: Tuple[str, str] = ("", "")) -> MetricReport:
    """MCEP extraction, DTW and MCD between two feature tracks."""
    a = sp_to_mcep(converted.sp, utterance_id=ids[0], singer_id=converted.singer_id)
    b = sp_to_mcep(target.sp, utterance_id=ids[1], singer_id=target.singer_id)
    return mcd(a, b, dtw_align(a, b))


def zero_effort_mcd(source: FeatureTrack, target: FeatureTrack, ids: Tuple[str, str] = ("", "")) -> MetricReport:
    """MCD between unconverted source and target renditions."""
    return track_mcd(source, target, ids)


# ---------------------------------------------------------------------------
# probe classifier


def probe_accuracy(class_a: np.ndarray, class_b: np.ndarray, seed: int = 0, train_fraction: float = 0.5) -> float:
    """Held-out accuracy of a least-squares linear classifier separating two
    sets of feature vectors."""
    rng = np.random.default_rng(seed)
    x = np.concatenate([class_a, class_b]).astype(np.float64)
    y = np.concatenate([-np.ones(len(class_a)), np.ones(len(class_b))])
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    n_train = int(len(x) * train_fraction)
    mu, sd = x[:n_train].mean(0), x[:n_train].std(0) + 1e-8
    design = np.hstack([(x - mu) / sd, np.ones((len(x), 1))])
    w, *_ = np.linalg.lstsq(design[:n_train], y[:n_train], rcond=None)
    pred = np.sign(design[n_train:] @ w)
    return float(np.mean(pred == y[n_train:]))


# ---------------------------------------------------------------------------
# reports


def summarize(records: Iterable[dict]) -> List[dict]:
    """Per-direction mean/std/count for every metric present in ``records``."""
    groups = {}
    for r in records:
        if r.get("type") != "pair":
            continue
        for metric in ("mcd_db", "zero_effort_mcd_db"):
            if r.get(metric) is not None:
                groups.setdefault((r["direction"], metric), []).append(r[metric])
    out = []
    for (direction, metric), vals in sorted(groups.items()):
        v = np.asarray(vals)
        out.append({
            "type": "summary", "direction": direction, "metric": metric,
            "mean": float(v.mean()), "std": float(v.std()), "count": int(v.size),
        })
    return out


def write_report(records: Sequence[dict], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_report(path) -> List[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
