"""Synthetic two-singer corpus of harmonic vowel spectra.

Each singer renders melodies (sequences of vowel/pitch/duration notes) with
its own formant scaling, key, singer's-formant peak and tempo jitter. The
spectral envelope also depends on F0: F1 is pulled up towards the
fundamental on high notes (formant tuning), spectral tilt flattens as pitch
rises, and a shallow harmonic ripple sits at multiples of F0. Used by
tests and the acceptance experiment; nothing here is needed for real data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .features import FeatureTrack

SAMPLE_RATE = 16000
FRAME_SHIFT_US = 5000
N_BINS = 513
FREQS = np.arange(N_BINS) * SAMPLE_RATE / (2 * (N_BINS - 1))

# (F1, F2, F3) in Hz
VOWELS = np.array([
    [730.0, 1090.0, 2440.0],   # a
    [270.0, 2290.0, 3010.0],   # i
    [300.0, 870.0, 2240.0],    # u
    [530.0, 1840.0, 2480.0],   # e
    [570.0, 840.0, 2410.0],    # o
])
BANDWIDTHS = np.array([90.0, 110.0, 160.0])
SCALE_STEPS = np.array([-5, -3, -1, 0, 2, 4, 5, 7])


@dataclass(frozen=True)
class ToySinger:
    singer_id: int
    formant_scale: float
    key_hz: float
    singer_formant_hz: float
    singer_formant_gain: float
    tilt: float


SINGERS = (
    ToySinger(0, formant_scale=1.0, key_hz=130.0, singer_formant_hz=2800.0, singer_formant_gain=0.35, tilt=1.4),
    ToySinger(1, formant_scale=1.25, key_hz=250.0, singer_formant_hz=3600.0, singer_formant_gain=0.05, tilt=2.3),
)


@dataclass
class Song:
    vowels: np.ndarray      # vowel index per note
    steps: np.ndarray       # semitones relative to the singer's key
    durations: np.ndarray   # nominal frames per note


def random_song(rng: np.random.Generator, n_notes: int) -> Song:
    return Song(
        vowels=rng.integers(0, len(VOWELS), n_notes),
        steps=rng.choice(SCALE_STEPS, n_notes),
        durations=rng.integers(24, 64, n_notes),
    )


def resonator(f: np.ndarray, centre: float, bandwidth: float) -> np.ndarray:
    """Power response of a second-order resonance with unit gain at DC."""
    r = f / centre
    return 1.0 / ((1.0 - r * r) ** 2 + (f * bandwidth / centre**2) ** 2)


def envelope(vowel: int, f0: float, singer: ToySinger) -> np.ndarray:
    """Linear power envelope for one voiced frame.

    A cascade of formant resonators (deep valleys, floored 70 dB below the
    peak) plus a singer's-formant boost, a pitch-dependent tilt and a
    shallow harmonic ripple.
    """
    formants = VOWELS[vowel] * singer.formant_scale
    # F1 tracks the fundamental when the note climbs past it
    f1 = formants[0]
    formants = formants.copy()
    formants[0] = f1 + np.logaddexp(0.0, (1.2 * f0 - f1) / 40.0) * 40.0
    p = np.ones(N_BINS)
    for f, b in zip(formants, BANDWIDTHS * singer.formant_scale):
        p *= resonator(FREQS, f, b)
    peak = resonator(singer.singer_formant_hz, singer.singer_formant_hz, 250.0)
    p *= 1.0 + 30.0 * singer.singer_formant_gain * resonator(FREQS, singer.singer_formant_hz, 250.0) / peak
    slope = singer.tilt - 0.9 * np.log2(f0 / 200.0)
    p *= (1.0 + FREQS / 400.0) ** (-slope)
    p *= 1.0 + 0.12 * np.cos(2 * np.pi * FREQS / f0)
    # noise floor 70 dB below the peak, about the range of vocoder envelopes
    return p + 1e-7 * p.max()


def unvoiced_envelope(singer: ToySinger) -> np.ndarray:
    return 1e-3 * (1.0 + FREQS / 1000.0) ** (-0.5 * singer.tilt) + 1e-6


def aperiodicity(voiced: bool) -> np.ndarray:
    if not voiced:
        return np.full(N_BINS, 0.95)
    return np.clip(0.01 + 0.8 * (FREQS / 8000.0) ** 2, 0.0, 1.0)


def render(song: Song, singer: ToySinger, rng: np.random.Generator, gap_frames: Tuple[int, int] = (2, 6)) -> FeatureTrack:
    """Synthesize one rendition of ``song`` by ``singer``."""
    f0s, sps, aps = [], [], []
    smoothed = None
    for vowel, step, dur in zip(song.vowels, song.steps, song.durations):
        n = max(4, int(round(dur * rng.uniform(0.8, 1.25))))
        gap = int(rng.integers(gap_frames[0], gap_frames[1] + 1))
        for _ in range(gap):
            f0s.append(0.0)
            sps.append(unvoiced_envelope(singer) * np.exp(0.05 * rng.standard_normal(N_BINS)) * 1e-2)
            aps.append(aperiodicity(False))
        target = float(step)
        if smoothed is None:
            smoothed = target
        loud = rng.uniform(0.5, 2.0)
        phase = rng.uniform(0, 2 * np.pi)
        for k in range(n):
            smoothed += 0.3 * (target - smoothed)
            vib = 0.3 * np.sin(2 * np.pi * 5.5 * k * FRAME_SHIFT_US * 1e-6 + phase)
            f0 = singer.key_hz * 2.0 ** ((smoothed + vib) / 12.0)
            amp = loud * min(1.0, (k + 1) / 6.0) * min(1.0, (n - k) / 8.0 + 0.3)
            sp = envelope(int(vowel), f0, singer) * amp * np.exp(0.03 * rng.standard_normal(N_BINS))
            f0s.append(f0)
            sps.append(sp)
            aps.append(aperiodicity(True))
    return FeatureTrack(
        sample_rate_hz=SAMPLE_RATE,
        frame_shift_us=FRAME_SHIFT_US,
        f0=np.asarray(f0s, dtype=np.float32),
        sp=np.asarray(sps, dtype=np.float32),
        ap=np.asarray(aps, dtype=np.float32),
        singer_id=singer.singer_id,
    )


@dataclass
class ToyCorpus:
    train: List[FeatureTrack]
    # parallel renditions: eval_pairs[k] = (singer-0 track, singer-1 track) of song k
    eval_pairs: List[Tuple[FeatureTrack, FeatureTrack]] = field(default_factory=list)

    def frames_per_singer(self):
        counts = {}
        for t in self.train:
            counts[t.singer_id] = counts.get(t.singer_id, 0) + t.n_frames
        return counts


def make_corpus(frames_per_singer: int = 20000, n_eval_songs: int = 3, notes_per_song: int = 40,
                seed: int = 0, singers: Sequence[ToySinger] = SINGERS) -> ToyCorpus:
    """Non-parallel training renditions plus parallel evaluation pairs."""
    rng = np.random.default_rng(seed)
    train = []
    for singer in singers:
        total = 0
        while total < frames_per_singer:
            track = render(random_song(rng, notes_per_song), singer, rng)
            keep = min(track.n_frames, frames_per_singer - total)
            if keep < track.n_frames:
                track = FeatureTrack(track.sample_rate_hz, track.frame_shift_us, track.f0[:keep],
                                     track.sp[:keep], track.ap[:keep], track.singer_id)
            train.append(track)
            total += keep
    pairs = []
    for _ in range(n_eval_songs):
        song = random_song(rng, notes_per_song)
        pairs.append(tuple(render(song, s, rng) for s in singers[:2]))
    return ToyCorpus(train, pairs)
