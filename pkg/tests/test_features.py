import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_track
from vawsvc.errors import (
    DegenerateFrameError,
    FeatureCorruptionError,
    FeatureFormatError,
    InsufficientDataError,
    PreconditionError,
)
from vawsvc.features import (
    HEADER_SIZE,
    LOG_FLOOR,
    CorpusScaler,
    F0Stats,
    FeatureTrack,
    compute_f0_stats,
    denormalize_track,
    fit_scaler,
    lg_transform_f0,
    normalize_track,
    read_feature_file,
    write_feature_file,
)

SCALER = CorpusScaler(math.log(80.0), math.log(800.0))


def empty_track():
    return FeatureTrack(16000, 5000, np.zeros(0, np.float32), np.zeros((0, 513), np.float32),
                        np.zeros((0, 513), np.float32))


# -- SVCF layout ------------------------------------------------------------


def test_empty_track_is_header_only(tmp_path):
    # 7 fields: 4-byte magic + six u32
    assert HEADER_SIZE == 4 + 6 * 4 == 28
    p = tmp_path / "e.svcf"
    write_feature_file(empty_track(), p)
    assert p.stat().st_size == 28


def test_one_frame_size_and_layout(tmp_path, rng):
    t = random_track(rng, n_frames=1)
    p = tmp_path / "one.svcf"
    write_feature_file(t, p)
    raw = p.read_bytes()
    assert len(raw) == 28 + (1 + 513 + 513) * 4 == 28 + 4108
    assert raw[:4] == b"SVCF"
    assert struct.unpack_from("<6I", raw, 4) == (1, 16000, 5000, 1, 513, 513)
    payload = np.frombuffer(raw, "<f4", offset=28)
    assert payload[0] == t.f0[0]
    assert np.array_equal(payload[1:514], t.sp[0])
    assert np.array_equal(payload[514:], t.ap[0])


def test_round_trip_is_bit_exact(tmp_path, rng):
    t = random_track(rng, n_frames=25, singer_id=3)
    p = tmp_path / "t.svcf"
    write_feature_file(t, p)
    back = read_feature_file(p, singer_id=3)
    assert back.identical(t)


def test_bad_magic(tmp_path, rng):
    p = tmp_path / "bad.svcf"
    write_feature_file(random_track(rng, n_frames=2), p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(FeatureFormatError):
        read_feature_file(p)


def test_bad_version(tmp_path, rng):
    p = tmp_path / "v.svcf"
    write_feature_file(random_track(rng, n_frames=2), p)
    raw = bytearray(p.read_bytes())
    raw[4:8] = struct.pack("<I", 2)
    p.write_bytes(bytes(raw))
    with pytest.raises(FeatureFormatError):
        read_feature_file(p)


def test_missing_frame_is_corruption(tmp_path, rng):
    p = tmp_path / "short.svcf"
    write_feature_file(random_track(rng, n_frames=10), p)
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) - 4 * (1 + 513 + 513)])  # 9 frames of payload
    with pytest.raises(FeatureCorruptionError):
        read_feature_file(p)


def test_write_rejects_invalid(tmp_path, rng):
    t = random_track(rng, n_frames=3)
    t.ap[1, 7] = 1.5
    with pytest.raises(PreconditionError):
        write_feature_file(t, tmp_path / "x.svcf")
    t = random_track(rng, n_frames=3)
    t.f0[0] = 5.0
    with pytest.raises(PreconditionError):
        write_feature_file(t, tmp_path / "x.svcf")
    t = random_track(rng, n_frames=3)
    t.sp[0, 0] = -1.0
    with pytest.raises(PreconditionError):
        write_feature_file(t, tmp_path / "x.svcf")
    assert not (tmp_path / "x.svcf").exists()


# -- normalization ----------------------------------------------------------


def one_frame(sp, f0=200.0):
    sp = np.asarray(sp, np.float32)[None]
    return FeatureTrack(16000, 5000, np.array([f0], np.float32), sp, np.zeros_like(sp))


def test_uniform_frame():
    n = normalize_track(one_frame(np.full(513, 2.0)), SCALER)
    assert n.energy[0] == 1026.0
    np.testing.assert_allclose(np.exp(n.log_sp_norm[0]) - LOG_FLOOR, 1 / 513, rtol=1e-12)


def test_f0_scaling_endpoints_and_unvoiced():
    t = FeatureTrack(16000, 5000, np.array([80.0, 800.0, 0.0], np.float64),
                     np.ones((3, 513)), np.zeros((3, 513)))
    n = normalize_track(t, SCALER)
    assert n.f0_scaled[0] == pytest.approx(-1.0, abs=1e-12)
    assert n.f0_scaled[1] == pytest.approx(1.0, abs=1e-12)
    assert n.f0_scaled[2] == 0.0
    assert n.voicing.tolist() == [True, True, False]


def test_out_of_range_f0_is_clamped():
    scaled = SCALER.scale([50.0, 1500.0])
    assert scaled.tolist() == [-1.0, 1.0]


def test_degenerate_frame():
    with pytest.raises(DegenerateFrameError):
        normalize_track(one_frame(np.zeros(513)), SCALER)


def test_unit_sum_and_monotone(rng):
    t = random_track(rng, n_frames=50)
    n = normalize_track(t, SCALER)
    sums = (np.exp(n.log_sp_norm) - LOG_FLOOR).sum(axis=1)
    assert np.all(np.abs(sums - 1) < 1e-5)
    assert np.all(n.energy > 0)
    v = n.voicing
    order = np.argsort(t.f0[v])
    assert np.all(np.diff(n.f0_scaled[v][order]) >= 0)
    assert np.all((n.f0_scaled[v] >= -1) & (n.f0_scaled[v] <= 1))


def test_denormalize_examples():
    n = normalize_track(one_frame(np.full(513, 2.0)), SCALER)
    np.testing.assert_allclose(denormalize_track(n, SCALER), np.full((1, 513), 2.0), rtol=1e-4)
    n.energy = np.array([1.0])
    n.log_sp_norm = np.full((1, 513), math.log(1 / 513 + LOG_FLOOR))
    np.testing.assert_allclose(denormalize_track(n), np.full((1, 513), 1 / 513), rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-12, 4))
def test_denormalize_round_trip(seed, log_scale):
    # 120 dB of dynamic range per frame; far below the floor the subtraction
    # of the floor cancels catastrophically in float64
    rng = np.random.default_rng(seed)
    sp = 10.0 ** rng.uniform(-12, 0, (6, 513)) * 10.0 ** log_scale
    t = FeatureTrack(16000, 5000, np.zeros(6), sp, np.zeros((6, 513)))
    back = denormalize_track(normalize_track(t, SCALER))
    np.testing.assert_allclose(back, sp, rtol=1e-4)


def test_fit_scaler(rng):
    tracks = [random_track(rng, n_frames=30) for _ in range(3)]
    s = fit_scaler(tracks)
    logs = np.log(np.concatenate([t.f0[t.f0 > 0] for t in tracks]).astype(np.float64))
    assert s.log_f0_min == logs.min() and s.log_f0_max == logs.max()
    with pytest.raises(InsufficientDataError):
        fit_scaler([empty_track()])


def test_scaler_unscale_inverts():
    f0 = np.array([0.0, 100.0, 333.0, 799.0])
    back = SCALER.unscale(SCALER.scale(f0), f0 > 0)
    np.testing.assert_allclose(back, f0, rtol=1e-12)


# -- F0 statistics ------------------------------------------------------------


def f0_track(values):
    values = np.asarray(values, np.float64)
    n = len(values)
    return FeatureTrack(16000, 5000, values, np.ones((n, 4)), np.zeros((n, 4)))


def test_constant_f0_rejected():
    with pytest.raises(InsufficientDataError):
        compute_f0_stats([f0_track([200.0] * 10)])


def test_two_point_stats():
    s = compute_f0_stats([f0_track([100.0, 400.0])])
    # hand computation: mean of logs, population std of a symmetric pair
    assert s.mean_log_f0 == pytest.approx(math.log(200.0), abs=1e-12)
    assert s.std_log_f0 == pytest.approx(math.log(2.0), abs=1e-12)
    assert s.n_voiced_frames == 2


def test_unvoiced_track_contributes_nothing():
    a = compute_f0_stats([f0_track([100.0, 0.0, 400.0])])
    b = compute_f0_stats([f0_track([100.0, 400.0]), f0_track([0.0, 0.0, 0.0])])
    assert a == b


def test_no_voiced_frames():
    with pytest.raises(InsufficientDataError):
        compute_f0_stats([f0_track([0.0, 0.0])])


# -- log-Gaussian transform ---------------------------------------------------


def test_lg_identity_and_mean_mapping():
    s = F0Stats(math.log(150.0), 0.2, 100)
    f0 = np.array([0.0, 90.0, 150.0, 410.0, 0.0])
    out = lg_transform_f0(f0, s, s)
    np.testing.assert_allclose(out, f0, rtol=1e-9)
    assert out[0] == 0.0 and out[4] == 0.0
    src = F0Stats(math.log(120.0), 0.1, 10)
    tgt = F0Stats(math.log(240.0), 0.3, 10)
    assert lg_transform_f0([120.0], src, tgt)[0] == pytest.approx(240.0, rel=1e-12)


def test_lg_monte_carlo(rng):
    src = F0Stats(math.log(130.0), 0.15, 1)
    tgt = F0Stats(math.log(260.0), 0.25, 1)
    n = 100_000
    f0 = np.exp(rng.normal(src.mean_log_f0, src.std_log_f0, n))
    out = np.log(lg_transform_f0(f0, src, tgt))
    se_mean = tgt.std_log_f0 / math.sqrt(n)
    se_std = tgt.std_log_f0 / math.sqrt(2 * n)
    assert abs(out.mean() - tgt.mean_log_f0) < 3 * se_mean
    assert abs(out.std() - tgt.std_log_f0) < 3 * se_std


stats_strategy = st.builds(
    F0Stats,
    st.floats(math.log(60), math.log(900)),
    st.floats(0.01, 1.0),
    st.just(1),
)


@settings(max_examples=100, deadline=None)
@given(stats_strategy, stats_strategy, st.lists(st.one_of(st.just(0.0), st.floats(60, 900)), min_size=1, max_size=30))
def test_lg_inverse_and_voicing(a, b, f0):
    f0 = np.array(f0)
    there = lg_transform_f0(f0, a, b)
    back = lg_transform_f0(there, b, a)
    assert np.array_equal(there > 0, f0 > 0)
    np.testing.assert_allclose(back, f0, rtol=1e-6)
