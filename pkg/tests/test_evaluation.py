import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import random_track
from vawsvc import kernels
from vawsvc.errors import DegenerateFrameError
from vawsvc.evaluation import (
    MCD_CONST,
    dtw_align,
    mcd,
    path_cost,
    probe_accuracy,
    read_report,
    sp_to_mcep,
    summarize,
    write_report,
    zero_effort_mcd,
)

FREQ = np.linspace(0, math.pi, 513)


def formant_log_power(w, centre=0.35 * math.pi, bw=0.08, tilt=1.5):
    """Log power of a single resonance on a sloping floor, any frequency w."""
    return -tilt * w + np.log(1e-3 + 1.0 / (1.0 + ((w - centre) / bw) ** 2))


# -- mel-cepstral analysis --------------------------------------------------


def test_flat_envelope_has_no_shape():
    mc = sp_to_mcep(np.full((3, 513), 0.37))
    assert mc.dim == 24 and len(mc) == 3
    assert np.max(np.abs(mc.frames)) < 1e-12


def test_gain_invariance_exact_for_binary_gains():
    sp = np.exp(formant_log_power(FREQ))[None]
    base = sp_to_mcep(sp).frames
    for k in (2.0, 0.125, 2.0 ** 40):
        assert np.array_equal(sp_to_mcep(k * sp).frames, base)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-8, 1e8))
def test_gain_invariance(k):
    sp = np.exp(formant_log_power(FREQ, centre=1.1))[None]
    np.testing.assert_allclose(sp_to_mcep(k * sp).frames, sp_to_mcep(sp).frames, atol=1e-12)


def test_gain_lands_in_c0():
    sp = np.exp(formant_log_power(FREQ))[None]
    a = sp_to_mcep(sp, keep_c0=True).frames
    b = sp_to_mcep(4.0 * sp, keep_c0=True).frames
    assert b[0, 0] - a[0, 0] == pytest.approx(0.5 * math.log(4.0), abs=1e-12)


def reference_mcep(log_power, order=24, alpha=0.42):
    """Direct quadrature of the warped cosine series of the log amplitude."""

    def unwarp(wt):
        # inverse all-pass map is the same map with -alpha
        return wt - 2.0 * math.atan2(alpha * math.sin(wt), 1.0 + alpha * math.cos(wt))

    out = []
    for m in range(order + 1):
        val, _ = quad(lambda wt: 0.5 * log_power(unwarp(wt)) * math.cos(m * wt), 0, math.pi,
                      limit=400, epsabs=1e-12)
        out.append(val / math.pi * (1 if m == 0 else 2))
    return np.array(out)


def test_single_formant_matches_quadrature_reference():
    mc = sp_to_mcep(np.exp(formant_log_power(FREQ))[None], keep_c0=True).frames[0]
    ref = reference_mcep(lambda w: float(formant_log_power(w)))
    assert np.max(np.abs(mc - ref)) < 1e-3


def test_degenerate_spectrum():
    with pytest.raises(DegenerateFrameError):
        sp_to_mcep(np.zeros((2, 513)))


# -- DTW --------------------------------------------------------------------


def brute_force_cost(a, b):
    """Enumerate every monotone path from (0,0) to the corner."""
    n, m = len(a), len(b)
    d = np.linalg.norm(a[:, None] - b[None], axis=2)
    best = math.inf

    def walk(i, j, acc):
        nonlocal best
        acc += d[i, j]
        if acc >= best:
            return
        if (i, j) == (n - 1, m - 1):
            best = acc
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)

    walk(0, 0, 0.0)
    return best


def check_path(path, n, m):
    assert tuple(path[0]) == (0, 0) and tuple(path[-1]) == (n - 1, m - 1)
    steps = {tuple(s) for s in np.diff(path, axis=0)}
    assert steps <= {(1, 0), (0, 1), (1, 1)}


def test_self_alignment_is_diagonal(rng):
    a = rng.normal(size=(15, 24))
    path = dtw_align(a, a)
    assert np.array_equal(path, np.stack([np.arange(15)] * 2, 1))


def test_duplicated_frame(rng):
    a = rng.normal(size=(12, 24))
    b = np.insert(a, 5, a[5], axis=0)
    path, cost = dtw_align(a, b, return_cost=True)
    assert len(path) == 13
    assert cost == 0.0
    check_path(path, 12, 13)


@pytest.mark.parametrize("seed", range(5))
def test_random_pair_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(10, 3)), rng.normal(size=(12, 3))
    path, cost = dtw_align(a, b, return_cost=True)
    check_path(path, 10, 12)
    best = brute_force_cost(a, b)
    assert cost == pytest.approx(best, rel=1e-12)
    assert path_cost(a, b, path) == pytest.approx(best, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 25), st.integers(0, 2**31))
def test_dtw_not_worse_than_diagonal(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 4)), rng.normal(size=(n, 4))
    path, cost = dtw_align(a, b, return_cost=True)
    check_path(path, n, n)
    assert cost <= np.linalg.norm(a - b, axis=1).sum() + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31))
def test_backends_agree(n, m, seed):
    rng = np.random.default_rng(seed)
    cost = rng.random((n, m))
    if kernels.compiled_backend is None:
        pytest.skip("compiled kernel not built")
    acc_c = kernels.compiled_backend.accumulated_cost(cost)
    acc_p = kernels.python_backend.accumulated_cost(cost)
    np.testing.assert_allclose(acc_c, acc_p, rtol=1e-14)
    assert np.array_equal(kernels.compiled_backend.backtrack(acc_c), kernels.python_backend.backtrack(acc_p))


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        dtw_align(np.zeros((0, 24)), np.zeros((3, 24)))


# -- MCD ----------------------------------------------------------------------


def test_identical_is_zero(rng):
    a = rng.normal(size=(8, 24))
    assert mcd(a, a).mcd_db == 0.0


def test_single_unit_difference():
    a = np.zeros((1, 24))
    b = a.copy()
    b[0, 3] = 1.0
    oracle = 10 * math.sqrt(2) / math.log(10)
    assert oracle == pytest.approx(6.1419, abs=1e-4)
    assert mcd(a, b).mcd_db == pytest.approx(oracle, rel=1e-12)
    assert MCD_CONST == pytest.approx(10 / math.log(10))


def test_path_out_of_range():
    with pytest.raises(ValueError):
        mcd(np.zeros((2, 24)), np.zeros((2, 24)), path=[[0, 0], [2, 1]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 10))
def test_scale_law_and_symmetry(seed, s):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(6, 24)), rng.normal(size=(9, 24))
    path = dtw_align(a, b)
    base = mcd(a, b, path)
    assert base.mcd_db >= 0 and base.n_aligned_frames > 0
    assert mcd(b, a, path[:, ::-1]).mcd_db == pytest.approx(base.mcd_db, rel=1e-12)
    diff = b[path[:, 1]] - a[path[:, 0]]
    scaled = mcd(a[path[:, 0]], a[path[:, 0]] + s * diff)
    assert scaled.mcd_db == pytest.approx(s * base.mcd_db, rel=1e-9, abs=1e-12)


def test_mcd_example_oracle(rng):
    a, b = rng.normal(size=(5, 24)), rng.normal(size=(5, 24))
    oracle = np.mean([10 / math.log(10) * math.sqrt(2 * sum((x - y) ** 2 for x, y in zip(u, v)))
                      for u, v in zip(a, b)])
    assert mcd(a, b).mcd_db == pytest.approx(oracle, rel=1e-12)


def test_zero_effort_self_pair(rng):
    t = random_track(rng, n_frames=30)
    assert zero_effort_mcd(t, t).mcd_db == 0.0


def test_zero_effort_toy_singers_differ():
    from vawsvc import toy

    corpus = toy.make_corpus(frames_per_singer=400, n_eval_songs=1, notes_per_song=6, seed=3)
    a, b = corpus.eval_pairs[0]
    assert zero_effort_mcd(a, b).mcd_db > 1.0


# -- probe and reports ------------------------------------------------------------


def test_probe_separable_and_chance(rng):
    a = rng.normal(size=(400, 5))
    b = rng.normal(size=(400, 5)) + np.array([6.0, 0, 0, 0, 0])
    # Bayes accuracy for a 6-sigma gap is Phi(3) = 0.9987
    assert probe_accuracy(a, b) > 0.98
    assert abs(probe_accuracy(a, rng.normal(size=(400, 5))) - 0.5) < 0.1


def test_report_round_trip(tmp_path):
    recs = [
        {"type": "pair", "direction": "A->B", "mcd_db": 2.0, "zero_effort_mcd_db": 4.0},
        {"type": "pair", "direction": "A->B", "mcd_db": 4.0, "zero_effort_mcd_db": None},
    ]
    summ = summarize(recs)
    mc = [s for s in summ if s["metric"] == "mcd_db"][0]
    assert (mc["mean"], mc["std"], mc["count"]) == (3.0, 1.0, 2)
    write_report(recs + summ, tmp_path / "r.jsonl")
    assert read_report(tmp_path / "r.jsonl") == json.loads(json.dumps(recs + summ))
