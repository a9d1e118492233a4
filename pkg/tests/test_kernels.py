"""The numba and numpy flavours of every hot kernel agree, and the env flag picks one."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hrpro import kernels
from hrpro._accel import HAVE_NUMBA

import oracles

unit = st.floats(0, 1, allow_nan=False, width=64)


def seqs(min_size=1, max_size=40):
    return arrays(np.float64, st.integers(min_size, max_size), elements=unit)


@st.composite
def seq_and_spans(draw):
    seq = draw(seqs())
    T = seq.shape[0]
    n = draw(st.integers(1, 8))
    s = np.array([draw(st.integers(0, T - 1)) for _ in range(n)], dtype=np.int64)
    e = np.array([draw(st.integers(int(a) + 1, T)) for a in s], dtype=np.int64)
    return seq, s, e


@st.composite
def attention_and_points(draw, max_T=30):
    T = draw(st.integers(1, max_T))
    # coarse grid values make ties and threshold hits common
    A = np.array(draw(st.lists(st.sampled_from([0.0, 0.05, 0.1, 0.5, 0.9, 0.95, 0.96, 1.0]), min_size=T, max_size=T)))
    pts = np.array(sorted(draw(st.sets(st.integers(0, T - 1), min_size=1, max_size=min(T, 5)))), dtype=np.int64)
    return A, pts


@given(seqs(), st.lists(unit, min_size=1, max_size=5), st.booleans())
def test_threshold_runs(seq, ths, below):
    th = np.array(sorted(ths))
    a = kernels.threshold_runs_nb(seq, th, below)
    b = kernels.threshold_runs_np(seq, th, below)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    # brute force: every maximal run of every threshold
    want = set()
    for t0 in th:
        hit = [(x < t0) if below else (x > t0) for x in seq] + [False]
        st_ = None
        for i, h in enumerate(hit):
            if h and st_ is None:
                st_ = i
            elif not h and st_ is not None:
                want.add((st_, i))
                st_ = None
    assert set(zip(a[0].tolist(), a[1].tolist())) == want


@given(seq_and_spans(), st.floats(0.05, 1.0))
def test_oic_flavours_and_oracle(case, inflation):
    seq, s, e = case
    a = kernels.oic_scores_nb(seq, s, e, inflation)
    b = kernels.oic_scores_np(seq, s, e, inflation)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    ref = [oracles.oic_bruteforce(seq, int(x), int(y), inflation) for x, y in zip(s, e)]
    np.testing.assert_allclose(a, ref, rtol=0, atol=1e-12)


@given(attention_and_points(), st.sampled_from([(0.95, 0.1), (0.5, 0.5), (0.9, 0.05), (0.0, 1.0)]))
def test_pseudo_snippet_flavours(case, th):
    A, pts = case
    t1, o1, b1 = kernels.pseudo_snippets_nb(A, pts, *th)
    t2, o2, b2 = kernels.pseudo_snippets_np(A, pts, *th)
    assert sorted(zip(t1.tolist(), o1.tolist())) == sorted(zip(t2.tolist(), o2.tolist()))
    np.testing.assert_array_equal(b1, b2)


@st.composite
def span_sets(draw, max_n=6):
    def one():
        s = draw(st.integers(0, 40)) / 2
        return s, s + draw(st.integers(1, 20)) / 2
    a = [one() for _ in range(draw(st.integers(0, max_n)))]
    b = [one() for _ in range(draw(st.integers(0, max_n)))]
    return np.array(a).reshape(-1, 2), np.array(b).reshape(-1, 2)


@given(span_sets())
def test_iou_matrix(case):
    a, b = case
    m1 = kernels.iou_matrix_nb(a[:, 0].copy(), a[:, 1].copy(), b[:, 0].copy(), b[:, 1].copy())
    m2 = kernels.iou_matrix_np(a[:, 0], a[:, 1], b[:, 0], b[:, 1])
    np.testing.assert_allclose(m1, m2, rtol=0, atol=1e-15)
    for i in range(len(a)):
        for j in range(len(b)):
            assert abs(m1[i, j] - oracles.iou_cells(a[i], b[j])) < 1e-12


@given(span_sets(max_n=8), st.floats(0.05, 2.0), st.sampled_from([0.0, 1e-3, 0.2]))
def test_soft_nms_flavours(case, sigma, min_score):
    spans, _ = case
    rng = np.random.default_rng(len(spans))
    sc = rng.choice([0.3, 0.5, 0.9, 0.95], size=len(spans)).astype(np.float64)
    s, e = spans[:, 0].copy(), spans[:, 1].copy()
    k1, v1 = kernels.soft_nms_nb(s, e, sc, sigma, min_score)
    k2, v2 = kernels.soft_nms_np(s, e, sc, sigma, min_score)
    np.testing.assert_array_equal(k1, k2)
    np.testing.assert_allclose(v1, v2, rtol=1e-13, atol=0)


@given(arrays(np.float64, st.tuples(st.integers(0, 6), st.integers(0, 5)),
              elements=st.sampled_from([0.0, 0.2, 0.5, 0.7, 1.0])), st.sampled_from([0.1, 0.5, 0.7]))
def test_greedy_match_flavours(iou, th):
    np.testing.assert_array_equal(kernels.greedy_match_nb(iou, th), kernels.greedy_match_np(iou, th))


@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 12), st.floats(0.0, 0.9999), st.integers(0, 999))
def test_ema_rows_flavours(C, D, n, mu, seed):
    rng = np.random.default_rng(seed)
    m0 = rng.standard_normal((C, D))
    labels = rng.integers(0, C, size=n).astype(np.int64)
    feats = rng.standard_normal((n, D))
    a = kernels.ema_rows_nb(m0.copy(), labels, feats, mu)
    b = kernels.ema_rows_np(m0.copy(), labels, feats, mu)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    # sequential oracle
    m = m0.copy()
    for c, x in zip(labels, feats):
        m[c] = mu * m[c] + (1 - mu) * x
    np.testing.assert_allclose(a, m, rtol=1e-12, atol=1e-12)


def _backend(env_value):
    env = dict(os.environ)
    if env_value is None:
        env.pop("HRPRO_DISABLE_NUMBA", None)
    else:
        env["HRPRO_DISABLE_NUMBA"] = env_value
    out = subprocess.run([sys.executable, "-c", "import hrpro.kernels as k, hrpro; "
                          "print(hrpro.backend_name(), k.oic_scores.__name__)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.split()


def test_env_flag_selects_numpy():
    assert _backend("1") == ["numpy", "oic_scores_np"]


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
def test_default_backend_is_numba():
    assert _backend(None) == ["numba", "oic_scores_nb"]
    assert _backend("0") == ["numba", "oic_scores_nb"]
