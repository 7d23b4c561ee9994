import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schedq import _pykernels as py
from schedq import kernels

ck = pytest.importorskip("schedq._ckernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@st.composite
def matrices(draw):
    n = draw(st.integers(1, 8))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    P = rng.uniform(0, 5, (n, n))
    np.fill_diagonal(P, 0)
    hist = list(rng.integers(0, n, size=draw(st.integers(0, 3))))
    buffers = np.where(rng.random(n) < 0.3, 0.0, rng.uniform(0, 3, n))
    return P, hist, buffers, rng


@settings(max_examples=200, deadline=None)
@given(matrices())
def test_penalties_and_argmins_match(case):
    P, hist, buffers, _ = case
    a, b = py.penalties(P, hist), ck.penalties(P, hist)
    assert np.array_equal(a, b)
    assert py.masked_argmin(a, buffers) == ck.masked_argmin(a, buffers)
    assert py.masked_argmax(a, buffers) == ck.masked_argmax(a, buffers)


@settings(max_examples=200, deadline=None)
@given(matrices(), st.floats(0, 2), st.floats(0, 2))
def test_drift_bit_identical(case, sw, sp):
    P, _, _, rng = case
    n = P.shape[0]
    w = rng.uniform(0.5, 4, n)
    xw, xp = rng.standard_normal(n), rng.standard_normal((n, n))
    w1, P1, w2, P2 = w.copy(), P.copy(), w.copy(), P.copy()
    py.apply_drift(w1, P1, xw, xp, sw, sp, 0.5, 4.0, 10.0)
    ck.apply_drift(w2, P2, xw, xp, sw, sp, 0.5, 4.0, 10.0)
    assert np.array_equal(w1, w2) and np.array_equal(P1, P2)
    assert np.all(np.diag(P2) == 0)


def test_serve_clamps():
    for mod in (py, ck):
        b = np.array([2.0, 0.5])
        mod.serve(b, np.array([3.0, 0.2]), 0)
        mod.serve(b, np.array([3.0, 0.2]), 1)
        assert b[0] == 0.0 and b[1] == pytest.approx(0.3)


def test_argmin_ties_lowest_index():
    for mod in (py, ck):
        v = np.array([1.0, 0.0, 0.0, 0.0])
        assert mod.masked_argmin(v, np.array([1.0, 0.0, 1.0, 1.0])) == 2
        assert mod.masked_argmax(v, np.array([0.0, 1.0, 1.0, 1.0])) == 1
        assert mod.masked_argmin(v, np.zeros(4)) == -1
