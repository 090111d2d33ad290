"""Shared fixtures for the mmreach test suite."""
from __future__ import annotations

import numpy as np
import pytest

import mmreach as mm


@pytest.fixture(scope="session")
def abs2d():
    return mm.builtin("abs2d")


@pytest.fixture(scope="session")
def poly3d():
    return mm.builtin("poly3d")


@pytest.fixture(scope="session")
def abs2d_closed(abs2d):
    return mm.closed_form_decomp(abs2d)


@pytest.fixture(scope="session")
def poly3d_closed(poly3d):
    return mm.closed_form_decomp(poly3d)


@pytest.fixture(scope="session")
def abs2d_tight(abs2d):
    return mm.TightDecomposition(abs2d)


@pytest.fixture(scope="session")
def poly3d_tight(poly3d):
    return mm.TightDecomposition(poly3d)


def sample_ordered_tuple(sys, rng, width_range=None):
    """Random forward-ordered (x, w, xh, wh) with x in [-2, 2]^n."""
    lo, hi = -2.0, 2.0
    a = rng.uniform(lo, hi, sys.n)
    if width_range is None:
        b = rng.uniform(lo, hi, sys.n)
        x, xh = np.minimum(a, b), np.maximum(a, b)
    else:
        w0, w1 = width_range
        x = a
        xh = a + rng.uniform(w0, w1, sys.n)
    if sys.m:
        W = sys.disturbance
        u = rng.uniform(W.lower, W.upper)
        v = rng.uniform(W.lower, W.upper)
        w, wh = np.minimum(u, v), np.maximum(u, v)
    else:
        w = wh = np.zeros(0)
    return x, w, xh, wh
