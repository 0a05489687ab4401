"""The compiled and pure-numpy kernel paths must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest
from conftest import random_box
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tinytarget import _kernels
from tinytarget.geometry import boxes_to_array


def random_boxes(rng, n):
    return boxes_to_array(random_box(rng) for _ in range(n))


def same_partition(a, b):
    """Label images describe the same components, whatever the numbering."""
    if not np.array_equal(a > 0, b > 0):
        return False
    pairs = set(zip(a[a > 0].tolist(), b[b > 0].tolist()))
    return len(pairs) == len({p[0] for p in pairs}) == len({p[1] for p in pairs})


def test_backend_flag_consistent():
    assert _kernels.BACKEND == ("numba" if _kernels.USE_JIT else "numpy")


def test_disable_flag_selects_numpy():
    env = dict(os.environ, TINYTARGET_DISABLE_JIT="1")
    out = subprocess.run(
        [sys.executable, "-c", "import tinytarget; print(tinytarget.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"


@pytest.mark.parametrize("n,m", [(0, 3), (1, 1), (7, 5)])
def test_pairwise_iou_agree(rng, n, m):
    a, b = random_boxes(rng, n), random_boxes(rng, m)
    np.testing.assert_allclose(_kernels.pairwise_iou_jit(a, b), _kernels.pairwise_iou_np(a, b), rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("n,m", [(0, 3), (1, 1), (7, 5)])
def test_pairwise_w2_agree(rng, n, m):
    a, b = random_boxes(rng, n), random_boxes(rng, m)
    np.testing.assert_allclose(_kernels.pairwise_w2_jit(a, b), _kernels.pairwise_w2_np(a, b), rtol=1e-14, atol=1e-12)


def test_self_iou_exact(rng):
    a = random_boxes(rng, 20)
    for fn in (_kernels.pairwise_iou_jit, _kernels.pairwise_iou_np):
        np.testing.assert_array_equal(np.diag(fn(a, a)), 1.0)


@settings(max_examples=80, deadline=None)
@given(arrays(np.bool_, st.tuples(st.integers(1, 15), st.integers(1, 15))))
def test_label8_agree(mask):
    lj, nj = _kernels.label8_jit(mask)
    ln, nn = _kernels.label8_np(mask)
    assert nj == nn
    assert same_partition(lj, ln)


def test_label8_connectivity():
    mask = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 0], [1, 1, 0]], dtype=bool)
    for fn in (_kernels.label8_jit, _kernels.label8_np):
        labels, n = fn(mask)
        assert n == 2
        assert labels[0, 0] == labels[1, 1] != labels[3, 0]


@pytest.mark.parametrize("shape", [(1, 1), (1, 5), (4, 4), (9, 13)])
def test_local_stats_agree(rng, shape):
    img = rng.random(shape)
    for x, y in zip(_kernels.local_stats3_jit(img), _kernels.local_stats3_np(img)):
        np.testing.assert_allclose(x, y, rtol=1e-14, atol=1e-15)


def test_local_stats_constant():
    img = np.full((5, 6), 0.3)
    mean, mx, ring = _kernels.local_stats3(img)
    np.testing.assert_allclose(mean, 0.3, atol=1e-15)
    np.testing.assert_array_equal(mx, 0.3)
    np.testing.assert_allclose(ring, 0.3, atol=1e-15)


def test_deform_aggregate_agree(rng):
    levels, h, w, c, k = 3, 6, 5, 4, 9
    feat = rng.standard_normal((levels, h, w, c))
    pos_x = rng.uniform(-2, w + 2, size=(h, w, k))
    pos_y = rng.uniform(-2, h + 2, size=(h, w, k))
    mod = rng.standard_normal((h, w, k))
    weights = rng.standard_normal((levels, levels, k))
    a = _kernels.deform_aggregate_jit(feat, pos_x, pos_y, mod, weights)
    b = _kernels.deform_aggregate_np(feat, pos_x, pos_y, mod, weights)
    assert a.shape == (levels, h, w, c)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_deform_aggregate_half_pixel():
    feat = np.array([[[[2.0], [6.0]]]])  # one level, 1x2 grid, one channel
    pos_x = np.array([[[0.5], [0.5]]])
    pos_y = np.zeros((1, 2, 1))
    mod = np.ones((1, 2, 1))
    weights = np.ones((1, 1, 1))
    for fn in (_kernels.deform_aggregate_jit, _kernels.deform_aggregate_np):
        np.testing.assert_array_equal(fn(feat, pos_x, pos_y, mod, weights)[0, 0, :, 0], [4.0, 4.0])
