#!/usr/bin/env python3
"""
Tests for double-head fusion and cascade averaging
"""

import numpy as np
import pytest

from errors import PreconditionError
from head_fusion import cascade_average, combine_head_scores, fuse_scores


def test_fuse_examples():
    spt = np.array([0.1, 0.4, 0.9])
    np.testing.assert_array_equal(fuse_scores(spt, np.zeros(3)), spt)
    np.testing.assert_array_equal(fuse_scores(spt, np.ones(3)), np.ones(3))
    assert fuse_scores(0.6, 0.5)[0] == pytest.approx(0.8)


def test_fuse_rejects_bad_input():
    with pytest.raises(PreconditionError):
        fuse_scores([0.1, 0.2], [0.3])
    with pytest.raises(PreconditionError):
        fuse_scores([1.2], [0.3])
    with pytest.raises(PreconditionError):
        fuse_scores([0.5], [-0.1])


def test_fuse_algebra_on_a_million_pairs():
    rng = np.random.default_rng(4)
    spt = rng.uniform(0, 1, 1_000_000)
    tmp = rng.uniform(0, 1, 1_000_000)
    spt[:4] = [0.0, 1.0, 0.0, 1.0]
    tmp[:4] = [0.0, 0.0, 1.0, 1.0]

    out = fuse_scores(spt, tmp)
    assert np.all((out >= 0.0) & (out <= 1.0))
    assert np.all(out >= tmp)
    assert np.all(out >= spt - np.spacing(spt))

    swapped = fuse_scores(tmp, spt)
    np.testing.assert_allclose(out, swapped, rtol=0, atol=4 * np.finfo(np.float64).eps)

    direct = tmp + spt * (1.0 - tmp)
    assert np.all(np.abs(out - direct) <= np.spacing(direct))


def test_fuse_monotone():
    rng = np.random.default_rng(5)
    spt = rng.uniform(0, 0.9, 10_000)
    tmp = rng.uniform(0, 0.9, 10_000)
    base = fuse_scores(spt, tmp)
    bump = rng.uniform(0, 0.1, 10_000)
    tol = np.spacing(1.0)
    assert np.all(fuse_scores(spt + bump, tmp) >= base - tol)
    assert np.all(fuse_scores(spt, tmp + bump) >= base - tol)


def test_cascade_average():
    np.testing.assert_array_equal(cascade_average([[0.3, 0.7]]), [0.3, 0.7])
    assert cascade_average([[0.2], [0.8]])[0] == pytest.approx(0.5)
    np.testing.assert_allclose(cascade_average([[0.1, 0.6]] * 3), [0.1, 0.6])
    with pytest.raises(PreconditionError):
        cascade_average([])
    with pytest.raises(PreconditionError):
        cascade_average([[0.1], [0.1, 0.2]])


def test_combine_modes():
    stages = [[0.2], [0.4], [0.6]]
    assert combine_head_scores(stages, 0.5, 'spatial')[0] == pytest.approx(0.4)
    assert combine_head_scores(stages, 0.5, 'spatial', use_cascade=False)[0] == pytest.approx(0.2)
    assert combine_head_scores(stages, 0.5, 'temporal')[0] == pytest.approx(0.5)
    assert combine_head_scores(stages, 0.5, 'double')[0] == pytest.approx(0.5 + 0.4 * 0.5)


def test_combine_fusion_orders_agree_for_a_linear_formula():
    # the formula is affine in p_spt, so both orders give the same value
    stages = [[0.1, 0.9], [0.5, 0.3]]
    a = combine_head_scores(stages, [0.4, 0.2], 'double', order='average_then_fuse')
    b = combine_head_scores(stages, [0.4, 0.2], 'double', order='fuse_then_average')
    np.testing.assert_allclose(a, b)


def test_combine_missing_inputs():
    with pytest.raises(PreconditionError):
        combine_head_scores(None, 0.5, 'double')
    with pytest.raises(PreconditionError):
        combine_head_scores([[0.5]], None, 'double')
    with pytest.raises(PreconditionError):
        combine_head_scores([[0.5]], None, 'temporal')
    with pytest.raises(PreconditionError):
        combine_head_scores([[0.5]], 0.5, 'triple')
    with pytest.raises(PreconditionError):
        combine_head_scores([[0.5]], 0.5, 'double', order='sideways')
