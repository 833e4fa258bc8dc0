import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from semiseg.augment import AREA_RATIO_RANGE, MixMask, NUM_RECTS, mix, sample_mask


def test_same_rng_state_gives_identical_mask():
    a = sample_mask(32, 32, np.random.default_rng(99))
    b = sample_mask(32, 32, np.random.default_rng(99))
    assert np.array_equal(a.mask, b.mask)
    assert a.rects == b.rects


def test_mask_is_binary_union_of_three_rects():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = sample_mask(24, 40, rng)
        assert set(np.unique(m.mask)) <= {0, 1}
        assert len(m.rects) == NUM_RECTS
        rebuilt = np.zeros_like(m.mask)
        for x, y, w, h in m.rects:
            rebuilt[y : y + h, x : x + w] = 1
        assert np.array_equal(rebuilt, m.mask)


def test_rect_area_ratios_over_1000_draws():
    rng = np.random.default_rng(123)
    lo, hi = AREA_RATIO_RANGE
    for _ in range(1000):
        m = sample_mask(64, 64, rng)
        for x, y, w, h in m.rects:
            ratio = (w * h) / (64 * 64)
            assert lo <= ratio <= hi
            assert 0 <= x and x + w <= 64 and 0 <= y and y + h <= 64
        union_ratio = m.mask.mean()
        assert lo <= union_ratio <= 1.0


def test_rect_ratios_hold_on_odd_sizes():
    rng = np.random.default_rng(7)
    lo, hi = AREA_RATIO_RANGE
    for H, W in [(8, 8), (9, 13), (8, 40), (17, 8)]:
        for _ in range(200):
            m = sample_mask(H, W, rng)
            for x, y, w, h in m.rects:
                assert lo <= (w * h) / (H * W) <= hi


def test_small_sizes_rejected():
    with pytest.raises(ValueError):
        sample_mask(4, 64, np.random.default_rng(0))


def test_mask_is_immutable():
    m = sample_mask(16, 16, np.random.default_rng(3))
    with pytest.raises(ValueError):
        m.mask[0, 0] = 1


def test_mix_identities():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 16, 16))
    b = rng.normal(size=(3, 16, 16))
    zeros = MixMask(mask=np.zeros((16, 16), dtype=np.uint8), rects=())
    ones = MixMask(mask=np.ones((16, 16), dtype=np.uint8), rects=())
    some = sample_mask(16, 16, rng)
    assert np.array_equal(mix(a, b, zeros), a)
    assert np.array_equal(mix(a, b, ones), b)
    assert np.array_equal(mix(a, a, some), a)


def test_mix_label_maps_select_per_pixel():
    rng = np.random.default_rng(6)
    a = rng.integers(0, 4, size=(16, 16))
    b = rng.integers(0, 4, size=(16, 16))
    m = sample_mask(16, 16, rng)
    out = mix(a, b, m)
    assert out.dtype == a.dtype
    chosen = np.where(m.mask.astype(bool), b, a)
    assert np.array_equal(out, chosen)


def test_mix_torch_tensors_and_batches():
    rng = np.random.default_rng(8)
    m = sample_mask(16, 16, rng)
    a = torch.randn(2, 3, 16, 16)
    b = torch.randn(2, 3, 16, 16)
    out = mix(a, b, m)
    expected = torch.where(torch.from_numpy(m.mask.copy()).bool(), b, a)
    assert torch.equal(out, expected)


def test_mix_shape_mismatch_rejected():
    rng = np.random.default_rng(9)
    m = sample_mask(16, 16, rng)
    with pytest.raises(ValueError):
        mix(np.zeros((16, 16)), np.zeros((8, 8)), m)
    with pytest.raises(ValueError):
        mix(np.zeros((8, 8)), np.zeros((8, 8)), m)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mix_complement_property(seed):
    # mix(a,b,m) + mix(b,a,m) == a + b for float fields
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(8, 8))
    b = rng.normal(size=(8, 8))
    m = sample_mask(8, 8, rng)
    assert np.allclose(mix(a, b, m) + mix(b, a, m), a + b)
