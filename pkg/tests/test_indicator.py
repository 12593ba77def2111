"""Latent downsampling and the token/instance indicator.

The downsampling oracle is a per-block triple loop over the pixel grid, so
every count the reshape-and-sum path produces is checked against plain
iteration in exact integer arithmetic.
"""

import json

import numpy as np
import pytest

from instamask.errors import ValidationError
from instamask.geometry import PixelMaskStack
from instamask.indicator import (
    IndicatorIndex,
    LatentMask,
    build_indicator,
    concat_views,
    downsample_trilinear,
    indicator_from_doc,
    indicator_to_doc,
    load_indicator,
    save_indicator,
)


def _oracle_counts(frames, factors):
    """Covered-pixel count per latent block, by explicit iteration."""
    f_t, f_h, f_w = factors
    t_c = frames.shape[0] // f_t
    h_c = frames.shape[1] // f_h
    w_c = frames.shape[2] // f_w
    out = np.zeros((t_c, h_c, w_c), dtype=np.int64)
    for t in range(t_c):
        for r in range(h_c):
            for c in range(w_c):
                block = frames[
                    t * f_t : (t + 1) * f_t,
                    r * f_h : (r + 1) * f_h,
                    c * f_w : (c + 1) * f_w,
                ]
                out[t, r, c] = int(block.sum())
    return out


def _stack(frames, instance_id=0):
    return PixelMaskStack.from_frames(instance_id, np.asarray(frames, dtype=bool))


def _mask_from_tokens(instance_id, dims, tokens, theta=0.5):
    """LatentMask whose binarized grid is exactly the given flat tokens."""
    counts = np.zeros(dims, dtype=np.int64)
    counts.reshape(-1)[list(tokens)] = 1
    return LatentMask(instance_id, dims, counts, volume=1, theta=theta)


class TestDownsample:
    def test_single_pixel_block_example(self):
        # one pixel in a 4 x 8 x 8 block: occupancy 1/256, background at
        # theta 0.5, foreground at theta 0.001
        frames = np.zeros((4, 8, 8), dtype=bool)
        frames[1, 3, 5] = True
        half = downsample_trilinear(_stack(frames), (4, 8, 8), theta=0.5)
        assert half.dims == (1, 1, 1)
        assert half.volume == 256
        assert half.counts[0, 0, 0] == 1
        assert half.occupancy[0, 0, 0] == 1.0 / 256.0
        assert not half.binarized[0, 0, 0]
        low = downsample_trilinear(_stack(frames), (4, 8, 8), theta=0.001)
        assert low.binarized[0, 0, 0]

    def test_counts_match_per_block_iteration(self):
        rng = np.random.default_rng(42)
        for factors in ((1, 2, 2), (2, 4, 4), (4, 8, 8), (1, 1, 1)):
            f_t, f_h, f_w = factors
            frames = rng.random((2 * f_t, 3 * f_h, 2 * f_w)) < 0.3
            mask = downsample_trilinear(_stack(frames), factors)
            assert np.array_equal(mask.counts, _oracle_counts(frames, factors))

    def test_mass_is_conserved_exactly(self):
        rng = np.random.default_rng(1)
        frames = rng.random((4, 16, 16)) < 0.5
        mask = downsample_trilinear(_stack(frames), (2, 4, 4))
        assert int(mask.counts.sum()) == int(frames.sum())

    def test_occupancy_at_threshold_stays_background(self):
        # strict comparison: occupancy == theta does not cross
        frames = np.zeros((1, 2, 2), dtype=bool)
        frames[0, 0, 0] = True  # one of four pixels, occupancy 0.25
        mask = downsample_trilinear(_stack(frames), (1, 2, 2), theta=0.25)
        assert mask.occupancy[0, 0, 0] == 0.25
        assert not mask.binarized[0, 0, 0]
        above = downsample_trilinear(_stack(frames), (1, 2, 2), theta=0.2499)
        assert above.binarized[0, 0, 0]

    def test_higher_theta_never_adds_foreground(self):
        rng = np.random.default_rng(9)
        frames = rng.random((2, 8, 8)) < 0.5
        stack = _stack(frames)
        previous = None
        for theta in (0.0, 0.25, 0.5, 0.75):
            current = downsample_trilinear(stack, (1, 4, 4), theta=theta).binarized
            if previous is not None:
                assert not (current & ~previous).any()
            previous = current

    def test_indivisible_dims_are_named(self):
        frames = np.zeros((2, 10, 8), dtype=bool)
        with pytest.raises(ValidationError, match="H=10 not divisible by f_h=4"):
            downsample_trilinear(_stack(frames), (1, 4, 4))
        with pytest.raises(ValidationError, match="T=2 not divisible by f_t=3"):
            downsample_trilinear(_stack(frames), (3, 2, 2))

    def test_factors_must_be_positive(self):
        frames = np.zeros((2, 4, 4), dtype=bool)
        with pytest.raises(ValidationError, match="factors"):
            downsample_trilinear(_stack(frames), (0, 2, 2))


class TestLatentMask:
    def test_counts_shape_must_match_dims(self):
        with pytest.raises(ValidationError, match="counts shape"):
            LatentMask(0, (1, 2, 2), np.zeros((2, 2, 2), np.int64), 4, 0.5)

    def test_counts_must_fit_the_block_volume(self):
        with pytest.raises(ValidationError, match="counts"):
            LatentMask(0, (1, 1, 1), np.array([[[5]]], np.int64), 4, 0.5)
        with pytest.raises(ValidationError, match="counts"):
            LatentMask(0, (1, 1, 1), np.array([[[-1]]], np.int64), 4, 0.5)

    def test_theta_must_be_in_unit_interval(self):
        counts = np.zeros((1, 1, 1), np.int64)
        with pytest.raises(ValidationError, match="theta"):
            LatentMask(0, (1, 1, 1), counts, 1, 1.0)
        with pytest.raises(ValidationError, match="theta"):
            LatentMask(0, (1, 1, 1), counts, 1, -0.1)

    def test_equality_compares_content(self):
        a = _mask_from_tokens(3, (1, 2, 2), (1, 2))
        b = _mask_from_tokens(3, (1, 2, 2), (1, 2))
        c = _mask_from_tokens(3, (1, 2, 2), (1, 3))
        assert a == b
        assert a != c


class TestBuildIndicator:
    def test_token_flattening_is_row_major(self):
        # full block at latent cell (t=1, row=2, col=3) on a (2, 3, 4) grid:
        # k = 1 * 12 + 2 * 4 + 3 = 23
        frames = np.zeros((2, 6, 8), dtype=bool)
        frames[1, 4:6, 6:8] = True
        mask = downsample_trilinear(_stack(frames, 7), (1, 2, 2))
        idx = build_indicator([mask])
        assert idx.num_tokens == 24
        assert idx.tokens_of(7) == (23,)
        assert idx.ids_of(23) == (7,)

    def test_disjoint_and_overlapping_instances(self):
        a = _mask_from_tokens(2, (1, 2, 2), (0, 1))
        b = _mask_from_tokens(5, (1, 2, 2), (1, 2))
        idx = build_indicator([b, a])  # order does not matter
        assert idx.num_tokens == 4
        assert idx.forward == ((2,), (2, 5), (5,), ())
        assert idx.inverse == ((2, (0, 1)), (5, (1, 2)))
        assert idx.instance_ids == (2, 5)

    def test_instance_with_no_tokens_keeps_an_inverse_entry(self):
        a = _mask_from_tokens(1, (1, 2, 2), ())
        b = _mask_from_tokens(4, (1, 2, 2), (3,))
        idx = build_indicator([a, b])
        assert idx.inverse == ((1, ()), (4, (3,)))
        assert idx.tokens_of(1) == ()

    def test_zero_instances_need_explicit_dims(self):
        idx = build_indicator([], dims=(1, 2, 3))
        assert idx.num_tokens == 6
        assert idx.inverse == ()
        assert not idx.foreground().any()
        with pytest.raises(ValidationError, match="dims"):
            build_indicator([])

    def test_grid_disagreement_is_rejected(self):
        a = _mask_from_tokens(0, (1, 2, 2), (0,))
        b = _mask_from_tokens(1, (1, 2, 3), (0,))
        with pytest.raises(ValidationError, match="grids disagree"):
            build_indicator([a, b])

    def test_duplicate_instance_ids_are_rejected(self):
        a = _mask_from_tokens(3, (1, 2, 2), (0,))
        b = _mask_from_tokens(3, (1, 2, 2), (1,))
        with pytest.raises(ValidationError, match="duplicate"):
            build_indicator([a, b])

    def test_foreground_vector(self):
        a = _mask_from_tokens(0, (1, 2, 2), (1, 3))
        idx = build_indicator([a])
        assert np.array_equal(idx.foreground(), [False, True, False, True])


class TestIndicatorIndex:
    def test_directions_must_describe_the_same_relation(self):
        with pytest.raises(ValidationError, match="disagree"):
            IndicatorIndex(2, ((0,), ()), ((0, (0, 1)),))

    def test_duplicate_inverse_ids_are_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            IndicatorIndex(1, ((),), ((0, ()), (0, ())))

    def test_tokens_must_be_in_range(self):
        with pytest.raises(ValidationError, match="out of range"):
            IndicatorIndex(2, ((), ()), ((0, (5,)),))

    def test_lookup_of_unknown_instance_fails(self):
        idx = IndicatorIndex(1, ((),), ())
        with pytest.raises(ValidationError, match="no instance 9"):
            idx.tokens_of(9)

    def test_unsorted_input_is_normalized(self):
        idx = IndicatorIndex(3, ((), (8, 2), ()), ((8, (1,)), (2, (1,))))
        assert idx.forward[1] == (2, 8)
        assert idx.instance_ids == (2, 8)


class TestConcatViews:
    def test_tokens_are_offset_view_major(self):
        a = _mask_from_tokens(1, (1, 2, 2), (0, 3))
        b = _mask_from_tokens(1, (1, 2, 2), (2,))
        joined = concat_views([build_indicator([a]), build_indicator([b])])
        assert joined.num_tokens == 8
        assert joined.tokens_of(1) == (0, 3, 6)
        assert joined.ids_of(6) == (1,)
        assert joined.ids_of(2) == ()

    def test_distinct_instances_per_view_are_merged(self):
        a = _mask_from_tokens(1, (1, 1, 2), (0,))
        b = _mask_from_tokens(2, (1, 1, 2), (1,))
        joined = concat_views([build_indicator([a]), build_indicator([b])])
        assert joined.inverse == ((1, (0,)), (2, (3,)))

    def test_views_must_share_token_counts(self):
        a = build_indicator([], dims=(1, 1, 2))
        b = build_indicator([], dims=(1, 1, 3))
        with pytest.raises(ValidationError, match="same token count"):
            concat_views([a, b])

    def test_at_least_one_view_required(self):
        with pytest.raises(ValidationError, match="at least one"):
            concat_views([])


class TestIndicatorIO:
    def test_round_trip_is_lossless(self, tmp_path):
        a = _mask_from_tokens(2, (2, 2, 2), (0, 3, 7))
        b = _mask_from_tokens(9, (2, 2, 2), (3,))
        idx = build_indicator([a, b])
        path = tmp_path / "indicator.json"
        save_indicator(idx, path)
        assert load_indicator(path) == idx

    def test_file_omits_empty_entries(self, tmp_path):
        covered = _mask_from_tokens(4, (1, 2, 2), (1,))
        empty = _mask_from_tokens(6, (1, 2, 2), ())
        idx = build_indicator([covered, empty])
        path = tmp_path / "indicator.json"
        save_indicator(idx, path)
        doc = json.loads(path.read_text())
        assert doc["format"] == "instamask-indicator"
        assert doc["m"] == 4
        assert doc["forward"] == [[1, [4]]]  # background tokens not listed
        assert doc["inverse"] == [[4, [1]]]  # empty instance not listed
        # so the loaded index keeps the relation but loses the empty id
        loaded = load_indicator(path)
        assert loaded.forward == idx.forward
        assert loaded.instance_ids == (4,)
        assert idx.instance_ids == (4, 6)

    def test_wrong_format_is_rejected(self):
        with pytest.raises(ValidationError, match="not an indicator"):
            indicator_from_doc({"format": "something-else", "version": 1, "m": 0})

    def test_out_of_range_file_tokens_are_rejected(self):
        doc = indicator_to_doc(build_indicator([_mask_from_tokens(0, (1, 1, 2), (1,))]))
        doc["forward"] = [[5, [0]]]
        with pytest.raises(ValidationError, match="out of range"):
            indicator_from_doc(doc)
