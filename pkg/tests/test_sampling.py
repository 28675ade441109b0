import numpy as np
import pytest

from hpmvs.sampling import (
    POLYLINE_BASE,
    REGION_NAMES,
    STRIP_BASE,
    build_region_table,
    region_offsets,
)

DEFAULT_R = 4
DEFAULT_N_EXT = 3


class TestTemplates:
    def test_base_counts(self):
        assert len(STRIP_BASE) == 5
        assert len(POLYLINE_BASE) == 8

    def test_base_parity(self):
        for dx, dy in STRIP_BASE + POLYLINE_BASE:
            assert (dx + dy) % 2 == 1


class TestRegionOffsets:
    def test_level_counts_double(self):
        for i in range(8):
            levels = region_offsets(i, DEFAULT_R, DEFAULT_N_EXT)
            base = 5 if i < 4 else 8
            for t, level in enumerate(levels):
                assert len(level) == base * 2**t

    def test_parity_all_levels(self):
        for i in range(8):
            for level in region_offsets(i, DEFAULT_R, DEFAULT_N_EXT):
                for dx, dy in level:
                    assert (dx + dy) % 2 == 1, (i, dx, dy)

    def test_nonlocal_norm(self):
        for i in range(8):
            full = region_offsets(i, DEFAULT_R, DEFAULT_N_EXT)[-1]
            for dx, dy in full:
                assert dx * dx + dy * dy > DEFAULT_R * DEFAULT_R

    def test_radius_zero_keeps_template(self):
        up = region_offsets(0, 0, 0)[0]
        assert up == list(STRIP_BASE)
        poly_up = region_offsets(4, 0, 0)[0]
        assert poly_up == list(POLYLINE_BASE)

    def test_minimal_shift(self):
        # With R = 4 the strip template must move out by exactly 4 (the
        # smallest even shift making the nearest sample clear the disk).
        up = region_offsets(0, DEFAULT_R, 0)[0]
        assert up[0] == (0, -5)
        poly_up = region_offsets(4, DEFAULT_R, 0)[0]
        assert poly_up[0] == (0, -5)

    def test_levels_are_prefixes(self):
        for i in range(8):
            levels = region_offsets(i, DEFAULT_R, DEFAULT_N_EXT)
            for t in range(len(levels) - 1):
                assert levels[t + 1][: len(levels[t])] == levels[t]

    def test_no_duplicate_offsets(self):
        for i in range(8):
            full = region_offsets(i, DEFAULT_R, DEFAULT_N_EXT)[-1]
            assert len(set(full)) == len(full)

    def test_directions_cover_four_axes(self):
        # Mean offset of each strip region points along its axis.
        axes = {0: (0, -1), 1: (0, 1), 2: (-1, 0), 3: (1, 0)}
        for i, axis in axes.items():
            level = np.array(region_offsets(i, DEFAULT_R, 0)[0], float)
            mean = level.mean(axis=0)
            mean /= np.linalg.norm(mean)
            assert np.allclose(mean, axis, atol=1e-12)

    def test_polyline_is_v_shaped(self):
        # The up polyline spreads symmetrically in x.
        level = region_offsets(4, 0, 0)[0]
        xs = sorted(dx for dx, _ in level)
        assert xs == [-3, -2, -1, 0, 0, 1, 2, 3]

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            region_offsets(8, 4, 3)
        with pytest.raises(ValueError):
            region_offsets(0, 4, -1)


class TestRegionTable:
    def test_shapes(self):
        offsets, counts = build_region_table(DEFAULT_R, DEFAULT_N_EXT)
        assert offsets.shape == (8, 64, 2)
        assert counts.shape == (8, 4)
        assert offsets.dtype == np.int32 and counts.dtype == np.int32

    def test_counts_match_levels(self):
        _, counts = build_region_table(DEFAULT_R, DEFAULT_N_EXT)
        for i in range(8):
            base = 5 if i < 4 else 8
            assert counts[i].tolist() == [base, 2 * base, 4 * base, 8 * base]

    def test_table_rows_match_region_offsets(self):
        offsets, counts = build_region_table(DEFAULT_R, DEFAULT_N_EXT)
        for i in range(8):
            full = region_offsets(i, DEFAULT_R, DEFAULT_N_EXT)[-1]
            got = [tuple(row) for row in offsets[i, : counts[i, -1]]]
            assert got == full

    def test_region_names_fixed_order(self):
        assert REGION_NAMES[:4] == (
            "strip_up", "strip_down", "strip_left", "strip_right")
        assert REGION_NAMES[4:] == (
            "poly_up", "poly_down", "poly_left", "poly_right")

    def test_extension_disabled(self):
        offsets, counts = build_region_table(DEFAULT_R, 0)
        assert counts.shape == (8, 1)
        assert counts[:, 0].tolist() == [5, 5, 5, 5, 8, 8, 8, 8]
