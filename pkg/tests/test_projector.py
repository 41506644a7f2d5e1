"""Forward projection and the forced-zero cell machinery."""

import numpy as np
import pytest

import fanrecon as fr


class TestLineIntegral:
    def test_uniform_image_gives_path_length(self, small_system_and_sino):
        system, _ = small_system_and_sino
        ones = np.ones((system.geometry.image_rows, system.geometry.image_cols))
        path = system.path(22, 7)
        assert fr.line_integral(ones, path) == pytest.approx(path.sum_of_segments_mm)

    def test_empty_path_is_zero(self, small_system_and_sino):
        system, _ = small_system_and_sino
        empty = next(system.path_by_index(r) for r in range(system.n_rays)
                     if len(system.path_by_index(r)) == 0)
        img = np.ones((system.geometry.image_rows, system.geometry.image_cols))
        assert fr.line_integral(img, empty) == 0.0

    def test_linearity(self, small_system_and_sino, small_phantom):
        system, _ = small_system_and_sino
        path = system.path(20, 3)
        li = fr.line_integral(small_phantom, path)
        assert fr.line_integral(3.0 * small_phantom, path) == pytest.approx(3.0 * li)

    def test_rejects_out_of_range_cells(self):
        path = fr.RayPath(0, np.array([100], np.int64), np.array([1.0]), 1.0)
        with pytest.raises(ValueError):
            fr.line_integral(np.zeros((3, 3)), path)


class TestForwardProject:
    def test_matches_per_ray_integrals(self, small_system_and_sino, small_phantom):
        system, _ = small_system_and_sino
        sino = fr.forward_project(small_phantom, system)
        g = system.geometry
        for det in (0, 13, 31, 44):
            for view in (0, 17, 35):
                expected = fr.line_integral(small_phantom, system.path(det, view))
                assert sino[det, view] == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_zero_image_projects_to_zero(self, small_system_and_sino):
        system, _ = small_system_and_sino
        g = system.geometry
        sino = fr.forward_project(np.zeros((g.image_rows, g.image_cols)), system)
        assert np.all(sino == 0.0)

    def test_shape_validated(self, small_system_and_sino):
        system, _ = small_system_and_sino
        with pytest.raises(ValueError):
            fr.forward_project(np.zeros((5, 5)), system)


class TestZeroMask:
    def test_marks_exactly_cells_of_zero_rays(self, small_system_and_sino):
        system, sinogram = small_system_and_sino
        mask = fr.build_zero_mask(sinogram, system)
        flat = mask.ravel()
        expected = np.zeros_like(flat)
        sino_flat = sinogram.ravel()
        for ray in range(system.n_rays):
            if sino_flat[ray] <= 0.0:
                expected[system.path_by_index(ray).cells] = True
        np.testing.assert_array_equal(flat, expected)

    def test_air_is_masked_but_object_is_not(self, small_system_and_sino,
                                             small_phantom):
        system, sinogram = small_system_and_sino
        mask = fr.build_zero_mask(sinogram, system)
        assert mask[0, 0]            # grid corner: only air
        # masked cells can hold no material
        assert np.all(small_phantom[mask] == 0.0)

    def test_threshold_widens_mask(self, small_system_and_sino):
        system, sinogram = small_system_and_sino
        strict = fr.build_zero_mask(sinogram, system)
        loose = fr.build_zero_mask(sinogram, system, zero_threshold=1.0)
        assert loose.sum() >= strict.sum()
        assert np.all(loose[strict])

    def test_apply_zero_mask(self):
        image = np.full((4, 4), 2.5)
        mask = np.zeros((4, 4), bool)
        mask[1, 2] = True
        out = fr.apply_zero_mask(image, mask)
        assert out[1, 2] == 0.0
        assert out.sum() == pytest.approx(2.5 * 15)
        assert image[1, 2] == 2.5    # input untouched

    def test_apply_zero_mask_shape_mismatch(self):
        with pytest.raises(ValueError):
            fr.apply_zero_mask(np.zeros((4, 4)), np.zeros((3, 3), bool))


class TestFilteredPaths:
    def test_filtered_paths_exclude_masked_cells(self, small_system_and_sino):
        system, sinogram = small_system_and_sino
        mask = fr.build_zero_mask(sinogram, system)
        filtered = fr.filter_ray_paths(system, mask)
        masked_cells = set(np.flatnonzero(mask.ravel()).tolist())
        for ray in range(0, filtered.n_rays, 37):
            path = filtered.path_by_index(ray, filtered=True)
            assert masked_cells.isdisjoint(path.cells.tolist())

    def test_filtered_preserves_order_and_lengths(self, small_system_and_sino):
        system, sinogram = small_system_and_sino
        mask = fr.build_zero_mask(sinogram, system)
        filtered = fr.filter_ray_paths(system, mask)
        keep = ~mask.ravel()
        for ray in range(0, filtered.n_rays, 53):
            full = system.path_by_index(ray)
            part = filtered.path_by_index(ray, filtered=True)
            sel = keep[full.cells]
            np.testing.assert_array_equal(part.cells, full.cells[sel])
            np.testing.assert_array_equal(part.segments_mm, full.segments_mm[sel])

    def test_filtered_integral_unchanged_for_masked_truth(
            self, small_system_and_sino, small_phantom):
        # the phantom is zero on masked cells, so dropping them changes nothing
        system, sinogram = small_system_and_sino
        mask = fr.build_zero_mask(sinogram, system)
        filtered = fr.filter_ray_paths(system, mask)
        full = fr.forward_project(small_phantom, filtered)
        part = fr.forward_project(small_phantom, filtered, filtered=True)
        np.testing.assert_allclose(part, full, rtol=1e-12, atol=1e-12)

    def test_mask_shape_validated(self, small_system_and_sino):
        system, _ = small_system_and_sino
        with pytest.raises(ValueError):
            fr.filter_ray_paths(system, np.zeros((3, 3), bool))
