"""Quality metrics and the CSV report format."""

import math

import numpy as np
import pytest

import fanrecon as fr


class TestRmse:
    def test_known_value(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[2.0, 2.0], [3.0, 2.0]])
        assert fr.rmse(a, b) == pytest.approx(math.sqrt(5.0 / 4.0))

    def test_zero_for_identical(self):
        x = np.random.default_rng(1).random((5, 5))
        assert fr.rmse(x, x) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fr.rmse(np.zeros((2, 2)), np.zeros((3, 3)))


class TestPsnr:
    def test_identical_is_infinite(self):
        x = np.ones((4, 4))
        assert fr.psnr(x, x) == math.inf

    def test_known_value(self):
        truth = np.ones((2, 2))
        recon = truth + 0.1
        assert fr.psnr(recon, truth) == pytest.approx(20.0)

    def test_explicit_peak(self):
        truth = np.full((2, 2), 0.5)
        recon = truth + 0.05
        assert fr.psnr(recon, truth, peak=1.0) == pytest.approx(26.0206, abs=1e-3)

    def test_nonpositive_peak_rejected(self):
        with pytest.raises(ValueError):
            fr.psnr(np.ones((2, 2)), np.zeros((2, 2)))


class TestMaxAbsError:
    def test_known_value(self):
        a = np.array([1.0, -3.0, 2.0])
        b = np.array([0.5, 0.0, 2.0])
        assert fr.max_abs_error(a, b) == 3.0


class TestSinogramResidual:
    def test_truth_projects_exactly(self, small_system_and_sino, small_phantom):
        system, sinogram = small_system_and_sino
        assert fr.sinogram_residual(small_phantom, sinogram, system) < 1e-12

    def test_zero_image_gives_unit_residual(self, small_system_and_sino):
        system, sinogram = small_system_and_sino
        g = system.geometry
        zero = np.zeros((g.image_rows, g.image_cols))
        assert fr.sinogram_residual(zero, sinogram, system) == pytest.approx(1.0)

    def test_both_zero(self, small_system_and_sino):
        system, sinogram = small_system_and_sino
        g = system.geometry
        zero = np.zeros((g.image_rows, g.image_cols))
        assert fr.sinogram_residual(zero, np.zeros_like(sinogram), system) == 0.0


class TestScoreAndCsv:
    def test_score_fields(self, small_system_and_sino, small_phantom):
        system, sinogram = small_system_and_sino
        report = fr.score("fbp", small_phantom, small_phantom, sinogram, system,
                          iterations=7)
        assert report.method == "fbp"
        assert report.views == system.geometry.view_count
        assert report.iterations == 7
        assert report.rmse == 0.0
        assert report.psnr_db == math.inf

    def test_csv_layout(self, tmp_path, small_system_and_sino, small_phantom):
        system, sinogram = small_system_and_sino
        row = fr.score("dint", small_phantom * 1.01, small_phantom, sinogram, system)
        path = tmp_path / "metrics.csv"
        fr.write_csv([row], path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == ",".join(fr.CSV_COLUMNS)
        fields = lines[1].split(",")
        assert fields[0] == "dint"
        assert int(fields[1]) == system.geometry.view_count
        assert float(fields[3]) == pytest.approx(row.rmse, rel=1e-4)

    def test_csv_deterministic(self, tmp_path, small_system_and_sino, small_phantom):
        system, sinogram = small_system_and_sino
        row = fr.score("fbp", small_phantom * 0.97, small_phantom, sinogram, system,
                       wall_times_s={"loop": 0.123})
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        fr.write_csv([row], a)
        row.wall_times_s["loop"] = 9.9   # timings must not leak into the CSV
        fr.write_csv([row], b)
        assert a.read_bytes() == b.read_bytes()
