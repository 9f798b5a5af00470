import numpy as np
import pytest

from chartloc.model import (
    Bounds,
    Dataset,
    OfdmConfig,
    Scenario,
    azimuth_elevation,
    validate_dataset,
)
from chartloc.simulator import SimConfig, generate_dataset

from conftest import grid_trajectory, make_scenario


def small_dataset(scenario, n=10):
    sim = SimConfig(n_scatterers=0, snr_db=float("inf"), seed=1)
    return generate_dataset(scenario, sim, grid_trajectory(n))


class TestOfdmConfig:
    def test_subcarrier_frequencies_match_convention(self):
        ofdm = OfdmConfig(1.272e9, 50e6, 8)
        spacing = 50e6 / 8
        # index n = 1..N maps to (n - N/2 - 1) * spacing
        expected = np.array([n - 8 / 2 - 1 for n in range(1, 9)]) * spacing
        assert np.allclose(ofdm.subcarrier_frequencies(), expected)

    @pytest.mark.parametrize("n_sub", [4, 7, 12, 0])
    def test_rejects_bad_subcarrier_count(self, n_sub):
        with pytest.raises(ValueError):
            OfdmConfig(1e9, 50e6, n_sub)

    def test_rejects_carrier_below_bandwidth(self):
        with pytest.raises(ValueError):
            OfdmConfig(40e6, 50e6, 64)


class TestGeometry:
    def test_normals_must_be_unit(self):
        with pytest.raises(ValueError):
            make_scenario().arrays.__class__(
                m_row=2,
                m_col=4,
                centers=np.array([[0.0, 0.0, 1.0]]),
                normals=np.array([[1.0, 1.0, 0.0]]),
                element_spacing_m=0.1,
            )

    def test_element_positions_symmetric_about_center(self):
        scenario = make_scenario()
        pos = scenario.arrays.element_positions(0)
        center = scenario.arrays.centers[0]
        assert np.allclose(pos.reshape(-1, 3).mean(axis=0), center)

    def test_azimuth_broadside_is_zero(self):
        az, el = azimuth_elevation(np.array([1.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        assert az == pytest.approx(0.0)
        assert el == pytest.approx(0.0)

    def test_azimuth_sign_follows_column_axis(self):
        # normal +x: column axis is z x n = +y, so a +y offset is positive azimuth
        az, _ = azimuth_elevation(np.array([1.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        assert az == pytest.approx(np.pi / 4)

    def test_elevation(self):
        _, el = azimuth_elevation(np.array([1.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
        assert el == pytest.approx(np.pi / 4)


class TestBounds:
    def test_rect_contains(self):
        b = Bounds.rect(0, 0, 10, 10)
        assert b.contains([5, 5])
        assert b.contains([0, 0])  # boundary counts
        assert not b.contains([11, 5])

    def test_degenerate_polygon_rejected(self):
        with pytest.raises(ValueError):
            Bounds(np.array([[0, 0], [1, 1], [2, 2]]))

    def test_diagonal(self):
        assert Bounds.rect(0, 0, 3, 4).diagonal() == pytest.approx(5.0)


class TestValidateDataset:
    def test_well_formed_dataset_passes(self):
        scenario = make_scenario()
        report = validate_dataset(small_dataset(scenario), scenario)
        assert report.is_valid
        assert report.violations == []

    def test_nan_coefficient_reported_with_indices(self):
        scenario = make_scenario()
        dataset = small_dataset(scenario)
        dataset.csi[3, 1, 0, 2, 17] = np.nan
        report = validate_dataset(dataset, scenario)
        assert len(report.violations) == 1
        v = report.violations[0]
        assert v.index == 3
        assert v.kind == "non_finite"
        assert v.tensor_index == (1, 0, 2, 17)

    def test_timestamp_monotonicity_violation_at_index(self):
        scenario = make_scenario()
        dataset = small_dataset(scenario, n=3)
        dataset.timestamps[:] = [0.0, 2.0, 1.0]
        report = validate_dataset(dataset, scenario)
        assert len(report.violations) == 1
        assert report.violations[0].index == 2
        assert report.violations[0].kind == "timestamp"

    def test_out_of_bounds_position(self):
        scenario = make_scenario()
        dataset = small_dataset(scenario)
        dataset.positions[5, :2] = [99.0, 99.0]
        report = validate_dataset(dataset, scenario)
        assert [v.kind for v in report.violations] == ["bounds"]
        assert report.violations[0].index == 5

    def test_idempotent_and_side_effect_free(self):
        scenario = make_scenario()
        dataset = small_dataset(scenario)
        before = dataset.csi.copy()
        r1 = validate_dataset(dataset, scenario)
        r2 = validate_dataset(dataset, scenario)
        assert np.array_equal(dataset.csi, before)
        assert [v.kind for v in r1.violations] == [v.kind for v in r2.violations]

    def test_empty_dataset_is_valid(self):
        scenario = make_scenario()
        report = validate_dataset(Dataset.empty(scenario), scenario)
        assert report.is_valid
