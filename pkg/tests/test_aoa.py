import numpy as np
import pytest

from chartloc.aoa import (
    aoa_matrix,
    estimate_aoa_all,
    estimate_azimuth_aoa,
    extract_los_component,
)
from chartloc.model import SPEED_OF_LIGHT
from chartloc.simulator import PathComponent, SimConfig, generate_dataset, paths_to_csi
from chartloc.toa import estimate_toa, estimate_toa_all, toa_matrix

from conftest import TOA_CONFIG, grid_trajectory, make_scenario
from test_simulator import broadside_scenario

NS = 1e-9


def csi_single_path(scenario, tau=40 * NS, azimuth=0.0, elevation=0.0, gain=1.0 + 0j):
    paths = [[PathComponent(tau, gain, azimuth, elevation, True)]]
    return paths_to_csi(paths, scenario, SimConfig(), np.random.default_rng(0))


@pytest.fixture(scope="module")
def one_array(request):
    return broadside_scenario(n_sub=256)


class TestExtractLosComponent:
    def test_coherent_sum_at_true_delay(self, one_array):
        gain = 0.7 - 0.2j
        tau = 40 * NS
        csi = csi_single_path(one_array, tau=tau, gain=gain)
        h_prime = extract_los_component(csi, 0, tau, one_array.ofdm)
        n_sub = one_array.ofdm.n_sub
        assert np.allclose(np.abs(h_prime), n_sub * abs(gain), rtol=1e-12)

    def test_one_bin_offset_nulls_flat_path(self, one_array):
        # DFT-bin orthogonality: offsetting by 1/bandwidth zeroes the sum
        tau = 40 * NS
        csi = csi_single_path(one_array, tau=tau)
        h_prime = extract_los_component(
            csi, 0, tau + 1.0 / one_array.ofdm.bandwidth_hz, one_array.ofdm
        )
        assert np.max(np.abs(h_prime)) < 1e-9 * one_array.ofdm.n_sub

    def test_zero_tensor_maps_to_zero(self, one_array):
        csi = np.zeros(one_array.csi_shape(), dtype=complex)
        assert np.all(extract_los_component(csi, 0, 10 * NS, one_array.ofdm) == 0)

    def test_linearity(self, one_array):
        rng = np.random.default_rng(1)
        shape = one_array.csi_shape()
        x = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        y = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        a, b = 1.7 - 0.3j, -0.4 + 2j
        lhs = extract_los_component(a * x + b * y, 0, 33 * NS, one_array.ofdm)
        rhs = a * extract_los_component(x, 0, 33 * NS, one_array.ofdm) + b * extract_los_component(
            y, 0, 33 * NS, one_array.ofdm
        )
        assert np.allclose(lhs, rhs, rtol=1e-10)

    def test_rejects_non_finite_delay(self, one_array):
        csi = csi_single_path(one_array)
        with pytest.raises(ValueError):
            extract_los_component(csi, 0, float("nan"), one_array.ofdm)


class TestEstimateAzimuth:
    def test_broadside(self, one_array):
        csi = csi_single_path(one_array, azimuth=0.0)
        h_prime = extract_los_component(csi, 0, 40 * NS, one_array.ofdm)
        est = estimate_azimuth_aoa(h_prime)
        assert est.azimuth_rad == pytest.approx(0.0, abs=1e-6)
        assert not est.clipped

    @pytest.mark.parametrize("deg", [30.0, -30.0, 55.0])
    def test_oblique_angles(self, one_array, deg):
        csi = csi_single_path(one_array, azimuth=np.deg2rad(deg))
        h_prime = extract_los_component(csi, 0, 40 * NS, one_array.ofdm)
        est = estimate_azimuth_aoa(h_prime)
        assert est.azimuth_rad == pytest.approx(np.deg2rad(deg), abs=np.deg2rad(0.01))

    def test_global_scaling_invariance(self, one_array):
        csi = csi_single_path(one_array, azimuth=np.deg2rad(20.0))
        h1 = extract_los_component(csi, 0, 40 * NS, one_array.ofdm)
        h2 = extract_los_component(csi * (3.0 - 4.0j), 0, 40 * NS, one_array.ofdm)
        a1 = estimate_azimuth_aoa(h1).azimuth_rad
        a2 = estimate_azimuth_aoa(h2).azimuth_rad
        assert a1 == pytest.approx(a2, abs=1e-7)

    def test_endfire_phase_sets_clip_flag(self):
        # phase step exactly pi: impossible physically at lambda/2 spacing
        cols = np.exp(1j * np.pi * np.arange(4))
        h_prime = np.vstack([cols, cols])
        est = estimate_azimuth_aoa(h_prime)
        assert est.clipped
        assert abs(est.azimuth_rad) < np.pi / 2

    def test_zero_input_rejected(self):
        with pytest.raises(ValueError):
            estimate_azimuth_aoa(np.zeros((2, 4), dtype=complex))


class TestPipeline:
    def test_toa_gated_aoa_within_a_tenth_degree(self, one_array):
        for deg in [-60.0, -25.0, 0.0, 40.0, 60.0]:
            csi = csi_single_path(one_array, tau=55 * NS, azimuth=np.deg2rad(deg))
            toa = estimate_toa(csi, 0, one_array.ofdm, TOA_CONFIG)
            h_prime = extract_los_component(csi, 0, toa.tau_s, one_array.ofdm)
            est = estimate_azimuth_aoa(h_prime)
            assert est.azimuth_rad == pytest.approx(np.deg2rad(deg), abs=np.deg2rad(0.1))

    def test_estimate_aoa_all_shapes_and_determinism(self, scenario):
        dataset = generate_dataset(scenario, SimConfig(snr_db=25.0, seed=6), grid_trajectory(6))
        tau = toa_matrix(estimate_toa_all(dataset, scenario, TOA_CONFIG))
        a = estimate_aoa_all(dataset, scenario, tau)
        b = estimate_aoa_all(dataset, scenario, tau, n_threads=4)
        assert a.shape == (6, 4)
        assert np.array_equal(aoa_matrix(a), aoa_matrix(b))

    def test_los_scene_azimuth_accuracy(self, scenario, los_scene, los_bundle):
        dataset, _ = los_scene
        from chartloc.model import azimuth_to_points

        errs = []
        for b in range(4):
            true_az = azimuth_to_points(
                dataset.positions, scenario.arrays.centers[b], scenario.arrays.normals[b]
            )
            errs.append(np.abs(los_bundle.aoa_rad[:, b] - true_az))
        errs = np.concatenate(errs)
        assert np.median(errs) < np.deg2rad(0.1)
