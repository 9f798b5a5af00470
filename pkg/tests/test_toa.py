import numpy as np
import pytest

from chartloc.model import SPEED_OF_LIGHT
from chartloc.simulator import PathComponent, SimConfig, paths_to_csi, generate_dataset
from chartloc.toa import ToaConfig, estimate_toa, estimate_toa_all, toa_matrix

from conftest import TOA_CONFIG, grid_trajectory, make_scenario
from test_simulator import broadside_scenario

NS = 1e-9


def csi_from_paths(scenario, paths_b0, snr_db=float("inf"), seed=0):
    sim = SimConfig(snr_db=snr_db)
    return paths_to_csi([paths_b0], scenario, sim, np.random.default_rng(seed))


@pytest.fixture(scope="module")
def single_array_scenario():
    return broadside_scenario(n_sub=256)


class TestEstimateToa:
    def test_noiseless_single_los(self, single_array_scenario):
        csi = csi_from_paths(single_array_scenario, [PathComponent(40 * NS, 1.0 + 0j, 0.0, 0.0, True)])
        est = estimate_toa(csi, 0, single_array_scenario.ofdm, TOA_CONFIG)
        assert est.tau_s == pytest.approx(40 * NS, abs=0.4 * NS)
        assert est.rms_delay_spread_s == pytest.approx(0.0, abs=1.0 / single_array_scenario.ofdm.bandwidth_hz)

    def test_earliest_of_strongest_wins_over_louder_echo(self, single_array_scenario):
        paths = [
            PathComponent(40 * NS, 0.5 + 0j, 0.0, 0.0, True),
            PathComponent(120 * NS, 1.0 + 0j, 0.1, 0.0, False),  # stronger but later
        ]
        csi = csi_from_paths(single_array_scenario, paths)
        est = estimate_toa(csi, 0, single_array_scenario.ofdm, TOA_CONFIG)
        assert est.tau_s == pytest.approx(40 * NS, abs=0.4 * NS)

    def test_los_with_weaker_echo(self, single_array_scenario):
        paths = [
            PathComponent(40 * NS, 1.0 + 0j, 0.0, 0.0, True),
            PathComponent(120 * NS, 0.5 + 0j, 0.1, 0.0, False),  # -6 dB echo
        ]
        csi = csi_from_paths(single_array_scenario, paths)
        est = estimate_toa(csi, 0, single_array_scenario.ofdm, TOA_CONFIG)
        assert est.tau_s == pytest.approx(40 * NS, abs=0.4 * NS)

    def test_pure_noise_degrades_gracefully(self, single_array_scenario):
        rng = np.random.default_rng(9)
        shape = single_array_scenario.csi_shape()
        csi = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        est = estimate_toa(csi, 0, single_array_scenario.ofdm, TOA_CONFIG)
        assert np.isfinite(est.tau_s)
        # noise floor spreads energy over the whole profile
        assert est.rms_delay_spread_s > 10.0 / single_array_scenario.ofdm.bandwidth_hz

    def test_segmentation_must_cover_all_subcarriers(self, single_array_scenario):
        csi = csi_from_paths(single_array_scenario, [PathComponent(40 * NS, 1.0, 0.0, 0.0, True)])
        with pytest.raises(ValueError):
            estimate_toa(csi, 0, single_array_scenario.ofdm, ToaConfig(n_segments=4, segment_length=32))

    def test_constant_delay_ramp_shifts_estimate(self, single_array_scenario):
        # unknown transmit time = common delay ramp on every array
        shift = 25 * NS
        spacing = single_array_scenario.ofdm.subcarrier_spacing_hz
        csi = csi_from_paths(single_array_scenario, [PathComponent(40 * NS, 1.0, 0.0, 0.0, True)])
        ramp = np.exp(-2j * np.pi * spacing * shift * np.arange(single_array_scenario.ofdm.n_sub))
        est0 = estimate_toa(csi, 0, single_array_scenario.ofdm, TOA_CONFIG)
        est1 = estimate_toa(csi * ramp, 0, single_array_scenario.ofdm, TOA_CONFIG)
        tol = 1e-3 / single_array_scenario.ofdm.bandwidth_hz
        assert est1.tau_s - est0.tau_s == pytest.approx(shift, abs=tol)

    def test_median_error_non_increasing_with_snr(self, single_array_scenario):
        taus = np.linspace(20, 90, 12) * NS
        medians = []
        for snr in [0.0, 20.0, 40.0]:
            errs = []
            for i, tau in enumerate(taus):
                csi = csi_from_paths(
                    single_array_scenario,
                    [PathComponent(tau, 1.0, 0.0, 0.0, True)],
                    snr_db=snr,
                    seed=100 + i,
                )
                est = estimate_toa(csi, 0, single_array_scenario.ofdm, TOA_CONFIG)
                errs.append(abs(est.tau_s - tau))
            medians.append(np.median(errs))
        assert medians[0] >= medians[1] >= medians[2]


class TestEstimateToaAll:
    def test_shape_and_determinism(self, scenario):
        dataset = generate_dataset(scenario, SimConfig(seed=3), grid_trajectory(6))
        a = estimate_toa_all(dataset, scenario, TOA_CONFIG)
        b = estimate_toa_all(dataset, scenario, TOA_CONFIG)
        assert a.shape == (6, 4)
        assert np.array_equal(toa_matrix(a), toa_matrix(b))

    def test_serial_equals_parallel(self, scenario):
        dataset = generate_dataset(scenario, SimConfig(snr_db=20.0, seed=3), grid_trajectory(6))
        serial = toa_matrix(estimate_toa_all(dataset, scenario, TOA_CONFIG, n_threads=1))
        parallel = toa_matrix(estimate_toa_all(dataset, scenario, TOA_CONFIG, n_threads=4))
        assert np.array_equal(serial, parallel)

    def test_los_scene_recovery(self, scenario, los_scene, los_bundle):
        dataset, _ = los_scene
        true_delays = (
            np.linalg.norm(
                dataset.positions[:, None, :] - scenario.arrays.centers[None, :, :], axis=2
            )
            / SPEED_OF_LIGHT
        )
        err = np.abs(los_bundle.toa_s - true_delays)
        assert np.median(err) < 0.05 / scenario.ofdm.bandwidth_hz
