"""Shared test fixtures: a desk-scale scenario (V=64 segments) and a few
simulated scenes reused across modules. Scene fixtures are session-scoped
because ToA/AoA estimation over a full dataset is the expensive part."""

import numpy as np
import pytest

from chartloc.likelihoods import WeightConfig, build_estimate_bundle
from chartloc.model import Bounds, OfdmConfig, Scenario
from chartloc.simulator import SimConfig, generate_dataset
from chartloc.toa import ToaConfig, delay_spread_matrix, estimate_toa_all, toa_matrix
from chartloc.aoa import aoa_matrix, estimate_aoa_all

CARRIER_HZ = 1.272e9
BANDWIDTH_HZ = 50e6
N_SUB = 256  # 4 segments of length 64 at test scale


def make_scenario(n_sub: int = N_SUB, tx_height: float = 1.0) -> Scenario:
    """14 m x 14 m scene with B=4 corner arrays at transmitter height, all
    facing the scene center."""
    ofdm = OfdmConfig(carrier_frequency_hz=CARRIER_HZ, bandwidth_hz=BANDWIDTH_HZ, n_sub=n_sub)
    corners = np.array([[0.0, 0.0], [14.0, 0.0], [14.0, 14.0], [0.0, 14.0]])
    center = np.array([7.0, 7.0])
    centers = np.column_stack([corners, np.full(4, tx_height)])
    normals = np.zeros((4, 3))
    for b, c in enumerate(corners):
        d = center - c
        normals[b, :2] = d / np.linalg.norm(d)
    return Scenario.make(
        ofdm, centers, normals, m_row=2, m_col=4, tx_height_m=tx_height, bounds=Bounds.rect(0, 0, 14, 14)
    )


def grid_trajectory(n_points: int, lo: float = 1.5, hi: float = 12.5, speed: float = 1.0):
    """Deterministic serpentine of n_points over the open scene interior."""
    side = int(np.ceil(np.sqrt(n_points)))
    xs = np.linspace(lo, hi, side)
    ys = np.linspace(lo, hi, side)
    pts = []
    for i, y in enumerate(ys):
        row = xs if i % 2 == 0 else xs[::-1]
        pts.extend((x, y) for x in row)
    pts = pts[:n_points]
    times = np.arange(n_points, dtype=float) * (np.hypot(hi - lo, 0) / max(side - 1, 1)) / speed
    return [(float(t), np.array(p)) for t, p in zip(times, pts)]


TOA_CONFIG = ToaConfig(n_segments=4, segment_length=64, strongest_subset_size=3, max_sources=8)


@pytest.fixture(scope="session")
def scenario():
    return make_scenario()


@pytest.fixture(scope="session")
def los_scene(scenario):
    """100-point noiseless single-LoS dataset."""
    sim = SimConfig(n_scatterers=0, snr_db=float("inf"), seed=7)
    dataset = generate_dataset(scenario, sim, grid_trajectory(100))
    return dataset, sim


@pytest.fixture(scope="session")
def noisy_scene(scenario):
    """Same geometry at 20 dB SNR."""
    sim = SimConfig(n_scatterers=0, snr_db=20.0, seed=7)
    dataset = generate_dataset(scenario, sim, grid_trajectory(100))
    return dataset, sim


def multipath_sim(seed: int = 11) -> SimConfig:
    """8-scatterer, 20 dB scene: hall-wall reflectors on a ring outside the
    walk area plus transmitter-local clutter (antenna mount)."""
    return SimConfig(
        n_scatterers=4,
        snr_db=20.0,
        scatter_attenuation_db=3.0,
        seed=seed,
        scatterer_placement="ring",
        n_tx_scatterers=4,
        tx_scatter_radius_m=(0.2, 0.9),
        tx_scatter_attenuation_db=1.0,
    )


@pytest.fixture(scope="session")
def multipath_scene(scenario):
    dataset = generate_dataset(scenario, multipath_sim(), grid_trajectory(100))
    return dataset, multipath_sim()


def make_bundle(dataset, scenario, n_threads: int = 1):
    toa_est = estimate_toa_all(dataset, scenario, TOA_CONFIG, n_threads=n_threads)
    tau = toa_matrix(toa_est)
    spread = delay_spread_matrix(toa_est)
    alpha = aoa_matrix(estimate_aoa_all(dataset, scenario, tau, n_threads=n_threads))
    return build_estimate_bundle(tau, alpha, spread, WeightConfig.defaults(scenario.ofdm))


@pytest.fixture(scope="session")
def los_bundle(scenario, los_scene):
    dataset, _ = los_scene
    return make_bundle(dataset, scenario)


@pytest.fixture(scope="session")
def multipath_bundle(scenario, multipath_scene):
    dataset, _ = multipath_scene
    return make_bundle(dataset, scenario)
