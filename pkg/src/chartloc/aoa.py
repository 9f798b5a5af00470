"""LoS component extraction and azimuth angle-of-arrival estimation.

The ToA estimate gates the channel impulse response: evaluating the
reconstructed CIR at the estimated LoS delay isolates the LoS coefficient per
antenna, and root-MUSIC over each row of the UPA then resolves the azimuth.
Elevation is not estimated (only two rows).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import Dataset, OfdmConfig, Scenario, csi_values
from .subspace import azimuth_mapping, estimate_autocorrelation, root_music

_CLIP_MARGIN = 1e-6  # keeps azimuth inside the open interval (-pi/2, pi/2)


@dataclass(frozen=True)
class AoaEstimate:
    azimuth_rad: float
    los_matrix: np.ndarray  # (m_row, m_col) LoS coefficients H'
    clipped: bool = False  # spatial phase hit the arcsin domain boundary


def extract_los_component(csi, b: int, tau_s: float, ofdm: OfdmConfig) -> np.ndarray:
    """LoS channel coefficients H'[r, c]: the reconstructed continuous-time CIR
    of array b evaluated at delay tau_s. Linear in the CSI tensor."""
    if not np.isfinite(tau_s):
        raise ValueError("tau_s must be finite")
    h = csi_values(csi)[b]
    phase = np.exp(2j * np.pi * tau_s * ofdm.subcarrier_frequencies())
    return np.einsum("rcn,n->rc", h, phase)


def estimate_azimuth_aoa(h_prime: np.ndarray) -> AoaEstimate:
    """Azimuth from the row-averaged array correlation matrix, single-source
    root-MUSIC without forward-backward averaging."""
    h_prime = np.asarray(h_prime)
    if h_prime.ndim != 2 or h_prime.shape[1] < 2:
        raise ValueError("H' must be (m_row, m_col) with at least 2 columns")
    if not np.any(np.abs(h_prime) > 0):
        raise ValueError("all-zero LoS component; azimuth undefined")

    corr = estimate_autocorrelation(h_prime)  # rows are the snapshots
    source = root_music(corr, k=1, mapping=lambda p: p)[0]

    ratio = source.root_phase / np.pi
    clipped = abs(ratio) >= 1.0 - _CLIP_MARGIN
    azimuth = float(np.arcsin(np.clip(ratio, -1.0 + _CLIP_MARGIN, 1.0 - _CLIP_MARGIN)))
    return AoaEstimate(azimuth_rad=azimuth, los_matrix=h_prime, clipped=clipped)


def estimate_aoa(csi, b: int, tau_s: float, ofdm: OfdmConfig) -> AoaEstimate:
    return estimate_azimuth_aoa(extract_los_component(csi, b, tau_s, ofdm))


def estimate_aoa_all(
    dataset: Dataset,
    scenario: Scenario,
    toa_matrix: np.ndarray,
    n_threads: int = 1,
) -> np.ndarray:
    """AoaEstimate matrix (L, B) using the (L, B) ToA seconds matrix for LoS
    extraction."""
    toa_matrix = np.asarray(toa_matrix, dtype=float)
    b_count = scenario.arrays.b_count

    def per_point(l: int) -> list[AoaEstimate]:
        return [
            estimate_aoa(dataset.csi[l], b, toa_matrix[l, b], scenario.ofdm) for b in range(b_count)
        ]

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            rows = list(pool.map(per_point, range(len(dataset))))
    else:
        rows = [per_point(l) for l in range(len(dataset))]

    out = np.empty((len(dataset), b_count), dtype=object)
    for l, row in enumerate(rows):
        out[l, :] = row
    return out


def aoa_matrix(estimates: np.ndarray) -> np.ndarray:
    """Extract azimuth_rad from an (L, B) AoaEstimate matrix."""
    return (
        np.vectorize(lambda e: e.azimuth_rad)(estimates).astype(float)
        if estimates.size
        else np.zeros(estimates.shape)
    )
