"""Per-datapoint, per-array time-of-arrival estimation.

Pipeline: split subcarriers into segments, average the snapshot
autocorrelation over antennas and segments, forward-backward average, MDL
source count, root-MUSIC over the delay manifold, then pick the earliest of
the few strongest sources (assumed LoS or shortest path).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .likelihoods import rms_delay_spread
from .model import Dataset, OfdmConfig, Scenario, csi_values
from .subspace import (
    SourceEstimate,
    delay_mapping,
    estimate_autocorrelation,
    estimate_source_count_mdl,
    forward_backward_average,
    root_music,
)


@dataclass(frozen=True)
class ToaConfig:
    n_segments: int = 4  # U
    segment_length: int = 256  # V; tests typically use 64
    strongest_subset_size: int = 3
    max_sources: int = 8

    def __post_init__(self):
        if self.n_segments < 1 or self.segment_length < 2:
            raise ValueError("need n_segments >= 1 and segment_length >= 2")
        if self.strongest_subset_size < 1:
            raise ValueError("strongest_subset_size must be >= 1")


@dataclass(frozen=True)
class ToaEstimate:
    tau_s: float
    all_sources: tuple[SourceEstimate, ...]
    rms_delay_spread_s: float


def estimate_toa(csi, b: int, ofdm: OfdmConfig, config: ToaConfig = ToaConfig()) -> ToaEstimate:
    h = csi_values(csi)[b]  # (m_row, m_col, n_sub)
    u, v = config.n_segments, config.segment_length
    if u * v != h.shape[-1]:
        raise ValueError(f"n_segments * segment_length = {u * v} != n_sub = {h.shape[-1]}")

    snapshots = h.reshape(h.shape[0] * h.shape[1] * u, v)
    r = forward_backward_average(estimate_autocorrelation(snapshots))

    k = estimate_source_count_mdl(r.eigenvalues_descending(), r.n_snapshots)
    k = int(np.clip(k, 1, min(config.max_sources, v - 1)))  # a ToA always gets picked

    sources = root_music(r, k, delay_mapping(ofdm.subcarrier_spacing_hz))
    subset = sources[: config.strongest_subset_size]
    tau = min(s.parameter for s in subset)
    return ToaEstimate(
        tau_s=float(tau),
        all_sources=tuple(sources),
        rms_delay_spread_s=rms_delay_spread(csi, b, ofdm),
    )


def estimate_toa_all(
    dataset: Dataset,
    scenario: Scenario,
    config: ToaConfig = ToaConfig(),
    n_threads: int = 1,
) -> np.ndarray:
    """ToaEstimate matrix of shape (L, B), order-preserving and identical for
    serial and parallel execution."""
    b_count = scenario.arrays.b_count

    def per_point(l: int) -> list[ToaEstimate]:
        return [estimate_toa(dataset.csi[l], b, scenario.ofdm, config) for b in range(b_count)]

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            rows = list(pool.map(per_point, range(len(dataset))))
    else:
        rows = [per_point(l) for l in range(len(dataset))]

    out = np.empty((len(dataset), b_count), dtype=object)
    for l, row in enumerate(rows):
        out[l, :] = row
    return out


def toa_matrix(estimates: np.ndarray) -> np.ndarray:
    """Extract tau_s from an (L, B) ToaEstimate matrix."""
    return np.vectorize(lambda e: e.tau_s)(estimates).astype(float) if estimates.size else np.zeros(estimates.shape)


def delay_spread_matrix(estimates: np.ndarray) -> np.ndarray:
    return (
        np.vectorize(lambda e: e.rms_delay_spread_s)(estimates).astype(float)
        if estimates.size
        else np.zeros(estimates.shape)
    )
