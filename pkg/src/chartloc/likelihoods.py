"""Likelihood functions for ToA / TDoA / AoA position estimation, plus the
delay-spread statistic and the heuristic quality weights (sigma, kappa).

All likelihoods are evaluated in the log domain internally; with sigma in the
nanosecond range the plain Gaussian densities overflow/underflow double
precision, so the exp() happens only at the API boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import i0e

from .model import SPEED_OF_LIGHT, OfdmConfig, Scenario, azimuth_to_points, csi_values

_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)

# power-delay-profile windowing constants: stop once the window holds this
# energy share, then keep absorbing neighbours above this fraction of the
# window's mean bin power (suppresses the noise floor, keeps flat profiles)
_WINDOW_ENERGY_SHARE = 0.9
_WINDOW_EXTEND_LEVEL = 0.5


def rms_delay_spread(csi, b: int, ofdm: OfdmConfig) -> float:
    """RMS width of the power delay profile of array b, in seconds.

    The profile is the element-averaged squared magnitude of the IDFT over
    subcarriers; it is truncated to its strongest contiguous energy window
    before the second moment is taken, so a flat noise floor does not inflate
    the spread.
    """
    h = csi_values(csi)[b]
    cir = np.fft.ifft(h, axis=-1)
    pdp = np.mean(np.abs(cir) ** 2, axis=(0, 1))
    total = float(pdp.sum())
    if total <= 0.0:
        raise ValueError("zero-energy CSI tensor has no delay profile")

    n = pdp.size
    lo = hi = int(np.argmax(pdp))
    energy = float(pdp[lo])

    def grow_once(prefer_any: bool) -> bool:
        nonlocal lo, hi, energy
        if hi - lo + 1 >= n:
            return False
        left, right = pdp[(lo - 1) % n], pdp[(hi + 1) % n]
        if not prefer_any:
            level = _WINDOW_EXTEND_LEVEL * energy / (hi - lo + 1)
            if max(left, right) < level:
                return False
        if right >= left:
            hi += 1
            energy += float(right)
        else:
            lo -= 1
            energy += float(left)
        return True

    while energy < _WINDOW_ENERGY_SHARE * total:
        if not grow_once(prefer_any=True):
            break
    while grow_once(prefer_any=False):
        pass

    idx = np.arange(lo, hi + 1)  # unwrapped so windows may straddle bin 0
    weights = pdp[idx % n]
    mean = float(np.sum(weights * idx) / np.sum(weights))
    var = float(np.sum(weights * (idx - mean) ** 2) / np.sum(weights))
    bin_spacing_s = 1.0 / ofdm.bandwidth_hz
    return float(np.sqrt(var) * bin_spacing_s)


@dataclass(frozen=True)
class WeightConfig:
    sigma_min_s: float
    c_sigma: float = 1.0
    kappa_max: float = 100.0
    c_kappa: float = 4.0

    @classmethod
    def defaults(cls, ofdm: OfdmConfig) -> "WeightConfig":
        # sigma floor = half a delay-resolution cell
        return cls(sigma_min_s=1.0 / (2.0 * ofdm.bandwidth_hz))


@dataclass(frozen=True)
class QualityWeights:
    sigma_toa_s: np.ndarray  # (L, B)
    sigma_tdoa_s: np.ndarray  # (L, B, B)
    kappa: np.ndarray  # (L, B)

    def __post_init__(self):
        if np.any(self.sigma_toa_s <= 0) or np.any(self.sigma_tdoa_s <= 0):
            raise ValueError("all sigma values must be positive")
        if np.any(self.kappa < 0):
            raise ValueError("kappa must be non-negative")


def compute_quality_weights(delay_spread: np.ndarray, config: WeightConfig) -> QualityWeights:
    """Heuristic per-estimate quality weights from observed delay spreads.

    sigma grows linearly with the spread from the sigma_min floor; kappa decays
    from kappa_max as the spread exceeds the dataset median.
    """
    spread = np.asarray(delay_spread, dtype=float)
    if np.any(spread < 0):
        raise ValueError("delay spreads must be non-negative")
    sigma = config.sigma_min_s + config.c_sigma * spread
    sigma_tdoa = np.sqrt(sigma[:, :, None] ** 2 + sigma[:, None, :] ** 2)

    median = float(np.median(spread)) if spread.size else 0.0
    if median > 0:
        ratio = spread / median
    else:
        ratio = np.zeros_like(spread)
    kappa = config.kappa_max / (1.0 + config.c_kappa * ratio)
    return QualityWeights(sigma_toa_s=sigma, sigma_tdoa_s=sigma_tdoa, kappa=kappa)


@dataclass(frozen=True)
class EstimateBundle:
    """Per-datapoint, per-array ToA/AoA estimates and their quality weights."""

    toa_s: np.ndarray  # (L, B)
    aoa_rad: np.ndarray  # (L, B)
    delay_spread_s: np.ndarray  # (L, B)
    weights: QualityWeights

    def __post_init__(self):
        l, b = self.toa_s.shape
        for name, arr, shape in [
            ("aoa_rad", self.aoa_rad, (l, b)),
            ("delay_spread_s", self.delay_spread_s, (l, b)),
            ("sigma_toa_s", self.weights.sigma_toa_s, (l, b)),
            ("sigma_tdoa_s", self.weights.sigma_tdoa_s, (l, b, b)),
            ("kappa", self.weights.kappa, (l, b)),
        ]:
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    @property
    def n_points(self) -> int:
        return self.toa_s.shape[0]

    @property
    def n_arrays(self) -> int:
        return self.toa_s.shape[1]


def build_estimate_bundle(
    toa_s: np.ndarray,
    aoa_rad: np.ndarray,
    delay_spread_s: np.ndarray,
    config: WeightConfig,
) -> EstimateBundle:
    weights = compute_quality_weights(np.asarray(delay_spread_s, float), config)
    return EstimateBundle(
        toa_s=np.asarray(toa_s, float),
        aoa_rad=np.asarray(aoa_rad, float),
        delay_spread_s=np.asarray(delay_spread_s, float),
        weights=weights,
    )


def _query_points_3d(x, scenario: Scenario) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    return scenario.lift(pts)


def _distances_m(points3d: np.ndarray, scenario: Scenario) -> np.ndarray:
    diff = points3d[:, None, :] - scenario.arrays.centers[None, :, :]
    return np.linalg.norm(diff, axis=2)


def log_likelihood_toa_many(x, tau_tx, bundle: EstimateBundle, l: int, scenario: Scenario) -> np.ndarray:
    """Log of the ToA likelihood for query point(s) x and transmit time tau_tx."""
    pts = _query_points_3d(x, scenario)
    d = _distances_m(pts, scenario)  # (N, B)
    sigma = bundle.weights.sigma_toa_s[l]
    z = (d / SPEED_OF_LIGHT - bundle.toa_s[l][None, :] + np.asarray(tau_tx)[..., None]) / sigma
    return np.sum(-_LOG_SQRT_2PI - np.log(sigma) - 0.5 * z**2, axis=-1)


def log_likelihood_tdoa_many(x, bundle: EstimateBundle, l: int, scenario: Scenario) -> np.ndarray:
    """Log of the TDoA likelihood over all ordered array pairs b1 < b2."""
    pts = _query_points_3d(x, scenario)
    d = _distances_m(pts, scenario)
    b = bundle.n_arrays
    i1, i2 = np.triu_indices(b, k=1)
    sigma = bundle.weights.sigma_tdoa_s[l][i1, i2]
    resid = (d[:, i2] - d[:, i1]) / SPEED_OF_LIGHT - (bundle.toa_s[l][i2] - bundle.toa_s[l][i1])[None, :]
    z = resid / sigma
    return np.sum(-_LOG_SQRT_2PI - np.log(sigma) - 0.5 * z**2, axis=-1)


def log_bessel_i0(kappa) -> np.ndarray:
    """log(I0(kappa)), overflow-safe for large concentration."""
    kappa = np.asarray(kappa, dtype=float)
    return np.log(i0e(kappa)) + kappa


def log_likelihood_aoa_many(x, bundle: EstimateBundle, l: int, scenario: Scenario) -> np.ndarray:
    """Log of the von Mises AoA likelihood product over arrays."""
    pts = _query_points_3d(x, scenario)
    kappa = bundle.weights.kappa[l]
    total = np.zeros(len(pts))
    for b in range(bundle.n_arrays):
        az = azimuth_to_points(pts, scenario.arrays.centers[b], scenario.arrays.normals[b])
        delta = az - bundle.aoa_rad[l, b]
        total += kappa[b] * np.cos(delta) - np.log(2 * np.pi) - log_bessel_i0(kappa[b])
    return total


def log_likelihood_joint_many(
    x, tau_tx, bundle: EstimateBundle, l: int, scenario: Scenario, which: str = "aoa_toa"
) -> np.ndarray:
    """Joint log-likelihoods: 'aoa_toa' needs tau_tx, 'aoa_tdoa' does not."""
    if which == "aoa_toa":
        return log_likelihood_aoa_many(x, bundle, l, scenario) + log_likelihood_toa_many(
            x, tau_tx, bundle, l, scenario
        )
    if which == "aoa_tdoa":
        return log_likelihood_aoa_many(x, bundle, l, scenario) + log_likelihood_tdoa_many(
            x, bundle, l, scenario
        )
    raise ValueError(f"unknown joint likelihood {which!r}")


def _scalar(fn_values: np.ndarray) -> float:
    return float(np.asarray(fn_values).reshape(-1)[0])


def likelihood_toa(x, tau_tx: float, bundle: EstimateBundle, l: int, scenario: Scenario) -> float:
    return float(np.exp(_scalar(log_likelihood_toa_many(x, tau_tx, bundle, l, scenario))))


def likelihood_tdoa(x, bundle: EstimateBundle, l: int, scenario: Scenario) -> float:
    return float(np.exp(_scalar(log_likelihood_tdoa_many(x, bundle, l, scenario))))


def likelihood_aoa(x, bundle: EstimateBundle, l: int, scenario: Scenario) -> float:
    return float(np.exp(_scalar(log_likelihood_aoa_many(x, bundle, l, scenario))))


def likelihood_joint(
    x, tau_tx, bundle: EstimateBundle, l: int, scenario: Scenario, which: str = "aoa_toa"
) -> float:
    return float(np.exp(_scalar(log_likelihood_joint_many(x, tau_tx, bundle, l, scenario, which))))
