"""Shared subspace machinery: sample autocorrelation, forward-backward
averaging, MDL source counting and root-MUSIC.

The same code serves the delay manifold (snapshots = subcarrier segments) and
the spatial manifold (snapshots = array rows); only the phase-to-parameter
mapping differs. Convention: a source with per-element phase step phi yields
a snapshot vector v_n = exp(j*phi*n) and a polynomial root at angle phi.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray  # (V, V) Hermitian
    n_snapshots: int

    def __post_init__(self):
        m = np.asarray(self.matrix)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"covariance must be square, got {m.shape}")
        scale = max(float(np.abs(m).max()), 1e-300)
        if np.abs(m - m.conj().T).max() > 1e-9 * scale:
            raise ValueError("covariance is not Hermitian within 1e-9 relative")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def eigenvalues_descending(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)[::-1]


@dataclass(frozen=True)
class SourceEstimate:
    root_phase: float  # unit-circle root angle in (-pi, pi]
    parameter: float  # mapped physical parameter (delay_s or azimuth_rad)
    power: float

    def __post_init__(self):
        if not np.isfinite(self.power):
            raise ValueError("source power must be finite")


def estimate_autocorrelation(snapshots) -> CovarianceEstimate:
    """Sample autocorrelation (1/N) sum_i h_i h_i^H over snapshot vectors."""
    x = np.asarray(snapshots)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need at least one snapshot vector")
    r = np.einsum("ia,ib->ab", x, x.conj()) / x.shape[0]
    return CovarianceEstimate(r, n_snapshots=x.shape[0])


def forward_backward_average(r: CovarianceEstimate) -> CovarianceEstimate:
    """FBCM: (R + J R* J) / 2 with J the exchange matrix. The result is both
    Hermitian and persymmetric."""
    m = r.matrix
    fb = 0.5 * (m + np.flip(m.conj(), axis=(0, 1)))
    # FMA rounding in complex matmul can leave the input Hermitian only to
    # ~1e-16; re-hermitize so both symmetries hold exactly (the symmetric
    # average also preserves persymmetry exactly)
    fb = 0.5 * (fb + fb.conj().T)
    return CovarianceEstimate(fb, n_snapshots=r.n_snapshots)


def estimate_source_count_mdl(eigenvalues, n_snapshots: int) -> int:
    """Minimum-description-length source count from descending eigenvalues.

    MDL(k) = -N (V-k) log(geomean / mean of the V-k smallest eigenvalues)
             + k (2V - k) log(N) / 2
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("eigenvalues must be a non-empty 1D array")
    if np.any(np.diff(lam) > 1e-12 * max(abs(lam[0]), 1e-300)):
        raise ValueError("eigenvalues must be sorted descending")
    if n_snapshots < 1:
        raise ValueError("n_snapshots must be >= 1")
    if lam[0] <= 0:
        raise ValueError("all eigenvalues are zero; source count undefined")

    v = lam.size
    # floor tiny/negative values so noiseless (rank-deficient) inputs stay finite
    lam = np.maximum(lam, lam[0] * v * np.finfo(float).eps)
    log_lam = np.log(lam)

    mdl = np.empty(v)
    for k in range(v):
        tail = v - k
        log_geo = log_lam[k:].mean()
        log_arith = np.log(lam[k:].mean())
        mdl[k] = -n_snapshots * tail * (log_geo - log_arith) + 0.5 * k * (2 * v - k) * np.log(n_snapshots)
    return int(np.argmin(mdl))


def _root_music_polynomial(noise_projector: np.ndarray) -> np.ndarray:
    """Coefficients (highest degree first) of sum_m trace(P, offset=m) z^(m+V-1)."""
    v = noise_projector.shape[0]
    coeffs = np.empty(2 * v - 1, dtype=complex)
    for m in range(-(v - 1), v):
        coeffs[(v - 1) - m] = np.trace(noise_projector, offset=m)
    return coeffs


def root_music(
    r: CovarianceEstimate,
    k: int,
    mapping: Callable[[float], float] = lambda phase: phase,
) -> list[SourceEstimate]:
    """Root-MUSIC parameter estimation for k sources, strongest first.

    Eigendecomposes R, forms the noise projector, roots the MUSIC polynomial
    (companion-matrix eigenvalues) and keeps the k roots inside the unit
    circle that lie closest to it. Powers come from a least-squares fit of
    unit-norm source steering vectors to R.
    """
    v = r.size
    if not 1 <= k < v:
        raise ValueError(f"need 1 <= k < V, got k={k}, V={v}")

    eigval, eigvec = np.linalg.eigh(r.matrix)
    noise = eigvec[:, : v - k]  # smallest V-k eigenvalues
    projector = noise @ noise.conj().T

    roots = np.roots(_root_music_polynomial(projector))
    inside = roots[np.abs(roots) < 1.0]
    if len(inside) < k:
        inside = roots  # fully degenerate projector; fall back to all roots
    order = np.argsort(np.abs(1.0 - np.abs(inside)), kind="stable")
    chosen = inside[order[:k]]

    phases = np.angle(chosen)
    steering = np.exp(1j * np.outer(np.arange(v), phases)) / np.sqrt(v)  # (V, k) unit-norm
    gram = np.abs(steering.conj().T @ steering) ** 2
    rhs = np.real(np.einsum("vk,vw,wk->k", steering.conj(), r.matrix, steering))
    powers, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
    powers = np.maximum(powers, 0.0)

    sources = [
        SourceEstimate(root_phase=float(p), parameter=float(mapping(float(p))), power=float(pw))
        for p, pw in zip(phases, powers)
    ]
    sources.sort(key=lambda s: -s.power)
    return sources


def delay_mapping(subcarrier_spacing_hz: float) -> Callable[[float], float]:
    """Root phase to delay: a delay tau produces per-subcarrier phase step
    -2*pi*spacing*tau, so tau = (-phase mod 2*pi) / (2*pi*spacing). Delays are
    reported in [0, 1/spacing)."""

    def mapping(phase: float) -> float:
        return float(np.mod(-phase, 2 * np.pi) / (2 * np.pi * subcarrier_spacing_hz))

    return mapping


def azimuth_mapping() -> Callable[[float], float]:
    """Root phase to azimuth for half-wavelength spacing: phase = pi*sin(az)."""

    def mapping(phase: float) -> float:
        return float(np.arcsin(np.clip(phase / np.pi, -1.0, 1.0)))

    return mapping
