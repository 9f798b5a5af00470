"""CSI dissimilarity: angle-delay-profile distance, timestamp fusion, geodesic
(shortest-path) completion and the dissimilarity-to-meters scale estimate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .model import Dataset, csi_values

STAGES = ("raw", "fused", "geodesic", "scaled")


@dataclass(frozen=True)
class AdpConfig:
    n_beams: int = 16
    n_delay_bins: int = 64


@dataclass(frozen=True)
class DissimilarityMatrix:
    values: np.ndarray  # (L, L)
    stage: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("dissimilarity matrix must be square")
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        scale = max(float(np.abs(v).max()) if v.size else 0.0, 1e-300)
        if np.abs(v - v.T).max() > 1e-9 * scale if v.size else False:
            raise ValueError("dissimilarity matrix must be symmetric within 1e-9")
        if v.size and (np.any(np.diag(v) != 0) or np.any(v < -1e-12 * scale)):
            raise ValueError("dissimilarities must be non-negative with zero diagonal")
        v = 0.5 * (v + v.T)
        np.clip(v, 0.0, None, out=v)
        np.fill_diagonal(v, 0.0)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


def compute_adp(csi, b: int, config: AdpConfig = AdpConfig()) -> np.ndarray:
    """Angle-delay profile of array b: beamspace power over (beam, delay bin),
    row-averaged and normalized to unit Frobenius norm.

    Invariant to global phase rotations of the CSI by construction.
    """
    h = csi_values(csi)[b]  # (m_row, m_col, n_sub)
    m_col, n_sub = h.shape[1], h.shape[2]
    if config.n_beams < m_col:
        raise ValueError("n_beams must be >= m_col")
    if config.n_delay_bins > n_sub:
        raise ValueError("n_delay_bins must be <= n_sub")

    cir = np.fft.ifft(h, axis=-1)[:, :, : config.n_delay_bins]  # (m_row, m_col, K)
    beam_phases = -np.pi + 2 * np.pi * np.arange(config.n_beams) / config.n_beams
    beam_matrix = np.exp(-1j * np.outer(beam_phases, np.arange(m_col)))  # (Q, m_col)
    beamspace = np.einsum("qc,rck->rqk", beam_matrix, cir)
    power = np.mean(np.abs(beamspace) ** 2, axis=0)  # (Q, K)

    norm = np.linalg.norm(power)
    if norm == 0.0:
        raise ValueError("zero CSI tensor has no angle-delay profile")
    return power / norm


def compute_adp_features(dataset: Dataset, config: AdpConfig = AdpConfig()) -> np.ndarray:
    """Per-datapoint, per-array ADP stack of shape (L, B, n_beams, n_delay_bins)."""
    l_count, b_count = dataset.csi.shape[0], dataset.csi.shape[1]
    out = np.empty((l_count, b_count, config.n_beams, config.n_delay_bins))
    for l in range(l_count):
        for b in range(b_count):
            out[l, b] = compute_adp(dataset.csi[l], b, config)
    return out


def csi_dissimilarity(adp_x: np.ndarray, adp_y: np.ndarray) -> float:
    """Cosine-type distance 1 - mean_b <ADP_x^b, ADP_y^b> between unit-norm
    per-array features of shape (B, n_beams, n_delay_bins)."""
    x, y = np.asarray(adp_x), np.asarray(adp_y)
    if x.shape != y.shape:
        raise ValueError(f"ADP shapes differ: {x.shape} vs {y.shape}")
    inner = np.einsum("bqk,bqk->b", x, y)
    return float(1.0 - inner.mean())


def dissimilarity_matrix(features: np.ndarray) -> DissimilarityMatrix:
    """Raw pairwise ADP dissimilarity from a (L, B, Q, K) feature stack."""
    l_count, b_count = features.shape[0], features.shape[1]
    flat = features.reshape(l_count, -1)
    gram = flat @ flat.T
    d = 1.0 - gram / b_count
    return DissimilarityMatrix(d, stage="raw")


def fuse_with_timestamps(
    raw: DissimilarityMatrix,
    timestamps: np.ndarray,
    v_max_mps: float,
    calibration: float | None = None,
) -> DissimilarityMatrix:
    """Cap dissimilarities by how far the transmitter can travel between the
    two timestamps: d_fuse = min(d_raw, rho * v_max * |t_i - t_j|).

    rho converts meters to raw-dissimilarity units; by default it is the
    median ratio d_raw / (v_max * dt) over consecutive datapoints.
    """
    if v_max_mps <= 0:
        raise ValueError("v_max_mps must be positive")
    t = np.asarray(timestamps, dtype=float)
    if t.shape != (len(raw),):
        raise ValueError("timestamps must have one entry per datapoint")

    if calibration is not None:
        rho = float(calibration)
    else:
        dt = np.diff(t)
        adj = raw.values[np.arange(len(raw) - 1), np.arange(1, len(raw))]
        valid = dt > 0
        rho = float(np.median(adj[valid] / (v_max_mps * dt[valid]))) if np.any(valid) else 1.0

    bound = rho * v_max_mps * np.abs(t[:, None] - t[None, :])
    return DissimilarityMatrix(np.minimum(raw.values, bound), stage="fused")


def geodesic_complete(fused: DissimilarityMatrix, k_neighbors: int = 20) -> DissimilarityMatrix:
    """Shortest-path completion over the symmetric k-nearest-neighbor graph.

    The output satisfies the triangle inequality by construction; a
    disconnected graph is an error naming the component sizes.
    """
    n = len(fused)
    if n <= 1:
        return DissimilarityMatrix(np.zeros((n, n)), stage="geodesic")
    if k_neighbors < 2:
        raise ValueError("k_neighbors must be >= 2")
    k = min(k_neighbors, n - 1)

    d = fused.values
    order = np.argsort(d + np.where(np.eye(n, dtype=bool), np.inf, 0.0), axis=1, kind="stable")
    neighbor_idx = order[:, :k]
    rows = np.repeat(np.arange(n), k)
    cols = neighbor_idx.ravel()
    data = d[rows, cols]
    graph = csr_matrix((data, (rows, cols)), shape=(n, n))
    graph = graph.maximum(graph.T)  # symmetric union of directed kNN edges

    n_comp, labels = connected_components(graph, directed=False)
    if n_comp > 1:
        sizes = np.bincount(labels)
        raise ValueError(
            f"kNN graph has {n_comp} connected components with sizes {sizes.tolist()}; "
            "increase k_neighbors"
        )

    geo = shortest_path(graph, method="D", directed=False)
    return DissimilarityMatrix(0.5 * (geo + geo.T), stage="geodesic")


def estimate_scale_gamma(
    geodesic: DissimilarityMatrix,
    classical_estimates: np.ndarray,
    pair_sample: int | None = None,
    min_distance_m: float = 0.1,
    seed: int = 0,
) -> float:
    """Mean ratio of dissimilarity to estimated inter-point distance.

    Pairs whose classical estimates are closer than min_distance_m are
    excluded (the ratio diverges there). pair_sample draws that many ordered
    pairs uniformly instead of using all of them.
    """
    est = np.asarray(classical_estimates, dtype=float)
    n = len(geodesic)
    if est.shape[0] != n:
        raise ValueError("need one classical estimate per datapoint")
    if not np.all(np.isfinite(est)):
        raise ValueError("classical estimates must be finite")

    if pair_sample is None:
        dist = np.linalg.norm(est[:, None, :] - est[None, :, :], axis=2)
        mask = ~np.eye(n, dtype=bool) & (dist > min_distance_m)
        if not np.any(mask):
            raise ValueError("no estimate pairs pass the minimum-distance threshold")
        return float(np.mean(geodesic.values[mask] / dist[mask]))

    rng = np.random.default_rng(seed)
    lx = rng.integers(0, n, size=pair_sample)
    ly = (lx + rng.integers(1, n, size=pair_sample)) % n
    dist = np.linalg.norm(est[ly] - est[lx], axis=1)
    keep = dist > min_distance_m
    if not np.any(keep):
        raise ValueError("no sampled pairs pass the minimum-distance threshold")
    return float(np.mean(geodesic.values[lx[keep], ly[keep]] / dist[keep]))


def scale_by_gamma(matrix: DissimilarityMatrix, gamma: float) -> DissimilarityMatrix:
    """Scaled dissimilarities d / gamma, approximating distances in meters."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return DissimilarityMatrix(matrix.values / gamma, stage="scaled")


def check_triangle_inequality(matrix: DissimilarityMatrix, tol: float = 1e-6) -> float:
    """Worst violation of d(i,k) <= d(i,j) + d(j,k) - for tests and debugging."""
    d = matrix.values
    worst = 0.0
    for j in range(d.shape[0]):
        via = d[:, j][:, None] + d[j, :][None, :]
        worst = max(worst, float((d - via).max()))
    return worst


def save_matrix(base_path, matrix: DissimilarityMatrix, params: dict | None = None) -> None:
    base = Path(base_path)
    matrix.values.astype("<f4").tofile(base.with_suffix(".bin"))
    sidecar = {"stage": matrix.stage, "length": len(matrix), "params": params or {}}
    with open(base.with_suffix(".json"), "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_matrix(base_path) -> DissimilarityMatrix:
    base = Path(base_path)
    with open(base.with_suffix(".json")) as f:
        sidecar = json.load(f)
    n = int(sidecar["length"])
    values = np.fromfile(base.with_suffix(".bin"), dtype="<f4").reshape(n, n).astype(float)
    return DissimilarityMatrix(values, stage=sidecar["stage"])
