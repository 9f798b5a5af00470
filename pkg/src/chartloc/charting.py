"""Forward charting function: feature extraction, Siamese training, affine
chart-to-world alignment, and augmented training with the combined
distance-plus-likelihood loss.

The network itself is a small MLP trained with torch; trained parameters are
stored as plain numpy arrays so inference and serialization do not depend on
framework state. Training is single-threaded and fully seeded so repeated
runs produce bit-identical models.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .dissimilarity import AdpConfig, DissimilarityMatrix, compute_adp, compute_adp_features
from .likelihoods import (
    EstimateBundle,
    log_bessel_i0,
    log_likelihood_aoa_many,
    log_likelihood_tdoa_many,
)
from .model import SPEED_OF_LIGHT, Dataset, Scenario, csi_values
from .solver import grid_points

MODEL_MAGIC = b"CHARTLOC1\n"


@dataclass(frozen=True)
class TrainConfig:
    hidden_layers: tuple = (128, 128, 128, 128)
    beta: float = 1.0  # Siamese denominator offset
    batch_pairs: int = 256
    steps: int = 10_000
    learning_rate: float = 1e-3
    seed: int = 0
    # combined-loss weight schedule: hold lambda_start for the first
    # hold_fraction of steps, then decay linearly to lambda_end
    lambda_start: float = 0.9
    lambda_end: float = 0.1
    lambda_hold_fraction: float = 0.25
    likelihood_mode: str = "grid"  # grid | raw | log
    normalize_siamese: bool = True  # False trains on the bare squared error
    grid_resolution_m: float = 0.5

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        for lam in (self.lambda_start, self.lambda_end):
            if not 0.0 <= lam <= 1.0:
                raise ValueError("lambda schedule values must lie in [0, 1]")
        if self.likelihood_mode not in ("grid", "raw", "log"):
            raise ValueError("likelihood_mode must be grid, raw or log")

    def lambda_at(self, step: int, total_steps: int) -> float:
        hold = self.lambda_hold_fraction * total_steps
        if step < hold or total_steps <= hold:
            return self.lambda_start
        frac = (step - hold) / max(total_steps - hold, 1)
        return float(self.lambda_start + (self.lambda_end - self.lambda_start) * min(frac, 1.0))


@dataclass
class ChartModel:
    """MLP forward charting function with optional affine world alignment."""

    layer_sizes: tuple  # (input, hidden..., 2)
    weights: list  # [(out, in) float32 arrays]
    biases: list  # [(out,) float32 arrays]
    adp: AdpConfig
    affine: tuple | None = None  # (A (2,2), b (2,))
    version: int = 1
    loss_history: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for w, b, (n_in, n_out) in zip(self.weights, self.biases, zip(self.layer_sizes, self.layer_sizes[1:])):
            if w.shape != (n_out, n_in) or b.shape != (n_out,):
                raise ValueError("layer parameter shapes do not match layer_sizes")
        if self.affine is not None:
            a = np.asarray(self.affine[0], dtype=float)
            if abs(np.linalg.det(a)) <= 1e-9:
                raise ValueError("affine matrix must be invertible")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def with_affine(self, a: np.ndarray, b: np.ndarray) -> "ChartModel":
        return replace(self, affine=(np.asarray(a, float), np.asarray(b, float)))


def extract_features(csi, adp: AdpConfig = AdpConfig()) -> np.ndarray:
    """Real feature vector for the charting network: concatenated per-array
    ADP images, log1p-compressed. Length B * n_beams * n_delay_bins."""
    values = csi_values(csi)
    parts = [compute_adp(values, b, adp) for b in range(values.shape[0])]
    return np.log1p(np.stack(parts)).ravel()


def dataset_features(dataset: Dataset, adp: AdpConfig = AdpConfig()) -> np.ndarray:
    return np.log1p(compute_adp_features(dataset, adp)).reshape(len(dataset), -1)


def fcf_forward(model: ChartModel, features: np.ndarray) -> np.ndarray:
    """MLP forward pass (ReLU hidden layers, linear 2D output)."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise ValueError(f"feature length {x.shape[1]} != model input {model.input_dim}")
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        x = x @ w.T.astype(np.float64) + b.astype(np.float64)
        if i < len(model.weights) - 1:
            x = np.maximum(x, 0.0)
    return x[0] if np.asarray(features).ndim == 1 else x


def chart_positions(model: ChartModel, features: np.ndarray) -> np.ndarray:
    """Chart coordinates for a feature matrix, with the affine alignment
    applied when the model carries one."""
    out = np.atleast_2d(fcf_forward(model, features))
    if model.affine is not None:
        a, b = model.affine
        out = out @ np.asarray(a).T + np.asarray(b)
    return out


def siamese_loss(x, y, d: float, beta: float) -> float:
    """Sammon-inspired pair loss: (d - |y - x|)^2 / (d + beta)."""
    if d < 0 or beta < 0:
        raise ValueError("d and beta must be non-negative")
    if d + beta == 0:
        raise ValueError("d + beta must be positive")
    dist = float(np.linalg.norm(np.asarray(y, float) - np.asarray(x, float)))
    return float((d - dist) ** 2 / (d + beta))


def combined_loss(x, y, d_scaled: float, loglik_x: float, loglik_y: float, lam: float) -> float:
    """Distance term plus negative likelihood term, weighted by lambda.

    The likelihood inputs are log-domain values (already normalized by the
    caller) and are exponentiated here.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    dist = float(np.linalg.norm(np.asarray(y, float) - np.asarray(x, float)))
    sq = (d_scaled - dist) ** 2
    return float((1.0 - lam) * sq - lam * (np.exp(loglik_x) + np.exp(loglik_y)))


def fit_affine_transform(chart_positions_in, targets) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form least squares for T(x) = A x + b mapping chart positions to
    target positions. Collinear chart positions are rank-deficient and raise."""
    x = np.asarray(chart_positions_in, dtype=float)
    t = np.asarray(targets, dtype=float)
    if x.shape != t.shape or x.ndim != 2 or x.shape[1] != 2:
        raise ValueError("chart positions and targets must both be (L, 2)")
    if len(x) < 3:
        raise ValueError("need at least 3 points to fit an affine transform")
    design = np.column_stack([x, np.ones(len(x))])
    if np.linalg.matrix_rank(design) < 3:
        raise ValueError("chart positions are collinear; affine fit is rank-deficient")
    coef, *_ = np.linalg.lstsq(design, t, rcond=None)
    return coef[:2].T.copy(), coef[2].copy()


def _build_mlp(layer_sizes, seed: int) -> torch.nn.Sequential:
    torch.manual_seed(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
        layers.append(torch.nn.Linear(n_in, n_out))
        if i < len(layer_sizes) - 2:
            layers.append(torch.nn.ReLU())
    return torch.nn.Sequential(*layers)


def _sample_pairs(n_points: int, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Uniform ordered pairs lx != ly for every step, pregenerated for
    determinism."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x9A125]))
    lx = rng.integers(0, n_points, size=(config.steps, config.batch_pairs))
    off = rng.integers(1, n_points, size=(config.steps, config.batch_pairs))
    return lx, (lx + off) % n_points


def _model_from_net(net, layer_sizes, adp: AdpConfig, history) -> ChartModel:
    weights, biases = [], []
    for layer in net:
        if isinstance(layer, torch.nn.Linear):
            weights.append(layer.weight.detach().numpy().astype(np.float32).copy())
            biases.append(layer.bias.detach().numpy().astype(np.float32).copy())
    return ChartModel(
        layer_sizes=tuple(layer_sizes),
        weights=weights,
        biases=biases,
        adp=adp,
        affine=None,
        loss_history=np.asarray(history),
    )


def _run_training(features: np.ndarray, pair_loss, config: TrainConfig, adp: AdpConfig) -> ChartModel:
    """Shared Siamese-style loop: sample pair batches, forward both sides,
    apply the pair loss, Adam-update. Single-threaded for bit determinism."""
    n_points, input_dim = features.shape
    if n_points < 2:
        raise ValueError("need at least 2 datapoints to train")
    layer_sizes = (input_dim,) + tuple(config.hidden_layers) + (2,)

    old_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        net = _build_mlp(layer_sizes, config.seed)
        opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
        feats = torch.from_numpy(np.ascontiguousarray(features, dtype=np.float32))
        lx_all, ly_all = _sample_pairs(n_points, config)

        history = np.empty(config.steps)
        for step in range(config.steps):
            lx = torch.from_numpy(lx_all[step])
            ly = torch.from_numpy(ly_all[step])
            x = net(feats[lx])
            y = net(feats[ly])
            loss = pair_loss(step, lx, ly, x, y)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at step {step}: loss={float(loss.detach())}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            history[step] = float(loss.detach())
    finally:
        torch.set_num_threads(old_threads)

    return _model_from_net(net, layer_sizes, adp, history)


def train_siamese(
    dataset: Dataset,
    matrix: DissimilarityMatrix,
    config: TrainConfig = TrainConfig(),
    adp: AdpConfig = AdpConfig(),
) -> ChartModel:
    """Train the forward charting function on pairwise dissimilarities.

    Returns the bare chart model; world alignment comes from
    fit_affine_transform afterwards.
    """
    if matrix.stage not in ("geodesic", "scaled"):
        raise ValueError("train_siamese expects a geodesic (or scaled) dissimilarity matrix")
    if len(matrix) != len(dataset):
        raise ValueError("dissimilarity matrix size does not match dataset length")
    if len(dataset) < config.batch_pairs and len(dataset) < 2:
        raise ValueError("dataset too small for the configured batch size")

    features = dataset_features(dataset, adp)
    d_t = torch.from_numpy(matrix.values.astype(np.float32))
    beta = config.beta

    def pair_loss(step, lx, ly, x, y):
        dist = torch.linalg.vector_norm(y - x, dim=1)
        d = d_t[lx, ly]
        sq = (d - dist) ** 2
        if config.normalize_siamese:
            return (sq / (d + beta)).mean()
        return sq.mean()

    return _run_training(features, pair_loss, config, adp)


class _TorchJointLikelihood:
    """AoA/TDoA log-likelihood as differentiable torch ops, mirroring the
    numpy implementation; used only inside augmented training."""

    def __init__(self, bundle: EstimateBundle, scenario: Scenario, mode: str, log_max: np.ndarray):
        b = bundle.n_arrays
        i1, i2 = np.triu_indices(b, k=1)
        centers = scenario.arrays.centers

        normals_h = scenario.arrays.normals.copy()
        normals_h[:, 2] = 0.0
        normals_h /= np.linalg.norm(normals_h, axis=1, keepdims=True)
        col_axes = np.cross(np.array([0.0, 0.0, 1.0]), normals_h)

        sigma_pairs = bundle.weights.sigma_tdoa_s[:, i1, i2]
        toa_pairs = bundle.toa_s[:, i2] - bundle.toa_s[:, i1]
        log_norm_tdoa = np.sum(-0.5 * np.log(2 * np.pi) - np.log(sigma_pairs), axis=1)
        log_norm_aoa = np.sum(-np.log(2 * np.pi) - log_bessel_i0(bundle.weights.kappa), axis=1)

        to_t = lambda a: torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))
        self.centers_xy = to_t(centers[:, :2])
        self.centers_z = to_t(centers[:, 2])
        self.tx_height = float(scenario.tx_height_m)
        self.n_h_xy = to_t(normals_h[:, :2])
        self.col_xy = to_t(col_axes[:, :2])
        self.i1 = torch.from_numpy(i1)
        self.i2 = torch.from_numpy(i2)
        self.sigma_pairs = to_t(sigma_pairs)
        self.toa_pairs = to_t(toa_pairs)
        self.kappa = to_t(bundle.weights.kappa)
        self.aoa = to_t(bundle.aoa_rad)
        self.log_norm = to_t(log_norm_tdoa + log_norm_aoa)
        self.log_max = to_t(log_max)
        self.mode = mode

    def log_likelihood(self, pos: torch.Tensor, l_idx: torch.Tensor) -> torch.Tensor:
        v_xy = pos[:, None, :] - self.centers_xy[None, :, :]  # (N, B, 2)
        dz = self.tx_height - self.centers_z
        dist = torch.sqrt(torch.sum(v_xy**2, dim=2) + dz[None, :] ** 2)

        resid = (dist[:, self.i2] - dist[:, self.i1]) / SPEED_OF_LIGHT - self.toa_pairs[l_idx]
        z = resid / self.sigma_pairs[l_idx]
        log_tdoa = -0.5 * torch.sum(z**2, dim=1)

        az = torch.atan2(
            torch.sum(v_xy * self.col_xy[None, :, :], dim=2),
            torch.sum(v_xy * self.n_h_xy[None, :, :], dim=2),
        )
        delta = az - self.aoa[l_idx]
        log_aoa = torch.sum(self.kappa[l_idx] * torch.cos(delta), dim=1)

        return log_tdoa + log_aoa + self.log_norm[l_idx]

    def value(self, pos: torch.Tensor, l_idx: torch.Tensor) -> torch.Tensor:
        logl = self.log_likelihood(pos, l_idx)
        if self.mode == "grid":
            return torch.exp(logl - self.log_max[l_idx])
        if self.mode == "raw":
            return torch.exp(logl)
        return logl - self.log_max[l_idx]


def _grid_log_max(bundle: EstimateBundle, scenario: Scenario, resolution_m: float) -> np.ndarray:
    pts = grid_points(scenario.bounds, resolution_m)
    out = np.empty(bundle.n_points)
    for l in range(bundle.n_points):
        values = log_likelihood_aoa_many(pts, bundle, l, scenario) + log_likelihood_tdoa_many(
            pts, bundle, l, scenario
        )
        out[l] = float(np.max(values))
    return out


def train_augmented(
    dataset: Dataset,
    matrix: DissimilarityMatrix,
    bundle: EstimateBundle,
    scenario: Scenario,
    config: TrainConfig = TrainConfig(),
    adp: AdpConfig = AdpConfig(),
) -> ChartModel:
    """Train the charting function on the combined loss: unnormalized Siamese
    distance matching plus classical AoA/TDoA likelihood, weighted by the
    lambda schedule. The chart is anchored in world coordinates, so no affine
    stage is attached."""
    if matrix.stage != "scaled":
        raise ValueError("train_augmented expects dissimilarities scaled to meters")
    if len(matrix) != len(dataset) or bundle.n_points != len(dataset):
        raise ValueError("matrix/bundle sizes do not match dataset length")

    features = dataset_features(dataset, adp)
    d_t = torch.from_numpy(matrix.values.astype(np.float32))

    log_max = (
        _grid_log_max(bundle, scenario, config.grid_resolution_m)
        if config.likelihood_mode in ("grid", "log")
        else np.zeros(bundle.n_points)
    )
    likelihood = _TorchJointLikelihood(bundle, scenario, config.likelihood_mode, log_max)

    def pair_loss(step, lx, ly, x, y):
        lam = config.lambda_at(step, config.steps)
        dist = torch.linalg.vector_norm(y - x, dim=1)
        sq = ((d_t[lx, ly] - dist) ** 2).mean()
        lik = (likelihood.value(x, lx) + likelihood.value(y, ly)).mean()
        return (1.0 - lam) * sq - lam * lik

    return _run_training(features, pair_loss, config, adp)


def save_model(path, model: ChartModel) -> None:
    header = {
        "version": model.version,
        "layer_sizes": list(model.layer_sizes),
        "activation": "relu",
        "adp": {"n_beams": model.adp.n_beams, "n_delay_bins": model.adp.n_delay_bins},
        "affine": None
        if model.affine is None
        else {"a": np.asarray(model.affine[0]).tolist(), "b": np.asarray(model.affine[1]).tolist()},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()
        for w, b in zip(model.weights, model.biases)
        for arr in (w, b)
    )
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(blob)


def load_model(path) -> ChartModel:
    with open(path, "rb") as f:
        magic = f.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ValueError("not a chart model file")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode())
        blob = np.frombuffer(f.read(), dtype="<f4")

    sizes = tuple(header["layer_sizes"])
    weights, biases = [], []
    offset = 0
    for n_in, n_out in zip(sizes, sizes[1:]):
        weights.append(blob[offset : offset + n_in * n_out].reshape(n_out, n_in).copy())
        offset += n_in * n_out
        biases.append(blob[offset : offset + n_out].copy())
        offset += n_out
    affine = None
    if header["affine"] is not None:
        affine = (np.asarray(header["affine"]["a"]), np.asarray(header["affine"]["b"]))
    return ChartModel(
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        adp=AdpConfig(**header["adp"]),
        affine=affine,
        version=int(header["version"]),
    )
