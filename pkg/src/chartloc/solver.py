"""Maximum-likelihood position estimation: coarse grid initialization followed
by BFGS ascent on the log-likelihood.

The transmit-time nuisance parameter is optimized jointly with the position
where the method requires it; internally it is scaled by c0 so all solver
variables live on the meter scale.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .likelihoods import (
    EstimateBundle,
    log_likelihood_aoa_many,
    log_likelihood_tdoa_many,
    log_likelihood_toa_many,
)
from .model import SPEED_OF_LIGHT, Bounds, Scenario

METHODS = ("toa", "aoa", "joint")


@dataclass(frozen=True)
class SolverConfig:
    grid_resolution_m: float = 0.5
    max_iterations: int = 200
    gradient_tolerance: float = 1e-8
    fd_step_m: float = 1e-6

    def __post_init__(self):
        if self.grid_resolution_m <= 0:
            raise ValueError("grid_resolution_m must be positive")


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray  # (2,)
    tau_tx_s: float | None
    converged: bool
    value: float
    n_iterations: int
    out_of_bounds: bool = False


def grid_points(bounds: Bounds, resolution_m: float) -> np.ndarray:
    """Cell centers of a regular grid over the bounding box, in lexicographic
    (x1-major, then x2) order so index ties resolve to the lowest coordinates."""
    x0, y0, x1, y1 = bounds.bbox()
    xs = np.arange(x0 + resolution_m / 2, x1, resolution_m)
    ys = np.arange(y0 + resolution_m / 2, y1, resolution_m)
    if xs.size == 0:
        xs = np.array([(x0 + x1) / 2])
    if ys.size == 0:
        ys = np.array([(y0 + y1) / 2])
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def grid_initialize(objective, bounds: Bounds, config: SolverConfig) -> np.ndarray:
    """Argmax cell center of a vectorized objective over the scene grid."""
    pts = grid_points(bounds, config.grid_resolution_m)
    values = np.asarray(objective(pts), dtype=float)
    if values.shape != (len(pts),):
        raise ValueError("objective must return one value per grid point")
    if not np.any(np.isfinite(values)):
        raise ValueError("objective is non-finite on the entire grid")
    values = np.where(np.isfinite(values), values, -np.inf)
    return pts[int(np.argmax(values))].copy()


def _central_difference_grad(fn, v: np.ndarray, step: float) -> np.ndarray:
    g = np.empty_like(v)
    for i in range(v.size):
        h = step * max(1.0, abs(v[i]))
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        g[i] = (fn(vp) - fn(vm)) / (2 * h)
    return g


def maximize(
    objective,
    init_xy: np.ndarray,
    config: SolverConfig = SolverConfig(),
    tau_tx_init_s: float | None = None,
    bounds: Bounds | None = None,
) -> SolveResult:
    """Quasi-Newton ascent of a log-objective.

    objective(x) for position-only problems, objective(x, tau_tx_s) when
    tau_tx_init_s is given. Gradients are central differences. The estimate is
    never clamped; leaving twice the scene bounds only raises a flag.
    """
    with_tau = tau_tx_init_s is not None

    def neg(v: np.ndarray) -> float:
        if with_tau:
            return -float(objective(v[:2], v[2] / SPEED_OF_LIGHT))
        return -float(objective(v[:2]))

    v0 = np.asarray(init_xy, dtype=float).reshape(2).copy()
    if with_tau:
        v0 = np.append(v0, tau_tx_init_s * SPEED_OF_LIGHT)
    if not np.isfinite(neg(v0)):
        raise ValueError("objective is non-finite at the initial point")

    res = minimize(
        neg,
        v0,
        method="BFGS",
        jac=lambda v: _central_difference_grad(neg, v, config.fd_step_m),
        options={"gtol": config.gradient_tolerance, "maxiter": config.max_iterations},
    )

    x_hat = res.x[:2]
    out = False
    if bounds is not None:
        x0, y0, x1, y1 = bounds.bbox()
        cx, cy, hw, hh = (x0 + x1) / 2, (y0 + y1) / 2, (x1 - x0), (y1 - y0)
        out = bool(abs(x_hat[0] - cx) > hw or abs(x_hat[1] - cy) > hh)  # 2x scene box

    converged = bool(res.success) or float(np.linalg.norm(res.jac)) <= config.gradient_tolerance
    return SolveResult(
        x=x_hat.copy(),
        tau_tx_s=float(res.x[2] / SPEED_OF_LIGHT) if with_tau else None,
        converged=converged,
        value=-float(res.fun),
        n_iterations=int(res.nit),
        out_of_bounds=out,
    )


@dataclass
class LocalizationResult:
    positions: np.ndarray  # (L, 2), NaN where a point failed
    tau_tx_s: np.ndarray  # (L,), NaN where absent
    converged: np.ndarray  # (L,) bool
    values: np.ndarray  # (L,) final log-likelihood
    out_of_bounds: np.ndarray  # (L,) bool
    failed: np.ndarray  # (L,) bool
    method: str = "joint"
    errors: list = field(default_factory=list)


def _tot_init(bundle: EstimateBundle, l: int, scenario: Scenario, xy: np.ndarray) -> float:
    d = np.linalg.norm(scenario.lift(xy) - scenario.arrays.centers, axis=1)
    return float(np.mean(bundle.toa_s[l] - d / SPEED_OF_LIGHT))


def localize_point(
    bundle: EstimateBundle,
    l: int,
    scenario: Scenario,
    method: str,
    config: SolverConfig = SolverConfig(),
) -> SolveResult:
    """Single-datapoint ML estimate: grid init on the ToT-free likelihood,
    BFGS ascent on the method's likelihood."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    bounds = scenario.bounds

    if method == "toa":
        init = grid_initialize(lambda p: log_likelihood_tdoa_many(p, bundle, l, scenario), bounds, config)
        return maximize(
            lambda x, tau: log_likelihood_toa_many(x, tau, bundle, l, scenario)[0],
            init,
            config,
            tau_tx_init_s=_tot_init(bundle, l, scenario, init),
            bounds=bounds,
        )
    if method == "aoa":
        init = grid_initialize(lambda p: log_likelihood_aoa_many(p, bundle, l, scenario), bounds, config)
        return maximize(
            lambda x: log_likelihood_aoa_many(x, bundle, l, scenario)[0],
            init,
            config,
            bounds=bounds,
        )
    # joint: init on AoA*TDoA, ascend AoA*ToA over (x, tau_tx)
    init = grid_initialize(
        lambda p: log_likelihood_aoa_many(p, bundle, l, scenario)
        + log_likelihood_tdoa_many(p, bundle, l, scenario),
        bounds,
        config,
    )
    return maximize(
        lambda x, tau: (
            log_likelihood_aoa_many(x, bundle, l, scenario)
            + log_likelihood_toa_many(x, tau, bundle, l, scenario)
        )[0],
        init,
        config,
        tau_tx_init_s=_tot_init(bundle, l, scenario, init),
        bounds=bounds,
    )


def localize_dataset(
    bundle: EstimateBundle,
    scenario: Scenario,
    method: str,
    config: SolverConfig = SolverConfig(),
    n_threads: int = 1,
) -> LocalizationResult:
    """ML position estimates for every datapoint; per-point failures are
    recorded and never abort the batch."""
    n = bundle.n_points
    result = LocalizationResult(
        positions=np.full((n, 2), np.nan),
        tau_tx_s=np.full(n, np.nan),
        converged=np.zeros(n, dtype=bool),
        values=np.full(n, np.nan),
        out_of_bounds=np.zeros(n, dtype=bool),
        failed=np.zeros(n, dtype=bool),
        method=method,
    )

    def solve(l: int):
        try:
            return localize_point(bundle, l, scenario, method, config)
        except Exception as exc:  # noqa: BLE001 - per-point failures are data
            return exc

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            solved = list(pool.map(solve, range(n)))
    else:
        solved = [solve(l) for l in range(n)]

    for l, s in enumerate(solved):
        if isinstance(s, Exception):
            result.failed[l] = True
            result.errors.append((l, str(s)))
            continue
        result.positions[l] = s.x
        result.tau_tx_s[l] = np.nan if s.tau_tx_s is None else s.tau_tx_s
        result.converged[l] = s.converged
        result.values[l] = s.value
        result.out_of_bounds[l] = s.out_of_bounds
    return result
