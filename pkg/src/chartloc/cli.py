"""Command-line pipeline: simulate -> localize -> chart -> evaluate.

Commands compose through files only. Every stage is rerunnable: the same
config and seed produce byte-identical outputs, and the O(L^2) intermediate
products (estimate bundle, dissimilarity matrix) are cached under
content-addressed filenames.

Exit codes: 0 ok, 1 internal error, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import charting, dissimilarity, evaluation, io, likelihoods, simulator, solver
from .aoa import aoa_matrix, estimate_aoa_all
from .io import format_float
from .model import Scenario, validate_dataset
from .toa import ToaConfig, delay_spread_matrix, estimate_toa_all, toa_matrix

METHOD_LABELS = {
    "toa": "ML:ToA",
    "aoa": "ML:AoA",
    "joint": "ML:AoA/ToA",
    "siamese": "CC:affine",
    "augmented": "CC:aug",
}


class BadInput(Exception):
    """User-facing configuration or input-data problem (exit code 2)."""


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise BadInput(f"config file {p} does not exist")
    try:
        with open(p) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise BadInput(f"config file {p} is not valid JSON: {exc}") from exc


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise BadInput(f"config is missing required key {key!r}")
    return cfg[key]


def _scenario_from_config(cfg: dict) -> Scenario:
    try:
        return io.scenario_from_dict(_require(cfg, "scenario"))
    except (KeyError, ValueError) as exc:
        raise BadInput(f"invalid scenario: {exc}") from exc


def _sim_from_config(cfg: dict, seed: int) -> simulator.SimConfig:
    sim = cfg.get("sim", {})
    snr = sim.get("snr_db")
    ring = sim.get("ring_radii_m")
    return simulator.SimConfig(
        n_scatterers=int(sim.get("n_scatterers", 0)),
        snr_db=float("inf") if snr is None else float(snr),
        scatter_attenuation_db=float(sim.get("scatter_attenuation_db", 6.0)),
        blockages=tuple(np.asarray(b, dtype=float) for b in sim.get("blockages", [])),
        seed=seed,
        scatterer_placement=str(sim.get("scatterer_placement", "uniform")),
        ring_radii_m=None if ring is None else (float(ring[0]), float(ring[1])),
        n_tx_scatterers=int(sim.get("n_tx_scatterers", 0)),
        tx_scatter_radius_m=tuple(sim.get("tx_scatter_radius_m", (0.2, 0.8))),
        tx_scatter_attenuation_db=float(sim.get("tx_scatter_attenuation_db", 1.0)),
    )


def _trajectory_from_config(cfg: dict, scenario: Scenario):
    traj = cfg.get("trajectory", {})
    if "points" in traj:
        return [(float(t), np.array([x, y])) for t, x, y in traj["points"]]
    spec = simulator.LShapeTrajectory(
        n_points=int(traj.get("n_points", 500)),
        speed_mps=float(traj.get("speed_mps", 1.0)),
        margin_m=float(traj.get("margin_m", 0.5)),
        lane_spacing_m=float(traj.get("lane_spacing_m", 1.0)),
    )
    return simulator.l_shape_trajectory(scenario.bounds, spec)


def _toa_config(cfg: dict, scenario: Scenario) -> ToaConfig:
    toa = cfg.get("toa", {})
    segment_length = toa.get("segment_length")
    n_segments = int(toa.get("n_segments", 4))
    if segment_length is None:
        segment_length = scenario.ofdm.n_sub // n_segments
    return ToaConfig(
        n_segments=n_segments,
        segment_length=int(segment_length),
        strongest_subset_size=int(toa.get("strongest_subset_size", 3)),
        max_sources=int(toa.get("max_sources", 8)),
    )


def _weight_config(cfg: dict, scenario: Scenario) -> likelihoods.WeightConfig:
    w = cfg.get("weights", {})
    sigma_min = w.get("sigma_min_s")
    if sigma_min is None:
        sigma_min = 1.0 / (2.0 * scenario.ofdm.bandwidth_hz)
    return likelihoods.WeightConfig(
        sigma_min_s=float(sigma_min),
        c_sigma=float(w.get("c_sigma", 1.0)),
        kappa_max=float(w.get("kappa_max", 100.0)),
        c_kappa=float(w.get("c_kappa", 4.0)),
    )


def _solver_config(cfg: dict) -> solver.SolverConfig:
    s = cfg.get("solver", {})
    return solver.SolverConfig(
        grid_resolution_m=float(s.get("grid_resolution_m", 0.5)),
        max_iterations=int(s.get("max_iterations", 200)),
        gradient_tolerance=float(s.get("gradient_tolerance", 1e-8)),
    )


def _adp_config(cfg: dict) -> dissimilarity.AdpConfig:
    d = cfg.get("dissimilarity", {})
    return dissimilarity.AdpConfig(
        n_beams=int(d.get("n_beams", 16)),
        n_delay_bins=int(d.get("n_delay_bins", 64)),
    )


def _train_config(cfg: dict, seed: int) -> charting.TrainConfig:
    t = cfg.get("train", {})
    return charting.TrainConfig(
        hidden_layers=tuple(t.get("hidden_layers", [128, 128, 128, 128])),
        beta=float(t.get("beta", 1.0)),
        batch_pairs=int(t.get("batch_pairs", 256)),
        steps=int(t.get("steps", 10_000)),
        learning_rate=float(t.get("learning_rate", 1e-3)),
        seed=seed,
        lambda_start=float(t.get("lambda_start", 0.9)),
        lambda_end=float(t.get("lambda_end", 0.1)),
        lambda_hold_fraction=float(t.get("lambda_hold_fraction", 0.25)),
        likelihood_mode=str(t.get("likelihood_mode", "grid")),
        grid_resolution_m=float(cfg.get("solver", {}).get("grid_resolution_m", 0.5)),
    )


def _dataset_dir(cfg: dict) -> Path:
    path = Path(_require(cfg, "dataset_dir"))
    if not path.exists():
        raise BadInput(f"dataset directory {path} does not exist")
    return path


def _output_dir(cfg: dict) -> Path:
    out = Path(cfg.get("output_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_checksum(dataset_dir: Path) -> str:
    h = hashlib.sha256()
    for name in (io.SCENARIO_FILE, io.CSI_FILE, io.META_FILE):
        f = dataset_dir / name
        if not f.exists():
            raise BadInput(f"dataset directory {dataset_dir} is missing {name}")
        h.update(f.read_bytes())
    return h.hexdigest()


def _content_hash(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(json.dumps(part, sort_keys=True, default=str).encode())
    return h.hexdigest()[:16]


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _load_estimates_csv(path: Path) -> np.ndarray:
    if not path.exists():
        raise BadInput(f"estimates file {path} does not exist (run the producing stage first)")
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append((int(row["index"]), float(row["x1_m"]), float(row["x2_m"])))
    rows.sort(key=lambda r: r[0])
    return np.array([[r[1], r[2]] for r in rows]).reshape(-1, 2)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _compute_bundle(cfg: dict, dataset, scenario, seed: int, threads: int) -> likelihoods.EstimateBundle:
    out = _output_dir(cfg)
    cache_dir = out / "cache"
    cache_dir.mkdir(exist_ok=True)
    toa_cfg = _toa_config(cfg, scenario)
    weight_cfg = _weight_config(cfg, scenario)
    key = _content_hash(
        _dataset_checksum(_dataset_dir(cfg)),
        vars(toa_cfg) | {"weights": vars(weight_cfg)},
    )
    cache = cache_dir / f"bundle_{key}.npz"
    if cache.exists():
        _log(f"bundle cache hit: {cache.name}")
        data = np.load(cache)
        return likelihoods.build_estimate_bundle(
            data["toa"], data["aoa"], data["spread"], weight_cfg
        )

    _log("estimating ToA/AoA for all datapoints ...")
    toa_est = estimate_toa_all(dataset, scenario, toa_cfg, n_threads=threads)
    tau = toa_matrix(toa_est)
    spread = delay_spread_matrix(toa_est)
    aoa_est = estimate_aoa_all(dataset, scenario, tau, n_threads=threads)
    alpha = aoa_matrix(aoa_est)
    np.savez(cache, toa=tau, aoa=alpha, spread=spread)

    _write_csv(
        out / "toa_estimates.csv",
        ["index", "b", "tau_s", "delay_spread_s"],
        (
            [l, b, format_float(tau[l, b]), format_float(spread[l, b])]
            for l in range(tau.shape[0])
            for b in range(tau.shape[1])
        ),
    )
    _write_csv(
        out / "aoa_estimates.csv",
        ["index", "b", "azimuth_rad"],
        (
            [l, b, format_float(alpha[l, b])]
            for l in range(alpha.shape[0])
            for b in range(alpha.shape[1])
        ),
    )
    return likelihoods.build_estimate_bundle(tau, alpha, spread, weight_cfg)


def _compute_geodesic(cfg: dict, dataset, seed: int) -> dissimilarity.DissimilarityMatrix:
    out = _output_dir(cfg)
    cache_dir = out / "cache"
    cache_dir.mkdir(exist_ok=True)
    d_cfg = cfg.get("dissimilarity", {})
    adp = _adp_config(cfg)
    v_max = float(d_cfg.get("v_max_mps", 1.5))
    k_neighbors = int(d_cfg.get("k_neighbors", 20))
    key = _content_hash(
        _dataset_checksum(_dataset_dir(cfg)),
        {"adp": vars(adp), "v_max": v_max, "k": k_neighbors},
    )
    cache = cache_dir / f"dissim_{key}"
    if cache.with_suffix(".json").exists():
        _log(f"dissimilarity cache hit: {cache.name}")
        return dissimilarity.load_matrix(cache)

    _log("computing angle-delay-profile dissimilarities ...")
    features = dissimilarity.compute_adp_features(dataset, adp)
    raw = dissimilarity.dissimilarity_matrix(features)
    fused = dissimilarity.fuse_with_timestamps(raw, dataset.timestamps, v_max)
    geo = dissimilarity.geodesic_complete(fused, k_neighbors)
    dissimilarity.save_matrix(cache, geo, params={"adp": vars(adp), "v_max": v_max, "k": k_neighbors})
    return geo


def cmd_simulate(cfg: dict, seed: int, threads: int) -> int:
    scenario = _scenario_from_config(cfg)
    sim = _sim_from_config(cfg, seed)
    trajectory = _trajectory_from_config(cfg, scenario)
    dataset = simulator.generate_dataset(scenario, sim, trajectory)

    report = validate_dataset(dataset, scenario)
    if not report.is_valid:
        raise BadInput(f"generated dataset failed validation:\n{report}")

    out_dir = Path(_require(cfg, "dataset_dir"))
    io.write_dataset(out_dir, dataset, scenario)
    fractions = simulator.los_fraction(scenario, sim, dataset)
    print(f"wrote {len(dataset)} datapoints to {out_dir}")
    print("per-array LoS fraction: " + ", ".join(f"{f:.3f}" for f in fractions))
    return 0


def cmd_validate(cfg: dict, seed: int, threads: int) -> int:
    dataset, scenario = io.read_dataset(_dataset_dir(cfg))
    report = validate_dataset(dataset, scenario)
    print(str(report))
    return 0 if report.is_valid else 2


def cmd_localize(cfg: dict, seed: int, threads: int, method: str) -> int:
    dataset, scenario = io.read_dataset(_dataset_dir(cfg))
    if method not in ("toa", "aoa", "joint"):
        raise BadInput(f"unknown method {method!r}")
    out = _output_dir(cfg)
    bundle = _compute_bundle(cfg, dataset, scenario, seed, threads)
    result = solver.localize_dataset(bundle, scenario, method, _solver_config(cfg), n_threads=threads)

    _write_csv(
        out / f"estimates_{method}.csv",
        ["index", "x1_m", "x2_m", "converged", "loglik"],
        (
            [
                l,
                format_float(result.positions[l, 0]),
                format_float(result.positions[l, 1]),
                int(result.converged[l]),
                format_float(result.values[l]),
            ]
            for l in range(len(result.positions))
        ),
    )
    ok = np.isfinite(result.positions).all(axis=1)
    errors = np.linalg.norm(result.positions[ok] - dataset.positions[ok, :2], axis=1)
    _log(
        f"method={method} points={len(dataset)} failed={int(result.failed.sum())} "
        f"mae={np.mean(errors):.3f}m median={np.median(errors):.3f}m"
    )
    return 0


def cmd_chart(cfg: dict, seed: int, threads: int, mode: str) -> int:
    dataset, scenario = io.read_dataset(_dataset_dir(cfg))
    if mode not in ("siamese", "augmented"):
        raise BadInput(f"unknown chart mode {mode!r}")
    out = _output_dir(cfg)
    adp = _adp_config(cfg)
    train_cfg = _train_config(cfg, seed)
    geo = _compute_geodesic(cfg, dataset, seed)
    classical = _load_estimates_csv(out / "estimates_joint.csv")

    if mode == "siamese":
        model = charting.train_siamese(dataset, geo, train_cfg, adp)
        chart = charting.chart_positions(model, charting.dataset_features(dataset, adp))
        a, b = charting.fit_affine_transform(chart, classical)
        model = model.with_affine(a, b)
    else:
        d_cfg = cfg.get("dissimilarity", {})
        gamma = dissimilarity.estimate_scale_gamma(
            geo,
            classical,
            pair_sample=d_cfg.get("gamma_pair_sample"),
            seed=seed,
        )
        _log(f"dissimilarity scale gamma={gamma:.6g}")
        scaled = dissimilarity.scale_by_gamma(geo, gamma)
        bundle = _compute_bundle(cfg, dataset, scenario, seed, threads)
        model = charting.train_augmented(dataset, scaled, bundle, scenario, train_cfg, adp)

    charting.save_model(out / f"model_{mode}.cmdl", model)
    positions = charting.chart_positions(model, charting.dataset_features(dataset, adp))
    _write_csv(
        out / f"chart_{mode}.csv",
        ["index", "x1_m", "x2_m"],
        ([l, format_float(positions[l, 0]), format_float(positions[l, 1])] for l in range(len(positions))),
    )
    errors = np.linalg.norm(positions - dataset.positions[:, :2], axis=1)
    _log(f"mode={mode} chart mae={np.mean(errors):.3f}m")
    return 0


def cmd_evaluate(cfg: dict, seed: int, threads: int) -> int:
    dataset, _ = io.read_dataset(_dataset_dir(cfg))
    out = _output_dir(cfg)
    truth = dataset.positions[:, :2]

    sources = {
        "ML:ToA": out / "estimates_toa.csv",
        "ML:AoA": out / "estimates_aoa.csv",
        "ML:AoA/ToA": out / "estimates_joint.csv",
        "CC:affine": out / "chart_siamese.csv",
        "CC:aug": out / "chart_augmented.csv",
    }
    estimates = {}
    for label, path in sources.items():
        if path.exists():
            estimates[label] = _load_estimates_csv(path)
    if not estimates:
        raise BadInput("no method outputs found; run localize/chart first")

    reports = []
    for label, est in estimates.items():
        ok = np.isfinite(est).all(axis=1)
        if not ok.all():
            _log(f"{label}: dropping {int((~ok).sum())} failed points")
        reports.append(evaluation.evaluate_method(label, truth[ok], est[ok]))

    _write_csv(
        out / "report.csv",
        ["method", "mae_m", "drms_m", "cep_m", "r95_m", "ks", "ct", "tw"],
        (
            [
                r["method"],
                format_float(r["mae_m"]),
                format_float(r["drms_m"]),
                format_float(r["cep_m"]),
                format_float(r["r95_m"]),
                format_float(r["ks"]),
                format_float(r["ct"]),
                format_float(r["tw"]),
            ]
            for r in evaluation.report_rows(reports)
        ),
    )
    for r in reports:
        safe = r.method.replace(":", "_").replace("/", "_").lower()
        n = len(r.ecdf)
        _write_csv(
            out / f"ecdf_{safe}.csv",
            ["error_m", "cum_prob"],
            ([format_float(e), format_float((i + 1) / n)] for i, e in enumerate(r.ecdf)),
        )
    print(evaluation.render_table(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chartloc", description=__doc__)
    parser.add_argument("--config", required=True, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    parser.add_argument("--threads", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate")
    p_localize = sub.add_parser("localize")
    p_localize.add_argument("--method", choices=["toa", "aoa", "joint"], default="joint")
    p_chart = sub.add_parser("chart")
    p_chart.add_argument("--mode", choices=["siamese", "augmented"], default="siamese")
    sub.add_parser("evaluate")
    sub.add_parser("validate")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        threads = max(1, args.threads)
        _log(f"command={args.command} seed={seed} threads={threads}")

        if args.command == "simulate":
            return cmd_simulate(cfg, seed, threads)
        if args.command == "validate":
            return cmd_validate(cfg, seed, threads)
        if args.command == "localize":
            return cmd_localize(cfg, seed, threads, args.method)
        if args.command == "chart":
            return cmd_chart(cfg, seed, threads, args.mode)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, seed, threads)
        raise BadInput(f"unknown command {args.command!r}")
    except BadInput as exc:
        _log(f"error: {exc}")
        return 2
    except FileNotFoundError as exc:
        _log(f"error: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001
        _log(f"internal error: {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
