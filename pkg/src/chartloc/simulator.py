"""Synthetic labeled CSI from a geometric single-bounce multipath model.

Serves as the ground-truth oracle for every quantitative test: line-of-sight
paths travel directly from the transmitter to each array unless blocked by a
2D blockage polygon, and each scatterer contributes one reflected path with a
gain that decays with total path length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, Point, Polygon

from .model import SPEED_OF_LIGHT, Bounds, Dataset, Scenario, azimuth_elevation


@dataclass(frozen=True)
class PathComponent:
    delay_s: float
    gain: complex
    azimuth_rad: float
    elevation_rad: float
    is_los: bool


@dataclass(frozen=True)
class SimConfig:
    n_scatterers: int = 0
    snr_db: float = float("inf")
    scatter_attenuation_db: float = 6.0
    blockages: tuple = ()  # tuple of (N, 2) vertex arrays
    seed: int = 0
    # environment scatterer placement: "uniform" inside the bounds, or "ring"
    # on an annulus around the scene (hall walls / far machinery)
    scatterer_placement: str = "uniform"
    ring_radii_m: tuple | None = None  # (min, max); None = derived from bounds
    # transmitter-local clutter (antenna mount, robot chassis): scatterers at
    # fixed offsets that ride along with the transmitter
    n_tx_scatterers: int = 0
    tx_scatter_radius_m: tuple = (0.2, 0.8)
    tx_scatter_attenuation_db: float = 1.0

    def __post_init__(self):
        if self.n_scatterers < 0 or self.n_tx_scatterers < 0:
            raise ValueError("scatterer counts must be >= 0")
        if np.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")
        if self.scatterer_placement not in ("uniform", "ring"):
            raise ValueError("scatterer_placement must be 'uniform' or 'ring'")
        object.__setattr__(
            self, "blockages", tuple(np.asarray(b, dtype=float) for b in self.blockages)
        )


def _scatterer_positions(scenario: Scenario, sim: SimConfig) -> np.ndarray:
    """Environment scatterer positions (n, 3), fixed by the placement seed.
    Scatterers sit at transmitter height so single-bounce paths stay near the
    horizontal plane."""
    if sim.n_scatterers == 0:
        return np.zeros((0, 3))
    rng = np.random.default_rng(np.random.SeedSequence([sim.seed, 0x5CA77E]))
    x0, y0, x1, y1 = scenario.bounds.bbox()
    if sim.scatterer_placement == "ring":
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        half_diag = 0.5 * np.hypot(x1 - x0, y1 - y0)
        r_min, r_max = sim.ring_radii_m or (1.2 * half_diag, 2.2 * half_diag)
        radius = rng.uniform(r_min, r_max, size=sim.n_scatterers)
        angle = rng.uniform(0.0, 2 * np.pi, size=sim.n_scatterers)
        xy = np.column_stack([cx + radius * np.cos(angle), cy + radius * np.sin(angle)])
    else:
        pts = []
        while len(pts) < sim.n_scatterers:
            cand = rng.uniform([x0, y0], [x1, y1])
            if scenario.bounds.contains(cand):
                pts.append(cand)
        xy = np.asarray(pts)
    out = np.empty((sim.n_scatterers, 3))
    out[:, :2] = xy
    out[:, 2] = scenario.tx_height_m
    return out


def _scatterer_phases(sim: SimConfig) -> np.ndarray:
    if sim.n_scatterers == 0:
        return np.zeros(0)
    rng = np.random.default_rng(np.random.SeedSequence([sim.seed, 0x9A5E]))
    return rng.uniform(0.0, 2 * np.pi, size=sim.n_scatterers)


def _tx_scatterer_offsets(sim: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fixed 3D offsets of transmitter-local scatterers plus their reflection
    phases. The offsets ride with the transmitter (rigid mount)."""
    if sim.n_tx_scatterers == 0:
        return np.zeros((0, 3)), np.zeros(0)
    rng = np.random.default_rng(np.random.SeedSequence([sim.seed, 0x70BB]))
    lo, hi = sim.tx_scatter_radius_m
    radius = rng.uniform(lo, hi, size=sim.n_tx_scatterers)
    angle = rng.uniform(0.0, 2 * np.pi, size=sim.n_tx_scatterers)
    offsets = np.column_stack(
        [radius * np.cos(angle), radius * np.sin(angle), np.zeros(sim.n_tx_scatterers)]
    )
    return offsets, rng.uniform(0.0, 2 * np.pi, size=sim.n_tx_scatterers)


def _segment_blocked(p, q, blockages) -> bool:
    seg = LineString([np.asarray(p, float)[:2], np.asarray(q, float)[:2]])
    for verts in blockages:
        poly = Polygon(verts)
        if seg.crosses(poly) or seg.within(poly):
            return True
    return False


def synthesize_paths(scenario: Scenario, sim: SimConfig, tx: np.ndarray) -> list[list[PathComponent]]:
    """Multipath components arriving at each array for a transmitter at tx.

    The LoS path exists whenever the tx-array segment avoids all blockage
    polygons; every scatterer adds one single-bounce path. Deterministic given
    the SimConfig seed.
    """
    tx = np.asarray(tx, dtype=float)
    if not scenario.bounds.contains(tx[:2]):
        raise ValueError(f"transmitter position {tx[:2]} outside scene bounds")

    carrier = scenario.ofdm.carrier_frequency_hz
    scatterers = _scatterer_positions(scenario, sim)
    phases = _scatterer_phases(sim)
    tx_offsets, tx_phases = _tx_scatterer_offsets(sim)
    atten = 10.0 ** (-sim.scatter_attenuation_db / 20.0)
    atten_tx = 10.0 ** (-sim.tx_scatter_attenuation_db / 20.0)

    per_array: list[list[PathComponent]] = []
    for b in range(scenario.arrays.b_count):
        z = scenario.arrays.centers[b]
        n = scenario.arrays.normals[b]
        paths: list[PathComponent] = []

        if not _segment_blocked(tx, z, sim.blockages):
            d = float(np.linalg.norm(tx - z))
            tau = d / SPEED_OF_LIGHT
            az, el = azimuth_elevation(tx - z, n)
            gain = (1.0 / d) * np.exp(-2j * np.pi * carrier * tau)
            paths.append(PathComponent(tau, complex(gain), az, el, is_los=True))

        for s, phase, a in [
            *((scatterers[i], phases[i], atten) for i in range(len(scatterers))),
            *((tx + tx_offsets[i], tx_phases[i], atten_tx) for i in range(len(tx_offsets))),
        ]:
            d_total = float(np.linalg.norm(tx - s) + np.linalg.norm(s - z))
            tau = d_total / SPEED_OF_LIGHT
            az, el = azimuth_elevation(s - z, n)
            gain = (a / d_total) * np.exp(1j * (phase - 2 * np.pi * carrier * tau))
            paths.append(PathComponent(tau, complex(gain), az, el, is_los=False))

        per_array.append(paths)
    return per_array


def steering_phase(scenario: Scenario, azimuth_rad: float, elevation_rad: float) -> np.ndarray:
    """Per-element steering phase (m_row, m_col) of a half-wavelength UPA for a
    wave arriving from (azimuth, elevation)."""
    r_off, c_off = scenario.arrays.element_offsets()
    u = np.cos(elevation_rad) * np.sin(azimuth_rad)  # horizontal direction cosine
    w = np.sin(elevation_rad)
    return np.pi * (c_off[None, :] * u + r_off[:, None] * w)


def paths_to_csi(
    paths: list[list[PathComponent]],
    scenario: Scenario,
    sim: SimConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Frequency-domain CSI tensor (B, m_row, m_col, n_sub) from path lists.

    H[b,r,c,n] = sum_paths gain * exp(j*steering_phase) * exp(-j*2*pi*f_n*tau)
    plus circular complex Gaussian noise such that the mean per-coefficient
    SNR over the tensor equals sim.snr_db.
    """
    shape = scenario.csi_shape()
    freqs = scenario.ofdm.subcarrier_frequencies()
    h = np.zeros(shape, dtype=complex)

    for b, array_paths in enumerate(paths):
        for p in array_paths:
            a = np.exp(1j * steering_phase(scenario, p.azimuth_rad, p.elevation_rad))
            ramp = np.exp(-2j * np.pi * freqs * p.delay_s)
            h[b] += p.gain * a[:, :, None] * ramp[None, None, :]

    if np.isfinite(sim.snr_db):
        signal_power = float(np.mean(np.abs(h) ** 2))
        if signal_power == 0.0:
            signal_power = 1.0  # all-blocked tensor: unit-variance noise floor
        noise_var = signal_power / 10.0 ** (sim.snr_db / 10.0)
        noise = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        h = h + np.sqrt(noise_var / 2.0) * noise
    return h


def generate_dataset(scenario: Scenario, sim: SimConfig, trajectory) -> Dataset:
    """One datapoint per (timestamp, 2D position) trajectory sample.

    Noise draws use per-point derived seeds so serial and parallel generation
    agree bit for bit.
    """
    trajectory = list(trajectory)
    if not trajectory:
        return Dataset.empty(scenario)

    times = np.array([t for t, _ in trajectory], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("trajectory timestamps must be strictly increasing")

    csi = np.empty((len(trajectory),) + scenario.csi_shape(), dtype=complex)
    positions = np.empty((len(trajectory), 3))
    for l, (_, xy) in enumerate(trajectory):
        tx = scenario.lift(np.asarray(xy, dtype=float))
        paths = synthesize_paths(scenario, sim, tx)
        rng = np.random.default_rng(np.random.SeedSequence([sim.seed, 0xDA7A, l]))
        csi[l] = paths_to_csi(paths, scenario, sim, rng)
        positions[l] = tx
    return Dataset(csi, positions, times)


def los_fraction(scenario: Scenario, sim: SimConfig, dataset: Dataset) -> np.ndarray:
    """Fraction of datapoints with an unblocked LoS path, per array."""
    counts = np.zeros(scenario.arrays.b_count)
    for l in range(len(dataset)):
        paths = synthesize_paths(scenario, sim, dataset.positions[l])
        for b, plist in enumerate(paths):
            if any(p.is_los for p in plist):
                counts[b] += 1
    return counts / max(len(dataset), 1)


@dataclass(frozen=True)
class LShapeTrajectory:
    """Serpentine sweep over an L-shaped region: the bounding rectangle minus
    its upper-right quadrant block."""

    n_points: int
    speed_mps: float = 1.0
    margin_m: float = 0.5
    lane_spacing_m: float = 1.0


def make_l_shape_bounds(x0: float, y0: float, size: float) -> Bounds:
    """L-shaped polygon inside a size x size bounding box anchored at (x0, y0)."""
    s = size
    return Bounds(
        np.array(
            [
                [x0, y0],
                [x0 + s, y0],
                [x0 + s, y0 + s / 2],
                [x0 + s / 2, y0 + s / 2],
                [x0 + s / 2, y0 + s],
                [x0, y0 + s],
            ]
        )
    )


def l_shape_trajectory(bounds: Bounds, cfg: LShapeTrajectory) -> list[tuple[float, np.ndarray]]:
    """Waypoint sweep covering the bounds polygon with horizontal lanes,
    resampled to n_points at constant speed."""
    poly = Polygon(bounds.vertices).buffer(-cfg.margin_m)
    if poly.is_empty:
        raise ValueError("margin leaves no interior to sweep")
    x0, y0, x1, y1 = poly.bounds

    waypoints = []
    y = y0
    leftward = False
    while y <= y1 + 1e-9:
        cut = LineString([(x0 - 1, y), (x1 + 1, y)]).intersection(poly)
        segs = getattr(cut, "geoms", [cut]) if not cut.is_empty else []
        pts = []
        for seg in segs:
            xs = [c[0] for c in seg.coords]
            pts.extend([(min(xs), y), (max(xs), y)])
        pts.sort()
        if leftward:
            pts.reverse()
        waypoints.extend(pts)
        leftward = not leftward
        y += cfg.lane_spacing_m

    waypoints = np.asarray(waypoints, dtype=float)
    seg_len = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = arc[-1]
    targets = np.linspace(0.0, total, cfg.n_points)
    xs = np.interp(targets, arc, waypoints[:, 0])
    ys = np.interp(targets, arc, waypoints[:, 1])

    # lane connectors can cut across notches of a non-convex scene; pull those
    # samples back to the nearest interior point
    from shapely.ops import nearest_points

    pts = []
    for x, y in zip(xs, ys):
        p = Point(x, y)
        if not poly.covers(p):
            p = nearest_points(poly, p)[0]
        pts.append([p.x, p.y])

    times = targets / cfg.speed_mps
    # strictly increasing timestamps even where the sweep revisits a waypoint
    times = times + np.arange(cfg.n_points) * 1e-9
    return [(float(t), np.array(p)) for t, p in zip(times, pts)]
