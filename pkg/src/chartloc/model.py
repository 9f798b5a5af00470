"""Core domain types: OFDM config, array geometry, scene, dataset, validation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, Point, Polygon

SPEED_OF_LIGHT = 299_792_458.0  # m/s

_UP = np.array([0.0, 0.0, 1.0])


def csi_values(csi) -> np.ndarray:
    """Accept either a CsiTensor or a raw complex ndarray and return the ndarray."""
    return csi.values if isinstance(csi, CsiTensor) else np.asarray(csi)


@dataclass(frozen=True)
class OfdmConfig:
    """OFDM numerology. Subcarrier i (0-based) sits at baseband frequency
    (i - n_sub/2) * subcarrier_spacing_hz."""

    carrier_frequency_hz: float
    bandwidth_hz: float
    n_sub: int

    def __post_init__(self):
        if self.n_sub < 8 or (self.n_sub & (self.n_sub - 1)) != 0:
            raise ValueError(f"n_sub must be a power of two >= 8, got {self.n_sub}")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        if self.carrier_frequency_hz <= self.bandwidth_hz:
            raise ValueError("carrier_frequency_hz must exceed bandwidth_hz")

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.n_sub

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency_hz

    def subcarrier_frequencies(self) -> np.ndarray:
        """Baseband frequencies of all subcarriers, shape (n_sub,)."""
        return (np.arange(self.n_sub) - self.n_sub / 2) * self.subcarrier_spacing_hz


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar arrays: columns span the horizontal (azimuth-resolving)
    axis, rows the vertical axis, at half-wavelength spacing."""

    m_row: int
    m_col: int
    centers: np.ndarray  # (B, 3) meters
    normals: np.ndarray  # (B, 3) unit vectors
    element_spacing_m: float

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        normals = np.asarray(self.normals, dtype=float)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "normals", normals)
        if centers.ndim != 2 or centers.shape[1] != 3:
            raise ValueError("centers must have shape (B, 3)")
        if normals.shape != centers.shape:
            raise ValueError("normals must match centers in shape")
        if self.m_row < 1 or self.m_col < 1:
            raise ValueError("m_row and m_col must be positive")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("normals must be unit length within 1e-9")
        for a in range(len(centers)):
            for b in range(a + 1, len(centers)):
                if np.allclose(centers[a], centers[b]):
                    raise ValueError(f"array centers {a} and {b} coincide")

    @property
    def b_count(self) -> int:
        return len(self.centers)

    def local_axes(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        """(column_axis, row_axis) of array b. Columns run horizontally
        (z_world x normal), rows vertically."""
        col_axis = np.cross(_UP, self.normals[b])
        n = np.linalg.norm(col_axis)
        if n < 1e-12:
            raise ValueError(f"array {b} normal is vertical; column axis undefined")
        return col_axis / n, _UP.copy()

    def element_offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Signed element index offsets (rows, cols) symmetric about the center."""
        r = np.arange(self.m_row) - (self.m_row - 1) / 2
        c = np.arange(self.m_col) - (self.m_col - 1) / 2
        return r, c

    def element_positions(self, b: int) -> np.ndarray:
        """Element positions of array b, shape (m_row, m_col, 3)."""
        col_axis, row_axis = self.local_axes(b)
        r_off, c_off = self.element_offsets()
        pos = (
            self.centers[b][None, None, :]
            + self.element_spacing_m * r_off[:, None, None] * row_axis[None, None, :]
            + self.element_spacing_m * c_off[None, :, None] * col_axis[None, None, :]
        )
        return pos


@dataclass(frozen=True)
class Bounds:
    """2D scene bounds as a simple polygon (axis-aligned rectangles included)."""

    vertices: np.ndarray  # (N, 2)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("bounds need at least 3 vertices of dimension 2")
        if Polygon(v).area <= 0:
            raise ValueError("bounds polygon is degenerate")

    @classmethod
    def rect(cls, x_min, y_min, x_max, y_max) -> "Bounds":
        return cls(np.array([[x_min, y_min], [x_max, y_min], [x_max, y_max], [x_min, y_max]]))

    def _polygon(self) -> Polygon:
        return Polygon(self.vertices)

    def contains(self, xy) -> np.ndarray:
        """Point-in-polygon test (boundary counts as inside); xy is (2,) or (N, 2)."""
        pts = np.atleast_2d(np.asarray(xy, dtype=float))
        poly = self._polygon()
        inside = np.array([poly.covers(Point(p)) for p in pts])
        return inside if np.asarray(xy).ndim > 1 else bool(inside[0])

    def bbox(self) -> tuple[float, float, float, float]:
        v = self.vertices
        return float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max())

    def diagonal(self) -> float:
        x0, y0, x1, y1 = self.bbox()
        return float(np.hypot(x1 - x0, y1 - y0))

    def segment_blocked(self, p, q) -> bool:
        """True if the open segment p-q crosses the polygon interior."""
        seg = LineString([np.asarray(p, float)[:2], np.asarray(q, float)[:2]])
        poly = self._polygon()
        return seg.crosses(poly) or seg.within(poly)


@dataclass(frozen=True)
class Scenario:
    ofdm: OfdmConfig
    arrays: ArrayGeometry
    tx_height_m: float
    bounds: Bounds

    def __post_init__(self):
        if not (0.0 <= self.tx_height_m <= 10.0):
            raise ValueError("tx_height_m must lie in [0, 10]")

    @classmethod
    def make(cls, ofdm: OfdmConfig, centers, normals, m_row, m_col, tx_height_m, bounds) -> "Scenario":
        """Build a scenario with half-carrier-wavelength element spacing."""
        arrays = ArrayGeometry(
            m_row=m_row,
            m_col=m_col,
            centers=np.asarray(centers, float),
            normals=np.asarray(normals, float),
            element_spacing_m=ofdm.wavelength_m / 2,
        )
        return cls(ofdm=ofdm, arrays=arrays, tx_height_m=tx_height_m, bounds=bounds)

    def csi_shape(self) -> tuple[int, int, int, int]:
        a = self.arrays
        return (a.b_count, a.m_row, a.m_col, self.ofdm.n_sub)

    def lift(self, xy) -> np.ndarray:
        """Lift 2D position(s) to 3D at the fixed transmitter height."""
        xy = np.asarray(xy, dtype=float)
        if xy.ndim == 1:
            return np.array([xy[0], xy[1], self.tx_height_m])
        out = np.empty((len(xy), 3))
        out[:, :2] = xy
        out[:, 2] = self.tx_height_m
        return out


def azimuth_elevation(v: np.ndarray, normal: np.ndarray) -> tuple[float, float]:
    """Azimuth/elevation of direction v in the local frame of an array with the
    given normal. Azimuth 0 is broadside, positive towards z_world x normal;
    elevation is the angle above the horizontal plane."""
    v = np.asarray(v, dtype=float)
    n_h = normal - normal[2] * _UP
    nn = np.linalg.norm(n_h)
    if nn < 1e-12:
        raise ValueError("array normal is vertical; azimuth undefined")
    n_h = n_h / nn
    col_axis = np.cross(_UP, n_h)
    v_h = v - v[2] * _UP
    az = float(np.arctan2(v_h @ col_axis, v_h @ n_h))
    el = float(np.arctan2(v[2], np.linalg.norm(v_h)))
    return az, el


def azimuth_to_points(points: np.ndarray, center: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Vectorized azimuth of (points - center) in the array's local frame."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n_h = normal - normal[2] * _UP
    n_h = n_h / np.linalg.norm(n_h)
    col_axis = np.cross(_UP, n_h)
    v = pts - center[None, :]
    v_h = v - v[:, 2:3] * _UP[None, :]
    return np.arctan2(v_h @ col_axis, v_h @ n_h)


@dataclass(frozen=True)
class CsiTensor:
    """Frequency-domain channel coefficients of one datapoint, shape
    (B, m_row, m_col, n_sub)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if not np.iscomplexobj(v):
            v = v.astype(complex)
        object.__setattr__(self, "values", v)
        if v.ndim != 4:
            raise ValueError(f"CSI tensor must be 4-dimensional, got shape {v.shape}")


@dataclass(frozen=True)
class Datapoint:
    csi: CsiTensor
    position: np.ndarray  # (3,) meters
    timestamp: float  # seconds


class Dataset:
    """Ordered collection of (CSI, ground-truth position, timestamp) triples,
    stored as stacked arrays."""

    def __init__(self, csi: np.ndarray, positions: np.ndarray, timestamps: np.ndarray):
        self.csi = np.asarray(csi)
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        self.timestamps = np.asarray(timestamps, dtype=float).reshape(-1)
        if not (len(self.csi) == len(self.positions) == len(self.timestamps)):
            raise ValueError("csi, positions and timestamps must have equal length")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, l: int) -> Datapoint:
        return Datapoint(CsiTensor(self.csi[l]), self.positions[l], float(self.timestamps[l]))

    @classmethod
    def empty(cls, scenario: Scenario) -> "Dataset":
        shape = (0,) + scenario.csi_shape()
        return cls(np.zeros(shape, dtype=complex), np.zeros((0, 3)), np.zeros(0))


@dataclass(frozen=True)
class Violation:
    index: int
    kind: str
    message: str
    tensor_index: tuple | None = None


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.is_valid:
            return "dataset valid"
        return "\n".join(f"[{v.index}] {v.kind}: {v.message}" for v in self.violations)


def validate_dataset(dataset: Dataset, scenario: Scenario) -> ValidationReport:
    """Check every dataset invariant; violations are data, not errors."""
    report = ValidationReport()
    expected = scenario.csi_shape()
    for l in range(len(dataset)):
        shape = dataset.csi[l].shape
        if shape != expected:
            report.violations.append(
                Violation(l, "shape", f"CSI shape {shape} does not match scenario {expected}")
            )
            continue
        finite = np.isfinite(dataset.csi[l].real) & np.isfinite(dataset.csi[l].imag)
        if not finite.all():
            idx = tuple(int(i) for i in np.argwhere(~finite)[0])
            report.violations.append(
                Violation(l, "non_finite", f"non-finite CSI coefficient at index {idx}", idx)
            )
    for l in range(1, len(dataset)):
        if dataset.timestamps[l] < dataset.timestamps[l - 1]:
            report.violations.append(
                Violation(
                    l,
                    "timestamp",
                    f"timestamp {dataset.timestamps[l]} decreases below {dataset.timestamps[l - 1]}",
                )
            )
    if len(dataset):
        inside = scenario.bounds.contains(dataset.positions[:, :2])
        for l in np.flatnonzero(~inside):
            report.violations.append(
                Violation(int(l), "bounds", f"position {dataset.positions[l, :2]} outside scene bounds")
            )
    report.violations.sort(key=lambda v: v.index)
    return report
