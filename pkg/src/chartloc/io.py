"""Dataset container on disk: scenario.json + csi.bin + meta.csv.

csi.bin holds little-endian float32 pairs (re, im) in row-major order
[L, B, m_row, m_col, n_sub, 2]. meta.csv has one row per datapoint with
header index,t_s,x1_m,x2_m,x3_m.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import ArrayGeometry, Bounds, Dataset, OfdmConfig, Scenario

SCENARIO_FILE = "scenario.json"
CSI_FILE = "csi.bin"
META_FILE = "meta.csv"


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "ofdm": {
            "carrier_frequency_hz": scenario.ofdm.carrier_frequency_hz,
            "bandwidth_hz": scenario.ofdm.bandwidth_hz,
            "n_sub": scenario.ofdm.n_sub,
        },
        "arrays": {
            "m_row": scenario.arrays.m_row,
            "m_col": scenario.arrays.m_col,
            "centers": scenario.arrays.centers.tolist(),
            "normals": scenario.arrays.normals.tolist(),
            "element_spacing_m": scenario.arrays.element_spacing_m,
        },
        "tx_height_m": scenario.tx_height_m,
        "bounds": {"vertices": scenario.bounds.vertices.tolist()},
    }


def scenario_from_dict(d: dict) -> Scenario:
    ofdm = OfdmConfig(
        carrier_frequency_hz=float(d["ofdm"]["carrier_frequency_hz"]),
        bandwidth_hz=float(d["ofdm"]["bandwidth_hz"]),
        n_sub=int(d["ofdm"]["n_sub"]),
    )
    a = d["arrays"]
    arrays = ArrayGeometry(
        m_row=int(a["m_row"]),
        m_col=int(a["m_col"]),
        centers=np.asarray(a["centers"], dtype=float),
        normals=np.asarray(a["normals"], dtype=float),
        element_spacing_m=float(a.get("element_spacing_m", ofdm.wavelength_m / 2)),
    )
    bounds = Bounds(np.asarray(d["bounds"]["vertices"], dtype=float))
    return Scenario(ofdm=ofdm, arrays=arrays, tx_height_m=float(d["tx_height_m"]), bounds=bounds)


def write_dataset(directory, dataset: Dataset, scenario: Scenario) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    with open(directory / SCENARIO_FILE, "w") as f:
        json.dump(scenario_to_dict(scenario), f, indent=2, sort_keys=True)
        f.write("\n")

    interleaved = np.empty(dataset.csi.shape + (2,), dtype="<f4")
    interleaved[..., 0] = dataset.csi.real
    interleaved[..., 1] = dataset.csi.imag
    interleaved.tofile(directory / CSI_FILE)

    with open(directory / META_FILE, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "t_s", "x1_m", "x2_m", "x3_m"])
        for l in range(len(dataset)):
            writer.writerow(
                [
                    l,
                    format_float(dataset.timestamps[l]),
                    format_float(dataset.positions[l, 0]),
                    format_float(dataset.positions[l, 1]),
                    format_float(dataset.positions[l, 2]),
                ]
            )


def read_dataset(directory) -> tuple[Dataset, Scenario]:
    directory = Path(directory)
    with open(directory / SCENARIO_FILE) as f:
        scenario = scenario_from_dict(json.load(f))

    rows = []
    with open(directory / META_FILE, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            rows.append((int(row["index"]), float(row["t_s"]), float(row["x1_m"]), float(row["x2_m"]), float(row["x3_m"])))
    rows.sort(key=lambda r: r[0])
    timestamps = np.array([r[1] for r in rows])
    positions = np.array([[r[2], r[3], r[4]] for r in rows]).reshape(-1, 3)

    shape = (len(rows),) + scenario.csi_shape() + (2,)
    raw = np.fromfile(directory / CSI_FILE, dtype="<f4")
    if raw.size != int(np.prod(shape)):
        raise ValueError(
            f"csi.bin holds {raw.size} floats, expected {int(np.prod(shape))} for shape {shape}"
        )
    raw = raw.reshape(shape)
    csi = (raw[..., 0] + 1j * raw[..., 1]).astype(np.complex128)
    return Dataset(csi, positions, timestamps), scenario


def format_float(x: float) -> str:
    """Shortest round-trip decimal representation (stable across runs)."""
    return repr(float(x))
