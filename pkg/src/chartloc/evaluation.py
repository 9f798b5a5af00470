"""Localization and chart-quality metrics, plus the method-comparison table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TABLE_COLUMNS = ("MAE", "DRMS", "CEP", "R95", "KS", "CT/TW")


@dataclass(frozen=True)
class MetricReport:
    method: str
    mae_m: float
    drms_m: float
    cep_m: float
    r95_m: float
    ks: float
    ct: float
    tw: float
    ecdf: np.ndarray  # sorted error sequence

    def __post_init__(self):
        if self.cep_m > self.r95_m + 1e-12:
            raise ValueError("median error cannot exceed the 95th percentile")
        if self.mae_m > self.drms_m + 1e-12:
            raise ValueError("MAE cannot exceed DRMS")


def position_error_stats(truth, estimates) -> tuple[float, float, float, float, np.ndarray]:
    """(mae, drms, cep, r95, sorted errors) of 2D position estimates."""
    t = np.asarray(truth, dtype=float)
    e = np.asarray(estimates, dtype=float)
    if t.shape != e.shape or len(t) < 1:
        raise ValueError("truth and estimates must be equal-length non-empty (L, 2) arrays")
    errors = np.linalg.norm(t - e, axis=1)
    mae = float(np.mean(errors))
    drms = float(np.sqrt(np.mean(errors**2)))
    cep = float(np.quantile(errors, 0.5, method="linear"))
    r95 = float(np.quantile(errors, 0.95, method="linear"))
    return mae, drms, cep, r95, np.sort(errors)


def _pairwise(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.linalg.norm(diff, axis=2)


def kruskal_stress(truth, chart) -> float:
    """Global geometry preservation: normalized stress between true pairwise
    distances and optimally rescaled chart distances."""
    t = np.asarray(truth, dtype=float)
    c = np.asarray(chart, dtype=float)
    if len(t) != len(c) or len(t) < 2:
        raise ValueError("need two aligned point sets with at least 2 points")
    iu = np.triu_indices(len(t), k=1)
    d_true = _pairwise(t)[iu]
    d_chart = _pairwise(c)[iu]
    denom = float(np.sum(d_true**2))
    if denom == 0.0:
        raise ValueError("all truth points are identical; stress undefined")
    chart_sq = float(np.sum(d_chart**2))
    scale = float(np.sum(d_true * d_chart) / chart_sq) if chart_sq > 0 else 0.0
    return float(np.sqrt(np.sum((d_true - scale * d_chart) ** 2) / denom))


def _neighbor_ranks(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stable distance ordering per point (ties broken by index).

    Returns (order, rank): order[i] lists the other points nearest-first,
    rank[i, j] is the 1-based position of j in that list.
    """
    n = len(points)
    d = _pairwise(points)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")[:, : n - 1]
    rank = np.empty((n, n), dtype=int)
    rows = np.repeat(np.arange(n), n - 1)
    rank[rows, order.ravel()] = np.tile(np.arange(1, n), n)
    np.fill_diagonal(rank, 0)
    return order, rank


def continuity_trustworthiness(truth, chart, k: int) -> tuple[float, float]:
    """Rank-based local-geometry metrics (CT, TW) with neighborhood size k."""
    t = np.asarray(truth, dtype=float)
    c = np.asarray(chart, dtype=float)
    n = len(t)
    if len(c) != n:
        raise ValueError("truth and chart must have equal length")
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < L, got k={k}, L={n}")

    order_t, rank_t = _neighbor_ranks(t)
    order_c, rank_c = _neighbor_ranks(c)
    nn_t = [set(row[:k]) for row in order_t]
    nn_c = [set(row[:k]) for row in order_c]

    tw_penalty = 0.0  # chart neighbors that are not true neighbors
    ct_penalty = 0.0  # true neighbors missing from the chart neighborhood
    for i in range(n):
        for j in nn_c[i] - nn_t[i]:
            tw_penalty += rank_t[i, j] - k
        for j in nn_t[i] - nn_c[i]:
            ct_penalty += rank_c[i, j] - k

    norm = 2.0 / (n * k * (2 * n - 3 * k - 1))
    return 1.0 - norm * ct_penalty, 1.0 - norm * tw_penalty


def default_neighbor_k(n: int) -> int:
    return max(1, int(0.05 * n))


def evaluate_method(method: str, truth, estimates, k: int | None = None) -> MetricReport:
    mae, drms, cep, r95, ecdf = position_error_stats(truth, estimates)
    k = default_neighbor_k(len(np.asarray(truth))) if k is None else k
    ct, tw = continuity_trustworthiness(truth, estimates, k)
    return MetricReport(
        method=method,
        mae_m=mae,
        drms_m=drms,
        cep_m=cep,
        r95_m=r95,
        ks=kruskal_stress(truth, estimates),
        ct=ct,
        tw=tw,
        ecdf=ecdf,
    )


def compare_methods(truth, estimates_by_method: dict, k: int | None = None) -> list[MetricReport]:
    """One MetricReport per method, all evaluated against the same truth."""
    if not estimates_by_method:
        raise ValueError("no method outputs to compare")
    reports = []
    for method, estimates in estimates_by_method.items():
        if estimates is None:
            raise ValueError(f"missing output for method {method!r}")
        reports.append(evaluate_method(method, truth, estimates, k))
    return reports


def render_table(reports: list[MetricReport]) -> str:
    """Aligned text table with the usual comparison columns."""
    rows = [("method",) + TABLE_COLUMNS]
    for r in reports:
        rows.append(
            (
                r.method,
                f"{r.mae_m:.3f} m",
                f"{r.drms_m:.3f} m",
                f"{r.cep_m:.3f} m",
                f"{r.r95_m:.3f} m",
                f"{r.ks:.3f}",
                f"{r.ct:.3f}/{r.tw:.3f}",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for j, row in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if j == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)


def report_rows(reports: list[MetricReport]) -> list[dict]:
    return [
        {
            "method": r.method,
            "mae_m": r.mae_m,
            "drms_m": r.drms_m,
            "cep_m": r.cep_m,
            "r95_m": r.r95_m,
            "ks": r.ks,
            "ct": r.ct,
            "tw": r.tw,
        }
        for r in reports
    ]
