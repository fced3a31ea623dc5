"""Accuracy metrics, coherence and negativity audits, and rank-based
multiple comparison of reconciliation approaches.

The only plotting this module does is none: exports are plot-ready CSV
tables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import (
    DegenerateTable,
    MissingCell,
    SchemaError,
    ShapeMismatch,
    ZeroMeanActuals,
    ZeroReference,
)
from .hierarchy import (
    CrossTemporalStructure,
    as_forecast_set,
    coherence_residuals,
)

__all__ = [
    "nrmse",
    "forecast_skill",
    "DiscrepancyReport",
    "gross_discrepancies",
    "frobenius_gap",
    "negativity_audit",
    "NegativityRow",
    "MCBReport",
    "mcb_nemenyi",
    "AccuracyReport",
    "write_accuracy_csv",
    "read_accuracy_csv",
    "write_mcb_csv",
]


def nrmse(forecasts, actuals) -> float:
    """Root mean square error as a percentage of the mean actual."""
    f = np.asarray(forecasts, dtype=float).ravel()
    a = np.asarray(actuals, dtype=float).ravel()
    if f.size != a.size or f.size == 0:
        raise ShapeMismatch("forecasts and actuals must have equal, "
                            "positive length")
    mean = a.mean()
    if mean == 0.0:
        raise ZeroMeanActuals("actuals average to zero")
    rmse = float(np.sqrt(np.mean((f - a) ** 2)))
    return 100.0 * rmse / mean


def forecast_skill(nrmse_j: float, nrmse_ref: float) -> float:
    """1 minus the error ratio against a reference approach.

    Positive means better than the reference, negative worse, zero equal.
    """
    if nrmse_ref <= 0.0:
        raise ZeroReference("reference nRMSE must be positive")
    return 1.0 - nrmse_j / nrmse_ref


@dataclass(frozen=True)
class DiscrepancyReport:
    """Entrywise-L1 coherence discrepancies of one forecast set."""

    d_cs: float
    d_te: float


def gross_discrepancies(Y, ct: CrossTemporalStructure) -> DiscrepancyReport:
    """Gross cross-sectional and temporal discrepancies of a forecast set.

    A fully reconciled set scores (0, 0) up to solver tolerance.
    """
    cs_res, te_res = coherence_residuals(Y, ct)
    return DiscrepancyReport(float(np.abs(cs_res).sum()),
                             float(np.abs(te_res).sum()))


def frobenius_gap(A, B) -> float:
    """Frobenius norm of the difference of two equal-shape matrices."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ShapeMismatch(f"shapes {A.shape} and {B.shape} differ")
    return float(np.linalg.norm(A - B))


@dataclass(frozen=True)
class NegativityRow:
    """Negativity summary for one (approach, order) cell."""

    approach: str
    k: int
    reps_with_negative: int
    min_series: int
    max_series: int
    min_value: float
    max_value: float


def negativity_audit(runs, ct: CrossTemporalStructure) -> list[NegativityRow]:
    """Summarise negative forecasts per approach and temporal order.

    ``runs`` is an iterable of ``(approach, replication, forecast_set)``
    records.  For each approach and order the audit reports how many
    replications contain at least one negative value, the smallest and
    largest per-replication count of affected series, and the extreme
    negative values (0 when none occur).
    """
    per_cell: dict[tuple[str, int], dict[int, np.ndarray]] = {}
    for approach, rep, Y in runs:
        fs = as_forecast_set(Y, ct)
        for k in ct.te.orders:
            block = fs.values[:, ct.te.block_slice(k)]
            per_cell.setdefault((approach, int(k)), {})[int(rep)] = block
    rows = []
    for (approach, k), reps in sorted(per_cell.items()):
        series_counts, values = [], []
        n_neg_reps = 0
        for _, block in sorted(reps.items()):
            neg = block < 0
            if neg.any():
                n_neg_reps += 1
                values.append(block[neg])
            series_counts.append(int(neg.any(axis=1).sum()))
        allneg = np.concatenate(values) if values else np.array([])
        rows.append(NegativityRow(
            approach, k, n_neg_reps,
            min(series_counts), max(series_counts),
            float(allneg.min()) if allneg.size else 0.0,
            float(allneg.max()) if allneg.size else 0.0))
    return rows


# Upper quantiles of the studentized range (infinite degrees of freedom)
# for J = 2..30 compared approaches, the classical constants behind the
# Nemenyi critical distance.  Cross-checked against scipy in the test
# suite.
NEMENYI_Q = {
    0.01: (3.6428, 4.1203, 4.4028, 4.6028, 4.7570, 4.8822, 4.9872, 5.0775,
           5.1566, 5.2270, 5.2902, 5.3476, 5.4001, 5.4485, 5.4933, 5.5350,
           5.5740, 5.6107, 5.6452, 5.6778, 5.7088, 5.7382, 5.7661, 5.7928,
           5.8184, 5.8429, 5.8663, 5.8889, 5.9106),
    0.05: (2.7718, 3.3145, 3.6332, 3.8577, 4.0301, 4.1696, 4.2863, 4.3865,
           4.4741, 4.5519, 4.6217, 4.6849, 4.7427, 4.7959, 4.8452, 4.8910,
           4.9337, 4.9739, 5.0117, 5.0474, 5.0812, 5.1133, 5.1439, 5.1730,
           5.2008, 5.2275, 5.2531, 5.2777, 5.3013),
    0.10: (2.3262, 2.9024, 3.2404, 3.4783, 3.6607, 3.8081, 3.9313, 4.0370,
           4.1293, 4.2112, 4.2846, 4.3512, 4.4119, 4.4678, 4.5195, 4.5675,
           4.6124, 4.6545, 4.6941, 4.7315, 4.7669, 4.8005, 4.8325, 4.8630,
           4.8921, 4.9200, 4.9467, 4.9724, 4.9971),
}


@dataclass(frozen=True)
class MCBReport:
    """Mean ranks with simultaneous confidence intervals.

    Approaches whose interval does not overlap the best approach's interval
    perform significantly differently from it at the chosen level.
    """

    approaches: tuple[str, ...]
    mean_ranks: np.ndarray
    half_width: float
    lower: np.ndarray
    upper: np.ndarray
    best: str
    significant_vs_best: tuple[bool, ...]
    alpha: float
    n_series: int


def mcb_nemenyi(nrmse_table, alpha: float = 0.05,
                approaches=None) -> MCBReport:
    """Multiple comparison with the best over an N x J error table.

    Each row (series) ranks the J approaches by ascending error with ties
    averaged.  The interval around each mean rank has half-width
    ``q/2 * sqrt(J(J+1)/(12N))`` with ``q`` the studentized-range quantile
    for J groups at level ``alpha``.
    """
    table = np.asarray(nrmse_table, dtype=float)
    if table.ndim != 2:
        raise DegenerateTable("rank table must be 2-d (series x approaches)")
    n, j = table.shape
    if n < 2 or j < 2:
        raise DegenerateTable(f"need at least 2 series and 2 approaches, "
                              f"got {n} x {j}")
    if j - 2 >= len(NEMENYI_Q[0.05]):
        raise DegenerateTable(f"critical values tabulated up to "
                              f"{len(NEMENYI_Q[0.05]) + 1} approaches")
    if alpha not in NEMENYI_Q:
        raise DegenerateTable(f"alpha must be one of "
                              f"{sorted(NEMENYI_Q)}, got {alpha}")
    if approaches is None:
        approaches = tuple(f"approach{i + 1}" for i in range(j))
    approaches = tuple(approaches)
    if len(approaches) != j:
        raise ShapeMismatch("one name per approach required")

    ranks = np.apply_along_axis(rankdata, 1, table)
    mean_ranks = ranks.mean(axis=0)
    q = NEMENYI_Q[alpha][j - 2]
    half = 0.5 * q * np.sqrt(j * (j + 1) / (12.0 * n))
    lower, upper = mean_ranks - half, mean_ranks + half
    best_idx = int(np.argmin(mean_ranks))
    sig = tuple(bool(lower[i] > upper[best_idx] or upper[i] < lower[best_idx])
                for i in range(j))
    return MCBReport(approaches, mean_ranks, float(half), lower, upper,
                     approaches[best_idx], sig, alpha, n)


@dataclass
class AccuracyReport:
    """Per (series, order, approach) accuracy with level summaries.

    ``cells[approach, k]`` is the per-series nRMSE vector.  Skill is always
    measured against ``reference``.  ``pooled`` optionally carries level
    nRMSEs computed from pooled errors instead of averaging per-series
    values; both variants are exported, the pooled ones flagged.
    """

    series_labels: tuple[str, ...]
    series_levels: tuple[str, ...]
    orders: tuple[int, ...]
    approaches: tuple[str, ...]
    reference: str
    cells: dict = field(default_factory=dict)
    pooled: dict = field(default_factory=dict)

    def nrmse_vector(self, approach: str, k: int) -> np.ndarray:
        return self.cells[(approach, int(k))]

    def skill_vector(self, approach: str, k: int) -> np.ndarray:
        ref = self.cells[(self.reference, int(k))]
        own = self.cells[(approach, int(k))]
        return _skill(own, ref)

    def nrmse_matrix(self, k: int, approaches=None) -> np.ndarray:
        """Series x approaches table for rank-based comparison."""
        names = self.approaches if approaches is None else tuple(approaches)
        return np.column_stack([self.nrmse_vector(a, k) for a in names])

    def levels(self) -> tuple[str, ...]:
        seen = []
        for lv in self.series_levels:
            if lv not in seen:
                seen.append(lv)
        return tuple(seen)

    def level_mean(self, level: str, approach: str, k: int) -> float:
        mask = np.array([lv == level for lv in self.series_levels])
        return float(self.nrmse_vector(approach, k)[mask].mean())

    def rows(self):
        """Flat rows for CSV export: per-series cells, then level
        summaries (arithmetic mean across series and, when available,
        pooled-error variants)."""
        out = []
        for a in self.approaches:
            for k in self.orders:
                nr = self.nrmse_vector(a, k)
                sk = self.skill_vector(a, k)
                for i, label in enumerate(self.series_labels):
                    out.append({"level": self.series_levels[i],
                                "series": label, "k": k, "approach": a,
                                "nrmse": nr[i], "skill": sk[i]})
        for a in self.approaches:
            for k in self.orders:
                for lv in self.levels():
                    mean = self.level_mean(lv, a, k)
                    ref = self.level_mean(lv, self.reference, k)
                    out.append({"level": lv, "series": "(mean)", "k": k,
                                "approach": a, "nrmse": mean,
                                "skill": float(_skill(mean, ref))})
                    key = (a, int(k), lv)
                    if key in self.pooled:
                        refp = self.pooled[(self.reference, int(k), lv)]
                        out.append({"level": lv, "series": "(pooled)",
                                    "k": k, "approach": a,
                                    "nrmse": self.pooled[key],
                                    "skill": float(_skill(self.pooled[key],
                                                          refp))})
        return out


def _skill(own, ref):
    """Skill with the degenerate zero-reference cases pinned: matching a
    perfect reference scores 0, falling short of one scores -inf."""
    own = np.asarray(own, dtype=float)
    ref = np.asarray(ref, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 1.0 - own / ref
    return np.where((ref == 0.0) & (own == 0.0), 0.0, out)


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def write_accuracy_csv(path, report: AccuracyReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "series", "k", "approach", "nrmse", "skill"])
        for row in report.rows():
            w.writerow([row["level"], row["series"], row["k"],
                        row["approach"], _fmt(row["nrmse"]),
                        _fmt(row["skill"])])


def read_accuracy_csv(path):
    """Read per-series accuracy rows (summary rows are skipped).

    Returns ``(labels, orders, approaches, cells)`` with ``cells`` mapping
    (approach, k) to the per-series nRMSE vector, series in first-seen
    order.
    """
    labels: list[str] = []
    orders: list[int] = []
    approaches: list[str] = []
    raw: dict = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"level", "series", "k", "approach", "nrmse"}
        if reader.fieldnames is None or not required.issubset(
                reader.fieldnames):
            raise SchemaError(f"{path}: accuracy CSV needs columns "
                              f"{sorted(required)}")
        for rec in reader:
            series = rec["series"]
            if series.startswith("("):
                continue
            k = int(rec["k"])
            a = rec["approach"]
            if series not in labels:
                labels.append(series)
            if k not in orders:
                orders.append(k)
            if a not in approaches:
                approaches.append(a)
            raw[(a, k, series)] = float(rec["nrmse"])
    cells = {}
    for a in approaches:
        for k in orders:
            try:
                cells[(a, k)] = np.array([raw[(a, k, s)] for s in labels])
            except KeyError as exc:
                raise MissingCell(f"{path}: missing accuracy cell "
                                  f"{exc.args[0]}") from exc
    return tuple(labels), tuple(orders), tuple(approaches), cells


def write_mcb_csv(path, report: MCBReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["approach", "mean_rank", "lo", "hi",
                    "significant_vs_best"])
        for i, a in enumerate(report.approaches):
            w.writerow([a, _fmt(report.mean_ranks[i]), _fmt(report.lower[i]),
                        _fmt(report.upper[i]),
                        int(report.significant_vs_best[i])])
