"""The five evaluation metrics and their split-wise aggregation.

ALDE, APE, MnRE and the q-metric depend only on the prediction/truth ratio;
ADE is the absolute error in kilograms. Aggregation is a plain arithmetic
mean per split; stratified reports keep a Total row that equals the
count-weighted combination of the strata.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

STRATIFY_MODES = ("none", "seen_unseen", "category")
CSV_COLUMNS = ("stratum", "count", "ALDE", "APE", "MnRE", "Q", "ADE")


def _check_positive(m: float, m_hat: float) -> None:
    if not (np.isfinite(m) and np.isfinite(m_hat)):
        raise DomainError(f"masses must be finite, got m={m}, m_hat={m_hat}")
    if m <= 0 or m_hat <= 0:
        raise DomainError(f"masses must be positive, got m={m}, m_hat={m_hat}")


def alde(m: float, m_hat: float) -> float:
    """Absolute difference of log masses."""
    _check_positive(m, m_hat)
    return abs(float(np.log(m) - np.log(m_hat)))


def ape(m: float, m_hat: float) -> float:
    """|m - m_hat| / m."""
    if not (np.isfinite(m) and np.isfinite(m_hat)) or m <= 0:
        raise DomainError(f"ground truth mass must be positive, got m={m}")
    return abs(m - m_hat) / m


def mnre(m: float, m_hat: float) -> float:
    """min(m_hat/m, m/m_hat); 1 is a perfect prediction."""
    _check_positive(m, m_hat)
    return min(m_hat / m, m / m_hat)


def q_hit(m: float, m_hat: float) -> bool:
    """True iff the prediction is within a strict factor of 2."""
    _check_positive(m, m_hat)
    return max(m_hat / m, m / m_hat) < 2.0


def ade(m: float, m_hat: float) -> float:
    """|m - m_hat| in kilograms."""
    if not (np.isfinite(m) and np.isfinite(m_hat)):
        raise DomainError(f"masses must be finite, got m={m}, m_hat={m_hat}")
    return abs(m - m_hat)


@dataclass(frozen=True)
class EvalPair:
    id: str
    m: float
    m_hat: float
    category: str = ""
    seen: bool = True


@dataclass
class MetricsReport:
    count: int
    alde: float
    ape: float
    mnre: float
    q_rate: float
    ade: float
    strata: dict[str, "MetricsReport"] = field(default_factory=dict)


def _aggregate_flat(pairs: list[EvalPair]) -> MetricsReport:
    n = len(pairs)
    return MetricsReport(
        count=n,
        alde=sum(alde(p.m, p.m_hat) for p in pairs) / n,
        ape=sum(ape(p.m, p.m_hat) for p in pairs) / n,
        mnre=sum(mnre(p.m, p.m_hat) for p in pairs) / n,
        q_rate=sum(1 for p in pairs if q_hit(p.m, p.m_hat)) / n,
        ade=sum(ade(p.m, p.m_hat) for p in pairs) / n,
    )


def aggregate(pairs: list[EvalPair], stratify: str = "none") -> MetricsReport:
    """Mean metrics over the pairs, optionally with sub-reports per stratum."""
    if not pairs:
        raise DomainError("cannot aggregate an empty list of pairs")
    if stratify not in STRATIFY_MODES:
        raise ValueError(f"stratify must be one of {STRATIFY_MODES}, got {stratify!r}")
    report = _aggregate_flat(pairs)
    if stratify == "seen_unseen":
        for label, keep in (("seen", True), ("unseen", False)):
            subset = [p for p in pairs if p.seen == keep]
            if subset:
                report.strata[label] = _aggregate_flat(subset)
    elif stratify == "category":
        for cat in sorted({p.category for p in pairs}):
            report.strata[cat] = _aggregate_flat([p for p in pairs if p.category == cat])
    return report


def report_rows(report: MetricsReport) -> list[list]:
    """CSV rows: one per stratum, then the Total row."""
    rows = []
    for label, sub in report.strata.items():
        rows.append([label, sub.count, sub.alde, sub.ape, sub.mnre, sub.q_rate, sub.ade])
    rows.append(["Total", report.count, report.alde, report.ape, report.mnre,
                 report.q_rate, report.ade])
    return rows


def write_report_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in report_rows(report):
            writer.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])
