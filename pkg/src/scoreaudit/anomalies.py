"""Assessments inconsistent with the reconstructed additive score.

Three independent screens. Age outliers sit below the fitted age lower
bound, which a correctly-recorded score cannot do (every other component
adds a nonnegative amount). Low-score/long-history rows pair a bottom
decile with substantial recorded history. The ML-vs-decile screen compares
each row's held-out recidivism probability against its decile rank and
flags gross disagreements. Each report carries the evidence needed to
recompute its own flag from the dataset.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .lowerbound import AgeSpline, StepFunction  # noqa: F401  (StepFunction appears in type docs)
from .records import CohortDataset, age_at
from .subscales import compute_subscales, sums as subscale_sums

log = logging.getLogger(__name__)

KIND_AGE = "age_outlier"
KIND_HISTORY = "low_score_long_history"
KIND_GAP = "ml_decile_gap"


@dataclass(frozen=True)
class AnomalyReport:
    kind: str
    assessment_id: str
    severity: float
    evidence: dict

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "assessment_id": self.assessment_id,
            "severity": self.severity,
            "evidence": dict(self.evidence),
        }


def flag_age_outliers(
    dataset: CohortDataset,
    spline: AgeSpline,
    c: float = 0.05,
    score_kind: str = "general",
) -> list[AnomalyReport]:
    """Whole-population rows lying strictly more than c below the age bound.

    Severity is the full distance below the bound (> c whenever flagged).
    """
    if c < 0:
        raise ValueError("tolerance c must be nonnegative")
    out = []
    for a in dataset.assessments:
        if a.score_kind != score_kind:
            continue
        person = dataset.persons_by_id[a.person_id]
        age = age_at(person, a.screening_date)
        bound = spline.evaluate(float(age))
        if a.raw_score < bound - c:
            out.append(AnomalyReport(
                kind=KIND_AGE,
                assessment_id=a.assessment_id,
                severity=bound - a.raw_score,
                evidence={
                    "score_kind": score_kind,
                    "age": age,
                    "raw_score": a.raw_score,
                    "bound": bound,
                    "c": c,
                },
            ))
    return out


def flag_low_score_long_history(
    dataset: CohortDataset,
    decile_max: int = 2,
    violence_min: int = 3,
    arrests_min: int = 10,
) -> list[AnomalyReport]:
    """Bottom-decile assessments whose recorded history is substantial.

    History is substantial when the violence subscale sum reaches
    violence_min or the distinct-arrest count reaches arrests_min.
    Severity is the larger of the two sums normalized by its threshold,
    so it is >= 1 on every flagged row. Rows without a resolvable current
    offense have no computable history and are skipped.
    """
    cache: dict[tuple, Optional[tuple]] = {}
    out = []
    for a in dataset.assessments:
        if a.decile_score > decile_max:
            continue
        key = (a.person_id, a.screening_date)
        if key not in cache:
            person = dataset.persons_by_id[a.person_id]
            vec = compute_subscales(person, a, dataset)
            cache[key] = None if vec is None else (
                subscale_sums(vec).violence_history_sum, vec.n_arrests
            )
        if cache[key] is None:
            continue
        violence_sum, n_arrests = cache[key]
        if violence_sum >= violence_min or n_arrests >= arrests_min:
            out.append(AnomalyReport(
                kind=KIND_HISTORY,
                assessment_id=a.assessment_id,
                severity=max(violence_sum / violence_min, n_arrests / arrests_min),
                evidence={
                    "score_kind": a.score_kind,
                    "decile": a.decile_score,
                    "violence_history_sum": violence_sum,
                    "n_arrests": n_arrests,
                    "decile_max": decile_max,
                    "violence_min": violence_min,
                    "arrests_min": arrests_min,
                },
            ))
    return out


def _average_rank_percentiles(values: np.ndarray) -> np.ndarray:
    """Each value's average rank scaled to [0, 1]; ties share a percentile."""
    n = len(values)
    if n == 1:
        return np.array([0.5])
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n)
    sorted_vals = values[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0
        i = j + 1
    return ranks / (n - 1)


def flag_ml_decile_gap(
    dataset: CohortDataset,
    probabilities: Mapping[str, float],
    low_decile: int = 3,
    high_decile: int = 8,
    top_quartile: float = 0.75,
    bottom_quartile: float = 0.25,
) -> list[AnomalyReport]:
    """Rows where the learned recidivism probability contradicts the decile.

    probabilities maps assessment id to a held-out probability (see the
    recidivism model in the residuals module). A row is flagged when its
    probability percentile within the scored rows reaches the top quartile
    while the decile is low, or falls in the bottom quartile while the
    decile is high. Severity is |percentile - decile/10|.
    """
    scored = [a for a in dataset.assessments if a.assessment_id in probabilities]
    if not scored:
        return []
    probs = np.array([probabilities[a.assessment_id] for a in scored], dtype=float)
    percentiles = _average_rank_percentiles(probs)
    out = []
    for a, p, pct in zip(scored, probs, percentiles):
        high_prob_low_decile = pct >= top_quartile and a.decile_score <= low_decile
        low_prob_high_decile = pct <= bottom_quartile and a.decile_score >= high_decile
        if not (high_prob_low_decile or low_prob_high_decile):
            continue
        out.append(AnomalyReport(
            kind=KIND_GAP,
            assessment_id=a.assessment_id,
            severity=abs(pct - a.decile_score / 10.0),
            evidence={
                "score_kind": a.score_kind,
                "probability": float(p),
                "percentile": float(pct),
                "decile": a.decile_score,
                "low_decile": low_decile,
                "high_decile": high_decile,
            },
        ))
    return out


def collect_anomalies(
    dataset: CohortDataset,
    splines: Mapping[str, AgeSpline],
    probabilities: Optional[Mapping[str, float]] = None,
    c: float = 0.05,
    decile_max: int = 2,
    violence_min: int = 3,
    arrests_min: int = 10,
) -> list[AnomalyReport]:
    """All three screens in one pass; splines are keyed by score kind."""
    reports: list[AnomalyReport] = []
    for kind, spline in sorted(splines.items()):
        reports.extend(flag_age_outliers(dataset, spline, c=c, score_kind=kind))
    reports.extend(flag_low_score_long_history(
        dataset, decile_max=decile_max, violence_min=violence_min, arrests_min=arrests_min
    ))
    if probabilities:
        reports.extend(flag_ml_decile_gap(dataset, probabilities))
    return reports
