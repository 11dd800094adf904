"""Group confusion rates, the transparent age rule, and the score-category logistic.

The age rule ("predict arrest iff age <= 24") is deliberately trivial: it
carries no information beyond age, so any group disparity in its error rates
comes from the age distributions of the groups, not from the rule. Comparing
its rates with the decile-based rates puts the score's disparities in that
context. The logistic regression of score category on demographics and
history replicates the well-known published analysis; its rows and standard
errors are reported as-is, with no significance claims.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .records import RACES, CohortDataset, age_at, label_recidivism
from .residuals import fold_assignment
from .subscales import compute_subscales

log = logging.getLogger(__name__)


class SeparationError(RuntimeError):
    """The likelihood has no finite maximizer; a feature splits the outcome."""


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Simple predictors


def age_model_predict(age: float, cutoff: int = 24) -> bool:
    """Predict arrest within two years iff age <= cutoff (inclusive)."""
    return age <= cutoff


def decile_to_prediction(decile: int, cut: int = 4) -> bool:
    """Medium/high category iff the decile exceeds the cut (low risk: 1..cut)."""
    if not 1 <= decile <= 10:
        raise ValueError(f"decile {decile} outside 1..10")
    return decile > cut


# ---------------------------------------------------------------------------
# Confusion rates


@dataclass(frozen=True)
class ConfusionRates:
    """Confusion counts for one (group, fold) cell; rates derive exactly.

    fold is None on the per-group aggregate row. Rates are Fractions so the
    complement identities hold exactly; a zero denominator yields None rather
    than a fabricated 0.
    """

    group: str
    fold: Optional[int]
    tp: int
    fp: int
    tn: int
    fn: int

    def _ratio(self, num: int, den: int) -> Optional[Fraction]:
        return Fraction(num, den) if den else None

    @property
    def tpr(self) -> Optional[Fraction]:
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def fnr(self) -> Optional[Fraction]:
        return self._ratio(self.fn, self.tp + self.fn)

    @property
    def fpr(self) -> Optional[Fraction]:
        return self._ratio(self.fp, self.fp + self.tn)

    @property
    def tnr(self) -> Optional[Fraction]:
        return self._ratio(self.tn, self.fp + self.tn)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        row = {
            "group": self.group,
            "fold": "" if self.fold is None else self.fold,
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
        }
        for name in ("tpr", "fpr", "tnr", "fnr"):
            value = getattr(self, name)
            row[name] = None if value is None else float(value)
        return row


def group_confusion_rates(
    predictions: Sequence[bool],
    labels: Sequence[bool],
    groups: Sequence[str],
    n_folds: int = 10,
    seed: int = 0,
) -> list[ConfusionRates]:
    """Per (group, fold) confusion cells plus a fold=None aggregate per group.

    The fold partition is a seeded uniform split of all rows (not within
    group), so group-fold cells vary in size and can be empty; empty cells
    keep zero counts and undefined rates. The aggregate row sums counts over
    folds, which makes its rates the count-weighted fold averages.
    """
    pred = np.asarray(predictions, dtype=bool)
    lab = np.asarray(labels, dtype=bool)
    grp = np.asarray(groups, dtype=object)
    if not len(pred) == len(lab) == len(grp):
        raise ValueError("predictions, labels, and groups must have equal length")
    if n_folds == 1:
        fold_ids = np.zeros(len(pred), dtype=int)
    else:
        fold_ids = fold_assignment(len(pred), n_folds, seed)

    out = []
    for group in sorted(set(grp)):
        in_group = grp == group
        totals = [0, 0, 0, 0]
        rows = []
        for f in range(n_folds):
            cell = in_group & (fold_ids == f)
            p, y = pred[cell], lab[cell]
            counts = [
                int(np.sum(p & y)), int(np.sum(p & ~y)),
                int(np.sum(~p & ~y)), int(np.sum(~p & y)),
            ]
            totals = [a + b for a, b in zip(totals, counts)]
            rows.append(ConfusionRates(group, f, *counts))
        out.extend(rows)
        out.append(ConfusionRates(group, None, *totals))
    return out


def cohort_confusion_rates(
    dataset: CohortDataset,
    model: str = "age",
    score_kind: str = "general",
    cutoff: int = 24,
    cut: int = 4,
    n_folds: int = 10,
    seed: int = 0,
) -> list[ConfusionRates]:
    """Confusion rates by race for the age rule or the decile category.

    Rows are assessments of the given kind with an observable two-year
    window; the label is general recidivism for the general score and
    violent recidivism for the violent one.
    """
    if model not in ("age", "decile"):
        raise ValueError(f"unknown model {model!r}")
    preds, labs, races = [], [], []
    for a in dataset.assessments:
        if a.score_kind != score_kind:
            continue
        person = dataset.persons_by_id[a.person_id]
        charges = dataset.charges_by_person.get(a.person_id, ())
        label = label_recidivism(person, a.screening_date, charges, end_date=dataset.end_date)
        if not label["observable"]:
            continue
        if model == "age":
            preds.append(age_model_predict(age_at(person, a.screening_date), cutoff))
        else:
            preds.append(decile_to_prediction(a.decile_score, cut))
        labs.append(label["violent"] if score_kind == "violent" else label["general"])
        races.append(person.race)
    if not preds:
        raise ValueError("no observable assessments of that kind")
    return group_confusion_rates(preds, labs, races, n_folds=n_folds, seed=seed)


# ---------------------------------------------------------------------------
# Logistic regression of score category


@dataclass(frozen=True)
class LogisticFit:
    names: tuple[str, ...]
    coefficients: dict[str, float]
    standard_errors: dict[str, float]
    n: int
    n_excluded_window: int
    n_excluded_offense: int
    iterations: int
    gradient_norm: float
    log_likelihood: float

    def z_score(self, name: str) -> float:
        return self.coefficients[name] / self.standard_errors[name]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_excluded_window": self.n_excluded_window,
            "n_excluded_offense": self.n_excluded_offense,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "log_likelihood": self.log_likelihood,
            "rows": [
                {
                    "name": name,
                    "estimate": self.coefficients[name],
                    "standard_error": self.standard_errors[name],
                    "z": self.z_score(name),
                }
                for name in self.names
            ],
        }


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def loglik_and_grad(beta: np.ndarray, X: np.ndarray, y: np.ndarray):
    """Bernoulli log-likelihood and its analytic gradient X'(y - mu)."""
    eta = X @ beta
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return ll, X.T @ (y - _sigmoid(eta))


def _separating_feature(X: np.ndarray, y: np.ndarray, names: Sequence[str]) -> Optional[str]:
    # a single column whose positive-class values all sit strictly above
    # (or below) every negative-class value pushes its coefficient to
    # infinity; constant columns (the intercept) cannot
    pos = y.astype(bool)
    for j, name in enumerate(names):
        col = X[:, j]
        if np.ptp(col) == 0:
            continue
        hi, lo = col[pos], col[~pos]
        if hi.min() > lo.max() or hi.max() < lo.min():
            return name
    return None


_DIVERGENCE_BOUND = 30.0  # log-odds far beyond anything estimable


def logistic_irls(
    X: np.ndarray,
    y: np.ndarray,
    names: Sequence[str],
    max_iter: int = 100,
    tol: float = 1e-8,
) -> dict:
    """Newton (iteratively reweighted least squares) maximum likelihood.

    Runs until the gradient infinity-norm drops below tol. Standard errors
    come from the inverse observed information at the optimum. Complete
    separation raises SeparationError naming the feature; anything else
    that fails to converge within max_iter raises ConvergenceError.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise ValueError("outcome takes a single value; nothing to regress")
    n, p = X.shape
    if len(names) != p:
        raise ValueError("one name per column required")

    beta = np.zeros(p)
    for iteration in range(1, max_iter + 1):
        ll, grad = loglik_and_grad(beta, X, y)
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < tol:
            W = _sigmoid(X @ beta)
            W = W * (1.0 - W)
            info = X.T @ (X * W[:, None])
            cov = np.linalg.inv(info)
            se = np.sqrt(np.diag(cov))
            return {
                "beta": beta,
                "se": se,
                "iterations": iteration - 1,
                "gradient_norm": gnorm,
                "log_likelihood": ll,
            }
        mu = _sigmoid(X @ beta)
        W = mu * (1.0 - mu)
        info = X.T @ (X * W[:, None])
        try:
            beta = beta + np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            culprit = _separating_feature(X, y, names)
            if culprit is not None:
                raise SeparationError(
                    f"feature {culprit!r} perfectly separates the outcome"
                ) from None
            raise ConvergenceError("information matrix is singular") from None
        if np.max(np.abs(beta)) > _DIVERGENCE_BOUND:
            culprit = _separating_feature(X, y, names)
            if culprit is not None:
                raise SeparationError(
                    f"feature {culprit!r} perfectly separates the outcome"
                )
    raise ConvergenceError(f"no convergence after {max_iter} iterations")


def fit_propublica_logistic(
    dataset: CohortDataset,
    decile_cut: int = 4,
    horizon: int = 730,
) -> LogisticFit:
    """Score category (medium/high vs low) regressed on demographics and history.

    One row per general assessment. Rows without two years of post-screening
    data are excluded (the two-year recidivism covariate would be unknowable),
    as are rows with no resolvable current offense (the priors count and the
    misdemeanor flag need one). Race dummies cover the races present, with
    caucasian as the reference level.
    """
    from .subscales import classify_statute
    from .records import resolve_current_offense

    kept_races = set()
    staged = []
    n_window = n_offense = 0
    for a in dataset.assessments:
        if a.score_kind != "general":
            continue
        person = dataset.persons_by_id[a.person_id]
        charges = dataset.charges_by_person.get(a.person_id, ())
        label = label_recidivism(
            person, a.screening_date, charges, horizon=horizon, end_date=dataset.end_date
        )
        if not label["observable"]:
            n_window += 1
            continue
        vec = compute_subscales(person, a, dataset)
        if vec is None:
            n_offense += 1
            continue
        offense = resolve_current_offense(person, a.screening_date, charges)
        kinds = [classify_statute(ch.statute, ch.degree) for ch in offense.charges]
        misdemeanor = any(k.misdemeanor for k in kinds) and not any(k.felony for k in kinds)
        age = age_at(person, a.screening_date)
        kept_races.add(person.race)
        staged.append({
            "female": float(person.sex == "female"),
            "age_gt_45": float(age > 45),
            "age_lt_25": float(age < 25),
            "race": person.race,
            "priors_count": float(vec.n_arrests),
            "current_misdemeanor": float(misdemeanor),
            "two_year_recid": float(label["general"]),
            "y": float(decile_to_prediction(a.decile_score, decile_cut)),
        })
    if not staged:
        raise ValueError("no usable general assessments")

    dummy_races = [r for r in RACES if r != "caucasian" and r in kept_races]
    names = (
        ["intercept", "female", "age_gt_45", "age_lt_25"]
        + [f"race_{r}" for r in dummy_races]
        + ["priors_count", "current_misdemeanor", "two_year_recid"]
    )
    X = np.array([
        [1.0, row["female"], row["age_gt_45"], row["age_lt_25"]]
        + [float(row["race"] == r) for r in dummy_races]
        + [row["priors_count"], row["current_misdemeanor"], row["two_year_recid"]]
        for row in staged
    ])
    y = np.array([row["y"] for row in staged])
    log.info(
        "logistic rows: %d kept, %d without two-year window, %d without current offense",
        len(staged), n_window, n_offense,
    )
    fit = logistic_irls(X, y, names)
    return LogisticFit(
        names=tuple(names),
        coefficients=dict(zip(names, (float(b) for b in fit["beta"]))),
        standard_errors=dict(zip(names, (float(s) for s in fit["se"]))),
        n=len(staged),
        n_excluded_window=n_window,
        n_excluded_offense=n_offense,
        iterations=fit["iterations"],
        gradient_norm=fit["gradient_norm"],
        log_likelihood=fit["log_likelihood"],
    )


# ---------------------------------------------------------------------------
# Descriptive age analyses


def recid_probability_vs_age(dataset: CohortDataset, half_width: int = 2) -> list[dict]:
    """Empirical recidivism proportion around each integer age.

    Centered moving window: the value at age a pools observable general
    assessments with screening age within half_width years of a. Ages with
    an empty window are omitted.
    """
    ages, labels = [], []
    for a in dataset.assessments:
        if a.score_kind != "general":
            continue
        person = dataset.persons_by_id[a.person_id]
        charges = dataset.charges_by_person.get(a.person_id, ())
        label = label_recidivism(person, a.screening_date, charges, end_date=dataset.end_date)
        if not label["observable"]:
            continue
        ages.append(age_at(person, a.screening_date))
        labels.append(label["general"])
    if not ages:
        return []
    ages_arr = np.array(ages)
    labels_arr = np.array(labels, dtype=float)
    curve = []
    for a in range(int(ages_arr.min()), int(ages_arr.max()) + 1):
        window = np.abs(ages_arr - a) <= half_width
        k = int(window.sum())
        if k == 0:
            continue
        curve.append({"age": a, "probability": float(labels_arr[window].mean()), "n": k})
    return curve


def age_distribution_by_race(dataset: CohortDataset) -> dict[str, dict]:
    """Normalized screening-age histogram and median age per race.

    One observation per (person, screening date) pair, however many score
    kinds were produced that day.
    """
    seen = set()
    by_race: dict[str, list[int]] = {}
    for a in dataset.assessments:
        key = (a.person_id, a.screening_date)
        if key in seen:
            continue
        seen.add(key)
        person = dataset.persons_by_id[a.person_id]
        by_race.setdefault(person.race, []).append(age_at(person, a.screening_date))
    out = {}
    for race, ages in sorted(by_race.items()):
        values, counts = np.unique(np.array(ages), return_counts=True)
        mass = counts / counts.sum()
        out[race] = {
            "median": float(np.median(ages)),
            "n": len(ages),
            "histogram": {int(v): float(m) for v, m in zip(values, mass)},
        }
    return out
