"""Ablation regressions on score remainders and recidivism labels.

The central question: after subtracting the reconstructed age component from
a raw score, does the remainder still depend on age (it should not, if the
age component is truly additive) and does it depend on race? Four model
families are trained on held-out folds with a feature present and absent;
near-equal error rows mean the feature carries no signal the other features
lack.

Families: closed-form least squares, random forest (fixed conventional
defaults), gradient boosted trees and an RBF-kernel SVM (both grid-searched
by cross validation on the same folds). One fold partition per table, so
with/without comparisons are paired.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.ensemble import (
    GradientBoostingClassifier,
    GradientBoostingRegressor,
    RandomForestClassifier,
    RandomForestRegressor,
)
from sklearn.svm import SVC, SVR

from .lowerbound import AgeSpline, StepFunction
from .records import (
    RACES,
    CohortDataset,
    age_at,
    label_recidivism,
    resolve_current_offense,
)
from .subscales import classify_statute, compute_subscales, sums as subscale_sums

log = logging.getLogger(__name__)

FAMILIES = ("linear", "random_forest", "gradient_boosted_trees", "kernel_svm")
STOCHASTIC_FAMILIES = ("random_forest", "gradient_boosted_trees")

BOOSTED_GRID = {
    "max_depth": (2, 4, 6),
    "learning_rate": (0.05, 0.1, 0.3),
    "n_estimators": (100, 300),
}
SVM_GRID = {
    "C": (0.1, 1.0, 10.0),
    "gamma": ("1/d", 0.1, 1.0),  # 1/d = one over feature count
}
RF_TREES = 500

SUBSCALE_FEATURES = (
    "n_arrests", "n_jail30", "n_prison", "n_probation_sentences",
    "juvenile_felony", "violent_felony_property", "murder_manslaughter",
    "felony_assault", "misdemeanor_assault", "family_violence",
    "sex_offense", "weapons",
    "on_probation_at_offense", "n_charges_on_probation", "n_probation_violations",
)
CURRENT_OFFENSE_FEATURES = (
    "n_current_charges", "current_any_felony",
    "current_any_misdemeanor", "current_any_violent",
)


class TrainingError(RuntimeError):
    pass


def _derive_seed(master: Optional[int], *parts) -> int:
    text = f"{master}:" + ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big")


# ---------------------------------------------------------------------------
# Remainders


@dataclass(frozen=True)
class FittedComponent:
    """A named additive piece of the score, evaluated on a row context."""

    name: str
    fn: Callable[[dict], float]


def age_component(spline: AgeSpline) -> FittedComponent:
    return FittedComponent("age", lambda ctx: spline.evaluate(float(ctx["age"])))


def violence_component(step: StepFunction) -> FittedComponent:
    return FittedComponent("violence_history", lambda ctx: step.evaluate(ctx["violence_sum"]))


def compute_remainder(raw_score: float, context: dict, components: Sequence[Optional[FittedComponent]]) -> float:
    """Raw score minus every fitted component; empty list returns the raw score."""
    total = raw_score
    for comp in components:
        if comp is None:
            raise ValueError("component not fitted")
        total -= comp.fn(context)
    return total


# ---------------------------------------------------------------------------
# Feature construction


@dataclass(frozen=True)
class FeatureMatrix:
    names: tuple[str, ...]
    X: np.ndarray = field(compare=False)
    assessment_ids: tuple[str, ...]
    raw_scores: np.ndarray = field(compare=False)
    deciles: np.ndarray = field(compare=False)
    ages: np.ndarray = field(compare=False)
    violence_sums: np.ndarray = field(compare=False)
    races: tuple[str, ...]
    observable: np.ndarray = field(compare=False)
    recidivated: np.ndarray = field(compare=False)
    violent_recid: np.ndarray = field(compare=False)
    n_excluded: int = 0

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def drop(self, names: Sequence[str] = (), prefixes: Sequence[str] = ()) -> "FeatureMatrix":
        """A copy without the exactly-named columns and prefixed column groups."""
        keep = [
            i for i, n in enumerate(self.names)
            if n not in names and not any(n.startswith(p) for p in prefixes)
        ]
        if len(keep) == len(self.names):
            raise KeyError(f"no feature matches names={names} prefixes={prefixes}")
        return dataclasses.replace(
            self, X=self.X[:, keep], names=tuple(self.names[i] for i in keep)
        )


def build_features(
    dataset: CohortDataset,
    score_kind: str,
    include_current_offense: bool = False,
) -> FeatureMatrix:
    """One row per computable assessment of the given kind.

    Columns: the fifteen subscale components, age, age at first arrest, and
    one-hot race with caucasian as the reference level (dummies only for
    races present in the cohort). Current-offense columns are added for
    recidivism targets, where the triggering charges are legitimately known.
    """
    rows, ids, raws, deciles, ages_, vsums, races_l, obs, rec, vrec = (
        [], [], [], [], [], [], [], [], [], []
    )
    present_races = sorted(
        {p.race for p in dataset.persons}, key=lambda r: RACES.index(r)
    )
    reference = "caucasian" if "caucasian" in present_races else present_races[0]
    dummy_races = tuple(r for r in present_races if r != reference)

    names = list(SUBSCALE_FEATURES) + ["age", "age_at_first_arrest"]
    names += [f"race_{r}" for r in dummy_races]
    if include_current_offense:
        names += list(CURRENT_OFFENSE_FEATURES)

    n_excluded = 0
    for a in dataset.assessments:
        if a.score_kind != score_kind:
            continue
        person = dataset.persons_by_id[a.person_id]
        vec = compute_subscales(person, a, dataset)
        if vec is None:
            n_excluded += 1
            continue
        charges = dataset.charges_by_person.get(a.person_id, ())
        past = [ch.charge_date for ch in charges if ch.charge_date <= a.screening_date]
        age = age_at(person, a.screening_date)
        age_first = age_at(person, min(past)) if past else age

        row = [float(getattr(vec, f)) for f in SUBSCALE_FEATURES]
        row += [float(age), float(age_first)]
        row += [1.0 if person.race == r else 0.0 for r in dummy_races]
        if include_current_offense:
            off = resolve_current_offense(person, a.screening_date, charges)
            cls = [classify_statute(ch.statute, ch.degree) for ch in off.charges]
            row += [
                float(len(off.charges)),
                float(any(c.felony for c in cls)),
                float(any(c.misdemeanor for c in cls)),
                float(any(c.violent for c in cls)),
            ]
        label = label_recidivism(person, a.screening_date, charges, end_date=dataset.end_date)
        rows.append(row)
        ids.append(a.assessment_id)
        raws.append(a.raw_score)
        deciles.append(a.decile_score)
        ages_.append(float(age))
        vsums.append(subscale_sums(vec).violence_history_sum)
        races_l.append(person.race)
        obs.append(label["observable"])
        rec.append(label["general"])
        vrec.append(label["violent"])

    if not rows:
        raise ValueError(f"no computable {score_kind} assessments")
    if n_excluded:
        log.info("excluded %d assessments without a computable current offense", n_excluded)
    return FeatureMatrix(
        names=tuple(names),
        X=np.array(rows, dtype=float),
        assessment_ids=tuple(ids),
        raw_scores=np.array(raws),
        deciles=np.array(deciles, dtype=int),
        ages=np.array(ages_),
        violence_sums=np.array(vsums, dtype=int),
        races=tuple(races_l),
        observable=np.array(obs, dtype=bool),
        recidivated=np.array(rec, dtype=bool),
        violent_recid=np.array(vrec, dtype=bool),
        n_excluded=n_excluded,
    )


def remainder_target(fm: FeatureMatrix, spline: AgeSpline,
                     g: Optional[StepFunction] = None) -> np.ndarray:
    parts = [age_component(spline)]
    if g is not None:
        parts.append(violence_component(g))
    return np.array([
        compute_remainder(
            raw, {"age": age, "violence_sum": int(vs)}, parts
        )
        for raw, age, vs in zip(fm.raw_scores, fm.ages, fm.violence_sums)
    ])


# ---------------------------------------------------------------------------
# Models


@dataclass(frozen=True)
class RegressorSpec:
    family: str
    hyperparameters: Optional[dict] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.family in STOCHASTIC_FAMILIES and self.seed is None:
            raise ValueError(f"{self.family} is stochastic: a seed is required")
        hp = self.hyperparameters
        if hp:
            grid = {"gradient_boosted_trees": BOOSTED_GRID, "kernel_svm": SVM_GRID}.get(self.family)
            if grid is None:
                raise ValueError(f"{self.family} takes no hyperparameters")
            for key, val in hp.items():
                if key not in grid:
                    raise ValueError(f"unknown hyperparameter {key!r} for {self.family}")
                if val not in grid[key]:
                    raise ValueError(f"{key}={val!r} is outside the documented grid {grid[key]}")

    def grid_cells(self) -> list[dict]:
        """Cells to cross-validate; explicit hyperparameters pin their axis."""
        if self.family == "gradient_boosted_trees":
            grid = BOOSTED_GRID
        elif self.family == "kernel_svm":
            grid = SVM_GRID
        else:
            return [{}]
        fixed = self.hyperparameters or {}
        cells = [{}]
        for key in grid:
            values = (fixed[key],) if key in fixed else grid[key]
            cells = [dict(c, **{key: v}) for c in cells for v in values]
        return cells


class _OLS:
    """Least squares with intercept; minimum-norm on rank-deficient systems."""

    def __init__(self, classifier: bool):
        self.classifier = classifier
        self.coef: Optional[np.ndarray] = None

    def fit(self, X: np.ndarray, y: np.ndarray):
        X1 = np.column_stack([np.ones(len(X)), X])
        coef, _, rank, _ = np.linalg.lstsq(X1, y.astype(float), rcond=None)
        if rank < X1.shape[1]:
            log.warning(
                "rank-deficient design (rank %d of %d); minimum-norm solution used",
                rank, X1.shape[1],
            )
        self.coef = coef
        return self

    def _linear(self, X: np.ndarray) -> np.ndarray:
        return np.column_stack([np.ones(len(X)), X]) @ self.coef

    def predict(self, X: np.ndarray) -> np.ndarray:
        z = self._linear(X)
        return (z >= 0.5).astype(float) if self.classifier else z

    def predict_proba_one(self, X: np.ndarray) -> np.ndarray:
        return np.clip(self._linear(X), 0.0, 1.0)


_SVM_MAX_ITER = 5_000_000


def _fit_model(family: str, params: dict, X: np.ndarray, y: np.ndarray,
               classification: bool, seed: int):
    d = X.shape[1]
    if family == "linear":
        return _OLS(classification).fit(X, y)
    if family == "random_forest":
        mf = math.ceil(math.sqrt(d)) if classification else math.ceil(d / 3)
        cls = RandomForestClassifier if classification else RandomForestRegressor
        return cls(n_estimators=RF_TREES, max_features=min(mf, d), random_state=seed,
                   n_jobs=1).fit(X, y)
    if family == "gradient_boosted_trees":
        cls = GradientBoostingClassifier if classification else GradientBoostingRegressor
        return cls(random_state=seed, **params).fit(X, y)
    if family == "kernel_svm":
        gamma = params["gamma"]
        if gamma == "1/d":
            gamma = 1.0 / d
        cls = SVC if classification else SVR
        model = cls(C=params["C"], gamma=gamma, max_iter=_SVM_MAX_ITER).fit(X, y)
        if np.max(np.atleast_1d(model.n_iter_)) >= _SVM_MAX_ITER:
            raise TrainingError(
                f"kernel solver did not converge within {_SVM_MAX_ITER} iterations"
            )
        return model
    raise ValueError(family)


def _predict(model, X: np.ndarray, classification: bool) -> np.ndarray:
    pred = model.predict(X)
    return pred.astype(float) if classification else pred


def _proba(model, X: np.ndarray) -> Optional[np.ndarray]:
    if isinstance(model, _OLS):
        return model.predict_proba_one(X)
    if hasattr(model, "predict_proba"):
        return model.predict_proba(X)[:, 1]
    return None


def _metric(y: np.ndarray, pred: np.ndarray, classification: bool) -> float:
    if classification:
        return float(np.mean(pred != y.astype(float)))
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def fold_assignment(n: int, folds: int, seed: Optional[int],
                    stratify_on: Optional[np.ndarray] = None) -> np.ndarray:
    """Deterministic fold ids; stratified round-robin when labels are given."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    rng = np.random.default_rng(_derive_seed(seed, "folds", n, folds))
    out = np.empty(n, dtype=int)
    if stratify_on is None:
        perm = rng.permutation(n)
        for pos, idx in enumerate(perm):
            out[idx] = pos % folds
        return out
    offset = 0
    for value in np.unique(stratify_on):
        idx = np.flatnonzero(stratify_on == value)
        idx = idx[rng.permutation(len(idx))]
        for pos, i in enumerate(idx):
            out[i] = (offset + pos) % folds
        offset += len(idx)
    return out


def train_predict(
    spec: RegressorSpec,
    features: FeatureMatrix,
    target: np.ndarray,
    folds: int = 5,
    fold_ids: Optional[np.ndarray] = None,
    fit_final: bool = True,
) -> dict:
    """Cross-validated fit: grid selection, out-of-fold predictions, final model.

    Grid families pick the cell with the smallest mean fold error (first cell
    in grid order on ties); the reported cv_error, fold_errors, and
    predictions all belong to that cell. Classification is inferred from a
    boolean target. Pass fold_ids to share one partition across several
    calls (ablation tables do).
    """
    X = features.X if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=float)
    y = np.asarray(target)
    classification = y.dtype == bool
    yf = y.astype(float)
    n = len(y)
    if n != len(X):
        raise ValueError("target length does not match features")
    if fold_ids is None:
        fold_ids = fold_assignment(
            n, folds, spec.seed, stratify_on=y if classification else None
        )
    elif len(fold_ids) != n:
        raise ValueError("fold assignment length mismatch")
    n_folds = int(fold_ids.max()) + 1

    best = None
    for cell_idx, cell in enumerate(spec.grid_cells()):
        preds = np.empty(n)
        proba = np.empty(n)
        have_proba = True
        errors = []
        for f in range(n_folds):
            test = fold_ids == f
            train = ~test
            model = _fit_model(
                spec.family, cell, X[train], yf[train] if not classification else y[train],
                classification, _derive_seed(spec.seed, "cell", cell_idx, "fold", f),
            )
            preds[test] = _predict(model, X[test], classification)
            p = _proba(model, X[test]) if classification else None
            if p is None:
                have_proba = False
            else:
                proba[test] = p
            errors.append(_metric(yf[test] if not classification else y[test],
                                  preds[test], classification))
        cv = float(np.mean(errors))
        if best is None or cv < best["cv_error"] - 1e-15:
            best = {
                "cv_error": cv,
                "fold_errors": tuple(errors),
                "predictions": preds,
                "proba": proba if (classification and have_proba) else None,
                "chosen_hyperparameters": dict(cell),
            }

    final = None
    if fit_final:
        final = _fit_model(
            spec.family, best["chosen_hyperparameters"], X,
            y if classification else yf, classification,
            _derive_seed(spec.seed, "final"),
        )
    return {
        "model": final,
        "classification": classification,
        "fold_assignment": fold_ids,
        **best,
    }


# ---------------------------------------------------------------------------
# Ablation tables


@dataclass(frozen=True)
class AblationResult:
    score_kind: str
    target: str
    metric: str  # rmse | misclassification
    rows: tuple[dict, ...]  # family, feature_set, value, fold_values, hyperparameters

    def value(self, family: str, feature_set: str) -> float:
        for row in self.rows:
            if row["family"] == family and row["feature_set"] == feature_set:
                return row["value"]
        raise KeyError((family, feature_set))

    def to_rows(self) -> list[dict]:
        return [dict(r) for r in self.rows]


_AXIS_COLUMNS = {
    "age": {"names": ("age",)},
    "race": {"prefixes": ("race_",)},
}


def _target_vector(fm: FeatureMatrix, target: str, score_kind: str,
                   spline: Optional[AgeSpline], g: Optional[StepFunction]):
    if target == "raw":
        return fm.raw_scores.copy(), fm, "rmse"
    if target == "remainder":
        if spline is None:
            raise ValueError("remainder target needs a fitted age spline")
        return remainder_target(fm, spline, g), fm, "rmse"
    if target == "recidivism":
        keep = fm.observable
        fm2 = _subset(fm, keep)
        y = fm2.violent_recid if score_kind == "violent" else fm2.recidivated
        return y.copy(), fm2, "misclassification"
    raise ValueError(f"unknown target {target!r}")


def _subset(fm: FeatureMatrix, mask: np.ndarray) -> FeatureMatrix:
    idx = np.flatnonzero(mask)
    return dataclasses.replace(
        fm,
        X=fm.X[idx],
        assessment_ids=tuple(fm.assessment_ids[i] for i in idx),
        raw_scores=fm.raw_scores[idx],
        deciles=fm.deciles[idx],
        ages=fm.ages[idx],
        violence_sums=fm.violence_sums[idx],
        races=tuple(fm.races[i] for i in idx),
        observable=fm.observable[idx],
        recidivated=fm.recidivated[idx],
        violent_recid=fm.violent_recid[idx],
    )


def ablation_tables(
    dataset: CohortDataset,
    score_kind: str,
    target: str = "remainder",
    axes: Sequence[str] = ("age", "race"),
    spline: Optional[AgeSpline] = None,
    g: Optional[StepFunction] = None,
    families: Sequence[str] = FAMILIES,
    seed: int = 0,
    folds: int = 5,
    hyperparameters: Optional[dict] = None,
    features: Optional[FeatureMatrix] = None,
) -> dict[str, AblationResult]:
    """With/without error tables for each axis, sharing the full-feature runs.

    hyperparameters, when given, maps family name to an explicit cell (within
    the documented grid), skipping the grid search; families without an entry
    search normally. One fold partition per table so rows are paired.
    """
    if features is None:
        features = build_features(
            dataset, score_kind, include_current_offense=(target == "recidivism")
        )
    y, fm, metric = _target_vector(features, target, score_kind, spline, g)
    fold_ids = fold_assignment(
        len(y), folds, seed, stratify_on=y if metric == "misclassification" else None
    )

    full_runs: dict[str, dict] = {}
    results: dict[str, AblationResult] = {}
    hyperparameters = hyperparameters or {}
    for axis in axes:
        if axis not in _AXIS_COLUMNS:
            raise ValueError(f"unknown ablation axis {axis!r}")
        reduced = fm.drop(**_AXIS_COLUMNS[axis])
        rows = []
        for family in families:
            spec = RegressorSpec(
                family=family, hyperparameters=hyperparameters.get(family), seed=seed
            )
            if family not in full_runs:
                full_runs[family] = train_predict(
                    spec, fm, y, fold_ids=fold_ids, fit_final=False
                )
            with_run = full_runs[family]
            without_run = train_predict(
                spec, reduced, y, fold_ids=fold_ids, fit_final=False
            )
            for feature_set, run in (
                (f"with_{axis}", with_run), (f"without_{axis}", without_run)
            ):
                rows.append({
                    "family": family,
                    "feature_set": feature_set,
                    "value": run["cv_error"],
                    "fold_values": run["fold_errors"],
                    "hyperparameters": run["chosen_hyperparameters"],
                    "seed": seed,
                })
        results[axis] = AblationResult(
            score_kind=score_kind, target=target, metric=metric, rows=tuple(rows)
        )
    return results


def ablation_table(dataset, score_kind, target="remainder", axis="age", **kw) -> AblationResult:
    return ablation_tables(dataset, score_kind, target, axes=(axis,), **kw)[axis]


# ---------------------------------------------------------------------------
# Prediction scatter and recidivism probabilities


DEFAULT_BOOSTED_CELL = {"max_depth": 2, "learning_rate": 0.1, "n_estimators": 100}

PREDICTION_STAGES = ("raw", "minus_age", "minus_age_g")


def prediction_scatter(
    dataset: CohortDataset,
    score_kind: str,
    stages: Sequence[str] = ("raw", "minus_age"),
    spline: Optional[AgeSpline] = None,
    g: Optional[StepFunction] = None,
    seed: int = 0,
    folds: int = 5,
    hyperparameters: Optional[dict] = None,
) -> dict[str, dict]:
    """Held-out predictions of the score at each subtraction stage.

    Stage "raw" predicts the raw score from history features; "minus_age"
    predicts the remainder after the age spline; "minus_age_g" also removes
    the violence-history envelope. R-squared shrinking across stages is the
    expected degradation when the removed structure was most of the signal.
    """
    fm = build_features(dataset, score_kind)
    out = {}
    for stage in stages:
        if stage not in PREDICTION_STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        if stage != "raw" and spline is None:
            raise ValueError(f"stage {stage!r} needs a fitted age spline")
        if stage == "minus_age_g" and g is None:
            raise ValueError("stage 'minus_age_g' needs a fitted violence envelope")
        if stage == "raw":
            y = fm.raw_scores.copy()
        elif stage == "minus_age":
            y = remainder_target(fm, spline)
        else:
            y = remainder_target(fm, spline, g)
        spec = RegressorSpec(
            "gradient_boosted_trees",
            hyperparameters=hyperparameters or DEFAULT_BOOSTED_CELL,
            seed=seed,
        )
        run = train_predict(spec, fm, y, folds=folds, fit_final=False)
        ss_res = float(np.sum((y - run["predictions"]) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        out[stage] = {
            "actual": y,
            "predicted": run["predictions"],
            "r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0,
            "cv_error": run["cv_error"],
        }
    return out


def violent_recid_probability(
    dataset: CohortDataset,
    seed: int = 0,
    folds: int = 5,
    hyperparameters: Optional[dict] = None,
) -> dict[str, float]:
    """Held-out probability of two-year violent recidivism per assessment.

    Boosted-tree classifier on history plus current-offense features;
    assessments without an observable follow-up window are omitted.
    """
    fm = build_features(dataset, "violent", include_current_offense=True)
    fm = _subset(fm, fm.observable)
    y = fm.violent_recid
    if y.all() or not y.any():
        # single-class cohorts cannot train a classifier; the empirical rate
        # is the only defensible probability
        rate = float(y.mean())
        log.info("single-class recidivism labels; returning constant %.1f", rate)
        return {aid: rate for aid in fm.assessment_ids}
    spec = RegressorSpec(
        "gradient_boosted_trees",
        hyperparameters=hyperparameters or DEFAULT_BOOSTED_CELL,
        seed=seed,
    )
    run = train_predict(spec, fm, y, folds=folds, fit_final=False)
    proba = run["proba"]
    return dict(zip(fm.assessment_ids, (float(p) for p in proba)))
