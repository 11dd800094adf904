"""Synthetic cohorts with known generating components.

Every raw score is built as an additive model the rest of the toolkit tries
to recover: a decreasing piecewise-linear age component, nonnegative
subscale contributions, an optional age-at-first-arrest term, and
nonnegative half-normal noise. Because no term can push a score below the
age component, the minimal-score-at-each-age assumption holds by
construction, and one zero-history candidate is planted at every integer
age so the reconstruction is supported everywhere.

The generator counts its own subscale fields while it invents each
criminal history. It never calls the subscale engine, which makes the
truth sidecar an independent oracle for it.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Optional

import numpy as np

from .lowerbound import AgeSpline, StepFunction
from .records import (
    ChargeEvent,
    CohortDataset,
    PersonRecord,
    ProbationEvent,
    ScreeningAssessment,
    build_dataset,
)

RECIDIVISM_HORIZON_DAYS = 730


def default_general_age() -> AgeSpline:
    """Three-piece decreasing age component used as the general-score default."""
    return AgeSpline.from_continuous((33.26, 50.02), (-0.056, -0.032, -0.021), -0.179)


def default_violent_age() -> AgeSpline:
    """Four-piece decreasing age component used as the violent-score default."""
    return AgeSpline.from_continuous(
        (21.77, 34.58, 48.36), (-0.205, -0.070, -0.040, -0.025), 1.815
    )


def default_violence_step() -> StepFunction:
    """0.3 per violence point up to 3, then 0.15 per extra point."""
    breaks = tuple(range(9))
    vals = tuple(0.3 * s if s <= 3 else 0.9 + 0.15 * (s - 3) for s in breaks)
    return StepFunction(breakpoints=breaks, values=vals)


@dataclass(frozen=True)
class SyntheticModelSpec:
    """Knobs for cohort generation. Weights are (name, value) tuples so the
    spec stays hashable and JSON round-trips cleanly."""

    n: int = 1000
    seed: int = 0
    age_min: int = 18
    age_max: int = 69
    general_age: AgeSpline = dataclasses.field(default_factory=default_general_age)
    violent_age: AgeSpline = dataclasses.field(default_factory=default_violent_age)
    violent_step: StepFunction = dataclasses.field(default_factory=default_violence_step)
    age_first_weight: float = 0.0
    general_weights: tuple[tuple[str, float], ...] = (
        ("n_arrests", 0.06),
        ("n_jail30", 0.10),
        ("n_prison", 0.12),
        ("n_probation_sentences", 0.08),
    )
    noncompliance_weight: float = 0.0
    noise_sigma: float = 0.15
    noise_grid: float = 0.0  # 0 keeps noise continuous; 0.05 snaps to a grid
    history_fraction: float = 0.7
    race_weights: tuple[tuple[str, float], ...] = (
        ("african_american", 0.45),
        ("caucasian", 0.35),
        ("hispanic", 0.12),
        ("other", 0.08),
    )
    sex_weights: tuple[tuple[str, float], ...] = (("male", 0.8), ("female", 0.2))
    recid_base: float = 0.45
    recid_age_slope: float = 0.008
    recid_floor: float = 0.10
    recid_base_by_race: tuple[tuple[str, float], ...] = ()
    violent_recid_fraction: float = 0.3

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 16 <= self.age_min <= self.age_max <= 100:
            raise ValueError("age range must sit inside [16, 100]")
        if self.noise_sigma < 0 or self.noise_grid < 0:
            raise ValueError("noise parameters must be nonnegative")
        if any(w < 0 for _, w in self.general_weights):
            raise ValueError("general weights must be nonnegative")


# Prior-charge pool: statute, degree, description, violence field it feeds
# (None for charges outside the violence categories), sampling weight.
_PRIOR_POOL = (
    ("812.014", "(M1)", "petty theft", None, 0.28),
    ("784.03", "(M1)", "battery", "misdemeanor_assault", 0.15),
    ("812.014", "(F3)", "grand theft", None, 0.12),
    ("810.02", "(F2)", "burglary of structure", None, 0.10),
    ("790.01", "(M1)", "carrying concealed weapon", "weapons", 0.08),
    ("784.045", "(F2)", "aggravated battery", "felony_assault", 0.08),
    ("999.99", "(F3)", "unlisted felony", None, 0.06),
    ("812.13", "(F1)", "robbery with weapon", "violent_felony_property", 0.05),
    ("741.28", "(M1)", "domestic violence battery", "family_violence", 0.03),
    ("794.011", "(F2)", "sexual battery", "sex_offense", 0.03),
    ("782.04", "(F1)", "murder in the first degree", "murder_manslaughter", 0.02),
)

_CURRENT_POOL = (
    ("812.014", "(M1)", "petty theft"),
    ("784.03", "(M1)", "battery"),
    ("810.02", "(F2)", "burglary of structure"),
    ("784.045", "(F2)", "aggravated battery"),
    ("790.01", "(M1)", "carrying concealed weapon"),
    ("999.99", "(M2)", "unlisted misdemeanor"),
)

_SUBSCALE_FIELDS = (
    "n_arrests", "n_jail30", "n_prison", "n_probation_sentences",
    "juvenile_felony", "violent_felony_property", "murder_manslaughter",
    "felony_assault", "misdemeanor_assault", "family_violence",
    "sex_offense", "weapons",
    "on_probation_at_offense", "n_charges_on_probation", "n_probation_violations",
)

_VIOLENCE_FIELD_CAPS = {
    "juvenile_felony": 2,
    "violent_felony_property": 5,
    "murder_manslaughter": 3,
    "felony_assault": 3,
    "misdemeanor_assault": 3,
    "family_violence": 3,
    "sex_offense": 3,
    "weapons": 3,
}


def _age_on(dob: date, on_date: date) -> int:
    years = on_date.year - dob.year
    if (on_date.month, on_date.day) < (dob.month, dob.day):
        years -= 1
    return years


def _dob_for_age(rng, screening: date, age: int) -> date:
    """Uniform date of birth giving exactly this whole-year age at screening."""
    try:
        hi = screening.replace(year=screening.year - age)
    except ValueError:  # Feb 29
        hi = screening.replace(year=screening.year - age, day=28)
    try:
        lo = screening.replace(year=screening.year - age - 1) + timedelta(days=1)
    except ValueError:
        lo = screening.replace(year=screening.year - age - 1, day=28) + timedelta(days=1)
    dob = lo + timedelta(days=int(rng.integers(0, (hi - lo).days + 1)))
    assert _age_on(dob, screening) == age
    return dob


def _weighted_choice(rng, weighted: tuple[tuple, ...]):
    probs = np.array([w[-1] for w in weighted], dtype=float)
    idx = int(rng.choice(len(weighted), p=probs / probs.sum()))
    return weighted[idx]


def _snap(noise: float, grid: float) -> float:
    if grid <= 0:
        return noise
    return round(noise / grid) * grid


@dataclass
class _PersonDraft:
    person: PersonRecord
    screening: date
    offense_date: date
    age: int
    age_first: int
    candidate: bool
    charges: list
    events: list
    counts: dict


def _draw_history(rng, spec: SyntheticModelSpec, pid: str, dob: date, screening: date,
                  age: int, candidate: bool) -> _PersonDraft:
    counts = dict.fromkeys(_SUBSCALE_FIELDS, 0)
    charges: list[ChargeEvent] = []
    events: list[ProbationEvent] = []

    if candidate:
        offense_date = screening
        charges.append(ChargeEvent(pid, offense_date, "812.014", "(M1)", "petty theft"))
        return _PersonDraft(
            PersonRecord(pid, dob, "", ""), screening, offense_date, age, age,
            candidate=True, charges=charges, events=events, counts=counts,
        )

    offense_date = screening - timedelta(days=int(rng.integers(0, 6)))
    for k in range(1 + int(rng.random() < 0.25)):
        statute, degree, desc = _CURRENT_POOL[int(rng.integers(0, len(_CURRENT_POOL)))]
        charges.append(ChargeEvent(pid, offense_date, statute, degree, f"{desc} {k}" if k else desc))

    days_alive = (screening - dob).days
    max_offset = min(2500, days_alive - 3650)
    prior_dates: list[date] = []
    if max_offset >= 46:
        n_prior = int(rng.integers(1, 10))
        offsets = rng.choice(np.arange(45, max_offset + 1), size=min(n_prior, max_offset - 44),
                             replace=False)
        for off in sorted(int(o) for o in offsets):
            d = screening - timedelta(days=off)
            statute, degree, desc, vfield, _ = _weighted_choice(rng, _PRIOR_POOL)
            jail = 0 if rng.random() < 0.7 else int(rng.integers(1, 120))
            prison = bool(rng.random() < 0.12)
            charges.append(ChargeEvent(pid, d, statute, degree, desc, jail_days=jail, prison=prison))
            prior_dates.append(d)
            if vfield is not None:
                counts[vfield] += 1
            if degree.startswith("(F") and _age_on(dob, d) < 18:
                counts["juvenile_felony"] += 1
            if jail >= 30:
                counts["n_jail30"] += 1
            if prison:
                counts["n_prison"] += 1

    if age >= 19 and rng.random() < 0.15:
        n_juv = int(rng.integers(1, 3))
        for j in range(n_juv):
            d = dob + timedelta(days=16 * 365 + int(rng.integers(0, 650)) + j)
            if _age_on(dob, d) >= 18 or d >= offense_date:
                continue
            charges.append(ChargeEvent(pid, d, "812.014", "(F3)", "grand theft"))
            prior_dates.append(d)
            counts["juvenile_felony"] += 1

    intervals: list[tuple[date, date]] = []
    if rng.random() < 0.30:
        on1 = screening - timedelta(days=int(rng.integers(400, 900)))
        if rng.random() < 0.5:
            off1 = on1 + timedelta(days=int(rng.integers(60, 300)))
            events.append(ProbationEvent(pid, on1, "on"))
            events.append(ProbationEvent(pid, off1, "off"))
            intervals.append((on1, off1))
        else:
            events.append(ProbationEvent(pid, on1, "on"))
            intervals.append((on1, on1 + timedelta(days=365)))
            if rng.random() < 0.4:
                for r in range(int(rng.integers(1, 7))):
                    rd = on1 + timedelta(days=10 * (r + 1))
                    if rd < offense_date:
                        events.append(ProbationEvent(pid, rd, "revocation"))
                        counts["n_probation_violations"] += 1
        counts["n_probation_sentences"] = sum(
            1 for ev in events if ev.kind == "on" and ev.event_date < offense_date
        )

    distinct_dates = sorted(set(prior_dates))
    counts["n_arrests"] = len(distinct_dates)
    counts["on_probation_at_offense"] = int(
        any(lo <= offense_date <= hi for lo, hi in intervals)
    )
    counts["n_charges_on_probation"] = sum(
        1 for d in distinct_dates if any(lo <= d <= hi for lo, hi in intervals)
    )
    for f, capv in _VIOLENCE_FIELD_CAPS.items():
        counts[f] = min(counts[f], capv)
    for f in ("n_jail30", "n_prison", "n_probation_sentences",
              "n_charges_on_probation", "n_probation_violations"):
        counts[f] = min(counts[f], 5)

    first = min(distinct_dates) if distinct_dates else offense_date
    first = min(first, offense_date)
    return _PersonDraft(
        PersonRecord(pid, dob, "", ""), screening, offense_date, age,
        _age_on(dob, first), candidate=False, charges=charges, events=events, counts=counts,
    )


def true_components(spec: SyntheticModelSpec, kind: str, age: int, counts: dict,
                    age_first: int) -> dict:
    """Noiseless score decomposition for one assessment."""
    if kind == "general":
        f = spec.general_age.evaluate(float(age))
        g = sum(w * counts[name] for name, w in spec.general_weights)
        af = spec.age_first_weight * (age - age_first)
    elif kind == "violent":
        f = spec.violent_age.evaluate(float(age))
        vsum = sum(counts[f2] for f2 in _VIOLENCE_FIELD_CAPS)
        ncsum = (counts["on_probation_at_offense"] + counts["n_charges_on_probation"]
                 + counts["n_probation_violations"])
        g = spec.violent_step.evaluate(vsum) + spec.noncompliance_weight * ncsum
        af = 0.0
    else:
        raise ValueError(f"unknown score kind {kind!r}")
    return {"f_age": f, "g": g, "age_first_term": af}


def _assign_deciles(raws: list[tuple[float, str]]) -> dict[str, int]:
    """Rank-based deciles, ties broken by assessment id; sizes balanced within one."""
    n = len(raws)
    order = sorted(range(n), key=lambda i: (raws[i][0], raws[i][1]))
    out = {}
    for rank, i in enumerate(order):
        out[raws[i][1]] = 1 + (rank * 10) // n
    return out


def generate(spec: SyntheticModelSpec) -> tuple[CohortDataset, dict]:
    """Build a cohort and its truth sidecar.

    The first (age_max - age_min + 1) persons are planted zero-history
    candidates, one per integer age, so every age has lower-bound support.
    Remaining persons are candidates or history-carrying per
    history_fraction.
    """
    rng = np.random.default_rng(spec.seed)
    n_ages = spec.age_max - spec.age_min + 1
    if spec.n < n_ages:
        raise ValueError(f"n={spec.n} cannot cover ages {spec.age_min}..{spec.age_max}")

    drafts: list[_PersonDraft] = []
    for i in range(spec.n):
        pid = str(i + 1)
        if i < n_ages:
            age = spec.age_min + i
            candidate = True
        else:
            age = int(rng.integers(spec.age_min, spec.age_max + 1))
            candidate = rng.random() >= spec.history_fraction
        screening = date(2013, 1, 1) + timedelta(days=int(rng.integers(0, 700)))
        dob = _dob_for_age(rng, screening, age)
        race = _weighted_choice(rng, spec.race_weights)[0]
        sex = _weighted_choice(rng, spec.sex_weights)[0]
        draft = _draw_history(rng, spec, pid, dob, screening, age, candidate)
        draft.person = PersonRecord(pid, dob, sex, race)
        drafts.append(draft)

    assessments: list[ScreeningAssessment] = []
    per_assessment: dict[str, dict] = {}
    raw_by_kind: dict[str, list[tuple[float, str]]] = {"general": [], "violent": []}
    pending: list[tuple[str, str, _PersonDraft, dict, float]] = []
    for i, draft in enumerate(drafts):
        for j, kind in enumerate(("general", "violent")):
            aid = str(2 * i + 1 + j)
            parts = true_components(spec, kind, draft.age, draft.counts, draft.age_first)
            noise = _snap(abs(rng.normal(0.0, spec.noise_sigma)), spec.noise_grid) \
                if spec.noise_sigma > 0 else 0.0
            raw = parts["f_age"] + parts["g"] + parts["age_first_term"] + noise
            raw_by_kind[kind].append((raw, aid))
            pending.append((aid, kind, draft, parts, noise))

    deciles = {}
    for kind in ("general", "violent"):
        deciles.update(_assign_deciles(raw_by_kind[kind]))

    raw_lookup = {aid: raw for pairs in raw_by_kind.values() for raw, aid in pairs}
    for aid, kind, draft, parts, noise in pending:
        raw = raw_lookup[aid]
        assessments.append(ScreeningAssessment(
            assessment_id=aid,
            person_id=draft.person.person_id,
            screening_date=draft.screening,
            score_kind=kind,
            raw_score=raw,
            decile_score=deciles[aid],
            stage="pretrial",
        ))
        per_assessment[aid] = {
            "person_id": draft.person.person_id,
            "kind": kind,
            "raw": raw,
            "noise": noise,
            **parts,
        }

    # recidivism outcomes after all scores so score draws stay aligned
    race_base = dict(spec.recid_base_by_race)
    per_person: dict[str, dict] = {}
    all_charges: list[ChargeEvent] = []
    all_events: list[ProbationEvent] = []
    for draft in drafts:
        p = race_base.get(draft.person.race, spec.recid_base)
        p -= spec.recid_age_slope * (draft.age - 18)
        p = float(np.clip(p, spec.recid_floor, 0.95))
        recid = bool(rng.random() < p)
        violent_recid = False
        if recid:
            delta = int(rng.integers(1, RECIDIVISM_HORIZON_DAYS + 1))
            violent_recid = bool(rng.random() < spec.violent_recid_fraction)
            statute, degree, desc = (
                ("784.045", "(F2)", "aggravated battery") if violent_recid
                else ("812.014", "(M1)", "petty theft")
            )
            draft.charges.append(ChargeEvent(
                draft.person.person_id, draft.screening + timedelta(days=delta),
                statute, degree, desc,
            ))
        elif rng.random() < 0.1:
            # a charge past the horizon: must never flip the label
            draft.charges.append(ChargeEvent(
                draft.person.person_id,
                draft.screening + timedelta(days=int(rng.integers(731, 1000))),
                "812.014", "(M1)", "petty theft",
            ))
        vsum = sum(draft.counts[f] for f in _VIOLENCE_FIELD_CAPS)
        ncsum = (draft.counts["on_probation_at_offense"]
                 + draft.counts["n_charges_on_probation"]
                 + draft.counts["n_probation_violations"])
        per_person[draft.person.person_id] = {
            "age": draft.age,
            "age_first": draft.age_first,
            "race": draft.person.race,
            "sex": draft.person.sex,
            "candidate": draft.candidate,
            "screening_date": draft.screening.isoformat(),
            "offense_date": draft.offense_date.isoformat(),
            "subscales": dict(draft.counts),
            "violence_sum": vsum,
            "noncompliance_sum": ncsum,
            "p_recid": p,
            "recidivated": recid,
            "violent_recid": violent_recid,
        }
        all_charges.extend(draft.charges)
        all_events.extend(draft.events)

    end_date = max(d.screening for d in drafts) + timedelta(days=RECIDIVISM_HORIZON_DAYS + 1)
    dataset = build_dataset(
        persons=[d.person for d in drafts],
        charges=all_charges,
        probation_events=all_events,
        assessments=assessments,
        end_date=end_date,
        provenance={"generator": spec_to_json(spec)},
    )
    truth = {
        "spec": spec_to_json(spec),
        "end_date": end_date.isoformat(),
        "candidate_person_ids": sorted(
            (d.person.person_id for d in drafts if d.candidate), key=int
        ),
        "per_person": per_person,
        "per_assessment": per_assessment,
    }
    return dataset, truth


def spec_to_json(spec: SyntheticModelSpec) -> dict:
    doc = dataclasses.asdict(spec)
    for key in ("general_weights", "race_weights", "sex_weights", "recid_base_by_race"):
        doc[key] = [list(pair) for pair in doc[key]]
    return doc


def spec_from_json(doc: dict) -> SyntheticModelSpec:
    kw = dict(doc)
    kw["general_age"] = AgeSpline(**{k: tuple(v) for k, v in doc["general_age"].items()})
    kw["violent_age"] = AgeSpline(**{k: tuple(v) for k, v in doc["violent_age"].items()})
    vs = dict(doc["violent_step"])
    kw["violent_step"] = StepFunction(
        breakpoints=tuple(vs["breakpoints"]),
        values=tuple(vs["values"]),
        flattened_levels=tuple(vs.get("flattened_levels", ())),
        anchor_gap=vs.get("anchor_gap", 0.0),
    )
    for key in ("general_weights", "race_weights", "sex_weights", "recid_base_by_race"):
        kw[key] = tuple((name, float(w)) for name, w in doc[key])
    return SyntheticModelSpec(**kw)


def write_truth(truth: dict, path: Path | str) -> None:
    Path(path).write_text(json.dumps(truth, indent=2, sort_keys=True), encoding="utf-8")


def load_truth(path: Path | str) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
