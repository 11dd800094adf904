"""Ingest raw cohort CSVs into a validated, immutable canonical dataset.

Input is four UTF-8 CSV files with header rows and ISO-8601 dates:

    persons.csv      person_id,dob,sex,race
    charges.csv      person_id,charge_date,statute,degree,description
                     (optional extra columns: jail_days, prison)
    events.csv       person_id,event_date,description
    assessments.csv  assessment_id,person_id,screening_date,score_kind,
                     raw_score,decile_score,stage

Ingestion applies the cohort processing rules: degree-"(0)" charges are
dropped, probation events are classified from a configurable description
list, duplicate assessments keep the larger identification number, and an
optional pretrial-only filter removes other assessment stages. Every
exclusion lands in the provenance log with a reason code.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

log = logging.getLogger(__name__)

SEXES = ("female", "male", "unknown")
RACES = ("african_american", "caucasian", "hispanic", "asian", "native_american", "other")
SCORE_KINDS = ("general", "violent")
STAGES = ("pretrial", "other")

EVENT_ON = "on"
EVENT_OFF = "off"
EVENT_REVOCATION = "revocation"

_SEX_ALIASES = {
    "female": "female", "f": "female",
    "male": "male", "m": "male",
}
_RACE_ALIASES = {
    "african_american": "african_american", "african-american": "african_american",
    "african american": "african_american", "black": "african_american",
    "caucasian": "caucasian", "white": "caucasian",
    "hispanic": "hispanic", "latino": "hispanic",
    "asian": "asian",
    "native_american": "native_american", "native american": "native_american",
    "native-american": "native_american", "american indian": "native_american",
    "other": "other",
}
_SCORE_KIND_ALIASES = {
    "general": "general", "risk of recidivism": "general",
    "violent": "violent", "violence": "violent", "risk of violence": "violent",
}


class IngestError(ValueError):
    """Raised when an input file violates the schema or the data rules."""

    def __init__(self, message: str, file: str | None = None, line: int | None = None):
        loc = ""
        if file is not None:
            loc = f"{file}:{line}: " if line is not None else f"{file}: "
        super().__init__(loc + message)
        self.file = file
        self.line = line


@dataclass(frozen=True)
class PersonRecord:
    person_id: str
    date_of_birth: date
    sex: str
    race: str


@dataclass(frozen=True)
class ChargeEvent:
    person_id: str
    charge_date: date
    statute: str
    degree: str
    description: str
    jail_days: int = 0
    prison: bool = False


@dataclass(frozen=True)
class ProbationEvent:
    person_id: str
    event_date: date
    kind: str  # one of EVENT_ON / EVENT_OFF / EVENT_REVOCATION


@dataclass(frozen=True)
class ScreeningAssessment:
    assessment_id: str
    person_id: str
    screening_date: date
    score_kind: str
    raw_score: float
    decile_score: int
    stage: str


@dataclass(frozen=True)
class CurrentOffense:
    """The triggering charge(s): most recent charge within 30 days on-or-before screening."""

    offense_date: Optional[date]
    charges: tuple[ChargeEvent, ...]
    present: bool


@dataclass(frozen=True)
class IngestConfig:
    pretrial_only: bool = True
    end_date: Optional[date] = None
    # Substring markers (lowercased match) classifying probation events.
    on_markers: tuple[str, ...] = ("file order of probation",)
    off_markers: tuple[str, ...] = (
        "file expiration of probation",
        "file order of termination of probation",
        "termination of probation",
    )
    revocation_markers: tuple[str, ...] = ("file order of revocation of probation",)

    def to_dict(self) -> dict:
        return {
            "pretrial_only": self.pretrial_only,
            "end_date": self.end_date.isoformat() if self.end_date else None,
            "on_markers": list(self.on_markers),
            "off_markers": list(self.off_markers),
            "revocation_markers": list(self.revocation_markers),
        }


@dataclass(frozen=True)
class CohortDataset:
    """Validated immutable cohort. Collections are sorted tuples; see ingest_cohort."""

    persons: tuple[PersonRecord, ...]
    charges: tuple[ChargeEvent, ...]
    probation_events: tuple[ProbationEvent, ...]
    assessments: tuple[ScreeningAssessment, ...]
    provenance: dict = field(compare=False)
    end_date: date = None  # type: ignore[assignment]

    @cached_property
    def persons_by_id(self) -> dict[str, PersonRecord]:
        return {p.person_id: p for p in self.persons}

    @cached_property
    def charges_by_person(self) -> dict[str, tuple[ChargeEvent, ...]]:
        out: dict[str, list[ChargeEvent]] = {}
        for ch in self.charges:
            out.setdefault(ch.person_id, []).append(ch)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def events_by_person(self) -> dict[str, tuple[ProbationEvent, ...]]:
        out: dict[str, list[ProbationEvent]] = {}
        for ev in self.probation_events:
            out.setdefault(ev.person_id, []).append(ev)
        return {k: tuple(v) for k, v in out.items()}


def age_at(person: PersonRecord, on_date: date) -> int:
    """Age in whole years (rounded down) on the given date."""
    dob = person.date_of_birth
    if on_date < dob:
        raise ValueError(f"date {on_date} precedes date of birth {dob} for {person.person_id}")
    years = on_date.year - dob.year
    if (on_date.month, on_date.day) < (dob.month, dob.day):
        years -= 1
    return years


def is_juvenile(person: PersonRecord, on_date: date) -> bool:
    """True when the date falls prior to the person's 18th birthday."""
    return age_at(person, on_date) < 18


def _id_sort_key(ids: Iterable[str]) -> Callable[[str], object]:
    ids = list(ids)
    if ids and all(s.isdigit() for s in ids):
        return lambda s: int(s)
    return lambda s: s


def dedupe_assessments(
    assessments: Sequence[ScreeningAssessment],
) -> tuple[ScreeningAssessment, ...]:
    """Keep one assessment per (person, screening date, score kind): the larger id wins.

    Ids compare numerically when every id in the duplicate group is numeric,
    lexicographically otherwise.
    """
    groups: dict[tuple, list[ScreeningAssessment]] = {}
    for a in assessments:
        groups.setdefault((a.person_id, a.screening_date, a.score_kind), []).append(a)
    survivors = []
    for group in groups.values():
        key = _id_sort_key(a.assessment_id for a in group)
        survivors.append(max(group, key=lambda a: key(a.assessment_id)))
    survivors.sort(key=lambda a: (a.person_id, a.screening_date, a.score_kind, a.assessment_id))
    return tuple(survivors)


def resolve_current_offense(
    person: PersonRecord,
    screening_date: date,
    charges: Sequence[ChargeEvent],
) -> CurrentOffense:
    """Most recent charge on-or-before screening and within 30 days of it.

    All charges sharing that date are part of the current offense. Absent any
    charge in the window the offense is marked not present.
    """
    window_start = screening_date - timedelta(days=30)
    in_window = [
        ch for ch in charges
        if ch.person_id == person.person_id and window_start <= ch.charge_date <= screening_date
    ]
    if not in_window:
        return CurrentOffense(offense_date=None, charges=(), present=False)
    offense_date = max(ch.charge_date for ch in in_window)
    same_day = tuple(sorted(
        (ch for ch in in_window if ch.charge_date == offense_date),
        key=lambda ch: (ch.statute, ch.degree, ch.description),
    ))
    return CurrentOffense(offense_date=offense_date, charges=same_day, present=True)


def probation_intervals(
    events: Sequence[ProbationEvent],
    t_on: int = 365,
    t_off: int = 30,
) -> list[tuple[date, date]]:
    """Date intervals during which a person counts as on probation.

    A well-formed on/off pair forms a closed interval. An "on" with no
    matching "off" (trailing, or followed by another "on") covers t_on days
    after it; an orphaned "off" (leading, or preceded by another "off")
    covers t_off days before it. Revocation events do not affect status.
    """
    on_off = sorted(
        (ev for ev in events if ev.kind in (EVENT_ON, EVENT_OFF)),
        key=lambda ev: (ev.event_date, ev.kind),
    )
    intervals: list[tuple[date, date]] = []
    pending_on: Optional[date] = None
    for ev in on_off:
        if ev.kind == EVENT_ON:
            if pending_on is not None:
                intervals.append((pending_on, pending_on + timedelta(days=t_on)))
            pending_on = ev.event_date
        else:
            if pending_on is not None:
                intervals.append((pending_on, ev.event_date))
                pending_on = None
            else:
                intervals.append((ev.event_date - timedelta(days=t_off), ev.event_date))
    if pending_on is not None:
        intervals.append((pending_on, pending_on + timedelta(days=t_on)))
    return intervals


def probation_status_at(
    person: PersonRecord,
    on_date: date,
    events: Sequence[ProbationEvent],
    t_on: int = 365,
    t_off: int = 30,
) -> bool:
    """Whether the person counts as on probation on the given date."""
    if t_on < 0 or t_off < 0:
        raise ValueError("thresholds must be nonnegative")
    own = [ev for ev in events if ev.person_id == person.person_id]
    return any(lo <= on_date <= hi for lo, hi in probation_intervals(own, t_on, t_off))


def label_recidivism(
    person: PersonRecord,
    screening_date: date,
    charges: Sequence[ChargeEvent],
    horizon: int = 730,
    end_date: Optional[date] = None,
    violent_classifier: Optional[Callable[[str, str], bool]] = None,
) -> dict:
    """Two-year recidivism labels for one screening.

    general: any charge strictly after screening and within `horizon` days.
    violent: any such charge whose statute classifies as violent.
    observable: false when fewer than `horizon` days of data follow the
    screening date; such rows are excluded from recidivism analyses.
    """
    if end_date is None:
        raise ValueError("end_date required to assess observability")
    if violent_classifier is None:
        from .subscales import statute_is_violent
        violent_classifier = statute_is_violent
    observable = (end_date - screening_date).days >= horizon
    general = False
    violent = False
    for ch in charges:
        if ch.person_id != person.person_id:
            continue
        delta = (ch.charge_date - screening_date).days
        if 0 < delta <= horizon:
            general = True
            if violent_classifier(ch.statute, ch.degree):
                violent = True
    return {"general": general, "violent": violent, "observable": observable}


def build_dataset(
    persons: Iterable[PersonRecord],
    charges: Iterable[ChargeEvent] = (),
    probation_events: Iterable[ProbationEvent] = (),
    assessments: Iterable[ScreeningAssessment] = (),
    end_date: Optional[date] = None,
    provenance: Optional[dict] = None,
) -> CohortDataset:
    """Assemble a dataset from already-constructed records (tests, generators).

    Applies the same sorting and referential-integrity checks as ingestion
    but none of the row-level exclusion rules.
    """
    persons = sorted(persons, key=lambda p: p.person_id)
    charges = sorted(charges, key=lambda c: (c.person_id, c.charge_date, c.statute, c.degree, c.description))
    events = sorted(probation_events, key=lambda e: (e.person_id, e.event_date, e.kind))
    assessments = sorted(
        assessments, key=lambda a: (a.person_id, a.screening_date, a.score_kind, a.assessment_id)
    )
    ids = {p.person_id for p in persons}
    orphans = sorted(
        {r.person_id for r in (*charges, *events, *assessments) if r.person_id not in ids}
    )
    if orphans:
        raise IngestError("rows reference unknown person_ids: " + ", ".join(map(repr, orphans[:20])))
    if end_date is None:
        all_dates = (
            [c.charge_date for c in charges]
            + [e.event_date for e in events]
            + [a.screening_date for a in assessments]
        )
        if not all_dates:
            raise IngestError("cannot infer end_date from an eventless cohort")
        end_date = max(all_dates)
    return CohortDataset(
        persons=tuple(persons),
        charges=tuple(charges),
        probation_events=tuple(events),
        assessments=tuple(assessments),
        provenance=provenance or {"inputs": {}, "exclusions": {}, "warnings": {}, "warning_samples": {}},
        end_date=end_date,
    )


# ---------------------------------------------------------------------------
# CSV ingestion


def _open_reader(path: Path, required: Sequence[str]):
    if not path.exists():
        raise IngestError(f"missing input file", file=str(path))
    handle = path.open(newline="", encoding="utf-8")
    reader = csv.DictReader(handle)
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        handle.close()
        raise IngestError(f"missing required columns {missing}", file=path.name, line=1)
    return handle, reader


def _parse_date(value: str, file: str, line: int, column: str) -> date:
    try:
        return date.fromisoformat(value.strip())
    except ValueError:
        raise IngestError(f"invalid ISO-8601 date {value!r} in column {column}", file=file, line=line)


class _Provenance:
    """Accumulates counts, exclusions, and warnings during ingestion."""

    def __init__(self):
        self.inputs: dict[str, int] = {}
        self.exclusions: dict[str, int] = {}
        self.warnings: dict[str, int] = {}
        self.warning_samples: dict[str, str] = {}

    def exclude(self, reason: str, n: int = 1):
        self.exclusions[reason] = self.exclusions.get(reason, 0) + n

    def warn(self, code: str, message: str):
        self.warnings[code] = self.warnings.get(code, 0) + 1
        self.warning_samples.setdefault(code, message)

    def to_dict(self) -> dict:
        return {
            "inputs": dict(self.inputs),
            "exclusions": dict(self.exclusions),
            "warnings": dict(self.warnings),
            "warning_samples": dict(self.warning_samples),
        }


def _classify_event(description: str, config: IngestConfig) -> Optional[str]:
    text = description.lower()
    if any(marker in text for marker in config.revocation_markers):
        return EVENT_REVOCATION
    if any(marker in text for marker in config.on_markers):
        return EVENT_ON
    if any(marker in text for marker in config.off_markers):
        return EVENT_OFF
    return None


def ingest_cohort(paths: Path | str | Mapping[str, Path], config: IngestConfig = IngestConfig()) -> CohortDataset:
    """Read, validate, and canonicalize the four cohort CSVs.

    `paths` is a directory containing persons.csv, charges.csv, events.csv,
    and assessments.csv, or a mapping from those stem names to file paths.
    Raises IngestError with file/line context on malformed rows, on
    referential-integrity violations (orphan ids are listed), and on an
    empty resulting cohort.
    """
    if isinstance(paths, (str, Path)):
        base = Path(paths)
        files = {name: base / f"{name}.csv" for name in ("persons", "charges", "events", "assessments")}
    else:
        files = {k: Path(v) for k, v in paths.items()}

    prov = _Provenance()

    persons: list[PersonRecord] = []
    seen_ids: set[str] = set()
    handle, reader = _open_reader(files["persons"], ["person_id", "dob", "sex", "race"])
    with handle:
        for row in reader:
            line = reader.line_num
            pid = (row["person_id"] or "").strip()
            if not pid:
                raise IngestError("empty person_id", file=files["persons"].name, line=line)
            if pid in seen_ids:
                raise IngestError(f"duplicate person_id {pid!r}", file=files["persons"].name, line=line)
            seen_ids.add(pid)
            dob = _parse_date(row["dob"], files["persons"].name, line, "dob")
            sex_raw = (row["sex"] or "").strip().lower()
            sex = _SEX_ALIASES.get(sex_raw)
            if sex is None:
                sex = "unknown"
                prov.warn("unknown_sex", f"sex {row['sex']!r} mapped to unknown (person {pid})")
            race_raw = (row["race"] or "").strip().lower()
            race = _RACE_ALIASES.get(race_raw)
            if race is None:
                race = "other"
                prov.warn("unknown_race", f"race {row['race']!r} mapped to other (person {pid})")
            persons.append(PersonRecord(pid, dob, sex, race))
    prov.inputs["persons"] = len(persons)
    by_id = {p.person_id: p for p in persons}

    charges: list[ChargeEvent] = []
    orphan_charges: set[str] = set()
    handle, reader = _open_reader(
        files["charges"], ["person_id", "charge_date", "statute", "degree", "description"]
    )
    has_sentence_cols = {"jail_days", "prison"} <= set(reader.fieldnames or [])
    if not has_sentence_cols:
        prov.warn(
            "sentence_columns_missing",
            "charges.csv has no jail_days/prison columns; jail and prison counts default to 0",
        )
    n_charge_rows = 0
    with handle:
        for row in reader:
            line = reader.line_num
            n_charge_rows += 1
            pid = (row["person_id"] or "").strip()
            if pid not in by_id:
                orphan_charges.add(pid)
                continue
            charge_date = _parse_date(row["charge_date"], files["charges"].name, line, "charge_date")
            degree = (row["degree"] or "").strip()
            if degree == "(0)":
                prov.exclude("degree_zero_charge")
                continue
            if charge_date <= by_id[pid].date_of_birth:
                raise IngestError(
                    f"charge date {charge_date} not after date of birth for person {pid}",
                    file=files["charges"].name, line=line,
                )
            jail_days = 0
            prison = False
            if has_sentence_cols:
                jail_raw = (row.get("jail_days") or "").strip()
                prison_raw = (row.get("prison") or "").strip()
                try:
                    jail_days = int(jail_raw) if jail_raw else 0
                    prison = bool(int(prison_raw)) if prison_raw else False
                except ValueError:
                    raise IngestError(
                        f"invalid sentence columns jail_days={jail_raw!r} prison={prison_raw!r}",
                        file=files["charges"].name, line=line,
                    )
            charges.append(ChargeEvent(
                pid, charge_date, (row["statute"] or "").strip(), degree,
                (row["description"] or "").strip(), jail_days, prison,
            ))
    prov.inputs["charges"] = n_charge_rows

    events: list[ProbationEvent] = []
    orphan_events: set[str] = set()
    handle, reader = _open_reader(files["events"], ["person_id", "event_date", "description"])
    n_event_rows = 0
    with handle:
        for row in reader:
            line = reader.line_num
            n_event_rows += 1
            pid = (row["person_id"] or "").strip()
            if pid not in by_id:
                orphan_events.add(pid)
                continue
            event_date = _parse_date(row["event_date"], files["events"].name, line, "event_date")
            kind = _classify_event(row["description"] or "", config)
            if kind is None:
                prov.exclude("event_unclassified")
                continue
            if event_date <= by_id[pid].date_of_birth:
                raise IngestError(
                    f"event date {event_date} not after date of birth for person {pid}",
                    file=files["events"].name, line=line,
                )
            events.append(ProbationEvent(pid, event_date, kind))
    prov.inputs["events"] = n_event_rows

    assessments: list[ScreeningAssessment] = []
    orphan_assessments: set[str] = set()
    handle, reader = _open_reader(
        files["assessments"],
        ["assessment_id", "person_id", "screening_date", "score_kind", "raw_score", "decile_score", "stage"],
    )
    n_assessment_rows = 0
    with handle:
        for row in reader:
            line = reader.line_num
            n_assessment_rows += 1
            aid = (row["assessment_id"] or "").strip()
            if not aid:
                raise IngestError("empty assessment_id", file=files["assessments"].name, line=line)
            pid = (row["person_id"] or "").strip()
            if pid not in by_id:
                orphan_assessments.add(pid)
                continue
            screening = _parse_date(row["screening_date"], files["assessments"].name, line, "screening_date")
            kind = _SCORE_KIND_ALIASES.get((row["score_kind"] or "").strip().lower())
            if kind is None:
                raise IngestError(
                    f"unknown score_kind {row['score_kind']!r}", file=files["assessments"].name, line=line
                )
            try:
                raw = float(row["raw_score"])
            except (TypeError, ValueError):
                raise IngestError(
                    f"invalid raw_score {row['raw_score']!r}", file=files["assessments"].name, line=line
                )
            try:
                decile = int(row["decile_score"])
            except (TypeError, ValueError):
                decile = -1
            if not 1 <= decile <= 10:
                raise IngestError(
                    f"decile_score {row['decile_score']!r} outside 1..10",
                    file=files["assessments"].name, line=line,
                )
            stage = "pretrial" if (row["stage"] or "").strip().lower() in ("pretrial", "pre-trial") else "other"
            if screening <= by_id[pid].date_of_birth:
                raise IngestError(
                    f"screening date {screening} not after date of birth for person {pid}",
                    file=files["assessments"].name, line=line,
                )
            assessments.append(ScreeningAssessment(aid, pid, screening, kind, raw, decile, stage))
    prov.inputs["assessments"] = n_assessment_rows

    orphans = sorted(orphan_charges | orphan_events | orphan_assessments)
    if orphans:
        raise IngestError(
            "rows reference unknown person_ids: " + ", ".join(repr(o) for o in orphans[:20])
            + ("" if len(orphans) <= 20 else f" (+{len(orphans) - 20} more)")
        )

    if config.pretrial_only:
        kept = [a for a in assessments if a.stage == "pretrial"]
        prov.exclude("non_pretrial_assessment", len(assessments) - len(kept))
        assessments = kept

    n_before = len(assessments)
    deduped = dedupe_assessments(assessments)
    prov.exclude("duplicate_assessment", n_before - len(deduped))

    if not persons or not deduped:
        raise IngestError("empty cohort after ingestion (no persons or no assessments)")

    charges.sort(key=lambda c: (c.person_id, c.charge_date, c.statute, c.degree, c.description))
    events.sort(key=lambda e: (e.person_id, e.event_date, e.kind))
    persons.sort(key=lambda p: p.person_id)

    all_dates = (
        [c.charge_date for c in charges]
        + [e.event_date for e in events]
        + [a.screening_date for a in deduped]
    )
    end_date = config.end_date or max(all_dates)

    provenance = prov.to_dict()
    provenance["retained"] = {
        "persons": len(persons),
        "charges": len(charges),
        "events": len(events),
        "assessments": len(deduped),
    }
    provenance["end_date"] = end_date.isoformat()
    provenance["config"] = config.to_dict()

    return CohortDataset(
        persons=tuple(persons),
        charges=tuple(charges),
        probation_events=tuple(events),
        assessments=deduped,
        provenance=provenance,
        end_date=end_date,
    )


def write_canonical(dataset: CohortDataset, out_dir: Path | str) -> None:
    """Write the canonical CSV set plus provenance.json into a directory."""
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with (out / "persons.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["person_id", "dob", "sex", "race"])
        for p in dataset.persons:
            w.writerow([p.person_id, p.date_of_birth.isoformat(), p.sex, p.race])

    with (out / "charges.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["person_id", "charge_date", "statute", "degree", "description", "jail_days", "prison"])
        for c in dataset.charges:
            w.writerow([
                c.person_id, c.charge_date.isoformat(), c.statute, c.degree,
                c.description, c.jail_days, int(c.prison),
            ])

    with (out / "events.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["person_id", "event_date", "description"])
        marker = {
            EVENT_ON: "File Order Of Probation",
            EVENT_OFF: "File Expiration Of Probation",
            EVENT_REVOCATION: "File Order Of Revocation Of Probation",
        }
        for e in dataset.probation_events:
            w.writerow([e.person_id, e.event_date.isoformat(), marker[e.kind]])

    with (out / "assessments.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([
            "assessment_id", "person_id", "screening_date", "score_kind",
            "raw_score", "decile_score", "stage",
        ])
        for a in dataset.assessments:
            w.writerow([
                a.assessment_id, a.person_id, a.screening_date.isoformat(), a.score_kind,
                repr(a.raw_score), a.decile_score, a.stage,
            ])

    with (out / "provenance.json").open("w", encoding="utf-8") as fh:
        json.dump(dataset.provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")
