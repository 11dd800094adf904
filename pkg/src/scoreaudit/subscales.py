"""Capped integer subscale components computed from prior criminal history.

Three subscales are computable from the record data: Criminal Involvement
(input to the general score), History of Violence, and History of
Noncompliance (inputs to the violent score). Every component counts events
strictly before the current offense date. Offense types come from a shipped
statute-prefix table (Florida crime-code chapters) that users can override.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from datetime import date
from functools import lru_cache
from pathlib import Path
from typing import Optional

from .records import (
    ChargeEvent,
    CohortDataset,
    CurrentOffense,
    PersonRecord,
    ScreeningAssessment,
    is_juvenile,
    probation_status_at,
    resolve_current_offense,
    EVENT_ON,
    EVENT_REVOCATION,
)

log = logging.getLogger(__name__)

DEFAULT_TABLE_PATH = Path(__file__).parent / "data" / "statute_classes.csv"
ENV_TABLE_VAR = "AUDIT_STATUTE_TABLE"

VIOLENCE_CAPS = {
    "juvenile_felony": 2,
    "violent_felony_property": 5,
    "murder_manslaughter": 3,
    "felony_assault": 3,
    "misdemeanor_assault": 3,
    "family_violence": 3,
    "sex_offense": 3,
    "weapons": 3,
}
VIOLENCE_FIELDS = tuple(VIOLENCE_CAPS)
COUNT_CAP = 5  # the "0,1,2,3,4,5+" bucketing shared by most count items


@dataclass(frozen=True)
class StatuteClass:
    """Deterministic flag set for one (statute, degree) pair."""

    flags: frozenset[str]

    def __contains__(self, flag: str) -> bool:
        return flag in self.flags

    @property
    def violent(self) -> bool:
        return "violent" in self.flags

    @property
    def felony(self) -> bool:
        return "felony" in self.flags

    @property
    def misdemeanor(self) -> bool:
        return "misdemeanor" in self.flags


@dataclass(frozen=True)
class SubscaleVector:
    # Criminal Involvement
    n_arrests: int  # uncapped: distinct prior charge dates
    n_jail30: int
    n_prison: int
    n_probation_sentences: int
    # History of Violence
    juvenile_felony: int
    violent_felony_property: int
    murder_manslaughter: int
    felony_assault: int
    misdemeanor_assault: int
    family_violence: int
    sex_offense: int
    weapons: int
    # History of Noncompliance
    on_probation_at_offense: int
    n_charges_on_probation: int
    n_probation_violations: int

    def criminal_involvement(self) -> tuple[int, ...]:
        return (self.n_arrests, self.n_jail30, self.n_prison, self.n_probation_sentences)

    def violence_history(self) -> tuple[int, ...]:
        return tuple(getattr(self, f) for f in VIOLENCE_FIELDS)

    def noncompliance(self) -> tuple[int, ...]:
        return (self.on_probation_at_offense, self.n_charges_on_probation, self.n_probation_violations)


@dataclass(frozen=True)
class SubscaleSums:
    criminal_involvement_sum: int
    violence_history_sum: int
    noncompliance_sum: int


def cap(value: int, maximum: int) -> int:
    """Bucket a count at its top value: cap(7, 5) = 5 for a "5+" item."""
    if maximum < 0:
        raise ValueError("cap maximum must be nonnegative")
    return min(value, maximum)


@lru_cache(maxsize=8)
def load_statute_table(path: str) -> tuple[tuple[str, frozenset[str]], ...]:
    """Load a prefix->flags table, longest prefixes first."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            prefix = row["prefix"].strip()
            flags = frozenset((row["flags"] or "").split())
            if prefix:
                rows.append((prefix, flags))
    rows.sort(key=lambda r: (-len(r[0]), r[0]))
    return tuple(rows)


def default_table() -> tuple[tuple[str, frozenset[str]], ...]:
    return load_statute_table(os.environ.get(ENV_TABLE_VAR, str(DEFAULT_TABLE_PATH)))


def _degree_flags(degree: str) -> set[str]:
    code = degree.strip().strip("()").upper()
    if code.startswith("F"):
        return {"felony"}
    if code.startswith("M"):
        return {"misdemeanor"}
    return set()


def classify_statute(
    statute: str,
    degree: str,
    table: Optional[tuple[tuple[str, frozenset[str]], ...]] = None,
) -> StatuteClass:
    """Flag set for a charge, from the longest matching statute prefix.

    The table's "assault" token resolves to felony_assault or
    misdemeanor_assault by degree (degree-less assault counts as
    misdemeanor, the battery default). violent_felony_property requires a
    felony degree plus a property-chapter prefix carrying the violent flag.
    Unknown statutes get only the degree-derived flags.
    """
    if not statute:
        raise ValueError("statute must be nonempty")
    if table is None:
        table = default_table()
    flags = _degree_flags(degree)
    statute = statute.strip()
    matched = False
    for prefix, base in table:
        if statute.startswith(prefix):
            flags |= set(base)
            matched = True
            break
    if not matched:
        log.debug("unclassified statute %r", statute)
    if "assault" in flags:
        flags.discard("assault")
        flags.add("felony_assault" if "felony" in flags else "misdemeanor_assault")
    if "property" in flags:
        flags.discard("property")
        if "felony" in flags and "violent" in flags:
            flags.add("violent_felony_property")
    if matched and "felony" in flags:
        flags.add("juvenile_felony_eligible")
    return StatuteClass(flags=frozenset(flags))


def statute_is_violent(statute: str, degree: str) -> bool:
    return classify_statute(statute, degree).violent


def compute_subscales(
    person: PersonRecord,
    screening: ScreeningAssessment,
    dataset: CohortDataset,
    t_on: int = 365,
    t_off: int = 30,
    table: Optional[tuple[tuple[str, frozenset[str]], ...]] = None,
) -> Optional[SubscaleVector]:
    """Subscale components for one screening, or None when not computable.

    Not computable means no current offense resolved within the 30-day
    window; such assessments are excluded from criminal-history analyses
    upstream rather than treated as zero-history.
    """
    charges = dataset.charges_by_person.get(person.person_id, ())
    offense = resolve_current_offense(person, screening.screening_date, charges)
    if not offense.present:
        return None
    return subscales_for_offense(person, offense, dataset, t_on=t_on, t_off=t_off, table=table)


def subscales_for_offense(
    person: PersonRecord,
    offense: CurrentOffense,
    dataset: CohortDataset,
    t_on: int = 365,
    t_off: int = 30,
    table: Optional[tuple[tuple[str, frozenset[str]], ...]] = None,
) -> SubscaleVector:
    """Count components over charges and events strictly before the offense date."""
    assert offense.present and offense.offense_date is not None
    cutoff = offense.offense_date
    charges = dataset.charges_by_person.get(person.person_id, ())
    events = dataset.events_by_person.get(person.person_id, ())
    prior = [ch for ch in charges if ch.charge_date < cutoff]

    arrest_dates = sorted({ch.charge_date for ch in prior})
    n_arrests = len(arrest_dates)
    n_jail30 = cap(sum(1 for ch in prior if ch.jail_days >= 30), COUNT_CAP)
    n_prison = cap(sum(1 for ch in prior if ch.prison), COUNT_CAP)
    n_probation_sentences = cap(
        sum(1 for ev in events if ev.kind == EVENT_ON and ev.event_date < cutoff), COUNT_CAP
    )

    viol_counts = dict.fromkeys(VIOLENCE_FIELDS, 0)
    for ch in prior:
        cls = classify_statute(ch.statute, ch.degree, table=table)
        if "felony" in cls.flags and is_juvenile(person, ch.charge_date):
            viol_counts["juvenile_felony"] += 1
        for name in (
            "violent_felony_property", "murder_manslaughter", "felony_assault",
            "misdemeanor_assault", "family_violence", "sex_offense", "weapons",
        ):
            if name in cls.flags:
                viol_counts[name] += 1
    viol_capped = {k: cap(v, VIOLENCE_CAPS[k]) for k, v in viol_counts.items()}

    on_probation = int(probation_status_at(person, cutoff, events, t_on=t_on, t_off=t_off))
    n_charges_on_probation = cap(
        sum(
            1 for d in arrest_dates
            if probation_status_at(person, d, events, t_on=t_on, t_off=t_off)
        ),
        COUNT_CAP,
    )
    n_probation_violations = cap(
        sum(1 for ev in events if ev.kind == EVENT_REVOCATION and ev.event_date < cutoff),
        COUNT_CAP,
    )

    return SubscaleVector(
        n_arrests=n_arrests,
        n_jail30=n_jail30,
        n_prison=n_prison,
        n_probation_sentences=n_probation_sentences,
        on_probation_at_offense=on_probation,
        n_charges_on_probation=n_charges_on_probation,
        n_probation_violations=n_probation_violations,
        **viol_capped,
    )


def sums(vector: SubscaleVector) -> SubscaleSums:
    """Unweighted componentwise sums of the three subscales."""
    return SubscaleSums(
        criminal_involvement_sum=sum(vector.criminal_involvement()),
        violence_history_sum=sum(vector.violence_history()),
        noncompliance_sum=sum(vector.noncompliance()),
    )
