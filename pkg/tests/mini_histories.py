"""Ten handcrafted mini-histories with independently hand-counted subscale values.

Each case builds a tiny cohort in memory and states the expected component
values as literals worked out by hand from the counting rules (caps,
probation thresholds t_on=365/t_off=30, the 30-day current-offense window,
the juvenile under-18 rule, dedup by larger id). The acceptance suite reruns
all ten and requires exact matches.
"""

from datetime import date, timedelta

from scoreaudit.records import (
    ChargeEvent,
    PersonRecord,
    ProbationEvent,
    ScreeningAssessment,
    build_dataset,
    EVENT_ON,
    EVENT_OFF,
    EVENT_REVOCATION,
)

SCREEN = date(2013, 4, 1)

ZEROS = dict(
    n_arrests=0, n_jail30=0, n_prison=0, n_probation_sentences=0,
    juvenile_felony=0, violent_felony_property=0, murder_manslaughter=0,
    felony_assault=0, misdemeanor_assault=0, family_violence=0,
    sex_offense=0, weapons=0,
    on_probation_at_offense=0, n_charges_on_probation=0, n_probation_violations=0,
)


def _assess(pid, screening=SCREEN, aid="a1", kind="general", raw=-1.0, decile=5):
    return ScreeningAssessment(aid, pid, screening, kind, raw, decile, "pretrial")


def _charge(pid, d, statute="812.014", degree="(M1)", **kw):
    return ChargeEvent(pid, d, statute, degree, "fixture charge", **kw)


def case_zero_history():
    # Only charge is the current offense (2 days before screening); nothing
    # prior, no probation events. Every component is 0 by hand count.
    p = PersonRecord("p1", date(1988, 1, 15), "male", "caucasian")
    charges = [_charge("p1", SCREEN - timedelta(days=2))]
    ds = build_dataset([p], charges, [], [_assess("p1")], end_date=SCREEN)
    return "zero_history", ds, dict(ZEROS)


def case_probation_sentence_cap():
    # Seven "On" events in 2000, all long closed out by their 365-day
    # threshold well before the 2013 offense: n_probation_sentences counts 7
    # Ons but caps at 5; status at offense is false.
    p = PersonRecord("p1", date(1975, 2, 2), "male", "african_american")
    events = [
        ProbationEvent("p1", date(2000, 1, 1) + timedelta(days=30 * k), EVENT_ON)
        for k in range(7)
    ]
    charges = [_charge("p1", SCREEN - timedelta(days=2))]
    ds = build_dataset([p], charges, events, [_assess("p1")], end_date=SCREEN)
    return "probation_sentence_cap", ds, dict(ZEROS, n_probation_sentences=5)


def case_weapons_and_sex_cap():
    # 2 weapons charges + 4 sex-offense charges on six distinct dates:
    # weapons=2, sex capped 4->3, arrests=6 distinct dates. Violence sum 5.
    p = PersonRecord("p1", date(1980, 7, 1), "male", "hispanic")
    charges = [
        _charge("p1", date(2010, 1, 10), statute="790.01", degree="(M1)"),
        _charge("p1", date(2010, 2, 10), statute="790.01", degree="(M1)"),
        _charge("p1", date(2011, 3, 1), statute="794.011", degree="(F2)"),
        _charge("p1", date(2011, 4, 1), statute="794.011", degree="(F2)"),
        _charge("p1", date(2011, 5, 1), statute="794.011", degree="(F2)"),
        _charge("p1", date(2011, 6, 1), statute="794.011", degree="(F2)"),
        _charge("p1", SCREEN - timedelta(days=2)),
    ]
    ds = build_dataset([p], charges, [], [_assess("p1")], end_date=SCREEN)
    return "weapons_and_sex_cap", ds, dict(ZEROS, weapons=2, sex_offense=3, n_arrests=6)


def case_juvenile_boundary():
    # DOB 1995-05-01. Felony assault the day before the 18th birthday is
    # juvenile; one on the birthday itself is not. juvenile_felony=1,
    # felony_assault=2, arrests=2.
    p = PersonRecord("p1", date(1995, 5, 1), "female", "caucasian")
    screen = date(2013, 6, 10)
    charges = [
        _charge("p1", date(2013, 4, 30), statute="784.045", degree="(F2)"),
        _charge("p1", date(2013, 5, 1), statute="784.045", degree="(F2)"),
        _charge("p1", date(2013, 6, 5)),
    ]
    ds = build_dataset([p], charges, [], [_assess("p1", screening=screen)], end_date=screen)
    return "juvenile_boundary", ds, dict(ZEROS, juvenile_felony=1, felony_assault=2, n_arrests=2)


def case_window_boundary():
    # Charges 31 days and 2 days before screening. The 2-day one is the
    # current offense; the 31-day one predates it and counts as 1 arrest.
    p = PersonRecord("p1", date(1985, 3, 3), "male", "other")
    charges = [
        _charge("p1", SCREEN - timedelta(days=31)),
        _charge("p1", SCREEN - timedelta(days=2)),
    ]
    ds = build_dataset([p], charges, [], [_assess("p1")], end_date=SCREEN)
    return "window_boundary", ds, dict(ZEROS, n_arrests=1)


def case_t_on_threshold():
    # "On" 200 days before the offense with no "off": inside the 365-day
    # threshold, so on_probation_at_offense=1. A prior charge 100 days after
    # the "On" is also inside: n_charges_on_probation=1. One On event:
    # n_probation_sentences=1.
    p = PersonRecord("p1", date(1979, 9, 9), "male", "caucasian")
    offense = date(2013, 3, 31)
    on_date = offense - timedelta(days=200)
    events = [ProbationEvent("p1", on_date, EVENT_ON)]
    charges = [
        _charge("p1", on_date + timedelta(days=100), degree="(M3)"),
        _charge("p1", offense),
    ]
    ds = build_dataset([p], charges, events, [_assess("p1")], end_date=SCREEN)
    return "t_on_threshold", ds, dict(
        ZEROS, n_arrests=1, n_probation_sentences=1,
        on_probation_at_offense=1, n_charges_on_probation=1,
    )


def case_t_off_threshold():
    # Orphaned "off" on 2013-01-01 covers [2012-12-02, 2013-01-01].
    # A charge 10 days before the off (12-22) is covered; one 45 days before
    # (11-17) is not; the offense itself (02-15, after the off) is not.
    p = PersonRecord("p1", date(1983, 12, 12), "female", "african_american")
    off_date = date(2013, 1, 1)
    offense = date(2013, 2, 15)
    screen = date(2013, 2, 20)
    events = [ProbationEvent("p1", off_date, EVENT_OFF)]
    charges = [
        _charge("p1", date(2012, 11, 17)),
        _charge("p1", date(2012, 12, 22)),
        _charge("p1", offense),
    ]
    ds = build_dataset([p], charges, events, [_assess("p1", screening=screen)], end_date=screen)
    return "t_off_threshold", ds, dict(ZEROS, n_arrests=2, n_charges_on_probation=1)


def case_interval_and_revocations():
    # Well-formed probation interval 2012-06-01..2013-06-01 contains the
    # offense (on_probation=1; the closing "off" may postdate the offense,
    # status describes the interval). Seven revocation filings before the
    # offense cap at 5. One prior charge inside the interval.
    p = PersonRecord("p1", date(1970, 1, 30), "male", "caucasian")
    events = [
        ProbationEvent("p1", date(2012, 6, 1), EVENT_ON),
        ProbationEvent("p1", date(2013, 6, 1), EVENT_OFF),
    ] + [
        ProbationEvent("p1", date(2012, 7, 1) + timedelta(days=28 * k), EVENT_REVOCATION)
        for k in range(7)
    ]
    charges = [
        _charge("p1", date(2012, 8, 15)),
        _charge("p1", SCREEN - timedelta(days=2)),
    ]
    ds = build_dataset([p], charges, events, [_assess("p1")], end_date=date(2013, 6, 1))
    return "interval_and_revocations", ds, dict(
        ZEROS, n_arrests=1, n_probation_sentences=1,
        on_probation_at_offense=1, n_charges_on_probation=1, n_probation_violations=5,
    )


def case_jail_prison_counts():
    # Sentence columns: three jail stints >= 30 days count, a 10-day one
    # does not; two prison commitments. Six distinct arrest dates.
    p = PersonRecord("p1", date(1978, 4, 18), "male", "african_american")
    charges = [
        _charge("p1", date(2009, 1, 5), jail_days=45),
        _charge("p1", date(2009, 6, 5), jail_days=45),
        _charge("p1", date(2010, 1, 5), jail_days=60),
        _charge("p1", date(2010, 6, 5), jail_days=10),
        _charge("p1", date(2011, 1, 5), prison=True),
        _charge("p1", date(2011, 6, 5), prison=True),
        _charge("p1", SCREEN - timedelta(days=2)),
    ]
    ds = build_dataset([p], charges, [], [_assess("p1")], end_date=SCREEN)
    return "jail_prison_counts", ds, dict(ZEROS, n_arrests=6, n_jail30=3, n_prison=2)


def case_murder_property_dedup():
    # One murder charge, two felony robberies (violent property), one plain
    # burglary (property, not violent): murder=1, violent_felony_property=2.
    # Three duplicate assessments with ids 5/9/2 dedupe to id 9.
    p = PersonRecord("p1", date(1972, 10, 10), "male", "caucasian")
    charges = [
        _charge("p1", date(2008, 3, 1), statute="782.04", degree="(F1)"),
        _charge("p1", date(2009, 5, 1), statute="812.13", degree="(F1)"),
        _charge("p1", date(2010, 7, 1), statute="812.13", degree="(F1)"),
        _charge("p1", date(2011, 9, 1), statute="810.02", degree="(F2)"),
        _charge("p1", SCREEN - timedelta(days=2)),
    ]
    assessments = [_assess("p1", aid=i) for i in ("5", "9", "2")]
    ds = build_dataset([p], charges, [], assessments, end_date=SCREEN)
    return "murder_property_dedup", ds, dict(
        ZEROS, n_arrests=4, murder_manslaughter=1, violent_felony_property=2,
    )


ALL_CASES = [
    case_zero_history,
    case_probation_sentence_cap,
    case_weapons_and_sex_cap,
    case_juvenile_boundary,
    case_window_boundary,
    case_t_on_threshold,
    case_t_off_threshold,
    case_interval_and_revocations,
    case_jail_prison_counts,
    case_murder_property_dedup,
]
