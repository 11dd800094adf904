"""The synthetic generator against the rest of the toolkit.

The generator counts subscales on its own while inventing histories, so
comparing its sidecar against the subscale engine exercises both
implementations of the counting rules at once.
"""

import dataclasses
import json

import numpy as np
import pytest

from scoreaudit import synthoracle as so
from scoreaudit.lowerbound import select_candidates
from scoreaudit.records import age_at, label_recidivism, resolve_current_offense
from scoreaudit.subscales import compute_subscales


@pytest.fixture(scope="module")
def small_cohort():
    spec = so.SyntheticModelSpec(n=300, seed=42, age_min=18, age_max=60)
    return spec, *so.generate(spec)


def test_defaults_evaluate_like_published_pieces():
    gen = so.default_general_age()
    assert gen.evaluate(20) == pytest.approx(-1.299, abs=1e-9)
    viol = so.default_violent_age()
    assert viol.evaluate(60) == pytest.approx(-4.382, abs=5e-3)
    step = so.default_violence_step()
    assert step.evaluate(0) == 0.0
    assert step.evaluate(3) == pytest.approx(0.9)
    assert step.evaluate(5) == pytest.approx(1.2)


def test_subscale_engine_agrees_with_generator(small_cohort):
    spec, dataset, truth = small_cohort
    checked = 0
    for a in dataset.assessments:
        if a.score_kind != "general":
            continue
        person = dataset.persons_by_id[a.person_id]
        vec = compute_subscales(person, a, dataset)
        assert vec is not None
        expected = truth["per_person"][a.person_id]["subscales"]
        assert dataclasses.asdict(vec) == expected, a.person_id
        checked += 1
    assert checked == spec.n


def test_ages_and_first_arrest_ages_match(small_cohort):
    spec, dataset, truth = small_cohort
    for a in dataset.assessments:
        person = dataset.persons_by_id[a.person_id]
        info = truth["per_person"][a.person_id]
        assert age_at(person, a.screening_date) == info["age"]


def test_planted_candidates_are_found(small_cohort):
    spec, dataset, truth = small_cohort
    planted = set(truth["candidate_person_ids"])
    for kind in ("general", "violent"):
        found = {p.assessment_id for p in select_candidates(dataset, kind).points}
        found_persons = {
            truth["per_assessment"][aid]["person_id"] for aid in found
        }
        assert planted <= found_persons, kind
    # every integer age in range has candidate support
    ages_found = {
        int(p.age) for p in select_candidates(dataset, "general").points
    }
    assert ages_found >= set(range(spec.age_min, spec.age_max + 1))


def test_noiseless_minimum_per_age_is_the_age_component():
    spec = so.SyntheticModelSpec(n=200, seed=7, age_min=18, age_max=50, noise_sigma=0.0)
    dataset, truth = so.generate(spec)
    by_age = {}
    for a in dataset.assessments:
        if a.score_kind != "general":
            continue
        age = truth["per_person"][a.person_id]["age"]
        by_age.setdefault(age, []).append(a.raw_score)
    for age, scores in by_age.items():
        assert min(scores) == pytest.approx(spec.general_age.evaluate(age), abs=1e-12)


def test_scores_never_fall_below_age_component(small_cohort):
    spec, dataset, truth = small_cohort
    for a in dataset.assessments:
        age = float(truth["per_person"][a.person_id]["age"])
        floor = (spec.general_age if a.score_kind == "general" else spec.violent_age).evaluate(age)
        assert a.raw_score >= floor - 1e-12


def test_truth_decomposition_sums_to_raw(small_cohort):
    spec, dataset, truth = small_cohort
    for a in dataset.assessments:
        t = truth["per_assessment"][a.assessment_id]
        total = t["f_age"] + t["g"] + t["age_first_term"] + t["noise"]
        assert a.raw_score == pytest.approx(total, abs=1e-12)
        assert t["noise"] >= 0.0


def test_recidivism_labels_match_truth(small_cohort):
    spec, dataset, truth = small_cohort
    for pid, info in truth["per_person"].items():
        person = dataset.persons_by_id[pid]
        screening = [a for a in dataset.assessments if a.person_id == pid][0].screening_date
        label = label_recidivism(
            person, screening, dataset.charges_by_person.get(pid, ()),
            end_date=dataset.end_date,
        )
        assert label["observable"]
        assert label["general"] == info["recidivated"], pid
        assert label["violent"] == info["violent_recid"], pid


def test_decile_blocks_balanced_and_monotone(small_cohort):
    spec, dataset, truth = small_cohort
    for kind in ("general", "violent"):
        rows = sorted(
            [(a.raw_score, a.assessment_id, a.decile_score)
             for a in dataset.assessments if a.score_kind == kind]
        )
        deciles = [d for _, _, d in rows]
        assert deciles == sorted(deciles)
        counts = np.bincount(deciles, minlength=11)[1:]
        assert counts.max() - counts.min() <= 1
        assert counts.sum() == spec.n


def test_every_person_has_a_current_offense(small_cohort):
    spec, dataset, truth = small_cohort
    for a in dataset.assessments:
        person = dataset.persons_by_id[a.person_id]
        off = resolve_current_offense(person, a.screening_date, dataset.charges_by_person[a.person_id])
        assert off.present
        assert off.offense_date.isoformat() == truth["per_person"][a.person_id]["offense_date"]


def test_grid_noise_lands_on_grid():
    spec = so.SyntheticModelSpec(n=120, seed=3, age_min=18, age_max=40,
                                 noise_sigma=0.15, noise_grid=0.05)
    dataset, truth = so.generate(spec)
    for t in truth["per_assessment"].values():
        steps = t["noise"] / 0.05
        assert steps == pytest.approx(round(steps), abs=1e-9)


def test_race_specific_recidivism_base():
    spec = so.SyntheticModelSpec(
        n=1200, seed=11, age_min=18, age_max=40,
        recid_base_by_race=(("african_american", 0.62), ("caucasian", 0.30)),
    )
    _, truth = so.generate(spec)
    rates = {}
    for info in truth["per_person"].values():
        rates.setdefault(info["race"], []).append(info["recidivated"])
    aa = np.mean(rates["african_american"])
    cc = np.mean(rates["caucasian"])
    assert aa - cc > 0.15


def test_generation_is_deterministic():
    spec = so.SyntheticModelSpec(n=80, seed=5, age_min=20, age_max=45)
    d1, t1 = so.generate(spec)
    d2, t2 = so.generate(spec)
    assert d1 == d2
    assert t1 == t2


def test_spec_json_roundtrip(tmp_path):
    spec = so.SyntheticModelSpec(n=50, seed=9, age_min=18, age_max=40, noise_grid=0.05,
                                 recid_base_by_race=(("caucasian", 0.3),))
    doc = so.spec_to_json(spec)
    assert so.spec_from_json(json.loads(json.dumps(doc))) == spec

    _, truth = so.generate(spec)
    p = tmp_path / "truth.json"
    so.write_truth(truth, p)
    assert so.load_truth(p) == json.loads(json.dumps(truth))


def test_rejects_bad_parameters():
    with pytest.raises(ValueError):
        so.SyntheticModelSpec(n=0)
    with pytest.raises(ValueError):
        so.SyntheticModelSpec(age_min=10)
    with pytest.raises(ValueError):
        so.SyntheticModelSpec(noise_sigma=-1)
    with pytest.raises(ValueError):
        so.generate(so.SyntheticModelSpec(n=10, age_min=18, age_max=60))
