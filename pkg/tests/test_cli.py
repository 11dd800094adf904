"""End-to-end checks of the command line pipeline.

One small synthetic cohort is pushed through every verb once per module;
the tests then inspect the artifacts. Verbs run in-process through
cli.main so exit codes come back as plain ints.
"""

import json
import re
from pathlib import Path

import pytest

from scoreaudit import cli

HEX12 = re.compile(r"^[0-9a-f]{12}$")


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def out_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    assert run("synth", "--n", 160, "--seed", 5, "--out", out) == 0
    assert run("reconstruct", "--out", out) == 0
    assert run("features", "--out", out) == 0
    assert run("residuals", "--families", "linear", "--folds", 3, "--out", out) == 0
    assert run("fairness", "--out", out) == 0
    assert run("anomalies", "--out", out) == 0
    assert run("report", "--out", out) == 0
    return out


def test_synth_then_reconstruct_shares_the_out_dir(tmp_path, monkeypatch, capsys):
    # the documented two-command flow, with the default --out
    monkeypatch.chdir(tmp_path)
    assert run("synth", "--n", 80, "--seed", 7) == 0
    assert run("reconstruct", "--score", "violent", "--K", 4) == 0
    capsys.readouterr()
    doc = json.loads((tmp_path / "audit_out" / "components_violent.json").read_text())
    assert len(doc["spline"]["slopes"]) == 4
    assert len(doc["spline"]["knots"]) == 3


def test_pipeline_artifacts_exist(out_dir):
    for name in (
        "cohort/persons.csv", "cohort/provenance.json", "truth.json",
        "components_general.json", "components_violent.json",
        "features_general.csv", "ablation_violent.csv", "predictions_general.csv",
        "probabilities.json", "rates.csv", "logistic.json",
        "anomalies.csv", "report.json",
    ):
        assert (out_dir / name).exists(), name


def test_report_plot_list_matches_disk(out_dir):
    doc = json.loads((out_dir / "report.json").read_text())
    on_disk = sorted(p.name for p in (out_dir / "plots").glob("*.svg"))
    for name in doc["plots"]:
        assert name in on_disk
    # the nine figure types the report is expected to carry
    for stem in ("scatter_age_general", "scatter_age_violent", "remainder_history_violent",
                 "prediction_general", "prob_decile", "rates_age_general",
                 "age_hist", "assumption_counts_general", "support_violent",
                 "age_first_arrest"):
        assert f"{stem}.svg" in doc["plots"], stem


def test_every_artifact_names_its_config_hash(out_dir):
    doc = json.loads((out_dir / "components_general.json").read_text())
    assert HEX12.match(doc["config_hash"])
    first = (out_dir / "rates.csv").read_text().splitlines()[0]
    assert re.match(r"^# config_hash=[0-9a-f]{12}$", first)
    svg = (out_dir / "plots" / "scatter_age_general.svg").read_text()
    assert re.search(r"<!-- config_hash=[0-9a-f]{12} -->", svg)


def test_rerun_is_byte_identical(out_dir):
    targets = [
        out_dir / "rates.csv", out_dir / "rates.json", out_dir / "logistic.json",
        out_dir / "components_violent.json", out_dir / "anomalies.csv",
        out_dir / "report.json", out_dir / "plots" / "scatter_age_violent.svg",
    ]
    before = {t: t.read_bytes() for t in targets}
    assert run("fairness", "--out", out_dir) == 0
    assert run("reconstruct", "--score", "violent", "--out", out_dir) == 0
    assert run("anomalies", "--out", out_dir) == 0
    assert run("report", "--out", out_dir) == 0
    for t in targets:
        assert t.read_bytes() == before[t], t.name


def test_rates_csv_has_folds_and_aggregates(out_dir):
    lines = (out_dir / "rates.csv").read_text().splitlines()
    rows = [dict(zip(lines[1].split(","), line.split(","))) for line in lines[2:]]
    age_general = [r for r in rows if r["model"] == "age" and r["score_kind"] == "general"]
    groups = {r["group"] for r in age_general}
    # 10 fold rows plus one aggregate row per group
    for g in groups:
        mine = [r for r in age_general if r["group"] == g]
        assert len(mine) == 11
        agg = next(r for r in mine if r["fold"] == "")
        folds = [r for r in mine if r["fold"] != ""]
        for count in ("tp", "fp", "tn", "fn"):
            assert int(agg[count]) == sum(int(r[count]) for r in folds)


def test_missing_cohort_exits_2(tmp_path, capsys):
    assert run("reconstruct", "--out", tmp_path / "empty") == 2
    assert "synth" in capsys.readouterr().err


def test_missing_components_exits_2(tmp_path, capsys):
    out = tmp_path / "half"
    assert run("synth", "--n", 60, "--seed", 1, "--out", out) == 0
    capsys.readouterr()
    assert run("residuals", "--out", out) == 2
    assert "reconstruct" in capsys.readouterr().err


def test_usage_errors_exit_64(capsys):
    assert run("reconstruct", "--bogus") == 64
    assert run("notaverb") == 64
    assert run() == 64
    assert run("reconstruct", "--score", "sideways") == 64
    capsys.readouterr()


def test_unknown_family_exits_64(out_dir, capsys):
    assert run("residuals", "--families", "linear,nope", "--out", out_dir) == 64
    assert "nope" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert run("--help") == 0
    assert "reconstruct" in capsys.readouterr().out


def test_thresholds_file_overrides_defaults(out_dir, tmp_path, capsys):
    tfile = tmp_path / "loose.json"
    tfile.write_text(json.dumps({"decile_max": 4, "arrests_min": 3}))
    assert run("anomalies", "--thresholds", tfile, "--out", out_dir) == 0
    capsys.readouterr()
    doc = json.loads((out_dir / "anomalies.json").read_text())
    assert doc["thresholds"] == {"decile_max": 4, "violence_min": 3, "arrests_min": 3}

    tfile.write_text(json.dumps({"decile_max": 4, "typo_key": 1}))
    assert run("anomalies", "--thresholds", tfile, "--out", out_dir) == 64
    assert "typo_key" in capsys.readouterr().err
    # restore the default-threshold artifacts for later tests
    assert run("anomalies", "--out", out_dir) == 0
    capsys.readouterr()


def test_missing_thresholds_file_exits_2(out_dir, capsys):
    assert run("anomalies", "--thresholds", "/nowhere/t.json", "--out", out_dir) == 2
    capsys.readouterr()


def test_summaries_name_the_config_hash(tmp_path, capsys):
    out = tmp_path / "hashy"
    assert run("synth", "--n", 60, "--seed", 2, "--out", out) == 0
    line = capsys.readouterr().out.strip()
    m = re.search(r"\[config ([0-9a-f]{12})\]", line)
    assert m
    truth = json.loads((out / "truth.json").read_text())
    assert truth["config_hash"] == m.group(1)


def test_ingest_round_trips_the_canonical_cohort(out_dir, tmp_path, capsys):
    out2 = tmp_path / "reingest"
    assert run("ingest", "--input", out_dir / "cohort", "--out", out2) == 0
    capsys.readouterr()
    a = (out_dir / "cohort" / "assessments.csv").read_text()
    b = (out2 / "cohort" / "assessments.csv").read_text()
    assert a == b


def test_ingest_missing_input_exits_2(tmp_path):
    assert run("ingest", "--input", tmp_path / "nope", "--out", tmp_path / "o") == 2


def test_features_csv_shape(out_dir):
    lines = (out_dir / "features_general.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    header = lines[1].split(",")
    assert header[0] == "assessment_id"
    assert "age" in header and "age_at_first_arrest" in header
    assert header[-3:] == ["observable", "recidivated", "violent_recid"]
    assert len(lines) == 2 + 160  # one assessment per person and kind
