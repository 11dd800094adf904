"""Command line pipeline for auditing a cohort of score assessments.

Verbs share one working directory (--out) and form a pipeline:

    synth / ingest  -> cohort/        canonical CSVs plus provenance.json
    features        -> features_<kind>.csv
    reconstruct     -> components_<kind>.json, plots/scatter_age_<kind>.svg
    residuals       -> ablation_<kind>.{csv,json}, predictions_<kind>.csv,
                       probabilities.json
    fairness        -> rates.{csv,json}, logistic.json
    anomalies       -> anomalies.{csv,json}
    report          -> report.json, plots/*.svg

Later verbs read the earlier artifacts from the same directory. A verb
whose upstream artifact is missing exits with status 2 and names the verb
to run first; a bad flag exits with status 64.

Every artifact names the configuration that produced it: the first twelve
hex digits of a SHA-256 over the verb's resolved analysis parameters
(paths excluded) appear as a "config_hash" field in JSON files, a leading
``# config_hash=`` comment line in CSV files, and an XML comment in SVG
files. Nothing embeds a timestamp, so rerunning a verb with the same
flags over the same inputs rewrites byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from datetime import date
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import anomalies as anomaly_screens
from . import fairness, lowerbound, residuals, svgplot
from .records import IngestConfig, IngestError, CohortDataset, ingest_cohort, write_canonical
from .synthoracle import SyntheticModelSpec, generate, spec_to_json

EXIT_OK = 0
EXIT_MISSING = 2
EXIT_USAGE = 64

COHORT_DIR = "cohort"
SCORE_KINDS = ("general", "violent")

DEFAULT_THRESHOLDS = {"decile_max": 2, "violence_min": 3, "arrests_min": 10}


class MissingArtifact(RuntimeError):
    """An upstream verb has not produced its output yet."""


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the pipeline reserves 2 for
    missing artifacts, so usage problems exit 64 instead."""

    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Artifact IO


def _hash_config(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], chash: str) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={chash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path: Path) -> list[dict]:
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        return list(csv.DictReader(fh))


def _write_svg(path: Path, fig: svgplot.Figure, chash: str) -> None:
    path.write_text(fig.render(comment=f"config_hash={chash}"), encoding="utf-8")


def _cell(value) -> str:
    """CSV cell with exact float round-trip and blank for missing."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return str(int(value))
    return str(value)


def _load_cohort(out: Path) -> CohortDataset:
    cohort = out / COHORT_DIR
    if not (cohort / "persons.csv").exists():
        raise MissingArtifact(
            f"no cohort under {cohort}; run `audit ingest` or `audit synth` first"
        )
    end_date = None
    pretrial = True
    prov_path = cohort / "provenance.json"
    if prov_path.exists():
        prov = _read_json(prov_path)
        if prov.get("end_date"):
            end_date = date.fromisoformat(prov["end_date"])
        pretrial = prov.get("config", {}).get("pretrial_only", True)
    return ingest_cohort(cohort, IngestConfig(pretrial_only=pretrial, end_date=end_date))


def _kinds(score: str) -> tuple[str, ...]:
    return SCORE_KINDS if score == "both" else (score,)


def _load_components(out: Path, kind: str) -> dict:
    path = out / f"components_{kind}.json"
    if not path.exists():
        raise MissingArtifact(
            f"{path} not found; run `audit reconstruct --score {kind}` first"
        )
    return lowerbound.components_from_json(_read_json(path))


# ---------------------------------------------------------------------------
# Figures


def _scatter_age_figure(dataset, kind, comp) -> svgplot.Figure:
    fig = svgplot.Figure(title=f"{kind} raw score vs age",
                         xlabel="age at screening", ylabel="raw score")
    points = lowerbound.population_scatter(dataset, kind)
    fig.scatter([p.age for p in points], [p.raw_score for p in points],
                color=svgplot.GRAY, r=2.0, opacity=0.35, label="population")
    selected = lowerbound.select_candidates(dataset, kind)
    flagged = set(comp["outlier_ids"])
    inl = [p for p in selected.points if p.assessment_id not in flagged]
    out_pts = [p for p in selected.points if p.assessment_id in flagged]
    fig.scatter([p.age for p in inl], [p.raw_score for p in inl],
                color=svgplot.PALETTE[0], r=2.6, opacity=0.8, label="candidates")
    if out_pts:
        fig.scatter([p.age for p in out_pts], [p.raw_score for p in out_pts],
                    color=svgplot.PALETTE[3], r=3.2, opacity=0.9, label="age outliers")
    ages = sorted({round(p.age, 3) for p in points})
    if ages:
        grid = np.linspace(min(ages), max(ages), 120)
        fig.line(grid, comp["spline"].evaluate_many(grid),
                 color=svgplot.PALETTE[1], width=2.5, label="spline bound")
        fig.line(grid, comp["poly"].evaluate(grid),
                 color=svgplot.PALETTE[4], width=1.5, dash="5,4", label="poly bound")
    return fig


def _assumption_figure(dataset, kind) -> svgplot.Figure:
    counts = lowerbound.data_assumption_counts(dataset, kind)
    fig = svgplot.Figure(title=f"{kind} candidate support per age",
                         xlabel="age at screening", ylabel="candidates")
    ages = sorted(counts)
    fig.bars([float(a) for a in ages], [float(counts[a]) for a in ages], width=0.8)
    fig.set_ylim(0, max(counts.values()) * 1.1 if counts else 1.0)
    return fig


def _support_figure(dataset, kind) -> svgplot.Figure:
    summary = lowerbound.support_summary(dataset, kind)
    fig = svgplot.Figure(title=f"{kind} minimum raw score by age",
                         xlabel="age at screening", ylabel="minimum raw score")
    ages = sorted(summary)
    fig.bubbles([float(a) for a in ages], [summary[a][0] for a in ages],
                [float(summary[a][1]) for a in ages], label="bubble area = n")
    return fig


def _remainder_figure(dataset, kind, comp) -> svgplot.Figure:
    fm = residuals.build_features(dataset, kind)
    remainder = fm.raw_scores - comp["spline"].evaluate_many(fm.ages)
    if kind == "violent":
        x = fm.violence_sums.astype(float)
        xlabel = "violence-history subscale sum"
    else:
        x = fm.column("n_arrests")
        xlabel = "prior arrests"
    fig = svgplot.Figure(title=f"{kind} remainder vs history",
                         xlabel=xlabel, ylabel="raw score minus age bound")
    fig.scatter(x, remainder, color=svgplot.PALETTE[0], r=2.2, opacity=0.45)
    g = comp.get("g_viol_hist")
    if g is not None:
        fig.line([float(b) for b in g.breakpoints], list(g.values),
                 color=svgplot.PALETTE[3], width=2.5, label="history envelope")
    return fig


def _prediction_figure(rows: list[dict], kind: str) -> svgplot.Figure:
    fig = svgplot.Figure(title=f"{kind} held-out predictions by stage",
                         xlabel="actual", ylabel="predicted")
    stages = []
    for row in rows:
        if row["stage"] not in stages:
            stages.append(row["stage"])
    lo, hi = None, None
    for i, stage in enumerate(stages):
        xs = [float(r["actual"]) for r in rows if r["stage"] == stage]
        ys = [float(r["predicted"]) for r in rows if r["stage"] == stage]
        fig.scatter(xs, ys, color=svgplot.PALETTE[i % len(svgplot.PALETTE)],
                    r=2.2, opacity=0.45, label=stage)
        both = xs + ys
        lo = min(both) if lo is None else min(lo, *both)
        hi = max(both) if hi is None else max(hi, *both)
    if lo is not None:
        fig.line([lo, hi], [lo, hi], color="#555", width=1.0, dash="4,4")
    return fig


def _prob_decile_figure(dataset, probabilities: dict) -> svgplot.Figure:
    fig = svgplot.Figure(title="violent recidivism probability vs decile",
                         xlabel="violent decile score", ylabel="held-out probability")
    deciles, probs = [], []
    for a in dataset.assessments:
        if a.score_kind == "violent" and a.assessment_id in probabilities:
            deciles.append(float(a.decile_score))
            probs.append(probabilities[a.assessment_id])
    fig.scatter(deciles, probs, color=svgplot.PALETTE[0], r=2.4, opacity=0.4)
    fig.set_ylim(0.0, 1.0)
    return fig


def _rates_figure(rows: list[dict], model: str, kind: str) -> Optional[svgplot.Figure]:
    rows = [r for r in rows if r["model"] == model and r["score_kind"] == kind]
    if not rows:
        return None
    groups = sorted({r["group"] for r in rows if r["fold"] == "" and r["n"] > 0})
    if not groups:
        return None
    fig = svgplot.Figure(title=f"{model} model error rates, {kind} score",
                         xlabel="", ylabel="rate")
    fig.set_ylim(0.0, 1.05)
    fig.set_xlim(-0.6, len(groups) - 0.4)
    fig.set_xticks(list(range(len(groups))), groups)
    for offset, rate, color in ((-0.18, "fpr", svgplot.PALETTE[0]),
                                (0.18, "fnr", svgplot.PALETTE[1])):
        xs, hs = [], []
        for i, group in enumerate(groups):
            agg = next(r for r in rows if r["group"] == group and r["fold"] == "")
            if agg[rate] is not None:
                xs.append(i + offset)
                hs.append(agg[rate])
        fig.bars(xs, hs, width=0.32, color=color, label=rate.upper())
        px, py = [], []
        for i, group in enumerate(groups):
            for r in rows:
                if r["group"] == group and r["fold"] != "" and r[rate] is not None:
                    px.append(i + offset)
                    py.append(r[rate])
        fig.scatter(px, py, color="#333", r=1.6, opacity=0.8)
    return fig


def _age_first_figure(dataset) -> svgplot.Figure:
    fm = residuals.build_features(dataset, "general")
    fig = svgplot.Figure(title="age at first arrest vs age at screening",
                         xlabel="age at screening", ylabel="age at first arrest")
    fig.scatter(fm.ages, fm.column("age_at_first_arrest"),
                color=svgplot.PALETTE[0], r=2.2, opacity=0.4)
    lo = float(min(fm.ages.min(), fm.column("age_at_first_arrest").min()))
    hi = float(max(fm.ages.max(), fm.column("age_at_first_arrest").max()))
    fig.line([lo, hi], [lo, hi], color="#555", width=1.0, dash="4,4")
    return fig


def _age_hist_figure(dist: dict) -> svgplot.Figure:
    fig = svgplot.Figure(title="screening age distribution by race",
                         xlabel="age at screening", ylabel="share of group")
    races = sorted(dist, key=lambda r: -dist[r]["n"])[:len(svgplot.PALETTE)]
    for i, race in enumerate(races):
        hist = dist[race]["histogram"]
        ages = sorted(int(a) for a in hist)
        fig.line([float(a) for a in ages], [hist[a] for a in ages],
                 color=svgplot.PALETTE[i], width=1.8,
                 label=f"{race} (n={dist[race]['n']})")
    return fig


# ---------------------------------------------------------------------------
# Verbs


def cmd_synth(args) -> int:
    config = {
        "verb": "synth", "n": args.n, "seed": args.seed,
        "noise": args.noise, "noise_grid": args.noise_grid,
    }
    chash = _hash_config(config)
    spec = SyntheticModelSpec(
        n=args.n, seed=args.seed, noise_sigma=args.noise, noise_grid=args.noise_grid
    )
    dataset, truth = generate(spec)
    dataset.provenance["end_date"] = dataset.end_date.isoformat()
    dataset.provenance["config_hash"] = chash
    out = Path(args.out)
    write_canonical(dataset, out / COHORT_DIR)
    _write_json(out / "truth.json", {"config_hash": chash, **truth})
    print(f"synth: {len(dataset.persons)} persons, {len(dataset.assessments)} assessments "
          f"-> {out / COHORT_DIR} [config {chash}]")
    return EXIT_OK


def cmd_ingest(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise MissingArtifact(f"input {src} does not exist")
    config = {"verb": "ingest", "pretrial_only": args.pretrial_only}
    chash = _hash_config(config)
    dataset = ingest_cohort(src, IngestConfig(pretrial_only=args.pretrial_only))
    dataset.provenance["config_hash"] = chash
    out = Path(args.out)
    write_canonical(dataset, out / COHORT_DIR)
    prov = dataset.provenance
    n_excluded = sum(prov.get("exclusions", {}).values())
    print(f"ingest: {len(dataset.persons)} persons, {len(dataset.assessments)} assessments "
          f"kept, {n_excluded} rows excluded -> {out / COHORT_DIR} [config {chash}]")
    return EXIT_OK


def cmd_features(args) -> int:
    out = Path(args.out)
    dataset = _load_cohort(out)
    for kind in _kinds(args.score):
        config = {"verb": "features", "score": kind}
        chash = _hash_config(config)
        fm = residuals.build_features(dataset, kind)
        header = ["assessment_id", *fm.names, "raw_score", "decile_score",
                  "observable", "recidivated", "violent_recid"]
        rows = []
        for i, aid in enumerate(fm.assessment_ids):
            rows.append([
                aid, *(_cell(float(v)) for v in fm.X[i]),
                _cell(float(fm.raw_scores[i])), int(fm.deciles[i]),
                int(fm.observable[i]), int(fm.recidivated[i]), int(fm.violent_recid[i]),
            ])
        _write_csv(out / f"features_{kind}.csv", header, rows, chash)
        print(f"features[{kind}]: {len(rows)} rows, {len(fm.names)} columns, "
              f"{fm.n_excluded} assessments excluded [config {chash}]")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    out = Path(args.out)
    dataset = _load_cohort(out)
    plots = out / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    for kind in _kinds(args.score):
        config = {"verb": "reconstruct", "score": kind, "K": args.K, "c": args.c}
        chash = _hash_config(config)
        rec = lowerbound.reconstruct_age_component(
            dataset, kind, k_segments=args.K, c=args.c
        )
        doc = lowerbound.components_to_json(
            kind, rec.poly, rec.spline,
            rec.c, [p.assessment_id for p in rec.candidates.outliers], rec.g_viol_hist,
        )
        _write_json(out / f"components_{kind}.json", {"config_hash": chash, **doc})
        comp = lowerbound.components_from_json(doc)
        _write_svg(plots / f"scatter_age_{kind}.svg",
                   _scatter_age_figure(dataset, kind, comp), chash)
        knots = ", ".join(f"{k:.2f}" for k in rec.spline.knots)
        slopes = ", ".join(f"{s:.4f}" for s in rec.spline.slopes)
        print(f"reconstruct[{kind}]: knots [{knots}] slopes [{slopes}] "
              f"({len(rec.candidates.inliers)} candidates, "
              f"{len(rec.candidates.outliers)} outliers) [config {chash}]")
    return EXIT_OK


def cmd_residuals(args) -> int:
    out = Path(args.out)
    families = tuple(f.strip() for f in args.families.split(",") if f.strip())
    bad = [f for f in families if f not in residuals.FAMILIES]
    if bad:
        print(f"audit residuals: unknown families {bad}; "
              f"choose from {list(residuals.FAMILIES)}", file=sys.stderr)
        return EXIT_USAGE
    dataset = _load_cohort(out)
    pins = None
    if args.pin_grids:
        pins = {
            "gradient_boosted_trees": residuals.DEFAULT_BOOSTED_CELL,
            "kernel_svm": {"C": 1.0, "gamma": 0.1},
        }
    wrote_probabilities = False
    for kind in _kinds(args.score):
        comp = _load_components(out, kind)
        config = {
            "verb": "residuals", "score": kind, "folds": args.folds,
            "seed": args.seed, "families": list(families), "pin_grids": args.pin_grids,
        }
        chash = _hash_config(config)
        tables = residuals.ablation_tables(
            dataset, kind, target="remainder", axes=("age", "race"),
            spline=comp["spline"], g=comp["g_viol_hist"], families=families,
            seed=args.seed, folds=args.folds, hyperparameters=pins,
        )
        header = ["axis", "family", "feature_set", "metric", "value",
                  "fold_values", "hyperparameters", "seed"]
        rows = []
        doc = {"config_hash": chash, "score_kind": kind, "target": "remainder", "axes": {}}
        for axis in ("age", "race"):
            result = tables[axis]
            doc["axes"][axis] = {"metric": result.metric, "rows": result.to_rows()}
            for r in result.rows:
                rows.append([
                    axis, r["family"], r["feature_set"], result.metric,
                    _cell(r["value"]),
                    json.dumps([float(v) for v in r["fold_values"]]),
                    json.dumps(r["hyperparameters"], sort_keys=True), r["seed"],
                ])
        stages = ("raw", "minus_age", "minus_age_g") if comp["g_viol_hist"] else ("raw", "minus_age")
        scatter = residuals.prediction_scatter(
            dataset, kind, stages=stages, spline=comp["spline"], g=comp["g_viol_hist"],
            seed=args.seed, folds=args.folds,
        )
        pred_rows = []
        doc["prediction_r2"] = {}
        for stage in stages:
            doc["prediction_r2"][stage] = scatter[stage]["r2"]
            for a, p in zip(scatter[stage]["actual"], scatter[stage]["predicted"]):
                pred_rows.append([stage, _cell(float(a)), _cell(float(p))])
        _write_csv(out / f"ablation_{kind}.csv", header, rows, chash)
        _write_json(out / f"ablation_{kind}.json", doc)
        _write_csv(out / f"predictions_{kind}.csv",
                   ["stage", "actual", "predicted"], pred_rows, chash)
        gaps = []
        for axis in ("age", "race"):
            for fam in families:
                delta = (tables[axis].value(fam, f"without_{axis}")
                         - tables[axis].value(fam, f"with_{axis}"))
                gaps.append(f"{fam}/{axis}:{delta:+.4f}")
        print(f"residuals[{kind}]: remainder ablation deltas {'; '.join(gaps)} "
              f"[config {chash}]")
        if kind == "violent" and not wrote_probabilities:
            probs = residuals.violent_recid_probability(
                dataset, seed=args.seed, folds=args.folds
            )
            _write_json(out / "probabilities.json",
                        {"config_hash": chash, "probabilities": probs})
            wrote_probabilities = True
            print(f"residuals[violent]: held-out recidivism probabilities for "
                  f"{len(probs)} assessments [config {chash}]")
    return EXIT_OK


def cmd_fairness(args) -> int:
    out = Path(args.out)
    dataset = _load_cohort(out)
    config = {
        "verb": "fairness", "score": args.score, "folds": args.folds, "seed": args.seed,
        "decile_cut": args.decile_cut, "age_cutoff": args.age_cutoff,
    }
    chash = _hash_config(config)
    rows = []
    for kind in _kinds(args.score):
        for model in ("age", "decile"):
            cells = fairness.cohort_confusion_rates(
                dataset, model=model, score_kind=kind, cutoff=args.age_cutoff,
                cut=args.decile_cut, n_folds=args.folds, seed=args.seed,
            )
            for cell in cells:
                rows.append({"model": model, "score_kind": kind,
                             "n": cell.n, **cell.to_dict()})
    header = ["model", "score_kind", "group", "fold", "n",
              "tp", "fp", "tn", "fn", "tpr", "fpr", "tnr", "fnr"]
    _write_csv(out / "rates.csv", header,
               [[_cell(r[h]) for h in header] for r in rows], chash)
    _write_json(out / "rates.json", {"config_hash": chash, "rows": rows})
    try:
        fit = fairness.fit_propublica_logistic(dataset, decile_cut=args.decile_cut)
        logistic_doc = fit.to_dict()
    except (fairness.SeparationError, fairness.ConvergenceError, ValueError) as exc:
        logistic_doc = {"error": str(exc)}
        print(f"fairness: logistic fit unavailable ({exc})", file=sys.stderr)
    _write_json(out / "logistic.json", {"config_hash": chash, **logistic_doc})
    n_groups = len({r["group"] for r in rows})
    print(f"fairness: {len(rows)} rate rows over {n_groups} groups "
          f"({args.folds} folds) [config {chash}]")
    return EXIT_OK


def cmd_anomalies(args) -> int:
    out = Path(args.out)
    dataset = _load_cohort(out)
    thresholds = dict(DEFAULT_THRESHOLDS)
    if args.thresholds:
        tpath = Path(args.thresholds)
        if not tpath.exists():
            raise MissingArtifact(f"thresholds file {tpath} does not exist")
        overrides = _read_json(tpath)
        unknown = sorted(set(overrides) - set(thresholds))
        if unknown:
            print(f"audit anomalies: unknown threshold keys {unknown}; "
                  f"expected {sorted(thresholds)}", file=sys.stderr)
            return EXIT_USAGE
        thresholds.update(overrides)
    splines = {}
    for kind in _kinds(args.score):
        path = out / f"components_{kind}.json"
        if path.exists():
            splines[kind] = lowerbound.components_from_json(_read_json(path))["spline"]
    if not splines:
        raise MissingArtifact(
            f"no components_*.json under {out}; run `audit reconstruct` first"
        )
    probabilities = None
    prob_path = out / "probabilities.json"
    if prob_path.exists():
        probabilities = _read_json(prob_path)["probabilities"]
    config = {"verb": "anomalies", "score": sorted(splines), "c": args.c,
              "thresholds": thresholds, "with_probabilities": probabilities is not None}
    chash = _hash_config(config)
    reports = anomaly_screens.collect_anomalies(
        dataset, splines, probabilities=probabilities, c=args.c, **thresholds
    )
    rows = [[r.kind, r.assessment_id, _cell(r.severity),
             json.dumps(r.evidence, sort_keys=True)] for r in reports]
    _write_csv(out / "anomalies.csv", ["kind", "assessment_id", "severity", "evidence"],
               rows, chash)
    counts = {kind: 0 for kind in (anomaly_screens.KIND_AGE, anomaly_screens.KIND_HISTORY,
                                   anomaly_screens.KIND_GAP)}
    for r in reports:
        counts[r.kind] += 1
    _write_json(out / "anomalies.json", {
        "config_hash": chash, "thresholds": thresholds, "c": args.c,
        "counts": counts, "reports": [r.to_dict() for r in reports],
    })
    summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    print(f"anomalies: {summary} [config {chash}]")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    dataset = _load_cohort(out)
    comps, comp_docs = {}, {}
    for kind in _kinds(args.score):
        path = out / f"components_{kind}.json"
        if path.exists():
            raw = _read_json(path)
            comp_docs[kind] = raw
            comps[kind] = lowerbound.components_from_json(raw)
    if not comps:
        raise MissingArtifact(
            f"no components_*.json under {out}; run `audit reconstruct` first"
        )
    config = {"verb": "report", "score": sorted(comps)}
    chash = _hash_config(config)
    plots = out / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name: str, fig: Optional[svgplot.Figure]) -> None:
        if fig is None:
            return
        _write_svg(plots / name, fig, chash)
        written.append(name)

    for kind, comp in sorted(comps.items()):
        emit(f"scatter_age_{kind}.svg", _scatter_age_figure(dataset, kind, comp))
        emit(f"assumption_counts_{kind}.svg", _assumption_figure(dataset, kind))
        emit(f"support_{kind}.svg", _support_figure(dataset, kind))
        emit(f"remainder_history_{kind}.svg", _remainder_figure(dataset, kind, comp))
        pred_path = out / f"predictions_{kind}.csv"
        if pred_path.exists():
            emit(f"prediction_{kind}.svg", _prediction_figure(_read_csv(pred_path), kind))
    emit("age_first_arrest.svg", _age_first_figure(dataset))
    dist = fairness.age_distribution_by_race(dataset)
    emit("age_hist.svg", _age_hist_figure(dist))

    probabilities = None
    if (out / "probabilities.json").exists():
        probabilities = _read_json(out / "probabilities.json")["probabilities"]
        emit("prob_decile.svg", _prob_decile_figure(dataset, probabilities))
    rates_rows = None
    if (out / "rates.json").exists():
        rates_rows = _read_json(out / "rates.json")["rows"]
        for model in ("age", "decile"):
            for kind in sorted(comps):
                fig = _rates_figure(rates_rows, model, kind)
                emit(f"rates_{model}_{kind}.svg", fig)

    doc = {
        "config_hash": chash,
        "cohort": {
            "n_persons": len(dataset.persons),
            "n_assessments": len(dataset.assessments),
            "end_date": dataset.end_date.isoformat(),
        },
        "components": comp_docs,
        "recidivism_vs_age": fairness.recid_probability_vs_age(dataset),
        "age_distribution": dist,
        "plots": sorted(written),
    }
    for kind in sorted(comps):
        abl_path = out / f"ablation_{kind}.json"
        if abl_path.exists():
            doc.setdefault("ablation", {})[kind] = _read_json(abl_path)
    if rates_rows is not None:
        doc["rates"] = rates_rows
    if (out / "logistic.json").exists():
        doc["logistic"] = _read_json(out / "logistic.json")
    if (out / "anomalies.json").exists():
        anom = _read_json(out / "anomalies.json")
        doc["anomalies"] = {"counts": anom["counts"], "thresholds": anom["thresholds"]}
    if probabilities is not None:
        doc["n_probabilities"] = len(probabilities)
    _write_json(out / "report.json", doc)
    print(f"report: {len(written)} plots, report.json with "
          f"{len(doc)} sections -> {out} [config {chash}]")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="audit", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--out", default="audit_out",
                       help="working directory shared by all verbs (default: audit_out)")
        return p

    p = add("synth", cmd_synth, "generate a synthetic cohort with known ground truth")
    p.add_argument("--n", type=int, default=1000, help="number of persons")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.15,
                   help="sd of raw-score noise (default 0.15)")
    p.add_argument("--noise-grid", type=float, default=0.0,
                   help="snap noise to this grid; 0 disables")

    p = add("ingest", cmd_ingest, "normalize raw cohort CSVs into the working directory")
    p.add_argument("--input", required=True,
                   help="directory with persons/charges/events/assessments CSVs")
    p.add_argument("--pretrial-only", default=True, action=argparse.BooleanOptionalAction,
                   help="keep only pretrial-stage assessments")

    p = add("features", cmd_features, "export per-assessment history feature matrices")
    p.add_argument("--score", choices=(*SCORE_KINDS, "both"), default="both")

    p = add("reconstruct", cmd_reconstruct, "rebuild the age component from scatter lower bounds")
    p.add_argument("--score", choices=(*SCORE_KINDS, "both"), default="both")
    p.add_argument("--K", type=int, default=None,
                   help="spline segments (default: 3 general / 4 violent)")
    p.add_argument("--c", type=float, default=0.05,
                   help="age-outlier margin below the polynomial bound")

    p = add("residuals", cmd_residuals, "ablation regressions on what remains after the age bound")
    p.add_argument("--score", choices=(*SCORE_KINDS, "both"), default="both")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--families", default=",".join(residuals.FAMILIES),
                   help="comma-separated model families (default: all four)")
    p.add_argument("--pin-grids", action="store_true",
                   help="fixed mid-grid hyperparameters instead of the full grid search")

    p = add("fairness", cmd_fairness, "group confusion rates and the score-category logistic")
    p.add_argument("--score", choices=(*SCORE_KINDS, "both"), default="both")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decile-cut", type=int, default=4,
                   help="deciles above this predict recidivism")
    p.add_argument("--age-cutoff", type=int, default=24,
                   help="ages at or below this predict recidivism")

    p = add("anomalies", cmd_anomalies, "flag individual assessments worth manual review")
    p.add_argument("--score", choices=(*SCORE_KINDS, "both"), default="both")
    p.add_argument("--c", type=float, default=0.05)
    p.add_argument("--thresholds", default=None,
                   help="JSON file overriding decile_max/violence_min/arrests_min")

    p = add("report", cmd_report, "bundle artifacts into report.json and SVG plots")
    p.add_argument("--score", choices=(*SCORE_KINDS, "both"), default="both")

    return parser


class _OncePerMessage(logging.Filter):
    """Model-fitting warnings repeat per fold; show each distinct one once."""

    def __init__(self):
        super().__init__()
        self._seen: set[tuple[str, str]] = set()

    def filter(self, record: logging.LogRecord) -> bool:
        key = (record.name, record.getMessage())
        if key in self._seen:
            return False
        self._seen.add(key)
        return True


def main(argv: Optional[Sequence[str]] = None) -> int:
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler.addFilter(_OncePerMessage())
    root = logging.getLogger()
    if not root.handlers:
        root.addHandler(handler)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except MissingArtifact as exc:
        print(f"audit: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (IngestError, lowerbound.FitError, ValueError) as exc:
        print(f"audit {args.verb}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
