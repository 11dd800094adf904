"""Reconstruct the additive age component of a raw score from scatter lower bounds.

The two-stage procedure: fit a polynomial lower bound to the full score-vs-age
scatter by linear programming (minimize total vertical gap subject to the
curve lying at or below every point), drop "age outliers" more than c below
it, then fit a continuous piecewise-linear spline lower bound to the
zero-history candidate subset.

The spline fitter searches partitions of the sorted distinct ages: a segment
boundary sits between two consecutive observed ages, each segment's line is
fitted in closed form (a weighted lower tangent of the per-age minima), and
adjacent lines must cross inside the boundary gap so that their intersection
is the knot. That makes the returned spline exactly continuous and lets knots
land between integer ages, which is what noiseless recovery requires. A
coupled LP handles the rare partitions whose independently fitted lines do
not cross inside their gaps.

Also fits g_viol_hist: the nondecreasing lower envelope of score remainders
as a function of the violence-history sum, anchored at g(0) = 0.
"""

from __future__ import annotations

import itertools
import logging
from bisect import bisect_left
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import linprog

from .records import CohortDataset, age_at
from .subscales import compute_subscales, sums as subscale_sums

log = logging.getLogger(__name__)

AGE_MIN = 16.0
AGE_MAX = 100.0
TOL_CONT = 0.05     # continuity tolerance for directly-supplied spline pieces
EPS_FIT = 1e-9      # numerical slack on the at-or-below invariant
SLOPE_MAX = -1e-8   # slopes must be strictly negative
MIN_INTERIOR_WIDTH = 4.0  # years between interior knot positions during search

DEFAULT_DEGREE = {"general": 2, "violent": 4}
DEFAULT_SEGMENTS = {"general": 3, "violent": 4}


class FitError(ValueError):
    """Raised when a lower-bound fit is infeasible or degenerate."""


@dataclass(frozen=True)
class ScatterPoint:
    age: float
    raw_score: float
    assessment_id: str


@dataclass(frozen=True)
class PolyBound:
    """Polynomial lower bound; coefficients ascending (c0 + c1*x + ...)."""

    degree: int
    coefficients: tuple[float, ...]

    def evaluate(self, age):
        return npoly.polyval(age, np.asarray(self.coefficients))


@dataclass(frozen=True)
class AgeSpline:
    """Continuous piecewise-linear decreasing function of age.

    K segments need K-1 ascending knots; segment j is slope[j]*age +
    intercept[j]. Evaluation at a knot uses the left segment. Directly
    supplied intercepts may be discontinuous up to TOL_CONT (rounded
    published pieces); fitted splines are continuous by construction.
    """

    knots: tuple[float, ...]
    slopes: tuple[float, ...]
    intercepts: tuple[float, ...]

    def __post_init__(self):
        k = len(self.slopes)
        if k < 1 or len(self.intercepts) != k or len(self.knots) != k - 1:
            raise ValueError("need K slopes, K intercepts, K-1 knots")
        if any(t1 >= t2 for t1, t2 in zip(self.knots, self.knots[1:])):
            raise ValueError("knots must be strictly ascending")
        if any(s >= 0 for s in self.slopes):
            raise ValueError("slopes must be strictly negative")
        for j, t in enumerate(self.knots):
            jump = (self.slopes[j] * t + self.intercepts[j]) - (
                self.slopes[j + 1] * t + self.intercepts[j + 1]
            )
            if abs(jump) > TOL_CONT:
                raise ValueError(f"discontinuity {jump:.4f} at knot {t} exceeds {TOL_CONT}")

    @classmethod
    def from_continuous(cls, knots: Sequence[float], slopes: Sequence[float], intercept0: float):
        """Build an exactly continuous spline from knots, slopes, and the first intercept."""
        intercepts = [intercept0]
        for j, t in enumerate(knots):
            intercepts.append(intercepts[j] + (slopes[j] - slopes[j + 1]) * t)
        return cls(tuple(knots), tuple(slopes), tuple(intercepts))

    def segment_index(self, age: float) -> int:
        return bisect_left(self.knots, age)

    def evaluate(self, age: float) -> float:
        if not AGE_MIN <= age <= AGE_MAX:
            raise ValueError(f"age {age} outside supported range [{AGE_MIN}, {AGE_MAX}]")
        j = self.segment_index(age)
        return self.slopes[j] * age + self.intercepts[j]

    def evaluate_many(self, ages) -> np.ndarray:
        ages = np.asarray(ages, dtype=float)
        if np.any(ages < AGE_MIN) or np.any(ages > AGE_MAX):
            raise ValueError("ages outside supported range")
        idx = np.searchsorted(self.knots, ages, side="left")
        slopes = np.asarray(self.slopes)[idx]
        intercepts = np.asarray(self.intercepts)[idx]
        return slopes * ages + intercepts


@dataclass(frozen=True)
class CandidateSet:
    """Zero-history, age-equals-first-arrest scatter points, partitioned."""

    points: tuple[ScatterPoint, ...]
    inliers: tuple[ScatterPoint, ...]
    outliers: tuple[ScatterPoint, ...]


@dataclass(frozen=True)
class StepFunction:
    """Nondecreasing piecewise-linear envelope over integer subscale sums."""

    breakpoints: tuple[int, ...]
    values: tuple[float, ...]
    flattened_levels: tuple[int, ...] = ()
    anchor_gap: float = 0.0  # observed minimum at sum 0 (envelope pins 0 there)

    def __post_init__(self):
        if len(self.breakpoints) != len(self.values) or not self.breakpoints:
            raise ValueError("breakpoints and values must align and be nonempty")
        if self.breakpoints[0] != 0 or self.values[0] != 0.0:
            raise ValueError("envelope must be anchored at g(0)=0")
        if any(b1 >= b2 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must ascend")
        if any(v1 > v2 + 1e-12 for v1, v2 in zip(self.values, self.values[1:])):
            raise ValueError("envelope must be nondecreasing")

    def evaluate(self, s: float) -> float:
        if s < 0:
            raise ValueError("subscale sums are nonnegative")
        bp = self.breakpoints
        if s >= bp[-1]:
            return self.values[-1]
        j = bisect_left(bp, s)
        if bp[j] == s:
            return self.values[j]
        # linear interpolation inside [bp[j-1], bp[j]]
        lo, hi = bp[j - 1], bp[j]
        w = (s - lo) / (hi - lo)
        return (1 - w) * self.values[j - 1] + w * self.values[j]


class Partition(NamedTuple):
    inliers: tuple[ScatterPoint, ...]
    outliers: tuple[ScatterPoint, ...]


# ---------------------------------------------------------------------------
# Candidate selection


def _zero_history_fields(score_kind: str):
    if score_kind == "general":
        return lambda vec: all(v == 0 for v in vec.criminal_involvement())
    if score_kind == "violent":
        return lambda vec: (
            all(v == 0 for v in vec.violence_history())
            and all(v == 0 for v in vec.noncompliance())
        )
    raise ValueError(f"unknown score_kind {score_kind!r}")


def _candidate_points(dataset: CohortDataset, score_kind: str) -> list[ScatterPoint]:
    is_zero = _zero_history_fields(score_kind)
    points = []
    for a in dataset.assessments:
        if a.score_kind != score_kind:
            continue
        person = dataset.persons_by_id[a.person_id]
        vec = compute_subscales(person, a, dataset)
        if vec is None or not is_zero(vec):
            continue
        charges = [
            ch for ch in dataset.charges_by_person.get(a.person_id, ())
            if ch.charge_date <= a.screening_date
        ]
        if not charges:
            continue
        first = min(ch.charge_date for ch in charges)
        age = age_at(person, a.screening_date)
        if age_at(person, first) != age:
            continue
        points.append(ScatterPoint(float(age), a.raw_score, a.assessment_id))
    return points


def select_candidates(dataset: CohortDataset, score_kind: str) -> CandidateSet:
    """Scatter points satisfying the zero-history, first-arrest-at-this-age filter."""
    points = _candidate_points(dataset, score_kind)
    if not points:
        raise FitError(
            f"no {score_kind} candidates: the minimal-score-at-each-age assumption "
            "cannot be checked on this cohort"
        )
    pts = tuple(sorted(points, key=lambda p: (p.age, p.raw_score, p.assessment_id)))
    return CandidateSet(points=pts, inliers=pts, outliers=())


def population_scatter(dataset: CohortDataset, score_kind: str) -> tuple[ScatterPoint, ...]:
    """Every assessment of the given kind as an (age, raw) point."""
    pts = [
        ScatterPoint(
            float(age_at(dataset.persons_by_id[a.person_id], a.screening_date)),
            a.raw_score,
            a.assessment_id,
        )
        for a in dataset.assessments
        if a.score_kind == score_kind
    ]
    return tuple(sorted(pts, key=lambda p: (p.age, p.raw_score, p.assessment_id)))


def data_assumption_counts(dataset: CohortDataset, score_kind: str) -> dict[int, int]:
    """Per integer age, how many candidates support the lower-bound assumption."""
    ages = [
        age_at(dataset.persons_by_id[a.person_id], a.screening_date)
        for a in dataset.assessments
        if a.score_kind == score_kind
    ]
    counts = {age: 0 for age in range(min(ages), max(ages) + 1)} if ages else {}
    for p in _candidate_points(dataset, score_kind):
        counts[int(p.age)] = counts.get(int(p.age), 0) + 1
    return counts


def support_summary(dataset: CohortDataset, score_kind: str) -> dict[int, tuple[float, int]]:
    """Per age: minimum candidate raw score and how many candidates attain it (ties within 1e-9)."""
    by_age: dict[int, list[float]] = {}
    for p in _candidate_points(dataset, score_kind):
        by_age.setdefault(int(p.age), []).append(p.raw_score)
    out = {}
    for age, scores in sorted(by_age.items()):
        lo = min(scores)
        out[age] = (lo, sum(1 for s in scores if s <= lo + 1e-9))
    return out


# ---------------------------------------------------------------------------
# Stage 1: polynomial lower bound


def fit_poly_lower_bound(points: Sequence[ScatterPoint], degree: int) -> PolyBound:
    """LP fit: minimize total gap subject to the polynomial lying at or below every point.

    Solved in a shifted-and-scaled basis for conditioning, converted back to
    plain ascending coefficients in age, then shifted down by any residual
    conversion slack so the at-or-below invariant holds on the input points.
    """
    if degree < 0:
        raise FitError("degree must be nonnegative")
    ages = np.array([p.age for p in points], dtype=float)
    ys = np.array([p.raw_score for p in points], dtype=float)
    distinct = np.unique(ages)
    if distinct.size < degree + 1:
        raise FitError(
            f"need at least {degree + 1} distinct ages for degree {degree}, got {distinct.size}"
        )

    mid = (distinct[0] + distinct[-1]) / 2.0
    half = (distinct[-1] - distinct[0]) / 2.0
    z = (ages - mid) / half

    # Constraints only bind at each age's minimum score; the objective needs
    # the full moment sums.
    powers = np.vander(z, degree + 1, increasing=True)
    objective = -powers.sum(axis=0)  # maximize sum of fitted values

    zmin: dict[float, float] = {}
    for zi, yi in zip(z, ys):
        if zi not in zmin or yi < zmin[zi]:
            zmin[zi] = yi
    zs = np.array(sorted(zmin))
    A_ub = np.vander(zs, degree + 1, increasing=True)
    b_ub = np.array([zmin[zi] for zi in zs])

    res = linprog(objective, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * (degree + 1), method="highs")
    if res.status != 0:
        raise FitError(f"lower-bound LP failed: {res.message}")

    in_age = npoly.Polynomial(res.x)(npoly.Polynomial([-mid / half, 1.0 / half]))
    coefs = np.zeros(degree + 1)
    coefs[: len(in_age.coef)] = in_age.coef
    violation = float(np.max(npoly.polyval(ages, coefs) - ys))
    if violation > 0:
        coefs[0] -= violation
    return PolyBound(degree=degree, coefficients=tuple(float(c) for c in coefs))


def partition_age_outliers(
    points: Sequence[ScatterPoint], bound, c: float = 0.05
) -> Partition:
    """Split points at the bound: outlier iff raw < bound(age) - c (strict)."""
    inliers, outliers = [], []
    for p in points:
        if p.raw_score < bound.evaluate(p.age) - c:
            outliers.append(p)
        else:
            inliers.append(p)
    return Partition(tuple(inliers), tuple(outliers))


# ---------------------------------------------------------------------------
# Stage 2: spline lower bound with free knots


class _Aggregate(NamedTuple):
    ages: np.ndarray    # distinct sorted ages
    minima: np.ndarray  # per-age minimum score
    weights: np.ndarray  # per-age point count
    sums: np.ndarray    # per-age score sum (for the gap objective)


def _aggregate(points: Sequence[ScatterPoint]) -> _Aggregate:
    buckets: dict[float, list[float]] = {}
    for p in points:
        buckets.setdefault(float(p.age), []).append(p.raw_score)
    ages = np.array(sorted(buckets))
    minima = np.array([min(buckets[a]) for a in ages])
    weights = np.array([len(buckets[a]) for a in ages], dtype=float)
    sums = np.array([sum(buckets[a]) for a in ages])
    return _Aggregate(ages, minima, weights, sums)


def _lower_hull(xs: np.ndarray, ys: np.ndarray) -> list[int]:
    """Indices of the strict lower convex hull of (xs, ys), xs ascending."""
    hull: list[int] = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            # pop k when it lies on or above the segment j->i
            if (ys[k] - ys[j]) * (xs[i] - xs[j]) >= (ys[i] - ys[j]) * (xs[k] - xs[j]):
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def _block_line(agg: _Aggregate, lo: int, hi: int, slope_max: float) -> tuple[float, float]:
    """Best line for ages[lo..hi] (inclusive): maximize weighted sum of fitted
    values subject to line <= per-age minima and slope <= slope_max.

    The optimum is the weighted lower tangent: the hull edge spanning the
    weighted mean age, or the slope_max boundary when that edge is too flat.
    """
    xs = agg.ages[lo:hi + 1]
    ms = agg.minima[lo:hi + 1]
    ws = agg.weights[lo:hi + 1]
    mean_age = float(np.dot(ws, xs) / ws.sum())

    hull = _lower_hull(xs, ms)
    alpha = None
    if len(hull) == 1:
        alpha = slope_max
    else:
        for a_idx, b_idx in zip(hull, hull[1:]):
            if xs[a_idx] <= mean_age <= xs[b_idx]:
                alpha = (ms[b_idx] - ms[a_idx]) / (xs[b_idx] - xs[a_idx])
                break
        if alpha is None:
            # mean age outside hull x-range cannot happen (hull spans all xs)
            raise AssertionError("hull does not span the weighted mean age")
    if alpha > slope_max:
        alpha = slope_max
    beta = float(np.min(ms - alpha * xs))
    return float(alpha), beta


def _block_gap(agg: _Aggregate, lo: int, hi: int, alpha: float, beta: float) -> float:
    xs = agg.ages[lo:hi + 1]
    ws = agg.weights[lo:hi + 1]
    return float(agg.sums[lo:hi + 1].sum() - np.dot(ws, alpha * xs + beta))


def _enumerate_partitions(ages: np.ndarray, k_segments: int, min_interior: float):
    """Yield tuples of boundary indices (boundary i splits after ages[i]).

    Every block needs >= 2 distinct ages; interior boundary positions
    (midpoints of their age gaps) must be >= min_interior years apart. End
    segments are exempt from the width rule so short first/last pieces
    remain reachable.
    """
    m = len(ages)
    nominal = (ages[:-1] + ages[1:]) / 2.0

    def rec(start_idx: int, chosen: list[int]):
        blocks_left = k_segments - len(chosen)
        if blocks_left == 1:
            if m - start_idx >= 2:
                yield tuple(chosen)
            return
        # boundary index b: current block = ages[start_idx..b], needs >= 2 ages;
        # the ages after b must still hold blocks_left-1 blocks of >= 2 each
        for b in range(start_idx + 1, m - 1):
            if m - 1 - b < 2 * (blocks_left - 1):
                break
            if chosen and nominal[b] - nominal[chosen[-1]] < min_interior:
                # consecutive boundaries sandwich an interior segment, which
                # must be at least min_interior years wide; end segments are
                # exempt so short first/last pieces stay reachable
                continue
            yield from rec(b + 1, chosen + [b])

    yield from rec(0, [])


def _crossing_ok(alpha1, beta1, alpha2, beta2, u, v, tol=1e-9) -> bool:
    du = (alpha1 * u + beta1) - (alpha2 * u + beta2)
    dv = (alpha1 * v + beta1) - (alpha2 * v + beta2)
    return (du >= -tol and dv <= tol) or (du <= tol and dv >= -tol)


def _knot_from_lines(alpha1, beta1, alpha2, beta2, u, v) -> float:
    if abs(alpha1 - alpha2) < 1e-14:
        return (u + v) / 2.0
    t = (beta2 - beta1) / (alpha1 - alpha2)
    return float(min(max(t, u), v))


def _coupled_lp(
    agg: _Aggregate, bounds_idx: tuple[int, ...], orientations: tuple[int, ...], slope_max: float
) -> Optional[tuple[np.ndarray, float]]:
    """LP over all segment lines jointly, with crossing constraints per gap.

    orientation +1 at a gap means the left line starts above and ends below
    (convex kink); -1 is the reverse. Returns (x, gap) or None if infeasible.
    """
    k = len(bounds_idx) + 1
    blocks = []
    starts = [0] + [b + 1 for b in bounds_idx]
    ends = list(bounds_idx) + [len(agg.ages) - 1]
    for s, e in zip(starts, ends):
        blocks.append((s, e))

    n_var = 2 * k
    rows, rhs = [], []
    obj = np.zeros(n_var)
    for j, (s, e) in enumerate(blocks):
        xs = agg.ages[s:e + 1]
        ws = agg.weights[s:e + 1]
        obj[2 * j] -= float(np.dot(ws, xs))
        obj[2 * j + 1] -= float(ws.sum())
        for x, mval in zip(xs, agg.minima[s:e + 1]):
            row = np.zeros(n_var)
            row[2 * j] = x
            row[2 * j + 1] = 1.0
            rows.append(row)
            rhs.append(mval)
    for gi, b in enumerate(bounds_idx):
        u, v = agg.ages[b], agg.ages[b + 1]
        sgn = orientations[gi]
        j = gi
        for x, s in ((u, -sgn), (v, sgn)):
            row = np.zeros(n_var)
            row[2 * j] = s * x
            row[2 * j + 1] = s
            row[2 * (j + 1)] = -s * x
            row[2 * (j + 1) + 1] = -s
            rows.append(row)
            rhs.append(0.0)

    var_bounds = []
    for _ in range(k):
        var_bounds.extend([(None, slope_max), (None, None)])
    res = linprog(obj, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=var_bounds, method="highs")
    if res.status != 0:
        return None
    total = float(agg.sums.sum())
    gap = total + float(res.fun)  # res.fun = -sum of fitted values
    return res.x, gap


def fit_spline_lower_bound(
    points: Sequence[ScatterPoint],
    k_segments: int,
    min_interior_width: float = MIN_INTERIOR_WIDTH,
    slope_max: float = SLOPE_MAX,
) -> AgeSpline:
    """Continuous K-segment piecewise-linear lower bound minimizing total gap.

    Exhaustively searches segment boundaries between consecutive distinct
    ages. Per partition, each segment line is fitted independently in closed
    form; when the independent lines already cross inside every boundary gap
    the partition is solved exactly, otherwise a coupled LP with crossing
    constraints runs for each kink-orientation pattern. Partitions are
    processed in ascending order of their independent-fit gap, which is a
    lower bound on the achievable gap, so the search prunes hard. Ties pick
    the lexicographically smallest knot vector.
    """
    if k_segments < 1:
        raise FitError("need at least one segment")
    agg = _aggregate(points)
    m = len(agg.ages)
    if m < 2 * k_segments:
        raise FitError(f"need >= {2 * k_segments} distinct ages for {k_segments} segments, got {m}")

    if k_segments == 1:
        alpha, beta = _block_line(agg, 0, m - 1, slope_max)
        return AgeSpline(knots=(), slopes=(alpha,), intercepts=(beta,))

    block_cache: dict[tuple[int, int], tuple[float, float, float]] = {}

    def block(lo: int, hi: int) -> tuple[float, float, float]:
        key = (lo, hi)
        if key not in block_cache:
            alpha, beta = _block_line(agg, lo, hi, slope_max)
            block_cache[key] = (alpha, beta, _block_gap(agg, lo, hi, alpha, beta))
        return block_cache[key]

    scored = []
    for bounds_idx in _enumerate_partitions(agg.ages, k_segments, min_interior_width):
        starts = [0] + [b + 1 for b in bounds_idx]
        ends = list(bounds_idx) + [m - 1]
        lines = [block(s, e) for s, e in zip(starts, ends)]
        scored.append((sum(l[2] for l in lines), bounds_idx, lines))
    if not scored:
        raise FitError(f"no feasible partition into {k_segments} segments")
    scored.sort(key=lambda t: (t[0], t[1]))

    best: Optional[tuple[float, tuple, list]] = None  # gap, knots, lines
    for lower_gap, bounds_idx, lines in scored:
        if best is not None and lower_gap > best[0] + 1e-12:
            break
        ok = all(
            _crossing_ok(*lines[j][:2], *lines[j + 1][:2], agg.ages[b], agg.ages[b + 1])
            for j, b in enumerate(bounds_idx)
        )
        if ok:
            gap = lower_gap
            solution = [(l[0], l[1]) for l in lines]
        else:
            gap, solution = np.inf, None
            for pattern in itertools.product((1, -1), repeat=len(bounds_idx)):
                out = _coupled_lp(agg, bounds_idx, pattern, slope_max)
                if out is None:
                    continue
                x, this_gap = out
                if this_gap < gap - 1e-12:
                    gap = this_gap
                    solution = [(x[2 * j], x[2 * j + 1]) for j in range(k_segments)]
            if solution is None:
                continue
        knots = tuple(
            _knot_from_lines(*solution[j], *solution[j + 1], agg.ages[b], agg.ages[b + 1])
            for j, b in enumerate(bounds_idx)
        )
        if best is None or gap < best[0] - 1e-12 or (abs(gap - best[0]) <= 1e-12 and knots < best[1]):
            best = (gap, knots, solution)

    if best is None:
        raise FitError(f"no feasible spline with {k_segments} segments")
    _, knots, solution = best
    return AgeSpline(
        knots=knots,
        slopes=tuple(a for a, _ in solution),
        intercepts=tuple(b for _, b in solution),
    )


def choose_segments(
    points: Sequence[ScatterPoint], k_max: int = 6, **fit_kw
) -> tuple[int, dict[int, float]]:
    """Pick a segment count by the one-standard-error rule on total gap.

    Fits K = 1..k_max, estimates the standard error of the best K's mean
    per-point gap, and returns the smallest K whose gap is within one SE of
    the best. Not the default path; reconstruction takes K explicitly.
    """
    agg = _aggregate(points)
    n = int(agg.weights.sum())
    gaps: dict[int, float] = {}
    per_point: dict[int, np.ndarray] = {}
    for k in range(1, k_max + 1):
        if len(agg.ages) < 2 * k:
            break
        spline = fit_spline_lower_bound(points, k, **fit_kw)
        fitted = spline.evaluate_many(np.array([p.age for p in points]))
        reslim = np.array([p.raw_score for p in points]) - fitted
        gaps[k] = float(reslim.sum())
        per_point[k] = reslim
    if not gaps:
        raise FitError("no feasible segment count")
    k_best = min(gaps, key=lambda k: gaps[k])
    se = float(per_point[k_best].std(ddof=1) / np.sqrt(n)) * n  # SE of the total
    for k in sorted(gaps):
        if gaps[k] <= gaps[k_best] + se:
            return k, gaps
    return k_best, gaps


# ---------------------------------------------------------------------------
# g_viol_hist


def fit_violence_history_step(pairs: Iterable[tuple[int, float]]) -> StepFunction:
    """Nondecreasing lower envelope of remainders per violence-history sum.

    Takes the minimum remainder at each integer sum, forms the largest
    nondecreasing function lying at or below those minima, anchors g(0)=0,
    and clips below zero (subscale contributions are nonnegative). Levels
    where the envelope departs from the raw minimum are reported as
    flattened.
    """
    levels: dict[int, float] = {}
    for s, r in pairs:
        s = int(s)
        if s not in levels or r < levels[s]:
            levels[s] = float(r)
    if not levels:
        raise FitError("no remainders supplied")
    if 0 not in levels:
        raise FitError("no zero-sum individuals: cannot anchor g(0)=0")

    sums_sorted = sorted(levels)
    minima = [levels[s] for s in sums_sorted]
    envelope = list(minima)
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = min(envelope[i], envelope[i + 1])
    values = [0.0] + [max(v, 0.0) for v in envelope[1:]]
    flattened = tuple(
        s for s, m, v in zip(sums_sorted, minima, values) if s != 0 and abs(v - m) > 1e-12
    )
    return StepFunction(
        breakpoints=tuple(sums_sorted),
        values=tuple(values),
        flattened_levels=flattened,
        anchor_gap=minima[0],
    )


# ---------------------------------------------------------------------------
# Robustness check and serialization


def subsample_robustness(
    points: Sequence[ScatterPoint],
    k_segments: int,
    cap: int = 150,
    seed: int = 0,
    **fit_kw,
) -> dict:
    """Refit on min(cap, n) points per age, sampled without replacement.

    Reports the maximum absolute deviation between the full fit and the
    subsampled fit over integer ages 18..70 (clipped to the data range).
    """
    full = fit_spline_lower_bound(points, k_segments, **fit_kw)
    rng = np.random.default_rng(seed)
    by_age: dict[float, list[ScatterPoint]] = {}
    for p in points:
        by_age.setdefault(float(p.age), []).append(p)
    sampled: list[ScatterPoint] = []
    for age in sorted(by_age):
        group = sorted(by_age[age], key=lambda p: p.assessment_id)
        if len(group) > cap:
            idx = rng.choice(len(group), size=cap, replace=False)
            group = [group[i] for i in sorted(idx)]
        sampled.extend(group)
    sub = fit_spline_lower_bound(sampled, k_segments, **fit_kw)
    ages = np.arange(max(18, int(min(by_age))), min(70, int(max(by_age))) + 1, dtype=float)
    dev = float(np.max(np.abs(full.evaluate_many(ages) - sub.evaluate_many(ages))))
    return {"original": full, "subsampled": sub, "max_abs_deviation": dev}


def components_to_json(
    score_kind: str,
    poly: PolyBound,
    spline: AgeSpline,
    c: float,
    outlier_ids: Sequence[str],
    g_viol_hist: Optional[StepFunction] = None,
) -> dict:
    doc = {
        "score_kind": score_kind,
        "poly": {"degree": poly.degree, "coeffs": list(poly.coefficients)},
        "spline": {
            "knots": list(spline.knots),
            "slopes": list(spline.slopes),
            "intercepts": list(spline.intercepts),
        },
        "c": c,
        "outlier_ids": sorted(outlier_ids),
        "g_viol_hist": None,
    }
    if g_viol_hist is not None:
        doc["g_viol_hist"] = {
            "breakpoints": list(g_viol_hist.breakpoints),
            "values": list(g_viol_hist.values),
            "flattened_levels": list(g_viol_hist.flattened_levels),
            "anchor_gap": g_viol_hist.anchor_gap,
        }
    return doc


def components_from_json(doc: dict) -> dict:
    out = {
        "score_kind": doc["score_kind"],
        "poly": PolyBound(doc["poly"]["degree"], tuple(doc["poly"]["coeffs"])),
        "spline": AgeSpline(
            tuple(doc["spline"]["knots"]),
            tuple(doc["spline"]["slopes"]),
            tuple(doc["spline"]["intercepts"]),
        ),
        "c": doc["c"],
        "outlier_ids": tuple(doc["outlier_ids"]),
        "g_viol_hist": None,
    }
    if doc.get("g_viol_hist"):
        g = doc["g_viol_hist"]
        out["g_viol_hist"] = StepFunction(
            tuple(g["breakpoints"]), tuple(g["values"]),
            tuple(g.get("flattened_levels", ())), g.get("anchor_gap", 0.0),
        )
    return out


@dataclass(frozen=True)
class Reconstruction:
    """Everything the two-stage procedure produces for one score kind."""

    score_kind: str
    poly: PolyBound
    candidates: CandidateSet
    spline: AgeSpline
    c: float
    g_viol_hist: Optional[StepFunction] = None


def reconstruct_age_component(
    dataset: CohortDataset,
    score_kind: str,
    k_segments: Optional[int] = None,
    degree: Optional[int] = None,
    c: float = 0.05,
    fit_g: Optional[bool] = None,
) -> Reconstruction:
    """Run the full two-stage reconstruction for one score kind.

    Stage 1 fits the polynomial to the whole population scatter and marks
    candidate points more than c below it as outliers. Stage 2 fits the
    spline to the surviving candidates. For the violent score the
    violence-history envelope g is fitted to spline remainders of the whole
    (non-outlier) population by default.
    """
    degree = DEFAULT_DEGREE[score_kind] if degree is None else degree
    k_segments = DEFAULT_SEGMENTS[score_kind] if k_segments is None else k_segments
    fit_g = (score_kind == "violent") if fit_g is None else fit_g

    scatter = population_scatter(dataset, score_kind)
    poly = fit_poly_lower_bound(scatter, degree)
    selected = select_candidates(dataset, score_kind)
    inliers, outliers = partition_age_outliers(selected.points, poly, c)
    if not inliers:
        raise FitError("every candidate was marked an age outlier")
    candidates = CandidateSet(points=selected.points, inliers=inliers, outliers=outliers)
    spline = fit_spline_lower_bound(inliers, k_segments)

    g = None
    if fit_g:
        pop_inliers, _ = partition_age_outliers(scatter, poly, c)
        ok_ids = {p.assessment_id for p in pop_inliers}
        pairs = []
        for a in dataset.assessments:
            if a.score_kind != score_kind or a.assessment_id not in ok_ids:
                continue
            person = dataset.persons_by_id[a.person_id]
            vec = compute_subscales(person, a, dataset)
            if vec is None:
                continue
            s = subscale_sums(vec).violence_history_sum
            age = float(age_at(person, a.screening_date))
            pairs.append((s, a.raw_score - spline.evaluate(age)))
        g = fit_violence_history_step(pairs)
    return Reconstruction(
        score_kind=score_kind, poly=poly, candidates=candidates, spline=spline, c=c, g_viol_hist=g
    )
