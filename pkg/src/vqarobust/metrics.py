"""Accuracy and robustness metrics over a (model, corruption, level) grid.

Levels run 0..5 with level 0 the clean run.  Per-pair averages (accuracy,
average error), the error-rate regression and the range scan use all six
levels; ADCE averages the five corrupted levels against level 0; first-drop
compares level 1 with level 0.

Every stored quantity is the correctly rounded value of its formula applied
to the stored quantities it is built from: sums, means, ratios and the
regression slope are evaluated in exact rational arithmetic and rounded once.
Results therefore do not depend on the order of models, corruptions or
questions, and a flat error curve gives exactly zero drop.  Undefined
first-drop / range cells (clean error of zero) are masked in ``numpy.ma``
arrays and skipped by aggregation.
"""
from __future__ import annotations

import csv
import math
import re
import string
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

LEVELS = tuple(range(6))
SUB_METRICS = ("first_drop", "range", "error_rate", "average_error", "adce")
SUB_METRIC_ALIASES = {
    "f": "first_drop", "first_drop": "first_drop",
    "r": "range", "range": "range",
    "rho": "error_rate", "error_rate": "error_rate",
    "mu": "average_error", "average_error": "average_error",
    "delta": "adce", "adce": "adce",
}
EQUAL_WEIGHTS = np.full(len(SUB_METRICS), 1.0 / len(SUB_METRICS))
WEIGHT_TOL = 1e-9


# --------------------------------------------------------------------------
# Answers and per-question accuracy
# --------------------------------------------------------------------------

_ARTICLES = {"a", "an", "the"}
_NUMBERS = {
    "zero": "0", "one": "1", "two": "2", "three": "3", "four": "4", "five": "5",
    "six": "6", "seven": "7", "eight": "8", "nine": "9", "ten": "10",
}
_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def normalize_answer(raw: str) -> str:
    text = _PUNCT.sub("", str(raw).strip().lower())
    words = [_NUMBERS.get(w, w) for w in text.split() if w not in _ARTICLES]
    return " ".join(words)


def _credit(predicted: str, human_answers: Sequence[str], normalize: bool) -> int:
    """Matching human answers, capped at 3."""
    if not human_answers:
        raise ValueError("at least one human answer is required")
    if normalize:
        predicted = normalize_answer(predicted)
        human_answers = [normalize_answer(a) for a in human_answers]
    return min(sum(1 for a in human_answers if a == predicted), 3)


def vqa_accuracy(predicted: str, human_answers: Sequence[str], normalize: bool = True) -> float:
    """``min(#matching human answers / 3, 1)``."""
    return _credit(predicted, human_answers, normalize) / 3


# --------------------------------------------------------------------------
# Grid
# --------------------------------------------------------------------------

def _q(x) -> Fraction:
    return Fraction(float(x))


def _mean(values) -> float:
    vals = [_q(v) for v in values]
    return float(sum(vals, Fraction(0)) / len(vals))


def _mean_axis(a: np.ndarray, axis: int) -> np.ndarray:
    return np.apply_along_axis(_mean, axis, np.asarray(a, dtype=np.float64))


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class EvaluationGrid:
    models: tuple[str, ...]
    corruptions: tuple[str, ...]
    accuracy: np.ndarray  # (V, C, 6)

    def __post_init__(self):
        acc = np.asarray(self.accuracy, dtype=np.float64)
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "corruptions", tuple(self.corruptions))
        expected = (len(self.models), len(self.corruptions), len(LEVELS))
        if acc.shape != expected:
            raise GridError(f"accuracy shape {acc.shape} != {expected}")
        if len(set(self.models)) != len(self.models) or len(set(self.corruptions)) != len(self.corruptions):
            raise GridError("duplicate model or corruption names")
        if not np.all(np.isfinite(acc)) or acc.min(initial=0) < 0 or acc.max(initial=0) > 1:
            raise GridError("accuracies must lie in [0, 1]")
        clean = acc[:, :, 0]
        if clean.size and not np.all(clean == clean[:, :1]):
            bad = [self.models[i] for i in np.where(~np.all(clean == clean[:, :1], axis=1))[0]]
            raise GridError(f"level-0 accuracy differs across corruptions for {bad}")
        acc.setflags(write=False)
        object.__setattr__(self, "accuracy", acc)

    @classmethod
    def from_errors(cls, models, corruptions, errors) -> "EvaluationGrid":
        return cls(models, corruptions, 1.0 - np.asarray(errors, dtype=np.float64))

    @property
    def error(self) -> np.ndarray:
        return 1.0 - self.accuracy

    def rows(self):
        for i, m in enumerate(self.models):
            for j, c in enumerate(self.corruptions):
                for lvl in LEVELS:
                    a = float(self.accuracy[i, j, lvl])
                    yield m, c, lvl, a, 1.0 - a

    def to_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "corruption", "level", "accuracy", "error"])
        for m, c, lvl, a, e in self.rows():
            writer.writerow([m, c, lvl, repr(a), repr(e)])

    @classmethod
    def from_csv(cls, fh) -> "EvaluationGrid":
        """Read a grid table; uses ``accuracy`` if present, else ``1 - error``."""
        reader = csv.DictReader(fh)
        cells: dict[tuple[str, str, int], float] = {}
        models: list[str] = []
        corruptions: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            try:
                m, c, lvl = row["model"], row["corruption"], int(row["level"])
                val = float(row["accuracy"]) if row.get("accuracy") not in (None, "") else 1.0 - float(row["error"])
            except (KeyError, TypeError, ValueError) as exc:
                raise GridError(f"line {lineno}: malformed grid row ({exc})") from exc
            if lvl not in LEVELS:
                raise GridError(f"line {lineno}: level {lvl} outside 0..5")
            if (m, c, lvl) in cells:
                raise GridError(f"line {lineno}: duplicate cell ({m}, {c}, {lvl})")
            cells[(m, c, lvl)] = val
            if m not in models:
                models.append(m)
            if c not in corruptions:
                corruptions.append(c)
        acc = np.empty((len(models), len(corruptions), len(LEVELS)))
        for i, m in enumerate(models):
            for j, c in enumerate(corruptions):
                for lvl in LEVELS:
                    if (m, c, lvl) not in cells:
                        raise GridError(f"missing cell ({m}, {c}, {lvl})")
                    acc[i, j, lvl] = cells[(m, c, lvl)]
        return cls(models, corruptions, acc)

    def select(self, models: Sequence[str] | None = None, corruptions: Sequence[str] | None = None):
        models = list(models or self.models)
        corruptions = list(corruptions or self.corruptions)
        mi = [self.models.index(m) for m in models]
        ci = [self.corruptions.index(c) for c in corruptions]
        return EvaluationGrid(models, corruptions, self.accuracy[np.ix_(mi, ci)])


def benchmark_grid() -> EvaluationGrid:
    """Published per-level errors of ViLT, BLIP, VLE and PNP on 14 corruptions."""
    with resources.files("vqarobust.data").joinpath("benchmark_errors.csv").open("r", encoding="utf-8") as fh:
        return EvaluationGrid.from_csv(fh)


@dataclass(frozen=True)
class JoinedRecord:
    model: str
    corruption: str
    level: int
    question_id: int
    human_answers: tuple[str, ...]
    prediction: str


def build_grid(records: Iterable[JoinedRecord], normalize: bool = True) -> EvaluationGrid:
    """Average per-question VQA accuracy into a grid.

    Every (model, corruption, level 0..5) cell must be present and cover the
    same question ids.
    """
    cells: dict[tuple[str, str, int], dict[int, int]] = defaultdict(dict)
    models: list[str] = []
    corruptions: list[str] = []
    for r in records:
        cell = cells[(r.model, r.corruption, int(r.level))]
        if r.question_id in cell:
            raise GridError(f"duplicate question {r.question_id} in cell ({r.model}, {r.corruption}, {r.level})")
        cell[r.question_id] = _credit(r.prediction, r.human_answers, normalize)
        if r.model not in models:
            models.append(r.model)
        if r.corruption not in corruptions:
            corruptions.append(r.corruption)
    if not cells:
        raise GridError("no records")
    reference: frozenset[int] | None = None
    acc = np.empty((len(models), len(corruptions), len(LEVELS)))
    for i, m in enumerate(models):
        for j, c in enumerate(corruptions):
            for lvl in LEVELS:
                cell = cells.get((m, c, lvl))
                if not cell:
                    raise GridError(f"missing cell ({m}, {c}, {lvl})")
                ids = frozenset(cell)
                if reference is None:
                    reference = ids
                elif ids != reference:
                    missing = sorted(reference - ids)[:5]
                    extra = sorted(ids - reference)[:5]
                    raise GridError(
                        f"cell ({m}, {c}, {lvl}) covers a different question set "
                        f"(missing {missing}, extra {extra})"
                    )
                # mean of credit / 3, rounded once
                acc[i, j, lvl] = float(Fraction(sum(cell.values()), 3 * len(cell)))
    return EvaluationGrid(models, corruptions, acc)


# --------------------------------------------------------------------------
# Accuracy metrics
# --------------------------------------------------------------------------

def base_accuracy(grid: EvaluationGrid) -> np.ndarray:
    return grid.accuracy[:, 0, 0].copy()


def average_accuracy(grid: EvaluationGrid) -> np.ndarray:
    """Severity-averaged accuracy per (model, corruption), levels 0..5."""
    return _mean_axis(grid.accuracy, 2)


def model_avg(pair_accuracy: np.ndarray) -> np.ndarray:
    return _mean_axis(pair_accuracy, 1)


def corruption_avg(pair_accuracy: np.ndarray) -> np.ndarray:
    return _mean_axis(pair_accuracy, 0)


def _rel(base, value) -> float:
    return float((_q(base) - _q(value)) / _q(base))


def relative_accuracy_drop(grid: EvaluationGrid):
    """Return ``(per pair, per model, per corruption)`` relative drops."""
    base = base_accuracy(grid)
    if np.any(base <= 0):
        bad = [m for m, b in zip(grid.models, base) if b <= 0]
        raise ZeroDivisionError(f"zero base accuracy for {bad}")
    pair = average_accuracy(grid)
    per_pair = np.array([[_rel(b, a) for a in row] for b, row in zip(base, pair)]).reshape(pair.shape)
    per_model = np.array([_rel(b, a) for b, a in zip(base, model_avg(pair))])
    total = sum((_q(b) for b in base), Fraction(0))
    per_corr = np.array([
        float(sum((_q(b) - _q(a) for b, a in zip(base, col)), Fraction(0)) / total) for col in pair.T
    ])
    return per_pair, per_model, per_corr


# --------------------------------------------------------------------------
# Severity-aggregated error metrics
# --------------------------------------------------------------------------

def _cellwise(grid: EvaluationGrid, fn) -> np.ma.MaskedArray:
    """Apply ``fn(errors) -> float | None`` to every cell; ``None`` is masked."""
    e = grid.error
    vals = np.zeros(e.shape[:2])
    mask = np.zeros(e.shape[:2], dtype=bool)
    for idx in np.ndindex(*e.shape[:2]):
        out = fn([_q(x) for x in e[idx]])
        if out is None:
            mask[idx] = True
        else:
            vals[idx] = float(out)
    return np.ma.MaskedArray(vals, mask=mask)


def _relative(num: Fraction, den: Fraction):
    # 0/0 counts as no change; x/0 is undefined
    if den == 0:
        return Fraction(0) if num == 0 else None
    return num / den


def first_drop(grid: EvaluationGrid) -> np.ma.MaskedArray:
    return _cellwise(grid, lambda e: _relative(e[1] - e[0], e[0]))


def range_of_error(grid: EvaluationGrid) -> np.ma.MaskedArray:
    return _cellwise(grid, lambda e: _relative(max(e) - min(e), min(e)))


def _slope(errors) -> Fraction:
    n = len(errors)
    sx = Fraction(n * (n - 1), 2)
    sxx = Fraction((n - 1) * n * (2 * n - 1), 6)
    sy = sum(errors, Fraction(0))
    sxy = sum((lvl * y for lvl, y in enumerate(errors)), Fraction(0))
    return (n * sxy - sx * sy) / (n * sxx - sx * sx)


def error_rate(grid: EvaluationGrid) -> np.ma.MaskedArray:
    """Least-squares slope of error against level (0..5)."""
    return _cellwise(grid, _slope)


def average_error(grid: EvaluationGrid) -> np.ma.MaskedArray:
    # complement of the mean accuracy, so that mu + A is exactly 1
    return np.ma.MaskedArray(1.0 - average_accuracy(grid))


def adce(grid: EvaluationGrid) -> np.ma.MaskedArray:
    """Mean excess error of levels 1..5 over the clean error."""
    return _cellwise(grid, lambda e: sum((x - e[0] for x in e[1:]), Fraction(0)) / (len(e) - 1))


_SUB_METRIC_FNS = {
    "first_drop": first_drop,
    "range": range_of_error,
    "error_rate": error_rate,
    "average_error": average_error,
    "adce": adce,
}


@dataclass
class SubMetricSet:
    """Raw and (optionally) min-max scaled sub-metric matrices over (model, corruption)."""

    raw: dict[str, np.ma.MaskedArray]
    scaled: dict[str, np.ma.MaskedArray] = field(default_factory=dict)

    def stacked(self, which: str = "scaled") -> list[np.ma.MaskedArray]:
        src = self.scaled if which == "scaled" else self.raw
        return [src[name] for name in SUB_METRICS]


def sub_metrics(grid: EvaluationGrid) -> SubMetricSet:
    return SubMetricSet({name: fn(grid) for name, fn in _SUB_METRIC_FNS.items()})


def _scale_one(values: np.ma.MaskedArray, name: str = "") -> np.ma.MaskedArray:
    values = np.ma.asarray(values, dtype=np.float64)
    present = values.compressed()
    if present.size == 0:
        return values.copy()
    lo, hi = present.min(), present.max()
    mask = np.ma.getmaskarray(values)
    if hi == lo:
        warnings.warn(f"degenerate min-max population for {name or 'metric'}; scaling to 0", RuntimeWarning)
        return np.ma.MaskedArray(np.zeros(values.shape), mask=mask)
    qlo, span = _q(lo), _q(hi) - _q(lo)
    data = np.ma.getdata(values)
    out = np.zeros(values.shape)
    for idx in zip(*np.nonzero(~mask)):
        out[idx] = float((_q(data[idx]) - qlo) / span)
    return np.ma.MaskedArray(out, mask=mask)


def min_max_scale(values):
    """Scale to [0, 1] over every (model, corruption) cell of the run.

    Accepts a single matrix or a :class:`SubMetricSet` (scales each member).
    """
    if isinstance(values, SubMetricSet):
        return SubMetricSet(values.raw, {k: _scale_one(v, k) for k, v in values.raw.items()})
    return _scale_one(values)


def aggregate(values: np.ma.MaskedArray, axis: str) -> tuple[np.ndarray, np.ndarray]:
    """Average a (model, corruption) matrix.

    ``axis="model"`` averages over corruptions, giving one value per model;
    ``axis="corruption"`` averages over models.  Returns the means and the
    number of undefined cells skipped for each entry.
    """
    values = np.ma.asarray(values, dtype=np.float64)
    if axis == "model":
        ax = 1
    elif axis == "corruption":
        ax = 0
    else:
        raise ValueError(f"axis must be 'model' or 'corruption', got {axis!r}")
    mask = np.ma.getmaskarray(values)
    data = np.ma.getdata(values)
    moved = np.moveaxis(data, ax, -1)
    mmask = np.moveaxis(mask, ax, -1)
    means = np.empty(moved.shape[0])
    for i in range(moved.shape[0]):
        kept = moved[i][~mmask[i]]
        means[i] = _mean(kept) if kept.size else math.nan
    return means, mmask.sum(axis=-1)


# --------------------------------------------------------------------------
# Weights and VRE
# --------------------------------------------------------------------------

def softmax_weights(preferences) -> np.ndarray:
    """Softmax over preference scores (a sequence in ``SUB_METRICS`` order or a mapping)."""
    if isinstance(preferences, Mapping):
        prefs = np.zeros(len(SUB_METRICS))
        for key, val in preferences.items():
            prefs[SUB_METRICS.index(canonical_metric(key))] = val
    else:
        prefs = np.asarray(preferences, dtype=np.float64)
    if prefs.shape != (len(SUB_METRICS),):
        raise ValueError(f"expected {len(SUB_METRICS)} preference scores, got {prefs.shape}")
    if not np.all(np.isfinite(prefs)):
        raise ValueError("preference scores must be finite")
    z = np.exp(prefs - prefs.max())
    return z / math.fsum(z)


def canonical_metric(name: str) -> str:
    try:
        return SUB_METRIC_ALIASES[name.strip().lower()]
    except KeyError:
        raise KeyError(f"unknown sub-metric {name!r}; expected one of {sorted(SUB_METRIC_ALIASES)}") from None


def check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(SUB_METRICS),):
        raise ValueError(f"expected {len(SUB_METRICS)} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    total = math.fsum(w)
    if abs(total - 1.0) > WEIGHT_TOL:
        raise ValueError(f"weights must sum to 1 (got {total!r})")
    return w


def vre(scaled: SubMetricSet, weights=EQUAL_WEIGHTS, axis: str = "model") -> np.ndarray:
    """Weighted sum of the axis-aggregated scaled sub-metrics."""
    w = check_weights(weights)
    if not scaled.scaled:
        raise ValueError("sub-metrics must be min-max scaled first")
    aggs = [aggregate(m, axis)[0] for m in scaled.stacked("scaled")]
    out = []
    for k in range(len(aggs[0])):
        terms = [(wi, agg[k]) for wi, agg in zip(w, aggs)]
        if any(math.isnan(a) for _, a in terms):
            out.append(math.nan)
        else:
            out.append(float(sum((_q(wi) * _q(a) for wi, a in terms), Fraction(0))))
    return np.array(out)


# --------------------------------------------------------------------------
# Report
# --------------------------------------------------------------------------

@dataclass
class MetricReport:
    models: tuple[str, ...]
    corruptions: tuple[str, ...]
    weights: np.ndarray
    base_accuracy: np.ndarray
    pair_accuracy: np.ndarray
    model_accuracy: np.ndarray
    corruption_accuracy: np.ndarray
    pair_rel_drop: np.ndarray
    model_rel_drop: np.ndarray
    corruption_rel_drop: np.ndarray
    sub: SubMetricSet
    model_raw: dict[str, np.ndarray]
    corruption_raw: dict[str, np.ndarray]
    model_scaled: dict[str, np.ndarray]
    corruption_scaled: dict[str, np.ndarray]
    skipped: dict[str, int]
    model_vre: np.ndarray
    corruption_vre: np.ndarray

    def to_dict(self, digits: int | None = 3) -> dict:
        def r(x):
            if isinstance(x, (float, np.floating)):
                if math.isnan(x):
                    return None
                return round(float(x), digits) if digits is not None else float(x)
            return x

        models = {}
        for i, m in enumerate(self.models):
            models[m] = {
                "base_accuracy": r(self.base_accuracy[i]),
                "average_accuracy": r(self.model_accuracy[i]),
                "relative_accuracy_drop": r(self.model_rel_drop[i]),
                "raw": {k: r(v[i]) for k, v in self.model_raw.items()},
                "scaled": {k: r(v[i]) for k, v in self.model_scaled.items()},
                "vre": r(self.model_vre[i]),
            }
        corruptions = {}
        for j, c in enumerate(self.corruptions):
            corruptions[c] = {
                "average_accuracy": r(self.corruption_accuracy[j]),
                "relative_accuracy_drop": r(self.corruption_rel_drop[j]),
                "raw": {k: r(v[j]) for k, v in self.corruption_raw.items()},
                "scaled": {k: r(v[j]) for k, v in self.corruption_scaled.items()},
                "vre": r(self.corruption_vre[j]),
            }
        return {
            "weights": dict(zip(SUB_METRICS, (float(w) for w in self.weights))),
            "undefined_cells_skipped": dict(self.skipped),
            "models": models,
            "corruptions": corruptions,
        }


def compute_report(grid: EvaluationGrid, weights=EQUAL_WEIGHTS) -> MetricReport:
    w = check_weights(weights)
    pair = average_accuracy(grid)
    rel_pair, rel_model, rel_corr = relative_accuracy_drop(grid)
    subs = min_max_scale(sub_metrics(grid))
    model_raw, corr_raw, model_scaled, corr_scaled, skipped = {}, {}, {}, {}, {}
    for name in SUB_METRICS:
        model_raw[name], skipped_v = aggregate(subs.raw[name], "model")
        corr_raw[name], _ = aggregate(subs.raw[name], "corruption")
        model_scaled[name], _ = aggregate(subs.scaled[name], "model")
        corr_scaled[name], _ = aggregate(subs.scaled[name], "corruption")
        skipped[name] = int(skipped_v.sum())
    return MetricReport(
        models=grid.models,
        corruptions=grid.corruptions,
        weights=w,
        base_accuracy=base_accuracy(grid),
        pair_accuracy=pair,
        model_accuracy=model_avg(pair),
        corruption_accuracy=corruption_avg(pair),
        pair_rel_drop=rel_pair,
        model_rel_drop=rel_model,
        corruption_rel_drop=rel_corr,
        sub=subs,
        model_raw=model_raw,
        corruption_raw=corr_raw,
        model_scaled=model_scaled,
        corruption_scaled=corr_scaled,
        skipped=skipped,
        model_vre=vre(subs, w, "model"),
        corruption_vre=vre(subs, w, "corruption"),
    )
