"""Loading VQAv2-style questions, annotations and prediction files.

Prediction files are JSON arrays of ``{"question_id": int, "answer": str}``
laid out as ``<root>/<model>/<corruption>/<level>.json``; the clean run is
``<root>/<model>/clean.json`` (or ``<model>/<corruption>/0.json``) and is
reused as level 0 of every corruption.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .metrics import LEVELS, JoinedRecord

log = logging.getLogger(__name__)

CLEAN = "clean"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class QARecord:
    question_id: int
    image_id: int
    question: str
    human_answers: tuple[str, ...] = ()
    ground_truth: str | None = None


@dataclass
class PredictionSet:
    model: str
    corruption: str
    level: int
    entries: dict[int, str]

    def __len__(self) -> int:
        return len(self.entries)


def _read_json(path) -> object:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON at offset {exc.pos}: {exc.msg}") from exc


def load_questions(path) -> list[QARecord]:
    data = _read_json(path)
    items = data.get("questions") if isinstance(data, dict) else None
    if not isinstance(items, list):
        raise DatasetError(f"{path}: expected a top-level 'questions' array")
    if not items:
        log.warning("%s: no questions", path)
    seen: set[int] = set()
    out = []
    for i, q in enumerate(items):
        try:
            qid, image_id, text = int(q["question_id"]), int(q["image_id"]), str(q["question"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: malformed question at index {i}: {exc!r}") from exc
        if qid in seen:
            raise DatasetError(f"{path}: duplicate question_id {qid}")
        seen.add(qid)
        out.append(QARecord(qid, image_id, text))
    return out


def load_annotations(path) -> dict[int, tuple[tuple[str, ...], str | None]]:
    """question_id -> (human answers verbatim, multiple-choice answer)."""
    data = _read_json(path)
    items = data.get("annotations") if isinstance(data, dict) else None
    if not isinstance(items, list):
        raise DatasetError(f"{path}: expected a top-level 'annotations' array")
    out: dict[int, tuple[tuple[str, ...], str | None]] = {}
    for i, a in enumerate(items):
        try:
            qid = int(a["question_id"])
            answers = tuple(str(x["answer"]) if isinstance(x, dict) else str(x) for x in a["answers"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: malformed annotation at index {i}: {exc!r}") from exc
        if not answers:
            raise DatasetError(f"{path}: annotation for question {qid} has no answers")
        if qid in out:
            raise DatasetError(f"{path}: duplicate annotation for question_id {qid}")
        out[qid] = (answers, a.get("multiple_choice_answer"))
    return out


def merge_records(questions: Iterable[QARecord], annotations: Mapping) -> list[QARecord]:
    questions = list(questions)
    qids = {q.question_id for q in questions}
    orphans = sorted(set(annotations) - qids)
    if orphans:
        raise DatasetError(f"annotations without a matching question: {orphans[:10]}")
    out = []
    for q in questions:
        if q.question_id not in annotations:
            raise DatasetError(f"question {q.question_id} has no annotation")
        answers, gt = annotations[q.question_id]
        out.append(QARecord(q.question_id, q.image_id, q.question, answers, gt))
    return sorted(out, key=lambda r: r.question_id)


def load_predictions(path, model: str, corruption: str, level: int,
                     expected_ids: Iterable[int] | None = None) -> PredictionSet:
    data = _read_json(path)
    if not isinstance(data, list):
        raise DatasetError(f"{path}: expected an array of {{question_id, answer}} objects")
    entries: dict[int, str] = {}
    for i, item in enumerate(data):
        try:
            qid, answer = int(item["question_id"]), str(item["answer"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: malformed prediction at index {i}: {exc!r}") from exc
        if qid in entries:
            raise DatasetError(f"{path}: duplicate prediction for question_id {qid}")
        entries[qid] = answer
    if expected_ids is not None:
        expected = set(expected_ids)
        missing = sorted(expected - set(entries))
        if missing:
            raise DatasetError(f"{path}: missing predictions for question ids {missing[:20]}")
        extra = sorted(set(entries) - expected)
        if extra:
            raise DatasetError(f"{path}: predictions for unknown question ids {extra[:20]}")
    return PredictionSet(model, corruption, int(level), entries)


def discover_predictions(root, corruptions: Iterable[str] | None = None,
                         levels: Iterable[int] = LEVELS[1:]) -> list[tuple[Path, str, str, int]]:
    """List ``(path, model, corruption, level)`` for every expected file under ``root``.

    Raises if any expected file is missing.  Corruptions default to every
    sub-directory found under the first model.
    """
    root = Path(root)
    models = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not models:
        raise DatasetError(f"{root}: no model directories")
    if corruptions is None:
        corruptions = sorted(p.name for p in (root / models[0]).iterdir() if p.is_dir())
    corruptions = list(corruptions)
    levels = list(levels)
    found, missing = [], []
    for m in models:
        clean = root / m / f"{CLEAN}.json"
        if clean.exists():
            found.append((clean, m, CLEAN, 0))
        for c in corruptions:
            for lvl in levels:
                path = root / m / c / f"{lvl}.json"
                if path.exists():
                    found.append((path, m, c, lvl))
                else:
                    missing.append(f"({m}, {c}, {lvl})")
            zero = root / m / c / "0.json"
            if zero.exists():
                found.append((zero, m, c, 0))
            elif not clean.exists():
                missing.append(f"({m}, {c}, 0)")
    if missing:
        raise DatasetError(f"missing prediction files for cells: {', '.join(missing[:20])}")
    return found


def join(records: Iterable[QARecord], prediction_sets: Iterable[PredictionSet],
         corruptions: Iterable[str] | None = None) -> Iterator[JoinedRecord]:
    """Pair human answers with predictions for every grid cell.

    A prediction set with corruption ``"clean"`` fills level 0 of every
    corruption for its model.
    """
    records = sorted(records, key=lambda r: r.question_id)
    ids = {r.question_id for r in records}
    sets = list(prediction_sets)
    if corruptions is None:
        corruptions = sorted({p.corruption for p in sets if p.corruption != CLEAN})
    corruptions = list(corruptions)
    by_cell: dict[tuple[str, str, int], PredictionSet] = {}
    clean: dict[str, PredictionSet] = {}
    for p in sets:
        got = set(p.entries)
        if got != ids:
            missing = sorted(ids - got)[:10]
            extra = sorted(got - ids)[:10]
            raise DatasetError(
                f"cell ({p.model}, {p.corruption}, {p.level}) does not cover the dataset "
                f"(missing {missing}, extra {extra})"
            )
        if p.corruption == CLEAN:
            clean[p.model] = p
        else:
            key = (p.model, p.corruption, p.level)
            if key in by_cell:
                raise DatasetError(f"duplicate prediction set for cell {key}")
            by_cell[key] = p
    models = list(dict.fromkeys(p.model for p in sets))
    for m in models:
        for c in corruptions:
            for lvl in LEVELS:
                p = by_cell.get((m, c, lvl))
                if p is None and lvl == 0:
                    p = clean.get(m)
                if p is None:
                    raise DatasetError(f"missing predictions for cell ({m}, {c}, {lvl})")
                for r in records:
                    yield JoinedRecord(m, c, lvl, r.question_id, r.human_answers, p.entries[r.question_id])


# --------------------------------------------------------------------------
# Manifest of generated images
# --------------------------------------------------------------------------

MANIFEST_SCHEMA = 1


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Manifest:
    """Index of an augmented image tree.

    ``entries[corruption][level]`` maps image id -> ``{"path", "sha256"}`` with
    paths relative to the output root.
    """

    dataset: str
    root_seed: int
    severity_version: str
    entries: dict[str, dict[int, dict[str, dict[str, str]]]] = field(default_factory=dict)

    def add(self, corruption: str, level: int, image_id: str, rel_path: str, digest: str) -> None:
        self.entries.setdefault(corruption, {}).setdefault(int(level), {})[image_id] = {
            "path": rel_path,
            "sha256": digest,
        }

    def get(self, corruption: str, level: int, image_id: str) -> dict | None:
        return self.entries.get(corruption, {}).get(int(level), {}).get(image_id)

    def __len__(self) -> int:
        return sum(len(imgs) for lv in self.entries.values() for imgs in lv.values())

    def to_dict(self) -> dict:
        return {
            "schema": MANIFEST_SCHEMA,
            "dataset": self.dataset,
            "root_seed": self.root_seed,
            "severity_table_version": self.severity_version,
            "entries": {
                c: {str(lvl): dict(sorted(imgs.items())) for lvl, imgs in sorted(levels.items())}
                for c, levels in sorted(self.entries.items())
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Manifest":
        if data.get("schema") != MANIFEST_SCHEMA:
            raise DatasetError(f"unsupported manifest schema {data.get('schema')!r}")
        m = cls(data["dataset"], int(data["root_seed"]), str(data["severity_table_version"]))
        for c, levels in data["entries"].items():
            for lvl, imgs in levels.items():
                for image_id, e in imgs.items():
                    m.add(c, int(lvl), image_id, e["path"], e["sha256"])
        return m

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def load(cls, path) -> "Manifest":
        return cls.from_dict(_read_json(path))

    def verify(self, root, corruptions: Iterable[str] | None = None,
               levels: Iterable[int] | None = None) -> list[str]:
        """Return a list of problems (missing files, digest mismatches, absent cells)."""
        root = Path(root)
        problems = []
        for c in corruptions or []:
            for lvl in levels or []:
                if not self.entries.get(c, {}).get(int(lvl)):
                    problems.append(f"no images recorded for ({c}, {lvl})")
        for c, lv in self.entries.items():
            for lvl, imgs in lv.items():
                for image_id, e in imgs.items():
                    path = root / e["path"]
                    if not path.exists():
                        problems.append(f"missing file {e['path']}")
                    elif file_digest(path) != e["sha256"]:
                        problems.append(f"digest mismatch for {e['path']}")
        return problems
