"""Synthetic images, VQA files and a lookup 'model' with a known accuracy grid.

Each question's ten human answers are ``a, b, b, c, c, c, d, d, d, d`` so the
predicted answer alone fixes the credit: ``z`` -> 0, ``a`` -> 1/3, ``b`` ->
2/3, ``c`` -> 1.  A cell's target accuracy ``T / (3 N)`` is realised by
handing out ``T`` credits across the ``N`` questions.
"""
import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

HUMAN_ANSWERS = ["a", "b", "b", "c", "c", "c", "d", "d", "d", "d"]
CREDIT_ANSWER = {0: "z", 1: "a", 2: "b", 3: "c"}


def write_images(root, n, h=96, w=128, seed=0):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    gen = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ids = []
    for i in range(n):
        f1, f2, f3 = gen.uniform(4, 20, 3)
        img = np.stack([
            0.5 + 0.4 * np.sin(xx / f1 + i) * np.cos(yy / f2),
            (xx + yy) / (h + w) * gen.uniform(0.4, 1.0),
            0.5 + 0.3 * np.cos((xx - yy) / f3),
        ], axis=-1) + 0.03 * gen.standard_normal((h, w, 1))
        u8 = np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)
        image_id = f"{i:06d}"
        Image.fromarray(u8).save(root / f"{image_id}.png")
        ids.append(image_id)
    return ids


def write_vqa(root, image_ids, per_image=2):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    qs, anns = [], []
    qid = 1
    for image_id in image_ids:
        for k in range(per_image):
            qs.append({"question_id": qid, "image_id": int(image_id), "question": f"what is {k}?"})
            anns.append({"question_id": qid, "multiple_choice_answer": "d",
                         "answers": [{"answer": a, "answer_id": j + 1} for j, a in enumerate(HUMAN_ANSWERS)]})
            qid += 1
    (root / "questions.json").write_text(json.dumps({"questions": qs}))
    (root / "annotations.json").write_text(json.dumps({"annotations": anns}))
    return [q["question_id"] for q in qs], {q["question_id"]: f"{q['image_id']:06d}" for q in qs}


def target_credits(models, corruptions, n_questions, seed=0):
    """Random integer credit totals T[v][c][l], clean level shared across corruptions."""
    gen = np.random.default_rng(seed)
    top = 3 * n_questions
    T = np.zeros((len(models), len(corruptions), 6), dtype=np.int64)
    for v in range(len(models)):
        clean = int(gen.integers(top // 2, top + 1))
        T[v, :, 0] = clean
        for c in range(len(corruptions)):
            # errors tend to grow with level but need not be monotone
            drops = np.sort(gen.integers(0, clean // 2 + 1, 5))
            T[v, c, 1:] = clean - drops
    return T


def credits_for(total, n_questions):
    """Split ``total`` credits over questions, each in 0..3."""
    per = [0] * n_questions
    for i in range(n_questions):
        per[i] = min(3, max(0, total - 3 * i))
    assert sum(per) == total
    return per


def lookup_model(pred_root, gen_root, models, corruptions, T, qids, image_of):
    """Write prediction files for every cell.

    For corrupted levels the model looks up the generated image for each
    question in the manifest and checks its digest before answering, so the
    predictions only exist if generation produced every image.
    """
    pred_root, gen_root = Path(pred_root), Path(gen_root)
    manifest = json.loads((gen_root / "manifest.json").read_text())["entries"]
    n = len(qids)
    for v, m in enumerate(models):
        clean = credits_for(int(T[v, 0, 0]), n)
        out = [{"question_id": q, "answer": CREDIT_ANSWER[k]} for q, k in zip(qids, clean)]
        _dump(pred_root / m / "clean.json", out)
        for c_idx, c in enumerate(corruptions):
            for lvl in range(1, 6):
                per = credits_for(int(T[v, c_idx, lvl]), n)
                out = []
                for q, k in zip(qids, per):
                    entry = manifest[c][str(lvl)][image_of[q]]
                    data = (gen_root / entry["path"]).read_bytes()
                    assert hashlib.sha256(data).hexdigest() == entry["sha256"]
                    out.append({"question_id": q, "answer": CREDIT_ANSWER[k]})
                _dump(pred_root / m / c / f"{lvl}.json", out)


def per_question_credits(T, n_questions):
    """Per-question accuracies (as Fractions) for the oracle."""
    from fractions import Fraction

    return [[[[Fraction(k, 3) for k in credits_for(int(T[v, c, l]), n_questions)]
              for l in range(6)] for c in range(T.shape[1])] for v in range(T.shape[0])]


def _dump(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj))
