"""Command-line front end: ``generate``, ``evaluate`` and ``report``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import corruptions as corr
from . import dataset, metrics
from .severity import SeverityTable

log = logging.getLogger("vqarobust")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_levels(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        levels = list(range(int(lo), int(hi) + 1))
    else:
        levels = [int(t) for t in text.split(",") if t.strip()]
    if not levels or any(not 1 <= lv <= corr.MAX_LEVEL for lv in levels):
        raise CliError(f"levels must lie in 1..{corr.MAX_LEVEL}, got {text!r}")
    return levels


def parse_corruptions(text: str | None) -> list[str]:
    if not text or text == "benchmark":
        return list(corr.BENCHMARK_CORRUPTIONS)
    if text == "all":
        return list(corr.REGISTRY)
    names = [t.strip() for t in text.split(",") if t.strip()]
    unknown = [n for n in names if n not in corr.REGISTRY]
    if unknown:
        raise CliError(f"unknown corruptions: {unknown}")
    return names


def parse_weights(weights: str | None, prefer: list[str] | None) -> np.ndarray:
    if weights and prefer:
        raise CliError("use either --weights or --prefer, not both")
    if weights:
        try:
            w = [float(t) for t in weights.replace(" ", "").split(",")]
        except ValueError as exc:
            raise CliError(f"bad --weights {weights!r}") from exc
        try:
            return metrics.check_weights(w)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    if prefer:
        scores = {}
        for item in prefer:
            name, sep, val = item.partition("=")
            if not sep:
                raise CliError(f"--prefer expects name=score, got {item!r}")
            try:
                scores[metrics.canonical_metric(name)] = float(val)
            except KeyError as exc:
                raise CliError(exc.args[0]) from exc
            except ValueError as exc:
                raise CliError(f"bad preference score in {item!r}") from exc
        try:
            return metrics.softmax_weights(scores)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    return metrics.EQUAL_WEIGHTS.copy()


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except OSError as exc:
        raise CliError(f"cannot read image {path}: {exc}") from exc


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _write_config(out: Path, args: argparse.Namespace, **extra) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    atomic_write(out / f"run_config_{args.command}.json", json.dumps(cfg, indent=2, default=str) + "\n")


# --------------------------------------------------------------------------
# generate
# --------------------------------------------------------------------------

def _generate_task(task):
    src, image_id, corruption, level, seed, table_path, out_root = task
    table = SeverityTable.load(table_path) if table_path else SeverityTable.default()
    img = load_image(src)
    result = corr.corrupt(img, corruption, level, seed=seed, image_id=image_id, table=table)
    rel = f"{corruption}/{level}/{image_id}.png"
    data = encode_png(result)
    atomic_write(Path(out_root) / rel, data)
    return corruption, level, image_id, rel, hashlib.sha256(data).hexdigest()


def cmd_generate(args) -> int:
    images_dir, out = Path(args.images), Path(args.out)
    if not images_dir.is_dir():
        raise CliError(f"image directory not found: {images_dir}")
    names = parse_corruptions(args.corruptions)
    levels = parse_levels(args.levels)
    table = SeverityTable.load(args.severity_table) if args.severity_table else SeverityTable.default()
    missing = [n for n in names if n not in table.levels]
    if missing:
        raise CliError(f"severity table {table.source} has no records for {missing}")
    sources = sorted(p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not sources:
        raise CliError(f"no images in {images_dir}")
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out, args, severity_table_version=table.version)

    manifest_path = out / "manifest.json"
    manifest = dataset.Manifest(args.dataset or images_dir.name, args.seed, table.version)
    if manifest_path.exists():
        old = dataset.Manifest.load(manifest_path)
        if old.root_seed == args.seed and old.severity_version == table.version:
            manifest = old

    tasks = []
    for src in sources:
        for c in names:
            for lvl in levels:
                entry = manifest.get(c, lvl, src.stem)
                target = out / f"{c}/{lvl}/{src.stem}.png"
                if entry and target.exists() and dataset.file_digest(target) == entry["sha256"]:
                    continue
                tasks.append((str(src), src.stem, c, lvl, args.seed, args.severity_table, str(out)))
    log.info("%d images, %d tasks (%d already done)", len(sources), len(tasks),
             len(sources) * len(names) * len(levels) - len(tasks))

    start = time.perf_counter()
    jobs = args.jobs or os.cpu_count() or 1
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_generate_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_generate_task(t) for t in tasks]
    for c, lvl, image_id, rel, digest in results:
        manifest.add(c, lvl, image_id, rel, digest)
    atomic_write(manifest_path, manifest.dumps())
    log.info("wrote %d images in %.1fs", len(results), time.perf_counter() - start)
    print(f"generated {len(results)} images ({len(manifest)} in manifest) -> {out}")
    return 0


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------

def evaluate_grid(questions, annotations, predictions_dir, corruptions=None, normalize=True):
    records = dataset.merge_records(dataset.load_questions(questions), dataset.load_annotations(annotations))
    ids = [r.question_id for r in records]
    files = dataset.discover_predictions(predictions_dir, corruptions)
    sets = [dataset.load_predictions(p, m, c, lvl, ids) for p, m, c, lvl in files]
    corr_names = corruptions or sorted({c for _, _, c, _ in files if c != dataset.CLEAN})
    return metrics.build_grid(dataset.join(records, sets, corr_names), normalize=normalize)


def cmd_evaluate(args) -> int:
    names = [t.strip() for t in args.corruptions.split(",")] if args.corruptions else None
    grid = evaluate_grid(args.questions, args.annotations, args.predictions, names,
                         normalize=not args.exact_match)
    buf = io.StringIO()
    grid.to_csv(buf)
    atomic_write(args.out, buf.getvalue())
    _write_config(Path(args.out).parent, args)
    print(f"grid: {len(grid.models)} models x {len(grid.corruptions)} corruptions -> {args.out}")
    return 0


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is np.ma.masked or (isinstance(x, float) and math.isnan(x)):
        return "undefined"
    return f"{float(x):.3f}"


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def accuracy_table(rep: metrics.MetricReport) -> str:
    rows = [["model", *rep.corruptions, "A_v", "A_v0", "A_rel_v_pct"]]
    for i, m in enumerate(rep.models):
        rows.append([m, *(_fmt(a) for a in rep.pair_accuracy[i]), _fmt(rep.model_accuracy[i]),
                     _fmt(rep.base_accuracy[i]), f"{100 * rep.model_rel_drop[i]:.2f}"])
    rows.append(["A_c", *(_fmt(a) for a in rep.corruption_accuracy), "", "", ""])
    rows.append(["A_rel_c_pct", *(f"{100 * a:.2f}" for a in rep.corruption_rel_drop), "", "", ""])
    return _csv(rows)


def metric_table(rep: metrics.MetricReport, scaled: bool) -> str:
    model_vals = rep.model_scaled if scaled else rep.model_raw
    corr_vals = rep.corruption_scaled if scaled else rep.corruption_raw
    rows = [["kind", "name", "A_v0", "A", "A_rel", *metrics.SUB_METRICS, "VRE"]]
    for i, m in enumerate(rep.models):
        rows.append(["model", m, _fmt(rep.base_accuracy[i]), _fmt(rep.model_accuracy[i]),
                     _fmt(rep.model_rel_drop[i]), *(_fmt(model_vals[k][i]) for k in metrics.SUB_METRICS),
                     _fmt(rep.model_vre[i])])
    for j, c in enumerate(rep.corruptions):
        rows.append(["corruption", c, "", _fmt(rep.corruption_accuracy[j]), _fmt(rep.corruption_rel_drop[j]),
                     *(_fmt(corr_vals[k][j]) for k in metrics.SUB_METRICS), _fmt(rep.corruption_vre[j])])
    return _csv(rows)


def plot_data(rep: metrics.MetricReport, grid: metrics.EvaluationGrid) -> dict[str, str]:
    heat = [["model", "corruption", "relative_accuracy_drop"]]
    bars = [["model", "corruption", "average_error"]]
    for i, m in enumerate(rep.models):
        for j, c in enumerate(rep.corruptions):
            heat.append([m, c, repr(float(rep.pair_rel_drop[i, j]))])
            bars.append([m, c, repr(float(rep.sub.raw["average_error"][i, j]))])
    trends = [["model", "corruption", "level", "error"]]
    for m, c, lvl, _, e in grid.rows():
        trends.append([m, c, lvl, repr(e)])
    radar = [["kind", "name", "metric", "scaled_value"]]
    for i, m in enumerate(rep.models):
        radar += [["model", m, k, repr(float(rep.model_scaled[k][i]))] for k in metrics.SUB_METRICS]
    for j, c in enumerate(rep.corruptions):
        radar += [["corruption", c, k, repr(float(rep.corruption_scaled[k][j]))] for k in metrics.SUB_METRICS]
    return {
        "plot_relative_drop_heatmap.csv": _csv(heat),
        "plot_average_error_bars.csv": _csv(bars),
        "plot_error_trends.csv": _csv(trends),
        "plot_composition_radar.csv": _csv(radar),
    }


def ranking(names, values) -> list[str]:
    return [names[i] for i in np.argsort(values, kind="stable")]


def cmd_report(args) -> int:
    weights = parse_weights(args.weights, args.prefer)
    with open(args.grid, encoding="utf-8") as fh:
        grid = metrics.EvaluationGrid.from_csv(fh)
    rep = metrics.compute_report(grid, weights)
    out = Path(args.out)

    payload = rep.to_dict(digits=None)
    payload["model_ranking"] = ranking(rep.models, rep.model_vre)
    payload["corruption_ranking"] = ranking(rep.corruptions, rep.corruption_vre)[::-1]
    files = {
        "report.json": json.dumps(payload, indent=2) + "\n",
        "accuracy_table.csv": accuracy_table(rep),
        "metrics_raw.csv": metric_table(rep, scaled=False),
        "metrics_scaled.csv": metric_table(rep, scaled=True),
        **plot_data(rep, grid),
    }
    for name, text in files.items():
        atomic_write(out / name, text)
    if not args.no_figures:
        from . import plots

        figures = {
            "fig_relative_drop_heatmap.png": lambda p: plots.relative_drop_heatmap(rep, p),
            "fig_average_error_bars.png": lambda p: plots.average_error_bars(rep, p),
            "fig_error_trends.png": lambda p: plots.error_trends(grid, p),
            "fig_composition_radar.png": lambda p: plots.composition_radar(rep, p),
        }
        for name, draw in figures.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".png")
            os.close(fd)
            try:
                draw(tmp)
                os.replace(tmp, out / name)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)
    _write_config(out, args, weights=[float(w) for w in weights])

    print("weights: " + ", ".join(f"{k}={w:.4f}" for k, w in zip(metrics.SUB_METRICS, weights)))
    print("model VRE (most robust first): " + ", ".join(
        f"{m}={v:.3f}" for m, v in sorted(zip(rep.models, rep.model_vre), key=lambda t: t[1])))
    print("corruption VRE (strongest first): " + ", ".join(
        f"{c}={v:.3f}" for c, v in sorted(zip(rep.corruptions, rep.corruption_vre), key=lambda t: -t[1])))
    return 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqarobust", description="Visual robustness evaluation for VQA.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write corrupted copies of an image directory")
    g.add_argument("--images", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--corruptions", default="benchmark",
                   help="comma-separated ids, 'benchmark' (default) or 'all'")
    g.add_argument("--levels", default="1..5")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--severity-table", default=None)
    g.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    g.add_argument("--dataset", default=None, help="dataset name recorded in the manifest")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="score prediction files into an accuracy grid")
    e.add_argument("--questions", required=True)
    e.add_argument("--annotations", required=True)
    e.add_argument("--predictions", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--corruptions", default=None)
    e.add_argument("--exact-match", action="store_true", help="compare answers without normalization")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="compute metrics, VRE, tables and figures from a grid")
    r.add_argument("--grid", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--weights", default=None, help="five comma-separated weights summing to 1")
    r.add_argument("--prefer", action="append", default=None, metavar="NAME=SCORE",
                   help="preference score per sub-metric (F, R, rho, mu, delta); softmax-weighted")
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, dataset.DatasetError, metrics.GridError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
