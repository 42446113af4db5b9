"""
Deterministic report rendering: detection tables (FPR/recall per
condition, detector vs FPR-matched baseline), the event-detector
confusion matrix as row percentages, per-round WER/WERR tables, and the
dialogue-quality summary. Markdown for reading, CSV for plotting.
Numbers are formatted to two decimals; rerunning on the same artifacts
reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .metrics import row_normalized_percent
from .types import EVENT_CLASSES


def _fmt(x: float) -> str:
    return f"{100.0 * x:.2f}"


def emit_report(run_dir: str | Path) -> list[Path]:
    run_dir = Path(run_dir)
    detections = json.loads((run_dir / "detections.json").read_text())
    evaluation = json.loads((run_dir / "eval.json").read_text())
    reports = run_dir / "reports"
    reports.mkdir(exist_ok=True)
    written = []

    written.append(_detection_markdown(detections, reports / "detection.md"))
    written.append(_detection_csv(detections, reports / "detection.csv"))
    written.append(_confusion_csv(detections, reports / "event_confusion.csv"))
    written.append(_rounds_markdown(evaluation, reports / "clarification.md"))
    written.append(_rounds_csv(evaluation, reports / "werr_curves.csv"))
    written.append(_maj_markdown(evaluation, reports / "dialogue_quality.md"))
    return written


def _detection_markdown(tables: dict, path: Path) -> Path:
    lines = [
        "# Word-level error detection",
        "",
        "| Condition | Del FPR | Del Recall | Base FPR | Base Recall | Det FPR | Det Recall |",
        "|---|---|---|---|---|---|---|",
    ]
    for condition in sorted(k for k in tables if not k.startswith("_")):
        entry = tables[condition]
        word = entry["word"]
        base = entry.get("baseline_matched")
        dele = entry.get("deletion")
        lines.append(
            "| {} | {} | {} | {} | {} | {} | {} |".format(
                condition,
                _fmt(dele["fpr"]) if dele else "-",
                _fmt(dele["recall"]) if dele else "-",
                _fmt(base["fpr"]) if base else "-",
                _fmt(base["recall"]) if base else "-",
                _fmt(word["fpr"]),
                _fmt(word["recall"]),
            )
        )
    ev = tables.get("_events", {})
    if ev:
        lines += [
            "",
            "# Distortion event detection (token level)",
            "",
            f"- macro F1: {_fmt(ev['macro_f1'])}",
            f"- accuracy: {_fmt(ev['accuracy'])}",
        ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _detection_csv(tables: dict, path: Path) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(
            [
                "condition",
                "level",
                "detector_fpr",
                "detector_recall",
                "detector_f1",
                "baseline_fpr",
                "baseline_recall",
                "deletion_fpr",
                "deletion_recall",
            ]
        )
        for condition in sorted(k for k in tables if not k.startswith("_")):
            entry = tables[condition]
            for level in ("token", "word"):
                rep = entry[level]
                base = entry.get("baseline_matched") if level == "word" else None
                dele = entry.get("deletion") if level == "word" else None
                writer.writerow(
                    [
                        condition,
                        level,
                        _fmt(rep["fpr"]),
                        _fmt(rep["recall"]),
                        _fmt(rep["f1"]),
                        _fmt(base["fpr"]) if base else "",
                        _fmt(base["recall"]) if base else "",
                        _fmt(dele["fpr"]) if dele else "",
                        _fmt(dele["recall"]) if dele else "",
                    ]
                )
    return path


def _confusion_csv(tables: dict, path: Path) -> Path:
    ev = tables.get("_events")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["true\\pred"] + list(EVENT_CLASSES))
        if ev:
            percents = row_normalized_percent(np.asarray(ev["confusion"]))
            for name, row in zip(EVENT_CLASSES, percents):
                writer.writerow([name] + [f"{v:.2f}" for v in row])
    return path


def _rounds_markdown(evaluation: dict, path: Path) -> Path:
    lines = [
        "# K-round clarification",
        "",
        "| Condition | Init WER | Step 1 | Step 2 | Step 3 | Improved | Degraded |",
        "|---|---|---|---|---|---|---|",
    ]
    for condition, st in sorted(evaluation.get("rounds", {}).items()):
        wers = st["wer_per_round"] + [st["wer_per_round"][-1]] * 4
        lines.append(
            "| {} | {} | {} | {} | {} | {} | {} |".format(
                condition,
                _fmt(wers[0]),
                _fmt(wers[1]),
                _fmt(wers[2]),
                _fmt(wers[3]),
                _fmt(st["improved_rate"]),
                _fmt(st["degradation_fpr"]),
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _rounds_csv(evaluation: dict, path: Path) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["condition", "round", "wer", "werr", "final_rate"])
        for condition, st in sorted(evaluation.get("rounds", {}).items()):
            for r, (w, werr) in enumerate(zip(st["wer_per_round"], st["werr_per_round"])):
                final = st["final_rate"][r - 1] if 1 <= r <= len(st["final_rate"]) else ""
                writer.writerow(
                    [condition, r, _fmt(w), _fmt(werr), _fmt(final) if final != "" else ""]
                )
    return path


def _maj_markdown(evaluation: dict, path: Path) -> Path:
    lines = [
        "# Downstream dialogue quality (mock judge)",
        "",
        "| Input source | Score |",
        "|---|---|",
    ]
    for source, score in sorted(evaluation.get("maj", {}).items()):
        lines.append(f"| {source} | {score:.1f} |")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
