"""Metrics, calibration, significance testing, and report emission."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import QuestionRecord
from .features import FeatureManifest
from .metamodels import GbdtClassifier
from .rng import stream_rng

NUM_RELIABILITY_BINS = 10
BOOTSTRAP_RESAMPLES = 10_000

ABLATION_MASKS: dict[str, tuple[str, ...]] = {
    "full": ("sem", "lex", "logic", "conf", "prior"),
    "no_sem": ("lex", "logic", "conf", "prior"),
    "no_lex": ("sem", "logic", "conf", "prior"),
    "no_logic": ("sem", "lex", "conf", "prior"),
    "no_conf_prior": ("sem", "lex", "logic"),
    "sem_only": ("sem",),
}


def accuracy(selections: list[int], labels: list[list[int]]) -> float:
    """Fraction of instances whose selected answer is correct."""
    if len(selections) != len(labels):
        raise ValueError("selections and labels must have equal length")
    if not selections:
        raise ValueError("empty test set")
    hits = sum(labels[i][selections[i]] for i in range(len(selections)))
    return hits / len(selections)


def accuracy_from_bits(bits: list[int]) -> float:
    if not bits:
        raise ValueError("empty test set")
    return float(np.mean(bits))


def mrr(probabilities: list[np.ndarray], labels: list[list[int]]) -> float:
    """Mean reciprocal rank of the best-ranked correct answer.

    Ranking is by descending probability with index tie-break; instances
    with no correct answer contribute 0.
    """
    if not probabilities:
        raise ValueError("empty test set")
    total = 0.0
    for probs, z in zip(probabilities, labels):
        order = sorted(range(len(z)), key=lambda i: (-probs[i], i))
        for rank, idx in enumerate(order, start=1):
            if z[idx]:
                total += 1.0 / rank
                break
    return total / len(probabilities)


def brier(selected_probabilities: list[float], selected_correctness: list[int]) -> float:
    """Mean squared gap between selected-answer probability and its correctness."""
    p = np.asarray(selected_probabilities, dtype=np.float64)
    z = np.asarray(selected_correctness, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty test set")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    return float(((p - z) ** 2).mean())


@dataclass(frozen=True)
class ReliabilityBin:
    low: float
    high: float
    count: int
    mean_confidence: float | None
    empirical_accuracy: float | None


def reliability_diagram(
    selected_probabilities: list[float], selected_correctness: list[int]
) -> list[ReliabilityBin]:
    """Ten equal-width bins [0,0.1), ..., [0.9,1.0]; the last bin is closed."""
    p = np.asarray(selected_probabilities, dtype=np.float64)
    z = np.asarray(selected_correctness, dtype=np.float64)
    indices = np.minimum((p * NUM_RELIABILITY_BINS).astype(int), NUM_RELIABILITY_BINS - 1)
    bins = []
    for b in range(NUM_RELIABILITY_BINS):
        mask = indices == b
        count = int(mask.sum())
        bins.append(
            ReliabilityBin(
                low=b / NUM_RELIABILITY_BINS,
                high=(b + 1) / NUM_RELIABILITY_BINS,
                count=count,
                mean_confidence=float(p[mask].mean()) if count else None,
                empirical_accuracy=float(z[mask].mean()) if count else None,
            )
        )
    return bins


def question_qualifies_for_hallucination_rate(question: QuestionRecord) -> bool:
    flags = [set(opt.flags) for opt in question.options]
    return any("false_plausible" in f for f in flags) and any(
        "non_committal" in f for f in flags
    )


def truthfulqa_false_plausible_rate(
    selected_letters: list[str | None], questions: list[QuestionRecord]
) -> float:
    """Fraction of qualifying questions whose selected option is a
    false-but-plausible distractor.

    Qualifying questions carry at least one false_plausible and one
    non_committal option.  A missing/invalid selection counts in the
    denominator but is never flagged.
    """
    hits = 0
    total = 0
    for letter, question in zip(selected_letters, questions):
        if not question_qualifies_for_hallucination_rate(question):
            continue
        total += 1
        if letter is None:
            continue
        flagged = {
            opt.letter for opt in question.options if "false_plausible" in opt.flags
        }
        if letter.upper() in flagged:
            hits += 1
    if total == 0:
        raise ValueError("no qualifying questions (need false_plausible and non_committal options)")
    return hits / total


def paired_bootstrap(
    bits_a: list[int],
    bits_b: list[int],
    resamples: int = BOOTSTRAP_RESAMPLES,
    seed: int = 0,
) -> float:
    """Two-sided paired bootstrap p-value for an accuracy difference.

    Question indices are resampled with replacement; the two-sided value
    is min(1, 2 * min(P[acc_A <= acc_B], P[acc_A >= acc_B])), so identical
    selection vectors give p = 1.
    """
    a = np.asarray(bits_a, dtype=np.float64)
    b = np.asarray(bits_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired bootstrap needs equal-length selections")
    if resamples < 1000:
        raise ValueError("resamples must be >= 1000")
    rng = stream_rng(seed, "bootstrap")
    n = a.size
    diff = a - b
    draws = rng.integers(0, n, size=(resamples, n))
    deltas = diff[draws].mean(axis=1)
    p_le = float((deltas <= 0.0).mean())
    p_ge = float((deltas >= 0.0).mean())
    return min(1.0, 2.0 * min(p_le, p_ge))


def feature_importance(
    model: GbdtClassifier, manifest: FeatureManifest
) -> list[tuple[str, float]]:
    """Per-feature total split gain, descending, named from the manifest."""
    if not hasattr(model, "feature_gains"):
        raise TypeError(f"feature importance requires a tree model, got {type(model).__name__}")
    gains = model.feature_gains(manifest.dim)
    order = sorted(range(manifest.dim), key=lambda i: (-gains[i], i))
    names = manifest.names
    return [(names[i], float(gains[i])) for i in order]


def mask_indices(manifest: FeatureManifest, blocks: tuple[str, ...]) -> list[int]:
    """Column indices kept by an ablation mask; unknown block names fail."""
    known = {entry.block for entry in manifest.entries}
    for block in blocks:
        if block not in known:
            raise ValueError(f"unknown feature block {block!r}")
    return [entry.index for entry in manifest.entries if entry.block in blocks]


# ---------------------------------------------------------------------------
# Report emission


@dataclass
class MethodResult:
    name: str
    per_dataset_accuracy: dict[str, float]
    macro_accuracy: float
    mrr: float | None = None
    brier: float | None = None
    false_plausible_rate: float | None = None
    p_value: float | None = None


@dataclass
class EvalReport:
    datasets: list[str]
    methods: list[MethodResult]
    reliability: dict[str, list[ReliabilityBin]] = field(default_factory=dict)
    ablation: list[tuple[str, float, float]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(value)


def write_table1_csv(report: EvalReport, path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["method", *report.datasets, "macro", "mrr", "brier", "false_plausible_rate", "p_value"]
        )
        for method in report.methods:
            writer.writerow(
                [
                    method.name,
                    *[_fmt(method.per_dataset_accuracy.get(d)) for d in report.datasets],
                    _fmt(method.macro_accuracy),
                    _fmt(method.mrr),
                    _fmt(method.brier),
                    _fmt(method.false_plausible_rate),
                    _fmt(method.p_value),
                ]
            )


def write_table2_csv(rows: list[tuple[str, float, float]], path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["mask", "macro_accuracy", "delta_vs_full"])
        for mask, acc, delta in rows:
            writer.writerow([mask, repr(acc), repr(delta)])


def write_reliability_csv(reliability: dict[str, list[ReliabilityBin]], path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["method", "bin_low", "bin_high", "count", "mean_confidence", "empirical_accuracy"]
        )
        for method in sorted(reliability):
            for b in reliability[method]:
                writer.writerow(
                    [
                        method,
                        repr(b.low),
                        repr(b.high),
                        b.count,
                        _fmt(b.mean_confidence),
                        _fmt(b.empirical_accuracy),
                    ]
                )


def write_report_markdown(report: EvalReport, path: Path) -> None:
    lines = ["# Consensus evaluation report", ""]
    if report.metadata:
        lines.append("## Run")
        lines.append("")
        for key in sorted(report.metadata):
            lines.append(f"- {key}: {report.metadata[key]}")
        lines.append("")
    lines.append("## Accuracy by dataset")
    lines.append("")
    header = ["method", *report.datasets, "macro"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for method in report.methods:
        cells = [method.name]
        for dataset in report.datasets:
            acc = method.per_dataset_accuracy.get(dataset)
            cells.append("" if acc is None else f"{acc:.4f}")
        cells.append(f"{method.macro_accuracy:.4f}")
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    extras = [m for m in report.methods if m.mrr is not None or m.brier is not None]
    if extras:
        lines.append("## Ranking and calibration")
        lines.append("")
        lines.append("| method | MRR | Brier | false-plausible rate | p-value |")
        lines.append("|---|---|---|---|---|")
        for method in extras:
            lines.append(
                "| "
                + " | ".join(
                    [
                        method.name,
                        "" if method.mrr is None else f"{method.mrr:.4f}",
                        "" if method.brier is None else f"{method.brier:.4f}",
                        ""
                        if method.false_plausible_rate is None
                        else f"{method.false_plausible_rate:.4f}",
                        "" if method.p_value is None else f"{method.p_value:.4f}",
                    ]
                )
                + " |"
            )
        lines.append("")
    if report.ablation:
        lines.append("## Feature ablations")
        lines.append("")
        lines.append("| mask | macro accuracy | delta vs full |")
        lines.append("|---|---|---|")
        for mask, acc, delta in report.ablation:
            lines.append(f"| {mask} | {acc:.4f} | {delta:+.4f} |")
        lines.append("")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def emit_report(report: EvalReport, out_dir: str | Path) -> None:
    """Write report.md, table1.csv, reliability.csv (and table2.csv if present)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table1_csv(report, out / "table1.csv")
    if report.ablation:
        write_table2_csv(report.ablation, out / "table2.csv")
    write_reliability_csv(report.reliability, out / "reliability.csv")
    write_report_markdown(report, out / "report.md")
    with (out / "run.json").open("w", encoding="utf-8") as handle:
        json.dump(report.metadata, handle, indent=2, sort_keys=True)
        handle.write("\n")
