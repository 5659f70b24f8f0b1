"""The four comparison selectors: random choice, majority vote, best
single model, and single-model self-consistency.

Voting operates on normalized answer values (letters, or integers after
round-half-away-from-zero for numeric tasks).  Invalid answers never cast
votes; when nothing valid remains the vote abstains, which scores as
incorrect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import ConsensusInstance, Corpus, label_correctness, parse_for_question
from .parsing import ParsedAnswer

ABSTAIN = "__abstain__"


@dataclass(frozen=True)
class VoteResult:
    value: float | str
    abstained: bool = False


def round_half_away_from_zero(value: float) -> int:
    return int(math.floor(value + 0.5)) if value >= 0 else int(math.ceil(value - 0.5))


def random_select(instance: ConsensusInstance, rng: np.random.Generator) -> int:
    """Uniformly pick one model index."""
    return int(rng.integers(0, instance.num_models))


def _vote_values(instance: ConsensusInstance) -> list[float | str]:
    values: list[float | str] = []
    for parsed in instance.parsed:
        if not parsed.is_valid:
            continue
        if instance.question.task_kind == "numeric":
            values.append(float(round_half_away_from_zero(float(parsed.final_normalized))))
        else:
            values.append(str(parsed.final_normalized))
    return values


def plurality(values: list[float | str], rng: np.random.Generator) -> VoteResult:
    """Most frequent value; ties broken uniformly at random (seeded)."""
    if not values:
        return VoteResult(ABSTAIN, abstained=True)
    counts: dict[float | str, int] = {}
    for value in values:
        counts[value] = counts.get(value, 0) + 1
    top = max(counts.values())
    tied = sorted([v for v, c in counts.items() if c == top], key=str)
    if len(tied) == 1:
        return VoteResult(tied[0])
    return VoteResult(tied[int(rng.integers(0, len(tied)))])


def majority_vote(instance: ConsensusInstance, rng: np.random.Generator) -> VoteResult:
    """Plurality over valid normalized answers; numeric answers are rounded."""
    return plurality(_vote_values(instance), rng)


def value_is_correct(value: float | str, instance: ConsensusInstance) -> int:
    """Score a voted value against the gold answer.

    Numeric values reuse the tolerance rule of correctness labeling;
    abstentions are incorrect.
    """
    if value == ABSTAIN:
        return 0
    question = instance.question
    if question.task_kind == "numeric":
        pseudo = ParsedAnswer("", str(value), float(value), True)
        return label_correctness(pseudo, question)
    return int(str(value).upper() == question.gold_answer.upper())


def best_single_model(train_instances: list[ConsensusInstance]) -> dict[str, int]:
    """Per-dataset index of the model with the highest train accuracy.

    Ties break toward the lower model index.  Never looks at validation or
    test labels.
    """
    if not train_instances:
        raise ValueError("empty training split")
    totals: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    num_models = train_instances[0].num_models
    for inst in train_instances:
        dataset = inst.question.dataset
        if dataset not in totals:
            totals[dataset] = np.zeros(num_models)
            counts[dataset] = 0
        totals[dataset] += np.asarray(inst.correctness, dtype=np.float64)
        counts[dataset] += 1
    return {
        dataset: int(np.argmax(totals[dataset] / counts[dataset]))
        for dataset in totals
    }


def self_consistency(
    corpus: Corpus,
    instance: ConsensusInstance,
    reference_model_id: str,
    rng: np.random.Generator,
) -> VoteResult:
    """Plurality over the reference model's recorded samples for this question.

    Requires at least one extra sample beyond the canonical response.
    """
    question = instance.question
    extra = corpus.extra_samples.get((question.question_id, reference_model_id), [])
    if not extra:
        raise ValueError(
            f"self-consistency samples unavailable for question "
            f"{question.question_id!r}, model {reference_model_id!r}"
        )
    model_ids = [rec.model_id for rec in instance.responses]
    canonical = instance.parsed[model_ids.index(reference_model_id)]
    parsed_all = [canonical] + [parse_for_question(rec.raw_text, question) for rec in extra]
    values: list[float | str] = []
    for parsed in parsed_all:
        if not parsed.is_valid:
            continue
        if question.task_kind == "numeric":
            values.append(float(parsed.final_normalized))
        else:
            values.append(str(parsed.final_normalized))
    return plurality(values, rng)
