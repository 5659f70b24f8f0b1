"""Data model and ingestion for recorded multi-model response corpora.

A corpus directory holds ``questions.jsonl``, ``responses.jsonl``,
``models.json``, and optionally ``embeddings.bin`` (see the embedding
module).  Loading validates every record, assembles one ConsensusInstance
per question, and fails loudly on schema violations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .parsing import ParsedAnswer, normalize_numeric, parse_response
from .rng import stream_rng

DATASETS = ("gsm8k", "arc", "hellaswag", "truthfulqa", "synthetic")
TASK_KINDS = ("numeric", "multiple_choice")
SPLITS = ("train", "val", "test")
OPTION_FLAGS = ("false_plausible", "non_committal")

# Reserved model_id for question-text embeddings (used by the gating model).
QUESTION_EMBEDDING_ID = "__question__"

SPLIT_RATIOS = (0.70, 0.10, 0.20)
MIN_QUESTIONS_FOR_SPLIT = 10

NUMERIC_ABS_TOL = 1e-9
NUMERIC_REL_TOL = 1e-6


class CorpusError(ValueError):
    """Schema violation in a corpus file; message carries file/line context."""


@dataclass(frozen=True)
class AnswerOption:
    letter: str
    text: str
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class QuestionRecord:
    question_id: str
    dataset: str
    task_kind: str
    question_text: str
    gold_answer: str
    options: tuple[AnswerOption, ...] = ()


@dataclass(frozen=True)
class ResponseRecord:
    question_id: str
    model_id: str
    sample_index: int
    raw_text: str
    self_confidence_raw: str | float | None = None
    mean_logprob: float | None = None
    verifier_scores: tuple[float, float, float] | None = None


@dataclass
class ModelCatalogEntry:
    model_id: str
    family: str
    log_param_count: float
    # Filled by the training pipeline from train-split accuracies.
    per_dataset_prior_accuracy: dict[str, float] = field(default_factory=dict)


@dataclass
class ConsensusInstance:
    """One question with its M canonical answers, in catalog model order."""

    question: QuestionRecord
    responses: list[ResponseRecord]
    parsed: list[ParsedAnswer]
    correctness: list[int]
    split: str | None = None

    @property
    def num_models(self) -> int:
        return len(self.responses)


@dataclass
class CorpusManifest:
    num_questions: int
    num_models: int
    catalog: list[ModelCatalogEntry]
    dataset_counts: dict[str, int]
    schema_version: int = 1

    @property
    def model_ids(self) -> list[str]:
        return [entry.model_id for entry in self.catalog]


@dataclass
class Corpus:
    manifest: CorpusManifest
    instances: list[ConsensusInstance]
    # Extra self-consistency samples: (question_id, model_id) -> responses
    # with sample_index > 0, ordered by sample_index.
    extra_samples: dict[tuple[str, str], list[ResponseRecord]] = field(default_factory=dict)

    def by_split(self, split: str) -> list[ConsensusInstance]:
        return [inst for inst in self.instances if inst.split == split]


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise CorpusError(message)


def _parse_question(obj: dict, ctx: str) -> QuestionRecord:
    for key in ("question_id", "dataset", "task_kind", "question_text", "gold_answer"):
        _check(key in obj, f"{ctx}: missing field {key!r}")
    _check(obj["dataset"] in DATASETS, f"{ctx}: unknown dataset {obj['dataset']!r}")
    _check(obj["task_kind"] in TASK_KINDS, f"{ctx}: unknown task_kind {obj['task_kind']!r}")
    options = []
    for raw in obj.get("options") or []:
        if isinstance(raw, dict):
            letter, text, flags = raw["letter"], raw.get("text", ""), tuple(raw.get("flags") or ())
        else:
            letter, text = raw[0], raw[1]
            flags = tuple(raw[2]) if len(raw) > 2 and raw[2] else ()
        for flag in flags:
            _check(flag in OPTION_FLAGS, f"{ctx}: unknown option flag {flag!r}")
        options.append(AnswerOption(str(letter).upper(), text, flags))
    record = QuestionRecord(
        question_id=str(obj["question_id"]),
        dataset=obj["dataset"],
        task_kind=obj["task_kind"],
        question_text=obj["question_text"],
        gold_answer=str(obj["gold_answer"]),
        options=tuple(options),
    )
    if record.task_kind == "multiple_choice":
        _check(bool(record.options), f"{ctx}: multiple_choice question without options")
        letters = {opt.letter for opt in record.options}
        _check(
            record.gold_answer.upper() in letters,
            f"{ctx}: gold_answer {record.gold_answer!r} is not an option letter",
        )
    if record.dataset != "truthfulqa":
        flagged = [opt.letter for opt in record.options if opt.flags]
        _check(not flagged, f"{ctx}: option flags are only allowed on truthfulqa records")
    return record


def _parse_response(obj: dict, ctx: str) -> ResponseRecord:
    for key in ("question_id", "model_id", "sample_index", "raw_text"):
        _check(key in obj, f"{ctx}: missing field {key!r}")
    sample_index = int(obj["sample_index"])
    _check(sample_index >= 0, f"{ctx}: sample_index must be >= 0")
    verifier = obj.get("verifier_scores")
    if verifier is not None:
        _check(len(verifier) == 3, f"{ctx}: verifier_scores must have 3 entries")
        for score in verifier:
            _check(0.0 <= float(score) <= 1.0, f"{ctx}: verifier score {score} outside [0,1]")
        verifier = tuple(float(score) for score in verifier)
    logprob = obj.get("mean_logprob")
    return ResponseRecord(
        question_id=str(obj["question_id"]),
        model_id=str(obj["model_id"]),
        sample_index=sample_index,
        raw_text=obj["raw_text"],
        self_confidence_raw=obj.get("self_confidence_raw"),
        mean_logprob=None if logprob is None else float(logprob),
        verifier_scores=verifier,
    )


def _read_jsonl(path: Path) -> list[tuple[int, dict]]:
    records = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"{path.name}:{lineno}: malformed line ({err.msg})") from err
            records.append((lineno, obj))
    return records


def load_catalog(path: Path) -> list[ModelCatalogEntry]:
    with path.open("r", encoding="utf-8") as handle:
        raw = json.load(handle)
    entries = []
    seen = set()
    for obj in raw:
        model_id = str(obj["model_id"])
        _check(model_id not in seen, f"models.json: duplicate model_id {model_id!r}")
        seen.add(model_id)
        log_params = float(obj["log_param_count"])
        _check(log_params > 0, f"models.json: log_param_count must be > 0 for {model_id!r}")
        entries.append(
            ModelCatalogEntry(
                model_id=model_id,
                family=str(obj["family"]),
                log_param_count=log_params,
                per_dataset_prior_accuracy=dict(obj.get("per_dataset_prior_accuracy") or {}),
            )
        )
    return entries


def load_corpus(path: str | Path) -> Corpus:
    """Load and validate a corpus directory, assembling instances by question.

    Raises CorpusError on malformed lines (with line numbers), duplicate
    keys, and missing canonical responses.
    """
    root = Path(path)
    catalog = load_catalog(root / "models.json")
    _check(len(catalog) >= 2, "models.json: need at least 2 models")
    model_order = {entry.model_id: idx for idx, entry in enumerate(catalog)}

    questions: dict[str, QuestionRecord] = {}
    for lineno, obj in _read_jsonl(root / "questions.jsonl"):
        record = _parse_question(obj, f"questions.jsonl:{lineno}")
        _check(
            record.question_id not in questions,
            f"questions.jsonl:{lineno}: duplicate key {record.question_id!r}",
        )
        questions[record.question_id] = record

    canonical: dict[str, dict[str, ResponseRecord]] = {qid: {} for qid in questions}
    extra_samples: dict[tuple[str, str], list[ResponseRecord]] = {}
    seen_keys: set[tuple[str, str, int]] = set()
    for lineno, obj in _read_jsonl(root / "responses.jsonl"):
        record = _parse_response(obj, f"responses.jsonl:{lineno}")
        ctx = f"responses.jsonl:{lineno}"
        _check(record.question_id in questions, f"{ctx}: unknown question_id {record.question_id!r}")
        _check(record.model_id in model_order, f"{ctx}: unknown model_id {record.model_id!r}")
        key = (record.question_id, record.model_id, record.sample_index)
        _check(key not in seen_keys, f"{ctx}: duplicate key {key!r}")
        seen_keys.add(key)
        if record.sample_index == 0:
            canonical[record.question_id][record.model_id] = record
        else:
            extra_samples.setdefault((record.question_id, record.model_id), []).append(record)
    for samples in extra_samples.values():
        samples.sort(key=lambda rec: rec.sample_index)

    instances = []
    for qid in questions:
        question = questions[qid]
        responses = []
        for entry in catalog:
            record = canonical[qid].get(entry.model_id)
            _check(
                record is not None,
                f"missing canonical response for question {qid!r}, model {entry.model_id!r}",
            )
            responses.append(record)
        parsed = [parse_for_question(rec.raw_text, question) for rec in responses]
        correctness = [label_correctness(p, question) for p in parsed]
        instances.append(ConsensusInstance(question, responses, parsed, correctness))

    dataset_counts: dict[str, int] = {}
    for question in questions.values():
        dataset_counts[question.dataset] = dataset_counts.get(question.dataset, 0) + 1

    manifest = CorpusManifest(
        num_questions=len(instances),
        num_models=len(catalog),
        catalog=catalog,
        dataset_counts=dataset_counts,
    )
    return Corpus(manifest=manifest, instances=instances, extra_samples=extra_samples)


def parse_for_question(raw_text: str, question: QuestionRecord) -> ParsedAnswer:
    return parse_response(raw_text, question.task_kind)


def label_correctness(parsed: ParsedAnswer, question: QuestionRecord) -> int:
    """Correctness bit for a parsed answer; invalid parses are always 0.

    Numeric answers match under |pred - gold| <= max(1e-9, 1e-6 * |gold|);
    multiple choice matches on normalized letters.
    """
    if not parsed.is_valid:
        return 0
    if question.task_kind == "numeric":
        gold = normalize_numeric(question.gold_answer)
        if gold is None:
            raise CorpusError(
                f"question {question.question_id!r}: gold_answer "
                f"{question.gold_answer!r} is not numeric"
            )
        pred = float(parsed.final_normalized)
        tol = max(NUMERIC_ABS_TOL, NUMERIC_REL_TOL * abs(gold))
        return int(abs(pred - gold) <= tol)
    return int(str(parsed.final_normalized).upper() == question.gold_answer.upper())


def assign_splits(
    instances: list[ConsensusInstance],
    seed: int,
    ratios: tuple[float, float, float] = SPLIT_RATIOS,
) -> dict[str, str]:
    """Assign train/val/test splits, grouped by question and stratified by dataset.

    The assignment depends only on the set of question ids and the seed;
    instance order is irrelevant.  Mutates each instance's ``split`` field
    and returns {question_id: split}.
    """
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError("split ratios must sum to 1")
    if len(instances) < MIN_QUESTIONS_FOR_SPLIT:
        raise ValueError(
            f"need at least {MIN_QUESTIONS_FOR_SPLIT} questions to form all three splits, "
            f"got {len(instances)}"
        )
    by_dataset: dict[str, list[ConsensusInstance]] = {}
    for inst in instances:
        by_dataset.setdefault(inst.question.dataset, []).append(inst)

    assignment: dict[str, str] = {}
    rng = stream_rng(seed, "split")
    for dataset in sorted(by_dataset):
        group = sorted(by_dataset[dataset], key=lambda inst: inst.question.question_id)
        order = rng.permutation(len(group))
        n = len(group)
        n_train = int(round(n * ratios[0]))
        n_val = int(round(n * (ratios[0] + ratios[1]))) - n_train
        for pos, idx in enumerate(order):
            if pos < n_train:
                split = "train"
            elif pos < n_train + n_val:
                split = "val"
            else:
                split = "test"
            inst = group[idx]
            inst.split = split
            assignment[inst.question.question_id] = split
    return assignment
