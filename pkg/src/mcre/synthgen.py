"""Synthetic consensus corpora with planted correctness structure.

Each question has a "truth" embedding direction and several decoy
directions (orthonormal by construction).  A model that answers correctly
emits the gold value and an embedding near the truth direction; a wrong
model picks a decoy (by a configurable share vector, which controls how
often wrong models agree) and lands near that decoy's direction.  Model
correctness is Bernoulli per skill, optionally correlated across models
through a shared Gaussian factor, which is what creates the
minority-correct regime where majority voting fails but a trained
consensus can recover.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, QUESTION_EMBEDDING_ID
from .embedding import EmbeddingStore, write_embedding_file
from .rng import stream_rng

CHOICE_LETTERS = ("A", "B", "C", "D")


@dataclass
class SynthConfig:
    num_questions: int = 200
    num_models: int = 3
    numeric_fraction: float = 0.5
    skills: list[float] = field(default_factory=lambda: [0.8, 0.6, 0.5])
    # Per-model loading on a shared latent factor (Gaussian copula);
    # 0 everywhere means independent correctness draws.
    skill_correlation: list[float] | None = None
    # Truth clusters are tighter than decoy clusters, so high mutual
    # similarity marks agreement on the truth, not just agreement.
    truth_spread: float = 0.08
    decoy_spread: float = 0.25
    num_decoys: int = 3
    decoy_shares: list[float] | None = None
    confidence_styles: list[str] | None = None  # calibrated | overconfident
    verifier_mu_correct: float = 0.68
    verifier_mu_wrong: float = 0.52
    verifier_sigma: float = 0.2
    verifier_missing_rate: float = 0.05
    invalid_rate: float = 0.02
    embedding_dim: int = 16
    self_consistency_samples: int = 4
    truthfulqa_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        m = self.num_models
        if len(self.skills) != m:
            raise ValueError("skills must have one entry per model")
        if not all(0.0 <= s <= 1.0 for s in self.skills):
            raise ValueError("skills must lie in [0, 1]")
        if self.skill_correlation is None:
            self.skill_correlation = [0.0] * m
        if len(self.skill_correlation) != m:
            raise ValueError("skill_correlation must have one entry per model")
        if self.decoy_shares is None:
            self.decoy_shares = [1.0 / self.num_decoys] * self.num_decoys
        if len(self.decoy_shares) != self.num_decoys:
            raise ValueError("decoy_shares must have one entry per decoy")
        if abs(sum(self.decoy_shares) - 1.0) > 1e-9:
            raise ValueError("decoy_shares must sum to 1")
        if self.confidence_styles is None:
            self.confidence_styles = ["calibrated"] * m
        if len(self.confidence_styles) != m:
            raise ValueError("confidence_styles must have one entry per model")
        if self.truth_spread <= 0 or self.decoy_spread <= 0:
            raise ValueError("spreads must be positive")
        if self.num_decoys < 1 or self.embedding_dim < self.num_decoys + 1:
            raise ValueError("need embedding_dim >= num_decoys + 1")

    @staticmethod
    def from_file(path: str | Path) -> "SynthConfig":
        with Path(path).open("r", encoding="utf-8") as handle:
            payload = json.load(handle)
        return SynthConfig(**payload)


def _phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _orthonormal_directions(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    matrix = rng.standard_normal((dim, count))
    q, _ = np.linalg.qr(matrix)
    return q.T[:count]


def _normalize(vector: np.ndarray) -> np.ndarray:
    return vector / np.linalg.norm(vector)


# Reasoning templates shared by correct and wrong answers; correctness only
# nudges the template mix, so lexical features stay informative but weak.
_TEMPLATES = (
    "Step 1: take the obvious reading. So, the answer seems immediate.",
    "Step 1: restate what the question asks. Step 2: work out the quantities. "
    "Therefore the answer follows.",
    "First, set up the relation. Second, simplify it. "
    "Finally, thus the value is settled.",
)
_TEMPLATE_PROBS_CORRECT = (0.2, 0.4, 0.4)
_TEMPLATE_PROBS_WRONG = (0.35, 0.4, 0.25)


def _response_text(value: str, correct: bool, invalid: bool, rng: np.random.Generator) -> str:
    probs = _TEMPLATE_PROBS_CORRECT if correct else _TEMPLATE_PROBS_WRONG
    body = _TEMPLATES[int(rng.choice(len(_TEMPLATES), p=probs))]
    if rng.random() < (0.45 if correct else 0.25):
        body += " Check the result once more."
    if invalid:
        return body + " I cannot settle on one value."
    return f"{body}\nFinal Answer: {value}"


def _confidence_string(style: str, correct: bool, rng: np.random.Generator) -> str:
    if style == "overconfident":
        value = 0.9 + 0.05 * rng.random()
    else:
        value = 0.45 + 0.15 * (1.0 if correct else 0.0) + rng.normal(0.0, 0.15)
    value = min(1.0, max(0.0, value))
    return f"{round(value * 10) / 10:.1f}"


def generate_corpus(config: SynthConfig, out_dir: str | Path) -> Path:
    """Write a full corpus directory (questions, responses, models, embeddings)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = stream_rng(config.seed, "synthgen")
    m = config.num_models
    dim = config.embedding_dim

    model_ids = [f"synth-m{i + 1}" for i in range(m)]
    families = ["alpha", "beta", "gamma"]
    catalog = [
        {
            "model_id": model_ids[i],
            "family": families[i % len(families)],
            "log_param_count": 22.0 + 0.3 * i,
            "per_dataset_prior_accuracy": {},
        }
        for i in range(m)
    ]

    store = EmbeddingStore(dim=dim, source_tag="synthetic")
    shares = np.asarray(config.decoy_shares)
    question_lines: list[str] = []
    response_lines: list[str] = []

    for q_index in range(config.num_questions):
        qid = f"synth-q{q_index:05d}"
        numeric = rng.random() < config.numeric_fraction
        truthful = (not numeric) and rng.random() < config.truthfulqa_fraction

        directions = _orthonormal_directions(rng, dim, config.num_decoys + 1)
        truth_dir = directions[0]
        decoy_dirs = directions[1:]

        if numeric:
            gold_value = int(rng.integers(10, 1000))
            gold_answer = str(gold_value)
            decoy_values = [str(gold_value + offset + 1) for offset in range(config.num_decoys)]
            options = None
            task_kind = "numeric"
        else:
            task_kind = "multiple_choice"
            gold_letter = CHOICE_LETTERS[int(rng.integers(0, len(CHOICE_LETTERS)))]
            others = [letter for letter in CHOICE_LETTERS if letter != gold_letter]
            decoy_values = [others[j % len(others)] for j in range(config.num_decoys)]
            gold_answer = gold_letter
            options = []
            for letter in CHOICE_LETTERS:
                flags: list[str] = []
                if truthful:
                    if letter == decoy_values[0]:
                        flags.append("false_plausible")
                    elif letter != gold_letter and letter == others[-1]:
                        flags.append("non_committal")
                text = "I don't know." if "non_committal" in flags else f"Option {letter} text."
                options.append({"letter": letter, "text": text, "flags": flags})

        question_lines.append(
            json.dumps(
                {
                    "question_id": qid,
                    "dataset": "truthfulqa" if truthful else "synthetic",
                    "task_kind": task_kind,
                    "question_text": f"Synthetic question {q_index} "
                    f"({'arithmetic' if numeric else 'choice'} form).",
                    "gold_answer": gold_answer,
                    "options": options,
                },
                sort_keys=True,
            )
        )

        # Correlated correctness via a shared latent factor.
        shared = rng.normal()
        correct_bits = []
        for i in range(m):
            loading = config.skill_correlation[i]
            latent = loading * shared + math.sqrt(max(0.0, 1.0 - loading**2)) * rng.normal()
            correct_bits.append(_phi(latent) < config.skills[i])

        reference_decoy: int | None = None
        for i in range(m):
            correct = correct_bits[i]
            if correct:
                value = gold_answer
                center = truth_dir
                spread = config.truth_spread
                invalid = False
            else:
                decoy = int(rng.choice(config.num_decoys, p=shares))
                if i == 0:
                    reference_decoy = decoy
                value = decoy_values[decoy]
                center = decoy_dirs[decoy]
                spread = config.decoy_spread
                invalid = rng.random() < config.invalid_rate
            embedding = _normalize(center + spread * rng.standard_normal(dim))
            store.add(qid, model_ids[i], embedding)

            verifier = None
            if rng.random() >= config.verifier_missing_rate:
                mu = config.verifier_mu_correct if correct else config.verifier_mu_wrong
                verifier = [
                    float(min(1.0, max(0.0, rng.normal(mu, config.verifier_sigma))))
                    for _ in range(3)
                ]
            logprob = rng.normal(-0.3, 0.15) if correct else rng.normal(-0.45, 0.15)
            response_lines.append(
                json.dumps(
                    {
                        "question_id": qid,
                        "model_id": model_ids[i],
                        "sample_index": 0,
                        "raw_text": _response_text(str(value), correct, invalid, rng),
                        "self_confidence_raw": _confidence_string(
                            config.confidence_styles[i], correct, rng
                        ),
                        "mean_logprob": float(logprob),
                        "verifier_scores": verifier,
                    },
                    sort_keys=True,
                )
            )

        # Extra samples for the self-consistency reference model (model 0).
        # Sample correctness tracks the canonical answer (persistent
        # per-question difficulty) rather than being a fresh skill draw.
        for sample_index in range(1, config.self_consistency_samples + 1):
            correct = rng.random() < (0.9 if correct_bits[0] else 0.2)
            if correct:
                value = gold_answer
            else:
                if reference_decoy is not None and rng.random() < 0.7:
                    decoy = reference_decoy
                else:
                    decoy = int(rng.choice(config.num_decoys, p=shares))
                value = decoy_values[decoy]
            response_lines.append(
                json.dumps(
                    {
                        "question_id": qid,
                        "model_id": model_ids[0],
                        "sample_index": sample_index,
                        "raw_text": _response_text(str(value), correct, False, rng),
                        "self_confidence_raw": None,
                        "mean_logprob": None,
                        "verifier_scores": None,
                    },
                    sort_keys=True,
                )
            )

        # Question embedding for the gating model: task-kind signal + noise.
        task_signal = np.zeros(dim)
        task_signal[0] = 1.0 if numeric else -1.0
        question_embedding = _normalize(task_signal + 0.8 * rng.standard_normal(dim))
        store.add(qid, QUESTION_EMBEDDING_ID, question_embedding)

    (out / "questions.jsonl").write_text("\n".join(question_lines) + "\n", encoding="utf-8")
    (out / "responses.jsonl").write_text("\n".join(response_lines) + "\n", encoding="utf-8")
    with (out / "models.json").open("w", encoding="utf-8") as handle:
        json.dump(catalog, handle, indent=2, sort_keys=True)
        handle.write("\n")
    write_embedding_file(store, out / "embeddings.bin")
    return out


def oracle_upper_bound(corpus: Corpus) -> float:
    """Accuracy of a selector that picks a correct answer whenever one exists."""
    instances = corpus.instances
    if not instances:
        raise ValueError("empty corpus")
    return float(np.mean([1.0 if any(inst.correctness) else 0.0 for inst in instances]))
