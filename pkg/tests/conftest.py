from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from mcre.corpus import AnswerOption, QuestionRecord, ResponseRecord
from mcre.embedding import EmbeddingStore, write_embedding_file


def finite_difference_grads(params: dict[str, np.ndarray], loss_fn, step: float = 1e-5):
    """Central finite differences of loss_fn() w.r.t. every parameter entry.

    Mutates each parameter in place and restores it; loss_fn must read the
    live parameter dict.
    """
    grads = {}
    for name, arr in params.items():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            loss_plus = loss_fn()
            flat[i] = original - step
            loss_minus = loss_fn()
            flat[i] = original
            gflat[i] = (loss_plus - loss_minus) / (2.0 * step)
        grads[name] = grad
    return grads


def gradient_relative_error(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]) -> float:
    a = np.concatenate([analytic[k].ravel() for k in sorted(analytic)])
    b = np.concatenate([numeric[k].ravel() for k in sorted(numeric)])
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def make_question(
    qid: str = "q1",
    dataset: str = "synthetic",
    task_kind: str = "numeric",
    gold: str = "42",
    options: list[tuple[str, str, tuple[str, ...]]] | None = None,
) -> QuestionRecord:
    opts = tuple(AnswerOption(letter, text, flags) for letter, text, flags in (options or []))
    return QuestionRecord(
        question_id=qid,
        dataset=dataset,
        task_kind=task_kind,
        question_text=f"question {qid}",
        gold_answer=gold,
        options=opts,
    )


def make_response(
    qid: str = "q1",
    model_id: str = "m1",
    text: str = "Final Answer: 42",
    sample_index: int = 0,
    confidence=None,
    logprob=None,
    verifier=None,
) -> ResponseRecord:
    return ResponseRecord(
        question_id=qid,
        model_id=model_id,
        sample_index=sample_index,
        raw_text=text,
        self_confidence_raw=confidence,
        mean_logprob=logprob,
        verifier_scores=verifier,
    )


def write_corpus_dir(
    root: Path,
    questions: list[dict],
    responses: list[dict],
    models: list[dict],
    embeddings: dict[tuple[str, str], np.ndarray] | None = None,
) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    (root / "questions.jsonl").write_text(
        "".join(json.dumps(q) + "\n" for q in questions), encoding="utf-8"
    )
    (root / "responses.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in responses), encoding="utf-8"
    )
    (root / "models.json").write_text(json.dumps(models), encoding="utf-8")
    if embeddings:
        dim = len(next(iter(embeddings.values())))
        store = EmbeddingStore(dim=dim)
        for (qid, mid), values in embeddings.items():
            store.add(qid, mid, np.asarray(values, dtype=np.float64))
        write_embedding_file(store, root / "embeddings.bin")
    return root


@pytest.fixture
def two_question_corpus(tmp_path: Path) -> Path:
    """Minimal valid corpus: 2 questions x 3 models with embeddings."""
    questions = [
        {
            "question_id": "q1",
            "dataset": "gsm8k",
            "task_kind": "numeric",
            "question_text": "What is 6 x 7?",
            "gold_answer": "42",
        },
        {
            "question_id": "q2",
            "dataset": "arc",
            "task_kind": "multiple_choice",
            "question_text": "Pick one.",
            "gold_answer": "B",
            "options": [
                {"letter": "A", "text": "first"},
                {"letter": "B", "text": "second"},
                {"letter": "C", "text": "third"},
                {"letter": "D", "text": "fourth"},
            ],
        },
    ]
    responses = []
    answers = {"q1": ["42", "41", "42"], "q2": ["(B)", "(C)", "B"]}
    for qid in ("q1", "q2"):
        for idx, mid in enumerate(("m1", "m2", "m3")):
            responses.append(
                {
                    "question_id": qid,
                    "model_id": mid,
                    "sample_index": 0,
                    "raw_text": f"Step 1: think.\nFinal Answer: {answers[qid][idx]}",
                    "self_confidence_raw": "0.8",
                    "mean_logprob": -0.3,
                    "verifier_scores": [0.7, 0.8, 0.9],
                }
            )
    models = [
        {"model_id": "m1", "family": "alpha", "log_param_count": 22.0},
        {"model_id": "m2", "family": "beta", "log_param_count": 22.3},
        {"model_id": "m3", "family": "alpha", "log_param_count": 22.6},
    ]
    rng = np.random.default_rng(0)
    embeddings = {
        (qid, mid): rng.standard_normal(8)
        for qid in ("q1", "q2")
        for mid in ("m1", "m2", "m3")
    }
    return write_corpus_dir(tmp_path / "corpus", questions, responses, models, embeddings)
