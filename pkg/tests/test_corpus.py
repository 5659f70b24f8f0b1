from __future__ import annotations

import json

import pytest

from mcre.corpus import CorpusError, assign_splits, label_correctness, load_corpus
from mcre.parsing import ParsedAnswer

from conftest import make_question, make_response, write_corpus_dir


class TestLoadCorpus:
    def test_valid_corpus_counts(self, two_question_corpus):
        corpus = load_corpus(two_question_corpus)
        assert corpus.manifest.num_questions == 2
        assert corpus.manifest.num_models == 3
        assert corpus.manifest.dataset_counts == {"gsm8k": 1, "arc": 1}
        for inst in corpus.instances:
            assert len(inst.responses) == 3
            assert len(inst.parsed) == 3
            assert len(inst.correctness) == 3

    def test_correctness_labels_from_parsing(self, two_question_corpus):
        corpus = load_corpus(two_question_corpus)
        by_qid = {inst.question.question_id: inst for inst in corpus.instances}
        assert by_qid["q1"].correctness == [1, 0, 1]
        assert by_qid["q2"].correctness == [1, 0, 1]

    def test_missing_canonical_response(self, tmp_path, two_question_corpus):
        lines = (two_question_corpus / "responses.jsonl").read_text().strip().splitlines()
        kept = [line for line in lines if json.loads(line)["model_id"] != "m2"
                or json.loads(line)["question_id"] != "q1"]
        (two_question_corpus / "responses.jsonl").write_text("\n".join(kept) + "\n")
        with pytest.raises(CorpusError, match="missing canonical response"):
            load_corpus(two_question_corpus)

    def test_duplicate_response_key(self, two_question_corpus):
        lines = (two_question_corpus / "responses.jsonl").read_text().strip().splitlines()
        lines.append(lines[0])
        (two_question_corpus / "responses.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(CorpusError, match="duplicate key"):
            load_corpus(two_question_corpus)

    def test_malformed_line_reports_line_number(self, two_question_corpus):
        text = (two_question_corpus / "questions.jsonl").read_text()
        (two_question_corpus / "questions.jsonl").write_text(text + "{not json\n")
        with pytest.raises(CorpusError, match=r"questions\.jsonl:3"):
            load_corpus(two_question_corpus)

    def test_unknown_model_id_rejected(self, two_question_corpus):
        lines = (two_question_corpus / "responses.jsonl").read_text().strip().splitlines()
        rogue = json.loads(lines[0])
        rogue["model_id"] = "mystery"
        lines.append(json.dumps(rogue))
        (two_question_corpus / "responses.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(CorpusError, match="unknown model_id"):
            load_corpus(two_question_corpus)

    def test_gold_must_be_option_letter(self, tmp_path):
        questions = [
            {
                "question_id": "q1",
                "dataset": "arc",
                "task_kind": "multiple_choice",
                "question_text": "t",
                "gold_answer": "E",
                "options": [{"letter": "A", "text": "a"}, {"letter": "B", "text": "b"}],
            }
        ]
        models = [
            {"model_id": "m1", "family": "f", "log_param_count": 1.0},
            {"model_id": "m2", "family": "f", "log_param_count": 1.0},
        ]
        root = write_corpus_dir(tmp_path / "bad", questions, [], models)
        with pytest.raises(CorpusError, match="not an option letter"):
            load_corpus(root)

    def test_flags_only_on_truthfulqa(self, tmp_path):
        questions = [
            {
                "question_id": "q1",
                "dataset": "arc",
                "task_kind": "multiple_choice",
                "question_text": "t",
                "gold_answer": "A",
                "options": [
                    {"letter": "A", "text": "a"},
                    {"letter": "B", "text": "b", "flags": ["false_plausible"]},
                ],
            }
        ]
        models = [
            {"model_id": "m1", "family": "f", "log_param_count": 1.0},
            {"model_id": "m2", "family": "f", "log_param_count": 1.0},
        ]
        root = write_corpus_dir(tmp_path / "bad", questions, [], models)
        with pytest.raises(CorpusError, match="only allowed on truthfulqa"):
            load_corpus(root)

    def test_verifier_scores_range_checked(self, two_question_corpus):
        lines = (two_question_corpus / "responses.jsonl").read_text().strip().splitlines()
        obj = json.loads(lines[0])
        obj["verifier_scores"] = [0.5, 1.5, 0.5]
        lines[0] = json.dumps(obj)
        (two_question_corpus / "responses.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(CorpusError, match=r"outside \[0,1\]"):
            load_corpus(two_question_corpus)

    def test_extra_samples_collected_in_order(self, two_question_corpus):
        lines = (two_question_corpus / "responses.jsonl").read_text().strip().splitlines()
        for idx in (2, 1):
            lines.append(
                json.dumps(
                    {
                        "question_id": "q1",
                        "model_id": "m1",
                        "sample_index": idx,
                        "raw_text": f"Final Answer: {40 + idx}",
                    }
                )
            )
        (two_question_corpus / "responses.jsonl").write_text("\n".join(lines) + "\n")
        corpus = load_corpus(two_question_corpus)
        samples = corpus.extra_samples[("q1", "m1")]
        assert [rec.sample_index for rec in samples] == [1, 2]


class TestLabelCorrectness:
    def test_numeric_within_tolerance(self):
        question = make_question(task_kind="numeric", gold="72")
        parsed = ParsedAnswer("", "72.0000001", 72.0000001, True)
        assert label_correctness(parsed, question) == 1

    def test_numeric_outside_tolerance(self):
        question = make_question(task_kind="numeric", gold="72")
        parsed = ParsedAnswer("", "72.1", 72.1, True)
        assert label_correctness(parsed, question) == 0

    def test_letter_normalization(self):
        question = make_question(
            task_kind="multiple_choice",
            gold="B",
            options=[("A", "", ()), ("B", "", ())],
        )
        parsed = ParsedAnswer("", "(B)", "B", True)
        assert label_correctness(parsed, question) == 1

    def test_invalid_parse_is_zero(self):
        question = make_question(task_kind="numeric", gold="7")
        assert label_correctness(ParsedAnswer.invalid("text"), question) == 0

    def test_unparseable_gold_raises(self):
        question = make_question(task_kind="numeric", gold="not-a-number")
        parsed = ParsedAnswer("", "3", 3.0, True)
        with pytest.raises(CorpusError, match="not numeric"):
            label_correctness(parsed, question)

    def test_pure_function(self):
        question = make_question(task_kind="numeric", gold="5")
        parsed = ParsedAnswer("", "5", 5.0, True)
        assert all(label_correctness(parsed, question) == 1 for _ in range(3))


def _instances(n, dataset="synthetic"):
    from mcre.corpus import ConsensusInstance

    out = []
    for i in range(n):
        question = make_question(qid=f"{dataset}-q{i}", dataset=dataset)
        out.append(ConsensusInstance(question, [], [], []))
    return out


class TestAssignSplits:
    def test_ratio_arithmetic_ten_questions(self):
        instances = _instances(10)
        assignment = assign_splits(instances, seed=7)
        counts = {split: 0 for split in ("train", "val", "test")}
        for split in assignment.values():
            counts[split] += 1
        assert counts == {"train": 7, "val": 1, "test": 2}

    def test_deterministic_across_runs(self):
        a = assign_splits(_instances(25), seed=3)
        b = assign_splits(_instances(25), seed=3)
        assert a == b

    def test_invariant_under_reordering(self):
        instances = _instances(25)
        forward = assign_splits(instances, seed=9)
        backward = assign_splits(list(reversed(_instances(25))), seed=9)
        assert forward == backward

    def test_seed_changes_assignment(self):
        a = assign_splits(_instances(40), seed=1)
        b = assign_splits(_instances(40), seed=2)
        assert a != b

    def test_per_dataset_stratification(self):
        instances = _instances(20, "gsm8k") + _instances(30, "arc")
        assignment = assign_splits(instances, seed=5)
        for dataset, total in (("gsm8k", 20), ("arc", 30)):
            counts = {"train": 0, "val": 0, "test": 0}
            for inst in instances:
                if inst.question.dataset == dataset:
                    counts[assignment[inst.question.question_id]] += 1
            # ratio deviation below one question per split
            assert abs(counts["train"] - 0.7 * total) < 1
            assert abs(counts["val"] - 0.1 * total) < 1
            assert abs(counts["test"] - 0.2 * total) < 1

    def test_too_few_questions(self):
        with pytest.raises(ValueError, match="at least 10 questions"):
            assign_splits(_instances(9), seed=0)

    def test_grouping_all_answers_share_split(self):
        # Splits are assigned per question id, so all M answers of an
        # instance inherit one split by construction.
        instances = _instances(12)
        assignment = assign_splits(instances, seed=0)
        for inst in instances:
            assert inst.split == assignment[inst.question.question_id]
            assert inst.split in ("train", "val", "test")
