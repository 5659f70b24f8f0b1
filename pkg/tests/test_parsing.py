from __future__ import annotations

import math

from hypothesis import given, settings
from hypothesis import strategies as st

from mcre.parsing import (
    INVALID,
    normalize_choice_letter,
    normalize_confidence,
    normalize_numeric,
    parse_response,
    split_reasoning_and_final,
)


class TestSplitReasoningAndFinal:
    def test_marker_line_splits_reasoning_and_final(self):
        result = split_reasoning_and_final("Step 1... \nFinal Answer: (B)")
        assert result == ("Step 1...", "(B)")

    def test_no_marker_is_invalid_and_keeps_text(self):
        assert split_reasoning_and_final("I think it is 7.") is None
        parsed = parse_response("I think it is 7.", "numeric")
        assert not parsed.is_valid
        assert parsed.reasoning_text == "I think it is 7."
        assert parsed.final_normalized == INVALID

    def test_last_marker_wins(self):
        # Hand-enumerated multi-marker fixtures: the final segment always
        # comes from the last marker line.
        cases = [
            ("Final Answer: 3\n...\nFinal Answer: 5", "5"),
            ("Final Answer: 1\nFinal Answer: 2\nFinal Answer: 3", "3"),
            ("a\nfinal answer: (A)\nb\nFINAL ANSWER: (C)", "(C)"),
        ]
        for text, expected in cases:
            _, final_raw = split_reasoning_and_final(text)
            assert final_raw == expected

    def test_earlier_markers_stay_in_reasoning(self):
        reasoning, final_raw = split_reasoning_and_final(
            "Final Answer: 3\nwait, redo\nFinal Answer: 5"
        )
        assert "Final Answer: 3" in reasoning
        assert final_raw == "5"

    def test_pipe_delimited_form(self):
        reasoning, final_raw = split_reasoning_and_final(
            "thinking...\n| Final Answer: [42] |"
        )
        assert reasoning == "thinking..."
        assert final_raw == "[42]"

    def test_case_insensitive_marker(self):
        assert split_reasoning_and_final("x\nfinal ANSWER:  7 ")[1] == "7"


class TestNormalizeNumeric:
    def test_strips_commas_and_trailing_punctuation(self):
        assert normalize_numeric("1,234.") == 1234

    def test_strips_currency_and_unit_word(self):
        assert normalize_numeric("$18 dollars") == 18

    def test_simple_fraction(self):
        assert normalize_numeric("3/4") == 0.75

    def test_bracketed_value(self):
        assert normalize_numeric("[42]") == 42

    def test_negative_and_scientific(self):
        assert normalize_numeric("-3.5") == -3.5
        assert normalize_numeric("1e-3") == 0.001

    def test_garbage_is_invalid(self):
        assert normalize_numeric("no idea") is None
        assert normalize_numeric("") is None
        assert normalize_numeric("1/0") is None

    @given(st.floats(allow_nan=False, allow_infinity=False, width=64))
    @settings(max_examples=200)
    def test_roundtrip_formatted_reals(self, x):
        parsed = normalize_numeric(repr(x))
        assert parsed is not None
        assert parsed == x or math.isclose(parsed, x, rel_tol=0, abs_tol=0)


class TestNormalizeChoiceLetter:
    def test_parenthesized_lowercase(self):
        assert normalize_choice_letter("(b)") == "B"

    def test_sentence_with_letter(self):
        assert normalize_choice_letter("The answer is C") == "C"

    def test_ambiguous_is_invalid(self):
        assert normalize_choice_letter("B or C") is None

    def test_absent_is_invalid(self):
        assert normalize_choice_letter("no answer") is None

    def test_option_prefix(self):
        assert normalize_choice_letter("option B") == "B"

    def test_extended_letters(self):
        assert normalize_choice_letter("(G)") == "G"


class TestNormalizeConfidence:
    def test_word_map(self):
        assert normalize_confidence("high") == 0.8
        assert normalize_confidence("very low") == 0.1
        assert normalize_confidence("Very High") == 0.95

    def test_numeric_string_identity(self):
        assert normalize_confidence("0.7") == 0.7

    def test_clamped(self):
        assert normalize_confidence("1.4") == 1.0
        assert normalize_confidence(-0.2) == 0.0

    def test_unrecognized_is_missing(self):
        assert normalize_confidence("dunno") is None
        assert normalize_confidence(None) is None


class TestParseResponse:
    @given(st.text(max_size=400))
    @settings(max_examples=200)
    def test_total_on_arbitrary_text(self, text):
        for task_kind in ("numeric", "multiple_choice"):
            parsed = parse_response(text, task_kind)
            assert parsed.is_valid == (parsed.final_normalized != INVALID)

    def test_numeric_response(self):
        parsed = parse_response("Step 1: 6*7.\nFinal Answer: 42", "numeric")
        assert parsed.is_valid
        assert parsed.final_normalized == 42.0

    def test_choice_response(self):
        parsed = parse_response("Hmm.\nFinal Answer: (B)", "multiple_choice")
        assert parsed.final_normalized == "B"

    def test_valid_has_exactly_one_value_kind(self):
        parsed = parse_response("x\nFinal Answer: 3", "numeric")
        assert isinstance(parsed.final_normalized, float)
