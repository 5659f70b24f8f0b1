"""Split raw model output into reasoning and final answer, and normalize answers.

Models are prompted to end with a line like ``| Final Answer: [42] |`` or
``Final Answer: (B)``.  Parsing is total: any text yields a ParsedAnswer,
with ``is_valid = False`` standing in for every unparseable case.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

INVALID = "invalid"

# Letters beyond D accepted so the schema generalizes to wider option sets.
CHOICE_LETTERS = "ABCDEFGH"

FINAL_ANSWER_RE = re.compile(r"final\s+answer\s*:", re.IGNORECASE)

CONFIDENCE_WORDS = {
    "very low": 0.1,
    "low": 0.3,
    "medium": 0.5,
    "high": 0.8,
    "very high": 0.95,
}

_CURRENCY = "$€£¥"
_FRACTION_RE = re.compile(r"^[+-]?\d+\s*/\s*\d+$")
_LETTER_RE = re.compile(r"\b([A-Ha-h])\b")


@dataclass(frozen=True)
class ParsedAnswer:
    """One response split into segments, with its normalized final answer.

    final_normalized is a float for numeric tasks, a single uppercase
    letter for multiple choice, or the string "invalid".
    """

    reasoning_text: str
    final_raw: str
    final_normalized: float | str
    is_valid: bool

    @staticmethod
    def invalid(reasoning_text: str) -> "ParsedAnswer":
        return ParsedAnswer(reasoning_text, "", INVALID, False)


def split_reasoning_and_final(raw_text: str) -> tuple[str, str] | None:
    """Locate the last line carrying a ``Final Answer:`` marker.

    Returns (reasoning, final_raw) or None when no marker exists.  The
    marker match is case-insensitive and tolerates surrounding pipes;
    everything before the marker line is the reasoning segment.
    """
    lines = raw_text.splitlines(keepends=True)
    marker_idx = None
    for i, line in enumerate(lines):
        if FINAL_ANSWER_RE.search(line):
            marker_idx = i
    if marker_idx is None:
        return None
    reasoning = "".join(lines[:marker_idx]).rstrip()
    line = lines[marker_idx]
    match = FINAL_ANSWER_RE.search(line)
    assert match is not None
    final_raw = line[match.end():].strip()
    # Strip the decorative trailing pipe of the `| Final Answer: ... |` form.
    final_raw = final_raw.rstrip("|").strip()
    return reasoning, final_raw


def _strip_wrappers(text: str) -> str:
    """Peel matched/unmatched brackets, pipes, and quotes off both ends."""
    return text.strip().strip("|").strip().strip("[]()").strip()


def normalize_numeric(final_raw: str) -> float | None:
    """Parse a numeric final answer; None when nothing numeric remains.

    Strips commas, currency symbols, trailing unit words, and trailing
    punctuation, then accepts integers, decimals (incl. scientific
    notation), and simple fractions ``a/b``.
    """
    text = _strip_wrappers(final_raw)
    text = text.replace(",", "")
    text = text.strip("".join(_CURRENCY) + " ")
    # Drop trailing unit words ("dollars", "square meters", ...).
    tokens = text.split()
    while len(tokens) > 1 and tokens[-1].strip(".,;:!?%").isalpha():
        tokens.pop()
    text = " ".join(tokens)
    text = text.rstrip(".,;:!?%")
    text = text.strip("".join(_CURRENCY))
    if not text:
        return None
    if _FRACTION_RE.match(text):
        num, den = text.split("/")
        denominator = float(den)
        if denominator == 0:
            return None
        return float(num) / denominator
    try:
        value = float(text)
    except ValueError:
        return None
    if value != value or value in (float("inf"), float("-inf")):
        return None
    return value


def normalize_choice_letter(final_raw: str) -> str | None:
    """Extract a single option letter (A-H); None when absent or ambiguous."""
    text = _strip_wrappers(final_raw)
    letters = {m.group(1).upper() for m in _LETTER_RE.finditer(text)}
    letters &= set(CHOICE_LETTERS)
    if len(letters) != 1:
        return None
    return letters.pop()


def normalize_confidence(raw: str | float | int | None) -> float | None:
    """Map a self-reported confidence to [0, 1]; None when unrecognized.

    Numeric values and numeric strings are clamped to [0, 1]; a short word
    scale (very low .. very high) covers the common textual replies.
    """
    if raw is None:
        return None
    if isinstance(raw, (int, float)):
        return min(1.0, max(0.0, float(raw)))
    text = raw.strip().lower().strip(".,;:!")
    if text in CONFIDENCE_WORDS:
        return CONFIDENCE_WORDS[text]
    try:
        return min(1.0, max(0.0, float(text)))
    except ValueError:
        return None


def parse_response(raw_text: str, task_kind: str) -> ParsedAnswer:
    """Full parse of one raw response for the given task kind."""
    split = split_reasoning_and_final(raw_text)
    if split is None:
        return ParsedAnswer.invalid(raw_text)
    reasoning, final_raw = split
    if task_kind == "numeric":
        value: float | str | None = normalize_numeric(final_raw)
    elif task_kind == "multiple_choice":
        value = normalize_choice_letter(final_raw)
    else:
        raise ValueError(f"unknown task_kind: {task_kind!r}")
    if value is None:
        return ParsedAnswer(reasoning, final_raw, INVALID, False)
    return ParsedAnswer(reasoning, final_raw, value, True)
