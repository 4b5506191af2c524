"""Question augmentation: build the variant-generation prompt for a seed
problem and parse the teacher's response into validated new questions.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib.resources import files
from pathlib import Path
from typing import Iterable

from .answers import CanonicalAnswer

logger = logging.getLogger(__name__)

DEFAULT_QUESTIONS_PER_SEED = 5
PROMPT_PLACEHOLDER = "{QUESTION}"


class ParseError(Exception):
    """The response contains no usable array of question objects."""


@dataclass(frozen=True)
class SeedProblem:
    id: str
    question_text: str
    image_ref: str
    ground_truth: CanonicalAnswer | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("seed id must be nonempty")
        if not self.question_text.strip():
            raise ValueError(f"seed {self.id}: question_text must be nonempty")


@dataclass(frozen=True)
class GeneratedQuestion:
    id: str
    seed_id: str
    question_text: str


def load_augment_prompt(path: str | Path | None = None) -> str:
    """Prompt template: the packaged asset, or an override file."""
    if path is not None:
        return Path(path).read_text(encoding="utf-8")
    return files("geodistill.prompts").joinpath("augment_prompt.txt").read_text(encoding="utf-8")


def build_augment_prompt(seed: SeedProblem, template: str | None = None) -> str:
    """Substitute the seed question into the template.

    A single literal substitution: braces inside the question or the template
    are preserved as-is (no recursive formatting).
    """
    if not seed.question_text.strip():
        raise ValueError(f"seed {seed.id}: question_text must be nonempty")
    if template is None:
        template = load_augment_prompt()
    if PROMPT_PLACEHOLDER not in template:
        raise ValueError(f"prompt template has no {PROMPT_PLACEHOLDER} placeholder")
    return template.replace(PROMPT_PLACEHOLDER, seed.question_text, 1)


def _candidate_arrays(response: str) -> Iterable[list]:
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\[", response):
        try:
            value, _ = decoder.raw_decode(response, m.start())
        except ValueError:
            continue
        if isinstance(value, list):
            yield value


def parse_generated_questions(
    response: str, seed_id: str, expected_k: int = DEFAULT_QUESTIONS_PER_SEED
) -> list[GeneratedQuestion]:
    """Extract question strings from the first well-formed array of objects.

    Tolerates surrounding prose and code fences. Empty question entries are
    dropped; a count different from expected_k is a warning, not an error.
    """
    if expected_k < 1:
        raise ValueError("expected_k must be >= 1")
    texts: list[str] | None = None
    for array in _candidate_arrays(response or ""):
        if not array or not all(isinstance(obj, dict) for obj in array):
            continue
        found = [
            str(obj["question"]).strip()
            for obj in array
            if isinstance(obj.get("question"), str) and str(obj["question"]).strip()
        ]
        if found:
            texts = found
            break
    if texts is None:
        raise ParseError(f"seed {seed_id}: no array of question objects in response")
    if len(texts) != expected_k:
        logger.warning(
            "seed %s: expected %d generated questions, got %d", seed_id, expected_k, len(texts)
        )
    texts = texts[:expected_k]
    return [
        GeneratedQuestion(id=f"{seed_id}-q{i}", seed_id=seed_id, question_text=t)
        for i, t in enumerate(texts, start=1)
    ]


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def dedup_questions(
    candidates: Iterable[GeneratedQuestion], existing: Iterable[str]
) -> list[GeneratedQuestion]:
    """Drop candidates that duplicate `existing` texts or earlier candidates.

    Matching is exact after whitespace collapse and case folding; callers
    include the seed question in `existing` to suppress echoes of it.
    Stable: survivors keep their input order.
    """
    seen = {_normalize(t) for t in existing}
    kept: list[GeneratedQuestion] = []
    for cand in candidates:
        key = _normalize(cand.question_text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(cand)
    return kept
