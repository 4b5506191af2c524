"""Evaluation harness: run a model over a test set with greedy decoding and
score Top-1 accuracy by answer equivalence, with optional error tagging.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .answers import (
    DEFAULT_REL_TOL,
    AnswerKind,
    CanonicalAnswer,
    ExtractionStatus,
    answer_to_fields,
    equivalent,
    extract_tagged,
    parse_answer,
)
from .client import ChatRequest, TeacherClient, TeacherClientError
from .cot import build_cot_prompt
from .dataset import SchemaError, dump_rows, load_rows

logger = logging.getLogger(__name__)

DEFAULT_EVAL_MAX_TOKENS = 2048
STATUS_TRANSPORT_ERROR = "transport_error"
STATUS_EXCLUDED = "excluded_text_gold"


class UnknownId(Exception):
    pass


class TagOnCorrectItem(Exception):
    pass


@dataclass(frozen=True)
class EvalItem:
    id: str
    question: str
    image_ref: str
    gold: CanonicalAnswer


def load_testset(path: str | Path) -> list[EvalItem]:
    """Test set JSONL: {"id","question","image","gold"}."""
    items = []
    for i, row in enumerate(load_rows(path), start=1):
        try:
            items.append(
                EvalItem(
                    id=row["id"],
                    question=row["question"],
                    image_ref=row.get("image", ""),
                    gold=parse_answer(row["gold"]),
                )
            )
        except KeyError as exc:
            raise SchemaError(path, i, f"missing field {exc}") from exc
    return items


@dataclass(frozen=True)
class PerItemResult:
    id: str
    predicted: CanonicalAnswer | None
    gold: CanonicalAnswer
    correct: bool
    status: str  # extraction status, transport_error, or excluded_text_gold


@dataclass(frozen=True)
class EvalConfig:
    temperature: float = 0.0  # greedy decoding
    max_tokens: int = DEFAULT_EVAL_MAX_TOKENS
    rel_tol: float | Fraction = DEFAULT_REL_TOL
    parallelism: int = 8
    strict_numeric: bool = False  # drop text-gold items from the denominator
    think_prefix: str | None = None  # partial reasoning prepended to the prompt


@dataclass(frozen=True)
class EvalReport:
    total: int
    correct: int
    accuracy: float
    per_item: tuple[PerItemResult, ...]
    error_tags: dict[str, int] | None = None

    def tag_percentages(self) -> dict[str, float]:
        """Each tag's share of the incorrect, non-excluded items."""
        if not self.error_tags:
            return {}
        errors = sum(
            1 for r in self.per_item if not r.correct and r.status != STATUS_EXCLUDED
        )
        if not errors:
            return {}
        return {
            tag: round(100.0 * count / errors, 1)
            for tag, count in sorted(self.error_tags.items())
        }

    def summary_line(self) -> str:
        parts = [f"accuracy {self.accuracy:.4f} ({self.correct}/{self.total})"]
        for tag, pct in self.tag_percentages().items():
            parts.append(f"{tag} {pct:.1f}% of errors")
        return ", ".join(parts)


def _build_request(item: EvalItem, cfg: EvalConfig) -> ChatRequest:
    prompt = build_cot_prompt(item.question)
    if cfg.think_prefix:
        # continuation setup: reopen the think tag with the corrected prefix
        prompt = f"{prompt}\n<think>{cfg.think_prefix}"
    return ChatRequest(
        user_text=prompt,
        image_refs=(item.image_ref,) if item.image_ref else (),
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        request_tag=item.id,
    )


def evaluate(
    testset: Sequence[EvalItem], client: TeacherClient, cfg: EvalConfig = EvalConfig()
) -> EvalReport:
    """One greedy generation per item; equivalence against gold decides
    correctness. Item failures are scored incorrect, never aborts."""
    if not testset:
        logger.warning("evaluate: empty test set")
        return EvalReport(total=0, correct=0, accuracy=0.0, per_item=())

    reqs = [_build_request(item, cfg) for item in testset]
    results = client.complete_many(reqs, parallelism=cfg.parallelism)

    per_item: list[PerItemResult] = []
    for item, result in zip(testset, results):
        if cfg.strict_numeric and item.gold.kind is AnswerKind.TEXT:
            per_item.append(
                PerItemResult(item.id, None, item.gold, False, STATUS_EXCLUDED)
            )
            continue
        if isinstance(result, TeacherClientError):
            logger.warning("item %s failed: %s", item.id, result)
            per_item.append(
                PerItemResult(item.id, None, item.gold, False, STATUS_TRANSPORT_ERROR)
            )
            continue
        text = result.text
        if cfg.think_prefix:
            # the response continues a transcript whose think tag was opened
            # in the prompt; reassemble before extraction
            text = f"<think>{cfg.think_prefix}{text}"
        tagged = extract_tagged(text)
        predicted = parse_answer(tagged.answer_text)
        correct = tagged.status is ExtractionStatus.CLEAN and equivalent(
            predicted, item.gold, cfg.rel_tol
        )
        per_item.append(
            PerItemResult(item.id, predicted, item.gold, correct, tagged.status.value)
        )

    per_item.sort(key=lambda r: r.id)
    scored = [r for r in per_item if r.status != STATUS_EXCLUDED]
    correct = sum(1 for r in scored if r.correct)
    total = len(scored)
    return EvalReport(
        total=total,
        correct=correct,
        accuracy=correct / total if total else 0.0,
        per_item=tuple(per_item),
    )


def tag_errors(report: EvalReport, tags: Mapping[str, str]) -> EvalReport:
    """Attach externally supplied per-item error tags (e.g. from manual
    failure analysis) and aggregate them into counts."""
    by_id = {r.id: r for r in report.per_item}
    counts: dict[str, int] = {}
    for item_id, tag in tags.items():
        result = by_id.get(item_id)
        if result is None:
            raise UnknownId(f"tag references unknown item id {item_id!r}")
        if result.correct:
            raise TagOnCorrectItem(f"item {item_id!r} is correct; tags apply to errors")
        counts[tag] = counts.get(tag, 0) + 1
    return replace(report, error_tags=counts)


def report_rows(report: EvalReport) -> list[dict]:
    rows = []
    for r in report.per_item:
        pk, pv = answer_to_fields(r.predicted) if r.predicted is not None else (None, None)
        gk, gv = answer_to_fields(r.gold)
        rows.append(
            {
                "id": r.id,
                "predicted_kind": pk,
                "predicted_value": pv,
                "gold_kind": gk,
                "gold_value": gv,
                "correct": r.correct,
                "status": r.status,
            }
        )
    return rows


def write_report(report: EvalReport, path: str | Path) -> int:
    return dump_rows(report_rows(report), path)
