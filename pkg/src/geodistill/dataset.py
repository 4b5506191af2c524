"""Dataset persistence and curation: JSONL storage, merging, statistics,
question-type profiling, and SFT-format export.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .answers import (
    ANSWER_CLOSE,
    ANSWER_OPEN,
    THINK_CLOSE,
    THINK_OPEN,
    ExtractionStatus,
    answer_from_fields,
    answer_to_fields,
    extract_tagged,
    parse_answer,
)
from .augment import GeneratedQuestion, SeedProblem
from .cot import CoTRecord, build_cot_prompt

logger = logging.getLogger(__name__)

DATASET_FIELDS = (
    "id", "question_id", "image", "think", "answer",
    "extracted_kind", "extracted_value", "status", "kept",
)


class SchemaError(Exception):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


class DuplicateId(Exception):
    def __init__(self, record_id: str):
        super().__init__(f"duplicate record id: {record_id}")
        self.record_id = record_id


class EmptyDataset(Exception):
    pass


class NonCleanRecord(Exception):
    def __init__(self, record_id: str, reason: str):
        super().__init__(f"record {record_id}: {reason}")
        self.record_id = record_id


class MissingQuestion(Exception):
    def __init__(self, question_id: str):
        super().__init__(f"no question text for question_id {question_id}")
        self.question_id = question_id


# --- generic JSONL rows -------------------------------------------------------


def dump_rows(rows: Iterable[Mapping], path: str | Path) -> int:
    """One JSON object per line, UTF-8, newline-terminated, stable encoding."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")
            n += 1
    return n


def load_rows(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except ValueError as exc:
                raise SchemaError(path, i, f"invalid JSON: {exc}") from exc
            if not isinstance(row, dict):
                raise SchemaError(path, i, "expected a JSON object")
            rows.append(row)
    return rows


# --- dataset records ------------------------------------------------------------


def record_to_row(record: CoTRecord) -> dict:
    kind, value = answer_to_fields(record.extracted)
    return {
        "id": record.id,
        "question_id": record.question_id,
        "image": record.image_ref,
        "think": record.think_text,
        "answer": record.answer_text,
        "extracted_kind": kind,
        "extracted_value": value,
        "status": record.extraction_status.value,
        "kept": record.kept,
    }


def record_from_row(row: Mapping) -> CoTRecord:
    return CoTRecord(
        id=row["id"],
        question_id=row["question_id"],
        image_ref=row["image"],
        think_text=row["think"],
        answer_text=row["answer"],
        extracted=answer_from_fields(row["extracted_kind"], row["extracted_value"]),
        extraction_status=ExtractionStatus(row["status"]),
        kept=row["kept"],
    )


def write_jsonl(records: Iterable[CoTRecord], path: str | Path) -> int:
    return dump_rows((record_to_row(r) for r in records), path)


def read_jsonl(path: str | Path) -> list[CoTRecord]:
    """Load and validate a dataset file; schema problems name their line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except ValueError as exc:
                raise SchemaError(path, i, f"invalid JSON: {exc}") from exc
            if not isinstance(row, dict):
                raise SchemaError(path, i, "expected a JSON object")
            missing = [f for f in DATASET_FIELDS if f not in row]
            if missing:
                raise SchemaError(path, i, f"missing fields: {', '.join(missing)}")
            if row["kept"] is not None and not isinstance(row["kept"], bool):
                raise SchemaError(path, i, "kept must be true, false, or null")
            try:
                records.append(record_from_row(row))
            except (KeyError, ValueError) as exc:
                raise SchemaError(path, i, str(exc)) from exc
    return records


def merge(base: Sequence[CoTRecord], additions: Sequence[CoTRecord]) -> list[CoTRecord]:
    """Concatenate datasets, rejecting any duplicate record id."""
    seen: set[str] = set()
    out: list[CoTRecord] = []
    for record in list(base) + list(additions):
        if record.id in seen:
            raise DuplicateId(record.id)
        seen.add(record.id)
        out.append(record)
    return out


# --- statistics -----------------------------------------------------------------


class QuestionType(str, Enum):
    ANGLE = "angle"
    LENGTH = "length"
    AREA = "area"
    SIMILARITY = "similarity"
    COORDINATE = "coordinate"
    OTHER = "other"


_ANGLE_RX = re.compile(r"\bangles?\b")
_SIDE_FIND_RX = re.compile(r"\bfind\s+(?:the\s+)?[A-Z]{2}\b")
_SEGMENT_PAIR_RX = re.compile(r"\b[A-Z]{2}\s*[:/]\s*[A-Z]{2}\b")
_COORD_RX = re.compile(r"\bx-|\by-")


def classify_question_type(question_text: str) -> QuestionType:
    """First-match keyword rules, priority angle > length > area >
    similarity > coordinate (perimeter counts as length, area beats
    similarity for area-ratio questions)."""
    if not question_text or not question_text.strip():
        raise ValueError("question_text must be nonempty")
    low = question_text.lower()
    if _ANGLE_RX.search(low) or "∠" in question_text or "degree measure" in low:
        return QuestionType.ANGLE
    if "length" in low or "perimeter" in low or _SIDE_FIND_RX.search(question_text):
        return QuestionType.LENGTH
    if "area" in low:
        return QuestionType.AREA
    if "similar" in low or (
        "ratio" in low
        and (_SEGMENT_PAIR_RX.search(question_text) or "triangle" in low or "△" in question_text)
    ):
        return QuestionType.SIMILARITY
    if "coordinate" in low or "axis" in low or _COORD_RX.search(low):
        return QuestionType.COORDINATE
    return QuestionType.OTHER


@dataclass(frozen=True)
class DatasetStats:
    sample_count: int
    avg_answer_words: float
    avg_think_words: float
    type_distribution: dict[QuestionType, float]  # percentages, nonzero types

    def render_text(self) -> str:
        lines = [
            f"samples            {self.sample_count}",
            f"avg answer words   {self.avg_answer_words:.2f}",
            f"avg think words    {self.avg_think_words:.2f}",
            "type distribution:",
        ]
        for qtype, pct in self.type_distribution.items():
            lines.append(f"  {qtype.value:<12} {pct:>5.1f}%")
        return "\n".join(lines)

    def to_mapping(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "avg_answer_words": self.avg_answer_words,
            "avg_think_words": self.avg_think_words,
            "type_distribution": {t.value: p for t, p in self.type_distribution.items()},
        }


def _word_count(text: str) -> int:
    return len(text.split())


def stats(records: Sequence[CoTRecord], questions: Mapping[str, str]) -> DatasetStats:
    """Word-count averages (whitespace tokens, 2 dp) and type percentages."""
    if not records:
        raise EmptyDataset("cannot compute statistics of an empty dataset")
    answer_words = sum(_word_count(r.answer_text) for r in records)
    think_words = sum(_word_count(r.think_text) for r in records)
    type_counts: dict[QuestionType, int] = {}
    for record in records:
        text = questions.get(record.question_id)
        if text is None:
            raise MissingQuestion(record.question_id)
        qtype = classify_question_type(text)
        type_counts[qtype] = type_counts.get(qtype, 0) + 1
    n = len(records)
    distribution = {
        qtype: round(100.0 * count / n, 1)
        for qtype, count in sorted(type_counts.items(), key=lambda kv: -kv[1])
    }
    return DatasetStats(
        sample_count=n,
        avg_answer_words=round(answer_words / n, 2),
        avg_think_words=round(think_words / n, 2),
        type_distribution=distribution,
    )


# --- SFT export -------------------------------------------------------------------


def sft_target(record: CoTRecord) -> str:
    return f"{THINK_OPEN}{record.think_text}{THINK_CLOSE}{ANSWER_OPEN}{record.answer_text}{ANSWER_CLOSE}"


def export_sft(
    records: Sequence[CoTRecord], questions: Mapping[str, str], path: str | Path
) -> int:
    """Write prompt/target SFT rows; every target must survive re-extraction.

    Records whose think or answer text embeds tag literals cannot be
    represented losslessly and are rejected rather than written corrupted.
    """
    rows = []
    for record in records:
        if record.extraction_status is not ExtractionStatus.CLEAN:
            raise NonCleanRecord(record.id, f"status is {record.extraction_status.value}")
        target = sft_target(record)
        back = extract_tagged(target)
        if (
            back.status is not ExtractionStatus.CLEAN
            or back.think_text != record.think_text
            or back.answer_text != record.answer_text
        ):
            raise NonCleanRecord(record.id, "target does not round-trip through tag extraction")
        text = questions.get(record.question_id)
        if text is None:
            raise MissingQuestion(record.question_id)
        rows.append({"prompt": build_cot_prompt(text), "image": record.image_ref, "target": target})
    return dump_rows(rows, path)


def shuffle_split(
    records: Sequence[CoTRecord], val_fraction: float, seed: int
) -> tuple[list[CoTRecord], list[CoTRecord]]:
    """Seeded shuffle then split; validation gets floor(n * val_fraction)."""
    if not 0 <= val_fraction < 1:
        raise ValueError("val_fraction must be in [0, 1)")
    shuffled = list(records)
    random.Random(seed).shuffle(shuffled)
    n_val = int(len(shuffled) * val_fraction)
    return shuffled[n_val:], shuffled[:n_val]


# --- seed / question files ----------------------------------------------------------


def load_seeds(path: str | Path) -> list[SeedProblem]:
    """Seeds JSONL: {"id","question","image","gold"?} (gold optional)."""
    seeds = []
    for i, row in enumerate(load_rows(path), start=1):
        try:
            gold = row.get("gold")
            seeds.append(
                SeedProblem(
                    id=row["id"],
                    question_text=row["question"],
                    image_ref=row.get("image", ""),
                    ground_truth=parse_answer(gold) if gold is not None else None,
                )
            )
        except (KeyError, ValueError) as exc:
            raise SchemaError(path, i, str(exc)) from exc
    return seeds


def write_seeds(seeds: Iterable[SeedProblem], path: str | Path) -> int:
    from .answers import render

    rows = []
    for s in seeds:
        row = {"id": s.id, "question": s.question_text, "image": s.image_ref}
        if s.ground_truth is not None:
            row["gold"] = render(s.ground_truth)
        rows.append(row)
    return dump_rows(rows, path)


def load_questions(path: str | Path) -> list[GeneratedQuestion]:
    """Generated-question JSONL: {"id","seed_id","question"}."""
    out = []
    for i, row in enumerate(load_rows(path), start=1):
        try:
            out.append(
                GeneratedQuestion(
                    id=row["id"], seed_id=row["seed_id"], question_text=row["question"]
                )
            )
        except KeyError as exc:
            raise SchemaError(path, i, f"missing field {exc}") from exc
    return out


def write_questions(questions: Iterable[GeneratedQuestion], path: str | Path) -> int:
    return dump_rows(
        (
            {"id": q.id, "seed_id": q.seed_id, "question": q.question_text}
            for q in questions
        ),
        path,
    )


def question_texts(
    seeds: Iterable[SeedProblem] = (), generated: Iterable[GeneratedQuestion] = ()
) -> dict[str, str]:
    """question_id -> text mapping used by stats and SFT export."""
    texts: dict[str, str] = {}
    for seed in seeds:
        texts[seed.id] = seed.question_text
    for q in generated:
        texts[q.id] = q.question_text
    return texts
