"""CoT generation and rejection sampling: query the teacher for tagged
reasoning traces and keep only records whose answer matches ground truth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

from .answers import (
    DEFAULT_REL_TOL,
    CanonicalAnswer,
    ExtractionStatus,
    equivalent,
    extract_tagged,
    parse_answer,
)
from .augment import SeedProblem
from .client import ChatRequest, TeacherClient, TeacherClientError

logger = logging.getLogger(__name__)

TAG_INSTRUCTION = (
    "Output the thinking process in <think> </think> and final answer in "
    "<answer> </answer> tags."
)

DEFAULT_GEN_MAX_TOKENS = 4096


class MissingGroundTruth(Exception):
    """Rejection sampling needs a ground truth for every record."""


def build_cot_prompt(question_text: str) -> str:
    """Question followed by the verbatim tag instruction."""
    if not question_text or not question_text.strip():
        raise ValueError("question_text must be nonempty")
    return f"{question_text}\n{TAG_INSTRUCTION}"


@dataclass(frozen=True)
class CoTRecord:
    id: str
    question_id: str
    image_ref: str
    think_text: str
    answer_text: str
    extracted: CanonicalAnswer
    extraction_status: ExtractionStatus
    kept: bool | None = None  # set iff the source question has a ground truth


def record_from_response(
    record_id: str,
    question_id: str,
    image_ref: str,
    response_text: str,
    ground_truth: CanonicalAnswer | None,
    rel_tol: float | Fraction = DEFAULT_REL_TOL,
) -> CoTRecord:
    """Assemble a record from raw teacher output.

    Non-clean extractions are never re-parsed heuristically; with a ground
    truth present they are simply not kept.
    """
    tagged = extract_tagged(response_text)
    extracted = parse_answer(tagged.answer_text)
    kept = None
    if ground_truth is not None:
        kept = tagged.status is ExtractionStatus.CLEAN and equivalent(
            extracted, ground_truth, rel_tol
        )
    return CoTRecord(
        id=record_id,
        question_id=question_id,
        image_ref=image_ref,
        think_text=tagged.think_text,
        answer_text=tagged.answer_text,
        extracted=extracted,
        extraction_status=tagged.status,
        kept=kept,
    )


def build_cot_request(
    question_text: str,
    image_ref: str,
    temperature: float,
    max_tokens: int = DEFAULT_GEN_MAX_TOKENS,
    sample_seed: int | None = None,
    request_tag: str = "",
) -> ChatRequest:
    return ChatRequest(
        user_text=build_cot_prompt(question_text),
        image_refs=(image_ref,) if image_ref else (),
        temperature=temperature,
        max_tokens=max_tokens,
        seed=sample_seed,
        request_tag=request_tag,
    )


def generate_cot(
    seed: SeedProblem,
    client: TeacherClient,
    temperature: float = 0.0,
    max_tokens: int = DEFAULT_GEN_MAX_TOKENS,
    rel_tol: float | Fraction = DEFAULT_REL_TOL,
    sample_seed: int | None = None,
) -> CoTRecord:
    """One teacher call for one seed; transport errors propagate."""
    req = build_cot_request(
        seed.question_text, seed.image_ref, temperature, max_tokens,
        sample_seed=sample_seed, request_tag=seed.id,
    )
    resp = client.complete(req)
    return record_from_response(
        record_id=f"{seed.id}-cot",
        question_id=seed.id,
        image_ref=seed.image_ref,
        response_text=resp.text,
        ground_truth=seed.ground_truth,
        rel_tol=rel_tol,
    )


def generate_cot_batch(
    seeds: Sequence[SeedProblem],
    client: TeacherClient,
    temperature: float = 0.0,
    max_tokens: int = DEFAULT_GEN_MAX_TOKENS,
    rel_tol: float | Fraction = DEFAULT_REL_TOL,
    parallelism: int = 8,
    retries_per_seed: int = 0,
) -> tuple[list[CoTRecord], dict[str, TeacherClientError]]:
    """Generate one record per seed through a bounded worker pool.

    With retries_per_seed > 0, seeds whose sample failed (transport error,
    non-clean extraction, or rejected answer) are resampled with a fresh
    sampling seed; the first success wins, otherwise the last attempt stands.
    Records come back ordered by seed id; transport failures that never
    recovered are reported separately, keyed by seed id.
    """
    pending = {s.id: s for s in seeds}
    records: dict[str, CoTRecord] = {}
    failures: dict[str, TeacherClientError] = {}

    for attempt in range(retries_per_seed + 1):
        if not pending:
            break
        batch = sorted(pending.values(), key=lambda s: s.id)
        reqs = [
            build_cot_request(
                s.question_text, s.image_ref, temperature, max_tokens,
                sample_seed=attempt if (attempt > 0 or retries_per_seed > 0) else None,
                request_tag=s.id,
            )
            for s in batch
        ]
        results = client.complete_many(reqs, parallelism=parallelism)
        last_round = attempt == retries_per_seed
        for s, result in zip(batch, results):
            if isinstance(result, TeacherClientError):
                failures[s.id] = result
                if last_round:
                    pending.pop(s.id)
                continue
            record = record_from_response(
                record_id=f"{s.id}-cot",
                question_id=s.id,
                image_ref=s.image_ref,
                response_text=result.text,
                ground_truth=s.ground_truth,
                rel_tol=rel_tol,
            )
            succeeded = record.kept is not False and record.extraction_status is ExtractionStatus.CLEAN
            records[s.id] = record
            failures.pop(s.id, None)
            if succeeded or last_round:
                pending.pop(s.id)

    ordered = [records[sid] for sid in sorted(records)]
    return ordered, failures


@dataclass(frozen=True)
class RejectionResult:
    kept: list[CoTRecord]
    dropped: list[CoTRecord]
    retention: float


def rejection_filter(records: Sequence[CoTRecord]) -> RejectionResult:
    """Partition records by their rejection-sampling verdict.

    Order within each part follows the input. Empty input yields retention
    0.0 with a warning rather than a division error.
    """
    for record in records:
        if record.kept is None:
            raise MissingGroundTruth(f"record {record.id} has no ground-truth verdict")
    kept = [r for r in records if r.kept]
    dropped = [r for r in records if not r.kept]
    if not records:
        logger.warning("rejection_filter: empty input, retention reported as 0")
        return RejectionResult([], [], 0.0)
    return RejectionResult(kept, dropped, len(kept) / len(records))


def mark_kept(record: CoTRecord, kept: bool) -> CoTRecord:
    return replace(record, kept=kept)
