"""N-way self-consistency voting: sample several answers per generated
question, bucket them by canonical key, and keep only high-confidence items.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .answers import AnswerKind, CanonicalAnswer, ExtractionStatus, canonical_key
from .augment import GeneratedQuestion
from .client import TeacherClient, TeacherClientError, ChatRequest
from .cot import CoTRecord, build_cot_request, record_from_response

logger = logging.getLogger(__name__)

DEFAULT_N_VOTES = 8
DEFAULT_VOTE_TEMPERATURE = 1.0


class ConfigMismatch(Exception):
    """Tallies built with a different vote count than the filter expects."""


@dataclass(frozen=True)
class ConsensusConfig:
    n_votes: int = DEFAULT_N_VOTES
    threshold: int = DEFAULT_N_VOTES  # default unanimity
    vote_temperature: float = DEFAULT_VOTE_TEMPERATURE
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        if self.n_votes < 1:
            raise ValueError("n_votes must be >= 1")
        if not 1 <= self.threshold <= self.n_votes:
            raise ValueError(f"threshold must be in 1..n_votes, got {self.threshold}")


@dataclass(frozen=True)
class Vote:
    # record_ref is None only when the vote's request failed in transport
    record_ref: str | None
    key: str | None
    parse_ok: bool
    answer: CanonicalAnswer | None = None


@dataclass(frozen=True)
class VoteTally:
    question_id: str
    n: int
    votes: tuple[Vote, ...]

    @property
    def buckets(self) -> dict[str, int]:
        """Canonical key -> count over parse_ok votes; order-independent."""
        return dict(Counter(v.key for v in self.votes if v.parse_ok))

    @property
    def consensus_level(self) -> int:
        buckets = self.buckets
        return max(buckets.values()) if buckets else 0

    @property
    def failed(self) -> bool:
        """All n requests failed in transport; excluded from statistics."""
        return all(v.record_ref is None for v in self.votes)


def build_vote_requests(
    question: GeneratedQuestion, image_ref: str, cfg: ConsensusConfig
) -> list[ChatRequest]:
    """One request per vote, distinguished by sampling seed so record/replay
    keeps the independent draws apart."""
    return [
        build_cot_request(
            question.question_text,
            image_ref,
            temperature=cfg.vote_temperature,
            max_tokens=cfg.max_tokens,
            sample_seed=i,
            request_tag=f"{question.id}#v{i}",
        )
        for i in range(cfg.n_votes)
    ]


def tally_votes(question_id: str, n: int, records: Sequence[CoTRecord | None]) -> tuple[VoteTally, list[CoTRecord]]:
    """Fold per-vote records (None = transport failure) into a tally.

    A vote parses only if extraction was clean; free-text answers count as
    unparsed whenever any vote produced a structured answer, reducing the
    attainable consensus instead of shrinking n.
    """
    clean = [
        r for r in records
        if r is not None and r.extraction_status is ExtractionStatus.CLEAN
    ]
    any_structured = any(r.extracted.kind is not AnswerKind.TEXT for r in clean)
    votes: list[Vote] = []
    for record in records:
        if record is None:
            votes.append(Vote(record_ref=None, key=None, parse_ok=False))
            continue
        key = canonical_key(record.extracted)
        ok = record.extraction_status is ExtractionStatus.CLEAN and not (
            any_structured and record.extracted.kind is AnswerKind.TEXT
        )
        votes.append(Vote(record_ref=record.id, key=key, parse_ok=ok, answer=record.extracted))
    tally = VoteTally(question_id=question_id, n=n, votes=tuple(votes))
    kept_records = [r for r in records if r is not None]
    return tally, kept_records


def collect_votes(
    question: GeneratedQuestion,
    image_ref: str,
    client: TeacherClient,
    cfg: ConsensusConfig,
    parallelism: int = 8,
) -> tuple[VoteTally, list[CoTRecord]]:
    """Issue n independent CoT generations and bucket the extracted answers.

    Per-vote transport errors become parse_ok=False votes; the tally is
    failed only if every vote failed that way.
    """
    reqs = build_vote_requests(question, image_ref, cfg)
    results = client.complete_many(reqs, parallelism=parallelism)
    records: list[CoTRecord | None] = []
    for i, result in enumerate(results):
        if isinstance(result, TeacherClientError):
            logger.debug("vote %s#v%d failed: %s", question.id, i, result)
            records.append(None)
            continue
        records.append(
            record_from_response(
                record_id=f"{question.id}-v{i}",
                question_id=question.id,
                image_ref=image_ref,
                response_text=result.text,
                ground_truth=None,
            )
        )
    return tally_votes(question.id, cfg.n_votes, records)


@dataclass(frozen=True)
class AcceptedQuestion:
    question_id: str
    key: str
    record_ref: str
    consensus_level: int
    # pseudo ground truth taken from the winning bucket's representative
    answer: CanonicalAnswer | None = None


@dataclass(frozen=True)
class FilterReport:
    threshold: int
    total: int  # non-failed tallies
    failed: int
    accepted: int

    @property
    def accepted_pct(self) -> float:
        return round(100.0 * self.accepted / self.total, 1) if self.total else 0.0


def _check_shared_n(tallies: Sequence[VoteTally], n: int) -> None:
    for t in tallies:
        if t.n != n:
            raise ConfigMismatch(f"tally {t.question_id} has n={t.n}, expected {n}")


def winning_bucket(tally: VoteTally) -> str | None:
    """Largest bucket; ties break to the lexicographically smallest key."""
    buckets = tally.buckets
    if not buckets:
        return None
    best = max(buckets.values())
    return min(k for k, c in buckets.items() if c == best)


def filter_by_consensus(
    tallies: Sequence[VoteTally], cfg: ConsensusConfig
) -> tuple[list[AcceptedQuestion], FilterReport]:
    """Accept questions whose consensus level reaches the threshold.

    The representative record is the lowest-vote-index parse_ok vote in the
    winning bucket; its answer becomes the question's pseudo ground truth.
    """
    _check_shared_n(tallies, cfg.n_votes)
    accepted: list[AcceptedQuestion] = []
    failed = 0
    for tally in tallies:
        if tally.failed:
            failed += 1
            continue
        level = tally.consensus_level
        if level < cfg.threshold:
            continue
        winner = winning_bucket(tally)
        rep = next(v for v in tally.votes if v.parse_ok and v.key == winner)
        accepted.append(
            AcceptedQuestion(
                question_id=tally.question_id,
                key=winner,
                record_ref=rep.record_ref,
                consensus_level=level,
                answer=rep.answer,
            )
        )
    report = FilterReport(
        threshold=cfg.threshold,
        total=len(tallies) - failed,
        failed=failed,
        accepted=len(accepted),
    )
    return accepted, report


@dataclass(frozen=True)
class FrequencyReport:
    n: int
    counts: dict[int, int]  # consensus level -> tally count (non-failed only)
    failed: int

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def percentages(self) -> dict[int, float]:
        """Percent of non-failed tallies per occupied consensus level."""
        total = self.total
        if not total:
            return {}
        return {
            level: round(100.0 * count / total, 1)
            for level, count in sorted(self.counts.items(), reverse=True)
            if count
        }

    def render_text(self) -> str:
        lines = ["consistency  count  percent"]
        for level, pct in self.percentages.items():
            lines.append(f"{level:>11d}  {self.counts[level]:>5d}  {pct:>6.1f}")
        if self.failed:
            lines.append(f"{'failed':>11}  {self.failed:>5d}       -")
        return "\n".join(lines)


def frequency_report(tallies: Sequence[VoteTally], n: int | None = None) -> FrequencyReport:
    """Histogram of consensus levels over non-failed tallies.

    Level 0 holds tallies whose answers could not be extracted at all; the
    percentages over levels 0..n always sum to 100 of the non-failed total.
    """
    if not tallies:
        logger.warning("frequency_report: no tallies")
        return FrequencyReport(n=n or 0, counts={}, failed=0)
    if n is None:
        n = tallies[0].n
    _check_shared_n(tallies, n)
    counts: Counter[int] = Counter()
    failed = 0
    for tally in tallies:
        if tally.failed:
            failed += 1
        else:
            counts[tally.consensus_level] += 1
    return FrequencyReport(n=n, counts=dict(counts), failed=failed)


# --- serialization (tally JSONL) ---------------------------------------------


def tally_to_row(tally: VoteTally) -> dict:
    return {
        "question_id": tally.question_id,
        "n": tally.n,
        "votes": [
            {"key": v.key, "parse_ok": v.parse_ok, "record_ref": v.record_ref}
            for v in tally.votes
        ],
        "consensus_level": tally.consensus_level,
    }


def tally_from_row(row: dict) -> VoteTally:
    votes = tuple(
        Vote(record_ref=v.get("record_ref"), key=v.get("key"), parse_ok=bool(v["parse_ok"]))
        for v in row["votes"]
    )
    return VoteTally(question_id=row["question_id"], n=int(row["n"]), votes=votes)
