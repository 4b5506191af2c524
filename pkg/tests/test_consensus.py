"""Consensus voting tests: tallying, filtering, frequency reporting."""

from __future__ import annotations

import itertools
import logging
import random

import pytest

from geodistill.augment import GeneratedQuestion
from geodistill.client import ReplayBackend, TeacherClient, write_fixture
from geodistill.consensus import (
    ConfigMismatch,
    ConsensusConfig,
    Vote,
    VoteTally,
    build_vote_requests,
    collect_votes,
    filter_by_consensus,
    frequency_report,
    tally_from_row,
    tally_to_row,
    tally_votes,
    winning_bucket,
)
from geodistill.cot import CoTRecord, record_from_response


def _question(i: int = 1) -> GeneratedQuestion:
    return GeneratedQuestion(
        id=f"g{i:03d}", seed_id=f"s{i:03d}", question_text=f"Generated question {i}?"
    )


def _record(qid: str, i: int, response: str) -> CoTRecord:
    return record_from_response(f"{qid}-v{i}", qid, "img.png", response, None)


def _tagged(answer: str, think: str = "t") -> str:
    return f"<think>{think}</think><answer>{answer}</answer>"


def _tally_from_responses(responses: list[str | None], qid: str = "g001") -> VoteTally:
    records = [
        _record(qid, i, text) if text is not None else None
        for i, text in enumerate(responses)
    ]
    tally, _ = tally_votes(qid, len(responses), records)
    return tally


def test_unanimous_tally() -> None:
    tally = _tally_from_responses([_tagged("40°")] * 8)
    assert tally.consensus_level == 8
    assert tally.buckets == {"deg:40": 8}
    assert not tally.failed


def test_seven_one_split() -> None:
    tally = _tally_from_responses([_tagged("A")] * 7 + [_tagged("B")])
    assert tally.consensus_level == 7
    assert tally.buckets == {"opt:A": 7, "opt:B": 1}


def test_malformed_votes_excluded_from_buckets() -> None:
    responses = [_tagged("40°")] * 6 + ["no tags at all", "<think>x<answer>y"]
    tally = _tally_from_responses(responses)
    assert tally.consensus_level == 6
    assert sum(tally.buckets.values()) == 6
    assert sum(1 for v in tally.votes if v.parse_ok) == 6


def test_text_votes_unparsed_when_structured_votes_exist() -> None:
    responses = [_tagged("40°")] * 5 + [_tagged("I am not sure")] * 3
    tally = _tally_from_responses(responses)
    assert tally.consensus_level == 5
    assert sum(tally.buckets.values()) == 5


def test_all_text_votes_bucket_normally() -> None:
    responses = [_tagged("yes")] * 6 + [_tagged("no")] * 2
    tally = _tally_from_responses(responses)
    assert tally.consensus_level == 6
    assert tally.buckets == {"text:yes": 6, "text:no": 2}


def test_transport_failures_count_as_unparsed_votes() -> None:
    responses = [_tagged("40°")] * 6 + [None, None]
    tally = _tally_from_responses(responses)
    assert tally.consensus_level == 6
    assert len(tally.votes) == 8
    assert not tally.failed


def test_all_transport_failures_mark_tally_failed() -> None:
    tally = _tally_from_responses([None] * 8)
    assert tally.failed
    assert tally.consensus_level == 0


def test_bucketing_is_order_independent() -> None:
    responses = [_tagged("40°")] * 3 + [_tagged("0.5")] * 2 + [_tagged("1/2")] * 3
    rng = random.Random(5)
    base = _tally_from_responses(responses)
    for _ in range(5):
        shuffled = responses[:]
        rng.shuffle(shuffled)
        assert _tally_from_responses(shuffled).buckets == base.buckets
    # decimals and fractions share a bucket through canonical keys
    assert base.buckets == {"deg:40": 3, "rat:1/2": 5}


def test_collect_votes_through_replay_client(tmp_path) -> None:
    q = _question(1)
    cfg = ConsensusConfig(n_votes=8)
    reqs = build_vote_requests(q, "img/001.png", cfg)
    entries = {r.content_hash(): _tagged("40°", think=f"path {i}") for i, r in enumerate(reqs)}
    path = tmp_path / "votes.jsonl"
    write_fixture(entries, path)
    client = TeacherClient(ReplayBackend(path))

    tally, records = collect_votes(q, "img/001.png", client, cfg)
    assert tally.consensus_level == 8
    assert len(records) == 8
    assert [r.id for r in records] == [f"g001-v{i}" for i in range(8)]
    # distinct sampling seeds -> distinct fixture entries -> distinct thinks
    assert len({r.think_text for r in records}) == 8


def test_collect_votes_partial_replay_misses(tmp_path) -> None:
    q = _question(2)
    cfg = ConsensusConfig(n_votes=4, threshold=4)
    reqs = build_vote_requests(q, "img/002.png", cfg)
    entries = {reqs[i].content_hash(): _tagged("8") for i in (0, 2)}
    path = tmp_path / "votes.jsonl"
    write_fixture(entries, path)
    client = TeacherClient(ReplayBackend(path))

    tally, records = collect_votes(q, "img/002.png", client, cfg)
    assert len(tally.votes) == 4
    assert tally.consensus_level == 2
    assert len(records) == 2
    assert not tally.failed


# --- filtering ----------------------------------------------------------------


def _synthetic_tally(qid: str, keys: list[str | None], n: int | None = None) -> VoteTally:
    votes = tuple(
        Vote(record_ref=f"{qid}-v{i}" if k is not None else None, key=k, parse_ok=k is not None)
        for i, k in enumerate(keys)
    )
    return VoteTally(question_id=qid, n=n or len(keys), votes=votes)


def test_filter_unanimity_threshold() -> None:
    tallies = [
        _synthetic_tally("q1", ["deg:40"] * 8),
        _synthetic_tally("q2", ["deg:40"] * 7 + ["deg:90"]),
    ]
    cfg = ConsensusConfig(n_votes=8, threshold=8)
    accepted, report = filter_by_consensus(tallies, cfg)
    assert [a.question_id for a in accepted] == ["q1"]
    assert report.accepted == 1
    assert report.total == 2
    assert report.accepted_pct == 50.0


def test_filter_threshold_one_accepts_any_parsed_tally() -> None:
    tallies = [
        _synthetic_tally("q1", ["a"] + [None] * 7),
        _synthetic_tally("q2", [None] * 8),  # failed: no parse_ok votes at all
    ]
    cfg = ConsensusConfig(n_votes=8, threshold=1)
    accepted, report = filter_by_consensus(tallies, cfg)
    assert [a.question_id for a in accepted] == ["q1"]
    assert report.failed == 1


def test_filter_representative_is_lowest_index_in_winning_bucket() -> None:
    tally = _synthetic_tally("q1", ["b", "a", "a", "b", "a", "a", "a", "a"])
    accepted, _ = filter_by_consensus([tally], ConsensusConfig(n_votes=8, threshold=6))
    assert accepted[0].record_ref == "q1-v1"
    assert accepted[0].key == "a"
    assert accepted[0].consensus_level == 6


def test_filter_tie_breaks_to_smallest_key() -> None:
    tally = _synthetic_tally("q1", ["b", "b", "a", "a"])
    accepted, _ = filter_by_consensus([tally], ConsensusConfig(n_votes=4, threshold=2))
    assert accepted[0].key == "a"
    assert accepted[0].record_ref == "q1-v2"


def test_filter_tiebreak_matches_brute_force_over_two_bucket_tallies() -> None:
    """Enumerate every two-key vote pattern with n <= 4 and check the winner."""
    for n in range(1, 5):
        for pattern in itertools.product("ab", repeat=n):
            tally = _synthetic_tally("q", list(pattern), n=n)
            ca, cb = pattern.count("a"), pattern.count("b")
            expect = "a" if ca >= cb else "b"  # ties -> lexicographically smaller
            assert winning_bucket(tally) == expect
            for threshold in range(1, n + 1):
                accepted, _ = filter_by_consensus(
                    [tally], ConsensusConfig(n_votes=n, threshold=threshold)
                )
                if max(ca, cb) >= threshold:
                    assert accepted[0].key == expect
                    want_ref = f"q-v{pattern.index(expect)}"
                    assert accepted[0].record_ref == want_ref
                else:
                    assert not accepted


def test_filter_monotone_in_threshold() -> None:
    rng = random.Random(424242)
    tallies = []
    for i in range(300):
        keys = [rng.choice(["a", "b", "c", None]) for _ in range(8)]
        tallies.append(_synthetic_tally(f"q{i}", keys))
    previous = None
    for threshold in range(8, 0, -1):
        accepted, _ = filter_by_consensus(tallies, ConsensusConfig(8, threshold))
        ids = {a.question_id for a in accepted}
        if previous is not None:
            assert previous <= ids  # accepted(t+1) ⊆ accepted(t)
        previous = ids


def test_filter_config_mismatch() -> None:
    tallies = [_synthetic_tally("q1", ["a"] * 6, n=6)]
    with pytest.raises(ConfigMismatch):
        filter_by_consensus(tallies, ConsensusConfig(n_votes=8, threshold=8))


def test_config_validation() -> None:
    with pytest.raises(ValueError):
        ConsensusConfig(n_votes=8, threshold=9)
    with pytest.raises(ValueError):
        ConsensusConfig(n_votes=0, threshold=0)


# --- frequency report ---------------------------------------------------------


def test_frequency_report_all_unanimous() -> None:
    tallies = [_synthetic_tally(f"q{i}", ["x"] * 8) for i in range(10)]
    report = frequency_report(tallies)
    assert report.percentages == {8: 100.0}


def test_frequency_report_levels_and_sum() -> None:
    tallies = (
        [_synthetic_tally(f"a{i}", ["x"] * 8) for i in range(6)]
        + [_synthetic_tally(f"b{i}", ["x"] * 7 + ["y"]) for i in range(3)]
        + [_synthetic_tally("c0", [None] * 8)]  # failed, excluded
        + [_synthetic_tally("d0", ["x", "y"] + [None] * 6)]
    )
    report = frequency_report(tallies)
    assert report.failed == 1
    assert report.total == 10
    assert report.percentages == {8: 60.0, 7: 30.0, 1: 10.0}
    assert abs(sum(report.percentages.values()) - 100.0) <= 0.1


def test_frequency_report_includes_level_zero_bucket() -> None:
    tallies = [
        _synthetic_tally("q1", ["x"] * 8),
        _synthetic_tally("q2", [None] * 7 + ["__unparsed__"]),
    ]
    # q2: one parse_ok vote -> level 1; now make an actually-unparseable one
    unparsed = VoteTally(
        question_id="q3",
        n=8,
        votes=tuple(Vote(record_ref=f"q3-v{i}", key="text:", parse_ok=False) for i in range(8)),
    )
    report = frequency_report(tallies + [unparsed])
    assert report.counts[0] == 1
    assert 0 in report.percentages


def test_frequency_report_empty_input_warns(caplog) -> None:
    with caplog.at_level(logging.WARNING):
        report = frequency_report([])
    assert report.percentages == {}
    assert caplog.records


def test_frequency_report_text_rendering() -> None:
    tallies = [_synthetic_tally(f"q{i}", ["x"] * 8) for i in range(4)]
    text = frequency_report(tallies).render_text()
    assert "consistency" in text
    assert "100.0" in text


# --- serialization -------------------------------------------------------------


def test_tally_round_trip_through_rows() -> None:
    tally = _tally_from_responses(
        [_tagged("40°")] * 5 + [_tagged("junk text")] * 2 + [None]
    )
    row = tally_to_row(tally)
    assert row["consensus_level"] == 5
    assert len(row["votes"]) == 8
    back = tally_from_row(row)
    assert back.question_id == tally.question_id
    assert back.n == tally.n
    assert back.buckets == tally.buckets
    assert back.consensus_level == tally.consensus_level
    assert back.failed == tally.failed
