"""Shared fixture machinery: deterministic replay worlds for pipeline tests.

Builders construct the exact requests each stage will issue and record
synthetic teacher responses against their content hashes, so CLI runs are
fully offline and reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from geodistill.augment import GeneratedQuestion, SeedProblem, build_augment_prompt, load_augment_prompt
from geodistill.client import ChatRequest, write_fixture
from geodistill.consensus import ConsensusConfig, build_vote_requests
from geodistill.cot import build_cot_request
from geodistill.dataset import write_questions, write_seeds


def tagged(answer: str, think: str = "worked through the figure") -> str:
    return f"<think>{think}</think><answer>{answer}</answer>"


@dataclass
class VoteWorld:
    seeds_path: Path
    questions_path: Path
    fixture_path: Path
    level_counts: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.level_counts.values())


def build_vote_world(
    root: Path,
    level_counts: dict[int, int],
    n_votes: int = 8,
    vote_temperature: float = 1.0,
    max_tokens: int = 4096,
) -> VoteWorld:
    """Questions + replay fixture engineered to hit given consensus levels.

    A question at level L gets L agreeing votes on one answer and 8-L
    distinct parseable fillers; level 0 means every response is untagged
    prose (extraction fails, transport succeeds).
    """
    seeds: list[SeedProblem] = []
    questions: list[GeneratedQuestion] = []
    entries: dict[str, str] = {}
    cfg = ConsensusConfig(
        n_votes=n_votes, threshold=n_votes,
        vote_temperature=vote_temperature, max_tokens=max_tokens,
    )
    idx = 0
    for level in sorted(level_counts, reverse=True):
        for _ in range(level_counts[level]):
            sid, qid = f"s{idx:04d}", f"g{idx:04d}"
            seed = SeedProblem(
                id=sid,
                question_text=f"Original question {idx} about the marked angle.",
                image_ref=f"img/{idx:04d}.png",
            )
            question = GeneratedQuestion(
                id=qid, seed_id=sid,
                question_text=f"Variant {idx}: find the measure of the marked angle.",
            )
            seeds.append(seed)
            questions.append(question)
            for v, req in enumerate(build_vote_requests(question, seed.image_ref, cfg)):
                if level == 0:
                    response = f"The diagram for case {idx} is unclear, vote {v}."
                elif v < level:
                    response = tagged("40°", think=f"agreeing path {v} for {qid}")
                else:
                    response = tagged(f"{100 + v}°", think=f"stray path {v} for {qid}")
                entries[req.content_hash()] = response
            idx += 1

    seeds_path = root / "seeds.jsonl"
    questions_path = root / "questions.jsonl"
    fixture_path = root / "vote_fixture.jsonl"
    write_seeds(seeds, seeds_path)
    write_questions(questions, questions_path)
    write_fixture(entries, fixture_path)
    return VoteWorld(seeds_path, questions_path, fixture_path, dict(level_counts))


@dataclass
class CotWorld:
    seeds_path: Path
    fixture_path: Path
    expected_kept: int
    expected_total: int


def build_rejection_world(root: Path, count: int = 100) -> CotWorld:
    """Seeds with gold answers and a known keep/drop/malform pattern:
    i % 5 == 0 -> wrong answer, else i % 7 == 0 -> untagged response,
    otherwise a matching answer.
    """
    seeds = []
    entries = {}
    kept = 0
    for i in range(count):
        gold = f"{10 + i}°"
        seed = SeedProblem(
            id=f"s{i:03d}",
            question_text=f"Rejection case {i}: find the angle.",
            image_ref=f"img/r{i:03d}.png",
            ground_truth=None,
        )
        # gold lives in the written file; build the request from seed fields
        req = build_cot_request(seed.question_text, seed.image_ref, 0.0, 4096)
        if i % 5 == 0:
            response = tagged("999°", think=f"wrong turn {i}")
        elif i % 7 == 0:
            response = f"Case {i}: the angle is {10 + i} degrees."  # untagged
        else:
            response = tagged(gold, think=f"clean derivation {i}")
            kept += 1
        entries[req.content_hash()] = response
        seeds.append(
            SeedProblem(
                id=seed.id, question_text=seed.question_text,
                image_ref=seed.image_ref, ground_truth=None,
            )
        )
    seeds_path = root / "seeds.jsonl"
    rows = []
    for i, s in enumerate(seeds):
        rows.append(
            {"id": s.id, "question": s.question_text, "image": s.image_ref,
             "gold": f"{10 + i}°"}
        )
    with open(seeds_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    fixture_path = root / "cot_fixture.jsonl"
    write_fixture(entries, fixture_path)
    return CotWorld(seeds_path, fixture_path, expected_kept=kept, expected_total=count)


def build_augment_fixture(
    seeds: list[SeedProblem], variants: dict[str, list[str]],
    temperature: float = 1.0, max_tokens: int = 4096,
) -> dict[str, str]:
    """Fixture entries answering each seed's augmentation prompt with a JSON
    array of question objects."""
    template = load_augment_prompt()
    entries = {}
    for seed in seeds:
        req = ChatRequest(
            user_text=build_augment_prompt(seed, template),
            image_refs=(seed.image_ref,) if seed.image_ref else (),
            temperature=temperature,
            max_tokens=max_tokens,
            request_tag=seed.id,
        )
        payload = json.dumps([{"question": q} for q in variants[seed.id]])
        entries[req.content_hash()] = f"Here you go:\n```json\n{payload}\n```"
    return entries
