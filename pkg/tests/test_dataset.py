"""Dataset persistence, merge, statistics, and SFT export tests."""

from __future__ import annotations

import json

import pytest

from geodistill.answers import ExtractionStatus, degree, extract_tagged, parse_answer
from geodistill.cot import CoTRecord
from geodistill.dataset import (
    DuplicateId,
    EmptyDataset,
    MissingQuestion,
    NonCleanRecord,
    QuestionType,
    SchemaError,
    classify_question_type,
    export_sft,
    load_questions,
    load_seeds,
    merge,
    question_texts,
    read_jsonl,
    shuffle_split,
    stats,
    write_jsonl,
    write_questions,
    write_seeds,
)


def make_record(
    i: int,
    think: str = "some reasoning",
    answer: str = "40°",
    status: ExtractionStatus = ExtractionStatus.CLEAN,
    kept: bool | None = True,
    question_id: str | None = None,
) -> CoTRecord:
    return CoTRecord(
        id=f"r{i:04d}",
        question_id=question_id or f"q{i:04d}",
        image_ref=f"img/{i:04d}.png",
        think_text=think,
        answer_text=answer,
        extracted=parse_answer(answer),
        extraction_status=status,
        kept=kept,
    )


# --- read/write ---------------------------------------------------------------


def test_write_read_round_trip(tmp_path) -> None:
    records = [make_record(i, answer=a) for i, a in enumerate(["40°", "1/2", "A", "yes"])]
    path = tmp_path / "data.jsonl"
    assert write_jsonl(records, path) == 4
    assert read_jsonl(path) == records


def test_write_is_byte_stable(tmp_path) -> None:
    records = [make_record(i) for i in range(10)]
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_jsonl(records, p1)
    write_jsonl(records, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_rows_have_fixed_field_order(tmp_path) -> None:
    path = tmp_path / "d.jsonl"
    write_jsonl([make_record(1)], path)
    row = json.loads(path.read_text(encoding="utf-8"))
    assert list(row) == [
        "id", "question_id", "image", "think", "answer",
        "extracted_kind", "extracted_value", "status", "kept",
    ]


def test_read_reports_corrupt_line_number(tmp_path) -> None:
    path = tmp_path / "d.jsonl"
    good = json.dumps(
        {
            "id": "r1", "question_id": "q1", "image": "i", "think": "t",
            "answer": "8", "extracted_kind": "decimal", "extracted_value": "8",
            "status": "clean", "kept": True,
        }
    )
    path.write_text(good + "\n{oops\n", encoding="utf-8")
    with pytest.raises(SchemaError) as err:
        read_jsonl(path)
    assert err.value.line == 2
    assert ":2:" in str(err.value)


def test_read_reports_missing_fields(tmp_path) -> None:
    path = tmp_path / "d.jsonl"
    path.write_text('{"id": "r1"}\n', encoding="utf-8")
    with pytest.raises(SchemaError) as err:
        read_jsonl(path)
    assert "missing fields" in str(err.value)


def test_read_empty_file_is_empty_dataset(tmp_path) -> None:
    path = tmp_path / "d.jsonl"
    path.write_text("", encoding="utf-8")
    assert read_jsonl(path) == []


# --- merge ----------------------------------------------------------------------


def test_merge_counts_add_up() -> None:
    base = [make_record(i) for i in range(100)]
    additions = [make_record(1000 + i) for i in range(60)]
    merged = merge(base, additions)
    assert len(merged) == 160
    assert merged[:100] == base


def test_merge_empty_is_identity() -> None:
    base = [make_record(i) for i in range(5)]
    assert merge(base, []) == base
    assert merge([], base) == base


def test_merge_rejects_duplicate_id() -> None:
    base = [make_record(1), make_record(2)]
    with pytest.raises(DuplicateId) as err:
        merge(base, [make_record(2)])
    assert err.value.record_id == "r0002"


def test_merge_associative_on_disjoint_sets() -> None:
    a = [make_record(i) for i in range(3)]
    b = [make_record(10 + i) for i in range(3)]
    c = [make_record(20 + i) for i in range(3)]
    assert merge(merge(a, b), c) == merge(a, merge(b, c))


# --- stats ----------------------------------------------------------------------


def test_stats_word_averages() -> None:
    thinks = ["w " * n for n in (10, 20, 30, 40)]
    records = [
        make_record(i, think=t.strip(), answer="one two three", question_id=f"q{i}")
        for i, t in enumerate(thinks)
    ]
    questions = {f"q{i}": "find the angle" for i in range(4)}
    out = stats(records, questions)
    assert out.avg_think_words == 25.00
    assert out.avg_answer_words == 3.00
    assert out.sample_count == 4
    assert out.type_distribution == {QuestionType.ANGLE: 100.0}


def test_stats_single_record() -> None:
    record = make_record(0, think="a b c", answer="d e")
    out = stats([record], {record.question_id: "what is the area"})
    assert out.avg_think_words == 3.0
    assert out.avg_answer_words == 2.0


def test_stats_matches_brute_force_recount() -> None:
    records = [
        make_record(i, think="x " * (i % 7), answer="y " * (i % 3), question_id=f"q{i}")
        for i in range(50)
    ]
    texts = {}
    for i in range(50):
        texts[f"q{i}"] = ["find angle ABC", "find the length", "compute the area"][i % 3]
    out = stats(records, texts)
    # independent recount
    think_total = sum(len(("x " * (i % 7)).split()) for i in range(50))
    answer_total = sum(len(("y " * (i % 3)).split()) for i in range(50))
    assert out.avg_think_words == round(think_total / 50, 2)
    assert out.avg_answer_words == round(answer_total / 50, 2)
    assert abs(sum(out.type_distribution.values()) - 100.0) <= 0.1


def test_stats_empty_dataset_raises() -> None:
    with pytest.raises(EmptyDataset):
        stats([], {})


def test_stats_missing_question_named() -> None:
    record = make_record(0)
    with pytest.raises(MissingQuestion) as err:
        stats([record], {})
    assert err.value.question_id == record.question_id


# --- classification -------------------------------------------------------------


@pytest.mark.parametrize(
    "text,expected",
    [
        ("find the measure of ∠CED", QuestionType.ANGLE),
        ("Determine the degree measure of the arc", QuestionType.ANGLE),
        ("what is angle B", QuestionType.ANGLE),
        ("Find the ratio DE:BC", QuestionType.SIMILARITY),
        ("triangle ADE is similar to triangle ABC; find the scale", QuestionType.SIMILARITY),
        ("Find the length of AB", QuestionType.LENGTH),
        ("find AB", QuestionType.LENGTH),
        ("Calculate the ratio of the perimeter of ADE to that of ABC", QuestionType.LENGTH),
        ("Find the ratio of the area of ADE to the area of ABC", QuestionType.AREA),
        ("what is the area of the shaded region", QuestionType.AREA),
        ("find the coordinate of point P", QuestionType.COORDINATE),
        ("the point lies on the x-axis; find its position", QuestionType.COORDINATE),
        ("what is 2+2", QuestionType.OTHER),
        ("name the theorem used", QuestionType.OTHER),
    ],
)
def test_classify_question_type(text: str, expected: QuestionType) -> None:
    assert classify_question_type(text) is expected


def test_classify_priority_angle_beats_length() -> None:
    assert classify_question_type("find the angle and the length") is QuestionType.ANGLE


def test_classify_rejects_empty() -> None:
    with pytest.raises(ValueError):
        classify_question_type("  ")


# --- SFT export -----------------------------------------------------------------


def test_export_sft_format_and_round_trip(tmp_path) -> None:
    records = [make_record(i) for i in range(3)]
    texts = {r.question_id: f"question {i}" for i, r in enumerate(records)}
    path = tmp_path / "sft.jsonl"
    assert export_sft(records, texts, path) == 3
    rows = [json.loads(l) for l in path.read_text(encoding="utf-8").splitlines()]
    for row, record in zip(rows, records):
        assert row["target"] == f"<think>{record.think_text}</think><answer>{record.answer_text}</answer>"
        assert row["prompt"].endswith("tags.")
        back = extract_tagged(row["target"])
        assert back.status is ExtractionStatus.CLEAN
        assert back.think_text == record.think_text
        assert back.answer_text == record.answer_text


def test_export_sft_rejects_non_clean_status(tmp_path) -> None:
    bad = make_record(1, status=ExtractionStatus.MISSING_THINK)
    with pytest.raises(NonCleanRecord):
        export_sft([bad], {bad.question_id: "q"}, tmp_path / "s.jsonl")


def test_export_sft_rejects_embedded_tag_literals(tmp_path) -> None:
    bad = make_record(1, think="tricky </think> inside")
    with pytest.raises(NonCleanRecord) as err:
        export_sft([bad], {bad.question_id: "q"}, tmp_path / "s.jsonl")
    assert err.value.record_id == "r0001"


def test_export_sft_empty_dataset_writes_zero(tmp_path) -> None:
    path = tmp_path / "s.jsonl"
    assert export_sft([], {}, path) == 0
    assert path.read_text(encoding="utf-8") == ""


def test_export_sft_is_byte_identical_across_runs(tmp_path) -> None:
    records = [make_record(i) for i in range(20)]
    texts = {r.question_id: f"question about ∠{i}" for i, r in enumerate(records)}
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    export_sft(records, texts, p1)
    export_sft(records, texts, p2)
    assert p1.read_bytes() == p2.read_bytes()


# --- split / seed / question files -----------------------------------------------


def test_shuffle_split_is_seeded_and_partition() -> None:
    records = [make_record(i) for i in range(40)]
    train1, val1 = shuffle_split(records, 0.25, seed=13)
    train2, val2 = shuffle_split(records, 0.25, seed=13)
    assert train1 == train2 and val1 == val2
    assert len(val1) == 10 and len(train1) == 30
    assert sorted(r.id for r in train1 + val1) == sorted(r.id for r in records)
    train3, _ = shuffle_split(records, 0.25, seed=14)
    assert train3 != train1


def test_seed_file_round_trip(tmp_path) -> None:
    from geodistill.augment import SeedProblem

    seeds = [
        SeedProblem(id="s1", question_text="find ∠A", image_ref="i1.png",
                    ground_truth=degree(40)),
        SeedProblem(id="s2", question_text="find AB", image_ref="i2.png"),
    ]
    path = tmp_path / "seeds.jsonl"
    write_seeds(seeds, path)
    back = load_seeds(path)
    assert back == seeds


def test_question_file_round_trip(tmp_path) -> None:
    from geodistill.augment import GeneratedQuestion

    questions = [
        GeneratedQuestion(id="s1-q1", seed_id="s1", question_text="variant one"),
        GeneratedQuestion(id="s1-q2", seed_id="s1", question_text="variant two"),
    ]
    path = tmp_path / "questions.jsonl"
    write_questions(questions, path)
    assert load_questions(path) == questions


def test_question_texts_mapping() -> None:
    from geodistill.augment import GeneratedQuestion, SeedProblem

    seeds = [SeedProblem(id="s1", question_text="orig", image_ref="i.png")]
    gen = [GeneratedQuestion(id="s1-q1", seed_id="s1", question_text="variant")]
    texts = question_texts(seeds, gen)
    assert texts == {"s1": "orig", "s1-q1": "variant"}
