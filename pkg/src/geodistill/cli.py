"""Command-line front end wiring the pipeline stages.

Every subcommand reads declared inputs, writes declared outputs, and prints a
one-line summary; nonzero exit only on operational failure. Report-emitting
stages (filter, stats, eval) can render a PNG figure next to their output
with --figures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import augment as augment_mod
from . import consensus as consensus_mod
from . import cot as cot_mod
from . import dataset as dataset_mod
from . import evaluate as evaluate_mod
from .answers import canonical_key, equivalent, parse_answer, render
from .client import (
    ChatRequest,
    LiveBackend,
    ReplayBackend,
    TeacherClient,
    TeacherClientError,
    record_session,
)
from .config import ConfigError, PipelineConfig, apply_overrides, load_config

logger = logging.getLogger(__name__)

_OPERATIONAL_ERRORS = (
    ConfigError,
    TeacherClientError,
    augment_mod.ParseError,
    cot_mod.MissingGroundTruth,
    consensus_mod.ConfigMismatch,
    dataset_mod.SchemaError,
    dataset_mod.DuplicateId,
    dataset_mod.EmptyDataset,
    dataset_mod.NonCleanRecord,
    dataset_mod.MissingQuestion,
    evaluate_mod.UnknownId,
    evaluate_mod.TagOnCorrectItem,
    OSError,
    ValueError,
)


def build_client(cfg: PipelineConfig) -> TeacherClient:
    if cfg.fixtures:
        backend = ReplayBackend(cfg.fixtures)
    else:
        if not cfg.endpoint_url:
            raise ConfigError("endpoint_url: required unless fixtures is set")
        backend = LiveBackend(cfg.endpoint_url, cfg.model, timeout_s=cfg.timeout_s)
    return TeacherClient(backend, rate_limit_rps=cfg.rate_limit_rps)


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {
        "endpoint_url": getattr(args, "endpoint_url", None),
        "model": getattr(args, "model", None),
        "fixtures": getattr(args, "fixtures", None),
        "parallelism": getattr(args, "parallelism", None),
        "rel_tol": getattr(args, "rel_tol", None),
        "rate_limit_rps": getattr(args, "rate_limit_rps", None),
        "n_votes": getattr(args, "n", None),
        "threshold": getattr(args, "threshold", None),
        "questions_per_seed": getattr(args, "per_seed", None),
        "vote_temperature": getattr(args, "vote_temperature", None),
        "eval_temperature": getattr(args, "eval_temperature", None),
        "gen_max_tokens": getattr(args, "gen_max_tokens", None),
        "eval_max_tokens": getattr(args, "eval_max_tokens", None),
        "retries_per_seed": getattr(args, "retries_per_seed", None),
    }
    return apply_overrides(cfg, overrides)


def _load_question_texts(args: argparse.Namespace) -> dict[str, str]:
    seeds = []
    for path in args.seeds or []:
        seeds.extend(dataset_mod.load_seeds(path))
    generated = []
    for path in args.questions or []:
        generated.extend(dataset_mod.load_questions(path))
    return dataset_mod.question_texts(seeds, generated)


# --- subcommand handlers ------------------------------------------------------


def cmd_generate_cot(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    seeds = dataset_mod.load_seeds(args.seeds)
    missing = [s.id for s in seeds if s.ground_truth is None]
    if missing:
        raise cot_mod.MissingGroundTruth(
            f"{len(missing)} seeds lack a gold answer (first: {missing[0]})"
        )
    client = build_client(cfg)
    records, failures = cot_mod.generate_cot_batch(
        seeds,
        client,
        temperature=args.temperature,
        max_tokens=cfg.gen_max_tokens,
        rel_tol=cfg.rel_tol,
        parallelism=cfg.parallelism,
        retries_per_seed=cfg.retries_per_seed,
    )
    result = cot_mod.rejection_filter(records)
    dataset_mod.write_jsonl(result.kept, args.out)
    if args.dropped_out:
        dataset_mod.write_jsonl(result.dropped, args.dropped_out)
    print(
        f"generate-cot: {len(seeds)} seeds -> {len(records)} records, "
        f"kept {len(result.kept)} (retention {result.retention:.4f}), "
        f"{len(failures)} transport failures -> {args.out}"
    )
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    seeds = dataset_mod.load_seeds(args.seeds)
    template = augment_mod.load_augment_prompt(args.augment_prompt)
    client = build_client(cfg)
    reqs = [
        ChatRequest(
            user_text=augment_mod.build_augment_prompt(seed, template),
            image_refs=(seed.image_ref,) if seed.image_ref else (),
            temperature=args.temperature,
            max_tokens=cfg.gen_max_tokens,
            request_tag=seed.id,
        )
        for seed in seeds
    ]
    results = client.complete_many(reqs, parallelism=cfg.parallelism)
    questions = []
    failures = 0
    for seed, result in zip(seeds, results):
        if isinstance(result, TeacherClientError):
            logger.warning("augment %s: %s", seed.id, result)
            failures += 1
            continue
        try:
            parsed = augment_mod.parse_generated_questions(
                result.text, seed.id, expected_k=cfg.questions_per_seed
            )
        except augment_mod.ParseError as exc:
            logger.warning("augment %s: %s", seed.id, exc)
            failures += 1
            continue
        questions.extend(
            augment_mod.dedup_questions(parsed, existing=[seed.question_text])
        )
    dataset_mod.write_questions(questions, args.out)
    print(
        f"augment: {len(seeds)} seeds -> {len(questions)} questions "
        f"({failures} failures) -> {args.out}"
    )
    return 0


def cmd_vote(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    questions = dataset_mod.load_questions(args.questions_file)
    seed_images = {s.id: s.image_ref for s in dataset_mod.load_seeds(args.seeds)}
    vote_cfg = consensus_mod.ConsensusConfig(
        n_votes=cfg.n_votes,
        threshold=min(cfg.threshold, cfg.n_votes),
        vote_temperature=cfg.vote_temperature,
        max_tokens=cfg.gen_max_tokens,
    )
    client = build_client(cfg)
    tallies = []
    all_records = []
    for question in questions:
        image_ref = seed_images.get(question.seed_id, "")
        tally, records = consensus_mod.collect_votes(
            question, image_ref, client, vote_cfg, parallelism=cfg.parallelism
        )
        tallies.append(tally)
        all_records.extend(records)
    dataset_mod.dump_rows((consensus_mod.tally_to_row(t) for t in tallies), args.tallies_out)
    dataset_mod.write_jsonl(all_records, args.votes_out)
    failed = sum(1 for t in tallies if t.failed)
    live = [t.consensus_level for t in tallies if not t.failed]
    mean_level = sum(live) / len(live) if live else 0.0
    print(
        f"vote: {len(questions)} questions x {cfg.n_votes} votes, "
        f"mean consensus {mean_level:.2f}, {failed} failed -> {args.tallies_out}"
    )
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    tallies = [
        consensus_mod.tally_from_row(row) for row in dataset_mod.load_rows(args.tallies)
    ]
    records = {r.id: r for r in dataset_mod.read_jsonl(args.votes)}
    filter_cfg = consensus_mod.ConsensusConfig(
        n_votes=cfg.n_votes, threshold=cfg.threshold, vote_temperature=cfg.vote_temperature
    )
    accepted, filt = consensus_mod.filter_by_consensus(tallies, filter_cfg)
    out_records = []
    for item in accepted:
        record = records.get(item.record_ref)
        if record is None:
            raise dataset_mod.SchemaError(args.votes, 0, f"missing vote record {item.record_ref}")
        out_records.append(cot_mod.mark_kept(record, True))
    dataset_mod.write_jsonl(out_records, args.out)

    freq = consensus_mod.frequency_report(tallies, n=cfg.n_votes)
    report_path = Path(args.report_out) if args.report_out else Path(args.out).with_suffix(".report.json")
    report_payload = {
        "threshold": filt.threshold,
        "total": filt.total,
        "failed": filt.failed,
        "accepted": filt.accepted,
        "accepted_pct": filt.accepted_pct,
        "histogram_pct": {str(k): v for k, v in freq.percentages.items()},
        "histogram_counts": {str(k): v for k, v in sorted(freq.counts.items(), reverse=True)},
    }
    report_path.write_text(json.dumps(report_payload, indent=2) + "\n", encoding="utf-8")
    report_path.with_suffix(".txt").write_text(freq.render_text() + "\n", encoding="utf-8")
    if args.figures:
        from .plots import save_consensus_histogram

        save_consensus_histogram(freq, report_path.with_suffix(".png"))
    print(
        f"filter: accepted {filt.accepted}/{filt.total} ({filt.accepted_pct:.1f}%) "
        f"at threshold {filt.threshold} -> {args.out}"
    )
    return 0


def cmd_merge(args: argparse.Namespace) -> int:
    base = dataset_mod.read_jsonl(args.base)
    additions = dataset_mod.read_jsonl(args.additions)
    merged = dataset_mod.merge(base, additions)
    dataset_mod.write_jsonl(merged, args.out)
    print(f"merge: {len(base)} + {len(additions)} -> {len(merged)} records -> {args.out}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    records = dataset_mod.read_jsonl(args.data)
    texts = _load_question_texts(args)
    result = dataset_mod.stats(records, texts)
    Path(args.out).write_text(
        json.dumps(result.to_mapping(), indent=2) + "\n", encoding="utf-8"
    )
    Path(args.out).with_suffix(".txt").write_text(result.render_text() + "\n", encoding="utf-8")
    if args.figures:
        from .plots import save_type_distribution

        save_type_distribution(result, Path(args.out).with_suffix(".png"))
    top = next(iter(result.type_distribution.items()), None)
    top_txt = f", top type {top[0].value} {top[1]:.1f}%" if top else ""
    print(
        f"stats: {result.sample_count} records, avg think {result.avg_think_words:.2f} w, "
        f"avg answer {result.avg_answer_words:.2f} w{top_txt} -> {args.out}"
    )
    return 0


def cmd_export_sft(args: argparse.Namespace) -> int:
    records = dataset_mod.read_jsonl(args.data)
    texts = _load_question_texts(args)
    if args.val_fraction > 0:
        train, val = dataset_mod.shuffle_split(records, args.val_fraction, args.split_seed)
        n_train = dataset_mod.export_sft(train, texts, args.out)
        val_path = Path(args.out).with_suffix(".val.jsonl")
        n_val = dataset_mod.export_sft(val, texts, val_path)
        print(f"export-sft: {n_train} train + {n_val} val records -> {args.out}")
    else:
        n = dataset_mod.export_sft(records, texts, args.out)
        print(f"export-sft: {n} records -> {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    testset = evaluate_mod.load_testset(args.testset)
    think_prefix = None
    if args.think_prefix_file:
        think_prefix = Path(args.think_prefix_file).read_text(encoding="utf-8").rstrip("\n")
    eval_cfg = evaluate_mod.EvalConfig(
        temperature=cfg.eval_temperature,
        max_tokens=cfg.eval_max_tokens,
        rel_tol=cfg.rel_tol,
        parallelism=cfg.parallelism,
        strict_numeric=args.strict_numeric,
        think_prefix=think_prefix,
    )
    client = build_client(cfg) if testset else None
    report = evaluate_mod.evaluate(testset, client, eval_cfg)
    if args.tags:
        tags = json.loads(Path(args.tags).read_text(encoding="utf-8"))
        report = evaluate_mod.tag_errors(report, tags)
    evaluate_mod.write_report(report, args.report_out)
    if args.figures:
        from .plots import save_eval_summary

        save_eval_summary(report, Path(args.report_out).with_suffix(".png"))
    print(f"eval: {report.summary_line()} -> {args.report_out}")
    return 0


def cmd_parse_answer(args: argparse.Namespace) -> int:
    ans = parse_answer(args.text)
    print(f"kind={ans.kind.value} value={render(ans)} key={canonical_key(ans)}")
    if args.compare is not None:
        other = parse_answer(args.compare)
        cfg = _resolve_config(args)
        verdict = equivalent(ans, other, cfg.rel_tol)
        print(
            f"kind={other.kind.value} value={render(other)} key={canonical_key(other)}"
        )
        print(f"equivalent={'true' if verdict else 'false'}")
    return 0


def cmd_record_fixtures(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if cfg.fixtures:
        raise ConfigError("fixtures: recording requires a live backend, not replay")
    reqs = []
    for row in dataset_mod.load_rows(args.requests):
        reqs.append(
            ChatRequest(
                user_text=row["user_text"],
                system_text=row.get("system_text"),
                image_refs=tuple(row.get("image_refs", ())),
                temperature=row.get("temperature", 0.0),
                max_tokens=row.get("max_tokens", 2048),
                seed=row.get("seed"),
                request_tag=row.get("request_tag", ""),
            )
        )
    client = build_client(cfg)
    n = record_session(reqs, client, args.store)
    print(f"record-fixtures: {len(reqs)} requests -> {n} entries -> {args.store}")
    return 0


# --- parser -----------------------------------------------------------------


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--fixtures", help="replay fixture JSONL (offline mode)")
    parser.add_argument("--endpoint-url", dest="endpoint_url")
    parser.add_argument("--model")
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--rel-tol", dest="rel_tol", type=float)
    parser.add_argument("--rate-limit-rps", dest="rate_limit_rps", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geodistill",
        description="Geometry CoT distillation pipeline: generate, augment, vote, filter, export, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-cot", help="teacher CoT generation with rejection sampling")
    _common_flags(p)
    p.add_argument("--seeds", required=True, help="seed problems JSONL (with gold answers)")
    p.add_argument("--out", required=True, help="kept records JSONL")
    p.add_argument("--dropped-out", help="rejected records JSONL")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--retries-per-seed", dest="retries_per_seed", type=int)
    p.add_argument("--gen-max-tokens", dest="gen_max_tokens", type=int)
    p.set_defaults(handler=cmd_generate_cot)

    p = sub.add_parser("augment", help="generate question variants per seed")
    _common_flags(p)
    p.add_argument("--seeds", required=True)
    p.add_argument("--out", required=True, help="generated questions JSONL")
    p.add_argument("--augment-prompt", help="prompt template override file")
    p.add_argument("--per-seed", dest="per_seed", type=int)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--gen-max-tokens", dest="gen_max_tokens", type=int)
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("vote", help="N-way self-consistency voting")
    _common_flags(p)
    p.add_argument("--questions", dest="questions_file", required=True)
    p.add_argument("--seeds", required=True, help="seed file for image references")
    p.add_argument("--tallies-out", required=True)
    p.add_argument("--votes-out", required=True, help="per-vote CoT records JSONL")
    p.add_argument("--n", type=int)
    p.add_argument("--vote-temperature", dest="vote_temperature", type=float)
    p.add_argument("--gen-max-tokens", dest="gen_max_tokens", type=int)
    p.set_defaults(handler=cmd_vote)

    p = sub.add_parser("filter", help="keep questions reaching the consensus threshold")
    _common_flags(p)
    p.add_argument("--tallies", required=True)
    p.add_argument("--votes", required=True)
    p.add_argument("--out", required=True, help="accepted dataset records JSONL")
    p.add_argument("--report-out", help="frequency/acceptance report JSON")
    p.add_argument("--threshold", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--figures", action="store_true", help="render the consensus histogram PNG")
    p.set_defaults(handler=cmd_filter)

    p = sub.add_parser("merge", help="concatenate datasets, rejecting duplicate ids")
    p.add_argument("--base", required=True)
    p.add_argument("--additions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_merge, config=None)

    p = sub.add_parser("stats", help="dataset statistics and type distribution")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", action="append", help="seed file(s) for question texts")
    p.add_argument("--questions", action="append", help="generated-question file(s)")
    p.add_argument("--out", required=True, help="stats JSON")
    p.add_argument("--figures", action="store_true", help="render the type distribution PNG")
    p.set_defaults(handler=cmd_stats, config=None)

    p = sub.add_parser("export-sft", help="write prompt/target SFT records")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", action="append")
    p.add_argument("--questions", action="append")
    p.add_argument("--out", required=True)
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=0.0)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=42)
    p.set_defaults(handler=cmd_export_sft, config=None)

    p = sub.add_parser("eval", help="Top-1 accuracy over a test set")
    _common_flags(p)
    p.add_argument("--testset", required=True)
    p.add_argument("--report-out", required=True)
    p.add_argument("--tags", help="JSON file mapping item id -> error tag")
    p.add_argument("--strict-numeric", action="store_true",
                   help="exclude text-gold items from the denominator")
    p.add_argument("--think-prefix-file", help="partial reasoning prepended to every prompt")
    p.add_argument("--eval-temperature", dest="eval_temperature", type=float)
    p.add_argument("--eval-max-tokens", dest="eval_max_tokens", type=int)
    p.add_argument("--figures", action="store_true", help="render the accuracy summary PNG")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("parse-answer", help="debug: canonicalize an answer string")
    _common_flags(p)
    p.add_argument("text")
    p.add_argument("--compare", help="second answer to test equivalence against")
    p.set_defaults(handler=cmd_parse_answer)

    p = sub.add_parser("record-fixtures", help="capture live responses for replay")
    _common_flags(p)
    p.add_argument("--requests", required=True, help="request JSONL to send")
    p.add_argument("--store", required=True, help="fixture archive to write")
    p.set_defaults(handler=cmd_record_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except _OPERATIONAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
