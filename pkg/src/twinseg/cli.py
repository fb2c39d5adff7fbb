"""Command-line surface for the pipeline.

Exit codes: 0 ok, 1 operational error (unreadable files, bad IO), 2 validation
failure (schema or invariant violations), 3 backend failure (policy or judge
endpoints), 64 usage errors (unknown flags or subcommands).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .backends import HttpJudge, HttpPolicy
from .config import Config
from .dataio import load_answer, load_cases_dir, read_mask_png, write_cases_dir
from .distill import (
    PipelineError,
    collect,
    read_jsonl,
    run_eval,
    score_student_batch,
    write_scored,
    emit_sft,
)
from .policies import (
    BackendError,
    EmptyAnswerPolicy,
    OraclePolicy,
    PolicyBackend,
    RandomAnswerPolicy,
    ReplayPolicy,
)
from .render import render_overlays
from .rewards import JudgeConfig, JudgeError, OverlapJudge
from .rollout import AnswerBlock, parse_rollout
from .synth import SceneSpecError
from .tools import default_registry
from .twin import TwinValidationError, parse_twin

EXIT_OK = 0
EXIT_OPERATIONAL = 1
EXIT_VALIDATION = 2
EXIT_BACKEND = 3
EXIT_USAGE = 64

log = logging.getLogger("twinseg.cli")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="twinseg", description=__doc__)
    parser.add_argument("--version", action="version", version=f"twinseg {__version__}")
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    twin = sub.add_parser("twin", help="twin file operations")
    twin_sub = twin.add_subparsers(dest="twin_command", required=True, parser_class=_Parser)
    validate = twin_sub.add_parser("validate", help="validate a twin JSON file")
    validate.add_argument("file", type=Path, help="twin JSON file")
    validate.add_argument(
        "--base-dir", type=Path, default=None, help="directory resolving mask path references"
    )

    synth = sub.add_parser("synth", help="synthetic scene generation")
    synth_sub = synth.add_subparsers(dest="synth_command", required=True, parser_class=_Parser)
    gen = synth_sub.add_parser("gen", help="generate a cases directory")
    gen.add_argument("--seed", type=int, default=None, help="generator seed")
    gen.add_argument("--n-scenes", type=int, default=9, help="number of scenes")
    gen.add_argument("--size", default="48x48", help="raster size WIDTHxHEIGHT")
    gen.add_argument("--out", type=Path, required=True, help="output directory")

    rollout = sub.add_parser("rollout", help="rollout text operations")
    rollout_sub = rollout.add_subparsers(dest="rollout_command", required=True, parser_class=_Parser)
    rparse = rollout_sub.add_parser("parse", help="parse a JSONL file of rollouts")
    rparse.add_argument("file", type=Path, help="JSONL of {query_id, rollout_text}")
    rparse.add_argument("--out", type=Path, default=None, help="output JSONL (default stdout)")

    tools = sub.add_parser("tools", help="tool registry")
    tools_sub = tools.add_subparsers(dest="tools_command", required=True, parser_class=_Parser)
    tlist = tools_sub.add_parser("list", help="list registered tools")
    tlist.add_argument("--json", action="store_true", help="emit the JSON manifest")

    coll = sub.add_parser("collect", help="collect rollouts from a policy")
    _policy_flags(coll)
    coll.add_argument("--cases", type=Path, required=True, help="cases directory")
    coll.add_argument("--out", type=Path, required=True, help="records JSONL (appends; resumes)")
    coll.add_argument("--samples", type=int, default=None, help="rollouts per query")
    coll.add_argument("--static-twin", action="store_true", help="disable twin refinement")
    coll.add_argument("--workers", type=int, default=None, help="worker pool size")
    coll.add_argument("--seed", type=int, default=None, help="seed for seeded policies")

    sft = sub.add_parser("sft", help="supervised fine-tuning data")
    sft_sub = sft.add_subparsers(dest="sft_command", required=True, parser_class=_Parser)
    emit = sft_sub.add_parser("emit", help="emit SFT examples from records")
    emit.add_argument("--records", type=Path, required=True, help="collection records JSONL")
    emit.add_argument("--min-iou", type=float, default=0.7, help="strict reject-sampling bound")
    emit.add_argument("--out", type=Path, required=True, help="output JSONL")

    score = sub.add_parser("score", help="score student records with advantages")
    score.add_argument("--records", type=Path, required=True, help="student records JSONL")
    score.add_argument("--teacher-records", type=Path, required=True, help="teacher records JSONL")
    score.add_argument("--judge", default=None, help="overlap or http")
    score.add_argument("--judge-url", default=None, help="judge endpoint base URL")
    score.add_argument("--gamma", type=float, default=None, help="reasoning reward coefficient")
    score.add_argument("--group-size", type=int, default=None, help="expected rollouts per query")
    score.add_argument("--workers", type=int, default=None, help="bound on concurrent judge calls")
    score.add_argument("--out", type=Path, required=True, help="training records JSONL")

    ev = sub.add_parser("eval", help="evaluate a policy over cases")
    _policy_flags(ev)
    ev.add_argument("--cases", type=Path, required=True, help="cases directory")
    ev.add_argument("--report", type=Path, required=True, help="output report JSON")
    ev.add_argument("--static-twin", action="store_true", help="disable twin refinement")
    ev.add_argument("--workers", type=int, default=None, help="worker pool size")
    ev.add_argument("--tolerance", type=int, default=None, help="boundary tolerance in pixels")
    ev.add_argument("--seed", type=int, default=None, help="seed for seeded policies")

    render = sub.add_parser("render", help="render prediction overlays")
    render.add_argument("--twin", type=Path, required=True, help="twin JSON file")
    render.add_argument("--answer", type=Path, required=True, help="answer JSON file")
    render.add_argument("--gt", type=Path, nargs="*", default=None, help="ground truth mask PNGs, one per frame")
    render.add_argument("--out", type=Path, required=True, help="output directory")

    return parser


def _policy_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--policy",
        required=True,
        help="oracle | empty | random | replay:<records.jsonl> | http",
    )
    parser.add_argument("--policy-url", default=None, help="chat-completion base URL for http")
    parser.add_argument("--policy-model", default=None, help="model name for http")


def _make_policy(args: argparse.Namespace, config: Config) -> PolicyBackend:
    spec = args.policy
    if spec == "oracle":
        return OraclePolicy()
    if spec == "empty":
        return EmptyAnswerPolicy()
    if spec == "random":
        seed = args.seed if args.seed is not None else config.seed
        return RandomAnswerPolicy(seed=seed)
    if spec.startswith("replay:"):
        path = Path(spec.split(":", 1)[1])
        return ReplayPolicy.from_records(read_jsonl(path))
    if spec == "http":
        url = args.policy_url or config.policy.get("base_url")
        model = args.policy_model or config.policy.get("model", "policy")
        if not url:
            raise PipelineError("http policy needs --policy-url or a config policy.base_url")
        return HttpPolicy(base_url=url, model=model)
    raise PipelineError(f"unknown policy {spec!r}")


def _make_judge(kind: str | None, url: str | None, config: Config):
    kind = kind or config.judge.get("kind", "overlap")
    if kind == "overlap":
        return OverlapJudge()
    if kind == "http":
        endpoint = url or config.judge.get("base_url")
        if not endpoint:
            raise PipelineError("http judge needs --judge-url or a config judge.base_url")
        judge_config = JudgeConfig(
            endpoint=endpoint,
            temperature=config.judge.get("temperature", 0.3),
            max_tokens=config.judge.get("max_tokens", 512),
            template_id=config.judge.get("template_id", "judge_prompt_v1"),
        )
        return HttpJudge(judge_config, model=config.judge.get("model", "judge"))
    raise PipelineError(f"unknown judge {kind!r}")


def _parse_size(text: str) -> tuple[int, int]:
    try:
        width, height = (int(p) for p in text.lower().split("x"))
    except ValueError as exc:
        raise PipelineError(f"--size must look like 48x48, got {text!r}") from exc
    return width, height


# --- command handlers --------------------------------------------------------


def _cmd_twin_validate(args: argparse.Namespace, config: Config) -> int:
    text = args.file.read_text(encoding="utf-8")
    try:
        twin = parse_twin(text, base_dir=args.base_dir)
    except TwinValidationError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    total = sum(len(f.instances) for f in twin.frames)
    print(f"ok: {twin.n_frames} frame(s), {total} instance record(s)")
    return EXIT_OK


def _cmd_synth_gen(args: argparse.Namespace, config: Config) -> int:
    width, height = _parse_size(args.size)
    seed = args.seed if args.seed is not None else config.seed
    n_cases = write_cases_dir(args.out, seed, args.n_scenes, width, height)
    print(f"wrote {args.n_scenes} scene(s), {n_cases} query case(s) to {args.out}")
    return EXIT_OK


def _cmd_rollout_parse(args: argparse.Namespace, config: Config) -> int:
    rows = read_jsonl(args.file)
    sink = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for row in rows:
            outcome = parse_rollout(row.get("rollout_text", ""))
            result: dict[str, Any] = {"query_id": row.get("query_id"), "ok": outcome.is_ok}
            if not outcome.is_ok:
                assert outcome.error is not None
                result["error"] = {
                    "kind": outcome.error.kind,
                    "offset": outcome.error.offset,
                    "message": outcome.error.message,
                }
            sink.write(json.dumps(result, separators=(",", ":"), ensure_ascii=True) + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    return EXIT_OK


def _cmd_tools_list(args: argparse.Namespace, config: Config) -> int:
    manifest = default_registry().manifest()
    if args.json:
        print(json.dumps(manifest, indent=2, ensure_ascii=True))
    else:
        for tool in manifest:
            print(f"{tool['name']}: {tool['description']}")
    return EXIT_OK


def _cmd_collect(args: argparse.Namespace, config: Config) -> int:
    policy = _make_policy(args, config)
    bundles = load_cases_dir(args.cases)
    records = collect(
        policy,
        bundles,
        out_path=args.out,
        samples=args.samples if args.samples is not None else config.samples,
        static_twin=args.static_twin or config.static_twin,
        workers=args.workers if args.workers is not None else config.workers,
        gamma=config.gamma,
    )
    print(f"collected {len(records)} record(s) into {args.out}")
    return EXIT_OK


def _cmd_sft_emit(args: argparse.Namespace, config: Config) -> int:
    records = read_jsonl(args.records)
    kept = emit_sft(records, args.out, min_iou=args.min_iou)
    print(f"kept {kept} of {len(records)} record(s); wrote {args.out}")
    return EXIT_OK


def _cmd_score(args: argparse.Namespace, config: Config) -> int:
    records = read_jsonl(args.records)
    teacher_records = read_jsonl(args.teacher_records)
    judge = _make_judge(args.judge, args.judge_url, config)
    gamma = args.gamma if args.gamma is not None else config.gamma
    group_size = args.group_size if args.group_size is not None else config.group_size
    by_query: dict[str, int] = {}
    for record in records:
        by_query[record["query_id"]] = by_query.get(record["query_id"], 0) + 1
    oversized = {q: n for q, n in by_query.items() if n > group_size}
    if oversized:
        log.warning("groups larger than --group-size %d: %s", group_size, oversized)
    scored = score_student_batch(
        records,
        teacher_records,
        judge,
        gamma=gamma,
        judge_workers=args.workers if args.workers is not None else config.workers,
    )
    write_scored(scored, args.out)
    print(f"scored {len(scored)} record(s) in {len(by_query)} group(s); wrote {args.out}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace, config: Config) -> int:
    policy = _make_policy(args, config)
    bundles = load_cases_dir(args.cases)
    report = run_eval(
        policy,
        bundles,
        static_twin=args.static_twin or config.static_twin,
        tolerance=args.tolerance if args.tolerance is not None else config.boundary_tolerance,
        workers=args.workers if args.workers is not None else config.workers,
    )
    args.report.parent.mkdir(parents=True, exist_ok=True)
    args.report.write_text(json.dumps(report, indent=2, ensure_ascii=True) + "\n", encoding="utf-8")
    overall = report["overall"]
    print(
        f"evaluated {overall['n']} case(s): J={overall['J']:.4f} F={overall['F']:.4f} "
        f"gIoU={overall['gIoU']:.4f} cIoU={overall['cIoU']:.4f}"
    )
    return EXIT_OK


def _cmd_render(args: argparse.Namespace, config: Config) -> int:
    twin = parse_twin(args.twin.read_text(encoding="utf-8"), base_dir=args.twin.parent)
    doc = load_answer(args.answer)
    answer = AnswerBlock(
        instances=tuple(doc["instances"]),
        frames={int(t): tuple(ids) for t, ids in doc.get("frames", {}).items()} or None,
    )
    gt = [read_mask_png(p) for p in args.gt] if args.gt else None
    paths = render_overlays(twin, answer, args.out, gt_masks=gt)
    print(f"wrote {len(paths)} overlay frame(s) to {args.out}")
    return EXIT_OK


_HANDLERS = {
    ("twin", "validate"): _cmd_twin_validate,
    ("synth", "gen"): _cmd_synth_gen,
    ("rollout", "parse"): _cmd_rollout_parse,
    ("tools", "list"): _cmd_tools_list,
    ("collect", None): _cmd_collect,
    ("sft", "emit"): _cmd_sft_emit,
    ("score", None): _cmd_score,
    ("eval", None): _cmd_eval,
    ("render", None): _cmd_render,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    subcommand = getattr(args, f"{args.command}_command", None)
    handler = _HANDLERS[(args.command, subcommand)]
    try:
        config = Config.load(args.config)
        return handler(args, config)
    except (TwinValidationError, SceneSpecError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PipelineError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BackendError, JudgeError, ConnectionError) as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL


if __name__ == "__main__":
    sys.exit(main())
