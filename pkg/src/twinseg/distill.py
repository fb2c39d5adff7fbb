"""Pipeline orchestration: rollout collection, reject sampling, SFT emission,
student scoring with group-relative advantages, and evaluation runs.

Collection drives the generate -> pause -> execute -> splice -> resume loop
against a pluggable policy backend, checkpointing after every record. Record
files are JSONL with a fixed field order and no wall-clock content, so a
re-run with the same seed and a deterministic policy is byte-identical.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .metrics import DEFAULT_BOUNDARY_TOLERANCE, SequenceEval, sequence_eval
from .policies import BackendError, PolicyBackend
from .prompts import assemble_prompt
from .rewards import (
    ACCURACY_IOU_THRESHOLD,
    DEFAULT_GAMMA,
    JudgeBackend,
    answer_iou,
    combined_reward,
    format_reward,
    grpo_advantages,
    reasoning_reward,
    resolve_answer_masks,
)
from .rollout import (
    ANSWER_CLOSE,
    PLAN_CLOSE,
    PLAN_OPEN,
    AnswerBlock,
    RolloutSequence,
    parse_rollout,
    scan_for_pause,
    splice_results,
)
from .tools import ToolRegistry, default_registry, execute_plan
from .twin import Mask, TwinSequence

log = logging.getLogger("twinseg.distill")

RECORD_SCHEMA_VERSION = "1.0"

# Fixed field order of the collection record JSONL.
_RECORD_FIELDS = (
    "schema_version",
    "query_id",
    "rollout_id",
    "query",
    "twin",
    "category",
    "difficulty",
    "policy",
    "prompt",
    "rollout",
    "parse_ok",
    "parse_error",
    "format_reward",
    "accuracy_reward",
    "achieved_j",
    "total_reward",
    "backend_error",
)

_SCORED_FIELDS = (
    "schema_version",
    "group_id",
    "query_id",
    "rollout_id",
    "prompt",
    "completion",
    "format_reward",
    "accuracy_reward",
    "reasoning_reward",
    "gamma",
    "reward",
    "advantage",
)


class PipelineError(RuntimeError):
    """Unrecoverable pipeline state (corrupt record, missing teacher, ...)."""


@dataclass(frozen=True)
class CaseBundle:
    """One query against one twin, with its ground truth."""

    query_id: str
    query: str
    twin: TwinSequence
    gt_masks: tuple[Mask, ...]
    gt_ids: tuple[int, ...] = ()
    category: str = "semantic"
    difficulty: str = "level1"
    twin_path: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "gt_masks", tuple(self.gt_masks))
        object.__setattr__(self, "gt_ids", tuple(self.gt_ids))
        if len(self.gt_masks) != self.twin.n_frames:
            raise ValueError(
                f"{self.query_id}: ground truth covers {len(self.gt_masks)} frames, "
                f"twin has {self.twin.n_frames}"
            )


@dataclass(frozen=True)
class CaseResult:
    record: dict[str, Any]
    pred_masks: tuple[Mask, ...] | None
    report_failures: int = 0


def run_case(
    policy: PolicyBackend,
    bundle: CaseBundle,
    registry: ToolRegistry | None = None,
    static_twin: bool = False,
    rollout_id: str = "r0",
    gamma: float = DEFAULT_GAMMA,
) -> CaseResult:
    """Drive one rollout through the pause/execute/resume loop and score it.

    At most one pause is serviced per rollout. With ``static_twin`` the plan
    is not executed; the unrefined twin is spliced into the results block.
    """
    registry = registry or default_registry()
    prompt = assemble_prompt(bundle.twin, bundle.query, registry)
    started = time.perf_counter()
    backend_error: str | None = None
    raw = ""
    report_failures = 0
    try:
        text = policy.generate(prompt, stop_at=PLAN_CLOSE)
        scan = scan_for_pause(text)
        if scan.fired:
            prefix = text[: scan.paused_at + 1]
            calls = _plan_calls(prefix)
            if static_twin or calls is None:
                refined = bundle.twin
            else:
                refined, report = execute_plan(calls, bundle.twin, registry)
                report_failures = report.n_failed
            spliced = splice_results(prefix, refined)
            tail = policy.generate(prompt + spliced, stop_at=ANSWER_CLOSE)
            raw = spliced + tail
        else:
            raw = text
    except BackendError as exc:
        backend_error = str(exc)

    outcome = parse_rollout(raw) if backend_error is None else parse_rollout("")
    fmt = format_reward(outcome)
    accuracy = 0
    achieved_j: float | None = None
    pred_masks: tuple[Mask, ...] | None = None
    if outcome.is_ok:
        assert outcome.ok is not None
        j, issue = answer_iou(outcome.ok.answer, bundle.twin, bundle.gt_masks)
        if j is not None:
            achieved_j = j
            accuracy = 1 if j > ACCURACY_IOU_THRESHOLD else 0
            masks, _ = resolve_answer_masks(outcome.ok.answer, bundle.twin)
            pred_masks = tuple(masks) if masks is not None else None
        else:
            log.debug("%s: answer did not resolve: %s", bundle.query_id, issue)
    breakdown = combined_reward(fmt, accuracy, None, role="teacher", gamma=gamma)
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    log.debug("%s/%s took %.1f ms", bundle.query_id, rollout_id, elapsed_ms)

    record = {
        "schema_version": RECORD_SCHEMA_VERSION,
        "query_id": bundle.query_id,
        "rollout_id": rollout_id,
        "query": bundle.query,
        "twin": bundle.twin_path,
        "category": bundle.category,
        "difficulty": bundle.difficulty,
        "policy": policy.name,
        "prompt": prompt,
        "rollout": raw,
        "parse_ok": outcome.is_ok,
        "parse_error": None
        if outcome.is_ok
        else {
            "kind": outcome.error.kind,
            "offset": outcome.error.offset,
            "message": outcome.error.message,
        },
        "format_reward": breakdown.format,
        "accuracy_reward": breakdown.accuracy,
        "achieved_j": achieved_j,
        "total_reward": breakdown.total,
        "backend_error": backend_error,
    }
    return CaseResult(record=record, pred_masks=pred_masks, report_failures=report_failures)


def _plan_calls(prefix: str):
    start = prefix.find(PLAN_OPEN)
    if start < 0:
        return None
    body = prefix[start + len(PLAN_OPEN): prefix.rfind(PLAN_CLOSE)]
    probe = parse_rollout(
        f"<reason>.</reason><plan>{body}</plan><results></results><answer>{{\"instances\":[]}}</answer>"
    )
    if probe.is_ok and probe.ok is not None and probe.ok.plan is not None:
        return probe.ok.plan
    return None  # malformed plan: skip execution; the final parse classifies it


def record_line(record: Mapping[str, Any], fields: Sequence[str] = _RECORD_FIELDS) -> str:
    ordered = {name: record.get(name) for name in fields}
    return json.dumps(ordered, separators=(",", ":"), ensure_ascii=True)


def read_jsonl(path: Path) -> list[dict[str, Any]]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise PipelineError(f"{path}:{line_no}: corrupt JSONL line: {exc}") from exc
    return records


def collect(
    policy: PolicyBackend,
    bundles: Sequence[CaseBundle],
    out_path: Path | None = None,
    samples: int = 1,
    static_twin: bool = False,
    workers: int = 1,
    registry: ToolRegistry | None = None,
    gamma: float = DEFAULT_GAMMA,
) -> list[dict[str, Any]]:
    """One record per (case, sample), in case order.

    When ``out_path`` exists, already-recorded (query_id, rollout_id) pairs
    are skipped and new records are appended: the record file is its own
    checkpoint, written and flushed after every record.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    tasks = [
        (bundle, f"r{s}") for bundle in bundles for s in range(samples)
    ]
    done: set[tuple[str, str]] = set()
    existing: list[dict[str, Any]] = []
    if out_path is not None and out_path.exists():
        existing = read_jsonl(out_path)
        done = {(r["query_id"], r["rollout_id"]) for r in existing}
    pending = [t for t in tasks if (t[0].query_id, t[1]) not in done]

    def work(task: tuple[CaseBundle, str]) -> dict[str, Any]:
        bundle, rollout_id = task
        return run_case(
            policy, bundle, registry, static_twin=static_twin, rollout_id=rollout_id, gamma=gamma
        ).record

    new_records: list[dict[str, Any]] = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    sink = open(out_path, "a", encoding="utf-8") if out_path is not None else None
    try:
        produced: Iterable[dict[str, Any]] = (
            pool.map(work, pending) if pool is not None else (work(t) for t in pending)
        )  # pool.map keeps task order
        for record in produced:
            new_records.append(record)
            if sink is not None:
                sink.write(record_line(record) + "\n")
                sink.flush()
    finally:
        if pool is not None:
            pool.shutdown()
        if sink is not None:
            sink.close()
    return existing + new_records


def reject_sample(records: Sequence[Mapping[str, Any]], min_iou: float = 0.7) -> list[dict[str, Any]]:
    """Keep records whose achieved sequence IoU strictly exceeds the bound."""
    return [
        dict(r)
        for r in records
        if r.get("achieved_j") is not None and r["achieved_j"] > min_iou
    ]


def emit_sft(
    records: Sequence[Mapping[str, Any]],
    out_path: Path,
    min_iou: float = 0.7,
) -> int:
    """Write SFT examples for records passing reject sampling.

    Every completion is re-parsed before emission; a completion that no
    longer parses marks a corrupt record and is a hard error.
    """
    kept = reject_sample(records, min_iou)
    with open(out_path, "w", encoding="utf-8") as handle:
        for record in kept:
            completion = record["rollout"]
            outcome = parse_rollout(completion)
            if not outcome.is_ok:
                raise PipelineError(
                    f"{record['query_id']}/{record['rollout_id']}: completion fails re-parse "
                    f"({outcome.error.kind}): corrupt record"
                )
            line = {
                "query_id": record["query_id"],
                "rollout_id": record["rollout_id"],
                "prompt": record["prompt"],
                "completion": completion,
            }
            handle.write(json.dumps(line, separators=(",", ":"), ensure_ascii=True) + "\n")
    if not kept:
        log.warning("no records passed reject sampling; wrote an empty file")
    return len(kept)


def _teacher_reasons(teacher_records: Sequence[Mapping[str, Any]]) -> dict[str, str]:
    reasons: dict[str, str] = {}
    for record in teacher_records:
        rollout = record.get("rollout", record.get("completion"))
        outcome = parse_rollout(rollout or "")
        if not outcome.is_ok:
            raise PipelineError(
                f"teacher record {record.get('query_id')} does not parse; corrupt teacher file"
            )
        reasons[record["query_id"]] = outcome.ok.reason
    return reasons


def score_student_batch(
    records: Sequence[Mapping[str, Any]],
    teacher_records: Sequence[Mapping[str, Any]],
    judge: JudgeBackend,
    gamma: float = DEFAULT_GAMMA,
    judge_workers: int = 1,
) -> list[dict[str, Any]]:
    """Student totals (format + accuracy + gamma * reasoning) plus per-group
    advantages, grouped by query id. Deterministic given a deterministic
    judge, so re-scoring a record file changes nothing."""
    teacher_reason = _teacher_reasons(teacher_records)
    groups: dict[str, list[dict[str, Any]]] = {}
    for record in records:
        groups.setdefault(record["query_id"], []).append(dict(record))
    for query_id, group in groups.items():
        if query_id not in teacher_reason:
            raise PipelineError(f"no teacher record for query {query_id}")
        if len(group) < 2:
            raise PipelineError(
                f"group {query_id} has {len(group)} rollout(s); scoring needs >= 2"
            )

    def reasoning_for(record: Mapping[str, Any]) -> float:
        rollout = record.get("rollout", record.get("completion")) or ""
        outcome = parse_rollout(rollout)
        if not outcome.is_ok:
            return 0.0
        teacher = teacher_reason[record["query_id"]]
        student_seq = outcome.ok
        teacher_seq = RolloutSequence(
            reason=teacher, plan=None, results=None, answer=AnswerBlock()
        )
        return reasoning_reward(student_seq, teacher_seq, judge)

    flat = [record for group in groups.values() for record in group]
    if judge_workers > 1:
        with ThreadPoolExecutor(max_workers=judge_workers) as pool:
            scores = list(pool.map(reasoning_for, flat))
    else:
        scores = [reasoning_for(r) for r in flat]
    by_key = {
        (r["query_id"], r["rollout_id"]): s for r, s in zip(flat, scores)
    }

    scored: list[dict[str, Any]] = []
    for query_id, group in groups.items():
        totals = []
        rows = []
        for record in group:
            reasoning = by_key[(record["query_id"], record["rollout_id"])]
            breakdown = combined_reward(
                record["format_reward"],
                record["accuracy_reward"],
                reasoning,
                role="student",
                gamma=gamma,
            )
            totals.append(breakdown.total)
            rows.append((record, breakdown))
        advantages = grpo_advantages(totals).advantages
        for (record, breakdown), advantage in zip(rows, advantages):
            scored.append(
                {
                    "schema_version": RECORD_SCHEMA_VERSION,
                    "group_id": query_id,
                    "query_id": record["query_id"],
                    "rollout_id": record["rollout_id"],
                    "prompt": record["prompt"],
                    "completion": record.get("rollout", record.get("completion")),
                    "format_reward": breakdown.format,
                    "accuracy_reward": breakdown.accuracy,
                    "reasoning_reward": breakdown.reasoning,
                    "gamma": breakdown.gamma,
                    "reward": breakdown.total,
                    "advantage": advantage,
                }
            )
    return scored


def write_scored(scored: Sequence[Mapping[str, Any]], out_path: Path) -> None:
    with open(out_path, "w", encoding="utf-8") as handle:
        for record in scored:
            handle.write(record_line(record, _SCORED_FIELDS) + "\n")


# --- evaluation ---------------------------------------------------------------


@dataclass
class _Bucket:
    n: int = 0
    j_sum: float = 0.0
    f_sum: float = 0.0
    inter: int = 0
    union: int = 0

    def add(self, seq: SequenceEval, pred: Sequence[Mask], gt: Sequence[Mask]) -> None:
        self.n += 1
        self.j_sum += seq.j
        self.f_sum += seq.f
        for p, g in zip(pred, gt):
            rp, rg = p.decode(), g.decode()
            self.inter += int((rp & rg).sum())
            self.union += int((rp | rg).sum())

    def summary(self) -> dict[str, Any]:
        j = self.j_sum / self.n if self.n else 0.0
        f = self.f_sum / self.n if self.n else 0.0
        return {
            "n": self.n,
            "J": j,
            "F": f,
            "JF": (j + f) / 2.0,
            "gIoU": j,
            "cIoU": 1.0 if self.union == 0 else self.inter / self.union,
        }


def run_eval(
    policy: PolicyBackend,
    bundles: Sequence[CaseBundle],
    registry: ToolRegistry | None = None,
    static_twin: bool = False,
    tolerance: int = DEFAULT_BOUNDARY_TOLERANCE,
    workers: int = 1,
) -> dict[str, Any]:
    """Collect and score every case, bucketed by category and difficulty."""
    overall = _Bucket()
    per_category: dict[str, _Bucket] = {}
    per_level: dict[str, _Bucket] = {}

    def work(bundle: CaseBundle) -> tuple[CaseBundle, CaseResult]:
        return bundle, run_case(policy, bundle, registry, static_twin=static_twin)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        results: Iterable[tuple[CaseBundle, CaseResult]] = (
            pool.map(work, bundles) if pool is not None else (work(b) for b in bundles)
        )
        for bundle, result in results:
            dims = bundle.twin.dims or (1, 1)
            pred = result.pred_masks or tuple(
                Mask.empty(*dims) for _ in range(bundle.twin.n_frames)
            )
            seq = sequence_eval(pred, bundle.gt_masks, tolerance)
            overall.add(seq, pred, bundle.gt_masks)
            per_category.setdefault(bundle.category, _Bucket()).add(seq, pred, bundle.gt_masks)
            per_level.setdefault(bundle.difficulty, _Bucket()).add(seq, pred, bundle.gt_masks)
    finally:
        if pool is not None:
            pool.shutdown()

    summary = overall.summary()
    return {
        "policy": policy.name,
        "static_twin": static_twin,
        "boundary_tolerance": tolerance,
        "J": summary["J"],
        "F": summary["F"],
        "gIoU": summary["gIoU"],
        "cIoU": summary["cIoU"],
        "overall": summary,
        "per_category": {k: per_category[k].summary() for k in sorted(per_category)},
        "per_level": {k: per_level[k].summary() for k in sorted(per_level)},
    }
