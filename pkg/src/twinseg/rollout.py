"""Structured rollout text: grammar, parser, serializer, pause scanner.

A rollout is the full text a policy emits for one query. Exactly two shapes
are valid:

    <reason>...</reason><answer>{...}</answer>
    <reason>...</reason><plan>[...]</plan><results>...</results><answer>{...}</answer>

Block tokens are matched literally and case-sensitively; block contents are
taken verbatim. Parsing never raises on malformed input: every string yields
either a parsed rollout or a classified error, which downstream feeds the
format reward.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Mapping

from .twin import TwinSequence, serialize_twin

REASON_OPEN, REASON_CLOSE = "<reason>", "</reason>"
PLAN_OPEN, PLAN_CLOSE = "<plan>", "</plan>"
RESULTS_OPEN, RESULTS_CLOSE = "<results>", "</results>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"

ALL_TOKENS = (
    REASON_OPEN, REASON_CLOSE, PLAN_OPEN, PLAN_CLOSE,
    RESULTS_OPEN, RESULTS_CLOSE, ANSWER_OPEN, ANSWER_CLOSE,
)

_TOKEN_RE = re.compile(r"</?(reason|plan|results|answer)>")

# Error kinds, one per classified structural violation.
MISSING_BLOCK = "missing-block"
WRONG_ORDER = "wrong-order"
DUPLICATE_BLOCK = "duplicate-block"
UNBALANCED_TOKENS = "unbalanced-tokens"
STRAY_TEXT = "stray-text"
INCOMPLETE_EXECUTION = "incomplete-execution"
MALFORMED_PLAN = "malformed-plan"
MALFORMED_ANSWER = "malformed-answer"

_VALID_SHAPES = (("reason", "answer"), ("reason", "plan", "results", "answer"))


@dataclass(frozen=True)
class ToolCall:
    name: str
    args: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", dict(self.args))
        if not self.name:
            raise ValueError("tool name must be non-empty")


@dataclass(frozen=True)
class AnswerBlock:
    """Target instances; empty ``instances`` is the designated no-target
    answer. ``frames`` optionally overrides the id list per frame index."""

    instances: tuple[int, ...] = ()
    frames: Mapping[int, tuple[int, ...]] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "instances", tuple(int(i) for i in self.instances))
        if self.frames is not None:
            object.__setattr__(
                self,
                "frames",
                {int(t): tuple(int(i) for i in ids) for t, ids in self.frames.items()},
            )

    @property
    def is_no_target(self) -> bool:
        return not self.instances and not self.frames

    def ids_for_frame(self, t: int) -> tuple[int, ...]:
        if self.frames is not None and t in self.frames:
            return self.frames[t]
        return self.instances

    def all_ids(self) -> tuple[int, ...]:
        ids = set(self.instances)
        if self.frames:
            for frame_ids in self.frames.values():
                ids.update(frame_ids)
        return tuple(sorted(ids))


@dataclass(frozen=True)
class RolloutSequence:
    """Parsed rollout. ``raw`` keeps the original text and is excluded from
    equality so parse(serialize(r)) == r."""

    reason: str
    plan: tuple[ToolCall, ...] | None
    results: str | None
    answer: AnswerBlock
    raw: str = field(default="", compare=False, repr=False)

    def __post_init__(self) -> None:
        if (self.plan is None) != (self.results is None):
            raise ValueError("plan and results must be present together")
        if self.plan is not None:
            object.__setattr__(self, "plan", tuple(self.plan))


@dataclass(frozen=True)
class ParseError:
    kind: str
    offset: int
    message: str


@dataclass(frozen=True)
class ParseOutcome:
    ok: RolloutSequence | None = None
    error: ParseError | None = None

    def __post_init__(self) -> None:
        if (self.ok is None) == (self.error is None):
            raise ValueError("exactly one of ok/error must be populated")

    @property
    def is_ok(self) -> bool:
        return self.ok is not None

    @classmethod
    def failure(cls, kind: str, offset: int, message: str) -> "ParseOutcome":
        return cls(error=ParseError(kind, offset, message))


@dataclass(frozen=True)
class _Block:
    name: str
    open_start: int
    content_start: int
    content_end: int
    close_end: int


def _tokenize(text: str) -> list[tuple[str, bool, int, int]]:
    """(block name, is_open, start, end) for every grammar token occurrence."""
    out = []
    for m in _TOKEN_RE.finditer(text):
        token = m.group(0)
        out.append((m.group(1), not token.startswith("</"), m.start(), m.end()))
    return out


def _pair_blocks(text: str) -> list[_Block] | ParseOutcome:
    tokens = _tokenize(text)
    blocks: list[_Block] = []
    i = 0
    while i < len(tokens):
        name, is_open, start, end = tokens[i]
        if not is_open:
            return ParseOutcome.failure(
                UNBALANCED_TOKENS, start, f"closing token </{name}> without a matching opener"
            )
        if i + 1 >= len(tokens):
            return ParseOutcome.failure(
                UNBALANCED_TOKENS, start, f"<{name}> is never closed"
            )
        nname, nopen, nstart, nend = tokens[i + 1]
        if nopen or nname != name:
            return ParseOutcome.failure(
                UNBALANCED_TOKENS,
                nstart,
                f"expected </{name}> after <{name}>, found {'<' if nopen else '</'}{nname}>",
            )
        blocks.append(_Block(name, start, end, nstart, nend))
        i += 2
    return blocks


def parse_rollout(text: str) -> ParseOutcome:
    """Total parse: every input yields ok or a classified error."""
    paired = _pair_blocks(text)
    if isinstance(paired, ParseOutcome):
        return paired
    blocks = paired
    if not blocks:
        return ParseOutcome.failure(MISSING_BLOCK, 0, "no rollout blocks found")

    # Anything outside the blocks must be whitespace.
    cursor = 0
    for b in blocks:
        gap = text[cursor:b.open_start]
        if gap.strip():
            stray = cursor + (len(gap) - len(gap.lstrip()))
            return ParseOutcome.failure(STRAY_TEXT, stray, "non-whitespace text outside blocks")
        cursor = b.close_end
    tail = text[cursor:]
    if tail.strip():
        stray = cursor + (len(tail) - len(tail.lstrip()))
        return ParseOutcome.failure(STRAY_TEXT, stray, "non-whitespace text after the answer block")

    names = [b.name for b in blocks]
    for name in ("reason", "plan", "results", "answer"):
        if names.count(name) > 1:
            dup = blocks[names.index(name, names.index(name) + 1)]
            return ParseOutcome.failure(
                DUPLICATE_BLOCK, dup.open_start, f"duplicate <{name}> block"
            )
    present = set(names)
    if "plan" in present and "results" not in present:
        b = blocks[names.index("plan")]
        return ParseOutcome.failure(
            INCOMPLETE_EXECUTION, b.open_start, "plan block without a results block"
        )
    for required in ("reason", "answer"):
        if required not in present:
            return ParseOutcome.failure(MISSING_BLOCK, 0, f"missing <{required}> block")
    if tuple(names) not in _VALID_SHAPES:
        return ParseOutcome.failure(
            WRONG_ORDER,
            blocks[0].open_start,
            f"block order {names} is not a valid rollout shape",
        )

    by_name = {b.name: b for b in blocks}
    reason = text[by_name["reason"].content_start:by_name["reason"].content_end]

    plan: tuple[ToolCall, ...] | None = None
    results: str | None = None
    if "plan" in by_name:
        pb = by_name["plan"]
        raw_plan = text[pb.content_start:pb.content_end]
        parsed = _parse_plan_payload(raw_plan)
        if isinstance(parsed, str):
            return ParseOutcome.failure(MALFORMED_PLAN, pb.content_start, parsed)
        plan = parsed
        rb = by_name["results"]
        results = text[rb.content_start:rb.content_end]

    ab = by_name["answer"]
    raw_answer = text[ab.content_start:ab.content_end]
    answer = _parse_answer_payload(raw_answer)
    if isinstance(answer, str):
        return ParseOutcome.failure(MALFORMED_ANSWER, ab.content_start, answer)

    return ParseOutcome(
        ok=RolloutSequence(reason=reason, plan=plan, results=results, answer=answer, raw=text)
    )


def _is_plain_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _parse_plan_payload(raw: str) -> tuple[ToolCall, ...] | str:
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        return f"plan payload is not valid JSON: {exc}"
    if not isinstance(doc, list):
        return "plan payload must be a JSON array"
    calls = []
    for i, item in enumerate(doc):
        if not isinstance(item, dict):
            return f"plan[{i}] must be an object"
        unknown = sorted(set(item) - {"tool", "args"})
        if unknown:
            return f"plan[{i}] has unknown keys {unknown}"
        tool = item.get("tool")
        if not isinstance(tool, str) or not tool:
            return f"plan[{i}].tool must be a non-empty string"
        args = item.get("args", {})
        if not isinstance(args, dict):
            return f"plan[{i}].args must be an object"
        calls.append(ToolCall(tool, args))
    return tuple(calls)


def _parse_answer_payload(raw: str) -> AnswerBlock | str:
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        return f"answer payload is not valid JSON: {exc}"
    if not isinstance(doc, dict):
        return "answer payload must be a JSON object"
    unknown = sorted(set(doc) - {"instances", "frames"})
    if unknown:
        return f"answer has unknown keys {unknown}"
    if "instances" not in doc:
        return "answer must carry an 'instances' list"
    instances = doc["instances"]
    if not isinstance(instances, list) or not all(_is_plain_int(i) for i in instances):
        return "'instances' must be a list of integer ids"
    frames = None
    if "frames" in doc:
        raw_frames = doc["frames"]
        if not isinstance(raw_frames, dict):
            return "'frames' must map frame indices to id lists"
        frames = {}
        for key, ids in raw_frames.items():
            try:
                t = int(key)
            except (TypeError, ValueError):
                return f"frame key {key!r} is not an integer"
            if t < 1:
                return f"frame index {t} must be >= 1"
            if not isinstance(ids, list) or not all(_is_plain_int(i) for i in ids):
                return f"frames[{key!r}] must be a list of integer ids"
            frames[t] = tuple(ids)
    return AnswerBlock(instances=tuple(instances), frames=frames)


def _contains_token(content: str) -> str | None:
    for token in ALL_TOKENS:
        if token in content:
            return token
    return None


def serialize_plan(plan: tuple[ToolCall, ...]) -> str:
    return json.dumps(
        [{"tool": c.name, "args": dict(sorted(c.args.items()))} for c in plan],
        separators=(",", ":"),
        ensure_ascii=True,
    )


def serialize_answer(answer: AnswerBlock) -> str:
    doc: dict[str, Any] = {"instances": list(answer.instances)}
    if answer.frames is not None:
        doc["frames"] = {str(t): list(answer.frames[t]) for t in sorted(answer.frames)}
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=True)


def serialize_rollout(r: RolloutSequence) -> str:
    """Canonical text form; parse(serialize(r)).ok == r for valid rollouts."""
    parts = [REASON_OPEN, r.reason, REASON_CLOSE]
    payloads = [r.reason]
    if r.plan is not None:
        plan_json = serialize_plan(r.plan)
        parts += [PLAN_OPEN, plan_json, PLAN_CLOSE, RESULTS_OPEN, r.results or "", RESULTS_CLOSE]
        payloads += [plan_json, r.results or ""]
    answer_json = serialize_answer(r.answer)
    parts += [ANSWER_OPEN, answer_json, ANSWER_CLOSE]
    payloads.append(answer_json)
    for payload in payloads:
        token = _contains_token(payload)
        if token is not None:
            raise ValueError(f"block content contains grammar token {token!r}")
    return "".join(parts)


@dataclass(frozen=True)
class PauseScan:
    """Outcome of scanning an in-progress generation prefix.

    ``paused_at`` is the offset of the final character of the first complete
    plan-closing token, or None when generation should keep going. Anomalies
    record grammar oddities observed on the way (e.g. a close without an
    open); they never abort scanning.
    """

    paused_at: int | None = None
    anomalies: tuple[str, ...] = ()

    @property
    def fired(self) -> bool:
        return self.paused_at is not None


def scan_for_pause(prefix: str) -> PauseScan:
    """Find the first complete plan close following an unmatched plan open.

    Never fires once a results block opens after that close (the pause was
    already serviced). Pure and idempotent on the same prefix.
    """
    anomalies: list[str] = []
    open_pos: int | None = None
    pause_end: int | None = None
    spliced = False
    for name, is_open, start, end in _tokenize(prefix):
        if name == "plan" and is_open:
            if open_pos is None and pause_end is None:
                open_pos = start
        elif name == "plan" and not is_open:
            if open_pos is not None and pause_end is None:
                pause_end = end - 1
            elif open_pos is None and pause_end is None:
                anomalies.append(f"plan close without open at offset {start}")
        elif name == "results" and is_open:
            if pause_end is not None and start > pause_end:
                spliced = True
    if pause_end is not None and not spliced:
        return PauseScan(paused_at=pause_end, anomalies=tuple(anomalies))
    return PauseScan(anomalies=tuple(anomalies))


class SpliceError(ValueError):
    """The prefix is not positioned at an unserviced pause point."""


def splice_results(prefix: str, refined: TwinSequence) -> str:
    """Append the refined twin inside results tokens at a pause point."""
    scan = scan_for_pause(prefix)
    if not scan.fired:
        raise SpliceError("prefix is not at a pause point (no unserviced plan close)")
    if scan.paused_at != len(prefix) - 1:
        raise SpliceError(
            f"prefix does not end at the pause point (pause at {scan.paused_at}, "
            f"prefix ends at {len(prefix) - 1})"
        )
    return f"{prefix}{RESULTS_OPEN}{serialize_twin(refined)}{RESULTS_CLOSE}"
