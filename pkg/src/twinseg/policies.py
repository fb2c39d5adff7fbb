"""Scripted policy backends.

Backends generate rollout text from an assembled prompt and honor stop
tokens: generation halts at the first occurrence of the stop token and the
returned text includes it. The oracle solves the fixed query grammar of the
synthetic generator; its spatial and temporal answers are read exclusively
from derived keys in the spliced results block, so disabling twin refinement
degrades it the way a tool-dependent policy should degrade.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from typing import Iterable, Mapping, Protocol

from .prompts import split_prompt
from .rollout import (
    ANSWER_CLOSE,
    ANSWER_OPEN,
    PLAN_CLOSE,
    PLAN_OPEN,
    REASON_CLOSE,
    REASON_OPEN,
    RESULTS_CLOSE,
    RESULTS_OPEN,
    serialize_plan,
    ToolCall,
)
from .twin import TwinSequence, TwinValidationError, parse_twin


class PolicyBackend(Protocol):
    name: str
    deterministic: bool

    def generate(self, prompt: str, stop_at: str | None = None) -> str:
        ...


class BackendError(RuntimeError):
    """The backend could not produce text for this prompt."""


def honor_stop(text: str, stop_at: str | None) -> str:
    """Truncate through the first occurrence of the stop token."""
    if stop_at:
        cut = text.find(stop_at)
        if cut >= 0:
            return text[: cut + len(stop_at)]
    return text


def _answer_text(ids: Iterable[int]) -> str:
    payload = json.dumps({"instances": sorted(set(ids))}, separators=(",", ":"))
    return f"{ANSWER_OPEN}{payload}{ANSWER_CLOSE}"


def _reason_text(text: str) -> str:
    return f"{REASON_OPEN}{text}{REASON_CLOSE}"


# --- query grammar ----------------------------------------------------------

_Q_LABEL = re.compile(r"^segment the (?P<label>[a-z]+ (?:rectangle|disc))\.$")
_Q_CLOSEST = re.compile(r"^segment the object closest to the camera\.$")
_Q_FARTHEST = re.compile(r"^segment the object farthest from the camera\.$")
_Q_LARGEST = re.compile(r"^segment the largest object\.$")
_Q_LEFT = re.compile(r"^segment the object to the left of the (?P<anchor>[a-z]+ (?:rectangle|disc))\.$")
_Q_RIGHT = re.compile(r"^segment the object to the right of the (?P<anchor>[a-z]+ (?:rectangle|disc))\.$")
_Q_LAST = re.compile(r"^segment the object that appears last\.$")
_Q_FIRST = re.compile(r"^segment the object that appears first\.$")
_Q_MOVES = re.compile(r"^segment the object that moves (?P<direction>right|left|up|down)\.$")


class _Intent:
    def __init__(self, kind: str, **params: str) -> None:
        self.kind = kind
        self.params = params


def _parse_query(query: str) -> _Intent | None:
    q = query.strip().lower()
    if m := _Q_LABEL.match(q):
        return _Intent("label", label=m.group("label"))
    if _Q_CLOSEST.match(q):
        return _Intent("closest")
    if _Q_FARTHEST.match(q):
        return _Intent("farthest")
    if _Q_LARGEST.match(q):
        return _Intent("largest")
    if m := _Q_LEFT.match(q):
        return _Intent("lateral", anchor=m.group("anchor"), relation="left_of")
    if m := _Q_RIGHT.match(q):
        return _Intent("lateral", anchor=m.group("anchor"), relation="right_of")
    if _Q_LAST.match(q):
        return _Intent("appears", which="last")
    if _Q_FIRST.match(q):
        return _Intent("appears", which="first")
    if m := _Q_MOVES.match(q):
        return _Intent("moves", direction=m.group("direction"))
    return None


def _find_by_label(twin: TwinSequence, label: str) -> list[int]:
    wanted = label.strip().lower()
    hits = set()
    for frame in twin.frames:
        for record in frame.instances:
            if record.semantic_label.lower() == wanted:
                hits.add(record.id)
    return sorted(hits)


class OraclePolicy:
    """Solves the synthetic query grammar exactly.

    Label queries are answered directly from the twin (the plan-free rollout
    shape). Every other intent emits a plan and then answers only from the
    derived keys found in the spliced results; when those keys are missing
    (refinement disabled) it falls back to the no-target answer.
    """

    name = "oracle"
    deterministic = True

    def generate(self, prompt: str, stop_at: str | None = None) -> str:
        sections = split_prompt(prompt)
        intent = _parse_query(sections.query)
        if sections.partial:
            text = self._resume(sections.partial, intent)
        else:
            text = self._open(sections.twin_json, intent)
        return honor_stop(text, stop_at)

    def _open(self, twin_json: str, intent: _Intent | None) -> str:
        twin = parse_twin(twin_json)
        if intent is None:
            return _reason_text("The query does not match any known pattern.") + _answer_text([])
        if intent.kind == "label":
            ids = _find_by_label(twin, intent.params["label"])
            reason = (
                f"The query names the label '{intent.params['label']}'; matching "
                "instances are read directly from the twin."
            )
            return _reason_text(reason) + _answer_text(ids)
        plan, reason = self._plan_for(twin, intent)
        return _reason_text(reason) + f"{PLAN_OPEN}{serialize_plan(tuple(plan))}{PLAN_CLOSE}"

    def _plan_for(self, twin: TwinSequence, intent: _Intent) -> tuple[list[ToolCall], str]:
        ids = twin.ids()
        if intent.kind in ("closest", "farthest"):
            return (
                [ToolCall("depth_rank", {})],
                "Camera distance needs depth ranks over the twin instances.",
            )
        if intent.kind == "largest":
            return (
                [ToolCall("size", {"id": i}) for i in ids],
                "Finding the largest object needs per-instance pixel sizes.",
            )
        if intent.kind == "lateral":
            anchors = _find_by_label(twin, intent.params["anchor"])
            if len(anchors) != 1:
                return ([], "The anchor label is not unique; no relation can be grounded.")
            anchor = anchors[0]
            calls = [
                ToolCall("spatial_relation", {"a": i, "b": anchor}) for i in ids if i != anchor
            ]
            return (calls, f"Lateral relation against instance {anchor} needs centroid relations.")
        if intent.kind == "appears":
            return (
                [ToolCall("temporal_span", {"id": i}) for i in ids],
                "Appearance order needs each instance's presence span.",
            )
        if intent.kind == "moves":
            return (
                [ToolCall("motion", {"id": i}) for i in ids],
                "Motion direction needs per-instance displacement.",
            )
        return ([], "No plan applies.")

    def _resume(self, partial: str, intent: _Intent | None) -> str:
        refined = _extract_results_twin(partial)
        if refined is None or intent is None:
            return _answer_text([])
        ids = self._solve_from_derived(refined, intent)
        return _answer_text(ids)

    def _solve_from_derived(self, twin: TwinSequence, intent: _Intent) -> list[int]:
        gather: dict[int, Mapping[str, object]] = {}
        for frame in twin.frames:
            for record in frame.instances:
                if record.id not in gather and record.derived:
                    gather[record.id] = record.derived
        if intent.kind in ("closest", "farthest"):
            ranks = {
                i: d["depth_rank"] for i, d in gather.items() if "depth_rank" in d
            }
            if not ranks:
                return []
            target = min(ranks.values()) if intent.kind == "closest" else max(ranks.values())
            return sorted(i for i, r in ranks.items() if r == target)
        if intent.kind == "largest":
            sizes = {i: d["size_px"] for i, d in gather.items() if "size_px" in d}
            if not sizes:
                return []
            best = max(sizes.values())
            return sorted(i for i, s in sizes.items() if s == best)
        if intent.kind == "lateral":
            anchors = _find_by_label(twin, intent.params["anchor"])
            if len(anchors) != 1:
                return []
            key = f"spatial_relation:{intent.params['relation']}:{anchors[0]}"
            return sorted(i for i, d in gather.items() if d.get(key) is True)
        if intent.kind == "appears":
            firsts = {
                i: d["temporal_span:first_frame"]
                for i, d in gather.items()
                if "temporal_span:first_frame" in d
            }
            if not firsts:
                return []
            target = max(firsts.values()) if intent.params["which"] == "last" else min(firsts.values())
            return sorted(i for i, f in firsts.items() if f == target)
        if intent.kind == "moves":
            axis, sign = {
                "right": ("motion:dx", 1),
                "left": ("motion:dx", -1),
                "down": ("motion:dy", 1),
                "up": ("motion:dy", -1),
            }[intent.params["direction"]]
            return sorted(
                i for i, d in gather.items() if axis in d and d[axis] * sign > 0
            )
        return []


def _extract_results_twin(partial: str) -> TwinSequence | None:
    start = partial.rfind(RESULTS_OPEN)
    if start < 0:
        return None
    end = partial.find(RESULTS_CLOSE, start)
    if end < 0:
        return None
    body = partial[start + len(RESULTS_OPEN):end]
    try:
        return parse_twin(body)
    except TwinValidationError:
        return None


class EmptyAnswerPolicy:
    """Always answers no-target without planning."""

    name = "empty"
    deterministic = True

    def generate(self, prompt: str, stop_at: str | None = None) -> str:
        return honor_stop(_reason_text("No object matches.") + _answer_text([]), stop_at)


class RandomAnswerPolicy:
    """Answers one uniformly random twin instance.

    Seeded per prompt (twin + query), so draws are independent across cases
    that share a query template, yet resumed collections replay identically.
    """

    name = "random"
    deterministic = True

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed

    def generate(self, prompt: str, stop_at: str | None = None) -> str:
        sections = split_prompt(prompt)
        twin = parse_twin(sections.twin_json)
        material = f"{self.seed}:{prompt}".encode()
        rng = random.Random(int.from_bytes(hashlib.sha256(material).digest()[:8], "big"))
        ids = twin.ids()
        choice = [rng.choice(ids)] if ids else []
        return honor_stop(_reason_text("Guessing uniformly.") + _answer_text(choice), stop_at)


class ReplayPolicy:
    """Serves canned rollout texts keyed by the assembled prompt (query text
    alone collides when scenes share a template).

    On resume it skips past its own canned results block, so replaying a
    collected rollout through the pause/execute loop reconstructs it exactly
    when the tools are deterministic.
    """

    name = "replay"
    deterministic = True

    def __init__(
        self,
        rollouts_by_prompt: Mapping[str, str] | None = None,
        rollouts_by_query: Mapping[str, str] | None = None,
    ) -> None:
        self._by_prompt = dict(rollouts_by_prompt or {})
        self._by_query = dict(rollouts_by_query or {})

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, object]]) -> "ReplayPolicy":
        by_prompt = {}
        by_query = {}
        for record in records:
            rollout = record.get("rollout", record.get("completion"))
            if not isinstance(rollout, str):
                continue
            prompt = record.get("prompt")
            if isinstance(prompt, str):
                by_prompt[prompt] = rollout
            query = record.get("query")
            if isinstance(query, str):
                by_query.setdefault(query, rollout)
        return cls(by_prompt, by_query)

    def generate(self, prompt: str, stop_at: str | None = None) -> str:
        sections = split_prompt(prompt)
        base_prompt = prompt[: len(prompt) - len(sections.partial)]
        canned = self._by_prompt.get(base_prompt) or self._by_query.get(sections.query)
        if canned is None:
            raise BackendError(f"no canned rollout for query {sections.query!r}")
        if sections.partial:
            cut = canned.find(RESULTS_CLOSE)
            if cut < 0:
                raise BackendError("resumed a canned rollout that has no results block")
            return honor_stop(canned[cut + len(RESULTS_CLOSE):], stop_at)
        return honor_stop(canned, stop_at)


class GarbagePolicy:
    """Emits structurally invalid text; useful for format-reward fixtures."""

    name = "garbage"
    deterministic = True

    def __init__(self, text: str = "lorem ipsum <answer> broken") -> None:
        self.text = text

    def generate(self, prompt: str, stop_at: str | None = None) -> str:
        return honor_stop(self.text, stop_at)
