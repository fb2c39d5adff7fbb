"""Prompt assembly for policy backends.

The template is fixed and versioned: a system preamble describing the rollout
grammar, the tool manifest, the serialized twin, and the query. The partial
rollout (if any) follows the final section marker, which lets scripted
backends recover their own state from the prompt alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .tools import ToolRegistry, default_registry
from .twin import TwinSequence, serialize_twin

PROMPT_VERSION = "prompt_v1"

SYSTEM_PREAMBLE = """\
You answer segmentation queries over a scene twin: a JSON record of per-frame
object instances with masks, depth statistics, and semantic labels.
Respond with a reasoning block, optionally a tool plan, and a final answer:
<reason>your analysis</reason>
<plan>[{"tool": "name", "args": {...}}]</plan>   (only when tools are needed)
<results>...</results>                            (inserted by the executor)
<answer>{"instances": [ids]}</answer>
Plans pause generation at </plan>; execution results are spliced back before
you continue. Answer with instance ids from the twin; use an empty list when
no object matches."""

TOOLS_MARK = "[TOOLS]"
TWIN_MARK = "[TWIN]"
QUERY_MARK = "[QUERY]"
ROLLOUT_MARK = "[ROLLOUT]"


def assemble_prompt(
    twin: TwinSequence, query: str, registry: ToolRegistry | None = None
) -> str:
    reg = registry or default_registry()
    manifest = json.dumps(reg.manifest(), separators=(",", ":"), ensure_ascii=True)
    return (
        f"{SYSTEM_PREAMBLE}\n"
        f"{TOOLS_MARK}\n{manifest}\n"
        f"{TWIN_MARK}\n{serialize_twin(twin)}\n"
        f"{QUERY_MARK}\n{query}\n"
        f"{ROLLOUT_MARK}\n"
    )


@dataclass(frozen=True)
class PromptSections:
    twin_json: str
    query: str
    partial: str  # rollout text emitted so far, empty on the first call


def split_prompt(prompt: str) -> PromptSections:
    """Recover the twin, query, and partial rollout from an assembled prompt."""
    try:
        _, rest = prompt.split(f"\n{TWIN_MARK}\n", 1)
        twin_json, rest = rest.split(f"\n{QUERY_MARK}\n", 1)
        query, partial = rest.split(f"\n{ROLLOUT_MARK}\n", 1)
    except ValueError as exc:
        raise ValueError("prompt does not follow the assembly template") from exc
    return PromptSections(twin_json=twin_json, query=query, partial=partial)
