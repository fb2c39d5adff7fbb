"""Reward functions and group-relative advantage normalization.

Teacher reward = format + accuracy. Student reward adds a judge-scored
reasoning term weighted by gamma. Advantages normalize rewards within a
group of rollouts for the same query using the population standard
deviation; a degenerate group (all rewards equal) gets all-zero advantages.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Protocol, Sequence

import numpy as np

from .rollout import AnswerBlock, ParseOutcome, RolloutSequence
from .twin import Mask, TwinSequence, mask_iou, union_masks

FORMAT_VALID = 0.5
FORMAT_INVALID = -0.5
DEFAULT_GAMMA = 0.5
ACCURACY_IOU_THRESHOLD = 0.5  # strict: reward 1 only when J exceeds this
_STD_EPS = 1e-8

_SCORE_RE = re.compile(r"[01](?:\.\d+)?")


class JudgeError(RuntimeError):
    """The judge backend failed or produced no extractable score."""


@dataclass(frozen=True)
class JudgeConfig:
    endpoint: str = "overlap"
    temperature: float = 0.3
    max_tokens: int = 512
    template_id: str = "judge_prompt_v1"

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")


class JudgeBackend(Protocol):
    name: str

    def score_pair(self, student_reason: str, teacher_reason: str) -> str:
        """Return the raw judge reply text for one student/teacher pair."""
        ...


def load_template(template_id: str) -> str:
    return (resources.files("twinseg") / "templates" / f"{template_id}.txt").read_text(
        encoding="utf-8"
    )


def _word_tokens(text: str) -> list[str]:
    return re.findall(r"\w+", text.lower())


def overlap_f1(a: str, b: str) -> float:
    """Token-multiset F1 between two texts; 1.0 when both are empty."""
    ta, tb = _word_tokens(a), _word_tokens(b)
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    common = sum((Counter(ta) & Counter(tb)).values())
    if common == 0:
        return 0.0
    precision = common / len(ta)
    recall = common / len(tb)
    return 2.0 * precision * recall / (precision + recall)


class OverlapJudge:
    """Deterministic offline judge: token-overlap F1 of the reason texts.

    Ships so scoring and the acceptance suite run without any network; the
    reply goes through the same score-extraction rule as a remote judge.
    """

    name = "overlap"

    def score_pair(self, student_reason: str, teacher_reason: str) -> str:
        return f"Score: {overlap_f1(student_reason, teacher_reason):.6f}"


def extract_score(reply: str) -> float | None:
    """Last number matching [01](.ddd)? in the reply, clamped to [0, 1]."""
    matches = _SCORE_RE.findall(reply)
    if not matches:
        return None
    return min(max(float(matches[-1]), 0.0), 1.0)


def format_reward(outcome: ParseOutcome) -> float:
    """+0.5 for a structurally valid rollout, -0.5 for any classified error."""
    return FORMAT_VALID if outcome.is_ok else FORMAT_INVALID


def resolve_answer_masks(
    answer: AnswerBlock, twin: TwinSequence
) -> tuple[list[Mask] | None, str | None]:
    """Per-frame union of the answered ids' masks.

    Returns (masks, None) or (None, issue) when an answered id does not exist
    anywhere in the twin.
    """
    dims = twin.dims
    if dims is None:
        # Twin carries no instances at all; only the no-target answer resolves.
        if answer.all_ids():
            return None, f"unresolvable ids {list(answer.all_ids())}: twin has no instances"
        return None, "twin has no instances and no raster dimensions"
    known = set(twin.ids())
    unknown = sorted(set(answer.all_ids()) - known)
    if unknown:
        return None, f"unresolvable ids {unknown}"
    width, height = dims
    masks = []
    for frame in twin.frames:
        ids = answer.ids_for_frame(frame.t)
        present = [frame.instance(i).mask for i in dict.fromkeys(ids) if frame.instance(i)]
        masks.append(union_masks(present, width, height))
    return masks, None


def answer_iou(
    answer: AnswerBlock, twin: TwinSequence, ground_truth: Sequence[Mask]
) -> tuple[float | None, str | None]:
    """Sequence IoU (mean per-frame) of the resolved answer against ground
    truth; (None, issue) when the answer does not resolve."""
    if len(ground_truth) != twin.n_frames:
        raise ValueError(
            f"ground truth covers {len(ground_truth)} frames, twin has {twin.n_frames}"
        )
    pred, issue = resolve_answer_masks(answer, twin)
    if pred is None:
        return None, issue
    ious = [mask_iou(p, g) for p, g in zip(pred, ground_truth)]
    return float(np.mean(ious)), None


def accuracy_reward(
    answer: AnswerBlock, twin: TwinSequence, ground_truth: Sequence[Mask]
) -> int:
    """1 when the sequence IoU strictly exceeds 0.5, else 0. An unresolvable
    id yields 0 rather than raising."""
    j, _ = answer_iou(answer, twin, ground_truth)
    if j is None:
        return 0
    return 1 if j > ACCURACY_IOU_THRESHOLD else 0


def reasoning_reward(
    student: RolloutSequence,
    teacher: RolloutSequence,
    judge: JudgeBackend,
    retries: int = 3,
) -> float:
    """Judge-scored similarity of the student's reasoning to the teacher's.

    Bounded retries on transport or extraction failure; a judge that never
    yields a score raises rather than silently scoring 0.
    """
    last_error: Exception | None = None
    for _ in range(max(1, retries)):
        try:
            reply = judge.score_pair(student.reason, teacher.reason)
        except JudgeError as exc:
            last_error = exc
            continue
        score = extract_score(reply)
        if score is not None:
            return score
        last_error = JudgeError(f"no score found in judge reply: {reply[:200]!r}")
    raise JudgeError(f"judge failed after {retries} attempts: {last_error}")


@dataclass(frozen=True)
class RewardBreakdown:
    role: str  # "teacher" | "student"
    format: float
    accuracy: float
    reasoning: float | None
    gamma: float
    total: float


def combined_reward(
    format_value: float,
    accuracy_value: float,
    reasoning_value: float | None = None,
    role: str = "teacher",
    gamma: float = DEFAULT_GAMMA,
) -> RewardBreakdown:
    if role not in ("teacher", "student"):
        raise ValueError(f"unknown role {role!r}")
    if format_value not in (FORMAT_VALID, FORMAT_INVALID):
        raise ValueError(f"format component must be +-0.5, got {format_value}")
    if accuracy_value not in (0, 1):
        raise ValueError(f"accuracy component must be 0 or 1, got {accuracy_value}")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if role == "teacher":
        if reasoning_value is not None:
            raise ValueError("teacher reward has no reasoning term")
        total = format_value + accuracy_value
    else:
        if reasoning_value is None:
            raise ValueError("student reward requires a reasoning component")
        if not (0.0 <= reasoning_value <= 1.0):
            raise ValueError(f"reasoning component {reasoning_value} outside [0, 1]")
        total = format_value + accuracy_value + gamma * reasoning_value
    return RewardBreakdown(
        role=role,
        format=float(format_value),
        accuracy=float(accuracy_value),
        reasoning=None if reasoning_value is None else float(reasoning_value),
        gamma=float(gamma),
        total=float(total),
    )


@dataclass(frozen=True)
class GroupScores:
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]


def grpo_advantages(rewards: Sequence[float], eps: float = _STD_EPS) -> GroupScores:
    """Group-relative advantages: (r - mean) / population std, all zeros when
    the group is degenerate (std <= eps)."""
    if len(rewards) < 2:
        raise ValueError(f"group size must be >= 2, got {len(rewards)}")
    arr = np.asarray(rewards, dtype=np.float64)
    std = float(arr.std())
    if std <= eps:
        advantages = np.zeros_like(arr)
    else:
        advantages = (arr - arr.mean()) / std
    return GroupScores(
        rewards=tuple(float(r) for r in arr),
        advantages=tuple(float(a) for a in advantages),
    )
