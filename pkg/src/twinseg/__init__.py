"""twinseg: digital-twin reasoning segmentation toolkit.

Twin representation and its canonical JSON form, the rollout grammar with
pause/execute/resume, the tool executor, verifiable rewards with
group-relative advantages, segmentation metrics, a synthetic-scene oracle,
and the distillation data flow.
"""

__version__ = "0.1.0"

from .metrics import DatasetEval, SequenceEval, dataset_eval, f_measure, j_measure, sequence_eval
from .rewards import (
    GroupScores,
    JudgeConfig,
    RewardBreakdown,
    accuracy_reward,
    combined_reward,
    format_reward,
    grpo_advantages,
    reasoning_reward,
)
from .rollout import (
    AnswerBlock,
    ParseOutcome,
    RolloutSequence,
    ToolCall,
    parse_rollout,
    scan_for_pause,
    serialize_rollout,
    splice_results,
)
from .tools import ExecutionReport, ToolRegistry, ToolSpec, default_registry, execute_plan
from .twin import (
    DepthMap,
    DepthStats,
    InstanceRecord,
    Mask,
    TwinFrame,
    TwinSequence,
    TwinValidationError,
    compute_depth_stats,
    decode_mask,
    encode_mask,
    mask_iou,
    parse_twin,
    serialize_twin,
)

__all__ = [
    "AnswerBlock",
    "DatasetEval",
    "DepthMap",
    "DepthStats",
    "ExecutionReport",
    "GroupScores",
    "InstanceRecord",
    "JudgeConfig",
    "Mask",
    "ParseOutcome",
    "RewardBreakdown",
    "RolloutSequence",
    "SequenceEval",
    "ToolCall",
    "ToolRegistry",
    "ToolSpec",
    "TwinFrame",
    "TwinSequence",
    "TwinValidationError",
    "accuracy_reward",
    "combined_reward",
    "compute_depth_stats",
    "dataset_eval",
    "decode_mask",
    "default_registry",
    "encode_mask",
    "execute_plan",
    "f_measure",
    "format_reward",
    "grpo_advantages",
    "j_measure",
    "mask_iou",
    "parse_rollout",
    "parse_twin",
    "reasoning_reward",
    "scan_for_pause",
    "sequence_eval",
    "serialize_rollout",
    "serialize_twin",
    "splice_results",
]
