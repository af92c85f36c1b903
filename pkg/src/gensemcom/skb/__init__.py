"""Shared knowledge base: task decomposition, representation choice, translation."""

from .backends import AgentBackend, HttpBackend, RuleBasedBackend
from .memory import (FEEDBACK_KINDS, POOL_IDS, MemoryPool, MemoryPools, Record, mean_link_rate,
                     record_feedback)
from .protocol import (CommSnapshot, DebateTranscript, Representation, Subtask, SubtaskPlan, TaskSpec,
                       TranscriptRecord, decompose, replay, select_representation, topological_order)
from .translate import (BOUNDING_BOXES, SEGMENTATION_MASK, TranslationRegistry, mask_to_semantics,
                        translate)

__all__ = [
    "AgentBackend", "HttpBackend", "RuleBasedBackend",
    "FEEDBACK_KINDS", "POOL_IDS", "MemoryPool", "MemoryPools", "Record", "mean_link_rate", "record_feedback",
    "CommSnapshot", "DebateTranscript", "Representation", "Subtask", "SubtaskPlan", "TaskSpec",
    "TranscriptRecord", "decompose", "replay", "select_representation", "topological_order",
    "BOUNDING_BOXES", "SEGMENTATION_MASK", "TranslationRegistry", "mask_to_semantics", "translate",
]
