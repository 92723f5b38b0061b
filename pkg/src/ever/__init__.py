"""Real-time sentence-level verification and rectification for LLM output.

Generate a sentence, check every factual concept in it, revise or rewrite
when checks fail, and finalize with abstention or a "not sure" warning when
unverifiable content remains.
"""

from .core import (
    ABSTENTION_TEXT,
    NOT_SURE_MARKER,
    Concept,
    ConceptCheck,
    Flag,
    FlagDecision,
    GenerationMode,
    RectificationAction,
    SentenceState,
    SentenceStatus,
    TaskKind,
    ValidationMode,
    annotate_not_sure,
    decide_action,
    normalize_answer,
    parse_concept_list,
    parse_flag_decision,
    segment_first_sentence,
)
from .prompting import PromptRegistry, PromptTemplate, default_registry

__version__ = "0.1.0"

__all__ = [
    "ABSTENTION_TEXT",
    "NOT_SURE_MARKER",
    "Concept",
    "ConceptCheck",
    "Flag",
    "FlagDecision",
    "GenerationMode",
    "PromptRegistry",
    "PromptTemplate",
    "RectificationAction",
    "SentenceState",
    "SentenceStatus",
    "TaskKind",
    "ValidationMode",
    "annotate_not_sure",
    "decide_action",
    "default_registry",
    "normalize_answer",
    "parse_concept_list",
    "parse_flag_decision",
    "segment_first_sentence",
    "__version__",
]
