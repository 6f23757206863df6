"""promptforge: scenario-based training for pedagogical prompting.

A guided builder walks a learner through composing a six-component tutoring
prompt step by step; deterministic criteria (or an LLM judge) validate each
written segment; an event-sourced service persists sessions durably; and an
offline toolkit grades free-form prompts and computes cohort statistics.
"""

from __future__ import annotations

from .builder import (
    BuilderSession,
    EventKind,
    SessionEvent,
    SessionStatus,
    StepPhase,
    accept_sample_solution,
    advance,
    answer_choice,
    replay,
    session_view,
    start_session,
    submit_segment,
)
from .content import (
    ContentPack,
    Scenario,
    StepDefinition,
    load_content_pack,
    load_default_pack,
    select_learning_sequence,
)
from .prompt_model import (
    CANONICAL_ORDER,
    ComponentKind,
    DifficultyKind,
    PedagogicalPrompt,
    PromptSegment,
    TutoringProtocolKind,
    assemble_prompt,
    recommend_protocol,
)
from .validation import (
    Backend,
    Criterion,
    CriterionVerdict,
    RuleOracle,
    ValidationOutcome,
    evaluate_segment,
    load_criteria,
    rule_check,
)

__version__ = "0.1.0"

__all__ = [
    "BuilderSession",
    "Backend",
    "CANONICAL_ORDER",
    "ComponentKind",
    "ContentPack",
    "Criterion",
    "CriterionVerdict",
    "DifficultyKind",
    "EventKind",
    "PedagogicalPrompt",
    "PromptSegment",
    "RuleOracle",
    "Scenario",
    "SessionEvent",
    "SessionStatus",
    "StepDefinition",
    "StepPhase",
    "TutoringProtocolKind",
    "ValidationOutcome",
    "accept_sample_solution",
    "advance",
    "answer_choice",
    "assemble_prompt",
    "evaluate_segment",
    "load_content_pack",
    "load_criteria",
    "load_default_pack",
    "recommend_protocol",
    "replay",
    "rule_check",
    "select_learning_sequence",
    "session_view",
    "start_session",
    "submit_segment",
    "__version__",
]
