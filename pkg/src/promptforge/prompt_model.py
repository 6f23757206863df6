"""Six-component pedagogical prompt model.

A pedagogical prompt steers an AI chatbot into tutoring instead of
answer-dumping.  It is built from six components: five describe the
learning context (AI's role, learner's level, problem context, difficulty
identification, guardrails) and one names the tutoring protocol the
learner instructs the AI to follow.  This module defines those components,
the difficulty -> recommended-protocol mapping grounded in the
knowledge/learning-event taxonomy, prompt assembly, and the reference
prompt templates used as gold standards elsewhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import DuplicateComponent, IncompletePrompt, MissingPlaceholder


class ComponentKind(Enum):
    """The six prompt components; all but TUTORING_PROTOCOL describe learning context."""

    AI_ROLE = "ai_role"
    LEARNER_LEVEL = "learner_level"
    PROBLEM_CONTEXT = "problem_context"
    DIFFICULTY_IDENTIFICATION = "difficulty_identification"
    GUARDRAILS = "guardrails"
    TUTORING_PROTOCOL = "tutoring_protocol"

    @property
    def category(self) -> str:
        return "protocol" if self is ComponentKind.TUTORING_PROTOCOL else "learning_context"

    @property
    def label(self) -> str:
        return _COMPONENT_LABELS[self]


_COMPONENT_LABELS = {
    ComponentKind.AI_ROLE: "AI's Role",
    ComponentKind.LEARNER_LEVEL: "Learner's Level",
    ComponentKind.PROBLEM_CONTEXT: "Problem Context",
    ComponentKind.DIFFICULTY_IDENTIFICATION: "Difficulty Identification",
    ComponentKind.GUARDRAILS: "Guardrails",
    ComponentKind.TUTORING_PROTOCOL: "Tutoring Protocols",
}


class DifficultyKind(Enum):
    """What the help-seeker is stuck on."""

    UNDERSTAND_TASK = "understand_task"
    PLAN_SOLUTION = "plan_solution"
    WRITE_CODE = "write_code"
    FIX_BUG_WITH_ERROR = "fix_bug_with_error"
    FIX_UNDESIRED_OUTPUT = "fix_undesired_output"

    @property
    def label(self) -> str:
        return _DIFFICULTY_LABELS[self]


_DIFFICULTY_LABELS = {
    DifficultyKind.UNDERSTAND_TASK: "Understand the Task Description",
    DifficultyKind.PLAN_SOLUTION: "Plan the General Idea of the Solution",
    DifficultyKind.WRITE_CODE: "Write the Code",
    DifficultyKind.FIX_BUG_WITH_ERROR: "Fix a Bug with Error Message",
    DifficultyKind.FIX_UNDESIRED_OUTPUT: "Fix Undesired Output",
}


class TutoringProtocolKind(Enum):
    """The interaction format the learner instructs the AI to follow."""

    CONTEXTUALIZED_EXPLANATION = "contextualized_explanation"
    EXAMPLE_CODE_ON_SIMILAR_PROBLEM = "example_code_on_similar_problem"
    STEP_BY_STEP_GUIDING_QUESTIONS = "step_by_step_guiding_questions"

    @property
    def label(self) -> str:
        return _PROTOCOL_LABELS[self]


_PROTOCOL_LABELS = {
    TutoringProtocolKind.CONTEXTUALIZED_EXPLANATION: "Contextualized Explanation",
    TutoringProtocolKind.EXAMPLE_CODE_ON_SIMILAR_PROBLEM: "Example Code on a Similar Problem",
    TutoringProtocolKind.STEP_BY_STEP_GUIDING_QUESTIONS: "Step-by-Step Guiding Questions",
}


class LearnerLevelKind(Enum):
    BEGINNER_PYTHON_PROGRAMMER = "beginner_python_programmer"
    ADVANCED_PYTHON_PROGRAMMER = "advanced_python_programmer"


class SegmentOrigin(Enum):
    LEARNER_WRITTEN = "learner_written"
    SAMPLE_ACCEPTED = "sample_accepted"


@dataclass(frozen=True)
class PromptSegment:
    """One component's text, with provenance (written vs sample-accepted)."""

    component: ComponentKind
    text: str
    origin: SegmentOrigin = SegmentOrigin.LEARNER_WRITTEN

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("segment text must be nonempty after trimming")


@dataclass
class PedagogicalPrompt:
    """An in-progress or finished prompt: at most one segment per component."""

    scenario_id: str
    segments: list[PromptSegment] = field(default_factory=list)

    def add(self, segment: PromptSegment) -> None:
        if any(s.component is segment.component for s in self.segments):
            raise DuplicateComponent(f"component {segment.component.value} already present")
        self.segments.append(segment)

    def get(self, component: ComponentKind) -> PromptSegment | None:
        for s in self.segments:
            if s.component is component:
                return s
        return None

    @property
    def is_complete(self) -> bool:
        return {s.component for s in self.segments} == set(ComponentKind)

    def missing_components(self) -> list[ComponentKind]:
        present = {s.component for s in self.segments}
        return [c for c in CANONICAL_ORDER if c not in present]


@dataclass(frozen=True)
class ProtocolRecommendation:
    difficulty: DifficultyKind
    recommended: frozenset[TutoringProtocolKind]
    rationale: str


# Learning-event classes used as recommendation rationales.
MEMORY_FLUENCY = "memory/fluency"
INDUCTION_REFINEMENT = "induction/refinement"
UNDERSTANDING_SENSE_MAKING = "understanding/sense-making"

# Code writing is a rule-like skill learned by induction over examples, so a
# worked example fits best.  Debugging (either flavor) needs reasoning about
# program behavior, which guided self-explanation supports.  Task
# understanding calls for an explanation grounded in the task's own inputs
# and outputs.  The plan-solution mapping extends the same sense-making
# reading to planning and is flagged as an extension in its rationale.
_RECOMMENDATIONS = {
    DifficultyKind.UNDERSTAND_TASK: (
        {TutoringProtocolKind.CONTEXTUALIZED_EXPLANATION},
        UNDERSTANDING_SENSE_MAKING,
    ),
    DifficultyKind.PLAN_SOLUTION: (
        {TutoringProtocolKind.CONTEXTUALIZED_EXPLANATION},
        UNDERSTANDING_SENSE_MAKING + " (extension: planning treated like task sense-making)",
    ),
    DifficultyKind.WRITE_CODE: (
        {TutoringProtocolKind.EXAMPLE_CODE_ON_SIMILAR_PROBLEM},
        INDUCTION_REFINEMENT,
    ),
    DifficultyKind.FIX_BUG_WITH_ERROR: (
        {TutoringProtocolKind.STEP_BY_STEP_GUIDING_QUESTIONS},
        UNDERSTANDING_SENSE_MAKING,
    ),
    DifficultyKind.FIX_UNDESIRED_OUTPUT: (
        {TutoringProtocolKind.STEP_BY_STEP_GUIDING_QUESTIONS},
        UNDERSTANDING_SENSE_MAKING,
    ),
}


def recommend_protocol(difficulty: DifficultyKind) -> ProtocolRecommendation:
    """Map a learner difficulty to the tutoring protocol(s) that teach it best.

    Total and deterministic over DifficultyKind; the rationale names the
    learning-event class the mapping rests on.
    """
    protocols, rationale = _RECOMMENDATIONS[difficulty]
    return ProtocolRecommendation(difficulty, frozenset(protocols), rationale)


# Mirrors the narrative flow of the gold example prompt; packs may override.
CANONICAL_ORDER = (
    ComponentKind.AI_ROLE,
    ComponentKind.LEARNER_LEVEL,
    ComponentKind.DIFFICULTY_IDENTIFICATION,
    ComponentKind.PROBLEM_CONTEXT,
    ComponentKind.TUTORING_PROTOCOL,
    ComponentKind.GUARDRAILS,
)

SEGMENT_SEPARATOR = "\n\n"


def assemble_prompt(prompt: PedagogicalPrompt, order: tuple[ComponentKind, ...] = CANONICAL_ORDER) -> str:
    """Concatenate a complete prompt's segment texts in `order`, one blank line apart."""
    if len(order) != len(set(order)) or set(order) != set(ComponentKind):
        raise DuplicateComponent("order must be a permutation of all six components")
    missing = prompt.missing_components()
    if missing:
        raise IncompletePrompt(
            "prompt is missing components: " + ", ".join(c.value for c in missing),
            missing=[c.value for c in missing],
        )
    seen = set()
    for s in prompt.segments:
        if s.component in seen:
            raise DuplicateComponent(f"component {s.component.value} appears twice")
        seen.add(s.component)
    by_component = {s.component: s for s in prompt.segments}
    return SEGMENT_SEPARATOR.join(by_component[c].text for c in order)


# Reference prompt templates, one per tutoring protocol.  Placeholders are
# filled from the scenario's code snapshot; every template ends with a
# guardrail sentence.
REFERENCE_TEMPLATES: dict[TutoringProtocolKind, str] = {
    TutoringProtocolKind.EXAMPLE_CODE_ON_SIMILAR_PROBLEM: (
        "I'm a python beginner having trouble with debugging. "
        "The coding problem, my code, and output are as follows:\n\n"
        "[problem description]\n\n"
        "[current code]\n\n"
        "[current output]\n\n"
        "Can you act as an intro-level programming tutor and generate a "
        "minimal-code example of a different problem that uses a for loop to "
        "iterate over indices? Don't give me the solution to the problem."
    ),
    TutoringProtocolKind.STEP_BY_STEP_GUIDING_QUESTIONS: (
        "I'm a python beginner having trouble with debugging. "
        "The coding problem, my code, and output are as follows:\n\n"
        "[problem description]\n\n"
        "[current code]\n\n"
        "[current output]\n\n"
        "Can you act as an intro-level programming tutor and give me 3-4 "
        "step-by-step guiding question, with each as a multiple choice "
        "question to guide me think through the problem? Don't ask me the "
        "next question until I answered the current question. Don't give me "
        "the solution to the problem."
    ),
    TutoringProtocolKind.CONTEXTUALIZED_EXPLANATION: (
        "I'm a python beginner having trouble with understanding the problem "
        "description. Can you act as an intro-level programming tutor and "
        "give me examples of inputs and outputs, and explain how the input "
        "becomes the output in the problem context? The problem description "
        "is as follow:\n\n"
        "[problem description]\n\n"
        "Don't give me the solution to the problem."
    ),
}

_PLACEHOLDER_FIELDS = {
    "[problem description]": "problem_description",
    "[current code]": "current_code",
    "[current output]": "current_output",
}


def render_reference_prompt(protocol: TutoringProtocolKind, scenario) -> str:
    """Instantiate the reference template for `protocol` with a scenario's snapshot.

    `scenario` needs a `.snapshot` with problem_description / current_code /
    current_output.  The problem description must be nonempty; code and
    output substitute verbatim (possibly empty, matching how unfinished work
    actually looks).
    """
    template = REFERENCE_TEMPLATES[protocol]
    snapshot = scenario.snapshot
    text = template
    for token, attr in _PLACEHOLDER_FIELDS.items():
        if token not in template:
            continue
        value = getattr(snapshot, attr, None)
        if value is None or (attr == "problem_description" and not value.strip()):
            raise MissingPlaceholder(f"scenario lacks {attr} required by template", field=attr)
        text = text.replace(token, value)
    return text
