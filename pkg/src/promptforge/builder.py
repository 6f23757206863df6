"""The per-learner state machine for one scenario.

Six steps, each gated the same way: answer a targeted multiple-choice question
(except the short-answer problem-context step), write the segment, get it
validated, and either move on or — after three failed attempts — accept the
revealed sample solution.  Every transition is recorded as an event; replaying
a session's events against the same pack reconstructs its exact final state.
"""

from __future__ import annotations

import time
import uuid
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .content import ContentPack, InputMode, Scenario, StepDefinition
from .errors import (
    EmptySegment,
    OptionOutOfRange,
    StepNotPassed,
    UnknownScenario,
    WrongPhase,
)
from .prompt_model import (
    CANONICAL_ORDER,
    ComponentKind,
    PedagogicalPrompt,
    PromptSegment,
    SegmentOrigin,
    assemble_prompt,
    recommend_protocol,
)
from .validation import Criterion, FeedbackMessage, ValidationOutcome

MAX_FAILED_ATTEMPTS = 3
# After this many wrong MCQ picks the correct option is pointed out, so the
# exercise stays focused on writing rather than option roulette.
MCQ_HINT_THRESHOLD = 2

Clock = Callable[[], int]
ValidatorFn = Callable[[Sequence[Criterion], str, Scenario], ValidationOutcome]


def _now_ms() -> int:
    return int(time.time() * 1000)


class StepPhase(Enum):
    AWAITING_CHOICE = "awaiting_choice"
    AWAITING_TEXT = "awaiting_text"
    SOLUTION_REVEALED = "solution_revealed"
    PASSED = "passed"


class SessionStatus(Enum):
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"


class EventKind(Enum):
    SESSION_STARTED = "session_started"
    CHOICE_ANSWERED = "choice_answered"
    SEGMENT_SUBMITTED = "segment_submitted"
    VALIDATION_RETURNED = "validation_returned"
    SOLUTION_REVEALED = "solution_revealed"
    SOLUTION_ACCEPTED = "solution_accepted"
    STEP_PASSED = "step_passed"
    STEP_ADVANCED = "step_advanced"
    SESSION_COMPLETED = "session_completed"


@dataclass(frozen=True)
class SessionEvent:
    timestamp: int
    session_id: str
    kind: EventKind
    payload: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "timestamp": self.timestamp,
            "session_id": self.session_id,
            "kind": self.kind.value,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "SessionEvent":
        return cls(
            timestamp=int(raw["timestamp"]),
            session_id=str(raw["session_id"]),
            kind=EventKind(raw["kind"]),
            payload=dict(raw.get("payload", {})),
        )


@dataclass
class StepState:
    step_id: str
    phase: StepPhase
    failed_attempts: int = 0
    mcq_attempts: int = 0
    accepted_segment: PromptSegment | None = None
    feedback_history: list[FeedbackMessage] = field(default_factory=list)


@dataclass
class BuilderSession:
    session_id: str
    user_id: str
    scenario_id: str
    rng_seed: int
    created_at: int
    updated_at: int
    current_position: int
    status: SessionStatus
    steps: list[StepState]
    events: list[SessionEvent]
    assembled_prompt: str | None = None
    pack: ContentPack = field(default=None, compare=False, repr=False)  # type: ignore[assignment]
    clock: Clock = field(default=_now_ms, compare=False, repr=False)

    @property
    def scenario(self) -> Scenario:
        return self.pack.scenario(self.scenario_id)

    def current_step_def(self) -> StepDefinition:
        return self.pack.steps[self.scenario_id][self.current_position]

    def current_step(self) -> StepState:
        return self.steps[self.current_position]


@dataclass(frozen=True)
class ChoiceResult:
    correct: bool
    hint: str | None
    step: StepState


def _emit(session: BuilderSession, kind: EventKind, payload: dict[str, Any]) -> SessionEvent:
    ts = max(session.clock(), session.updated_at)
    event = SessionEvent(
        timestamp=ts, session_id=session.session_id, kind=kind, payload=payload
    )
    session.events.append(event)
    session.updated_at = ts
    return event


def _initial_phase(step: StepDefinition) -> StepPhase:
    if step.input_mode is InputMode.SHORT_ANSWER:
        return StepPhase.AWAITING_TEXT
    return StepPhase.AWAITING_CHOICE


def _fresh_steps(pack: ContentPack, scenario_id: str) -> list[StepState]:
    return [
        StepState(step_id=step.step_id, phase=_initial_phase(step))
        for step in pack.steps[scenario_id]
    ]


def start_session(
    user_id: str,
    scenario: Scenario,
    pack: ContentPack,
    seed: int,
    *,
    clock: Clock = _now_ms,
    session_id: str | None = None,
) -> BuilderSession:
    if not any(s.id == scenario.id for s in pack.scenarios):
        raise UnknownScenario(
            f"scenario {scenario.id!r} does not belong to this pack", scenario_id=scenario.id
        )
    sid = session_id or uuid.uuid4().hex
    now = clock()
    session = BuilderSession(
        session_id=sid,
        user_id=user_id,
        scenario_id=scenario.id,
        rng_seed=seed,
        created_at=now,
        updated_at=now,
        current_position=0,
        status=SessionStatus.IN_PROGRESS,
        steps=_fresh_steps(pack, scenario.id),
        events=[],
        pack=pack,
        clock=clock,
    )
    session.events.append(
        SessionEvent(
            timestamp=now,
            session_id=sid,
            kind=EventKind.SESSION_STARTED,
            payload={"user_id": user_id, "scenario_id": scenario.id, "seed": seed},
        )
    )
    return session


def _require_in_progress(session: BuilderSession) -> None:
    if session.status is not SessionStatus.IN_PROGRESS:
        raise WrongPhase("session already completed", phase="completed")


def _accepted_options(session: BuilderSession, step_def: StepDefinition) -> set[int]:
    """Option indices counted as correct for this step's MCQ."""
    assert step_def.mcq is not None
    if step_def.component is ComponentKind.TUTORING_PROTOCOL:
        recommended = recommend_protocol(session.scenario.true_difficulty).recommended
        labels = {kind.label for kind in recommended}
        return {i for i, opt in enumerate(step_def.mcq.options) if opt in labels}
    return {step_def.mcq.correct_index}


def answer_choice(session: BuilderSession, option_index: int) -> ChoiceResult:
    _require_in_progress(session)
    step_def = session.current_step_def()
    state = session.current_step()
    if state.phase is not StepPhase.AWAITING_CHOICE:
        raise WrongPhase(
            f"step is in {state.phase.value}, not awaiting a choice", phase=state.phase.value
        )
    mcq = step_def.mcq
    assert mcq is not None  # guaranteed by pack validation for choice steps
    if not 0 <= option_index < len(mcq.options):
        raise OptionOutOfRange(
            f"option {option_index} outside 0..{len(mcq.options) - 1}",
            option_index=option_index,
        )

    correct = option_index in _accepted_options(session, step_def)
    hint: str | None = None
    if correct:
        state.phase = StepPhase.AWAITING_TEXT
    else:
        state.mcq_attempts += 1
        character = session.scenario.character_name
        if state.mcq_attempts >= MCQ_HINT_THRESHOLD:
            hint = (
                f"Not quite. The highlighted option describes {character}'s "
                f"situation — pick it to continue."
            )
        else:
            hint = f"Not quite. Look at the comic again: what is {character} stuck on?"
    _emit(
        session,
        EventKind.CHOICE_ANSWERED,
        {
            "position": session.current_position,
            "option_index": option_index,
            "correct": correct,
            "mcq_attempts": state.mcq_attempts,
        },
    )
    return ChoiceResult(correct=correct, hint=hint, step=state)


def submit_segment(
    session: BuilderSession, text: str, validator: ValidatorFn
) -> tuple[ValidationOutcome, StepState]:
    _require_in_progress(session)
    step_def = session.current_step_def()
    state = session.current_step()
    if state.phase is not StepPhase.AWAITING_TEXT:
        raise WrongPhase(
            f"step is in {state.phase.value}, not awaiting text", phase=state.phase.value
        )
    if not text.strip():
        raise EmptySegment("submitted segment is empty")

    _emit(
        session,
        EventKind.SEGMENT_SUBMITTED,
        {"position": session.current_position, "text": text},
    )
    criteria = [session.pack.criteria[cid] for cid in step_def.criteria_ids]
    # Validator failures propagate here WITHOUT a ValidationReturned event, so
    # the attempt is not counted — attempts measure the learner, not uptime.
    outcome = validator(criteria, text, session.scenario)

    _emit(
        session,
        EventKind.VALIDATION_RETURNED,
        {
            "position": session.current_position,
            "backend": outcome.backend.value,
            "latency_ms": outcome.latency_ms,
            "all_passed": outcome.all_passed,
            "verdicts": [
                {"criterion_id": v.criterion_id, "passed": v.passed, "rationale": v.rationale}
                for v in outcome.verdicts
            ],
            "feedback": {
                "summary": outcome.feedback.summary,
                "advice": list(outcome.feedback.per_criterion_advice),
            },
        },
    )

    if outcome.all_passed:
        segment = PromptSegment(
            component=step_def.component, text=text, origin=SegmentOrigin.LEARNER_WRITTEN
        )
        state.accepted_segment = segment
        state.phase = StepPhase.PASSED
        _emit(
            session,
            EventKind.STEP_PASSED,
            {
                "position": session.current_position,
                "component": step_def.component.value,
                "text": text,
                "origin": SegmentOrigin.LEARNER_WRITTEN.value,
            },
        )
    else:
        state.failed_attempts += 1
        state.feedback_history.append(outcome.feedback)
        if state.failed_attempts >= MAX_FAILED_ATTEMPTS:
            state.phase = StepPhase.SOLUTION_REVEALED
            _emit(
                session,
                EventKind.SOLUTION_REVEALED,
                {
                    "position": session.current_position,
                    "sample_solution": step_def.sample_solution,
                },
            )
    return outcome, state


def accept_sample_solution(session: BuilderSession) -> StepState:
    _require_in_progress(session)
    step_def = session.current_step_def()
    state = session.current_step()
    if state.phase is not StepPhase.SOLUTION_REVEALED:
        raise WrongPhase(
            f"step is in {state.phase.value}; the sample solution is not on offer",
            phase=state.phase.value,
        )
    _emit(session, EventKind.SOLUTION_ACCEPTED, {"position": session.current_position})
    segment = PromptSegment(
        component=step_def.component,
        text=step_def.sample_solution,
        origin=SegmentOrigin.SAMPLE_ACCEPTED,
    )
    state.accepted_segment = segment
    state.phase = StepPhase.PASSED
    _emit(
        session,
        EventKind.STEP_PASSED,
        {
            "position": session.current_position,
            "component": step_def.component.value,
            "text": step_def.sample_solution,
            "origin": SegmentOrigin.SAMPLE_ACCEPTED.value,
        },
    )
    return state


def _assemble(session: BuilderSession) -> str:
    prompt = PedagogicalPrompt(scenario_id=session.scenario_id)
    for state in session.steps:
        assert state.accepted_segment is not None
        prompt.add(state.accepted_segment)
    return assemble_prompt(prompt, order=CANONICAL_ORDER)


def advance(session: BuilderSession) -> BuilderSession:
    if session.status is not SessionStatus.IN_PROGRESS:
        raise StepNotPassed("session already completed")
    state = session.current_step()
    if state.phase is not StepPhase.PASSED:
        raise StepNotPassed(
            f"current step is in {state.phase.value}; pass it before advancing"
        )
    session.current_position += 1
    _emit(session, EventKind.STEP_ADVANCED, {"position": session.current_position})
    if session.current_position == len(session.steps):
        session.status = SessionStatus.COMPLETED
        session.assembled_prompt = _assemble(session)
        _emit(session, EventKind.SESSION_COMPLETED, {"prompt": session.assembled_prompt})
    return session


def session_view(session: BuilderSession) -> dict[str, Any]:
    """The learner-facing projection of a session.

    Never exposes correct answers or the sample solution ahead of time: the
    sample appears only while the step is in the solution-revealed phase, and
    the correct MCQ option is pointed out only after repeated wrong picks.
    """
    scenario = session.scenario
    prior_segments = [
        {
            "position": i,
            "component": state.accepted_segment.component.value,
            "text": state.accepted_segment.text,
            "origin": state.accepted_segment.origin.value,
        }
        for i, state in enumerate(session.steps)
        if state.accepted_segment is not None and i < session.current_position
    ]
    view: dict[str, Any] = {
        "session_id": session.session_id,
        "user_id": session.user_id,
        "scenario_id": session.scenario_id,
        "status": session.status.value,
        "current_position": session.current_position,
        "scenario": {
            "character_name": scenario.character_name,
            "problem_description": scenario.problem_description,
            "current_code": scenario.current_code,
            "current_output": scenario.current_output,
            "comics": list(scenario.comic_asset_refs),
        },
        "prior_segments": prior_segments,
        "current_step": None,
        "assembled_prompt": session.assembled_prompt,
    }
    if session.status is SessionStatus.IN_PROGRESS:
        step_def = session.current_step_def()
        state = session.current_step()
        step_view: dict[str, Any] = {
            "position": step_def.position,
            "component": step_def.component.value,
            "component_label": step_def.component.label,
            "input_mode": step_def.input_mode.value,
            "phase": state.phase.value,
            "attempts_remaining": MAX_FAILED_ATTEMPTS - state.failed_attempts,
            "mcq_attempts": state.mcq_attempts,
            "feedback_history": [
                {"summary": f.summary, "advice": list(f.per_criterion_advice)}
                for f in state.feedback_history
            ],
        }
        if step_def.mcq is not None:
            step_view["mcq"] = {"stem": step_def.mcq.stem, "options": list(step_def.mcq.options)}
            if (
                state.phase is StepPhase.AWAITING_CHOICE
                and state.mcq_attempts >= MCQ_HINT_THRESHOLD
            ):
                step_view["highlighted_option"] = step_def.mcq.correct_index
        if state.phase is StepPhase.SOLUTION_REVEALED:
            step_view["sample_solution"] = step_def.sample_solution
        view["current_step"] = step_view
    return view


def session_from_start_event(event: SessionEvent, pack: ContentPack) -> BuilderSession:
    if event.kind is not EventKind.SESSION_STARTED:
        raise ValueError("event log does not begin with a session start")
    payload = event.payload
    return BuilderSession(
        session_id=event.session_id,
        user_id=str(payload["user_id"]),
        scenario_id=str(payload["scenario_id"]),
        rng_seed=int(payload["seed"]),
        created_at=event.timestamp,
        updated_at=event.timestamp,
        current_position=0,
        status=SessionStatus.IN_PROGRESS,
        steps=_fresh_steps(pack, str(payload["scenario_id"])),
        events=[event],
        pack=pack,
    )


def apply_event(session: BuilderSession, event: SessionEvent) -> None:
    """Apply one already-recorded event's state transition (no re-validation).

    Does NOT append to session.events; callers own the log itself.
    """
    session.updated_at = event.timestamp
    payload = event.payload
    if event.kind is EventKind.CHOICE_ANSWERED:
        state = session.steps[payload["position"]]
        state.mcq_attempts = int(payload["mcq_attempts"])
        if payload["correct"]:
            state.phase = StepPhase.AWAITING_TEXT
    elif event.kind is EventKind.VALIDATION_RETURNED:
        if not payload["all_passed"]:
            state = session.steps[payload["position"]]
            state.failed_attempts += 1
            state.feedback_history.append(
                FeedbackMessage(
                    summary=payload["feedback"]["summary"],
                    per_criterion_advice=tuple(payload["feedback"]["advice"]),
                )
            )
    elif event.kind is EventKind.SOLUTION_REVEALED:
        session.steps[payload["position"]].phase = StepPhase.SOLUTION_REVEALED
    elif event.kind is EventKind.STEP_PASSED:
        state = session.steps[payload["position"]]
        state.accepted_segment = PromptSegment(
            component=ComponentKind(payload["component"]),
            text=payload["text"],
            origin=SegmentOrigin(payload["origin"]),
        )
        state.phase = StepPhase.PASSED
    elif event.kind is EventKind.STEP_ADVANCED:
        session.current_position = int(payload["position"])
    elif event.kind is EventKind.SESSION_COMPLETED:
        session.status = SessionStatus.COMPLETED
        session.assembled_prompt = str(payload["prompt"])
    # SESSION_STARTED is handled by session_from_start_event;
    # SEGMENT_SUBMITTED and SOLUTION_ACCEPTED carry no state transitions.


def replay(events: Iterable[SessionEvent], pack: ContentPack) -> BuilderSession:
    """Rebuild a session from its event log (the event-sourcing property)."""
    session: BuilderSession | None = None
    for event in events:
        if event.kind is EventKind.SESSION_STARTED:
            session = session_from_start_event(event, pack)
            continue
        if session is None:
            raise ValueError("event log does not begin with a session start")
        session.events.append(event)
        apply_event(session, event)
    if session is None:
        raise ValueError("empty event log")
    return session
