"""Segment validation: deterministic rule oracle and LLM-judge backends.

A submitted prompt segment is checked against the criteria attached to its
step.  Two interchangeable backends produce the same shape of outcome:

* :class:`RuleOracle` — a small, auditable matcher algebra (phrase sets,
  scenario-field containment, token patterns) evaluated offline.
* :class:`LlmJudge` — a single structured request through the LLM gateway,
  carrying all of the step's criteria, parsed strictly.

Matchers are presence checks over lowercased, whitespace-collapsed text, so
passing text keeps passing when more text is appended.  The one deliberate
exception is the optional "didn't ask for the answer outright" check.
"""

from __future__ import annotations

import json
import logging
import re
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .errors import (
    JudgeMalformed,
    JudgeUnavailable,
    GatewayError,
    NoRuleSpec,
    PackParseError,
    UnresolvedPlaceholder,
)

log = logging.getLogger(__name__)

# Placeholder tokens that may appear in criterion instructions, mapped to the
# scenario snapshot field that fills them.
PLACEHOLDER_FIELDS = {
    "character": "character_name",
    "problem": "problem_description",
    "code": "current_code",
    "output": "current_output",
}

_PLACEHOLDER_RE = re.compile(r"\[current scenario's ([a-z_]+)\]")
_WS_RE = re.compile(r"\s+")

_QUOTE_MAP = str.maketrans({"‘": "'", "’": "'", "“": '"', "”": '"'})


def normalize(text: str) -> str:
    """Lowercase, straighten curly quotes, and collapse all whitespace runs."""
    return _WS_RE.sub(" ", text.translate(_QUOTE_MAP)).strip().lower()


def _scenario_fields(scenario: Any) -> dict[str, str]:
    """Extract the snapshot fields from a scenario object or plain mapping."""
    if scenario is None:
        return {}
    if isinstance(scenario, Mapping):
        src = scenario
        get = src.get
    else:
        get = lambda name, default="": getattr(scenario, name, default)  # noqa: E731
    out = {}
    for field_name in ("character_name", "problem_description", "current_code", "current_output"):
        value = get(field_name, "")
        out[field_name] = value if isinstance(value, str) else ""
    return out


# ---------------------------------------------------------------------------
# Matcher algebra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnyOf:
    """Passes when any phrase appears as a substring of the normalized text."""

    phrases: tuple[str, ...]

    def evaluate(self, norm_text: str, fields: dict[str, str]) -> tuple[bool, str]:
        for phrase in self.phrases:
            if phrase in norm_text:
                return True, f'found "{phrase}"'
        return False, f'does not mention this; say something like "{self.phrases[0]}"'


@dataclass(frozen=True)
class ContainsField:
    """Passes when enough of a scenario field's lines appear in the text.

    An empty scenario field passes vacuously: there is nothing the learner
    could have embedded.
    """

    field_name: str
    min_line_ratio: float = 0.6

    def evaluate(self, norm_text: str, fields: dict[str, str]) -> tuple[bool, str]:
        raw = fields.get(self.field_name, "")
        lines = [normalize(line) for line in raw.splitlines()]
        lines = [line for line in lines if line]
        if not lines:
            return True, f"scenario provides no {self.field_name}; nothing to embed"
        hit = sum(1 for line in lines if line in norm_text)
        ratio = hit / len(lines)
        if ratio >= self.min_line_ratio:
            return True, f"{hit} of {len(lines)} {self.field_name} lines present"
        return False, (
            f"only {hit} of {len(lines)} {self.field_name} lines appear; "
            f"paste the {self.field_name.replace('_', ' ')} into the prompt"
        )


@dataclass(frozen=True)
class Pattern:
    """Passes when a regular expression matches the normalized text."""

    regex: str
    _compiled: re.Pattern[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_compiled", re.compile(self.regex))

    def evaluate(self, norm_text: str, fields: dict[str, str]) -> tuple[bool, str]:
        m = self._compiled.search(norm_text)
        if m:
            return True, f'found "{m.group(0)}"'
        return False, "no matching wording found; give a concrete range like \"3 to 5 steps\""


@dataclass(frozen=True)
class All:
    """Passes when every sub-rule passes."""

    rules: tuple[Any, ...]

    def evaluate(self, norm_text: str, fields: dict[str, str]) -> tuple[bool, str]:
        reasons = []
        for rule in self.rules:
            ok, reason = rule.evaluate(norm_text, fields)
            if not ok:
                return False, reason
            reasons.append(reason)
        return True, "; ".join(reasons)


@dataclass(frozen=True)
class NotRequesting:
    """Fails only when the text asks for the answer without negating it.

    Each request pattern is searched in the normalized text; a hit is excused
    when a negation phrase appears shortly before it within the same sentence
    ("don't give me the solution" is a guardrail, not a request).
    """

    requests: tuple[str, ...]
    negations: tuple[str, ...]
    _compiled: tuple[re.Pattern[str], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_compiled", tuple(re.compile(p) for p in self.requests))

    def evaluate(self, norm_text: str, fields: dict[str, str]) -> tuple[bool, str]:
        for pattern in self._compiled:
            for m in pattern.finditer(norm_text):
                window = norm_text[max(0, m.start() - 70) : m.start()]
                for stop in ".?!;":
                    cut = window.rfind(stop)
                    if cut != -1:
                        window = window[cut + 1 :]
                if not any(neg in window for neg in self.negations):
                    return False, f'asks for the answer outright ("{m.group(0)}")'
        return True, "does not ask for the answer outright"


def parse_rule(spec: Mapping[str, Any]) -> AnyOf | ContainsField | Pattern | All | NotRequesting:
    """Build a matcher from its data-file form. Raises PackParseError on bad specs."""
    if not isinstance(spec, Mapping) or len(spec) != 1:
        raise PackParseError("rule spec must be a single-key mapping", position=repr(spec))
    kind, body = next(iter(spec.items()))
    try:
        if kind == "any_of":
            phrases = tuple(normalize(str(p)) for p in body)
            if not phrases or any(not p for p in phrases):
                raise ValueError("any_of needs nonempty phrases")
            return AnyOf(phrases)
        if kind == "contains_field":
            field_name = body["field"]
            if field_name not in PLACEHOLDER_FIELDS.values():
                raise ValueError(f"unknown scenario field {field_name!r}")
            return ContainsField(field_name, float(body.get("min_line_ratio", 0.6)))
        if kind == "pattern":
            return Pattern(str(body))
        if kind == "all":
            return All(tuple(parse_rule(sub) for sub in body))
        if kind == "not_requesting":
            return NotRequesting(
                requests=tuple(str(p) for p in body["requests"]),
                negations=tuple(normalize(str(p)) for p in body["negations"]),
            )
    except PackParseError:
        raise
    except (KeyError, TypeError, ValueError, re.error) as exc:
        raise PackParseError(f"bad {kind} rule: {exc}", position=repr(spec)) from exc
    raise PackParseError(f"unknown rule kind {kind!r}", position=repr(spec))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Criterion:
    """One acceptance check for a prompt segment."""

    id: str
    title: str
    instruction: str
    optional: bool = False
    rule: AnyOf | ContainsField | Pattern | All | NotRequesting | None = None

    def __post_init__(self) -> None:
        if not self.instruction.strip():
            raise ValueError(f"criterion {self.id!r} has an empty instruction")
        for token in _PLACEHOLDER_RE.findall(self.instruction):
            if token not in PLACEHOLDER_FIELDS:
                raise ValueError(
                    f"criterion {self.id!r} uses unknown placeholder [current scenario's {token}]"
                )


@dataclass(frozen=True)
class CriterionVerdict:
    criterion_id: str
    passed: bool
    rationale: str

    def __post_init__(self) -> None:
        if not self.passed and not self.rationale.strip():
            raise ValueError(f"failed verdict for {self.criterion_id!r} must carry a rationale")


@dataclass(frozen=True)
class FeedbackMessage:
    """What the learner sees after a validation round."""

    summary: str
    per_criterion_advice: tuple[str, ...]


class Backend(Enum):
    RULE_ORACLE = "rule_oracle"
    LLM_JUDGE = "llm_judge"


@dataclass(frozen=True)
class ValidationOutcome:
    verdicts: tuple[CriterionVerdict, ...]
    all_passed: bool
    feedback: FeedbackMessage
    backend: Backend
    latency_ms: int


@dataclass(frozen=True)
class JudgePrompt:
    """A fully rendered judge call: system text, segment text, expected ids."""

    system_text: str
    user_text: str
    criterion_ids: tuple[str, ...]


# ---------------------------------------------------------------------------
# Criteria fixture loading
# ---------------------------------------------------------------------------


def rule_to_spec(rule: Any) -> dict[str, Any]:
    """Serialize a matcher back to its data-file form (inverse of parse_rule)."""
    if isinstance(rule, AnyOf):
        return {"any_of": list(rule.phrases)}
    if isinstance(rule, ContainsField):
        return {"contains_field": {"field": rule.field_name, "min_line_ratio": rule.min_line_ratio}}
    if isinstance(rule, Pattern):
        return {"pattern": rule.regex}
    if isinstance(rule, All):
        return {"all": [rule_to_spec(sub) for sub in rule.rules]}
    if isinstance(rule, NotRequesting):
        return {
            "not_requesting": {
                "requests": list(rule.requests),
                "negations": list(rule.negations),
            }
        }
    raise TypeError(f"not a rule: {rule!r}")


def criterion_from_mapping(cid: str, body: Mapping[str, Any], *, source: str) -> Criterion:
    """Build one Criterion from its data-file form, with data-file error reporting."""
    if not isinstance(body, Mapping):
        raise PackParseError(f"criterion {cid!r} must be a mapping", position=source)
    missing = [k for k in ("title", "instruction") if not body.get(k)]
    if missing:
        raise PackParseError(f"criterion {cid!r} is missing {', '.join(missing)}", position=source)
    rule = parse_rule(body["rule"]) if "rule" in body else None
    try:
        return Criterion(
            id=str(cid),
            title=str(body["title"]),
            instruction=str(body["instruction"]),
            optional=bool(body.get("optional", False)),
            rule=rule,
        )
    except ValueError as exc:
        raise PackParseError(str(exc), position=source) from exc


def criterion_to_mapping(criterion: Criterion) -> dict[str, Any]:
    """Serialize a Criterion to its data-file form (inverse of criterion_from_mapping)."""
    body: dict[str, Any] = {"title": criterion.title, "instruction": criterion.instruction}
    if criterion.optional:
        body["optional"] = True
    if criterion.rule is not None:
        body["rule"] = rule_to_spec(criterion.rule)
    return body


def load_criteria(path: str | Path | None = None) -> dict[str, Criterion]:
    """Load the criteria catalog (bundled file by default), keyed by id."""
    if path is None:
        text = resources.files("promptforge.data").joinpath("criteria.yaml").read_text("utf-8")
        source = "criteria.yaml"
    else:
        source = str(path)
        text = Path(path).read_text("utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise PackParseError(f"unreadable criteria file: {exc}", position=source) from exc
    if not isinstance(doc, Mapping) or not isinstance(doc.get("criteria"), Mapping):
        raise PackParseError("criteria file must contain a 'criteria' mapping", position=source)

    return {
        str(cid): criterion_from_mapping(str(cid), body, source=source)
        for cid, body in doc["criteria"].items()
    }


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------


def rule_check(criterion: Criterion, text: str, scenario: Any = None) -> CriterionVerdict:
    """Deterministically evaluate one criterion against a segment."""
    if criterion.rule is None:
        raise NoRuleSpec(f"criterion {criterion.id!r} has no deterministic rule")
    passed, rationale = criterion.rule.evaluate(normalize(text), _scenario_fields(scenario))
    return CriterionVerdict(criterion_id=criterion.id, passed=passed, rationale=rationale)


def compose_feedback(
    verdicts: Sequence[CriterionVerdict], criteria: Sequence[Criterion]
) -> FeedbackMessage:
    """Summarize a validation round for the learner.

    Advice lines appear only when a required criterion failed; a lone optional
    miss is folded into the summary as a suggestion.
    """
    by_id = {c.id: c for c in criteria}
    failed_required = [v for v in verdicts if not v.passed and not by_id[v.criterion_id].optional]
    failed_optional = [v for v in verdicts if not v.passed and by_id[v.criterion_id].optional]

    if not failed_required:
        summary = "All criteria met."
        if failed_optional:
            titles = "; ".join(by_id[v.criterion_id].title for v in failed_optional)
            summary += f" Suggestion: {titles}."
        return FeedbackMessage(summary=summary, per_criterion_advice=())

    required_total = sum(1 for v in verdicts if not by_id[v.criterion_id].optional)
    summary = f"{len(failed_required)} of {required_total} criteria not met yet."
    advice = [
        f"{by_id[v.criterion_id].title}: {v.rationale}" for v in failed_required
    ]
    advice.extend(
        f"(optional) {by_id[v.criterion_id].title}: {v.rationale}" for v in failed_optional
    )
    return FeedbackMessage(summary=summary, per_criterion_advice=tuple(advice))


def _outcome(
    verdicts: Sequence[CriterionVerdict],
    criteria: Sequence[Criterion],
    backend: Backend,
    latency_ms: int,
) -> ValidationOutcome:
    by_id = {c.id: c for c in criteria}
    all_passed = all(v.passed for v in verdicts if not by_id[v.criterion_id].optional)
    return ValidationOutcome(
        verdicts=tuple(verdicts),
        all_passed=all_passed,
        feedback=compose_feedback(verdicts, criteria),
        backend=backend,
        latency_ms=latency_ms,
    )


class RuleOracle:
    """The deterministic backend: pure functions of (criteria, text, scenario)."""

    kind = Backend.RULE_ORACLE

    def verdicts(
        self, criteria: Sequence[Criterion], text: str, scenario: Any = None
    ) -> list[CriterionVerdict]:
        return [rule_check(c, text, scenario) for c in criteria]


def build_judge_request(
    criteria: Sequence[Criterion], text: str, scenario: Any
) -> JudgePrompt:
    """Render one judge call covering all the given criteria."""
    fields = _scenario_fields(scenario)

    def fill(instruction: str) -> str:
        def sub(m: re.Match[str]) -> str:
            token = m.group(1)
            value = fields.get(PLACEHOLDER_FIELDS.get(token, ""), "")
            if not value:
                raise UnresolvedPlaceholder(
                    f"scenario provides no value for [current scenario's {token}]",
                    token=token,
                )
            return value

        return _PLACEHOLDER_RE.sub(sub, instruction)

    lines = [
        "You are a strict validator for a prompt-writing exercise in an introductory",
        "programming course. A student drafted one piece of a larger prompt. Judge it",
        "against each criterion below, independently and literally.",
        "",
    ]
    if fields.get("character_name"):
        lines.append(f"Scenario character: {fields['character_name']}")
    if fields.get("problem_description"):
        lines.append(f"Coding problem:\n{fields['problem_description']}")
    if fields.get("current_code"):
        lines.append(f"Current code:\n{fields['current_code']}")
    if fields.get("current_output"):
        lines.append(f"Current output:\n{fields['current_output']}")
    lines.append("")
    lines.append("Criteria:")
    for criterion in criteria:
        lines.append(f"- id: {criterion.id}")
        lines.append(f"  check: {fill(criterion.instruction)}")
    lines.append("")
    lines.append(
        "Respond with only a JSON object of the form "
        '{"verdicts": [{"id": "<criterion id>", "passed": true|false, '
        '"rationale": "<one sentence>"}]} '
        f"containing exactly one verdict per criterion id listed above "
        f"({len(criteria)} in total)."
    )
    return JudgePrompt(
        system_text="\n".join(lines),
        user_text=text,
        criterion_ids=tuple(c.id for c in criteria),
    )


def parse_judge_response(
    raw: str, expected: Sequence[Criterion] | Sequence[str]
) -> ValidationOutcome:
    """Strictly parse a judge reply into an outcome.

    ``expected`` may be the criteria themselves or bare ids; with bare ids
    every criterion is treated as required.
    """
    criteria: list[Criterion]
    if expected and isinstance(expected[0], Criterion):
        criteria = list(expected)  # type: ignore[arg-type]
    else:
        criteria = [
            Criterion(id=str(cid), title=str(cid), instruction=str(cid)) for cid in expected
        ]
    expected_ids = [c.id for c in criteria]

    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise JudgeMalformed(f"judge reply is not JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("verdicts"), list):
        raise JudgeMalformed("judge reply lacks a 'verdicts' list")

    seen: dict[str, CriterionVerdict] = {}
    mistyped: list[str] = []
    for entry in doc["verdicts"]:
        if not isinstance(entry, dict):
            mistyped.append(repr(entry))
            continue
        cid = entry.get("id")
        passed = entry.get("passed")
        rationale = entry.get("rationale", "")
        if not isinstance(cid, str) or not isinstance(passed, bool) or not isinstance(rationale, str):
            mistyped.append(str(cid))
            continue
        if cid in seen:
            raise JudgeMalformed(f"duplicate verdict for {cid!r}", duplicate=cid)
        if cid not in expected_ids:
            continue  # extra entries are ignored
        seen[cid] = CriterionVerdict(
            criterion_id=cid, passed=passed, rationale=rationale or ("ok" if passed else "failed")
        )
    missing = [cid for cid in expected_ids if cid not in seen]
    if missing or mistyped:
        raise JudgeMalformed(
            "judge reply incomplete", missing=missing, mistyped=mistyped
        )
    verdicts = [seen[cid] for cid in expected_ids]
    return _outcome(verdicts, criteria, Backend.LLM_JUDGE, latency_ms=0)


class LlmJudge:
    """The LLM backend: one gateway call per validation round, temperature 0."""

    kind = Backend.LLM_JUDGE

    def __init__(self, gateway: Any, model: str = "gpt-4o-2024-08-06") -> None:
        self.gateway = gateway
        self.model = model

    def verdicts(
        self, criteria: Sequence[Criterion], text: str, scenario: Any = None
    ) -> list[CriterionVerdict]:
        from .gateway import ChatRequest

        prompt = build_judge_request(criteria, text, scenario)
        request = ChatRequest(
            system_text=prompt.system_text,
            user_text=prompt.user_text,
            model_id=self.model,
            temperature=0.0,
        )
        try:
            response = self.gateway.complete(request)
        except GatewayError as exc:
            raise JudgeUnavailable(f"judge call failed: {exc}") from exc
        return list(parse_judge_response(response.text, list(criteria)).verdicts)


def evaluate_segment(
    criteria: Sequence[Criterion],
    text: str,
    scenario: Any = None,
    backend: RuleOracle | LlmJudge | None = None,
) -> ValidationOutcome:
    """Evaluate a segment with the chosen backend (rule oracle by default)."""
    if not criteria:
        raise ValueError("evaluate_segment needs at least one criterion")
    backend = backend or RuleOracle()
    started = time.perf_counter()
    verdicts = backend.verdicts(criteria, text, scenario)
    latency_ms = int((time.perf_counter() - started) * 1000)
    return _outcome(verdicts, criteria, backend.kind, latency_ms)


def compare_backends(
    criteria: Sequence[Criterion],
    text: str,
    scenario: Any,
    oracle: RuleOracle,
    judge: LlmJudge,
) -> tuple[ValidationOutcome, ValidationOutcome]:
    """Run both backends and log any disagreement; neither is treated as right."""
    rule_outcome = evaluate_segment(criteria, text, scenario, oracle)
    judge_outcome = evaluate_segment(criteria, text, scenario, judge)
    if rule_outcome.all_passed != judge_outcome.all_passed:
        log.warning(
            "backend disagreement: rule_oracle=%s llm_judge=%s on %r",
            rule_outcome.all_passed,
            judge_outcome.all_passed,
            text[:80],
        )
    return rule_outcome, judge_outcome
