"""Content packs: scenarios, step definitions, and the learning sequence.

A pack is a single human-editable YAML document. Instructors describe each
scenario (a character, their coding problem, a snapshot of code and output,
comic panels) plus the six guided steps a learner walks through, and embed the
acceptance criteria those steps reference. Loading validates everything and
reports *all* problems at once rather than stopping at the first.
"""

from __future__ import annotations

import random
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from io import BytesIO
from pathlib import Path
from typing import Any, BinaryIO

import yaml

from .errors import (
    NoLearningScenarios,
    PackParseError,
    PackValidationError,
    PositionOutOfRange,
    UnknownScenario,
)
from .prompt_model import ComponentKind, DifficultyKind
from .validation import Criterion, criterion_from_mapping, criterion_to_mapping


class StudyRole(Enum):
    DEMO = "demo"
    LEARNING = "learning"
    PRE_TEST = "pre_test"
    POST_TEST = "post_test"


class InputMode(Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    SHORT_ANSWER = "short_answer"


@dataclass(frozen=True)
class CodeSnapshot:
    """What the character currently has: the task, their code, what it prints."""

    problem_description: str
    current_code: str = ""
    current_output: str = ""


@dataclass(frozen=True)
class Mcq:
    stem: str
    options: tuple[str, ...]
    correct_index: int


@dataclass(frozen=True)
class StepDefinition:
    step_id: str
    component: ComponentKind
    input_mode: InputMode
    mcq: Mcq | None
    criteria_ids: tuple[str, ...]
    sample_solution: str
    position: int


@dataclass(frozen=True)
class Scenario:
    id: str
    character_name: str
    snapshot: CodeSnapshot
    true_difficulty: DifficultyKind
    comic_asset_refs: tuple[str, ...]
    role_in_study: StudyRole
    iso_group: str | None = None

    # Convenience pass-throughs so a Scenario can be handed directly to the
    # validation engine, which reads snapshot fields by name.
    @property
    def problem_description(self) -> str:
        return self.snapshot.problem_description

    @property
    def current_code(self) -> str:
        return self.snapshot.current_code

    @property
    def current_output(self) -> str:
        return self.snapshot.current_output


@dataclass(frozen=True)
class Violation:
    """One problem found while validating a pack document."""

    kind: str  # SchemaError | ReferenceError | CardinalityError
    message: str
    scenario_id: str | None = None

    def __str__(self) -> str:
        where = f" [{self.scenario_id}]" if self.scenario_id else ""
        return f"{self.kind}{where}: {self.message}"


@dataclass(frozen=True)
class ContentPack:
    version: str
    scenarios: tuple[Scenario, ...]
    steps: Mapping[str, tuple[StepDefinition, ...]]
    criteria: Mapping[str, Criterion]
    base_dir: Path | None = field(default=None, compare=False)

    def scenario(self, scenario_id: str) -> Scenario:
        for s in self.scenarios:
            if s.id == scenario_id:
                return s
        raise UnknownScenario(f"no scenario {scenario_id!r} in pack", scenario_id=scenario_id)

    @property
    def learning_scenarios(self) -> tuple[Scenario, ...]:
        return tuple(s for s in self.scenarios if s.role_in_study is StudyRole.LEARNING)


_COMPONENT_TOKENS = {k.value: k for k in ComponentKind}
_DIFFICULTY_TOKENS = {k.value: k for k in DifficultyKind}
_ROLE_TOKENS = {r.value: r for r in StudyRole}
_MODE_TOKENS = {m.value: m for m in InputMode}


def _read_source(source: BinaryIO | bytes | str | Path) -> tuple[str, Path | None]:
    """Return (document text, base dir if the source was a filesystem path)."""
    if isinstance(source, bytes):
        return source.decode("utf-8"), None
    if isinstance(source, (str, Path)):
        path = Path(source)
        return path.read_text("utf-8"), path.parent
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data, None


def load_content_pack(source: BinaryIO | bytes | str | Path) -> ContentPack:
    """Parse and validate a pack document.

    Raises PackParseError for an unreadable document and PackValidationError
    carrying every schema/reference/cardinality violation found.
    """
    text, base_dir = _read_source(source)
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        position = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown"
        raise PackParseError(f"malformed pack document: {exc}", position=position) from exc
    if not isinstance(doc, Mapping):
        raise PackParseError("pack document must be a mapping", position="top level")

    violations: list[Violation] = []

    def bad(kind: str, message: str, scenario_id: str | None = None) -> None:
        violations.append(Violation(kind=kind, message=message, scenario_id=scenario_id))

    version = doc.get("version")
    if not isinstance(version, str) or not version:
        bad("SchemaError", "top-level 'version' must be a nonempty string")
        version = ""

    criteria: dict[str, Criterion] = {}
    raw_criteria = doc.get("criteria")
    if not isinstance(raw_criteria, Mapping):
        bad("SchemaError", "top-level 'criteria' must be a mapping")
        raw_criteria = {}
    for cid, body in raw_criteria.items():
        try:
            criteria[str(cid)] = criterion_from_mapping(str(cid), body, source="pack")
        except PackParseError as exc:
            bad("SchemaError", f"criterion {cid!r}: {exc}")

    raw_scenarios = doc.get("scenarios")
    if not isinstance(raw_scenarios, Sequence) or isinstance(raw_scenarios, (str, bytes)):
        bad("SchemaError", "top-level 'scenarios' must be a list")
        raw_scenarios = []

    scenarios: list[Scenario] = []
    steps: dict[str, tuple[StepDefinition, ...]] = {}
    seen_ids: set[str] = set()

    for index, raw in enumerate(raw_scenarios):
        if not isinstance(raw, Mapping):
            bad("SchemaError", f"scenario #{index} must be a mapping")
            continue
        sid = raw.get("id")
        if not isinstance(sid, str) or not sid:
            bad("SchemaError", f"scenario #{index} needs a string 'id'")
            continue
        if sid in seen_ids:
            bad("SchemaError", f"duplicate scenario id {sid!r}", sid)
            continue
        seen_ids.add(sid)

        ok = True
        character = raw.get("character")
        if not isinstance(character, str) or not character.strip():
            bad("SchemaError", "scenario needs a 'character' name", sid)
            ok = False

        role = _ROLE_TOKENS.get(raw.get("role"))
        if role is None:
            bad("SchemaError", f"unknown role {raw.get('role')!r}", sid)
            ok = False

        difficulty = _DIFFICULTY_TOKENS.get(raw.get("difficulty"))
        if difficulty is None:
            bad("SchemaError", f"unknown difficulty {raw.get('difficulty')!r}", sid)
            ok = False

        snapshot_raw = raw.get("snapshot")
        if not isinstance(snapshot_raw, Mapping):
            bad("SchemaError", "scenario needs a 'snapshot' mapping", sid)
            ok = False
            snapshot = CodeSnapshot(problem_description="?")
        else:
            problem = snapshot_raw.get("problem", "")
            if not isinstance(problem, str) or not problem.strip():
                bad("SchemaError", "snapshot.problem must be nonempty", sid)
                ok = False
                problem = "?"
            snapshot = CodeSnapshot(
                problem_description=problem,
                current_code=str(snapshot_raw.get("code", "") or ""),
                current_output=str(snapshot_raw.get("output", "") or ""),
            )

        comics: list[str] = []
        for ref in raw.get("comics", []) or []:
            ref = str(ref)
            if ref.startswith(("/", "\\")) or ".." in ref.split("/"):
                bad("SchemaError", f"comic ref {ref!r} must be a safe relative path", sid)
            else:
                comics.append(ref)

        iso_group = raw.get("iso_group")
        if iso_group is not None and (not isinstance(iso_group, str) or not iso_group):
            bad("SchemaError", "iso_group must be a nonempty string when present", sid)
            iso_group = None

        raw_steps = raw.get("steps")
        if not isinstance(raw_steps, Sequence) or isinstance(raw_steps, (str, bytes)):
            bad("SchemaError", "scenario needs a 'steps' list", sid)
            raw_steps = []
        if len(raw_steps) != 6:
            bad("CardinalityError", f"scenario has {len(raw_steps)} steps, expected 6", sid)

        parsed_steps: list[StepDefinition] = []
        seen_components: list[ComponentKind] = []
        for position, raw_step in enumerate(raw_steps):
            if not isinstance(raw_step, Mapping):
                bad("SchemaError", f"step #{position} must be a mapping", sid)
                continue
            component = _COMPONENT_TOKENS.get(raw_step.get("component"))
            if component is None:
                bad("SchemaError", f"step #{position}: unknown component "
                    f"{raw_step.get('component')!r}", sid)
                continue
            seen_components.append(component)

            mode = _MODE_TOKENS.get(raw_step.get("mode"))
            if mode is None:
                bad("SchemaError", f"step #{position}: unknown mode {raw_step.get('mode')!r}", sid)
                continue
            wants_short = component is ComponentKind.PROBLEM_CONTEXT
            if (mode is InputMode.SHORT_ANSWER) != wants_short:
                bad(
                    "SchemaError",
                    f"step #{position}: {component.value} must use "
                    f"{'short_answer' if wants_short else 'multiple_choice'}",
                    sid,
                )

            mcq_raw = raw_step.get("mcq")
            mcq: Mcq | None = None
            if mode is InputMode.MULTIPLE_CHOICE:
                if not isinstance(mcq_raw, Mapping):
                    bad("SchemaError", f"step #{position}: multiple_choice step needs 'mcq'", sid)
                else:
                    options = tuple(str(o) for o in mcq_raw.get("options", []) or [])
                    correct = mcq_raw.get("correct")
                    if len(options) < 2:
                        bad("SchemaError", f"step #{position}: mcq needs ≥2 options", sid)
                    elif not isinstance(correct, int) or not 0 <= correct < len(options):
                        bad("SchemaError", f"step #{position}: mcq 'correct' out of bounds", sid)
                    else:
                        mcq = Mcq(
                            stem=str(mcq_raw.get("stem", "")),
                            options=options,
                            correct_index=correct,
                        )
            elif mcq_raw is not None:
                bad("SchemaError", f"step #{position}: short_answer step must not carry 'mcq'", sid)

            criteria_ids = tuple(str(c) for c in raw_step.get("criteria", []) or [])
            if not criteria_ids:
                bad("SchemaError", f"step #{position}: needs a nonempty 'criteria' list", sid)
            for cid in criteria_ids:
                if cid not in criteria:
                    bad("ReferenceError", f"step #{position} references unknown criterion "
                        f"{cid!r}", sid)

            sample = raw_step.get("sample")
            if not isinstance(sample, str) or not sample.strip():
                bad("SchemaError", f"step #{position}: needs a nonempty 'sample'", sid)
                sample = "?"

            parsed_steps.append(
                StepDefinition(
                    step_id=f"{sid}.s{position}",
                    component=component,
                    input_mode=mode,
                    mcq=mcq,
                    criteria_ids=criteria_ids,
                    sample_solution=sample,
                    position=position,
                )
            )

        if len(raw_steps) == 6 and len(seen_components) == 6:
            if len(set(seen_components)) != 6:
                bad("SchemaError", "each of the six components must appear exactly once", sid)

        if not ok:
            continue
        scenarios.append(
            Scenario(
                id=sid,
                character_name=character.strip(),
                snapshot=snapshot,
                true_difficulty=difficulty,
                comic_asset_refs=tuple(comics),
                role_in_study=role,
                iso_group=iso_group,
            )
        )
        steps[sid] = tuple(parsed_steps)

    # Isomorphic pre/post pairing.
    pre = {}
    post = {}
    for s in scenarios:
        if s.role_in_study is StudyRole.PRE_TEST:
            pre.setdefault(s.iso_group, []).append(s.id)
        elif s.role_in_study is StudyRole.POST_TEST:
            post.setdefault(s.iso_group, []).append(s.id)
    for group, ids in sorted(pre.items(), key=lambda kv: str(kv[0])):
        if group is None:
            bad("SchemaError", f"pre-test scenarios {ids} lack an iso_group")
        elif len(ids) != 1 or len(post.get(group, [])) != 1:
            bad("SchemaError", f"iso_group {group!r} must pair exactly one pre-test "
                f"with one post-test scenario")
    for group, ids in sorted(post.items(), key=lambda kv: str(kv[0])):
        if group is None:
            bad("SchemaError", f"post-test scenarios {ids} lack an iso_group")
        elif group not in pre:
            bad("SchemaError", f"iso_group {group!r} has a post-test but no pre-test scenario")

    if violations:
        raise PackValidationError(violations)

    return ContentPack(
        version=version,
        scenarios=tuple(scenarios),
        steps=steps,
        criteria=criteria,
        base_dir=base_dir,
    )


def dump_content_pack(pack: ContentPack) -> str:
    """Serialize a pack back to its document form (round-trips through load)."""
    doc: dict[str, Any] = {"version": pack.version, "scenarios": [], "criteria": {}}
    for s in pack.scenarios:
        entry: dict[str, Any] = {
            "id": s.id,
            "character": s.character_name,
            "role": s.role_in_study.value,
            "difficulty": s.true_difficulty.value,
            "snapshot": {
                "problem": s.snapshot.problem_description,
                "code": s.snapshot.current_code,
                "output": s.snapshot.current_output,
            },
            "comics": list(s.comic_asset_refs),
            "steps": [],
        }
        if s.iso_group is not None:
            entry["iso_group"] = s.iso_group
        for step in pack.steps[s.id]:
            raw_step: dict[str, Any] = {
                "component": step.component.value,
                "mode": step.input_mode.value,
                "criteria": list(step.criteria_ids),
                "sample": step.sample_solution,
            }
            if step.mcq is not None:
                raw_step["mcq"] = {
                    "stem": step.mcq.stem,
                    "options": list(step.mcq.options),
                    "correct": step.mcq.correct_index,
                }
            entry["steps"].append(raw_step)
        doc["scenarios"].append(entry)
    for cid in sorted(pack.criteria):
        doc["criteria"][cid] = criterion_to_mapping(pack.criteria[cid])
    return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True, width=100)


def select_learning_sequence(pack: ContentPack, seed: int) -> list[Scenario]:
    """All Learning-role scenarios in a seed-determined order (Demo excluded)."""
    learning = sorted(pack.learning_scenarios, key=lambda s: s.id)
    if not learning:
        raise NoLearningScenarios("pack has no learning-role scenarios")
    rng = random.Random(seed)
    rng.shuffle(learning)
    return learning


def get_step(pack: ContentPack, scenario_id: str, position: int) -> StepDefinition:
    steps = pack.steps.get(scenario_id)
    if steps is None:
        raise UnknownScenario(f"no scenario {scenario_id!r} in pack", scenario_id=scenario_id)
    if not 0 <= position < len(steps):
        raise PositionOutOfRange(
            f"position {position} outside 0..{len(steps) - 1}",
            scenario_id=scenario_id,
            position=position,
        )
    return steps[position]


@lru_cache(maxsize=1)
def load_default_pack() -> ContentPack:
    """The bundled pack (cached; packs are immutable after load)."""
    root = resources.files("promptforge.data").joinpath("packs/default")
    data = root.joinpath("pack.yaml").read_bytes()
    pack = load_content_pack(BytesIO(data))
    try:
        base = Path(str(root))
    except TypeError:  # zip import; comics unavailable but pack still usable
        base = None
    return ContentPack(
        version=pack.version,
        scenarios=pack.scenarios,
        steps=pack.steps,
        criteria=pack.criteria,
        base_dir=base if base is not None and base.is_dir() else None,
    )
