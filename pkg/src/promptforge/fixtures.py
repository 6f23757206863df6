"""Canonical example prompts: a complete six-component prompt per scenario,
and the classic "just fix it for me" counterexample.

Both are built from pack content rather than hard-coded strings, so they stay
valid when scenario texts change.  The complete example is simply the six
sample solutions assembled in canonical order — exactly what a learner who
accepted every sample would walk away with.
"""

from __future__ import annotations

from .content import ContentPack
from .prompt_model import CANONICAL_ORDER, SEGMENT_SEPARATOR


def gold_example_prompt(pack: ContentPack, scenario_id: str) -> str:
    """A prompt that earns full credit on all six rubric components."""
    by_component = {
        step.component: step.sample_solution for step in pack.steps[scenario_id]
    }
    return SEGMENT_SEPARATOR.join(
        by_component[component] for component in CANONICAL_ORDER
    )


def counterexample_prompt(pack: ContentPack, scenario_id: str) -> str:
    """A solution-seeking prompt: context pasted in, then "fix it for me".

    Scores zero on every component except the problem context (the pasted
    material is real context, just unaccompanied by any pedagogy).
    """
    scenario = pack.scenario(scenario_id)
    parts = [scenario.problem_description]
    if scenario.current_code.strip():
        parts.append(scenario.current_code)
    parts.append("Fix it for me and give me the correct code.")
    return SEGMENT_SEPARATOR.join(parts)
