"""Rubric scoring and statistics, checked against independent oracles.

The oracles in tests/oracles.py are deliberately naive (full enumeration,
longhand formulas) so that agreement actually means something.
"""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptforge.analytics import (
    ALLOWED_SCORES,
    EXACT_LIMIT,
    POST_PHASE,
    PRE_PHASE,
    REFERENCE_COHORT_ROWS,
    PairedSample,
    PromptRef,
    RubricScore,
    StatKind,
    build_paired,
    check_cohort_consistency,
    cohen_kappa,
    learning_gain,
    pearson_r,
    propose_scores,
    relevant_criteria,
    render_table,
    rows_to_records,
    summarize,
    wilcoxon_signed_rank,
)
from promptforge.errors import (
    InsufficientData,
    LengthMismatch,
    MissingPhase,
    SchemaError,
    SubjectMismatch,
)
from promptforge.fixtures import counterexample_prompt, gold_example_prompt
from promptforge.prompt_model import ComponentKind

from oracles import iqr_oracle, kappa_oracle, pearson_r_oracle, wilcoxon_exact_p

COMPONENTS = list(ComponentKind)


def ref(subject, phase=PRE_PHASE):
    return PromptRef(subject_id=subject, phase=phase, scenario_id="alice")


def rubric(subject, phase, value):
    return RubricScore(
        scores={c: value for c in COMPONENTS},
        grader_id="g1",
        prompt_ref=ref(subject, phase),
    )


# --- rubric fixtures ---------------------------------------------------------


def test_rubric_requires_all_six_components():
    incomplete = {c: 1.0 for c in COMPONENTS[:5]}
    with pytest.raises(SchemaError):
        RubricScore(scores=incomplete, grader_id="g", prompt_ref=ref("s1"))


def test_rubric_rejects_off_scale_values():
    scores = {c: 1.0 for c in COMPONENTS}
    scores[ComponentKind.GUARDRAILS] = 0.75
    with pytest.raises(SchemaError):
        RubricScore(scores=scores, grader_id="g", prompt_ref=ref("s1"))
    assert ALLOWED_SCORES == (0.0, 0.5, 1.0)


def test_rubric_confirm_flips_draft():
    draft = rubric("s1", PRE_PHASE, 0.5)
    assert draft.draft
    final = draft.confirm("human-2")
    assert not final.draft
    assert final.grader_id == "human-2"
    assert final.scores == draft.scores
    assert draft.draft  # original untouched


# --- automatic scoring -------------------------------------------------------


def test_gold_prompt_scores_one_everywhere(pack):
    for scenario in pack.scenarios:
        text = gold_example_prompt(pack, scenario.id)
        scored = propose_scores(text, scenario)
        assert all(v == 1.0 for v in scored.scores.values()), (
            scenario.id,
            {c.value: v for c, v in scored.scores.items() if v != 1.0},
        )


def test_counterexample_scores_zero_except_context(pack):
    # pasting the problem and demanding the fix shows context and nothing else
    for scenario in pack.scenarios:
        text = counterexample_prompt(pack, scenario.id)
        scored = propose_scores(text, scenario)
        for component, value in scored.scores.items():
            if component is ComponentKind.PROBLEM_CONTEXT:
                assert value > 0
            else:
                assert value == 0.0, (scenario.id, component)


def test_empty_prompt_scores_zero(pack):
    scored = propose_scores("hello", pack.scenario("alice"))
    assert all(v == 0.0 for v in scored.scores.values())


def test_propose_scores_is_draft_by_default(pack):
    scored = propose_scores("x", pack.scenario("alice"))
    assert scored.draft
    assert scored.grader_id == "rule-oracle"


def test_half_credit_when_some_criteria_hit(pack):
    scenario = pack.scenario("alice")
    # beginner mention without the simple-language request: 1 of 2 criteria
    scored = propose_scores("I'm a Python beginner.", scenario)
    assert scored.scores[ComponentKind.LEARNER_LEVEL] == 0.5


def test_relevant_criteria_depend_on_scenario_fields(pack):
    scenario = pack.scenario("alice")
    groups = relevant_criteria(ComponentKind.PROBLEM_CONTEXT, scenario)
    assert len(groups) == 1
    ids = groups[0]
    assert "context.problem" in ids
    # alice has code and output, so both embedding criteria apply
    assert ("context.current_code" in ids) == bool(scenario.current_code)
    assert ("context.current_output" in ids) == bool(scenario.current_output)


def test_tutoring_protocol_takes_best_alternative(pack):
    scenario = pack.scenario("alice")
    # a perfect guiding-questions ask, no mention of the other two protocols
    text = (
        "Give me step-by-step guiding questions, 3 to 5 steps, "
        "each as a multiple choice question, and only ask one question at a time."
    )
    scored = propose_scores(text, scenario)
    assert scored.scores[ComponentKind.TUTORING_PROTOCOL] == 1.0


# --- pairing ------------------------------------------------------------------


def test_learning_gain():
    pre = rubric("s1", PRE_PHASE, 0.0)
    post = rubric("s1", POST_PHASE, 1.0)
    gains = learning_gain(pre, post)
    assert all(g == 1.0 for g in gains.values())


def test_learning_gain_rejects_subject_mismatch():
    with pytest.raises(SubjectMismatch):
        learning_gain(rubric("s1", PRE_PHASE, 0.0), rubric("s2", POST_PHASE, 1.0))


def test_build_paired_groups_by_subject_and_component():
    scores = [
        rubric("s2", PRE_PHASE, 0.0),
        rubric("s1", PRE_PHASE, 0.5),
        rubric("s1", POST_PHASE, 1.0),
        rubric("s2", POST_PHASE, 0.5),
    ]
    paired = build_paired(scores)
    assert len(paired) == 12  # 2 subjects x 6 components
    subjects = [p.subject_id for p in paired]
    assert subjects == sorted(subjects)
    sample = next(p for p in paired if p.subject_id == "s1")
    assert sample.pre == 0.5 and sample.post == 1.0
    assert sample.gain == 0.5


def test_build_paired_rejects_duplicates_and_holes():
    with pytest.raises(SchemaError):
        build_paired([rubric("s1", PRE_PHASE, 0.0), rubric("s1", PRE_PHASE, 0.5)])
    with pytest.raises(MissingPhase):
        build_paired([rubric("s1", PRE_PHASE, 0.0)])


# --- Wilcoxon signed rank ----------------------------------------------------------


def pairs_from_diffs(diffs):
    return [
        PairedSample(subject_id=f"s{i}", component=ComponentKind.AI_ROLE, pre=0.0, post=d)
        for i, d in enumerate(diffs)
    ]


def wilcoxon_from_diffs(diffs, **kwargs):
    return wilcoxon_signed_rank([(0.0, d) for d in diffs], **kwargs)


def test_wilcoxon_pinned_small_case():
    result = wilcoxon_from_diffs([1.0, 2.0, 3.0])
    assert result.p_value == 0.25  # exactly: 2/8 one way, doubled
    assert result.kind == StatKind.WILCOXON_Z
    assert result.n == 3
    assert "exact" in result.note


def test_wilcoxon_agrees_with_enumeration_oracle():
    rng = random.Random(20260817)
    for _ in range(300):
        n = rng.randint(1, 10)
        diffs = [rng.choice([-1.0, -0.5, 0.5, 1.0]) * rng.randint(1, 4) for _ in range(n)]
        if all(d == 0 for d in diffs):
            continue
        ours = wilcoxon_from_diffs(diffs, method="exact")
        oracle = wilcoxon_exact_p(diffs)
        assert ours.p_value == pytest.approx(oracle, abs=1e-12), diffs


def test_wilcoxon_drops_zeros_with_note():
    result = wilcoxon_from_diffs([0.0, 0.0, 1.0, 2.0, 3.0])
    assert result.n == 3
    assert "zero difference" in result.note
    assert result.p_value == 0.25


def test_wilcoxon_all_zero_note():
    result = wilcoxon_from_diffs([0.0, 0.0])
    assert result.p_value == 1.0
    assert result.value == 0.0
    assert "all differences zero" in result.note


def test_wilcoxon_empty_rejected():
    with pytest.raises(InsufficientData):
        wilcoxon_signed_rank([])


def test_wilcoxon_exact_vs_normal_approximation():
    # the approximation converges on the exact answer as n grows; at small n
    # with heavy ties it is coarse in the middle of the distribution but must
    # never contradict the exact test near the decision threshold
    rng = random.Random(7)
    for n, tolerance in ((12, 0.18), (30, 0.07)):
        for _ in range(40):
            diffs = [rng.choice([-1.0, -0.5, 0.5, 1.0]) for _ in range(n)]
            exact = wilcoxon_from_diffs(diffs, method="exact")
            approx = wilcoxon_from_diffs(diffs, method="approx")
            assert approx.p_value == pytest.approx(exact.p_value, abs=tolerance)
            if exact.p_value < 0.01:
                assert approx.p_value < 0.05


def test_wilcoxon_method_auto_switches_at_limit():
    small = wilcoxon_from_diffs([1.0] * EXACT_LIMIT)
    large = wilcoxon_from_diffs([1.0] * (EXACT_LIMIT + 1))
    assert "exact" in small.note
    assert "normal" in large.note


def test_wilcoxon_effect_size_bounded():
    result = wilcoxon_from_diffs([1.0, 1.0, 0.5, 1.0, 0.5, 1.0, 1.0, 0.5])
    assert result.effect_size is not None
    assert 0 <= result.effect_size <= 1


@settings(max_examples=150, deadline=None)
@given(
    st.lists(
        st.sampled_from([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]),
        min_size=1,
        max_size=10,
    )
)
def test_wilcoxon_exact_matches_oracle_property(diffs):
    ours = wilcoxon_from_diffs(diffs, method="exact")
    assert ours.p_value == pytest.approx(wilcoxon_exact_p(diffs), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.sampled_from([-1.0, -0.5, 0.5, 1.0]),
        min_size=1,
        max_size=10,
    )
)
def test_wilcoxon_sign_symmetry(diffs):
    # flipping every difference leaves a two-sided p unchanged
    p_pos = wilcoxon_from_diffs(diffs, method="exact").p_value
    p_neg = wilcoxon_from_diffs([-d for d in diffs], method="exact").p_value
    assert p_pos == pytest.approx(p_neg, abs=1e-12)


def test_wilcoxon_detects_uniform_improvement():
    # six subjects all gaining: significant at the usual level even exactly
    result = wilcoxon_from_diffs([1.0, 0.5, 1.0, 0.5, 1.0, 1.0], method="exact")
    assert result.p_value < 0.05


# --- Pearson -------------------------------------------------------------------


def test_pearson_pinned_case():
    result = pearson_r((1, 2, 3), (1, 2, 4))
    assert result.value == pytest.approx(0.982, abs=1e-3)
    assert result.value == pytest.approx(pearson_r_oracle((1, 2, 3), (1, 2, 4)), abs=1e-15)
    assert result.kind == StatKind.PEARSON_R
    assert 0 < result.p_value < 1


def test_pearson_perfect_correlation():
    result = pearson_r((1, 2, 3, 4), (2, 4, 6, 8))
    assert result.value == 1.0
    assert result.p_value == 0.0
    inverse = pearson_r((1, 2, 3, 4), (8, 6, 4, 2))
    assert inverse.value == -1.0
    assert inverse.p_value == 0.0


def test_pearson_requires_three_points_and_equal_lengths():
    with pytest.raises(InsufficientData):
        pearson_r((1, 2), (3, 4))
    with pytest.raises(LengthMismatch):
        pearson_r((1, 2, 3), (1, 2))


def test_pearson_degenerate_variance():
    from promptforge.errors import DegenerateVariance

    with pytest.raises(DegenerateVariance):
        pearson_r((1, 1, 1), (1, 2, 3))


# rounded so the shift transform below can't absorb a tiny value into 7.0
_coord = st.floats(-100, 100, allow_nan=False).map(lambda v: round(v, 6))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(_coord, _coord), min_size=3, max_size=25))
def test_pearson_matches_oracle_and_symmetries(points):
    xs = tuple(p[0] for p in points)
    ys = tuple(p[1] for p in points)
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return  # degenerate: rejected by both implementation and oracle
    result = pearson_r(xs, ys)
    assert result.value == pytest.approx(pearson_r_oracle(xs, ys), abs=1e-9)
    assert -1 <= result.value <= 1
    # symmetry
    assert pearson_r(ys, xs).value == pytest.approx(result.value, abs=1e-12)
    # shift/scale invariance
    moved = tuple(3.0 * x + 7.0 for x in xs)
    assert pearson_r(moved, ys).value == pytest.approx(result.value, abs=1e-9)
    # negation flips the sign
    flipped = tuple(-x for x in xs)
    assert pearson_r(flipped, ys).value == pytest.approx(-result.value, abs=1e-9)


# --- Cohen's kappa ----------------------------------------------------------------


def unroll(matrix):
    """Confusion matrix -> two aligned label lists."""
    a, b = [], []
    for i, row in enumerate(matrix):
        for j, count in enumerate(row):
            a.extend([i] * count)
            b.extend([j] * count)
    return a, b


def test_kappa_pinned_case():
    a, b = unroll([[20, 5], [10, 15]])
    result = cohen_kappa(a, b)
    assert result.value == pytest.approx(0.400, abs=5e-4)
    assert result.value == pytest.approx(kappa_oracle(a, b), abs=1e-15)
    assert result.kind == StatKind.COHEN_KAPPA
    assert result.n == 50


def test_kappa_perfect_and_chance():
    labels = [0, 1, 0, 1, 2, 2, 0, 1]
    assert cohen_kappa(labels, labels).value == 1.0
    a, b = unroll([[10, 10], [10, 10]])  # independence
    assert cohen_kappa(a, b).value == pytest.approx(0.0, abs=1e-12)


def test_kappa_degenerate_agreement_convention():
    result = cohen_kappa([1, 1, 1], [1, 1, 1])
    assert result.value == 1.0
    assert result.note  # the convention is called out, not silent


def test_kappa_length_mismatch():
    with pytest.raises(LengthMismatch):
        cohen_kappa([1, 2], [1])


def test_kappa_permutation_invariance():
    rng = random.Random(3)
    a = [rng.choice("xyz") for _ in range(60)]
    b = [rng.choice("xyz") for _ in range(60)]
    base = cohen_kappa(a, b)
    order = list(range(60))
    rng.shuffle(order)
    shuffled = cohen_kappa([a[i] for i in order], [b[i] for i in order])
    assert shuffled.value == pytest.approx(base.value, abs=1e-12)
    assert shuffled.p_value == pytest.approx(base.p_value, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.sampled_from([0.0, 0.5, 1.0]), min_size=2, max_size=40),
    st.randoms(use_true_random=False),
)
def test_kappa_matches_oracle_property(a, rnd):
    b = [rnd.choice([0.0, 0.5, 1.0]) for _ in a]
    result = cohen_kappa(a, b)
    assert result.value == pytest.approx(kappa_oracle(a, b), abs=1e-12)
    assert result.value <= 1.0 + 1e-12


# --- summaries ---------------------------------------------------------------------


def cohort(n=8, post_value=1.0, seed=5):
    rng = random.Random(seed)
    scores = []
    for i in range(n):
        pre = {c: rng.choice([0.0, 0.5]) for c in COMPONENTS}
        post = {c: post_value for c in COMPONENTS}
        scores.append(
            RubricScore(scores=pre, grader_id="g", prompt_ref=ref(f"s{i:02d}", PRE_PHASE))
        )
        scores.append(
            RubricScore(scores=post, grader_id="g", prompt_ref=ref(f"s{i:02d}", POST_PHASE))
        )
    return scores


def test_summarize_from_rubric_scores():
    rows = summarize(cohort())
    assert len(rows) == 6
    assert [r.component for r in rows] == [
        ComponentKind.AI_ROLE,
        ComponentKind.LEARNER_LEVEL,
        ComponentKind.DIFFICULTY_IDENTIFICATION,
        ComponentKind.PROBLEM_CONTEXT,
        ComponentKind.TUTORING_PROTOCOL,
        ComponentKind.GUARDRAILS,
    ]
    for row in rows:
        assert row.n == 8
        assert row.gain.mean == pytest.approx(row.post.mean - row.pre.mean, abs=1e-12)


def test_summarize_order_independent():
    scores = cohort()
    shuffled = list(scores)
    random.Random(0).shuffle(shuffled)
    assert rows_to_records(summarize(scores)) == rows_to_records(summarize(shuffled))


def test_summarize_gain_identity_per_subject():
    rows = summarize(cohort(n=10, seed=9))
    for row in rows:
        assert row.gain.mean == pytest.approx(row.post.mean - row.pre.mean, abs=1e-12)


def test_summarize_uniform_improvement_is_significant():
    # everyone starts at 0, ends at 1: for n=8 the exact p is well under .05
    scores = []
    for i in range(8):
        scores.append(
            RubricScore(
                scores={c: 0.0 for c in COMPONENTS},
                grader_id="g",
                prompt_ref=ref(f"s{i}", PRE_PHASE),
            )
        )
        scores.append(
            RubricScore(
                scores={c: 1.0 for c in COMPONENTS},
                grader_id="g",
                prompt_ref=ref(f"s{i}", POST_PHASE),
            )
        )
    for row in summarize(scores):
        assert row.stat.p_value < 0.05
        assert row.gain.mean == 1.0


def test_summarize_no_change_note():
    scores = []
    for i in range(4):
        for phase in (PRE_PHASE, POST_PHASE):
            scores.append(
                RubricScore(
                    scores={c: 0.5 for c in COMPONENTS},
                    grader_id="g",
                    prompt_ref=ref(f"s{i}", phase),
                )
            )
    for row in summarize(scores):
        assert row.stat.p_value == 1.0
        assert "all differences zero" in row.stat.note


def test_phase_stats_match_oracles():
    values = [0.0, 0.5, 0.5, 1.0, 1.0, 1.0, 0.0, 0.5]
    rows = summarize(
        [
            RubricScore(
                scores={c: v for c in COMPONENTS},
                grader_id="g",
                prompt_ref=ref(f"s{i}", PRE_PHASE),
            )
            for i, v in enumerate(values)
        ]
        + [
            RubricScore(
                scores={c: 1.0 for c in COMPONENTS},
                grader_id="g",
                prompt_ref=ref(f"s{i}", POST_PHASE),
            )
            for i in range(len(values))
        ]
    )
    row = rows[0]
    assert row.pre.mean == pytest.approx(sum(values) / len(values), abs=1e-12)
    assert row.pre.median == 0.5
    assert row.pre.iqr == pytest.approx(iqr_oracle(values), abs=1e-12)


def test_render_table_is_readable():
    text = render_table(summarize(cohort()))
    lines = text.splitlines()
    assert len(lines) >= 7  # header + six component rows
    assert "Component" in lines[0]
    assert "Tutoring Protocols" in text
    assert "gain" in lines[0] or "Gain" in text


def test_rows_to_records_round_trip_types():
    records = rows_to_records(summarize(cohort()))
    for record in records:
        assert set(record) >= {
            "component",
            "label",
            "n",
            "pre_mean",
            "post_mean",
            "gain_mean",
            "z",
            "p_value",
            "effect_size",
        }
        assert isinstance(record["pre_mean"], float)
        assert record["gain_mean"] == pytest.approx(
            record["post_mean"] - record["pre_mean"], abs=1e-12
        )


# --- published-cohort reference table -------------------------------------------------


def test_reference_cohort_consistent():
    assert check_cohort_consistency() == []


def test_reference_cohort_inconsistency_detected():
    broken = [dict(r) for r in REFERENCE_COHORT_ROWS]
    mean, median, iqr = broken[0]["gain"]
    broken[0]["gain"] = (mean + 0.05, median, iqr)  # no longer post - pre
    problems = check_cohort_consistency(rows=broken)
    assert len(problems) == 1
    assert "gain" in problems[0]


def test_reference_cohort_shape():
    assert len(REFERENCE_COHORT_ROWS) == 6
    for row in REFERENCE_COHORT_ROWS:
        assert row["p_label"] == "<.001"
        assert 0 <= row["effect_size"] <= 1
        assert math.isfinite(row["z"])
