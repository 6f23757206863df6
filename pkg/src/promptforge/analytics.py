"""Offline grading and statistics for written prompts.

Scores free-form prompts against the six-component rubric with the same
deterministic rules the builder uses, pairs pre/post scores per subject,
and computes the statistics a study of the builder needs: learning gains,
Wilcoxon signed-rank (exact for small n), Pearson correlation, Cohen's
kappa, and per-component summary tables.

Scoring is three-level {0, 0.5, 1}: full credit when every relevant
criterion passes, half credit when some do, zero when none do.  Scores
proposed by the rule oracle are drafts until a human confirms them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import norm as _norm
from scipy.stats import t as _t_dist

from .content import Scenario
from .errors import (
    DegenerateVariance,
    InsufficientData,
    LengthMismatch,
    MissingPhase,
    SchemaError,
    SubjectMismatch,
)
from .prompt_model import (
    CANONICAL_ORDER,
    ComponentKind,
    TutoringProtocolKind,
)
from .validation import Criterion, load_criteria, rule_check

ALLOWED_SCORES = (0.0, 0.5, 1.0)

PRE_PHASE = "pre"
POST_PHASE = "post"

# Criteria that witness each tutoring protocol in written text.
PROTOCOL_METHOD_CRITERIA: dict[TutoringProtocolKind, tuple[str, ...]] = {
    TutoringProtocolKind.CONTEXTUALIZED_EXPLANATION: (
        "method.explain_target",
        "method.explain_in_context",
    ),
    TutoringProtocolKind.EXAMPLE_CODE_ON_SIMILAR_PROBLEM: (
        "method.example_similar",
        "method.example_not_solution",
    ),
    TutoringProtocolKind.STEP_BY_STEP_GUIDING_QUESTIONS: (
        "method.guiding_questions",
        "method.guiding_step_count",
        "method.guiding_mcq",
        "method.guiding_one_at_a_time",
    ),
}


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PromptRef:
    """Which prompt a score belongs to."""

    subject_id: str
    phase: str  # "pre" | "post" (other phases allowed but unpaired)
    scenario_id: str = ""


@dataclass(frozen=True)
class RubricScore:
    scores: Mapping[ComponentKind, float]
    grader_id: str
    prompt_ref: PromptRef
    draft: bool = True

    def __post_init__(self):
        missing = [c.value for c in ComponentKind if c not in self.scores]
        if missing:
            raise SchemaError(f"rubric score missing components: {missing}")
        bad = {c.value: v for c, v in self.scores.items() if v not in ALLOWED_SCORES}
        if bad:
            raise SchemaError(f"scores must be one of {ALLOWED_SCORES}: {bad}")
        object.__setattr__(self, "scores", dict(self.scores))

    def confirm(self, grader_id: str) -> "RubricScore":
        """A human signed off; the score stops being a draft."""
        return replace(self, grader_id=grader_id, draft=False)


@dataclass(frozen=True)
class PairedSample:
    subject_id: str
    component: ComponentKind
    pre: float
    post: float

    def __post_init__(self):
        for name, value in (("pre", self.pre), ("post", self.post)):
            if not 0.0 <= value <= 1.0:
                raise SchemaError(f"{name} score {value} outside [0, 1]")

    @property
    def gain(self) -> float:
        return self.post - self.pre


class StatKind:
    WILCOXON_Z = "wilcoxon_z"
    PEARSON_R = "pearson_r"
    COHEN_KAPPA = "cohen_kappa"


@dataclass(frozen=True)
class StatResult:
    kind: str
    value: float
    p_value: float
    n: int
    effect_size: float | None = None
    note: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p_value {self.p_value} outside [0, 1]")
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass(frozen=True)
class PhaseStats:
    mean: float
    median: float
    iqr: float


@dataclass(frozen=True)
class SummaryRow:
    component: ComponentKind
    n: int
    pre: PhaseStats
    post: PhaseStats
    gain: PhaseStats
    stat: StatResult


# --------------------------------------------------------------------------
# rubric scoring
# --------------------------------------------------------------------------

def _set_score(
    criterion_ids: Sequence[str],
    catalog: Mapping[str, Criterion],
    text: str,
    scenario: Scenario,
) -> float:
    passed = sum(
        1 for cid in criterion_ids if rule_check(catalog[cid], text, scenario).passed
    )
    if passed == len(criterion_ids):
        return 1.0
    return 0.5 if passed else 0.0


def relevant_criteria(
    component: ComponentKind, scenario: Scenario
) -> list[tuple[str, ...]]:
    """Criterion-id sets that witness a component, best alternative wins.

    Most components have a single set; the tutoring protocol is satisfied by
    whichever of the three protocols the text commits to, so it gets one set
    per protocol and the best-scoring alternative counts.
    """
    if component is ComponentKind.AI_ROLE:
        return [("problem_type.role",)]
    if component is ComponentKind.LEARNER_LEVEL:
        return [("level.beginner", "level.beginner_simple")]
    if component is ComponentKind.DIFFICULTY_IDENTIFICATION:
        return [(f"problem_type.{scenario.true_difficulty.value}",)]
    if component is ComponentKind.PROBLEM_CONTEXT:
        ids = ["context.problem"]
        if scenario.current_code.strip():
            ids.append("context.current_code")
        if scenario.current_output.strip():
            ids.append("context.current_output")
        return [tuple(ids)]
    if component is ComponentKind.TUTORING_PROTOCOL:
        return [PROTOCOL_METHOD_CRITERIA[p] for p in TutoringProtocolKind]
    if component is ComponentKind.GUARDRAILS:
        return [("exclude.no_solution",)]
    raise ValueError(f"unknown component {component!r}")


def propose_scores(
    text: str,
    scenario: Scenario,
    *,
    catalog: Mapping[str, Criterion] | None = None,
    grader_id: str = "rule-oracle",
    prompt_ref: PromptRef | None = None,
) -> RubricScore:
    """Draft a rubric score for one written prompt (human-confirmable)."""
    catalog = catalog if catalog is not None else load_criteria()
    scores = {
        component: max(
            _set_score(ids, catalog, text, scenario)
            for ids in relevant_criteria(component, scenario)
        )
        for component in ComponentKind
    }
    return RubricScore(
        scores=scores,
        grader_id=grader_id,
        prompt_ref=prompt_ref
        or PromptRef(subject_id="", phase="", scenario_id=scenario.id),
        draft=True,
    )


def learning_gain(pre: RubricScore, post: RubricScore) -> dict[ComponentKind, float]:
    if pre.prompt_ref.subject_id != post.prompt_ref.subject_id:
        raise SubjectMismatch(
            f"pre belongs to {pre.prompt_ref.subject_id!r}, "
            f"post to {post.prompt_ref.subject_id!r}"
        )
    return {c: post.scores[c] - pre.scores[c] for c in ComponentKind}


def build_paired(scores: Iterable[RubricScore]) -> list[PairedSample]:
    """Pair each subject's pre and post scores into per-component samples."""
    by_subject: dict[str, dict[str, RubricScore]] = {}
    for score in scores:
        ref = score.prompt_ref
        phases = by_subject.setdefault(ref.subject_id, {})
        if ref.phase in phases:
            raise SchemaError(
                f"subject {ref.subject_id!r} has more than one {ref.phase!r} score"
            )
        phases[ref.phase] = score
    samples: list[PairedSample] = []
    for subject_id in sorted(by_subject):
        phases = by_subject[subject_id]
        for needed in (PRE_PHASE, POST_PHASE):
            if needed not in phases:
                raise MissingPhase(
                    f"subject {subject_id!r} has no {needed} score",
                    subject_id=subject_id,
                    phase=needed,
                )
        pre, post = phases[PRE_PHASE], phases[POST_PHASE]
        for component in CANONICAL_ORDER:
            samples.append(
                PairedSample(
                    subject_id=subject_id,
                    component=component,
                    pre=pre.scores[component],
                    post=post.scores[component],
                )
            )
    return samples


# --------------------------------------------------------------------------
# statistics
# --------------------------------------------------------------------------

EXACT_LIMIT = 12


def _midranks(magnitudes: Sequence[float]) -> list[float]:
    order = sorted(range(len(magnitudes)), key=lambda i: magnitudes[i])
    ranks = [0.0] * len(magnitudes)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and magnitudes[order[j + 1]] == magnitudes[order[i]]:
            j += 1
        shared = (i + j + 2) / 2
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks: Sequence[float], w_plus: float) -> float:
    """Distribution of the positive-rank sum over all sign assignments.

    Ranks are midranks, so doubling makes them integers and the whole
    distribution lives on an integer lattice; a subset-sum table over that
    lattice is the full enumeration without the 2^n loop.
    """
    doubled = [round(2 * r) for r in ranks]
    target = round(2 * w_plus)
    total_sum = sum(doubled)
    counts = [0] * (total_sum + 1)
    counts[0] = 1
    for weight in doubled:
        for s in range(total_sum, weight - 1, -1):
            if counts[s - weight]:
                counts[s] += counts[s - weight]
    total = 2 ** len(ranks)
    at_most = sum(counts[: target + 1])
    at_least = sum(counts[target:])
    return min(1.0, 2 * min(at_most, at_least) / total)


def _approx_z(
    ranks: Sequence[float], magnitudes: Sequence[float], w_plus: float, n: int
) -> float:
    mu = n * (n + 1) / 4
    tie_term = 0.0
    seen: dict[float, int] = {}
    for m in magnitudes:
        seen[m] = seen.get(m, 0) + 1
    for count in seen.values():
        tie_term += count**3 - count
    variance = n * (n + 1) * (2 * n + 1) / 24 - tie_term / 48
    if variance <= 0:
        return 0.0
    centered = w_plus - mu
    if centered == 0:
        return 0.0
    # continuity correction: shrink toward the mean by half a step
    corrected = centered - math.copysign(0.5, centered)
    return corrected / math.sqrt(variance)


def wilcoxon_signed_rank(
    pairs: Sequence[tuple[float, float]], *, method: str = "auto"
) -> StatResult:
    """Paired two-sided test on post - pre differences.

    Zero differences are dropped (documented convention: it moves p at small
    n).  Exact p comes from enumerating sign assignments whenever the number
    of nonzero differences is <= 12 (or always with method="exact"); larger
    samples use the normal approximation with tie and continuity corrections.
    The z statistic and effect size |z|/sqrt(n) are always reported from the
    corrected normal formula so effect sizes stay comparable across methods.
    """
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method {method!r}")
    if not pairs:
        raise InsufficientData("no pairs given")
    diffs = [post - pre for pre, post in pairs]
    nonzero = [d for d in diffs if d != 0]
    dropped = len(diffs) - len(nonzero)
    if not nonzero:
        return StatResult(
            kind=StatKind.WILCOXON_Z,
            value=0.0,
            p_value=1.0,
            n=len(diffs),
            effect_size=0.0,
            note="all differences zero",
        )
    n = len(nonzero)
    magnitudes = [abs(d) for d in nonzero]
    ranks = _midranks(magnitudes)
    w_plus = sum(r for d, r in zip(nonzero, ranks) if d > 0)
    z = _approx_z(ranks, magnitudes, w_plus, n)
    use_exact = method == "exact" or (method == "auto" and n <= EXACT_LIMIT)
    if use_exact:
        p = _exact_two_sided_p(ranks, w_plus)
        note = "exact"
    else:
        p = min(1.0, 2 * float(_norm.sf(abs(z))))
        note = "normal approximation"
    if dropped:
        note += f"; {dropped} zero difference(s) dropped"
    return StatResult(
        kind=StatKind.WILCOXON_Z,
        value=z,
        p_value=p,
        n=n,
        effect_size=abs(z) / math.sqrt(n),
        note=note,
    )


def pearson_r(x: Sequence[float], y: Sequence[float]) -> StatResult:
    if len(x) != len(y):
        raise LengthMismatch(f"len(x)={len(x)} != len(y)={len(y)}")
    n = len(x)
    if n < 3:
        raise InsufficientData(f"need at least 3 points, got {n}")
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        raise DegenerateVariance("correlation undefined for a constant series")
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    r = max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t_stat = r * math.sqrt((n - 2) / (1 - r * r))
        p = min(1.0, 2 * float(_t_dist.sf(abs(t_stat), n - 2)))
    return StatResult(kind=StatKind.PEARSON_R, value=r, p_value=p, n=n)


def cohen_kappa(labels_a: Sequence[str], labels_b: Sequence[str]) -> StatResult:
    if len(labels_a) != len(labels_b):
        raise LengthMismatch(f"len(a)={len(labels_a)} != len(b)={len(labels_b)}")
    n = len(labels_a)
    if n < 1:
        raise InsufficientData("need at least one pair of labels")
    labels = sorted(set(labels_a) | set(labels_b))
    p_a = {lab: sum(1 for x in labels_a if x == lab) / n for lab in labels}
    p_b = {lab: sum(1 for x in labels_b if x == lab) / n for lab in labels}
    p_o = sum(1 for x, y in zip(labels_a, labels_b) if x == y) / n
    p_e = sum(p_a[lab] * p_b[lab] for lab in labels)
    note = None
    if p_e == 1.0:
        # both raters constant on the same label: perfect trivial agreement
        kappa = 1.0
        note = "degenerate marginals (chance agreement = 1); kappa by convention"
    else:
        kappa = (p_o - p_e) / (1 - p_e)
    # Large-sample test of kappa = 0 (null standard error from the marginals).
    se0_sq_num = p_e + p_e**2 - sum(
        p_a[lab] * p_b[lab] * (p_a[lab] + p_b[lab]) for lab in labels
    )
    if p_e == 1.0 or se0_sq_num <= 0:
        p_value = 1.0
    else:
        se0 = math.sqrt(se0_sq_num) / ((1 - p_e) * math.sqrt(n))
        p_value = min(1.0, 2 * float(_norm.sf(abs(kappa / se0))))
    return StatResult(
        kind=StatKind.COHEN_KAPPA, value=kappa, p_value=p_value, n=n, note=note
    )


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------

def _phase_stats(values: Sequence[float]) -> PhaseStats:
    arr = np.asarray(values, dtype=float)
    return PhaseStats(
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        iqr=float(np.percentile(arr, 75) - np.percentile(arr, 25)),
    )


def summarize(
    samples: Iterable[PairedSample | RubricScore], *, method: str = "auto"
) -> list[SummaryRow]:
    """Per-component cohort table: phase stats, gains, and a paired test.

    Accepts either prebuilt PairedSamples or raw RubricScores (which are
    paired per subject first and can raise MissingPhase).  Deterministic and
    independent of input order.
    """
    items = list(samples)
    if items and isinstance(items[0], RubricScore):
        items = build_paired(items)  # type: ignore[arg-type]
    by_component: dict[ComponentKind, list[PairedSample]] = {}
    for sample in items:
        if not isinstance(sample, PairedSample):
            raise SchemaError("mixed input: expected PairedSample rows")
        by_component.setdefault(sample.component, []).append(sample)
    rows: list[SummaryRow] = []
    for component in CANONICAL_ORDER:
        group = sorted(by_component.get(component, []), key=lambda s: s.subject_id)
        if not group:
            continue
        pres = [s.pre for s in group]
        posts = [s.post for s in group]
        gains = [s.gain for s in group]
        rows.append(
            SummaryRow(
                component=component,
                n=len(group),
                pre=_phase_stats(pres),
                post=_phase_stats(posts),
                gain=_phase_stats(gains),
                stat=wilcoxon_signed_rank(list(zip(pres, posts)), method=method),
            )
        )
    return rows


def rows_to_records(rows: Iterable[SummaryRow]) -> list[dict[str, object]]:
    """Machine-readable form of a summary table."""
    return [
        {
            "component": row.component.value,
            "label": row.component.label,
            "n": row.n,
            "pre_mean": row.pre.mean,
            "pre_median": row.pre.median,
            "pre_iqr": row.pre.iqr,
            "post_mean": row.post.mean,
            "post_median": row.post.median,
            "post_iqr": row.post.iqr,
            "gain_mean": row.gain.mean,
            "gain_median": row.gain.median,
            "gain_iqr": row.gain.iqr,
            "z": row.stat.value,
            "p_value": row.stat.p_value,
            "effect_size": row.stat.effect_size,
        }
        for row in rows
    ]


def render_table(rows: Iterable[SummaryRow]) -> str:
    """Plain-text cohort table, one line per component."""
    header = (
        f"{'Component':<26} {'n':>3} "
        f"{'pre M':>6} {'med':>5} {'IQR':>5} "
        f"{'post M':>7} {'med':>5} {'IQR':>5} "
        f"{'gain M':>7} {'med':>5} {'IQR':>5} "
        f"{'z':>7} {'p':>8} {'r':>5}"
    )
    lines = [header, "-" * len(header)]
    for row in rows:
        p = row.stat.p_value
        p_text = "<.001" if p < 0.001 else f"{p:.3f}"
        lines.append(
            f"{row.component.label:<26} {row.n:>3} "
            f"{row.pre.mean:>6.2f} {row.pre.median:>5.2f} {row.pre.iqr:>5.2f} "
            f"{row.post.mean:>7.2f} {row.post.median:>5.2f} {row.post.iqr:>5.2f} "
            f"{row.gain.mean:>7.2f} {row.gain.median:>5.2f} {row.gain.iqr:>5.2f} "
            f"{row.stat.value:>7.2f} {p_text:>8} {row.stat.effect_size or 0:>5.2f}"
        )
    return "\n".join(lines)


# --------------------------------------------------------------------------
# reference cohort aggregates (fixture data)
# --------------------------------------------------------------------------

# Published aggregates from a 22-subject study cohort that used this flow.
# Shipped purely as fixture data: the consistency checker below verifies that
# our summary arithmetic reproduces each row's mean gain from its phase means.
# The z column is data, not something this package recomputes (the cohort's
# raw per-subject scores are not available).
REFERENCE_COHORT_ROWS: tuple[dict[str, object], ...] = (
    {
        "component": ComponentKind.TUTORING_PROTOCOL,
        "pre": (0.44, 0.0, 1.0),
        "post": (0.83, 1.0, 0.0),
        "gain": (0.39, 0.5, 1.0),
        "z": 9.46,
        "p_label": "<.001",
        "effect_size": 0.82,
    },
    {
        "component": ComponentKind.DIFFICULTY_IDENTIFICATION,
        "pre": (0.70, 1.0, 1.0),
        "post": (0.95, 1.0, 0.0),
        "gain": (0.26, 0.0, 0.8),
        "z": 9.91,
        "p_label": "<.001",
        "effect_size": 0.86,
    },
    {
        "component": ComponentKind.AI_ROLE,
        "pre": (0.00, 0.0, 0.0),
        "post": (0.62, 1.0, 1.0),
        "gain": (0.62, 1.0, 1.0),
        "z": 9.91,
        "p_label": "<.001",
        "effect_size": 0.86,
    },
    {
        "component": ComponentKind.PROBLEM_CONTEXT,
        "pre": (0.77, 1.0, 0.5),
        "post": (0.94, 1.0, 0.0),
        "gain": (0.17, 0.0, 0.5),
        "z": 9.63,
        "p_label": "<.001",
        "effect_size": 0.84,
    },
    {
        "component": ComponentKind.LEARNER_LEVEL,
        "pre": (0.08, 0.0, 0.0),
        "post": (0.65, 1.0, 0.9),
        "gain": (0.58, 1.0, 1.0),
        "z": 9.75,
        "p_label": "<.001",
        "effect_size": 0.85,
    },
    {
        "component": ComponentKind.GUARDRAILS,
        "pre": (0.25, 0.0, 0.8),
        "post": (0.82, 1.0, 0.0),
        "gain": (0.56, 1.0, 1.0),
        "z": 9.72,
        "p_label": "<.001",
        "effect_size": 0.85,
    },
)


def check_cohort_consistency(
    rows: Sequence[Mapping[str, object]] = REFERENCE_COHORT_ROWS,
    *,
    tolerance: float = 0.01,
) -> list[str]:
    """Verify gain mean == post mean - pre mean (within rounding) per row."""
    problems: list[str] = []
    for row in rows:
        pre_mean = float(row["pre"][0])  # type: ignore[index]
        post_mean = float(row["post"][0])  # type: ignore[index]
        gain_mean = float(row["gain"][0])  # type: ignore[index]
        if abs(gain_mean - (post_mean - pre_mean)) > tolerance + 1e-12:
            component = row["component"]
            label = component.label if isinstance(component, ComponentKind) else component
            problems.append(
                f"{label}: gain {gain_mean} != post {post_mean} - pre {pre_mean}"
            )
    return problems
