"""Grading and statistics command line (installed as ``pfgrade``).

CSV formats:

* prompts (``grade --in``): columns ``subject_id, phase, scenario_id, text``
* scores (``grade --out`` / ``stats --scores``): columns
  ``subject_id, phase, scenario_id, component, score, draft, grader_id``
* labels (``kappa --a/--b``): column ``label`` (rows aligned by
  ``subject_id``+``component`` when both files carry them, else by order)
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .analytics import (
    PromptRef,
    RubricScore,
    build_paired,
    cohen_kappa,
    propose_scores,
    render_table,
    summarize,
)
from .content import load_content_pack, load_default_pack
from .errors import PromptForgeError, SchemaError
from .prompt_model import ComponentKind


def _read_rows(path: str) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def _need(row: dict[str, str], column: str, path: str) -> str:
    value = row.get(column)
    if value is None:
        raise SchemaError(f"{path}: missing column {column!r}")
    return value


def _cmd_grade(args: argparse.Namespace) -> int:
    pack = load_content_pack(args.scenario_pack) if args.scenario_pack else load_default_pack()
    rows = _read_rows(args.infile)
    out_rows: list[dict[str, object]] = []
    for row in rows:
        scenario = pack.scenario(_need(row, "scenario_id", args.infile))
        score = propose_scores(
            _need(row, "text", args.infile),
            scenario,
            grader_id=args.grader,
            prompt_ref=PromptRef(
                subject_id=_need(row, "subject_id", args.infile),
                phase=_need(row, "phase", args.infile),
                scenario_id=scenario.id,
            ),
        )
        if args.confirm:
            score = score.confirm(args.grader)
        for component in ComponentKind:
            out_rows.append(
                {
                    "subject_id": score.prompt_ref.subject_id,
                    "phase": score.prompt_ref.phase,
                    "scenario_id": score.prompt_ref.scenario_id,
                    "component": component.value,
                    "score": score.scores[component],
                    "draft": str(score.draft).lower(),
                    "grader_id": score.grader_id,
                }
            )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=[
                "subject_id",
                "phase",
                "scenario_id",
                "component",
                "score",
                "draft",
                "grader_id",
            ],
        )
        writer.writeheader()
        writer.writerows(out_rows)
    print(f"graded {len(rows)} prompt(s) -> {args.out}")
    return 0


def _scores_from_csv(path: str, expected_phase: str) -> list[RubricScore]:
    by_subject: dict[str, dict[ComponentKind, float]] = {}
    seen_phases: set[str] = set()
    for row in _read_rows(path):
        phase = row.get("phase", expected_phase)
        seen_phases.add(phase)
        if phase != expected_phase:
            continue
        subject = _need(row, "subject_id", path)
        component = ComponentKind(_need(row, "component", path))
        score = float(_need(row, "score", path))
        by_subject.setdefault(subject, {})[component] = score
    if not by_subject:
        found = ", ".join(sorted(seen_phases)) or "none"
        raise SchemaError(
            f"{path}: no rows with phase={expected_phase!r} (phases found: {found})"
        )
    return [
        RubricScore(
            scores=scores,
            grader_id="csv",
            prompt_ref=PromptRef(subject_id=subject, phase=expected_phase),
            draft=False,
        )
        for subject, scores in sorted(by_subject.items())
    ]


def _cmd_stats(args: argparse.Namespace) -> int:
    pre_path, post_path = args.scores
    scores = _scores_from_csv(pre_path, "pre") + _scores_from_csv(post_path, "post")
    rows = summarize(build_paired(scores), method=args.method)
    table = render_table(rows)
    if args.out:
        Path(args.out).write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def _labels_from_csv(path: str) -> list[tuple[tuple[str, str] | None, str]]:
    rows = _read_rows(path)
    out = []
    for i, row in enumerate(rows):
        label = row.get("label", row.get("score"))
        if label is None:
            raise SchemaError(f"{path}: need a 'label' (or 'score') column")
        key = None
        if "subject_id" in row and "component" in row:
            key = (row["subject_id"], row["component"])
        out.append((key, label))
    return out


def _cmd_kappa(args: argparse.Namespace) -> int:
    a = _labels_from_csv(args.a)
    b = _labels_from_csv(args.b)
    if all(k is not None for k, _ in a) and all(k is not None for k, _ in b):
        a.sort(key=lambda pair: pair[0])  # type: ignore[arg-type]
        b.sort(key=lambda pair: pair[0])  # type: ignore[arg-type]
        keys_a = [k for k, _ in a]
        keys_b = [k for k, _ in b]
        if keys_a != keys_b:
            raise SchemaError("the two files do not cover the same (subject, component) rows")
    result = cohen_kappa([v for _, v in a], [v for _, v in b])
    print(f"kappa = {result.value:.3f}  p = {result.p_value:.4f}  n = {result.n}")
    if result.note:
        print(f"note: {result.note}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfgrade", description="Grade written prompts and compute cohort statistics"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    grade = sub.add_parser("grade", help="rubric-score a CSV of written prompts")
    grade.add_argument("--in", dest="infile", required=True, help="prompts CSV")
    grade.add_argument("--scenario-pack", help="content pack (default: bundled)")
    grade.add_argument("--out", required=True, help="scores CSV to write")
    grade.add_argument(
        "--confirm",
        action="store_true",
        help="mark scores as human-confirmed instead of drafts",
    )
    grade.add_argument("--grader", default="rule-oracle", help="grader id to record")
    grade.set_defaults(fn=_cmd_grade)

    stats = sub.add_parser("stats", help="pre/post summary table with paired tests")
    stats.add_argument(
        "--scores", nargs=2, metavar=("PRE", "POST"), required=True,
        help="pre-phase and post-phase score CSVs",
    )
    stats.add_argument("--out", help="also write the table to this file")
    stats.add_argument(
        "--method", choices=("auto", "exact", "approx"), default="auto",
        help="paired-test p-value method",
    )
    stats.set_defaults(fn=_cmd_stats)

    kappa = sub.add_parser("kappa", help="inter-rater agreement between two label CSVs")
    kappa.add_argument("--a", required=True, help="first rater's CSV")
    kappa.add_argument("--b", required=True, help="second rater's CSV")
    kappa.set_defaults(fn=_cmd_kappa)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PromptForgeError as exc:
        print(f"ERROR [{exc.code}]: {exc.message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
