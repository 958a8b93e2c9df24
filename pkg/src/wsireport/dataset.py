"""Case/part/report data model, splitting, and the slide-sampling cap.

Reports are treated as sequences of part-level sections, each a label
(anatomical site + procedure) plus a finding (bottom-line diagnosis). Cases
group parts; the split operation keeps every part of a case in one split
while balancing part counts against the requested ratios.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

LABEL_PREFIX = "LABEL:"
FINDING_PREFIX = "FINDING:"

SLIDE_CAP = 50


class PartCategory(Enum):
    P1 = "P1"
    P2_5 = "P2-5"
    P6_9 = "P6-9"
    P10plus = "P10+"


@dataclass(frozen=True)
class ReportSection:
    label: str
    finding: str
    parse_warning: bool = False


@dataclass(frozen=True)
class Part:
    case_id: str
    part_id: str
    slide_ids: tuple[str, ...]
    section: ReportSection
    tissue: str | None = None
    severity: str | None = None

    def __post_init__(self):
        if not self.slide_ids:
            raise ValueError(f"part {self.part_id}: slide_ids must be non-empty")
        if len(set(self.slide_ids)) != len(self.slide_ids):
            raise ValueError(f"part {self.part_id}: duplicate slide ids")

    @property
    def category(self) -> PartCategory:
        return categorize_part(len(self.slide_ids))


@dataclass(frozen=True)
class Case:
    case_id: str
    parts: tuple[Part, ...]

    @property
    def n_parts(self) -> int:
        return len(self.parts)


@dataclass(frozen=True)
class SplitAssignment:
    seed: int
    ratios: tuple[float, float, float]
    assignment: dict[str, str]  # case_id -> train | validation | test

    def split_of(self, case_id: str) -> str:
        return self.assignment[case_id]


SPLIT_NAMES = ("train", "validation", "test")


def categorize_part(n_slides: int) -> PartCategory:
    """Bucket a part by slide count: 1, 2-5, 6-9, 10+."""
    if n_slides < 1:
        raise ValueError(f"n_slides must be >= 1, got {n_slides}")
    if n_slides == 1:
        return PartCategory.P1
    if n_slides <= 5:
        return PartCategory.P2_5
    if n_slides <= 9:
        return PartCategory.P6_9
    return PartCategory.P10plus


def parse_report(report_text: str) -> list[ReportSection]:
    """Split report text into part-level (label, finding) sections.

    Canonical blocks use explicit LABEL:/FINDING: markers. Free text without
    markers (e.g. a generated report whose first line is the label sentence)
    is split at the first newline. Blocks that cannot be parsed are kept
    with an empty finding and flagged, never dropped.
    """
    text = report_text.strip()
    if not text:
        return []
    if LABEL_PREFIX not in text:
        head, _, rest = text.partition("\n")
        label = head.strip()
        finding = rest.strip()
        if not label:
            return [ReportSection(label=text, finding="", parse_warning=True)]
        return [ReportSection(label=label, finding=finding)]

    sections: list[ReportSection] = []
    blocks = []
    current: list[str] = []
    for line in text.splitlines():
        if line.strip().startswith(LABEL_PREFIX) and current:
            blocks.append("\n".join(current))
            current = []
        current.append(line)
    if current:
        blocks.append("\n".join(current))

    for block in blocks:
        block = block.strip()
        if not block:
            continue
        if not block.startswith(LABEL_PREFIX):
            sections.append(ReportSection(label=block, finding="", parse_warning=True))
            continue
        body = block[len(LABEL_PREFIX) :]
        if FINDING_PREFIX in body:
            label_part, _, finding_part = body.partition(FINDING_PREFIX)
            label = label_part.strip()
            finding = finding_part.strip()
            if label:
                sections.append(ReportSection(label=label, finding=finding))
            else:
                sections.append(
                    ReportSection(label=block, finding="", parse_warning=True)
                )
        else:
            label = body.strip()
            if label:
                sections.append(
                    ReportSection(label=label, finding="", parse_warning=True)
                )
            else:
                sections.append(
                    ReportSection(label=block, finding="", parse_warning=True)
                )
    return sections


def serialize_report(sections: Sequence[ReportSection]) -> str:
    """Inverse of parse_report for well-formed section lists."""
    blocks = []
    for s in sections:
        blocks.append(f"{LABEL_PREFIX} {s.label}\n{FINDING_PREFIX} {s.finding}")
    return "\n".join(blocks)


def split_dataset(
    cases: Sequence[Case],
    ratios: Sequence[float] = (0.7, 0.2, 0.1),
    seed: int = 0,
    pinned: Mapping[str, str] | None = None,
) -> SplitAssignment:
    """Assign whole cases to train/validation/test, balancing part counts.

    Pinned cases keep their given split. The remainder is shuffled by the
    seed (after a canonical sort by case_id, so input order is irrelevant)
    and assigned greedily to whichever split is furthest below its target
    part count.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    pinned = dict(pinned or {})
    by_id = {c.case_id: c for c in cases}
    if len(by_id) != len(cases):
        raise ValueError("duplicate case ids")
    for case_id, split in pinned.items():
        if case_id not in by_id:
            raise ValueError(f"pinned case {case_id!r} not in dataset")
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")

    total_parts = sum(c.n_parts for c in cases)
    targets = {name: ratio * total_parts for name, ratio in zip(SPLIT_NAMES, ratios)}
    filled = {name: 0 for name in SPLIT_NAMES}
    assignment: dict[str, str] = {}

    for case_id, split in sorted(pinned.items()):
        assignment[case_id] = split
        filled[split] += by_id[case_id].n_parts

    free = sorted(cid for cid in by_id if cid not in pinned)
    rng = random.Random(seed)
    rng.shuffle(free)
    for case_id in free:
        deficits = {name: targets[name] - filled[name] for name in SPLIT_NAMES}
        best = max(SPLIT_NAMES, key=lambda name: deficits[name])
        assignment[case_id] = best
        filled[best] += by_id[case_id].n_parts

    return SplitAssignment(seed=seed, ratios=ratios, assignment=assignment)


def sample_slides(part: Part, cap: int = SLIDE_CAP, seed: int = 0) -> list[str]:
    """Up to ``cap`` slide ids, sampled without replacement, original order kept.

    Deterministic per (part_id, seed) regardless of platform: the RNG is
    keyed on the string form of both.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    ids = list(part.slide_ids)
    if len(ids) <= cap:
        return ids
    rng = random.Random(f"{seed}:{part.part_id}")
    chosen = set(rng.sample(range(len(ids)), cap))
    return [sid for i, sid in enumerate(ids) if i in chosen]


def group_cases(parts: Iterable[Part]) -> list[Case]:
    """Group a flat part list into cases, ordered by case id."""
    buckets: dict[str, list[Part]] = {}
    for p in parts:
        buckets.setdefault(p.case_id, []).append(p)
    cases = []
    for case_id in sorted(buckets):
        case_parts = sorted(buckets[case_id], key=lambda p: p.part_id)
        seen = {p.part_id for p in case_parts}
        if len(seen) != len(case_parts):
            raise ValueError(f"case {case_id}: duplicate part ids")
        cases.append(Case(case_id=case_id, parts=tuple(case_parts)))
    return cases


def part_to_json(part: Part) -> dict:
    obj = {
        "case_id": part.case_id,
        "part_id": part.part_id,
        "slide_ids": list(part.slide_ids),
        "label": part.section.label,
        "finding": part.section.finding,
    }
    if part.tissue is not None:
        obj["tissue"] = part.tissue
    if part.severity is not None:
        obj["severity"] = part.severity
    return obj


def part_from_json(obj: Mapping) -> Part:
    return Part(
        case_id=obj["case_id"],
        part_id=obj["part_id"],
        slide_ids=tuple(obj["slide_ids"]),
        section=ReportSection(label=obj["label"], finding=obj.get("finding", "")),
        tissue=obj.get("tissue"),
        severity=obj.get("severity"),
    )


def load_parts(path) -> list[Part]:
    parts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                parts.append(part_from_json(json.loads(line)))
    return parts


def save_parts(parts: Iterable[Part], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in parts:
            fh.write(json.dumps(part_to_json(p)) + "\n")


def save_split(split: SplitAssignment, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "seed": split.seed,
                "ratios": list(split.ratios),
                "assignment": split.assignment,
            },
            fh,
            indent=2,
            sort_keys=True,
        )


def load_split(path) -> SplitAssignment:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return SplitAssignment(
        seed=obj["seed"],
        ratios=tuple(obj["ratios"]),
        assignment=dict(obj["assignment"]),
    )
