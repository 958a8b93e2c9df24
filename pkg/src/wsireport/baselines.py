"""Single-slide baselines: random slide choice and LLM-based note selection.

SS-Random picks one slide per part with a seeded uniform draw. SS-LLM
generates a note per slide elsewhere, then asks a text model to pick the
best note via a 50-shot selection prompt; the in-context examples answer
with the note whose averaged ROUGE-L/METEOR score against the ground truth
is highest, and responses are snapped back onto the note list (verbatim
match first, metric-nearest fallback otherwise).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .dataset import Part
from .generation import GenerationRequest, GeneratedText
from .metrics import avg_nlg

DEFAULT_ICL_COUNT = 50

PROMPT_HEADER = (
    "You are given a set of diagnosis notes for a set of pathology slides from a case.\n"
    "Output a version that is most consistent and clinically significant.\n"
    "If there is only one note, output that one.\n"
    "Follow the examples below. Be sure to end with the <END> tag as in the examples."
)

END_TAG = "<END>"

FLAG_MISSING_END_TAG = "missing_end_tag"
FLAG_METRIC_FALLBACK = "metric_fallback"
FLAG_SINGLE_NOTE = "single_note"

_RESERVED_PREFIXES = ("*Example", "*Note", "*Response*", END_TAG)


class SelectionFailed(ValueError):
    """The model produced nothing usable to select a note from."""


@dataclass(frozen=True)
class SlideNote:
    slide_id: str
    text: str


@dataclass(frozen=True)
class IclExample:
    notes: tuple[str, ...]
    response: str

    def __post_init__(self):
        if self.response not in self.notes:
            raise ValueError("response must be one of the notes")


@dataclass(frozen=True)
class SelectionResult:
    text: str
    flags: tuple[str, ...] = ()


def ss_random(part: Part, seed: int = 0) -> str:
    """Uniform seeded slide choice; stable per (part_id, seed)."""
    rng = random.Random(f"{seed}:{part.part_id}")
    return part.slide_ids[rng.randrange(len(part.slide_ids))]


def best_note(notes: Sequence[str], ground_truth: str) -> str:
    """Note with the highest averaged NLG score against the ground truth.

    Ties break toward the earliest note in input order.
    """
    if not notes:
        raise ValueError("need at least one note")
    best_idx = 0
    best_score = -1.0
    for i, note in enumerate(notes):
        score = avg_nlg(note, ground_truth).avg
        if score > best_score:
            best_idx, best_score = i, score
    return notes[best_idx]


def select_icl_examples(
    val_parts: Sequence[tuple[Sequence[str], str]],
    n: int = DEFAULT_ICL_COUNT,
    seed: int = 0,
) -> list[IclExample]:
    """Build up to ``n`` selection examples from (notes, ground_truth) pairs.

    Parts are drawn by seeded sample without replacement; if fewer than ``n``
    are available, all are used (shuffled).
    """
    if not val_parts:
        raise ValueError("validation pool is empty")
    rng = random.Random(seed)
    indices = list(range(len(val_parts)))
    rng.shuffle(indices)
    chosen = indices[:n]
    examples = []
    for idx in chosen:
        notes, gt = val_parts[idx]
        examples.append(
            IclExample(notes=tuple(notes), response=best_note(notes, gt))
        )
    return examples


def _check_block_text(kind: str, text: str) -> None:
    if not text.strip():
        raise ValueError(f"{kind} text is empty")
    for line in text.split("\n"):
        if not line.strip():
            raise ValueError(f"{kind} text contains a blank line")
        if any(line.startswith(p) for p in _RESERVED_PREFIXES):
            raise ValueError(f"{kind} text collides with prompt markers: {line!r}")


def _note_lines(i: int, text: str) -> list[str]:
    first, *rest = text.split("\n")
    return [f"*Note {i}* {first}", *rest]


def build_ssllm_prompt(notes: Sequence[str], icl: Sequence[IclExample]) -> str:
    """Selection prompt: header, worked example blocks, then the open query."""
    if not notes:
        raise ValueError("query notes must be non-empty")
    for ex in icl:
        for note in ex.notes:
            _check_block_text("note", note)
        _check_block_text("response", ex.response)
    for note in notes:
        _check_block_text("note", note)

    lines: list[str] = [PROMPT_HEADER, ""]
    for k, ex in enumerate(icl, start=1):
        lines.append(f"*Example {k}*")
        for i, note in enumerate(ex.notes, start=1):
            lines.extend(_note_lines(i, note))
        lines.append("*Response*")
        lines.extend(ex.response.split("\n"))
        lines.append(END_TAG)
        lines.append("")
    lines.append(f"*Example {len(icl) + 1}*")
    for i, note in enumerate(notes, start=1):
        lines.extend(_note_lines(i, note))
    lines.append("*Response*")
    return "\n".join(lines) + "\n"


def parse_ssllm_prompt(prompt: str) -> tuple[list[IclExample], list[str]]:
    """Inverse of :func:`build_ssllm_prompt` for prompts in the same grammar.

    Returns the worked examples and the query notes of the final (unanswered)
    block. Raises ValueError on malformed prompts.
    """
    lines = prompt.split("\n")
    blocks: list[dict] = []
    current: dict | None = None
    collecting: list[str] | None = None
    for line in lines:
        if line.startswith("*Example"):
            current = {"notes": [], "response": None}
            blocks.append(current)
            collecting = None
        elif current is None:
            continue  # header
        elif line.startswith("*Note"):
            marker_end = line.index("*", 1)
            text = line[marker_end + 1 :].lstrip(" ")
            current["notes"].append([text])
            collecting = current["notes"][-1]
        elif line.startswith("*Response*"):
            current["response"] = []
            collecting = current["response"]
        elif line == END_TAG:
            collecting = None
        elif line.strip() == "":
            collecting = None
        elif collecting is not None:
            collecting.append(line)
        else:
            raise ValueError(f"unexpected line outside any block: {line!r}")

    if not blocks:
        raise ValueError("no example blocks found")
    examples = []
    for block in blocks[:-1]:
        if block["response"] is None or not block["response"]:
            raise ValueError("worked example lacks a response")
        examples.append(
            IclExample(
                notes=tuple("\n".join(n) for n in block["notes"]),
                response="\n".join(block["response"]),
            )
        )
    query = blocks[-1]
    if query["response"]:
        raise ValueError("final block must be unanswered")
    return examples, ["\n".join(n) for n in query["notes"]]


def parse_ssllm_response(raw: str, notes: Sequence[str]) -> SelectionResult:
    """Snap a model response onto the note list.

    Text at or after the end tag is discarded. An exact (stripped) match wins;
    otherwise the metric-nearest note is returned with a fallback flag, since
    the selection task never calls for synthesizing new text.
    """
    if not notes:
        raise ValueError("need at least one note to select from")
    flags: list[str] = []
    if END_TAG in raw:
        cleaned = raw.split(END_TAG, 1)[0]
    else:
        cleaned = raw
        flags.append(FLAG_MISSING_END_TAG)
    cleaned = cleaned.strip()
    if not cleaned:
        raise SelectionFailed("empty response")
    for note in notes:
        if cleaned == note.strip():
            return SelectionResult(text=note, flags=tuple(flags))
    flags.append(FLAG_METRIC_FALLBACK)
    nearest = best_note(notes, cleaned)
    return SelectionResult(text=nearest, flags=tuple(flags))


def run_ssllm(
    notes: Sequence[SlideNote],
    icl: Sequence[IclExample],
    backend,
) -> SelectionResult:
    """Full selection round for one part.

    A single-note part short-circuits without touching the backend, matching
    the instruction baked into the prompt header.
    """
    if not notes:
        raise ValueError("part has no notes")
    texts = [n.text for n in notes]
    if len(texts) == 1:
        return SelectionResult(text=texts[0], flags=(FLAG_SINGLE_NOTE,))
    prompt = build_ssllm_prompt(texts, icl)
    req = GenerationRequest(prompt_text=prompt)
    out: GeneratedText = backend.generate(req)
    result = parse_ssllm_response(out.text, texts)
    return SelectionResult(text=result.text, flags=result.flags + out.flags)


def save_icl(examples: Sequence[IclExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps({"notes": list(ex.notes), "response": ex.response}) + "\n"
            )


def load_icl(path: str | Path) -> list[IclExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            examples.append(
                IclExample(notes=tuple(obj["notes"]), response=obj["response"])
            )
    return examples


def run_log_entry(
    part_id: str, notes: Sequence[str], result: SelectionResult
) -> dict:
    return {
        "part_id": part_id,
        "notes": list(notes),
        "selected": result.text,
        "flags": list(result.flags),
    }


def save_run_log(entries: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry) + "\n")
