"""Bundled synthetic corpus: 12 small slides, 4 parts, and canned ratings.

The slides are painted pink-on-white blobs that behave like tissue under the
saturation/luminance mask; sizes are chosen so the default pipeline yields a
handful of 768x768 patches per slide. Part shapes cover the single-slide,
2-5, and 6-9 slide-count buckets, and the ratings file carries two raters
over four candidate sources per part, including one need-more-info entry.
Everything is seeded, so regenerating a fixture is byte-stable.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import Part, ReportSection, save_parts

GENERATED_SOURCES = ("multi_slide", "ss_random", "ss_llm")
ALL_SOURCES = ("original",) + GENERATED_SOURCES

_PART_SPECS = [
    # (part_id, case_id, slide_ids, tissue, label, finding)
    (
        "part-1",
        "case-a",
        ["slide-01"],
        "colorectal",
        "colon, biopsy",
        "tubular adenoma.",
    ),
    (
        "part-2",
        "case-b",
        ["slide-02", "slide-03", "slide-04"],
        "skin",
        "skin, left arm, excision",
        "invasive melanoma, breslow thickness 0.8 mm.",
    ),
    (
        "part-3",
        "case-c",
        [f"slide-{i:02d}" for i in range(6, 13)],
        "stomach",
        "stomach, biopsy",
        "mild chronic gastritis.",
    ),
    (
        "part-4",
        "case-b",
        ["slide-05"],
        "cervix",
        "cervix, biopsy",
        "benign squamous mucosa, no pathologic findings.",
    ),
]

# (rater, part) -> scores for original / multi_slide / ss_random / ss_llm
_RATINGS: list[tuple[str, str, dict]] = [
    ("rater-1", "part-1", {"original": 5, "multi_slide": 4, "ss_random": 4, "ss_llm": 3}),
    ("rater-2", "part-1", {"original": 5, "multi_slide": 5, "ss_random": 3, "ss_llm": 3}),
    ("rater-1", "part-2", {"original": 4, "multi_slide": 5, "ss_random": 3, "ss_llm": 4}),
    ("rater-2", "part-2", {"original": 5, "multi_slide": 4, "ss_random": 4, "ss_llm": 4}),
    ("rater-1", "part-3", {"original": 5, "multi_slide": 3, "ss_random": 2, "ss_llm": 2}),
    ("rater-2", "part-3", {"original": 4, "multi_slide": 4, "ss_random": 3, "ss_llm": 3}),
    (
        "rater-1",
        "part-4",
        {
            "original": 5,
            "multi_slide": 5,
            "ss_random": 4,
            "ss_llm": ("need_more_info", "need prior biopsy results"),
        },
    ),
    ("rater-2", "part-4", {"original": 4, "multi_slide": 4, "ss_random": 4, "ss_llm": 4}),
]


def _paint_slide(rng: np.random.Generator, size: int) -> np.ndarray:
    """White canvas with soft pink/purple elliptical blobs plus mild noise.

    Blobs are painted at 1/8 scale and upsampled — the tissue mask and patch
    features only need coarse structure, and this keeps fixture generation
    fast at the 3072px sizes.
    """
    low = max(size // 8, 64)
    img = np.full((low, low, 3), 255.0)
    yy, xx = np.mgrid[0:low, 0:low]
    n_blobs = int(rng.integers(6, 11))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.1 * low, 0.9 * low, size=2)
        ry, rx = rng.uniform(0.12 * low, 0.35 * low, size=2)
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        color = np.array(
            [
                rng.uniform(170, 225),
                rng.uniform(90, 150),
                rng.uniform(150, 210),
            ]
        )
        img[inside] = 0.35 * img[inside] + 0.65 * color
    full = np.asarray(
        Image.fromarray(img.astype(np.uint8)).resize((size, size), Image.BILINEAR),
        dtype=np.int16,
    )
    full += rng.integers(-3, 4, size=full.shape, dtype=np.int16)
    return np.clip(full, 0, 255).astype(np.uint8)


def _write_slide(
    slides_dir: Path,
    slide_id: str,
    rng: np.random.Generator,
    levels: list[tuple[int, float]],
) -> None:
    """levels: list of (size, mpp); coarser levels are derived by box filter."""
    slide_dir = slides_dir / slide_id
    slide_dir.mkdir(parents=True, exist_ok=True)
    base_size = levels[0][0]
    base = _paint_slide(rng, base_size)
    manifest_levels = []
    for i, (size, mpp) in enumerate(levels):
        if size == base_size:
            arr = base
        else:
            arr = np.asarray(
                Image.fromarray(base).resize((size, size), Image.BOX), dtype=np.uint8
            )
        name = f"level_{i}.png"
        Image.fromarray(arr).save(slide_dir / name, compress_level=1)
        manifest_levels.append(
            {"mpp": mpp, "width": size, "height": size, "image": name}
        )
    manifest = {"slide_id": slide_id, "stain": "H&E", "levels": manifest_levels}
    (slide_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2), encoding="utf-8"
    )


def fixture_parts() -> list[Part]:
    return [
        Part(
            case_id=case_id,
            part_id=part_id,
            slide_ids=tuple(slides),
            section=ReportSection(label=label, finding=finding),
            tissue=tissue,
        )
        for part_id, case_id, slides, tissue, label, finding in _PART_SPECS
    ]


def write_fixture(out_dir: str | Path, seed: int = 0) -> Path:
    """Materialize the full fixture tree under ``out_dir``.

    Layout: slides/<slide_id>/{manifest.json, level_*.png}, parts.jsonl,
    refs.jsonl ({part_id, text} ground-truth findings), ratings.jsonl.
    """
    out = Path(out_dir)
    slides_dir = out / "slides"
    slides_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    # slide-01: two-level pyramid (0.5 mpp base + 1.0 derived);
    # slide-02: fine-only single level, exercises the 2x area downsample;
    # everything else: plain 1536 @ 1.0.
    _write_slide(slides_dir, "slide-01", rng, [(3072, 0.5), (1536, 1.0)])
    _write_slide(slides_dir, "slide-02", rng, [(3072, 0.5)])
    for i in range(3, 13):
        _write_slide(slides_dir, f"slide-{i:02d}", rng, [(1536, 1.0)])

    parts = fixture_parts()
    save_parts(parts, out / "parts.jsonl")

    with open(out / "refs.jsonl", "w", encoding="utf-8") as fh:
        for part in parts:
            fh.write(
                json.dumps({"part_id": part.part_id, "text": part.section.finding})
                + "\n"
            )

    with open(out / "ratings.jsonl", "w", encoding="utf-8") as fh:
        for rater, part_id, scores in _RATINGS:
            for source in ALL_SOURCES:
                value = scores[source]
                comment = ""
                if isinstance(value, tuple):
                    value, comment = value
                fh.write(
                    json.dumps(
                        {
                            "part_id": part_id,
                            "rater_id": rater,
                            "text_source": source,
                            "score": value,
                            "comment": comment,
                        }
                    )
                    + "\n"
                )
    return out
