"""Command-line pipeline: tile, split, pack, generate, score, analyze, serve.

Every command is deterministic given its flags and seeds. Exit codes:
0 success, 2 validation/input error, 3 backend failure.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from collections import defaultdict
from pathlib import Path

import click

from . import baselines as bl
from . import dataset as ds
from . import generation as gen
from . import metrics as nm
from . import packing as pk
from . import slides as sl
from . import stats as st
from .fixtures import write_fixture

EXIT_VALIDATION = 2
EXIT_BACKEND = 3


def _guarded(fn):
    """Map domain errors to exit 2 and backend errors to exit 3."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (gen.RetryableBackendError, gen.FixtureMiss, pk.EncoderUnavailable) as exc:
            click.echo(f"backend failure: {exc}", err=True)
            sys.exit(EXIT_BACKEND)
        except (ValueError, KeyError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)

    return wrapper


def _load_config(ctx, param, value):
    if not value:
        return None
    try:
        import tomllib
    except ImportError:  # Python < 3.11
        import tomli as tomllib

    with open(value, "rb") as fh:
        ctx.default_map = tomllib.load(fh)
    return value


@click.group()
@click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False),
    callback=_load_config,
    expose_value=False,
    is_eager=True,
    help="TOML file with per-command defaults (flags still win).",
)
def main():
    """Multi-slide report generation pipeline and evaluation tooling."""


# --------------------------------------------------------------------------
# data preparation


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
@_guarded
def fixture(out_dir: str, seed: int):
    """Write the bundled synthetic corpus (slides, parts, refs, ratings)."""
    path = write_fixture(out_dir, seed=seed)
    click.echo(f"fixture written to {path} (seed={seed})")


def _find_manifests(root: Path) -> list[Path]:
    if root.is_file():
        return [root]
    found = sorted(root.rglob("manifest.json"))
    if not found:
        raise ValueError(f"no manifest.json files under {root}")
    return found


@main.command()
@click.option("--manifest", "manifest_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--min-tissue", default=sl.DEFAULT_MIN_TISSUE_FRACTION, show_default=True)
@click.option("--target-mpp", default=sl.DEFAULT_TARGET_MPP, show_default=True)
@click.option("--patch-size", default=sl.PATCH_SIZE, show_default=True)
@_guarded
def tile(manifest_dir, out_dir, min_tissue, target_mpp, patch_size):
    """Extract tissue patches from every slide manifest under a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for manifest in _find_manifests(Path(manifest_dir)):
        slide = sl.load_slide(manifest)
        level, factor = sl.select_working_level(slide, target_mpp=target_mpp)
        mask = sl.compute_tissue_mask(
            slide, level, sl.MaskParams(resample_factor=factor)
        )
        seq = sl.extract_patches(
            slide, mask, patch_size=patch_size, min_tissue_fraction=min_tissue
        )
        sl.save_patches(seq, out)
        click.echo(
            f"{slide.slide_id}: {len(seq)} patches "
            f"(level {level}, factor {factor:g})"
        )


def _patch_counts(patches_dir: Path, slide_ids) -> dict[str, int]:
    counts = {}
    for sid in slide_ids:
        index = patches_dir / sid / "index.jsonl"
        if not index.is_file():
            raise ValueError(f"no patch index for slide {sid} under {patches_dir}")
        with open(index, encoding="utf-8") as fh:
            counts[sid] = sum(1 for line in fh if line.strip())
    return counts


@main.command()
@click.option("--parts", "parts_path", required=True, type=click.Path(exists=True))
@click.option("--patches", "patches_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_guarded
def assemble(parts_path, patches_dir, out_dir):
    """Join parts with their tiled slides into an indexed bundle."""
    parts = ds.load_parts(parts_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "parts_index.jsonl", "w", encoding="utf-8") as fh:
        for part in parts:
            counts = _patch_counts(Path(patches_dir), part.slide_ids)
            fh.write(
                json.dumps(
                    {
                        "part_id": part.part_id,
                        "case_id": part.case_id,
                        "category": part.category.value,
                        "label": part.section.label,
                        "finding": part.section.finding,
                        "tissue": part.tissue,
                        "slides": [
                            {"slide_id": sid, "n_patches": counts[sid]}
                            for sid in part.slide_ids
                        ],
                        "total_patches": sum(counts.values()),
                    }
                )
                + "\n"
            )
    click.echo(f"assembled {len(parts)} parts -> {out / 'parts_index.jsonl'}")


def _parse_ratios(text: str) -> tuple[float, float, float]:
    values = tuple(float(x) for x in text.split(","))
    if len(values) != 3:
        raise ValueError("ratios must be three comma-separated numbers")
    return values  # type: ignore[return-value]


@main.command()
@click.option("--parts", "parts_path", required=True, type=click.Path(exists=True))
@click.option("--ratios", default="0.7,0.2,0.1", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--pinned", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_guarded
def split(parts_path, ratios, seed, pinned, out_path):
    """Assign cases to train/validation/test, balanced on part counts."""
    parts = ds.load_parts(parts_path)
    cases = ds.group_cases(parts)
    pinned_map = None
    if pinned:
        pinned_map = json.loads(Path(pinned).read_text(encoding="utf-8"))
    assignment = ds.split_dataset(
        cases, ratios=_parse_ratios(ratios), seed=seed, pinned=pinned_map
    )
    ds.save_split(assignment, out_path)
    tally = defaultdict(int)
    for name in assignment.assignment.values():
        tally[name] += 1
    click.echo(
        f"seed={seed} cases: " + ", ".join(f"{k}={tally[k]}" for k in ds.SPLIT_NAMES)
    )


# --------------------------------------------------------------------------
# packing and generation


def _load_sequences(patches_dir: Path, slide_ids) -> dict[str, sl.PatchSequence]:
    return {
        sid: sl.load_patch_index(patches_dir / sid, load_pixels=True)
        for sid in slide_ids
    }


def _packed_for_part(part, patches_dir, limit, cap, seed, dim):
    sampled = ds.sample_slides(part, cap=cap, seed=seed)
    per_slide = _load_sequences(Path(patches_dir), sampled)
    encoder = pk.ToyEncoder(dim=dim, seed=seed)
    return pk.pack_part(
        part,
        per_slide,
        label=part.section.label,
        limit=limit,
        encode_fn=encoder,
        slide_ids=sampled,
    )


@main.command()
@click.option("--parts", "parts_path", required=True, type=click.Path(exists=True))
@click.option("--patches", "patches_dir", required=True, type=click.Path(exists=True))
@click.option("--part", "part_id", required=True)
@click.option("--limit", default=pk.DEFAULT_TOKEN_LIMIT, show_default=True)
@click.option("--cap", default=ds.SLIDE_CAP, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--dim", default=pk.DEFAULT_EMBED_DIM, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_guarded
def pack(parts_path, patches_dir, part_id, limit, cap, seed, dim, out_path):
    """Pack one part's patches into a pooled-token context JSON."""
    parts = {p.part_id: p for p in ds.load_parts(parts_path)}
    if part_id not in parts:
        raise ValueError(f"unknown part {part_id}")
    packed = _packed_for_part(parts[part_id], patches_dir, limit, cap, seed, dim)
    pk.save_context(packed, out_path)
    click.echo(f"{part_id}: {packed.used}/{packed.limit} tokens -> {out_path}")


def _make_backend(backend: str, fixture_path, url):
    if backend == "stub":
        return gen.StubBackend()
    if backend == "replay":
        if not fixture_path:
            raise ValueError("--fixture is required for the replay backend")
        return gen.ReplayBackend(fixture_path)
    if not url:
        raise ValueError("--url is required for the remote backend")
    return gen.RemoteBackend(url)


def _split_parts(parts, split_name, split_file):
    if split_name == "all":
        return parts
    if not split_file:
        raise ValueError("--split-file is required unless --split all")
    assignment = ds.load_split(split_file)
    return [
        p for p in parts if assignment.assignment.get(p.case_id) == split_name
    ]


@main.command()
@click.option("--parts", "parts_path", required=True, type=click.Path(exists=True))
@click.option("--patches", "patches_dir", required=True, type=click.Path(exists=True))
@click.option(
    "--backend", type=click.Choice(["stub", "replay", "remote"]), default="stub",
    show_default=True,
)
@click.option(
    "--mode",
    type=click.Choice([m.value for m in gen.GenerationMode]),
    default=gen.GenerationMode.FINDING_ONLY.value,
    show_default=True,
)
@click.option(
    "--split", "split_name",
    type=click.Choice(list(ds.SPLIT_NAMES) + ["all"]), default="test",
    show_default=True,
)
@click.option("--split-file", type=click.Path(exists=True), default=None)
@click.option("--fixture", "fixture_path", type=click.Path(exists=True), default=None)
@click.option("--url", default=None)
@click.option("--limit", default=pk.DEFAULT_TOKEN_LIMIT, show_default=True)
@click.option("--cap", default=ds.SLIDE_CAP, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--dim", default=pk.DEFAULT_EMBED_DIM, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_guarded
def generate(
    parts_path, patches_dir, backend, mode, split_name, split_file,
    fixture_path, url, limit, cap, seed, dim, out_path,
):
    """Generate a multi-slide report text per part."""
    parts = _split_parts(ds.load_parts(parts_path), split_name, split_file)
    handle = _make_backend(backend, fixture_path, url)
    mode_enum = gen.GenerationMode(mode)
    rows = []
    for part in parts:
        packed = _packed_for_part(part, patches_dir, limit, cap, seed, dim)
        prompt = (
            gen.build_finding_prompt(part.section.label)
            if mode_enum is gen.GenerationMode.FINDING_ONLY
            else ""
        )
        req = gen.GenerationRequest(
            prompt_text=prompt, mode=mode_enum, image_payload=packed
        )
        result = handle.generate(req)
        rows.append(
            {
                "part_id": part.part_id,
                "source": "multi_slide",
                "text": result.text,
                "backend": result.backend_id,
                "flags": list(result.flags),
                "latency_ms": result.latency_ms,
            }
        )
    with open(out_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    click.echo(f"generated {len(rows)} parts (backend={backend}, seed={seed})")


def _note_for_slide(part, sid, patches_dir, handle, limit, seed, dim):
    """Single-slide finding-mode generation, used by both baselines."""
    per_slide = _load_sequences(Path(patches_dir), [sid])
    encoder = pk.ToyEncoder(dim=dim, seed=seed)
    packed = pk.pack_part(
        part,
        per_slide,
        label=part.section.label,
        limit=limit,
        encode_fn=encoder,
        slide_ids=[sid],
    )
    req = gen.GenerationRequest(
        prompt_text=gen.build_finding_prompt(part.section.label),
        image_payload=packed,
    )
    return handle.generate(req)


@main.group()
def baseline():
    """Single-slide baselines."""


def _baseline_common(fn):
    fn = click.option("--parts", "parts_path", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--patches", "patches_dir", required=True, type=click.Path(exists=True))(fn)
    fn = click.option(
        "--backend", "backend_name",
        type=click.Choice(["stub", "replay", "remote"]), default="stub",
        show_default=True,
    )(fn)
    fn = click.option("--fixture", "fixture_path", type=click.Path(exists=True), default=None)(fn)
    fn = click.option("--url", default=None)(fn)
    fn = click.option("--limit", default=pk.DEFAULT_TOKEN_LIMIT, show_default=True)(fn)
    fn = click.option("--seed", default=0, show_default=True)(fn)
    fn = click.option("--dim", default=pk.DEFAULT_EMBED_DIM, show_default=True)(fn)
    fn = click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))(fn)
    return fn


@baseline.command("ss-random")
@_baseline_common
@_guarded
def ss_random_cmd(
    parts_path, patches_dir, backend_name, fixture_path, url, limit, seed, dim, out_path
):
    """Generate from one uniformly chosen slide per part."""
    handle = _make_backend(backend_name, fixture_path, url)
    rows = []
    for part in ds.load_parts(parts_path):
        sid = bl.ss_random(part, seed=seed)
        result = _note_for_slide(part, sid, patches_dir, handle, limit, seed, dim)
        rows.append(
            {
                "part_id": part.part_id,
                "source": "ss_random",
                "slide_id": sid,
                "text": result.text,
                "flags": list(result.flags),
            }
        )
    with open(out_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    click.echo(f"ss-random over {len(rows)} parts (seed={seed})")


@baseline.command("build-icl")
@_baseline_common
@click.option("--refs", "refs_path", required=True, type=click.Path(exists=True))
@click.option("--n", "n_examples", default=bl.DEFAULT_ICL_COUNT, show_default=True)
@_guarded
def build_icl_cmd(
    parts_path, patches_dir, backend_name, fixture_path, url, limit, seed, dim,
    out_path, refs_path, n_examples,
):
    """Build selection examples from per-slide notes vs. reference findings."""
    handle = _make_backend(backend_name, fixture_path, url)
    refs = _read_refs(refs_path)
    pool = []
    for part in ds.load_parts(parts_path):
        if part.part_id not in refs:
            continue
        notes = [
            _note_for_slide(part, sid, patches_dir, handle, limit, seed, dim).text
            for sid in part.slide_ids
        ]
        pool.append((notes, refs[part.part_id]))
    examples = bl.select_icl_examples(pool, n=n_examples, seed=seed)
    bl.save_icl(examples, out_path)
    click.echo(f"wrote {len(examples)} selection examples (seed={seed})")


@baseline.command("ss-llm")
@_baseline_common
@click.option("--icl", "icl_path", required=True, type=click.Path(exists=True))
@_guarded
def ss_llm_cmd(
    parts_path, patches_dir, backend_name, fixture_path, url, limit, seed, dim,
    out_path, icl_path,
):
    """Select the best single-slide note with an in-context selection prompt."""
    handle = _make_backend(backend_name, fixture_path, url)
    icl = bl.load_icl(icl_path)
    rows = []
    for part in ds.load_parts(parts_path):
        notes = [
            bl.SlideNote(
                slide_id=sid,
                text=_note_for_slide(
                    part, sid, patches_dir, handle, limit, seed, dim
                ).text,
            )
            for sid in part.slide_ids
        ]
        result = bl.run_ssllm(notes, icl, handle)
        entry = bl.run_log_entry(part.part_id, [n.text for n in notes], result)
        entry["source"] = "ss_llm"
        entry["text"] = result.text
        rows.append(entry)
    with open(out_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    click.echo(f"ss-llm over {len(rows)} parts (seed={seed})")


# --------------------------------------------------------------------------
# scoring and analysis


def _read_refs(path) -> dict[str, str]:
    refs = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            refs[obj["part_id"]] = obj.get("text", obj.get("reference", ""))
    return refs


@main.command()
@click.option("--candidates", "cand_path", required=True, type=click.Path(exists=True))
@click.option("--refs", "refs_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_guarded
def score(cand_path, refs_path, out_path):
    """Score candidate texts against references (ROUGE-L, METEOR, average)."""
    refs = _read_refs(refs_path)
    n = 0
    with open(cand_path, encoding="utf-8") as fh, open(
        out_path, "w", encoding="utf-8"
    ) as out:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            part_id = obj["part_id"]
            if part_id not in refs:
                raise ValueError(f"no reference for part {part_id}")
            text = obj.get("text", obj.get("candidate", ""))
            ms = nm.avg_nlg(text, refs[part_id])
            out.write(
                json.dumps(
                    {
                        "part_id": part_id,
                        "source": obj.get("source", "candidate"),
                        "rouge_l_p": ms.rouge_l.precision,
                        "rouge_l_r": ms.rouge_l.recall,
                        "rouge_l_f": ms.rouge_l.f,
                        "meteor": ms.meteor,
                        "avg": ms.avg,
                    }
                )
                + "\n"
            )
            n += 1
    click.echo(f"scored {n} candidates")


def _read_scores(path) -> dict[tuple[str, str], float]:
    scores = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            scores[(obj["part_id"], obj.get("source", "candidate"))] = obj["avg"]
    return scores


@main.command()
@click.option("--ratings", "ratings_path", required=True, type=click.Path(exists=True))
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None)
@click.option("--parts", "parts_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--replicates", default=10000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@_guarded
def analyze(ratings_path, scores_path, parts_path, out_dir, replicates, seed):
    """Produce the full analysis report (JSON + CSV tables)."""
    ratings = st.load_ratings(ratings_path)
    nlg_scores = _read_scores(scores_path) if scores_path else None
    parts = ds.load_parts(parts_path) if parts_path else None
    report = st.build_analysis_report(
        ratings, nlg_scores=nlg_scores, parts=parts,
        replicates=replicates, seed=seed,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = st.report_to_json(report)
    (out / "report.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8"
    )

    with open(out / "sources.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "n_units", "mean", "ci_lo", "ci_hi", "need_more_info"])
        for src, stats in sorted(report.source_stats.items()):
            writer.writerow(
                [src, stats.n_units, f"{stats.mean:.4f}",
                 f"{stats.ci[0]:.4f}", f"{stats.ci[1]:.4f}", stats.need_more_info]
            )

    with open(out / "preference.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["source", "category", "proportion", "at_least_as_good", "ci_lo", "ci_hi"]
        )
        for src, summary in sorted(report.preferences.items()):
            for cat, prop in summary.proportions.items():
                writer.writerow(
                    [src, cat, f"{prop:.4f}", f"{summary.at_least_as_good:.4f}",
                     f"{summary.ci[0]:.4f}", f"{summary.ci[1]:.4f}"]
                )

    if report.confusions:
        with open(out / "confusion.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source", "rater_a_score", "rater_b_score", "count"])
            for src, grid in sorted(report.confusions.items()):
                for i, row in enumerate(grid):
                    for j, count in enumerate(row):
                        writer.writerow([src, i + 1, j + 1, count])

    for src, stats in sorted(report.source_stats.items()):
        click.echo(
            f"{src}: mean={stats.mean:.2f} "
            f"CI=[{stats.ci[0]:.2f},{stats.ci[1]:.2f}] n={stats.n_units}"
        )
    for src, summary in sorted(report.preferences.items()):
        click.echo(
            f"{src} vs original: at-least-as-good={summary.at_least_as_good:.0%} "
            f"CI=[{summary.ci[0]:.0%},{summary.ci[1]:.0%}]"
        )
    click.echo(f"report -> {out / 'report.json'} (seed={seed})")


# --------------------------------------------------------------------------
# serving


def _read_candidates(path) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = defaultdict(dict)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out[obj["part_id"]][obj["source"]] = obj["text"]
    return dict(out)


@main.command()
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@click.option("--parts", "parts_path", required=True, type=click.Path(exists=True))
@click.option("--candidates", "cand_path", required=True, type=click.Path(exists=True))
@click.option("--patches", "patches_dir", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--token", envvar="RATING_TOKEN", default=None)
@_guarded
def serve(data_dir, parts_path, cand_path, patches_dir, host, port, token):
    """Run the blinded rating service."""
    import uvicorn

    from .service import create_app

    parts = {p.part_id: p for p in ds.load_parts(parts_path)}
    candidates = _read_candidates(cand_path)
    app = create_app(
        data_dir, parts, candidates, patch_root=patches_dir, token=token
    )
    click.echo(f"rating service on {host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
