"""End-to-end checks of the command-line surface, run against the bundled
synthetic corpus. Slow per-command steps reuse the session-scoped tile run."""

import json
from pathlib import Path

import pytest

from wsireport.cli import main


def read_jsonl(path):
    return [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]


def test_help_lists_commands(runner):
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    for cmd in ("fixture", "tile", "split", "generate", "baseline", "score",
                "analyze", "serve"):
        assert cmd in result.output


def test_fixture_command_matches_library_output(runner, tmp_path, corpus):
    result = runner.invoke(main, ["fixture", "--out", str(tmp_path), "--seed", "11"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "parts.jsonl").read_text() == (corpus / "parts.jsonl").read_text()
    assert (tmp_path / "refs.jsonl").is_file()
    assert (tmp_path / "ratings.jsonl").is_file()
    assert any((tmp_path / "slides").iterdir())


def test_tile_wrote_indexed_patches(corpus, patch_root):
    slide_dirs = sorted(d for d in patch_root.iterdir() if d.is_dir())
    assert slide_dirs
    total = 0
    for d in slide_dirs:
        index = d / "index.jsonl"
        assert index.is_file()
        rows = read_jsonl(index)
        total += len(rows)
        for row in rows:
            assert row["size"] == 768
            assert row["tissue_fraction"] >= 0.1
            assert (d / f"patch_{row['row']}_{row['col']}.png").is_file()
    assert total > 0


def test_assemble_counts_patches(runner, corpus, patch_root, tmp_path):
    result = runner.invoke(
        main,
        ["assemble", "--parts", str(corpus / "parts.jsonl"),
         "--patches", str(patch_root), "--out", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    rows = read_jsonl(tmp_path / "parts_index.jsonl")
    assert rows
    for row in rows:
        assert row["total_patches"] == sum(s["n_patches"] for s in row["slides"])
        assert row["category"] in ("P1", "P2-5", "P6-9", "P10+")


# --------------------------------------------------------------------------
# split


def test_split_is_deterministic(runner, corpus, tmp_path):
    out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (out_a, out_b):
        result = runner.invoke(
            main,
            ["split", "--parts", str(corpus / "parts.jsonl"),
             "--seed", "4", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
    assert out_a.read_text() == out_b.read_text()
    payload = json.loads(out_a.read_text())
    assert set(payload["assignment"].values()) <= {"train", "validation", "test"}


def test_split_respects_pin_file(runner, corpus, tmp_path):
    parts = read_jsonl(corpus / "parts.jsonl")
    case_id = parts[0]["case_id"]
    pin_path = tmp_path / "pins.json"
    pin_path.write_text(json.dumps({case_id: "test"}))
    out = tmp_path / "split.json"
    result = runner.invoke(
        main,
        ["split", "--parts", str(corpus / "parts.jsonl"), "--pinned", str(pin_path),
         "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(out.read_text())["assignment"][case_id] == "test"


def test_split_bad_ratios_exit_code(runner, corpus, tmp_path):
    result = runner.invoke(
        main,
        ["split", "--parts", str(corpus / "parts.jsonl"),
         "--ratios", "0.5,0.5,0.5", "--out", str(tmp_path / "s.json")],
    )
    assert result.exit_code == 2


# --------------------------------------------------------------------------
# packing and generation


def test_pack_writes_context_json(runner, corpus, patch_root, tmp_path):
    parts = read_jsonl(corpus / "parts.jsonl")
    pid = parts[0]["part_id"]
    out = tmp_path / "ctx.json"
    result = runner.invoke(
        main,
        ["pack", "--parts", str(corpus / "parts.jsonl"), "--patches", str(patch_root),
         "--part", pid, "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    ctx = json.loads(out.read_text())
    assert ctx["part_id"] == pid
    assert len(ctx["tokens"]) >= 1
    assert ctx["slide_boundaries"][0] == 0
    assert ctx["slide_boundaries"] == sorted(ctx["slide_boundaries"])


def test_generate_stub_all_parts(runner, corpus, patch_root, tmp_path):
    out = tmp_path / "gen.jsonl"
    result = runner.invoke(
        main,
        ["generate", "--parts", str(corpus / "parts.jsonl"),
         "--patches", str(patch_root), "--split", "all", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    rows = read_jsonl(out)
    parts = {p["part_id"]: p for p in read_jsonl(corpus / "parts.jsonl")}
    assert {r["part_id"] for r in rows} == set(parts)
    for row in rows:
        assert row["source"] == "multi_slide"
        assert row["backend"] == "stub"
        n_slides = len(parts[row["part_id"]]["slide_ids"])
        assert row["text"].startswith(f"{n_slides} slide(s);")
        assert row["text"].endswith(f"label={parts[row['part_id']]['label']}")


def test_generate_requires_split_file_for_named_split(runner, corpus, patch_root, tmp_path):
    result = runner.invoke(
        main,
        ["generate", "--parts", str(corpus / "parts.jsonl"),
         "--patches", str(patch_root), "--out", str(tmp_path / "gen.jsonl")],
    )
    assert result.exit_code == 2


def test_generate_replay_miss_is_backend_error(runner, corpus, patch_root, tmp_path):
    empty = tmp_path / "fixture.jsonl"
    empty.write_text("")
    result = runner.invoke(
        main,
        ["generate", "--parts", str(corpus / "parts.jsonl"),
         "--patches", str(patch_root), "--split", "all",
         "--backend", "replay", "--fixture", str(empty),
         "--out", str(tmp_path / "gen.jsonl")],
    )
    assert result.exit_code == 3


# --------------------------------------------------------------------------
# baselines


def test_baseline_pipeline_on_stub(runner, corpus, patch_root, tmp_path):
    parts_path = str(corpus / "parts.jsonl")
    common = ["--parts", parts_path, "--patches", str(patch_root)]

    rnd_out = tmp_path / "ss_random.jsonl"
    result = runner.invoke(
        main, ["baseline", "ss-random", *common, "--out", str(rnd_out)]
    )
    assert result.exit_code == 0, result.output
    rnd = read_jsonl(rnd_out)
    parts = {p["part_id"]: p for p in read_jsonl(corpus / "parts.jsonl")}
    for row in rnd:
        assert row["slide_id"] in parts[row["part_id"]]["slide_ids"]
        assert row["text"].startswith("1 slide(s);")

    icl_out = tmp_path / "icl.jsonl"
    result = runner.invoke(
        main,
        ["baseline", "build-icl", *common, "--refs", str(corpus / "refs.jsonl"),
         "--n", "3", "--out", str(icl_out)],
    )
    assert result.exit_code == 0, result.output
    assert len(read_jsonl(icl_out)) == 3

    sel_out = tmp_path / "ss_llm.jsonl"
    result = runner.invoke(
        main,
        ["baseline", "ss-llm", *common, "--icl", str(icl_out),
         "--out", str(sel_out)],
    )
    assert result.exit_code == 0, result.output
    rows = read_jsonl(sel_out)
    assert {r["part_id"] for r in rows} == set(parts)
    for row in rows:
        assert row["source"] == "ss_llm"
        assert row["text"] in row["notes"]  # always snaps onto a real note
        if len(parts[row["part_id"]]["slide_ids"]) == 1:
            assert row["flags"] == ["single_note"]


# --------------------------------------------------------------------------
# scoring and analysis


def test_score_identical_text_gets_full_rouge(runner, tmp_path):
    cands = tmp_path / "cands.jsonl"
    refs = tmp_path / "refs.jsonl"
    cands.write_text(json.dumps(
        {"part_id": "p1", "source": "x", "text": "mild chronic gastritis."}) + "\n")
    refs.write_text(json.dumps(
        {"part_id": "p1", "text": "mild chronic gastritis."}) + "\n")
    out = tmp_path / "scores.jsonl"
    result = runner.invoke(
        main, ["score", "--candidates", str(cands), "--refs", str(refs),
               "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    row = read_jsonl(out)[0]
    assert row["rouge_l_f"] == 1.0
    assert 0.9 < row["meteor"] <= 1.0
    assert row["avg"] == pytest.approx((row["rouge_l_f"] + row["meteor"]) / 2)


def test_score_missing_reference_is_validation_error(runner, tmp_path):
    cands = tmp_path / "cands.jsonl"
    refs = tmp_path / "refs.jsonl"
    cands.write_text(json.dumps({"part_id": "p1", "text": "x"}) + "\n")
    refs.write_text("")
    result = runner.invoke(
        main, ["score", "--candidates", str(cands), "--refs", str(refs),
               "--out", str(tmp_path / "s.jsonl")],
    )
    assert result.exit_code == 2


def test_analyze_produces_report_and_tables(runner, corpus, tmp_path):
    out_dir = tmp_path / "report"
    result = runner.invoke(
        main,
        ["analyze", "--ratings", str(corpus / "ratings.jsonl"),
         "--parts", str(corpus / "parts.jsonl"),
         "--out", str(out_dir), "--replicates", "500"],
    )
    assert result.exit_code == 0, result.output
    report = json.loads((out_dir / "report.json").read_text())
    assert "original" in report["source_stats"]
    for summary in report["preferences"].values():
        assert sum(summary["proportions"].values()) == pytest.approx(1.0)
        lo, hi = summary["ci"]
        assert lo <= summary["at_least_as_good"] <= hi
    assert (out_dir / "sources.csv").is_file()
    assert (out_dir / "preference.csv").is_file()
    assert "vs original: at-least-as-good=" in result.output


def test_analyze_deterministic_per_seed(runner, corpus, tmp_path):
    outs = []
    for name in ("r1", "r2"):
        out_dir = tmp_path / name
        result = runner.invoke(
            main,
            ["analyze", "--ratings", str(corpus / "ratings.jsonl"),
             "--out", str(out_dir), "--replicates", "400", "--seed", "9"],
        )
        assert result.exit_code == 0, result.output
        outs.append((out_dir / "report.json").read_text())
    assert outs[0] == outs[1]


# --------------------------------------------------------------------------
# config file


def test_config_file_supplies_defaults(runner, corpus, tmp_path):
    cfg = tmp_path / "pipeline.toml"
    cfg.write_text('[split]\nseed = 5\nratios = "0.6,0.3,0.1"\n')
    out_cfg = tmp_path / "from_config.json"
    result = runner.invoke(
        main,
        ["--config", str(cfg), "split", "--parts", str(corpus / "parts.jsonl"),
         "--out", str(out_cfg)],
    )
    assert result.exit_code == 0, result.output

    out_flags = tmp_path / "from_flags.json"
    result = runner.invoke(
        main,
        ["split", "--parts", str(corpus / "parts.jsonl"), "--seed", "5",
         "--ratios", "0.6,0.3,0.1", "--out", str(out_flags)],
    )
    assert result.exit_code == 0, result.output
    assert out_cfg.read_text() == out_flags.read_text()


def test_flags_override_config(runner, corpus, tmp_path):
    cfg = tmp_path / "pipeline.toml"
    cfg.write_text("[split]\nseed = 5\n")
    out = tmp_path / "s.json"
    result = runner.invoke(
        main,
        ["--config", str(cfg), "split", "--parts", str(corpus / "parts.jsonl"),
         "--seed", "8", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(out.read_text())["seed"] == 8
