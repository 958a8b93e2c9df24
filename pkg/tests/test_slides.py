from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst
from PIL import Image

import oracles
from wsireport.slides import (
    Level,
    ManifestError,
    MaskMismatch,
    MaskParams,
    NoSuitableLevel,
    SlideImage,
    TissueMask,
    area_downsample,
    compute_tissue_mask,
    extract_patches,
    load_patch_index,
    load_slide,
    save_patches,
    select_working_level,
    tile_tissue_fraction,
    _cell_stats,
)

PINK = (190, 120, 180)  # an eosin-ish colour that clears the saturation gate
WHITE = (247, 247, 247)


def _synthetic_slide(tmp_path: Path, pixels: np.ndarray, mpp=1.0, slide_id="syn"):
    """Write a one-level slide (image + manifest) and load it back."""
    img_path = tmp_path / f"{slide_id}.png"
    Image.fromarray(pixels).save(img_path)
    manifest = {
        "slide_id": slide_id,
        "levels": [
            {
                "width": pixels.shape[1],
                "height": pixels.shape[0],
                "mpp": mpp,
                "image": img_path.name,
            }
        ],
    }
    manifest_path = tmp_path / f"{slide_id}.json"
    manifest_path.write_text(json.dumps(manifest))
    return load_slide(manifest_path)


def _flat(shape, rgb):
    arr = np.zeros((*shape, 3), dtype=np.uint8)
    arr[:] = rgb
    return arr


# --------------------------------------------------------------------------
# manifests and level selection


def _levels(*mpps):
    return SlideImage(
        slide_id="lv",
        levels=tuple(
            Level(width=100, height=100, mpp=m, image_path=Path("/nonexistent"))
            for m in mpps
        ),
    )


def test_select_prefers_coarsest_level_within_tolerance():
    # 1.02 is inside the 5% band above 1.0 and coarser than 0.5: take it as-is
    index, factor = select_working_level(_levels(0.25, 0.5, 1.02))
    assert index == 2
    assert factor == 1.0


def test_select_downsamples_when_only_finer_levels_exist():
    index, factor = select_working_level(_levels(0.25, 0.5))
    assert index == 1
    assert factor == pytest.approx(2.0)


def test_select_skips_levels_above_tolerance():
    index, factor = select_working_level(_levels(0.5, 1.06))
    assert index == 0
    assert factor == pytest.approx(2.0)


def test_select_no_suitable_level():
    with pytest.raises(NoSuitableLevel):
        select_working_level(_levels(2.0, 4.0))


def test_manifest_dimension_mismatch_raises(tmp_path):
    pixels = _flat((64, 64), WHITE)
    img_path = tmp_path / "bad.png"
    Image.fromarray(pixels).save(img_path)
    manifest_path = tmp_path / "bad.json"
    manifest_path.write_text(
        json.dumps(
            {
                "slide_id": "bad",
                "levels": [
                    {"width": 99, "height": 64, "mpp": 1.0, "image": "bad.png"}
                ],
            }
        )
    )
    slide = load_slide(manifest_path)
    with pytest.raises(ManifestError):
        slide.level_raster(0)


def test_load_slide_orders_levels_by_mpp(tmp_path, corpus):
    slide = load_slide(Path(corpus) / "slides" / "slide-01" / "manifest.json")
    mpps = [lv.mpp for lv in slide.levels]
    assert mpps == sorted(mpps)


# --------------------------------------------------------------------------
# downsampling and masks


def test_area_downsample_halves_dimensions():
    arr = np.arange(16 * 16 * 3, dtype=np.uint8).reshape(16, 16, 3)
    out = area_downsample(arr, 2.0)
    assert out.shape == (8, 8, 3)


def test_area_downsample_factor_one_is_identity():
    arr = _flat((10, 12), PINK)
    assert area_downsample(arr, 1.0) is arr


def test_cell_stats_match_per_pixel_oracle():
    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, size=(70, 52, 3), dtype=np.uint8)
    sat, lum = _cell_stats(image, 16)
    # oracle: compute per-pixel saturation/luminance, then average per cell
    scaled = image.astype(np.float64) / 255.0
    mx, mn = scaled.max(axis=2), scaled.min(axis=2)
    pixel_sat = np.where(mx > 0, (mx - mn) / np.maximum(mx, 1e-12), 0.0)
    pixel_lum = scaled @ np.array([0.2126, 0.7152, 0.0722])
    assert np.allclose(sat, oracles.cell_means_brute(pixel_sat, 16), atol=1e-9)
    assert np.allclose(lum, oracles.cell_means_brute(pixel_lum, 16), atol=1e-9)
    assert sat.shape == (5, 4)  # ceil(70/16) x ceil(52/16)


def test_mask_all_white_is_empty(tmp_path):
    slide = _synthetic_slide(tmp_path, _flat((256, 256), WHITE))
    mask = compute_tissue_mask(slide, 0)
    assert not mask.grid.any()


def test_mask_all_pink_is_full(tmp_path):
    slide = _synthetic_slide(tmp_path, _flat((256, 256), PINK))
    mask = compute_tissue_mask(slide, 0)
    assert mask.grid.all()


def test_mask_black_scanner_border_rejected(tmp_path):
    pixels = _flat((256, 256), PINK)
    pixels[:, :128] = (4, 4, 4)  # below the luminance floor
    slide = _synthetic_slide(tmp_path, _flat((256, 256), PINK))
    dark = _synthetic_slide(tmp_path, pixels, slide_id="dark")
    assert compute_tissue_mask(slide, 0).grid.all()
    grid = compute_tissue_mask(dark, 0).grid
    assert not grid[:, : 128 // 16].any()
    assert grid[:, 128 // 16 :].all()


def test_mask_half_tissue(tmp_path):
    pixels = _flat((256, 256), WHITE)
    pixels[:, 128:] = PINK
    slide = _synthetic_slide(tmp_path, pixels)
    grid = compute_tissue_mask(slide, 0).grid
    assert grid.shape == (16, 16)
    assert not grid[:, :8].any()
    assert grid[:, 8:].all()


# --------------------------------------------------------------------------
# tile fractions


def _mask_from_grid(grid, working_shape, ds=16):
    return TissueMask(
        grid=grid,
        downsample_factor=ds,
        level_index=0,
        resample_factor=1.0,
        working_shape=working_shape,
    )


def test_tile_fraction_matches_per_pixel_oracle():
    rng = np.random.default_rng(2)
    for _ in range(25):
        h = int(rng.integers(40, 200))
        w = int(rng.integers(40, 200))
        ds = int(rng.choice([4, 8, 16]))
        grid = rng.random((-(-h // ds), -(-w // ds))) < 0.5
        mask = _mask_from_grid(grid, (h, w), ds)
        patch = int(rng.choice([24, 32, 48]))
        for row in range(h // patch):
            for col in range(w // patch):
                got = tile_tissue_fraction(mask, row, col, patch)
                want = oracles.tissue_fraction_brute(grid, (h, w), ds, row, col, patch)
                assert got == pytest.approx(want, abs=1e-12)


def test_tile_fraction_uniform_grid():
    grid = np.ones((8, 8), dtype=bool)
    mask = _mask_from_grid(grid, (128, 128))
    assert tile_tissue_fraction(mask, 0, 0, 64) == 1.0
    assert tile_tissue_fraction(_mask_from_grid(~grid, (128, 128)), 0, 0, 64) == 0.0


# --------------------------------------------------------------------------
# patch extraction


def test_full_tissue_square_yields_four_ordered_patches(tmp_path):
    slide = _synthetic_slide(tmp_path, _flat((1536, 1536), PINK))
    mask = compute_tissue_mask(slide, 0)
    seq = extract_patches(slide, mask)
    assert len(seq) == 4
    assert [(p.row, p.col) for p in seq] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert [p.origin for p in seq] == [(0, 0), (768, 0), (0, 768), (768, 768)]
    for p in seq:
        assert p.size == 768
        assert p.tissue_fraction == 1.0
        assert p.pixels.shape == (768, 768, 3)


def test_partial_border_tiles_dropped(tmp_path):
    # 2000x1700: floor(1700/768)=2 rows, floor(2000/768)=2 cols
    slide = _synthetic_slide(tmp_path, _flat((1700, 2000), PINK))
    mask = compute_tissue_mask(slide, 0)
    seq = extract_patches(slide, mask)
    assert len(seq) == 4
    assert all(p.size == 768 for p in seq)


def test_blank_slide_yields_empty_sequence(tmp_path):
    slide = _synthetic_slide(tmp_path, _flat((1536, 1536), WHITE))
    mask = compute_tissue_mask(slide, 0)
    seq = extract_patches(slide, mask)
    assert len(seq) == 0


def test_low_tissue_tiles_filtered(tmp_path):
    pixels = _flat((1536, 1536), WHITE)
    pixels[:64, :64] = PINK  # 64*64 / 768*768 ~ 0.7% of the top-left tile
    pixels[768:, 768:] = PINK  # bottom-right tile fully tissue
    slide = _synthetic_slide(tmp_path, pixels)
    mask = compute_tissue_mask(slide, 0)
    seq = extract_patches(slide, mask)
    assert [(p.row, p.col) for p in seq] == [(1, 1)]


def test_patch_pixels_match_source_region(tmp_path):
    rng = np.random.default_rng(4)
    pixels = rng.integers(60, 256, size=(1536, 1536, 3), dtype=np.uint8)
    slide = _synthetic_slide(tmp_path, pixels)
    mask = compute_tissue_mask(slide, 0)
    seq = extract_patches(slide, mask)
    for p in seq:
        x, y = p.origin
        assert np.array_equal(p.pixels, pixels[y : y + 768, x : x + 768])


def test_mask_shape_mismatch_rejected(tmp_path):
    slide = _synthetic_slide(tmp_path, _flat((1536, 1536), PINK))
    bad = _mask_from_grid(np.ones((4, 4), dtype=bool), (1536, 1536))
    with pytest.raises(MaskMismatch):
        extract_patches(slide, bad)


@given(
    hst.integers(min_value=100, max_value=900),
    hst.integers(min_value=100, max_value=900),
    hst.sampled_from([64, 96, 128]),
    hst.integers(min_value=0, max_value=2**16),
)
@settings(max_examples=30, deadline=None)
def test_extract_patch_invariants(h, w, patch, seed):
    rng = np.random.default_rng(seed)
    ds = 16
    grid = rng.random((-(-h // ds), -(-w // ds))) < 0.6
    mask = _mask_from_grid(grid, (h, w), ds)
    slide = SlideImage(slide_id="fuzz", levels=(Level(w, h, 1.0, Path("/nope")),))
    seq = extract_patches(slide, mask, patch_size=patch, load_pixels=False)
    keys = [(p.row, p.col) for p in seq]
    assert keys == sorted(keys)  # row-major
    assert len(set(keys)) == len(keys)  # no duplicates
    for p in seq:
        assert p.tissue_fraction >= 0.1
        assert p.origin == (p.col * patch, p.row * patch)
        # fully inside the working image
        assert p.origin[0] + patch <= w
        assert p.origin[1] + patch <= h


# --------------------------------------------------------------------------
# persistence


def test_save_and_load_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    pixels = rng.integers(60, 256, size=(1536, 1536, 3), dtype=np.uint8)
    slide = _synthetic_slide(tmp_path, pixels)
    mask = compute_tissue_mask(slide, 0)
    seq = extract_patches(slide, mask)
    out = tmp_path / "patches"
    save_patches(seq, out)
    loaded = load_patch_index(out / "syn", load_pixels=True)
    assert loaded.slide_id == "syn"
    assert len(loaded) == len(seq)
    for a, b in zip(seq, loaded):
        assert (a.row, a.col, a.origin, a.size) == (b.row, b.col, b.origin, b.size)
        assert a.tissue_fraction == pytest.approx(b.tissue_fraction)
        assert np.array_equal(a.pixels, b.pixels)  # PNG round trip is lossless


def test_load_index_without_pixels(tmp_path):
    slide = _synthetic_slide(tmp_path, _flat((1536, 768), PINK))
    mask = compute_tissue_mask(slide, 0)
    seq = extract_patches(slide, mask)
    out = tmp_path / "patches"
    save_patches(seq, out)
    loaded = load_patch_index(out / "syn")
    assert all(p.pixels is None for p in loaded)
    assert len(loaded) == 2
