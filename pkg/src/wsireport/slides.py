"""Pyramidal slide manifests, tissue detection, and 768x768 patch extraction.

Slides are described by a JSON manifest pointing at one 8-bit RGB raster
(PNG or PPM) per pyramid level. The working level is the one closest to the
target resolution (default 1.0 micron/pixel, i.e. 10X), area-averaged down
when finer. Tissue is detected on a coarse grid by HSV saturation plus a
luminance band, and tiles are emitted on a (0,0)-anchored 768 grid in
row-major order; partial edge tiles are dropped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

PATCH_SIZE = 768
DEFAULT_TARGET_MPP = 1.0
DEFAULT_MPP_TOLERANCE = 0.05
DEFAULT_MIN_TISSUE_FRACTION = 0.1

# relative luminance weights (ITU-R BT.709)
_LUMA = np.array([0.2126, 0.7152, 0.0722])


class ManifestError(ValueError):
    """Slide manifest missing, malformed, or violating invariants."""


class NoSuitableLevel(ValueError):
    """No pyramid level is fine enough for the requested resolution."""


class MaskMismatch(ValueError):
    """Tissue mask does not correspond to the requested working level."""


@dataclass(frozen=True)
class Level:
    width: int
    height: int
    mpp: float
    image_path: Path


@dataclass(frozen=True)
class SlideImage:
    slide_id: str
    levels: tuple[Level, ...]
    stain: str = "H&E"

    def level_raster(self, index: int) -> np.ndarray:
        """Load one level as uint8 RGB; pixels are never cached on the slide."""
        level = self.levels[index]
        with Image.open(level.image_path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        if arr.shape[:2] != (level.height, level.width):
            raise ManifestError(
                f"{self.slide_id} level {index}: raster is {arr.shape[1]}x{arr.shape[0]}, "
                f"manifest says {level.width}x{level.height}"
            )
        return arr


@dataclass(frozen=True)
class MaskParams:
    downsample_factor: int = 16
    saturation_min: float = 0.08
    luminance_min: float = 0.05
    luminance_max: float = 0.98
    resample_factor: float = 1.0


@dataclass(frozen=True)
class TissueMask:
    grid: np.ndarray  # bool, (rows, cols)
    downsample_factor: int
    level_index: int
    resample_factor: float
    working_shape: tuple[int, int]  # (height, width) of the working image


@dataclass(frozen=True)
class Patch:
    slide_id: str
    row: int
    col: int
    origin: tuple[int, int]  # (x, y) at working level
    size: int
    tissue_fraction: float
    pixels: np.ndarray | None = None


@dataclass(frozen=True)
class PatchSequence:
    slide_id: str
    patches: tuple[Patch, ...]

    def __len__(self) -> int:
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)


def load_slide(manifest_path: str | Path) -> SlideImage:
    """Load and validate a slide manifest; pixel data stays on disk."""
    path = Path(manifest_path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc

    for key in ("slide_id", "levels"):
        if key not in obj:
            raise ManifestError(f"{path}: missing required field {key!r}")
    if not isinstance(obj["levels"], list) or not obj["levels"]:
        raise ManifestError(f"{path}: levels must be a non-empty list")

    levels = []
    for i, entry in enumerate(obj["levels"]):
        for key in ("mpp", "width", "height", "image"):
            if key not in entry:
                raise ManifestError(f"{path}: level {i} missing {key!r}")
        mpp = float(entry["mpp"])
        width, height = int(entry["width"]), int(entry["height"])
        if mpp <= 0:
            raise ManifestError(f"{path}: level {i} has non-positive mpp {mpp}")
        if width < 1 or height < 1:
            raise ManifestError(f"{path}: level {i} has empty dimensions")
        image_path = (path.parent / entry["image"]).resolve()
        if not image_path.is_file():
            raise ManifestError(f"{path}: level {i} raster missing: {image_path}")
        levels.append(Level(width=width, height=height, mpp=mpp, image_path=image_path))

    levels.sort(key=lambda lv: lv.mpp)
    return SlideImage(
        slide_id=str(obj["slide_id"]),
        levels=tuple(levels),
        stain=str(obj.get("stain", "H&E")),
    )


def select_working_level(
    slide: SlideImage,
    target_mpp: float = DEFAULT_TARGET_MPP,
    tolerance: float = DEFAULT_MPP_TOLERANCE,
) -> tuple[int, float]:
    """Pick the coarsest level at or below target resolution, plus its resample factor.

    The factor is target_mpp / level_mpp (area-average downsample); levels
    within the tolerance band above the target are taken as-is (factor 1.0).
    """
    limit = target_mpp * (1.0 + tolerance)
    best_index = None
    for i, level in enumerate(slide.levels):
        if level.mpp <= limit:
            if best_index is None or level.mpp > slide.levels[best_index].mpp:
                best_index = i
    if best_index is None:
        raise NoSuitableLevel(
            f"{slide.slide_id}: no level with mpp <= {limit:.4g} "
            f"(available: {[lv.mpp for lv in slide.levels]})"
        )
    factor = max(1.0, target_mpp / slide.levels[best_index].mpp)
    return best_index, factor


def area_downsample(image: np.ndarray, factor: float) -> np.ndarray:
    """Box-filter downsample by ``factor``; output dims = floor(dims / factor)."""
    if factor == 1.0:
        return image
    h, w = image.shape[:2]
    out_w, out_h = int(w / factor), int(h / factor)
    pil = Image.fromarray(image)
    return np.asarray(pil.resize((out_w, out_h), Image.BOX), dtype=np.uint8)


def working_image(slide: SlideImage, level_index: int, resample_factor: float) -> np.ndarray:
    return area_downsample(slide.level_raster(level_index), resample_factor)


def _cell_mean(field: np.ndarray, downsample: int) -> np.ndarray:
    """Mean of a 2-D field over a downsample grid; edge cells may be partial."""
    h, w = field.shape
    row_idx = np.arange(0, h, downsample)
    col_idx = np.arange(0, w, downsample)
    sums = np.add.reduceat(np.add.reduceat(field, row_idx, axis=0), col_idx, axis=1)
    row_sizes = np.minimum(row_idx + downsample, h) - row_idx
    col_sizes = np.minimum(col_idx + downsample, w) - col_idx
    return sums / np.outer(row_sizes, col_sizes)


def _cell_stats(image: np.ndarray, downsample: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell mean saturation and mean luminance at the given downsample."""
    rgb = image.astype(np.float64) / 255.0
    cmax = rgb.max(axis=2)
    cmin = rgb.min(axis=2)
    saturation = np.where(cmax > 0, (cmax - cmin) / np.maximum(cmax, 1e-12), 0.0)
    luminance = rgb @ _LUMA
    return _cell_mean(saturation, downsample), _cell_mean(luminance, downsample)


def compute_tissue_mask(
    slide: SlideImage, level_index: int, params: MaskParams | None = None
) -> TissueMask:
    """Boolean tissue grid over the working image.

    A cell is tissue iff its mean HSV saturation clears the threshold and
    its mean luminance falls inside the band (rejects glass background as
    well as pen/scanner black).
    """
    params = params or MaskParams()
    image = working_image(slide, level_index, params.resample_factor)
    sat, lum = _cell_stats(image, params.downsample_factor)
    grid = (
        (sat >= params.saturation_min)
        & (lum >= params.luminance_min)
        & (lum <= params.luminance_max)
    )
    return TissueMask(
        grid=grid,
        downsample_factor=params.downsample_factor,
        level_index=level_index,
        resample_factor=params.resample_factor,
        working_shape=image.shape[:2],
    )


def tile_tissue_fraction(mask: TissueMask, row: int, col: int, patch_size: int) -> float:
    """Area-weighted mean of mask cells over one tile's footprint."""
    ds = mask.downsample_factor
    y0, y1 = row * patch_size, (row + 1) * patch_size
    x0, x1 = col * patch_size, (col + 1) * patch_size
    r0, r1 = y0 // ds, min(math.ceil(y1 / ds), mask.grid.shape[0])
    c0, c1 = x0 // ds, min(math.ceil(x1 / ds), mask.grid.shape[1])
    if r1 <= r0 or c1 <= c0:
        return 0.0
    rows = np.arange(r0, r1)
    cols = np.arange(c0, c1)
    # pixel overlap of each mask cell with the tile, clipped to the image
    oy = np.minimum.reduce([(rows + 1) * ds, np.full_like(rows, y1),
                            np.full_like(rows, mask.working_shape[0])]) - np.maximum(
        rows * ds, y0
    )
    ox = np.minimum.reduce([(cols + 1) * ds, np.full_like(cols, x1),
                            np.full_like(cols, mask.working_shape[1])]) - np.maximum(
        cols * ds, x0
    )
    weights = np.outer(np.clip(oy, 0, None), np.clip(ox, 0, None)).astype(np.float64)
    total = weights.sum()
    if total == 0:
        return 0.0
    covered = (weights * mask.grid[r0:r1, c0:c1]).sum()
    return float(covered / total)


def extract_patches(
    slide: SlideImage,
    mask: TissueMask,
    patch_size: int = PATCH_SIZE,
    min_tissue_fraction: float = DEFAULT_MIN_TISSUE_FRACTION,
    load_pixels: bool = True,
) -> PatchSequence:
    """Emit non-overlapping tissue tiles in row-major order.

    The grid is anchored at (0,0) of the working image; partial tiles at the
    right/bottom borders are dropped so every patch is exactly
    patch_size x patch_size. Deterministic for identical inputs.
    """
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    expected = (
        math.ceil(mask.working_shape[0] / mask.downsample_factor),
        math.ceil(mask.working_shape[1] / mask.downsample_factor),
    )
    if mask.grid.shape != expected:
        raise MaskMismatch(
            f"mask grid {mask.grid.shape} does not cover working shape "
            f"{mask.working_shape} at downsample {mask.downsample_factor}"
        )

    image = None
    if load_pixels:
        image = working_image(slide, mask.level_index, mask.resample_factor)
        if image.shape[:2] != mask.working_shape:
            raise MaskMismatch("mask was computed for a different working image")

    h, w = mask.working_shape
    n_rows, n_cols = h // patch_size, w // patch_size
    patches = []
    for row in range(n_rows):
        for col in range(n_cols):
            fraction = tile_tissue_fraction(mask, row, col, patch_size)
            if fraction >= min_tissue_fraction:
                pixels = None
                if image is not None:
                    pixels = image[
                        row * patch_size : (row + 1) * patch_size,
                        col * patch_size : (col + 1) * patch_size,
                    ].copy()
                patches.append(
                    Patch(
                        slide_id=slide.slide_id,
                        row=row,
                        col=col,
                        origin=(col * patch_size, row * patch_size),
                        size=patch_size,
                        tissue_fraction=fraction,
                        pixels=pixels,
                    )
                )
    return PatchSequence(slide_id=slide.slide_id, patches=tuple(patches))


def save_patches(sequence: PatchSequence, out_dir: str | Path) -> Path:
    """Write patch PNGs plus an index.jsonl (pixels omitted) for one slide."""
    slide_dir = Path(out_dir) / sequence.slide_id
    slide_dir.mkdir(parents=True, exist_ok=True)
    index_path = slide_dir / "index.jsonl"
    with open(index_path, "w", encoding="utf-8") as fh:
        for patch in sequence:
            if patch.pixels is not None:
                # low compression: patch archives favour write speed over size
                Image.fromarray(patch.pixels).save(
                    slide_dir / f"patch_{patch.row}_{patch.col}.png",
                    compress_level=1,
                )
            fh.write(
                json.dumps(
                    {
                        "slide_id": patch.slide_id,
                        "row": patch.row,
                        "col": patch.col,
                        "origin": list(patch.origin),
                        "size": patch.size,
                        "tissue_fraction": patch.tissue_fraction,
                    }
                )
                + "\n"
            )
    return slide_dir


def load_patch_index(slide_dir: str | Path, load_pixels: bool = False) -> PatchSequence:
    """Rehydrate a PatchSequence from a slide's output directory."""
    slide_dir = Path(slide_dir)
    index_path = slide_dir / "index.jsonl"
    patches = []
    slide_id = slide_dir.name
    with open(index_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            slide_id = obj["slide_id"]
            pixels = None
            if load_pixels:
                png = slide_dir / f"patch_{obj['row']}_{obj['col']}.png"
                with Image.open(png) as img:
                    pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
            patches.append(
                Patch(
                    slide_id=obj["slide_id"],
                    row=obj["row"],
                    col=obj["col"],
                    origin=tuple(obj["origin"]),
                    size=obj["size"],
                    tissue_fraction=obj["tissue_fraction"],
                    pixels=pixels,
                )
            )
    return PatchSequence(slide_id=slide_id, patches=tuple(patches))
