"""Patch encoding, mean-pooling, and per-part context assembly under a token budget.

Every 768x768 patch becomes a 256-token grid (16x16 cells of 48x48 pixels); the
grid is mean-pooled to a single d-dimensional vector before packing, so a part
costs one token per patch plus a whitespace-token estimate for the text prompt.
The built-in encoder is a deterministic stand-in for a pretrained model: cell
statistics pushed through a fixed seeded projection. It preserves the shape
contract (256 tokens per patch) so packing logic downstream is exercised for
real. An HTTP client for an external encoder speaks the same TokenGrid shape.
"""

from __future__ import annotations

import base64
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .dataset import Part
from .slides import Patch, PatchSequence

TOKENS_PER_PATCH = 256
CELL_GRID = 16  # 16x16 cells per patch
CELL_SIZE = 48  # 768 / 16
N_CELL_FEATURES = 7  # mean RGB (3) + std RGB (3) + mean gradient magnitude (1)
DEFAULT_EMBED_DIM = 64
DEFAULT_TOKEN_LIMIT = 1_000_000

PatchRef = tuple[str, int, int]  # (slide_id, row, col)


class BudgetExceeded(ValueError):
    def __init__(self, used: int, limit: int):
        super().__init__(f"context needs {used} tokens but the limit is {limit}")
        self.used = used
        self.limit = limit


class EmptyContext(ValueError):
    """Every slide in the part produced zero patches."""


class EncoderUnavailable(RuntimeError):
    """External encoder endpoint failed; safe to retry."""


@dataclass(frozen=True)
class TokenGrid:
    patch_ref: PatchRef
    tokens: np.ndarray  # (256, d)

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] != TOKENS_PER_PATCH:
            raise ValueError(
                f"token grid must have {TOKENS_PER_PATCH} rows, got {self.tokens.shape}"
            )
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("token grid contains non-finite values")


@dataclass(frozen=True)
class PooledToken:
    patch_ref: PatchRef
    vector: np.ndarray  # (d,)


@dataclass(frozen=True)
class PackedContext:
    part_id: str
    prompt_text: str
    token_sequence: tuple[PooledToken, ...]
    slide_boundaries: tuple[int, ...]  # start offset of each slide's tokens
    used: int
    limit: int


def patch_ref(patch: Patch) -> PatchRef:
    return (patch.slide_id, patch.row, patch.col)


def cell_features(patch_pixels: np.ndarray) -> np.ndarray:
    """256x7 raw statistics, one row per cell in row-major cell order.

    Per cell: mean R,G,B; population std R,G,B; mean gradient magnitude of
    the channel-averaged intensity (central differences within the cell).
    """
    if patch_pixels.shape != (CELL_GRID * CELL_SIZE, CELL_GRID * CELL_SIZE, 3):
        raise ValueError(f"expected 768x768x3 patch, got {patch_pixels.shape}")
    pix = patch_pixels.astype(np.float64)
    # (16, 48, 16, 48, 3) -> cells indexed [cell_row, cell_col]
    cells = pix.reshape(CELL_GRID, CELL_SIZE, CELL_GRID, CELL_SIZE, 3)
    means = cells.mean(axis=(1, 3))  # (16, 16, 3)
    stds = cells.std(axis=(1, 3))  # (16, 16, 3)

    grad_means = np.empty((CELL_GRID, CELL_GRID))
    gray = pix.mean(axis=2)
    for r in range(CELL_GRID):
        for c in range(CELL_GRID):
            cell = gray[
                r * CELL_SIZE : (r + 1) * CELL_SIZE,
                c * CELL_SIZE : (c + 1) * CELL_SIZE,
            ]
            gy, gx = np.gradient(cell)
            grad_means[r, c] = np.hypot(gx, gy).mean()

    feats = np.concatenate(
        [means, stds, grad_means[:, :, None]], axis=2
    )  # (16, 16, 7)
    return feats.reshape(TOKENS_PER_PATCH, N_CELL_FEATURES)


class ToyEncoder:
    """Deterministic drop-in for a pretrained patch encoder.

    Projects the 7 per-cell statistics into ``dim`` dimensions with a constant
    matrix drawn once from a seeded generator, so identical patches always
    yield identical token grids.
    """

    def __init__(self, dim: int = DEFAULT_EMBED_DIM, seed: int = 0):
        self.dim = dim
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((N_CELL_FEATURES, dim))

    def __call__(self, patch: Patch) -> TokenGrid:
        if patch.pixels is None:
            raise ValueError(f"patch {patch_ref(patch)} has no pixel data")
        feats = cell_features(patch.pixels)
        return TokenGrid(patch_ref=patch_ref(patch), tokens=feats @ self.projection)


class HttpEncoder:
    """Client for an external encoder speaking the /encode wire protocol."""

    def __init__(self, base_url: str, retries: int = 3, backoff: float = 1.0):
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff

    def __call__(self, patch: Patch) -> TokenGrid:
        import httpx
        from PIL import Image

        if patch.pixels is None:
            raise ValueError(f"patch {patch_ref(patch)} has no pixel data")
        buf = io.BytesIO()
        Image.fromarray(patch.pixels).save(buf, format="PNG")
        payload = {
            "patch_id": f"{patch.slide_id}:{patch.row}:{patch.col}",
            "png_base64": base64.b64encode(buf.getvalue()).decode("ascii"),
        }
        delay = self.backoff
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = httpx.post(f"{self.base_url}/encode", json=payload, timeout=60.0)
                resp.raise_for_status()
                tokens = np.asarray(resp.json()["tokens"], dtype=np.float64)
                return TokenGrid(patch_ref=patch_ref(patch), tokens=tokens)
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
                if attempt < self.retries - 1:
                    time.sleep(delay)
                    delay *= 2
        raise EncoderUnavailable(f"encoder at {self.base_url} failed: {last_error}")


def encode_patch(patch: Patch, encoder: Callable[[Patch], TokenGrid]) -> TokenGrid:
    return encoder(patch)


def pool_tokens(grid: TokenGrid) -> PooledToken:
    """Mean over the 256 tokens, componentwise."""
    return PooledToken(patch_ref=grid.patch_ref, vector=grid.tokens.mean(axis=0))


def text_token_estimate(prompt: str) -> int:
    """Whitespace token count; guards the budget, nothing more."""
    return len(prompt.split())


def pack_part(
    part: Part,
    per_slide: Mapping[str, PatchSequence],
    label: str,
    limit: int = DEFAULT_TOKEN_LIMIT,
    encode_fn: Callable[[Patch], TokenGrid] | None = None,
    slide_ids: Iterable[str] | None = None,
) -> PackedContext:
    """Concatenate pooled patch tokens slide-by-slide with the label prompt.

    Slides are visited in ``slide_ids`` order (defaults to the part's slide
    order, i.e. post-sampling order); patches keep their row-major order
    within each slide. Token accounting happens before any encoding so an
    over-budget part fails fast.
    """
    if limit < 1:
        raise ValueError("token limit must be >= 1")
    encode_fn = encode_fn or ToyEncoder()
    ordered = tuple(slide_ids) if slide_ids is not None else part.slide_ids
    for sid in ordered:
        if sid not in per_slide:
            raise ValueError(f"part {part.part_id}: no patch sequence for slide {sid}")

    n_patches = sum(len(per_slide[sid]) for sid in ordered)
    if n_patches == 0:
        raise EmptyContext(f"part {part.part_id}: all slides are empty")
    used = n_patches + text_token_estimate(label)
    if used > limit:
        raise BudgetExceeded(used, limit)

    tokens: list[PooledToken] = []
    boundaries: list[int] = []
    for sid in ordered:
        boundaries.append(len(tokens))
        for patch in per_slide[sid]:
            tokens.append(pool_tokens(encode_fn(patch)))
    return PackedContext(
        part_id=part.part_id,
        prompt_text=label,
        token_sequence=tuple(tokens),
        slide_boundaries=tuple(boundaries),
        used=used,
        limit=limit,
    )


def estimate_tokens(packed: PackedContext) -> int:
    return packed.used


def context_to_json(packed: PackedContext) -> dict:
    return {
        "part_id": packed.part_id,
        "prompt": packed.prompt_text,
        "tokens": [tok.vector.tolist() for tok in packed.token_sequence],
        "slide_boundaries": list(packed.slide_boundaries),
    }


def save_context(packed: PackedContext, path: str | Path) -> None:
    Path(path).write_text(json.dumps(context_to_json(packed)), encoding="utf-8")
