"""Text-generation backends behind one request/response interface.

Three interchangeable implementations:

* ``StubBackend`` — deterministic template, for tests and dry runs.
* ``ReplayBackend`` — answers from a recorded JSONL fixture keyed by a
  request fingerprint, for reproducible offline pipelines.
* ``RemoteBackend`` — POSTs to a ``/v1/generate`` endpoint with retry and
  exponential backoff.

Callers build the prompt (see :func:`build_finding_prompt`) and backends send
it verbatim; nothing here rewrites prompt text.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .packing import PackedContext
from .slides import Patch

DEFAULT_MAX_TOKENS = 256
DEFAULT_TEMPERATURE = 0.0
DEFAULT_IN_FLIGHT = 4


class GenerationMode(str, Enum):
    FINDING_ONLY = "finding_only"
    LABEL_AND_FINDING = "label_and_finding"


class RetryableBackendError(RuntimeError):
    """Remote endpoint failed after retries; the request itself is fine."""


class FixtureMiss(KeyError):
    """Replay fixture has no entry for this request."""


@dataclass(frozen=True)
class DecodeParams:
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE


@dataclass(frozen=True)
class GenerationRequest:
    prompt_text: str
    mode: GenerationMode = GenerationMode.FINDING_ONLY
    image_payload: PackedContext | tuple[Patch, ...] | None = None
    decode_params: DecodeParams = field(default_factory=DecodeParams)

    def __post_init__(self):
        if self.mode is GenerationMode.FINDING_ONLY and not self.prompt_text.strip():
            raise ValueError("finding_only requests need a non-empty prompt")


@dataclass(frozen=True)
class GeneratedText:
    text: str
    backend_id: str
    latency_ms: float
    flags: tuple[str, ...] = ()


def build_finding_prompt(label: str) -> str:
    """Prompt for finding-only generation; the label appears verbatim once."""
    label = label.strip()
    if not label:
        raise ValueError("label must be non-empty")
    return f"LABEL: {label}\nFINDING:"


def _payload_summary(payload: PackedContext | tuple[Patch, ...] | None) -> dict:
    """Stable JSON-able description of the image payload for fingerprinting.

    Pixel/embedding values are deliberately excluded: at desk scale the
    (part, patch-grid) identity pins the content, and keeping floats out of
    the hash makes fixtures portable across numeric environments.
    """
    if payload is None:
        return {"kind": "none"}
    if isinstance(payload, PackedContext):
        return {
            "kind": "packed",
            "part_id": payload.part_id,
            "n_tokens": len(payload.token_sequence),
            "boundaries": list(payload.slide_boundaries),
        }
    return {
        "kind": "patches",
        "refs": [[p.slide_id, p.row, p.col] for p in payload],
    }


def request_fingerprint(req: GenerationRequest) -> str:
    """sha256 hex digest of the canonicalized request."""
    canon = {
        "prompt": req.prompt_text,
        "mode": req.mode.value,
        "payload": _payload_summary(req.image_payload),
        "max_tokens": req.decode_params.max_tokens,
        "temperature": req.decode_params.temperature,
    }
    blob = json.dumps(canon, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _payload_counts(payload: PackedContext | tuple[Patch, ...] | None) -> tuple[int, int]:
    if payload is None:
        return 0, 0
    if isinstance(payload, PackedContext):
        return len(payload.slide_boundaries), len(payload.token_sequence)
    return len({p.slide_id for p in payload}), len(payload)


def _label_of(prompt: str) -> str:
    """Undo the finding-prompt template if present; otherwise pass through."""
    if prompt.startswith("LABEL: ") and prompt.endswith("\nFINDING:"):
        return prompt[len("LABEL: ") : -len("\nFINDING:")]
    return prompt


class StubBackend:
    """Pure function of the request; never talks to anything."""

    backend_id = "stub"

    def generate(self, req: GenerationRequest) -> GeneratedText:
        n_slides, n_patches = _payload_counts(req.image_payload)
        text = f"{n_slides} slide(s); {n_patches} patch(es); label={_label_of(req.prompt_text)}"
        return GeneratedText(text=text, backend_id=self.backend_id, latency_ms=0.0)


class ReplayBackend:
    """Serves recorded responses; raises FixtureMiss on unknown requests."""

    backend_id = "replay"

    def __init__(self, fixture_path: str | Path):
        self._responses: dict[str, str] = {}
        with open(fixture_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                self._responses[obj["request_sha256"]] = obj["text"]

    def generate(self, req: GenerationRequest) -> GeneratedText:
        key = request_fingerprint(req)
        if key not in self._responses:
            raise FixtureMiss(key)
        text = self._responses[key]
        flags = ("empty_text",) if not text else ()
        return GeneratedText(
            text=text, backend_id=self.backend_id, latency_ms=0.0, flags=flags
        )


def record_fixture(
    entries: Iterable[tuple[GenerationRequest, str]], path: str | Path
) -> None:
    """Write a replay fixture: one {request_sha256, text} JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for req, text in entries:
            fh.write(
                json.dumps({"request_sha256": request_fingerprint(req), "text": text})
                + "\n"
            )


class RemoteBackend:
    """HTTP client for a generation endpoint; safe for concurrent calls."""

    backend_id = "remote"

    def __init__(
        self,
        base_url: str,
        retries: int = 3,
        backoff: float = 1.0,
        send_embeddings: bool = True,
    ):
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self.send_embeddings = send_embeddings

    def _body(self, req: GenerationRequest) -> dict:
        body: dict = {
            "prompt": req.prompt_text,
            "max_tokens": req.decode_params.max_tokens,
            "temperature": req.decode_params.temperature,
        }
        payload = req.image_payload
        if isinstance(payload, PackedContext):
            if not self.send_embeddings:
                raise ValueError("packed contexts can only be sent as embeddings")
            body["embeddings"] = [tok.vector.tolist() for tok in payload.token_sequence]
        elif payload is not None:
            from PIL import Image

            images = []
            for patch in payload:
                if patch.pixels is None:
                    raise ValueError("raw-image payload requires pixel data")
                buf = io.BytesIO()
                Image.fromarray(patch.pixels).save(buf, format="PNG")
                images.append(
                    {
                        "slide_id": patch.slide_id,
                        "row": patch.row,
                        "col": patch.col,
                        "png_base64": base64.b64encode(buf.getvalue()).decode("ascii"),
                    }
                )
            body["images"] = images
        return body

    def generate(self, req: GenerationRequest) -> GeneratedText:
        import httpx

        body = self._body(req)
        delay = self.backoff
        last_error: Exception | None = None
        start = time.monotonic()
        for attempt in range(self.retries):
            try:
                resp = httpx.post(
                    f"{self.base_url}/v1/generate", json=body, timeout=120.0
                )
                resp.raise_for_status()
                text = resp.json()["text"]
                latency = (time.monotonic() - start) * 1000.0
                flags = ("empty_text",) if not text else ()
                return GeneratedText(
                    text=text,
                    backend_id=self.backend_id,
                    latency_ms=latency,
                    flags=flags,
                )
            except (httpx.HTTPError, KeyError) as exc:
                last_error = exc
                if attempt < self.retries - 1:
                    time.sleep(delay)
                    delay *= 2
        raise RetryableBackendError(
            f"generation at {self.base_url} failed after {self.retries} attempts: {last_error}"
        )


def generate(req: GenerationRequest, backend) -> GeneratedText:
    return backend.generate(req)


def generate_many(
    requests: Sequence[GenerationRequest],
    backend,
    max_in_flight: int = DEFAULT_IN_FLIGHT,
) -> list[GeneratedText]:
    """Fan requests out through the backend, preserving input order."""
    if not requests:
        return []
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(backend.generate, requests))
