"""Blinded rating sessions over HTTP, with an append-only JSONL journal.

Raters see candidate report texts under positional ids (``text-1`` ...) in a
seeded per-part permutation; the id-to-source mapping lives server-side only
and is applied at export time. Sessions are deterministic per
(rater_id, seed), so recreating one is idempotent, and every write is
re-playable from the journal after a restart.

Note: no ``from __future__ import annotations`` here — FastAPI needs real
(non-string) annotations to see the closure-local request models.
"""

import hashlib
import io
import json
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .dataset import Part
from .slides import load_patch_index
from .stats import NEED_MORE_INFO

MOSAIC_DOWNSAMPLE = 4


class SessionError(ValueError):
    pass


def session_id_for(rater_id: str, seed: int) -> str:
    return hashlib.sha256(f"{rater_id}:{seed}".encode("utf-8")).hexdigest()[:16]


@dataclass
class SessionState:
    session_id: str
    rater_id: str
    seed: int
    part_order: list[str]
    blind: dict[str, dict[str, str]]  # part_id -> blinded_id -> source
    texts: dict[str, dict[str, str]]  # part_id -> blinded_id -> candidate text
    ratings: dict[tuple[str, str], tuple[int | str, str]] = field(default_factory=dict)

    @property
    def total_tasks(self) -> int:
        return sum(len(m) for m in self.blind.values())


class RatingStore:
    """Owns session state and the per-session journals under ``data_dir``."""

    def __init__(
        self,
        data_dir: str | Path,
        parts: Mapping[str, Part],
        candidates: Mapping[str, Mapping[str, str]],
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.parts = dict(parts)
        self.candidates = {pid: dict(m) for pid, m in candidates.items()}
        self._lock = threading.Lock()
        self._sessions: dict[str, SessionState] = {}
        self._restore()

    # -- persistence ------------------------------------------------------

    def _journal_path(self, session_id: str) -> Path:
        return self.data_dir / f"session_{session_id}.jsonl"

    def _append(self, session_id: str, record: dict) -> None:
        with open(self._journal_path(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    def _restore(self) -> None:
        for path in sorted(self.data_dir.glob("session_*.jsonl")):
            state: SessionState | None = None
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    if rec["type"] == "session":
                        state = SessionState(
                            session_id=rec["session_id"],
                            rater_id=rec["rater_id"],
                            seed=rec["seed"],
                            part_order=list(rec["part_order"]),
                            blind={p: dict(m) for p, m in rec["blind"].items()},
                            texts=self._texts_for(rec["blind"]),
                        )
                    elif rec["type"] == "rating" and state is not None:
                        state.ratings[(rec["part_id"], rec["blinded_text_id"])] = (
                            rec["score"],
                            rec.get("comment", ""),
                        )
            if state is not None:
                self._sessions[state.session_id] = state

    def _texts_for(self, blind: Mapping[str, Mapping[str, str]]) -> dict:
        return {
            pid: {bid: self.candidates[pid][source] for bid, source in mapping.items()}
            for pid, mapping in blind.items()
        }

    # -- session lifecycle ------------------------------------------------

    def create_session(self, rater_id: str, seed: int) -> SessionState:
        sid = session_id_for(rater_id, seed)
        with self._lock:
            if sid in self._sessions:
                return self._sessions[sid]
            for pid, cands in self.candidates.items():
                if len(cands) < 2:
                    raise SessionError(f"part {pid} has fewer than 2 candidates")

            part_order = sorted(self.candidates)
            random.Random(f"{seed}:{rater_id}:order").shuffle(part_order)
            blind: dict[str, dict[str, str]] = {}
            for pid in part_order:
                sources = sorted(self.candidates[pid])
                random.Random(f"{seed}:{rater_id}:{pid}").shuffle(sources)
                blind[pid] = {
                    f"text-{i + 1}": source for i, source in enumerate(sources)
                }
            state = SessionState(
                session_id=sid,
                rater_id=rater_id,
                seed=seed,
                part_order=part_order,
                blind=blind,
                texts=self._texts_for(blind),
            )
            self._append(
                sid,
                {
                    "type": "session",
                    "session_id": sid,
                    "rater_id": rater_id,
                    "seed": seed,
                    "part_order": part_order,
                    "blind": blind,
                    "created_at": time.time(),
                },
            )
            self._sessions[sid] = state
            return state

    def get(self, session_id: str) -> SessionState:
        state = self._sessions.get(session_id)
        if state is None:
            raise KeyError(session_id)
        return state

    # -- task flow --------------------------------------------------------

    def next_task(self, session_id: str) -> dict:
        state = self.get(session_id)
        completed = len(state.ratings)
        for pid in state.part_order:
            blinded_ids = sorted(state.blind[pid])
            if all((pid, bid) in state.ratings for bid in blinded_ids):
                continue
            part = self.parts.get(pid)
            return {
                "done": False,
                "part_id": pid,
                "label": part.section.label if part else "",
                "slide_ids": list(part.slide_ids) if part else [],
                "candidates": [
                    {
                        "blinded_text_id": bid,
                        "text": state.texts[pid][bid],
                        "rated": (pid, bid) in state.ratings,
                    }
                    for bid in blinded_ids
                ],
                "completed": completed,
                "total": state.total_tasks,
            }
        return {"done": True, "completed": completed, "total": state.total_tasks}

    def submit(
        self,
        session_id: str,
        part_id: str,
        blinded_text_id: str,
        score: int | str,
        comment: str = "",
    ) -> dict:
        state = self.get(session_id)
        if part_id not in state.blind:
            raise SessionError(f"unknown part {part_id}")
        if blinded_text_id not in state.blind[part_id]:
            raise SessionError(f"unknown text id {blinded_text_id}")
        if isinstance(score, bool) or not (
            (isinstance(score, int) and 1 <= score <= 5) or score == NEED_MORE_INFO
        ):
            raise SessionError(f"score must be 1..5 or {NEED_MORE_INFO!r}")
        if score == NEED_MORE_INFO and not comment.strip():
            raise SessionError("a brief comment is required with need_more_info")
        with self._lock:
            key = (part_id, blinded_text_id)
            record = {
                "type": "rating",
                "part_id": part_id,
                "blinded_text_id": blinded_text_id,
                "score": score,
                "comment": comment,
                "submitted_at": time.time(),
                "revision": key in state.ratings,
            }
            self._append(session_id, record)
            state.ratings[key] = (score, comment)
            return {
                "ok": True,
                "completed": len(state.ratings),
                "total": state.total_tasks,
            }

    def export(self, session_id: str) -> str:
        """Unblinded JSONL, deterministic order (session part order, then id)."""
        state = self.get(session_id)
        lines = []
        for pid in state.part_order:
            for bid in sorted(state.blind[pid]):
                if (pid, bid) not in state.ratings:
                    continue
                score, comment = state.ratings[(pid, bid)]
                lines.append(
                    json.dumps(
                        {
                            "part_id": pid,
                            "rater_id": state.rater_id,
                            "text_source": state.blind[pid][bid],
                            "score": score,
                            "comment": comment,
                        }
                    )
                )
        return "\n".join(lines) + ("\n" if lines else "")


def render_mosaic(patch_root: str | Path, slide_id: str) -> bytes:
    """Reassemble a slide's patches into one image, downsampled ×4, as PNG."""
    from PIL import Image

    slide_dir = Path(patch_root) / slide_id
    if not (slide_dir / "index.jsonl").is_file():
        raise FileNotFoundError(slide_id)
    seq = load_patch_index(slide_dir, load_pixels=True)
    if len(seq) == 0:
        raise FileNotFoundError(f"{slide_id}: no patches")
    size = seq.patches[0].size
    n_rows = max(p.row for p in seq) + 1
    n_cols = max(p.col for p in seq) + 1
    canvas = np.full((n_rows * size, n_cols * size, 3), 255, dtype=np.uint8)
    for patch in seq:
        if patch.pixels is not None:
            canvas[
                patch.row * size : (patch.row + 1) * size,
                patch.col * size : (patch.col + 1) * size,
            ] = patch.pixels
    img = Image.fromarray(canvas)
    img = img.resize(
        (canvas.shape[1] // MOSAIC_DOWNSAMPLE, canvas.shape[0] // MOSAIC_DOWNSAMPLE),
        Image.BOX,
    )
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def create_app(
    data_dir: str | Path,
    parts: Mapping[str, Part],
    candidates: Mapping[str, Mapping[str, str]],
    patch_root: str | Path | None = None,
    token: str | None = None,
):
    """FastAPI app over a RatingStore; pass ``token`` to require bearer auth."""
    from fastapi import FastAPI, HTTPException, Request, Response
    from pydantic import BaseModel

    store = RatingStore(data_dir, parts, candidates)
    app = FastAPI(title="rating-service")
    app.state.store = store

    def check_auth(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad token")

    class SessionCreate(BaseModel):
        rater_id: str
        seed: int = 0

    class RatingSubmit(BaseModel):
        part_id: str
        blinded_text_id: str
        score: int | str
        comment: str = ""

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions")
    def create_session(body: SessionCreate, request: Request):
        check_auth(request)
        try:
            state = store.create_session(body.rater_id, body.seed)
        except SessionError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {
            "session_id": state.session_id,
            "rater_id": state.rater_id,
            "total": state.total_tasks,
            "completed": len(state.ratings),
        }

    @app.get("/sessions/{session_id}/next")
    def next_task(session_id: str, request: Request):
        check_auth(request)
        try:
            return store.next_task(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")

    @app.post("/sessions/{session_id}/ratings")
    def submit(session_id: str, body: RatingSubmit, request: Request):
        check_auth(request)
        try:
            return store.submit(
                session_id, body.part_id, body.blinded_text_id, body.score, body.comment
            )
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")
        except SessionError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str, request: Request):
        check_auth(request)
        try:
            payload = store.export(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")
        return Response(content=payload, media_type="application/x-ndjson")

    @app.get("/parts/{part_id}/mosaic/{slide_id}")
    def mosaic(part_id: str, slide_id: str, request: Request):
        check_auth(request)
        part = store.parts.get(part_id)
        if part is None or slide_id not in part.slide_ids:
            raise HTTPException(status_code=404, detail="unknown part/slide")
        if patch_root is None:
            raise HTTPException(status_code=404, detail="no imagery configured")
        try:
            png = render_mosaic(patch_root, slide_id)
        except FileNotFoundError:
            raise HTTPException(status_code=404, detail="no patches for slide")
        return Response(content=png, media_type="image/png")

    return app
