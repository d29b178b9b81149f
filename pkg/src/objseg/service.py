"""Session-oriented HTTP service for interactive annotation and propagation.

Wraps the streaming engine behind a small resource API: create a session,
upload frames, set or correct reference masks, then propagate forward while
progress events stream over a websocket.  Corrections re-propagate from the
edited frame with memories rebuilt from the references at or before it, so
earlier frames are never touched.

Resources:
    POST /sessions                      create a session (config overrides)
    GET  /sessions/{id}                 status snapshot for polling/resync
    POST /sessions/{id}/frames          append ordered frames (multipart PNG)
    PUT  /sessions/{id}/masks/{frame}   set a reference mask (PNG body)
    GET  /sessions/{id}/masks/{frame}   fetch a computed mask as PNG
    POST /sessions/{id}/propagate       start forward propagation
    WS   /sessions/{id}/events          ordered progress event stream

All error bodies are ``{"code": ..., "message": ...}``.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import threading
import uuid
from dataclasses import dataclass, field, fields

import numpy as np
from fastapi import FastAPI, Request, Response, UploadFile, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .errors import EngineError, FormatError, InputError
from .maskio import frame_from_bytes, mask_from_png_bytes, mask_png_bytes
from .model import EngineConfig, build_registry
from .registry import ParamRegistry
from .session import add_reference, create_session, step


class ApiError(Exception):
    """Request failure carried to the machine-readable error body."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def rle_encode(labels: np.ndarray) -> dict:
    """Row-major run-length encoding of a 2-D label map.

    Returns {"shape": [h, w], "values": [...], "lengths": [...]} with plain
    ints so the result is JSON-serializable; used to bound the size of
    per-frame preview messages.
    """
    if labels.ndim != 2:
        raise InputError(f"label map must be 2-D, got shape {labels.shape}")
    flat = np.asarray(labels).ravel()
    if flat.size == 0:
        return {"shape": list(labels.shape), "values": [], "lengths": []}
    breaks = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], breaks))
    lengths = np.diff(np.concatenate((starts, [flat.size])))
    return {
        "shape": [int(labels.shape[0]), int(labels.shape[1])],
        "values": [int(v) for v in flat[starts]],
        "lengths": [int(n) for n in lengths],
    }


def rle_decode(payload: dict) -> np.ndarray:
    """Inverse of rle_encode."""
    h, w = (int(v) for v in payload["shape"])
    values = payload["values"]
    lengths = payload["lengths"]
    if len(values) != len(lengths):
        raise FormatError("run-length payload has mismatched values/lengths")
    flat = np.repeat(np.asarray(values, dtype=np.int32), np.asarray(lengths, dtype=np.int64))
    if flat.size != h * w:
        raise FormatError(f"run-length payload covers {flat.size} pixels, expected {h * w}")
    return flat.reshape(h, w)


@dataclass
class SessionRecord:
    """Server-side state for one annotation session."""

    config: EngineConfig
    params: ParamRegistry
    frames: list = field(default_factory=list)
    references: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    status: str = "idle"
    progress: int = -1
    error: str = ""
    events: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def push_event(self, event: dict) -> None:
        event = dict(event)
        event["seq"] = len(self.events)
        self.events.append(event)

    def snapshot(self) -> dict:
        objects = set()
        for mask, _ in self.references.values():
            objects.update(int(v) for v in np.unique(mask) if v != 0)
        return {
            "status": self.status,
            "progress": self.progress,
            "error": self.error,
            "frame_count": len(self.frames),
            "reference_frames": sorted(self.references),
            "computed_frames": sorted(self.results),
            "object_ids": sorted(objects),
        }


def _apply_overrides(overrides: dict) -> EngineConfig:
    allowed = {f.name for f in fields(EngineConfig)}
    unknown = sorted(set(overrides) - allowed)
    if unknown:
        raise ApiError(400, "invalid", f"unknown config fields: {', '.join(unknown)}")
    try:
        config = EngineConfig(**overrides)
        config.validate()
    except (TypeError, EngineError) as exc:
        raise ApiError(400, "invalid", f"bad config: {exc}") from None
    return config


def _propagation_worker(record: SessionRecord, from_index: int) -> None:
    """Rebuild memories from references <= from_index, then stream forward.

    Runs on a daemon thread; every shared mutation happens under the record
    lock so status polls and the event socket always see a consistent view.
    """
    try:
        state = create_session(record.config, record.params)
        for idx in sorted(i for i in record.references if i <= from_index):
            mask, permanent = record.references[idx]
            add_reference(state, record.frames[idx], mask, permanent=permanent,
                          frame_index=idx)
        state.frame_index = from_index
        for idx in range(from_index + 1, len(record.frames)):
            labels = step(state, record.frames[idx])
            with record.lock:
                record.results[idx] = labels
                record.progress = idx
                record.push_event({"type": "progress", "frame_index": idx,
                                   "preview": rle_encode(labels)})
        with record.lock:
            record.status = "idle"
            record.push_event({"type": "complete", "from_index": from_index})
    except Exception as exc:  # surface engine failures to clients, never hang
        with record.lock:
            record.status = "error"
            record.error = str(exc)
            record.push_event({"type": "error", "message": str(exc)})


def create_app() -> FastAPI:
    app = FastAPI(title="objseg session service")
    # The annotation UI runs in a browser on a different origin than the
    # service, so preflighted requests must be answered permissively.
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    sessions: dict[str, SessionRecord] = {}
    registry_lock = threading.Lock()

    def get_record(session_id: str) -> SessionRecord:
        record = sessions.get(session_id)
        if record is None:
            raise ApiError(404, "not_found", f"unknown session {session_id}")
        return record

    @app.exception_handler(ApiError)
    async def on_api_error(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.post("/sessions")
    async def create(request: Request):
        body = await request.body()
        overrides = {}
        if body:
            try:
                overrides = json.loads(body)
            except ValueError as exc:
                raise ApiError(400, "invalid", f"bad JSON body: {exc}") from None
            if not isinstance(overrides, dict):
                raise ApiError(400, "invalid", "config overrides must be an object")
        config = _apply_overrides(overrides)
        with registry_lock:
            params = build_registry(config)
        session_id = uuid.uuid4().hex
        sessions[session_id] = SessionRecord(config=config, params=params)
        return {"session_id": session_id}

    @app.get("/sessions/{session_id}")
    async def status(session_id: str):
        record = get_record(session_id)
        with record.lock:
            return record.snapshot()

    @app.post("/sessions/{session_id}/frames")
    async def upload_frames(session_id: str, frames: list[UploadFile]):
        record = get_record(session_id)
        decoded = []
        for part in frames:
            data = await part.read()
            try:
                decoded.append(frame_from_bytes(data))
            except FormatError as exc:
                raise ApiError(400, "invalid", str(exc)) from None
        with record.lock:
            if record.status == "propagating":
                raise ApiError(409, "busy", "session is propagating")
            for image in decoded:
                if record.frames and image.shape != record.frames[0].shape:
                    raise ApiError(400, "invalid",
                                   f"frame size {image.shape[1:]} does not match "
                                   f"session size {record.frames[0].shape[1:]}")
                record.frames.append(image)
            count = len(record.frames)
        return {"frame_count": count}

    @app.put("/sessions/{session_id}/masks/{frame_index}")
    async def set_mask(session_id: str, frame_index: int, request: Request,
                       permanent: bool = False):
        record = get_record(session_id)
        body = await request.body()
        try:
            mask = mask_from_png_bytes(body)
        except FormatError as exc:
            raise ApiError(400, "invalid", str(exc)) from None
        with record.lock:
            if record.status == "propagating":
                raise ApiError(409, "busy", "session is propagating")
            if not 0 <= frame_index < len(record.frames):
                raise ApiError(404, "not_found", f"unknown frame {frame_index}")
            expected = record.frames[frame_index].shape[1:]
            if mask.shape != expected:
                raise ApiError(400, "invalid",
                               f"mask size {mask.shape} does not match frame size {expected}")
            record.references[frame_index] = (mask.copy(), bool(permanent))
            record.results[frame_index] = mask.copy()
            record.push_event({"type": "mask_set", "frame_index": frame_index,
                               "permanent": bool(permanent)})
        return {"frame_index": frame_index, "permanent": bool(permanent)}

    @app.get("/sessions/{session_id}/masks/{frame_index}")
    async def get_mask(session_id: str, frame_index: int):
        record = get_record(session_id)
        with record.lock:
            if not 0 <= frame_index < len(record.frames):
                raise ApiError(404, "not_found", f"unknown frame {frame_index}")
            labels = record.results.get(frame_index)
            if labels is None:
                raise ApiError(404, "not_found", f"frame {frame_index} not yet computed")
            payload = mask_png_bytes(labels)
        return Response(content=payload, media_type="image/png")

    @app.post("/sessions/{session_id}/propagate")
    async def propagate(session_id: str, request: Request):
        record = get_record(session_id)
        body = await request.body()
        from_index = 0
        if body:
            try:
                parsed = json.loads(body)
                from_index = int(parsed.get("from_index", 0))
            except (ValueError, AttributeError) as exc:
                raise ApiError(400, "invalid", f"bad propagate body: {exc}") from None
        with record.lock:
            if record.status == "propagating":
                raise ApiError(409, "busy", "session is already propagating")
            if not 0 <= from_index < len(record.frames):
                raise ApiError(400, "invalid",
                               f"from_index {from_index} outside 0..{len(record.frames) - 1}")
            if not any(i <= from_index for i in record.references):
                raise ApiError(409, "no_reference",
                               f"no reference mask at or before frame {from_index}")
            record.status = "propagating"
            record.error = ""
            total = len(record.frames) - from_index - 1
            record.push_event({"type": "start", "from_index": from_index, "total": total})
        worker = threading.Thread(target=_propagation_worker, args=(record, from_index),
                                  daemon=True)
        worker.start()
        return {"from_index": from_index, "total": total}

    @app.websocket("/sessions/{session_id}/events")
    async def events(websocket: WebSocket, session_id: str):
        record = sessions.get(session_id)
        if record is None:
            await websocket.close(code=4404)
            return
        await websocket.accept()
        cursor = 0
        try:
            while True:
                with record.lock:
                    batch = list(record.events[cursor:])
                if batch:
                    for event in batch:
                        await websocket.send_json(event)
                    cursor += len(batch)
                else:
                    await asyncio.sleep(0.02)
        except (WebSocketDisconnect, RuntimeError):
            return

    return app


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description="Run the annotation session service.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    args = parser.parse_args(argv)

    import uvicorn

    uvicorn.run(create_app(), host=args.host, port=args.port)


if __name__ == "__main__":
    main()
