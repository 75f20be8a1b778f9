"""Local HTTP service exposing decomposition and relighting.

Sessions are created by uploading an image + sky mask; the decomposition
runs once in a background thread and is immutable afterwards. Relighting
requests are read-only and safe to issue concurrently; while the
decomposition job is still running the session answers 409.
"""

from __future__ import annotations

import json
import tempfile
import threading
import uuid
from pathlib import Path

import cv2
import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from pydantic import BaseModel

from .imaging import ColorSpace, Image, load_image, load_mask, srgb_encode
from .decompose import (
    Decomposition,
    DivergenceError,
    OptimizerConfig,
    decompose,
    load_decomposition,
    save_decomposition,
)
from .relight import RelightRequest, relight
from .shlight import ShLighting, directional_lighting

PREVIEW_LAYERS = ("albedo", "normals", "shadow", "residual", "source", "mask")

PRESETS = [
    ("noon sun", directional_lighting((0.2, -0.9, -0.37), 1.1, (1.0, 0.98, 0.92), 0.35)),
    ("golden hour", directional_lighting((0.8, -0.25, -0.55), 0.9, (1.0, 0.72, 0.45), 0.25)),
    ("overcast", ShLighting(np.outer((0.85, 0.88, 0.95), np.eye(9)[0]))),
    ("moonlight", directional_lighting((-0.4, -0.8, -0.45), 0.25, (0.65, 0.75, 1.0), 0.08)),
]


class Session:
    def __init__(self, workdir: Path):
        self.dir = workdir
        self.status = "running"
        self.error: str | None = None
        self.decomposition: Decomposition | None = None
        self.source: Image | None = None


class SessionStore:
    """Maps opaque session ids to immutable decomposition results."""

    def __init__(self, root: Path):
        self.root = root
        self.sessions: dict[str, Session] = {}
        self.lock = threading.Lock()

    def create(self) -> tuple[str, Session]:
        sid = uuid.uuid4().hex[:12]
        workdir = self.root / sid
        workdir.mkdir(parents=True)
        session = Session(workdir)
        with self.lock:
            self.sessions[sid] = session
        return sid, session

    def get(self, sid: str) -> Session:
        with self.lock:
            session = self.sessions.get(sid)
        if session is None:
            raise HTTPException(404, f"unknown session {sid!r}")
        return session

    def ready(self, sid: str) -> Session:
        session = self.get(sid)
        if session.status == "running":
            raise HTTPException(409, "decomposition still running")
        if session.status == "failed":
            raise HTTPException(409, f"decomposition failed: {session.error}")
        return session


def _png_response(img: Image) -> Response:
    """8-bit PNG encoding of a preview or relit image."""
    if img.space is ColorSpace.LINEAR_RGB:
        enc = srgb_encode(img.data)
    else:
        enc = np.clip(img.data, 0.0, 1.0)
    q = np.round(enc * 255.0).astype(np.uint8)
    q = q[:, :, ::-1] if q.shape[2] == 3 else q[:, :, 0]
    ok, buf = cv2.imencode(".png", q)
    if not ok:
        raise HTTPException(500, "PNG encoding failed")
    return Response(content=buf.tobytes(), media_type="image/png")


def _layer_preview(session: Session, layer: str) -> Image:
    d = session.decomposition
    if layer == "albedo":
        return d.albedo
    if layer == "normals":
        disp = (d.normals.data * np.array([1.0, 1.0, -1.0]) + 1.0) / 2.0
        return Image(disp, ColorSpace.SCALAR)
    if layer == "shadow":
        return d.shadow
    if layer == "residual":
        return Image(np.clip(d.residual.data + 0.5, 0.0, 1.0), ColorSpace.SCALAR)
    if layer == "source":
        return session.source
    if layer == "mask":
        return Image(d.mask.values.astype(np.float64)[..., None], ColorSpace.SCALAR)
    raise HTTPException(404, f"unknown layer {layer!r}; expected one of {PREVIEW_LAYERS}")


class RelightBody(BaseModel):
    sh: list[float]
    shadow_mode: str = "none"
    use_residual: bool = False
    sky_fill: str = "flat_color"


def create_app(store_root=None, default_iters: int = 300,
               preload: list | None = None) -> FastAPI:
    root = Path(store_root) if store_root else Path(tempfile.mkdtemp(prefix="relumo-"))
    store = SessionStore(root)
    app = FastAPI(title="relumo")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.store = store

    for path in preload or []:
        sid, session = store.create()
        d = load_decomposition(path)
        session.decomposition = d
        session.source = d.reconstruct()
        session.status = "ready"

    def _run_decomposition(session: Session, cfg: OptimizerConfig):
        try:
            img = load_image(session.dir / "source.png")
            mask = load_mask(session.dir / "mask.png")
            d = decompose(img, mask, cfg=cfg)
            save_decomposition(d, session.dir / "decomposition")
            session.decomposition = d
            session.source = img
            session.status = "ready"
        except (DivergenceError, ValueError, OSError) as exc:
            session.error = str(exc)
            session.status = "failed"

    @app.post("/sessions")
    async def create_session(
        image: UploadFile = File(...),
        mask: UploadFile = File(...),
        iters: int = Form(default_iters),
    ):
        sid, session = store.create()
        (session.dir / "source.png").write_bytes(await image.read())
        (session.dir / "mask.png").write_bytes(await mask.read())
        cfg = OptimizerConfig(iterations=max(0, iters))
        threading.Thread(
            target=_run_decomposition, args=(session, cfg), daemon=True
        ).start()
        return {"id": sid}

    @app.get("/sessions/{sid}")
    def session_status(sid: str):
        session = store.get(sid)
        return {"id": sid, "status": session.status, "error": session.error}

    @app.get("/sessions/{sid}/decomposition/{layer}")
    def layer_png(sid: str, layer: str):
        session = store.ready(sid)
        return _png_response(_layer_preview(session, layer))

    @app.post("/sessions/{sid}/relight")
    def relight_session(sid: str, body: RelightBody):
        session = store.ready(sid)
        if len(body.sh) != 27:
            raise HTTPException(422, f"sh must have 27 entries, got {len(body.sh)}")
        try:
            lighting = ShLighting.from_flat(np.asarray(body.sh, dtype=np.float64))
            req = RelightRequest(
                decomposition=session.decomposition,
                target=lighting,
                use_residual=body.use_residual,
                shadow_mode=body.shadow_mode,
                sky_fill=body.sky_fill,
                cast_shadows=False,  # sessions carry no depth
            )
            out = relight(req)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return _png_response(out)

    @app.post("/sessions/{sid}/relight-envmap")
    async def relight_envmap(
        sid: str,
        envmap: UploadFile = File(...),
        align: str = Form("[1,0,0,0,1,0,0,0,1]"),
        shadow_mode: str = Form("none"),
        use_residual: bool = Form(False),
        sky_fill: str = Form("flat_color"),
    ):
        from .shlight import EnvMap

        session = store.ready(sid)
        suffix = Path(envmap.filename or "map.hdr").suffix or ".hdr"
        tmp = session.dir / f"upload-envmap{suffix}"
        tmp.write_bytes(await envmap.read())
        try:
            R = np.array(json.loads(align), dtype=np.float64).reshape(3, 3)
            env = EnvMap(load_image(tmp), R)
            req = RelightRequest(
                decomposition=session.decomposition,
                target=env,
                use_residual=use_residual,
                shadow_mode=shadow_mode,
                sky_fill=sky_fill,
                cast_shadows=False,
            )
            out = relight(req)
        except (ValueError, json.JSONDecodeError) as exc:
            raise HTTPException(422, str(exc))
        return _png_response(out)

    @app.get("/presets")
    def presets():
        return [
            {"name": name, "sh": lighting.to_flat().tolist()}
            for name, lighting in PRESETS
        ]

    @app.get("/sessions/{sid}/lighting")
    def session_lighting(sid: str):
        session = store.ready(sid)
        return {"sh": session.decomposition.lighting.to_flat().tolist()}

    return app
