"""Interactive annotation service.

One directory per session under the data dir; the append-only label log plus
the immutable session config fully determine state, so sessions survive
restarts and replay to the identical next suggestion. The cached
segmentation is derived, never authoritative.
"""

from __future__ import annotations

import io
import json
import os
import threading
import time
import uuid
import zipfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from . import __version__
from .augment import augment, render_overlay
from .errors import PointsegError
from .proposals import FallbackConfig, ProposalSet, generate_fallback_proposals, load_proposals
from .raster import LabelSchema, PointLabelSet, PixelCoord, RasterImage
from .sampler import (
    RNG_ALGORITHM,
    Phase,
    SamplerConfig,
    SamplerState,
    make_rng,
    sample_background_points,
    select_next_active_point,
)
from .superpixels import SuperpixelMap, slic_segment

DEFAULT_MAX_UPLOAD = 32 * 1024 * 1024


@dataclass(frozen=True)
class ServiceConfig:
    data_dir: Path = Path("pointseg-sessions")
    host: str = "127.0.0.1"
    port: int = 8008
    max_upload_bytes: int = DEFAULT_MAX_UPLOAD
    overlay_opacity: float = 0.5
    static_dir: Path | None = None  # optional built web client

    @staticmethod
    def load(path) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text()) if path else {}
        cfg = ServiceConfig(
            data_dir=Path(raw.get("data_dir", "pointseg-sessions")),
            host=raw.get("host", "127.0.0.1"),
            port=int(raw.get("port", 8008)),
            max_upload_bytes=int(raw.get("max_upload_bytes", DEFAULT_MAX_UPLOAD)),
            overlay_opacity=float(raw.get("overlay_opacity", 0.5)),
            static_dir=Path(raw["static_dir"]) if raw.get("static_dir") else None,
        )
        return cfg.with_env_overrides()

    def with_env_overrides(self) -> "ServiceConfig":
        cfg = self
        if os.environ.get("POINTSEG_DATA_DIR"):
            cfg = replace(cfg, data_dir=Path(os.environ["POINTSEG_DATA_DIR"]))
        if os.environ.get("POINTSEG_HOST"):
            cfg = replace(cfg, host=os.environ["POINTSEG_HOST"])
        if os.environ.get("POINTSEG_PORT"):
            cfg = replace(cfg, port=int(os.environ["POINTSEG_PORT"]))
        if os.environ.get("POINTSEG_MAX_UPLOAD"):
            cfg = replace(cfg, max_upload_bytes=int(os.environ["POINTSEG_MAX_UPLOAD"]))
        return cfg

    def with_overrides(self, **kw) -> "ServiceConfig":
        return replace(self, **kw)


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class Session:
    """In-memory view of one persisted session."""

    def __init__(self, root: Path):
        self.root = root
        self.lock = threading.Lock()
        cfg = json.loads((root / "config.json").read_text())
        self.id = root.name
        self.budget = int(cfg["budget"])
        self.seed = int(cfg["seed"])
        self.mode = cfg["mode"]
        self.slic_k = int(cfg["slic_k"])
        self.slic_compactness = float(cfg["slic_compactness"])
        self.slic_iters = int(cfg["slic_iters"])
        self.provider_mode = cfg["provider_mode"]
        self.created_at = cfg["created_at"]
        self.schema = LabelSchema.load(root / "schema.json")
        self.image = RasterImage.load(root / "image.png")
        self.proposals = load_proposals(root / "proposals.json")
        self.sampler_config = SamplerConfig(
            budget=self.budget,
            lambda_=float(cfg["lambda"]),
            random_ratio=float(cfg["random_ratio"]),
            seed=self.seed,
            strategy=cfg.get("strategy", "dynamic"),
        )
        self._sp: SuperpixelMap | None = None
        self._segmentation = None
        self.state = SamplerState(self.sampler_config, self.proposals, self.image.dims)
        for e in self._read_labels():
            self.state.commit(PixelCoord(e[0], e[1]), e[2])

    @property
    def labels_path(self) -> Path:
        return self.root / "labels.csv"

    def _read_labels(self) -> list[tuple[int, int, int]]:
        if not self.labels_path.exists():
            return []
        out = []
        for line in self.labels_path.read_text().splitlines()[1:]:
            if line.strip():
                x, y, label = (int(v) for v in line.split(","))
                out.append((x, y, label))
        return out

    @property
    def updated_at(self) -> float:
        src = self.labels_path if self.labels_path.exists() else self.root / "config.json"
        return src.stat().st_mtime

    def point_count(self) -> int:
        return len(self.state.selected)

    def suggestion(self) -> dict:
        """Pending point: argmax in the active phase, a seeded draw from the
        coverage complement in the background phase. Pure function of state."""
        phase = self.state.phase
        if phase == Phase.DONE:
            raise ApiError(409, "budget_exhausted", "all budgeted points are labeled")
        if phase == Phase.ACTIVE:
            p = select_next_active_point(self.state)
        else:
            rng = make_rng(
                int(
                    np.random.SeedSequence([self.seed, len(self.state.selected)]).generate_state(
                        1, np.uint64
                    )[0]
                )
            )
            p = sample_background_points(self.state, 1, rng)[0]
        return {
            "x": p.x,
            "y": p.y,
            "phase": phase.value,
            "progress": {"labeled": self.point_count(), "budget": self.budget},
        }

    def submit(self, x: int, y: int, label: int) -> dict:
        if self.state.phase == Phase.DONE:
            raise ApiError(409, "budget_exhausted", "all budgeted points are labeled")
        if not (0 <= label < self.schema.num_classes):
            raise ApiError(422, "invalid_label", f"label must be in 0..{self.schema.num_classes - 1}")
        if not self.image.dims.contains(x, y):
            raise ApiError(422, "out_of_bounds", f"({x}, {y}) outside {self.image.dims.width}x{self.image.dims.height}")
        if self.mode == "strict":
            pending = self.suggestion()
            if (x, y) != (pending["x"], pending["y"]):
                raise ApiError(
                    409,
                    "coordinate_mismatch",
                    f"strict mode expects the pending suggestion ({pending['x']}, {pending['y']})",
                )
        elif self.state.selected_mask[y, x]:
            raise ApiError(409, "already_labeled", f"({x}, {y}) already has a label")
        self.state.commit(PixelCoord(x, y), label)
        self._append_label(x, y, label)
        self._segmentation = None
        return {
            "accepted": True,
            "next_available": self.state.phase != Phase.DONE,
            "progress": {"labeled": self.point_count(), "budget": self.budget},
        }

    def _append_label(self, x: int, y: int, label: int) -> None:
        if not self.labels_path.exists():
            self.labels_path.write_text("x,y,label\n")
        with self.labels_path.open("a") as fh:
            fh.write(f"{x},{y},{label}\n")

    def undo(self) -> dict:
        rows = self._read_labels()
        if not rows:
            raise ApiError(409, "nothing_to_undo", "no labels submitted yet")
        rows = rows[:-1]
        text = "x,y,label\n" + "".join(f"{x},{y},{lab}\n" for x, y, lab in rows)
        self.labels_path.write_text(text)
        # rebuild acquisition state from the remaining prefix
        self.state = SamplerState(self.sampler_config, self.proposals, self.image.dims)
        for x, y, lab in rows:
            self.state.commit(PixelCoord(x, y), lab)
        self._segmentation = None
        return {"remaining": len(rows)}

    def _superpixels(self) -> SuperpixelMap:
        if self._sp is None:
            self._sp = slic_segment(
                self.image, K=self.slic_k, compactness=self.slic_compactness, iters=self.slic_iters
            )
        return self._sp

    def segmentation(self):
        if self.point_count() == 0:
            raise ApiError(409, "no_labels", "submit at least one label first")
        if self._segmentation is None:
            self._segmentation = augment(
                self.image,
                self.state.point_label_set(),
                self.proposals,
                sp=self._superpixels(),
            )
        return self._segmentation

    def metadata(self) -> dict:
        return {
            "id": self.id,
            "engine_version": __version__,
            "rng_algorithm": RNG_ALGORITHM,
            "seed": self.seed,
            "lambda": self.sampler_config.lambda_,
            "random_ratio": self.sampler_config.random_ratio,
            "budget": self.budget,
            "mode": self.mode,
            "provider_mode": self.provider_mode,
            "created_at": self.created_at,
            "labeled": self.point_count(),
        }

    def export_zip(self, opacity: float) -> bytes:
        seg = self.segmentation()
        points = self.state.point_label_set()
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            stamp = (2020, 1, 1, 0, 0, 0)  # fixed date: archives byte-comparable
            zf.writestr(zipfile.ZipInfo("points.csv", stamp), points.to_csv())
            zf.writestr(zipfile.ZipInfo("segmentation.png", stamp), seg.to_png_bytes(self.schema))
            zf.writestr(
                zipfile.ZipInfo("overlay.png", stamp),
                render_overlay(self.image, seg, self.schema, opacity),
            )
            zf.writestr(zipfile.ZipInfo("schema.json", stamp), self.schema.to_json())
            zf.writestr(
                zipfile.ZipInfo("metadata.json", stamp), json.dumps(self.metadata(), indent=2)
            )
        return buf.getvalue()


class SessionStore:
    def __init__(self, data_dir: Path):
        self.data_dir = data_dir
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(
        self,
        image: RasterImage,
        schema: LabelSchema,
        budget: int,
        lambda_: float,
        random_ratio: float,
        seed: int,
        mode: str,
        proposals: ProposalSet,
        provider_mode: str,
        slic_k: int = 100,
        slic_compactness: float = 10.0,
        slic_iters: int = 10,
    ) -> Session:
        sid = uuid.uuid4().hex[:12]
        root = self.data_dir / sid
        root.mkdir(parents=True)
        image.save_png(root / "image.png")
        schema.save(root / "schema.json")
        (root / "proposals.json").write_text(proposals.to_manifest_json())
        (root / "config.json").write_text(
            json.dumps(
                {
                    "budget": budget,
                    "lambda": lambda_,
                    "random_ratio": random_ratio,
                    "seed": seed,
                    "mode": mode,
                    "strategy": "dynamic",
                    "provider_mode": provider_mode,
                    "slic_k": slic_k,
                    "slic_compactness": slic_compactness,
                    "slic_iters": slic_iters,
                    "engine_version": __version__,
                    "rng_algorithm": RNG_ALGORITHM,
                    "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                },
                indent=2,
            )
        )
        session = Session(root)
        with self._lock:
            self._sessions[sid] = session
        return session

    def get(self, sid: str) -> Session:
        with self._lock:
            if sid in self._sessions:
                return self._sessions[sid]
        root = self.data_dir / sid
        if not (root / "config.json").is_file():
            raise ApiError(404, "unknown_session", f"no session {sid}")
        session = Session(root)
        with self._lock:
            self._sessions[sid] = session
        return session

    def delete(self, sid: str) -> None:
        import shutil

        root = self.data_dir / sid
        if not root.is_dir():
            raise ApiError(404, "unknown_session", f"no session {sid}")
        with self._lock:
            self._sessions.pop(sid, None)
        shutil.rmtree(root)

    def list_ids(self) -> list[str]:
        return sorted(p.name for p in self.data_dir.iterdir() if (p / "config.json").is_file())


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    store = SessionStore(config.data_dir)
    app = FastAPI(title="pointseg annotation service", version=__version__)

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.exception_handler(PointsegError)
    async def _engine_error(_req: Request, exc: PointsegError):
        return JSONResponse(status_code=400, content={"code": "bad_input", "message": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/sessions", status_code=201)
    def create_session(
        image: UploadFile = File(...),
        class_schema: str = Form(..., alias="schema"),
        budget: int = Form(...),
        lambda_: float = Form(0.5, alias="lambda"),
        random_ratio: float = Form(0.5),
        seed: int = Form(0),
        mode: str = Form("strict"),
        proposals: UploadFile | None = File(None),
        proposals_mode: str = Form("fallback"),
        fallback_k: int = Form(64),
        fallback_tau: float = Form(10.0),
        fallback_min_area: int | None = Form(None),
    ):
        if budget < 1:
            raise ApiError(400, "bad_budget", "budget must be >= 1")
        if mode not in ("strict", "free"):
            raise ApiError(400, "bad_mode", "mode must be strict or free")
        raw = image.file.read()
        if len(raw) > config.max_upload_bytes:
            raise ApiError(413, "too_large", f"image exceeds {config.max_upload_bytes} bytes")
        try:
            raster = RasterImage.from_png_bytes(raw)
        except Exception as exc:
            raise ApiError(400, "bad_image", f"image does not decode: {exc}")
        try:
            label_schema = LabelSchema.from_json(class_schema)
        except Exception as exc:
            raise ApiError(400, "bad_schema", f"schema invalid: {exc}")
        if proposals is not None:
            blob = proposals.file.read()
            if len(blob) > config.max_upload_bytes:
                raise ApiError(413, "too_large", "proposal manifest too large")
            import tempfile

            with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
                fh.write(blob.decode("utf-8"))
                tmp = fh.name
            try:
                pset = load_proposals(tmp)
            except PointsegError as exc:
                raise ApiError(400, "bad_proposals", str(exc))
            finally:
                os.unlink(tmp)
            if pset.dims != raster.dims:
                raise ApiError(400, "bad_proposals", "manifest dims do not match the image")
            provider_mode = "file-backed"
        elif proposals_mode == "fallback":
            pset = generate_fallback_proposals(
                raster,
                FallbackConfig(k_gen=fallback_k, tau=fallback_tau, min_area=fallback_min_area),
            )
            provider_mode = "fallback-generator"
        else:
            raise ApiError(400, "bad_proposals", "provide a manifest or proposals_mode=fallback")
        session = store.create(
            raster,
            label_schema,
            budget,
            lambda_,
            random_ratio,
            seed,
            mode,
            pset,
            provider_mode,
        )
        return {"id": session.id}

    @app.get("/sessions")
    def list_sessions():
        out = []
        for sid in store.list_ids():
            s = store.get(sid)
            out.append(
                {
                    "id": sid,
                    "labeled": s.point_count(),
                    "budget": s.budget,
                    "created_at": s.created_at,
                    "updated_at": s.updated_at,
                }
            )
        return {"sessions": out}

    @app.get("/sessions/{sid}/next-point")
    def next_point(sid: str):
        s = store.get(sid)
        with s.lock:
            return s.suggestion()

    @app.post("/sessions/{sid}/labels")
    def submit_label(sid: str, body: dict):
        s = store.get(sid)
        try:
            x, y, label = int(body["x"]), int(body["y"]), int(body["label"])
        except (KeyError, TypeError, ValueError):
            raise ApiError(422, "bad_body", "body must carry integer x, y, label")
        with s.lock:
            return s.submit(x, y, label)

    @app.post("/sessions/{sid}/undo")
    def undo(sid: str):
        s = store.get(sid)
        with s.lock:
            return s.undo()

    @app.get("/sessions/{sid}/segmentation")
    def segmentation(sid: str, format: str = "indexed", opacity: float | None = None):
        s = store.get(sid)
        with s.lock:
            seg = s.segmentation()
            if format == "indexed":
                data = seg.to_png_bytes(s.schema)
            elif format == "overlay":
                data = render_overlay(
                    s.image, seg, s.schema, config.overlay_opacity if opacity is None else opacity
                )
            else:
                raise ApiError(422, "bad_format", "format must be indexed or overlay")
        return Response(content=data, media_type="image/png")

    @app.get("/sessions/{sid}/export")
    def export(sid: str):
        s = store.get(sid)
        with s.lock:
            data = s.export_zip(config.overlay_opacity)
        return Response(
            content=data,
            media_type="application/zip",
            headers={"Content-Disposition": f"attachment; filename={sid}.zip"},
        )

    @app.get("/sessions/{sid}/schema")
    def get_schema(sid: str):
        s = store.get(sid)
        return json.loads(s.schema.to_json())

    @app.get("/sessions/{sid}/image")
    def get_image(sid: str):
        s = store.get(sid)
        return Response(content=s.image.to_png_bytes(), media_type="image/png")

    @app.delete("/sessions/{sid}", status_code=204)
    def delete_session(sid: str):
        store.delete(sid)
        return Response(status_code=204)

    if config.static_dir is not None and config.static_dir.is_dir():
        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app
