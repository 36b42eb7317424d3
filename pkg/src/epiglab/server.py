"""Human-in-the-loop labelling service over HTTP.

One session per process: the active-learning engine pauses at each query
until a label is posted, then refits synchronously and selects the next
query. Reads return snapshots taken at step boundaries; mutations are
serialized through a single writer lock, so a stale or duplicate submission
gets a 409 and never corrupts the loop.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import HTMLResponse, PlainTextResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .data import AssetStore
from .errors import ConfigError
from .loop import ActiveLearningLoop, DataBundle, LoopConfig, RunRecord

AWAITING = "awaiting_label"
RETRAINING = "retraining"
DONE = "done"


class LabelSession:
    """Thread-safe single-annotator session around the stepwise loop engine."""

    def __init__(self, config: LoopConfig, bundle: DataBundle, seed: int,
                 clock=None, assets: AssetStore | None = None):
        if config.batch != 1:
            raise ConfigError("the labelling service serves one query at a time (batch=1)")
        self.assets = assets if assets is not None else bundle.assets
        kwargs = {} if clock is None else {"clock": clock}
        self.engine = ActiveLearningLoop(config, bundle, seed, **kwargs)
        self.engine.start()
        self._writer = threading.Lock()
        self._snapshot_lock = threading.Lock()
        self._snapshot: dict = {}
        self._publish(AWAITING if not self.engine.finished else DONE)

    def _publish(self, status: str) -> None:
        engine = self.engine
        pending = None
        if status == AWAITING and engine.pending.size:
            index = int(engine.pending[0])
            asset_url = (
                f"/api/asset/{index}"
                if self.assets is not None and self.assets.has(index)
                else None
            )
            # leading embedding dimensions let the UI draw a feature glyph
            # for inputs that have no renderable asset
            glyph = [float(v) for v in engine.features[index][:16]]
            pending = {"index": index, "asset_url": asset_url, "embedding": glyph}
        snapshot = {
            "status": status,
            "step": engine.step,
            "budget": engine.config.budget,
            "train_size": int(engine.train_idx.size),
            "pending": pending,
            "classes": list(engine.task.effective_names()),
            "accuracy_curve": engine.accuracy_curve(),
        }
        with self._snapshot_lock:
            self._snapshot = snapshot

    def state(self) -> dict:
        with self._snapshot_lock:
            return dict(self._snapshot)

    def submit(self, index: int, label: int) -> dict:
        """Record one label; refits and advances to the next query."""
        with self._writer:
            engine = self.engine
            if engine.finished:
                raise HTTPException(status_code=409, detail="session is done")
            if engine.pending.size == 0 or int(engine.pending[0]) != index:
                raise HTTPException(
                    status_code=409,
                    detail=f"index {index} is not the pending query",
                )
            if not 0 <= label < engine.classes:
                raise HTTPException(
                    status_code=400,
                    detail=f"class {label} outside [0, {engine.classes})",
                )
            self._publish(RETRAINING)
            engine.provide_labels([label])
            self._publish(DONE if engine.finished else AWAITING)
            return self.state()

    def record(self) -> RunRecord:
        return self.engine.record()

    def metrics_csv(self) -> str:
        return self.engine.record().to_csv()


_FALLBACK_PAGE = """<!doctype html>
<html>
<head><meta charset="utf-8"><title>epiglab labelling</title></head>
<body>
<h1>epiglab labelling service</h1>
<p>No UI bundle is installed. The JSON API is live:</p>
<ul>
<li><code>GET /api/state</code></li>
<li><code>POST /api/label</code> with body <code>{"index": i, "class": c}</code></li>
<li><code>GET /api/metrics.csv</code></li>
<li><code>GET /api/asset/{index}</code></li>
</ul>
</body>
</html>
"""


class LabelBody(BaseModel):
    index: int
    label: int = Field(alias="class")

    model_config = {"populate_by_name": True}


def create_app(session: LabelSession, ui_dir: str | Path | None = None) -> FastAPI:
    """Wire the session into the HTTP API, serving the UI bundle at /."""
    app = FastAPI(title="epiglab labelling service")

    @app.get("/api/state")
    def get_state():
        return session.state()

    @app.post("/api/label")
    def post_label(body: LabelBody):
        return session.submit(body.index, body.label)

    @app.get("/api/metrics.csv")
    def get_metrics():
        return PlainTextResponse(session.metrics_csv(), media_type="text/csv")

    @app.get("/api/asset/{index}")
    def get_asset(index: int):
        if session.assets is None:
            raise HTTPException(status_code=404, detail="no asset store")
        payload = session.assets.get(index)
        if payload is None:
            raise HTTPException(status_code=404, detail=f"no asset for index {index}")
        content, media = payload
        return Response(content=content, media_type=media)

    ui_path = Path(ui_dir) if ui_dir is not None else None
    if ui_path is not None and (ui_path / "index.html").is_file():
        app.mount("/", StaticFiles(directory=ui_path, html=True), name="ui")
    else:
        @app.get("/", response_class=HTMLResponse)
        def index():
            return _FALLBACK_PAGE

    return app


def serve(config: LoopConfig, bundle: DataBundle, bind: str = "127.0.0.1:8000",
          seed: int = 0, ui_dir: str | Path | None = None,
          clock=None) -> None:
    """Run the labelling service until interrupted."""
    import uvicorn

    host, _, port = bind.rpartition(":")
    session = LabelSession(config, bundle, seed, clock=clock)
    app = create_app(session, ui_dir=ui_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
