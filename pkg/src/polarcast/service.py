"""Local HTTP facade for the review loop: SOM map + cluster waveforms, flag
journal, cleaning-cycle jobs, and ensemble artifacts for the UI.

Plain JSON over HTTP, loopback by default, no authentication: this is a
single-analyst desk tool. All mutations funnel through one lock and an
append-only journal; long-running work goes to a small worker pool and is
polled by job id so the UI never blocks on a retrain.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .dataio import Polarity, Trace, load_dataset, window_dataset, window_trace
from .ensemble import audit_extremal_bins
from .somclean import (
    ClusterReport,
    FlagEntry,
    FlagSet,
    SomConfig,
    SOMap,
    append_flag,
    append_unflag,
    assign_clusters,
    cleaning_cycle,
    fold_journal,
    load_som,
)

MAX_TRANSPORT_POINTS = 512


def decimate_minmax(values: np.ndarray, max_points: int = MAX_TRANSPORT_POINTS):
    """Min-max decimation: per bucket keep the extrema (in positional order),
    so peaks survive transport. Returns (original indices, values)."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n <= max_points:
        return np.arange(n), values
    n_buckets = max_points // 2
    bounds = np.linspace(0, n, n_buckets + 1).astype(int)
    idx_out = []
    for b in range(n_buckets):
        lo, hi = bounds[b], bounds[b + 1]
        if hi <= lo:
            continue
        chunk = values[lo:hi]
        i_min = lo + int(np.argmin(chunk))
        i_max = lo + int(np.argmax(chunk))
        pair = sorted({i_min, i_max})
        idx_out.extend(pair)
    idx = np.asarray(idx_out, dtype=int)
    return idx, values[idx]


@dataclass
class Job:
    id: str
    kind: str
    status: str = "queued"  # queued | running | done | failed
    error: Optional[str] = None
    created: float = field(default_factory=time.time)
    finished: Optional[float] = None
    result: Optional[dict] = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "status": self.status,
            "error": self.error,
            "created": self.created,
            "finished": self.finished,
            "result": self.result,
        }


class SessionState:
    """One analyst session: dataset, journal-backed flags, current SOM and jobs.

    Mutations (flags, SOM swap, cycle counter) are serialized through
    ``write_lock``; GET handlers only read immutable snapshots.
    """

    def __init__(self, traces: list[Trace], journal_path, pre: int, post: int,
                 som: SOMap | None = None, som_cfg: SomConfig | None = None,
                 artifacts_dir=None, dataset_id: str = "dataset"):
        self.traces = traces
        self.by_id = {t.id: t for t in traces}
        self.journal_path = Path(journal_path)
        self.pre = pre
        self.post = post
        self.som = som
        self.report: ClusterReport | None = None
        self.som_cfg = som_cfg or SomConfig()
        self.cycle = 0
        self.dataset_id = dataset_id
        self.flags: FlagSet = fold_journal(self.journal_path)
        self.jobs: dict[str, Job] = {}
        self.write_lock = threading.Lock()
        self.executor = ThreadPoolExecutor(max_workers=2)
        self.artifacts_dir = Path(artifacts_dir) if artifacts_dir else None
        if self.som is not None:
            windows, _ = window_dataset(self.traces, pre, post)
            self.report = assign_clusters(self.som, windows)

    # -- flags ---------------------------------------------------------------

    def add_flag(self, entry: FlagEntry):
        with self.write_lock:
            append_flag(self.journal_path, entry)
            self.flags.entries[entry.trace_id] = entry

    def remove_flag(self, trace_id: str, author: str) -> bool:
        with self.write_lock:
            if trace_id not in self.flags.entries:
                return False
            append_unflag(self.journal_path, trace_id, author)
            del self.flags.entries[trace_id]
            return True

    # -- jobs ----------------------------------------------------------------

    def cycle_job_active(self) -> bool:
        return any(
            j.kind == "cycle" and j.status in ("queued", "running")
            for j in self.jobs.values()
        )

    def submit_cycle(self, cfg: SomConfig) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], kind="cycle")
        self.jobs[job.id] = job

        def work():
            job.status = "running"
            try:
                flags_snapshot = FlagSet(dict(self.flags.entries))
                result = cleaning_cycle(self.traces, flags_snapshot, cfg,
                                        self.pre, self.post)
                with self.write_lock:
                    self.som = result.som
                    self.report = result.report
                    self.cycle += 1
                job.result = {
                    "cycle": self.cycle,
                    "n_removed": result.n_removed,
                    "n_remaining": result.n_remaining,
                }
                job.status = "done"
            except Exception as exc:  # surfaced through job status
                job.error = str(exc)
                job.status = "failed"
            finally:
                job.finished = time.time()

        self.executor.submit(work)
        return job

    # -- artifacts -----------------------------------------------------------

    def load_artifact(self, suffix: str, selector: str) -> dict | None:
        if self.artifacts_dir is None:
            return None
        path = self.artifacts_dir / f"{selector}.{suffix}.json"
        if not path.is_file():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def shutdown(self):
        self.executor.shutdown(wait=True)


# ---------------------------------------------------------------------------
# request/response models


class FlagRequest(BaseModel):
    trace_id: str
    reason: str
    corrected_label: Optional[str] = None
    author: str = "analyst"
    bin_side: Optional[str] = None


class CycleRequest(BaseModel):
    grid_rows: Optional[int] = None
    grid_cols: Optional[int] = None
    epochs: Optional[int] = None
    alpha0: Optional[float] = None
    sigma0: Optional[float] = None
    seed: Optional[int] = None


def _flag_json(e: FlagEntry) -> dict:
    return {
        "trace_id": e.trace_id,
        "reason": e.reason,
        "corrected_label": e.corrected_label.value if e.corrected_label else None,
        "cycle": e.cycle,
        "author": e.author,
        "timestamp": e.timestamp,
        "bin_side": e.bin_side,
    }


def build_app(session: SessionState, ui_dir=None) -> FastAPI:
    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        session.shutdown()  # waits for running jobs; journal writes are already flushed

    app = FastAPI(title="polarcast review service", lifespan=lifespan)
    app.state.session = session

    @app.exception_handler(RequestValidationError)
    async def malformed_body(_req: Request, exc: RequestValidationError):
        # contract: malformed bodies are a 400 with field-level messages
        return JSONResponse(
            status_code=400,
            content={"detail": [
                {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
                for err in exc.errors()
            ]},
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "dataset": session.dataset_id,
                "n_traces": len(session.traces)}

    # -- SOM -----------------------------------------------------------------

    @app.get("/som/map")
    def som_map():
        if session.som is None or session.report is None:
            raise HTTPException(
                status_code=404,
                detail="no SOM trained yet; POST /cycle to run the first cycle",
            )
        nodes = []
        for node in session.report.nodes:
            mean = None
            if node.mean is not None:
                idx, val = decimate_minmax(node.mean)
                mean = {"idx": idx.tolist(), "val": val.tolist()}
            nodes.append({
                "row": node.row,
                "col": node.col,
                "count": node.count,
                "purity": node.purity,
                "mean": mean,
            })
        return {
            "rows": session.som.grid_rows,
            "cols": session.som.grid_cols,
            "cycle": session.cycle,
            "p_marker": session.pre,
            "window_len": session.pre + session.post,
            "nodes": nodes,
        }

    @app.get("/som/node/{row}/{col}/waveforms")
    def node_waveforms(row: int, col: int, limit: int = Query(50, ge=1, le=500)):
        if session.som is None or session.report is None:
            raise HTTPException(status_code=404, detail="no SOM trained yet")
        if not (0 <= row < session.som.grid_rows and 0 <= col < session.som.grid_cols):
            raise HTTPException(status_code=404, detail="node outside the grid")
        node = session.report.node(row, col)
        waveforms = []
        for tid in node.member_ids[:limit]:
            trace = session.by_id.get(tid)
            if trace is None:
                continue
            w = window_trace(trace, session.pre, session.post)
            idx, val = decimate_minmax(w.values)
            flag = session.flags.entries.get(tid)
            waveforms.append({
                "trace_id": tid,
                "label": trace.label.value,
                "idx": idx.tolist(),
                "val": val.tolist(),
                "flag": _flag_json(flag) if flag else None,
            })
        mean = None
        if node.mean is not None:
            idx, val = decimate_minmax(node.mean)
            mean = {"idx": idx.tolist(), "val": val.tolist()}
        return {
            "row": row,
            "col": col,
            "count": node.count,
            "purity": node.purity,
            "p_marker": session.pre,
            "window_len": session.pre + session.post,
            "mean": mean,
            "waveforms": waveforms,
        }

    # -- flags ---------------------------------------------------------------

    @app.get("/flags")
    def get_flags():
        entries = {tid: _flag_json(e) for tid, e in sorted(session.flags.entries.items())}
        return {"count": len(entries), "cycle": session.cycle,
                "digest": session.flags.digest(), "flags": entries}

    @app.post("/flags", status_code=201)
    def post_flag(body: FlagRequest):
        if body.trace_id not in session.by_id:
            raise HTTPException(status_code=404, detail=f"unknown trace {body.trace_id!r}")
        corrected = None
        if body.corrected_label is not None:
            try:
                corrected = Polarity(body.corrected_label)
            except ValueError:
                raise HTTPException(
                    status_code=400,
                    detail=[{"field": "corrected_label",
                             "message": f"unknown label {body.corrected_label!r}"}],
                )
        try:
            entry = FlagEntry(
                trace_id=body.trace_id,
                reason=body.reason,
                corrected_label=corrected,
                cycle=session.cycle,
                author=body.author,
                timestamp=time.time(),
                bin_side=body.bin_side,
            )
        except ValueError as exc:
            raise HTTPException(
                status_code=400,
                detail=[{"field": "reason", "message": str(exc)}],
            )
        session.add_flag(entry)
        return _flag_json(entry)

    @app.delete("/flags/{trace_id}")
    def delete_flag(trace_id: str, author: str = "analyst"):
        if not session.remove_flag(trace_id, author):
            raise HTTPException(status_code=404, detail=f"{trace_id!r} is not flagged")
        return {"trace_id": trace_id, "removed": True}

    # -- cleaning cycle jobs ---------------------------------------------------

    @app.post("/cycle", status_code=202)
    def post_cycle(body: CycleRequest | None = None):
        with session.write_lock:
            if session.cycle_job_active():
                raise HTTPException(status_code=409,
                                    detail="a cleaning cycle is already running")
            base = session.som_cfg
            body = body or CycleRequest()
            cfg = SomConfig(
                grid_rows=body.grid_rows or base.grid_rows,
                grid_cols=body.grid_cols or base.grid_cols,
                epochs=body.epochs or base.epochs,
                alpha0=body.alpha0 if body.alpha0 is not None else base.alpha0,
                sigma0=body.sigma0 if body.sigma0 is not None else base.sigma0,
                seed=body.seed if body.seed is not None else base.seed,
            )
            job = session.submit_cycle(cfg)
        return job.to_json()

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        job = session.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        return job.to_json()

    # -- ensemble artifacts ----------------------------------------------------

    @app.get("/ensemble/histograms")
    def ensemble_histograms(selector: str = "all"):
        data = session.load_artifact("hist", selector)
        if data is None:
            raise HTTPException(
                status_code=404,
                detail=f"no histogram artifact for selector {selector!r}",
            )
        return data

    @app.get("/audit/extremal")
    def audit_extremal(bin: str = Query(...), k: int = Query(40, ge=0),
                       selector: str = "all", seed: int = 0):
        if bin not in ("left", "right"):
            raise HTTPException(
                status_code=400,
                detail=[{"field": "bin", "message": "must be 'left' or 'right'"}],
            )
        preds = session.load_artifact("preds", selector)
        if preds is None:
            raise HTTPException(
                status_code=404,
                detail=f"no predictions artifact for selector {selector!r}",
            )
        sample = audit_extremal_bins(preds["ids"], np.asarray(preds["mean_p"]),
                                     k=k, seed=seed)
        picked = sample.left if bin == "left" else sample.right
        p_by_id = dict(zip(preds["ids"], preds["mean_p"]))
        cards = []
        for tid in picked:
            trace = session.by_id.get(tid)
            if trace is None:
                continue
            w = window_trace(trace, session.pre, session.post)
            idx, val = decimate_minmax(w.values)
            flag = session.flags.entries.get(tid)
            cards.append({
                "trace_id": tid,
                "label": trace.label.value,
                "mean_p": p_by_id[tid],
                "idx": idx.tolist(),
                "val": val.tolist(),
                "flag": _flag_json(flag) if flag else None,
            })
        return {"bin": bin, "k": k, "p_marker": session.pre,
                "n_in_bin": len(sample.left if bin == "left" else sample.right),
                "waveforms": cards}

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def build_session(dataset_dir, journal_path, pre: int, post: int,
                  som_dir=None, artifacts_dir=None) -> SessionState:
    """Assemble a session from a dataset directory in the canonical layout."""
    dataset_dir = Path(dataset_dir)
    traces, _ = load_dataset(dataset_dir / "waveforms", dataset_dir / "metadata.csv")
    som = load_som(som_dir) if som_dir else None
    return SessionState(
        traces=traces,
        journal_path=journal_path,
        pre=pre,
        post=post,
        som=som,
        artifacts_dir=artifacts_dir,
        dataset_id=dataset_dir.name,
    )


def serve(session: SessionState, host: str = "127.0.0.1", port: int = 8321,
          ui_dir=None):
    import uvicorn

    app = build_app(session, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
