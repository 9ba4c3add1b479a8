"""HTTP front end for the adaptation service.

``POST /v1/adapt`` carries the binary frames unchanged (octet-stream in and
out). ``POST /v1/adapt/json`` is a convenience mirror with JSON bodies.
"""
from __future__ import annotations

import asyncio
import logging
import threading
import time

import numpy as np
import uvicorn
from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel, Field

from ..numerics import ContractError
from . import wire
from .service import AdaptationService, DimensionMismatch

log = logging.getLogger(__name__)

OCTET = "application/octet-stream"


class AdaptJsonRequest(BaseModel):
    device_id: int = Field(ge=0, lt=2**32)
    task_id: int = Field(default=0, ge=0, lt=256)
    feature: list[float]


class AdaptJsonResponse(BaseModel):
    device_id: int
    in_dim: int
    out_dim: int
    weights: list[list[float]]
    bias: list[float]


class HealthResponse(BaseModel):
    status: str
    in_flight: int


class InfoResponse(BaseModel):
    wire_version: int
    d_model: int
    head_in: int
    head_out: int
    uses_adr: bool
    sampling_mode: str
    max_frame_bytes: int


def create_app(service: AdaptationService, max_concurrency: int = 8) -> FastAPI:
    app = FastAPI(title="cloudadapt", version="1")
    limiter = asyncio.Semaphore(max_concurrency)
    state = {"in_flight": 0}

    async def run(fn, *args):
        # model math is CPU-bound numpy; keep it off the event loop
        async with limiter:
            state["in_flight"] += 1
            try:
                return await asyncio.to_thread(fn, *args)
            finally:
                state["in_flight"] -= 1

    @app.get("/v1/health", response_model=HealthResponse)
    async def health():
        return HealthResponse(status="ok", in_flight=state["in_flight"])

    @app.get("/v1/info", response_model=InfoResponse)
    async def info():
        m = service.models
        return InfoResponse(wire_version=wire.VERSION, d_model=m.d_model, head_in=m.head_slot[0],
                            head_out=m.head_slot[1], uses_adr=m.use_adr, sampling_mode=m.sampling_mode,
                            max_frame_bytes=service.max_frame_bytes)

    @app.post("/v1/adapt")
    async def adapt(request: Request):
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > service.max_frame_bytes:
            body = wire.encode_error(wire.ERR_TOO_LARGE, f"frame of {declared} bytes is too large")
            return Response(body, status_code=413, media_type=OCTET)
        frame = await request.body()
        reply = await run(service.handle_frame, frame)
        status = 200
        if reply[6] == wire.MSG_ERROR:
            status = 413 if len(frame) > service.max_frame_bytes else 400
        return Response(reply, status_code=status, media_type=OCTET)

    @app.post("/v1/adapt/json", response_model=AdaptJsonResponse)
    async def adapt_json(body: AdaptJsonRequest):
        try:
            req = wire.AdaptRequest(body.device_id, body.task_id, np.asarray(body.feature))
            resp = await run(service.handle_request, req)
        except (ValueError, DimensionMismatch, ContractError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return AdaptJsonResponse(device_id=resp.device_id, in_dim=resp.in_dim, out_dim=resp.out_dim,
                                 weights=resp.weights.astype(float).tolist(), bias=resp.bias.astype(float).tolist())

    return app


class ServerHandle:
    """A uvicorn server running on a background thread."""

    def __init__(self, server: uvicorn.Server, thread: threading.Thread):
        self._server = server
        self._thread = thread

    @property
    def port(self) -> int:
        return self._server.servers[0].sockets[0].getsockname()[1]

    @property
    def host(self) -> str:
        return self._server.config.host

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def stop(self, timeout: float = 10.0) -> None:
        """Stop accepting connections and wait for in-flight requests to finish."""
        self._server.should_exit = True
        self._thread.join(timeout)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def serve(service: AdaptationService, host: str = "127.0.0.1", port: int = 0,
          max_concurrency: int = 8, timeout: float = 10.0) -> ServerHandle:
    """Start the HTTP server in a thread; ``port=0`` picks a free port."""
    config = uvicorn.Config(create_app(service, max_concurrency), host=host, port=port,
                            log_level="warning", timeout_graceful_shutdown=5)
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, name="cloudadapt-server", daemon=True)
    thread.start()
    deadline = time.monotonic() + timeout
    while not server.started:
        if not thread.is_alive() or time.monotonic() > deadline:
            server.should_exit = True
            raise OSError(f"server failed to start on {host}:{port}")
        time.sleep(0.01)
    return ServerHandle(server, thread)
