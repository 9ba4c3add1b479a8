"""Device-side client: upload one feature, download a head, keep timings."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import httpx
import numpy as np

from ..fda import GeneratedHead
from . import wire
from .delay import NetworkScenario, transfer_delay

log = logging.getLogger(__name__)


class TransportError(ConnectionError):
    """A retriable failure to get a reply frame."""


class InProcessTransport:
    """Hands frames straight to a service object; for tests and single-process runs."""

    def __init__(self, service):
        self.service = service

    def exchange(self, frame: bytes) -> bytes:
        return self.service.handle_frame(frame)

    def close(self) -> None:
        pass


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self._client = httpx.Client(timeout=timeout)

    def exchange(self, frame: bytes) -> bytes:
        try:
            r = self._client.post(f"{self.base_url}/v1/adapt", content=frame,
                                  headers={"content-type": "application/octet-stream"})
        except httpx.HTTPError as exc:
            raise TransportError(f"POST {self.base_url}/v1/adapt failed: {exc}") from exc
        if r.headers.get("content-type", "").startswith("application/octet-stream"):
            return r.content  # error frames travel with 4xx statuses
        raise TransportError(f"unexpected reply {r.status_code} from {self.base_url}")

    def close(self) -> None:
        self._client.close()


@dataclass
class TimingRecord:
    upload_bytes: int
    download_bytes: int
    frame_up_bytes: int
    frame_down_bytes: int
    wall_ms: float
    attempts: int
    simulated_ms: dict = field(default_factory=dict)  # scenario -> {"up", "down", "total"}


class AdaptClient:
    def __init__(self, transport, scenarios=(), retries: int = 2, backoff_s: float = 0.05):
        self.transport = transport
        self.scenarios = list(scenarios)
        self.retries = retries
        self.backoff_s = backoff_s

    def close(self) -> None:
        self.transport.close()

    def _exchange(self, frame: bytes) -> tuple[bytes, int]:
        last = None
        for attempt in range(1, self.retries + 2):
            try:
                return self.transport.exchange(frame), attempt
            except TransportError as exc:
                last = exc
                log.warning("attempt %d failed: %s", attempt, exc)
                time.sleep(self.backoff_s * attempt)
        raise TransportError(f"gave up after {self.retries + 1} attempts: {last}") from last

    def request_adaptation(self, feature, device_id: int = 0, task_id: int = 0) -> tuple[GeneratedHead, TimingRecord]:
        req = wire.AdaptRequest(device_id, task_id, np.asarray(feature))
        frame = wire.encode_request(req)
        t0 = time.perf_counter()
        reply, attempts = self._exchange(frame)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        resp = wire.decode_response(reply)  # error frames raise RemoteError
        if resp.device_id != device_id:
            raise wire.StructureError(f"reply for device {resp.device_id}, expected {device_id}")
        up = req.feature.nbytes
        down = resp.weights.nbytes + resp.bias.nbytes
        timing = TimingRecord(up, down, len(frame), len(reply), wall_ms, attempts,
                              simulated_ms=simulate(up, down, self.scenarios))
        return GeneratedHead(resp.weights, resp.bias), timing


def simulate(up: int, down: int, scenarios: list[NetworkScenario]) -> dict:
    out = {}
    for s in scenarios:
        u, d = transfer_delay(up, s), transfer_delay(down, s)
        out[s.name] = {"up": u, "down": d, "total": u + d}
    return out
