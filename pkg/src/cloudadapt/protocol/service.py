"""Cloud-side request handling, independent of any transport.

The service is stateless between requests: every reply depends only on the
frozen model parameters and the request bytes.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass

import numpy as np

from .. import adr as adr_mod
from .. import fda as fda_mod
from ..numerics import ContractError, grad_disabled
from . import wire

log = logging.getLogger(__name__)

DEFAULT_MAX_FRAME = 10 * 1024 * 1024


@dataclass
class CloudModels:
    """Everything the cloud needs to answer an adaptation request."""

    fda: fda_mod.FdaParams
    adr: adr_mod.AdrParams
    head_slot: tuple
    style_source: str = adr_mod.STYLE_RECONSTRUCTED
    sampling_mode: str = "mean"
    seed: int = 0
    use_adr: bool = True

    @property
    def d_model(self) -> int:
        return self.fda.d_model


class AdaptationService:
    def __init__(self, models: CloudModels, max_frame_bytes: int = DEFAULT_MAX_FRAME):
        self.models = models
        self.max_frame_bytes = max_frame_bytes

    def _rng(self, req: wire.AdaptRequest) -> np.random.Generator | None:
        if self.models.sampling_mode != "stochastic":
            return None
        # seeded by the request itself so identical requests get identical heads
        return np.random.default_rng([self.models.seed, req.device_id, zlib.crc32(req.feature.tobytes())])

    def generate(self, feature: np.ndarray, rng: np.random.Generator | None = None) -> fda_mod.GeneratedHead:
        """Anchor feature -> generated head, with gradient recording forbidden."""
        m = self.models
        x = np.asarray(feature, dtype=np.float64)
        with grad_disabled():
            if m.use_adr:
                x = adr_mod.reason_inference(x, m.adr, m.sampling_mode, rng, m.style_source)
            E = fda_mod.project_embedding(x, m.fda)
            return fda_mod.generate_parameters(E, m.fda, m.head_slot)

    def handle_request(self, req: wire.AdaptRequest) -> wire.AdaptResponse:
        if req.feature.size != self.models.d_model:
            raise DimensionMismatch(f"feature has {req.feature.size} values, expected {self.models.d_model}")
        head = self.generate(req.feature, self._rng(req))
        return wire.AdaptResponse(req.device_id, head.weights, head.bias)

    def handle_frame(self, frame: bytes) -> bytes:
        """Bytes in, bytes out; failures become error frames and never escape."""
        if len(frame) > self.max_frame_bytes:
            return wire.encode_error(wire.ERR_TOO_LARGE, f"frame of {len(frame)} bytes exceeds {self.max_frame_bytes}")
        try:
            req = wire.decode_request(frame)
            return wire.encode_response(self.handle_request(req))
        except wire.DecodeError as exc:
            return wire.encode_error(exc.code, str(exc))
        except DimensionMismatch as exc:
            return wire.encode_error(wire.ERR_DIMENSION, str(exc))
        except ContractError as exc:
            return wire.encode_error(wire.ERR_DEGENERATE, str(exc))
        except Exception as exc:  # keep serving; report the failure to the caller
            log.exception("request failed")
            return wire.encode_error(wire.ERR_INTERNAL, f"{type(exc).__name__}: {exc}")


class DimensionMismatch(ValueError):
    pass
