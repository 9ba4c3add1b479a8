"""Phases II and III: per-sample upload, cloud generation, device-side prediction.

The whole loop runs with gradient recording forbidden process-wide, and the
tape counters are compared before and after as a sentinel.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import adr as adr_mod
from .. import fda as fda_mod
from ..encoder import EncoderParams, encode
from ..numerics import grad_disabled, tape_counters
from ..protocol.client import AdaptClient, TransportError
from ..synthdata import stack

log = logging.getLogger(__name__)


class DevicePathError(RuntimeError):
    """The device path allocated a tape or recorded a node."""


class EvaluationError(RuntimeError):
    pass


@dataclass
class EvalResult:
    accuracy: float
    per_device: dict
    predictions: dict            # device -> int array in stream order
    n_samples: int
    upload_bytes: int
    download_bytes: int
    simulated_ms: dict           # scenario -> mean per-request total
    wall_ms_mean: float
    tape_delta: dict = field(default_factory=dict)


def device_features(encoder: EncoderParams, samples, max_len: int) -> np.ndarray:
    """Device-side backbone on a realtime stream, ``[n, N_f, d]``; must run under a gradient ban."""
    b = stack(samples, max_len=max_len)
    return encode(encoder, b.frames, b.tokens, b.lengths).per_frame.data


UPLOAD_ANCHOR = "anchor"
UPLOAD_FRAME_MEAN = "frame-mean"


def upload_feature(per_frame: np.ndarray, mode: str, config, rng: np.random.Generator) -> np.ndarray:
    """What the device sends: its anchor frame, or (ablation) the ``D``-frame average."""
    if mode == UPLOAD_ANCHOR:
        return adr_mod.select_anchor(per_frame, config.anchor_policy, rng)[1]
    if mode == UPLOAD_FRAME_MEAN:
        return fda_mod.aggregate_frames(per_frame, config.frames_sampled, rng).data
    raise ValueError(f"unknown upload mode {mode!r}")


def run_phase2_phase3_eval(encoder: EncoderParams, streams: dict, client: AdaptClient, config,
                           rng: np.random.Generator | None = None, upload: str = UPLOAD_ANCHOR) -> EvalResult:
    """Evaluate the adaptation pipeline over every realtime stream.

    ``streams`` maps device id to an ordered list of samples; ``client`` holds
    the transport to the cloud service.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    before = tape_counters()
    predictions, per_device = {}, {}
    up = down = 0
    sims: dict = {}
    walls = []
    with grad_disabled(process_wide=True):
        for dev in sorted(streams):
            samples = streams[dev]
            feats = device_features(encoder, samples, config.max_len)
            pooled = fda_mod.pool_frames(feats)
            preds = np.empty(len(samples), dtype=np.int64)
            for i, per_frame in enumerate(feats):
                feature = upload_feature(per_frame, upload, config, rng)
                try:
                    head, timing = client.request_adaptation(feature, device_id=dev)
                except (TransportError, OSError) as exc:
                    raise EvaluationError(f"device {dev} sample {i}: {exc}") from exc
                _, preds[i] = fda_mod.apply_generated_head(pooled[i], head)
                up, down = timing.upload_bytes, timing.download_bytes
                walls.append(timing.wall_ms)
                for name, d in timing.simulated_ms.items():
                    sims[name] = d
            labels = np.array([s.label for s in samples])
            predictions[dev] = preds
            per_device[dev] = float(np.mean(preds == labels))
    after = tape_counters()
    delta = {k: after[k] - before[k] for k in after}
    if any(delta.values()):
        raise DevicePathError(f"device path touched the tape: {delta}")
    n = sum(len(s) for s in streams.values())
    correct = sum(per_device[d] * len(streams[d]) for d in streams)
    return EvalResult(accuracy=float(correct / n), per_device=per_device, predictions=predictions,
                      n_samples=n, upload_bytes=up, download_bytes=down, simulated_ms=sims,
                      wall_ms_mean=float(np.mean(walls)) if walls else 0.0, tape_delta=delta)
