"""Toy multi-modal backbone: per-frame visual MLP, pooled token embeddings, fusion.

The fusion stack replaces transformer layers with ``t`` blocks of
``layernorm(tanh(W h + b))``; the first block reads the concatenation of a
frame's embedded visual feature and the embedded query feature.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, Tensor, ops
from .params import ParamSet, dense_init


class EncoderParams(ParamSet):
    prefix = "encoder"

    @classmethod
    def init(cls, rng: np.random.Generator, d_raw: int, d_model: int = 192, vocab: int = 64,
             max_frames: int = 16, layers: int = 2) -> "EncoderParams":
        if layers < 1:
            raise ValueError("need at least one fusion block")
        t = {
            "visual.w1": dense_init(rng, d_model, d_raw),
            "visual.b1": np.zeros(d_model),
            "visual.w2": dense_init(rng, d_model, d_model),
            "visual.b2": np.zeros(d_model),
            "token_emb": rng.normal(0.0, 1.0, size=(vocab, d_model)),
            "pos_emb": rng.normal(0.0, 0.02, size=(max_frames, d_model)),
            "type_emb": rng.normal(0.0, 0.02, size=(2, d_model)),
        }
        for k in range(layers):
            fan_in = 2 * d_model if k == 0 else d_model
            t[f"fusion.{k}.w"] = dense_init(rng, d_model, fan_in)
            t[f"fusion.{k}.b"] = np.zeros(d_model)
            t[f"fusion.{k}.gamma"] = np.ones(d_model)
            t[f"fusion.{k}.beta"] = np.zeros(d_model)
        return cls.from_arrays(t)

    @property
    def d_raw(self) -> int:
        return self["visual.w1"].shape[1]

    @property
    def d_model(self) -> int:
        return self["visual.w1"].shape[0]

    @property
    def vocab(self) -> int:
        return self["token_emb"].shape[0]

    @property
    def max_frames(self) -> int:
        return self["pos_emb"].shape[0]

    @property
    def layers(self) -> int:
        return sum(1 for k in self.tensors if k.endswith(".gamma"))


@dataclass
class FusedFeature:
    """Per-frame fused features plus the unimodal features they came from."""

    per_frame: Tensor       # [..., N_f, d_model]
    text_feature: Tensor    # [..., d_model]
    visual_features: Tensor  # [..., N_f, d_model]

    @property
    def n_frames(self) -> int:
        return self.per_frame.shape[-2]


def encode_video(frames, params: EncoderParams) -> Tensor:
    """Per-frame MLP; ``frames`` is ``[N_f, d_raw]`` or ``[n, N_f, d_raw]`` (or a video)."""
    frames = getattr(frames, "frames", frames)
    x = np.asarray(frames, dtype=np.float64) if not isinstance(frames, Tensor) else frames
    if x.shape[-1] != params.d_raw:
        raise DimensionError(f"frame dim {x.shape[-1]} != encoder input {params.d_raw}")
    h = ops.tanh(ops.linear(x, params["visual.w1"], params["visual.b1"]))
    return ops.linear(h, params["visual.w2"], params["visual.b2"])


def _token_batch(query) -> tuple[np.ndarray, np.ndarray]:
    ids = getattr(query, "token_ids", query)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    return ids, np.full(ids.shape[0], ids.shape[1])


def encode_text(query, params: EncoderParams, lengths=None) -> Tensor:
    """Mean of token embeddings.

    ``query`` is a query object, a 1-D id list (returns ``[d]``), or a padded
    ``[n, L]`` id array with ``lengths`` (returns ``[n, d]``).
    """
    single = lengths is None and np.asarray(getattr(query, "token_ids", query)).ndim == 1
    if lengths is None:
        ids, lengths = _token_batch(query)
    else:
        ids = np.asarray(query, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
    if np.any(lengths < 1):
        raise DimensionError("empty query")
    mask = np.arange(ids.shape[1])[None, :] < lengths[:, None]
    live = ids[mask]
    if live.size and (live.min() < 0 or live.max() >= params.vocab):
        raise DimensionError(f"token id outside vocabulary of size {params.vocab}")
    safe = np.where(mask, ids, 0)
    weights = (mask / lengths[:, None])[:, :, None]
    emb = ops.embedding(params["token_emb"], safe)
    pooled = ops.sum(ops.mul(emb, weights), axis=1)
    return ops.reshape(pooled, (params.d_model,)) if single else pooled


def fuse(F_v: Tensor, F_t: Tensor, params: EncoderParams) -> FusedFeature:
    """Add positional/modality embeddings and run the fusion blocks per frame."""
    F_v = F_v if isinstance(F_v, Tensor) else Tensor(F_v)
    F_t = F_t if isinstance(F_t, Tensor) else Tensor(F_t)
    d = params.d_model
    n_frames = F_v.shape[-2]
    if F_v.shape[-1] != d or F_t.shape[-1] != d or F_v.shape[:-2] != F_t.shape[:-1]:
        raise DimensionError(f"fuse: visual {F_v.shape} vs text {F_t.shape}")
    if n_frames > params.max_frames:
        raise DimensionError(f"{n_frames} frames exceed positional table of {params.max_frames}")
    type_emb = params["type_emb"]
    pos = ops.take(params["pos_emb"], slice(0, n_frames))
    E_v = ops.add(ops.add(F_v, pos), ops.take(type_emb, 0))
    E_t = ops.add(F_t, ops.take(type_emb, 1))
    lead = F_t.shape[:-1]
    # first block on concat(E_v^i, E_t): split W into its visual and text
    # halves so the text half is computed once per sample, not once per frame
    W0 = params["fusion.0.w"]
    h_v = ops.linear(E_v, ops.take(W0, (slice(None), slice(0, d))))
    h_t = ops.linear(E_t, ops.take(W0, (slice(None), slice(d, 2 * d))), params["fusion.0.b"])
    h = ops.add(h_v, ops.reshape(h_t, lead + (1, d)))
    h = ops.layernorm(ops.tanh(h), params["fusion.0.gamma"], params["fusion.0.beta"])
    for k in range(1, params.layers):
        h = ops.tanh(ops.linear(h, params[f"fusion.{k}.w"], params[f"fusion.{k}.b"]))
        h = ops.layernorm(h, params[f"fusion.{k}.gamma"], params[f"fusion.{k}.beta"])
    return FusedFeature(per_frame=h, text_feature=F_t, visual_features=F_v)


def encode(params: EncoderParams, frames, tokens, lengths=None) -> FusedFeature:
    """Full backbone on one sample or a batch."""
    F_v = encode_video(frames, params)
    F_t = encode_text(tokens, params, lengths)
    return fuse(F_v, F_t, params)


def encode_sample(sample, params: EncoderParams) -> FusedFeature:
    return encode(params, sample.video.frames, sample.query.token_ids)
