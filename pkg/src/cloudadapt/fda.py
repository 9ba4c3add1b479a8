"""Fast domain adaptor: a hypernetwork that writes the device's final linear layer.

Cloud side: average ``D`` sampled frame features, project them, and map the
embedding to the weights and bias of one ``in_dim -> out_dim`` linear layer.
Device side: apply the downloaded layer with plain numpy, no tape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ContractError, DimensionError, Tensor, ops
from .params import ParamSet, dense_init

HYPER_OUTPUT_SCALE = 0.1


class ConfigurationError(ValueError):
    """Hypernetwork output does not fit the requested head slot."""


class FdaParams(ParamSet):
    prefix = "fda"

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, head_slot: tuple[int, int],
             hidden: int = 96, d_proj: int | None = None, final_std: float = 1e-2) -> "FdaParams":
        d_proj = d_model if d_proj is None else d_proj
        in_dim, out_dim = head_slot
        out_len = in_dim * out_dim + out_dim
        return cls.from_arrays({
            "proj.w1": dense_init(rng, d_model, d_model),
            "proj.b1": np.zeros(d_model),
            "proj.w2": dense_init(rng, d_proj, d_model),
            "proj.b2": np.zeros(d_proj),
            "proj.gamma": np.ones(d_proj),
            "proj.beta": np.zeros(d_proj),
            "hyper.w1": dense_init(rng, hidden, d_proj),
            "hyper.b1": np.zeros(hidden),
            "hyper.w2": dense_init(rng, out_len, hidden, std=final_std),
            "hyper.b2": np.zeros(out_len),
        })

    @property
    def d_model(self) -> int:
        return self["proj.w1"].shape[1]

    @property
    def hidden(self) -> int:
        return self["hyper.w1"].shape[0]

    @property
    def output_length(self) -> int:
        return self["hyper.w2"].shape[0]


@dataclass
class GeneratedHead:
    """Weights ``[out_dim, in_dim]`` and bias ``[out_dim]`` of one linear layer."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(f"head weights {self.weights.shape} / bias {self.bias.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("generated head is not finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_params(self) -> int:
        return self.weights.size + self.bias.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.reshape(-1), self.bias])


def slot_size(in_dim: int, out_dim: int) -> int:
    return in_dim * out_dim + out_dim


def sample_frame_indices(n_frames: int, D: int, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    """``D`` distinct frame indices, uniformly; ``[D]`` or ``[batch, D]``."""
    if not 1 < D <= n_frames:
        raise ContractError(f"need 1 < D <= N_f, got D={D}, N_f={n_frames}")
    if batch is None:
        return rng.choice(n_frames, size=D, replace=False)
    return np.argsort(rng.random((batch, n_frames)), axis=1)[:, :D]


def aggregate_frames(F_m, D: int, rng: np.random.Generator) -> Tensor:
    """Mean of ``D`` randomly chosen frames (``[N_f, d]`` or ``[n, N_f, d]``)."""
    per_frame = getattr(F_m, "per_frame", F_m)
    per_frame = per_frame if isinstance(per_frame, Tensor) else Tensor(per_frame)
    if per_frame.data.ndim == 2:
        idx = sample_frame_indices(per_frame.shape[0], D, rng)
        return ops.mean(ops.take(per_frame, idx), axis=0)
    n, n_frames = per_frame.shape[:2]
    idx = sample_frame_indices(n_frames, D, rng, batch=n)
    return ops.mean(ops.take(per_frame, (np.arange(n)[:, None], idx)), axis=1)


def project_embedding(F_g, params: FdaParams) -> Tensor:
    """linear -> tanh -> linear -> layernorm."""
    if np.shape(getattr(F_g, "data", F_g))[-1] != params.d_model:
        raise DimensionError(f"projection expects {params.d_model} features")
    h = ops.tanh(ops.linear(F_g, params["proj.w1"], params["proj.b1"]))
    h = ops.linear(h, params["proj.w2"], params["proj.b2"])
    return ops.layernorm(h, params["proj.gamma"], params["proj.beta"])


def hyper_forward(E_g, params: FdaParams) -> Tensor:
    """Flat scaled hypernetwork output, ``[..., in*out + out]``."""
    h = ops.tanh(ops.linear(E_g, params["hyper.w1"], params["hyper.b1"]))
    return ops.mul(ops.linear(h, params["hyper.w2"], params["hyper.b2"]), HYPER_OUTPUT_SCALE)


def split_head(raw: Tensor, head_slot: tuple[int, int]) -> tuple[Tensor, Tensor]:
    """Row-major reshape of a flat ``[n, in*out+out]`` tensor into weights and bias."""
    in_dim, out_dim = head_slot
    if raw.shape[-1] != slot_size(in_dim, out_dim):
        raise ConfigurationError(
            f"hypernetwork emits {raw.shape[-1]} values, slot {head_slot} needs {slot_size(in_dim, out_dim)}")
    lead = raw.shape[:-1]
    n_w = in_dim * out_dim
    W = ops.reshape(ops.take(raw, (Ellipsis, slice(0, n_w))), lead + (out_dim, in_dim))
    b = ops.take(raw, (Ellipsis, slice(n_w, None)))
    return W, b


def generate_parameters(E_g, params: FdaParams, head_slot: tuple[int, int]) -> GeneratedHead:
    """Run the hypernetwork on a single embedding and package the result."""
    if params.output_length != slot_size(*head_slot):
        raise ConfigurationError(
            f"hypernetwork emits {params.output_length} values, slot {head_slot} needs {slot_size(*head_slot)}")
    raw = hyper_forward(E_g, params).data
    if raw.ndim != 1:
        raise DimensionError("generate_parameters takes one embedding; use hyper_forward for batches")
    in_dim, out_dim = head_slot
    n_w = in_dim * out_dim
    return GeneratedHead(raw[:n_w].reshape(out_dim, in_dim), raw[n_w:])


def pool_frames(per_frame) -> np.ndarray:
    """Device-side head input: plain mean over all frames."""
    data = getattr(per_frame, "per_frame", per_frame)
    data = getattr(data, "data", data)
    return np.asarray(data).mean(axis=-2)


def apply_generated_head(x, head: GeneratedHead) -> tuple[np.ndarray, np.ndarray]:
    """``logits = W x + b`` and the argmax class; numpy only, nothing recorded."""
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.shape[-1] != head.in_dim:
        raise DimensionError(f"feature dim {x.shape[-1]} != head input {head.in_dim}")
    logits = x @ head.weights.T + head.bias
    return logits, np.argmax(logits, axis=-1)
