"""Anchor-frame distribution reasoner.

A small VAE over fused features plus a parameter-free statistics transfer
(AdaIN-style). Training encodes the D-frame average; serving encodes the single
uploaded anchor frame, decodes a latent draw, and renormalises.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ContractError, DimensionError, Tensor, ops
from .params import ParamSet, dense_init

# sigma in [1e-6, 1e6]
LOGVAR_MIN = 2.0 * np.log(1e-6)
LOGVAR_MAX = 2.0 * np.log(1e6)

STYLE_RECONSTRUCTED = "reconstructed"
STYLE_ANCHOR = "anchor"


class AdrParams(ParamSet):
    prefix = "adr"

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, d_latent: int = 64, hidden: int = 128) -> "AdrParams":
        return cls.from_arrays({
            "enc.w1": dense_init(rng, hidden, d_model),
            "enc.b1": np.zeros(hidden),
            "enc.w2": dense_init(rng, 2 * d_latent, hidden),
            "enc.b2": np.zeros(2 * d_latent),
            "dec.w1": dense_init(rng, hidden, d_latent),
            "dec.b1": np.zeros(hidden),
            "dec.w2": dense_init(rng, d_model, hidden),
            "dec.b2": np.zeros(d_model),
        })

    @property
    def d_model(self) -> int:
        return self["enc.w1"].shape[1]

    @property
    def d_latent(self) -> int:
        return self["dec.w1"].shape[1]


@dataclass
class GaussianPosterior:
    """Diagonal Gaussian; stored as mean and log-variance."""

    mu: Tensor
    logvar: Tensor

    def __post_init__(self):
        self.mu = self.mu if isinstance(self.mu, Tensor) else Tensor(self.mu)
        self.logvar = self.logvar if isinstance(self.logvar, Tensor) else Tensor(self.logvar)

    @classmethod
    def from_sigma(cls, mu, sigma) -> "GaussianPosterior":
        return cls(Tensor(mu), Tensor(2.0 * np.log(np.asarray(sigma, dtype=np.float64))))

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.logvar.data)


@dataclass
class AdrLossReport:
    kl: float
    rec: float
    ag: float
    total: float
    lam: float


def select_anchor(F_m, policy: str = "first", rng: np.random.Generator | None = None):
    """Pick the uploaded frame: index 0, or a uniform random index."""
    per_frame = getattr(F_m, "per_frame", F_m)
    data = getattr(per_frame, "data", per_frame)
    n_frames = np.shape(data)[-2] if np.ndim(data) >= 2 else 0
    if n_frames < 1:
        raise ContractError("no frames to choose an anchor from")
    if policy == "first":
        i = 0
    elif policy == "random":
        if rng is None:
            raise ContractError("random anchor policy needs an rng")
        i = int(rng.integers(n_frames))
    else:
        raise ValueError(f"unknown anchor policy {policy!r}")
    if isinstance(per_frame, Tensor):
        return i, ops.take(per_frame, (Ellipsis, i, slice(None)))
    return i, np.asarray(data)[..., i, :]


def anchor_indices(n: int, n_frames: int, policy: str, rng: np.random.Generator | None) -> np.ndarray:
    """Batched anchor choice, one index per sample."""
    if policy == "first":
        return np.zeros(n, dtype=np.int64)
    if policy == "random":
        return rng.integers(n_frames, size=n)
    raise ValueError(f"unknown anchor policy {policy!r}")


def encode_posterior(feature, params: AdrParams) -> GaussianPosterior:
    if np.shape(getattr(feature, "data", feature))[-1] != params.d_model:
        raise DimensionError(f"ADR encoder expects {params.d_model} features")
    h = ops.tanh(ops.linear(feature, params["enc.w1"], params["enc.b1"]))
    out = ops.linear(h, params["enc.w2"], params["enc.b2"])
    k = params.d_latent
    mu = ops.take(out, (Ellipsis, slice(0, k)))
    logvar = ops.clip(ops.take(out, (Ellipsis, slice(k, 2 * k))), LOGVAR_MIN, LOGVAR_MAX)
    return GaussianPosterior(mu, logvar)


def sample_latent(post: GaussianPosterior, mode: str = "stochastic",
                  rng: np.random.Generator | None = None) -> Tensor:
    """Reparameterised draw ``mu + sigma * eps``, or ``mu`` itself in mean mode."""
    if mode == "mean":
        return post.mu
    if mode != "stochastic":
        raise ValueError(f"unknown sampling mode {mode!r}")
    if rng is None:
        raise ContractError("stochastic sampling needs an rng")
    noise = rng.standard_normal(post.mu.shape)
    return ops.reparam_sample(post.mu, post.logvar, noise)


def decode(latent, params: AdrParams) -> Tensor:
    if np.shape(getattr(latent, "data", latent))[-1] != params.d_latent:
        raise DimensionError(f"ADR decoder expects {params.d_latent} latent dims")
    h = ops.tanh(ops.linear(latent, params["dec.w1"], params["dec.b1"]))
    return ops.linear(h, params["dec.w2"], params["dec.b2"])


def adaptive_generate(style_src, content_src) -> Tensor:
    """Rescale ``content_src`` to the mean/std of ``style_src`` (population std, last axis)."""
    return ops.adain(style_src, content_src)


def renormalize(reconstructed, anchor, style_source: str = STYLE_RECONSTRUCTED) -> Tensor:
    """Apply the adaptive generator with the configured role assignment."""
    if style_source == STYLE_RECONSTRUCTED:
        return adaptive_generate(reconstructed, anchor)
    if style_source == STYLE_ANCHOR:
        return adaptive_generate(anchor, reconstructed)
    raise ValueError(f"unknown adain style source {style_source!r}")


def loss_kl(post: GaussianPosterior) -> Tensor:
    return ops.gaussian_kl(post.mu, post.logvar)


def loss_rec(F_g, F_g_rec) -> Tensor:
    return ops.mse(F_g, F_g_rec)


def loss_ag(F_a, F_g, anchor, lam: float = 0.1) -> Tensor:
    if lam < 0:
        raise ContractError("lambda must be non-negative")
    return ops.add(ops.mul(lam, ops.mse(F_a, F_g)), ops.mse(F_a, anchor))


def loss_total(ag, rec, kl, lam: float = 0.1) -> tuple[Tensor, AdrLossReport]:
    """Unweighted sum of the three terms and a float report of each."""
    total = ops.add(ops.add(ops.as_tensor(ag), rec), kl)
    report = AdrLossReport(kl=_f(kl), rec=_f(rec), ag=_f(ag), total=total.item(), lam=lam)
    return total, report


def _f(x) -> float:
    return float(np.asarray(getattr(x, "data", x)).reshape(()))


def adr_objective(params: AdrParams, F_g, anchor, lam: float, rng: np.random.Generator,
                  style_source: str = STYLE_RECONSTRUCTED) -> tuple[Tensor, AdrLossReport]:
    """Training objective on a batch: encode ``F_g``, reconstruct, renormalise against the anchor."""
    post = encode_posterior(F_g, params)
    F_h = sample_latent(post, "stochastic", rng)
    F_g_rec = decode(F_h, params)
    F_a = renormalize(F_g_rec, anchor, style_source)
    return loss_total(loss_ag(F_a, F_g, anchor, lam), loss_rec(F_g, F_g_rec), loss_kl(post), lam)


def reason(anchor, params: AdrParams, mode: str = "mean", rng: np.random.Generator | None = None,
           style_source: str = STYLE_RECONSTRUCTED) -> Tensor:
    """Anchor feature -> adapted global representation (tape-aware, batched or single)."""
    post = encode_posterior(anchor, params)
    latent = sample_latent(post, mode, rng)
    return renormalize(decode(latent, params), anchor, style_source)


def reason_inference(anchor, params: AdrParams, mode: str = "mean", rng: np.random.Generator | None = None,
                     style_source: str = STYLE_RECONSTRUCTED) -> np.ndarray:
    """Serving path; returns a plain array that replaces the D-frame average."""
    return reason(np.asarray(getattr(anchor, "data", anchor), dtype=np.float64), params, mode, rng,
                  style_source).data
