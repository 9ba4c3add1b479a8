"""Cloud-side training: ADR first (VAE objective), then backbone + hypernetwork."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import adr as adr_mod
from .. import fda as fda_mod
from ..encoder import EncoderParams, encode
from ..numerics import OptimizerState, Tape, adamw_step, backward, gradients_for, no_grad, ops, precision
from ..synthdata import Batch, stack
from .config import ExperimentConfig

log = logging.getLogger(__name__)

ENCODE_CHUNK = 512


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class Models:
    encoder: EncoderParams
    fda: fda_mod.FdaParams
    adr: adr_mod.AdrParams
    head_slot: tuple


    def cast(self) -> "Models":
        """Copy with every parameter re-created at the current default precision."""
        return Models(self.encoder.copy(), self.fda.copy(), self.adr.copy(), self.head_slot)


@dataclass
class TrainResult:
    models: Models
    curves: dict = field(default_factory=dict)


def seed_streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def init_models(config: ExperimentConfig) -> Models:
    r_enc, r_fda, r_adr = seed_streams(config.seed, 3)
    return Models(
        encoder=EncoderParams.init(r_enc, config.d_raw, config.d_model, config.vocab,
                                   max(16, config.n_frames), config.fusion_layers),
        fda=fda_mod.FdaParams.init(r_fda, config.d_model, config.head_slot, config.hidden_h),
        adr=adr_mod.AdrParams.init(r_adr, config.d_model, config.d_latent, config.adr_hidden),
        head_slot=config.head_slot,
    )


def encode_frames(encoder: EncoderParams, batch: Batch) -> np.ndarray:
    """Per-frame fused features ``[n, N_f, d]`` without recording."""
    out = []
    with no_grad():
        for s in range(0, len(batch), ENCODE_CHUNK):
            b = batch.subset(slice(s, s + ENCODE_CHUNK))
            out.append(encode(encoder, b.frames, b.tokens, b.lengths).per_frame.data)
    return np.concatenate(out, axis=0)


def minibatches(n: int, size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for s in range(0, n, size):
        yield perm[s:s + size]


def _finite(value: float, what: str, epoch: int) -> float:
    if not np.isfinite(value):
        raise DivergenceError(f"{what} became non-finite at epoch {epoch}")
    return value


def _step(params, loss, tape, opt):
    grads = gradients_for(tape, backward(tape, loss), params)
    adamw_step(params, grads, opt)


def train_adr(adr_params: adr_mod.AdrParams, F_m: np.ndarray, config: ExperimentConfig,
              rng: np.random.Generator) -> dict:
    """VAE objective (KL + reconstruction + adaptive-generator terms) on cached features."""
    n, n_frames = F_m.shape[:2]
    steps = config.epochs_adr * -(-n // config.batch_size)
    opt = OptimizerState(lr=config.lr_adr, total_steps=steps, weight_decay=config.weight_decay)
    params = adr_params.requires_grad_(True).parameters()
    curves = {k: [] for k in ("adr_total", "adr_kl", "adr_rec", "adr_ag")}
    for epoch in range(config.epochs_adr):
        sums = np.zeros(4)
        for idx in minibatches(n, config.batch_size, rng):
            fm = F_m[idx]
            F_g = fda_mod.aggregate_frames(fm, config.frames_sampled, rng).data
            a_idx = adr_mod.anchor_indices(len(idx), n_frames, config.anchor_policy, rng)
            anchor = fm[np.arange(len(idx)), a_idx]
            with Tape() as tape:
                total, rep = adr_mod.adr_objective(adr_params, F_g, anchor, config.lam, rng,
                                                   config.adain_style_source)
            _finite(rep.total, "ADR loss", epoch)
            _step(params, total, tape, opt)
            sums += len(idx) * np.array([rep.total, rep.kl, rep.rec, rep.ag])
        for key, v in zip(curves, sums / n):
            curves[key].append(float(v))
        log.info("adr epoch %d total %.5f rec %.5f", epoch + 1, curves["adr_total"][-1], curves["adr_rec"][-1])
    adr_params.requires_grad_(False)
    return curves


def generated_logits(fda_params, F_in, x, head_slot):
    """Hypernetwork on ``F_in`` then the generated head on ``x`` (tape-aware)."""
    E = fda_mod.project_embedding(F_in, fda_params)
    W, b = fda_mod.split_head(fda_mod.hyper_forward(E, fda_params), head_slot)
    return ops.add(ops.batched_matvec(W, x), b)


def train_backbone_and_fda(models: Models, batch: Batch, config: ExperimentConfig,
                           rng: np.random.Generator, hyper_input: str = "adr") -> dict:
    """Cross-entropy through encoder, frozen ADR, and hypernetwork.

    ``hyper_input="frames"`` bypasses ADR and feeds the ``D``-frame average
    instead (the ablation without the distribution reasoner).
    """
    if hyper_input not in ("adr", "frames"):
        raise ValueError(f"hyper_input must be adr|frames, got {hyper_input!r}")
    n = len(batch)
    steps = config.epochs * -(-n // config.batch_size)
    opt = OptimizerState(lr=config.lr, total_steps=steps, weight_decay=config.weight_decay)
    models.adr.requires_grad_(False)
    params = models.encoder.requires_grad_(True).parameters() + models.fda.requires_grad_(True).parameters()
    curve = []
    for epoch in range(config.epochs):
        total, correct = 0.0, 0
        for idx in minibatches(n, config.batch_size, rng):
            b = batch.subset(idx)
            a_idx = adr_mod.anchor_indices(len(idx), b.frames.shape[1], config.anchor_policy, rng)
            with Tape() as tape:
                pf = encode(models.encoder, b.frames, b.tokens, b.lengths).per_frame
                if hyper_input == "adr":
                    anchor = ops.take(pf, (np.arange(len(idx)), a_idx))
                    F_in = adr_mod.reason(anchor, models.adr, "stochastic", rng, config.adain_style_source)
                else:
                    F_in = fda_mod.aggregate_frames(pf, config.frames_sampled, rng)
                logits = generated_logits(models.fda, F_in, ops.mean(pf, axis=1), models.head_slot)
                loss = ops.softmax_cross_entropy(logits, b.labels)
            total += _finite(loss.item(), "task loss", epoch) * len(idx)
            correct += int((logits.data.argmax(axis=1) == b.labels).sum())
            _step(params, loss, tape, opt)
        curve.append(total / n)
        log.info("stage2 epoch %d ce %.4f train-acc %.3f", epoch + 1, curve[-1], correct / n)
    models.encoder.requires_grad_(False)
    models.fda.requires_grad_(False)
    return {"task_ce": curve}


def run_phase1_train(config: ExperimentConfig, corpus) -> TrainResult:
    """Both cloud training stages on the pooled history of ``corpus``.

    Parameters are initialised in float64, trained at ``config.precision`` and
    returned in float64.
    """
    init = init_models(config)
    _, _, _, r_stage1, r_stage2 = seed_streams(config.seed, 5)
    history = stack([s for dev in corpus for s in dev.history], max_len=config.max_len)
    with precision(config.precision):
        models = init.cast()
        F_m = encode_frames(models.encoder, history)
        curves = train_adr(models.adr, F_m, config, r_stage1)
        curves.update(train_backbone_and_fda(models, history, config, r_stage2))
    return TrainResult(models.cast(), curves)
