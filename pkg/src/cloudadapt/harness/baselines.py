"""Comparison methods that share the trained backbone.

All baselines read features from the frozen cloud encoder so the comparison
isolates the head:

* ``F-linear``: one static linear head fit on the pooled history.
* ``Fine-tuning``: the static head, then retrained per device on that device's
  history (the upper reference; the device would need backprop for this).
* ``F-hyper``: a fresh hypernetwork fed the ``D``-frame average directly, no ADR.
"""
from __future__ import annotations

import logging
import time

import numpy as np

from .. import fda as fda_mod
from ..numerics import OptimizerState, Tape, adamw_step, backward, gradients_for, ops
from ..numerics.tensor import Tensor
from .config import ExperimentConfig
from .training import _finite, generated_logits, minibatches

log = logging.getLogger(__name__)


def train_linear_head(X: np.ndarray, y: np.ndarray, config: ExperimentConfig, rng: np.random.Generator,
                      init: fda_mod.GeneratedHead | None = None, epochs: int | None = None) -> fda_mod.GeneratedHead:
    """Softmax regression with the same optimiser and budget as the main model."""
    epochs = config.epochs if epochs is None else epochs
    in_dim, out_dim = X.shape[1], config.num_answers
    if init is None:
        W = Tensor(np.zeros((out_dim, in_dim)), requires_grad=True)
        b = Tensor(np.zeros(out_dim), requires_grad=True)
    else:
        W = Tensor(init.weights.copy(), requires_grad=True)
        b = Tensor(init.bias.copy(), requires_grad=True)
    n = len(y)
    opt = OptimizerState(lr=config.lr, total_steps=epochs * -(-n // config.batch_size),
                         weight_decay=config.weight_decay)
    for epoch in range(epochs):
        for idx in minibatches(n, config.batch_size, rng):
            with Tape() as tape:
                loss = ops.softmax_cross_entropy(ops.linear(X[idx], W, b), y[idx])
            _finite(loss.item(), "head loss", epoch)
            adamw_step([W, b], gradients_for(tape, backward(tape, loss), [W, b]), opt)
    return fda_mod.GeneratedHead(W.data, b.data)


def train_fhyper(F_m: np.ndarray, y: np.ndarray, config: ExperimentConfig, rng: np.random.Generator,
                 init: fda_mod.FdaParams | None = None) -> fda_mod.FdaParams:
    """Hypernetwork trained on cached per-frame features with the ``D``-frame average as input."""
    if init is None:
        params = fda_mod.FdaParams.init(rng, config.d_model, config.head_slot, config.hidden_h)
    else:
        params = init.copy()
    trainable = params.requires_grad_(True).parameters()
    pooled = F_m.mean(axis=1)
    n = len(y)
    opt = OptimizerState(lr=config.lr, total_steps=config.epochs * -(-n // config.batch_size),
                         weight_decay=config.weight_decay)
    for epoch in range(config.epochs):
        for idx in minibatches(n, config.batch_size, rng):
            F_g = fda_mod.aggregate_frames(F_m[idx], config.frames_sampled, rng)
            with Tape() as tape:
                logits = generated_logits(params, F_g, pooled[idx], config.head_slot)
                loss = ops.softmax_cross_entropy(logits, y[idx])
            _finite(loss.item(), "F-hyper loss", epoch)
            adamw_step(trainable, gradients_for(tape, backward(tape, loss), trainable), opt)
    params.requires_grad_(False)
    return params


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=-1) == labels))


def fit_finetune(X_by_dev: dict, y_by_dev: dict, base: fda_mod.GeneratedHead, config: ExperimentConfig,
                 rng: np.random.Generator) -> tuple[dict, dict]:
    """Per-device heads started from ``base``; returns heads and measured seconds per device."""
    heads, seconds = {}, {}
    for dev in sorted(X_by_dev):
        t0 = time.perf_counter()
        heads[dev] = train_linear_head(X_by_dev[dev], y_by_dev[dev], config, rng, init=base)
        seconds[dev] = time.perf_counter() - t0
    return heads, seconds
