"""The four-method comparison on one corpus."""
from __future__ import annotations

import logging
import time
from contextlib import contextmanager

import numpy as np

from .. import fda as fda_mod
from ..numerics import precision
from ..protocol import delay
from ..protocol.client import AdaptClient, HttpTransport, InProcessTransport
from ..protocol.service import AdaptationService, CloudModels
from ..synthdata import split_history_realtime, stack
from . import baselines
from .config import ExperimentConfig
from .evaluate import UPLOAD_ANCHOR, UPLOAD_FRAME_MEAN, run_phase2_phase3_eval
from .report import NOMINAL_RETRAIN_MS, MethodResult, RunReport
from .training import Models, encode_frames, init_models, run_phase1_train, seed_streams

log = logging.getLogger(__name__)

TRANSPORTS = ("inprocess", "http")


def cloud_models(models: Models, config: ExperimentConfig, fda=None, use_adr: bool = True) -> CloudModels:
    return CloudModels(fda=models.fda if fda is None else fda, adr=models.adr, head_slot=models.head_slot,
                       style_source=config.adain_style_source, sampling_mode=config.sampling_mode,
                       seed=config.seed, use_adr=use_adr)


@contextmanager
def open_client(service: AdaptationService, transport: str, scenarios):
    """A client bound to ``service`` over the chosen transport."""
    if transport == "inprocess":
        client = AdaptClient(InProcessTransport(service), scenarios)
        yield client
        client.close()
    elif transport == "http":
        from ..protocol.app import serve  # uvicorn is only needed for this path
        with serve(service) as handle:
            client = AdaptClient(HttpTransport(handle.url), scenarios)
            try:
                yield client
            finally:
                client.close()
    else:
        raise ValueError(f"transport must be one of {TRANSPORTS}, got {transport!r}")


def _static_accuracy(head: fda_mod.GeneratedHead, X: np.ndarray, y: np.ndarray) -> float:
    _, pred = fda_mod.apply_generated_head(X, head)
    return float(np.mean(pred == y))


def run_baseline_suite(config: ExperimentConfig, corpus, models: Models | None = None,
                       transport: str = "inprocess", methods=("F-linear", "Fine-tuning", "F-hyper", "Ours"),
                       curves: dict | None = None) -> RunReport:
    """Train (unless ``models`` is given) and evaluate the requested methods."""
    scenarios = delay.parse_scenarios(config.scenarios)
    report_sc = delay.scenario_by_name(scenarios, config.report_scenario)
    measured = {}
    if models is None:
        t0 = time.perf_counter()
        result = run_phase1_train(config, corpus)
        measured["phase1_train_s"] = time.perf_counter() - t0
        models, curves = result.models, result.curves
    curves = curves or {}

    _, streams = split_history_realtime(corpus)
    hist = {d.device_id: stack(d.history, config.max_len) for d in corpus}
    rt = {d.device_id: stack(streams[d.device_id], config.max_len) for d in corpus}
    F_hist = {k: encode_frames(models.encoder, b) for k, b in hist.items()}
    X_rt = {k: encode_frames(models.encoder, b).mean(axis=1) for k, b in rt.items()}
    devs = sorted(hist)
    X_all = np.concatenate([F_hist[k].mean(axis=1) for k in devs])
    y_all = np.concatenate([hist[k].labels for k in devs])
    n_rt = sum(len(rt[k]) for k in devs)

    d_param = models.encoder.count() + fda_mod.slot_size(*models.head_slot)
    up = delay.payload_bytes("up", config)
    down = delay.payload_bytes("down", config)
    sims = {s.name: {"up": delay.transfer_delay(up, s), "down": delay.transfer_delay(down, s)} for s in scenarios}
    for v in sims.values():
        v["total"] = v["up"] + v["down"]
    hyper_delay = sims[report_sc.name]["total"]

    # one stream per baseline so adding/removing a method does not shift the others
    r_lin, r_ft, r_fh, r_eval_fh, r_eval = seed_streams(config.seed + 1_000_003, 5)
    results = []
    lin_head = None
    if "F-linear" in methods or "Fine-tuning" in methods:
        t0 = time.perf_counter()
        with precision(config.precision):
            lin_head = baselines.train_linear_head(X_all, y_all, config, r_lin)
        measured["F-linear_train_s"] = time.perf_counter() - t0
    if "F-linear" in methods:
        per = {k: _static_accuracy(lin_head, X_rt[k], rt[k].labels) for k in devs}
        acc = sum(per[k] * len(rt[k]) for k in devs) / n_rt
        results.append(MethodResult("F-linear", acc, per, d_param, 0, NOMINAL_RETRAIN_MS))
    if "Fine-tuning" in methods:
        with precision(config.precision):
            heads, seconds = baselines.fit_finetune({k: F_hist[k].mean(axis=1) for k in devs},
                                                    {k: hist[k].labels for k in devs}, lin_head, config, r_ft)
        measured["Fine-tuning_retrain_s"] = {str(k): v for k, v in seconds.items()}
        per = {k: _static_accuracy(heads[k], X_rt[k], rt[k].labels) for k in devs}
        acc = sum(per[k] * len(rt[k]) for k in devs) / n_rt
        results.append(MethodResult("Fine-tuning", acc, per, d_param, 0, NOMINAL_RETRAIN_MS))
    if "F-hyper" in methods:
        t0 = time.perf_counter()
        with precision(config.precision):
            fh = baselines.train_fhyper(np.concatenate([F_hist[k] for k in devs]), y_all, config, r_fh,
                                        init=init_models(config).fda)
        fh = fh.copy()  # back to float64 for serving
        measured["F-hyper_train_s"] = time.perf_counter() - t0
        service = AdaptationService(cloud_models(models, config, fda=fh, use_adr=False))
        with open_client(service, transport, scenarios) as client:
            ev = run_phase2_phase3_eval(models.encoder, streams, client, config, r_eval_fh, upload=UPLOAD_FRAME_MEAN)
        measured["F-hyper_wall_ms_mean"] = ev.wall_ms_mean
        results.append(MethodResult("F-hyper", ev.accuracy, ev.per_device, d_param, fh.count(), hyper_delay, sims))
    if "Ours" in methods:
        service = AdaptationService(cloud_models(models, config))
        with open_client(service, transport, scenarios) as client:
            ev = run_phase2_phase3_eval(models.encoder, streams, client, config, r_eval, upload=UPLOAD_ANCHOR)
        measured["Ours_wall_ms_mean"] = ev.wall_ms_mean
        results.append(MethodResult("Ours", ev.accuracy, ev.per_device, d_param,
                                    models.fda.count() + models.adr.count(), hyper_delay, sims))
    for m in results:
        log.info("%-12s acc %.4f", m.method, m.accuracy)
    return RunReport(config_hash=config.config_hash(), seed=config.seed, methods=results, curves=curves,
                     report_scenario=report_sc.name, measured=measured)
