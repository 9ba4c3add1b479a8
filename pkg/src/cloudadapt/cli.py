"""Command line entry point.

Every subcommand accepts ``--config FILE``, ``--seed N``, ``--out PATH`` and
repeatable ``--set key=value`` overrides. Failures print one JSON object on
stderr, ``{"error": <category>, "message": ...}``, and exit non-zero.
"""
from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from . import __version__

# a bad config value is a usage error; the category still says "config"
EXIT_CODES = {"usage": 2, "config": 2, "io": 3, "protocol": 4, "training": 5, "internal": 1}

log = logging.getLogger("cloudadapt")


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", type=Path, help="output file or directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="cloudadapt", description="Cloud-device adaptation toolkit on synthetic multi-modal data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic corpus file")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", parents=[common], help="run both cloud training stages, write a checkpoint")
    p.add_argument("--corpus", type=Path, help="corpus file (generated from the config if omitted)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("serve", parents=[common], help="serve adaptation requests over HTTP")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--max-concurrency", type=int, default=8)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("adapt", parents=[common], help="device client: adapt and predict on realtime samples")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--server", help="base URL of a running server, e.g. http://127.0.0.1:8765")
    src.add_argument("--local", action="store_true", help="answer requests in-process from --checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True, help="device backbone (and cloud models with --local)")
    p.add_argument("--corpus", type=Path, help="corpus file (generated from the config if omitted)")
    p.add_argument("--device", type=int, action="append", help="device id(s); default all")
    p.add_argument("--limit", type=int, help="samples per device")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("bench", parents=[common], help="train and compare the four methods")
    p.add_argument("--corpus", type=Path)
    p.add_argument("--checkpoint", type=Path, help="skip training and use these models")
    p.add_argument("--transport", choices=("inprocess", "http"), default="inprocess")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("delay-table", parents=[common], help="reproduce the transfer-delay grid")
    p.add_argument("--scenarios", type=Path, help="scenario file of name=MBps lines")
    p.set_defaults(func=cmd_delay_table)
    return parser


# --- helpers -------------------------------------------------------------

def load_config(args):
    from .harness.config import ConfigError, ExperimentConfig
    try:
        text = args.config.read_text() if args.config else ""
    except OSError as exc:
        raise CliError("io", f"cannot read config {args.config}: {exc}") from exc
    extra = list(args.overrides)
    if args.seed is not None:
        extra.append(f"seed={args.seed}")
    try:
        return ExperimentConfig.from_text(text + "\n" + "\n".join(extra))
    except ConfigError as exc:
        raise CliError("config", str(exc)) from exc


def load_or_make_corpus(path, config):
    from .synthdata import CorpusFormatError, load_corpus, make_corpus
    if path is None:
        return make_corpus(config.num_devices, config.history, config.realtime, config.num_answers,
                           config.shift_strength, config.seed, config.d_raw, config.n_frames,
                           config.vocab, config.max_len)
    try:
        return load_corpus(path)
    except OSError as exc:
        raise CliError("io", f"cannot read corpus {path}: {exc}") from exc
    except CorpusFormatError as exc:
        raise CliError("io", f"corpus {path}: {exc}") from exc


def load_checkpoint(path):
    from .harness.checkpoint import CheckpointError, load
    try:
        return load(path)
    except OSError as exc:
        raise CliError("io", f"cannot read checkpoint {path}: {exc}") from exc
    except CheckpointError as exc:
        raise CliError("io", f"checkpoint {path}: {exc}") from exc


def emit(text: str, out: Path | None, default_name: str) -> Path | None:
    """Write ``text`` to ``out`` (a file, or a directory given with a trailing slash) or stdout."""
    if out is None:
        sys.stdout.write(text)
        return None
    path = out / default_name if (out.is_dir() or str(out).endswith("/")) else out
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


# --- commands ------------------------------------------------------------

def cmd_gen_corpus(args) -> dict:
    from .synthdata import save_corpus
    config = load_config(args)
    corpus = load_or_make_corpus(None, config)
    out = args.out or Path("corpus.bin")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(out, corpus)
    return {"corpus": str(out), "devices": len(corpus), "config_hash": config.config_hash()}


def cmd_train(args) -> dict:
    from .harness import checkpoint
    from .harness.training import DivergenceError, run_phase1_train
    config = load_config(args)
    corpus = load_or_make_corpus(args.corpus, config)
    try:
        result = run_phase1_train(config, corpus)
    except DivergenceError as exc:
        raise CliError("training", str(exc)) from exc
    out = args.out or Path("run")
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out / "checkpoint.bin", result.models, config.config_hash())
    config.save(out / "config.txt")
    (out / "curves.json").write_text(json.dumps(result.curves, indent=2, sort_keys=True))
    return {"checkpoint": str(out / "checkpoint.bin"), "config_hash": config.config_hash(),
            "final_task_ce": result.curves["task_ce"][-1] if result.curves.get("task_ce") else None}


def _service_for(ckpt, config):
    from .harness.bench import cloud_models
    from .protocol.service import AdaptationService
    return AdaptationService(cloud_models(ckpt.models, config))


def cmd_serve(args) -> dict:
    from .protocol.app import serve
    config = load_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    try:
        handle = serve(_service_for(ckpt, config), args.host, args.port, args.max_concurrency)
    except OSError as exc:
        raise CliError("io", str(exc)) from exc
    url = handle.url
    print(json.dumps({"listening": url, "config_hash": ckpt.config_hash}), flush=True)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()
    handle.stop()
    return {"stopped": url}


def cmd_adapt(args) -> dict:
    from .harness.bench import open_client
    from .harness.evaluate import EvaluationError, run_phase2_phase3_eval
    from .protocol import delay, wire
    from .protocol.client import AdaptClient, HttpTransport
    from .synthdata import split_history_realtime
    config = load_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    _, streams = split_history_realtime(load_or_make_corpus(args.corpus, config))
    if args.device:
        missing = set(args.device) - set(streams)
        if missing:
            raise CliError("usage", f"unknown device id(s): {sorted(missing)}")
        streams = {d: streams[d] for d in args.device}
    if args.limit is not None:
        streams = {d: s[:args.limit] for d, s in streams.items()}
    scenarios = delay.parse_scenarios(config.scenarios)
    try:
        if args.local:
            with open_client(_service_for(ckpt, config), "inprocess", scenarios) as client:
                ev = run_phase2_phase3_eval(ckpt.models.encoder, streams, client, config)
        else:
            client = AdaptClient(HttpTransport(args.server), scenarios)
            try:
                ev = run_phase2_phase3_eval(ckpt.models.encoder, streams, client, config)
            finally:
                client.close()
    except (EvaluationError, wire.DecodeError, wire.RemoteError) as exc:
        raise CliError("protocol", str(exc)) from exc
    result = {"accuracy": ev.accuracy, "per_device": {str(k): v for k, v in ev.per_device.items()},
              "samples": ev.n_samples, "upload_bytes": ev.upload_bytes, "download_bytes": ev.download_bytes,
              "simulated_ms": ev.simulated_ms, "wall_ms_mean": ev.wall_ms_mean}
    if args.out:
        emit(json.dumps(result, indent=2, sort_keys=True) + "\n", args.out, "adapt.json")
    return result


def cmd_bench(args) -> dict:
    from .harness.bench import run_baseline_suite
    from .harness.evaluate import EvaluationError
    from .harness.training import DivergenceError
    config = load_config(args)
    corpus = load_or_make_corpus(args.corpus, config)
    models = load_checkpoint(args.checkpoint).models if args.checkpoint else None
    try:
        report = run_baseline_suite(config, corpus, models=models, transport=args.transport)
    except DivergenceError as exc:
        raise CliError("training", str(exc)) from exc
    except EvaluationError as exc:
        raise CliError("protocol", str(exc)) from exc
    if args.out is None:
        sys.stdout.write(report.to_csv())
        return {"config_hash": report.config_hash}
    csv_path, json_path = report.write(args.out)
    return {"csv": str(csv_path), "json": str(json_path), "config_hash": report.config_hash}


def cmd_delay_table(args) -> dict:
    from .harness.delay_table import format_table, reproduce_delay_table
    from .protocol.delay import load_scenarios
    scenarios = None
    if args.scenarios:
        try:
            scenarios = load_scenarios(args.scenarios)
        except OSError as exc:
            raise CliError("io", f"cannot read scenarios {args.scenarios}: {exc}") from exc
        except ValueError as exc:
            raise CliError("config", str(exc)) from exc
    cells = reproduce_delay_table(scenarios)
    emit(format_table(cells), args.out, "delay_table.txt")
    checked = [c for c in cells if c.reference is not None]
    return {"cells": len(cells), "checked": len(checked), "mismatches": sum(not c.matches for c in checked)}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        summary = args.func(args)
    except CliError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES[exc.category]
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # last resort: still machine-readable
        print(json.dumps({"error": "internal", "message": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return EXIT_CODES["internal"]
    # tables written to stdout keep stdout clean; the summary then goes to stderr
    table_on_stdout = args.command in ("bench", "delay-table") and args.out is None
    print(json.dumps(summary, sort_keys=True), file=sys.stderr if table_on_stdout else sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
