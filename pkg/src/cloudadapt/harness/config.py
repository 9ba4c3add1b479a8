"""Experiment configuration: flat ``key=value`` text, hashed into every artifact."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


DEFAULT_SCENARIOS = "4G-5MBps=5,4G-15MBps=15,5G-50MBps=50,5G-100MBps=100"


@dataclass
class ExperimentConfig:
    # corpus
    num_devices: int = 3
    history: int = 2000
    realtime: int = 500
    num_answers: int = 10
    shift_strength: float = 3.0
    d_raw: int = 32
    n_frames: int = 8
    vocab: int = 64
    max_len: int = 6
    # model
    d_model: int = 192
    fusion_layers: int = 2
    frames_sampled: int = 3
    lam: float = 0.1
    hidden_h: int = 96
    d_latent: int = 64
    adr_hidden: int = 128
    # optimisation
    lr_adr: float = 2e-5
    lr: float = 1e-4
    epochs_adr: int = 10
    epochs: int = 40
    batch_size: int = 64
    weight_decay: float = 0.01
    precision: str = "float32"
    # pipeline switches
    anchor_policy: str = "first"
    adain_style_source: str = "reconstructed"
    sampling_mode: str = "mean"
    seed: int = 0
    scenarios: str = DEFAULT_SCENARIOS
    report_scenario: str = "5G-100MBps"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.anchor_policy not in ("first", "random"):
            raise ConfigError(f"anchor_policy must be first|random, got {self.anchor_policy!r}")
        if self.adain_style_source not in ("reconstructed", "anchor"):
            raise ConfigError(f"adain_style_source must be reconstructed|anchor, got {self.adain_style_source!r}")
        if self.sampling_mode not in ("mean", "stochastic"):
            raise ConfigError(f"sampling_mode must be mean|stochastic, got {self.sampling_mode!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32|float64, got {self.precision!r}")
        if not 1 < self.frames_sampled <= self.n_frames:
            raise ConfigError("frames_sampled must satisfy 1 < D <= n_frames")
        if self.lam < 0 or self.shift_strength < 0:
            raise ConfigError("lam and shift_strength must be non-negative")
        if min(self.epochs, self.epochs_adr) < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    @property
    def head_slot(self) -> tuple[int, int]:
        return (self.d_model, self.num_answers)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], value, key)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def _coerce(kind, value: str, key: str):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from exc
    return value
