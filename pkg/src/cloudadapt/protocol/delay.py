"""Payload accounting and the size/bandwidth transfer-delay model.

Units are binary throughout: 1 KB = 1024 bytes, 1 MB = 1024 KB.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..fda import slot_size

KB = 1024
MB = 1024 * KB
FLOAT_BYTES = 4


@dataclass(frozen=True)
class NetworkScenario:
    name: str
    bandwidth_mbps: float  # MB/s, binary MB
    rtt_ms: float = 0.0    # optional fixed add-on per transfer

    def __post_init__(self):
        if not self.bandwidth_mbps > 0:
            raise ValueError(f"scenario {self.name!r}: bandwidth must be > 0")
        if self.rtt_ms < 0:
            raise ValueError(f"scenario {self.name!r}: rtt must be >= 0")


DEFAULT_SCENARIOS = (
    NetworkScenario("4G-5MBps", 5.0),
    NetworkScenario("4G-15MBps", 15.0),
    NetworkScenario("5G-50MBps", 50.0),
    NetworkScenario("5G-100MBps", 100.0),
)


def upload_bytes(d_model: int) -> int:
    """One fused anchor-frame feature as 32-bit floats."""
    return d_model * FLOAT_BYTES


def download_bytes(in_dim: int, out_dim: int) -> int:
    """Weights plus bias of one linear head as 32-bit floats."""
    return slot_size(in_dim, out_dim) * FLOAT_BYTES


def payload_bytes(direction: str, config) -> int:
    """Float payload only; framing overhead is accounted separately."""
    if direction == "up":
        return upload_bytes(config.d_model)
    if direction == "down":
        return download_bytes(*config.head_slot)
    raise ValueError(f"direction must be up|down, got {direction!r}")


def transfer_delay(nbytes: float, scenario: NetworkScenario) -> float:
    """Milliseconds to move ``nbytes`` at the scenario's bandwidth."""
    if nbytes < 0:
        raise ValueError("byte count must be >= 0")
    return nbytes / (scenario.bandwidth_mbps * MB) * 1000.0 + scenario.rtt_ms


def parse_scenarios(text: str) -> list[NetworkScenario]:
    """Parse ``name=MBps`` entries separated by newlines or commas; ``#`` starts a comment.

    An optional ``@rtt_ms`` suffix adds a fixed latency, e.g. ``lab=100@0.5``.
    """
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        for item in line.split(","):
            item = item.strip()
            if not item:
                continue
            if "=" not in item:
                raise ValueError(f"line {lineno}: expected name=MBps, got {item!r}")
            name, value = (s.strip() for s in item.split("=", 1))
            bw, _, rtt = value.partition("@")
            try:
                out.append(NetworkScenario(name, float(bw), float(rtt) if rtt else 0.0))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from exc
    names = [s.name for s in out]
    if len(set(names)) != len(names):
        raise ValueError("duplicate scenario names")
    if not out:
        raise ValueError("no scenarios given")
    return out


def load_scenarios(path) -> list[NetworkScenario]:
    return parse_scenarios(Path(path).read_text())


def scenario_by_name(scenarios, name: str) -> NetworkScenario:
    for s in scenarios:
        if s.name == name:
            return s
    raise KeyError(f"no scenario named {name!r}")
