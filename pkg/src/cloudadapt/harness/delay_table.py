"""Reproduce the reference upload/download delay grid from payload sizes alone.

Reference cells are kept as the printed strings so the comparison can round
each computed delay to exactly the precision the reference shows.
"""
from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from ..protocol.delay import DEFAULT_SCENARIOS, KB, NetworkScenario, transfer_delay

# dataset -> (upload KB, download KB)
REFERENCE_PAYLOADS_KB = {
    "MSRVTT": ("0.75", "568.5"),
    "MSVD": ("0.75", "379.4"),
    "TGIF": ("0.75", "583.8"),
}

# dataset -> scenario -> (up ms, down ms), as printed
REFERENCE_DELAYS_MS = {
    "MSRVTT": {"4G-5MBps": ("0.15", "111"), "4G-15MBps": ("0.05", "37.0"),
               "5G-50MBps": ("0.01", "11.1"), "5G-100MBps": ("0.007", "5.55")},
    "MSVD": {"4G-5MBps": ("0.15", "74"), "4G-15MBps": ("0.05", "24.7"),
             "5G-50MBps": ("0.01", "7.41"), "5G-100MBps": ("0.007", "3.71")},
    "TGIF": {"4G-5MBps": ("0.15", "114"), "4G-15MBps": ("0.05", "38.0"),
             "5G-50MBps": ("0.01", "11.4"), "5G-100MBps": ("0.007", "5.70")},
}


@dataclass(frozen=True)
class DelayCell:
    dataset: str
    scenario: str
    direction: str   # "up" | "down"
    nbytes: float
    computed_ms: float
    reference: str | None
    rounded: str | None  # computed value at the reference's printed precision

    @property
    def matches(self) -> bool | None:
        if self.reference is None:
            return None
        return self.rounded == self.reference


def round_like(value: float, reference: str) -> str:
    """Round half-up to as many decimals as ``reference`` prints."""
    places = len(reference.split(".")[1]) if "." in reference else 0
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def reproduce_delay_table(scenarios: list[NetworkScenario] | None = None,
                          payloads_kb: dict | None = None) -> list[DelayCell]:
    """Every (dataset, scenario, direction) cell, compared against the reference where one exists."""
    scenarios = list(DEFAULT_SCENARIOS if scenarios is None else scenarios)
    payloads_kb = REFERENCE_PAYLOADS_KB if payloads_kb is None else payloads_kb
    cells = []
    for dataset, sizes in payloads_kb.items():
        for sc in scenarios:
            ref = REFERENCE_DELAYS_MS.get(dataset, {}).get(sc.name)
            for j, direction in enumerate(("up", "down")):
                nbytes = float(Decimal(str(sizes[j])) * KB)
                ms = transfer_delay(nbytes, sc)
                r = None if ref is None else ref[j]
                cells.append(DelayCell(dataset, sc.name, direction, nbytes, ms, r,
                                       None if r is None else round_like(ms, r)))
    return cells


def format_table(cells: list[DelayCell]) -> str:
    """Grid with one row per dataset and ``up/down`` per scenario column; ``!`` marks a mismatch."""
    scenarios = list(dict.fromkeys(c.scenario for c in cells))
    datasets = list(dict.fromkeys(c.dataset for c in cells))
    by_key = {(c.dataset, c.scenario, c.direction): c for c in cells}

    def show(c: DelayCell) -> str:
        text = c.rounded if c.rounded is not None else f"{c.computed_ms:.4g}"
        return text + ("!" if c.matches is False else "")

    rows = [["dataset"] + scenarios]
    for d in datasets:
        rows.append([d] + [f"{show(by_key[d, s, 'up'])}/{show(by_key[d, s, 'down'])}ms" for s in scenarios])
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows) + "\n"
