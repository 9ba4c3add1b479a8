"""Run reports: a deterministic CSV table plus a JSON document with everything else."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

CSV_COLUMNS = ("method", "accuracy", "d_param", "c_param", "time_delay_ms")
METHODS = ("F-linear", "Fine-tuning", "F-hyper", "Ours")

# retraining methods have no transfer to simulate; the table carries this nominal figure
NOMINAL_RETRAIN_MS = 60000.0


@dataclass
class MethodResult:
    method: str
    accuracy: float
    per_device: dict
    d_param: int
    c_param: int
    time_delay_ms: float
    delays_ms: dict = field(default_factory=dict)  # scenario -> {"up", "down", "total"}

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"{self.method}: accuracy {self.accuracy} outside [0, 1]")
        self.d_param, self.c_param = int(self.d_param), int(self.c_param)


@dataclass
class RunReport:
    config_hash: str
    seed: int
    methods: list
    curves: dict = field(default_factory=dict)
    report_scenario: str = ""
    measured: dict = field(default_factory=dict)  # wall-clock timings; excluded from the CSV

    def method(self, name: str) -> MethodResult:
        for m in self.methods:
            if m.method == name:
                return m
        raise KeyError(name)

    def accuracy(self, name: str) -> float:
        return self.method(name).accuracy

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for m in self.methods:
            w.writerow([m.method, f"{m.accuracy:.4f}", m.d_param, m.c_param, f"{m.time_delay_ms:.4f}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = asdict(self)
        # JSON object keys must be strings
        for m in d["methods"]:
            m["per_device"] = {str(k): v for k, v in m["per_device"].items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, out_dir, stem: str = "bench") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(self.to_json())
        return csv_path, json_path
