"""Shared record of acceptance checks, printed by conftest at the end of the run."""

CRITERIA = {
    1: "delay table",
    2: "payload sizes",
    3: "gradient correctness",
    4: "ADR analytics",
    5: "protocol",
    6: "backprop-free device path",
    7: "end-to-end adaptation",
    8: "bench determinism",
}

RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


def record(criterion: int, check: str, ok: bool, detail: str = "") -> None:
    RESULTS.setdefault(criterion, []).append((check, bool(ok), detail))


def lines() -> list[str]:
    out = []
    for n, title in CRITERIA.items():
        checks = RESULTS.get(n)
        if not checks:
            out.append(f"[ -- ] {n}. {title}: not run")
            continue
        status = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        parts = [f"{c}{'' if ok else ' FAILED'}{f' ({d})' if d else ''}" for c, ok, d in checks]
        out.append(f"[{status}] {n}. {title}: " + "; ".join(parts))
    return out
