"""Voltage error metrics and the per-mode, per-step report."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FIELDS = ("mode", "step", "loading", "amve_pct", "aave_deg", "mmve_pct", "mave_deg",
          "quality", "time_s", "iterations")


def error_metrics(estimated, true) -> dict:
    """Average and maximum magnitude (percent) and angle (degree) errors."""
    est = np.asarray(estimated, dtype=complex).ravel()
    ref = np.asarray(true, dtype=complex).ravel()
    if est.shape != ref.shape:
        raise ValueError(f"estimate has {est.size} voltages, truth has {ref.size}")
    mag = np.abs(ref)
    if np.any(mag == 0):
        raise ValueError("true voltage of zero; relative error undefined")
    dm = 100 * np.abs(np.abs(est) - mag) / mag
    da = np.degrees(np.abs(np.angle(est / ref)))
    return {"amve_pct": float(dm.mean()), "aave_deg": float(da.mean()),
            "mmve_pct": float(dm.max()), "mave_deg": float(da.max())}


@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append({k: row.get(k) for k in FIELDS})

    def row(self, mode: str, step: int) -> dict:
        for r in self.rows:
            if r["mode"] == mode and r["step"] == step:
                return r
        raise KeyError((mode, step))

    def value(self, mode: str, step: int, key: str) -> float:
        return self.row(mode, step)[key]

    def modes(self) -> list[str]:
        return list(dict.fromkeys(r["mode"] for r in self.rows))

    def steps(self) -> list[int]:
        return sorted({r["step"] for r in self.rows})

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(FIELDS))
            w.writeheader()
            w.writerows(self.rows)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.rows, indent=1))

    def table(self) -> str:
        head = f"{'mode':<5}{'step':>5}{'load':>6}{'AMVE%':>9}{'AAVE°':>9}{'MMVE%':>9}" \
               f"{'MAVE°':>9}{'quality':>9}{'time ms':>9}{'iter':>5}"
        lines = [head]
        for r in self.rows:
            lines.append(
                f"{r['mode']:<5}{r['step']:>5}{r['loading']:>6.2f}{r['amve_pct']:>9.3f}"
                f"{r['aave_deg']:>9.4f}{r['mmve_pct']:>9.3f}{r['mave_deg']:>9.4f}"
                f"{r['quality']:>9.3f}{1e3 * r['time_s']:>9.2f}{r['iterations']:>5}")
        return "\n".join(lines)
