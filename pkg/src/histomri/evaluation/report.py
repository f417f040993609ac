"""Per-structure evaluation report (JSON and a plain-text table)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..core.containers import BinaryMask
from ..errors import MaskTooSmall
from .overlap import dice, format_observer_table, jacobian_report
from .spectral import nwsd


@dataclass
class EvaluationReport:
    structures: dict = field(default_factory=dict)
    jacobian: dict | None = None
    inter_observer: dict | None = None
    params: dict = field(default_factory=dict)

    def mean(self, key: str) -> float:
        vals = [s[key] for s in self.structures.values() if s.get(key) is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self) -> dict:
        return {
            "structures": self.structures,
            "mean_dice": self.mean("dice"),
            "mean_nwsd": self.mean("nwsd"),
            "jacobian": self.jacobian,
            "inter_observer": self.inter_observer,
            "params": self.params,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "EvaluationReport":
        d = json.loads(Path(path).read_text())
        return cls(d["structures"], d.get("jacobian"), d.get("inter_observer"), d.get("params", {}))

    def to_table(self) -> str:
        lines = [f"{'structure':<16}{'DSC':>10}{'nWSD':>12}"]
        for name, s in self.structures.items():
            nw = s.get("nwsd")
            lines.append(f"{name:<16}{s['dice']:>10.4f}{(f'{nw:.5f}' if nw is not None else 'n/a'):>12}")
        lines.append(f"{'mean':<16}{self.mean('dice'):>10.4f}{self.mean('nwsd'):>12.5f}")
        if self.jacobian:
            j = self.jacobian
            lines.append(f"Jacobian: min {j['min']:.4f} max {j['max']:.4f} negative {j['negative_count']}"
                         f" zero {j['zero_count']}")
        if self.inter_observer:
            lines.append("inter-observer DSC")
            lines.append(format_observer_table(self.inter_observer))
        return "\n".join(lines)


def evaluate_structures(reference_labels, registered_labels, structures: Mapping[str, int], spacing=None,
                        k: int = 50, p: float = 2.0, field=None, seed: int = 0) -> EvaluationReport:
    """DSC and nWSD per labelled structure, plus Jacobian statistics of ``field``."""
    ref = np.asarray(getattr(reference_labels, "data", reference_labels))
    reg = np.asarray(getattr(registered_labels, "data", registered_labels))
    spacing = tuple(spacing or getattr(reference_labels, "spacing", (1.0,) * ref.ndim))
    out = {}
    for name, label in structures.items():
        a = BinaryMask(ref == label, spacing)
        b = BinaryMask(reg == label, spacing)
        entry = {"label": int(label), "dice": dice(a, b), "voxels_reference": a.count, "voxels_registered": b.count}
        try:
            entry["nwsd"] = nwsd(a, b, k, p, seed)
        except MaskTooSmall:
            entry["nwsd"] = None
        out[name] = entry
    jac = jacobian_report(field).to_dict() if field is not None else None
    return EvaluationReport(out, jac, None, {"k": k, "p": p})
