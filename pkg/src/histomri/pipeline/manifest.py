"""Run manifest and content-hash cache bookkeeping."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

MANIFEST_NAME = "manifest.json"
CHUNK = 1 << 20


def hash_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(CHUNK), b""):
            h.update(block)
    return h.hexdigest()


def hash_params(params) -> str:
    """SHA-256 of the canonical JSON form of a parameter block."""
    text = json.dumps(params, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def hash_inputs(paths, root=None) -> dict:
    """``{name: sha256}`` for every file; ``name`` is relative to ``root`` when possible."""
    out = {}
    for p in sorted(Path(p) for p in paths):
        key = str(p)
        if root is not None:
            try:
                key = str(p.resolve().relative_to(Path(root).resolve()))
            except ValueError:
                pass
        out[key] = hash_file(p)
    return out


@dataclass
class StageRecord:
    status: str = "pending"
    input_hashes: dict = field(default_factory=dict)
    params_hash: str = ""
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict:
        return {"status": self.status, "input_hashes": self.input_hashes, "params_hash": self.params_hash,
                "outputs": self.outputs, "wall_time": self.wall_time, "error": self.error}

    @classmethod
    def from_dict(cls, d: dict) -> "StageRecord":
        return cls(d.get("status", "pending"), dict(d.get("input_hashes", {})), d.get("params_hash", ""),
                   list(d.get("outputs", [])), float(d.get("wall_time", 0.0)), d.get("error"))


@dataclass
class PipelineManifest:
    """Per-stage hashes, outputs, timing and status for one output directory."""

    stages: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    path: Path | None = None

    @classmethod
    def load(cls, output_dir) -> "PipelineManifest":
        path = Path(output_dir) / MANIFEST_NAME
        if not path.is_file():
            return cls(path=path)
        d = json.loads(path.read_text())
        stages = {k: StageRecord.from_dict(v) for k, v in d.get("stages", {}).items()}
        return cls(stages, d.get("config", {}), path)

    def save(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        d = {"config": self.config, "stages": {k: v.to_dict() for k, v in self.stages.items()}}
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(d, indent=2, sort_keys=True))
        tmp.replace(self.path)
        return self.path

    def record(self, name: str) -> StageRecord:
        return self.stages.setdefault(name, StageRecord())

    def is_fresh(self, name: str, input_hashes: dict, params_hash: str, root) -> bool:
        """True iff a completed prior run used the same inputs and parameters and its outputs still exist."""
        rec = self.stages.get(name)
        if rec is None or rec.status not in ("done", "cached"):
            return False
        if rec.input_hashes != input_hashes or rec.params_hash != params_hash:
            return False
        return all((Path(root) / o).exists() for o in rec.outputs)

    @property
    def complete(self) -> bool:
        return bool(self.stages) and all(r.status in ("done", "cached", "skipped") for r in self.stages.values())

    def to_dict(self) -> dict:
        return {"config": self.config, "stages": {k: v.to_dict() for k, v in self.stages.items()}}
