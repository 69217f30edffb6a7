"""Run manifests: every artifact-producing command records exactly what
produced its outputs (command, effective config, seed, dataset hash,
code version, timestamps) in a manifest.json next to them."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None = None
    dataset_hash: str | None = None
    code_version: str = __version__
    started_at: str = ""
    finished_at: str = ""
    outputs: list = field(default_factory=list)

    def write(self, out_dir, name="run_manifest.json"):
        path = Path(out_dir) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return path


def utc_now():
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
