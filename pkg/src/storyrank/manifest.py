"""Run manifests: every artifact records the hash of the configuration,
seeds, and input digests that produced it.

The embedded hash covers only the deterministic fields, so rerunning an
identical pipeline yields byte-identical artifacts; wall-clock timings live
in the sidecar manifest file, outside the hash.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from . import __version__


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stable_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)  # name -> sha256
    tool_version: str = __version__
    timings_s: dict[str, float] = field(default_factory=dict)

    @classmethod
    def build(cls, command: str, config: dict,
              input_paths: dict[str, str] | None = None) -> "RunManifest":
        inputs = {name: file_digest(path)
                  for name, path in sorted((input_paths or {}).items())}
        return cls(command=command, config=config, inputs=inputs)

    @property
    def hash(self) -> str:
        return stable_hash({
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "tool_version": self.tool_version,
        })

    def record(self, stage: str, seconds: float) -> None:
        self.timings_s[stage] = round(seconds, 3)

    def write(self, path) -> None:
        payload = {
            "manifest_hash": self.hash,
            "command": self.command,
            "tool_version": self.tool_version,
            "config": self.config,
            "inputs": self.inputs,
            "timings_s": self.timings_s,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
