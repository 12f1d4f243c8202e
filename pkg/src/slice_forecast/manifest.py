"""Run manifests: enough provenance to reproduce every output bit-exactly.

A manifest lists the command, the resolved configuration and its hash, the
seeds, the package version, and the SHA-256 of every input and output file.
It deliberately records no wall-clock timestamps, so re-running a command
with the same inputs rewrites the identical manifest.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional, Sequence

from . import __version__


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, command: str, config_doc: dict, seed: int,
                   inputs: Optional[dict] = None,
                   outputs: Optional[Sequence] = None,
                   extra: Optional[dict] = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_text = json.dumps(config_doc, sort_keys=True, default=str)
    doc = {
        "command": command,
        "package_version": __version__,
        "seed": seed,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "config": json.loads(config_text),
        "inputs": {str(name): file_sha256(path)
                   for name, path in (inputs or {}).items()},
        "outputs": {str(Path(p).name): file_sha256(p) for p in (outputs or [])},
    }
    if extra:
        doc["extra"] = extra
    path = out_dir / f"manifest-{command}.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path
