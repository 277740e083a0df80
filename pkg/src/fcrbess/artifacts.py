"""Deterministic artifact plumbing: canonical JSON and content hashes.

Every pipeline artifact is JSON with sorted keys and a trailing newline, so
re-running a command on unchanged inputs reproduces the file byte for byte.
Artifacts embed the effective run configuration hash and the hashes of their
input files; wall-clock anything stays out of files and goes to stdout only.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

FORMAT_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(canonical_json(obj))
    return path


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def sha256_json(obj) -> str:
    return sha256_bytes(canonical_json(obj).encode())


def input_stamp(paths: dict) -> dict:
    """{name: {file, sha256}} for every input file an artifact depends on."""
    return {name: {"file": Path(p).name, "sha256": sha256_file(p)}
            for name, p in paths.items() if p is not None}


def artifact_scaffold(kind: str, config_sha: str, inputs: dict) -> dict:
    return {
        "kind": kind,
        "format_version": FORMAT_VERSION,
        "config_sha256": config_sha,
        "inputs": input_stamp(inputs),
    }
