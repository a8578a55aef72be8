"""Versioned JSON checkpoints: content-hashed, atomically written.

The hash covers the canonical serialization of the payload, so two
checkpoints with equal hashes hold bit-identical state, and a selector
checkpoint can pin the exact low-level policy it was trained against.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def content_hash(payload: dict) -> str:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(body.encode()).hexdigest()


def save_checkpoint(path: str, payload: dict) -> str:
    """Write atomically (temp file + rename); returns the content hash."""
    doc = {"version": FORMAT_VERSION, "hash": content_hash(payload),
           "payload": payload}
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(doc, f)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return doc["hash"]


def load_checkpoint(path: str) -> dict:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version: {doc.get('version')}")
    if content_hash(doc["payload"]) != doc.get("hash"):
        raise CheckpointError(f"checkpoint content hash mismatch: {path}")
    return doc["payload"]


def rng_state(rng) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict):
    import numpy as np

    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
