"""Artifact persistence with config-hash chaining.

Every stage writes a JSON artifact embedding the pipeline config hash and the
hashes of the artifacts it consumed. Loading verifies kind and, when an
expected hash is supplied, refuses mismatched upstreams, so a stale or
foreign artifact cannot silently feed a later stage.
"""

from __future__ import annotations

import hashlib
import json
import os

from .errors import ArtifactError


def payload_hash(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def save_artifact(path: str, kind: str, config_hash: str, payload,
                  upstream: dict[str, str] | None = None) -> str:
    """Write the artifact; returns its own content hash."""
    body = {
        "kind": kind,
        "config_hash": config_hash,
        "upstream": upstream or {},
        "payload": payload,
    }
    body["self_hash"] = payload_hash([kind, config_hash, body["upstream"], payload])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(body, fh)
    return body["self_hash"]


def load_artifact(path: str, kind: str, expect_config: str | None = None) -> dict:
    if not os.path.exists(path):
        raise ArtifactError(f"missing:{kind}:{path}")
    with open(path) as fh:
        body = json.load(fh)
    if body.get("kind") != kind:
        raise ArtifactError(f"mismatch:{kind}:{path} holds {body.get('kind')!r}")
    check = payload_hash([body["kind"], body["config_hash"], body["upstream"], body["payload"]])
    if check != body.get("self_hash"):
        raise ArtifactError(f"corrupt:{kind}:{path}")
    if expect_config is not None and body["config_hash"] != expect_config:
        raise ArtifactError(
            f"stale:{kind}:{path} built under config {body['config_hash']}, expected {expect_config}"
        )
    return body


def is_missing(err: ArtifactError) -> bool:
    return str(err).startswith("missing:")
