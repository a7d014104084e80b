"""Self-describing JSON checkpoints with bit-exact parameter payloads.

Each parameter is written as the 16-hex-digit form of its IEEE-754 binary64
bit pattern, most significant nibble first. That is the big-endian byte
sequence of the value, so 1.0 becomes ``"3ff0000000000000"``. Reading
reverses the same mapping, so a save/load roundtrip is bit-exact on any
host regardless of its native byte order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from hybridmo.models import FlatParams, LayerLayout, MlpSpec

FORMAT_VERSION = 1
ROLES = ("generator", "discriminator", "regressor", "fused", "weights")


class CheckpointError(ValueError):
    pass


def float_to_hex(x: float) -> str:
    return struct.pack(">d", float(x)).hex()


def hex_to_float(s: str) -> float:
    if not isinstance(s, str) or len(s) != 16:
        raise CheckpointError(f"malformed hex value {s!r}: expected 16 hex digits")
    try:
        return struct.unpack(">d", bytes.fromhex(s))[0]
    except ValueError as exc:
        raise CheckpointError(f"malformed hex value {s!r}") from exc


def encode_array(values) -> list[str]:
    return [float_to_hex(v) for v in np.asarray(values, dtype=np.float64).reshape(-1)]


def decode_array(items) -> np.ndarray:
    return np.array([hex_to_float(s) for s in items], dtype=np.float64)


@dataclass
class Checkpoint:
    """One model's parameters plus what is needed to rebuild it.

    ``spec`` is a plain mapping (for an MLP: widths and activations) or None
    for bare vectors. ``extra`` holds role-specific arrays such as fusion
    weights, and is stored with the same hex encoding.
    """

    role: str
    params: FlatParams
    spec: dict[str, Any] | None = None
    lam: float | None = None
    config_hash: str = ""
    epoch: int | None = None
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise CheckpointError(f"unknown role {self.role!r}; expected one of {ROLES}")

    def mlp_spec(self) -> MlpSpec:
        if not self.spec or self.spec.get("kind") != "mlp":
            raise CheckpointError("checkpoint does not describe an MLP")
        s = self.spec
        return MlpSpec(tuple(s["widths"]), s["hidden_activation"], s["output_activation"], s["slope"])


def mlp_spec_dict(spec: MlpSpec) -> dict[str, Any]:
    return {"kind": "mlp", "widths": list(spec.widths), "hidden_activation": spec.hidden_activation,
            "output_activation": spec.output_activation, "slope": spec.slope}


def to_document(ckpt: Checkpoint) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "role": ckpt.role,
        "spec": ckpt.spec,
        "layout": [{"name": e.name, "offset": e.offset, "length": e.length, "shape": list(e.shape)}
                   for e in ckpt.params.layout],
        "payload": encode_array(ckpt.params.data),
        "lambda": None if ckpt.lam is None else float_to_hex(ckpt.lam),
        "provenance": {"config_hash": ckpt.config_hash, "epoch": ckpt.epoch},
        "extra": {k: {"shape": list(np.shape(v)), "values": encode_array(v)} for k, v in sorted(ckpt.extra.items())},
    }


def from_document(doc: dict[str, Any]) -> Checkpoint:
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {version!r}; this reader understands {FORMAT_VERSION}")
    try:
        layout = tuple(LayerLayout(e["name"], int(e["offset"]), int(e["length"]), tuple(e["shape"]))
                       for e in doc["layout"])
        payload = decode_array(doc["payload"])
        expected = sum(e.length for e in layout)
        if payload.size != expected:
            raise CheckpointError(f"payload has {payload.size} values but the layout needs {expected}")
        params = FlatParams(payload, layout)
        lam = None if doc.get("lambda") is None else hex_to_float(doc["lambda"])
        prov = doc.get("provenance") or {}
        extra = {k: decode_array(v["values"]).reshape(v["shape"]) for k, v in (doc.get("extra") or {}).items()}
        return Checkpoint(doc["role"], params, doc.get("spec"), lam, prov.get("config_hash", ""),
                          prov.get("epoch"), extra)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing field {exc}") from exc


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    text = json.dumps(to_document(ckpt), indent=1, sort_keys=True) + "\n"
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON: {exc}") from exc
    return from_document(doc)
