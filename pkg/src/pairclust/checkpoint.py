"""Binary parameter checkpoints.

Layout: ``b"PAIRCLST"``, a little-endian u32 format version, a u64 header
length, a UTF-8 JSON header, then every array as raw little-endian float64 in
header order. The header stores each section's network config, array names,
shapes and byte offsets, and free-form metadata. Writing is deterministic and
reading is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import NetworkConfig, NetworkParameters

MAGIC = b"PAIRCLST"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, sections: dict, meta: dict | None = None) -> None:
    """``sections`` maps a tag (e.g. ``"base"``, ``"head"``) to ``(config, params)``."""
    header = {"format_version": FORMAT_VERSION, "meta": meta or {}, "sections": {}}
    blobs = []
    offset = 0
    for tag, (cfg, params) in sections.items():
        entries = []
        for name, w, _ in params.named_arrays():
            data = np.ascontiguousarray(w, dtype="<f8").tobytes()
            entries.append({"name": name, "shape": list(w.shape), "offset": offset})
            blobs.append(data)
            offset += len(data)
        header["sections"][tag] = {"config": cfg.to_dict(), "arrays": entries}
    raw_header = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(raw_header)))
        fh.write(raw_header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Return ``(sections, meta)`` with ``sections[tag] = (config, params)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[20:20 + hlen])
    body = memoryview(raw)[20 + hlen:]
    sections = {}
    for tag, sec in header["sections"].items():
        cfg = NetworkConfig.from_dict(sec["config"])
        weights = [dict() for _ in cfg.layers]
        for entry in sec["arrays"]:
            layer, key = entry["name"].split("/")
            count = int(np.prod(entry["shape"], dtype=np.int64))
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=entry["offset"])
            weights[int(layer)][key] = arr.reshape(entry["shape"]).astype(np.float64)
        sections[tag] = (cfg, NetworkParameters(weights))
    return sections, header["meta"]
