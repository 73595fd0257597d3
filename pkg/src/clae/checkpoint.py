"""Binary encoder checkpoints: versioned header + named float64 arrays.

Layout:
    magic  b"CLAECKPT"
    u32    format version (little-endian)
    u32    header length, then that many bytes of JSON (sorted keys):
           {"encoder": {...config...}, "seed": int,
            "arrays": [[name, length], ...]}
    for each array, in header order: `length` little-endian float64 values

Little-endian f64 with explicit lengths keeps reruns byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, EncoderState, init_encoder
from .errors import DataFormatError

MAGIC = b"CLAECKPT"
FORMAT_VERSION = 1


def state_arrays(state: EncoderState) -> dict[str, np.ndarray]:
    """Flat named view of every persisted array, in a stable order."""
    out: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(state.weights, state.biases)):
        out[f"layers.{i}.weight"] = w.data
        out[f"layers.{i}.bias"] = b.data
    for i, layer in enumerate(state.bn):
        out[f"bn.{i}.gamma"] = layer["clean"].gamma.data
        out[f"bn.{i}.beta"] = layer["clean"].beta.data
        for branch in ("clean", "adversarial"):
            out[f"bn.{i}.{branch}.running_mean"] = layer[branch].running_mean
            out[f"bn.{i}.{branch}.running_var"] = layer[branch].running_var
    if state.proj_weight is not None:
        out["projection.weight"] = state.proj_weight.data
        out["projection.bias"] = state.proj_bias.data
    return out


def save_checkpoint(state: EncoderState, path) -> None:
    arrays = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in state_arrays(state).items()}
    header = json.dumps({
        "encoder": {
            "input_dim": state.config.input_dim,
            "hidden_dims": list(state.config.hidden_dims),
            "embed_dim": state.config.embed_dim,
            "use_projection_head": state.config.use_projection_head,
            "projection_dim": state.config.projection_dim,
        },
        "seed": state.seed,
        "arrays": [[k, int(v.size)] for k, v in arrays.items()],
    }, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        f.write(header)
        for v in arrays.values():
            f.write(v.tobytes())


def load_checkpoint(path) -> EncoderState:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16:16 + header_len])
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: corrupt checkpoint header") from e
    cfg = EncoderConfig(
        input_dim=header["encoder"]["input_dim"],
        hidden_dims=tuple(header["encoder"]["hidden_dims"]),
        embed_dim=header["encoder"]["embed_dim"],
        use_projection_head=header["encoder"]["use_projection_head"],
        projection_dim=header["encoder"]["projection_dim"],
    )
    state = init_encoder(cfg, header["seed"])
    targets = state_arrays(state)
    offset = 16 + header_len
    for name, length in header["arrays"]:
        if name not in targets:
            raise DataFormatError(f"{path}: unknown array {name!r}")
        end = offset + 8 * length
        if end > len(raw):
            raise DataFormatError(f"{path}: truncated array {name!r}")
        values = np.frombuffer(raw[offset:end], dtype="<f8")
        if values.size != targets[name].size:
            raise DataFormatError(f"{path}: size mismatch for {name!r}")
        targets[name][...] = values.reshape(targets[name].shape)
        offset = end
    if offset != len(raw):
        raise DataFormatError(f"{path}: trailing bytes after arrays")
    return state
