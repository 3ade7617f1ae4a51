# File: surrogate/serialization.py

"""Surrogate model files.

Layout: magic ``FMSG``, uint16 version, uint32 header length, UTF-8 JSON
header, then every network parameter as little-endian float32 in the order
listed by the header. Input scalers and output normalizers live in the
header, not in the weight block.
"""

import json
import logging
import os
import struct
import tempfile
from typing import Any, Dict, List, Tuple

import numpy as np
import torch

from surrogate.model import DomainBox, SurrogateModel
from surrogate.networks import BODY_INPUTS, SMITH_INPUTS, BodyNetwork, SmithNetwork, architecture
from utils.errors import SurrogateFormatError
from utils.hashing import canonical_json

logger = logging.getLogger(__name__)

MAGIC = b"FMSG"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def _parameter_layout(module: torch.nn.Module) -> List[Tuple[str, List[int]]]:
    return [(name, list(p.shape)) for name, p in module.named_parameters()]


def _hidden(network: torch.nn.Module) -> List[int]:
    return [layer.out_features for layer in network.mlp.hidden]


def to_bytes(model: SurrogateModel) -> bytes:
    body_lo, body_hi = model.domain.body_bounds()
    smith_lo, smith_hi = model.domain.smith_bounds()
    header: Dict[str, Any] = {
        "format": "fmbrdf-surrogate",
        "domain": model.domain.as_dict(),
        "body": {
            "arch": architecture(_hidden(model.body), len(BODY_INPUTS), 3),
            "inputs": list(BODY_INPUTS),
            "lo": body_lo.tolist(),
            "hi": body_hi.tolist(),
            "log_mean": float(model.body.log_mean),
            "log_std": float(model.body.log_std),
            "parameters": _parameter_layout(model.body),
        },
        "smith": {
            "arch": architecture(_hidden(model.smith), len(SMITH_INPUTS), 1),
            "inputs": list(SMITH_INPUTS),
            "lo": smith_lo.tolist(),
            "hi": smith_hi.tolist(),
            "parameters": _parameter_layout(model.smith),
        },
        "metrics": model.metrics,
        "replay": model.replay,
    }
    payload = canonical_json(header).encode("utf-8")
    chunks = [_PREFIX.pack(MAGIC, VERSION, len(payload)), payload]
    for module in (model.body, model.smith):
        for _, p in module.named_parameters():
            chunks.append(np.ascontiguousarray(p.detach().cpu().numpy(), dtype="<f4").tobytes())
    return b"".join(chunks)


def from_bytes(blob: bytes) -> SurrogateModel:
    if len(blob) < _PREFIX.size:
        raise SurrogateFormatError("truncated surrogate model file")
    magic, version, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise SurrogateFormatError(f"bad magic {magic!r}, not a surrogate model file")
    if version != VERSION:
        raise SurrogateFormatError(f"unsupported surrogate model version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
        domain = DomainBox.from_dict(header["domain"])
        body_spec = header["body"]
        smith_spec = header["smith"]
        body = BodyNetwork(body_spec["lo"], body_spec["hi"], body_spec["arch"]["hidden"],
                           log_mean=body_spec["log_mean"], log_std=body_spec["log_std"])
        smith = SmithNetwork(smith_spec["lo"], smith_spec["hi"], smith_spec["arch"]["hidden"])
    except (ValueError, KeyError, TypeError) as e:
        raise SurrogateFormatError(f"malformed surrogate header: {e}") from e

    offset = start + header_len
    for module, spec in ((body, body_spec), (smith, smith_spec)):
        params = dict(module.named_parameters())
        if [name for name, _ in spec["parameters"]] != list(params):
            raise SurrogateFormatError("surrogate weight layout does not match its architecture")
        for name, shape in spec["parameters"]:
            count = int(np.prod(shape)) if shape else 1
            end = offset + 4 * count
            if end > len(blob):
                raise SurrogateFormatError("truncated surrogate weight block")
            values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float64)
            with torch.no_grad():
                params[name].copy_(torch.from_numpy(values.reshape(shape)).to(params[name].dtype))
            offset = end
    if offset != len(blob):
        raise SurrogateFormatError(f"{len(blob) - offset} unexpected trailing bytes in surrogate file")

    arch = {"body_hidden": body_spec["arch"]["hidden"], "smith_hidden": smith_spec["arch"]["hidden"]}
    return SurrogateModel(body, smith, domain, metrics=header.get("metrics"), replay=header.get("replay"), arch=arch)


def save(model: SurrogateModel, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    with os.fdopen(fd, "wb") as f:
        f.write(to_bytes(model))
    os.replace(tmp, path)
    logger.info(f"Saved surrogate model to {path}")


def load(path: str) -> SurrogateModel:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise SurrogateFormatError(f"cannot read surrogate model {path}: {e}") from e
    model = from_bytes(blob)
    logger.info(f"Loaded surrogate model from {path} (metrics: {model.metrics})")
    return model
