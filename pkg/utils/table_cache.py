# File: utils/table_cache.py

"""On-disk cache for tabulated microfacet quantities.

Layout: magic ``FMTB``, uint16 version, uint32 header length, UTF-8 JSON
header, then the grid as raw little-endian float64.
"""

import hashlib
import json
import logging
import os
import struct
import tempfile
from typing import Any, Dict, Optional

import numpy as np

from utils.hashing import canonical_json

logger = logging.getLogger(__name__)

MAGIC = b"FMTB"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def _path_for(cache_dir: str, header: Dict[str, Any]) -> str:
    digest = hashlib.sha256(canonical_json(header).encode("utf-8")).hexdigest()[:20]
    return os.path.join(cache_dir, f"{header['kind']}_{digest}.fmtb")


def load_table(cache_dir: Optional[str], header: Dict[str, Any]) -> Optional[np.ndarray]:
    """Return the cached grid for ``header`` or None when absent or unreadable."""
    if not cache_dir:
        return None
    path = _path_for(cache_dir, header)
    if not os.path.exists(path):
        return None
    try:
        with open(path, "rb") as f:
            magic, version, header_len = _PREFIX.unpack(f.read(_PREFIX.size))
            if magic != MAGIC or version != VERSION:
                logger.warning(f"Ignoring table cache {path}: bad magic or version {version}")
                return None
            stored = json.loads(f.read(header_len).decode("utf-8"))
            if canonical_json(stored) != canonical_json(header):
                logger.warning(f"Ignoring table cache {path}: header mismatch")
                return None
            grid = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)
    except (OSError, ValueError, struct.error) as e:
        logger.warning(f"Ignoring unreadable table cache {path}: {e}")
        return None
    shape = tuple(header.get("shape", (grid.size,)))
    if int(np.prod(shape)) != grid.size:
        logger.warning(f"Ignoring table cache {path}: expected {shape}, found {grid.size} values")
        return None
    logger.debug(f"Loaded {header['kind']} table from {path}")
    return grid.reshape(shape)


def store_table(cache_dir: Optional[str], header: Dict[str, Any], grid: np.ndarray) -> None:
    if not cache_dir:
        return
    try:
        os.makedirs(cache_dir, exist_ok=True)
        payload = canonical_json(header).encode("utf-8")
        path = _path_for(cache_dir, header)
        fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".tmp")
        with os.fdopen(fd, "wb") as f:
            f.write(_PREFIX.pack(MAGIC, VERSION, len(payload)))
            f.write(payload)
            f.write(np.ascontiguousarray(grid, dtype="<f8").tobytes())
        os.replace(tmp, path)
        logger.debug(f"Stored {header['kind']} table at {path}")
    except OSError as e:
        logger.warning(f"Could not write table cache under {cache_dir}: {e}")
