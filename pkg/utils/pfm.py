# File: utils/pfm.py

import logging
import os

import numpy as np

from utils.errors import PfmFormatError

logger = logging.getLogger(__name__)


def write_pfm(path: str, image: np.ndarray) -> None:
    """Write a 2-D (``Pf``) or H x W x 3 (``PF``) image as little-endian PFM.

    Rows are stored bottom-to-top as the format requires; ``image[0]`` is the top row.
    """
    image = np.asarray(image)
    if image.ndim == 2:
        tag = "Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        tag = "PF"
    else:
        raise PfmFormatError(f"cannot write PFM with shape {image.shape}")

    height, width = image.shape[:2]
    data = np.ascontiguousarray(np.flipud(image), dtype="<f4")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"{tag}\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(data.tobytes())
    logger.debug(f"Wrote {tag} image {width}x{height} to {path}")


def read_pfm(path: str) -> np.ndarray:
    """Read a PFM file into float64, top row first."""
    try:
        with open(path, "rb") as f:
            tag = f.readline().strip()
            dims = f.readline().split()
            scale_line = f.readline().strip()
            payload = f.read()
    except OSError as e:
        raise PfmFormatError(f"cannot read PFM {path}: {e}") from e

    if tag == b"Pf":
        channels = 1
    elif tag == b"PF":
        channels = 3
    else:
        raise PfmFormatError(f"{path}: not a PFM file (tag {tag!r})")

    try:
        width, height = int(dims[0]), int(dims[1])
        scale = float(scale_line)
    except (IndexError, ValueError) as e:
        raise PfmFormatError(f"{path}: malformed PFM header") from e
    if width <= 0 or height <= 0 or scale == 0.0:
        raise PfmFormatError(f"{path}: invalid PFM header values")

    dtype = "<f4" if scale < 0 else ">f4"
    expected = width * height * channels * 4
    if len(payload) < expected:
        raise PfmFormatError(f"{path}: truncated PFM payload ({len(payload)} of {expected} bytes)")

    data = np.frombuffer(payload[:expected], dtype=dtype).astype(np.float64)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(data.reshape(shape)).copy()
