"""
Greyscale image ingestion and optical-flow color coding (Pillow).

Intensities live in [0, 1]: 8-bit images are divided by 255, 16-bit ones
by 65535. Axis 0 of every array is the image row.
"""

import logging
from pathlib import Path
from typing import Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from exceptions import ImageFormatError, MissingInput, ShapeMismatch
from grid import GridFunction

logger = logging.getLogger(__name__)

SIXTEEN_BIT_MODES = ("I", "I;16", "I;16B", "I;16L")


def load_image(path) -> GridFunction:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"input image not found: {path}")
    try:
        with Image.open(path) as img:
            if img.mode in SIXTEEN_BIT_MODES:
                values = np.asarray(img, dtype=np.float64) / 65535.0
            else:
                values = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as e:
        logger.error(f"Error reading image {path}: {e}")
        raise ImageFormatError(f"cannot read {path}: {e}") from e
    logger.info("loaded %s (%dx%d)", path, values.shape[0], values.shape[1])
    return GridFunction.from_array(np.clip(values, 0.0, 1.0))


def quantize(u: GridFunction) -> np.ndarray:
    """8-bit grey levels of a single-channel field clamped to [0, 1]"""
    return np.round(np.clip(u.scalar(), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(u: GridFunction, path):
    """Write u as an 8-bit greyscale image; the format follows the extension"""
    path = Path(path)
    try:
        Image.fromarray(quantize(u)).save(path)
    except (ValueError, KeyError) as e:
        logger.error(f"Error writing image {path}: {e}")
        raise ImageFormatError(f"cannot write {path}: {e}") from e


def flow_to_hsv(flow: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hue from the angle, saturation from the magnitude over its 99th percentile"""
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ShapeMismatch(f"expected a (rows, cols, 2) flow array, got {flow.shape}")
    hue = np.mod(np.arctan2(flow[..., 0], flow[..., 1]) / (2.0 * np.pi), 1.0)
    magnitude = np.hypot(flow[..., 0], flow[..., 1])
    p99 = float(np.percentile(magnitude, 99))
    if p99 > 0:
        saturation = np.minimum(1.0, magnitude / p99)
    else:
        saturation = np.zeros_like(magnitude)
    return hue, saturation, np.ones_like(magnitude)


def flow_to_color(flow: GridFunction) -> Image.Image:
    hue, saturation, value = flow_to_hsv(flow.values)
    bands = [Image.fromarray(np.round(band * 255.0).astype(np.uint8)) for band in (hue, saturation, value)]
    return Image.merge("HSV", bands).convert("RGB")
