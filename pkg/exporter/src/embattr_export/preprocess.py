"""Image decoding and the fixed preprocessing applied before any backbone.

Every image is decoded as 8-bit RGB, resized to 256 x 256 with bilinear
interpolation, and scaled to [0, 1] by dividing by 255.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

TARGET_SIZE = (256, 256)


def load_image(path) -> np.ndarray:
    """Decoded, resized, normalized image as float64 (256, 256, 3)."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        resized = rgb.resize(TARGET_SIZE, Image.BILINEAR)
    return np.asarray(resized, dtype=np.float64) / 255.0
