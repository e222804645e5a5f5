"""Deterministic synthetic scenes for extractor tests.

Scenes are seeded numpy constructions saved as PNG, structured enough that
histogram and gradient descriptors differ between images: a sky-to-ground
gradient, a few random rectangles, and an optional tinted center square or
skin-tone face ellipse.
"""

import numpy as np
from PIL import Image

SIDE = 96


def scene(seed: int, tint=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:SIDE, 0:SIDE] / (SIDE - 1.0)
    base = np.stack([0.25 + 0.5 * yy, 0.3 + 0.4 * xx, 0.5 - 0.2 * yy], axis=-1)
    for _ in range(4):
        y0, x0 = rng.integers(5, SIDE - 36, 2)
        h, w = rng.integers(12, 30, 2)
        base[y0 : y0 + h, x0 : x0 + w] = rng.uniform(0.1, 0.9, 3)
    if tint is not None:
        jitter = 0.08 * rng.uniform(-1.0, 1.0, (30, 30, 3))
        base[30:60, 30:60] = np.clip(np.asarray(tint) + jitter, 0.0, 1.0)
    return np.clip(base, 0.0, 1.0).astype(np.float32)


def face_scene(seed: int, skin=(0.85, 0.62, 0.52), shirt=(0.2, 0.3, 0.7)) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:128, 0:128]
    base = np.stack(
        [0.2 + 0.3 * yy / 127.0, 0.35 + 0.2 * xx / 127.0, 0.55 - 0.15 * yy / 127.0], axis=-1
    )
    base += 0.02 * rng.uniform(-1.0, 1.0, base.shape)
    ellipse = ((yy - 45) / 20.0) ** 2 + ((xx - 64) / 14.0) ** 2 <= 1.0
    base[ellipse] = skin
    base[20:32, 44:84] = (0.25, 0.15, 0.1)
    base[70:120, 40:88] = shirt
    return np.clip(base, 0.0, 1.0).astype(np.float32)


def save_png(path, image: np.ndarray) -> None:
    Image.fromarray((image * 255.0).round().astype(np.uint8)).save(path)
