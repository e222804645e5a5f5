"""Deterministic CPU feature producers.

Each producer stands in for one family of the usual GPU vision backbones
with a classical, fully pinned algorithm: histogram descriptors for patch
and image embeddings, a skin-blob heuristic plus DCT identity code for
faces, band heuristics for hair/body segmentation, a ramp-and-contrast
proxy for monocular depth, and a pyramid L1 for perceptual distance. The
point is the bundle contract — unit-normalized rows, declared grids,
well-formed boxes — not the visual fidelity of any single feature.

All functions take float32 HWC images with values in [0, 1].
"""

import numpy as np
from scipy import ndimage
from scipy.fft import dctn

from . import ExtractorError

FACE_EMBED_DIM = 512

# Classic 8-bit skin chroma window (Cr in 133..173, Cb in 77..127), centered.
_CR_RANGE = (133.0 / 255.0 - 0.5, 173.0 / 255.0 - 0.5)
_CB_RANGE = (77.0 / 255.0 - 0.5, 127.0 / 255.0 - 0.5)


def _require_rgb(image: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ExtractorError(f"{name} expects an HxWx3 image, got shape {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ExtractorError(f"{name} needs at least a 2x2 image, got shape {arr.shape}")
    return arr


def _l2_rows(rows: np.ndarray) -> np.ndarray:
    m = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ExtractorError("cannot normalize an all-zero descriptor row")
    return (m / norms).astype(np.float32)


def _luma(image: np.ndarray) -> np.ndarray:
    return image[:, :, 0] * 0.299 + image[:, :, 1] * 0.587 + image[:, :, 2] * 0.114


def _cell_slices(length: int, cells: int):
    if length < cells:
        raise ExtractorError(f"image side {length} is smaller than the {cells}-cell grid")
    bounds = np.linspace(0, length, cells + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def _color_histogram(pixels: np.ndarray, bins: int) -> np.ndarray:
    """Joint RGB histogram of an (N, 3) pixel block, smoothed and flattened."""
    idx = np.clip((pixels * bins).astype(int), 0, bins - 1)
    flat = (idx[:, 0] * bins + idx[:, 1]) * bins + idx[:, 2]
    hist = np.bincount(flat, minlength=bins**3).astype(np.float64)
    return hist / pixels.shape[0] + 1e-4


def _texture_histogram(
    gray: np.ndarray, gx: np.ndarray, gy: np.ndarray, orientation_bins: int, gray_bins: int
) -> np.ndarray:
    """Magnitude-weighted gradient orientations joined with a gray histogram."""
    mag = np.hypot(gx, gy).ravel()
    theta = np.mod(np.arctan2(gy, gx).ravel(), np.pi)
    o_idx = np.clip((theta / np.pi * orientation_bins).astype(int), 0, orientation_bins - 1)
    o_hist = np.bincount(o_idx, weights=mag, minlength=orientation_bins).astype(np.float64)
    total = o_hist.sum()
    if total > 0.0:
        o_hist /= total
    g_idx = np.clip((gray.ravel() * gray_bins).astype(int), 0, gray_bins - 1)
    g_hist = np.bincount(g_idx, minlength=gray_bins).astype(np.float64) / gray.size
    return np.concatenate([o_hist, g_hist]) + 1e-4


def patch_color_embeddings(image: np.ndarray, grid: tuple, color_bins: int) -> np.ndarray:
    """(gh*gw, color_bins^3) unit-row color descriptors in row-major grid order."""
    arr = _require_rgb(image, "patch_color_embeddings")
    gh, gw = grid
    rows = []
    for rs in _cell_slices(arr.shape[0], gh):
        for cs in _cell_slices(arr.shape[1], gw):
            rows.append(_color_histogram(arr[rs, cs].reshape(-1, 3), color_bins))
    return _l2_rows(np.stack(rows))


def patch_texture_embeddings(
    image: np.ndarray, grid: tuple, orientation_bins: int, gray_bins: int
) -> np.ndarray:
    """(gh*gw, orientation_bins+gray_bins) unit-row texture descriptors."""
    arr = _require_rgb(image, "patch_texture_embeddings")
    gray = _luma(arr)
    gy, gx = np.gradient(gray.astype(np.float64))
    gh, gw = grid
    rows = []
    for rs in _cell_slices(arr.shape[0], gh):
        for cs in _cell_slices(arr.shape[1], gw):
            rows.append(
                _texture_histogram(gray[rs, cs], gx[rs, cs], gy[rs, cs], orientation_bins, gray_bins)
            )
    return _l2_rows(np.stack(rows))


def global_color_embedding(image: np.ndarray, color_bins: int) -> np.ndarray:
    arr = _require_rgb(image, "global_color_embedding")
    return _l2_rows(_color_histogram(arr.reshape(-1, 3), color_bins)[None, :])


def global_texture_embedding(image: np.ndarray, orientation_bins: int, gray_bins: int) -> np.ndarray:
    arr = _require_rgb(image, "global_texture_embedding")
    gray = _luma(arr)
    gy, gx = np.gradient(gray.astype(np.float64))
    return _l2_rows(_texture_histogram(gray, gx, gy, orientation_bins, gray_bins)[None, :])


def _resize_gray(gray: np.ndarray, size: int) -> np.ndarray:
    h, w = gray.shape
    zoom = (size / h, size / w)
    return ndimage.zoom(gray.astype(np.float64), zoom, order=1, mode="nearest", grid_mode=True)


def _zigzag_indices(n: int):
    """(row, col) pairs of an n x n grid in zigzag scan order."""
    order = []
    for s in range(2 * n - 1):
        rows = range(min(s, n - 1), max(0, s - n + 1) - 1, -1)
        diag = [(r, s - r) for r in rows]
        order.extend(diag if s % 2 else diag[::-1])
    return order


def face_identity_embedding(gray_crop: np.ndarray, crop_size: int) -> np.ndarray:
    """512-d unit DCT code of the resized face crop; low frequencies first."""
    resized = _resize_gray(gray_crop, crop_size)
    coeffs = dctn(resized, norm="ortho")
    coeffs[0, 0] += 1e-6  # a perfectly flat crop must still yield a nonzero code
    flat = np.array([coeffs[r, c] for r, c in _zigzag_indices(crop_size)[:FACE_EMBED_DIM]])
    return _l2_rows(flat[None, :])[0]


def detect_faces(image: np.ndarray, config) -> list:
    """Skin-chroma blob detection; returns [(box, embedding)] sorted by position.

    Boxes are (x0, y0, x1, y1) pixel coordinates. Images without a plausible
    skin blob legitimately yield an empty list.
    """
    arr = _require_rgb(image, "detect_faces")
    h, w = arr.shape[:2]
    y = _luma(arr)
    cr = (arr[:, :, 0] - y) * 0.713
    cb = (arr[:, :, 2] - y) * 0.564
    skin = (
        (cr >= _CR_RANGE[0]) & (cr <= _CR_RANGE[1]) & (cb >= _CB_RANGE[0]) & (cb <= _CB_RANGE[1])
    )
    labels, count = ndimage.label(skin)
    candidates = []
    for i in range(1, count + 1):
        component = labels == i
        area = int(component.sum())
        if area < config.face_min_area_frac * h * w:
            continue
        ys, xs = np.nonzero(component)
        y0, y1 = int(ys.min()), int(ys.max()) + 1
        x0, x1 = int(xs.min()), int(xs.max()) + 1
        box_h, box_w = y1 - y0, x1 - x0
        aspect = box_h / box_w
        lo, hi = config.face_aspect_range
        if not lo <= aspect <= hi:
            continue
        if area / (box_h * box_w) < config.face_min_fill:
            continue
        candidates.append((area, (float(x0), float(y0), float(x1), float(y1))))
    candidates.sort(key=lambda t: (-t[0], t[1]))
    kept = [box for _, box in candidates[: config.face_max_count]]
    kept.sort(key=lambda b: (b[1], b[0]))
    gray = _luma(arr)
    faces = []
    for box in kept:
        x0, y0, x1, y1 = (int(v) for v in box)
        crop = gray[y0:y1, x0:x1]
        faces.append((box, face_identity_embedding(crop, config.face_crop_size)))
    return faces


def segmentation_masks(image_shape: tuple, faces: list) -> dict:
    """Hair and body masks as bands anchored on the detected face boxes."""
    if not faces:
        return {}
    h, w = image_shape[:2]
    hair = np.zeros((h, w), dtype=bool)
    body = np.zeros((h, w), dtype=bool)
    for box, _ in faces:
        x0, y0, x1, y1 = box
        fh, fw = y1 - y0, x1 - x0
        hx0 = max(0, int(x0 - 0.25 * fw))
        hx1 = min(w, int(x1 + 0.25 * fw))
        hy0 = max(0, int(y0 - 0.45 * fh))
        hy1 = min(h, int(y0 + 0.35 * fh))
        hair[hy0:hy1, hx0:hx1] = True
        bx0 = max(0, int(x0 - 0.6 * fw))
        bx1 = min(w, int(x1 + 0.6 * fw))
        by0 = min(h, int(y0 + 0.8 * fh))
        by1 = min(h, int(y1 + 2.5 * fh))
        body[by0:by1, bx0:bx1] = True
    return {"hair": hair, "body": body}


def depth_proxy(image: np.ndarray, ramp_weight: float, blur_sigma: float) -> np.ndarray:
    """(h, w, 1) float32 pseudo-depth: top-of-frame far, low-contrast far."""
    arr = _require_rgb(image, "depth_proxy")
    h, w = arr.shape[:2]
    gray = _luma(arr).astype(np.float64)
    ramp = np.linspace(1.0, 0.0, h)[:, None] * np.ones((1, w))
    gy, gx = np.gradient(gray)
    contrast = ndimage.gaussian_filter(np.hypot(gx, gy), blur_sigma)
    peak = contrast.max()
    if peak > 0.0:
        contrast = contrast / peak
    depth = ramp_weight * ramp + (1.0 - ramp_weight) * (1.0 - contrast)
    return np.clip(depth, 0.0, 1.0).astype(np.float32)[:, :, None]


def _downsample(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape[:2]
    h2, w2 = max(1, h // 2), max(1, w // 2)
    return arr[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2, -1).mean(axis=(1, 3))


def perceptual_distance(a: np.ndarray, b: np.ndarray, mask: np.ndarray, levels: int) -> float:
    """Mean absolute pyramid difference restricted to the mask; always >= 0."""
    a = _require_rgb(a, "perceptual_distance")
    b = _require_rgb(b, "perceptual_distance")
    if a.shape != b.shape:
        raise ExtractorError(f"perceptual distance needs equal shapes, got {a.shape} vs {b.shape}")
    if mask.shape != a.shape[:2]:
        raise ExtractorError(f"mask shape {mask.shape} does not match image {a.shape[:2]}")
    da, db = a.astype(np.float64), b.astype(np.float64)
    dm = mask.astype(np.float64)[:, :, None]
    totals = []
    for _ in range(levels):
        weight = dm.sum() * da.shape[2]
        if weight > 0.0:
            totals.append(float((np.abs(da - db) * dm).sum() / weight))
        da, db, dm = _downsample(da), _downsample(db), _downsample(dm)
    return float(np.mean(totals)) if totals else 0.0
