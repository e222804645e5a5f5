"""Writer for the feature-bundle interchange format.

A bundle is a directory holding ``manifest.json`` plus one raw little-endian
tensor file per array. The manifest declares every tensor (dtype, shape,
file name) along with faces, precomputed scalars, and the grounding record.
This module deliberately reimplements the writer side from the format
documentation instead of importing the scoring core: the sidecar writes,
the core reads, and round-tripping through both implementations is what the
integration tests check.
"""

import json
import re
from pathlib import Path

import numpy as np

from . import BUNDLE_FORMAT_VERSION, ExtractorError
from .features import FACE_EMBED_DIM

_DTYPES = {"float32": "<f4", "uint8": "u1"}


def _safe_filename(key: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", key) + ".bin"


def _check_image(arr: np.ndarray, key: str, channels: tuple) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim != 3 or a.shape[2] not in channels:
        raise ExtractorError(f"{key} must be HxWxC with C in {channels}, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ExtractorError(f"{key} values must be finite and within [0, 1]")
    return a


def write_bundle(
    root,
    image: np.ndarray,
    depth: np.ndarray | None = None,
    masks: dict | None = None,
    embeddings: dict | None = None,
    faces: list = (),
    precomputed: dict | None = None,
    grounding: dict | None = None,
) -> list:
    """Write one bundle directory; returns the list of tensor keys emitted.

    ``embeddings`` maps name -> (vectors, normalized, grid); ``faces`` holds
    (box, embedding) pairs; ``grounding`` is the already-serialized record.
    """
    rootp = Path(root)
    rootp.mkdir(parents=True, exist_ok=True)
    img = _check_image(image, "image", (1, 3))
    h, w = img.shape[:2]

    tensors = {}

    def add(key: str, arr: np.ndarray, dtype: str, extra: dict | None = None):
        entry = {"dtype": dtype, "shape": list(arr.shape), "file": _safe_filename(key)}
        if extra:
            entry.update(extra)
        tensors[key] = entry
        data = np.ascontiguousarray(arr).astype(_DTYPES[dtype])
        (rootp / entry["file"]).write_bytes(data.tobytes())

    add("image", img, "float32")

    if depth is not None:
        d = _check_image(depth, "depth", (1,))
        if d.shape[:2] != (h, w):
            raise ExtractorError(f"depth dims {d.shape[:2]} do not match image {(h, w)}")
        add("depth", d, "float32")

    for name in sorted(masks or {}):
        bits = np.asarray((masks or {})[name])
        if bits.shape != (h, w):
            raise ExtractorError(f"mask {name!r} dims {bits.shape} do not match image {(h, w)}")
        add(f"mask/{name}", bits.astype(bool).astype(np.uint8), "uint8")

    for name in sorted(embeddings or {}):
        vectors, normalized, grid = (embeddings or {})[name]
        v = np.asarray(vectors, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ExtractorError(f"embedding {name!r} must be a non-empty N x D matrix")
        if grid is not None and grid[0] * grid[1] != v.shape[0]:
            raise ExtractorError(
                f"embedding {name!r} grid {grid} does not cover its {v.shape[0]} rows"
            )
        if normalized:
            norms = np.linalg.norm(v.astype(np.float64), axis=1)
            if np.abs(norms - 1.0).max() > 1e-4:
                raise ExtractorError(f"embedding {name!r} flagged normalized but rows are not unit")
        add(
            f"embedding/{name}",
            v,
            "float32",
            {"normalized": bool(normalized), "grid": list(grid) if grid else None},
        )

    face_entries = []
    for box, emb in faces:
        e = np.asarray(emb, dtype=np.float32)
        if e.shape != (FACE_EMBED_DIM,):
            raise ExtractorError(f"face embedding must have dim {FACE_EMBED_DIM}, got {e.shape}")
        x0, y0, x1, y1 = box
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ExtractorError(f"face box {box} does not fit a {w}x{h} frame")
        face_entries.append({"box": [float(v) for v in box], "embedding": [float(v) for v in e]})

    for key, value in (precomputed or {}).items():
        if not np.isfinite(value):
            raise ExtractorError(f"precomputed scalar {key!r} is not finite")

    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "tensors": tensors,
        "faces": face_entries,
        "precomputed": {k: float(v) for k, v in sorted((precomputed or {}).items())},
        "grounding": grounding,
    }
    (rootp / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return sorted(tensors)
