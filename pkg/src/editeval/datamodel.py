"""Shared domain types and the feature-bundle on-disk format.

A bundle is a directory holding ``manifest.json`` plus one raw binary file per
tensor (little-endian float32, masks as uint8 0/1, row-major, no header).
Face records, precomputed scalars, and the optional grounding record live
inside the manifest itself. Bundles are treated as immutable after load.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import BUNDLE_FORMAT_VERSION

UNIT_NORM_TOL = 1e-4
FACE_EMBED_DIM = 512

EDITED_ATTRIBUTES = ("face", "body", "hair", "none")


class BundleError(ValueError):
    """Raised when a bundle or one of its components violates the format."""


@dataclass
class ImageTensor:
    """Row-major image with values in [0, 1], shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise BundleError(f"image must be 3-dimensional (h, w, c), got shape {arr.shape}")
        if arr.shape[2] not in (1, 3):
            raise BundleError(f"image must have 1 or 3 channels, got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise BundleError(f"image dims must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise BundleError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise BundleError("image values must lie in [0, 1]")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class Mask:
    """Boolean pixel mask, shape (height, width)."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise BundleError(f"mask must be 2-dimensional, got shape {arr.shape}")
        self.bits = arr.astype(bool)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())


@dataclass
class EmbeddingSet:
    """N x D matrix of feature vectors, optionally arranged on a patch grid.

    When ``grid`` is set it is (grid_h, grid_w) with grid_h * grid_w == N and
    vectors stored in row-major grid order.
    """

    vectors: np.ndarray
    normalized: bool = False
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise BundleError(f"embeddings must be a non-empty N x D matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise BundleError("embeddings contain non-finite values")
        if self.normalized:
            norms = np.linalg.norm(arr.astype(np.float64), axis=1)
            if np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
                raise BundleError("embedding set flagged normalized but rows are not unit-norm")
        if self.grid is not None:
            gh, gw = self.grid
            if gh * gw != arr.shape[0]:
                raise BundleError(f"grid {gh}x{gw} does not match embedding count {arr.shape[0]}")
            self.grid = (int(gh), int(gw))
        self.vectors = arr

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _check_box(box, name: str = "box") -> tuple[float, float, float, float]:
    if len(box) != 4:
        raise BundleError(f"{name} must have 4 coordinates, got {len(box)}")
    x0, y0, x1, y1 = (float(v) for v in box)
    if not all(math.isfinite(v) for v in (x0, y0, x1, y1)):
        raise BundleError(f"{name} has non-finite coordinates")
    if x0 < 0 or y0 < 0:
        raise BundleError(f"{name} has negative coordinates: {(x0, y0, x1, y1)}")
    if not (x0 < x1 and y0 < y1):
        raise BundleError(f"{name} must satisfy x0<x1 and y0<y1, got {(x0, y0, x1, y1)}")
    return (x0, y0, x1, y1)


@dataclass
class FaceRecord:
    """Detected face: pixel bounding box plus a 512-d unit identity embedding."""

    box: tuple[float, float, float, float]
    embedding: np.ndarray

    def __post_init__(self):
        self.box = _check_box(self.box, "face box")
        emb = np.asarray(self.embedding, dtype=np.float32)
        if emb.shape != (FACE_EMBED_DIM,):
            raise BundleError(f"face embedding must have dim {FACE_EMBED_DIM}, got shape {emb.shape}")
        norm = float(np.linalg.norm(emb.astype(np.float64)))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise BundleError(f"face embedding must be unit-norm, got norm {norm}")
        self.embedding = emb

    def check_within(self, height: int, width: int) -> None:
        x0, y0, x1, y1 = self.box
        if x1 > width or y1 > height:
            raise BundleError(f"face box {self.box} exceeds image bounds {width}x{height}")

    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


@dataclass
class GroundingRecord:
    """Localized edit targets: boxes on the input and/or output image.

    ``edited_attribute`` is only meaningful for human-centric tasks and names
    the human attribute the instruction modifies.
    """

    task: str
    target_phrase: str
    input_boxes: list[tuple[float, float, float, float]] = field(default_factory=list)
    output_boxes: list[tuple[float, float, float, float]] = field(default_factory=list)
    edited_attribute: str | None = None

    def __post_init__(self):
        self.input_boxes = [_check_box(b, "input box") for b in self.input_boxes]
        self.output_boxes = [_check_box(b, "output box") for b in self.output_boxes]
        if self.edited_attribute is not None and self.edited_attribute not in EDITED_ATTRIBUTES:
            raise BundleError(
                f"edited_attribute must be one of {EDITED_ATTRIBUTES}, got {self.edited_attribute!r}"
            )

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "target_phrase": self.target_phrase,
            "input_boxes": [list(b) for b in self.input_boxes],
            "output_boxes": [list(b) for b in self.output_boxes],
            "edited_attribute": self.edited_attribute,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GroundingRecord":
        return cls(
            task=obj["task"],
            target_phrase=obj.get("target_phrase", ""),
            input_boxes=[tuple(b) for b in obj.get("input_boxes", [])],
            output_boxes=[tuple(b) for b in obj.get("output_boxes", [])],
            edited_attribute=obj.get("edited_attribute"),
        )


@dataclass
class CandidateGroup:
    """One (input image, instruction) group with the candidate outputs to compare.

    Bundle references are filesystem paths; the bundles themselves are loaded
    lazily by whoever consumes the group.
    """

    group_id: str
    task: str
    instruction: str
    input_bundle: str
    candidates: dict[str, str]

    def __post_init__(self):
        if not self.group_id:
            raise BundleError("group_id must be non-empty")
        if len(self.candidates) < 2:
            raise BundleError(
                f"group {self.group_id!r} needs at least 2 candidates for pair synthesis, "
                f"got {len(self.candidates)}"
            )

    def to_json(self) -> dict:
        return {
            "group_id": self.group_id,
            "task": self.task,
            "instruction": self.instruction,
            "input_bundle": self.input_bundle,
            "candidates": dict(self.candidates),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CandidateGroup":
        return cls(
            group_id=obj["group_id"],
            task=obj["task"],
            instruction=obj.get("instruction", ""),
            input_bundle=obj["input_bundle"],
            candidates=dict(obj["candidates"]),
        )


@dataclass
class FeatureBundle:
    """All per-sample features: image plus optional depth, masks, embeddings,
    face records, precomputed scalars, and a grounding record."""

    image: ImageTensor
    depth: ImageTensor | None = None
    masks: dict[str, Mask] = field(default_factory=dict)
    embeddings: dict[str, EmbeddingSet] = field(default_factory=dict)
    faces: list[FaceRecord] = field(default_factory=list)
    precomputed: dict[str, float] = field(default_factory=dict)
    grounding: GroundingRecord | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        h, w = self.image.height, self.image.width
        if self.depth is not None:
            if self.depth.channels != 1:
                raise BundleError("depth map must be single-channel")
            if (self.depth.height, self.depth.width) != (h, w):
                raise BundleError(
                    f"depth dims {self.depth.height}x{self.depth.width} do not match image {h}x{w}"
                )
        for name, mask in self.masks.items():
            if (mask.height, mask.width) != (h, w):
                raise BundleError(
                    f"mask {name!r} dims {mask.height}x{mask.width} do not match image {h}x{w}"
                )
        for face in self.faces:
            face.check_within(h, w)
        for key, value in self.precomputed.items():
            if not math.isfinite(float(value)):
                raise BundleError(f"precomputed scalar {key!r} is not finite")


def _safe_filename(key: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", key) + ".bin"


def _write_tensor(path: Path, arr: np.ndarray, dtype: str) -> None:
    np_dtype = {"float32": "<f4", "uint8": "u1"}[dtype]
    path.write_bytes(np.ascontiguousarray(arr).astype(np_dtype).tobytes())


def _read_tensor(path: Path, dtype: str, shape: tuple[int, ...], key: str) -> np.ndarray:
    np_dtype = {"float32": "<f4", "uint8": "u1"}.get(dtype)
    if np_dtype is None:
        raise BundleError(f"tensor {key!r} has unsupported dtype {dtype!r}")
    if not path.exists():
        raise BundleError(f"tensor file missing for {key!r}: {path}")
    raw = np.frombuffer(path.read_bytes(), dtype=np_dtype)
    expected = int(np.prod(shape))
    if raw.size != expected:
        raise BundleError(
            f"tensor {key!r} declares shape {shape} ({expected} values) but file holds {raw.size}"
        )
    return raw.reshape(shape)


def save_bundle(bundle: FeatureBundle, path) -> None:
    """Write a bundle directory. Overwrites idempotently; output is byte-stable."""
    bundle.validate()
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BundleError(f"cannot create bundle directory {root}: {exc}") from exc

    tensors: dict[str, dict] = {}

    def add(key: str, arr: np.ndarray, dtype: str, extra: dict | None = None):
        entry = {"dtype": dtype, "shape": list(arr.shape), "file": _safe_filename(key)}
        if extra:
            entry.update(extra)
        tensors[key] = entry
        _write_tensor(root / entry["file"], arr, dtype)

    add("image", bundle.image.data, "float32")
    if bundle.depth is not None:
        add("depth", bundle.depth.data, "float32")
    for name in sorted(bundle.masks):
        add(f"mask/{name}", bundle.masks[name].bits.astype(np.uint8), "uint8")
    for name in sorted(bundle.embeddings):
        emb = bundle.embeddings[name]
        add(
            f"embedding/{name}",
            emb.vectors,
            "float32",
            {"normalized": emb.normalized, "grid": list(emb.grid) if emb.grid else None},
        )

    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "tensors": tensors,
        "faces": [
            {"box": list(f.box), "embedding": [float(v) for v in f.embedding]}
            for f in bundle.faces
        ],
        "precomputed": {k: float(v) for k, v in sorted(bundle.precomputed.items())},
        "grounding": bundle.grounding.to_json() if bundle.grounding else None,
    }
    try:
        (root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise BundleError(f"cannot write manifest under {root}: {exc}") from exc


def load_bundle(path) -> FeatureBundle:
    """Load and fully validate a bundle directory."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise BundleError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"manifest is not valid JSON: {exc}") from exc

    version = manifest.get("format_version")
    if version != BUNDLE_FORMAT_VERSION:
        raise BundleError(f"unknown bundle format version {version!r}")

    tensors = manifest.get("tensors", {})
    if "image" not in tensors:
        raise BundleError("manifest declares no image tensor")

    def read(key: str) -> np.ndarray:
        entry = tensors[key]
        return _read_tensor(
            root / entry["file"], entry["dtype"], tuple(entry["shape"]), key
        )

    image = ImageTensor(read("image"))
    depth = None
    masks: dict[str, Mask] = {}
    embeddings: dict[str, EmbeddingSet] = {}
    for key, entry in tensors.items():
        if key == "image":
            continue
        if key == "depth":
            depth = ImageTensor(read(key))
        elif key.startswith("mask/"):
            arr = read(key)
            if not np.isin(arr, (0, 1)).all():
                raise BundleError(f"mask {key!r} holds values other than 0/1")
            masks[key[len("mask/"):]] = Mask(arr.astype(bool))
        elif key.startswith("embedding/"):
            grid = entry.get("grid")
            embeddings[key[len("embedding/"):]] = EmbeddingSet(
                read(key),
                normalized=bool(entry.get("normalized", False)),
                grid=tuple(grid) if grid else None,
            )
        else:
            raise BundleError(f"unknown tensor key {key!r} in manifest")

    faces = [
        FaceRecord(box=tuple(f["box"]), embedding=np.asarray(f["embedding"], dtype=np.float32))
        for f in manifest.get("faces", [])
    ]
    grounding_obj = manifest.get("grounding")
    grounding = GroundingRecord.from_json(grounding_obj) if grounding_obj else None

    return FeatureBundle(
        image=image,
        depth=depth,
        masks=masks,
        embeddings=embeddings,
        faces=faces,
        precomputed={k: float(v) for k, v in manifest.get("precomputed", {}).items()},
        grounding=grounding,
    )


def to_grayscale(image: ImageTensor) -> ImageTensor:
    """Rec. 709 luma; single-channel images pass through as a copy."""
    if image.channels == 1:
        return ImageTensor(image.data.copy())
    weights = np.array([0.2125, 0.7154, 0.0721], dtype=np.float64)
    gray = image.data.astype(np.float64) @ weights
    return ImageTensor(np.clip(gray, 0.0, 1.0).astype(np.float32)[:, :, None])


def resize_to(image: ImageTensor, h: int, w: int) -> ImageTensor:
    """Bilinear resize with half-pixel sample centers, clamped to [0, 1].

    Resizing to the source dims returns the pixels unchanged.
    """
    if h < 1 or w < 1:
        raise BundleError(f"target dims must be positive, got {h}x{w}")
    src = image.data.astype(np.float64)
    sh, sw = image.height, image.width
    if (sh, sw) == (h, w):
        return ImageTensor(image.data.copy())

    ys = (np.arange(h) + 0.5) * (sh / h) - 0.5
    xs = (np.arange(w) + 0.5) * (sw / w) - 0.5
    ys = np.clip(ys, 0.0, sh - 1.0)
    xs = np.clip(xs, 0.0, sw - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]

    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return ImageTensor(np.clip(out, 0.0, 1.0).astype(np.float32))
