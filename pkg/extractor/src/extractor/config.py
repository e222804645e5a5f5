"""Sidecar configuration: which feature families run, with pinned parameters.

Every producer is versioned so a bundle tree can always be traced back to the
exact extraction recipe. Unknown config keys are rejected rather than ignored;
a silently misspelled knob would otherwise produce untraceable bundles.
"""

import json
from dataclasses import dataclass, fields
from pathlib import Path

from . import ExtractorError

FEATURE_FAMILIES = (
    "patch_embeddings",
    "global_embeddings",
    "faces",
    "segmentation",
    "depth",
    "perceptual",
)

# Producer identity strings recorded in the extractor manifest, one per family.
PRODUCER_VERSIONS = {
    "patch_embeddings": "cell-histogram/1",
    "global_embeddings": "image-histogram/1",
    "faces": "skin-blob+dct/1",
    "segmentation": "face-band-heuristic/1",
    "depth": "ramp-contrast-proxy/1",
    "perceptual": "pyramid-l1/1",
}


@dataclass(frozen=True)
class ExtractorConfig:
    families: tuple = FEATURE_FAMILIES
    patch_grid: tuple = (6, 6)
    color_bins: int = 4
    orientation_bins: int = 16
    gray_bins: int = 16
    face_min_area_frac: float = 0.004
    face_min_fill: float = 0.45
    face_aspect_range: tuple = (0.6, 2.2)
    face_max_count: int = 8
    face_crop_size: int = 64
    depth_ramp_weight: float = 0.7
    depth_blur_sigma: float = 2.0
    perceptual_levels: int = 3

    def __post_init__(self):
        unknown = [f for f in self.families if f not in FEATURE_FAMILIES]
        if unknown:
            raise ExtractorError(f"unknown feature families {unknown}; known: {list(FEATURE_FAMILIES)}")
        if len(set(self.families)) != len(self.families):
            raise ExtractorError("feature families listed twice")
        gh, gw = self.patch_grid
        if gh < 1 or gw < 1:
            raise ExtractorError(f"patch grid must be positive, got {self.patch_grid}")
        if self.color_bins < 2 or self.orientation_bins < 2 or self.gray_bins < 2:
            raise ExtractorError("histogram bin counts must be at least 2")
        if "segmentation" in self.families and "faces" not in self.families:
            raise ExtractorError("segmentation masks derive from face boxes; enable 'faces' too")
        if self.perceptual_levels < 1:
            raise ExtractorError("perceptual pyramid needs at least one level")

    def enabled(self, family: str) -> bool:
        return family in self.families

    def manifest_entry(self) -> dict:
        """Family -> pinned producer + parameters, for the extraction manifest."""
        params = {
            "patch_embeddings": {
                "patch_grid": list(self.patch_grid),
                "color_bins": self.color_bins,
                "orientation_bins": self.orientation_bins,
                "gray_bins": self.gray_bins,
            },
            "global_embeddings": {
                "color_bins": self.color_bins,
                "orientation_bins": self.orientation_bins,
                "gray_bins": self.gray_bins,
            },
            "faces": {
                "min_area_frac": self.face_min_area_frac,
                "min_fill": self.face_min_fill,
                "aspect_range": list(self.face_aspect_range),
                "max_count": self.face_max_count,
                "crop_size": self.face_crop_size,
            },
            "segmentation": {},
            "depth": {
                "ramp_weight": self.depth_ramp_weight,
                "blur_sigma": self.depth_blur_sigma,
            },
            "perceptual": {"levels": self.perceptual_levels},
        }
        return {
            family: {"producer": PRODUCER_VERSIONS[family], "params": params[family]}
            for family in self.families
        }


_TUPLE_FIELDS = ("families", "patch_grid", "face_aspect_range")


def load_config(path) -> ExtractorConfig:
    """Read a JSON config file; missing keys keep their pinned defaults."""
    p = Path(path)
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ExtractorError(f"cannot read config {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ExtractorError(f"config {p} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ExtractorError(f"config {p} must hold a JSON object")
    known = {f.name for f in fields(ExtractorConfig)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ExtractorError(f"unknown config keys {unknown}; known: {sorted(known)}")
    kwargs = {}
    for key, value in obj.items():
        kwargs[key] = tuple(value) if key in _TUPLE_FIELDS else value
    return ExtractorConfig(**kwargs)
