"""Batch extraction: image groups in, bundle tree plus manifests out.

The input directory provides ``groups.json`` describing candidate groups
(input image, candidate images, grounding boxes). Every enabled feature
family runs on every image, so downstream region plans always find their
inputs. Embedding names follow the scoring core's bundle conventions:
``clip_patch``/``dino_patch`` are grid descriptors, ``clip_cls``/``dino_cls``
single-row image descriptors; perceptual distances land on candidate bundles
as ``lpips/edit`` and ``lpips/non_edit`` scalars.

Per-image failures never abort the batch: the offending image (or its whole
group, when the input image or too many candidates fail) is quarantined with
a reason and extraction continues.
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from . import BUNDLE_FORMAT_VERSION, ExtractorError, __version__
from .bundles import write_bundle
from .config import ExtractorConfig
from .features import (
    depth_proxy,
    detect_faces,
    global_color_embedding,
    global_texture_embedding,
    patch_color_embeddings,
    patch_texture_embeddings,
    perceptual_distance,
    segmentation_masks,
)
from scipy import ndimage


def load_image(path) -> np.ndarray:
    """Read any PIL-supported image as float32 RGB in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            return np.asarray(rgb, dtype=np.float32) / 255.0
    except OSError as exc:
        raise ExtractorError(f"cannot read image {path}: {exc}") from exc


def _resize_rgb(image: np.ndarray, h: int, w: int) -> np.ndarray:
    if image.shape[:2] == (h, w):
        return image
    zoom = (h / image.shape[0], w / image.shape[1], 1.0)
    out = ndimage.zoom(image.astype(np.float64), zoom, order=1, mode="nearest", grid_mode=True)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _scale_boxes(boxes, src_hw, dst_hw):
    sy = dst_hw[0] / src_hw[0]
    sx = dst_hw[1] / src_hw[1]
    return [(x0 * sx, y0 * sy, x1 * sx, y1 * sy) for x0, y0, x1, y1 in boxes]


def edit_mask_from_grounding(grounding: dict, input_hw, frame_hw) -> np.ndarray:
    """Union of grounding boxes rasterized onto the candidate frame.

    Input-side boxes are scaled from the input frame; output-side boxes are
    already in candidate coordinates. Used only to split the perceptual
    distance into edit / non-edit scalars.
    """
    h, w = frame_hw
    mask = np.zeros((h, w), dtype=bool)
    boxes = _scale_boxes(grounding.get("input_boxes", []), input_hw, frame_hw)
    boxes += [tuple(b) for b in grounding.get("output_boxes", [])]
    for x0, y0, x1, y1 in boxes:
        c0 = max(0, int(np.floor(x0)))
        r0 = max(0, int(np.floor(y0)))
        c1 = min(w, int(np.ceil(x1)))
        r1 = min(h, int(np.ceil(y1)))
        if r1 > r0 and c1 > c0:
            mask[r0:r1, c0:c1] = True
    return mask


def extract_image_features(image: np.ndarray, config: ExtractorConfig):
    """Run every enabled family on one image; returns bundle building blocks."""
    embeddings = {}
    if config.enabled("patch_embeddings"):
        embeddings["clip_patch"] = (
            patch_color_embeddings(image, config.patch_grid, config.color_bins),
            True,
            config.patch_grid,
        )
        embeddings["dino_patch"] = (
            patch_texture_embeddings(
                image, config.patch_grid, config.orientation_bins, config.gray_bins
            ),
            True,
            config.patch_grid,
        )
    if config.enabled("global_embeddings"):
        embeddings["clip_cls"] = (global_color_embedding(image, config.color_bins), True, None)
        embeddings["dino_cls"] = (
            global_texture_embedding(image, config.orientation_bins, config.gray_bins),
            True,
            None,
        )
    faces = detect_faces(image, config) if config.enabled("faces") else []
    masks = segmentation_masks(image.shape, faces) if config.enabled("segmentation") else {}
    depth = (
        depth_proxy(image, config.depth_ramp_weight, config.depth_blur_sigma)
        if config.enabled("depth")
        else None
    )
    return embeddings, faces, masks, depth


def _read_groups(image_dir: Path) -> list:
    groups_path = image_dir / "groups.json"
    if not groups_path.exists():
        raise ExtractorError(f"no groups.json under {image_dir}")
    try:
        groups = json.loads(groups_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ExtractorError(f"groups.json is not valid JSON: {exc}") from exc
    if not isinstance(groups, list):
        raise ExtractorError("groups.json must hold a list of group objects")
    for obj in groups:
        for key in ("group_id", "task", "instruction", "input_image", "candidates"):
            if key not in obj:
                raise ExtractorError(f"group entry is missing {key!r}: {obj}")
    return groups


def extract(image_dir, config: ExtractorConfig, out_dir) -> dict:
    """Extract every group; returns the written extraction manifest."""
    image_dir = Path(image_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    inventory = {}
    quarantine = []
    surviving = []

    for obj in _read_groups(image_dir):
        gid = obj["group_id"]
        grounding = dict(obj.get("grounding") or {})
        if grounding:
            grounding.setdefault("task", obj["task"])
            grounding.setdefault("target_phrase", "")
            grounding.setdefault("input_boxes", [])
            grounding.setdefault("output_boxes", [])
            grounding.setdefault("edited_attribute", None)

        try:
            input_image = load_image(image_dir / obj["input_image"])
            embeddings, faces, masks, depth = extract_image_features(input_image, config)
            input_rel = f"bundles/{gid}/input"
            keys = write_bundle(
                out / input_rel,
                input_image,
                depth=depth,
                masks=masks,
                embeddings=embeddings,
                faces=faces,
                grounding=grounding or None,
            )
            inventory[input_rel] = keys
        except ExtractorError as exc:
            quarantine.append(
                {"group": gid, "role": "input", "source": obj["input_image"], "reason": str(exc)}
            )
            continue

        kept = {}
        for cid in sorted(obj["candidates"]):
            source = obj["candidates"][cid]
            try:
                cand_image = load_image(image_dir / source)
                embeddings, faces, masks, depth = extract_image_features(cand_image, config)
                precomputed = {}
                if config.enabled("perceptual") and grounding:
                    edit = edit_mask_from_grounding(
                        grounding, input_image.shape[:2], cand_image.shape[:2]
                    )
                    aligned = _resize_rgb(input_image, *cand_image.shape[:2])
                    precomputed["lpips/edit"] = perceptual_distance(
                        aligned, cand_image, edit, config.perceptual_levels
                    )
                    precomputed["lpips/non_edit"] = perceptual_distance(
                        aligned, cand_image, ~edit, config.perceptual_levels
                    )
                cand_rel = f"bundles/{gid}/{cid}"
                keys = write_bundle(
                    out / cand_rel,
                    cand_image,
                    depth=depth,
                    masks=masks,
                    embeddings=embeddings,
                    faces=faces,
                    precomputed=precomputed,
                )
                inventory[cand_rel] = keys
                kept[cid] = cand_rel
            except ExtractorError as exc:
                quarantine.append({"group": gid, "role": cid, "source": source, "reason": str(exc)})

        if len(kept) < 2:
            quarantine.append(
                {
                    "group": gid,
                    "role": "group",
                    "source": obj["input_image"],
                    "reason": f"only {len(kept)} candidates survived extraction; need at least 2",
                }
            )
            continue
        surviving.append(
            {
                "group_id": gid,
                "task": obj["task"],
                "instruction": obj["instruction"],
                "input_bundle": f"bundles/{gid}/input",
                "candidates": kept,
            }
        )

    lines = [json.dumps(g, sort_keys=True) + "\n" for g in surviving]
    (out / "groups.jsonl").write_text("".join(lines), encoding="utf-8")

    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "extractor_version": __version__,
        "families": config.manifest_entry(),
        "images": {k: inventory[k] for k in sorted(inventory)},
        "quarantine": quarantine,
    }
    (out / "extractor_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest
