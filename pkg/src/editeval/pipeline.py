"""Batch scoring: resolve bundle features per plan and compute every metric.

This is the glue between region plans and the metric operations. For one
candidate group it loads the input bundle and each candidate bundle, derives
the edit/non-edit partition from grounding boxes (or an explicit ``edit``
mask), picks the right features for every (metric, region) the plan lists,
and emits one CandidateScore per candidate.

Feature naming conventions inside bundles:

- embeddings: ``clip_patch``/``dino_patch`` (unit rows, grid set) and
  ``clip_cls``/``dino_cls`` (single unit row);
- masks: ``hair`` and ``body`` for human-centric metrics, optional ``edit``
  to override box-derived edit regions;
- precomputed scalars: ``lpips/non_edit`` and ``lpips/edit`` on candidates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .datamodel import (
    CandidateGroup,
    FeatureBundle,
    GroundingRecord,
    ImageTensor,
    Mask,
    load_bundle,
    resize_to,
    to_grayscale,
)
from .metrics import (
    MetricError,
    MetricValue,
    SsimParams,
    bg_face_consistency,
    body_appearance,
    cls_cosine,
    depth_ssim,
    face_id_cosine,
    hair_hf_diff,
    ingest_precomputed,
    l_channel_ssim,
    max_match_face_id,
    patch_centers_in_mask,
    patch_emd,
    ssim,
    structure_distance,
)
from .regions import (
    GROUND_ON_BOTH,
    GROUND_ON_INPUT,
    GROUND_ON_OUTPUT,
    RegionError,
    RegionPlan,
    plan_for,
    rasterize_boxes,
)
from .synthesis import CandidateScore


class PipelineError(ValueError):
    """Raised when a bundle lacks the features a plan's metrics need."""


def _scale_boxes(boxes, sy: float, sx: float, h: int, w: int):
    return [
        (x0 * sx, y0 * sy, min(x1 * sx, float(w)), min(y1 * sy, float(h)))
        for x0, y0, x1, y1 in boxes
    ]


def edit_mask_for_frame(
    plan: RegionPlan,
    grounding: GroundingRecord,
    frame_h: int,
    frame_w: int,
    input_dims: tuple[int, int],
    output_dims: tuple[int, int],
) -> Mask:
    """Union of every grounded box list, mapped into one target frame.

    Input-side boxes live in input-image coordinates and output-side boxes in
    output-image coordinates; both are rescaled into the target frame so a
    single partition can serve pixel-aligned comparisons.
    """
    boxes: list[tuple[float, float, float, float]] = []
    if plan.grounding_on in (GROUND_ON_INPUT, GROUND_ON_BOTH):
        if not grounding.input_boxes:
            raise RegionError(f"plan for {plan.task!r} requires grounding boxes on the input image")
        sy, sx = frame_h / input_dims[0], frame_w / input_dims[1]
        boxes.extend(_scale_boxes(grounding.input_boxes, sy, sx, frame_h, frame_w))
    if plan.grounding_on in (GROUND_ON_OUTPUT, GROUND_ON_BOTH):
        if not grounding.output_boxes:
            raise RegionError(f"plan for {plan.task!r} requires grounding boxes on the output image")
        sy, sx = frame_h / output_dims[0], frame_w / output_dims[1]
        boxes.extend(_scale_boxes(grounding.output_boxes, sy, sx, frame_h, frame_w))
    return rasterize_boxes(boxes, frame_h, frame_w)


@dataclass
class _Context:
    """Everything resolved once per (input, candidate) pair."""

    plan: RegionPlan
    input_bundle: FeatureBundle
    candidate: FeatureBundle
    grounding: GroundingRecord
    edit_input_frame: Mask
    edit_candidate_frame: Mask

    @property
    def non_edit_input_frame(self) -> Mask:
        return Mask(~self.edit_input_frame.bits)

    @property
    def non_edit_candidate_frame(self) -> Mask:
        return Mask(~self.edit_candidate_frame.bits)

    def region_mask(self, region: str) -> Mask:
        return self.edit_input_frame if region == "edit" else self.non_edit_input_frame


def _resolve_grounding(plan: RegionPlan, candidate: FeatureBundle, input_bundle: FeatureBundle) -> GroundingRecord:
    grounding = candidate.grounding if candidate.grounding is not None else input_bundle.grounding
    if grounding is None:
        raise PipelineError(f"plan for {plan.task!r} needs a grounding record in the bundle")
    return grounding


def _build_context(plan: RegionPlan, input_bundle: FeatureBundle, candidate: FeatureBundle) -> _Context:
    in_dims = (input_bundle.image.height, input_bundle.image.width)
    out_dims = (candidate.image.height, candidate.image.width)
    grounding = _resolve_grounding(plan, candidate, input_bundle)

    override = input_bundle.masks.get("edit")
    if override is not None:
        edit_in = override
        if out_dims == in_dims:
            edit_out = override
        else:
            resized = resize_to(
                ImageTensor(override.bits.astype(np.float32)[:, :, None]), out_dims[0], out_dims[1]
            )
            edit_out = Mask(resized.data[:, :, 0] >= 0.5)
    else:
        edit_in = edit_mask_for_frame(plan, grounding, in_dims[0], in_dims[1], in_dims, out_dims)
        edit_out = edit_mask_for_frame(plan, grounding, out_dims[0], out_dims[1], in_dims, out_dims)
    return _Context(
        plan=plan,
        input_bundle=input_bundle,
        candidate=candidate,
        grounding=grounding,
        edit_input_frame=edit_in,
        edit_candidate_frame=edit_out,
    )


def _embedding(bundle: FeatureBundle, name: str, what: str):
    if name not in bundle.embeddings:
        raise PipelineError(f"{what} bundle is missing embedding {name!r}")
    return bundle.embeddings[name]


def _mask(bundle: FeatureBundle, name: str, what: str) -> Mask:
    if name not in bundle.masks:
        raise PipelineError(f"{what} bundle is missing mask {name!r}")
    return bundle.masks[name]


def _aligned_candidate_image(ctx: _Context) -> ImageTensor:
    img = ctx.candidate.image
    h, w = ctx.input_bundle.image.height, ctx.input_bundle.image.width
    if (img.height, img.width) != (h, w):
        img = resize_to(img, h, w)
    return img


def _masked_embeddings(bundle: FeatureBundle, name: str, keep: Mask, what: str):
    emb = _embedding(bundle, name, what)
    if emb.grid is None:
        raise PipelineError(f"{what} embedding {name!r} needs a patch grid for region selection")
    sel = patch_centers_in_mask(emb.grid, keep)
    if not sel.any():
        raise PipelineError(f"no {name!r} patches fall inside the requested region of the {what} image")
    from .datamodel import EmbeddingSet

    return EmbeddingSet(bundle.embeddings[name].vectors[sel], normalized=emb.normalized, grid=None)


def _target_face(bundle: FeatureBundle, edit_mask: Mask, what: str):
    """The face whose box best overlaps the edit region (largest intersection)."""
    if not bundle.faces:
        return None
    h, w = edit_mask.height, edit_mask.width
    best, best_overlap = None, -1.0
    for face in bundle.faces:
        x0, y0, x1, y1 = face.box
        sub = edit_mask.bits[
            int(np.floor(y0)) : int(np.ceil(y1)), int(np.floor(x0)) : int(np.ceil(x1))
        ]
        overlap = float(sub.sum())
        if overlap > best_overlap:
            best, best_overlap = face, overlap
    return best


def _background_faces(bundle: FeatureBundle, edit_mask: Mask):
    """Faces whose centers lie outside the edit region."""
    out = []
    for face in bundle.faces:
        cx, cy = face.center()
        iy = min(int(cy), edit_mask.height - 1)
        ix = min(int(cx), edit_mask.width - 1)
        if not edit_mask.bits[iy, ix]:
            out.append(face)
    return out


def compute_metric(ctx: _Context, metric_id: str, region: str, ssim_params: SsimParams = SsimParams()) -> MetricValue:
    """Compute one registered metric for one region of an input/candidate pair."""
    input_bundle, candidate = ctx.input_bundle, ctx.candidate
    mask = ctx.region_mask(region)

    if metric_id == "ssim":
        value = ssim(
            to_grayscale(input_bundle.image),
            to_grayscale(_aligned_candidate_image(ctx)),
            mask=mask,
            params=ssim_params,
        )
        return MetricValue("ssim", region, value.value, value.orientation)
    if metric_id == "l_ssim":
        value = l_channel_ssim(
            input_bundle.image, _aligned_candidate_image(ctx), mask=mask, params=ssim_params
        )
        return MetricValue("l_ssim", region, value.value, value.orientation)
    if metric_id == "depth_ssim":
        if input_bundle.depth is None or candidate.depth is None:
            raise PipelineError("depth_ssim needs depth maps on both bundles")
        cand_depth = candidate.depth
        h, w = input_bundle.depth.height, input_bundle.depth.width
        if (cand_depth.height, cand_depth.width) != (h, w):
            cand_depth = resize_to(cand_depth, h, w)
        value = depth_ssim(input_bundle.depth, cand_depth, mask=mask, params=ssim_params)
        return MetricValue("depth_ssim", region, value.value, value.orientation)
    if metric_id == "lpips":
        return ingest_precomputed(candidate, "lpips", region)
    if metric_id == "emd":
        keep_in = ctx.non_edit_input_frame if region == "non_edit" else ctx.edit_input_frame
        keep_out = ctx.non_edit_candidate_frame if region == "non_edit" else ctx.edit_candidate_frame
        a = _masked_embeddings(input_bundle, "clip_patch", keep_in, "input")
        b = _masked_embeddings(candidate, "clip_patch", keep_out, "candidate")
        value = patch_emd(a, b)
        return MetricValue("emd", region, value.value, value.orientation)
    if metric_id in ("clip_cls", "dino_cls"):
        a = _embedding(input_bundle, metric_id, "input")
        b = _embedding(candidate, metric_id, "candidate")
        return cls_cosine(a.vectors[0], b.vectors[0], metric_id=metric_id)
    if metric_id == "dino_structure":
        a = _embedding(input_bundle, "dino_patch", "input")
        b = _embedding(candidate, "dino_patch", "candidate")
        value = structure_distance(a, b)
        return MetricValue("dino_structure", region, value.value, value.orientation)
    if metric_id == "hair_hf":
        return hair_hf_diff(
            to_grayscale(input_bundle.image),
            _mask(input_bundle, "hair", "input"),
            to_grayscale(candidate.image),
            _mask(candidate, "hair", "candidate"),
        )
    if metric_id == "body_appearance":
        return body_appearance(
            _embedding(input_bundle, "dino_patch", "input"),
            _mask(input_bundle, "body", "input"),
            _embedding(candidate, "dino_patch", "candidate"),
            _mask(candidate, "body", "candidate"),
        )
    if metric_id == "face_id":
        ref = _target_face(input_bundle, ctx.edit_input_frame, "input")
        out = _target_face(candidate, ctx.edit_candidate_frame, "candidate")
        if ref is None or out is None:
            return MetricValue("face_id", region, -1.0, "higher", flag="no-face")
        return face_id_cosine(ref, out)
    if metric_id == "bg_face_id":
        return bg_face_consistency(
            _background_faces(input_bundle, ctx.edit_input_frame),
            _background_faces(candidate, ctx.edit_candidate_frame),
        )
    if metric_id == "max_face_id":
        ref = _target_face(input_bundle, ctx.edit_input_frame, "input")
        if ref is None:
            raise PipelineError("max_face_id needs a reference face on the input bundle")
        return max_match_face_id(ref, candidate.faces)
    raise PipelineError(f"no pipeline binding for metric {metric_id!r}")


def score_candidate(
    plan: RegionPlan,
    input_bundle: FeatureBundle,
    candidate: FeatureBundle,
    group_id: str,
    candidate_id: str,
    ssim_params: SsimParams = SsimParams(),
) -> CandidateScore:
    """All plan metrics for one candidate against the group input."""
    ctx = _build_context(plan, input_bundle, candidate)
    metrics: dict[tuple[str, str], MetricValue] = {}
    for region, uses in (("edit", plan.edit_metrics), ("non_edit", plan.non_edit_metrics)):
        for use in uses:
            try:
                metrics[(use.metric_id, region)] = compute_metric(
                    ctx, use.metric_id, region, ssim_params=ssim_params
                )
            except (MetricError, RegionError) as exc:
                raise PipelineError(
                    f"group {group_id!r} candidate {candidate_id!r}: "
                    f"{use.metric_id}/{region} failed: {exc}"
                ) from exc
    return CandidateScore(group_id=group_id, candidate_id=candidate_id, metrics=metrics)


def score_group(
    group: CandidateGroup,
    bundle_root: str | Path | None = None,
    ssim_params: SsimParams = SsimParams(),
    loaded: Mapping[str, FeatureBundle] | None = None,
) -> list[CandidateScore]:
    """Score every candidate in a group, loading bundles from disk or a cache.

    ``loaded`` short-circuits disk access for tests and services that already
    hold FeatureBundles keyed by the group's bundle references.
    """
    plan = plan_for(group.task)

    def fetch(ref: str) -> FeatureBundle:
        if loaded is not None and ref in loaded:
            return loaded[ref]
        path = Path(ref)
        if bundle_root is not None and not path.is_absolute():
            path = Path(bundle_root) / path
        return load_bundle(path)

    input_bundle = fetch(group.input_bundle)
    return [
        score_candidate(plan, input_bundle, fetch(ref), group.group_id, cid, ssim_params=ssim_params)
        for cid, ref in sorted(group.candidates.items())
    ]


def scores_to_jsonl(scores: Iterable[CandidateScore]) -> str:
    """One line per (group, candidate, metric, region) for batch output files."""
    lines = []
    for score in scores:
        for (metric_id, region), value in sorted(score.metrics.items()):
            lines.append(
                json.dumps(
                    {
                        "group_id": score.group_id,
                        "candidate_id": score.candidate_id,
                        "metric_id": metric_id,
                        "region": region,
                        "value": value.value,
                        "orientation": value.orientation,
                        "flag": value.flag,
                    },
                    sort_keys=True,
                )
            )
    return "\n".join(lines) + "\n" if lines else ""


def scores_from_jsonl(text: str) -> list[CandidateScore]:
    """Rebuild CandidateScores from the line format written by scores_to_jsonl."""
    by_candidate: dict[tuple[str, str], CandidateScore] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        key = (obj["group_id"], obj["candidate_id"])
        score = by_candidate.setdefault(
            key, CandidateScore(group_id=key[0], candidate_id=key[1], metrics={})
        )
        score.metrics[(obj["metric_id"], obj["region"])] = MetricValue(
            metric_id=obj["metric_id"],
            region=obj["region"],
            value=float(obj["value"]),
            orientation=obj["orientation"],
            flag=obj.get("flag"),
        )
    return list(by_candidate.values())
