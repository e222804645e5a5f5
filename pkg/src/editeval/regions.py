"""Task-to-metric planning and edit/non-edit region construction.

Each supported task maps to a fixed plan: which pipeline handles it, which
image(s) carry the grounding boxes, and which metrics score the edit region
and the non-edit region (exactly one primary metric per non-empty list).
Grounding boxes rasterize to half-open axis-aligned rectangles; the edit
region is the union of boxes and the non-edit region its complement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import GroundingRecord, Mask

OBJECT_CENTRIC = "object-centric"
HUMAN_CENTRIC = "human-centric"

GROUND_ON_INPUT = "input"
GROUND_ON_OUTPUT = "output"
GROUND_ON_BOTH = "both"


class RegionError(ValueError):
    """Raised for unknown tasks or grounding that cannot produce regions."""


@dataclass(frozen=True)
class MetricUse:
    metric_id: str
    primary: bool = False


@dataclass(frozen=True)
class RegionPlan:
    task: str
    pipeline: str
    grounding_on: str
    edit_metrics: tuple[MetricUse, ...]
    non_edit_metrics: tuple[MetricUse, ...]

    def __post_init__(self):
        for region, uses in (("edit", self.edit_metrics), ("non_edit", self.non_edit_metrics)):
            if uses and sum(1 for u in uses if u.primary) != 1:
                raise RegionError(f"plan for {self.task!r} needs exactly one primary {region} metric")

    def primary_metric(self, region: str) -> str | None:
        uses = self.edit_metrics if region == "edit" else self.non_edit_metrics
        for u in uses:
            if u.primary:
                return u.metric_id
        return None

    def auxiliary_metrics(self) -> list[tuple[str, str]]:
        """All non-primary (metric_id, region) pairs of this plan."""
        out = []
        for region, uses in (("edit", self.edit_metrics), ("non_edit", self.non_edit_metrics)):
            out.extend((u.metric_id, region) for u in uses if not u.primary)
        return out

    def scored_regions(self) -> list[str]:
        regions = []
        if self.edit_metrics:
            regions.append("edit")
        if self.non_edit_metrics:
            regions.append("non_edit")
        return regions


@dataclass
class RegionPair:
    """Edit mask and its exact complement over one frame."""

    edit: Mask
    non_edit: Mask

    def __post_init__(self):
        if self.edit.bits.shape != self.non_edit.bits.shape:
            raise RegionError("edit and non-edit masks must share dims")
        if np.any(self.edit.bits & self.non_edit.bits):
            raise RegionError("edit and non-edit regions overlap")
        if not np.all(self.edit.bits | self.non_edit.bits):
            raise RegionError("edit and non-edit regions do not cover the frame")


def _use(metric_id: str, primary: bool = False) -> MetricUse:
    return MetricUse(metric_id, primary)


_SSIM_LPIPS_EMD = (_use("ssim"), _use("lpips", True), _use("emd"))
_LPIPS_EMD = (_use("lpips", True), _use("emd"))
_CLS_PAIR = (_use("clip_cls"), _use("dino_cls", True))
_HUMAN_EDIT = (_use("face_id", True), _use("hair_hf"), _use("body_appearance"))
_HUMAN_NON = (_use("lpips", True), _use("bg_face_id"))

_PLANS: dict[str, RegionPlan] = {
    plan.task: plan
    for plan in (
        RegionPlan("subject addition", OBJECT_CENTRIC, GROUND_ON_OUTPUT, (), _SSIM_LPIPS_EMD),
        RegionPlan("subject removal", OBJECT_CENTRIC, GROUND_ON_INPUT, (), _SSIM_LPIPS_EMD),
        RegionPlan("subject replace", OBJECT_CENTRIC, GROUND_ON_BOTH, (), _SSIM_LPIPS_EMD),
        RegionPlan("size adjustment", OBJECT_CENTRIC, GROUND_ON_BOTH, _CLS_PAIR, _LPIPS_EMD),
        RegionPlan(
            "color alteration",
            OBJECT_CENTRIC,
            GROUND_ON_BOTH,
            (_use("l_ssim", True), _use("dino_structure")),
            _LPIPS_EMD,
        ),
        RegionPlan(
            "material modification",
            OBJECT_CENTRIC,
            GROUND_ON_BOTH,
            (_use("depth_ssim", True), _use("dino_structure")),
            _LPIPS_EMD,
        ),
        RegionPlan("portrait beautification", HUMAN_CENTRIC, GROUND_ON_BOTH, _HUMAN_EDIT, _HUMAN_NON),
        RegionPlan("motion change", HUMAN_CENTRIC, GROUND_ON_BOTH, _HUMAN_EDIT, _HUMAN_NON),
        RegionPlan("text editing", OBJECT_CENTRIC, GROUND_ON_BOTH, (), _SSIM_LPIPS_EMD),
        RegionPlan("character reference", HUMAN_CENTRIC, GROUND_ON_INPUT, (_use("max_face_id", True), ), ()),
        RegionPlan("object reference", OBJECT_CENTRIC, GROUND_ON_BOTH, _CLS_PAIR, ()),
    )
}


def known_tasks() -> list[str]:
    return list(_PLANS)


def plan_for(task: str) -> RegionPlan:
    """Look up the fixed plan row for a task; pure and total over known tasks."""
    try:
        return _PLANS[task]
    except KeyError:
        raise RegionError(f"unknown task {task!r}; known tasks: {', '.join(_PLANS)}") from None


def rasterize_boxes(boxes, frame_h: int, frame_w: int) -> Mask:
    """Union of boxes as a mask; pixel (x, y) is inside iff x0<=x<x1 and y0<=y<y1."""
    bits = np.zeros((frame_h, frame_w), dtype=bool)
    for box in boxes:
        x0, y0, x1, y1 = box
        if x1 > frame_w or y1 > frame_h:
            raise RegionError(f"box {box} exceeds frame {frame_w}x{frame_h}")
        bits[int(np.ceil(y0)) : int(np.ceil(y1)), int(np.ceil(x0)) : int(np.ceil(x1))] = True
    return Mask(bits)


def build_regions(
    plan: RegionPlan,
    grounding: GroundingRecord,
    frame_h: int,
    frame_w: int,
    side: str | None = None,
) -> RegionPair:
    """Construct the edit/non-edit partition for one frame.

    For a plan grounded on both images each side's boxes are rasterized in
    that side's own frame, so ``side`` selects which box list applies here;
    plans grounded on a single image ignore ``side``.
    """
    if plan.grounding_on == GROUND_ON_INPUT:
        required = {"input": grounding.input_boxes}
        boxes = grounding.input_boxes
    elif plan.grounding_on == GROUND_ON_OUTPUT:
        required = {"output": grounding.output_boxes}
        boxes = grounding.output_boxes
    elif plan.grounding_on == GROUND_ON_BOTH:
        required = {"input": grounding.input_boxes, "output": grounding.output_boxes}
        if side not in (GROUND_ON_INPUT, GROUND_ON_OUTPUT):
            raise RegionError(
                f"plan for {plan.task!r} grounds on both images; pass side='input' or side='output'"
            )
        boxes = grounding.input_boxes if side == GROUND_ON_INPUT else grounding.output_boxes
    else:
        raise RegionError(f"bad grounding_on {plan.grounding_on!r}")

    for name, box_list in required.items():
        if not box_list:
            raise RegionError(
                f"plan for {plan.task!r} requires grounding boxes on the {name} image"
            )

    edit = rasterize_boxes(boxes, frame_h, frame_w)
    non_edit = Mask(~edit.bits)
    return RegionPair(edit=edit, non_edit=non_edit)


def combined_edit_mask(
    plan: RegionPlan, grounding: GroundingRecord, frame_h: int, frame_w: int,
    output_scale: tuple[float, float] | None = None,
) -> RegionPair:
    """Partition for pixel-aligned metrics that compare the two frames directly.

    Takes the union of the boxes from every side the plan grounds on, mapped
    into the given frame. ``output_scale`` is (sy, sx) to map output-side box
    coordinates into this frame when resolutions differ.
    """
    boxes: list[tuple[float, float, float, float]] = []
    if plan.grounding_on in (GROUND_ON_INPUT, GROUND_ON_BOTH):
        if not grounding.input_boxes:
            raise RegionError(f"plan for {plan.task!r} requires grounding boxes on the input image")
        boxes.extend(grounding.input_boxes)
    if plan.grounding_on in (GROUND_ON_OUTPUT, GROUND_ON_BOTH):
        if not grounding.output_boxes:
            raise RegionError(f"plan for {plan.task!r} requires grounding boxes on the output image")
        sy, sx = output_scale if output_scale else (1.0, 1.0)
        boxes.extend(
            (x0 * sx, y0 * sy, min(x1 * sx, frame_w), min(y1 * sy, frame_h))
            for x0, y0, x1, y1 in grounding.output_boxes
        )
    edit = rasterize_boxes(boxes, frame_h, frame_w)
    return RegionPair(edit=edit, non_edit=Mask(~edit.bits))


def plan_table() -> str:
    """Render every plan as an aligned text table for docs and the CLI."""
    rows = [("task", "pipeline", "grounding", "edit metrics", "non-edit metrics")]

    def fmt(uses: tuple[MetricUse, ...]) -> str:
        if not uses:
            return "-"
        return ", ".join(f"{u.metric_id}*" if u.primary else u.metric_id for u in uses)

    for plan in _PLANS.values():
        rows.append(
            (plan.task, plan.pipeline, plan.grounding_on, fmt(plan.edit_metrics), fmt(plan.non_edit_metrics))
        )
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n(* = primary metric)"
