"""Tests for plan-driven batch scoring over feature bundles."""

import numpy as np
import pytest

from editeval.datamodel import (
    CandidateGroup,
    EmbeddingSet,
    FaceRecord,
    FeatureBundle,
    GroundingRecord,
    ImageTensor,
    Mask,
    save_bundle,
)
from editeval.pipeline import (
    PipelineError,
    edit_mask_for_frame,
    score_candidate,
    score_group,
    scores_from_jsonl,
    scores_to_jsonl,
)
from editeval.regions import (
    GROUND_ON_OUTPUT,
    OBJECT_CENTRIC,
    MetricUse,
    RegionError,
    RegionPlan,
    plan_for,
)

H = W = 32
GRID = (4, 4)
PATCH_DIM = 8
# 4x4 grid on a 32px frame puts patch centers at 4, 12, 20, 28; the standard
# (8, 8, 24, 24) edit box therefore captures exactly rows/cols 1..2 of the grid.
EDIT_BOX = (8.0, 8.0, 24.0, 24.0)
EDIT_PATCHES = [5, 6, 9, 10]


def unit_axis(axis, dim):
    v = np.zeros(dim, dtype=np.float32)
    v[axis] = 1.0
    return v


def cycling_rows(n, dim, offset=0):
    return np.stack([unit_axis((i + offset) % dim, dim) for i in range(n)])


def patch_set(offset=0, perturb=()):
    rows = cycling_rows(GRID[0] * GRID[1], PATCH_DIM, offset)
    for idx in perturb:
        rows[idx] = unit_axis((idx + 4) % PATCH_DIM, PATCH_DIM)
    return EmbeddingSet(rows, normalized=True, grid=GRID)


def base_image(seed=0, h=H, w=W):
    rng = np.random.default_rng(seed)
    return ImageTensor(rng.uniform(0.2, 0.8, size=(h, w, 3)).astype(np.float32))


def color_grounding():
    return GroundingRecord(
        task="color alteration",
        target_phrase="the vase",
        input_boxes=[EDIT_BOX],
        output_boxes=[EDIT_BOX],
    )


def color_input_bundle():
    return FeatureBundle(
        image=base_image(seed=1),
        embeddings={"clip_patch": patch_set(), "dino_patch": patch_set(offset=1)},
        grounding=color_grounding(),
    )


def color_candidate(image_seed=1, clip_perturb=(), dino_perturb=(), lpips=0.0):
    return FeatureBundle(
        image=base_image(seed=image_seed),
        embeddings={
            "clip_patch": patch_set(perturb=clip_perturb),
            "dino_patch": patch_set(offset=1, perturb=dino_perturb),
        },
        precomputed={"lpips/non_edit": lpips},
    )


# -- frame mapping ----------------------------------------------------------


class TestEditMaskForFrame:
    def test_boxes_rescale_into_each_frame(self):
        plan = plan_for("subject replace")
        grounding = GroundingRecord(
            task="subject replace",
            target_phrase="the cat",
            input_boxes=[(2.0, 2.0, 6.0, 6.0)],
            output_boxes=[(16.0, 16.0, 24.0, 24.0)],
        )
        in_frame = edit_mask_for_frame(plan, grounding, 16, 16, (16, 16), (32, 32))
        # input box unscaled (16 px) plus the output box shrunk by half (16 px)
        assert in_frame.area == 32
        assert in_frame.bits[2:6, 2:6].all()
        assert in_frame.bits[8:12, 8:12].all()

        out_frame = edit_mask_for_frame(plan, grounding, 32, 32, (16, 16), (32, 32))
        assert out_frame.area == 128
        assert out_frame.bits[4:12, 4:12].all()
        assert out_frame.bits[16:24, 16:24].all()

    def test_missing_required_side_is_an_error(self):
        plan = plan_for("subject replace")
        only_input = GroundingRecord(
            task="subject replace", target_phrase="x", input_boxes=[(0.0, 0.0, 2.0, 2.0)]
        )
        with pytest.raises(RegionError, match="output image"):
            edit_mask_for_frame(plan, only_input, 8, 8, (8, 8), (8, 8))
        only_output = GroundingRecord(
            task="subject replace", target_phrase="x", output_boxes=[(0.0, 0.0, 2.0, 2.0)]
        )
        with pytest.raises(RegionError, match="input image"):
            edit_mask_for_frame(plan, only_output, 8, 8, (8, 8), (8, 8))

    def test_single_side_plan_ignores_other_side(self):
        plan = plan_for("subject removal")  # grounded on the input only
        grounding = GroundingRecord(
            task="subject removal", target_phrase="x", input_boxes=[(0.0, 0.0, 4.0, 4.0)]
        )
        mask = edit_mask_for_frame(plan, grounding, 8, 8, (8, 8), (64, 64))
        assert mask.area == 16


# -- object-centric scoring -------------------------------------------------


class TestColorAlterationScoring:
    def test_plan_metric_coverage(self):
        score = score_candidate(
            plan_for("color alteration"), color_input_bundle(), color_candidate(), "g1", "c1"
        )
        assert set(score.metrics) == {
            ("l_ssim", "edit"),
            ("dino_structure", "edit"),
            ("lpips", "non_edit"),
            ("emd", "non_edit"),
        }
        assert score.group_id == "g1"
        assert score.candidate_id == "c1"

    def test_identical_candidate_scores_perfectly(self):
        score = score_candidate(
            plan_for("color alteration"), color_input_bundle(), color_candidate(), "g1", "c1"
        )
        assert score.metrics[("l_ssim", "edit")].value == 1.0
        assert score.metrics[("dino_structure", "edit")].value == 0.0
        assert abs(score.metrics[("emd", "non_edit")].value) <= 1e-12
        assert score.metrics[("lpips", "non_edit")].value == 0.0

    def test_edit_region_damage_spares_non_edit_metrics(self):
        """Changing only patches inside the edit box must not move the
        non-edit transport distance."""
        inside = color_candidate(clip_perturb=EDIT_PATCHES)
        score = score_candidate(
            plan_for("color alteration"), color_input_bundle(), inside, "g1", "c1"
        )
        assert abs(score.metrics[("emd", "non_edit")].value) <= 1e-12

    def test_non_edit_damage_is_detected(self):
        outside = color_candidate(clip_perturb=(0, 15))
        score = score_candidate(
            plan_for("color alteration"), color_input_bundle(), outside, "g1", "c1"
        )
        assert score.metrics[("emd", "non_edit")].value > 0.1

    def test_degraded_candidate_loses_on_every_metric(self):
        plan = plan_for("color alteration")
        input_bundle = color_input_bundle()
        good = score_candidate(plan, input_bundle, color_candidate(), "g1", "good")
        bad = score_candidate(
            plan,
            input_bundle,
            color_candidate(image_seed=7, clip_perturb=(0, 15), dino_perturb=(0, 5), lpips=0.5),
            "g1",
            "bad",
        )
        for metric_id, region in good.metrics:
            assert good.oriented(metric_id, region) > bad.oriented(metric_id, region)


class TestResizeAlignment:
    def make_pair(self, cand_h, cand_w):
        const_in = ImageTensor(np.full((H, W, 3), 0.5, dtype=np.float32))
        const_out = ImageTensor(np.full((cand_h, cand_w, 3), 0.5, dtype=np.float32))
        grounding = GroundingRecord(
            task="subject addition",
            target_phrase="a bird",
            output_boxes=[(cand_w / 2.0, 0.0, float(cand_w), cand_h / 2.0)],
        )
        input_bundle = FeatureBundle(
            image=const_in, embeddings={"clip_patch": patch_set()}, grounding=grounding
        )
        candidate = FeatureBundle(
            image=const_out,
            embeddings={"clip_patch": patch_set()},
            precomputed={"lpips/non_edit": 0.125},
        )
        return input_bundle, candidate

    def test_larger_candidate_is_compared_in_the_input_frame(self):
        input_bundle, candidate = self.make_pair(64, 64)
        score = score_candidate(
            plan_for("subject addition"), input_bundle, candidate, "g1", "c1"
        )
        assert set(score.metrics) == {
            ("ssim", "non_edit"),
            ("lpips", "non_edit"),
            ("emd", "non_edit"),
        }
        assert score.metrics[("ssim", "non_edit")].value == 1.0
        # box corners are frame-proportional, so both grids keep the same
        # patch indices and the transport cost collapses to zero
        assert abs(score.metrics[("emd", "non_edit")].value) <= 1e-12
        assert score.metrics[("lpips", "non_edit")].value == 0.125


class TestDepthAndClsScoring:
    def make_depth_bundle(self, tilt=0.0):
        ramp = np.linspace(0.0, 1.0, H, dtype=np.float32)[:, None] * np.ones((1, W), np.float32)
        depth = ImageTensor(np.clip(ramp + tilt, 0.0, 1.0)[:, :, None])
        return FeatureBundle(
            image=base_image(seed=3),
            depth=depth,
            embeddings={"clip_patch": patch_set(), "dino_patch": patch_set(offset=1)},
            precomputed={"lpips/non_edit": 0.0},
            grounding=GroundingRecord(
                task="material modification",
                target_phrase="the table",
                input_boxes=[EDIT_BOX],
                output_boxes=[EDIT_BOX],
            ),
        )

    def test_identical_depth_scores_one(self):
        score = score_candidate(
            plan_for("material modification"),
            self.make_depth_bundle(),
            self.make_depth_bundle(),
            "g1",
            "c1",
        )
        assert score.metrics[("depth_ssim", "edit")].value == 1.0

    def test_missing_depth_is_an_error(self):
        no_depth = FeatureBundle(
            image=base_image(seed=3),
            embeddings={"clip_patch": patch_set(), "dino_patch": patch_set(offset=1)},
            precomputed={"lpips/non_edit": 0.0},
        )
        with pytest.raises(PipelineError, match="depth maps"):
            score_candidate(
                plan_for("material modification"), self.make_depth_bundle(), no_depth, "g1", "c1"
            )

    def test_cls_metrics_use_single_row_embeddings(self):
        def bundle(cls_axis):
            return FeatureBundle(
                image=base_image(seed=4),
                embeddings={
                    "clip_patch": patch_set(),
                    "clip_cls": EmbeddingSet(unit_axis(cls_axis, 16)[None, :], normalized=True),
                    "dino_cls": EmbeddingSet(unit_axis(cls_axis, 16)[None, :], normalized=True),
                },
                precomputed={"lpips/non_edit": 0.0},
                grounding=GroundingRecord(
                    task="size adjustment",
                    target_phrase="the car",
                    input_boxes=[EDIT_BOX],
                    output_boxes=[EDIT_BOX],
                ),
            )

        same = score_candidate(plan_for("size adjustment"), bundle(0), bundle(0), "g1", "c1")
        assert same.metrics[("clip_cls", "edit")].value == pytest.approx(1.0)
        assert same.metrics[("dino_cls", "edit")].value == pytest.approx(1.0)
        other = score_candidate(plan_for("size adjustment"), bundle(0), bundle(5), "g1", "c2")
        assert other.metrics[("dino_cls", "edit")].value == pytest.approx(0.0)


# -- human-centric scoring --------------------------------------------------


def human_bundle(target_axis=0, bg_axis=2, faces=True, image_seed=5):
    face_list = []
    if faces:
        face_list = [
            FaceRecord(box=(6.0, 6.0, 14.0, 14.0), embedding=unit_axis(target_axis, 512)),
            FaceRecord(box=(20.0, 20.0, 30.0, 30.0), embedding=unit_axis(bg_axis, 512)),
        ]
    bits = np.zeros((H, W), dtype=bool)
    hair = bits.copy()
    hair[4:10, 4:16] = True
    body = bits.copy()
    body[4:28, 4:28] = True
    return FeatureBundle(
        image=base_image(seed=image_seed),
        masks={"hair": Mask(hair), "body": Mask(body)},
        embeddings={"dino_patch": patch_set(offset=1)},
        faces=face_list,
        precomputed={"lpips/non_edit": 0.0},
        grounding=GroundingRecord(
            task="portrait beautification",
            target_phrase="her face",
            input_boxes=[(4.0, 4.0, 16.0, 16.0)],
            output_boxes=[(4.0, 4.0, 16.0, 16.0)],
            edited_attribute="face",
        ),
    )


class TestPortraitScoring:
    def test_plan_metric_coverage(self):
        score = score_candidate(
            plan_for("portrait beautification"), human_bundle(), human_bundle(), "g1", "c1"
        )
        assert set(score.metrics) == {
            ("face_id", "edit"),
            ("hair_hf", "edit"),
            ("body_appearance", "edit"),
            ("lpips", "non_edit"),
            ("bg_face_id", "non_edit"),
        }

    def test_identical_candidate_keeps_identity(self):
        score = score_candidate(
            plan_for("portrait beautification"), human_bundle(), human_bundle(), "g1", "c1"
        )
        assert score.metrics[("face_id", "edit")].value == pytest.approx(1.0)
        assert score.metrics[("bg_face_id", "non_edit")].value == pytest.approx(1.0)
        assert score.metrics[("hair_hf", "edit")].value == pytest.approx(0.0, abs=1e-7)
        assert score.metrics[("body_appearance", "edit")].value == pytest.approx(1.0)

    def test_identity_swap_tanks_face_similarity(self):
        score = score_candidate(
            plan_for("portrait beautification"),
            human_bundle(target_axis=0),
            human_bundle(target_axis=1),
            "g1",
            "c1",
        )
        assert score.metrics[("face_id", "edit")].value == pytest.approx(0.0)
        # the background face kept its identity
        assert score.metrics[("bg_face_id", "non_edit")].value == pytest.approx(1.0)

    def test_faceless_candidate_is_flagged_not_fatal(self):
        score = score_candidate(
            plan_for("portrait beautification"),
            human_bundle(),
            human_bundle(faces=False),
            "g1",
            "c1",
        )
        face = score.metrics[("face_id", "edit")]
        assert face.value == -1.0
        assert face.flag == "no-face"
        bg = score.metrics[("bg_face_id", "non_edit")]
        assert bg.value == 0.0
        assert bg.flag == "unmatched"


class TestCharacterReference:
    def ref_bundle(self, faces=True):
        face_list = []
        if faces:
            face_list = [
                FaceRecord(box=(6.0, 6.0, 14.0, 14.0), embedding=unit_axis(0, 512)),
                FaceRecord(box=(20.0, 20.0, 30.0, 30.0), embedding=unit_axis(1, 512)),
            ]
        return FeatureBundle(
            image=base_image(seed=6),
            faces=face_list,
            grounding=GroundingRecord(
                task="character reference",
                target_phrase="the person",
                input_boxes=[(4.0, 4.0, 16.0, 16.0)],
            ),
        )

    def cand_bundle(self, axes=(3, 0)):
        faces = [
            FaceRecord(box=(2.0 + 9 * i, 2.0, 10.0 + 9 * i, 10.0), embedding=unit_axis(a, 512))
            for i, a in enumerate(axes)
        ]
        return FeatureBundle(image=base_image(seed=7), faces=faces)

    def test_best_match_wins(self):
        score = score_candidate(
            plan_for("character reference"), self.ref_bundle(), self.cand_bundle(), "g1", "c1"
        )
        assert set(score.metrics) == {("max_face_id", "edit")}
        assert score.metrics[("max_face_id", "edit")].value == pytest.approx(1.0)

    def test_no_candidate_face_is_flagged(self):
        score = score_candidate(
            plan_for("character reference"), self.ref_bundle(), self.cand_bundle(axes=()), "g1", "c1"
        )
        value = score.metrics[("max_face_id", "edit")]
        assert value.value == -1.0
        assert value.flag == "no-face"

    def test_missing_reference_face_is_an_error(self):
        with pytest.raises(PipelineError, match="reference face"):
            score_candidate(
                plan_for("character reference"),
                self.ref_bundle(faces=False),
                self.cand_bundle(),
                "g1",
                "c1",
            )

    def test_candidate_grounding_overrides_input_grounding(self):
        """A candidate-supplied grounding record retargets the edit region,
        which changes which input face is the identity reference."""
        candidate = self.cand_bundle(axes=(0,))
        candidate.grounding = GroundingRecord(
            task="character reference",
            target_phrase="the bystander",
            input_boxes=[(18.0, 18.0, 31.0, 31.0)],
        )
        score = score_candidate(
            plan_for("character reference"), self.ref_bundle(), candidate, "g1", "c1"
        )
        # reference is now the axis-1 face, candidate only offers axis 0
        assert score.metrics[("max_face_id", "edit")].value == pytest.approx(0.0)


# -- explicit edit-mask override --------------------------------------------


class TestEditMaskOverride:
    def boxless_bundle(self, h=H, w=W, with_mask=True):
        masks = {}
        if with_mask:
            bits = np.zeros((h, w), dtype=bool)
            bits[h // 4 : 3 * h // 4, w // 4 : 3 * w // 4] = True
            masks["edit"] = Mask(bits)
        return FeatureBundle(
            image=ImageTensor(np.full((h, w, 3), 0.5, dtype=np.float32)),
            masks=masks,
            embeddings={"clip_patch": patch_set()},
            precomputed={"lpips/non_edit": 0.0, "lpips/edit": 0.0},
            grounding=GroundingRecord(task="subject replace", target_phrase="x"),
        )

    def test_override_replaces_box_grounding(self):
        score = score_candidate(
            plan_for("subject replace"),
            self.boxless_bundle(),
            self.boxless_bundle(with_mask=False),
            "g1",
            "c1",
        )
        assert score.metrics[("ssim", "non_edit")].value == 1.0
        assert abs(score.metrics[("emd", "non_edit")].value) <= 1e-12

    def test_without_override_boxes_are_required(self):
        bundle = self.boxless_bundle(with_mask=False)
        with pytest.raises(RegionError, match="grounding boxes"):
            score_candidate(plan_for("subject replace"), bundle, bundle, "g1", "c1")

    def test_override_rescales_to_candidate_frame(self):
        score = score_candidate(
            plan_for("subject replace"),
            self.boxless_bundle(),
            self.boxless_bundle(h=64, w=64, with_mask=False),
            "g1",
            "c1",
        )
        assert score.metrics[("ssim", "non_edit")].value == 1.0
        assert abs(score.metrics[("emd", "non_edit")].value) <= 1e-12


# -- feature resolution errors ----------------------------------------------


class TestFeatureErrors:
    def test_missing_grounding_record(self):
        bundle = FeatureBundle(image=base_image(), embeddings={"clip_patch": patch_set()})
        with pytest.raises(PipelineError, match="grounding record"):
            score_candidate(plan_for("color alteration"), bundle, bundle, "g1", "c1")

    def test_missing_embedding_names_the_bundle(self):
        no_clip = FeatureBundle(
            image=base_image(),
            embeddings={"dino_patch": patch_set(offset=1)},
            precomputed={"lpips/non_edit": 0.0},
        )
        with pytest.raises(PipelineError, match="candidate bundle is missing embedding 'clip_patch'"):
            score_candidate(plan_for("color alteration"), color_input_bundle(), no_clip, "g1", "c1")

    def test_missing_precomputed_value_is_wrapped_with_context(self):
        candidate = color_candidate()
        del candidate.precomputed["lpips/non_edit"]
        with pytest.raises(PipelineError, match=r"group 'g1' candidate 'c1': lpips/non_edit failed"):
            score_candidate(plan_for("color alteration"), color_input_bundle(), candidate, "g1", "c1")

    def test_unbound_metric_id(self):
        plan = RegionPlan(
            "custom", OBJECT_CENTRIC, GROUND_ON_OUTPUT, (), (MetricUse("psnr", True),)
        )
        grounding = GroundingRecord(
            task="custom", target_phrase="x", output_boxes=[(0.0, 0.0, 8.0, 8.0)]
        )
        bundle = FeatureBundle(image=base_image(), grounding=grounding)
        with pytest.raises(PipelineError, match="no pipeline binding"):
            score_candidate(plan, bundle, bundle, "g1", "c1")

    def test_patch_grid_required_for_region_selection(self):
        gridless = FeatureBundle(
            image=base_image(seed=1),
            embeddings={
                "clip_patch": EmbeddingSet(cycling_rows(16, PATCH_DIM), normalized=True),
                "dino_patch": patch_set(offset=1),
            },
            precomputed={"lpips/non_edit": 0.0},
            grounding=color_grounding(),
        )
        with pytest.raises(PipelineError, match="patch grid"):
            score_candidate(plan_for("color alteration"), gridless, color_candidate(), "g1", "c1")


# -- group-level scoring ----------------------------------------------------


def color_group():
    return CandidateGroup(
        group_id="g1",
        task="color alteration",
        instruction="make the vase blue",
        input_bundle="in",
        candidates={"z_bad": "bad", "a_good": "good"},
    )


def color_loaded():
    return {
        "in": color_input_bundle(),
        "good": color_candidate(),
        "bad": color_candidate(image_seed=7, clip_perturb=(0, 15), dino_perturb=(0, 5), lpips=0.5),
    }


class TestScoreGroup:
    def test_candidates_scored_in_sorted_order(self):
        scores = score_group(color_group(), loaded=color_loaded())
        assert [s.candidate_id for s in scores] == ["a_good", "z_bad"]
        assert all(s.group_id == "g1" for s in scores)

    def test_unknown_task_is_rejected(self):
        group = CandidateGroup(
            group_id="g1",
            task="levitation",
            instruction="",
            input_bundle="in",
            candidates={"a": "x", "b": "y"},
        )
        with pytest.raises(RegionError):
            score_group(group, loaded=color_loaded())

    def test_disk_and_memory_paths_agree(self, tmp_path):
        loaded = color_loaded()
        for ref, bundle in loaded.items():
            save_bundle(bundle, tmp_path / ref)
        from_memory = score_group(color_group(), loaded=loaded)
        from_disk = score_group(color_group(), bundle_root=tmp_path)
        assert scores_to_jsonl(from_disk) == scores_to_jsonl(from_memory)

    def test_loaded_cache_takes_priority_over_disk(self, tmp_path):
        # nothing on disk at all: the cache must fully satisfy the group
        scores = score_group(color_group(), bundle_root=tmp_path, loaded=color_loaded())
        assert len(scores) == 2


# -- serialization ----------------------------------------------------------


class TestScoreSerialization:
    def test_round_trip(self):
        scores = score_group(color_group(), loaded=color_loaded())
        text = scores_to_jsonl(scores)
        back = scores_from_jsonl(text)
        assert len(back) == len(scores)
        by_id = {s.candidate_id: s for s in back}
        for score in scores:
            assert by_id[score.candidate_id].metrics == score.metrics

    def test_flags_survive_the_round_trip(self):
        scores = score_candidate(
            plan_for("portrait beautification"),
            human_bundle(),
            human_bundle(faces=False),
            "g1",
            "c1",
        )
        back = scores_from_jsonl(scores_to_jsonl([scores]))
        assert back[0].metrics[("face_id", "edit")].flag == "no-face"

    def test_empty_scores_serialize_to_empty_text(self):
        assert scores_to_jsonl([]) == ""
        assert scores_from_jsonl("") == []

    def test_lines_are_sorted_and_self_describing(self):
        import json

        scores = score_group(color_group(), loaded=color_loaded())
        lines = [json.loads(l) for l in scores_to_jsonl(scores).splitlines()]
        assert all(
            set(l) == {"group_id", "candidate_id", "metric_id", "region", "value", "orientation", "flag"}
            for l in lines
        )
        keys = [(l["group_id"], l["candidate_id"]) for l in lines]
        assert keys == sorted(keys)
