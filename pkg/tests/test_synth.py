import numpy as np
import pytest

from twinseg.metrics import sequence_eval
from twinseg.rewards import accuracy_reward, answer_iou
from twinseg.rollout import AnswerBlock
from twinseg.synth import (
    CATEGORY_SEMANTIC,
    CATEGORY_SPATIAL,
    CATEGORY_TEMPORAL,
    SceneSpec,
    SceneSpecError,
    ShapeTrack,
    generate,
    make_scene,
    make_suite,
    perturb_answer,
)
from twinseg.twin import mask_iou, parse_twin, serialize_twin


def _two_disc_scene(depth_a=2.0, depth_b=5.0):
    return SceneSpec(
        seed=1,
        n_frames=1,
        width=24,
        height=24,
        shapes=(
            ShapeTrack(id=1, kind="disc", size=(3, 3), color="red", depth=depth_a, start=(6, 6)),
            ShapeTrack(id=2, kind="disc", size=(3, 3), color="blue", depth=depth_b, start=(17, 17)),
        ),
    )


def test_closest_query_targets_lower_depth():
    twin, cases = generate(_two_disc_scene())
    closest = [c for c in cases if "closest" in c.query]
    assert len(closest) == 1
    assert closest[0].gt_ids == (1,)
    assert closest[0].category == CATEGORY_SPATIAL


def test_single_shape_largest_query():
    spec = SceneSpec(
        seed=2,
        n_frames=1,
        width=16,
        height=16,
        shapes=(ShapeTrack(id=1, kind="rect", size=(4, 4), color="red", depth=3.0, start=(8, 8)),),
    )
    twin, cases = generate(spec)
    # no multi-shape queries; the label query still identifies the shape
    labels = [c for c in cases if "red rectangle" in c.query]
    assert labels and labels[0].gt_ids == (1,)
    assert all("largest" not in c.query for c in cases)


def test_appears_last_span_comparison():
    spec = SceneSpec(
        seed=3,
        n_frames=6,
        width=24,
        height=24,
        shapes=(
            ShapeTrack(id=1, kind="rect", size=(4, 4), color="red", depth=3.0, start=(6, 6),
                       first_frame=1, last_frame=3),
            ShapeTrack(id=2, kind="rect", size=(4, 4), color="blue", depth=7.0, start=(17, 17),
                       first_frame=4, last_frame=6),
        ),
    )
    twin, cases = generate(spec)
    last = [c for c in cases if "appears last" in c.query]
    assert len(last) == 1
    assert last[0].gt_ids == (2,)
    # gt masks are empty before the entry frame
    assert last[0].gt_masks[0].area() == 0
    assert last[0].gt_masks[3].area() > 0


def test_scene_spec_validation():
    with pytest.raises(SceneSpecError):
        _two_disc_scene(depth_a=4.0, depth_b=4.0)  # tie without request
    with pytest.raises(SceneSpecError):
        SceneSpec(seed=1, n_frames=0, width=8, height=8, shapes=())
    with pytest.raises(SceneSpecError):
        ShapeTrack(id=1, kind="blob", size=(3, 3), color="red", depth=3.0, start=(4, 4))
    # fully out-of-raster shape is rejected during generation
    spec = SceneSpec(
        seed=1,
        n_frames=1,
        width=16,
        height=16,
        shapes=(ShapeTrack(id=1, kind="rect", size=(2, 2), color="red", depth=3.0, start=(40, 40)),),
    )
    with pytest.raises(SceneSpecError, match="out of raster"):
        generate(spec)


def test_depth_tie_allowed_when_requested():
    spec = SceneSpec(
        seed=1,
        n_frames=1,
        width=24,
        height=24,
        shapes=(
            ShapeTrack(id=1, kind="disc", size=(3, 3), color="red", depth=4.0, start=(6, 6)),
            ShapeTrack(id=2, kind="disc", size=(3, 3), color="blue", depth=4.0, start=(17, 17)),
        ),
        allow_depth_ties=True,
    )
    twin, cases = generate(spec)
    assert twin.ids() == (1, 2)
    assert all("closest" not in c.query for c in cases)  # ambiguous, not emitted


def test_generated_twin_passes_parse_and_exact_stats():
    spec = _two_disc_scene()
    twin, _ = generate(spec)
    assert parse_twin(serialize_twin(twin)) == twin
    for frame in twin.frames:
        for record in frame.instances:
            # constant per-shape depth: exact stats by construction
            assert record.depth_stats.variance == 0.0
            assert record.depth_stats.min == record.depth_stats.max == record.mean_depth


def test_same_seed_byte_identical():
    a_twin, a_cases = generate(make_scene(77, CATEGORY_TEMPORAL))
    b_twin, b_cases = generate(make_scene(77, CATEGORY_TEMPORAL))
    assert serialize_twin(a_twin) == serialize_twin(b_twin)
    assert [c.query for c in a_cases] == [c.query for c in b_cases]
    assert [c.gt_ids for c in a_cases] == [c.gt_ids for c in b_cases]


def test_gt_masks_equal_union_of_gt_ids():
    for seed in range(5):
        for category in (CATEGORY_SEMANTIC, CATEGORY_SPATIAL, CATEGORY_TEMPORAL):
            twin, cases = generate(make_scene(seed, category))
            for case in cases:
                assert set(case.gt_ids) <= set(twin.ids())
                for frame, gt_mask in zip(twin.frames, case.gt_masks):
                    dims = twin.dims
                    acc = np.zeros((dims[1], dims[0]), dtype=bool)
                    for i in case.gt_ids:
                        record = frame.instance(i)
                        if record is not None:
                            acc |= record.mask.decode()
                    assert (gt_mask.decode() == acc).all()


def test_gt_answer_scores_perfectly():
    for seed in (11, 12, 13):
        for category in (CATEGORY_SEMANTIC, CATEGORY_SPATIAL, CATEGORY_TEMPORAL):
            twin, cases = generate(make_scene(seed, category))
            for case in cases:
                answer = AnswerBlock(instances=case.gt_ids)
                assert accuracy_reward(answer, twin, case.gt_masks) == 1
                j, _ = answer_iou(answer, twin, case.gt_masks)
                assert j == 1.0
                seq = sequence_eval(case.gt_masks, case.gt_masks)
                assert seq.j == seq.f == 1.0


def test_wrong_disjoint_answer_scores_zero_accuracy():
    twin, cases = generate(_two_disc_scene())
    case = next(c for c in cases if c.gt_ids == (1,))
    assert accuracy_reward(AnswerBlock((2,)), twin, case.gt_masks) == 0


def test_suite_counts_and_full_presence(rng):
    suite = make_suite(5, 9)
    categories = {s.case.category for s in suite}
    assert categories == {CATEGORY_SEMANTIC, CATEGORY_SPATIAL, CATEGORY_TEMPORAL}
    for item in suite:
        assert all(m.area() > 0 for m in item.case.gt_masks)


# --- perturbations ------------------------------------------------------------


def test_perturb_wrong_id_disjoint_is_zero():
    twin, cases = generate(_two_disc_scene())
    case = next(c for c in cases if c.gt_ids == (1,))
    perturbed = perturb_answer(case, twin, "wrong-id")
    assert perturbed.expected_j == 0.0
    j, _ = answer_iou(perturbed.answer, perturbed.twin, case.gt_masks)
    assert j == perturbed.expected_j


def test_perturb_identity_is_one():
    twin, cases = generate(_two_disc_scene())
    case = cases[0]
    perturbed = perturb_answer(case, twin, "identity")
    assert perturbed.expected_j == 1.0


def test_perturb_dilate_ten_square_by_one():
    spec = SceneSpec(
        seed=4,
        n_frames=1,
        width=24,
        height=24,
        shapes=(ShapeTrack(id=1, kind="rect", size=(10, 10), color="red", depth=3.0, start=(12, 12)),),
    )
    twin, cases = generate(spec)
    case = next(c for c in cases if c.gt_ids == (1,))
    perturbed = perturb_answer(case, twin, "dilate", k=1)
    assert perturbed.expected_j == pytest.approx(100 / 144, abs=0)
    j, _ = answer_iou(perturbed.answer, perturbed.twin, case.gt_masks)
    assert j == pytest.approx(perturbed.expected_j, abs=0)


def test_perturb_erode_empty_is_error():
    spec = SceneSpec(
        seed=4,
        n_frames=1,
        width=16,
        height=16,
        shapes=(ShapeTrack(id=1, kind="rect", size=(2, 2), color="red", depth=3.0, start=(8, 8)),),
    )
    twin, cases = generate(spec)
    case = next(c for c in cases if c.gt_ids == (1,))
    with pytest.raises(ValueError, match="empties the mask"):
        perturb_answer(case, twin, "erode", k=3)


def test_perturb_expected_j_matches_enumeration(rng):
    spec = SceneSpec(
        seed=5,
        n_frames=1,
        width=32,
        height=32,
        shapes=(ShapeTrack(id=1, kind="rect", size=(8, 6), color="red", depth=3.0, start=(16, 16)),),
    )
    twin, cases = generate(spec)
    case = next(c for c in cases if c.gt_ids == (1,))
    for mode, k in (("dilate", 1), ("dilate", 2), ("erode", 1)):
        perturbed = perturb_answer(case, twin, mode, k=k)
        record = perturbed.twin.frames[0].instances[-1]
        want = mask_iou(record.mask, case.gt_masks[0])
        assert perturbed.expected_j == pytest.approx(want, abs=0)
