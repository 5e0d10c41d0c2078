import numpy as np
import pytest

from forest2fcn.detector import (
    BoundingBox,
    DetectorConfig,
    ScaleMap,
    default_scales,
    detect,
    extract_boxes,
    nms,
    part_boost,
    probability_maps,
)
from forest2fcn.evalkit import iou


def bb(x, y, w=32, h=32, cls=1, score=0.5):
    return BoundingBox(x, y, w, h, cls, score)


def check_nms_postconditions(survivors, all_boxes, threshold, per_class):
    """Brute-force validity check of a suppression result."""
    for i, a in enumerate(survivors):
        for b in survivors[i + 1:]:
            if per_class and a.cls != b.cls:
                continue
            assert iou(a, b) <= threshold, "two survivors overlap too much"
    surviving = {id(s) for s in survivors}
    for box in all_boxes:
        if id(box) in surviving:
            continue
        cover = [s for s in survivors
                 if (not per_class or s.cls == box.cls)
                 and iou(s, box) > threshold and s.score >= box.score]
        assert cover, "a removed box has no higher-scoring survivor overlapping it"


class TestNms:
    def test_higher_score_wins(self):
        a = bb(0, 0, 10, 10, score=0.9)
        b = bb(2, 0, 10, 10, score=0.8)
        assert iou(a, b) > 0.5
        kept = nms([a, b], 0.5, per_class=True)
        assert kept == [a]

    def test_exact_threshold_keeps_both(self):
        a = BoundingBox(0.5, 0.5, 1, 1, 1, 0.9)
        b = BoundingBox(0.5, 0.25, 1, 0.5, 1, 0.8)
        assert iou(a, b) == 0.5
        kept = nms([a, b], 0.5, per_class=True)
        assert len(kept) == 2

    def test_per_class_ignores_other_classes(self):
        a = bb(0, 0, 10, 10, cls=1, score=0.9)
        b = bb(0, 0, 10, 10, cls=2, score=0.8)
        assert len(nms([a, b], 0.5, per_class=True)) == 2
        assert len(nms([a, b], 0.5, per_class=False)) == 1

    @pytest.mark.parametrize("per_class", [True, False])
    def test_random_boxes_satisfy_postconditions(self, per_class):
        rng = np.random.default_rng(5)
        boxes = [BoundingBox(rng.uniform(0, 60), rng.uniform(0, 60),
                             rng.uniform(5, 25), rng.uniform(5, 25),
                             int(rng.integers(1, 4)), float(rng.uniform()))
                 for _ in range(50)]
        kept = nms(boxes, 0.5, per_class=per_class)
        check_nms_postconditions(kept, boxes, 0.5, per_class)

    def test_idempotent(self):
        rng = np.random.default_rng(8)
        boxes = [BoundingBox(rng.uniform(0, 40), rng.uniform(0, 40), 12, 12,
                             int(rng.integers(1, 3)), float(rng.uniform()))
                 for _ in range(30)]
        once = nms(boxes, 0.5)
        assert nms(once, 0.5) == once


class TestPartBoost:
    def test_boost_formula(self):
        main = bb(10, 10, 20, 20, cls=241, score=0.5)
        part = bb(14, 10, 20, 20, cls=237, score=0.5)
        assert iou(main, part) > 0.2
        out = part_boost([main, part], {241: [237]})
        scores = {b.cls: b.score for b in out}
        assert abs(scores[241] - 0.6) < 1e-12  # 0.5 + 0.5 * 0.2 / 1
        assert scores[237] == 0.5

    def test_no_parts_declared_leaves_scores(self):
        boxes = [bb(0, 0, score=0.4), bb(50, 50, score=0.7)]
        assert part_boost(boxes, {}) == boxes

    def test_below_iou_floor_no_boost(self):
        main = bb(0, 0, 10, 10, cls=241, score=0.5)
        part = bb(8.6, 0, 10, 10, cls=237, score=0.9)
        assert iou(main, part) < 0.2
        out = part_boost([main, part], {241: [237]})
        assert {b.cls: b.score for b in out}[241] == 0.5

    def test_never_decreases_and_keeps_geometry(self):
        rng = np.random.default_rng(2)
        boxes = [BoundingBox(rng.uniform(0, 30), rng.uniform(0, 30), 15, 15,
                             int(rng.integers(1, 4)), float(rng.uniform(0, 0.9)))
                 for _ in range(20)]
        table = {1: [2, 3], 2: [3]}
        out = part_boost(boxes, table)
        for before, after in zip(boxes, out):
            assert after.score >= before.score
            assert (after.x, after.y, after.w, after.h, after.cls) == \
                   (before.x, before.y, before.w, before.h, before.cls)

    def test_caps_at_one(self):
        main = bb(0, 0, 10, 10, cls=1, score=0.95)
        part = bb(1, 0, 10, 10, cls=2, score=1.0)
        out = part_boost([main, part], {1: [2]})
        assert out[0].score == 1.0


class TestExtraction:
    def test_all_below_floor_empty(self):
        maps = [ScaleMap(1.0, np.full((4, 4, 3), 0.2, dtype=np.float32))]
        cfg = DetectorConfig(t_min=0.2)
        assert extract_boxes(maps, cfg, 4, 32) == []

    def test_single_cell_geometry(self):
        probs = np.zeros((3, 3, 2), dtype=np.float32)
        probs[0, 0, 1] = 0.9
        boxes = extract_boxes([ScaleMap(1.0, probs)], DetectorConfig(), 4, 32)
        assert len(boxes) == 1
        b = boxes[0]
        assert (b.x, b.y, b.w, b.h, b.cls) == (16, 16, 32, 32, 1)
        assert abs(b.score - 0.9) < 1e-6

    def test_half_scale_doubles_geometry(self):
        probs = np.zeros((3, 3, 2), dtype=np.float32)
        probs[0, 0, 1] = 0.9
        boxes = extract_boxes([ScaleMap(0.5, probs)], DetectorConfig(), 4, 32)
        b = boxes[0]
        assert (b.x, b.y, b.w, b.h) == (32, 32, 64, 64)

    def test_background_class_excluded(self):
        probs = np.full((2, 2, 3), 0.9, dtype=np.float32)
        boxes = extract_boxes([ScaleMap(1.0, probs)], DetectorConfig(background_class=0), 4, 32)
        assert all(b.cls != 0 for b in boxes)
        assert len(boxes) == 8

    def test_default_scales_shrink_by_1_3(self):
        s = default_scales()
        assert len(s) == 8
        assert s[0] == 1.0
        for a, b in zip(s, s[1:]):
            assert abs(a / b - 1.3) < 1e-12

    def test_default_part_table_resolves_names(self):
        from forest2fcn.detector import default_part_table
        names = ["background", "237", "241", "267"]
        assert default_part_table(names) == {2: [1]}
        assert default_part_table(["background", "x"]) == {}


def tiny_fused_model():
    """A 1x1-patch 'model' stand-in is impossible (patch=32); build the
    smallest real fused model: mean-color features + a trained forest."""
    from forest2fcn.convnet import Activation, ConvLayer, Network, fuse
    from forest2fcn.forest import TrainConfig, train_forest
    from forest2fcn.netmap import map_forest

    w = np.zeros((32, 32, 3, 3), dtype=np.float32)
    for c in range(3):
        w[:, :, c, c] = 1.0 / (32 * 32)
    feature = Network([ConvLayer(w, np.zeros(3), stride=4, padding=0),
                       Activation("relu")], patch_size=32, name="feature")
    rng = np.random.default_rng(0)
    colors = np.array([[0.5, 0.5, 0.5], [0.9, 0.1, 0.1], [0.1, 0.9, 0.1]])
    X, y = [], []
    for cls, color in enumerate(colors):
        for _ in range(40):
            X.append(np.clip(color + rng.normal(0, 0.02, 3), 0, 1))
            y.append(cls)
        # Diluted versions of the sign colors count as background.
        if cls > 0:
            for alpha in np.linspace(0.15, 0.8, 10):
                X.append(alpha * color + (1 - alpha) * colors[0])
                y.append(0)
    f = train_forest(np.array(X), np.array(y), TrainConfig(n_trees=5, rng_seed=3))
    return fuse(feature, map_forest(f))


class TestDetect:
    def setup_method(self):
        self.model = tiny_fused_model()
        self.config = DetectorConfig(scales=[1.0, 1 / 1.3], t_min=0.2,
                                     class_thresholds={1: 0.5, 2: 0.5})

    def blank(self, h=96, w=96):
        return np.full((h, w, 3), 0.5, dtype=np.float32)

    def plant(self, image, cx, cy, cls):
        color = {1: (0.9, 0.1, 0.1), 2: (0.1, 0.9, 0.1)}[cls]
        image[cy - 16:cy + 16, cx - 16:cx + 16] = color
        return image

    def test_blank_image_yields_nothing(self):
        assert detect(self.blank(), self.model, self.config) == []

    def test_planted_patch_found_once(self):
        img = self.plant(self.blank(), 48, 32, cls=1)
        boxes = detect(img, self.model, self.config)
        assert len(boxes) == 1
        b = boxes[0]
        assert b.cls == 1
        assert abs(b.x - 48) <= self.model.total_stride
        assert abs(b.y - 32) <= self.model.total_stride

    def test_unreachable_threshold_empties_result(self):
        img = self.plant(self.blank(), 48, 48, cls=2)
        cfg = DetectorConfig(scales=[1.0], class_thresholds={1: 1.01, 2: 1.01})
        assert detect(img, self.model, cfg) == []

    def test_scale_order_does_not_matter(self):
        img = self.plant(self.blank(), 48, 48, cls=1)
        a = detect(img, self.model, DetectorConfig(scales=[1.0, 1 / 1.3]))
        b = detect(img, self.model, DetectorConfig(scales=[1 / 1.3, 1.0]))
        assert a == b

    def test_probability_maps_shapes_and_skips(self):
        maps, notices = probability_maps(self.model, self.blank(128, 128),
                                         [1.0, 0.5, 0.1])
        assert len(maps) == 2  # 0.1 scale is below one patch
        assert len(notices) == 1
        sizes = [m.probs.shape[0] for m in maps]
        assert sizes == sorted(sizes, reverse=True)

    def test_image_smaller_than_patch_rejected(self):
        with pytest.raises(ValueError):
            probability_maps(self.model, self.blank(16, 16), [1.0])

    def test_patch_sized_image_gives_single_cell_map(self):
        maps, notices = probability_maps(self.model, self.blank(32, 32), [1.0])
        assert notices == []
        assert len(maps) == 1
        assert maps[0].probs.shape == (1, 1, 3)

    def test_half_scale_matches_resampled_input(self):
        from forest2fcn.convnet import resize_bilinear
        img = self.blank(64, 64)
        img[10:40, 20:50] = (0.8, 0.3, 0.1)
        half, _ = probability_maps(self.model, img, [0.5])
        resampled = resize_bilinear(img, 32, 32)
        direct, _ = probability_maps(self.model, resampled, [1.0])
        np.testing.assert_array_equal(half[0].probs, direct[0].probs)

    def test_eight_scales_strictly_decreasing_maps(self):
        maps, _ = probability_maps(self.model, self.blank(416, 416), default_scales())
        assert len(maps) == 8
        sizes = [m.probs.shape[0] for m in maps]
        assert all(a > b for a, b in zip(sizes, sizes[1:]))

    def test_centered_box_stays_inside_frame(self):
        img = self.plant(self.blank(), 16, 16, cls=1)
        for b in detect(img, self.model, self.config):
            assert 0 <= b.x <= 96 and 0 <= b.y <= 96
