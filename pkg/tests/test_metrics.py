import numpy as np
import pytest

from aerialforge.metrics import EvalSample, evaluate, iou, miou, oiou, pass_at


def box(x, y, w, h, size=30):
    m = np.zeros((size, size), np.uint8)
    m[y : y + h, x : x + w] = 1
    return m


def sample(gt, pred, condition="clean"):
    return EvalSample("e", gt, pred, condition)


def test_iou_identical():
    m = box(0, 0, 10, 10)
    assert iou(m, m) == 1.0


def test_iou_disjoint():
    assert iou(box(0, 0, 5, 5), box(20, 20, 5, 5)) == 0.0


def test_iou_half_overlap():
    a = box(0, 0, 10, 10)
    b = box(5, 0, 10, 10)  # overlap strip 5x10 = 50; union 150
    assert iou(a, b) == pytest.approx(1 / 3)


def test_iou_empty_conventions():
    empty = np.zeros((5, 5), np.uint8)
    assert iou(empty, empty) == 1.0
    assert iou(empty, box(0, 0, 2, 2, 5)) == 0.0
    assert iou(box(0, 0, 2, 2, 5), empty) == 0.0


def test_iou_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = (rng.random((10, 10)) > 0.5).astype(np.uint8)
        b = (rng.random((10, 10)) > 0.5).astype(np.uint8)
        assert iou(a, b) == iou(b, a)


def test_iou_shape_mismatch():
    with pytest.raises(ValueError):
        iou(np.zeros((3, 3)), np.zeros((4, 4)))


def test_miou_oiou_perfect():
    s = [sample(box(0, 0, 5, 5), box(0, 0, 5, 5)) for _ in range(3)]
    assert miou(s) == 1.0
    assert oiou(s) == 1.0


def test_miou_oiou_hand_case():
    a = sample(box(0, 0, 10, 10), box(0, 0, 10, 10))           # 100 px perfect
    b = sample(box(0, 0, 15, 20), np.zeros((30, 30), np.uint8))  # 300 px gt, empty pred
    assert miou([a, b]) == pytest.approx(0.5)
    assert oiou([a, b]) == pytest.approx(100 / 400)


def test_single_sample_miou_equals_oiou():
    s = [sample(box(0, 0, 10, 10), box(5, 0, 10, 10))]
    assert miou(s) == pytest.approx(oiou(s))


def test_empty_sample_set_errors():
    with pytest.raises(ValueError):
        miou([])
    with pytest.raises(ValueError):
        oiou([])


def test_pass_at_examples():
    all_perfect = [sample(box(0, 0, 5, 5), box(0, 0, 5, 5)) for _ in range(4)]
    for tau in (0.5, 0.7, 0.9):
        assert pass_at(all_perfect, tau) == 1.0

    # IoUs exactly {0.6, 0.8}: overlap 60/100 and 80/100 on 10x10 boxes
    s1 = sample(box(0, 0, 10, 10), box(0, 2, 10, 10))  # 80/120 = 2/3... use columns
    # build directly: gt 100 px, pred overlapping k px with union 100
    def with_iou(k):
        gt = np.zeros((10, 10), np.uint8)
        gt[:, :] = 0
        gt[0:10, 0:10] = 1
        pred = np.zeros((10, 10), np.uint8)
        pred.flat[:k] = 1
        return sample(gt, pred)
    s = [with_iou(60), with_iou(80)]
    assert iou(s[0].gt, s[0].pred) == pytest.approx(0.6)
    assert iou(s[1].gt, s[1].pred) == pytest.approx(0.8)
    assert pass_at(s, 0.5) == 1.0
    assert pass_at(s, 0.7) == 0.5
    assert pass_at(s, 0.9) == 0.0


def test_pass_monotone_property():
    rng = np.random.default_rng(1)
    for _ in range(50):
        s = []
        for _ in range(int(rng.integers(1, 8))):
            gt = (rng.random((12, 12)) > 0.5).astype(np.uint8)
            pred = (rng.random((12, 12)) > 0.5).astype(np.uint8)
            s.append(sample(gt, pred))
        values = [pass_at(s, tau) for tau in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert all(a >= b for a, b in zip(values, values[1:]))


def test_oiou_equals_miou_for_constant_union():
    # all samples share union size 100: gt full 10x10, pred subset
    s = []
    for k in (40, 60, 80):
        gt = np.ones((10, 10), np.uint8)
        pred = np.zeros((10, 10), np.uint8)
        pred.flat[:k] = 1
        s.append(sample(gt, pred))
    assert miou(s) == pytest.approx(oiou(s))


def test_metrics_in_unit_interval():
    rng = np.random.default_rng(2)
    s = [sample((rng.random((8, 8)) > 0.5).astype(np.uint8),
                (rng.random((8, 8)) > 0.5).astype(np.uint8)) for _ in range(10)]
    assert 0.0 <= miou(s) <= 1.0
    assert 0.0 <= oiou(s) <= 1.0


def test_evaluate_breakdown():
    clean = sample(box(0, 0, 5, 5), box(0, 0, 5, 5), "clean")
    hist = sample(box(0, 0, 5, 5), np.zeros((30, 30), np.uint8), "historic")
    report = evaluate([clean, hist])
    assert report["all"]["n"] == 2
    assert report["clean"]["miou"] == 1.0
    assert report["historic"]["miou"] == 0.0
    assert "pass@0.5" in report["all"]
