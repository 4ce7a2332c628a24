from fractions import Fraction

import numpy as np
import pytest

from vvnet.metrics import evaluate, instance_miou, overall_accuracy, part_iou


def test_worked_example():
    gt, pred = [0, 0, 1, 1], [0, 1, 1, 1]
    assert part_iou(gt, pred, 0) == 0.5
    assert part_iou(gt, pred, 1) == pytest.approx(2 / 3, abs=1e-15)
    assert instance_miou(gt, pred, [0, 1]) == pytest.approx(7 / 12, abs=1e-15)
    assert overall_accuracy(gt, pred) == 0.75


def test_absent_part_counts_as_one():
    assert part_iou([0, 0], [0, 0], 3) == 1.0
    assert instance_miou([0, 0], [0, 0], [0, 3]) == 1.0


def test_length_mismatch():
    with pytest.raises(ValueError):
        part_iou([0, 1], [0], 0)
    with pytest.raises(ValueError):
        overall_accuracy([], [])


def _oracle(gt, pred, parts):
    total = Fraction(0)
    for p in parts:
        inter = sum(1 for a, b in zip(gt, pred) if a == p and b == p)
        union = sum(1 for a, b in zip(gt, pred) if a == p or b == p)
        total += Fraction(1) if union == 0 else Fraction(inter, union)
    return total / len(parts)


def test_instance_miou_matches_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        parts = sorted(rng.choice(8, size=int(rng.integers(1, 5)), replace=False).tolist())
        # labels may fall outside the instance's parts, and parts may be absent
        gt = rng.integers(0, 8, n).tolist()
        pred = rng.integers(0, 8, n).tolist()
        want = _oracle(gt, pred, parts)
        got = instance_miou(gt, pred, parts)
        assert got == float(want)


def test_evaluate_aggregates():
    cats = {"a": (0, 1), "b": (2,)}
    rep = evaluate([("a", [0, 0, 1, 1], [0, 1, 1, 1]), ("b", [2, 2], [2, 2]),
                    ("a", [0, 1], [0, 1])], cats)
    assert rep.category_miou["a"] == pytest.approx((7 / 12 + 1) / 2)
    assert rep.category_miou["b"] == 1.0
    assert rep.instance_miou == pytest.approx((7 / 12 + 1 + 1) / 3)
    assert rep.overall_accuracy == pytest.approx(7 / 8)
    assert rep.per_part_iou[0] == pytest.approx(2 / 3)
    assert "instance_miou" in rep.to_text()
