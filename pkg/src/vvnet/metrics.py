"""Part IoU, instance / category mIoU and overall accuracy."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


@dataclass
class EvalReport:
    per_part_iou: dict[int, float] = field(default_factory=dict)
    instance_miou: float = 0.0
    category_miou: dict[str, float] = field(default_factory=dict)
    overall_accuracy: float = 0.0

    def to_text(self) -> str:
        """Plain ``key value`` table, same layout as the training metrics log."""
        lines = [f"overall_accuracy\t{self.overall_accuracy:.6f}",
                 f"instance_miou\t{self.instance_miou:.6f}"]
        for cat in sorted(self.category_miou):
            lines.append(f"category_miou[{cat}]\t{self.category_miou[cat]:.6f}")
        for part in sorted(self.per_part_iou):
            lines.append(f"part_iou[{part}]\t{self.per_part_iou[part]:.6f}")
        return "\n".join(lines) + "\n"


def _pair(gt, pred):
    gt = np.asarray(gt, dtype=np.int64).reshape(-1)
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    if gt.shape != pred.shape:
        raise ValueError(f"length mismatch: {gt.shape[0]} vs {pred.shape[0]}")
    return gt, pred


def _part_iou_exact(gt, pred, part: int) -> Fraction:
    a, b = gt == part, pred == part
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return Fraction(1)
    return Fraction(int(np.count_nonzero(a & b)), union)


def part_iou(gt, pred, part: int) -> float:
    gt, pred = _pair(gt, pred)
    return float(_part_iou_exact(gt, pred, part))


def instance_miou(gt, pred, parts_of_instance) -> float:
    """Mean part IoU, summed exactly and rounded once."""
    parts = list(parts_of_instance)
    if not parts:
        raise ValueError("instance has no parts")
    gt, pred = _pair(gt, pred)
    return float(sum(_part_iou_exact(gt, pred, p) for p in parts) / len(parts))


def overall_accuracy(gt, pred) -> float:
    gt, pred = _pair(gt, pred)
    if gt.size == 0:
        raise ValueError("no points")
    return float(np.count_nonzero(gt == pred)) / gt.size


def evaluate(instances, categories: dict[str, tuple[int, ...]]) -> EvalReport:
    """Aggregate over ``(category, gt, pred)`` triples.

    Category mIoU averages instance mIoU over that category's instances;
    ``instance_miou`` averages over all instances. Per-part IoU pools points.
    """
    inst_by_cat = defaultdict(list)
    all_inst = []
    correct = total = 0
    inter = defaultdict(int)
    union = defaultdict(int)
    for cat, gt, pred in instances:
        gt, pred = _pair(gt, pred)
        parts = categories[cat]
        v = instance_miou(gt, pred, parts)
        inst_by_cat[cat].append(v)
        all_inst.append(v)
        correct += np.count_nonzero(gt == pred)
        total += gt.size
        for p in parts:
            a, b = gt == p, pred == p
            inter[p] += np.count_nonzero(a & b)
            union[p] += np.count_nonzero(a | b)
    if not all_inst:
        raise ValueError("no instances")
    return EvalReport(
        per_part_iou={p: (inter[p] / union[p] if union[p] else 1.0) for p in sorted(union)},
        instance_miou=float(np.mean(all_inst)),
        category_miou={c: float(np.mean(v)) for c, v in inst_by_cat.items()},
        overall_accuracy=correct / total,
    )
