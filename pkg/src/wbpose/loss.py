"""Masked multi-task L2 losses over confidence and PAF stage outputs.

Plain sums, no averaging: f_L = sum over stages, channels and cells of
W * (pred - gt)^2, likewise f_S; total = sum(f_L per stage) + sum(f_S per
stage). Both PAF components of a limb fall under that limb's mask channels,
which encode_masks emits identically, so the masked squared vector norm is
just the per-channel masked sum. Accumulation is float64 in fixed
channel-major, row-major order (numpy C-order reduction), which makes
repeated calls bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import TargetTensors
from .skeleton import PartGroup, SkeletonTopology


@dataclass
class LossBreakdown:
    total: float
    f_l_per_stage: list[float]  # PAF stages, in stage order
    f_s_per_stage: list[float]  # confidence stages, in stage order
    per_group: dict[PartGroup, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "f_l_per_stage": self.f_l_per_stage,
            "f_s_per_stage": self.f_s_per_stage,
            "per_group": {g.value: v for g, v in self.per_group.items()},
        }


def masked_l2(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """sum(W * (pred - gt)^2) accumulated in float64, C-order."""
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    diff = pred.astype(np.float64) - gt.astype(np.float64)
    return float(np.sum(mask.astype(np.float64) * diff * diff))


def _per_channel_masked(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> np.ndarray:
    diff = pred.astype(np.float64) - gt.astype(np.float64)
    return np.sum(mask.astype(np.float64) * diff * diff, axis=(1, 2))


def loss_gradient(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """d(masked_l2)/d(pred) = 2 * W * (pred - gt), float64."""
    return 2.0 * mask.astype(np.float64) * (pred.astype(np.float64) - gt.astype(np.float64))


def multitask_loss(
    paf_preds: Sequence[np.ndarray],
    cm_preds: Sequence[np.ndarray],
    targets: TargetTensors,
    topo: SkeletonTopology,
) -> LossBreakdown:
    """Total and per-stage losses for F PAF stages and C confidence stages.

    Every stage is compared against the same groundtruth tensors under the
    same masks. per_group attributes each channel's mass (confidence and PAF,
    summed across stages) to its part group; the background channel belongs
    to no group, so sum(per_group) <= total with equality when it is off.
    """
    n_conf = topo.confidence_channels
    w_conf = targets.w_mask[:n_conf]
    w_paf = targets.w_mask[n_conf:]

    conf_groups = topo.confidence_channel_groups()
    paf_groups = topo.paf_channel_groups()
    per_group = {g: 0.0 for g in PartGroup}

    f_l: list[float] = []
    for pred in paf_preds:
        per_channel = _per_channel_masked(pred, targets.l_star, w_paf)
        f_l.append(float(np.sum(per_channel)))
        for c, g in enumerate(paf_groups):
            per_group[g] += float(per_channel[c])

    f_s: list[float] = []
    for pred in cm_preds:
        per_channel = _per_channel_masked(pred, targets.s_star, w_conf)
        f_s.append(float(np.sum(per_channel)))
        for c, g in enumerate(conf_groups):
            if g is not None:
                per_group[g] += float(per_channel[c])

    total = 0.0
    for v in f_l:
        total += v
    for v in f_s:
        total += v
    return LossBreakdown(total=total, f_l_per_stage=f_l, f_s_per_stage=f_s, per_group=per_group)
