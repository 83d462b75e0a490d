"""End-to-end toy training: corpus in, per-epoch curriculum trace out.

Each batch is planned by the scheduler (hard slots first, then per-item
stage coins), evaluated item by item on the toy model, and applied as one
plain gradient descent step on the batch-mean gradient. Easy items get
their box overlay rendered as the conditioned input; the toy model scores
items by index, so the overlay is a fidelity hook rather than a tensor
input, and it is cached per item. Medium items get the box-derived soft
mask as their attention target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .forge import VqaCotRecord
from .geometry import build_soft_mask, render_overlay
from .losses import Stage, StageLossWeights
from .scheduler import CurriculumScheduler, EpochReport, SchedulerHyperparams
from .toymodel import ToyModel


@dataclass(frozen=True)
class HarnessParams:
    """Toy-run knobs. The stage weights tilt Easy totals toward grounding and
    keep the shared answer/rationale heads from drowning out the stage gap."""

    epochs: int = 40
    batch_size: int = 32
    batches_per_epoch: int = 16
    # small steps: the grounding surplus must outlive the mixing ramp
    lr: float = 0.005
    seed: int = 0
    image_dims: tuple = (64, 64)
    grid_dims: tuple = (8, 8)
    feature_dim: int = 16
    # wide blur and a generous floor keep fresh attention targets cheap
    sigma: float = 16.0
    mask_floor: float = 0.01
    weights: StageLossWeights = field(default_factory=lambda: StageLossWeights(
        w_ans=0.25, w_cot=0.25, w_ground=2.0, w_attn=1.0))

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.batches_per_epoch < 1:
            raise ValidationError("batches_per_epoch must be at least 1")
        if self.lr <= 0.0:
            raise ValidationError("lr must be positive")

    def to_json_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "batches_per_epoch": self.batches_per_epoch,
            "lr": self.lr,
            "seed": self.seed,
            "image_dims": list(self.image_dims),
            "grid_dims": list(self.grid_dims),
            "feature_dim": self.feature_dim,
            "sigma": self.sigma,
            "mask_floor": self.mask_floor,
            "weights": {
                "w_ans": self.weights.w_ans,
                "w_cot": self.weights.w_cot,
                "w_ground": self.weights.w_ground,
                "w_attn": self.weights.w_attn,
            },
        }


@dataclass
class TrainingTrace:
    header: dict
    reports: List[EpochReport]

    def __post_init__(self):
        for i, report in enumerate(self.reports):
            if report.epoch != i + 1:
                raise ValidationError(
                    f"trace epochs must run 1..N, found {report.epoch} at row {i}"
                )

    def json_rows(self) -> List[dict]:
        return [self.header] + [r.to_json_dict() for r in self.reports]


def run_toy_training(records: Sequence[VqaCotRecord],
                     params: HarnessParams = HarnessParams(),
                     hp: SchedulerHyperparams = SchedulerHyperparams(),
                     model: Optional[ToyModel] = None) -> TrainingTrace:
    """Train the toy model under the curriculum; returns the full trace.

    The whole corpus serves as both the main pool and the answer-only hard
    pool (hard items are simply scored without their rationale). A non-finite
    loss aborts immediately with the offending epoch, batch, and item.
    """
    if not records:
        raise ValidationError("corpus must be non-empty")
    records = list(records)
    if model is None:
        model = ToyModel(records, image_dims=params.image_dims,
                         grid_dims=params.grid_dims,
                         feature_dim=params.feature_dim, seed=params.seed)
    targets = [
        build_soft_mask(r.box, params.image_dims, params.grid_dims,
                        sigma=params.sigma, floor=params.mask_floor).grid
        for r in records
    ]
    domain_keys = [r.domain.as_str() for r in records]
    scheduler = CurriculumScheduler(hp, domains=sorted(set(domain_keys)),
                                    seed=params.seed)
    overlay_cache: Dict[int, np.ndarray] = {}

    def overlay(idx: int) -> np.ndarray:
        if idx not in overlay_cache:
            overlay_cache[idx] = render_overlay(params.image_dims,
                                                records[idx].box)
        return overlay_cache[idx]

    reports: List[EpochReport] = []
    for epoch in range(1, params.epochs + 1):
        scheduler.start_epoch()
        for batch_no in range(params.batches_per_epoch):
            plan = scheduler.plan_batch(params.batch_size,
                                        hard_pool_size=len(records),
                                        main_pool_domains=domain_keys)
            batch = [(int(i), Stage.HARD, None) for i in plan.hard_indices]
            for idx, stage_name in zip(plan.main_indices, plan.main_stages):
                idx = int(idx)
                if stage_name == "medium":
                    batch.append((idx, Stage.MEDIUM, targets[idx]))
                else:
                    overlay(idx)  # conditioned input for the easy stage
                    batch.append((idx, Stage.EASY, None))
            grads = None
            for idx, stage, target in batch:
                breakdown, item_grads = model.item_loss_and_grads(
                    idx, stage, target_attention=target, weights=params.weights
                )
                if not np.isfinite(breakdown.total):
                    raise ValidationError(
                        f"non-finite loss at epoch {epoch}, batch {batch_no}, "
                        f"item {records[idx].image_id} ({stage.value})"
                    )
                scheduler.observe(domain_keys[idx], stage.value,
                                  breakdown.total, cot_loss=breakdown.cot)
                if grads is None:
                    grads = item_grads
                else:
                    for key in grads:
                        grads[key] += item_grads[key]
            scale = 1.0 / len(batch)
            for key in grads:
                grads[key] *= scale
            model.step(grads, params.lr)
        reports.append(scheduler.end_of_epoch())

    header = {
        "kind": "header",
        "mode": "toy-training",
        "seed": params.seed,
        "epochs": params.epochs,
        "corpus_size": len(records),
        "domains": sorted(set(domain_keys)),
        "harness": params.to_json_dict(),
        "hyperparams": hp.to_json_dict(),
    }
    return TrainingTrace(header=header, reports=reports)
