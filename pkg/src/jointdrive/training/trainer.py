"""Three-stage training: segmentation head, then the planner with perception frozen, then everything."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..model.interaction import Batch, InteractionNet, ModelConfig
from ..numerics import tensor as T
from ..numerics.nn import Param
from ..numerics.optim import adam_step, steplr
from ..numerics.tensor import NumericError, no_grad
from ..raster import seg_targets
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, EmptyDatasetError, FeatureCache, make_batch
from .losses import DEFAULT_LAMBDA, loss_planning, loss_prediction, loss_seg, loss_total

STAGES = (1, 2, 3)
SCHEDULES = ("step", "cosine", "constant")


class FreezeViolation(AssertionError):
    pass


@dataclass
class TrainConfig:
    lam: float = DEFAULT_LAMBDA
    horizon: int = 10
    dt_wp: float = 0.5
    lr: float = 3e-4
    schedule: str = "step"
    step_size: int = 3
    gamma: float = 0.5
    batch_size: int = 8
    epochs: list = field(default_factory=lambda: [2, 10, 5])
    seed: int = 0
    variant: str = "full"
    assemble_mode: str = "training"
    local_layers: int | None = None
    global_layers: int | None = None
    local_heads: int | None = None
    global_heads: int | None = None
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if len(self.epochs) != 3 or min(self.epochs) < 0:
            raise ValueError("epochs lists three non-negative stage lengths")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.assemble_mode not in ("training", "inference"):
            raise ValueError("assemble_mode is 'training' or 'inference'")
        self.epochs = [int(e) for e in self.epochs]

    def model_config(self) -> ModelConfig:
        kw = dict(self.model)
        kw.update(horizon=self.horizon, dt_wp=self.dt_wp, variant=self.variant)
        for name in ("local_layers", "global_layers", "local_heads", "global_heads"):
            if getattr(self, name) is not None:
                kw[name] = getattr(self, name)
        known = {f.name for f in fields(ModelConfig)}
        unknown = sorted(set(kw) - known)
        if unknown:
            raise ValueError(f"unknown model keys {unknown}")
        return ModelConfig(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown train keys {unknown}")
        return cls(**d)


# narrow widths keep a 2000-step CPU run near two minutes
OVERFIT_WIDTHS = {"d_model": 16, "d_global": 32, "local_heads": 4, "global_heads": 4, "embed_dim": 64, "hidden": 64}


def overfit_config(**over) -> TrainConfig:
    """Eight samples, one full batch per step, a short cosine schedule, no random assembly."""
    base = dict(lr=3e-3, schedule="cosine", batch_size=8, epochs=[0, 2000, 0], assemble_mode="inference",
                local_layers=2, global_layers=2, model=dict(OVERFIT_WIDTHS))
    base.update(over)
    return TrainConfig(**base)


@dataclass
class StepRecord:
    stage: int
    epoch: int
    step: int
    lr: float
    loss: float
    seg: float
    plan: float
    pred: float
    plan_per_wp: float


def _counter_rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def scene_metrics(plan: np.ndarray, plan_gt: np.ndarray) -> float:
    """Mean L1 distance per waypoint over scenes and steps."""
    return float(np.abs(plan - plan_gt).sum(-1).mean())


class Trainer:
    """Deterministic staged trainer.

    Batch order and sequence sampling derive from counters (seed, stage,
    epoch, batch), so a run interrupted at any step resumes exactly.
    """

    def __init__(self, config: TrainConfig, dataset: Dataset, model: InteractionNet | None = None,
                 out_dir=None, features: FeatureCache | None = None):
        if len(dataset) == 0:
            raise EmptyDatasetError("cannot train on an empty dataset")
        self.config = config
        self.dataset = dataset
        self.model = model or InteractionNet(config.model_config(), seed=config.seed)
        self.features = features or FeatureCache(dataset)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.history: list[StepRecord] = []
        self.epoch_rows: list[dict] = []
        self.position = {"stage": 1, "epoch": 0, "batch": 0, "step": 0}
        self.stage_snapshots: dict[int, dict[str, np.ndarray]] = {}

    # ------------------------------------------------------------ scheduling
    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.dataset) / self.config.batch_size)

    def _order(self, stage: int, epoch: int) -> np.ndarray:
        return _counter_rng(self.config.seed, stage, epoch).permutation(len(self.dataset))

    def lr_at(self, stage: int, epoch: int, batch: int) -> float:
        c = self.config
        if c.schedule == "step":
            return steplr(epoch, c.lr, c.step_size, c.gamma)
        if c.schedule == "constant":
            return c.lr
        total = max(1, c.epochs[stage - 1] * self.batches_per_epoch())
        k = epoch * self.batches_per_epoch() + batch
        return c.lr * 0.5 * (1.0 + math.cos(math.pi * k / total))

    def stage_params(self, stage: int) -> list[Param]:
        if stage == 1:
            return self.model.perception_parameters()
        if stage == 2:
            return self.model.planner_parameters()
        return self.model.parameters()

    def make_batch(self, stage: int, epoch: int, batch: int) -> Batch:
        order = self._order(stage, epoch)
        bs = self.config.batch_size
        idx = order[batch * bs:(batch + 1) * bs]
        rng = _counter_rng(self.config.seed, stage, epoch, batch, 1)
        return make_batch(self.dataset, idx, self.features, self.config.assemble_mode, rng,
                          self.model.config.max_seq)

    # --------------------------------------------------------------- losses
    def losses(self, batch: Batch, stage: int):
        """(total, seg, plan, pred, plan array) for one batch under the stage's objective."""
        m = self.model
        if stage == 1:
            _, logits = m.perceive(batch.F, with_seg=True)
            seg = loss_seg(logits, seg_targets(batch.F))
            return seg, seg.item(), float("nan"), float("nan"), None
        out = m(batch, with_seg=(stage == 3))
        gt = batch.labels
        plan = loss_planning(out.plan, gt[batch.ego_rows])
        pred = loss_prediction(out.preds, gt[batch.other_rows], batch.size)
        jpp = plan + pred
        if stage == 2:
            return jpp, float("nan"), plan.item(), pred.item(), out.plan.data
        seg = loss_seg(out.seg_logits, seg_targets(batch.F))
        return loss_total(seg, jpp, self.config.lam), seg.item(), plan.item(), pred.item(), out.plan.data

    def train_step(self, stage: int, epoch: int, batch_no: int) -> StepRecord:
        params = self.stage_params(stage)
        self.model.zero_grad()
        batch = self.make_batch(stage, epoch, batch_no)
        # parameters outside the stage leave the graph, so their branches skip backward entirely
        live = {id(p) for p in params}
        idle = [p for p in self.model.parameters() if id(p) not in live]
        for p in idle:
            p.tensor.requires_grad = False
        try:
            loss, seg, plan, pred, plan_arr = self.losses(batch, stage)
            if not math.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at stage {stage}, epoch {epoch}, batch {batch_no}")
            loss.backward()
        finally:
            for p in idle:
                p.tensor.requires_grad = True
        lr = self.lr_at(stage, epoch, batch_no)
        adam_step(params, lr=lr)
        per_wp = float("nan") if plan_arr is None else scene_metrics(plan_arr, batch.labels[batch.ego_rows])
        rec = StepRecord(stage, epoch, self.position["step"], lr, loss.item(), seg, plan, pred, per_wp)
        self.history.append(rec)
        self.position["step"] += 1
        return rec

    # ------------------------------------------------------------------ run
    def _snapshot(self, params: list[Param]) -> dict[str, np.ndarray]:
        return {p.name: p.tensor.data.copy() for p in params}

    def run(self, stages=STAGES, max_steps: int | None = None, stop_when=None) -> bool:
        """Train through ``stages`` from the current position.

        Stops early after ``max_steps`` steps (returns False, resumable) or
        when ``stop_when(record)`` is true (returns True). Returns True when
        the stages complete.
        """
        done = 0
        for stage in stages:
            if stage < self.position["stage"]:
                continue
            if stage > self.position["stage"]:
                self.position.update(stage=stage, epoch=0, batch=0)
            frozen = self._snapshot(self.model.perception_parameters()) if stage == 2 else None
            if stage == 2 and 2 in self.stage_snapshots:
                frozen = self.stage_snapshots[2]
            if stage == 2:
                self.stage_snapshots[2] = frozen
            n_epochs, n_batches = self.config.epochs[stage - 1], self.batches_per_epoch()
            while self.position["epoch"] < n_epochs:
                epoch = self.position["epoch"]
                while self.position["batch"] < n_batches:
                    if max_steps is not None and done >= max_steps:
                        return False
                    rec = self.train_step(stage, epoch, self.position["batch"])
                    self.position["batch"] += 1
                    done += 1
                    if stop_when is not None and stop_when(rec):
                        self._close_epoch(stage, epoch)
                        return True
                self._close_epoch(stage, epoch)
                self.position.update(epoch=epoch + 1, batch=0)
            if frozen is not None:
                self.check_frozen(frozen)
            if self.out_dir is not None:
                self.save(self.out_dir / f"stage{stage}.ckpt", stage)
            self.position.update(stage=stage + 1, epoch=0, batch=0)
        return True

    def check_frozen(self, snapshot: dict[str, np.ndarray]) -> None:
        for p in self.model.perception_parameters():
            if not np.array_equal(p.tensor.data, snapshot[p.name]):
                raise FreezeViolation(f"frozen parameter {p.name} changed during stage 2")

    def _close_epoch(self, stage: int, epoch: int) -> None:
        recs = [r for r in self.history if r.stage == stage and r.epoch == epoch]
        if not recs:
            return
        row = {"stage": stage, "epoch": epoch, "steps": len(recs), "lr": recs[-1].lr}
        for key in ("loss", "seg", "plan", "pred", "plan_per_wp"):
            row[key] = float(np.mean([getattr(r, key) for r in recs]))
        self.epoch_rows = [r for r in self.epoch_rows if (r["stage"], r["epoch"]) != (stage, epoch)] + [row]
        if self.out_dir is not None:
            self.write_metrics(self.out_dir / "metrics.csv")

    def write_metrics(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        keys = ["stage", "epoch", "steps", "lr", "loss", "seg", "plan", "pred", "plan_per_wp"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for row in self.epoch_rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    # ---------------------------------------------------------- checkpoints
    def save(self, path, stage: int | None = None) -> Path:
        state = {"position": dict(self.position), "seed": self.config.seed,
                 "frozen_digest": None}
        return save_checkpoint(path, self.model, {"train": self.config.to_dict(),
                                                   "model": self.model.config.to_dict()},
                               self.position["stage"] if stage is None else stage, state)

    def resume(self, path) -> dict:
        header = load_checkpoint(path, self.model)
        self.position = dict(header["state"]["position"])
        return header


def evaluate_l1(model: InteractionNet, dataset: Dataset, indices=None, features: FeatureCache | None = None,
                batch_size: int = 16) -> dict:
    """Held-out joint L1 (plan + prediction, sum form, mean over scenes) with inference-mode assembly."""
    features = features or FeatureCache(dataset)
    indices = list(range(len(dataset))) if indices is None else list(indices)
    if not indices:
        raise EmptyDatasetError("no samples to evaluate")
    plan_sum = pred_sum = per_wp = 0.0
    with no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            batch = make_batch(dataset, chunk, features, "inference", None, model.config.max_seq)
            out = model(batch)
            gt = batch.labels
            n = len(chunk)
            plan_sum += loss_planning(out.plan, gt[batch.ego_rows]).item() * n
            pred_sum += loss_prediction(out.preds, gt[batch.other_rows], 1).item()
            per_wp += scene_metrics(out.plan.data, gt[batch.ego_rows]) * n
    n = len(indices)
    return {"plan": plan_sum / n, "pred": pred_sum / n, "joint": (plan_sum + pred_sum) / n, "plan_per_wp": per_wp / n}


def check_grad_finite(params: list[Param]) -> None:
    T.check_finite([p.tensor for p in params])
