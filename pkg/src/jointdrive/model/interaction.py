"""Full joint planning and prediction network and its ablation variants."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..numerics.nn import Module, Param
from ..numerics.tensor import Tensor
from ..raster import CropSpec, GridSpec, Perception, crop_rotated_roi
from .attention import ConfigError
from .global_transformer import GlobalTransformer
from .local_transformer import LocalTransformer
from .waypoints import DeltaGRU, EgoDecoder, Embed, Refiner, accumulate

VARIANTS = ("full", "I", "II", "III")


@dataclass
class ModelConfig:
    channels: int = 16
    crop: int = 24
    tokens_per_side: int = 6
    d_model: int = 64
    local_layers: int = 6
    local_heads: int = 8
    d_global: int = 256
    global_layers: int = 6
    global_heads: int = 8
    max_seq: int = 10
    embed_dim: int = 512
    hidden: int = 128
    horizon: int = 10
    dt_wp: float = 0.5
    variant: str = "full"
    global_rebuild: str = "broadcast"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")

    @property
    def use_local(self) -> bool:
        return self.variant in ("full", "II")

    @property
    def use_global(self) -> bool:
        return self.variant in ("full", "I")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    """Model inputs for B scenes; M rows of vehicles, grouped per scene with the ego first.

    ``poses`` are ego-frame (x, y, heading); ``labels`` [M, T, 2] hold each
    vehicle's future in its own frame (ego rows included).
    """

    F: np.ndarray
    poses: np.ndarray
    owner: np.ndarray
    slot: np.ndarray
    behaviors: np.ndarray
    targets: np.ndarray
    labels: np.ndarray | None = None
    ids: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        self.owner = np.asarray(self.owner, dtype=np.int64)
        self.slot = np.asarray(self.slot, dtype=np.int64)
        self.ego_rows = np.flatnonzero(self.slot == 0)
        self.other_rows = np.flatnonzero(self.slot != 0)
        if not np.array_equal(self.owner[self.ego_rows], np.arange(self.size)):
            raise ValueError("every scene needs exactly one ego row, in scene order")

    @property
    def size(self) -> int:
        return int(self.F.shape[0])


@dataclass
class Output:
    plan: Tensor
    preds: Tensor | None
    seg_logits: Tensor | None
    local_attention: list[np.ndarray]
    global_attention: list[np.ndarray]


class InteractionNet(Module):
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__(seed, "")
        c = config
        self.config = c
        self.grid = GridSpec(channels=c.channels)
        self.crop_spec = CropSpec(size=c.crop)
        self.perception = Perception(c.channels, seed)
        if c.use_local:
            self.local = LocalTransformer(c.channels, c.crop, c.tokens_per_side, c.d_model, c.local_layers,
                                          c.local_heads, seed)
        if c.use_global:
            self.global_ = GlobalTransformer(c.channels, c.crop, c.crop // c.tokens_per_side, c.d_global,
                                             c.global_layers, c.global_heads, c.max_seq, c.global_rebuild, seed)
        self.embed = Embed(c.channels, c.crop, c.embed_dim, seed)
        self.ego_decoder = EgoDecoder(c.embed_dim, c.hidden, seed)
        self.refiner = Refiner(c.horizon, c.hidden, seed)
        self.other_decoder = DeltaGRU(c.embed_dim, c.hidden, seed, "other_decoder")

    # ---------------------------------------------------------- parameter groups
    def perception_parameters(self) -> list[Param]:
        return self.perception.parameters()

    def planner_parameters(self) -> list[Param]:
        frozen = {id(p) for p in self.perception_parameters()}
        return [p for p in self.parameters() if id(p) not in frozen]

    # ------------------------------------------------------------------ forward
    def perceive(self, F, with_seg: bool = True) -> tuple[Tensor, Tensor | None]:
        F = F if isinstance(F, Tensor) else Tensor(F)
        if with_seg:
            return self.perception(F)
        return self.perception.features(F), None

    def crops(self, features: Tensor, batch: Batch) -> Tensor:
        return crop_rotated_roi(features, batch.poses, batch.owner, self.grid, self.crop_spec)

    def decode(self, crops: Tensor, batch: Batch) -> tuple[Tensor, Tensor | None, list, list]:
        """crops F' [M, C, h, w] -> (plan [B, T, 2], predictions [M - B, T, 2], attention records)."""
        local_rec, global_rec = [], []
        feats = crops
        if self.config.use_local:
            feats, local_rec = self.local(feats)
        if self.config.use_global:
            feats, global_rec = self.global_(feats, batch.owner, batch.slot, batch.size)
        v = self.embed(feats)
        steps = self.config.horizon
        v_ego = v if len(batch.other_rows) == 0 else v[batch.ego_rows]
        coarse = self.ego_decoder(v_ego, batch.behaviors, steps)
        plan = accumulate(self.refiner(coarse, batch.targets))
        preds = None
        if len(batch.other_rows):
            preds = accumulate(self.other_decoder(v[batch.other_rows], steps))
        return plan, preds, local_rec, global_rec

    def __call__(self, batch: Batch, with_seg: bool = False) -> Output:
        features, seg = self.perceive(batch.F, with_seg)
        plan, preds, lrec, grec = self.decode(self.crops(features, batch), batch)
        return Output(plan, preds, seg, lrec, grec)
