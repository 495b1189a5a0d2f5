"""Set-style attention over one pooled token per vehicle (ego in slot 0)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import tensor as T
from ..numerics.nn import Conv2d, Linear, Module
from ..numerics.tensor import FullyMaskedError, ShapeError, Tensor
from .attention import ConfigError, Encoder

MAX_SEQ = 10


@dataclass
class SceneSequence:
    """Vehicle ids per slot (slot 0 = ego, then ascending distance) and the valid mask."""

    ids: list[int]
    valid: np.ndarray

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


def assemble(ego_id: int, ego_xy, others: dict[int, tuple[float, float]], mode: str = "inference",
             rng: np.random.Generator | None = None, max_len: int = MAX_SEQ) -> SceneSequence:
    """Pick which other vehicles join the ego's sequence.

    inference: the nearest ``max_len - 1`` (ties by lower id). training: a
    uniform k in 0..min(max_len - 1, N), then a uniform k-subset.
    """
    ego_xy = np.asarray(ego_xy, dtype=float)
    ranked = sorted(others, key=lambda vid: (float(np.hypot(*(np.asarray(others[vid]) - ego_xy))), vid))
    cap = max_len - 1
    if mode == "inference":
        chosen = ranked[:cap]
    elif mode == "training":
        if rng is None:
            raise ValueError("training-mode assembly needs an rng")
        k = int(rng.integers(0, min(cap, len(ranked)) + 1))
        picked = set(rng.choice(len(ranked), size=k, replace=False).tolist()) if k else set()
        chosen = [vid for i, vid in enumerate(ranked) if i in picked]
    else:
        raise ValueError(f"unknown assembly mode {mode!r}")
    valid = np.zeros(max_len, dtype=bool)
    valid[: 1 + len(chosen)] = True
    return SceneSequence([ego_id] + chosen, valid)


class GlobalTransformer(Module):
    def __init__(self, channels: int = 16, crop: int = 24, pool: int = 4, d_global: int = 256, layers: int = 6,
                 heads: int = 8, max_len: int = MAX_SEQ, rebuild: str = "broadcast", seed: int = 0,
                 prefix: str = "global"):
        super().__init__(seed, prefix)
        if crop % pool:
            raise ConfigError(f"crop {crop} not divisible by pool {pool}")
        if rebuild not in ("broadcast", "tile"):
            raise ConfigError(f"unknown rebuild mode {rebuild!r}")
        self.pool, self.d_global, self.max_len, self.rebuild_mode = pool, d_global, max_len, rebuild
        self.channels, self.crop = channels, crop
        side = crop // pool
        self.proj = Linear(channels * side * side, d_global, seed, self.child("proj"))
        self.param("ego_flag", (d_global,), "normal")
        self.encoder = Encoder(d_global, layers, heads, seed, self.child("encoder"))
        if rebuild == "broadcast":
            self.rebuild = Linear(d_global, channels, seed, self.child("rebuild"), zero_init=True)
        else:
            self.rebuild = Conv2d(channels + d_global, channels, 1, seed=seed, prefix=self.child("rebuild"),
                                  zero_init=True)

    def pool_flatten(self, feats: Tensor) -> Tensor:
        """[M, C, 24, 24] -> [M, d_global]."""
        pooled = T.avg_pool2d(feats, self.pool)
        return self.proj(pooled.reshape(feats.shape[0], -1))

    def sequence(self, tokens: Tensor, owner, slot, batch: int) -> tuple[Tensor, np.ndarray]:
        """Scatter per-vehicle tokens [M, d] into [B, max_len, d]; padded slots are zero and masked."""
        owner, slot = np.asarray(owner, dtype=np.int64), np.asarray(slot, dtype=np.int64)
        m = tokens.shape[0]
        if owner.shape != (m,) or slot.shape != (m,):
            raise ShapeError("global sequence", tokens.shape, owner.shape, slot.shape)
        if slot.min(initial=0) < 0 or slot.max(initial=0) >= self.max_len:
            raise ValueError(f"slot index outside 0..{self.max_len - 1}")
        table = np.full((batch, self.max_len), m, dtype=np.int64)
        table[owner, slot] = np.arange(m)
        padded = T.concat([tokens, T.zeros((1, tokens.shape[1]))], axis=0)
        return T.take(padded, table, axis=0), table == m

    def encode(self, seq: Tensor, pad_mask: np.ndarray) -> tuple[Tensor, list[np.ndarray]]:
        """seq [B, L, d] with pad_mask [B, L] (True = placeholder)."""
        pad_mask = np.asarray(pad_mask, dtype=bool)
        if pad_mask.all(axis=1).any():
            raise FullyMaskedError("every slot of a scene sequence is masked")
        flag = np.zeros((1, seq.shape[1], 1))
        flag[0, 0, 0] = 1.0
        seq = seq + Tensor(flag) * self.ego_flag.tensor
        return self.encoder(seq, pad_mask)

    def rebuild_fused(self, seq_out: Tensor, feats: Tensor, owner, slot) -> Tensor:
        """Add each vehicle's global token back onto its F* (per channel, every position)."""
        owner, slot = np.asarray(owner, dtype=np.int64), np.asarray(slot, dtype=np.int64)
        m = feats.shape[0]
        if owner.shape != (m,) or slot.shape != (m,):
            raise ShapeError("rebuild_fused", feats.shape, owner.shape, slot.shape)
        b, length, d = seq_out.shape
        rows = T.take(seq_out.reshape(b * length, d), owner * length + slot, axis=0)  # [M, d]
        if self.rebuild_mode == "broadcast":
            return feats + self.rebuild(rows).reshape(m, self.channels, 1, 1)
        tiled = rows.reshape(m, d, 1, 1) * Tensor(np.ones((1, 1, self.crop, self.crop)))
        return feats + self.rebuild(T.concat([feats, tiled], axis=1))

    def __call__(self, feats: Tensor, owner, slot, batch: int) -> tuple[Tensor, list[np.ndarray]]:
        seq, pad = self.sequence(self.pool_flatten(feats), owner, slot, batch)
        out, record = self.encode(seq, pad)
        return self.rebuild_fused(out, feats, owner, slot), record
