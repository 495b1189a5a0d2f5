"""Per-vehicle attention over 6x6 patch tokens of a rotated crop."""
from __future__ import annotations

import numpy as np

from ..numerics import tensor as T
from ..numerics.nn import Conv2d, Module
from ..numerics.tensor import Tensor
from .attention import ConfigError, Encoder


class LocalTransformer(Module):
    """patchify -> encoder -> rebuild_residual; one parameter set for every vehicle."""

    def __init__(self, channels: int = 16, crop: int = 24, grid: int = 6, d_model: int = 64, layers: int = 6,
                 heads: int = 8, seed: int = 0, prefix: str = "local"):
        super().__init__(seed, prefix)
        if crop % grid:
            raise ConfigError(f"crop size {crop} is not divisible into a {grid}x{grid} token grid")
        self.crop, self.grid, self.d_model = crop, grid, d_model
        patch = crop // grid
        self.patch = Conv2d(channels, d_model, patch, stride=patch, seed=seed, prefix=self.child("patch"))
        self.param("pos", (grid * grid, d_model), "normal")
        self.encoder = Encoder(d_model, layers, heads, seed, self.child("encoder"))
        self.rebuild = Conv2d(d_model, channels, 1, seed=seed, prefix=self.child("rebuild"), zero_init=True)

    @property
    def n_tokens(self) -> int:
        return self.grid * self.grid

    def patchify(self, crops: Tensor) -> Tensor:
        """[M, C, 24, 24] -> [M, 36, d_model]."""
        m = crops.shape[0]
        z = self.patch(crops).reshape(m, self.d_model, self.n_tokens).transpose(0, 2, 1)
        return z + self.pos.tensor

    def encode(self, tokens: Tensor) -> tuple[Tensor, list[np.ndarray]]:
        return self.encoder(tokens)

    def rebuild_residual(self, tokens: Tensor, crops: Tensor) -> Tensor:
        m = tokens.shape[0]
        grid = tokens.transpose(0, 2, 1).reshape(m, self.d_model, self.grid, self.grid)
        up = T.upsample_bilinear(self.rebuild(grid), (self.crop, self.crop))
        return crops + up

    def __call__(self, crops: Tensor) -> tuple[Tensor, list[np.ndarray]]:
        tokens, record = self.encode(self.patchify(crops))
        return self.rebuild_residual(tokens, crops), record


def accumulate_attention(record: list[np.ndarray], layer: int = 0, item: int = 0) -> np.ndarray:
    """Attention each key receives, summed over heads and queries, as a [g, g] map scaled to max 1."""
    if not 0 <= layer < len(record):
        raise IndexError(f"layer {layer} out of range for {len(record)} recorded layers")
    scores = np.asarray(record[layer])[item]  # [H, Q, K]
    per_key = scores.sum(axis=(0, 1))
    g = int(round(np.sqrt(per_key.size)))
    top = per_key.max()
    return (per_key / top if top > 0 else per_key).reshape(g, g)
