"""Pre-norm transformer encoder with optional key padding."""
from __future__ import annotations

import math

import numpy as np

from ..numerics import tensor as T
from ..numerics.nn import LayerNorm, Linear, Module
from ..numerics.tensor import Tensor


class ConfigError(ValueError):
    pass


class EncoderLayer(Module):
    def __init__(self, d: int, heads: int, ffn_mult: int = 4, seed: int = 0, prefix: str = ""):
        super().__init__(seed, prefix)
        if d % heads:
            raise ConfigError(f"width {d} not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.ln1 = LayerNorm(d, seed, self.child("ln1"))
        self.qkv = Linear(d, 3 * d, seed, self.child("qkv"))
        self.out = Linear(d, d, seed, self.child("out"))
        self.ln2 = LayerNorm(d, seed, self.child("ln2"))
        self.ff1 = Linear(d, ffn_mult * d, seed, self.child("ff1"))
        self.ff2 = Linear(ffn_mult * d, d, seed, self.child("ff2"))

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        """x [B, S, d]; key_mask [B, S] with True for padded keys. Returns (y, scores [B, H, S, S])."""
        b, s, d = x.shape
        h, dh = self.heads, d // self.heads
        qkv = self.qkv(self.ln1(x)).reshape(b, s, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, None, :]
        attn = T.softmax(scores, mask)
        ctx = T.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, s, d)
        x = x + self.out(ctx)
        x = x + self.ff2(T.relu(self.ff1(self.ln2(x))))
        return x, attn.data


class Encoder(Module):
    def __init__(self, d: int, layers: int, heads: int, seed: int = 0, prefix: str = ""):
        super().__init__(seed, prefix)
        self.layers = [EncoderLayer(d, heads, seed=seed, prefix=self.child(f"layer{i}")) for i in range(layers)]

    def __call__(self, x: Tensor, key_mask=None) -> tuple[Tensor, list[np.ndarray]]:
        record = []
        for layer in self.layers:
            x, a = layer(x, key_mask)
            record.append(a)
        return x, record
