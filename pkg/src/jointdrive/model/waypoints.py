"""CNN embedding plus GRU waypoint decoders that emit per-step deltas."""
from __future__ import annotations

import numpy as np

from ..numerics import tensor as T
from ..numerics.nn import Conv2d, GRUCell, Linear, Module
from ..numerics.tensor import Tensor

N_BEHAVIORS = 6
TARGET_SCALE = 64.0
DELTA_SCALE = 4.0  # metres per unit of head output; GRU inputs see deltas / DELTA_SCALE


class Embed(Module):
    """Two stride-2 3x3 convs (C -> 32 -> 64), flatten, linear to 512."""

    def __init__(self, channels: int = 16, crop: int = 24, width: int = 512, seed: int = 0, prefix: str = "embed"):
        super().__init__(seed, prefix)
        self.conv1 = Conv2d(channels, 32, 3, stride=2, padding=1, seed=seed, prefix=self.child("conv1"))
        self.conv2 = Conv2d(32, 64, 3, stride=2, padding=1, seed=seed, prefix=self.child("conv2"))
        side = (crop + 3) // 4
        self.fc = Linear(64 * side * side, width, seed, self.child("fc"))

    def __call__(self, feats: Tensor) -> Tensor:
        h = T.relu(self.conv2(T.relu(self.conv1(feats))))
        return self.fc(h.reshape(feats.shape[0], -1))


class DeltaGRU(Module):
    """Hidden from linear(v); input at each step is the previous delta (zeros first)."""

    def __init__(self, d_in: int = 512, hidden: int = 128, seed: int = 0, prefix: str = "", zero_head: bool = False):
        super().__init__(seed, prefix)
        self.init = Linear(d_in, hidden, seed, self.child("init"))
        self.cell = GRUCell(2, hidden, seed, self.child("cell"))
        self.head = Linear(hidden, 2, seed, self.child("head"), zero_init=zero_head)

    def __call__(self, v: Tensor, steps: int) -> Tensor:
        h = self.init(v)
        x = T.zeros((v.shape[0], 2))
        out = []
        for _ in range(steps):
            h = self.cell(x, h)
            x = self.head(h)
            out.append(x)
        return T.stack(out, axis=1) * DELTA_SCALE


class EgoDecoder(Module):
    """One DeltaGRU branch per high-level behavior."""

    def __init__(self, d_in: int = 512, hidden: int = 128, seed: int = 0, prefix: str = "ego_decoder"):
        super().__init__(seed, prefix)
        self.branches = [DeltaGRU(d_in, hidden, seed, self.child(f"branch{b}")) for b in range(N_BEHAVIORS)]

    def __call__(self, v: Tensor, behaviors, steps: int) -> Tensor:
        behaviors = np.asarray(behaviors, dtype=np.int64).reshape(-1)
        if behaviors.shape[0] != v.shape[0]:
            raise ValueError(f"{v.shape[0]} feature rows but {behaviors.shape[0]} behaviors")
        if behaviors.size and (behaviors.min() < 0 or behaviors.max() >= N_BEHAVIORS):
            raise ValueError(f"behavior index must be in 0..{N_BEHAVIORS - 1}")
        parts, order = [], []
        for b in np.unique(behaviors):
            rows = np.flatnonzero(behaviors == b)
            vb = v if len(rows) == v.shape[0] else T.take(v, rows, axis=0)
            parts.append(self.branches[b](vb, steps))
            order.append(rows)
        if len(parts) == 1:
            return parts[0]
        inverse = np.argsort(np.concatenate(order), kind="stable")
        return T.take(T.concat(parts, axis=0), inverse, axis=0)


class Refiner(Module):
    """Residual refinement conditioned on the GNSS target: deltas' = deltas + MLP(GRU(deltas))."""

    def __init__(self, steps: int = 10, hidden: int = 128, seed: int = 0, prefix: str = "refiner"):
        super().__init__(seed, prefix)
        self.steps = steps
        self.init = Linear(2 + 2 * steps, hidden, seed, self.child("init"))
        self.cell = GRUCell(2, hidden, seed, self.child("cell"))
        self.mlp1 = Linear(hidden, 64, seed, self.child("mlp1"))
        self.mlp2 = Linear(64, 2, seed, self.child("mlp2"), zero_init=True)

    def __call__(self, deltas: Tensor, target) -> Tensor:
        n, steps, _ = deltas.shape
        target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=float).reshape(n, 2))
        if not np.all(np.isfinite(target.data)):
            raise ValueError("GNSS target must be finite")
        coarse = accumulate(deltas).reshape(n, 2 * steps)
        h = self.init(T.concat([target, coarse], axis=1) * (1.0 / TARGET_SCALE))
        out = []
        for t in range(steps):
            h = self.cell(deltas[:, t, :] * (1.0 / DELTA_SCALE), h)
            out.append(self.mlp2(T.relu(self.mlp1(h))))
        return deltas + T.stack(out, axis=1) * DELTA_SCALE


def accumulate(deltas: Tensor, origin=(0.0, 0.0)) -> Tensor:
    """Waypoints p_t = origin + sum of deltas up to t, over axis -2."""
    return T.cumsum(deltas, axis=deltas.ndim - 2) + Tensor(np.asarray(origin, dtype=float))
