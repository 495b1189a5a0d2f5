"""Central-difference gradient verification."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .nn import Param
from .tensor import Tensor


class GradCheckError(ArithmeticError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-3

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def worst(self) -> str:
        return max(self.per_param, key=self.per_param.get) if self.per_param else ""


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def grad_check(f: Callable[[], Tensor], params: Sequence[Param | Tensor], epsilon: float = 1e-5,
               tol: float = 1e-3, max_entries: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f()`` with central differences.

    ``max_entries`` caps the number of probed entries per parameter (sampled
    without replacement); None probes every entry.
    """
    named = []
    for i, p in enumerate(params):
        if isinstance(p, Param):
            named.append((p.name, p.tensor))
        else:
            named.append((f"arg{i}", p))
    for _, t in named:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    out = f()
    if out.size != 1:
        raise GradCheckError(f"grad_check needs a scalar output, got shape {out.shape}")
    out.backward()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, tol=tol)
    for name, t in named:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        if not np.all(np.isfinite(analytic)):
            raise GradCheckError(f"non-finite analytic gradient for {name}")
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for k in idx:
            orig = flat[k]
            flat[k] = orig + epsilon
            fp = f().item()
            flat[k] = orig - epsilon
            fm = f().item()
            flat[k] = orig
            num = (fp - fm) / (2.0 * epsilon)
            if not np.isfinite(num):
                raise GradCheckError(f"non-finite numeric gradient for {name}[{k}]")
            worst = max(worst, float(rel_error(analytic.reshape(-1)[k], num)))
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
