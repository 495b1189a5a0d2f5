"""Experiment drivers shared by the command line and the acceptance checks."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .control import ControllerConfig, ModelAgent, RouteAgent
from .model.interaction import Batch, InteractionNet, ModelConfig
from .numerics.tensor import Tensor, no_grad
from .sim import compute_metrics, generate, run_episode
from .sim.episode import ego_collision_count
from .training.checkpoint import load_checkpoint, read_header
from .training.data import Dataset, FeatureCache, make_batch
from .training.trainer import TrainConfig, Trainer, evaluate_l1

METRIC_KEYS = ("RC", "IS", "DS")


# ------------------------------------------------------------------ data
def split_indices(n: int, held_out: float, seed: int) -> tuple[list[int], list[int]]:
    """Deterministic train / held-out split; the held-out share rounds down."""
    order = np.random.default_rng([seed, 7]).permutation(n)
    k = int(math.floor(held_out * n))
    return sorted(order[k:].tolist()), sorted(order[:k].tolist())


def subset(ds: Dataset, indices) -> Dataset:
    return Dataset(ds.scenarios, [ds.samples[i] for i in indices], dict(ds.meta))


# ---------------------------------------------------------------- models
def load_model(path, config: ModelConfig | None = None) -> tuple[InteractionNet, dict]:
    """Model built from ``config`` (or the checkpoint's own record) with the stored weights."""
    header, _ = read_header(path)
    cfg = config or ModelConfig(**header["config"]["model"])
    model = InteractionNet(cfg)
    load_checkpoint(path, model)
    return model, header


# ------------------------------------------------------------ closed loop
def run_suite(model: InteractionNet | None, controller: ControllerConfig, kinds, episodes: int, repeats: int,
              seed: int, max_time: float | None = None) -> dict:
    """Closed-loop rollouts; repetition r replays the suite generated from seed + r.

    ``model`` None drives with the route-following planner instead of the network.
    """
    routes = []
    for rep in range(repeats):
        for i in range(episodes):
            kind = kinds[i % len(kinds)]
            sc = generate(kind, seed + rep, i)
            agent = RouteAgent(controller) if model is None else ModelAgent(model, controller)
            log = run_episode(sc, agent, max_time=max_time)
            rc, score, ds = compute_metrics(log)
            routes.append({"repeat": rep, "route": i, "kind": kind, "RC": rc, "IS": score, "DS": ds,
                           "collisions": ego_collision_count(log),
                           "stop_violations": sum(e.startswith("stop_violation:") for e in log.events()),
                           "outcome": log.outcome, "time": round(log.records[-1].t, 6)})
    per_rep = {k: [float(np.mean([r[k] for r in routes if r["repeat"] == rep])) for rep in range(repeats)]
               for k in METRIC_KEYS}
    aggregate = {k: {"mean": float(np.mean(v)), "std": float(np.std(v))} for k, v in per_rep.items()}
    aggregate["collisions"] = int(sum(r["collisions"] for r in routes))
    return {"routes": routes, "per_repeat": per_rep, "aggregate": aggregate}


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    keys = ["repeat", "route", "kind", "RC", "IS", "DS", "collisions", "stop_violations", "outcome", "time"]
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for row in report["routes"]:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def write_report(report: dict, out_dir, stem: str = "report") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    js, cs = out / f"{stem}.json", out / f"{stem}.csv"
    js.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    cs.write_text(report_csv(report))
    return js, cs


# ---------------------------------------------------------- interconnection
def interconnection_probe(model: InteractionNet, batch: Batch, other_row: int, eps: float = 1e-4,
                          n_cells: int = 16, seed: int = 0) -> float:
    """Largest |d plan / d crop| over sampled cells of one other vehicle's crop, by central differences."""
    if batch.slot[other_row] == 0:
        raise ValueError("probe row must belong to another vehicle, not an ego")
    scene = batch.owner[other_row]
    with no_grad():
        feats, _ = model.perceive(batch.F, with_seg=False)
        crops = model.crops(feats, batch).data.copy()
        rng = np.random.default_rng(seed)
        _, c, h, w = crops.shape
        best = 0.0
        for _ in range(n_cells):
            idx = (other_row, int(rng.integers(c)), int(rng.integers(h)), int(rng.integers(w)))
            hi, lo = crops.copy(), crops.copy()
            hi[idx] += eps
            lo[idx] -= eps
            p_hi = model.decode(Tensor(hi), batch)[0].data[scene]
            p_lo = model.decode(Tensor(lo), batch)[0].data[scene]
            best = max(best, float(np.abs(p_hi - p_lo).max() / (2 * eps)))
    return best


# ---------------------------------------------------------------- ablation
def train_model(config: TrainConfig, train: Dataset, features: FeatureCache | None = None,
                out_dir=None) -> Trainer:
    tr = Trainer(config, train, features=features, out_dir=out_dir)
    tr.run()
    return tr


def ablation(train: Dataset, held: Dataset, base: TrainConfig, variants=("full", "I", "II", "III"),
             seeds=(0, 1, 2)) -> dict:
    """Held-out joint L1 per variant after identical budgets; one run per (variant, seed)."""
    f_train, f_held = FeatureCache(train), FeatureCache(held)
    rows = []
    for variant in variants:
        for seed in seeds:
            tr = train_model(replace(base, variant=variant, seed=seed), train, f_train)
            res = evaluate_l1(tr.model, held, features=f_held)
            rows.append({"variant": variant, "seed": seed, "params": tr.model.num_parameters(), **res})
    summary = {}
    for variant in variants:
        vals = [r["joint"] for r in rows if r["variant"] == variant]
        summary[variant] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return {"runs": rows, "summary": summary}


def held_out_batch(held: Dataset, features: FeatureCache | None = None, max_seq: int = 10) -> Batch:
    features = features or FeatureCache(held)
    return make_batch(held, range(len(held)), features, "inference", None, max_seq)
