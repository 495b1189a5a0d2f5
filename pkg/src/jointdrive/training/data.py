"""Expert-labelled samples, dataset files, and batch assembly."""
from __future__ import annotations

import gzip
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..model.global_transformer import assemble
from ..model.interaction import Batch
from ..raster import GridSpec, rasterize, relative_poses
from ..sim.episode import all_controls
from ..sim.expert import behavior_label
from ..sim.geometry import to_local
from ..sim.scenarios import KINDS, MAX_OTHERS, generate, scenario_from_dict, scenario_to_dict
from ..sim.world import DT, Scenario, VehicleState, World

DATASET_VERSION = 1


class DatasetError(ValueError):
    pass


class DatasetVersionError(DatasetError):
    pass


class CorruptDatasetError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


@dataclass
class Sample:
    """One ego-centred training frame: a world snapshot plus expert labels."""

    scenario: int
    tick: int
    time: float
    ego_id: int
    vehicles: list[dict]
    behavior: int
    target: list[float]
    labels: dict[int, list[list[float]]]

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "tick": self.tick, "time": self.time, "ego_id": self.ego_id,
                "vehicles": self.vehicles, "behavior": self.behavior, "target": self.target,
                "labels": {str(k): v for k, v in self.labels.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        return cls(int(d["scenario"]), int(d["tick"]), float(d["time"]), int(d["ego_id"]), list(d["vehicles"]),
                   int(d["behavior"]), [float(x) for x in d["target"]],
                   {int(k): v for k, v in d["labels"].items()})

    @property
    def other_ids(self) -> list[int]:
        return [v["id"] for v in self.vehicles if v["id"] != self.ego_id]


def snapshot_world(scenario: Scenario, vehicles: list[dict], time: float) -> World:
    world = World(scenario)
    world.vehicles = {v["id"]: VehicleState(**v) for v in vehicles}
    world.progress = {vid: scenario.routes[vid].polyline.project(v.xy)[0]
                      for vid, v in world.vehicles.items() if vid in scenario.routes}
    world.time = time
    return world


def in_extent(x: float, y: float, grid: GridSpec = GridSpec()) -> bool:
    return (grid.x_min <= x < grid.x_min + grid.size * grid.res) and (
        grid.y_min <= y < grid.y_min + grid.size * grid.res)


def next_target(world: World, vid: int) -> np.ndarray:
    """First route target ahead of the vehicle, in its frame (the sparse GNSS goal)."""
    sc = world.scenario
    route = sc.routes[vid].polyline
    s_now = world.progress[vid]
    for p in sc.ego_targets:
        if route.project(p)[0] > s_now + 1.0:
            break
    else:
        p = sc.ego_targets[-1]
    me = world.vehicles[vid]
    return to_local(p, me.xy, me.heading)


def detected_others(world: World, ego_id: int, cap: int = MAX_OTHERS) -> list[int]:
    """Vehicles whose centre lies inside the map-view extent, nearest ``cap`` first."""
    ego = world.vehicles[ego_id]
    cand = {}
    for vid, v in world.vehicles.items():
        if vid == ego_id:
            continue
        x, y = to_local(v.xy, ego.xy, ego.heading)
        if in_extent(x, y):
            cand[vid] = (v.x, v.y)
    return assemble(ego_id, ego.xy, cand, "inference", max_len=cap + 1).ids[1:]


def scenario_samples(scenario: Scenario, index: int, horizon: int = 10, dt_wp: float = 0.5,
                     every: int = 20, per_scenario: int = 10) -> list[Sample]:
    """Run the expert and cut labelled frames every ``every`` ticks.

    Labels come from the recorded continuation of the same rollout, which
    equals a fresh expert rollout from the snapshot because the expert is
    memoryless and the simulator deterministic.
    """
    stride = int(round(dt_wp / DT))
    need = horizon * stride
    ticks = int(round(scenario.max_time / DT))
    world = World(scenario)
    history = [world]
    for _ in range(ticks + need):
        world = world.step(all_controls(world))
        history.append(world)
    ego_id = scenario.ego_id
    goal = scenario.routes[ego_id].length - 3.0
    out = []
    for tick in range(0, ticks + 1, every):
        w = history[tick]
        if len(out) >= per_scenario or w.progress[ego_id] >= goal:
            break
        ids = [ego_id] + detected_others(w, ego_id)
        labels = {}
        for vid in ids:
            me = w.vehicles[vid]
            fut = np.array([[history[tick + k * stride].vehicles[vid].x, history[tick + k * stride].vehicles[vid].y]
                            for k in range(1, horizon + 1)])
            labels[vid] = to_local(fut, me.xy, me.heading).tolist()
        out.append(Sample(index, tick, w.time, ego_id,
                          [_vdict(w.vehicles[vid]) for vid in ids],
                          int(behavior_label(w, ego_id)), next_target(w, ego_id).tolist(), labels))
    return out


def _vdict(v: VehicleState) -> dict:
    return {"id": v.id, "x": v.x, "y": v.y, "heading": v.heading, "speed": v.speed, "length": v.length,
            "width": v.width}


@dataclass
class Dataset:
    scenarios: list[Scenario]
    samples: list[Sample]
    meta: dict

    def __len__(self) -> int:
        return len(self.samples)

    def world(self, sample: Sample) -> World:
        return snapshot_world(self.scenarios[sample.scenario], sample.vehicles, sample.time)


def generate_dataset(seed: int, n_scenarios: int, kinds=KINDS, horizon: int = 10, dt_wp: float = 0.5,
                     every: int = 20, per_scenario: int = 10) -> Dataset:
    if n_scenarios <= 0:
        raise EmptyDatasetError("need at least one scenario")
    scenarios, samples = [], []
    for i in range(n_scenarios):
        sc = generate(kinds[i % len(kinds)], seed, i)
        scenarios.append(sc)
        samples.extend(scenario_samples(sc, i, horizon, dt_wp, every, per_scenario))
    meta = {"seed": seed, "n_scenarios": n_scenarios, "kinds": list(kinds), "horizon": horizon, "dt_wp": dt_wp,
            "every": every, "per_scenario": per_scenario}
    return Dataset(scenarios, samples, meta)


# ----------------------------------------------------------------- file I/O
def _open(path: Path, mode: str):
    return gzip.open(path, mode + "t", encoding="utf-8") if path.suffix == ".gz" else open(path, mode)


def write_dataset(ds: Dataset, directory, compress: bool = False) -> Path:
    """Write scenarios, samples (one JSON object per line) and an index with counts and provenance."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    suffix = ".jsonl.gz" if compress else ".jsonl"
    names = {"scenarios": "scenarios" + suffix, "samples": "samples" + suffix}
    if compress:  # fixed header timestamp keeps gzip bytes reproducible
        for key, rows in (("scenarios", [scenario_to_dict(s) for s in ds.scenarios]),
                          ("samples", [s.to_dict() for s in ds.samples])):
            payload = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows).encode()
            with open(d / names[key], "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(payload)
    else:
        with open(d / names["scenarios"], "w") as fh:
            for sc in ds.scenarios:
                fh.write(json.dumps(scenario_to_dict(sc), sort_keys=True) + "\n")
        with open(d / names["samples"], "w") as fh:
            for s in ds.samples:
                fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
    index = {"version": DATASET_VERSION, "files": names, "counts": {"scenarios": len(ds.scenarios),
             "samples": len(ds.samples)}, "provenance": ds.meta,
             "sha256": {k: hashlib.sha256((d / v).read_bytes()).hexdigest() for k, v in names.items()}}
    (d / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return d


def _read_lines(path: Path, parse):
    out = []
    with _open(path, "r") as fh:
        for n, line in enumerate(fh, start=1):
            try:
                out.append(parse(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorruptDatasetError(f"{path.name}: line {n} is corrupt ({exc})") from exc
    return out


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    try:
        index = json.loads((d / "index.json").read_text())
    except FileNotFoundError:
        raise DatasetError(f"no dataset index in {d}") from None
    except json.JSONDecodeError as exc:
        raise CorruptDatasetError(f"index.json is corrupt ({exc})") from exc
    if index.get("version") != DATASET_VERSION:
        raise DatasetVersionError(f"dataset version {index.get('version')!r}, expected {DATASET_VERSION}")
    scenarios = _read_lines(d / index["files"]["scenarios"], scenario_from_dict)
    samples = _read_lines(d / index["files"]["samples"], Sample.from_dict)
    for key, got in (("scenarios", len(scenarios)), ("samples", len(samples))):
        if got != index["counts"][key]:
            raise CorruptDatasetError(f"{key}: index lists {index['counts'][key]} records, file holds {got}")
    return Dataset(scenarios, samples, index["provenance"])


# ---------------------------------------------------------------- batching
class FeatureCache:
    """Rasterized F per sample, computed once."""

    def __init__(self, dataset: Dataset, grid: GridSpec = GridSpec()):
        self.dataset, self.grid = dataset, grid
        self._cache: dict[int, np.ndarray] = {}

    def __call__(self, i: int) -> np.ndarray:
        if i not in self._cache:
            s = self.dataset.samples[i]
            self._cache[i] = rasterize(self.dataset.world(s), s.ego_id, self.grid)
        return self._cache[i]


def make_batch(dataset: Dataset, indices, features: FeatureCache, mode: str = "inference",
               rng: np.random.Generator | None = None, max_seq: int = 10) -> Batch:
    """Stack samples into a Batch; ``mode`` picks the other vehicles as the global sequence would."""
    F, poses, owner, slot, labels, ids_all = [], [], [], [], [], []
    behaviors, targets = [], []
    for b, i in enumerate(indices):
        s = dataset.samples[i]
        world = dataset.world(s)
        ego = world.vehicles[s.ego_id]
        others = {vid: (world.vehicles[vid].x, world.vehicles[vid].y) for vid in s.other_ids}
        seq = assemble(s.ego_id, ego.xy, others, mode, rng, max_seq)
        F.append(features(i))
        poses.append(relative_poses(world, s.ego_id, seq.ids))
        owner.extend([b] * len(seq.ids))
        slot.extend(range(len(seq.ids)))
        labels.extend(s.labels[vid] for vid in seq.ids)
        ids_all.append(seq.ids)
        behaviors.append(s.behavior)
        targets.append(s.target)
    return Batch(np.stack(F), np.concatenate(poses), np.array(owner), np.array(slot), np.array(behaviors),
                 np.array(targets, dtype=float), np.array(labels, dtype=float), ids_all)


def batch_from_world(world: World, ego_id: int, behavior: int, target, grid: GridSpec = GridSpec(),
                     max_seq: int = 10) -> Batch:
    """Single-scene inference batch straight from a live world."""
    ids = [ego_id] + detected_others(world, ego_id, max_seq - 1)
    F = rasterize(world, ego_id, grid)
    return Batch(F[None], relative_poses(world, ego_id, ids), np.zeros(len(ids)), np.arange(len(ids)),
                 np.array([behavior]), np.asarray(target, dtype=float).reshape(1, 2), None, [ids])


def dataset_digest(directory) -> str:
    d = Path(directory)
    h = hashlib.sha256()
    for name in sorted(p.name for p in d.iterdir()):
        h.update(name.encode() + (d / name).read_bytes())
    return h.hexdigest()
