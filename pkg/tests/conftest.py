import time

import numpy as np
import pytest

from jointdrive.model import ModelConfig
from jointdrive.training.data import FeatureCache, generate_dataset, make_batch

# narrow widths and two-layer stacks keep the CPU budget; the architecture is unchanged
TINY = dict(d_model=16, d_global=32, local_layers=2, global_layers=2, local_heads=4, global_heads=4,
            embed_dim=32, hidden=16)


def tiny_config(**over) -> ModelConfig:
    kw = dict(TINY)
    kw.update(over)
    return ModelConfig(**kw)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(0, 4, per_scenario=2)


@pytest.fixture(scope="session")
def small_features(small_dataset):
    return FeatureCache(small_dataset)


@pytest.fixture(scope="session")
def small_batch(small_dataset, small_features):
    return make_batch(small_dataset, range(len(small_dataset)), small_features)


def graph_leaves(t) -> set[int]:
    """ids of every leaf tensor that ``t`` depends on."""
    seen, stack, leaves = set(), [t], set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if not node._parents:
            leaves.add(id(node))
        stack.extend(node._parents)
    return leaves


def randomize(module, seed=0, scale=0.1):
    """Overwrite zero-initialised weights so every path carries signal."""
    rng = np.random.default_rng(seed)
    for p in module.parameters():
        if not p.tensor.data.any():
            p.tensor.data[...] = rng.normal(0.0, scale, size=p.shape)


# ------------------------------------------------------- shared long runs
@pytest.fixture(scope="session")
def overfit_run(small_dataset, small_features):
    """Eight-sample overfit, stage 2 only, stopped at 0.05 m per waypoint."""
    from jointdrive.training.trainer import Trainer, overfit_config
    tr = Trainer(overfit_config(), small_dataset, features=small_features)
    tr.run(stages=(2,), stop_when=lambda r: r.plan_per_wp < 0.05)
    return tr


TOY_SEEDS = (0, 1, 2)


def toy_config(**over):
    from jointdrive.training.trainer import OVERFIT_WIDTHS, TrainConfig
    kw = dict(lr=2e-3, schedule="cosine", batch_size=8, epochs=[1, 40, 1], local_layers=2, global_layers=2,
              model=dict(OVERFIT_WIDTHS))
    kw.update(over)
    return TrainConfig(**kw)


@pytest.fixture(scope="session")
def toy_study(tmp_path_factory):
    """Full and variant III trained on one budget over three seeds; I and II on a short budget.

    Held-out scenes come from a different generator seed than the training scenes.
    """
    from jointdrive.training.data import FeatureCache, generate_dataset
    from jointdrive.training.trainer import Trainer, evaluate_l1
    train = generate_dataset(11, 12, per_scenario=4)
    held = generate_dataset(12, 12, per_scenario=4)
    f_train, f_held = FeatureCache(train), FeatureCache(held)
    runs = {}
    for variant in ("full", "III"):
        for seed in TOY_SEEDS:
            tr = Trainer(toy_config(variant=variant, seed=seed), train, features=f_train)
            tr.run()
            runs[variant, seed] = (tr, evaluate_l1(tr.model, held, features=f_held))
    for variant in ("I", "II"):
        tr = Trainer(toy_config(variant=variant, epochs=[1, 4, 1]), train, features=f_train)
        tr.run()
        runs[variant, 0] = (tr, evaluate_l1(tr.model, held, features=f_held))
    ckpt = runs["full", 0][0].save(tmp_path_factory.mktemp("toy") / "full.ckpt")
    return {"train": train, "held": held, "f_held": f_held, "runs": runs, "checkpoint": ckpt}


# ------------------------------------------------------ acceptance report
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
_T0 = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    elapsed = time.perf_counter() - _T0
    ok9, detail9 = ACCEPTANCE.get(9, (True, ""))
    ACCEPTANCE[9] = (ok9 and elapsed < 600, f"{detail9}; suite {elapsed:.0f} s (< 600 s)".lstrip("; "))
    terminalreporter.section("acceptance criteria")
    for k in range(1, 10):
        if k in ACCEPTANCE:
            ok, detail = ACCEPTANCE[k]
            terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {k}: NOT RUN")
