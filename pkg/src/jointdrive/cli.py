"""Command line: data generation, staged training, closed-loop evaluation, ablations, and rendering."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .control import ControllerConfig, ModelAgent, RouteAgent, to_ego_frame
from .experiments import ablation, load_model, run_suite, split_indices, subset, write_report
from .model import accumulate_attention
from .numerics.tensor import NumericError, no_grad
from .render import heatmap_pgm, heatmap_svg, overlay_svg
from .sim import compute_metrics, generate, run_episode
from .training.checkpoint import CheckpointError
from .training.data import (DatasetError, FeatureCache, dataset_digest, generate_dataset, make_batch,
                            read_dataset, write_dataset)
from .training.trainer import Trainer, overfit_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 3, 4, 5


class DataError(Exception):
    pass


def _config(args) -> RunConfig:
    return RunConfig.from_sources(args.config, args.set or ())


def _dataset(path):
    if path is None:
        raise DataError("a dataset directory is required (--data)")
    if not Path(path).is_dir():
        raise DataError(f"dataset directory {path} does not exist")
    return read_dataset(path)


def _checkpoint(path):
    if path is None or not Path(path).is_file():
        raise DataError(f"checkpoint {path} not found")
    return path


def _model(args, rc: RunConfig):
    model, header = load_model(_checkpoint(args.checkpoint), rc.model_config() if rc.user_model else None)
    return model, header


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# ---------------------------------------------------------------- commands
def cmd_gen_data(args) -> int:
    rc = _config(args)
    d = rc.blocks["data"]
    n = d["scenarios"] if args.scenarios is None else args.scenarios
    seed = rc.seed if args.seed is None else args.seed
    if n <= 0:
        raise ConfigError("gen-data needs at least one scenario")
    ds = generate_dataset(seed, n, tuple(d["kinds"]), d["horizon"], d["dt_wp"], d["every"], d["per_scenario"])
    try:
        out = write_dataset(ds, args.out, compress=d["compress"])
    except OSError as exc:
        raise DataError(f"cannot write dataset to {args.out}: {exc}") from None
    others = max((len(s.other_ids) for s in ds.samples), default=0)
    _emit({"scenarios": len(ds.scenarios), "samples": len(ds.samples), "max_others": others,
           "digest": dataset_digest(out), "out": str(out)})
    return EXIT_OK


def cmd_train(args) -> int:
    rc = _config(args)
    if args.variant:
        rc.blocks["model"]["variant"] = args.variant
        rc.validate()
    ds = _dataset(args.data)
    cfg = overfit_config(seed=rc.seed, variant=rc.blocks["model"]["variant"]) if args.overfit else rc.train_config()
    if args.overfit:
        ds = subset(ds, range(min(8, len(ds))))
        train_idx = list(range(len(ds)))
    else:
        train_idx, _ = split_indices(len(ds), rc.blocks["data"]["held_out"], rc.seed)
    train = subset(ds, train_idx)
    out = Path(args.out)
    tr = Trainer(cfg, train, out_dir=out)
    if args.resume:
        tr.resume(_checkpoint(args.resume))
    stages = (args.stage,) if args.stage else (1, 2, 3)
    if args.overfit:
        stages = (2,)
    stop = (lambda r: r.plan_per_wp < 0.05) if args.overfit else None
    finished = tr.run(stages=stages, max_steps=args.max_steps, stop_when=stop)
    last = tr.save(out / "last.ckpt")
    tr.write_metrics(out / "metrics.csv")
    rec = tr.history[-1] if tr.history else None
    _emit({"finished": finished, "steps": tr.position["step"], "params": tr.model.num_parameters(),
           "variant": cfg.variant, "checkpoint": str(last),
           "final_loss": None if rec is None else rec.loss,
           "final_plan_per_wp": None if rec is None else rec.plan_per_wp})
    return EXIT_OK


def cmd_eval(args) -> int:
    rc = _config(args)
    e = rc.blocks["eval"]
    agent = args.agent or e["agent"]
    model = None
    if agent == "model":
        model, _ = _model(args, rc)
    ctl = rc.controller_config()
    if args.no_collision_check:
        ctl = ControllerConfig.from_dict({**ctl.to_dict(), "collision_check": False})
    kinds = args.kinds.split(",") if args.kinds else e["kinds"]
    for k in kinds:
        generate(k, 0)  # unknown kinds fail before any rollout
    report = run_suite(model, ctl, kinds, args.episodes or e["episodes"], args.repeats or e["repeats"],
                       rc.seed + e["seed_offset"], args.max_time or e["max_time"])
    report["config_hash"] = rc.digest()
    report["config"] = rc.to_dict()
    report["agent"] = agent
    report["collision_check"] = ctl.collision_check
    report["checkpoint"] = None if model is None else str(args.checkpoint)
    js, cs = write_report(report, args.out)
    _emit({"aggregate": report["aggregate"], "config_hash": report["config_hash"], "json": str(js), "csv": str(cs)})
    return EXIT_OK


def cmd_rollout(args) -> int:
    rc = _config(args)
    sc = generate(args.kind, rc.seed if args.seed is None else args.seed, args.index)
    ctl = rc.controller_config()
    if args.agent == "model":
        model, _ = _model(args, rc)
        agent = ModelAgent(model, ctl, keep_trace=True)
    elif args.agent == "route":
        agent = RouteAgent(ctl)
    else:
        agent = None
    frames = Path(args.frames) if args.frames else None
    if frames is not None:
        frames.mkdir(parents=True, exist_ok=True)
    tick = [0]

    def drive(world):
        controls = agent(world)
        if frames is not None and tick[0] % args.every == 0 and agent.trace:
            t = agent.trace[-1]
            (frames / f"frame_{tick[0]:05d}.svg").write_text(
                overlay_svg(world, world.scenario.ego_id, t["plan"], t["preds"], t["ids"]))
        tick[0] += 1
        return controls

    log = run_episode(sc, None if agent is None else drive, max_time=args.max_time)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log.to_jsonl(out)
    rcv, score, dsv = compute_metrics(log)
    _emit({"RC": rcv, "IS": score, "DS": dsv, "outcome": log.outcome, "ticks": len(log.records), "log": str(out)})
    return EXIT_OK


def cmd_ablate(args) -> int:
    rc = _config(args)
    ds = _dataset(args.data)
    train_idx, held_idx = split_indices(len(ds), rc.blocks["data"]["held_out"], rc.seed)
    if not held_idx:
        raise ConfigError("ablation needs a held-out share (data.held_out > 0)")
    variants = args.variants.split(",")
    seeds = [rc.seed + k for k in range(args.seeds)]
    res = ablation(subset(ds, train_idx), subset(ds, held_idx), rc.train_config(), variants, seeds)
    res["config_hash"] = rc.digest()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    lines = ["variant,seed,params,plan,pred,joint"]
    lines += [f"{r['variant']},{r['seed']},{r['params']},{r['plan']!r},{r['pred']!r},{r['joint']!r}"
              for r in res["runs"]]
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    _emit({"summary": res["summary"], "out": str(out)})
    return EXIT_OK


def _sample_batch(args, model):
    ds = _dataset(args.data)
    if not 0 <= args.index < len(ds):
        raise DataError(f"sample index {args.index} out of range (dataset has {len(ds)})")
    batch = make_batch(ds, [args.index], FeatureCache(ds, model.grid), "inference", None, model.config.max_seq)
    return ds, batch


def cmd_attn_dump(args) -> int:
    rc = _config(args)
    model, _ = _model(args, rc)
    if not model.config.use_local:
        raise ConfigError(f"variant {model.config.variant} has no local transformer to dump")
    _, batch = _sample_batch(args, model)
    if not 0 <= args.vehicle < len(batch.slot):
        raise DataError(f"vehicle row {args.vehicle} out of range ({len(batch.slot)} rows)")
    with no_grad():
        feats, _ = model.perceive(batch.F, with_seg=False)
        crops = model.crops(feats, batch)
        _, record = model.local(crops)
    layer = len(record) - 1 if args.layer is None else args.layer
    heat = accumulate_attention(record, layer=layer, item=args.vehicle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    svg, pgm = out / "attention.svg", out / "attention.pgm"
    svg.write_text(heatmap_svg(heat, crops.data[args.vehicle]))
    pgm.write_bytes(heatmap_pgm(heat))
    _emit({"svg": str(svg), "pgm": str(pgm), "layer": layer, "cells": int(heat.size)})
    return EXIT_OK


def cmd_plot(args) -> int:
    rc = _config(args)
    model, _ = _model(args, rc)
    ds, batch = _sample_batch(args, model)
    with no_grad():
        out = model(batch)
    plan = out.plan.data[0]
    ids = batch.ids[0][1:]
    preds = [] if out.preds is None else [to_ego_frame(out.preds.data[k], batch.poses[k + 1])
                                         for k in range(len(ids))]
    sample = ds.samples[args.index]
    svg = overlay_svg(ds.world(sample), sample.ego_id, plan, preds, ids)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    _emit({"svg": str(path), "plan": 1, "predictions": len(preds)})
    return EXIT_OK


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jointdrive", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--set", action="append", metavar="BLOCK.KEY=VALUE", help="override one config value")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="roll out the expert and write a dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--scenarios", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="staged training")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--stage", type=int, choices=(1, 2, 3), help="run a single stage")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--variant", choices=("full", "I", "II", "III"))
    t.add_argument("--max-steps", type=int, help="stop after this many optimizer steps (resumable)")
    t.add_argument("--overfit", action="store_true", help="8-sample smoke run until 0.05 m per waypoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="closed-loop evaluation with RC / IS / DS")
    e.add_argument("--checkpoint")
    e.add_argument("--out", required=True)
    e.add_argument("--agent", choices=("model", "route"))
    e.add_argument("--kinds", help="comma-separated scenario kinds")
    e.add_argument("--episodes", type=int)
    e.add_argument("--repeats", type=int)
    e.add_argument("--max-time", type=float)
    e.add_argument("--no-collision-check", action="store_true", help="controller ablation")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", parents=[common], help="one closed-loop episode with an optional frame dump")
    r.add_argument("--kind", default="straight")
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--seed", type=int)
    r.add_argument("--agent", choices=("model", "route", "expert"), default="model")
    r.add_argument("--checkpoint")
    r.add_argument("--out", required=True, help="episode log (JSON lines)")
    r.add_argument("--frames", help="directory for SVG frames")
    r.add_argument("--every", type=int, default=10)
    r.add_argument("--max-time", type=float)
    r.set_defaults(func=cmd_rollout)

    a = sub.add_parser("ablate", parents=[common], help="train variants on one budget and compare held-out L1")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--variants", default="full,I,II,III")
    a.add_argument("--seeds", type=int, default=3)
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("attn-dump", parents=[common], help="6x6 accumulated local attention as SVG and PGM")
    d.add_argument("--checkpoint")
    d.add_argument("--data", required=True)
    d.add_argument("--index", type=int, default=0)
    d.add_argument("--vehicle", type=int, default=0, help="batch row; 0 is the ego")
    d.add_argument("--layer", type=int)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_attn_dump)

    pl = sub.add_parser("plot", parents=[common], help="plan and predictions over one sample as SVG")
    pl.add_argument("--checkpoint")
    pl.add_argument("--data", required=True)
    pl.add_argument("--index", type=int, default=0)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DatasetError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:  # remaining validation failures come from user-supplied values
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
