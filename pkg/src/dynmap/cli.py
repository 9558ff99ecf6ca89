"""Command-line entry point: ``dynmap <command> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime / data error.
Machine-readable results go to stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

from . import io
from .descriptors import build_mod, normalize_maps
from .errors import ConfigError, EmptyDataset, InsufficientData, TimeOutOfRange
from .grid import SpecMismatch
from .metrics import MetricError, detector_gap, evaluate_maps
from .model import forward
from .observability import FovSpec, local_stefmap
from .render import LAYERS, render
from .sim import SensorNoise, corrupt, run
from .train import TrainConfig, train
from .windows import extract_windows, make_window, to_samples, training_flow_scale


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _fov(args) -> FovSpec:
    return FovSpec(math.radians(args.half_angle_deg), args.max_range, not args.no_occlusion)


def _add_fov(p) -> None:
    p.add_argument("--half-angle-deg", type=float, default=45.0)
    p.add_argument("--max-range", type=float, default=8.0)
    p.add_argument("--no-occlusion", action="store_true")


def cmd_simulate(args) -> int:
    scene = io.load_scene(args.scene)
    path_doc = io.load_robot_path_doc(args.robot_path)
    path = io.parse_robot_path(path_doc)
    noise = None
    if args.noise:
        noise = io.parse_noise(io.read_json(args.noise))
    ds = run(scene, path, args.duration, args.dt, noise=noise, seed=args.seed,
             association=args.association)
    io.save_dataset(ds, args.out, path_doc)
    _log(f"simulated {ds.meta['steps']} steps, {len(ds.detections)} detections -> {args.out}")
    _emit({"out": str(args.out), "steps": ds.meta["steps"], "detections": len(ds.detections)})
    return 0


def _check_window(ds, t0: float, horizon: float) -> None:
    if t0 < 0 or t0 + horizon > ds.duration + 1e-9:
        raise InsufficientData(f"window [{t0}, {t0 + horizon}) runs past the dataset end "
                               f"at {ds.duration} s")


def cmd_build_mod(args) -> int:
    ds = io.load_dataset(args.dataset)
    _check_window(ds, args.t0, args.horizon)
    spec = io.scene_grid(ds.scene, args.cell_size)
    common = dict(num_bins=args.bins, kappa=args.kappa, eps=args.eps,
                  normalize=args.normalize, flow_max=args.flow_max)
    vis = None
    if args.local:
        maps, vis = local_stefmap(ds.detections, ds.robot_path, _fov(args), ds.scene.walls,
                                  args.t0, args.horizon, spec, poses=ds.poses, **common)
    else:
        maps = build_mod(ds.detections, args.t0, args.horizon, spec, **common)
    side = {"scope": "local" if args.local else "global", "t0": args.t0,
            "horizon": args.horizon, "kappa": args.kappa, "eps": args.eps,
            "flow_max": args.flow_max}
    io.save_maps(args.out, maps, vis, side)
    _emit({"out": str(args.out), "scope": side["scope"],
           "flow_valid_cells": int(maps.flow_valid.sum()),
           "dir_valid_cells": int(maps.dir_valid.sum())})
    return 0


def cmd_train(args) -> int:
    datasets = [io.load_dataset(d) for d in args.datasets]
    spec = io.scene_grid(datasets[0].scene, args.cell_size)
    fov = _fov(args)
    windows = []
    for ds in datasets:
        if io.scene_grid(ds.scene, args.cell_size) != spec:
            raise ConfigError("datasets", "all datasets must share one grid")
        windows += extract_windows(ds, spec, args.horizon, args.n, args.stride, fov, args.bins)
    if not windows:
        raise EmptyDataset("no training windows")
    flow_max = training_flow_scale(windows)
    samples = to_samples(windows, flow_max, args.horizon, args.n)
    cfg = TrainConfig(learning_rate=args.lr, weight_decay=args.weight_decay,
                      batch_size=args.batch_size, epochs=args.epochs, horizon=args.horizon,
                      input_window=args.n, seed=args.seed, augment=not args.no_augment)
    params, curve = train(samples, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_doc = asdict(cfg)
    cfg_doc["betas"] = list(cfg.betas)
    io.save_model(out / "model.modg", params, {
        "flow_max": flow_max, "horizon": args.horizon, "input_window": args.n,
        "num_bins": args.bins, "fov": {"half_angle": fov.half_angle, "max_range": fov.max_range,
                                       "occlusion": fov.occlusion},
        "train_config": cfg_doc, "windows": len(windows)})
    lines = ["epoch,loss"] + [f"{i},{v!r}" for i, v in enumerate(curve)]
    io.atomic_write(out / "loss_curve.csv", ("\n".join(lines) + "\n").encode())
    _log(f"trained on {len(samples)} windows; loss {curve[0]:.4f} -> {curve[-1]:.4f}"
         if curve else "trained for 0 epochs")
    _emit({"out": str(out), "windows": len(samples), "final_loss": curve[-1] if curve else None})
    return 0


def _predict_from_model(args, gt_spec):
    params, manifest = io.load_model(args.model)
    ds = io.load_dataset(args.dataset)
    horizon, n = manifest["horizon"], manifest["input_window"]
    _check_window(ds, args.t0, horizon)
    f = manifest["fov"]
    fov = FovSpec(f["half_angle"], f["max_range"], f["occlusion"])
    spec = params.spec
    if gt_spec is not None and gt_spec != spec:
        raise SpecMismatch("model grid differs from ground-truth grid")
    window = make_window(ds, spec, args.t0, horizon, n, fov, manifest["num_bins"])
    sample = to_samples([window], manifest["flow_max"], horizon, n)[0]
    return forward(params, sample.features), window.visibility, manifest["flow_max"], horizon


def cmd_evaluate(args) -> int:
    gt, gt_vis, gt_meta = io.load_maps(args.gt)
    flow_max = None
    if args.pred:
        pred, pred_vis, pred_meta = io.load_maps(args.pred)
        flow_max = pred_meta.get("flow_max")
        horizon = gt_meta.get("horizon", 0.0)
    elif args.model and args.dataset is not None:
        pred, pred_vis, flow_max, horizon = _predict_from_model(args, gt.spec)
    else:
        raise UsageError("evaluate needs --pred or both --model and --dataset")
    if pred.spec != gt.spec:
        raise SpecMismatch("prediction and ground truth grids differ")
    if pred.normalized != gt.normalized:
        if flow_max is None:
            raise ConfigError("flow_max", "cannot compare normalized and raw maps "
                                          "without a recorded flow scale")
        pred, gt = normalize_maps(pred, flow_max), normalize_maps(gt, flow_max)
    vis = None
    if args.scope == "local":
        if args.mask:
            _, ch = io.read_gridfile(args.mask)
            if "visibility" not in ch:
                raise ConfigError("mask", "grid file has no visibility channel")
            vis = ch["visibility"] > 0.5
        else:
            vis = pred_vis if pred_vis is not None else gt_vis
        if vis is None:
            raise ConfigError("mask", "local scope needs a visibility mask")
    report = evaluate_maps(pred, gt, args.scope, horizon, vis).to_dict()
    if args.out:
        io.write_json(args.out, report)
    _emit(report)
    return 0


def cmd_detector_gap(args) -> int:
    ds = io.load_dataset(args.dataset)
    spec = io.scene_grid(ds.scene, args.cell_size)
    if args.noise:
        noise = io.parse_noise(io.read_json(args.noise))
    else:
        noise = SensorNoise(args.pos_sigma, args.miss_rate, args.heading_sigma, args.noise_seed)
    horizon = args.horizon if args.horizon is not None else ds.duration - args.t0
    _check_window(ds, args.t0, horizon)
    # the final step lands exactly on the dataset end; widen so it is included
    ref = build_mod(ds.detections, args.t0, horizon + 1e-9, spec, args.bins)
    obs = build_mod(corrupt(ds.detections, noise), args.t0, horizon + 1e-9, spec, args.bins)
    doc = detector_gap(ref, obs)
    if args.out:
        io.write_json(args.out, doc)
    _emit(doc)
    return 0


def cmd_render(args) -> int:
    maps, _, _ = io.load_maps(args.grid)
    render(maps, args.layer, args.out, args.scale)
    _emit({"out": str(args.out), "layer": args.layer,
           "size": [maps.spec.width * args.scale, maps.spec.height * args.scale]})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dynmap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="roll out a scene and write a dataset directory")
    s.add_argument("scene", help="scene JSON path or shipped scene name")
    s.add_argument("robot_path", help="robot path JSON path or shipped scene name")
    s.add_argument("--seed", type=int, default=None, help="overrides the scene seed")
    s.add_argument("--dt", type=float, default=0.1)
    s.add_argument("--duration", type=float, default=60.0)
    s.add_argument("--noise", help="sensor noise JSON applied to the detections")
    s.add_argument("--association", choices=["exact", "associated"], default="exact")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("build-mod", help="build flow/direction/entropy maps for one window")
    b.add_argument("dataset")
    b.add_argument("--t0", type=float, default=0.0)
    b.add_argument("--horizon", type=float, choices=[10.0, 20.0], default=10.0)
    b.add_argument("--bins", type=int, default=8)
    b.add_argument("--cell-size", type=float, default=0.30)
    b.add_argument("--kappa", type=float, default=1.5)
    b.add_argument("--eps", type=float, default=1e-12)
    b.add_argument("--normalize", action="store_true")
    b.add_argument("--flow-max", type=float, default=None)
    scope = b.add_mutually_exclusive_group()
    scope.add_argument("--global", dest="local", action="store_false", default=False)
    scope.add_argument("--local", dest="local", action="store_true")
    _add_fov(b)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_mod)

    t = sub.add_parser("train", help="train the predictor on one or more datasets")
    t.add_argument("datasets", nargs="+")
    t.add_argument("--horizon", type=float, default=10.0)
    t.add_argument("--n", type=float, default=2.0, help="input window length (s)")
    t.add_argument("--stride", type=float, default=2.0)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--weight-decay", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--bins", type=int, default=8)
    t.add_argument("--cell-size", type=float, default=0.30)
    t.add_argument("--no-augment", action="store_true")
    _add_fov(t)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score predicted maps against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred")
    e.add_argument("--model")
    e.add_argument("--dataset")
    e.add_argument("--t0", type=float, default=0.0)
    e.add_argument("--scope", choices=["local", "global"], default="global")
    e.add_argument("--mask", help="grid file whose visibility channel limits local scope")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("detector-gap", help="compare exact and corrupted-detection maps")
    g.add_argument("dataset")
    g.add_argument("--noise", help="sensor noise JSON (overrides the flags below)")
    g.add_argument("--miss-rate", type=float, default=0.5)
    g.add_argument("--pos-sigma", type=float, default=0.3)
    g.add_argument("--heading-sigma", type=float, default=0.2)
    g.add_argument("--noise-seed", type=int, default=0)
    g.add_argument("--t0", type=float, default=0.0)
    g.add_argument("--horizon", type=float, default=None, help="default: to dataset end")
    g.add_argument("--bins", type=int, default=8)
    g.add_argument("--cell-size", type=float, default=0.30)
    g.add_argument("--out")
    g.set_defaults(func=cmd_detector_gap)

    r = sub.add_parser("render", help="draw one map layer as a PNG")
    r.add_argument("grid")
    r.add_argument("--layer", choices=LAYERS, default="flow")
    r.add_argument("--scale", type=int, default=1)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


RUNTIME_ERRORS = (InsufficientData, MetricError, EmptyDataset, io.FormatError, OSError,
                  TimeOutOfRange, SpecMismatch)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as e:
        _log(f"error: {e}")
        return 1
    except RUNTIME_ERRORS as e:
        _log(f"error: {type(e).__name__}: {e}")
        return 2
    except ValueError as e:
        _log(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
