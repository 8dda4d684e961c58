"""Command-line surface: gen-data, train, eval, field, gradcheck.

Configuration is a JSON file merged over built-in defaults, with
``--set key=value`` overrides on top (CLI > file > defaults). Every
command echoes its fully resolved configuration into the output directory
before doing any work, so a run is reproducible from its output alone.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from . import __version__
from .checkpoint import restore_params
from .data import SyntheticSceneSpec, load_dataset, write_dataset
from .errors import ConfigError, DataError, GazefieldError, NumericError
from .field import Direction, NormalizedPoint, evaluate_field_stack, write_field_csvs
from .gradcheck import run_full_suite
from .metrics import (GroundTruthSet, evaluate_heatmaps, write_aggregate_json,
                      write_curve_csv, write_per_sample_csv)
from .model import (DirectionPathwayConfig, GazeModel, HeatmapPathwayConfig,
                    TrainConfig, train_staged, write_training_log)
from .plots import render_curve_figure, render_field_figure, render_training_curves

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

OUT_ROOT_ENV = "GAZEFIELD_OUT"

DEFAULTS: dict = {
    "data": {
        "resolution": 64,
        "noise_amplitude": 0.06,
        "blob_count": 5,
        "blob_radius": [0.035, 0.06],
        "wedge_size": 0.24,
        "angle_tolerance_deg": 15.0,
        "seed": 0,
        "n_train": 2000,
        "n_test": 500,
    },
    "train": {
        "dataset_dir": None,
        "batch_size": 32,
        "lr": 1e-4,
        "weight_decay": 0.0005,
        "loss_balance": 0.5,
        "sigma": 3.0,
        "gammas": [5.0, 2.0, 1.0],
        "stage1_epochs": 25,
        "stage2_epochs": 10,
        "finetune_epochs": 4,
        "seed": 0,
        "scene_resolution": 64,
        "heatmap_resolution": 16,
        "crop_resolution": 32,
        "mid_layer_supervision": True,
        "direction_channels": [12, 24, 32],
        "position_widths": [16, 16, 16],
        "fusion_width": 32,
        "encoder_channels": [12, 24, 32],
        "decoder_channels": [24, 16],
    },
    "eval": {
        "dataset_dir": None,
        "checkpoint": None,
        "split": "test",
        "threshold_max": 0.5,
        "threshold_count": 51,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' must be a section")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _parse_set(expr: str) -> tuple[list[str], object]:
    if "=" not in expr:
        raise ConfigError(f"--set expects key=value, got '{expr}'")
    key, raw = expr.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings are fine
    return key.strip().split("."), value


def resolve_config(config_path: str | None, sets: list[str], seed: int | None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if config_path:
        if not os.path.exists(config_path):
            raise ConfigError(f"config file not found: {config_path}")
        with open(config_path) as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
        cfg = _merge(cfg, loaded)
    for expr in sets or []:
        keys, value = _parse_set(expr)
        node = cfg
        for k in keys[:-1]:
            if k not in node or not isinstance(node[k], dict):
                raise ConfigError(f"unknown config section '{'.'.join(keys[:-1])}'")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key '{'.'.join(keys)}'")
        node[keys[-1]] = value
    if seed is not None:
        cfg["data"]["seed"] = seed
        cfg["train"]["seed"] = seed
    return cfg


def _out_dir(args, command: str) -> str:
    out = args.out or os.path.join(os.environ.get(OUT_ROOT_ENV, "runs"), command)
    os.makedirs(out, exist_ok=True)
    return out


def _echo_config(cfg: dict, out: str) -> None:
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _scene_spec(d: dict) -> SyntheticSceneSpec:
    try:
        return SyntheticSceneSpec(
            resolution=int(d["resolution"]),
            noise_amplitude=float(d["noise_amplitude"]),
            blob_count=int(d["blob_count"]),
            blob_radius=tuple(float(v) for v in d["blob_radius"]),
            wedge_size=float(d["wedge_size"]),
            angle_tolerance_deg=float(d["angle_tolerance_deg"]),
            seed=int(d["seed"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad data section: {exc}") from exc


def _train_config(t: dict) -> TrainConfig:
    try:
        return TrainConfig(
            batch_size=int(t["batch_size"]),
            lr=float(t["lr"]),
            weight_decay=float(t["weight_decay"]),
            loss_balance=float(t["loss_balance"]),
            sigma=float(t["sigma"]),
            gammas=tuple(float(g) for g in t["gammas"]),
            stage1_epochs=int(t["stage1_epochs"]),
            stage2_epochs=int(t["stage2_epochs"]),
            finetune_epochs=int(t["finetune_epochs"]),
            seed=int(t["seed"]),
            scene_resolution=int(t["scene_resolution"]),
            heatmap_resolution=int(t["heatmap_resolution"]),
            crop_resolution=int(t["crop_resolution"]),
            mid_layer_supervision=bool(t["mid_layer_supervision"]),
            direction=DirectionPathwayConfig(
                crop_channels=tuple(int(c) for c in t["direction_channels"]),
                position_widths=tuple(int(c) for c in t["position_widths"]),
                fusion_width=int(t["fusion_width"])),
            heatmap=HeatmapPathwayConfig(
                encoder_channels=tuple(int(c) for c in t["encoder_channels"]),
                decoder_channels=tuple(int(c) for c in t["decoder_channels"])),
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad train section: {exc}") from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args.config, args.set, args.seed)
    out = _out_dir(args, "dataset")
    _echo_config(cfg, out)
    spec = _scene_spec(cfg["data"])
    n_train, n_test = int(cfg["data"]["n_train"]), int(cfg["data"]["n_test"])
    info = write_dataset(spec, n_train, n_test, out)
    print(f"wrote {info['train']} train + {info['test']} test scenes to {out}")
    print(f"annotations: {info['annotations']}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.set, args.seed)
    out = _out_dir(args, "train")
    _echo_config(cfg, out)
    tc = _train_config(cfg["train"])
    dataset_dir = cfg["train"]["dataset_dir"]
    if not dataset_dir:
        raise ConfigError("train.dataset_dir is required (run gen-data first)")
    samples, skipped = load_dataset(dataset_dir, tc.scene_resolution,
                                    tc.crop_resolution, split="train")
    if skipped:
        print(f"warning: skipped {skipped} degenerate samples (gaze at head center)")
    result = train_staged(samples, tc, out_dir=out, log_fn=print)
    log_path = os.path.join(out, "training_log.csv")
    write_training_log(result.log, log_path)
    render_training_curves(result.log, os.path.join(out, "training_curves.png"))
    print(f"training log: {log_path}")
    print(f"final checkpoint: {os.path.join(out, 'checkpoint_final.json')}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args.config, args.set, args.seed)
    out = _out_dir(args, "eval")
    _echo_config(cfg, out)
    tc = _train_config(cfg["train"])
    e = cfg["eval"]
    if not e["checkpoint"]:
        raise ConfigError("eval.checkpoint is required")
    if not e["dataset_dir"]:
        raise ConfigError("eval.dataset_dir is required")
    model = GazeModel(tc, rng=np.random.default_rng(tc.seed))
    restore_params(model.params, e["checkpoint"])
    samples, skipped = load_dataset(e["dataset_dir"], tc.scene_resolution,
                                    tc.crop_resolution, split=e["split"])
    if not samples:
        raise DataError(f"no '{e['split']}' samples in {e['dataset_dir']}")
    if skipped:
        print(f"warning: skipped {skipped} degenerate samples")
    heatmaps = model.predict_heatmaps(samples)
    gt_sets = [GroundTruthSet(s.gaze_points, s.head) for s in samples]
    thresholds = np.linspace(0.0, float(e["threshold_max"]), int(e["threshold_count"]))
    report = evaluate_heatmaps(heatmaps, gt_sets, thresholds=thresholds)
    write_per_sample_csv(report, os.path.join(out, "per_sample.csv"))
    write_curve_csv(report, os.path.join(out, "curve.csv"))
    write_aggregate_json(report, os.path.join(out, "aggregate.json"))
    render_curve_figure(report.curve, os.path.join(out, "curve.png"))
    a = report.aggregate
    print(f"evaluated {a['n_samples']} samples:")
    print(f"  AUC   {a['auc']:.4f}")
    print(f"  Dist  {a['dist']:.4f}")
    print(f"  MDist {a['mdist']:.4f}")
    ang = "n/a" if a["ang_degrees"] is None else f"{a['ang_degrees']:.2f}"
    mang = "n/a" if a["mang_degrees"] is None else f"{a['mang_degrees']:.2f}"
    print(f"  Ang   {ang} deg  ({a['ang_excluded']} excluded)")
    print(f"  MAng  {mang} deg  ({a['mang_excluded']} excluded)")
    print(f"reports in {out}")
    return EXIT_OK


def cmd_field(args) -> int:
    out = _out_dir(args, "field")
    try:
        head = NormalizedPoint(args.head_x, args.head_y)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    direction = Direction(args.dir_x, args.dir_y)
    if direction.norm() == 0.0:
        raise ConfigError("direction must be non-zero")
    gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    if not gammas or any(g < 1 for g in gammas):
        raise ConfigError(f"gammas must be >= 1, got '{args.gammas}'")
    _echo_config({"field": {"head": [args.head_x, args.head_y],
                            "dir": [args.dir_x, args.dir_y],
                            "size": args.size, "gammas": gammas}}, out)
    stack = evaluate_field_stack(head, direction, args.size, args.size, gammas)
    paths = write_field_csvs(stack, direction, out)
    figure = os.path.join(out, "field.png")
    render_field_figure(stack, direction, figure)
    for p in paths:
        print(p)
    print(figure)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_full_suite(seed=args.seed if args.seed is not None else 0)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<18} rel_error={r.max_rel_error:.3e}  tol={r.tolerance:g}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    if failed:
        raise NumericError(f"{failed} gradient checks failed")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazefield",
        description="Two-stage gaze following: direction fields + heatmap regression.")
    parser.add_argument("--version", action="version", version=f"gazefield {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override data and train seeds")
        p.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/<command>)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                       help="override a config value (repeatable, dotted keys)")

    common(sub.add_parser("gen-data", help="generate a synthetic dataset"))
    common(sub.add_parser("train", help="run the staged training schedule"))
    common(sub.add_parser("eval", help="evaluate a checkpoint, write metric reports"))

    pf = sub.add_parser("field", help="dump direction field grids for one head/direction")
    pf.add_argument("--head-x", type=float, required=True)
    pf.add_argument("--head-y", type=float, required=True)
    pf.add_argument("--dir-x", type=float, required=True)
    pf.add_argument("--dir-y", type=float, required=True)
    pf.add_argument("--size", type=int, default=64)
    pf.add_argument("--gammas", default="5,2,1")
    pf.add_argument("--out", help="output directory")

    pg = sub.add_parser("gradcheck", help="finite-difference checks for every op")
    pg.add_argument("--seed", type=int, default=0)

    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "field": cmd_field,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GazefieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
