"""Command-line entry point: ``radelft <command> ...``.

Every stage reads and writes a directory holding ``manifest.json``, whose
frame entries name the files of that stage relative to the directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from . import storage
from .cfar import cascade_detect
from .config import RunConfig
from .core import ConfigError, grid_to_point_cloud
from .groundtruth import build_supervision, pair_by_timestamp
from .metrics import EmptySetError, aggregate, chamfer_accel, pd_pfa
from .neural.model import DetectorConfig, DetectorModel
from .neural.train import TrainingError, make_samples, train_detector
from .pipeline import process_frame
from .scenes import demo_scene
from .simulate import Scene, SceneError, sample_ground_truth, synthesize_adc

ABLATIONS = {"no_doppler": "no_doppler", "quantile": "quantile_prefilter",
             "no_time": "no_time", "no_elevation": "no_elevation"}

log = logging.getLogger("radelft")


class CliError(RuntimeError):
    pass


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("RADELFT_THREADS", "1")))
    except ValueError:
        raise CliError("RADELFT_THREADS must be an integer") from None


def _map(fn: Callable, items: list) -> list:
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as ex:
        return list(ex.map(fn, items))


def _load_run(args) -> RunConfig:
    return RunConfig.load(args.config) if args.config else RunConfig()


def _out_dir(args) -> Path:
    if not args.out:
        raise CliError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _rel(path: Path, base: Path) -> str:
    return os.path.relpath(path, base)


def _read_stage(path) -> tuple:
    path = Path(path)
    mpath = path / "manifest.json" if path.is_dir() else path
    if not mpath.exists():
        raise CliError(f"{mpath}: manifest not found")
    return storage.read_manifest(mpath), mpath.parent


def _file(base: Path, entry: dict, key: str) -> Path:
    if key not in entry:
        raise CliError(f"manifest frame {entry.get('index')} has no {key!r} entry")
    p = base / entry[key]
    if not p.exists():
        raise CliError(f"{p}: file not found")
    return p


# -- commands -------------------------------------------------------------
def cmd_simulate(args) -> int:
    run = _load_run(args)
    out = _out_dir(args)
    if args.scene in (None, "demo"):
        scene = demo_scene()
    else:
        scene = Scene.load(args.scene)
    if args.seed is not None:
        scene = replace(scene, rng_seed=args.seed)
    grid = run.grid.grid(run.waveform)
    scene.save(out / "scene.json")
    run.save(out / "config.json")

    def one(k):
        adc = synthesize_adc(scene, run.waveform, run.array, run.noise_power, k)
        cloud = sample_ground_truth(scene, k)
        gt = build_supervision(cloud, grid, params=run.eval.ground)
        stem = f"frame_{k:04d}"
        storage.save_adc(out / f"{stem}.adc.rdlc", adc)
        storage.write_ply(out / f"{stem}.gt.ply", cloud)
        storage.save_occupancy(out / f"{stem}.gt.rdlc", gt, scene.frame_time(k))
        return {"index": k, "radar_timestamp": adc.timestamp, "gt_timestamp": scene.frame_time(k),
                "adc": f"{stem}.adc.rdlc", "gt_cloud": f"{stem}.gt.ply", "gt": f"{stem}.gt.rdlc"}

    frames = _map(one, list(range(scene.n_frames)))
    storage.write_manifest(out / "manifest.json", frames, {"stage": "simulate"})
    print(f"simulated {len(frames)} frames into {out}")
    return 0


def _carry_gt(entry: dict, src: Path, out: Path) -> dict:
    keep = {k: entry[k] for k in ("index", "radar_timestamp", "gt_timestamp") if k in entry}
    for k in ("gt", "gt_cloud"):
        if k in entry:
            keep[k] = _rel(src / entry[k], out)
    return keep


def cmd_process(args) -> int:
    run = _load_run(args)
    man, src = _read_stage(args.input)
    out = _out_dir(args)

    def one(e):
        frame = storage.load_adc(_file(src, e, "adc"))
        frame.check(run.waveform, run.array)
        cube = process_frame(frame, run.waveform, run.array, run.grid)
        name = f"frame_{e['index']:04d}.cube.rdlc"
        storage.save_cube(out / name, cube)
        return {**_carry_gt(e, src, out), "cube": name}

    frames = _map(one, man["frames"])
    storage.write_manifest(out / "manifest.json", frames, {"stage": "process"})
    print(f"processed {len(frames)} frames into {out}")
    return 0


def _export_points(out: Path, stem: str, occ, cube=None) -> None:
    pc = grid_to_point_cloud(occ, cube)
    storage.write_ply(out / f"{stem}.ply", pc)
    storage.write_csv(out / f"{stem}.csv", pc)


def cmd_detect_cfar(args) -> int:
    run = _load_run(args)
    man, src = _read_stage(args.input)
    out = _out_dir(args)
    no_el = "no_elevation" in (args.ablation or [])

    def one(e):
        cube = storage.load_cube(_file(src, e, "cube"))
        occ = cascade_detect(cube, run.cfar_range_angle, run.cfar_doppler, no_elevation=no_el)
        stem = f"frame_{e['index']:04d}.cfar"
        storage.save_occupancy(out / f"{stem}.rdlc", occ, cube.timestamp)
        _export_points(out, stem, occ, None if no_el else cube)
        return {**_carry_gt(e, src, out), "cube": _rel(src / e["cube"], out), "pred": f"{stem}.rdlc"}

    frames = _map(one, man["frames"])
    storage.write_manifest(out / "manifest.json", frames,
                           {"stage": "detect-cfar", "cfar": {"range_angle": run.cfar_range_angle.to_dict(),
                                                             "doppler": run.cfar_doppler.to_dict()}})
    print(f"cascade CFAR on {len(frames)} frames into {out}")
    return 0


def _detector_config(run: RunConfig, args) -> DetectorConfig:
    d = run.detector.to_dict()
    for a in args.ablation or []:
        d[ABLATIONS[a]] = True
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "threshold", None) is not None:
        d["prob_threshold"] = args.threshold
    return DetectorConfig.from_dict(d)


def cmd_train(args) -> int:
    run = _load_run(args)
    cfg = _detector_config(run, args)
    samples = []
    for i, inp in enumerate(args.input):
        man, src = _read_stage(inp)
        cubes = [storage.load_cube(_file(src, e, "cube")) for e in man["frames"]]
        gts = [storage.load_occupancy(_file(src, e, "gt")) for e in man["frames"]]
        if len(cubes) < cfg.T:
            raise CliError(f"{inp}: {len(cubes)} frames, need at least T={cfg.T}")
        samples += make_samples(cubes, gts, cfg, scene=f"{i}:{inp}")
    res = train_detector(samples, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    storage.save_checkpoint(out, cfg.to_dict(), res.model.params, {"history": res.history})
    print(f"trained on {res.n_train} windows ({res.n_val} validation); checkpoint {out}")
    return 0


def load_model(path) -> DetectorModel:
    config, tensors, _ = storage.load_checkpoint(path)
    return DetectorModel(DetectorConfig.from_dict(config), tensors)


def cmd_detect_nn(args) -> int:
    from .experiment import sequence_predict
    model = load_model(args.checkpoint)
    if args.threshold is not None:
        model.config = replace(model.config, prob_threshold=args.threshold)
    man, src = _read_stage(args.input)
    out = _out_dir(args)
    cubes = [storage.load_cube(_file(src, e, "cube")) for e in man["frames"]]
    preds = sequence_predict(model, cubes)
    frames = []
    for e, cube, occ in zip(man["frames"], cubes, preds):
        stem = f"frame_{e['index']:04d}.nn"
        storage.save_occupancy(out / f"{stem}.rdlc", occ, cube.timestamp)
        _export_points(out, stem, occ, None if model.config.no_elevation else cube)
        frames.append({**_carry_gt(e, src, out), "cube": _rel(src / e["cube"], out),
                       "pred": f"{stem}.rdlc"})
    storage.write_manifest(out / "manifest.json", frames, {"stage": "detect-nn"})
    print(f"neural detector on {len(frames)} frames into {out}")
    return 0


def cmd_evaluate(args) -> int:
    run = _load_run(args)
    man, src = _read_stage(args.input)
    out = _out_dir(args)
    if args.gt:
        gman, gsrc = _read_stage(args.gt)
    else:
        gman, gsrc = man, src
    gts = gman["frames"]
    pick = pair_by_timestamp([e["radar_timestamp"] for e in man["frames"]],
                             [e["gt_timestamp"] for e in gts], run.eval.max_skew)
    rows = []
    for e, j in zip(man["frames"], pick):
        if j < 0:
            raise CliError(f"frame {e['index']}: no ground truth within {run.eval.max_skew} s")
        pred = storage.load_occupancy(_file(src, e, "pred"))
        gt = storage.load_occupancy(_file(gsrc, gts[j], "gt"))
        if pred.occ.shape[2] == 1 and gt.occ.shape[2] > 1:
            gt = type(gt)(gt.occ.max(axis=2, keepdims=True), pred.grid)
        if pred.occ.shape != gt.occ.shape:
            raise CliError(f"frame {e['index']}: prediction {pred.occ.shape} vs truth {gt.occ.shape}")
        m = pd_pfa(pred, gt)
        try:
            cd = chamfer_accel(grid_to_point_cloud(pred), grid_to_point_cloud(gt))
        except EmptySetError:
            cd = None
        stem = f"frame_{e['index']:04d}"
        storage.write_bev_pgm(out / f"{stem}.pred.pgm", pred)
        storage.write_bev_pgm(out / f"{stem}.gt.pgm", gt)
        rows.append({"index": e["index"], "pd": m.pd, "pfa": m.pfa, "chamfer_m": cd,
                     "tp": m.tp, "fp": m.fp, "fn": m.fn, "tn": m.tn,
                     "skew_s": abs(e["radar_timestamp"] - gts[j]["gt_timestamp"])})
    report = {"frames": rows, "aggregate": aggregate(rows), "config": run.to_dict(),
              "provenance": {"predictions": str(args.input), "ground_truth": str(args.gt or args.input),
                             "stage": man.get("meta", {}).get("stage")}}
    (out / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    agg = report["aggregate"]
    print(f"pd={agg['pd']} pfa={agg['pfa']} chamfer_m={agg['chamfer_m']} -> {out / 'metrics.json'}")
    return 0


def cmd_export(args) -> int:
    path = Path(args.input)
    fmt = args.format
    if path.suffix == ".ply":
        pc = storage.read_ply(path)
    elif path.suffix == ".csv":
        pc = storage.read_csv(path)
    else:
        meta = storage.read_meta(path)
        if meta.get("kind") == "occupancy":
            pc = grid_to_point_cloud(storage.load_occupancy(path))
        else:
            raise CliError(f"{path}: cannot export {meta.get('kind')!r}")
    out = Path(args.out) if args.out else path.with_suffix("." + fmt)
    out.parent.mkdir(parents=True, exist_ok=True)
    (storage.write_ply if fmt == "ply" else storage.write_csv)(out, pc)
    print(f"wrote {len(pc)} points to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radelft", description="Radar detection pipeline on synthetic or RDLC data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, inp=True, multi=False):
        sp = sub.add_parser(name, help=help_)
        if inp:
            sp.add_argument("input", nargs="+" if multi else None,
                            help="stage directory (with manifest.json) or manifest path")
        sp.add_argument("--config", help="run configuration JSON")
        sp.add_argument("--out", help="output directory (checkpoint path for train)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--ablation", action="append", choices=sorted(ABLATIONS))
        sp.add_argument("--threshold", type=float)
        sp.set_defaults(func=fn)
        return sp

    add("simulate", cmd_simulate, "synthesize ADC frames and ground truth", inp=False).add_argument(
        "--scene", help="scene JSON (default: bundled demo scene)")
    add("process", cmd_process, "ADC frames to radar cubes")
    add("detect-cfar", cmd_detect_cfar, "cascade OS-CFAR occupancy")
    add("train", cmd_train, "train the neural detector", multi=True)
    nn = sub.add_parser("detect-nn", help="neural detector occupancy")
    nn.add_argument("checkpoint")
    nn.add_argument("input")
    nn.add_argument("--out")
    nn.add_argument("--threshold", type=float)
    nn.set_defaults(func=cmd_detect_nn)
    add("evaluate", cmd_evaluate, "Pd/Pfa/Chamfer against ground truth").add_argument(
        "--gt", help="stage directory holding the ground truth (default: input)")
    ex = sub.add_parser("export", help="occupancy or cloud to PLY/CSV")
    ex.add_argument("input")
    ex.add_argument("--format", choices=("ply", "csv"), default="ply")
    ex.add_argument("--out")
    ex.set_defaults(func=cmd_export)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, storage.FormatError, SceneError, TrainingError,
            OSError, ValueError, KeyError) as e:
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"radelft {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
