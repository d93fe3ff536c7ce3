"""Command-line surface.

Subcommands:
  synth    generate a synthetic sequence (frames, params.json, rig.json,
           hidden ground-truth model)
  train    offline reconstruction on a sequence directory
  stream   online reconstruction (deterministic steps-per-frame by default,
           wall-clock ingestion with --fps)
  render   render a model: dataset frames, a theta JSON file, or novel-view
           orbits, to PNG files
  eval     PSNR/SSIM table on the holdout split (last 350 frames, scaled for
           short sequences) or on all frames
  ablate   run the sampling / batching / color-init ablation grids
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from .color_init import ColorInitState
from .dataset import SynthConfig, holdout_split, load_sequence, render_avatar_frame, synth_generate
from .model_io import load_model, save_model
from .render import Camera
from .scheduler import BatchRenderer
from .stream import OnlineConfig, dataset_stream, forgetting_gap, run_online
from .train import TrainConfig, evaluate, train_offline


def make_parser():
    parser = argparse.ArgumentParser(prog="headsplat",
                                     description="Gaussian-blendshape head avatars on the CPU")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1, help="render worker threads")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file overriding training configuration fields")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic sequence")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--uv-res", type=int, default=32)
    p.add_argument("--k-true", type=int, default=4)

    p = sub.add_parser("train", help="offline training")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--uv-res", type=int, default=256)
    p.add_argument("--no-color-init", action="store_true")
    p.add_argument("--no-mlp", action="store_true",
                   help="drive blendshapes with the first K rig parameters")
    p.add_argument("--holdout", action="store_true",
                   help="train only on the pre-holdout frames")

    p = sub.add_parser("stream", help="online training over the sequence replayed in order")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--uv-res", type=int, default=256)
    p.add_argument("--steps-per-frame", type=int, default=25)
    p.add_argument("--eta", type=float, default=0.7)
    p.add_argument("--local-pool", type=int, default=150)
    p.add_argument("--global-pool", type=int, default=1000)
    p.add_argument("--sampling", choices=["full", "no_global", "no_local"], default="full")
    p.add_argument("--fps", type=float, default=0.0,
                   help="> 0: ingest frames in wall-clock time at this rate")
    p.add_argument("--holdout", action="store_true")
    p.add_argument("--no-color-init", action="store_true")

    p = sub.add_parser("render", help="render a trained model to PNGs")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True,
                   help="sequence directory providing the rig and camera")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", type=str, default=None,
                   help="frame range like 0:20 rendered with dataset parameters")
    p.add_argument("--theta-json", type=Path, default=None,
                   help="JSON list of parameter vectors to drive the model")
    p.add_argument("--novel-view", type=int, default=0,
                   help="render this many orbit views at neutral parameters")

    p = sub.add_parser("eval", help="PSNR/SSIM metrics table")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="metrics table file")
    p.add_argument("--split", choices=["holdout", "all"], default="holdout")
    p.add_argument("--no-mlp", action="store_true")

    p = sub.add_parser("ablate", help="ablation grids")
    p.add_argument("--experiment", choices=["sampling", "batching", "color-init"],
                   required=True)
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--uv-res", type=int, default=32)
    p.add_argument("--gaussians", type=int, default=5000,
                   help="batching experiment: Gaussians per item")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--batches", type=int, default=100)
    p.add_argument("--batch", type=int, default=10)
    return parser


def build_train_config(args, k=None, uv_res=None, batch=None, extra=None):
    cfg = TrainConfig(seed=args.seed, workers=args.threads)
    if args.config is not None:
        overrides = json.loads(Path(args.config).read_text())
        for key, value in overrides.items():
            if not hasattr(cfg, key):
                raise SystemExit(f"unknown config field {key!r}")
            setattr(cfg, key, value)
    if k is not None:
        cfg.num_blendshapes = k
    if uv_res is not None:
        cfg.uv_resolution = uv_res
    if batch is not None:
        cfg.batch_size = batch
    for key, value in (extra or {}).items():
        setattr(cfg, key, value)
    return cfg


def write_metrics_log(path, log):
    with open(path, "w") as fh:
        for rec in log:
            fh.write(json.dumps(rec) + "\n")


def write_manifest(path, cfg, extra=None):
    manifest = {"config": cfg.__dict__.copy()}
    manifest.update(extra or {})
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str))


def save_image(path, image):
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def cmd_synth(args):
    cfg = SynthConfig(frames=args.frames, image_size=args.size,
                      uv_resolution=args.uv_res, k_true=args.k_true)
    synth_generate(args.out, cfg, seed=args.seed)
    print(f"wrote {args.frames} frames to {args.out}")
    return 0


def cmd_train(args):
    ds = load_sequence(args.data)
    cfg = build_train_config(
        args, k=args.k, uv_res=args.uv_res, batch=args.batch,
        extra={"total_steps": args.steps, "color_init": not args.no_color_init,
               "use_mlp": not args.no_mlp})
    indices = holdout_split(len(ds))[0] if args.holdout else None
    t0 = time.perf_counter()
    model, log, state = train_offline(ds, cfg, frame_indices=indices)
    elapsed = time.perf_counter() - t0
    args.out.mkdir(parents=True, exist_ok=True)
    save_model(model, state, args.out / "model.bin")
    write_metrics_log(args.out / "metrics.jsonl", log)
    write_manifest(args.out / "manifest.json", cfg,
                   {"command": "train", "data": str(args.data),
                    "train_seconds": elapsed, "frames_trained": len(indices or ds.frames())})
    print(f"trained {cfg.total_steps} steps in {elapsed:.1f}s; "
          f"final loss {log[-1]['loss']:.5f}; model at {args.out / 'model.bin'}")
    return 0


def cmd_stream(args):
    ds = load_sequence(args.data)
    cfg = build_train_config(
        args, k=args.k, uv_res=args.uv_res, batch=args.batch,
        extra={"color_init": not args.no_color_init})
    online = OnlineConfig(
        train=cfg, local_capacity=args.local_pool, global_capacity=args.global_pool,
        eta=args.eta, steps_per_frame=args.steps_per_frame, sampling=args.sampling,
        wall_clock_fps=args.fps)
    count = len(holdout_split(len(ds))[0]) if args.holdout else None
    t0 = time.perf_counter()
    model, log, report = run_online(dataset_stream(ds, count=count), ds, online)
    elapsed = time.perf_counter() - t0
    args.out.mkdir(parents=True, exist_ok=True)
    save_model(model, ColorInitState.create(model.count), args.out / "model.bin")
    write_metrics_log(args.out / "metrics.jsonl", log)
    write_metrics_log(args.out / "forgetting.jsonl", report)
    write_manifest(args.out / "manifest.json", cfg,
                   {"command": "stream", "data": str(args.data),
                    "sampling": args.sampling, "steps_per_frame": args.steps_per_frame,
                    "eta": args.eta, "train_seconds": elapsed,
                    "forgetting_gap": forgetting_gap(report)})
    print(f"streamed {len(report)} frames in {elapsed:.1f}s; "
          f"forgetting gap {forgetting_gap(report):.5f}")
    return 0


def cmd_render(args):
    ds = load_sequence(args.data)
    model, _ = load_model(args.model)
    args.out.mkdir(parents=True, exist_ok=True)
    written = 0
    if args.novel_view > 0:
        for v in range(args.novel_view):
            yaw = 2.0 * np.pi * v / args.novel_view
            camera = Camera.frontal(ds.camera.width, yaw=yaw)
            rgba = render_avatar_frame(model, ds.rig, np.zeros(ds.rig.param_dim), camera)
            save_image(args.out / f"orbit_{v:03d}.png", rgba)
            written += 1
    thetas = None
    if args.theta_json is not None:
        thetas = np.asarray(json.loads(Path(args.theta_json).read_text()), dtype=np.float64)
    elif args.frames is not None:
        lo, _, hi = args.frames.partition(":")
        thetas = ds.thetas[int(lo or 0):int(hi or len(ds))]
    if thetas is not None:
        for i, theta in enumerate(thetas):
            rgba = render_avatar_frame(model, ds.rig, theta, ds.camera)
            save_image(args.out / f"frame_{i:06d}.png", rgba)
            written += 1
    if written == 0:
        print("nothing to render: pass --frames, --theta-json or --novel-view",
              file=sys.stderr)
        return 1
    print(f"wrote {written} images to {args.out}")
    return 0


def cmd_eval(args):
    ds = load_sequence(args.data)
    model, _ = load_model(args.model)
    indices = holdout_split(len(ds))[1] if args.split == "holdout" else None
    res = evaluate(model, ds, indices, use_mlp=not args.no_mlp)
    lines = [f"{'frame':>6} {'psnr':>8} {'ssim':>8} {'l1':>9}"]
    for rec in res["frames"]:
        lines.append(f"{rec['frame']:>6} {rec['psnr']:>8.3f} {rec['ssim']:>8.5f} "
                     f"{rec['l1']:>9.6f}")
    lines.append(f"{'mean':>6} {res['mean_psnr']:>8.3f} {res['mean_ssim']:>8.5f} "
                 f"{res['mean_l1']:>9.6f}")
    table = "\n".join(lines)
    print(table)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(table + "\n")
    return 0


def cmd_ablate(args):
    args.out.mkdir(parents=True, exist_ok=True)
    if args.experiment == "batching":
        rows = ablate_batching(args)
    elif args.experiment == "sampling":
        rows = ablate_sampling(args)
    else:
        rows = ablate_color_init(args)
    table = format_table(rows)
    print(table)
    (args.out / f"ablate_{args.experiment}.txt").write_text(table + "\n")
    (args.out / f"ablate_{args.experiment}.json").write_text(json.dumps(rows, indent=1))
    return 0


def format_table(rows):
    keys = list(rows[0].keys())
    head = " ".join(f"{k:>16}" for k in keys)
    body = []
    for row in rows:
        cells = []
        for k in keys:
            v = row[k]
            cells.append(f"{v:>16.4f}" if isinstance(v, float) else f"{str(v):>16}")
        body.append(" ".join(cells))
    return "\n".join([head] + body)


def ablate_batching(args):
    """Throughput of the three render schedules on one batch workload."""
    from .scheduler import SCHEMES, benchmark_schemes, make_benchmark_items
    items = make_benchmark_items(args.gaussians, args.size, args.batch, seed=args.seed)
    results = benchmark_schemes(items, batches=args.batches,
                                workers=max(args.threads, 4), schemes=SCHEMES)
    rows = []
    for scheme in SCHEMES:
        r = results[scheme]
        rows.append({"scheme": scheme, "frames_per_s": r["frames_per_s"],
                     "barriers_per_batch": r["barriers_per_batch"],
                     "speedup_vs_sequential":
                         r["frames_per_s"] / results["sequential"]["frames_per_s"]})
    return rows


def ablate_sampling(args):
    ds = load_sequence(args.data)
    train_idx, test_idx = holdout_split(len(ds))
    rows = []
    for mode in ("full", "no_global", "no_local"):
        cfg = build_train_config(args, k=args.k, uv_res=args.uv_res, batch=args.batch)
        online = OnlineConfig(train=cfg, steps_per_frame=max(1, args.steps // len(train_idx)),
                              sampling=mode, local_capacity=min(150, len(train_idx) // 4 + 1),
                              global_capacity=1000)
        model, _, report = run_online(dataset_stream(ds, count=len(train_idx)), ds, online)
        res = evaluate(model, ds, test_idx)
        rows.append({"mode": mode, "psnr": res["mean_psnr"], "ssim": res["mean_ssim"],
                     "forgetting_gap": forgetting_gap(report)})
    return rows


def ablate_color_init(args):
    ds = load_sequence(args.data)
    train_idx, _ = holdout_split(len(ds))
    rows = []
    for enabled in (True, False):
        cfg = build_train_config(
            args, k=args.k, uv_res=args.uv_res, batch=args.batch,
            extra={"total_steps": args.steps, "color_init": enabled})
        _, log, _ = train_offline(ds, cfg, frame_indices=train_idx)
        steps = steps_to_loss(log, 0.05)
        rows.append({"color_init": str(enabled), "steps_to_l1_0.05": steps,
                     "final_loss": log[-1]["loss"]})
    return rows


def steps_to_loss(log, threshold, window=25):
    losses = np.array([r["loss"] for r in log])
    if losses.size < window:
        return -1
    kernel = np.ones(window) / window
    smooth = np.convolve(losses, kernel, mode="valid")
    below = np.flatnonzero(smooth < threshold)
    return int(below[0] + window - 1) if below.size else -1


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    handlers = {
        "synth": cmd_synth, "train": cmd_train, "stream": cmd_stream,
        "render": cmd_render, "eval": cmd_eval, "ablate": cmd_ablate,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
