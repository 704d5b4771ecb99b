"""Operator-facing pipeline driver.

Subcommands: ``synth`` (procedural scene directories), ``select`` (view-group
curation manifests), ``plucker`` (ray-map / token tensor dumps),
``gradcheck`` (finite-difference gradient audit), ``train-demo`` (toy
trainer) and ``eval-pose`` (threshold accuracy reports).

All commands share one optional JSON config (sections ``selection``,
``patch``, ``adapter``, ``loss`` plus top-level ``seed`` and ``threads``);
explicit flags win over the config.  Exit codes: 0 success, 1 check
failure, 2 input/config error.  Human-readable summaries go to stdout;
machine artifacts only to files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dataio
from .demo import TrainDemoConfig, train_adapter_demo
from .errors import CamcueError, ConfigError, DivergedLoss
from .fusion import AdapterConfig, LossConfig, grad_check
from .geometry import CameraIntrinsics, CameraPose, RawPose
from .metrics import accuracy_report, pose_errors
from .plucker import PatchConfig, init_embed_params, patchify_embed, ray_map, resize_ray_map
from .selection import SelectionConfig, select_groups
from .synthetic import make_scene, render_depth, sample_trajectory

THREADS_ENV = "CAMCUE_THREADS"

_SECTIONS = {
    "selection": SelectionConfig,
    "patch": PatchConfig,
    "adapter": AdapterConfig,
    "loss": LossConfig,
}


@dataclass(frozen=True)
class RunConfig:
    selection: SelectionConfig
    patch: PatchConfig
    adapter: AdapterConfig
    loss: LossConfig
    seed: int = 0
    threads: int | None = None


def _build_section(cls, data: dict, where: str):
    allowed = {f.name for f in dataclass_fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where} config: {exc}") from exc


def load_run_config(path: str | None, overrides: Sequence[str] = ()) -> RunConfig:
    """Parse the JSON config, apply ``section.key=value`` overrides, validate."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")

    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        section, dot, field = key.partition(".")
        if dot:
            data.setdefault(section, {})
            if not isinstance(data[section], dict):
                raise ConfigError(f"config section {section!r} must be an object")
            data[section][field] = value
        else:
            data[key] = value

    unknown = set(data) - set(_SECTIONS) - {"seed", "threads"}
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        body = data.get(name, {})
        if not isinstance(body, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        sections[name] = _build_section(cls, body, name)
    seed = data.get("seed", 0)
    threads = data.get("threads")
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    if threads is not None and (not isinstance(threads, int) or threads < 1):
        raise ConfigError("threads must be a positive integer")
    return RunConfig(seed=seed, threads=threads, **sections)


def _resolve_threads(args, cfg: RunConfig) -> int:
    if getattr(args, "threads", None):
        return args.threads
    if cfg.threads:
        return cfg.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
        if value < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
        return value
    return os.cpu_count() or 1


def _resolve_seed(args, cfg: RunConfig) -> int:
    return args.seed if args.seed is not None else cfg.seed


def _load_config(args) -> RunConfig:
    return load_run_config(args.config, getattr(args, "set", None) or ())


# --- commands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(args, cfg)
    threads = _resolve_threads(args, cfg)
    scene = make_scene(seed, args.obstacles)
    trajectory = sample_trajectory(scene, args.frames, seed, args.pattern)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / dataio.POSE_DIR).mkdir(exist_ok=True)
    (out / dataio.DEPTH_DIR).mkdir(exist_ok=True)

    focal = args.focal if args.focal is not None else float(args.width)
    intrinsics = CameraIntrinsics(
        fx=focal, fy=focal, cx=args.width / 2.0, cy=args.height / 2.0,
        width=args.width, height=args.height,
    )
    (out / dataio.SCENE_FILE).write_text(
        json.dumps(scene.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )
    dataio.write_intrinsics(out / dataio.INTRINSICS_FILE, intrinsics)

    def render(item):
        fid, pose = item
        return fid, pose, render_depth(scene, pose, intrinsics, args.width, args.height)

    if threads > 1 and len(trajectory) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rendered = list(pool.map(render, trajectory))
    else:
        rendered = [render(item) for item in trajectory]
    for fid, pose, depth in rendered:
        dataio.write_pose_file(out / dataio.POSE_DIR / f"{fid}.txt", pose)
        dataio.write_depth(out / dataio.DEPTH_DIR / f"{fid}.ccd", depth)

    print(f"scene seed={seed} obstacles={len(scene.obstacles)} "
          f"frames={len(trajectory)} -> {out}")
    return 0


def cmd_select(args) -> int:
    cfg = _load_config(args)
    threads = _resolve_threads(args, cfg)
    frames = dataio.load_scene_dir(args.scene_dir)
    outcome = select_groups(
        frames, cfg.selection, scene=Path(args.scene_dir).name, threads=threads
    )
    dataio.write_manifest(args.out, outcome.groups)
    print(f"frames={len(frames)} accepted={outcome.accepted} "
          f"rejected={outcome.rejected}")
    for reason in sorted(outcome.rejections):
        print(f"  rejected[{reason}] = {outcome.rejections[reason]}")
    if outcome.groups:
        worst = min(g.coverage for g in outcome.groups)
        print(f"coverage: min={worst:.4f} gate={cfg.selection.gamma}")
    print(f"manifest -> {args.out}")
    return 0


def cmd_plucker(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(args, cfg)
    frames = dataio.load_scene_dir(args.scene_dir)
    by_id = {f.id: f for f in frames}
    if args.frame not in by_id:
        raise ConfigError(f"frame {args.frame} not found in {args.scene_dir} "
                          f"(ids: {sorted(by_id)[:8]}...)")
    frame = by_id[args.frame]
    native = ray_map(frame.pose, frame.intrinsics,
                     frame.intrinsics.width, frame.intrinsics.height)
    canonical = resize_ray_map(native, cfg.patch)
    tokens = patchify_embed(canonical, cfg.patch, init_embed_params(cfg.patch, seed))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_tensor(out / "raymap.cct", canonical.values)
    dataio.write_tensor(out / "tokens.cct", tokens.tokens)
    print(f"raymap {canonical.values.shape} + tokens {tokens.tokens.shape} -> {out}")
    return 0


def cmd_gradcheck(args) -> int:
    n_vis, model_dim, query_out = _parse_dims(args.dims)
    report = grad_check(args.seed if args.seed is not None else 0,
                        n_vis=n_vis, model_dim=model_dim, query_out_dim=query_out)
    for name in sorted(report.per_field):
        print(f"  {name:10s} max rel err {report.per_field[name]:.3e}")
    status = "PASS" if report.passed else "FAIL"
    print(f"gradcheck seed={report.seed} entries={report.n_entries} "
          f"max={report.max_rel_error:.3e} threshold={report.threshold:g} {status}")
    return 0 if report.passed else 1


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) not in (2, 3):
        raise ConfigError("--dims must be 'n_vis,model_dim[,query_out_dim]'")
    try:
        values = [int(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"--dims must be integers: {exc}") from exc
    if len(values) == 2:
        values.append(8)
    return values[0], values[1], values[2]


def cmd_train_demo(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(args, cfg)
    demo_cfg = TrainDemoConfig(
        model_dim=cfg.adapter.model_dim,
        heads=cfg.adapter.heads,
        n_queries=cfg.adapter.n_queries,
        query_out_dim=cfg.adapter.query_out_dim,
        lambda_lang=cfg.loss.lambda_lang,
        lambda_pose=cfg.loss.lambda_pose,
    )
    try:
        report = train_adapter_demo(seed=seed, steps=args.steps, lr=args.lr,
                                    cfg=demo_cfg)
    except DivergedLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.out:
        Path(args.out).write_text("\n".join(report.to_json_lines()) + "\n")
    first = report.heldout[0]
    last = report.heldout[-1]
    print(f"steps={report.steps} lr={report.lr} "
          f"loss {report.initial_loss:.6f} -> {report.final_loss:.6f}")
    print(f"heldout median rot deg {first.median_rot_deg:.3f} -> "
          f"{last.median_rot_deg:.3f}, trans {first.median_trans:.3f} -> "
          f"{last.median_trans:.3f}")
    if args.out:
        print(f"report -> {args.out}")
    return 0


def _load_pose_stack(path: str) -> list[np.ndarray]:
    suffix = Path(path).suffix
    if suffix == ".jsonl":
        return [g.target_pose.m for g in dataio.read_manifest(path)]
    if suffix == ".cct":
        arr = dataio.read_tensor(path)
        if arr.ndim != 3 or arr.shape[1:] != (4, 4):
            raise ConfigError(f"{path}: pose tensor must be (n, 4, 4), got {arr.shape}")
        return list(arr)
    raise ConfigError(f"{path}: pose stacks must be .jsonl manifests or .cct tensors")


def cmd_eval_pose(args) -> int:
    preds = _load_pose_stack(args.pred)
    gts = _load_pose_stack(args.gt)
    if len(preds) != len(gts):
        raise ConfigError(
            f"sample counts differ: {len(preds)} predictions vs {len(gts)} ground truths"
        )
    try:
        samples = [pose_errors(RawPose(m=p), CameraPose(m=g))
                   for p, g in zip(preds, gts)]
    except ValueError as exc:
        raise ConfigError(f"ground-truth poses must be rigid: {exc}") from exc
    report = accuracy_report(samples)
    payload = report.to_json_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"n={payload['n']} unit={payload['unit']}")
    rot = "  ".join(f"R@{k}deg={v:.1f}%" for k, v in payload["rot"].items())
    trans = "  ".join(f"t@{k}={v:.1f}%" for k, v in payload["trans"].items())
    print(rot)
    print(trans)
    if args.out:
        print(f"report -> {args.out}")
    return 0


# --- parser ---------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, seed: bool = True):
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable; flags win)")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: {THREADS_ENV} or machine parallelism)")
    if seed:
        p.add_argument("--seed", type=int, default=None,
                       help="random seed (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camcue",
        description="Multi-view dataset curation and pose-grounding toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a procedural scene directory")
    _add_common(p)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--obstacles", type=int, default=3)
    p.add_argument("--pattern", choices=("orbit", "random-walk"), default="orbit")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--focal", type=float, default=None,
                   help="focal length in pixels (default: image width)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select", help="curate view groups from a scene directory")
    _add_common(p, seed=False)
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--out", required=True, help="output manifest (JSONL)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("plucker", help="dump a frame's ray map and camera tokens")
    _add_common(p)
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory for .cct dumps")
    p.set_defaults(func=cmd_plucker)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the gradients")
    _add_common(p)
    p.add_argument("--dims", default="6,12,8",
                   help="n_vis,model_dim[,query_out_dim] (small shapes)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-demo", help="run the toy pose-regression trainer")
    _add_common(p)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--out", default=None, help="training report (JSON lines)")
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("eval-pose", help="thresholded pose-accuracy report")
    _add_common(p, seed=False)
    p.add_argument("--pred", required=True, help=".jsonl manifest or .cct pose tensor")
    p.add_argument("--gt", required=True, help=".jsonl manifest or .cct pose tensor")
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=cmd_eval_pose)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CamcueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
