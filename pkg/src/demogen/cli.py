"""Command line entry points: capture, generate, validate, evaluate, augment.

Every subcommand takes ``--config FILE`` (JSON whose keys are the long flag
names with dashes as underscores); explicit flags override the file.
Exit codes: 0 ok, 1 user error or failed validation, 2 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import demo_store
from .errors import DemoGenError

log = logging.getLogger("demogen")

DEFAULTS = {
    "capture": {"task": None, "out": None, "replays": 0, "seed": 0, "n_points": None, "objects": None},
    "generate": {"sources": None, "spec": None, "out": None, "task": None, "workers": None, "seed": None},
    "validate": {"dataset": None, "task": None},
    "evaluate": {"dataset": None, "task": None, "grid": None, "out": None, "trials": 5, "seed": 0,
                 "workers": 1, "ppm": None},
    "augment": {"dataset": None, "adr": None, "obstacle": None, "out": None, "task": None, "seed": 0},
}
REQUIRED = {
    "capture": ("task", "out"),
    "generate": ("sources", "spec", "out"),
    "validate": ("dataset",),
    "evaluate": ("dataset", "task", "out"),
    "augment": ("dataset", "out"),
}


class UserError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="demogen", description="Synthesize robot demonstrations from a few sources.")
    p.add_argument("--json", action="store_true", help="print a JSON summary on stdout")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", dest="run_config", help="JSON file of defaults for this command")
        sp.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
        return sp

    c = add("capture", "record scripted source demonstrations")
    c.add_argument("--task")
    c.add_argument("--out")
    c.add_argument("--replays", type=int, help="extra captures with fresh noise seeds")
    c.add_argument("--seed", type=int)
    c.add_argument("--n-points", dest="n_points", type=int)
    c.add_argument("--objects", help="object coordinates as JSON: [[x, y(, yaw_deg)], ...]")

    g = add("generate", "parse, adapt and synthesize a dataset")
    g.add_argument("--sources")
    g.add_argument("--spec", help="generation spec: JSON file or inline JSON")
    g.add_argument("--out")
    g.add_argument("--task")
    g.add_argument("--workers", type=int)
    g.add_argument("--seed", type=int)

    v = add("validate", "replay every demonstration in the simulator")
    v.add_argument("dataset", nargs="?")
    v.add_argument("--task")

    e = add("evaluate", "grid evaluation with nearest-demo replay")
    e.add_argument("--dataset")
    e.add_argument("--task")
    e.add_argument("--grid", help="JSON file or inline JSON: a list of cells, or {\"samples\": n} / {\"spacing\": s}")
    e.add_argument("--out")
    e.add_argument("--trials", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--ppm")

    a = add("augment", "disturbance or obstacle augmentation of a dataset")
    a.add_argument("--dataset")
    a.add_argument("--adr", help="JSON file or inline JSON: {object, times, displacements, pause}")
    a.add_argument("--obstacle", help="JSON file or inline JSON: {primitives, clearance, points, seed}")
    a.add_argument("--out")
    a.add_argument("--task")
    a.add_argument("--seed", type=int)
    return p


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults < ``--config`` file < explicit flags; unknown file keys are errors."""
    cfg = dict(DEFAULTS[command])
    if getattr(args, "run_config", None):
        try:
            data = json.loads(Path(args.run_config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise UserError(f"cannot read run config {args.run_config}: {e}") from e
        unknown = set(data) - set(cfg)
        if unknown:
            raise UserError(f"unknown keys in run config: {sorted(unknown)}")
        cfg.update(data)
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise UserError(f"{command}: missing {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return cfg


def config_hash(command: str, cfg: dict) -> str:
    blob = json.dumps({"command": command, **cfg}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _task(name):
    from .sim.tasks import load_task
    try:
        return load_task(name)
    except (KeyError, FileNotFoundError, ValueError) as e:
        raise UserError(f"unknown task {name!r}: {e}") from e


def _load_json(path, what):
    """Parse ``path`` as inline JSON when it starts with a bracket, else read it as a file."""
    try:
        if str(path).lstrip()[:1] in ("[", "{"):
            return json.loads(path)
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise UserError(f"cannot read {what} {path}: {e}") from e


def _check_block(block, adr: bool):
    """Reject malformed augmentation blocks before touching any container."""
    from .pipeline import _displacement
    from .shapes import Primitive
    try:
        if adr:
            if len(block["times"]) != len(block["displacements"]):
                raise ValueError("times and displacements differ in length")
            for d in block["displacements"]:
                _displacement(d)
        else:
            for p in block.get("primitives", []):
                Primitive.from_json(p)
    except (KeyError, TypeError, ValueError) as e:
        kind = "adr" if adr else "obstacle"
        raise UserError(f"bad {kind} block: {type(e).__name__}: {e}") from e


def _containers(root):
    root = Path(root)
    if not root.is_dir():
        raise UserError(f"{root} is not a directory")
    paths = demo_store.list_containers(root)
    if not paths:
        raise UserError(f"{root} holds no demonstrations")
    return paths


def _task_of(cfg, demo):
    return _task(cfg.get("task") or demo.task)


# -- commands ---------------------------------------------------------------------------


def cmd_capture(cfg, digest):
    from .sim.scripts import scripted_demo
    task = _task(cfg["task"])
    config = None
    if cfg["objects"] is not None:
        raw = cfg["objects"]
        try:
            rows = json.loads(raw) if isinstance(raw, str) else raw
        except json.JSONDecodeError as e:
            raise UserError(f"--objects is not JSON: {e}") from e
        if rows and not isinstance(rows[0], list):
            rows = [rows]
        if len(rows) != task.K or any(len(r) not in (2, 3) for r in rows):
            raise UserError(f"--objects needs {task.K} rows of [x, y] or [x, y, yaw_deg]")
        config = task.config([r[:2] for r in rows], [r[2] if len(r) > 2 else 0.0 for r in rows])
    if cfg["replays"] < 0:
        raise UserError("--replays must be >= 0")
    out = Path(cfg["out"])
    names = []
    for r in range(cfg["replays"] + 1):
        seed = cfg["seed"] + r
        demo = scripted_demo(task, config, noise_seed=seed, n_points=cfg["n_points"])
        name = f"source_{r:02d}"
        demo_store.write(demo, out / name)
        names.append(name)
        log.info("captured %s (%d frames, seed %d)", name, demo.L, seed)
    demo_store.write_manifest(out, names, task=task.name, config_sha256=digest, run_config=cfg)
    return 0, {"containers": len(names), "out": str(out)}


def cmd_generate(cfg, digest):
    from .augment import GenerationSpec
    from .pipeline import generate_dataset
    try:
        spec = GenerationSpec.from_json(_load_json(cfg["spec"], "generation spec"))
    except (KeyError, TypeError, ValueError) as e:
        raise UserError(f"bad generation spec {cfg['spec']}: {e}") from e
    if cfg["seed"] is not None:
        spec.seed = cfg["seed"]
    paths = _containers(cfg["sources"])
    first = demo_store.read(paths[0])
    task = _task(cfg.get("task") or spec.task or first.task)
    workers = cfg["workers"] or os.cpu_count() or 1
    sources = paths[:spec.num_sources]
    rep = generate_dataset([str(p) for p in sources], spec, out=cfg["out"], task=task, workers=workers,
                           config_sha256=digest, run_config=cfg, task_name=task.name)
    summary = {"out": cfg["out"], **rep.summary()}
    for r in rep.rejected:
        log.warning("rejected target %s: %s", r["target"], r["reason"])
    return (0 if rep.ok else 1), summary


def cmd_validate(cfg, digest):
    from .sim.world import execute_plan
    paths = _containers(cfg["dataset"])
    ok, bad, failed = 0, [], []
    task = None
    for p in paths:
        try:
            demo = demo_store.read(p)
        except DemoGenError as e:
            bad.append({"container": p.name, "error": str(e)})
            continue
        task = task or _task_of(cfg, demo)
        if execute_plan(task, demo.init_config, demo).success:
            ok += 1
        else:
            failed.append(p.name)
    total = len(paths)
    summary = {"containers": total, "succeeded": ok, "success_fraction": ok / total, "failed": failed,
               "corrupt": bad}
    for b in bad:
        log.error("corrupt container %s: %s", b["container"], b["error"])
    return (0 if ok == total else 1), summary


def cmd_evaluate(cfg, digest):
    from .evaluation import NNReplayPolicy, eval_grid, grid_eval, heatmap_export, heatmap_ppm
    task = _task(cfg["task"])
    demos = [demo_store.read(p) for p in _containers(cfg["dataset"])]
    grid = {"samples": 11} if cfg["grid"] is None else _load_json(cfg["grid"], "grid")
    if isinstance(grid, dict):
        grid = eval_grid(task, grid.get("samples", 11), grid.get("spacing"))
    seeds = [cfg["seed"] + i for i in range(cfg["trials"])]
    h = grid_eval(NNReplayPolicy(demos), task, grid, seeds=seeds, workers=cfg["workers"])
    heatmap_export(h, cfg["out"])
    if cfg["ppm"]:
        heatmap_ppm(h, cfg["ppm"])
    return 0, {"cells": len(h), "mean_success": h.mean, "out": cfg["out"], "config_sha256": digest}


def cmd_augment(cfg, digest):
    from .pipeline import apply_adr, apply_obstacles
    if (cfg["adr"] is None) == (cfg["obstacle"] is None):
        raise UserError("augment needs exactly one of --adr or --obstacle")
    block = _load_json(cfg["adr"] or cfg["obstacle"], "augmentation spec")
    _check_block(block, bool(cfg["adr"]))
    out = Path(cfg["out"])
    names, rejected = [], []
    for p in _containers(cfg["dataset"]):
        demo = demo_store.read(p)
        try:
            if cfg["adr"]:
                new = apply_adr(demo, block)
            else:
                new = apply_obstacles(demo, {"seed": cfg["seed"], **block})
        except DemoGenError as e:
            rejected.append({"container": p.name, "reason": f"{type(e).__name__}: {e}"})
            continue
        demo_store.write(new, out / p.name)
        names.append(p.name)
    demo_store.write_manifest(out, names, rejected=rejected, config_sha256=digest, run_config=cfg)
    return (0 if not rejected else 1), {"augmented": len(names), "rejected": len(rejected), "out": str(out)}


COMMANDS = {"capture": cmd_capture, "generate": cmd_generate, "validate": cmd_validate,
            "evaluate": cmd_evaluate, "augment": cmd_augment}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DEMOGEN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = _parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = resolve(args.command, args)
        digest = config_hash(args.command, cfg)
        log.info("%s config sha256 %s", args.command, digest)
        code, summary = COMMANDS[args.command](cfg, digest)
    except (UserError, DemoGenError) as e:
        print(f"demogen {args.command}: {e}", file=sys.stderr)
        code, summary = 1, {"error": str(e)}
        digest = None
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"demogen {args.command}: internal error: {e}", file=sys.stderr)
        code, summary = 2, {"error": repr(e)}
        digest = None
    if getattr(args, "json", False):
        out = {"command": args.command, "exit_code": code, "config_sha256": digest,
               "seconds": time.perf_counter() - t0, **summary}
        print(json.dumps(out, default=str))
    return code


if __name__ == "__main__":
    sys.exit(main())
