"""Command-line entry point: episodes, ensembles, scene generation, replay,
and the supervisor bridge.

Exit codes: 0 ran to completion, 2 configuration error, 3 episode failure,
4 solver stall.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from .config import (
    apply_overrides,
    default_config,
    load_config,
    save_config,
    validate_config,
)
from .errors import ConfigError, DissectError, SolverStalledError
from .pipeline import load_episode_overlays, run_feedback_loop
from .report import render_ensemble, render_episode
from .scene import build_scene

LOG_ROOT_ENV = "DISSECTBENCH_LOG_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EPISODE = 3
EXIT_STALL = 4


def _log_root(args):
    if getattr(args, "out", None):
        return args.out
    return os.environ.get(LOG_ROOT_ENV, "runs")


def _load(args):
    cfg = load_config(args.config) if args.config else default_config()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return validate_config(cfg)


def _print_metrics(metrics, fh=None):
    fh = fh if fh is not None else sys.stdout
    row = metrics.as_row()
    fh.write("\t".join(row) + "\n")
    fh.write("\t".join(row.values()) + "\n")


def cmd_run(args):
    cfg = _load(args)
    scene = build_scene(cfg)
    log = run_feedback_loop(scene, cfg)
    out = os.path.join(_log_root(args), args.name)
    log.save(out)
    if not args.no_figures:
        render_episode(log, out, camera_size=(cfg["scene"]["camera"]["width"],
                                              cfg["scene"]["camera"]["height"]))
    _print_metrics(log.metrics)
    print(f"episode log: {out}", file=sys.stderr)
    return EXIT_OK


def cmd_baseline(args):
    args.set = (args.set or []) + ["loop.feedback=false", "control.mode=normal"]
    return cmd_run(args)


def _ensemble_worker(task):
    cfg, seed, feedback = task
    cfg = copy.deepcopy(cfg)
    cfg["seed"] = seed
    cfg["loop"]["feedback"] = feedback
    scene = build_scene(cfg)
    log = run_feedback_loop(scene, cfg, feedback=feedback, seed=seed)
    return {
        "seed": seed,
        "condition": "feedback" if feedback else "baseline",
        "success": log.metrics.success,
        "metrics": log.metrics,
        "per_attempt_attachments": [a.metrics.remaining_attachments
                                    for a in log.attempts],
    }


def run_ensemble(cfg, n_seeds, paired=False, workers=1, seed0=None):
    """Seeded episode batch; with ``paired`` every seed runs both feedback
    and baseline conditions. Returns result rows in deterministic order."""
    base = seed0 if seed0 is not None else cfg["seed"]
    tasks = []
    for k in range(n_seeds):
        tasks.append((cfg, base + k, True))
        if paired:
            tasks.append((cfg, base + k, False))
    if workers > 1:
        import multiprocessing
        with multiprocessing.Pool(workers) as pool:
            return pool.map(_ensemble_worker, tasks)
    return [_ensemble_worker(t) for t in tasks]


def _metric_columns(rows):
    return list(rows[0]["metrics"].as_row())


def write_ensemble_table(rows, path):
    cols = _metric_columns(rows)
    with open(path, "w") as fh:
        fh.write("seed\tcondition\t" + "\t".join(cols) + "\n")
        for r in rows:
            m = r["metrics"].as_row()
            fh.write(f"{r['seed']}\t{r['condition']}\t"
                     + "\t".join(m[c] for c in cols) + "\n")
        for cond in sorted({r["condition"] for r in rows}):
            sel = [r["metrics"].as_row() for r in rows
                   if r["condition"] == cond]
            for stat, fn in (("mean", np.mean), ("std", np.std)):
                vals = []
                for c in cols:
                    xs = [float(m[c]) for m in sel if m[c] != ""]
                    vals.append(f"{fn(xs):.4f}" if xs else "")
                fh.write(f"{stat}\t{cond}\t" + "\t".join(vals) + "\n")


def cmd_ensemble(args):
    cfg = _load(args)
    rows = run_ensemble(cfg, args.seeds, paired=args.paired,
                        workers=args.workers)
    out = os.path.join(_log_root(args), args.name)
    os.makedirs(out, exist_ok=True)
    write_ensemble_table(rows, os.path.join(out, "ensemble.tsv"))
    if not args.no_figures:
        render_ensemble(rows, out)
    with open(os.path.join(out, "ensemble.tsv")) as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


def cmd_gen_scene(args):
    cfg = _load(args)
    save_config(cfg, args.output)
    if args.obj:
        from .geometry import save_obj
        scene = build_scene(cfg)
        save_obj(args.obj, scene.world.mesh)
    return EXIT_OK


def cmd_replay(args):
    if not os.path.isdir(args.log):
        print(f"no episode log at {args.log}", file=sys.stderr)
        return EXIT_EPISODE
    items = load_episode_overlays(args.log)
    if not items:
        print(f"no attempts found under {args.log}", file=sys.stderr)
        return EXIT_EPISODE
    sink = open(args.output, "w") if args.output else sys.stdout
    try:
        for item in items:
            msg = {"attempt": item["index"], "overlays": item["overlays"]}
            if "positions" in item:
                msg["n_frames"] = int(len(item["positions"]))
            sink.write(json.dumps(msg, sort_keys=True) + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    return EXIT_OK


def cmd_serve(args):
    import uvicorn

    from .server import create_app
    cfg = _load(args)
    app = create_app(cfg, log_root=_log_root(args))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="dissectbench",
        description="Desk-scale closed-loop tissue dissection bench")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, name_default):
        sp.add_argument("--config", "-c", help="YAML scene config")
        sp.add_argument("--set", "-s", action="append", metavar="KEY=VAL",
                        help="dotted-path config override (repeatable)")
        sp.add_argument("--out", "-o", help=f"log root (default ${LOG_ROOT_ENV} "
                                            "or ./runs)")
        sp.add_argument("--name", default=name_default,
                        help="episode directory name")
        sp.add_argument("--no-figures", action="store_true")

    sp = sub.add_parser("run", help="run one closed-loop episode")
    common(sp, "episode")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("baseline",
                        help="open-loop episode (naive-normal, no feedback)")
    common(sp, "baseline")
    sp.set_defaults(fn=cmd_baseline)

    sp = sub.add_parser("ensemble", help="seeded episode batch")
    common(sp, "ensemble")
    sp.add_argument("--seeds", type=int, default=10)
    sp.add_argument("--paired", action="store_true",
                    help="run feedback and baseline on the same seeds")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(fn=cmd_ensemble)

    sp = sub.add_parser("gen-scene", help="write a validated scene config")
    sp.add_argument("--config", "-c")
    sp.add_argument("--set", "-s", action="append", metavar="KEY=VAL")
    sp.add_argument("--output", "-o", required=True)
    sp.add_argument("--obj", help="also export the scene mesh as OBJ")
    sp.set_defaults(fn=cmd_gen_scene)

    sp = sub.add_parser("replay", help="re-emit frames from an episode log")
    sp.add_argument("--log", "-l", required=True)
    sp.add_argument("--output", "-o")
    sp.set_defaults(fn=cmd_replay)

    sp = sub.add_parser("serve", help="start the supervisor UI bridge")
    sp.add_argument("--config", "-c")
    sp.add_argument("--set", "-s", action="append", metavar="KEY=VAL")
    sp.add_argument("--out", "-o")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8765)
    sp.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverStalledError as exc:
        print(f"solver stalled: {exc}", file=sys.stderr)
        return EXIT_STALL
    except DissectError as exc:
        print(f"episode failed: {exc}", file=sys.stderr)
        return EXIT_EPISODE


if __name__ == "__main__":
    sys.exit(main())
