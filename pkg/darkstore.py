"""
Command-line entry point for the dark-store scene pipeline.

    python darkstore.py gen --seed 7 --out scene.json
    python darkstore.py arrange --scene scene.json --out scene.json
    python darkstore.py plan --scene scene.json --task pick_to_basket --product fanta --out traj.jsonl
    python darkstore.py batch --n 248 --out runs/

Exit status: 0 on success, 1 when a layout, plan or task fails validation,
2 on usage or configuration errors.
"""

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from logging.handlers import RotatingFileHandler

import numpy as np
import psutil

import assets
import seeding
import store_config
from arrangement import arrange_store, deplete, item_counts
from kinematics import make_config
from layout import generate_layout, layout_field, validate_layout
from lod import nearest_fixtures, optimize_asset, scene_triangle_budget
from mesh_io import SYNTHETIC_ASSETS, ObjFormatError, read_obj, synthetic_mesh, write_obj
from planner import (
    PlanningFailure, config_in_collision, load_anchor_template, plan_anchors, resolve_anchors, store_obstacles,
    trajectory_records, trajectory_valid,
)
from render import RenderOptions, render_layers, render_png, render_svg
from scene_io import (
    AssetEntry, SceneFile, SceneFormatError, action_records, canonical_json, check_manifest, export_actions,
    load_scene, manifest_from_dict, manifest_to_dict, read_json, save_scene, state_from_dict, write_json,
    write_trajectory_log,
)
from fsutil import PathTraversalError, atomic_write_bytes, atomic_write_text, resolve_asset_path
from store_config import ConfigValidationError
from task_eval import (
    DOOR_KINDS, Criterion, Failure, SceneState, SuccessReport, TaskKind, TaskSpec, TrialSetupError, basket_region,
    eligible_products, eval_task, instruction_for, replay_trajectory, scenario, setup_trial, trial_record, trial_seeds,
)

logger = logging.getLogger("darkstore")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Exception raised when command arguments or input files cannot be used as given."""
    pass


# ===== LOGGING SETUP =====

def setup_logging(level="INFO", log_file=""):
    """Console logging plus an optional rotating log file."""
    root = logging.getLogger("darkstore")
    root.setLevel(logging.DEBUG)
    root.handlers.clear()

    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, level, logging.INFO))
    console_handler.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
    root.addHandler(console_handler)

    if log_file:
        file_handler = RotatingFileHandler(log_file, maxBytes=1024 * 1024, backupCount=3, encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] %(message)s",
                                                    datefmt="%Y-%m-%d %H:%M:%S"))
        root.addHandler(file_handler)
    return root


# ===== SHARED STEPS =====

def _templates(config):
    templates = assets.load_templates()
    wanted = config["store"]["templates"]
    if wanted:
        unknown = sorted(set(wanted) - set(templates))
        if unknown:
            raise ConfigValidationError("store.templates", f"unknown template ids {unknown}")
        templates = {k: v for k, v in templates.items() if k in wanted}
    return [templates[k] for k in sorted(templates)]


def _robot(config):
    return assets.default_robot(config["planner"]["robot"] or None)


def build_layout(config, seed):
    return generate_layout(store_config.store_spec(config), _templates(config),
                           store_config.layout_params(config, seed), seed)


def build_arrangement(config, layout, seed, catalog=None):
    catalog = catalog or assets.load_catalog()
    params = store_config.arrange_params(config, seed)
    arr = arrange_store(layout, list(catalog), config["arrangement"]["policy"], params, seed)
    days = config["arrangement"]["depletion_days"]
    if days > 0:
        arr = deplete(arr, days, params.depletion_rate, seeding.generator(seed, "arrange/depletion"))
    return arr


def _write_text(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        atomic_write_text(path, text)


def _start_config(model, trial, rng, scene, tries=20):
    """Stowed robot near the task's approach pose, clear of the scene."""
    x, y, yaw = trial.approach
    for _ in range(tries):
        dx, dy = rng.uniform(-0.5, 0.5, 2)
        q = make_config((x + dx, y + dy, yaw + rng.uniform(-math.pi / 4, math.pi / 4)), model=model)
        if not config_in_collision(model, q, scene):
            return q
    return make_config((x, y, yaw), model=model)


def _basket_for(trial):
    return basket_region(trial.approach) if trial.spec.kind == TaskKind.PICK_TO_BASKET else None


def run_plan(config, model, trial, planner_seed, robot_seed):
    """Plan one trial; returns (trajectory or PlanningFailure, scene obstacles, q_start)."""
    params = store_config.planner_params(config)
    scene = store_obstacles(trial.arrangement.layout, trial.arrangement, trial.spec.target_items, params.margin)
    q_start = _start_config(model, trial, np.random.default_rng(robot_seed), scene)
    anchors = resolve_anchors(load_anchor_template(trial.spec.kind.value), trial.frames, model)
    result = plan_anchors(model, q_start, anchors, scene, params, np.random.default_rng(planner_seed))
    return result, scene, q_start


# ===== SUBCOMMANDS =====

def cmd_gen(args, config):
    layout = build_layout(config, args.seed)
    report = validate_layout(layout, store_config.layout_params(config, args.seed))
    save_scene(SceneFile(args.seed, layout), args.out or "scene.json")
    if not report.ok:
        for v in report.violations:
            logger.error(f"{v.kind}: {v.message}")
        return EXIT_INVALID
    return EXIT_OK


def cmd_arrange(args, config):
    scene = load_scene(args.scene)
    seed = scene.root_seed if args.seed is None else args.seed
    scene.arrangement = build_arrangement(config, scene.layout, seed)
    logger.info(f"Items per product: {item_counts(scene.arrangement)}")
    save_scene(scene, args.out or args.scene)
    return EXIT_OK


def cmd_deplete(args, config):
    scene = load_scene(args.scene)
    if scene.arrangement is None:
        logger.error(f"{args.scene} has no arrangement; run 'arrange' first")
        return EXIT_USAGE
    rate = config["arrangement"]["depletion_rate"] if args.rate is None else args.rate
    if args.days < 0 or rate < 0:
        raise UsageError(f"days and rate must be non-negative, got {args.days} and {rate}")
    seed = scene.root_seed if args.seed is None else args.seed
    before = len(scene.arrangement.items)
    scene.arrangement = deplete(scene.arrangement, args.days, rate, seeding.generator(seed, "arrange/depletion"))
    logger.info(f"Depletion over {args.days} days at rate {rate}: {before} -> {len(scene.arrangement.items)} items")
    save_scene(scene, args.out or args.scene)
    return EXIT_OK


def _manifest_inputs(path):
    """(id, category, mesh) per manifest entry; every path must stay under the manifest's directory."""
    entries = manifest_from_dict(read_json(path))
    base_dir = os.path.dirname(os.path.abspath(path))
    problems = check_manifest(entries, base_dir)
    if problems:
        for p in problems:
            logger.error(f"Manifest: {p}")
        raise UsageError(f"{path}: {len(problems)} manifest problem(s)")
    return [(e.id, e.category, read_obj(resolve_asset_path(base_dir, e.mesh)).scaled(e.scale)) for e in entries]


def _lod_inputs(args):
    if args.manifest:
        return _manifest_inputs(args.manifest)
    if args.mesh:
        return [(os.path.splitext(os.path.basename(p))[0], "mesh", read_obj(p)) for p in args.mesh]
    return [(name, "synthetic", synthetic_mesh(name)) for name in sorted(SYNTHETIC_ASSETS)]


def cmd_lod(args, config):
    out_dir = args.out or "assets_out"
    params = store_config.lod_params(config, args.seed or 0)
    records, entries, selected = [], [], {}
    for name, category, mesh in _lod_inputs(args):
        best, record = optimize_asset(name, mesh, params)
        write_obj(mesh, resolve_asset_path(out_dir, f"{name}.obj"))
        write_obj(best.mesh, resolve_asset_path(out_dir, f"{name}_lod.obj"))
        lo, hi = mesh.bounds()
        entries.append(AssetEntry(name, category, 1.0, "z up, front +y", f"{name}.obj", f"{name}_lod.obj",
                                  tuple(float(v) for v in hi - lo)))
        records.append(record)
        selected[name] = (mesh.tri_count, best.tri_count)
    write_json(os.path.join(out_dir, "manifest.json"), manifest_to_dict(entries))
    report = {"assets": records}

    if args.scene:
        scene = load_scene(args.scene)
        if scene.arrangement is None:
            logger.error(f"{args.scene} has no arrangement; run 'arrange' first")
            return EXIT_USAGE
        arr = scene.arrangement
        counts = {}
        for pid, product in arr.products.items():
            if product.mesh not in selected:
                best, _ = optimize_asset(product.mesh, synthetic_mesh(product.mesh), params)
                selected[product.mesh] = (synthetic_mesh(product.mesh).tri_count, best.tri_count)
            counts[pid] = selected[product.mesh]
        x0, y0, x1, y1 = scene.layout.store.walls.bounds()
        near = nearest_fixtures(scene.layout, (0.5 * (x0 + x1), 0.5 * (y0 + y1)), config["lod"]["near_fixtures"])
        optimized, original = scene_triangle_budget(arr, counts, near)
        report["scene"] = {"optimized": optimized, "original": original,
                           "ratio": optimized / original if original else 0.0, "near_fixtures": near}
        logger.info(f"Scene triangles: {optimized} of {original} with LOD")
    write_json(os.path.join(out_dir, "lod_report.json"), report)
    return EXIT_OK


def cmd_plan(args, config):
    scene = load_scene(args.scene)
    if scene.arrangement is None:
        logger.error(f"{args.scene} has no arrangement; run 'arrange' first")
        return EXIT_USAGE
    seed = scene.root_seed if args.seed is None else args.seed
    kind = TaskKind(args.task)
    catalog = assets.load_catalog()
    if kind in DOOR_KINDS:
        product = None
    else:
        product = args.product or eligible_products(scenario("in_domain"), kind, catalog)[0]
    trial = setup_trial(kind, scene.arrangement, product, seeding.generator(seed, "plan/task"),
                        store_config.tolerances(config))
    model = _robot(config)
    result, obstacles, q_start = run_plan(config, model, trial, seeding.derive_seed(seed, "plan/planner"),
                                          seeding.derive_seed(seed, "plan/robot"))
    logger.info(f"Instruction: {instruction_for(trial.spec, catalog, scene.layout)}")
    if isinstance(result, PlanningFailure):
        logger.error(f"Planning failed: {result}")
        return EXIT_INVALID
    problems = trajectory_valid(model, result, obstacles, store_config.planner_params(config), q_start)
    for p in problems:
        logger.error(f"Trajectory audit: {p}")
    write_trajectory_log(args.out or "trajectory.jsonl", result, trajectory_records(result))
    if args.actions:
        write_json(args.actions, action_records(export_actions(result)))
    return EXIT_INVALID if problems else EXIT_OK


def cmd_eval(args, config):
    scene = load_scene(args.scene)
    if scene.arrangement is None:
        logger.error(f"{args.scene} has no arrangement")
        return EXIT_USAGE
    data = read_json(args.snapshots)
    tol = store_config.tolerances(config)
    try:
        spec = TaskSpec.from_dict(data["task"], tol)
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"{args.snapshots}: bad task description ({e})") from e
    before = state_from_dict(data.get("before", {}))
    after = state_from_dict(data.get("after", {}))
    checkpoints = [state_from_dict(s) for s in data.get("checkpoints", [])]
    report = eval_task(spec, before, after, scene.arrangement, checkpoints)
    record = trial_record(scene.scenario or scenario("in_domain"), spec, report,
                          instruction_for(spec, assets.load_catalog(), scene.layout))
    _write_text(args.out or "-", json.dumps(record, sort_keys=True) + "\n")
    return EXIT_OK if report.success else EXIT_INVALID


def cmd_render(args, config):
    scene = load_scene(args.scene)
    layout = scene.layout
    field = None
    if args.glyphs:
        field = layout_field(layout, store_config.layout_params(config, scene.root_seed))
    opts = RenderOptions(scale=args.scale, glyphs=args.glyphs, items=args.items)
    out = args.out or f"scene.{args.format}"
    if args.format == "png":
        atomic_write_bytes(out, render_png(layout, opts, scene.arrangement, field))
    elif args.format == "json":
        _write_text(out, canonical_json(render_layers(layout, opts, scene.arrangement, field)) + "\n")
    else:
        _write_text(out, render_svg(layout, opts, scene.arrangement, field))
    return EXIT_OK


# ===== BATCH =====

@lru_cache(maxsize=4)
def _cached_scene(config_json, layout_seed, arrangement_seed):
    config = json.loads(config_json)
    layout = build_layout(config, layout_seed)
    return layout, build_arrangement(config, layout, arrangement_seed)


def run_trial(job):
    """One end-to-end trial: scene, task setup, planning, replay and judging. Returns the trial record."""
    config = json.loads(job["config"])
    scn = scenario(job["scenario"])
    kind = TaskKind(job["task"])
    seeds = trial_seeds(scn, job["root_seed"], job["trial"])
    layout, arr = _cached_scene(job["config"], seeds["layout"], seeds["arrangement"])
    catalog = assets.load_catalog()
    task_rng = np.random.default_rng(seeds["task"])
    base = {"trial": job["trial"], "scenario": scn.name, "task": kind.value}

    product = None
    if kind not in DOOR_KINDS:
        pool = [p for p in eligible_products(scn, kind, catalog) if p in arr.products]
        if not pool:
            return {**base, "success": False, "failed": ["no_eligible_item"]}
        product = pool[int(task_rng.integers(len(pool)))]
    try:
        trial = setup_trial(kind, arr, product, task_rng, store_config.tolerances(config))
    except TrialSetupError as e:
        return {**base, "item": product, "success": False, "failed": [f"setup: {e}"]}

    model = _robot(config)
    result, _, q_start = run_plan(config, model, trial, seeds["planner"], seeds["robot"])
    instruction = instruction_for(trial.spec, catalog, layout)
    if isinstance(result, PlanningFailure):
        record = trial_record(scn, trial.spec, _planning_report(kind), instruction, job["trial"],
                              {"planning": str(result)})
        return record

    log_path = os.path.join(job["out"], f"trial_{job['trial']:05d}_{kind.value}.jsonl")
    write_trajectory_log(log_path, result, trajectory_records(result))
    before = SceneState.from_arrangement(trial.arrangement, q_start, trial.door_angles, _basket_for(trial))
    after = replay_trajectory(model, result, before, trial.arrangement, config["task_eval"]["grasp_tol"])
    report = eval_task(trial.spec, before, after, trial.arrangement)
    return trial_record(scn, trial.spec, report, instruction, job["trial"],
                        {"planning": "ok", "waypoints": len(result), "log": os.path.basename(log_path)})


def _planning_report(kind):
    criterion = Criterion.DOOR_ANGLE if kind in DOOR_KINDS else Criterion.TARGET_NOT_PLACED
    return SuccessReport(False, (Failure(criterion),))


def default_workers():
    return psutil.cpu_count(logical=False) or os.cpu_count() or 1


def cmd_batch(args, config):
    out_dir = args.out or "batch_out"
    os.makedirs(out_dir, exist_ok=True)
    n = args.n or config["batch"]["trials"]
    workers = args.workers or config["batch"]["workers"] or default_workers()
    scn_name = args.scenario or config["batch"]["scenario"]
    try:
        scenario(scn_name)
    except KeyError as e:
        raise UsageError(e.args[0]) from None
    tasks = args.tasks or config["batch"]["tasks"]
    unknown = sorted(set(tasks) - {k.value for k in TaskKind})
    if unknown:
        raise UsageError(f"unknown task(s) {unknown}, choose from {sorted(k.value for k in TaskKind)}")
    root = args.seed or 0
    config_json = json.dumps(config, sort_keys=True)
    jobs = [{"config": config_json, "scenario": scn_name, "task": t, "root_seed": root,
             "trial": k * len(tasks) + i, "out": out_dir}
            for k in range(n) for i, t in enumerate(tasks)]
    logger.info(f"Running {len(jobs)} trials ({n} per task) on {workers} workers")

    if workers == 1:
        records = [run_trial(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_trial, jobs, chunksize=max(1, len(jobs) // (4 * workers))))

    records.sort(key=lambda r: r["trial"])
    atomic_write_text(os.path.join(out_dir, "trials.jsonl"),
                      "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    for t in tasks:
        rows = [r for r in records if r["task"] == t]
        ok = sum(1 for r in rows if r["success"])
        logger.info(f"{t}: {ok}/{len(rows)} successful")
    return EXIT_OK


# ===== ARGUMENTS =====

def build_parser():
    parser = argparse.ArgumentParser(prog="darkstore", description="Procedural dark-store scenes and tasks")
    parser.add_argument("--config", help="config file (default: $DARKSTORE_CONFIG or config.json)")
    parser.add_argument("--log-file", help="also log to this rotating file")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug output on the console")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None, help="root seed")
        p.add_argument("--out", help="output path")
        p.set_defaults(func=func)
        return p

    add("gen", cmd_gen, "generate a fixture layout")
    p = add("arrange", cmd_arrange, "populate the fixtures of a scene with products")
    p.add_argument("--scene", required=True)
    p = add("deplete", cmd_deplete, "remove purchased items from an arranged scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--days", type=float, required=True)
    p.add_argument("--rate", type=float, default=None)
    p = add("lod", cmd_lod, "optimize asset meshes and report triangle budgets")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--mesh", nargs="*", help="OBJ files (default: the bundled synthetic assets)")
    source.add_argument("--manifest", help="asset manifest; meshes are read relative to it and checked against dims")
    p.add_argument("--scene", help="arranged scene for the scene triangle budget")
    p = add("plan", cmd_plan, "plan a task trajectory in a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--task", required=True, choices=[k.value for k in TaskKind if k != TaskKind.COMPOSITE])
    p.add_argument("--product")
    p.add_argument("--actions", help="also export 11-value action records here")
    p = add("eval", cmd_eval, "judge a task on before/after snapshots")
    p.add_argument("--scene", required=True)
    p.add_argument("--snapshots", required=True)
    p = add("render", cmd_render, "draw a scene top-down")
    p.add_argument("--scene", required=True)
    p.add_argument("--format", choices=("svg", "json", "png"), default="svg")
    p.add_argument("--glyphs", action="store_true", help="draw the tensor field")
    p.add_argument("--items", action="store_true", help="draw item positions")
    p.add_argument("--scale", type=float, default=40.0, help="pixels per meter")
    p = add("batch", cmd_batch, "run many seeded trials end to end")
    p.add_argument("--n", type=int, default=None, help="trials per task")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--scenario", default=None)
    p.add_argument("--tasks", nargs="*", default=None)
    return parser


def cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    try:
        config = store_config.load_config(args.config)
    except ConfigValidationError as e:
        setup_logging()
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    level = "DEBUG" if args.verbose else config["logging"]["level"]
    setup_logging(level, args.log_file or config["logging"]["file"])
    if args.command == "gen" and args.seed is None:
        args.seed = 0

    logger.info("=" * 50)
    logger.info(f"DARKSTORE - {args.command}")
    logger.info("=" * 50)
    try:
        return args.func(args, config)
    except ConfigValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    except (UsageError, SceneFormatError, ObjFormatError, PathTraversalError, FileNotFoundError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except TrialSetupError as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_INVALID
    except Exception:
        logger.exception(f"{args.command} failed")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(cli())
