"""Command-line entry point: ``graspnet <command> ...``.

Exit codes: 0 success, 2 input/config error, 3 training integrity error,
4 corrupt artifact. Progress goes to stderr; results are ``key=value`` lines
(or CSV rows for ``run``) on stdout.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

from . import sim
from .augment import generate_eval_set
from .config import load_run_config
from .controller import run_episode
from .demo import CameraPose, load_demonstration, load_demonstrations, save_demonstration
from .errors import CorruptFileError, GraspNetError, IntegrityError, NotFoundError, PreconditionError
from .imageio import read_ppm, write_pgm
from .model import atomic_write_bytes, forward_full, load_params, save_params, upsample_map
from .rng import DOMAIN_EPISODE, SeededRNG
from .training import evaluate, fine_tune, reptile_meta_train, train

log = logging.getLogger("graspnet")

EXIT_OK, EXIT_INPUT, EXIT_INTEGRITY, EXIT_CORRUPT = 0, 2, 3, 4


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _emit(**values):
    for key, value in values.items():
        if isinstance(value, float):
            value = f"{value:.6f}"
        print(f"{key}={value}")


def _config(args):
    overrides = dict(kv.split("=", 1) for kv in (args.set or []))
    for key in ("seed", "iterations", "scheme"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    return load_run_config(args.config, overrides)


def _demos(path, on_read=None):
    try:
        return load_demonstrations(path, on_read)
    except (NotFoundError, FileNotFoundError) as exc:
        raise CommandError(EXIT_INPUT, f"cannot load demonstrations: {exc}") from None


def _weights(path):
    try:
        return load_params(path)
    except FileNotFoundError:
        raise CommandError(EXIT_INPUT, f"no such weight file: {path}") from None
    except CorruptFileError as exc:
        raise CommandError(EXIT_CORRUPT, f"corrupt weight file {path}: {exc}") from None


def _scenario(path):
    try:
        return sim.load_scenario(path)
    except FileNotFoundError:
        raise CommandError(EXIT_INPUT, f"no such scenario file: {path}") from None
    except sim.ScenarioParseError as exc:
        raise CommandError(EXIT_INPUT, f"{path}: {exc}") from None


def _out_prefix(path) -> Path:
    p = Path(path)
    if p.suffix == ".gnw":
        p = p.with_suffix("")
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_config(prefix: Path, cfg):
    atomic_write_bytes(prefix.with_suffix(".cfg"), cfg.to_text().encode("ascii"))


def cmd_scenario(args):
    atomic_write_bytes(args.out, sim.format_scenario(sim.default_workspace()).encode("ascii"))
    _emit(scenario=args.out)


def cmd_demo(args):
    ws = _scenario(args.scenario)
    if args.seed is not None:
        ws = sim.WorkspaceState(ws.blocks, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for bid in ws.ids:
        save_demonstration(sim.capture_demonstration(ws, bid), out / f"block_{bid:02d}")
        log.info("captured demonstration for block %d", bid)
    _emit(demonstrations=len(ws.ids), out=out)


def _test_accuracy(params, demos, target, cfg):
    test = generate_eval_set(demos, target, cfg.test_n, cfg.test_n, cfg.seed, cfg.augmentation)
    return evaluate(params, test)


def cmd_train(args):
    cfg = _config(args)
    demos = _demos(args.demos)
    if args.target not in demos:
        raise CommandError(EXIT_INPUT, f"no demonstration for target {args.target}")
    prefix = _out_prefix(args.out)
    _write_config(prefix, cfg)
    params, metrics = train(demos, args.target, cfg.train)
    metrics.test_accuracy = _test_accuracy(params, demos, args.target, cfg)
    save_params(params, prefix.with_suffix(".gnw"))
    metrics.write_csv(prefix.with_suffix(".csv"))
    _emit(target_id=args.target, scheme=cfg.train.scheme, iterations=cfg.train.iterations,
          final_val_accuracy=metrics.final_val_accuracy, test_accuracy=metrics.test_accuracy,
          weights=prefix.with_suffix(".gnw"))


def cmd_meta_train(args):
    cfg = _config(args)
    frames_read = []
    demos = _demos(args.demos, frames_read.append)
    if args.held_out not in demos:
        raise CommandError(EXIT_INPUT, f"no demonstration for held-out block {args.held_out}")
    prefix = _out_prefix(args.out)
    _write_config(prefix, cfg)
    phi = reptile_meta_train(demos, args.held_out, cfg.reptile)
    if args.held_out in frames_read:
        raise IntegrityError(f"held-out demonstration {args.held_out} was read during meta-training")
    save_params(phi, prefix.with_suffix(".gnw"))
    _emit(held_out=args.held_out, outer_iterations=cfg.reptile.outer_iterations,
          frames_read=",".join(str(i) for i in sorted(set(frames_read))),
          weights=prefix.with_suffix(".gnw"))


def cmd_finetune(args):
    cfg = _config(args)
    phi = _weights(args.phi)
    demos = _demos(args.demos)
    if args.target not in demos:
        raise CommandError(EXIT_INPUT, f"no demonstration for target {args.target}")
    prefix = _out_prefix(args.out)
    _write_config(prefix, cfg)
    iterations = args.iterations if args.iterations is not None else cfg.reptile.finetune_iterations
    params, metrics = fine_tune(phi, demos, args.target, cfg.reptile, iterations=iterations)
    if metrics.records:
        metrics.test_accuracy = _test_accuracy(params, demos, args.target, cfg)
    save_params(params, prefix.with_suffix(".gnw"))
    metrics.write_csv(prefix.with_suffix(".csv"))
    summary = dict(target_id=args.target, iterations=iterations)
    if metrics.records:
        summary.update(final_val_accuracy=metrics.final_val_accuracy,
                       test_accuracy=metrics.test_accuracy)
    _emit(**summary, weights=prefix.with_suffix(".gnw"))


def cmd_eval(args):
    params = _weights(args.weights)
    demos = _demos(args.demos)
    if args.target not in demos:
        raise CommandError(EXIT_INPUT, f"no demonstration for target {args.target}")
    seed = args.seed if args.seed is not None else 0
    test = generate_eval_set(demos, args.target, args.n_pos, args.n_neg, seed)
    _emit(accuracy=evaluate(params, test))


def cmd_map(args):
    params = _weights(args.weights)
    src = Path(args.image)
    try:
        frame = load_demonstration(src).frame if src.is_dir() else read_ppm(src)
    except (FileNotFoundError, NotFoundError, CorruptFileError) as exc:
        raise CommandError(EXIT_INPUT, f"cannot read image {src}: {exc}") from None
    amap = forward_full(params, frame)
    write_pgm(args.out, upsample_map(amap, frame.shape[:2]))
    i, j = amap.argmax()
    _emit(map_rows=amap.shape[0], map_cols=amap.shape[1], max_activation=amap.max(),
          argmax_x=amap.cell_to_pixel(i, j)[0], argmax_y=amap.cell_to_pixel(i, j)[1], out=args.out)


def cmd_run(args):
    cfg = _config(args)
    params = _weights(args.weights)
    ws = _scenario(args.scenario)
    ws.block(args.target)
    ccfg = cfg.controller
    overrides = {}
    if args.max_offset is not None:
        overrides["max_offset_mm"] = args.max_offset
    if args.max_yaw is not None:
        overrides["max_yaw_deg"] = args.max_yaw
    if args.no_rotation:
        overrides["rotation_set_deg"] = (0,)
    if overrides:
        import dataclasses
        ccfg = dataclasses.replace(ccfg, **overrides)
    base = SeededRNG(cfg.seed)
    print("episode,success,steps,reason,final_x_mm,final_y_mm,final_yaw_rad")
    successes = 0
    for ep in range(args.episodes):
        result = run_episode(ws, params, args.target, ccfg, base.child(DOMAIN_EPISODE, ep))
        successes += result.success
        last = result.trajectory[-1].pose if result.trajectory else CameraPose(math.nan, math.nan, math.nan)
        print(f"{ep},{int(result.success)},{result.steps},{result.reason},"
              f"{last.x_mm:.3f},{last.y_mm:.3f},{last.yaw_rad:.5f}", flush=True)
        if args.trajectories:
            Path(args.trajectories).mkdir(parents=True, exist_ok=True)
            result.write_trajectory(Path(args.trajectories) / f"episode_{ep:03d}.csv")
    rate = successes / args.episodes if args.episodes else 0.0
    _emit(success_rate=rate)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graspnet", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int)
        return p

    def add_config(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")

    p = add("scenario", cmd_scenario, "write the default 10-block scenario file")
    p.add_argument("--out", required=True)

    p = add("demo", cmd_demo, "capture one demonstration per block")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train a GraspNet for one block")
    p.add_argument("--demos", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--scheme", choices=("single", "multi"))
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", required=True, help="output prefix (.gnw/.csv/.cfg)")
    add_config(p)

    p = add("meta-train", cmd_meta_train, "Reptile meta-training on all blocks but one")
    p.add_argument("--demos", required=True)
    p.add_argument("--held-out", type=int, required=True)
    p.add_argument("--out", required=True)
    add_config(p)

    p = add("finetune", cmd_finetune, "fine-tune meta-learned weights on a block")
    p.add_argument("--phi", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", required=True)
    add_config(p)

    p = add("eval", cmd_eval, "accuracy on a fresh balanced test set")
    p.add_argument("--weights", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--n-pos", type=int, default=5000)
    p.add_argument("--n-neg", type=int, default=5000)

    p = add("map", cmd_map, "write an activation-map PGM for a frame")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True, help="PPM file or demonstration directory")
    p.add_argument("--out", required=True)

    p = add("run", cmd_run, "closed-loop grasp episodes in simulation")
    p.add_argument("--weights", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--max-offset", type=float)
    p.add_argument("--max-yaw", type=float)
    p.add_argument("--no-rotation", action="store_true")
    p.add_argument("--trajectories", help="directory for per-episode trajectory CSVs")
    add_config(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except CorruptFileError as exc:
        print(f"corrupt artifact: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (PreconditionError, NotFoundError, GraspNetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
