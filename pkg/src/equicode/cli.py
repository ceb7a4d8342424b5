"""Command-line entry point.

Subcommands: train, eval, rank, gradcheck, verify-action, export, demo.
Exit codes: 0 success, 1 validation error, 2 numerical abort, 3 I/O
error. With --json all diagnostic output is line-oriented JSON.
"""

import argparse
import json
import sys
from importlib import resources

import numpy as np

from . import environments as envs
from . import evaluation as ev
from . import gradcheck as gc
from . import objectives as obj
from . import training
from .autodiff import EncoderModel
from .errors import (CheckpointError, ConfigurationError, EquicodeError,
                     NumericalError, SamplingError)

GRADCHECK_TOLERANCE = 1e-4

PRESETS = ("pendulum", "doublebump_passive", "doublebump_active",
           "doublebump_conformal")


def _load_preset(name):
    ref = resources.files("equicode").joinpath(f"presets/{name}.json")
    return json.loads(ref.read_text())


def load_config_dict(path_or_name):
    """A config is a JSON file path or the name of a shipped preset."""
    import os
    if os.path.exists(path_or_name):
        with open(path_or_name) as fh:
            return json.load(fh)
    if path_or_name in PRESETS:
        return _load_preset(path_or_name)
    raise ConfigurationError(
        f"config {path_or_name!r} is neither a file nor a preset "
        f"(presets: {', '.join(PRESETS)})")


def apply_overrides(config_dict, pairs):
    """Apply repeatable --set key=value overrides with dotted paths."""
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigurationError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config_dict
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return config_dict


def _emit(payload, as_json):
    if as_json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def _build_config(args):
    cfg_dict = load_config_dict(args.config)
    cfg_dict = apply_overrides(cfg_dict, args.set)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    return training.TrainConfig.from_dict(cfg_dict)


def _held_out_seed(config):
    # evaluation draws from an rng stream disjoint from the training seed
    return (config.seed + 1) * 1_000_003


def cmd_train(args):
    config = _build_config(args)
    out_dir = args.out or "runs/train"
    _emit({"effective_config": config.to_dict(),
           "config_hash": config.content_hash()} if args.json
          else {"config_hash": config.content_hash()}, args.json)
    record, _ = training.train(config, out_dir=out_dir)
    last = record.events[-1] if record.events else None
    _emit({"out_dir": out_dir, "steps": len(record.events),
           "final_loss": None if last is None else last["total"],
           "wall_clock_s": round(record.wall_clock, 3)}, args.json)
    return 0


def cmd_eval(args):
    config = _build_config(args)
    model = EncoderModel.load(args.checkpoint)
    env = config.build_environment()
    report = ev.preservation_eval(model, env, seed=_held_out_seed(config))
    _emit(report.to_dict(), args.json)
    if args.out:
        import os
        os.makedirs(args.out, exist_ok=True)
        with open(f"{args.out}/preservation.json", "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    return 0


def cmd_rank(args):
    config = _build_config(args)
    model = EncoderModel.load(args.checkpoint)
    env = config.build_environment()
    rng = np.random.default_rng(_held_out_seed(config))
    buffers = envs.collect_rl_quads(env, episodes=args.episodes,
                                    steps_per_episode=args.steps_per_episode,
                                    rng=rng)
    transitions = [(x, a, x_t) for a, pairs in buffers.items()
                   for x, x_t in pairs]
    pool = [t[0] for t in transitions]
    picks = rng.choice(len(pool), size=min(64, len(pool)), replace=False)
    references = [pool[i] for i in picks]
    transition = ev.fit_transition(model, transitions,
                                   seed=_held_out_seed(config))
    report = ev.rank_eval(transition, model, transitions, references)
    _emit(report.to_dict(), args.json)
    return 0


def cmd_gradcheck(args):
    losses = None if args.losses == "all" else args.losses.split(",")
    results = gc.run_gradcheck(losses=losses, instances=args.instances,
                               seed=args.seed or 0)
    ok = True
    for name, err in sorted(results.items()):
        err = float(err)
        passed = bool(err < GRADCHECK_TOLERANCE)
        ok = ok and passed
        _emit({"loss": name, "max_rel_error": err,
               "pass": passed}, args.json)
    return 0 if ok else 1


def cmd_verify_action(args):
    rng = np.random.default_rng(args.seed or 0)
    order = args.order
    signal = rng.normal(size=order)
    points = [tuple(np.roll(signal, s)) for s in range(order)]
    group = obj.FiniteGroupTable.cyclic(order)
    t_x = {(g, x): tuple(np.roll(np.asarray(x), g)) for g in group.elements
           for x in points}
    if args.fault:
        # corrupt one action-table entry to demonstrate detection
        t_x[(1, points[0])] = points[0]
    f_table = {x: tuple(rng.normal(size=3)) for x in points}
    report = obj.verify_induced_action(f_table, t_x, group)
    _emit(report.to_dict(), args.json)
    return 0 if report.ok else 1


def cmd_export(args):
    config = _build_config(args)
    model = EncoderModel.load(args.checkpoint)
    env = config.build_environment()
    rng = np.random.default_rng(_held_out_seed(config))
    states = env.sample_states(args.count, rng)
    observations = env.observe(states)
    path = args.out or "embeddings.csv"
    ev.export_embeddings(model, observations, env.state_columns(states), path)
    _emit({"csv": path, "rows": int(len(observations))}, args.json)
    return 0


def cmd_demo(args):
    preset = {"pendulum": "pendulum",
              "doublebump-passive": "doublebump_passive",
              "doublebump-active": "doublebump_active",
              "doublebump-conformal": "doublebump_conformal"}[args.name]
    cfg_dict = _load_preset(preset)
    cfg_dict = apply_overrides(cfg_dict, args.set)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    config = training.TrainConfig.from_dict(cfg_dict)
    out_dir = args.out or f"runs/demo_{preset}"
    record, model = training.train(config, out_dir=out_dir)
    env = config.build_environment()
    rng = np.random.default_rng(_held_out_seed(config))
    states = env.sample_states(512, rng)
    csv_path = f"{out_dir}/embeddings.csv"
    ev.export_embeddings(model, env.observe(states),
                         env.state_columns(states), csv_path)
    report = ev.preservation_eval(model, env, seed=_held_out_seed(config))
    _emit({"out_dir": out_dir, "csv": csv_path,
           "final_loss": record.events[-1]["total"] if record.events else None,
           "distance_residual_median": report.distance["median"]}, args.json)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="equicode")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True,
                           help="config JSON path or preset name")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a config key (dotted path)")
        p.add_argument("--json", action="store_true")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    p = sub.add_parser("train", help="run a training job")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="held-out preservation residuals")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("rank", help="latent transition H@1 / MRR")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=32)
    p.add_argument("--steps-per-episode", type=int, default=32)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    common(p, config=False)
    p.add_argument("--losses", default="all")
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("verify-action",
                       help="check the induced-action group axioms")
    common(p, config=False)
    p.add_argument("--order", type=int, default=8)
    p.add_argument("--fault", action="store_true",
                   help="corrupt the action table to demonstrate detection")
    p.set_defaults(fn=cmd_verify_action)

    p = sub.add_parser("export", help="embedding + ground-truth CSV")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=512)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("demo", help="train a preset end to end and export")
    p.add_argument("name", choices=["pendulum", "doublebump-passive",
                                    "doublebump-active",
                                    "doublebump-conformal"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--json", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_demo)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, CheckpointError, SamplingError,
            EquicodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
