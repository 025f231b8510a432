"""Command-line entry point: ``untangle <command> ...``.

Exit status is 0 on success, 1 on a validation error and 2 on a runtime
failure.  Errors print one line ``error: <CODE>: <message>`` to stderr.
Every command writes ``run_manifest.json`` into its ``--out`` directory.
"""

import argparse
import json
import logging
import math
import os
import subprocess
import sys

import numpy as np

from untangle import __version__, tensorio
from untangle.methods import ConfigError, ObjectiveConfig

log = logging.getLogger("untangle")

SCHEMA_VERSION = 1
COMMANDS = ("generate", "train", "encode", "evaluate", "study", "analyze", "impossibility")


class CliError(Exception):
    def __init__(self, code, message, status=1):
        super().__init__(message)
        self.code = code
        self.status = status


def schema_error(message):
    return CliError("E_SCHEMA", message)


# --------------------------------------------------------------------------
# config handling


def read_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError("E_CONFIG_READ", f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError("E_CONFIG_PARSE", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") \
            from None
    if not isinstance(data, dict):
        raise schema_error(f"{path}: top level must be a JSON object")
    return data


def apply_overrides(config, overrides):
    """Apply ``a.b=value`` overrides; values parse as JSON, else as strings."""
    config = json.loads(json.dumps(config))
    for item in overrides or ():
        if "=" not in item:
            raise schema_error(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise schema_error(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return config


def check_keys(data, allowed, required=(), where="config"):
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise schema_error(f"unknown key(s) in {where}: {', '.join(unknown)}")
    missing = [k for k in required if k not in data]
    if missing:
        raise schema_error(f"missing key(s) in {where}: {', '.join(missing)}")
    if "schema_version" in allowed and data.get("schema_version") != SCHEMA_VERSION:
        raise schema_error(f"{where}: schema_version must be {SCHEMA_VERSION}")


def load_config(args, allowed, required=()):
    config = apply_overrides(read_config(args.config), args.set)
    check_keys(config, allowed, ("schema_version",) + tuple(required))
    return config


def version_string():
    """``git describe``-style version, falling back to the package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def write_manifest(out, command, args, resolved):
    os.makedirs(out, exist_ok=True)
    manifest = {"command": command, "version": version_string(), "seed": args.seed,
                "config": resolved}
    with open(os.path.join(out, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _world(spec):
    from untangle.worlds import FactorError, make_world
    try:
        return make_world(spec)
    except (FactorError, TypeError) as exc:
        raise schema_error(f"world: {exc}") from None


def _require_file(path, what):
    if not os.path.isfile(path):
        raise CliError("E_INPUT", f"{what} not found: {path}")
    return path


def _workers(args):
    if args.workers is not None:
        return args.workers
    env = os.environ.get("UNTANGLE_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError("E_ENV", f"UNTANGLE_WORKERS must be an integer, got {env!r}") from None
    return 1


# --------------------------------------------------------------------------
# commands


def cmd_generate(args):
    from untangle.worlds import GridTooLarge, enumerate_grid, render, sample_factors
    config = load_config(args, ("schema_version", "world", "samples", "seed"), ("world",))
    if args.seed is not None:
        config["seed"] = args.seed
    world = _world(config["world"])
    seed = int(config.get("seed", 0))
    if "samples" in config:
        factors = sample_factors(world, int(config["samples"]), seed)
    else:
        try:
            factors = enumerate_grid(world)
        except GridTooLarge as exc:
            raise schema_error(f"{exc}; set 'samples' to draw a subset") from None
    os.makedirs(args.out, exist_ok=True)
    tensorio.save_tensor(os.path.join(args.out, "factors.bin"), factors)
    tensorio.save_tensor(os.path.join(args.out, "observations.bin"), render(world, factors))
    manifest = dict(world.manifest(), hash=world.manifest_hash(), rows=int(factors.shape[0]))
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    write_manifest(args.out, "generate", args, config)
    print(f"wrote {factors.shape[0]} observations to {args.out}")


def cmd_train(args):
    from untangle.training import TrainSettings, save_checkpoint, train
    config = load_config(args, ("schema_version", "world", "objective", "steps", "seed", "train"),
                         ("world", "objective", "steps"))
    if args.seed is not None:
        config["seed"] = args.seed
    world = _world(config["world"])
    try:
        objective = ObjectiveConfig.from_dict(config["objective"])
        settings = TrainSettings.from_dict(config.get("train", {}))
    except (ConfigError, TypeError) as exc:
        raise schema_error(str(exc)) from None
    steps = int(config["steps"])
    if steps < 1:
        raise schema_error("steps must be >= 1")
    checkpoint = train(world, objective, steps, int(config.get("seed", 0)), settings)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "checkpoint.ckpt"), checkpoint)
    write_manifest(args.out, "train", args, config)
    h = checkpoint.history
    print(f"trained {steps} steps: recon {h['recon'][0]:.3f} -> {h['recon'][-1]:.3f}, "
          f"kl {h['kl'][-1]:.3f}")


def _load_checkpoint(path):
    from untangle.tensorio import TensorFormatError
    from untangle.training import load_checkpoint
    _require_file(path, "checkpoint")
    try:
        return load_checkpoint(path)
    except (TensorFormatError, KeyError, ValueError) as exc:
        raise CliError("E_INPUT", f"bad checkpoint {path}: {exc}") from None


def cmd_encode(args):
    from untangle.training import encode
    checkpoint = _load_checkpoint(args.ckpt)
    obs_path = _require_file(os.path.join(args.data, "observations.bin"), "observations")
    observations = tensorio.load_tensor(obs_path)
    try:
        reps = encode(checkpoint, observations)
    except ValueError as exc:
        raise CliError("E_INPUT", str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    tensorio.save_tensor(os.path.join(args.out, "reps.bin"), reps.astype(np.float32))
    write_manifest(args.out, "encode", args, {"ckpt": args.ckpt, "data": args.data})
    print(f"encoded {reps.shape[0]} observations into {reps.shape[1]} dims")


def _metric_list(text):
    from untangle.metrics import METRICS
    from untangle.study import UNSUPERVISED
    if text == "all":
        return list(METRICS) + list(UNSUPERVISED)
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in METRICS + UNSUPERVISED]
    if bad:
        raise schema_error(f"unknown metric(s): {', '.join(bad)}")
    return names


def cmd_evaluate(args):
    from untangle.metrics import (METRICS, UndefinedMetric, checkpoint_representation,
                                  evaluate_all, table_representation, unsupervised_scores)
    from untangle.study import UNSUPERVISED, RecordStore, ScoreRecord
    from untangle.worlds import enumerate_grid
    metrics = _metric_list(args.metrics)
    seed = args.seed if args.seed is not None else 0
    checkpoint = None
    if args.ckpt:
        checkpoint = _load_checkpoint(args.ckpt)
    elif not (args.reps and args.factors):
        raise CliError("E_INPUT", "evaluate needs --ckpt or both --reps and --factors")

    if args.world:
        with open(_require_file(args.world, "world manifest")) as fh:
            world_manifest = json.load(fh)
    elif checkpoint is not None:
        world_manifest = checkpoint.world
    else:
        raise CliError("E_INPUT", "--world is required with --reps/--factors")
    world = _world(world_manifest["world"])
    if checkpoint is not None and checkpoint.world_hash != world.manifest_hash():
        raise CliError("E_INPUT", "world manifest does not match the checkpoint's world")

    records = []
    if checkpoint is not None:
        represent = checkpoint_representation(world, checkpoint)
        run_id = os.path.splitext(os.path.basename(args.ckpt))[0]
        hname, hvalue = checkpoint.config.strength
        method, model_seed = checkpoint.config.method, checkpoint.seed
    else:
        reps = tensorio.load_tensor(_require_file(args.reps, "representation tensor"))
        factors = tensorio.load_tensor(_require_file(args.factors, "factor tensor"))
        grid = enumerate_grid(world)
        if factors.shape != grid.shape or not np.array_equal(factors, grid):
            raise CliError("E_INPUT", "--factors must be the full grid written by generate")
        represent = table_representation(world.space, reps)
        run_id = os.path.splitext(os.path.basename(args.reps))[0]
        hname, hvalue, method, model_seed = "none", 0.0, "external", 0
        if any(m in UNSUPERVISED for m in metrics):
            raise schema_error("unsupervised scores need a checkpoint")

    def record(metric, value, status="ok"):
        return ScoreRecord(run_id, world.name, method, hname, hvalue, model_seed, metric,
                           value, status)

    for metric in [m for m in metrics if m in METRICS]:
        try:
            report = evaluate_all(world, represent, seed, args.samples, (metric,))
            records.append(record(metric, report[metric].score))
        except UndefinedMetric as exc:
            log.warning("%s undefined: %s", metric, exc)
            records.append(record(metric, float("nan"), "failed"))
    wanted = [m for m in metrics if m in UNSUPERVISED]
    if wanted:
        scores = unsupervised_scores(checkpoint, world, args.samples, seed)
        records += [record(m, scores[m]) for m in wanted]
    os.makedirs(args.out, exist_ok=True)
    RecordStore(records).write(os.path.join(args.out, "scores.csv"))
    write_manifest(args.out, "evaluate", args,
                   {"ckpt": args.ckpt, "reps": args.reps, "factors": args.factors,
                    "world": world.manifest(), "metrics": metrics, "samples": args.samples,
                    "seed": seed})
    for r in records:
        print(f"{r.metric}\t{r.value:.4f}\t{r.status}")


def cmd_study(args):
    from untangle.study import DuplicateRun, StudyConfig, run_study
    config = apply_overrides(read_config(args.config), args.set)
    if args.seed is not None:
        config["metric_seed"] = args.seed
    try:
        study = StudyConfig.from_dict(config)
    except (ValueError, TypeError) as exc:
        raise schema_error(str(exc)) from None
    workers = _workers(args)
    write_manifest(args.out, "study", args, dict(study.to_dict(), workers=workers))

    def progress(done, total, run_id):
        print(f"[{done}/{total}] {run_id}", flush=True)

    try:
        store = run_study(study, args.out, workers=workers, force=args.force, progress=progress)
    except DuplicateRun as exc:
        raise CliError("E_DUPLICATE_RUN", str(exc)) from None
    failed = len({r.run_id for r in store.records if not r.ok})
    print(f"{len(store.run_ids)} runs, {len(store)} records, {failed} run(s) with failures")


def cmd_analyze(args):
    from untangle.reporting import write_report
    from untangle.study import RecordStore, StoreFormatError
    out = args.report or args.out
    if not out:
        raise schema_error("analyze needs --report (or --out)")
    try:
        store = RecordStore.read(_require_file(args.store, "score store"))
    except (StoreFormatError, ValueError) as exc:
        raise CliError("E_INPUT", f"bad store {args.store}: {exc}") from None
    if not store.select():
        raise CliError("E_INPUT", "store has no ok records")
    seed = args.seed if args.seed is not None else 0
    summary = write_report(store, out, trials=args.trials, seed=seed)
    write_manifest(out, "analyze", args, {"store": args.store, "trials": args.trials,
                                          "seed": seed})
    print(f"analyzed {summary['n_runs']} runs; report in {out}")


def cmd_impossibility(args):
    from untangle.impossibility import (build_twin_worlds, entanglement_report,
                                        identity_representation, make_rotation,
                                        rotated_representation)
    seed = args.seed if args.seed is not None else 0
    if args.d < 2:
        raise schema_error("--d must be >= 2")
    angles = None
    if args.angle is not None:
        angles = [math.radians(a) for a in args.angle]
    try:
        rotation = make_rotation(args.d, seed, angles)
    except ValueError as exc:
        raise schema_error(str(exc)) from None
    if args.n < 10**4:
        raise schema_error("--n must be >= 10000")
    twins = build_twin_worlds(rotation, seed=seed)
    report = entanglement_report(identity_representation(twins), twins, args.n, seed)
    swapped = entanglement_report(rotated_representation(twins), twins, args.n, seed)
    report["rotated_representation"] = {k: swapped[k] for k in ("mig_a", "mig_b", "gap")}
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    write_manifest(args.out, "impossibility", args,
                   {"d": args.d, "n": args.n, "seed": seed, "angle_degrees": args.angle})
    print(f"MIG vs z: {report['mig_a']:.4f}  MIG vs R z: {report['mig_b']:.4f}  "
          f"pushforward identical: {report['pushforward_bitwise_equal']}")


# --------------------------------------------------------------------------
# parser


class Parser(argparse.ArgumentParser):
    """Usage errors become one-line ``E_USAGE`` errors instead of argparse's own."""

    def error(self, message):
        raise CliError("E_USAGE", f"{self.prog}: {message}")


def build_parser():
    parser = Parser(prog="untangle", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"untangle {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, help_text, config=False, out_required=True):
        p = sub.add_parser(name, help=help_text, description=help_text)
        if config:
            p.add_argument("--config", required=True, help="JSON config file")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a config key (dotted path; value parsed as JSON)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", required=out_required, help="output directory")
        return p

    add("generate", "render a world's grid (or a sample) to tensor files", config=True)
    add("train", "train one model and write checkpoint.ckpt", config=True)
    p = add("encode", "encode observations with a checkpoint into reps.bin")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="directory written by generate")
    p = add("evaluate", "score a checkpoint (or pre-encoded reps) into scores.csv")
    p.add_argument("--ckpt")
    p.add_argument("--world", help="manifest.json written by generate")
    p.add_argument("--reps", help="reps.bin aligned with the world's full grid")
    p.add_argument("--factors", help="factors.bin of the full grid")
    p.add_argument("--metrics", default="all", help="'all' or a comma-separated list")
    p.add_argument("--samples", type=int, default=10000)
    p = add("study", "run a sweep into scores.csv", config=True)
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $UNTANGLE_WORKERS or 1)")
    p.add_argument("--force", action="store_true", help="overwrite existing run ids")
    p = add("analyze", "ANOVA, rank correlations, transfer and plots from scores.csv",
            out_required=False)
    p.add_argument("--store", required=True)
    p.add_argument("--report", help="report directory (same as --out)")
    p.add_argument("--trials", type=int, default=10000)
    p = add("impossibility", "twin-world entanglement demo into report.json")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n", type=int, default=10**5)
    p.add_argument("--angle", type=float, nargs="+", help="Givens angles in degrees")
    return parser


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "encode": cmd_encode,
            "evaluate": cmd_evaluate, "study": cmd_study, "analyze": cmd_analyze,
            "impossibility": cmd_impossibility}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.status
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        HANDLERS[args.command](args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.status
    except KeyboardInterrupt:
        print("error: E_INTERRUPTED: interrupted", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        msg = str(exc).splitlines()[0] if str(exc) else ""
        print(f"error: E_RUNTIME: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0
