"""Grid studies: train every (world, method, strength, seed) cell and score it.

Results go to an append-only CSV of :class:`ScoreRecord` rows.  The CSV is
always written in canonical order (sorted by run_id, metric) so two runs
of the same study produce identical bytes.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import csv
import io
import json
import logging
import math
import os

import numpy as np

from untangle import rng as rng_mod
from untangle.methods import METHODS, ConfigError, default_sweep, with_strength
from untangle.metrics import (METRICS, UndefinedMetric, checkpoint_representation, evaluate_all,
                              unsupervised_scores)
from untangle.training import TrainSettings, TrainingDiverged, save_checkpoint, train
from untangle.worlds import make_world

log = logging.getLogger(__name__)

HEADER = ("run_id", "world", "method", "hparam_name", "hparam_value", "seed", "metric", "value",
          "status")
UNSUPERVISED = ("recon", "elbo", "kl", "gaussian_tc")
ALL_SCORES = METRICS + UNSUPERVISED
SCHEMA_VERSION = 1


class DuplicateRun(ValueError):
    pass


class StoreFormatError(ValueError):
    pass


def format_float(value):
    value = float(value)
    return "nan" if math.isnan(value) else repr(value)


@dataclass(frozen=True, order=True)
class ScoreRecord:
    run_id: str
    world: str
    method: str
    hparam_name: str
    hparam_value: float
    seed: int
    metric: str
    value: float
    status: str = "ok"

    def __post_init__(self):
        if self.status not in ("ok", "failed"):
            raise ValueError(f"status must be ok or failed, got {self.status!r}")
        if self.status == "ok" and not math.isfinite(self.value):
            raise ValueError(f"{self.run_id}/{self.metric}: ok record with non-finite value")

    @property
    def ok(self):
        return self.status == "ok"

    @property
    def model(self):
        """Identity of the trained model within its world."""
        return (self.method, self.hparam_name, self.hparam_value, self.seed)

    def row(self):
        return [self.run_id, self.world, self.method, self.hparam_name,
                format_float(self.hparam_value), str(self.seed), self.metric,
                format_float(self.value), self.status]

    @classmethod
    def from_row(cls, row):
        if len(row) != len(HEADER):
            raise StoreFormatError(f"expected {len(HEADER)} columns, got {len(row)}: {row}")
        return cls(row[0], row[1], row[2], row[3], float(row[4]), int(row[5]), row[6],
                   float(row[7]), row[8])


class RecordStore:
    """Append-only collection of score records with a canonical CSV form."""

    def __init__(self, records=()):
        self._records = {}
        self.append(records)

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self.records)

    @property
    def records(self):
        return [self._records[k] for k in sorted(self._records)]

    @property
    def run_ids(self):
        return sorted({r.run_id for r in self._records.values()})

    def append(self, records, force=False):
        records = list(records)
        incoming = {r.run_id for r in records}
        clash = incoming & set(self.run_ids)
        if clash and not force:
            raise DuplicateRun(f"run_id already in store: {sorted(clash)[0]}"
                               + (f" (+{len(clash) - 1} more)" if len(clash) > 1 else ""))
        if clash:
            self._records = {k: v for k, v in self._records.items() if v.run_id not in clash}
        seen = set()
        for r in records:
            key = (r.run_id, r.metric)
            if key in seen:
                raise DuplicateRun(f"duplicate record {key}")
            seen.add(key)
        for r in records:
            self._records[(r.run_id, r.metric)] = r

    def select(self, metric=None, world=None, ok_only=True):
        return [r for r in self.records
                if (metric is None or r.metric == metric)
                and (world is None or r.world == world)
                and (r.ok or not ok_only)]

    @property
    def worlds(self):
        return sorted({r.world for r in self._records.values()})

    @property
    def metrics(self):
        return sorted({r.metric for r in self._records.values()})

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HEADER)
        for r in self.records:
            writer.writerow(r.row())
        return buf.getvalue()

    def write(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(self.to_csv())
        os.replace(tmp, path)

    @classmethod
    def from_csv(cls, text):
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != HEADER:
            raise StoreFormatError(f"bad header {header}; expected {','.join(HEADER)}")
        return cls(ScoreRecord.from_row(row) for row in reader if row)

    @classmethod
    def read(cls, path):
        with open(path, newline="") as fh:
            return cls.from_csv(fh.read())


# --------------------------------------------------------------------------
# study configuration


@dataclass(frozen=True)
class StudyConfig:
    worlds: tuple
    methods: tuple
    seeds: tuple
    steps: int
    strengths: dict = field(default_factory=dict)
    eval_samples: int = 10000
    metric_seed: int = 0
    train: dict = field(default_factory=dict)
    save_checkpoints: bool = False

    KEYS = ("schema_version", "worlds", "methods", "seeds", "steps", "strengths", "eval_samples",
            "metric_seed", "train", "save_checkpoints")

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.KEYS)
        if unknown:
            raise ConfigError(f"unknown study keys: {sorted(unknown)}")
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, "
                              f"got {data.get('schema_version')!r}")
        for key in ("worlds", "methods", "seeds", "steps"):
            if key not in data:
                raise ConfigError(f"study config is missing {key!r}")
        seeds = data["seeds"]
        seeds = tuple(range(seeds)) if isinstance(seeds, int) else tuple(int(s) for s in seeds)
        methods = tuple(data["methods"])
        for m in methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        strengths = {m: tuple(float(v) for v in vals)
                     for m, vals in dict(data.get("strengths", {})).items()}
        for m in strengths:
            if m not in methods:
                raise ConfigError(f"strengths given for method {m!r} not in methods")
        train_cfg = dict(data.get("train", {}))
        try:
            TrainSettings.from_dict(train_cfg)
        except TypeError as exc:
            raise ConfigError(f"bad train settings: {exc}") from None
        steps = int(data["steps"])
        if steps < 1:
            raise ConfigError("steps must be >= 1")
        worlds = tuple(w if isinstance(w, str) else dict(w) for w in data["worlds"])
        for w in worlds:
            make_world(w)
        cfg = cls(worlds=worlds, methods=methods, seeds=seeds, steps=steps, strengths=strengths,
                  eval_samples=int(data.get("eval_samples", 10000)),
                  metric_seed=int(data.get("metric_seed", 0)), train=train_cfg,
                  save_checkpoints=bool(data.get("save_checkpoints", False)))
        if not cfg.cells():
            raise ConfigError("study grid is empty")
        return cfg

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "worlds": list(self.worlds),
                "methods": list(self.methods), "seeds": list(self.seeds), "steps": self.steps,
                "strengths": {m: list(v) for m, v in sorted(self.strengths.items())},
                "eval_samples": self.eval_samples, "metric_seed": self.metric_seed,
                "train": self.train, "save_checkpoints": self.save_checkpoints}

    def cells(self):
        out = []
        for world in self.worlds:
            for method in self.methods:
                if method in self.strengths:
                    configs = [with_strength(method, v, self.steps) for v in self.strengths[method]]
                else:
                    configs = default_sweep(method, self.steps)
                for objective in configs:
                    for seed in self.seeds:
                        out.append(Cell(world, method, objective, seed, self.steps,
                                        self.eval_samples, self.metric_seed, self.train))
        return out


def world_label(world_cfg):
    if isinstance(world_cfg, str):
        return world_cfg
    extras = [f"{k}={world_cfg[k]}" for k in sorted(world_cfg) if k != "name"]
    return "+".join([world_cfg["name"]] + extras)


@dataclass(frozen=True)
class Cell:
    world: object
    method: str
    objective: object
    seed: int
    steps: int
    eval_samples: int
    metric_seed: int
    train: dict

    @property
    def hparam(self):
        return self.objective.strength

    @property
    def run_id(self):
        name, value = self.hparam
        return f"{world_label(self.world)}/{self.method}/{name}={value:g}/seed={self.seed}"

    @property
    def train_seed(self):
        name, value = self.hparam
        return rng_mod.derive_seed(world_label(self.world), self.method, name,
                                   format_float(value), self.seed)

    def record(self, metric, value, status="ok"):
        name, hvalue = self.hparam
        return ScoreRecord(self.run_id, world_label(self.world), self.method, name, hvalue,
                           self.seed, metric, value, status)

    def failed(self, metrics=ALL_SCORES):
        return [self.record(m, float("nan"), "failed") for m in metrics]


def run_cell(cell, checkpoint_dir=None):
    """Train and score one cell; returns ``(records, error or None)``. Never raises."""
    world = make_world(cell.world)
    try:
        checkpoint = train(world, cell.objective, cell.steps, cell.train_seed,
                           TrainSettings.from_dict(cell.train))
    except (TrainingDiverged, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("run %s failed: %s", cell.run_id, exc)
        return cell.failed(), f"{type(exc).__name__}: {exc}"
    if checkpoint_dir is not None:
        path = os.path.join(checkpoint_dir, cell.run_id.replace("/", "__") + ".ckpt")
        save_checkpoint(path, checkpoint)

    records, errors = [], []
    represent = checkpoint_representation(world, checkpoint)
    for metric in METRICS:
        try:
            report = evaluate_all(world, represent, cell.metric_seed, cell.eval_samples, (metric,))
            records.append(cell.record(metric, report[metric].score))
        except (UndefinedMetric, ValueError, np.linalg.LinAlgError) as exc:
            errors.append(f"{metric}: {exc}")
            records.append(cell.record(metric, float("nan"), "failed"))
    try:
        scores = unsupervised_scores(checkpoint, world, cell.eval_samples, cell.metric_seed)
        ok = all(math.isfinite(v) for v in scores.values())
        records += [cell.record(m, scores[m], "ok" if ok else "failed") for m in UNSUPERVISED]
    except (ValueError, np.linalg.LinAlgError) as exc:
        errors.append(f"unsupervised: {exc}")
        records += cell.failed(UNSUPERVISED)
    return records, ("; ".join(errors) or None)


def _run_cell_star(args):
    return run_cell(*args)


def run_study(config, out_dir, workers=1, force=False, progress=None):
    """Run every cell of ``config``; scores go to ``out_dir/scores.csv``.

    Cells run in a process pool of ``workers``; only this process writes the
    store, so results do not depend on scheduling order.
    """
    os.makedirs(out_dir, exist_ok=True)
    store_path = os.path.join(out_dir, "scores.csv")
    store = RecordStore.read(store_path) if os.path.exists(store_path) else RecordStore()
    cells = config.cells()
    clash = sorted({c.run_id for c in cells} & set(store.run_ids))
    if clash and not force:
        raise DuplicateRun(f"{len(clash)} run(s) already in {store_path}, e.g. {clash[0]}; "
                           "use force to overwrite")
    ckpt_dir = None
    if config.save_checkpoints:
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)

    failures = {}
    jobs = [(cell, ckpt_dir) for cell in cells]
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_run_cell_star, jobs)
            _collect(cells, results, store, store_path, failures, progress)
    else:
        _collect(cells, map(_run_cell_star, jobs), store, store_path, failures, progress)
    with open(os.path.join(out_dir, "failures.json"), "w") as fh:
        json.dump(failures, fh, indent=2, sort_keys=True)
    return store


def _collect(cells, results, store, store_path, failures, progress):
    for i, (cell, (records, error)) in enumerate(zip(cells, results)):
        store.append(records, force=True)
        if error:
            failures[cell.run_id] = error
        store.write(store_path)
        if progress is not None:
            progress(i + 1, len(cells), cell.run_id)
