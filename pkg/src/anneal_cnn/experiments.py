"""Cross-validation, epoch and data-size protocols over the three regimes."""
from __future__ import annotations

import configparser
import logging
import statistics
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .annealers import AnnealSchedule, QaConfig
from .data import (DEFAULT_SUBSET_SIZES, cumulative_subsets, holdout_split, kfold_split,
                   load_mnist, scaled_subset_sizes)
from .errors import DomainError
from .losses import LossKind
from .nn import Network
from .report import MEAN_INDEX, ResultRow, ResultTable, emit_csv, emit_svg
from .trainers import HyperParams, Regime, train

log = logging.getLogger(__name__)

TESTS = ("crossval", "epochs", "datasize")
DESK_TRAIN_CAP = 5_000
DESK_TEST_CAP = 1_000
PROTOCOL_LRS = {"crossval": (1.0, 0.1, 0.01), "epochs": (0.1,), "datasize": (0.1,)}
PROTOCOL_EPOCHS = {"crossval": 1, "epochs": 10, "datasize": 1}
DEFAULT_CHART = {"crossval": "bar", "epochs": "line", "datasize": "line"}


def _split_list(value):
    if isinstance(value, str):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    return tuple(value)


@dataclass
class ExperimentConfig:
    test: str = "crossval"
    regimes: tuple = ("bp", "sa", "qa")
    losses: tuple = ("mse", "ce")
    learning_rates: tuple | None = None  # None -> protocol default
    epochs: int | None = None            # None -> protocol default
    seed: int = 0
    data_dir: str = "data/mnist"
    out_dir: str = "results"
    train_cap: int | None = DESK_TRAIN_CAP
    test_cap: int | None = DESK_TEST_CAP
    full: bool = False
    folds: int = 10
    subset_sizes: tuple = DEFAULT_SUBSET_SIZES
    repeats: int = 1
    chart: str | None = None
    batch_size: int = 4
    qa_reads: int = 5
    qa_sampler: str = "anneal"
    sa_t_max: float = 1.0
    sa_t_min: float = 0.01
    sa_cooling: float = 0.9
    sa_sweeps: int = 5
    perturb_scale: float | None = None
    qa_v: float = 1.0
    qa_t_max: int = 200
    qa_t_loc: int = 20
    qa_t_drill: int = 3

    def __post_init__(self):
        if self.test not in TESTS:
            raise DomainError(f"unknown test {self.test!r}; expected one of {TESTS}")
        self.regimes = tuple(Regime.parse(r).value for r in _split_list(self.regimes))
        self.losses = tuple(LossKind.parse(v).value for v in _split_list(self.losses))
        if not self.regimes:
            raise DomainError("at least one regime is required")
        if not self.losses:
            raise DomainError("at least one loss is required")
        if self.learning_rates is not None:
            self.learning_rates = tuple(float(v) for v in _split_list(self.learning_rates))
            if not self.learning_rates or any(lr <= 0 for lr in self.learning_rates):
                raise DomainError("learning rates must be positive")
        if self.full:
            self.train_cap = None
            self.test_cap = None
        if self.repeats < 1:
            raise DomainError("repeats must be at least 1")

    @property
    def lrs(self):
        return self.learning_rates or PROTOCOL_LRS[self.test]

    @property
    def n_epochs(self):
        return self.epochs or PROTOCOL_EPOCHS[self.test]

    def hyper(self, regime, loss, lr, seed, epochs=1):
        return HyperParams(
            learning_rate=lr, batch_size=self.batch_size, epochs=epochs, loss=loss, seed=seed,
            sa_schedule=AnnealSchedule(self.sa_t_max, self.sa_t_min, self.sa_cooling, self.sa_sweeps),
            perturb_scale=self.perturb_scale, qa_sampler=self.qa_sampler, qa_reads=self.qa_reads,
            qa_config=QaConfig(v=self.qa_v, t_max=self.qa_t_max, t_loc=self.qa_t_loc,
                               t_drill=self.qa_t_drill))


# -- config file -------------------------------------------------------------

_INT_FIELDS = {f.name for f in fields(ExperimentConfig)
               if f.type in ("int", "int | None")}
_FLOAT_FIELDS = {f.name for f in fields(ExperimentConfig)
                 if f.type in ("float", "float | None")}
_BOOL_FIELDS = {"full"}
_SECTIONS = ("experiment", "data", "training", "sa", "qa")


def _coerce(name, raw):
    raw = raw.strip()
    if raw.lower() in ("none", ""):
        return None
    if name in _BOOL_FIELDS:
        return raw.lower() in ("1", "true", "yes", "on")
    if name in _INT_FIELDS:
        return int(raw)
    if name in _FLOAT_FIELDS:
        return float(raw)
    if name == "subset_sizes":
        return tuple(int(v) for v in _split_list(raw))
    return raw


def read_config(path):
    """Flat ``{field: value}`` from an INI file; section names are only grouping."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"config file not found: {path}")
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise DomainError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            name = key.replace("-", "_")
            if name not in known:
                raise DomainError(f"unknown config key {key!r} in [{section}]")
            values[name] = _coerce(name, raw)
    return values


def make_config(test, file_values=None, overrides=None):
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    values["test"] = test
    return ExperimentConfig(**values)


# -- data --------------------------------------------------------------------


def prepare_data(cfg, train_set=None, test_set=None):
    if train_set is None or test_set is None:
        train_set, test_set = load_mnist(cfg.data_dir)
    if cfg.train_cap is not None and len(train_set) > cfg.train_cap:
        order = np.random.default_rng(cfg.seed).permutation(len(train_set))[:cfg.train_cap]
        train_set = train_set.subset(np.sort(order))
    if cfg.test_cap is not None and len(test_set) > cfg.test_cap:
        test_set = test_set.head(cfg.test_cap)
    return train_set, test_set


def _run(regime, cfg, loss, lr, seed, train_set, validation, test_set, epochs=1):
    hp = cfg.hyper(regime, loss, lr, seed, epochs)
    net = Network.create(seed=cfg.seed)
    _, report = train(regime, net, train_set, hp, validation=validation, test=test_set)
    return report


# -- protocols ---------------------------------------------------------------


def run_crossval(cfg, train_set=None, test_set=None):
    """k-fold cross-validation, one epoch per fold, every (regime, loss, lr)."""
    train_set, test_set = prepare_data(cfg, train_set, test_set)
    plan = kfold_split(len(train_set), cfg.folds, cfg.seed)
    table = ResultTable()
    for regime in cfg.regimes:
        for loss in cfg.losses:
            for lr in cfg.lrs:
                fold_rows = []
                for fold in range(cfg.folds):
                    tr_idx, val_idx = plan.fold(fold)
                    seed = cfg.seed * 1000 + fold
                    rep = _run(regime, cfg, loss, lr, seed, train_set.subset(tr_idx),
                               train_set.subset(val_idx), test_set)
                    log.info("crossval %s %s lr=%g fold %d: val %.2f test %.2f %d ms",
                             regime, loss, lr, fold, rep.val_accuracy, rep.test_accuracy,
                             rep.wall_ms)
                    row = ResultRow("crossval", regime, loss, lr, fold, rep.val_accuracy,
                                    rep.test_accuracy, rep.wall_ms, seed)
                    fold_rows.append(row)
                    table.add(row)
                table.add(ResultRow(
                    "crossval", regime, loss, lr, MEAN_INDEX,
                    float(np.mean([r.val_acc for r in fold_rows])),
                    float(np.mean([r.test_acc for r in fold_rows])),
                    int(round(np.mean([r.wall_ms for r in fold_rows]))), cfg.seed))
    return table.sorted()


def run_epochs(cfg, train_set=None, test_set=None):
    """Multi-epoch training with per-epoch accuracy and cumulative wall time."""
    train_set, test_set = prepare_data(cfg, train_set, test_set)
    tr_idx, val_idx = holdout_split(len(train_set), 0.1, cfg.seed)
    tr, val = train_set.subset(tr_idx), train_set.subset(val_idx)
    table = ResultTable()
    for regime in cfg.regimes:
        for loss in cfg.losses:
            for lr in cfg.lrs:
                rep = _run(regime, cfg, loss, lr, cfg.seed, tr, val, test_set, epochs=cfg.n_epochs)
                for e in range(cfg.n_epochs):
                    table.add(ResultRow("epochs", regime, loss, lr, e + 1,
                                        rep.epoch_val_accuracy[e], rep.epoch_test_accuracy[e],
                                        rep.epoch_wall_ms[e], cfg.seed))
                log.info("epochs %s %s lr=%g: final test %.2f, %d ms", regime, loss, lr,
                         rep.test_accuracy, rep.wall_ms)
    return table.sorted()


def datasize_sizes(cfg, n_available):
    cap = n_available if cfg.train_cap is None else min(cfg.train_cap, n_available)
    sizes = tuple(cfg.subset_sizes)
    if sizes[-1] > cap:
        sizes = scaled_subset_sizes(cap, sizes)
    return sizes


def run_datasize(cfg, train_set=None, test_set=None):
    """One epoch on cumulative prefixes of a single shuffle of the training pool."""
    if train_set is None or test_set is None:
        train_set, test_set = load_mnist(cfg.data_dir)
    _, test_set = prepare_data(cfg, train_set, test_set)
    sizes = datasize_sizes(cfg, len(train_set))
    plan = cumulative_subsets(len(train_set), cfg.seed, sizes)
    table = ResultTable()
    for regime in cfg.regimes:
        for loss in cfg.losses:
            for lr in cfg.lrs:
                for size, idx in plan.subsets():
                    subset = train_set.subset(idx)
                    tr_idx, val_idx = holdout_split(size, 0.1, cfg.seed)
                    walls, rep = [], None
                    for _ in range(cfg.repeats):
                        rep = _run(regime, cfg, loss, lr, cfg.seed, subset.subset(tr_idx),
                                   subset.subset(val_idx), test_set)
                        walls.append(rep.wall_ms)
                    wall = int(statistics.median(walls))
                    table.add(ResultRow("datasize", regime, loss, lr, size, rep.val_accuracy,
                                        rep.test_accuracy, wall, cfg.seed))
                    log.info("datasize %s %s lr=%g n=%d: test %.2f, %d ms", regime, loss, lr,
                             size, rep.test_accuracy, wall)
    return table.sorted()


RUNNERS = {"crossval": run_crossval, "epochs": run_epochs, "datasize": run_datasize}


def run_experiment(cfg, train_set=None, test_set=None, write=True):
    """Run ``cfg.test`` and write ``<out>/<test>.csv`` plus accuracy and time SVGs."""
    table = RUNNERS[cfg.test](cfg, train_set, test_set)
    paths = {}
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        kind = cfg.chart or DEFAULT_CHART[cfg.test]
        paths["csv"] = emit_csv(table, out / f"{cfg.test}.csv")
        paths["accuracy"] = emit_svg(table, kind, out / f"{cfg.test}_accuracy.svg", "accuracy")
        paths["time"] = emit_svg(table, kind, out / f"{cfg.test}_time.svg", "time")
    return table, paths
