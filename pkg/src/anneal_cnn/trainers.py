"""The three training regimes.

All regimes visit the same shuffled mini-batches and finish every batch with
an SGD step on all layers. They differ in what happens before that step:

* ``bp`` does nothing extra.
* ``sa`` anneals the dense-layer weights against the batch loss and keeps the
  best weights found.
* ``qa`` encodes the per-sample residuals as a QUBO, anneals it and takes the
  gradient over the samples the solution selects.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import annealers
from .annealers import AnnealSchedule, QaConfig
from .errors import DomainError
from .losses import LossKind, loss_grad, loss_value, residuals
from .annealers import brute_force_qubo
from .nn import dense_forward, sgd_step
from .qubo import decode_solution, encode_loss_qubo

log = logging.getLogger(__name__)

PROTOCOL_LEARNING_RATES = (1.0, 0.1, 0.01)


def batch_schedule(n):
    """Short cooling run for the small per-batch QUBOs; energies there are O(1/N)."""
    return AnnealSchedule(t_max=1.0, t_min=1e-3, cooling=0.8, sweeps_per_temp=2 * max(n, 1))


class Regime(str, enum.Enum):
    BP = "bp"
    SA = "sa"
    QA = "qa"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"unknown regime {value!r}; expected bp, sa or qa") from None

    @property
    def label(self):
        return f"CNN-{self.name}"


@dataclass
class HyperParams:
    learning_rate: float = 0.1
    batch_size: int = 4
    epochs: int = 1
    loss: LossKind = LossKind.CE
    seed: int = 0
    # per-batch SA over the dense weights
    sa_schedule: AnnealSchedule = field(
        default_factory=lambda: AnnealSchedule(t_max=1.0, t_min=0.01, cooling=0.9, sweeps_per_temp=5))
    perturb_scale: float | None = None  # None -> 0.1 * learning_rate
    # per-batch QUBO sampling
    qa_sampler: str = "anneal"  # "anneal" (single-flip sampler) or "qa" (quantum transitions)
    qa_reads: int = 5
    qa_schedule: AnnealSchedule | None = None  # None -> batch_schedule(batch size)
    qa_config: QaConfig = field(default_factory=lambda: QaConfig(t_max=200, t_loc=20, t_drill=3))
    debug: bool = False
    warmup: bool = True

    def __post_init__(self):
        self.loss = LossKind.parse(self.loss)
        if self.learning_rate < 0:
            raise DomainError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise DomainError("batch size must be at least 1")
        if self.epochs < 1:
            raise DomainError("epochs must be at least 1")
        if self.qa_sampler not in ("anneal", "qa"):
            raise DomainError(f"unknown QA sampler {self.qa_sampler!r}")

    @property
    def sigma(self):
        return 0.1 * self.learning_rate if self.perturb_scale is None else self.perturb_scale

    def check_protocol_rate(self):
        if self.learning_rate not in PROTOCOL_LEARNING_RATES:
            raise DomainError(f"protocol runs use learning rates {PROTOCOL_LEARNING_RATES}, "
                              f"got {self.learning_rate}")

    def snapshot(self):
        d = asdict(self)
        d["loss"] = self.loss.value
        return d


@dataclass
class RunReport:
    regime: Regime
    loss_kind: LossKind
    seed: int
    epoch_val_accuracy: list = field(default_factory=list)
    epoch_test_accuracy: list = field(default_factory=list)
    epoch_wall_ms: list = field(default_factory=list)  # cumulative
    epoch_loss: list = field(default_factory=list)
    test_accuracy: float | None = None
    wall_ms: int = 0
    config: dict = field(default_factory=dict)
    batch_min_cost: list = field(default_factory=list)
    selected_fraction: list = field(default_factory=list)
    oracle_checks: int = 0
    oracle_hits: int = 0
    oracle_violations: int = 0

    @property
    def val_accuracy(self):
        return self.epoch_val_accuracy[-1] if self.epoch_val_accuracy else None


def evaluate(net, dataset, chunk=500):
    """Percentage of samples whose highest output (lowest index on ties) is the label."""
    n = len(dataset)
    if n == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    correct = 0
    for s in range(0, n, chunk):
        out = net.forward(dataset.images[s:s + chunk])
        correct += int(np.sum(np.argmax(out, axis=1) == dataset.labels[s:s + chunk]))
    return 100.0 * correct / n


def batches(n, batch_size, rng):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


class _Trainer:
    regime = Regime.BP

    def __init__(self, net, hp):
        self.net = net
        self.hp = hp
        ss = np.random.SeedSequence(hp.seed)
        shuffle_ss, step_ss = ss.spawn(2)
        self.shuffle_rng = np.random.default_rng(shuffle_ss)
        self.step_rng = np.random.default_rng(step_ss)
        self.report = RunReport(self.regime, hp.loss, hp.seed, config=hp.snapshot())
        self.batch_index = 0

    def step(self, x, y):
        out = self.net.forward(x)
        self._descend(out, y)
        return loss_value(self.hp.loss, out, y).value

    def _descend(self, out, y, mask=None):
        if self.hp.learning_rate == 0:
            return
        if mask is None:
            g = loss_grad(self.hp.loss, out, y)
        else:
            g = np.zeros_like(out)
            g[mask] = loss_grad(self.hp.loss, out[mask], y[mask])
        grads = self.net.backward(g)
        sgd_step(self.net, grads, self.hp.learning_rate)

    def _warmup(self, train):
        # a throwaway batch on a copy so one-off costs (JIT, allocation) stay out of the timing
        saved = self.net, self.report, self.step_rng
        try:
            self.net = self.net.copy()
            self.report = RunReport(self.regime, self.hp.loss, self.hp.seed)
            self.step_rng = np.random.default_rng(0)
            idx = np.arange(min(self.hp.batch_size, len(train)))
            self.step(train.images[idx], train.one_hot[idx])
        finally:
            self.net, self.report, self.step_rng = saved

    def fit(self, train, validation=None, test=None):
        if len(train) == 0:
            raise DomainError("empty training set")
        hp = self.hp
        if hp.warmup:
            self._warmup(train)
        elapsed = 0
        for _ in range(hp.epochs):
            losses = []
            t0 = time.perf_counter_ns()
            for idx in batches(len(train), hp.batch_size, self.shuffle_rng):
                losses.append(self.step(train.images[idx], train.one_hot[idx]))
                self.batch_index += 1
            elapsed += time.perf_counter_ns() - t0
            self.report.epoch_wall_ms.append(elapsed // 1_000_000)
            self.report.epoch_loss.append(float(np.mean(losses)))
            if validation is not None and len(validation):
                self.report.epoch_val_accuracy.append(evaluate(self.net, validation))
            if test is not None and len(test):
                self.report.epoch_test_accuracy.append(evaluate(self.net, test))
        self.report.wall_ms = int(elapsed // 1_000_000)
        if self.report.epoch_test_accuracy:
            self.report.test_accuracy = self.report.epoch_test_accuracy[-1]
        return self.net, self.report


class BPTrainer(_Trainer):
    regime = Regime.BP


class SATrainer(_Trainer):
    regime = Regime.SA

    def step(self, x, y):
        hp = self.hp
        net = self.net
        feats = net.features(x)
        dense = net.dense
        flat = feats.reshape(feats.shape[0], -1)
        bias = dense.biases
        kind = hp.loss
        sigma = hp.sigma

        def objective(w):
            return loss_value(kind, dense_forward(flat, _Dense(w, bias)), y).value

        def neighbor(w, rng):
            cand = w.copy()
            k = int(rng.integers(cand.size))
            cand.flat[k] += rng.uniform(-sigma, sigma)
            return cand

        w0 = dense.weights
        best, _, _ = annealers.sa_minimize(objective, neighbor, hp.sa_schedule,
                                           initial=w0, rng=self.step_rng)
        if best is not w0:
            dense.weights[...] = best
        out = dense.forward(feats)
        self._descend(out, y)
        return loss_value(kind, out, y).value


class _Dense:
    # minimal stand-in accepted by nn.dense_forward
    __slots__ = ("weights", "biases")

    def __init__(self, weights, biases):
        self.weights = weights
        self.biases = biases


class QATrainer(_Trainer):
    regime = Regime.QA

    def select(self, res):
        """Anneal the QUBO built from ``res``; returns ``(selected, min_energy, Q)``."""
        hp = self.hp
        Q = encode_loss_qubo(hp.loss, res)
        if not np.any(Q.q):
            # every bitstring scores the offset; nothing to select
            return frozenset(), Q.offset, Q
        seed = int(hp.seed) * 1_000_003 + self.batch_index
        if hp.qa_sampler == "qa":
            sample = annealers.qa_sample(Q, hp.qa_config, reads=hp.qa_reads, seed=seed)
        else:
            schedule = hp.qa_schedule or batch_schedule(Q.n)
            sample = annealers.qubo_anneal(Q, schedule, reads=hp.qa_reads, seed=seed)
        x, e, _ = sample.first
        if hp.debug and Q.n <= 16:
            _, e_min = brute_force_qubo(Q)
            self.report.oracle_checks += 1
            tol = 1e-9 * max(1.0, abs(e_min))
            if e < e_min - tol:
                self.report.oracle_violations += 1
            if abs(e - e_min) <= tol:
                self.report.oracle_hits += 1
        return decode_solution(x), e, Q

    def step(self, x, y):
        out = self.net.forward(x)
        res = residuals(out, y)
        selected, e, _ = self.select(res)
        self.report.batch_min_cost.append(e)
        self.report.selected_fraction.append(len(selected) / len(res))
        mask = None
        if selected:
            mask = np.zeros(len(res), dtype=bool)
            mask[sorted(selected)] = True
        self._descend(out, y, mask)
        return loss_value(self.hp.loss, out, y).value


TRAINERS = {Regime.BP: BPTrainer, Regime.SA: SATrainer, Regime.QA: QATrainer}


def train(regime, net, train_set, hp, validation=None, test=None):
    return TRAINERS[Regime.parse(regime)](net, hp).fit(train_set, validation, test)


def train_bp(net, train_set, hp, validation=None, test=None):
    return BPTrainer(net, hp).fit(train_set, validation, test)


def train_sa(net, train_set, hp, validation=None, test=None):
    return SATrainer(net, hp).fit(train_set, validation, test)


def train_qa(net, train_set, hp, validation=None, test=None):
    return QATrainer(net, hp).fit(train_set, validation, test)
