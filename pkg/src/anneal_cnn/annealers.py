"""Minimizers: generic simulated annealing, a single-flip QUBO sampler,
the quantum-transition annealer, and an exhaustive oracle.

The two QUBO heuristics keep a vector of local fields
``h_i = q_ii + sum_{j != i} (q_ij + q_ji) x_j`` so the energy change of
flipping bit ``i`` is ``(1 - 2 x_i) * h_i`` and costs O(1); an accepted flip
updates every field in O(n).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DomainError, NumericError, SizeError
from .qubo import as_bitstring, bitstring_value, energies, energy, format_bitstring

BRUTE_FORCE_MAX_N = 24
# uniforms held in memory at once by qubo_anneal
_UNIFORM_BUDGET = 1 << 22


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric cooling ``T <- g * T`` from ``t_max`` until ``T < t_min``.

    ``sweeps_per_temp`` is the number of proposals made at each temperature.
    A schedule with ``t_max < t_min`` is allowed and yields no temperatures.
    """

    t_max: float = 10.0
    t_min: float = 1e-3
    cooling: float = 0.95
    sweeps_per_temp: int = 10

    def __post_init__(self):
        if not (self.t_max > 0 and self.t_min > 0):
            raise DomainError("temperatures must be positive")
        if not 0.0 < self.cooling < 1.0:
            raise DomainError(f"cooling factor must lie in (0, 1), got {self.cooling}")
        if int(self.sweeps_per_temp) != self.sweeps_per_temp or self.sweeps_per_temp < 1:
            raise DomainError(f"sweeps_per_temp must be a positive integer, got {self.sweeps_per_temp}")

    @classmethod
    def default_for(cls, n):
        return cls(10.0, 1e-3, 0.95, 10 * max(int(n), 1))

    @property
    def is_degenerate(self):
        return self.t_max < self.t_min

    def temperatures(self):
        temps = []
        t = self.t_max
        while t >= self.t_min:
            temps.append(t)
            t = self.cooling * t
        return np.array(temps, dtype=np.float64)


@dataclass(frozen=True)
class QaConfig:
    v: float = 1.0
    t_max: int = 2000
    t_drill: int = 5
    t_loc: int = 50
    # single-flip neighbourhood; only radius 1 is implemented
    neighborhood: int = 1

    def __post_init__(self):
        if not self.v > 0:
            raise DomainError("control parameter v must be positive")
        for name in ("t_max", "t_drill", "t_loc"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be at least 1")
        if self.neighborhood != 1:
            raise DomainError("only the Hamming-distance-1 neighbourhood is supported")

    @property
    def jump_length(self):
        return max(1, int(round(self.v * self.t_max)))


@dataclass
class SampleSet:
    """Distinct bitstrings with their energy and how many reads ended there.

    Records are sorted by energy, ties by the bitstring's binary value.
    """

    records: list
    reads: int
    seed: object = None

    @classmethod
    def from_reads(cls, Q, states, seed=None):
        states = np.asarray(states, dtype=np.int8).reshape(-1, Q.n)
        if Q.n <= 62:
            # pack each row into its binary value; x[0] is the most significant bit
            weights = np.left_shift(np.int64(1), np.arange(Q.n - 1, -1, -1, dtype=np.int64))
            keys, first, counts = np.unique(states.astype(np.int64) @ weights,
                                            return_index=True, return_counts=True)
            uniq = states[first]
            values = [int(k) for k in keys]
        else:
            uniq, counts = np.unique(states, axis=0, return_counts=True)
            values = [bitstring_value(x) for x in uniq]
        es = energies(Q, uniq)
        order = sorted(range(len(uniq)), key=lambda k: (es[k], values[k]))
        records = [(uniq[k], float(es[k]), int(counts[k])) for k in order]
        return cls(records, int(states.shape[0]), seed)

    @property
    def first(self):
        return self.records[0]

    @property
    def lowest_energy(self):
        return self.records[0][1]

    def __len__(self):
        return len(self.records)

    def to_rows(self):
        return [(format_bitstring(x), e, occ) for x, e, occ in self.records]

    def to_csv(self):
        lines = ["bitstring,energy,occurrences"]
        lines += [f"{b},{e!r},{occ}" for b, e, occ in self.to_rows()]
        return "\n".join(lines) + "\n"


@dataclass
class AnnealTrace:
    temperatures: list = field(default_factory=list)
    current_energy: list = field(default_factory=list)
    best_energy: list = field(default_factory=list)
    proposals: int = 0
    downhill_proposals: int = 0
    downhill_accepted: int = 0
    uphill_proposals: int = 0
    uphill_accepted: int = 0


def metropolis_accept(delta_e, temperature, u):
    """Acceptance test of one proposal given a uniform draw ``u`` in [0, 1)."""
    if delta_e <= 0:
        return True
    return math.exp(-delta_e / temperature) > u


def sa_minimize(objective, neighbor, schedule, seed=None, initial=None, rng=None):
    """Simulated annealing over an arbitrary state space.

    ``neighbor(state, rng)`` proposes a new state. Returns
    ``(best_state, best_energy, trace)``; the trace records, per temperature,
    the energy of the current and of the best state so far.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    state = initial
    e = float(objective(state))
    if not math.isfinite(e):
        raise NumericError("objective is not finite at the initial state")
    best, best_e = state, e
    trace = AnnealTrace()
    for t in schedule.temperatures():
        for _ in range(schedule.sweeps_per_temp):
            cand = neighbor(state, rng)
            ce = float(objective(cand))
            if not math.isfinite(ce):
                raise NumericError("objective returned a non-finite value")
            delta = ce - e
            trace.proposals += 1
            if delta <= 0:
                trace.downhill_proposals += 1
                trace.downhill_accepted += 1
                state, e = cand, ce
            else:
                trace.uphill_proposals += 1
                if metropolis_accept(delta, t, rng.random()):
                    trace.uphill_accepted += 1
                    state, e = cand, ce
            if e < best_e:
                best, best_e = state, e
        trace.temperatures.append(float(t))
        trace.current_energy.append(e)
        trace.best_energy.append(best_e)
    return best, best_e, trace


# -- compiled kernels --------------------------------------------------------


def _coupling(Q):
    q = np.asarray(Q.q, dtype=np.float64)
    w = q + q.T
    np.fill_diagonal(w, 0.0)
    return np.ascontiguousarray(w), np.ascontiguousarray(np.diag(q).copy())


@njit(cache=True)
def _fields(w, d, x):
    n = x.shape[0]
    h = d.copy()
    for i in range(n):
        if x[i]:
            for j in range(n):
                h[j] += w[j, i]
    return h


@njit(cache=True)
def _flip(w, h, x, i):
    s = 1.0 - 2.0 * x[i]
    x[i] = 1 - x[i]
    for j in range(x.shape[0]):
        h[j] += s * w[j, i]


@njit(cache=True)
def _anneal_reads(w, d, x0, temps, iters, u):
    reads, n = x0.shape
    out = np.empty_like(x0)
    for r in range(reads):
        x = x0[r].copy()
        h = _fields(w, d, x)
        e = 0.0
        best_e = 0.0
        out[r] = x
        k = 0
        for t in temps:
            for _ in range(iters):
                i = k % n
                de = (1.0 - 2.0 * x[i]) * h[i]
                if de <= 0.0 or math.exp(-de / t) > u[r, k]:
                    _flip(w, h, x, i)
                    e += de
                    if e < best_e:
                        best_e = e
                        out[r] = x
                k += 1
    return out


@njit(cache=True)
def _select(weights, u):
    total = weights.sum()
    m = weights.shape[0]
    if not total > 0.0:
        return min(int(u * m), m - 1)
    acc = 0.0
    target = u * total
    for k in range(m):
        acc += weights[k]
        if target < acc:
            return k
    return m - 1


@njit(cache=True)
def _psi(h, x, v):
    # psi_v(k) = exp(-E_k / 2v); shifted by the lowest neighbour energy
    n = x.shape[0]
    de = np.empty(n)
    for i in range(n):
        de[i] = (1.0 - 2.0 * x[i]) * h[i]
    lo = de.min()
    wts = np.empty(n)
    for i in range(n):
        wts[i] = math.exp(-(de[i] - lo) / (2.0 * v))
    return wts, de


@njit(cache=True)
def _transition(w, h, x, v, rng):
    wts, de = _psi(h, x, v)
    i = _select(wts, rng.random())
    _flip(w, h, x, i)
    return de[i]


@njit(cache=True)
def _local_opt(w, h, x):
    n = x.shape[0]
    gain = 0.0
    while True:
        best_i = -1
        best_de = 0.0
        for i in range(n):
            de = (1.0 - 2.0 * x[i]) * h[i]
            if de < best_de:
                best_de = de
                best_i = i
        if best_i < 0:
            return gain
        _flip(w, h, x, best_i)
        gain += best_de


@njit(cache=True)
def _qa_run(w, d, x, e0, v, t_max, t_drill, t_loc, jump, rng):
    n = x.shape[0]
    h = _fields(w, d, x)
    e = e0
    v_min = e
    best = x.copy()
    t = 0
    while t < t_max:
        j = 0
        while True:
            i = 0
            while True:
                e += _transition(w, h, x, v, rng)
                t += 1
                if e < v_min:
                    v_min = e
                    best[:] = x
                    i = 0
                    j = 0
                else:
                    i += 1
                if i > t_loc or t >= t_max:
                    break
            e += _local_opt(w, h, x)
            if e < v_min:
                v_min = e
                best[:] = x
                j = 0
            else:
                j += 1
            if j >= t_drill or t >= t_max:
                break
        # restart: a random walk of `jump` single flips from the current point
        for _ in range(jump):
            k = min(int(rng.random() * n), n - 1)
            de = (1.0 - 2.0 * x[k]) * h[k]
            _flip(w, h, x, k)
            e += de
        e += _local_opt(w, h, x)
        if e < v_min:
            v_min = e
            best[:] = x
    return best


# -- public API --------------------------------------------------------------


def _read_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def qubo_anneal(Q, schedule=None, reads=100, seed=0):
    """Multi-read single-flip Metropolis sampler.

    Read ``r`` draws its random initial bitstring and one uniform per proposal
    from its own generator seeded with ``(seed, r)``, then visits variables in
    index order, one proposal per step. The lowest-energy state seen in a read
    is what that read reports.
    """
    if Q.n == 0:
        raise DomainError("cannot anneal a problem with zero variables")
    if reads < 1:
        raise DomainError("reads must be at least 1")
    if schedule is None:
        schedule = AnnealSchedule.default_for(Q.n)
    w, d = _coupling(Q)
    temps = schedule.temperatures()
    iters = int(schedule.sweeps_per_temp)
    steps = len(temps) * iters
    per_chunk = max(1, _UNIFORM_BUDGET // max(steps, 1))
    states = []
    for start in range(0, reads, per_chunk):
        m = min(per_chunk, reads - start)
        x0 = np.empty((m, Q.n), dtype=np.int64)
        u = np.empty((m, steps))
        for k in range(m):
            rng = _read_rng(seed, start + k)
            x0[k] = rng.integers(0, 2, size=Q.n)
            u[k] = rng.random(steps)
        states.append(_anneal_reads(w, d, x0, temps, iters, u))
    return SampleSet.from_reads(Q, np.concatenate(states), seed)


def neighbor_weights(current, Q, cfg):
    """Normalised selection probabilities over the single-flip neighbours."""
    x = as_bitstring(current, Q.n).astype(np.int64)
    w, d = _coupling(Q)
    wts, _ = _psi(_fields(w, d, x), x, float(cfg.v))
    total = wts.sum()
    if not total > 0:
        return np.full(Q.n, 1.0 / Q.n)
    return wts / total


def quantum_transition(current, Q, cfg=None, seed=None, rng=None):
    """Move to one single-flip neighbour drawn with probability proportional
    to ``exp(-E(k) / 2v)``."""
    cfg = cfg or QaConfig()
    if rng is None:
        rng = np.random.default_rng(seed)
    x = as_bitstring(current, Q.n).astype(np.int64)
    if Q.n == 0:
        raise DomainError("no neighbours for a zero-length bitstring")
    w, d = _coupling(Q)
    h = _fields(w, d, x)
    _transition(w, h, x, float(cfg.v), rng)
    return x.astype(np.int8)


def qa_minimize(Q, cfg=None, seed=0, initial=None):
    """Quantum-transition annealing: transitions, local descent, drilling and
    random-trajectory restarts within a budget of ``cfg.t_max`` transitions.

    Returns ``(best_bitstring, v_min)``.
    """
    cfg = cfg or QaConfig()
    if Q.n == 0:
        raise DomainError("cannot anneal a problem with zero variables")
    rng = np.random.default_rng(seed)
    if initial is None:
        x = rng.integers(0, 2, size=Q.n).astype(np.int64)
    else:
        x = as_bitstring(initial, Q.n).astype(np.int64)
    w, d = _coupling(Q)
    best = _qa_run(w, d, x, energy(Q, x), float(cfg.v), int(cfg.t_max), int(cfg.t_drill),
                   int(cfg.t_loc), cfg.jump_length, rng)
    best = best.astype(np.int8)
    return best, energy(Q, best)


def qa_sample(Q, cfg=None, reads=1, seed=0):
    """Run :func:`qa_minimize` once per read and aggregate into a SampleSet."""
    if reads < 1:
        raise DomainError("reads must be at least 1")
    states = [qa_minimize(Q, cfg, seed=[int(seed), r])[0] for r in range(reads)]
    return SampleSet.from_reads(Q, states, seed)


def _all_bitstrings(n, start, stop):
    k = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((k[:, None] >> shifts) & 1).astype(np.int8)


def brute_force_qubo(Q, chunk=1 << 16):
    """Exhaustive minimum; ties go to the bitstring with the lowest binary value."""
    n = Q.n
    if n > BRUTE_FORCE_MAX_N:
        raise SizeError(f"brute force limited to {BRUTE_FORCE_MAX_N} variables, got {n}")
    if n == 0:
        return np.zeros(0, dtype=np.int8), Q.offset
    best_x, best_e = None, math.inf
    total = 1 << n
    for start in range(0, total, chunk):
        xs = _all_bitstrings(n, start, min(start + chunk, total))
        es = energies(Q, xs)
        k = int(np.argmin(es))
        if es[k] < best_e:
            best_e, best_x = float(es[k]), xs[k].copy()
    return best_x, energy(Q, best_x)


def exact_sample(Q):
    x, _ = brute_force_qubo(Q)
    return SampleSet.from_reads(Q, [x], None)
