"""QUBO and Ising models, form conversions and the loss encoders.

A QUBO instance is stored as a dense ``n x n`` matrix ``q`` together with a
constant ``offset``; its energy for a bitstring ``x`` is ``x @ q @ x + offset``.
Upper-triangular storage is canonical.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, FormatError

FORMS = ("general", "symmetric", "upper_triangular")


@dataclass(frozen=True)
class QuboMatrix:
    q: np.ndarray
    form: str = "general"
    offset: float = 0.0

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise DimensionError(f"QUBO matrix must be square, got shape {q.shape}", axis="q")
        if self.form not in FORMS:
            raise DomainError(f"unknown QUBO form {self.form!r}")
        if self.form == "symmetric" and not np.array_equal(q, q.T):
            raise DomainError("matrix flagged symmetric is not symmetric")
        if self.form == "upper_triangular" and np.any(np.tril(q, -1)):
            raise DomainError("matrix flagged upper_triangular has entries below the diagonal")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n(self):
        return self.q.shape[0]

    def energy(self, x):
        return energy(self, x)

    def __eq__(self, other):
        if not isinstance(other, QuboMatrix):
            return NotImplemented
        return (self.form == other.form and self.offset == other.offset
                and np.array_equal(self.q, other.q))

    __hash__ = None


@dataclass(frozen=True)
class IsingModel:
    """``H(s) = sum_i a_i s_i + sum_{i<j} b_ij s_i s_j`` over spins in {-1, +1}.

    ``b`` is kept as a full ``n x n`` array whose diagonal and lower triangle
    are zero.
    """

    a: np.ndarray
    b: np.ndarray | None = None

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64).reshape(-1)
        n = a.shape[0]
        b = np.zeros((n, n)) if self.b is None else np.array(self.b, dtype=np.float64)
        if b.shape != (n, n):
            raise DimensionError(f"coupling matrix must be {n}x{n}, got {b.shape}", axis="b")
        if np.any(np.tril(b)):
            raise DomainError("couplings must be stored strictly above the diagonal")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self):
        return self.a.shape[0]

    def energy(self, spins):
        s = np.asarray(spins, dtype=np.float64)
        if s.shape != (self.n,):
            raise DimensionError(f"expected {self.n} spins, got shape {s.shape}", axis="spins")
        if not np.all(np.abs(s) == 1.0):
            raise DomainError("spins must be -1 or +1")
        return float(self.a @ s + s @ self.b @ s)


def as_bitstring(x, n=None):
    x = np.asarray(x)
    if x.ndim != 1:
        raise DimensionError(f"bitstring must be one-dimensional, got shape {x.shape}",
                             axis="bits")
    if n is not None and x.shape[0] != n:
        raise DimensionError(f"bitstring has length {x.shape[0]}, problem has {n} variables",
                             axis="bits")
    if not np.all((x == 0) | (x == 1)):
        raise DomainError("bitstring entries must be 0 or 1")
    return x.astype(np.int8)


def energy(Q, x):
    """``x^T Q x + offset``."""
    x = as_bitstring(x, Q.n).astype(np.float64)
    return float(x @ Q.q @ x + Q.offset)


def energies(Q, xs):
    """Vectorised :func:`energy` over the rows of ``xs``."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != Q.n:
        raise DimensionError(f"expected (m, {Q.n}) bitstrings, got {xs.shape}", axis="bits")
    return np.einsum("ki,ij,kj->k", xs, Q.q, xs) + Q.offset


def to_symmetric(Q):
    q = Q.q
    # (q_ij + q_ji) / 2 off the diagonal; the diagonal is its own transpose
    sym = (q + q.T) / 2.0
    np.fill_diagonal(sym, np.diag(q))
    return QuboMatrix(sym, "symmetric", Q.offset)


def to_upper_triangular(Q):
    q = Q.q
    upper = np.triu(q + q.T, k=1)
    upper[np.diag_indices_from(upper)] = np.diag(q)
    return QuboMatrix(upper, "upper_triangular", Q.offset)


def ising_to_qubo(model):
    """Substitute ``s = 2x - 1`` and collect terms; energies match exactly."""
    a, b = model.a, model.b
    pair = b + b.T
    q = 4.0 * b
    q[np.diag_indices_from(q)] = 2.0 * a - 2.0 * pair.sum(axis=1)
    offset = float(b.sum() - a.sum())
    return QuboMatrix(q, "upper_triangular", offset)


def _residual_vector(residuals, n_samples):
    r = np.asarray(residuals, dtype=np.float64).reshape(-1)
    if n_samples is None:
        n_samples = r.shape[0]
    if n_samples < 1:
        raise DomainError("cannot encode a batch of zero samples")
    if r.shape[0] != n_samples:
        raise DimensionError(f"{r.shape[0]} residuals for a batch of {n_samples}", axis="samples")
    if not np.all(np.isfinite(r)):
        raise DomainError("residuals must be finite")
    return r, n_samples


def mse_ising(residuals, n_samples=None):
    r, n = _residual_vector(residuals, n_samples)
    a = 2.0 / n * r
    b = np.triu(4.0 / n ** 2 * np.outer(r, r), k=1)
    return IsingModel(a, b)


def ce_ising(residuals, n_samples=None):
    """CE coefficients; ``residuals`` are ``pred - target`` as for MSE."""
    r, n = _residual_vector(residuals, n_samples)
    # a_i = -(1/N)(y_i - f_i) = r_i / N;  b_ij = -(1/N^2)(y_i - f_i)(y_j - f_j)
    a = r / n
    b = np.triu(-1.0 / n ** 2 * np.outer(r, r), k=1)
    return IsingModel(a, b)


def encode_mse_qubo(residuals, n_samples=None):
    return ising_to_qubo(mse_ising(residuals, n_samples))


def encode_ce_qubo(residuals, n_samples=None):
    return ising_to_qubo(ce_ising(residuals, n_samples))


def encode_loss_qubo(kind, residuals, n_samples=None):
    from .losses import LossKind

    if LossKind.parse(kind) is LossKind.MSE:
        return encode_mse_qubo(residuals, n_samples)
    return encode_ce_qubo(residuals, n_samples)


def decode_solution(x):
    """Indices of the variables set to 1."""
    x = as_bitstring(x)
    return frozenset(int(i) for i in np.flatnonzero(x))


def indices_to_bitstring(indices, n):
    x = np.zeros(n, dtype=np.int8)
    x[sorted(indices)] = 1
    return x


def bitstring_value(x):
    """Integer value of ``x`` read as a binary numeral, ``x[0]`` most significant."""
    v = 0
    for bit in np.asarray(x):
        v = (v << 1) | int(bit)
    return v


def format_bitstring(x):
    return "".join(str(int(b)) for b in np.asarray(x))


def parse_bitstring(text):
    text = text.strip()
    if not text or set(text) - {"0", "1"}:
        raise FormatError(f"not a bitstring: {text!r}")
    return np.array([int(c) for c in text], dtype=np.int8)


# -- text format -------------------------------------------------------------
#
#   <n> <form>
#   offset <value>
#   <i> <j> <value>        one line per nonzero coefficient
#
# Blank lines and lines starting with '#' are ignored.


def dumps(Q):
    out = io.StringIO()
    out.write(f"{Q.n} {Q.form}\n")
    out.write(f"offset {Q.offset!r}\n")
    for i, j in zip(*np.nonzero(Q.q)):
        out.write(f"{i} {j} {float(Q.q[i, j])!r}\n")
    return out.getvalue()


def loads(text):
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise FormatError("empty QUBO file")
    head = lines[0].split()
    if len(head) != 2 or head[1] not in FORMS:
        raise FormatError(f"bad header line {lines[0]!r}; expected '<n> <form>'")
    try:
        n = int(head[0])
    except ValueError:
        raise FormatError(f"bad variable count {head[0]!r}") from None
    if n < 0:
        raise FormatError("variable count must be non-negative")
    q = np.zeros((n, n))
    offset = 0.0
    seen_offset = False
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        try:
            if parts[0] == "offset" and len(parts) == 2:
                if seen_offset:
                    raise FormatError(f"line {lineno}: duplicate offset")
                offset = float(parts[1])
                seen_offset = True
                continue
            if len(parts) != 3:
                raise FormatError(f"line {lineno}: expected 'i j value', got {ln!r}")
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise FormatError(f"line {lineno}: cannot parse {ln!r}") from None
        if not (0 <= i < n and 0 <= j < n):
            raise FormatError(f"line {lineno}: index ({i}, {j}) out of range for n={n}")
        q[i, j] += v
    if not seen_offset:
        raise FormatError("missing offset line")
    return QuboMatrix(q, head[1], offset)


def save(Q, path):
    with open(path, "w") as fh:
        fh.write(dumps(Q))


def load(path):
    with open(path) as fh:
        return loads(fh.read())
