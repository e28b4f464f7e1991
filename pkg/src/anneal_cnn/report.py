"""Result tables, CSV round-tripping and SVG charts."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import matplotlib
from matplotlib.figure import Figure

from .errors import DomainError, FormatError

COLUMNS = ("test", "regime", "loss", "lr", "index", "val_acc", "test_acc", "wall_ms", "seed")
MEAN_INDEX = "mean"

REGIME_ORDER = {"bp": 0, "sa": 1, "qa": 2}
LOSS_ORDER = {"mse": 0, "ce": 1}
COLORS = {"bp": "#1f77b4", "sa": "#d62728", "qa": "#2ca02c"}
LINESTYLES = {"mse": "-", "ce": "--"}


def sig6(x):
    return float(f"{x:.6g}")


def fmt6(x):
    return f"{x:.6g}"


@dataclass
class ResultRow:
    test: str
    regime: str
    loss: str
    lr: float
    index: object  # fold / epoch / subset size, or "mean"
    val_acc: float | None
    test_acc: float | None
    wall_ms: int
    seed: int

    def __post_init__(self):
        self.lr = sig6(self.lr)
        for name in ("val_acc", "test_acc"):
            v = getattr(self, name)
            if v is not None:
                if not 0.0 <= v <= 100.0:
                    raise DomainError(f"{name} {v} outside [0, 100]")
                setattr(self, name, sig6(v))
        self.wall_ms = int(self.wall_ms)
        if self.wall_ms < 0:
            raise DomainError("wall time must be non-negative")
        if self.index != MEAN_INDEX:
            self.index = int(self.index)

    @property
    def is_summary(self):
        return self.index == MEAN_INDEX

    def key(self):
        idx = (1, 0) if self.is_summary else (0, self.index)
        return (self.test, REGIME_ORDER.get(self.regime, 9), self.regime,
                LOSS_ORDER.get(self.loss, 9), self.loss, -self.lr, idx)

    def cells(self):
        return [self.test, self.regime, self.loss, fmt6(self.lr), str(self.index),
                "" if self.val_acc is None else fmt6(self.val_acc),
                "" if self.test_acc is None else fmt6(self.test_acc),
                str(self.wall_ms), str(self.seed)]


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def add(self, row):
        k = row.key()
        if any(r.key() == k for r in self.rows):
            raise DomainError(f"duplicate result row for {k}")
        self.rows.append(row)

    def sorted(self):
        return ResultTable(sorted(self.rows, key=ResultRow.key))

    def data_rows(self):
        return [r for r in self.rows if not r.is_summary]

    def summary_rows(self):
        return [r for r in self.rows if r.is_summary]

    def series(self):
        """Data rows grouped by (regime, loss, lr), in display order."""
        groups = {}
        for r in sorted(self.data_rows(), key=ResultRow.key):
            groups.setdefault((r.regime, r.loss, r.lr), []).append(r)
        return groups

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        return isinstance(other, ResultTable) and self.rows == other.rows


def emit_csv(table, path):
    with open(path, "w", newline="") as fh:
        fh.write(to_csv(table))
    return path


def to_csv(table):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(COLUMNS)
    for row in table.rows:
        w.writerow(row.cells())
    return buf.getvalue()


def parse_csv(text):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty CSV") from None
    if tuple(header) != COLUMNS:
        raise FormatError(f"unexpected CSV header {header}")
    table = ResultTable()
    for lineno, cells in enumerate(reader, start=2):
        if not cells:
            continue
        if len(cells) != len(COLUMNS):
            raise FormatError(f"line {lineno}: expected {len(COLUMNS)} cells, got {len(cells)}")
        test, regime, loss, lr, index, val, tst, wall, seed = cells
        table.rows.append(ResultRow(
            test, regime, loss, float(lr),
            index if index == MEAN_INDEX else int(index),
            float(val) if val else None, float(tst) if tst else None,
            int(wall), int(seed)))
    return table


def read_csv(path):
    with open(path, newline="") as fh:
        return parse_csv(fh.read())


# -- charts ------------------------------------------------------------------

X_LABELS = {"crossval": "Fold", "epochs": "Epoch", "datasize": "Training samples"}


def _label(regime, loss, lr, show_lr):
    text = f"CNN-{regime.upper()} {loss.upper()}"
    return f"{text} lr={lr:g}" if show_lr else text


def _plot(ax, groups, metric, kind, show_lr, prefix=""):
    xs_all = sorted({r.index for rows in groups.values() for r in rows})
    pos = {x: i for i, x in enumerate(xs_all)}
    n_series = max(len(groups), 1)
    width = 0.8 / n_series
    for s, ((regime, loss, lr), rows) in enumerate(groups.items()):
        pts = [(r.index, getattr(r, metric)) for r in rows if getattr(r, metric) is not None]
        if not pts:
            continue
        label = _label(regime, loss, lr, show_lr)
        color = COLORS.get(regime)
        # the gid becomes the SVG group id, one group per series
        gid = f"{prefix}series-{regime}-{loss}-{lr:g}"
        if kind == "line":
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", markersize=3,
                    linestyle=LINESTYLES.get(loss, "-"), color=color, label=label, gid=gid)
        else:
            offs = [pos[p[0]] - 0.4 + width * (s + 0.5) for p in pts]
            bars = ax.bar(offs, [p[1] for p in pts], width=width, color=color, label=label,
                          hatch="//" if loss == "ce" else None, edgecolor="black", linewidth=0.3)
            for k, patch in enumerate(bars):
                patch.set_gid(f"{gid}-bar{k}")
    if kind == "bar":
        ax.set_xticks(range(len(xs_all)))
        ax.set_xticklabels([str(x) for x in xs_all])


def emit_svg(table, kind, path, metric="accuracy"):
    """Render ``table`` as a self-contained SVG line or bar chart.

    ``metric="accuracy"`` draws validation and test accuracy panels (percent,
    axis fixed to 0-100); ``metric="time"`` draws wall-clock milliseconds.
    """
    if kind not in ("line", "bar"):
        raise DomainError(f"chart kind must be 'line' or 'bar', got {kind!r}")
    if metric not in ("accuracy", "time"):
        raise DomainError(f"metric must be 'accuracy' or 'time', got {metric!r}")
    groups = table.series()
    if not groups:
        raise DomainError("cannot chart an empty result table")
    test = next(iter(groups.values()))[0].test
    show_lr = len({k[2] for k in groups}) > 1
    xlabel = X_LABELS.get(test, "Index")

    with matplotlib.rc_context({"svg.hashsalt": "anneal-cnn", "svg.fonttype": "path",
                                "font.size": 8}):
        if metric == "accuracy":
            fig = Figure(figsize=(10, 4))
            axes = fig.subplots(1, 2, sharey=True)
            for ax, col, title in zip(axes, ("val_acc", "test_acc"),
                                      ("Validation accuracy", "Test accuracy")):
                _plot(ax, groups, col, kind, show_lr, prefix=col.split("_")[0] + "-")
                ax.set_title(title)
                ax.set_xlabel(xlabel)
                ax.set_ylim(0, 100)
                ax.grid(alpha=0.3)
            axes[0].set_ylabel("Accuracy (%)")
            handles, labels = axes[1].get_legend_handles_labels()
            if not handles:
                handles, labels = axes[0].get_legend_handles_labels()
        else:
            fig = Figure(figsize=(6, 4))
            ax = fig.subplots()
            _plot(ax, groups, "wall_ms", kind, show_lr)
            ax.set_title("Execution time")
            ax.set_xlabel(xlabel)
            ax.set_ylabel("Execution time (ms)")
            ax.set_ylim(bottom=0)
            ax.grid(alpha=0.3)
            handles, labels = ax.get_legend_handles_labels()
        fig.legend(handles, labels, loc="upper center", ncol=min(len(labels), 6),
                   frameon=False, bbox_to_anchor=(0.5, 1.0))
        fig.tight_layout(rect=(0, 0, 1, 0.88))
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path
