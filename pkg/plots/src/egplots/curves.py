"""Load per-worker metric columns from a training CSV and draw them as one
mean line with a shaded min-max band per input file.

Expected CSV schema (the trainer's public metrics format): a header row of
  step, epoch, train_loss_mean, rank0_acc, aggregate_acc,
  pairwise_disagreement, val_loss_r0..rN, val_acc_r0..rN
followed by one numeric row per evaluation point.
"""

import csv
import re
from dataclasses import dataclass

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure


class SchemaError(ValueError):
    """The CSV does not carry the columns a curve needs."""


@dataclass
class CurveBundle:
    """One file's curves: per-worker series plus their mean and range."""

    label: str
    steps: np.ndarray
    epochs: np.ndarray
    series: tuple  # one array per worker, all the same length
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        n = len(self.steps)
        lengths = {len(s) for s in self.series} | {
            len(self.epochs), len(self.mean), len(self.lo), len(self.hi)
        }
        if lengths != {n}:
            raise ValueError(f"curve series disagree on length: {sorted(lengths)}")
        if not (np.all(self.lo <= self.mean) and np.all(self.mean <= self.hi)):
            raise ValueError("band bounds must bracket the mean pointwise")


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise SchemaError(f"{path}: need a header row and at least one data row")
    header, data = rows[0], rows[1:]
    for row in data:
        if len(row) != len(header):
            raise SchemaError(f"{path}: row with {len(row)} cells, header has {len(header)}")
    return header, data


def load_curves(path, metric="val_acc", label=None):
    """Pull one metric's per-worker columns out of a metrics CSV.

    The band is the pointwise min and max across workers, per the range
    (not standard deviation) convention of the figures this mimics.
    """
    header, data = _read_rows(path)
    for required in ("step", "epoch"):
        if required not in header:
            raise SchemaError(f"{path}: missing column {required}")

    pattern = re.compile(re.escape(metric) + r"_r(\d+)$")
    found = {}
    for idx, name in enumerate(header):
        m = pattern.fullmatch(name)
        if m:
            found[int(m.group(1))] = idx
    if sorted(found) != list(range(len(found))) or not found:
        raise SchemaError(f"{path}: missing column {metric}_r0 (no per-worker columns for {metric!r})")

    def column(idx, cast=float):
        return np.array([cast(row[idx]) for row in data])

    series = tuple(column(found[i]) for i in range(len(found)))
    stacked = np.stack(series, axis=1)
    return CurveBundle(
        label=str(path) if label is None else label,
        steps=column(header.index("step"), int),
        epochs=column(header.index("epoch")),
        series=series,
        mean=stacked.mean(axis=1),
        lo=stacked.min(axis=1),
        hi=stacked.max(axis=1),
    )


def _build_figure(bundles, metric):
    fig = Figure(figsize=(8.0, 5.0))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    for bundle in bundles:
        (line,) = ax.plot(bundle.steps, bundle.mean, linewidth=1.8, label=bundle.label)
        ax.fill_between(
            bundle.steps,
            bundle.lo,
            bundle.hi,
            alpha=0.25,
            linewidth=0,
            color=line.get_color(),
        )
    ax.set_xlabel("step")
    ax.set_ylabel(metric.replace("_", " "))
    ax.legend(loc="best")
    fig.tight_layout()
    return fig


def render_curves(labeled_paths, out_png, metric="val_acc"):
    """Render one panel with a mean line plus min-max band per labeled CSV.

    labeled_paths is a sequence of (label, csv_path). Returns the loaded
    CurveBundles in input order.
    """
    if not labeled_paths:
        raise ValueError("nothing to plot: no labeled CSVs given")
    bundles = [load_curves(path, metric=metric, label=label) for label, path in labeled_paths]
    fig = _build_figure(bundles, metric)
    fig.savefig(out_png, dpi=120, format="png")
    return bundles
