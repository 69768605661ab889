"""Evaluation and the metrics CSV.

One MetricsRecord per evaluation point. The CSV schema is part of the
package's external surface (the plotting frontend consumes it):

    step,epoch,train_loss_mean,rank0_acc,aggregate_acc,
    pairwise_disagreement,val_loss_r0..rN,val_acc_r0..rN

Floats are written with 17 significant digits so parsing the file back
recovers them bit for bit.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass
class MetricsRecord:
    step: int
    epoch: float
    train_loss_mean: float
    rank0_acc: float
    aggregate_acc: float
    pairwise_disagreement: float
    val_loss: tuple
    val_acc: tuple


def evaluate(spec, params, ds, chunk=4096):
    """Mean loss and accuracy of one parameter vector on a dataset.

    Rows are processed in fixed-size chunks to bound memory; the loss is
    accumulated per row so chunking does not change the result beyond
    rounding.
    """
    n = len(ds)
    if n == 0:
        raise ValueError("evaluate on an empty dataset")
    total_loss = 0.0
    correct = 0
    for start in range(0, n, chunk):
        x = ds.features[start : start + chunk]
        y = ds.labels[start : start + chunk]
        logits, _ = nn.forward(spec, params, x)
        loss, _ = nn.softmax_ce(logits, y)
        total_loss += loss * x.shape[0]
        correct += int((logits.argmax(axis=1) == y).sum())
    return total_loss / n, correct / n


def aggregate_model(params_list):
    """Plain parameter average across workers (rank-order accumulation)."""
    s = params_list[0].copy()
    for p in params_list[1:]:
        s += p
    return s / len(params_list)


def pairwise_disagreement(params_list):
    """Sum of squared distances over unordered worker pairs."""
    total = 0.0
    for i in range(len(params_list)):
        for k in range(i + 1, len(params_list)):
            d = params_list[i] - params_list[k]
            total += float(d @ d)
    return total


HEADER_PREFIX = (
    "step",
    "epoch",
    "train_loss_mean",
    "rank0_acc",
    "aggregate_acc",
    "pairwise_disagreement",
)


def _header(workers):
    cols = list(HEADER_PREFIX)
    cols += [f"val_loss_r{i}" for i in range(workers)]
    cols += [f"val_acc_r{i}" for i in range(workers)]
    return cols


def _fmt(x):
    return format(float(x), ".17g")


def write_metrics(path, records):
    if not records:
        raise ValueError("no records to write")
    workers = len(records[0].val_acc)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(_header(workers))
        for r in records:
            if len(r.val_loss) != workers or len(r.val_acc) != workers:
                raise ValueError(
                    f"record at step {r.step} has {len(r.val_acc)} workers, "
                    f"expected {workers}"
                )
            row = [str(int(r.step)), _fmt(r.epoch), _fmt(r.train_loss_mean),
                   _fmt(r.rank0_acc), _fmt(r.aggregate_acc),
                   _fmt(r.pairwise_disagreement)]
            row += [_fmt(v) for v in r.val_loss]
            row += [_fmt(v) for v in r.val_acc]
            w.writerow(row)


def read_metrics(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f"{path}: empty metrics file")
    header = rows[0]
    extra = len(header) - len(HEADER_PREFIX)
    workers = extra // 2
    if workers < 1 or header != _header(workers):
        raise ValueError(f"{path}: unexpected metrics header {header}")
    records = []
    for row in rows[1:]:
        vals = [float(v) for v in row[1:]]
        k = len(HEADER_PREFIX) - 1
        records.append(
            MetricsRecord(
                step=int(row[0]),
                epoch=vals[0],
                train_loss_mean=vals[1],
                rank0_acc=vals[2],
                aggregate_acc=vals[3],
                pairwise_disagreement=vals[4],
                val_loss=tuple(vals[k : k + workers]),
                val_acc=tuple(vals[k + workers : k + 2 * workers]),
            )
        )
    return records
