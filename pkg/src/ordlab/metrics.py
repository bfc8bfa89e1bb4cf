"""Per-epoch metric rows and their CSV persistence."""

import csv
from dataclasses import astuple, dataclass, fields

COLUMNS = (
    "run_id",
    "epoch",
    "step",
    "event",
    "train_loss",
    "train_acc",
    "test_loss",
    "test_acc",
    "l2_norm",
    "K_current",
    "t",
    "wall_seconds",
)


@dataclass
class MetricsRecord:
    run_id: str
    epoch: int
    step: int
    event: str = "epoch"
    train_loss: float = float("nan")
    train_acc: float = float("nan")
    test_loss: float = float("nan")
    test_acc: float = float("nan")
    l2_norm: float = float("nan")
    K_current: int = 1
    t: float = 0.0
    wall_seconds: float = 0.0


assert tuple(f.name for f in fields(MetricsRecord)) == COLUMNS


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for rec in records:
            writer.writerow([_fmt(v) for v in astuple(rec)])


def read_metrics_csv(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                MetricsRecord(
                    run_id=row["run_id"],
                    epoch=int(row["epoch"]),
                    step=int(row["step"]),
                    event=row["event"],
                    train_loss=float(row["train_loss"]),
                    train_acc=float(row["train_acc"]),
                    test_loss=float(row["test_loss"]),
                    test_acc=float(row["test_acc"]),
                    l2_norm=float(row["l2_norm"]),
                    K_current=int(row["K_current"]),
                    t=float(row["t"]),
                    wall_seconds=float(row["wall_seconds"]),
                )
            )
    return out


def strip_wall_seconds(text):
    """CSV text with the ``wall_seconds`` column removed, for determinism comparisons."""
    rows = list(csv.reader(text.splitlines()))
    if not rows or "wall_seconds" not in rows[0]:
        return text
    col = rows[0].index("wall_seconds")
    return "\n".join(",".join(r[:col] + r[col + 1:]) for r in rows)
