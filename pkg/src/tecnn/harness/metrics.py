"""Per-batch / per-epoch telemetry rows and their CSV form."""
import csv
from dataclasses import astuple, dataclass, fields

HEADER = "run_id,epoch,batch,split,loss,top1,te_mean,te_std,active_pairs,batch_ms,epoch_s"
TIMING_COLUMNS = ("batch_ms", "epoch_s")


@dataclass
class MetricsRow:
    run_id: str
    epoch: int
    batch: int
    split: str
    loss: float
    top1: float
    te_mean: float
    te_std: float
    active_pairs: int
    batch_ms: float
    epoch_s: float


_INT_FIELDS = {"epoch", "batch", "active_pairs"}
_STR_FIELDS = {"run_id", "split"}


def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    return f"{float(value):.6g}"


def format_row(row):
    return ",".join(_fmt(v) for v in astuple(row))


def emit_metrics(rows, path):
    """Write rows as UTF-8 CSV with ``\\n`` line endings; reals get 6 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(HEADER + "\n")
        for row in rows:
            fh.write(format_row(row) + "\n")


def read_metrics(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if ",".join(reader.fieldnames or []) != HEADER:
            raise ValueError(f"unexpected metrics header in {path}")
        for rec in reader:
            kwargs = {}
            for f in fields(MetricsRow):
                raw = rec[f.name]
                if f.name in _STR_FIELDS:
                    kwargs[f.name] = raw
                elif f.name in _INT_FIELDS:
                    kwargs[f.name] = int(raw)
                else:
                    kwargs[f.name] = float(raw)
            rows.append(MetricsRow(**kwargs))
    return rows
