"""Aggregation of per-volume metrics and summary-table rendering.

CSV and JSON carry full float precision (shortest round-trip repr), so
emitting and parsing gives back identical values. Markdown uses display
precision: 3 decimals for Dice/SSIM values and means, 2 for their
standard deviations, 1 decimal for per-volume HD, 2 for the HD mean and
1 for its standard deviation. Rounding is half-up on the shortest decimal
representation of each float.
"""

from __future__ import annotations

import csv
import io
import json
import re
import statistics
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .metrics import MetricRecord

CSV_COLUMNS = ("volume_id", "task_label", "model", "dice", "hd", "hd_units", "hd_defined", "ssim")
AVERAGE_ID = "average"
METRICS = ("dice", "hd", "ssim")
UNDEFINED_MARK = "†"

# (mean decimals, std decimals) in markdown
MEAN_STD_DECIMALS = {"dice": (3, 2), "hd": (2, 1), "ssim": (3, 2)}
VALUE_DECIMALS = {"dice": 3, "hd": 1, "ssim": 3}


@dataclass(frozen=True)
class Stat:
    mean: float | None
    std: float | None
    n: int


@dataclass(frozen=True)
class AggregateRow:
    model: str
    dice: Stat
    hd: Stat
    ssim: Stat
    n: int
    hd_units: str
    hd_excluded: tuple[str, ...] = field(default=())  # volume ids with undefined HD


def _stat(values) -> Stat:
    values = [float(v) for v in values]
    if not values:
        return Stat(None, None, 0)
    mean = statistics.mean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return Stat(mean, std, len(values))


def aggregate(records, model: str | None = None) -> AggregateRow:
    """Mean and sample standard deviation (n - 1 divisor) of each metric.

    Records with undefined HD are left out of the HD statistics and listed
    in ``hd_excluded``.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    units = {r.hd_units for r in records}
    if len(units) > 1:
        raise ValueError(f"records mix HD units: {sorted(units)}")
    if model is None:
        model = records[0].model
    # sort so the float summation order does not depend on input order
    records = sorted(records, key=lambda r: _volume_key(r.volume_id))
    return AggregateRow(
        model=model,
        dice=_stat(r.dice for r in records),
        hd=_stat(r.hd for r in records if r.hd is not None),
        ssim=_stat(r.ssim for r in records),
        n=len(records),
        hd_units=units.pop(),
        hd_excluded=tuple(r.volume_id for r in records if r.hd is None),
    )


def _volume_key(volume_id: str):
    """Natural order: digit runs compare numerically ("v2" < "v10")."""
    parts = re.split(r"(\d+)", volume_id)
    return tuple((0, int(t), "") if t.isdigit() else (1, 0, t) for t in parts if t)


def model_order(records) -> list[str]:
    return sorted({r.model for r in records})


def _canonical(records):
    return sorted(records, key=lambda r: (_volume_key(r.volume_id), r.model))


def round_half_up(x: float, decimals: int) -> Decimal:
    q = Decimal(1).scaleb(-decimals)
    return Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP)


def fmt(x: float | None, decimals: int) -> str:
    if x is None:
        return "n/a"
    return f"{round_half_up(x, decimals):f}"


def fmt_stat(metric: str, s: Stat) -> str:
    dm, ds = MEAN_STD_DECIMALS[metric]
    if s.mean is None:
        return "n/a"
    return f"{fmt(s.mean, dm)} ± {fmt(s.std, ds)}"


def _aggregates_by_model(records, models):
    return [aggregate([r for r in records if r.model == m], m) for m in models]


def _num(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def _csv(records, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([r.volume_id, r.task_label, r.model, _num(r.dice), _num(r.hd), r.hd_units,
                    "true" if r.hd_defined else "false", _num(r.ssim)])
    for row in rows:
        for kind in ("mean", "std"):
            vals = {m: getattr(getattr(row, m), kind) for m in METRICS}
            w.writerow([AVERAGE_ID, kind, row.model, _num(vals["dice"]), _num(vals["hd"]),
                        row.hd_units, "true" if vals["hd"] is not None else "false",
                        _num(vals["ssim"])])
    return buf.getvalue()


def _json(records, rows) -> str:
    doc = {
        "columns": list(CSV_COLUMNS),
        "records": [
            {"volume_id": r.volume_id, "task_label": r.task_label, "model": r.model,
             "dice": r.dice, "hd": r.hd, "hd_units": r.hd_units, "hd_defined": r.hd_defined,
             "ssim": r.ssim}
            for r in records
        ],
        "aggregates": [asdict(row) for row in rows],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _markdown(records, rows, models) -> str:
    by_key = {(r.volume_id, r.model): r for r in records}
    volumes = []
    for r in records:
        if (r.volume_id, r.task_label) not in volumes:
            volumes.append((r.volume_id, r.task_label))
    header = ["Volume (task)"]
    for m in models:
        header += [f"{m} Dice", f"{m} HD", f"{m} SSIM"]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for vid, task in volumes:
        cells = [f"{vid}({task})" if task else vid]
        for m in models:
            r = by_key.get((vid, m))
            if r is None:
                cells += ["", "", ""]
                continue
            hd = fmt(r.hd, VALUE_DECIMALS["hd"]) if r.hd is not None else f"n/a{UNDEFINED_MARK}"
            cells += [fmt(r.dice, VALUE_DECIMALS["dice"]), hd, fmt(r.ssim, VALUE_DECIMALS["ssim"])]
        lines.append("| " + " | ".join(cells) + " |")
    cells = ["Average"]
    for row in rows:
        hd_cell = fmt_stat("hd", row.hd) + (UNDEFINED_MARK if row.hd_excluded else "")
        cells += [fmt_stat("dice", row.dice), hd_cell, fmt_stat("ssim", row.ssim)]
    lines.append("| " + " | ".join(cells) + " |")
    units = sorted({row.hd_units for row in rows})
    lines.append("")
    lines.append(f"HD units: {', '.join(units)}. Averages are mean ± sample standard deviation.")
    for row in rows:
        if row.hd_excluded:
            lines.append(f"{UNDEFINED_MARK} {row.model}: HD undefined (empty mask) for volume(s) "
                         f"{', '.join(row.hd_excluded)}; excluded from the HD average.")
    return "\n".join(lines) + "\n"


def emit_table(rows, per_volume, format: str = "markdown", models=None) -> str:
    """Render records and their per-model aggregates.

    Records are sorted by (volume id, model). ``rows`` may be None, in
    which case aggregates are computed from ``per_volume``. ``models``
    fixes the model column order (default: sorted names).
    """
    per_volume = _canonical(per_volume)
    if not per_volume:
        raise ValueError("nothing to emit")
    models = list(models) if models is not None else model_order(per_volume)
    if rows is None:
        rows = _aggregates_by_model(per_volume, models)
    else:
        order = {m: i for i, m in enumerate(models)}
        rows = sorted(rows, key=lambda r: order.get(r.model, len(order)))
    if format == "csv":
        return _csv(per_volume, rows)
    if format == "json":
        return _json(per_volume, rows)
    if format == "markdown":
        return _markdown(per_volume, rows, models)
    raise ValueError(f"unknown format {format!r}")


def _opt(text: str) -> float | None:
    return None if text == "" else float(text)


def parse_csv(text: str):
    """Inverse of ``emit_table(..., format="csv")``.

    Returns ``(records, averages)`` where ``averages`` maps
    ``(model, "mean"|"std")`` to a dict of metric values.
    """
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV columns {reader.fieldnames}")
    records, averages = [], {}
    for row in reader:
        if row["volume_id"] == AVERAGE_ID:
            averages[(row["model"], row["task_label"])] = {
                "dice": _opt(row["dice"]), "hd": _opt(row["hd"]), "ssim": _opt(row["ssim"])}
            continue
        records.append(MetricRecord(
            volume_id=row["volume_id"], task_label=row["task_label"], model=row["model"],
            dice=float(row["dice"]), hd=_opt(row["hd"]) if row["hd_defined"] == "true" else None,
            hd_units=row["hd_units"], ssim=float(row["ssim"])))
    return records, averages


def parse_json(text: str):
    doc = json.loads(text)
    records = [MetricRecord(volume_id=r["volume_id"], task_label=r["task_label"], model=r["model"],
                            dice=r["dice"], hd=r["hd"], hd_units=r["hd_units"], ssim=r["ssim"])
               for r in doc["records"]]
    return records, doc["aggregates"]


def read_records(path) -> list[MetricRecord]:
    """Load MetricRecords from a CSV or JSON results file (aggregate rows dropped)."""
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return parse_json(text)[0]
    return parse_csv(text)[0]
