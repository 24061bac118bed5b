"""Long-format choice data: one row per individual x task x alternative."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

ID_COLUMNS = ("individual_id", "task_id", "alt_id", "chosen", "available")


class DataError(ValueError):
    """Malformed or inconsistent choice data, with its location when known."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.column = column


@dataclass(frozen=True, eq=False)
class ChoiceDataset:
    """Choice tasks stacked along the first axis.

    ``chosen`` holds 1-based alternative numbers.  Every entry of
    ``columns`` is a ``(T, I)`` array, NaN where an alternative is absent.
    """

    individual_ids: tuple[str, ...]
    task_ids: tuple[str, ...]
    chosen: np.ndarray
    available: np.ndarray
    columns: Mapping[str, np.ndarray]

    def __post_init__(self):
        t, i = self.available.shape
        if len(self.individual_ids) != t or len(self.task_ids) != t or self.chosen.shape != (t,):
            raise DataError("task identifiers, choices and availability disagree in length")
        for name, col in self.columns.items():
            if col.shape != (t, i):
                raise DataError(f"column has shape {col.shape}, expected {(t, i)}", column=name)
        if np.any((self.chosen < 1) | (self.chosen > i)):
            raise DataError("chosen alternative outside 1..I")
        if not np.all(self.available[np.arange(t), self.chosen - 1]):
            bad = int(np.flatnonzero(~self.available[np.arange(t), self.chosen - 1])[0])
            raise DataError(f"chosen alternative unavailable in task {self.task_key(bad)}")

    @property
    def n_tasks(self) -> int:
        return self.available.shape[0]

    @property
    def n_alternatives(self) -> int:
        return self.available.shape[1]

    @property
    def n_individuals(self) -> int:
        return len(set(self.individual_ids))

    def task_key(self, t: int) -> str:
        return f"individual {self.individual_ids[t]} task {self.task_ids[t]}"

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise DataError(f"missing column {name!r}", column=name) from None

    def task_level(self, name: str) -> np.ndarray:
        """Per-task value of a column that is constant across available alternatives."""
        col = self.column(name)
        vals = np.where(self.available, col, np.nan)
        first = vals[np.arange(self.n_tasks), np.argmax(self.available, axis=1)]
        varies = np.any(self.available & ~np.isclose(vals, first[:, None], equal_nan=False), axis=1)
        if np.any(varies):
            t = int(np.flatnonzero(varies)[0])
            raise DataError(f"value varies across alternatives in {self.task_key(t)}", column=name)
        return first

    def check_complete(self, names: Sequence[str], task_level: Sequence[str] = ()) -> None:
        """Reject missing values of referenced columns on available rows."""
        for name in list(names) + list(task_level):
            col = self.column(name)
            bad = self.available & ~np.isfinite(col)
            if np.any(bad):
                t = int(np.flatnonzero(bad.any(axis=1))[0])
                raise DataError(f"missing value in {self.task_key(t)}", column=name)
        for name in task_level:
            self.task_level(name)

    def demographics(self, names: Sequence[str]) -> dict[str, np.ndarray]:
        return {n: self.task_level(n) for n in names}

    def subset(self, tasks) -> "ChoiceDataset":
        idx = np.asarray(tasks)
        return ChoiceDataset(
            tuple(self.individual_ids[k] for k in idx),
            tuple(self.task_ids[k] for k in idx),
            self.chosen[idx],
            self.available[idx],
            {k: v[idx] for k, v in self.columns.items()},
        )

    def with_column(self, name: str, values: np.ndarray) -> "ChoiceDataset":
        cols = dict(self.columns)
        cols[name] = np.asarray(values, dtype=float)
        return ChoiceDataset(self.individual_ids, self.task_ids, self.chosen, self.available, cols)

    def equals(self, other: "ChoiceDataset") -> bool:
        return (
            self.individual_ids == other.individual_ids
            and self.task_ids == other.task_ids
            and np.array_equal(self.chosen, other.chosen)
            and np.array_equal(self.available, other.available)
            and list(self.columns) == list(other.columns)
            and all(np.array_equal(self.columns[k], other.columns[k], equal_nan=True) for k in self.columns)
        )


def _format(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def to_csv_text(ds: ChoiceDataset) -> str:
    """Canonical serialisation: every alternative of every task, floats in shortest round-trip form."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(ds.columns)
    w.writerow(list(ID_COLUMNS) + names)
    cols = [ds.columns[n] for n in names]
    for t in range(ds.n_tasks):
        for j in range(ds.n_alternatives):
            row = [ds.individual_ids[t], ds.task_ids[t], j + 1, int(ds.chosen[t] == j + 1), int(ds.available[t, j])]
            w.writerow(row + [_format(c[t, j]) for c in cols])
    return buf.getvalue()


def export_csv(ds: ChoiceDataset, path) -> None:
    Path(path).write_text(to_csv_text(ds))


def _parse_flag(text: str, line: int, column: str) -> int:
    if text.strip() not in ("0", "1"):
        raise DataError(f"expected 0 or 1, got {text!r}", line, column)
    return int(text)


def _parse_float(text: str, line: int, column: str) -> float:
    s = text.strip()
    if s == "":
        return math.nan
    try:
        v = float(s)
    except ValueError:
        raise DataError(f"malformed number {text!r}", line, column) from None
    if not math.isfinite(v):
        raise DataError(f"non-finite number {text!r}", line, column)
    return v


def parse_csv_text(text: str) -> ChoiceDataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty file", 1) from None
    for req in ID_COLUMNS[:4]:
        if req not in header:
            raise DataError("required column absent from header", 1, req)
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header", 1)
    pos = {h: k for k, h in enumerate(header)}
    value_cols = [h for h in header if h not in ID_COLUMNS]
    has_avail = "available" in pos

    tasks: dict[tuple[str, str], dict] = {}
    max_alt = 0
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, got {len(row)}", line)
        ind, task = row[pos["individual_id"]].strip(), row[pos["task_id"]].strip()
        alt_txt = row[pos["alt_id"]].strip()
        if not alt_txt.isdigit() or int(alt_txt) < 1:
            raise DataError(f"alternative id must be a positive integer, got {alt_txt!r}", line, "alt_id")
        alt = int(alt_txt)
        chosen = _parse_flag(row[pos["chosen"]], line, "chosen")
        avail = _parse_flag(row[pos["available"]], line, "available") if has_avail else 1
        entry = tasks.setdefault((ind, task), {"rows": {}, "chosen": [], "line": line})
        if alt in entry["rows"]:
            raise DataError(f"duplicate alternative {alt} in individual {ind} task {task}", line, "alt_id")
        vals = [_parse_float(row[pos[c]], line, c) for c in value_cols]
        entry["rows"][alt] = (avail, vals, line)
        if chosen:
            entry["chosen"].append((alt, line))
        max_alt = max(max_alt, alt)
    if not tasks:
        raise DataError("no data rows", 2)

    t_count = len(tasks)
    available = np.zeros((t_count, max_alt), dtype=bool)
    chosen_arr = np.zeros(t_count, dtype=np.int64)
    columns = {c: np.full((t_count, max_alt), np.nan) for c in value_cols}
    inds, tids = [], []
    for t, ((ind, task), entry) in enumerate(tasks.items()):
        inds.append(ind)
        tids.append(task)
        if not entry["chosen"]:
            raise DataError(f"no chosen alternative in individual {ind} task {task}", entry["line"], "chosen")
        if len(entry["chosen"]) > 1:
            raise DataError(
                f"multiple chosen alternatives in individual {ind} task {task}", entry["chosen"][1][1], "chosen"
            )
        for alt, (avail, vals, _) in entry["rows"].items():
            available[t, alt - 1] = bool(avail)
            for c, v in zip(value_cols, vals):
                columns[c][t, alt - 1] = v
        alt, line = entry["chosen"][0]
        if not available[t, alt - 1]:
            raise DataError(f"chosen alternative unavailable in individual {ind} task {task}", line, "available")
        chosen_arr[t] = alt
    return ChoiceDataset(tuple(inds), tuple(tids), chosen_arr, available, columns)


def ingest_csv(path) -> ChoiceDataset:
    """Read and validate a long-format choice file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {p}: {exc.strerror}") from None
    return parse_csv_text(text)


def dataset_from_arrays(
    chosen, available, columns: Mapping[str, np.ndarray], individual_ids=None, task_ids=None
) -> ChoiceDataset:
    """Build a dataset with one task per individual unless ids are given."""
    chosen = np.asarray(chosen, dtype=np.int64)
    t = chosen.shape[0]
    inds = tuple(str(k + 1) for k in range(t)) if individual_ids is None else tuple(map(str, individual_ids))
    tids = tuple("1" for _ in range(t)) if task_ids is None else tuple(map(str, task_ids))
    cols = {k: np.asarray(v, dtype=float) for k, v in columns.items()}
    return ChoiceDataset(inds, tids, chosen, np.asarray(available, dtype=bool), cols)
