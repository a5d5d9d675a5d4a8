"""CSV ingestion and export of grouped survival datasets.

Three files describe a dataset:

* covariates: header of column names, one row of reals per subject;
* survival: columns ``time`` (positive) and ``status`` (0/1), same row order;
* groups: columns ``column_name`` and ``group_id``.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import TiedEventTimesError
from .survival import SurvivalDataset, break_ties


class InputError(ValueError):
    """Malformed or inconsistent input files."""


@dataclass(frozen=True)
class IngestedData:
    dataset: SurvivalDataset
    column_names: tuple
    report: dict = field(default_factory=dict)


def _read_csv(path):
    if not os.path.exists(path):
        raise InputError(f"file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    return header, rows[1:]


def _to_float(cell, path, row, col):
    try:
        return float(cell)
    except ValueError:
        raise InputError(f"{path}: non-numeric cell {cell!r} at data row {row}, "
                         f"column {col!r}") from None


def _numeric_matrix(path, header, rows):
    out = np.empty((len(rows), len(header)))
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise InputError(f"{path}: data row {i} has {len(r)} cells, expected {len(header)}")
        for j, cell in enumerate(r):
            out[i, j] = _to_float(cell.strip(), path, i, header[j])
    return out


def ingest(covariates_path, survival_path, groups_path, tie_breaking=False):
    """Read the three CSV files into a :class:`SurvivalDataset`.

    Columns are reordered so that each group is contiguous, groups in
    order of first appearance in the groups file. With ``tie_breaking``
    tied event times are separated by a deterministic 1e-9 jitter.
    """
    cov_header, cov_rows = _read_csv(covariates_path)
    if len(set(cov_header)) != len(cov_header):
        raise InputError(f"{covariates_path}: duplicate column names")
    x = _numeric_matrix(covariates_path, cov_header, cov_rows)

    surv_header, surv_rows = _read_csv(survival_path)
    missing = [c for c in ("time", "status") if c not in surv_header]
    if missing:
        raise InputError(f"{survival_path}: missing column(s) {missing}")
    surv = _numeric_matrix(survival_path, surv_header, surv_rows)
    times = surv[:, surv_header.index("time")]
    status = surv[:, surv_header.index("status")]
    if not np.all(np.isin(status, (0, 1))):
        raise InputError(f"{survival_path}: status must be 0 or 1")
    if times.shape[0] != x.shape[0]:
        raise InputError(f"{survival_path} has {times.shape[0]} rows but "
                         f"{covariates_path} has {x.shape[0]}")
    if np.any(~np.isfinite(times)) or np.any(times <= 0):
        bad = np.flatnonzero(~(times > 0) | ~np.isfinite(times))
        raise InputError(f"{survival_path}: nonpositive or non-finite time at rows "
                         f"{bad.tolist()}")

    grp_header, grp_rows = _read_csv(groups_path)
    missing = [c for c in ("column_name", "group_id") if c not in grp_header]
    if missing:
        raise InputError(f"{groups_path}: missing column(s) {missing}")
    ci, gi = grp_header.index("column_name"), grp_header.index("group_id")
    assign = {}
    order = []
    for r in grp_rows:
        name, gid = r[ci].strip(), r[gi].strip()
        if name in assign:
            raise InputError(f"{groups_path}: column {name!r} listed twice")
        if name not in cov_header:
            raise InputError(f"{groups_path}: unknown column {name!r}")
        assign[name] = gid
        if gid not in order:
            order.append(gid)
    orphans = [c for c in cov_header if c not in assign]
    if orphans:
        raise InputError(f"{groups_path}: columns not assigned to any group: {orphans}")

    cols, groups, names = [], [], []
    for gid in order:
        members = [j for j, c in enumerate(cov_header) if assign[c] == gid]
        groups.append((gid, (len(cols), len(cols) + len(members))))
        cols += members
        names += [cov_header[j] for j in members]
    events = status.astype(bool)
    if tie_breaking:
        times = break_ties(times, events)
    try:
        data = SurvivalDataset(times, events, x[:, cols], groups)
    except TiedEventTimesError as exc:
        raise TiedEventTimesError(
            f"{survival_path}: event rows {list(exc.rows)} share the same time; "
            "rerun with tie breaking (--break-ties) to add a 1e-9 jitter", exc.rows) from None
    report = {
        "n": data.n,
        "p": data.p,
        "groups": {g: b - a for g, (a, b) in data.groups},
        "events": data.n_events,
        "censoring_rate": 1.0 - data.n_events / data.n,
    }
    return IngestedData(data, tuple(names), report)


def write_dataset(dataset, column_names, covariates_path, survival_path, groups_path):
    """Write ``dataset`` as the three CSV files read by :func:`ingest`."""
    names = list(column_names)
    if len(names) != dataset.p:
        raise ValueError("one column name per covariate required")
    with open(covariates_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in dataset.covariates:
            w.writerow([repr(float(v)) for v in row])
    with open(survival_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "status"])
        for t, e in zip(dataset.times, dataset.events):
            w.writerow([repr(float(t)), int(e)])
    with open(groups_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column_name", "group_id"])
        for gid, (a, b) in dataset.groups:
            for j in range(a, b):
                w.writerow([names[j], gid])
