"""Cohort data model, covariate blocks and their on-disk representation.

A cohort is stored as a comma-separated file plus a YAML schema sidecar
(``<stem>.schema.yaml``).  Binary sparse blocks are written next to it as
``<stem>.<block>.sparse`` files holding ``row,column`` pairs, one per
nonzero cell.  Missing serum-creatinine-like values (z2) are empty cells.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import yaml

from .errors import CohortParseError

logger = logging.getLogger(__name__)

BINARY_SPARSE = "binary_sparse"
CONTINUOUS_DENSE = "continuous_dense"
BLOCK_KINDS = (BINARY_SPARSE, CONTINUOUS_DENSE)

CONTINUOUS = "continuous"
BINARY = "binary"


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CovariateBlock:
    """Named matrix of candidate auxiliary covariates for one data dimension."""

    name: str
    kind: str
    columns: tuple
    values: object  # csc_matrix for binary_sparse, ndarray otherwise

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        cols = tuple(str(c) for c in self.columns)
        object.__setattr__(self, "columns", cols)
        if len(set(cols)) != len(cols):
            seen, dup = set(), []
            for c in cols:
                if c in seen:
                    dup.append(c)
                seen.add(c)
            raise ValueError(f"duplicate column names in block {self.name!r}: {dup[:5]}")
        if self.kind == BINARY_SPARSE:
            vals = sp.csc_matrix(self.values, dtype=float, copy=True)
            vals.sum_duplicates()
            vals.eliminate_zeros()
            if vals.nnz and not np.all(vals.data == 1.0):
                raise ValueError(f"binary block {self.name!r} contains values other than 0/1")
            vals.sort_indices()
        else:
            vals = _frozen(self.values)
            if vals.ndim != 2:
                raise ValueError("dense block values must be a 2-D matrix")
        if vals.shape[1] != len(cols):
            raise ValueError(
                f"block {self.name!r} has {vals.shape[1]} value columns but {len(cols)} names"
            )
        object.__setattr__(self, "values", vals)

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_cols(self):
        return self.values.shape[1]

    def dense(self):
        if sp.issparse(self.values):
            return self.values.toarray()
        return np.asarray(self.values)

    def take_rows(self, rows):
        return CovariateBlock(self.name, self.kind, self.columns, self.values[rows])

    def select_columns(self, keep):
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        cols = tuple(self.columns[j] for j in keep)
        return CovariateBlock(self.name, self.kind, cols, self.values[:, keep])


@dataclass(frozen=True, eq=False)
class Cohort:
    """One analysis cohort.

    ``z2`` holds the raw values as generated or loaded; cells with ``mz2 == 1``
    must only be read through :attr:`observed_z2`, which blanks them.  The raw
    array is kept so simulations can compare imputations against the truth.
    ``u`` is carried for data generation but never offered as a candidate.
    """

    exposure: np.ndarray
    time: np.ndarray
    event: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    mz2: np.ndarray
    z1_names: tuple = ()
    z1_kinds: tuple = ()
    u: Optional[np.ndarray] = None
    blocks: Mapping[str, CovariateBlock] = field(default_factory=dict)
    imputed: Optional[np.ndarray] = None

    def __post_init__(self):
        exposure = _frozen(self.exposure)
        n = exposure.shape[0]
        if n == 0:
            raise ValueError("cohort must contain at least one patient")
        time = _frozen(self.time)
        event = _frozen(self.event)
        z1 = _frozen(self.z1).reshape(n, -1) if np.size(self.z1) else _frozen(np.zeros((n, 0)))
        z2 = _frozen(self.z2)
        mz2 = _frozen(self.mz2, dtype=np.int8)
        for name, arr in (("time", time), ("event", event), ("z2", z2), ("mz2", mz2)):
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
        if z1.shape[0] != n:
            raise ValueError("z1 row count differs from n")
        if not np.all(np.isin(exposure, (0.0, 1.0))):
            raise ValueError("exposure must be binary")
        if not np.all(np.isin(event, (0.0, 1.0))):
            raise ValueError("event must be binary")
        if not np.all(np.isin(mz2, (0, 1))):
            raise ValueError("mz2 must be binary")
        if not np.all(time > 0):
            raise ValueError("time must be strictly positive")
        if np.any(np.isnan(z2) & (mz2 == 0)):
            raise ValueError("z2 has NaN entries that are not flagged in mz2")
        names = tuple(self.z1_names) or tuple(f"z1_{j + 1:02d}" for j in range(z1.shape[1]))
        kinds = tuple(self.z1_kinds) or tuple(CONTINUOUS for _ in names)
        if len(names) != z1.shape[1] or len(kinds) != z1.shape[1]:
            raise ValueError("z1_names/z1_kinds must match the number of z1 columns")
        if len(set(names)) != len(names):
            raise ValueError("z1 names must be unique")
        for k in kinds:
            if k not in (CONTINUOUS, BINARY):
                raise ValueError(f"unknown z1 kind {k!r}")
        u = None
        if self.u is not None:
            u = _frozen(self.u)
            if u.shape != (n,) or not np.all(np.isin(u, (0.0, 1.0))):
                raise ValueError("u must be a binary vector of length n")
        blocks = dict(self.blocks)
        for key, blk in blocks.items():
            if key != blk.name:
                raise ValueError(f"block key {key!r} differs from block name {blk.name!r}")
            if blk.n_rows != n:
                raise ValueError(f"block {key!r} has {blk.n_rows} rows, expected {n}")
        imputed = None
        if self.imputed is not None:
            imputed = _frozen(self.imputed, dtype=bool)
            if imputed.shape != (n,):
                raise ValueError("imputed mask must have length n")
        for name, value in (
            ("exposure", exposure), ("time", time), ("event", event), ("z1", z1),
            ("z2", z2), ("mz2", mz2), ("z1_names", names), ("z1_kinds", kinds),
            ("u", u), ("blocks", blocks), ("imputed", imputed),
        ):
            object.__setattr__(self, name, value)

    @property
    def n(self):
        return self.exposure.shape[0]

    @property
    def observed_z2(self):
        """z2 with masked cells replaced by NaN."""
        out = np.array(self.z2, dtype=float)
        out[self.mz2 == 1] = np.nan
        return out

    @property
    def complete_rows(self):
        return np.flatnonzero(self.mz2 == 0)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def take(self, rows):
        """New cohort made of the given row indices (repeats allowed)."""
        rows = np.asarray(rows)
        return Cohort(
            exposure=self.exposure[rows],
            time=self.time[rows],
            event=self.event[rows],
            z1=self.z1[rows],
            z2=self.z2[rows],
            mz2=self.mz2[rows],
            z1_names=self.z1_names,
            z1_kinds=self.z1_kinds,
            u=None if self.u is None else self.u[rows],
            blocks={k: b.take_rows(rows) for k, b in self.blocks.items()},
            imputed=None if self.imputed is None else self.imputed[rows],
        )


def column_prevalence(block):
    """Fraction of patients with a 1 in each column of a binary block."""
    if block.kind != BINARY_SPARSE:
        raise TypeError(f"prevalence is defined for binary blocks only, got {block.kind!r}")
    n = block.n_rows
    counts = np.asarray(block.values.getnnz(axis=0), dtype=float)
    return counts / n


def cohorts_equal(a, b):
    """Equality on everything a consumer is allowed to see (masked z2 excluded)."""
    def same(x, y):
        if x is None or y is None:
            return x is None and y is None
        return x.shape == y.shape and np.array_equal(x, y, equal_nan=True)

    if a.n != b.n or a.z1_names != b.z1_names or a.z1_kinds != b.z1_kinds:
        return False
    for name in ("exposure", "time", "event", "z1", "mz2", "u", "imputed"):
        if not same(getattr(a, name), getattr(b, name)):
            return False
    if not same(a.observed_z2, b.observed_z2):
        return False
    if list(a.blocks) != list(b.blocks):
        return False
    for key in a.blocks:
        x, y = a.blocks[key], b.blocks[key]
        if x.kind != y.kind or x.columns != y.columns:
            return False
        if sp.issparse(x.values):
            if (x.values != y.values).nnz:
                return False
        elif not same(x.values, y.values):
            return False
    return True


# --------------------------------------------------------------------------
# serialization

def _schema_path(csv_path):
    p = Path(csv_path)
    return p.with_name(p.stem + ".schema.yaml")


def _sparse_path(csv_path, block):
    p = Path(csv_path)
    return p.with_name(f"{p.stem}.{block}.sparse")


def _fmt(x):
    return repr(float(x))


def save_cohort(cohort, path):
    """Write ``cohort`` to ``path`` (CSV) plus schema and sparse sidecars."""
    path = Path(path)
    if not path.parent.exists() or not os.access(path.parent, os.W_OK):
        raise OSError(f"cannot write cohort to {path}: directory missing or not writable")
    header = ["exposure", "time", "event", "z2"]
    if cohort.u is not None:
        header.append("u")
    if cohort.imputed is not None:
        header.append("z2_imputed")
    header.extend(cohort.z1_names)
    schema = {
        "exposure": "exposure",
        "time": "time",
        "event": "event",
        "z2": "z2",
        "u": "u" if cohort.u is not None else None,
        "imputed": "z2_imputed" if cohort.imputed is not None else None,
        "z1": [{"name": nm, "kind": k} for nm, k in zip(cohort.z1_names, cohort.z1_kinds)],
        "blocks": [],
    }
    dense_parts = []
    for blk in cohort.blocks.values():
        entry = {"name": blk.name, "kind": blk.kind, "columns": list(blk.columns)}
        if blk.kind == CONTINUOUS_DENSE:
            cols = [f"{blk.name}:{c}" for c in blk.columns]
            entry["csv_columns"] = cols
            header.extend(cols)
            dense_parts.append(blk.values)
        schema["blocks"].append(entry)
    if len(set(header)) != len(header):
        raise ValueError("cohort column names collide in the CSV header")

    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(cohort.n):
                row = [
                    str(int(cohort.exposure[i])),
                    _fmt(cohort.time[i]),
                    str(int(cohort.event[i])),
                    "" if cohort.mz2[i] else _fmt(cohort.z2[i]),
                ]
                if cohort.u is not None:
                    row.append(str(int(cohort.u[i])))
                if cohort.imputed is not None:
                    row.append("1" if cohort.imputed[i] else "0")
                for j, kind in enumerate(cohort.z1_kinds):
                    v = cohort.z1[i, j]
                    row.append(str(int(v)) if kind == BINARY and v in (0.0, 1.0) else _fmt(v))
                for part in dense_parts:
                    row.extend(_fmt(v) for v in part[i])
                w.writerow(row)
        with open(_schema_path(path), "w") as fh:
            yaml.safe_dump(schema, fh, sort_keys=False)
        for blk in cohort.blocks.values():
            if blk.kind != BINARY_SPARSE:
                continue
            coo = blk.values.tocoo()
            order = np.lexsort((coo.col, coo.row))
            with open(_sparse_path(path, blk.name), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["row", "column"])
                for k in order:
                    w.writerow([int(coo.row[k]), blk.columns[coo.col[k]]])
    except OSError as exc:
        raise OSError(f"failed writing cohort to {path}: {exc}") from exc


def _parse_float(text, row, column):
    try:
        v = float(text)
    except ValueError:
        raise CohortParseError(f"cannot parse {text!r} as a number", row=row, column=column) from None
    if not math.isfinite(v):
        raise CohortParseError("non-finite value", row=row, column=column)
    return v


def _parse_binary(text, row, column):
    v = _parse_float(text, row, column)
    if v not in (0.0, 1.0):
        raise CohortParseError(f"expected 0/1, got {text!r}", row=row, column=column)
    return v


def load_cohort(path, schema=None):
    """Read a cohort written by :func:`save_cohort` or described by ``schema``.

    ``schema`` is a mapping or a YAML file path; when omitted the sidecar
    ``<stem>.schema.yaml`` is used.  Errors name the data row (0-based,
    header excluded) and column.
    """
    path = Path(path)
    if schema is None:
        schema = _schema_path(path)
    if isinstance(schema, (str, os.PathLike)):
        with open(schema) as fh:
            schema = yaml.safe_load(fh)
    schema = dict(schema)
    for role in ("exposure", "time", "event", "z2"):
        if not isinstance(schema.get(role), str):
            raise CohortParseError(f"schema must assign exactly one column to {role!r}")

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortParseError("empty cohort file") from None
        rows = list(reader)
    index = {name: j for j, name in enumerate(header)}

    def col(name):
        if name not in index:
            raise CohortParseError("column listed in schema is absent from file", column=name)
        return index[name]

    z1_spec = [(d["name"], d.get("kind", CONTINUOUS)) for d in schema.get("z1") or []]
    n = len(rows)
    exposure = np.empty(n)
    time = np.empty(n)
    event = np.empty(n)
    z2 = np.empty(n)
    mz2 = np.zeros(n, dtype=np.int8)
    u_col = schema.get("u")
    u = np.empty(n) if u_col else None
    imp_col = schema.get("imputed")
    imputed = np.zeros(n, dtype=bool) if imp_col else None
    z1 = np.empty((n, len(z1_spec)))
    dense_blocks = [b for b in schema.get("blocks") or [] if b["kind"] == CONTINUOUS_DENSE]
    dense_vals = {b["name"]: np.empty((n, len(b["columns"]))) for b in dense_blocks}

    ix_exp, ix_time, ix_event, ix_z2 = (col(schema[r]) for r in ("exposure", "time", "event", "z2"))
    ix_u = col(u_col) if u_col else None
    ix_imp = col(imp_col) if imp_col else None
    ix_z1 = [col(nm) for nm, _ in z1_spec]
    ix_dense = {
        b["name"]: [col(c) for c in b.get("csv_columns") or [f"{b['name']}:{c}" for c in b["columns"]]]
        for b in dense_blocks
    }

    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise CohortParseError(
                f"malformed row with {len(r)} fields, expected {len(header)}", row=i
            )
        exposure[i] = _parse_binary(r[ix_exp], i, schema["exposure"])
        event[i] = _parse_binary(r[ix_event], i, schema["event"])
        t = _parse_float(r[ix_time], i, schema["time"])
        if t <= 0:
            raise CohortParseError(f"time must be positive, got {r[ix_time]!r}", row=i, column=schema["time"])
        time[i] = t
        cell = r[ix_z2].strip()
        if cell == "" or cell.upper() == "NA":
            z2[i] = np.nan
            mz2[i] = 1
        else:
            z2[i] = _parse_float(cell, i, schema["z2"])
        if u is not None:
            u[i] = _parse_binary(r[ix_u], i, u_col)
        if imputed is not None:
            imputed[i] = _parse_binary(r[ix_imp], i, imp_col) == 1.0
        for j, ((nm, kind), ix) in enumerate(zip(z1_spec, ix_z1)):
            z1[i, j] = _parse_binary(r[ix], i, nm) if kind == BINARY else _parse_float(r[ix], i, nm)
        for name, ixs in ix_dense.items():
            vals = dense_vals[name]
            for j, ix in enumerate(ixs):
                vals[i, j] = _parse_float(r[ix], i, header[ix])

    blocks = {}
    for b in schema.get("blocks") or []:
        name, kind, columns = b["name"], b["kind"], list(b["columns"])
        if kind == CONTINUOUS_DENSE:
            blocks[name] = CovariateBlock(name, kind, columns, dense_vals[name])
            continue
        if kind != BINARY_SPARSE:
            raise CohortParseError(f"unknown block kind {kind!r}", column=name)
        col_index = {c: j for j, c in enumerate(columns)}
        ri, ci = [], []
        sparse_file = b.get("file") or _sparse_path(path, name)
        sparse_file = Path(sparse_file)
        if not sparse_file.is_absolute() and not sparse_file.exists():
            sparse_file = path.parent / sparse_file
        with open(sparse_file, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for k, rec in enumerate(reader):
                if len(rec) != 2:
                    raise CohortParseError(f"malformed sparse record in {sparse_file.name}", row=k)
                try:
                    rr = int(rec[0])
                except ValueError:
                    raise CohortParseError("non-integer row id", row=k, column="row") from None
                if not 0 <= rr < n:
                    raise CohortParseError(f"row id {rr} outside cohort", row=k, column="row")
                if rec[1] not in col_index:
                    raise CohortParseError(f"unknown column {rec[1]!r} in {name}", row=k, column="column")
                ri.append(rr)
                ci.append(col_index[rec[1]])
        mat = sp.csc_matrix(
            (np.ones(len(ri)), (np.asarray(ri, dtype=np.int64), np.asarray(ci, dtype=np.int64))),
            shape=(n, len(columns)),
        )
        mat.data[:] = 1.0  # duplicates collapse to presence
        blocks[name] = CovariateBlock(name, kind, columns, mat)

    return Cohort(
        exposure=exposure, time=time, event=event, z1=z1, z2=z2, mz2=mz2,
        z1_names=tuple(nm for nm, _ in z1_spec), z1_kinds=tuple(k for _, k in z1_spec),
        u=u, blocks=blocks, imputed=imputed,
    )
