"""Candidate covariate construction: code binarization, unigrams, pooled
embeddings, the prevalence filter and per-model candidate assembly."""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .tabular import BINARY_SPARSE, CONTINUOUS_DENSE, CovariateBlock, column_prevalence

logger = logging.getLogger(__name__)

SOURCE_KINDS = ("structured_codes", "note_text", "precomputed_embeddings")
EMBEDDING_DIM = 128

# model id -> candidate blocks on top of Z1 (None: model uses no candidates)
MODEL_BLOCKS = {
    "unadjusted": None,
    "complete_case": (),
    "baseline": (),
    "hdmi_claims": ("claims",),
    "hdmi_unigram": ("unigram",),
    "hdmi_sentence": ("sentence",),
    "hdmi_claims_unigram": ("claims", "unigram"),
    "hdmi_claims_sentence": ("claims", "sentence"),
    "oracle": (),
}
TABLE1_MODELS = tuple(m for m in MODEL_BLOCKS if m != "oracle")


@dataclass(frozen=True)
class DimensionConfig:
    name: str
    source: str = "structured_codes"
    window_days: float = 365.0
    stop_words: frozenset = frozenset()
    threshold: float = 0.01

    def __post_init__(self):
        if self.source not in SOURCE_KINDS:
            raise ConfigError(f"unknown source kind {self.source!r}")
        if not 0 <= self.threshold < 1:
            raise ConfigError("prevalence threshold must lie in [0, 1)")
        if self.window_days < 0:
            raise ConfigError("window_days must be nonnegative")
        object.__setattr__(self, "stop_words", frozenset(w.lower() for w in self.stop_words))


def load_stop_words(path):
    """One word per line; blank lines and lines starting with '#' are skipped."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(
            line.strip().lower() for line in fh if line.strip() and not line.lstrip().startswith("#")
        )


def _patient_index(pid, n, ids):
    if ids is None:
        try:
            i = int(pid)
        except (TypeError, ValueError):
            raise ValueError(f"unknown patient id {pid!r}") from None
        if not 0 <= i < n:
            raise ValueError(f"unknown patient id {pid!r} (cohort has {n} patients)")
        return i
    try:
        return ids[pid]
    except KeyError:
        raise ValueError(f"unknown patient id {pid!r}") from None


def _id_map(patient_ids):
    if patient_ids is None:
        return None
    return {pid: i for i, pid in enumerate(patient_ids)}


def _binary_block(name, n, pairs, vocab):
    cols = sorted(vocab)
    pos = {c: j for j, c in enumerate(cols)}
    if pairs:
        rows, cs = zip(*pairs)
        mat = sp.csc_matrix(
            (np.ones(len(rows)), (np.asarray(rows), np.asarray([pos[c] for c in cs]))),
            shape=(n, len(cols)),
        )
        mat.data[:] = 1.0  # duplicates summed above; presence only
    else:
        mat = sp.csc_matrix((n, len(cols)))
    return CovariateBlock(name, BINARY_SPARSE, cols, mat)


def binarize_codes(events, cfg, n, patient_ids=None):
    """Presence of each code within ``cfg.window_days`` before index.

    ``events`` yields (patient id, code, days before index).  Patient ids are
    row indices unless ``patient_ids`` gives the id of every row.  Columns are
    ordered lexicographically by code; codes seen only outside the window
    produce no column.
    """
    ids = _id_map(patient_ids)
    pairs, vocab = set(), set()
    for pid, code, days in events:
        i = _patient_index(pid, n, ids)
        days = float(days)
        if 0 <= days <= cfg.window_days:
            code = str(code)
            pairs.add((i, code))
            vocab.add(code)
    return _binary_block(cfg.name, n, sorted(pairs), vocab)


_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text, stop_words=frozenset()):
    """Lowercased alphanumeric tokens minus stop words, 1-character and numeric tokens."""
    out = []
    for tok in _SPLIT.split(text.lower()):
        if len(tok) < 2 or tok.isdigit() or tok in stop_words:
            continue
        out.append(tok)
    return out


def extract_unigrams(notes, cfg, n, patient_ids=None):
    """Binary presence of every surviving unigram across a patient's notes."""
    ids = _id_map(patient_ids)
    pairs, vocab = set(), set()
    for pid, text in notes:
        i = _patient_index(pid, n, ids)
        for tok in tokenize(text or "", cfg.stop_words):
            pairs.add((i, tok))
            vocab.add(tok)
    return _binary_block(cfg.name, n, sorted(pairs), vocab)


def pool_embeddings(embeddings, n, name="sentence", dim=EMBEDDING_DIM, patient_ids=None):
    """Per-patient mean of embedding vectors; patients without any vector get
    the mean over patients who have one."""
    ids = _id_map(patient_ids)
    sums = np.zeros((n, dim))
    counts = np.zeros(n)
    for pid, vec in embeddings:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (dim,):
            raise ValueError(f"embedding for patient {pid!r} has {vec.size} entries, expected {dim}")
        i = _patient_index(pid, n, ids)
        sums[i] += vec
        counts[i] += 1
    have = counts > 0
    pooled = np.zeros((n, dim))
    pooled[have] = sums[have] / counts[have, None]
    if not have.all():
        if not have.any():
            raise ValueError("no embeddings supplied for any patient")
        logger.warning("%d patients have no embeddings; using the cohort mean vector", int((~have).sum()))
        pooled[~have] = pooled[have].mean(axis=0)
    width = len(str(dim))
    return CovariateBlock(name, CONTINUOUS_DENSE, [f"e{j + 1:0{width}d}" for j in range(dim)], pooled)


def prevalence_filter(block, threshold=0.01):
    """Drop binary columns whose prevalence is strictly below ``threshold``."""
    if block.kind != BINARY_SPARSE:
        logger.info("block %r is continuous; prevalence filter not applied", block.name)
        return block
    keep = column_prevalence(block) >= threshold
    if keep.all():
        return block
    return block.select_columns(keep)


# ------------------------------------------------------------ file readers

def read_code_events(path):
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            yield row["patient_id"], row["code"], row["days_before_index"]


def read_notes(path):
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            yield row["patient_id"], row["text"]


def read_embeddings(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            yield row[0], np.array([float(v) for v in row[1:]])


# ------------------------------------------------------- candidate assembly

@dataclass(frozen=True)
class Candidates:
    """Candidate design: ``values`` is sparse CSC when any block is sparse."""

    names: tuple
    values: object
    sources: tuple  # block name (or "z1") per column

    @property
    def n_cols(self):
        return len(self.names)

    def dense(self):
        return self.values.toarray() if sp.issparse(self.values) else np.asarray(self.values)

    def columns(self, names):
        """Dense submatrix for the given column names, in that order."""
        pos = {c: j for j, c in enumerate(self.names)}
        idx = [pos[c] for c in names]
        sub = self.values[:, idx]
        return sub.toarray() if sp.issparse(sub) else np.asarray(sub)

    def take_rows(self, rows):
        return Candidates(self.names, self.values[rows], self.sources)


def assemble_candidates(cohort, model_kind, filter_threshold=None):
    """Z1 plus the blocks a model may select from; ``u`` is never included.

    Block columns are named ``<block>:<column>``.  If ``filter_threshold`` is
    given, binary blocks are prevalence-filtered first.
    """
    if model_kind not in MODEL_BLOCKS:
        raise ConfigError(f"unknown model id {model_kind!r}")
    block_names = MODEL_BLOCKS[model_kind] or ()
    names = list(cohort.z1_names)
    sources = ["z1"] * len(names)
    parts = [sp.csc_matrix(cohort.z1)]
    any_sparse = False
    for b in block_names:
        if b not in cohort.blocks:
            raise ConfigError(f"model {model_kind!r} needs block {b!r}, which the cohort lacks")
        blk = cohort.blocks[b]
        if filter_threshold is not None:
            blk = prevalence_filter(blk, filter_threshold)
        names.extend(f"{b}:{c}" for c in blk.columns)
        sources.extend([b] * blk.n_cols)
        if blk.kind == BINARY_SPARSE:
            any_sparse = True
            parts.append(blk.values)
        else:
            parts.append(sp.csc_matrix(blk.values))
    if len(set(names)) != len(names):
        raise ConfigError("candidate names collide")
    if any_sparse:
        values = sp.hstack(parts, format="csc")
    else:
        values = np.hstack([p.toarray() for p in parts]) if parts else np.zeros((cohort.n, 0))
    if "u" in names:
        raise AssertionError("u leaked into the candidate set")
    return Candidates(tuple(names), values, tuple(sources))
