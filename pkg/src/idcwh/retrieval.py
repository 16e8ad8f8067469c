"""Brute-force Hamming ranking over bit-packed codes and the retrieval metrics
(MAP, precision/recall within a Hamming radius, P@N, PR curve, d_w/d_b).

Ranking ties are broken by ascending database id.  Queries with no relevant
database item are left out of every recall-based average and of MAP; P@N and
precision-within-radius average over all queries, an empty retrieval set
counting as precision 0.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import n_words

CODES_MAGIC = b"IDCB"
_QUERY_CHUNK = 256


class CodeLengthError(ValueError):
    pass


@dataclass
class RetrievalIndex:
    codes: np.ndarray  # (N_db, words) uint64
    labels: np.ndarray  # (N_db, C) multi-hot
    code_length: int

    def __post_init__(self):
        self.codes = np.atleast_2d(np.asarray(self.codes, dtype=np.uint64))
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.codes.shape[1] != n_words(self.code_length):
            raise CodeLengthError(f"{self.codes.shape[1]} words do not hold {self.code_length}-bit codes")
        if len(self.labels) != len(self.codes):
            raise ValueError("labels must be row-aligned with codes")

    def __len__(self):
        return len(self.codes)


def hamming(a, b) -> int:
    a = np.asarray(a, dtype=np.uint64).ravel()
    b = np.asarray(b, dtype=np.uint64).ravel()
    if a.shape != b.shape:
        raise CodeLengthError(f"code lengths differ: {a.size} vs {b.size} words")
    return int(np.bitwise_count(a ^ b).sum())


def hamming_matrix(q, db) -> np.ndarray:
    """All pairwise distances between packed code sets, ``(len(q), len(db))``."""
    q = np.atleast_2d(np.asarray(q, dtype=np.uint64))
    db = np.atleast_2d(np.asarray(db, dtype=np.uint64))
    if q.shape[1] != db.shape[1]:
        raise CodeLengthError(f"code lengths differ: {q.shape[1]} vs {db.shape[1]} words")
    out = np.zeros((len(q), len(db)), np.int64)
    for w in range(q.shape[1]):
        out += np.bitwise_count(q[:, w, None] ^ db[None, :, w])
    return out


def rank(query, index: RetrievalIndex) -> np.ndarray:
    d = hamming_matrix(query, index.codes)[0]
    return np.argsort(d, kind="stable")


def relevance(query_labels, db_labels) -> np.ndarray:
    """1 where the label sets intersect; 1-D in for one query, 2-D in for many."""
    q = np.asarray(query_labels, dtype=np.int64)
    rel = (np.atleast_2d(q) @ np.asarray(db_labels, dtype=np.int64).T) > 0
    return rel[0].astype(np.uint8) if q.ndim == 1 else rel.astype(np.uint8)


def average_precision(ranked_relevance, top_k=None) -> float:
    """Mean of precision@k over relevant positions; NaN if nothing is relevant."""
    r = np.asarray(ranked_relevance, dtype=np.float64)
    if top_k is not None:
        r = r[:top_k]
    n_rel = r.sum()
    if n_rel == 0:
        return float("nan")
    prec = np.cumsum(r) / np.arange(1, len(r) + 1)
    return float((prec * r).sum() / n_rel)


@dataclass
class MetricsReport:
    map: float
    p_at_h2: float
    r_at_h2: float
    p_at_n: list = field(default_factory=list)
    pr_curve: list = field(default_factory=list)
    dwdb: float = float("nan")
    radius: int = 2
    code_length: int = 0
    n_queries: int = 0
    n_database: int = 0
    tie_break: str = "ascending database id"

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "x", "value"])
            w.writerow(["map", "", repr(self.map)])
            w.writerow([f"p_at_h{self.radius}", "", repr(self.p_at_h2)])
            w.writerow([f"r_at_h{self.radius}", "", repr(self.r_at_h2)])
            w.writerow(["dwdb", "", repr(self.dwdb)])
            for n, p in self.p_at_n:
                w.writerow(["p_at_n", n, repr(p)])
            for r, p in self.pr_curve:
                w.writerow(["pr", repr(r), repr(p)])


def _ranked_relevance_chunks(q_codes, q_labels, index, exclude_self):
    """Yield ``(ranked_relevance, ranked_dist)`` for query chunks.

    ``exclude_self`` (queries are the database, same order) drops each query's
    own entry from its ranking.
    """
    n_q = len(q_codes)
    big = index.code_length + 1
    for start in range(0, n_q, _QUERY_CHUNK):
        stop = min(start + _QUERY_CHUNK, n_q)
        d = hamming_matrix(q_codes[start:stop], index.codes)
        rel = relevance(np.atleast_2d(q_labels[start:stop]), index.labels)
        if exclude_self:
            rows = np.arange(stop - start)
            d[rows, rows + start] = big
        order = np.argsort(d, axis=1, kind="stable")
        rr = np.take_along_axis(rel, order, axis=1)
        dd = np.take_along_axis(d, order, axis=1)
        if exclude_self:
            rr, dd = rr[:, :-1], dd[:, :-1]
        yield rr, dd


def _check_pair(q_codes, index, exclude_self):
    q_codes = np.atleast_2d(np.asarray(q_codes, dtype=np.uint64))
    if len(q_codes) and q_codes.shape[1] != index.codes.shape[1]:
        raise CodeLengthError("query and database code lengths differ")
    if exclude_self and len(q_codes) != len(index):
        raise ValueError("exclude_self needs the query set to equal the database")
    return q_codes


def mean_average_precision(q_codes, q_labels, index, top_k=None, exclude_self=False) -> float:
    q_codes = _check_pair(q_codes, index, exclude_self)
    aps = []
    for rr, _ in _ranked_relevance_chunks(q_codes, q_labels, index, exclude_self):
        aps.extend(average_precision(r, top_k) for r in rr)
    aps = np.array(aps)
    aps = aps[~np.isnan(aps)]
    return float(aps.mean()) if aps.size else float("nan")


def precision_recall_at_radius(q_codes, q_labels, index, radius=2, exclude_self=False):
    q_codes = _check_pair(q_codes, index, exclude_self)
    precs, recs = [], []
    for rr, dd in _ranked_relevance_chunks(q_codes, q_labels, index, exclude_self):
        inside = dd <= radius
        retrieved = inside.sum(axis=1)
        hit = (rr.astype(bool) & inside).sum(axis=1)
        total_rel = rr.sum(axis=1)
        precs.extend(np.where(retrieved > 0, hit / np.maximum(retrieved, 1), 0.0))
        has_rel = total_rel > 0
        recs.extend(hit[has_rel] / total_rel[has_rel])
    p = float(np.mean(precs)) if precs else float("nan")
    r = float(np.mean(recs)) if recs else float("nan")
    return p, r


def precision_at_n(q_codes, q_labels, index, n_list, exclude_self=False):
    q_codes = _check_pair(q_codes, index, exclude_self)
    n_db = len(index) - (1 if exclude_self else 0)
    n_list = [int(n) for n in n_list]
    for n in n_list:
        if not 1 <= n <= n_db:
            raise ValueError(f"N={n} outside 1..{n_db}")
    sums = np.zeros(len(n_list))
    count = 0
    for rr, _ in _ranked_relevance_chunks(q_codes, q_labels, index, exclude_self):
        cum = np.cumsum(rr, axis=1)
        sums += (cum[:, np.array(n_list) - 1] / np.array(n_list)).sum(axis=0)
        count += len(rr)
    return [(n, float(s / count)) for n, s in zip(n_list, sums)]


def pr_curve(q_codes, q_labels, index, exclude_self=False):
    """(recall@k, precision@k) for k = 1..N_db, macro-averaged over queries with
    at least one relevant item."""
    q_codes = _check_pair(q_codes, index, exclude_self)
    rec_sum = prec_sum = None
    count = 0
    for rr, _ in _ranked_relevance_chunks(q_codes, q_labels, index, exclude_self):
        rr = rr[rr.sum(axis=1) > 0]
        if not len(rr):
            continue
        cum = np.cumsum(rr, axis=1)
        rec = (cum / cum[:, -1:]).sum(axis=0)
        prec = (cum / np.arange(1, cum.shape[1] + 1)).sum(axis=0)
        rec_sum = rec if rec_sum is None else rec_sum + rec
        prec_sum = prec if prec_sum is None else prec_sum + prec
        count += len(rr)
    if not count:
        return []
    return [(float(r), float(p)) for r, p in zip(rec_sum / count, prec_sum / count)]


def dwdb_ratio(codes, labels) -> float:
    """Mean Hamming distance over pairs sharing a label divided by the mean over
    pairs sharing none (for single-label data: within-class / between-class)."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.uint64))
    labels = np.asarray(labels, dtype=np.int64)
    n = len(codes)
    w_sum = b_sum = 0
    w_cnt = b_cnt = 0
    for start in range(0, n, _QUERY_CHUNK):
        stop = min(start + _QUERY_CHUNK, n)
        d = hamming_matrix(codes[start:stop], codes)
        same = (labels[start:stop] @ labels.T) > 0
        upper = np.arange(n)[None, :] > np.arange(start, stop)[:, None]
        w_mask, b_mask = same & upper, ~same & upper
        w_sum += d[w_mask].sum()
        w_cnt += w_mask.sum()
        b_sum += d[b_mask].sum()
        b_cnt += b_mask.sum()
    if w_cnt == 0 or b_cnt == 0:
        raise ValueError("d_w/d_b needs both within-class and between-class pairs")
    return float((w_sum / w_cnt) / (b_sum / b_cnt))


DEFAULT_N_GRID = (1, 5, 10, 20, 50, 100, 200, 500, 1000)


def evaluate(q_codes, q_labels, index: RetrievalIndex, n_list=None, radius=2,
             top_k=None, exclude_self=False) -> MetricsReport:
    """All metrics for one query set against one index.  d_w/d_b is computed on the
    database codes; the default P@N grid is clipped to the database size."""
    q_codes = _check_pair(q_codes, index, exclude_self)
    n_db = len(index) - (1 if exclude_self else 0)
    if n_list is None:
        n_list = [n for n in DEFAULT_N_GRID if n <= n_db] or [n_db]
    report = MetricsReport(
        map=mean_average_precision(q_codes, q_labels, index, top_k, exclude_self),
        p_at_h2=float("nan"),
        r_at_h2=float("nan"),
        radius=radius,
        code_length=index.code_length,
        n_queries=len(q_codes),
        n_database=len(index),
    )
    if len(q_codes):
        report.p_at_h2, report.r_at_h2 = precision_recall_at_radius(
            q_codes, q_labels, index, radius, exclude_self)
        report.p_at_n = precision_at_n(q_codes, q_labels, index, n_list, exclude_self)
        report.pr_curve = pr_curve(q_codes, q_labels, index, exclude_self)
    try:
        report.dwdb = dwdb_ratio(index.codes, index.labels)
    except ValueError:
        report.dwdb = float("nan")
    return report


def save_codes(path, codes, labels, code_length: int) -> None:
    """``IDCB`` file: u32 N, u32 l, N*ceil(l/64) little-endian u64 words, then
    u32 C and the N x C label bits packed row-major (LSB first)."""
    codes = np.asarray(codes, dtype=np.uint64).reshape(-1, n_words(code_length))
    labels = np.asarray(labels, dtype=np.uint8)
    labels = labels.reshape(len(codes), labels.shape[-1] if labels.ndim else 0)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", CODES_MAGIC, len(codes), code_length))
        fh.write(codes.astype("<u8").tobytes())
        fh.write(struct.pack("<I", labels.shape[1]))
        fh.write(np.packbits(labels.reshape(-1), bitorder="little").tobytes())


def load_codes(path):
    """Return ``(codes, labels, code_length)``."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CODES_MAGIC:
        raise ValueError(f"{path}: not a codes file")
    _, n, length = struct.unpack_from("<4sII", raw)
    w = n_words(length)
    off = 12
    need = off + 8 * n * w + 4
    if len(raw) < need:
        raise ValueError(f"{path}: truncated codes section")
    codes = np.frombuffer(raw, "<u8", n * w, off).reshape(n, w).astype(np.uint64)
    off += 8 * n * w
    (c,) = struct.unpack_from("<I", raw, off)
    off += 4
    n_bytes = (n * c + 7) // 8
    if len(raw) != off + n_bytes:
        raise ValueError(f"{path}: label section size mismatch")
    bits = np.unpackbits(np.frombuffer(raw, np.uint8, n_bytes, off), bitorder="little")
    labels = bits[: n * c].reshape(n, c).copy()
    return codes, labels, length
