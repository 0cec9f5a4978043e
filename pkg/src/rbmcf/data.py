"""MovieLens ingestion, user filtering, holdout splits and binary file formats."""

import csv
from dataclasses import dataclass
import io
import logging
import math
import struct
import zlib

import numpy as np

from .errors import (
    ChecksumError,
    EmptyDatasetError,
    FormatError,
    ParseError,
    RatingRangeError,
    ShapeError,
    TruncatedFileError,
)
from .model import RbmParams, VisibleState
from .rng import PURPOSE_MISC, RngStream

log = logging.getLogger(__name__)

MODEL_MAGIC = b"RBMCF1"
CACHE_MAGIC = b"RBDS1"
MAX_RATING = 5.0


def rating_to_level(rating, K=5):
    """Round half up to an integer level, clamped to 1..K."""
    return min(max(int(math.floor(rating + 0.5)), 1), K)


@dataclass
class RatingDataset:
    """Sparse per-user ratings in CSR layout.

    Row ``u`` spans ``indptr[u]:indptr[u+1]`` of ``items``/``levels``/
    ``timestamps`` and is sorted by item. ``user_ids[u]`` and ``item_ids[i]``
    are the external ids of dense user ``u`` and item ``i``.
    """

    user_ids: np.ndarray
    item_ids: np.ndarray
    indptr: np.ndarray
    items: np.ndarray
    levels: np.ndarray
    timestamps: np.ndarray
    K: int = 5

    def __post_init__(self):
        if self.indptr.size != self.user_ids.size + 1:
            raise ShapeError("indptr must have n_users + 1 entries")

    @property
    def n_users(self):
        return self.user_ids.size

    @property
    def n_items(self):
        return self.item_ids.size

    @property
    def n_ratings(self):
        return self.items.size

    def counts(self):
        return np.diff(self.indptr)

    def _row(self, u):
        return slice(self.indptr[u], self.indptr[u + 1])

    def user(self, u):
        sl = self._row(u)
        return VisibleState(self.items[sl], self.levels[sl])

    def user_timestamps(self, u):
        return self.timestamps[self._row(u)]

    def users(self):
        return [self.user(u) for u in range(self.n_users)]

    def active_users(self):
        """Dense indices of users with at least one rating."""
        return np.flatnonzero(self.counts() > 0)

    def user_index(self, external_id):
        idx = np.searchsorted(self.user_ids, external_id)
        if idx >= self.n_users or self.user_ids[idx] != external_id:
            raise KeyError(f"unknown user id {external_id}")
        return int(idx)

    def item_index(self, external_id):
        idx = np.searchsorted(self.item_ids, external_id)
        if idx >= self.n_items or self.item_ids[idx] != external_id:
            raise KeyError(f"unknown item id {external_id}")
        return int(idx)

    def user_of_rows(self):
        return np.repeat(np.arange(self.n_users), self.counts())

    def to_dense(self, dtype=np.float64):
        """Rating-level matrix with zeros for unobserved entries."""
        R = np.zeros((self.n_users, self.n_items), dtype=dtype)
        R[self.user_of_rows(), self.items] = self.levels
        return R

    def to_sparse(self):
        from scipy.sparse import csr_matrix

        return csr_matrix(
            (self.levels.astype(np.float64), self.items, self.indptr),
            shape=(self.n_users, self.n_items),
        )

    def subset(self, keep):
        """Same index maps, only the rows where ``keep`` is true."""
        keep = np.asarray(keep, dtype=bool)
        counts = np.bincount(self.user_of_rows()[keep], minlength=self.n_users)
        indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return RatingDataset(self.user_ids, self.item_ids, indptr, self.items[keep],
                             self.levels[keep], self.timestamps[keep], self.K)


@dataclass
class SplitDataset:
    train: RatingDataset
    test: RatingDataset


def from_records(users, items, levels, timestamps, K=5):
    """Build a dataset from parallel arrays of external ids (no duplicates)."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    user_ids, u_idx = np.unique(users, return_inverse=True)
    item_ids, i_idx = np.unique(items, return_inverse=True)
    order = np.lexsort((i_idx, u_idx))
    u_idx, i_idx = u_idx[order], i_idx[order]
    if u_idx.size > 1:
        dup = (np.diff(u_idx) == 0) & (np.diff(i_idx) == 0)
        if dup.any():
            raise ShapeError("duplicate (user, item) pair")
    indptr = np.zeros(user_ids.size + 1, dtype=np.int64)
    np.add.at(indptr, u_idx + 1, 1)
    return RatingDataset(
        user_ids,
        item_ids,
        np.cumsum(indptr),
        i_idx.astype(np.int64),
        np.asarray(levels, dtype=np.int64)[order],
        np.asarray(timestamps, dtype=np.int64)[order],
        K,
    )


def parse_ratings(lines, K=5):
    """Parse ``userId,movieId,rating,timestamp`` CSV lines (header first).

    Duplicate (user, item) pairs keep the last occurrence in file order.
    """
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input, header row expected", line=1) from None
    try:
        float(header[0])
        raise ParseError("header row missing", line=1)
    except (ValueError, IndexError):
        pass

    seen = {}
    n_rows = 0
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) < 3:
            raise ParseError(f"expected at least 3 fields, got {len(row)}", line=line)
        try:
            user = int(row[0])
            item = int(row[1])
            rating = float(row[2])
            ts = int(float(row[3])) if len(row) > 3 and row[3].strip() else 0
        except ValueError as exc:
            raise ParseError(f"malformed row {row!r}: {exc}", line=line) from None
        if not math.isfinite(rating) or rating <= 0 or rating > MAX_RATING:
            raise RatingRangeError(f"rating {row[2]} outside (0, {MAX_RATING:g}]", line=line)
        seen[(user, item)] = (rating_to_level(rating, K), ts)
        n_rows += 1

    if not seen:
        raise EmptyDatasetError("no rating rows found")
    keys = np.array(list(seen.keys()), dtype=np.int64)
    vals = np.array(list(seen.values()), dtype=np.int64)
    d = from_records(keys[:, 0], keys[:, 1], vals[:, 0], vals[:, 1], K)
    log.info("parsed %d rows: %d users, %d items, %d ratings (%d duplicates dropped)",
             n_rows, d.n_users, d.n_items, d.n_ratings, n_rows - d.n_ratings)
    return d


def read_ratings(path, K=5):
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_ratings(fh, K)


def filter_min_ratings(d, threshold):
    """Keep users with at least ``threshold`` rated items; items are re-densified."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    keep_users = np.flatnonzero(d.counts() >= threshold)
    if keep_users.size == 0:
        raise EmptyDatasetError(f"no user has {threshold} or more ratings")
    rows = np.concatenate([np.arange(d.indptr[u], d.indptr[u + 1]) for u in keep_users])
    user_of_row = d.user_of_rows()[rows]
    out = from_records(d.user_ids[user_of_row], d.item_ids[d.items[rows]],
                       d.levels[rows], d.timestamps[rows], d.K)
    log.info("min-ratings %d: kept %d/%d users, %d/%d items, %d/%d ratings",
             threshold, out.n_users, d.n_users, out.n_items, d.n_items, out.n_ratings, d.n_ratings)
    return out


def holdout_split(d, per_user, order="first", seed=0):
    """Move ``per_user`` ratings of every user with more than that many into a test set.

    ``order="first"`` takes the earliest by timestamp (ties by item); ``"random"``
    draws them from a per-user seeded stream.
    """
    if per_user < 1:
        raise ValueError("per_user must be >= 1")
    if order not in ("first", "random"):
        raise ValueError(f"unknown holdout order {order!r}")
    is_test = np.zeros(d.n_ratings, dtype=bool)
    for u in range(d.n_users):
        lo, hi = d.indptr[u], d.indptr[u + 1]
        if hi - lo <= per_user:
            continue
        if order == "first":
            # lexsort is stable and rows are item-sorted, so ties break by item
            chosen = np.argsort(d.timestamps[lo:hi], kind="stable")[:per_user]
        else:
            gen = RngStream(seed).derive(PURPOSE_MISC, 0, u).generator()
            chosen = gen.choice(hi - lo, size=per_user, replace=False)
        is_test[lo + chosen] = True
    return SplitDataset(d.subset(~is_test), d.subset(is_test))


def summary_rows(split):
    tr, te = split.train, split.test
    return [
        ("users", tr.n_users),
        ("items", tr.n_items),
        ("train_ratings", tr.n_ratings),
        ("test_ratings", te.n_ratings),
        ("test_users", int((te.counts() > 0).sum())),
    ]


# --- binary formats -------------------------------------------------------

_U64 = struct.Struct("<Q")


def _arr(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype).tobytes()


def _with_crc(body):
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, blob, what):
        self.blob = blob
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise TruncatedFileError(f"{self.what} truncated at byte {len(self.blob)}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self):
        return _U64.unpack(self.take(8))[0]

    def array(self, count, dtype):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt).astype(dt.newbyteorder("="))


def _open_checked(blob, magic, what):
    if len(blob) < len(magic):
        raise TruncatedFileError(f"{what} too short for header")
    if blob[:len(magic)] != magic:
        raise FormatError(f"not a {what}: magic {bytes(blob[:len(magic)])!r}, expected {magic!r}")
    return _Reader(blob, what)


def _check_trailer(reader):
    body_end = reader.pos
    (crc,) = struct.unpack("<I", reader.take(4))
    if reader.pos != len(reader.blob):
        raise FormatError(f"{reader.what}: {len(reader.blob) - reader.pos} unexpected trailing bytes")
    if zlib.crc32(reader.blob[:body_end]) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{reader.what}: CRC-32 mismatch")


def model_bytes(p, item_ids):
    item_ids = np.asarray(item_ids, dtype=np.int64)
    if item_ids.size != p.m:
        raise ShapeError(f"item map has {item_ids.size} entries, model has m={p.m}")
    body = b"".join([
        MODEL_MAGIC,
        struct.pack("<QQQ", p.m, p.F, p.K),
        _arr(item_ids, "<i8"),
        p.tobytes(),
    ])
    return _with_crc(body)


def save_model(p, item_ids, path):
    with open(path, "wb") as fh:
        fh.write(model_bytes(p, item_ids))


def parse_model(blob):
    r = _open_checked(blob, MODEL_MAGIC, "model file")
    r.take(len(MODEL_MAGIC))
    m, F, K = r.u64(), r.u64(), r.u64()
    expected = len(MODEL_MAGIC) + 24 + 8 * (m + m * F * K + m * K + F) + 4
    if len(blob) < expected:
        raise TruncatedFileError(f"model file has {len(blob)} bytes, dims ({m}, {F}, {K}) need {expected}")
    if len(blob) > expected:
        raise FormatError(f"model file has {len(blob)} bytes, dims ({m}, {F}, {K}) need {expected}")
    item_ids = r.array(m, "<i8")
    W = r.array(m * F * K, "<f8").reshape(m, F, K)
    b = r.array(m * K, "<f8").reshape(m, K)
    c = r.array(F, "<f8")
    _check_trailer(r)
    return RbmParams(W, b, c), item_ids


def load_model(path):
    with open(path, "rb") as fh:
        return parse_model(fh.read())


def _dataset_block(d):
    return b"".join([
        _U64.pack(d.n_ratings),
        _arr(d.indptr, "<i8"),
        _arr(d.items, "<i8"),
        _arr(d.levels, "u1"),
        _arr(d.timestamps, "<i8"),
    ])


def cache_bytes(split):
    tr, te = split.train, split.test
    if not (np.array_equal(tr.user_ids, te.user_ids) and np.array_equal(tr.item_ids, te.item_ids)):
        raise ShapeError("train and test must share index maps")
    body = b"".join([
        CACHE_MAGIC,
        struct.pack("<QQQ", tr.K, tr.n_users, tr.n_items),
        _arr(tr.user_ids, "<i8"),
        _arr(tr.item_ids, "<i8"),
        _dataset_block(tr),
        _dataset_block(te),
    ])
    return _with_crc(body)


def save_cache(split, path):
    with open(path, "wb") as fh:
        fh.write(cache_bytes(split))


def parse_cache(blob):
    r = _open_checked(blob, CACHE_MAGIC, "dataset cache")
    r.take(len(CACHE_MAGIC))
    K, n_users, n_items = r.u64(), r.u64(), r.u64()
    user_ids = r.array(n_users, "<i8")
    item_ids = r.array(n_items, "<i8")
    parts = []
    for _ in range(2):
        n = r.u64()
        indptr = r.array(n_users + 1, "<i8")
        items = r.array(n, "<i8")
        levels = r.array(n, "u1").astype(np.int64)
        ts = r.array(n, "<i8")
        parts.append(RatingDataset(user_ids, item_ids, indptr, items, levels, ts, int(K)))
    _check_trailer(r)
    return SplitDataset(*parts)


def load_cache(path):
    with open(path, "rb") as fh:
        return parse_cache(fh.read())


def write_ratings_csv(d, fh):
    """Write a dataset back out in MovieLens CSV form."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["userId", "movieId", "rating", "timestamp"])
    users = d.user_of_rows()
    for row in range(d.n_ratings):
        w.writerow([int(d.user_ids[users[row]]), int(d.item_ids[d.items[row]]),
                    f"{float(d.levels[row]):.1f}", int(d.timestamps[row])])


def ratings_csv_text(d):
    buf = io.StringIO()
    write_ratings_csv(d, buf)
    return buf.getvalue()
