"""Labeled data, member/non-member pools and per-trial mini-dataset sampling.

Samples carry a global integer id so that disjointness between the train and
holdout splits, and between the mini-datasets of one trial, can be checked by
id rather than by value.
"""

from __future__ import annotations

import logging
import os
import struct
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import CapacityError, ConfigError, FormatError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MEMBER = "member"
NON_MEMBER = "non-member"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix ``X`` (N x d), integer labels ``y`` and class count ``c``."""

    X: np.ndarray
    y: np.ndarray
    c: int
    ids: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"{X.shape[0]} samples but {y.shape} labels")
        if self.c < 2:
            raise ValueError(f"class count must be >= 2, got {self.c}")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        if y.size and (y.min() < 0 or y.max() >= self.c):
            raise ValueError(f"labels must lie in [0, {self.c})")
        ids = np.arange(len(y)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != y.shape:
            raise ValueError("ids must have one entry per sample")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "ids", _frozen(ids))

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.X[i], int(self.y[i]))

    def __iter__(self) -> Iterator[LabeledSample]:
        return (self[i] for i in range(len(self)))

    @property
    def samples(self) -> list[LabeledSample]:
        return list(self)

    def subset(self, rows) -> Dataset:
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.X[rows], self.y[rows], self.c, self.ids[rows])

    def concat(self, other: Dataset) -> Dataset:
        if other.d != self.d or other.c != self.c:
            raise ValueError("cannot concatenate datasets with different d or c")
        return Dataset(
            np.vstack([self.X, other.X]),
            np.concatenate([self.y, other.y]),
            self.c,
            np.concatenate([self.ids, other.ids]),
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.c)


@dataclass(frozen=True, eq=False)
class SplitPools:
    """Train/holdout split with per-class member (P_r) and non-member (Q_r) pools.

    ``consumed`` holds holdout sample ids that a fine-tuning attack has turned
    into training members; they are excluded from every non-member pool.
    """

    train: Dataset
    holdout: Dataset
    consumed: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.train.d != self.holdout.d or self.train.c != self.holdout.c:
            raise ValueError("train and holdout must share d and c")
        overlap = np.intersect1d(self.train.ids, self.holdout.ids)
        if overlap.size:
            raise ValueError(f"train and holdout share {overlap.size} sample ids")
        object.__setattr__(self, "consumed", frozenset(int(i) for i in self.consumed))

    @property
    def c(self) -> int:
        return self.train.c

    def member_pool(self, r: int) -> np.ndarray:
        """Row positions in ``train`` of class ``r``."""
        return np.flatnonzero(self.train.y == r)

    def nonmember_pool(self, r: int) -> np.ndarray:
        """Row positions in ``holdout`` of class ``r``, excluding consumed ids."""
        rows = np.flatnonzero(self.holdout.y == r)
        if self.consumed:
            keep = ~np.isin(self.holdout.ids[rows], np.fromiter(self.consumed, np.int64))
            rows = rows[keep]
        return rows

    def capacity(self) -> dict[int, tuple[int, int]]:
        return {r: (len(self.member_pool(r)), len(self.nonmember_pool(r))) for r in range(self.c)}

    def empty_classes(self) -> list[int]:
        return [r for r, (p, q) in self.capacity().items() if p == 0 or q == 0]

    def with_consumed(self, ids) -> SplitPools:
        return SplitPools(self.train, self.holdout, self.consumed | {int(i) for i in ids})


@dataclass(frozen=True, eq=False)
class MiniDataset:
    X: np.ndarray
    label: int
    origin: str
    index: int
    ids: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def samples(self) -> list[LabeledSample]:
        return [LabeledSample(x, self.label) for x in self.X]


def generate_synthetic(seed: int, c: int, d: int, per_class: int, spread: float,
                       separation: float = 3.0) -> Dataset:
    """Isotropic Gaussian blobs, one per class, with means on scaled one-hot axes.

    Class ``r`` is centred at ``separation * (1 + r // d) * e_(r mod d)`` so the
    means stay distinct when ``c > d``. Samples are returned grouped by class.
    """
    if c < 2:
        raise ValueError(f"need c >= 2 classes, got {c}")
    if d < 2:
        raise ValueError(f"need d >= 2 dimensions, got {d}")
    if per_class < 1:
        raise ValueError(f"need per_class >= 1, got {per_class}")
    if not spread > 0:
        raise ValueError(f"spread must be positive, got {spread}")
    rng = np.random.default_rng(seed)
    means = np.zeros((c, d))
    for r in range(c):
        means[r, r % d] = separation * (1 + r // d)
    y = np.repeat(np.arange(c), per_class)
    X = means[y] + spread * rng.standard_normal((c * per_class, d))
    return Dataset(X, y, c)


def _read_idx(path: str | os.PathLike, magic: int) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise FormatError(f"{path}: truncated IDX payload ({len(raw) - header} of {size} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, c: int | None = None) -> Dataset:
    """Read an MNIST-style IDX image/label pair; pixels scaled to [0, 1] and flattened."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image/label count mismatch: {images.shape[0]} images, {labels.shape[0]} labels")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    if c is None:
        c = max(int(y.max()) + 1 if y.size else 2, 2)
    return Dataset(X, y, c)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def save_csv(data: Dataset, path) -> None:
    with open(path, "w") as f:
        f.write(f"{data.d},{data.c}\n")
        for x, y in zip(data.X, data.y):
            f.write(",".join(f"{v:.17g}" for v in x) + f",{int(y)}\n")


def load_csv(path) -> Dataset:
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty dataset file")
    try:
        d, c = (int(v) for v in lines[0].split(","))
        rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if any(len(row) != d + 1 for row in rows):
        raise FormatError(f"{path}: every row needs {d} features and a label")
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), d + 1)
    return Dataset(arr[:, :d], arr[:, d], c)


def split_pools(data: Dataset, train_fraction: float, seed: int,
                stratify: bool = False) -> SplitPools:
    """Shuffle ``data`` with ``seed`` and cut it into train and holdout parts.

    With ``stratify`` the fraction is applied within each class, which pins
    per-class pool sizes exactly.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(data))
    if stratify:
        train_rows, hold_rows = [], []
        labels = data.y[perm]
        for r in range(data.c):
            rows = perm[labels == r]
            k = int(round(train_fraction * len(rows)))
            train_rows.append(rows[:k])
            hold_rows.append(rows[k:])
        # keep the shuffled order rather than grouping by class
        tr = np.concatenate(train_rows)
        ho = np.concatenate(hold_rows)
        rank = np.empty(len(perm), dtype=np.int64)
        rank[perm] = np.arange(len(perm))
        tr = tr[np.argsort(rank[tr])]
        ho = ho[np.argsort(rank[ho])]
    else:
        k = int(round(train_fraction * len(data)))
        tr, ho = perm[:k], perm[k:]
    pools = SplitPools(data.subset(tr), data.subset(ho))
    empty = pools.empty_classes()
    if empty:
        warnings.warn(f"classes {empty} have no samples in the train or holdout part",
                      stacklevel=2)
    return pools


def sample_trial(pools: SplitPools, r: int, m: int, n: int, seed: int) -> list[MiniDataset]:
    """Draw one member and ``m - 1`` disjoint non-member mini-datasets of class ``r``.

    Each mini-dataset gets a position in ``[0, m)`` from a seeded permutation;
    the returned list is ordered by that position.
    """
    if m < 2 or n < 2:
        raise ConfigError(f"need m >= 2 and n >= 2, got m={m}, n={n}")
    if not 0 <= r < pools.c:
        raise ConfigError(f"class {r} outside [0, {pools.c})")
    P = pools.member_pool(r)
    Q = pools.nonmember_pool(r)
    if len(P) < n:
        raise CapacityError(f"class {r}: |P| = {len(P)} < n = {n}")
    if len(Q) < n * (m - 1):
        raise CapacityError(f"class {r}: |Q| = {len(Q)} < n(m-1) = {n * (m - 1)}")
    rng = np.random.default_rng([seed, r])
    member_rows = rng.choice(P, size=n, replace=False)
    other_rows = rng.choice(Q, size=n * (m - 1), replace=False).reshape(m - 1, n)
    positions = rng.permutation(m)
    minis = [MiniDataset(pools.train.X[member_rows], r, MEMBER, int(positions[0]),
                         pools.train.ids[member_rows])]
    for k, rows in enumerate(other_rows, start=1):
        minis.append(MiniDataset(pools.holdout.X[rows], r, NON_MEMBER, int(positions[k]),
                                 pools.holdout.ids[rows]))
    return sorted(minis, key=lambda mini: mini.index)


def member_index(minis: Sequence[MiniDataset]) -> int:
    (idx,) = [mini.index for mini in minis if mini.origin == MEMBER]
    return idx
