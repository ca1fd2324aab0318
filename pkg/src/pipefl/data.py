"""Federated datasets: synthetic logistic tasks and IDX (MNIST-style) ingestion."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    EmptyShard,
    InsufficientSamples,
    InvalidRange,
    TruncatedPayload,
    UnsupportedElementType,
)
from .rng import DATA, stream

IDX_UBYTE = 0x08


@dataclass(frozen=True)
class Shard:
    client_id: int
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        if len(self.y) == 0:
            raise EmptyShard(f"client {self.client_id} has no samples")
        if len(self.X) != len(self.y):
            raise InvalidRange(f"client {self.client_id}: {len(self.X)} inputs but {len(self.y)} labels")

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class FederatedDataset:
    shards: tuple[Shard, ...]
    feature_dim: int
    n_classes: int = 2
    test: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self) -> None:
        for s in self.shards:
            if s.X.shape[1] != self.feature_dim:
                raise InvalidRange(f"client {s.client_id}: feature dim {s.X.shape[1]} != {self.feature_dim}")

    @property
    def M(self) -> int:
        return len(self.shards)

    @property
    def n(self) -> int:
        return sum(s.n for s in self.shards)

    @property
    def counts(self) -> list[int]:
        return [s.n for s in self.shards]

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.concatenate([s.X for s in self.shards]),
            np.concatenate([s.y for s in self.shards]),
        )


def synth_partition_counts(M: int, n_lo: int, n_hi: int, seed: int) -> list[int]:
    """I.i.d. uniform integer sample counts in ``[n_lo, n_hi]``."""
    if M < 1 or not 1 <= n_lo <= n_hi:
        raise InvalidRange(f"need M >= 1 and 1 <= n_lo <= n_hi, got M={M}, [{n_lo}, {n_hi}]")
    rng = stream(seed, DATA, 0)
    return rng.integers(n_lo, n_hi + 1, size=M).tolist()


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logistic_labels(z: np.ndarray, separation: float, rng: np.random.Generator) -> np.ndarray:
    if np.isinf(separation):
        return (z > 0).astype(np.int64)
    p = _sigmoid(separation * z)
    return (rng.random(len(z)) < p).astype(np.int64)


def synth_logistic_data(
    counts: Sequence[int],
    feature_dim: int,
    separation: float,
    seed: int,
    *,
    non_iid: bool = False,
    skew: float = 0.5,
    test_samples: int = 0,
) -> FederatedDataset:
    """Binary classification shards drawn from one hidden logistic model.

    Features are standard normal. The hidden weight vector is drawn once with
    norm ``sqrt(feature_dim)`` so the noise-free margin has variance
    ``feature_dim``; labels are Bernoulli with probability
    ``sigmoid(separation * margin)``. ``separation=inf`` gives separable
    labels, ``separation=0`` coin flips.

    With ``non_iid`` each client receives a positive-label share drawn from
    ``Beta(skew, skew)`` (smaller ``skew`` means stronger label skew).
    """
    if feature_dim < 1:
        raise InvalidRange(f"feature_dim must be >= 1, got {feature_dim}")
    if separation < 0:
        raise InvalidRange(f"separation must be >= 0, got {separation}")
    w_rng = stream(seed, DATA, 1)
    g = w_rng.standard_normal(feature_dim)
    w_star = g / np.linalg.norm(g) * np.sqrt(feature_dim)

    rng = stream(seed, DATA, 2)

    def draw(n: int) -> tuple[np.ndarray, np.ndarray]:
        X = rng.standard_normal((n, feature_dim))
        return X, _logistic_labels(X @ w_star, separation, rng)

    shards = []
    for cid, n_m in enumerate(counts):
        if n_m < 1:
            raise EmptyShard(f"client {cid} has no samples")
        if not non_iid:
            X, y = draw(int(n_m))
        else:
            share = rng.beta(skew, skew)
            n_pos = int(round(share * n_m))
            X, y = _draw_with_quota(draw, int(n_m), n_pos)
        shards.append(Shard(cid, X, y))

    test = draw(test_samples) if test_samples > 0 else None
    return FederatedDataset(tuple(shards), feature_dim, 2, test)


def _draw_with_quota(draw, n: int, n_pos: int) -> tuple[np.ndarray, np.ndarray]:
    need = {1: n_pos, 0: n - n_pos}
    xs: list[np.ndarray] = []
    ys: list[int] = []
    for _ in range(10_000):
        if need[0] == 0 and need[1] == 0:
            break
        X, y = draw(max(16, 2 * n))
        for xi, yi in zip(X, y):
            if need[int(yi)] > 0:
                need[int(yi)] -= 1
                xs.append(xi)
                ys.append(int(yi))
    else:
        raise InvalidRange("could not satisfy label quota; the hidden model produces one class only")
    return np.array(xs), np.array(ys, dtype=np.int64)


@dataclass(frozen=True)
class IdxTensor:
    dims: tuple[int, ...]
    elements: np.ndarray

    def __post_init__(self) -> None:
        if self.elements.size != int(np.prod(self.dims, dtype=np.int64)):
            raise InvalidRange(f"{self.elements.size} elements do not fill dims {self.dims}")

    def array(self) -> np.ndarray:
        return self.elements.reshape(self.dims)


def idx_parse(data: bytes) -> IdxTensor:
    """Decode an IDX byte stream of unsigned bytes.

    Layout: two zero bytes, element type (0x08), dimension count, one
    big-endian uint32 per dimension, then row-major elements.
    """
    if len(data) < 4:
        raise TruncatedPayload(f"IDX header needs 4 bytes, got {len(data)}")
    if data[0] != 0 or data[1] != 0:
        raise BadMagic(f"IDX stream must start with two zero bytes, got {data[:2].hex()}")
    if data[2] != IDX_UBYTE:
        raise UnsupportedElementType(f"element type 0x{data[2]:02x} not supported (only 0x08)")
    ndim = data[3]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedPayload(f"header declares {ndim} dims but stream has {len(data)} bytes")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    payload = len(data) - header
    if payload < size:
        raise TruncatedPayload(f"dims {dims} need {size} bytes of data, got {payload}")
    if payload > size:
        raise BadMagic(f"{payload - size} trailing bytes after dims {dims}")
    elements = np.frombuffer(data, dtype=np.uint8, count=size, offset=header).copy()
    return IdxTensor(tuple(dims), elements)


def load_idx(path: str | Path) -> IdxTensor:
    """Read an IDX file; ``.gz`` files are decompressed transparently."""
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return idx_parse(fh.read())
    return idx_parse(path.read_bytes())


def images_to_features(images: IdxTensor) -> np.ndarray:
    """Flatten each image and scale pixels to ``[0, 1]``."""
    arr = images.array()
    return arr.reshape(arr.shape[0], -1).astype(np.float64) / 255.0


def partition_real(
    images: IdxTensor, labels: IdxTensor, counts: Sequence[int], seed: int
) -> FederatedDataset:
    """Assign shuffled real samples to clients in contiguous blocks."""
    X = images_to_features(images)
    y = labels.array().astype(np.int64).reshape(-1)
    if len(X) != len(y):
        raise InvalidRange(f"{len(X)} images but {len(y)} labels")
    total = int(sum(counts))
    if total > len(y):
        raise InsufficientSamples(f"counts need {total} samples, only {len(y)} available")
    order = stream(seed, DATA, 3).permutation(len(y))
    shards = []
    start = 0
    for cid, n_m in enumerate(counts):
        idx = order[start : start + n_m]
        shards.append(Shard(cid, X[idx], y[idx]))
        start += n_m
    n_classes = int(y.max()) + 1 if len(y) else 0
    return FederatedDataset(tuple(shards), X.shape[1], n_classes)


def with_test_set(data: FederatedDataset, X: np.ndarray, y: np.ndarray) -> FederatedDataset:
    return FederatedDataset(data.shards, data.feature_dim, data.n_classes, (X, y))

