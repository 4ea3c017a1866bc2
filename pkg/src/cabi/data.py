"""Transition datasets: binary persistence, normalization statistics, holdout
splitting, and real/synthetic mixed batch sampling.

On-disk format ("CABI-DS v1"): a little-endian float32 record file laid out
[s | a | r | s' | done] per record, with a JSON metadata sidecar at
`<path>.json` holding {format, env, state_dim, action_dim, count, seed}.
"""

from __future__ import annotations

import json
import math
import os
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

FORMAT_NAME = "CABI-DS v1"
STD_FLOOR = 1e-6

Batch = namedtuple("Batch", ["s", "a", "r", "s2", "done"])


class DatasetFormatError(Exception):
    """Malformed header, truncated records, or dimension mismatch on load."""


@dataclass
class Dataset:
    """Immutable set of (s, a, r, s', done) records, stored float32."""

    env: str
    state_dim: int
    action_dim: int
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    seed: int | None = None

    @classmethod
    def from_arrays(cls, env, s, a, r, s2, done, seed=None):
        s = np.asarray(s, dtype=np.float32)
        a = np.asarray(a, dtype=np.float32)
        r = np.asarray(r, dtype=np.float32).reshape(-1)
        s2 = np.asarray(s2, dtype=np.float32)
        done = np.asarray(done, dtype=np.float32).reshape(-1)
        n = len(r)
        if not (len(s) == len(a) == len(s2) == len(done) == n):
            raise ValueError("field lengths disagree")
        return cls(env=env, state_dim=s.shape[1] if n else s.shape[-1],
                   action_dim=a.shape[1] if n else a.shape[-1],
                   s=s, a=a, r=r, s2=s2, done=done, seed=seed)

    @property
    def count(self) -> int:
        return len(self.r)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)
        return Dataset(env=self.env, state_dim=self.state_dim,
                       action_dim=self.action_dim, seed=self.seed,
                       s=self.s[idx], a=self.a[idx], r=self.r[idx],
                       s2=self.s2[idx], done=self.done[idx])

    def records(self) -> np.ndarray:
        """All records as one (count, record_width) float32 matrix."""
        n = self.count
        return np.hstack([
            self.s.reshape(n, self.state_dim),
            self.a.reshape(n, self.action_dim),
            self.r.reshape(n, 1),
            self.s2.reshape(n, self.state_dim),
            self.done.reshape(n, 1),
        ]).astype(np.float32)


def record_width(state_dim: int, action_dim: int) -> int:
    return 2 * state_dim + action_dim + 2


def save(dataset: Dataset, path: str) -> None:
    meta = {
        "format": FORMAT_NAME,
        "env": dataset.env,
        "state_dim": dataset.state_dim,
        "action_dim": dataset.action_dim,
        "count": dataset.count,
        "seed": dataset.seed,
    }
    recs = np.ascontiguousarray(dataset.records(), dtype="<f4")
    with open(path, "wb") as f:
        f.write(recs.tobytes())
    with open(path + ".json", "w") as f:
        json.dump(meta, f, indent=1)


def load(path: str) -> Dataset:
    meta_path = path + ".json"
    if not os.path.exists(meta_path):
        raise DatasetFormatError(f"missing metadata sidecar: {meta_path}")
    try:
        with open(meta_path) as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"malformed metadata: {e}") from e
    for key in ("format", "env", "state_dim", "action_dim", "count"):
        if key not in meta:
            raise DatasetFormatError(f"metadata missing field {key!r}")
    if meta["format"] != FORMAT_NAME:
        raise DatasetFormatError(f"unsupported format {meta['format']!r}")
    sd, ad, count = meta["state_dim"], meta["action_dim"], meta["count"]
    width = record_width(sd, ad)
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != count * width:
        raise DatasetFormatError(
            f"record file holds {raw.size} floats, expected {count * width}"
        )
    recs = raw.reshape(count, width) if count else raw.reshape(0, width)
    s = recs[:, :sd]
    a = recs[:, sd:sd + ad]
    r = recs[:, sd + ad]
    s2 = recs[:, sd + ad + 1:sd + ad + 1 + sd]
    done = recs[:, -1]
    return Dataset(env=meta["env"], state_dim=sd, action_dim=ad,
                   s=s.copy(), a=a.copy(), r=r.copy(), s2=s2.copy(),
                   done=done.copy(), seed=meta.get("seed"))


def split_holdout(dataset: Dataset, n: int, rng) -> tuple[Dataset, Dataset]:
    """Disjoint seeded (train, holdout) partition with holdout size `n`.

    Datasets smaller than 10*n fall back to a 10% holdout.
    """
    count = dataset.count
    if n >= count:
        raise ValueError(f"holdout size {n} must be < dataset count {count}")
    if count < 10 * n:
        n = max(1, count // 10)
    perm = rng.permutation(count)
    hold_idx = np.sort(perm[:n])
    train_idx = np.sort(perm[n:])
    return dataset.subset(train_idx), dataset.subset(hold_idx)


@dataclass
class NormStats:
    """Per-dimension mean/std over the [s | a | r] layout of a dataset."""

    mean: np.ndarray
    std: np.ndarray
    state_dim: int = 0
    action_dim: int = 0

    @classmethod
    def from_rows(cls, rows, state_dim=0, action_dim=0):
        rows = np.asarray(rows, dtype=np.float64)
        mean = rows.mean(axis=0)
        std = np.maximum(rows.std(axis=0), STD_FLOOR)
        return cls(mean=mean, std=std, state_dim=state_dim,
                   action_dim=action_dim)

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def slice(self, lo, hi) -> "NormStats":
        return NormStats(mean=self.mean[lo:hi], std=self.std[lo:hi])

    def concat(self, other) -> "NormStats":
        return NormStats(mean=np.concatenate([self.mean, other.mean]),
                         std=np.concatenate([self.std, other.std]))

    @property
    def state(self) -> "NormStats":
        return self.slice(0, self.state_dim)

    @property
    def action(self) -> "NormStats":
        return self.slice(self.state_dim, self.state_dim + self.action_dim)

    @property
    def reward(self) -> "NormStats":
        d = self.state_dim + self.action_dim
        return self.slice(d, d + 1)


def norm_stats(dataset: Dataset) -> NormStats:
    """Statistics over the [s | a | r] layout; the state slice pools current
    and next states so it also covers backward-model conditioning."""
    if dataset.count == 0:
        raise ValueError("cannot compute statistics of an empty dataset")
    states = np.vstack([dataset.s, dataset.s2]).astype(np.float64)
    mean = np.concatenate([
        states.mean(axis=0),
        dataset.a.astype(np.float64).mean(axis=0),
        [float(dataset.r.astype(np.float64).mean())],
    ])
    std = np.concatenate([
        states.std(axis=0),
        dataset.a.astype(np.float64).std(axis=0),
        [float(dataset.r.astype(np.float64).std())],
    ])
    return NormStats(mean=mean, std=np.maximum(std, STD_FLOOR),
                     state_dim=dataset.state_dim,
                     action_dim=dataset.action_dim)


@dataclass
class MixedSampler:
    """Draws batches with floor(eta*N) real and N - floor(eta*N) synthetic
    records, uniformly with replacement."""

    real: Dataset
    synthetic: object = None  # anything with s/a/r/s2/done arrays and count
    eta: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")


def real_count(eta: float, n: int) -> int:
    # epsilon guards float round-down of exactly-integer products
    return int(math.floor(eta * n + 1e-9))


def mixed_batch(sampler: MixedSampler, n: int, rng) -> Batch:
    n_real = real_count(sampler.eta, n)
    n_syn = n - n_real
    if n_real > 0 and sampler.real.count == 0:
        raise ValueError("real dataset is empty but eta requires real samples")
    if n_syn > 0 and (sampler.synthetic is None or sampler.synthetic.count == 0):
        raise ValueError("model buffer is empty but eta < 1 requires synthetic samples")
    parts = []
    if n_real > 0:
        idx = rng.integers(0, sampler.real.count, size=n_real)
        d = sampler.real
        parts.append((d.s[idx], d.a[idx], d.r[idx], d.s2[idx], d.done[idx]))
    if n_syn > 0:
        b = sampler.synthetic
        idx = rng.integers(0, b.count, size=n_syn)
        parts.append((b.s[idx], b.a[idx], b.r[idx], b.s2[idx], b.done[idx]))
    cols = [np.concatenate([p[i] for p in parts]).astype(np.float64)
            for i in range(5)]
    order = rng.permutation(n)
    return Batch(*[c[order] for c in cols])
