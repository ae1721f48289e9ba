"""Layered experience storage: per-environment staging feeding a ring memory.

Both layers are keyed by (name, dim) field specs, so one buffer class
serves every agent; only the field list differs.  Batches are plain dicts
of name -> (rows x dim) float64 arrays.
"""

from __future__ import annotations

import numpy as np


class FieldSpec:
    """Name and per-row width of one stored field."""

    def __init__(self, name, dim):
        if dim < 1:
            raise ValueError("field dim must be >= 1")
        self.name = name
        self.dim = int(dim)

    def __repr__(self):
        return f"FieldSpec({self.name!r}, {self.dim})"

    def __eq__(self, other):
        return (isinstance(other, FieldSpec)
                and self.name == other.name and self.dim == other.dim)


def _check_unique(fields):
    names = [f.name for f in fields]
    if len(set(names)) != len(names):
        raise ValueError("field names must be unique")


class StagingBuffer:
    """Append-only per-environment row lists, collected into a RingBuffer."""

    def __init__(self, n_envs, fields):
        _check_unique(fields)
        self.n_envs = int(n_envs)
        self.fields = list(fields)
        self._rows = [{f.name: [] for f in fields} for _ in range(self.n_envs)]

    def store(self, env_idx, row):
        """Append one keyed row to the slot of environment `env_idx`."""
        if not 0 <= env_idx < self.n_envs:
            raise IndexError(f"env_idx {env_idx} out of range")
        slot = self._rows[env_idx]
        staged = []
        for f in self.fields:
            if f.name not in row:
                raise KeyError(f"row is missing field {f.name!r}")
            value = np.asarray(row[f.name], dtype=np.float64).reshape(-1)
            if value.size != f.dim:
                raise ValueError(
                    f"field {f.name!r} has dim {value.size}, expected {f.dim}")
            staged.append(value)
        for f, value in zip(self.fields, staged):
            slot[f.name].append(value)

    def size(self, env_idx):
        return len(self._rows[env_idx][self.fields[0].name])

    def total(self):
        return sum(self.size(i) for i in range(self.n_envs))

    def take(self, env_idx, n_rows):
        """Pop the oldest `n_rows` rows of one slot as a columnar dict."""
        slot = self._rows[env_idx]
        if n_rows > self.size(env_idx):
            raise ValueError("not enough staged rows")
        out = {}
        for f in self.fields:
            rows = slot[f.name][:n_rows]
            del slot[f.name][:n_rows]
            out[f.name] = (np.stack(rows) if rows
                           else np.empty((0, f.dim), dtype=np.float64))
        return out

    def collect(self, dest: "RingBuffer"):
        """Move every staged row into `dest`, env-major, and clear. Returns rows moved."""
        if dest.fields != self.fields:
            raise ValueError("field specs of staging and destination differ")
        moved = 0
        for i in range(self.n_envs):
            n = self.size(i)
            if n:
                dest.insert(self.take(i, n))
                moved += n
        return moved


class RingBuffer:
    """Fixed-capacity keyed columnar memory with wraparound overwrite."""

    def __init__(self, capacity, fields):
        _check_unique(fields)
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.fields = list(fields)
        self._store = {f.name: np.zeros((self.capacity, f.dim)) for f in fields}
        self.head = 0
        self.count = 0

    def insert(self, rows):
        """Append a columnar batch, overwriting the oldest rows on wrap."""
        arrays = {}
        n = None
        for f in self.fields:
            a = np.asarray(rows[f.name], dtype=np.float64)
            if a.ndim == 1:
                a = a.reshape(-1, 1) if f.dim == 1 else a.reshape(1, -1)
            if a.shape[1] != f.dim:
                raise ValueError(
                    f"field {f.name!r} has dim {a.shape[1]}, expected {f.dim}")
            if n is None:
                n = a.shape[0]
            elif a.shape[0] != n:
                raise ValueError("fields carry different row counts")
            arrays[f.name] = a
        if not n:
            return
        if n >= self.capacity:
            # only the most recent `capacity` rows can survive
            for f in self.fields:
                self._store[f.name][:] = arrays[f.name][n - self.capacity:]
            self.head = 0
            self.count = self.capacity
            return
        first = min(n, self.capacity - self.head)
        for f in self.fields:
            self._store[f.name][self.head:self.head + first] = arrays[f.name][:first]
            if first < n:
                self._store[f.name][: n - first] = arrays[f.name][first:]
        self.head = (self.head + n) % self.capacity
        self.count = min(self.count + n, self.capacity)

    def sample(self, batch_size, rng):
        """Uniform sample with replacement over the valid rows, row-aligned."""
        if batch_size > self.count:
            raise ValueError("not enough rows to sample")
        idx = rng.integers(self.count, size=batch_size)
        phys = self._physical(idx)
        return {f.name: self._store[f.name][phys].copy() for f in self.fields}

    def drain_all(self):
        """Return all valid rows in insertion order and reset to empty."""
        idx = self._physical(np.arange(self.count))
        out = {f.name: self._store[f.name][idx].copy() for f in self.fields}
        self.head = 0
        self.count = 0
        return out

    def _physical(self, logical):
        # logical index 0 is the oldest surviving row
        if self.count < self.capacity:
            return logical
        return (self.head + logical) % self.capacity
