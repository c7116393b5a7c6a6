"""Collision sequences, collision-graph connectivity and richness."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple


class _DisjointSets:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.count = n

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra
            self.count -= 1


@dataclass(frozen=True)
class CollisionSequence:
    """Time-ordered collision labels on balls ``0..N-1``; pairs stored as ``(i, j)``, ``i < j``."""

    N: int
    labels: tuple[tuple[int, int], ...]
    times: tuple[float, ...] | None = None

    def __post_init__(self):
        labels = []
        for i, j in self.labels:
            i, j = int(i), int(j)
            if i == j or not (0 <= i < self.N and 0 <= j < self.N):
                raise ValueError(f"bad collision label {(i, j)} for N={self.N}")
            labels.append((min(i, j), max(i, j)))
        object.__setattr__(self, "labels", tuple(labels))
        if self.times is not None:
            times = tuple(float(t) for t in self.times)
            if len(times) != len(labels):
                raise ValueError("times and labels differ in length")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("collision times must be strictly increasing")
            object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return len(self.labels)

    def __add__(self, other: "CollisionSequence") -> "CollisionSequence":
        if other.N != self.N:
            raise ValueError("ball counts differ")
        return CollisionSequence(self.N, self.labels + other.labels)

    @classmethod
    def from_segment(cls, seg) -> "CollisionSequence":
        return cls(seg.params.N, tuple(ev.pair for ev in seg.events), tuple(ev.t for ev in seg.events))

    @classmethod
    def from_csv(cls, path, N: int) -> "CollisionSequence":
        """Read the event log written by :func:`hardballs.flow.write_events_csv`."""
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            N,
            tuple((int(row["i"]), int(row["j"])) for row in rows),
            tuple(float(row["t"]) for row in rows),
        )


def graph_edges(seq: CollisionSequence, start: int = 0, stop: int | None = None) -> set[tuple[int, int]]:
    return set(seq.labels[start:stop])


def is_connected(seq: CollisionSequence, start: int = 0, stop: int | None = None) -> bool:
    """Whether the edges ``seq.labels[start:stop]`` connect all ``N`` balls."""
    dsu = _DisjointSets(seq.N)
    for i, j in seq.labels[start:stop]:
        dsu.union(i, j)
        if dsu.count == 1:
            return True
    return dsu.count == 1


def richness_blocks(seq: CollisionSequence) -> list[tuple[int, int]]:
    """Greedy earliest-closing split into consecutive connected blocks ``[start, stop)``."""
    blocks = []
    dsu = _DisjointSets(seq.N)
    start = 0
    for k, (i, j) in enumerate(seq.labels):
        dsu.union(i, j)
        if dsu.count == 1:
            blocks.append((start, k + 1))
            dsu = _DisjointSets(seq.N)
            start = k + 1
    return blocks


def richness(seq: CollisionSequence) -> int:
    return len(richness_blocks(seq))


class ConnectedPrefix(NamedTuple):
    k: int
    c1: frozenset[int]
    c2: frozenset[int]


def first_connected_prefix(seq: CollisionSequence) -> ConnectedPrefix | None:
    """Least ``k`` with the first ``k`` collisions connected, and the two
    components of the first ``k - 1`` (``c1`` holds the smaller label of the
    closing collision)."""
    dsu = _DisjointSets(seq.N)
    for k, (i, j) in enumerate(seq.labels, start=1):
        if dsu.count == 2 and dsu.find(i) != dsu.find(j):
            ri = dsu.find(i)
            c1 = frozenset(b for b in range(seq.N) if dsu.find(b) == ri)
            return ConnectedPrefix(k, c1, frozenset(range(seq.N)) - c1)
        dsu.union(i, j)
    return None
