"""Seed queue with favored-entry culling and energy-weighted scheduling."""

import statistics
from dataclasses import dataclass, field

import numpy as np

from vpfuzz.coverage import MAP_SIZE

FAVORED_PROBABILITY = 0.8
BASE_ENERGY = 100
RECENT_WINDOW_S = 60.0
SLOW_FACTOR = 2.0


@dataclass
class QueueEntry:
    input: bytes
    coverage_digest: int
    exec_us: int
    found_at: float
    indices: np.ndarray = field(repr=False, default=None)
    favored: bool = False
    energy: int = BASE_ENERGY
    execs: int = 0
    index: int = -1


def compute_energy(entry, now, median_exec_us):
    energy = BASE_ENERGY
    if now - entry.found_at < RECENT_WINDOW_S:
        energy *= 2
    if median_exec_us > 0 and entry.exec_us > SLOW_FACTOR * median_exec_us:
        energy //= 2
    return max(1, energy)


class SeedQueue:
    """Entries plus, per map byte, the smallest entry covering it."""

    def __init__(self, map_size=MAP_SIZE):
        self.entries = []
        self._inputs = set()
        self.top_rated = np.full(map_size, -1, dtype=np.int64)
        self.top_len = np.zeros(map_size, dtype=np.int64)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, data):
        return bytes(data) in self._inputs

    def add(self, entry):
        if entry.input in self._inputs:
            raise ValueError("duplicate queue input")
        entry.index = len(self.entries)
        self.entries.append(entry)
        self._inputs.add(entry.input)
        idx = entry.indices if entry.indices is not None else np.zeros(0, np.int64)
        better = (self.top_rated[idx] < 0) | (len(entry.input) < self.top_len[idx])
        self.top_rated[idx[better]] = entry.index
        self.top_len[idx[better]] = len(entry.input)
        self.cull()
        return entry

    def cull(self):
        """Greedy cover: each map byte not yet covered by a favored entry
        promotes the smallest entry that hits it."""
        for e in self.entries:
            e.favored = False
        covered = np.zeros(self.top_rated.shape[0], dtype=bool)
        for i in np.flatnonzero(self.top_rated >= 0):
            if covered[i]:
                continue
            e = self.entries[self.top_rated[i]]
            e.favored = True
            covered[e.indices] = True

    def refresh_energy(self, now):
        median = statistics.median(e.exec_us for e in self.entries) if self.entries else 0
        for e in self.entries:
            e.energy = compute_energy(e, now, median)

    def schedule_next(self, rng, now=0.0):
        """Pick the next entry to fuzz: favored ones 80% of the time when
        the queue has both kinds, otherwise by energy."""
        if not self.entries:
            raise IndexError("schedule_next on an empty queue")
        if len(self.entries) == 1:
            return self.entries[0]
        self.refresh_energy(now)
        fav = [e for e in self.entries if e.favored]
        rest = [e for e in self.entries if not e.favored]
        if fav and rest:
            pool = fav if rng.random() < FAVORED_PROBABILITY else rest
        else:
            pool = self.entries
        return rng.choices(pool, weights=[e.energy for e in pool])[0]
