"""AFL-style edge coverage: a 64 KiB map of bucketed hit counters."""

import enum
import hashlib

import numpy as np

from vpfuzz._jit import JIT_ENABLED, kernel

MAP_SIZE = 1 << 16
HASH_MULT = 0x9E3779B1

NOTHING = 0
NEW_COUNTS = 1
NEW_EDGES = 2


class NewBits(enum.IntEnum):
    NOTHING = NOTHING
    NEW_COUNTS = NEW_COUNTS
    NEW_EDGES = NEW_EDGES


class MapSizeError(ValueError):
    """Two coverage maps of different sizes were compared."""


@kernel
def hash16(addr):
    # 32x32 multiply split in halves so the product never leaves int64 range
    a = addr & 0xFFFFFFFF
    lo = a * (HASH_MULT & 0xFFFF)
    hi = ((a * (HASH_MULT >> 16)) & 0xFFFF) << 16
    return (((lo + hi) & 0xFFFFFFFF) >> 16) & 0xFFFF


@kernel
def record_edge_kernel(cov, cov_state, block_addr):
    cur = hash16(block_addr)
    idx = (cur ^ cov_state[0]) & (cov.shape[0] - 1)
    if cov[idx] != 255:
        cov[idx] += 1
    cov_state[0] = cur >> 1


def _bucket_table():
    lut = np.zeros(256, dtype=np.uint8)
    lut[1] = 1
    lut[2] = 2
    lut[3] = 4
    lut[4:8] = 8
    lut[8:16] = 16
    lut[16:32] = 32
    lut[32:128] = 64
    lut[128:256] = 128
    return lut


BUCKETS = _bucket_table()


@kernel
def has_new_bits_kernel(virgin, local):
    """Compare classified ``local`` against ``virgin`` and merge it in.

    Returns NOTHING, NEW_COUNTS or NEW_EDGES.
    """
    n = local.shape[0]
    ret = 0
    w_virgin = virgin.view(np.uint64)
    w_local = local.view(np.uint64)
    for w in range(n >> 3):
        lw = w_local[w]
        if lw == 0:
            continue
        gw = w_virgin[w]
        if (lw & ~gw) == 0:
            continue
        base = w << 3
        for j in range(8):
            lb = local[base + j]
            gb = virgin[base + j]
            if lb & ~gb:
                if gb == 0:
                    ret = 2
                elif ret == 0:
                    ret = 1
        w_virgin[w] = gw | lw
    return ret


@kernel
def classify_into(raw, out, lut):
    # maps are sparse: whole zero words are copied through untouched
    w_raw = raw.view(np.uint64)
    w_out = out.view(np.uint64)
    for w in range(raw.shape[0] >> 3):
        if w_raw[w] == 0:
            w_out[w] = 0
            continue
        base = w << 3
        for j in range(8):
            out[base + j] = lut[raw[base + j]]


class CoverageMap:
    """Raw hit counters plus the rolling previous-location register."""

    def __init__(self, size=MAP_SIZE):
        if size <= 0 or size & (size - 1):
            raise ValueError(f"map size must be a power of two, got {size}")
        self.bytes = np.zeros(size, dtype=np.uint8)
        self.state = np.zeros(1, dtype=np.int64)

    @property
    def prev_loc(self):
        return int(self.state[0])

    @property
    def size(self):
        return self.bytes.shape[0]

    def reset(self):
        self.bytes[:] = 0
        self.state[0] = 0

    def record_edge(self, block_addr):
        record_edge_kernel(self.bytes, self.state, block_addr)

    def copy(self):
        other = CoverageMap.__new__(CoverageMap)
        other.bytes = self.bytes.copy()
        other.state = self.state.copy()
        return other


def classify_counts(raw):
    """Replace each raw counter by its bucket mask.  Returns a new array."""
    raw = _as_array(raw)
    if JIT_ENABLED and raw.shape[0] % 8 == 0 and raw.flags.c_contiguous:
        out = np.empty_like(raw)
        classify_into(raw, out, BUCKETS)
        return out
    return np.take(BUCKETS, raw)


def has_new_bits(global_map, local):
    """Merge classified ``local`` into ``global_map``; report what was new.

    ``global_map`` is modified in place whenever the verdict is not NOTHING.
    """
    g = _as_array(global_map)
    loc = _as_array(local)
    if g.shape != loc.shape:
        raise MapSizeError(f"coverage map size mismatch: {g.shape[0]} vs {loc.shape[0]}")
    if g.shape[0] % 8:
        raise MapSizeError("coverage map size must be a multiple of 8")
    if JIT_ENABLED:
        return NewBits(has_new_bits_kernel(g, np.ascontiguousarray(loc)))
    return NewBits(_has_new_bits_numpy(g, loc))


def _has_new_bits_numpy(g, loc):
    fresh = loc & ~g
    if not fresh.any():
        return NOTHING
    verdict = NEW_EDGES if (g[fresh != 0] == 0).any() else NEW_COUNTS
    g |= loc
    return verdict


def digest(classified):
    """64-bit digest of a classified map."""
    h = hashlib.blake2b(_as_array(classified).tobytes(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def nonzero_indices(cov):
    return np.flatnonzero(_as_array(cov))


def _as_array(m):
    if isinstance(m, CoverageMap):
        return m.bytes
    return m
