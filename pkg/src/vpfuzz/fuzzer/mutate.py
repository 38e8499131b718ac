"""Havoc-style stacked byte mutations."""

import enum

MAX_INPUT_LEN = 4096
MAX_STACK_POW = 6  # up to 2**6 = 64 stacked operations
INTERESTING = (0x00, 0xFF, 0x7F, 0x80, 0x0A, 0x00)
MAX_CHUNK = 32


class Op(enum.IntEnum):
    FLIP_BIT = 0
    RANDOM_BYTE = 1
    INTERESTING_BYTE = 2
    DELETE_BYTE = 3
    INSERT_BYTE = 4
    DUPLICATE_CHUNK = 5
    SPLICE_CHUNK = 6


FLIP_BIT, RANDOM_BYTE, INTERESTING_BYTE, DELETE_BYTE, INSERT_BYTE, DUPLICATE_CHUNK, SPLICE_CHUNK = range(7)


def mutate_havoc(data, rng, pool=(), record=None):
    """Apply 1..64 random operations to ``data``; returns new bytes.

    ``rng`` is a ``random.Random``.  ``pool`` holds other queue inputs for
    chunk splicing.  Applied operations are appended to ``record`` if given;
    operations that cannot apply (e.g. deleting from an empty buffer) are
    skipped and not recorded.
    """
    buf = bytearray(data)
    rand = rng.random

    def below(n):
        # float draw is much cheaper than randrange in this loop
        return int(rand() * n)

    n_ops = 1 << below(MAX_STACK_POW + 1)
    n_kinds = len(Op)
    for _ in range(n_ops):
        op = below(n_kinds)
        n = len(buf)
        if op == INSERT_BYTE:
            if n >= MAX_INPUT_LEN:
                continue
            buf.insert(below(n + 1), below(256))
        elif n == 0:
            continue
        elif op == FLIP_BIT:
            bit = below(n * 8)
            buf[bit >> 3] ^= 1 << (bit & 7)
        elif op == RANDOM_BYTE:
            buf[below(n)] = below(256)
        elif op == INTERESTING_BYTE:
            buf[below(n)] = INTERESTING[below(len(INTERESTING))]
        elif op == DELETE_BYTE:
            del buf[below(n)]
        elif op == DUPLICATE_CHUNK:
            size = 1 + below(min(MAX_CHUNK, n))
            start = below(n - size + 1)
            at = below(n + 1)
            buf[at:at] = buf[start:start + size]
            del buf[MAX_INPUT_LEN:]
        else:
            donors = [p for p in pool if p]  # small pools, cheap to rebuild
            if not donors:
                continue
            other = donors[below(len(donors))]
            size = 1 + below(min(MAX_CHUNK, n, len(other)))
            src = below(len(other) - size + 1)
            dst = below(n - size + 1)
            buf[dst:dst + size] = other[src:src + size]
        if record is not None:
            record.append(Op(op))
    return bytes(buf)
