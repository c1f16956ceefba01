"""Fine- and coarse-grained mutation operators and stacked (havoc-style) application."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Sequence

FINE = "fine"
COARSE = "coarse"
MAX_INPUT_LEN = 4096
INTERESTING_BYTES = (0, 1, 16, 32, 64, 100, 127, 128, 255)
MAX_DELTA = 35
MIN_BLOCK, MAX_BLOCK = 2, 64
MAX_STACK_POW = 6


@dataclass(frozen=True)
class MutationOperator:
    name: str
    grain: str
    apply: Callable  # (bytearray, Random, MutationContext) -> bytearray

    def __repr__(self):
        return f"<{self.grain} {self.name}>"


@dataclass
class MutationContext:
    corpus: Sequence[bytes] = ()
    max_len: int = MAX_INPUT_LEN


# fine-grained: in-place, at most one byte touched, length preserved


def _below(rng, n):
    # uniform in [0, n); cheaper than randrange on the hot path
    return int(rng.random() * n)


def _bit_flip_1(buf, rng, ctx):
    if buf:
        bit = _below(rng, len(buf) * 8)
        buf[bit >> 3] ^= 1 << (bit & 7)
    return buf


def _byte_set_random(buf, rng, ctx):
    if buf:
        buf[_below(rng, len(buf))] = _below(rng, 256)
    return buf


def _byte_add_delta(buf, rng, ctx):
    if buf:
        pos = _below(rng, len(buf))
        delta = 1 + _below(rng, 2 * MAX_DELTA)
        if delta > MAX_DELTA:
            delta = MAX_DELTA - delta
        buf[pos] = (buf[pos] + delta) & 0xFF
    return buf


def _byte_set_interesting(buf, rng, ctx):
    if buf:
        buf[_below(rng, len(buf))] = INTERESTING_BYTES[_below(rng, len(INTERESTING_BYTES))]
    return buf


# coarse-grained: block-sized edits, may change length


def _block_len(rng):
    return MIN_BLOCK + _below(rng, MAX_BLOCK - MIN_BLOCK + 1)


def _insert_block(buf, rng, ctx):
    room = ctx.max_len - len(buf)
    if room <= 0:
        return buf
    n = min(_block_len(rng), room)
    pos = _below(rng, len(buf) + 1)
    buf[pos:pos] = rng.randbytes(n)
    return buf


def _delete_block(buf, rng, ctx):
    if not buf:
        return buf
    n = min(_block_len(rng), len(buf))
    pos = _below(rng, len(buf) - n + 1)
    del buf[pos:pos + n]
    return buf


def _overwrite_block(buf, rng, ctx):
    if not buf:
        return buf
    n = min(_block_len(rng), len(buf))
    pos = _below(rng, len(buf) - n + 1)
    buf[pos:pos + n] = rng.randbytes(n)
    return buf


def _splice_segment(buf, rng, ctx):
    corpus = ctx.corpus
    if len(corpus) < 2:
        return _overwrite_block(buf, rng, ctx)
    donor = corpus[_below(rng, len(corpus))]
    if not donor:
        return buf
    n = min(_block_len(rng), len(donor))
    src = _below(rng, len(donor) - n + 1)
    pos = _below(rng, len(buf) + 1)
    end = min(len(buf), pos + n)
    buf[pos:end] = donor[src:src + n]
    if len(buf) > ctx.max_len:
        del buf[ctx.max_len:]
    return buf


BIT_FLIP_1 = MutationOperator("bit_flip_1", FINE, _bit_flip_1)
BYTE_SET_RANDOM = MutationOperator("byte_set_random", FINE, _byte_set_random)
BYTE_ADD_DELTA = MutationOperator("byte_add_delta", FINE, _byte_add_delta)
BYTE_SET_INTERESTING = MutationOperator("byte_set_interesting", FINE, _byte_set_interesting)
INSERT_BLOCK = MutationOperator("insert_block", COARSE, _insert_block)
DELETE_BLOCK = MutationOperator("delete_block", COARSE, _delete_block)
OVERWRITE_BLOCK = MutationOperator("overwrite_block", COARSE, _overwrite_block)
SPLICE_SEGMENT = MutationOperator("splice_segment", COARSE, _splice_segment)


@dataclass(frozen=True)
class OperatorSets:
    FMS: tuple
    HMS: tuple


def default_operator_sets() -> OperatorSets:
    fms = (BIT_FLIP_1, BYTE_SET_RANDOM, BYTE_ADD_DELTA, BYTE_SET_INTERESTING)
    hms = fms + (INSERT_BLOCK, DELETE_BLOCK, OVERWRITE_BLOCK, SPLICE_SEGMENT)
    return OperatorSets(fms, hms)


def select_operator_stack(rng: random.Random, fr: float, sets: OperatorSets, branches: list | None = None) -> list:
    """Draw a stack of 2..64 operators; each slot uses FMS with probability ``fr``.

    If ``branches`` is given, one bool per slot is appended (True = FMS draw).
    """
    size = 2 << _below(rng, MAX_STACK_POW)
    fms, hms = sets.FMS, sets.HMS
    nf, nh = len(fms), len(hms)
    rand = rng.random
    stack = []
    for _ in range(size):
        use_fms = rand() < fr
        if use_fms:
            stack.append(fms[int(rand() * nf)])
        else:
            stack.append(hms[int(rand() * nh)])
        if branches is not None:
            branches.append(use_fms)
    return stack


def mutate(data: bytes, stack: Sequence[MutationOperator], rng: random.Random,
           ctx: MutationContext | None = None) -> bytes:
    ctx = ctx or MutationContext()
    buf = bytearray(data)
    for op in stack:
        buf = op.apply(buf, rng, ctx)
    return bytes(buf)
