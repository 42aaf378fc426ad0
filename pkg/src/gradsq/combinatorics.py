"""Lazy enumeration of the combinatorial objects behind the k-point formulas.

Partitions are tuples of blocks (each a sorted tuple), blocks ordered by
their minimum. Cycles are tuples in canonical rotation (minimum first);
``c = (a, b, c)`` means a -> b -> c -> a. Matchings are tuples of pairs
(a, b) with a < b, ordered by first element.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterable, Iterator, Sequence

from .errors import OddSize


def _elements(k_or_set) -> tuple:
    if isinstance(k_or_set, int):
        if k_or_set < 0:
            raise ValueError("k must be >= 0")
        return tuple(range(k_or_set))
    return tuple(sorted(k_or_set))


def set_partitions(k_or_set) -> Iterator[tuple[tuple, ...]]:
    """All partitions of the set, singletons allowed."""
    yield from _partitions(_elements(k_or_set), min_block=1)


def partitions_no_singletons(k_or_set) -> Iterator[tuple[tuple, ...]]:
    """Partitions whose blocks all have size >= 2.

    The block containing the smallest remaining element is chosen first,
    largest blocks first, so for k = 4 the order is 0123, 01|23, 02|13, 03|12.
    """
    yield from _partitions(_elements(k_or_set), min_block=2)


def _partitions(elems: tuple, min_block: int) -> Iterator[tuple[tuple, ...]]:
    if not elems:
        yield ()
        return
    first, rest = elems[0], elems[1:]
    for size in range(len(rest), min_block - 2, -1):
        for mates in itertools.combinations(rest, size):
            remaining = tuple(e for e in rest if e not in mates)
            if 0 < len(remaining) < min_block:
                continue
            block = (first,) + mates
            for tail in _partitions(remaining, min_block):
                yield (block,) + tail


def full_cycles_no_fixed(block: Iterable) -> Iterator[tuple]:
    """Single-cycle permutations of ``block`` without fixed points: (|B|-1)! of them."""
    elems = tuple(sorted(block))
    if not elems:
        raise ValueError("block must be nonempty")
    if len(elems) == 1:
        return
    head, rest = elems[0], elems[1:]
    for perm in itertools.permutations(rest):
        yield (head,) + perm


def cycle_mapping(cycle: Sequence) -> dict:
    """j -> sigma(j) for a cycle in tuple form."""
    return {a: cycle[(t + 1) % len(cycle)] for t, a in enumerate(cycle)}


def direction_assignments(block: Iterable, d: int) -> Iterator[dict]:
    """All maps block -> {0..d-1}, lexicographic in the sorted block order."""
    elems = tuple(sorted(block))
    for values in itertools.product(range(d), repeat=len(elems)):
        yield dict(zip(elems, values))


def group_forbidden(groups: Sequence[Sequence[int]]) -> Callable[[int, int], bool]:
    """Predicate forbidding pairs that lie inside the same group."""
    owner = {}
    for g, members in enumerate(groups):
        for m in members:
            owner[m] = g
    return lambda a, b: owner.get(a, -1 - a) == owner.get(b, -2 - b)


def perfect_matchings(n: int, forbidden: Callable[[int, int], bool] | None = None
                      ) -> Iterator[tuple[tuple[int, int], ...]]:
    """Perfect matchings of {0..n-1} avoiding forbidden pairs; (n-1)!! without restrictions."""
    if n % 2:
        raise OddSize(f"no perfect matching of {n} elements")
    yield from _match(tuple(range(n)), forbidden)


def _match(elems: tuple, forbidden) -> Iterator[tuple]:
    if not elems:
        yield ()
        return
    a, rest = elems[0], elems[1:]
    for pos, b in enumerate(rest):
        if forbidden is not None and forbidden(a, b):
            continue
        remaining = rest[:pos] + rest[pos + 1:]
        for tail in _match(remaining, forbidden):
            yield ((a, b),) + tail
