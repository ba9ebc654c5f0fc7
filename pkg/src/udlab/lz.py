"""Joint incremental (LZ78) parsing of pair sequences (y_i, z_i).

The parse splits w = ((y_1, z_1), ..., (y_n, z_n)) into phrases, each the
shortest pair string not yet seen as a phrase. The z-projection of every
joint phrase is mapped to a distinct z-phrase id (by string content), which
gives c(z) and the per-z-phrase counts c_l(y|z).

An incomplete final phrase (one that repeats an earlier phrase) is counted
in c(y, z) and in its z-phrase's count, so sum(c_l) == c(y, z) always.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import LengthMismatch


class ParseTrie:
    """Trie over an alphabet of hashable symbols; node 0 is the empty phrase."""

    def __init__(self):
        self.children: dict[tuple[int, object], int] = {}
        self.size = 1

    def step(self, node: int, sym) -> int | None:
        return self.children.get((node, sym))

    def add(self, node: int, sym) -> int:
        new = self.size
        self.children[(node, sym)] = new
        self.size += 1
        return new


@dataclass(frozen=True)
class PhraseParse:
    n: int
    boundaries: tuple[int, ...]
    z_phrase_ids: tuple[int, ...]
    z_phrases: tuple[tuple[int, ...], ...]
    c_ell: tuple[int, ...]
    last_complete: bool

    @property
    def c_yz(self) -> int:
        return len(self.boundaries) - 1

    @property
    def c_z(self) -> int:
        return len(self.z_phrases)

    def spans(self) -> list[tuple[int, int]]:
        """Half-open [start, end) index ranges of the phrases."""
        b = self.boundaries
        return list(zip(b[:-1], b[1:]))

    def phrase_lengths(self) -> list[int]:
        return [e - s for s, e in self.spans()]


def joint_parse(y, z) -> PhraseParse:
    y = [int(v) for v in y]
    z = [int(v) for v in z]
    if len(y) != len(z):
        raise LengthMismatch(f"len(y)={len(y)} != len(z)={len(z)}")
    n = len(y)
    if n < 1:
        raise LengthMismatch("sequences must be non-empty")

    joint = ParseTrie()
    ztrie = ParseTrie()
    z_of = {0: 0}  # joint node -> z-trie node of its z-projection
    z_order: dict[int, int] = {}  # z-trie node -> 1-based phrase id
    z_phrases: list[tuple[int, ...]] = []
    boundaries = [0]
    ids: list[int] = []

    node, start = 0, 0
    for i in range(n):
        sym = (y[i], z[i])
        nxt = joint.step(node, sym)
        if nxt is not None:
            node = nxt
            continue
        zparent = z_of[node]
        znode = ztrie.step(zparent, z[i])
        if znode is None:
            znode = ztrie.add(zparent, z[i])
        new = joint.add(node, sym)
        z_of[new] = znode
        if znode not in z_order:
            z_order[znode] = len(z_order) + 1
            z_phrases.append(tuple(z[start:i + 1]))
        ids.append(z_order[znode])
        boundaries.append(i + 1)
        node, start = 0, i + 1

    last_complete = node == 0
    if not last_complete:
        # the trailing phrase repeats an earlier phrase, so its z-projection is known
        ids.append(z_order[z_of[node]])
        boundaries.append(n)

    counts = [0] * len(z_phrases)
    for ell in ids:
        counts[ell - 1] += 1
    return PhraseParse(
        n=n,
        boundaries=tuple(boundaries),
        z_phrase_ids=tuple(ids),
        z_phrases=tuple(z_phrases),
        c_ell=tuple(counts),
        last_complete=last_complete,
    )


def v_from_counts(counts) -> float:
    return float(sum(c * math.log2(c) for c in counts if c > 1))


def v_metric(parse: PhraseParse) -> float:
    """sum over z-phrases of c_l * log2(c_l)."""
    return v_from_counts(parse.c_ell)


@njit(cache=True)
def _v_one(y, z, z_size, jchild, zchild, jz, cnt):
    n = y.shape[0]
    jchild[: n + 1, :] = -1
    zchild[: n + 1, :] = -1
    cnt[: n + 1] = 0
    jz[0] = 0
    nj = 1
    nz = 1
    node = 0
    for i in range(n):
        sym = y[i] * z_size + z[i]
        nxt = jchild[node, sym]
        if nxt >= 0:
            node = nxt
        else:
            zp = jz[node]
            zn = zchild[zp, z[i]]
            if zn < 0:
                zn = nz
                zchild[zp, z[i]] = nz
                nz += 1
            jchild[node, sym] = nj
            jz[nj] = zn
            nj += 1
            cnt[zn] += 1
            node = 0
    if node != 0:
        cnt[jz[node]] += 1
    v = 0.0
    for k in range(1, nz):
        c = cnt[k]
        if c > 1:
            v += c * np.log2(c)
    return v


@njit(cache=True)
def _v_batch(ys, zs, y_size, z_size):
    B, n = ys.shape
    jchild = np.empty((n + 1, y_size * z_size), dtype=np.int64)
    zchild = np.empty((n + 1, z_size), dtype=np.int64)
    jz = np.empty(n + 1, dtype=np.int64)
    cnt = np.empty(n + 1, dtype=np.int64)
    out = np.empty(B)
    for b in range(B):
        out[b] = _v_one(ys[b], zs[b], z_size, jchild, zchild, jz, cnt)
    return out


def v_batch(ys, zs, y_size: int, z_size: int) -> np.ndarray:
    """v(y_b, z_b) for every row; `zs` may be a single sequence shared by all rows."""
    ys = np.ascontiguousarray(np.atleast_2d(ys), dtype=np.int64)
    zs = np.asarray(zs, dtype=np.int64)
    if zs.ndim == 1:
        zs = np.broadcast_to(zs, ys.shape)
    zs = np.ascontiguousarray(zs)
    if zs.shape != ys.shape:
        raise LengthMismatch(f"shapes {ys.shape} and {zs.shape} differ")
    return _v_batch(ys, zs, int(y_size), int(z_size))


def _distinct_packing(m: int, A: int) -> int:
    """Largest k such that the k shortest distinct A-ary strings have total length <= m."""
    k, used, length = 0, 0, 1
    while True:
        level = A ** length
        take = min(level, (m - used) // length)
        k += take
        used += take * length
        if take < level:
            return k
        length += 1


def cbar(n: int, A: int) -> int:
    """Exact upper bound on the LZ78 phrase count of any length-n sequence over A symbols.

    All complete phrases are distinct; the last one may repeat an earlier
    phrase, so it needs at least one symbol and the rest fit in n - 1.
    """
    if n < 1 or A < 1:
        raise ValueError("need n >= 1 and A >= 1")
    return 1 + _distinct_packing(n - 1, A)


def cbar_formula_epsilon(n: int, A: int) -> float:
    """The epsilon_n for which n*log(A)/((1-eps)*log(n)) equals the exact cbar."""
    if n < 2:
        return float("nan")
    return 1.0 - n * math.log(A) / (cbar(n, A) * math.log(n))
