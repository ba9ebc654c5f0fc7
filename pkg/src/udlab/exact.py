"""Exhaustive tables over Y^n x Z^n for exact evaluation at small n."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import TooLarge
from .lz import v_batch
from .model import SystemModel, log_prob_y_batch, log_prob_yz_batch

ENUM_GUARD = 2 ** 24
LN2 = math.log(2.0)


def quantize(x):
    """Round log-domain metric values to a 1e-9 grid before ranking.

    Mathematically tied metrics (e.g. permutations under a memoryless model)
    are computed in different float orders; the grid makes them compare equal
    so the lexicographic tie-break decides, deterministically.
    """
    return np.round(x, 9)


def all_sequences(alphabet: int, n: int) -> np.ndarray:
    """All sequences in Y^n, lexicographic order (first symbol most significant)."""
    if alphabet ** n > ENUM_GUARD:
        raise TooLarge(f"{alphabet}^{n} sequences exceed the enumeration guard")
    if n == 0:
        return np.zeros((1, 0), dtype=np.intp)
    return np.array(list(itertools.product(range(alphabet), repeat=n)), dtype=np.intp)


def seq_index(seq, alphabet: int) -> int:
    idx = 0
    for s in seq:
        idx = idx * alphabet + int(s)
    return idx


def f_values(t, M: int) -> np.ndarray:
    """1 - (1 - t)^(M - 1), evaluated via log1p/expm1."""
    t = np.asarray(t, dtype=float)
    if M <= 1:
        return np.zeros_like(t)
    with np.errstate(divide="ignore"):
        return -np.expm1((M - 1) * np.log1p(-np.clip(t, 0.0, 1.0)))


def set_probs_ranked(score: np.ndarray, p_y: np.ndarray) -> np.ndarray:
    """P[E(y, z)] for every (y, z) where E collects y' ranked at or before y.

    score[y, z]: smaller is better; ties are broken by the y index, which is
    lexicographic order of the sequences.
    """
    order = np.argsort(score, axis=0, kind="stable")
    cum = np.cumsum(p_y[order], axis=0)
    out = np.empty_like(cum)
    np.put_along_axis(out, order, cum, axis=0)
    return out


def set_probs_threshold(q_lik: np.ndarray, p_y: np.ndarray, log_alpha: float) -> np.ndarray:
    """P[{y' : q(y'|z) >= q(y|z) - ln alpha}] for every (y, z), q = quantized log P(z|y)."""
    Ny, Nz = q_lik.shape
    out = np.empty((Ny, Nz))
    for j in range(Nz):
        col = q_lik[:, j]
        order = np.argsort(-col, kind="stable")
        desc = col[order]
        cum = np.concatenate([[0.0], np.cumsum(p_y[order])])
        # number of y' whose likelihood clears each threshold
        k = np.searchsorted(-desc, -(col - log_alpha), side="right")
        out[:, j] = cum[k]
    return out


@dataclass
class ExactTables:
    """Joint and marginal probabilities and LZ quantities over all (y, z)."""

    model: SystemModel
    n: int

    def __post_init__(self):
        al = self.model.alphabet
        if (al.y_size * al.z_size) ** self.n > ENUM_GUARD:
            raise TooLarge(f"|Y x Z|^n = {(al.y_size * al.z_size) ** self.n} exceeds the enumeration guard")
        self.ys = all_sequences(al.y_size, self.n)
        self.zs = all_sequences(al.z_size, self.n)
        Ny, Nz = len(self.ys), len(self.zs)
        self.log_py = log_prob_y_batch(self.model.pi, self.ys)
        yy = np.repeat(self.ys, Nz, axis=0)
        zz = np.tile(self.zs, (Ny, 1))
        self.log_pyz = log_prob_yz_batch(self.model.big_pi, yy, zz).reshape(Ny, Nz)

    @property
    def p_y(self) -> np.ndarray:
        return np.exp(self.log_py)

    @property
    def p_yz(self) -> np.ndarray:
        return np.exp(self.log_pyz)

    @cached_property
    def log_cond(self) -> np.ndarray:
        """log P(z|y) indexed [y, z]."""
        return self.log_pyz - self.log_py[:, None]

    @cached_property
    def v(self) -> np.ndarray:
        """LZ conditional term v(y, z) indexed [y, z]."""
        al = self.model.alphabet
        Ny, Nz = len(self.ys), len(self.zs)
        yy = np.repeat(self.ys, Nz, axis=0)
        zz = np.tile(self.zs, (Ny, 1))
        return v_batch(yy, zz, al.y_size, al.z_size).reshape(Ny, Nz)

    @cached_property
    def u(self) -> np.ndarray:
        """Universal metric log2 P(y) + v(y, z)."""
        return self.log_py[:, None] / LN2 + self.v

    def score(self, kind: str) -> np.ndarray:
        """Ranking score, smaller is better."""
        if kind == "ml":
            return -quantize(self.log_cond)
        if kind == "universal":
            return quantize(self.u)
        raise ValueError(f"no ranking score for decoder kind {kind!r}")

    @cached_property
    def set_prob_ml(self) -> np.ndarray:
        return set_probs_ranked(self.score("ml"), self.p_y)

    @cached_property
    def set_prob_universal(self) -> np.ndarray:
        return set_probs_ranked(self.score("universal"), self.p_y)

    def set_prob(self, kind: str, log_alpha: float | None = None) -> np.ndarray:
        if kind == "ml":
            return self.set_prob_ml
        if kind == "universal":
            return self.set_prob_universal
        if kind == "threshold":
            return set_probs_threshold(quantize(self.log_cond), self.p_y, log_alpha)
        raise ValueError(kind)

    def avg_error(self, set_prob: np.ndarray, M: int) -> float:
        return float(np.sum(self.p_yz * f_values(set_prob, M)))

    def avg_error_given_z(self, set_prob: np.ndarray, M: int) -> np.ndarray:
        """sum_y P(y|z) f(P[E(y, z)]) for every z."""
        p_yz = self.p_yz
        pz = p_yz.sum(axis=0)
        return (p_yz * f_values(set_prob, M)).sum(axis=0) / pz
