"""ML, universal and threshold decoders and their average error probability.

Decoders rank candidates by a metric and break ties by lexicographic order
of the candidate sequence, then by codebook index. Message indices are
0-based.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConditioningOnNull, DomainError, TooLarge
from .exact import ENUM_GUARD, ExactTables, all_sequences, f_values, quantize, seq_index
from .lz import joint_parse, v_batch, v_metric
from .model import (
    SystemModel,
    forward_log_prob,
    log_prob_y,
    log_prob_y_batch,
    log_prob_yz_batch,
    sample_z_given_y,
)

LN2 = math.log(2.0)
WILSON_Z = 1.959963984540054
WORKERS_ENV = "UDLAB_WORKERS"


def codebook_size(n: int, R: float) -> int:
    """M = ceil(e^{nR}); the rounding guards against exp() overshooting an integer."""
    if R < 0:
        raise DomainError("rate must be non-negative")
    return max(1, math.ceil(round(math.exp(n * R), 9)))


@dataclass(frozen=True)
class DecoderKind:
    name: str
    log_alpha: float | None = None

    def __post_init__(self):
        if self.name not in ("ml", "universal", "threshold"):
            raise ValueError(f"unknown decoder {self.name!r}")
        if self.name == "threshold" and not (self.log_alpha is not None and self.log_alpha > 0):
            raise DomainError("threshold decoder needs alpha > 1")

    @classmethod
    def threshold(cls, alpha: float | None = None, *, log_alpha: float | None = None) -> "DecoderKind":
        if log_alpha is None:
            if alpha is None or not alpha > 0:
                raise DomainError("alpha must be positive")
            log_alpha = math.log(alpha)
        return cls("threshold", float(log_alpha))

    @property
    def alpha(self) -> float | None:
        return None if self.log_alpha is None else math.exp(self.log_alpha)

    def __str__(self) -> str:
        return self.name


ML = DecoderKind("ml")
UNIVERSAL = DecoderKind("universal")


@dataclass(frozen=True)
class Codebook:
    codewords: np.ndarray
    seed: int | None
    rate: float
    n: int = field(init=False)

    def __post_init__(self):
        cw = np.atleast_2d(np.asarray(self.codewords, dtype=np.intp))
        cw.setflags(write=False)
        object.__setattr__(self, "codewords", cw)
        object.__setattr__(self, "n", cw.shape[1])
        if len(cw) < 1:
            raise ValueError("codebook must be non-empty")

    @property
    def M(self) -> int:
        return len(self.codewords)


@dataclass(frozen=True)
class ErrorProbReport:
    decoder: str
    value: float
    method: str
    n: int
    rate: float
    M: int
    trials: int | None = None
    errors: int | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    seed: int | None = None

    @property
    def std_error(self) -> float | None:
        if self.trials is None:
            return None
        return math.sqrt(max(self.value * (1 - self.value), 0.0) / self.trials)


def wilson_interval(k: int, N: int, zc: float = WILSON_Z) -> tuple[float, float]:
    p = k / N
    den = 1 + zc * zc / N
    centre = (p + zc * zc / (2 * N)) / den
    half = zc * math.sqrt(p * (1 - p) / N + zc * zc / (4 * N * N)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == N else min(1.0, centre + half)
    return lo, hi


# --------------------------------------------------------------------------
# metrics and decoding

def u_metric(model: SystemModel, y, z) -> float:
    """log2 P(y) + v(y, z)."""
    ly = log_prob_y(model.pi, y)
    if ly == -math.inf:
        raise ConditioningOnNull("P(y) = 0; the universal metric is undefined")
    return ly / LN2 + v_metric(joint_parse(y, z))


def mmi_objective(model: SystemModel, y, z) -> float:
    """(1/n) log2(1/P(y)) - (1/n) v(y, z); maximized by the universal decoder."""
    n = len(y)
    return -log_prob_y(model.pi, y) / (n * LN2) - v_metric(joint_parse(y, z)) / n


def _codeword_scores(model, codewords, z, kind: DecoderKind, log_py=None) -> np.ndarray:
    """Per-codeword score, smaller is better (threshold uses the ML score)."""
    cw = np.atleast_2d(codewords)
    if log_py is None:
        log_py = log_prob_y_batch(model.pi, cw)
    if kind.name == "universal":
        v = v_batch(cw, z, model.alphabet.y_size, model.alphabet.z_size)
        return quantize(log_py / LN2 + v)
    zz = np.broadcast_to(np.asarray(z, dtype=np.intp), cw.shape)
    return -quantize(log_prob_yz_batch(model.big_pi, cw, zz) - log_py)


def _ranked_order(scores: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    """Indices sorted by (score, codeword lexicographically, index)."""
    keys = [np.arange(len(scores))]
    keys += [codewords[:, k] for k in range(codewords.shape[1] - 1, -1, -1)]
    keys.append(scores)
    return np.lexsort(keys)


def decode(model: SystemModel, codebook: Codebook, z, kind: DecoderKind, log_py=None) -> int | None:
    """Decoded 0-based message index, or None for a threshold-decoder erasure.

    `log_py` optionally replaces the true log P(y_m) (natural log) for the
    universal metric; the plug-in decoder uses this with estimated parameters.
    """
    cw = codebook.codewords
    scores = _codeword_scores(model, cw, z, kind, log_py)
    order = _ranked_order(scores, cw)
    best = int(order[0])
    if kind.name != "threshold":
        return best
    if codebook.M == 1:
        return best
    # scores are -log P(z|y); the winner must beat every rival by more than ln(alpha)
    rival = scores[order[1]]
    return best if rival - scores[best] > kind.log_alpha else None


def f_of_t(t: float, n: int, R: float) -> float:
    """1 - (1 - t)^(M - 1) with M = ceil(e^{nR})."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]")
    return float(f_values(t, codebook_size(n, R)))


def pairwise_set_prob(model: SystemModel, z, kind: DecoderKind, y, tables: ExactTables | None = None) -> float:
    """P[E(y, z)]: total P(y') over y' ranked at or before y for this z."""
    n = len(y)
    if model.alphabet.y_size ** n > ENUM_GUARD:
        raise TooLarge("|Y|^n exceeds the enumeration guard")
    ys = tables.ys if tables is not None else all_sequences(model.alphabet.y_size, n)
    log_py = tables.log_py if tables is not None else log_prob_y_batch(model.pi, ys)
    scores = _codeword_scores(model, ys, z, ML if kind.name == "threshold" else kind, log_py)
    i = seq_index(y, model.alphabet.y_size)
    p = np.exp(log_py)
    if kind.name == "threshold":
        return float(p[scores <= scores[i] + kind.log_alpha].sum())
    before = (scores < scores[i]) | ((scores == scores[i]) & (np.arange(len(ys)) <= i))
    return float(p[before].sum())


def exact_avg_error(model: SystemModel, n: int, R: float, kind: DecoderKind,
                    tables: ExactTables | None = None) -> ErrorProbReport:
    """sum_{y,z} P(y, z) f(P[E(y, z)]) by full enumeration."""
    if tables is None:
        tables = ExactTables(model, n)
    M = codebook_size(n, R)
    sp = tables.set_prob(kind.name, kind.log_alpha)
    value = min(1.0, max(0.0, tables.avg_error(sp, M)))
    return ErrorProbReport(kind.name, value, "exact", n, R, M)


# --------------------------------------------------------------------------
# Monte-Carlo

def _sample_induced(model: SystemModel, n: int, size: int, rng) -> np.ndarray:
    """Codewords drawn from the induced hidden-Markov source pi directly."""
    pi = model.pi
    if pi.n_states == 1:
        cdf = np.cumsum(pi.table[0, :, 0])
        u = rng.random((size, n)) * cdf[-1]
        y = np.zeros((size, n), dtype=np.intp)
        for edge in cdf[:-1]:
            y += u >= edge
        return y
    cdf = np.cumsum(pi.table.reshape(pi.n_states, -1), axis=1)
    return _chain_draws(cdf, pi.initial, rng.random((size, n)))


@njit(cache=True)
def _chain_draws(cdf, initial, u):
    """Inverse-CDF sampling of the (y, s) chain; cdf rows are over flat (y, s)."""
    size, n = u.shape
    S = cdf.shape[0]
    K = cdf.shape[1]
    y = np.empty((size, n), dtype=np.intp)
    for r in range(size):
        s = initial
        for i in range(n):
            target = u[r, i] * cdf[s, K - 1]
            j = 0
            while j < K - 1 and cdf[s, j] <= target:
                j += 1
            y[r, i] = j // S
            s = j % S
    return y


def _lex_le(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise a <= b lexicographically; a is (T, M, n), b is (T, 1, n)."""
    diff = a != b
    anyd = diff.any(axis=-1)
    first = diff.argmax(axis=-1)
    av = np.take_along_axis(a, first[..., None], axis=-1)[..., 0]
    bv = np.take_along_axis(np.broadcast_to(b, a.shape), first[..., None], axis=-1)[..., 0]
    return ~anyd | (av < bv)


def _mc_block(model, n, M, kinds, block_trials, seed_seq, plug_in):
    """Error counts for one block of trials, one per decoder kind."""
    rng = np.random.default_rng(seed_seq)
    al = model.alphabet
    cw = _sample_induced(model, n, block_trials * M, rng).reshape(block_trials, M, n)
    m = rng.integers(0, M, size=block_trials)
    rows = np.arange(block_trials)
    sent = cw[rows, m]
    z = sample_z_given_y(model, sent, rng)

    flat = cw.reshape(-1, n)
    zz = np.repeat(z, M, axis=0)
    log_py = log_prob_y_batch(model.pi, flat)
    need_lik = any(k.name != "universal" for k in kinds)
    need_u = any(k.name == "universal" for k in kinds)
    lik = None
    if need_lik:
        lik = quantize(log_prob_yz_batch(model.big_pi, flat, zz) - log_py).reshape(block_trials, M)
    v = v_batch(flat, zz, al.y_size, al.z_size) if need_u else None

    others = np.ones((block_trials, M), dtype=bool)
    others[rows, m] = False
    lex_le = None
    counts = []
    for kind in kinds:
        if kind.name == "threshold":
            beat = lik >= (lik[rows, m] - kind.log_alpha)[:, None]
        else:
            if kind.name == "ml":
                score = -lik
            else:
                lpy = log_py if plug_in is None else plug_in(flat)
                score = quantize(lpy / LN2 + v).reshape(block_trials, M)
            if lex_le is None:
                lex_le = _lex_le(cw, sent[:, None, :])
            s_m = score[rows, m][:, None]
            # a rival ranked at or before the sent codeword is an error event
            beat = (score < s_m) | ((score == s_m) & lex_le)
        counts.append(int((beat & others).any(axis=1).sum()))
    return counts


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def monte_carlo_errors(model: SystemModel, n: int, R: float, kinds, trials: int, seed: int,
                       block_size: int | None = None, plug_in=None) -> list[ErrorProbReport]:
    """Monte-Carlo average error probability for several decoders on shared trials.

    Each trial draws a fresh codebook from the induced source, a uniform
    message, and z ~ P(z | y_m). Blocks get seeds spawned from `seed`, so the
    result does not depend on the worker count. `plug_in`, if given, maps a
    (B, n) array of codewords to natural-log probabilities used in place of
    log P(y) by the universal decoder.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    kinds = list(kinds)
    M = codebook_size(n, R)
    if block_size is None:
        block_size = max(1, min(trials, 2_000_000 // (M * n)))
    nblocks = -(-trials // block_size)
    sizes = [block_size] * (nblocks - 1) + [trials - block_size * (nblocks - 1)]
    seqs = np.random.SeedSequence(seed).spawn(nblocks)
    args = [(model, n, M, kinds, sz, sq, plug_in) for sz, sq in zip(sizes, seqs)]
    workers = _workers()
    if workers > 1 and nblocks > 1 and plug_in is None:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_mc_block, *zip(*args)))
    else:
        results = [_mc_block(*a) for a in args]
    totals = np.sum(np.array(results, dtype=np.int64), axis=0)
    reports = []
    for kind, k in zip(kinds, totals):
        lo, hi = wilson_interval(int(k), trials)
        reports.append(ErrorProbReport(kind.name, k / trials, "monte-carlo", n, R, M,
                                       trials=trials, errors=int(k), ci_low=lo, ci_high=hi, seed=seed))
    return reports


def monte_carlo_error(model: SystemModel, n: int, R: float, kind: DecoderKind, trials: int,
                      seed: int, **kw) -> ErrorProbReport:
    return monte_carlo_errors(model, n, R, [kind], trials, seed, **kw)[0]


__all__ = [
    "Codebook", "DecoderKind", "ErrorProbReport", "ML", "UNIVERSAL", "codebook_size", "decode",
    "exact_avg_error", "f_of_t", "forward_log_prob", "monte_carlo_error", "monte_carlo_errors",
    "mmi_objective", "pairwise_set_prob", "u_metric", "wilson_interval",
]
