"""Floored Baum-Welch estimation of the induced source from noisy codewords.

The estimated kernel has the same Mealy form as the induced source,
pi_hat(y, h | h'), over a single hidden space of size H that starts in
state 0. Every entry is kept at or above a floor so the positivity
condition on the induced kernel holds for the estimate too.

The M-step solves the floored maximization exactly: for a row with
expected counts c_j the constrained maximizer of sum c_j log p_j is
p_j = max(floor, c_j / lam) with lam fixed by normalization. Because the
M-step is an exact maximizer over the constrained set, the log-likelihood
trace is non-decreasing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .decoding import Codebook, UNIVERSAL, decode
from .errors import Degenerate, ValidationError
from .model import InducedKernel, SystemModel, log_prob_y_batch


@dataclass(frozen=True)
class EstimationConfig:
    H: int = 2
    floor: float = 1e-6
    max_iter: int = 200
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.H < 1:
            raise ValidationError("H must be >= 1")
        if not self.floor > 0:
            raise ValidationError("floor must be > 0")
        if not self.tol > 0:
            raise ValidationError("tol must be > 0")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")


@dataclass
class BaumWelchResult:
    pi: InducedKernel
    loglik: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def table(self) -> np.ndarray:
        return self.pi.table


@njit(cache=True)
def _e_step(table, obs, lengths):
    """Expected transition-emission counts and total log-likelihood.

    obs is (B, L) padded; row b uses its first lengths[b] symbols.
    """
    H, Y, _ = table.shape
    counts = np.zeros((H, Y, H))
    total = 0.0
    L = obs.shape[1]
    alpha = np.empty((L + 1, H))
    beta = np.empty((L + 1, H))
    scale = np.empty(L)
    for b in range(obs.shape[0]):
        n = lengths[b]
        alpha[0, :] = 0.0
        alpha[0, 0] = 1.0
        for i in range(n):
            o = obs[b, i]
            tot = 0.0
            for h in range(H):
                acc = 0.0
                for g in range(H):
                    acc += alpha[i, g] * table[g, o, h]
                alpha[i + 1, h] = acc
                tot += acc
            scale[i] = tot
            for h in range(H):
                alpha[i + 1, h] /= tot
            total += np.log(tot)
        beta[n, :] = 1.0
        for i in range(n - 1, -1, -1):
            o = obs[b, i]
            for g in range(H):
                acc = 0.0
                for h in range(H):
                    acc += table[g, o, h] * beta[i + 1, h]
                beta[i, g] = acc / scale[i]
        for i in range(n):
            o = obs[b, i]
            for g in range(H):
                a = alpha[i, g] / scale[i]
                for h in range(H):
                    counts[g, o, h] += a * table[g, o, h] * beta[i + 1, h]
    return counts, total


def floored_row_update(c: np.ndarray, floor: float) -> np.ndarray:
    """argmax of sum c_j log p_j over the simplex with p_j >= floor."""
    c = np.asarray(c, dtype=float)
    m = c.size
    if m * floor > 1.0 + 1e-15:
        raise Degenerate(f"{m} entries at floor {floor} exceed unit mass")
    if c.sum() <= 0:
        return np.full(m, 1.0 / m)
    order = np.argsort(-c, kind="stable")
    cs = c[order]
    prefix = np.cumsum(cs)
    # largest k such that the k biggest counts stay free (above the floor)
    for k in range(m, 0, -1):
        free_mass = 1.0 - (m - k) * floor
        # shares relative to the free total, so tiny counts stay well scaled
        share = cs[:k] / prefix[k - 1]
        if share[-1] * free_mass >= floor:
            p = np.full(m, floor)
            p[order[:k]] = share * free_mass
            return p
    return np.full(m, 1.0 / m)  # pragma: no cover - k=1 always satisfies the test


def _pad(sequences) -> tuple[np.ndarray, np.ndarray]:
    seqs = [np.asarray(s, dtype=np.int64).ravel() for s in sequences]
    if not seqs:
        raise ValidationError("no training sequences")
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if lengths.min() < 1:
        raise ValidationError("empty training sequence")
    obs = np.zeros((len(seqs), lengths.max()), dtype=np.int64)
    for b, s in enumerate(seqs):
        obs[b, : len(s)] = s
    return obs, lengths


def initial_table(H: int, y_size: int, seed: int) -> np.ndarray:
    """Uniform rows with seeded multiplicative jitter of +-10%."""
    rng = np.random.default_rng(seed)
    t = 1.0 + 0.1 * rng.uniform(-1.0, 1.0, size=(H, y_size, H))
    return t / t.sum(axis=(1, 2), keepdims=True)


def baum_welch(sequences, config: EstimationConfig, y_size: int | None = None) -> BaumWelchResult:
    """Fit pi_hat(y, h | h') to y-sequences by floored EM.

    `loglik[k]` is the total natural-log likelihood of the training data
    under the k-th iterate (loglik[0] is the initialization).
    """
    obs, lengths = _pad(sequences)
    if obs.min() < 0:
        raise ValidationError("negative symbol in training data")
    if y_size is None:
        y_size = int(obs.max()) + 1
    elif obs.max() >= y_size:
        raise ValidationError(f"symbol {int(obs.max())} outside alphabet of size {y_size}")
    H, fl = config.H, config.floor
    if H * y_size * fl > 1.0:
        raise Degenerate(f"H*|Y|*floor = {H * y_size * fl} exceeds 1")

    table = initial_table(H, y_size, config.seed)
    table = np.stack([floored_row_update(r, fl) for r in table.reshape(H, -1)]).reshape(H, y_size, H)
    counts, ll = _e_step(table, obs, lengths)
    trace = [float(ll)]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        rows = counts.reshape(H, -1)
        new = np.empty_like(rows)
        for g in range(H):
            # an unvisited state keeps its row, which cannot lower the likelihood
            new[g] = floored_row_update(rows[g], fl) if rows[g].sum() > 0 else table[g].ravel()
        table = new.reshape(H, y_size, H)
        counts, ll = _e_step(table, obs, lengths)
        trace.append(float(ll))
        if trace[-1] - trace[-2] < config.tol:
            converged = True
            break
    pi = InducedKernel(table=table, theta_size=H, omega_size=1, initial=0)
    return BaumWelchResult(pi=pi, loglik=trace, iterations=it, converged=converged)


def held_out_loglik(pi: InducedKernel, sequences) -> float:
    """Total natural-log likelihood of sequences under pi (any lengths)."""
    total = 0.0
    by_len: dict[int, list] = {}
    for s in sequences:
        s = np.asarray(s, dtype=np.int64).ravel()
        by_len.setdefault(len(s), []).append(s)
    for group in by_len.values():
        total += float(log_prob_y_batch(pi, np.stack(group)).sum())
    return total


def plug_in_log_prob(pi_hat: InducedKernel):
    """Callable mapping (B, n) codewords to log P_hat(y), for Monte-Carlo runs."""
    def log_py(ys):
        return log_prob_y_batch(pi_hat, ys)
    return log_py


def plug_in_decode(pi_hat: InducedKernel, codebook: Codebook, z, model: SystemModel) -> int:
    """Universal decoding with log P_hat(y) from pi_hat in place of the true source.

    `model` supplies the alphabets only; its source is not consulted.
    """
    if pi_hat.y_size != model.alphabet.y_size:
        raise ValidationError("estimated kernel and model disagree on |Y|")
    if not math.isfinite(float(pi_hat.table.min())) or pi_hat.table.min() < 0:
        raise ValidationError("invalid estimated kernel")
    log_py = log_prob_y_batch(pi_hat, codebook.codewords)
    return decode(model, codebook, z, UNIVERSAL, log_py=log_py)
