"""Hidden-Markov source and channels, their induced kernels, and probability
evaluation.

Kernel layouts (conditioning axes first):

    G[w', x, w]          source
    V[x, th', y, th]     secondary channel (codebook noise)
    W[x, sg', z, sg]     primary channel

The induced kernels are stored with flattened hidden states:

    pi[s', y, s]         s = th * |Omega| + w
    Pi[t', y, z, t]      t = (th * |Sigma| + sg) * |Omega| + w

Flat indices preserve lexicographic order of the state tuples, which the
boundary maximizers rely on for tie-breaking.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .errors import ConditioningOnNull, PositivityViolation, ValidationError

ROW_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def validate_kernel(name: str, table, n_cond: int) -> np.ndarray:
    """Check that every conditional row of `table` is a distribution.

    The first `n_cond` axes are the conditioning axes. Rows within ROW_TOL of
    unit mass are renormalized; anything further off is rejected.
    """
    t = np.asarray(table, dtype=float)
    if t.ndim < n_cond + 1:
        raise ValidationError(f"{name}: expected at least {n_cond + 1} axes, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValidationError(f"{name}: non-finite entries")
    if np.any(t < 0):
        where = tuple(int(i) for i in np.argwhere(t < 0)[0])
        raise ValidationError(f"{name}: negative entry at index {where}")
    cond_shape = t.shape[:n_cond]
    rows = t.reshape(int(np.prod(cond_shape)), -1)
    sums = rows.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
    if bad.size:
        row = tuple(int(i) for i in np.unravel_index(bad[0], cond_shape))
        raise ValidationError(f"{name}: row {row} sums to {float(sums[bad[0]])!r}, not 1")
    return (rows / sums[:, None]).reshape(t.shape)


@dataclass(frozen=True)
class AlphabetSpec:
    x_size: int
    y_size: int
    z_size: int


@dataclass(frozen=True)
class StateSpec:
    omega_size: int
    sigma_size: int
    theta_size: int
    omega0: int = 0
    sigma0: int = 0
    theta0: int = 0


@dataclass(frozen=True)
class InducedKernel:
    """pi(y, th, w | th', w') over flattened states s = (th, w)."""

    table: np.ndarray
    theta_size: int
    omega_size: int
    initial: int = 0

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    @property
    def y_size(self) -> int:
        return self.table.shape[1]

    @property
    def pi_min(self) -> float:
        return float(self.table.min())

    def state_tuple(self, s: int) -> tuple[int, int]:
        return divmod(int(s), self.omega_size)

    def as_5d(self) -> np.ndarray:
        th, om, y = self.theta_size, self.omega_size, self.y_size
        return self.table.reshape(th, om, y, th, om)


@dataclass(frozen=True)
class JointKernel:
    """Pi(y, z, th, sg, w | th', sg', w') over flattened states t = (th, sg, w)."""

    table: np.ndarray
    theta_size: int
    sigma_size: int
    omega_size: int
    initial: int = 0

    @property
    def K(self) -> int:
        return self.table.shape[0]

    @property
    def y_size(self) -> int:
        return self.table.shape[1]

    @property
    def z_size(self) -> int:
        return self.table.shape[2]

    def state_tuple(self, t: int) -> tuple[int, int, int]:
        rest, w = divmod(int(t), self.omega_size)
        th, sg = divmod(rest, self.sigma_size)
        return th, sg, w

    def as_8d(self) -> np.ndarray:
        th, sg, om = self.theta_size, self.sigma_size, self.omega_size
        return self.table.reshape(th, sg, om, self.y_size, self.z_size, th, sg, om)

    def pair_table(self) -> np.ndarray:
        """View with (y, z) merged into a single observation index y*|Z| + z."""
        K = self.K
        return self.table.reshape(K, self.y_size * self.z_size, K)

    def marginal_pi(self) -> np.ndarray:
        """Sum out (z, sg); returns [th', sg', w', y, th, w]."""
        return self.as_8d().sum(axis=(4, 6))


def build_pi(G, V, theta0: int = 0, omega0: int = 0) -> InducedKernel:
    """pi(y, th, w | th', w') = sum_x G(x, w | w') V(y, th | x, th')."""
    G = np.asarray(G, dtype=float)
    V = np.asarray(V, dtype=float)
    om, th, ny = G.shape[0], V.shape[1], V.shape[2]
    p5 = np.einsum("axb,xcyd->caydb", G, V)
    return InducedKernel(
        table=_frozen(p5.reshape(th * om, ny, th * om)),
        theta_size=th,
        omega_size=om,
        initial=theta0 * om + omega0,
    )


def build_big_pi(G, V, W, theta0: int = 0, sigma0: int = 0, omega0: int = 0) -> JointKernel:
    """Pi(y, z, th, sg, w | th', sg', w') = sum_x G V W."""
    G = np.asarray(G, dtype=float)
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    om, th, sg = G.shape[0], V.shape[1], W.shape[1]
    ny, nz = V.shape[2], W.shape[2]
    p8 = np.einsum("axb,xcyd,xezf->ceayzdfb", G, V, W)
    K = th * sg * om
    return JointKernel(
        table=_frozen(p8.reshape(K, ny, nz, K)),
        theta_size=th,
        sigma_size=sg,
        omega_size=om,
        initial=(theta0 * sg + sigma0) * om + omega0,
    )


def check_positivity(pi: InducedKernel) -> float:
    """Return pi_min, raising PositivityViolation if any entry is zero."""
    pm = pi.pi_min
    if not pm > 0.0:
        s_prev, y, s = np.unravel_index(int(np.argmin(pi.table)), pi.table.shape)
        raise PositivityViolation(
            f"pi has a zero entry at (y={y}, state={pi.state_tuple(s)} | state={pi.state_tuple(s_prev)})"
        )
    return pm


@dataclass(frozen=True)
class SystemModel:
    alphabet: AlphabetSpec
    states: StateSpec
    G: np.ndarray
    V: np.ndarray
    W: np.ndarray
    pi: InducedKernel = field(repr=False)
    big_pi: JointKernel = field(repr=False)

    @classmethod
    def from_kernels(cls, G, V, W, *, omega0=0, sigma0=0, theta0=0) -> "SystemModel":
        G = validate_kernel("G", G, 1)
        V = validate_kernel("V", V, 2)
        W = validate_kernel("W", W, 2)
        if G.ndim != 3 or V.ndim != 4 or W.ndim != 4:
            raise ValidationError("G must be 3-d, V and W 4-d")
        om, nx = G.shape[0], G.shape[1]
        if G.shape[2] != om:
            raise ValidationError(f"G: state axes disagree {G.shape}")
        if V.shape[0] != nx or W.shape[0] != nx:
            raise ValidationError("V/W input axis does not match |X| from G")
        th, sg = V.shape[1], W.shape[1]
        if V.shape[3] != th or W.shape[3] != sg:
            raise ValidationError("V/W state axes disagree")
        for name, v, size in (("omega0", omega0, om), ("sigma0", sigma0, sg), ("theta0", theta0, th)):
            if not 0 <= v < size:
                raise ValidationError(f"{name}={v} outside 0..{size - 1}")
        return cls(
            alphabet=AlphabetSpec(nx, V.shape[2], W.shape[2]),
            states=StateSpec(om, sg, th, omega0, sigma0, theta0),
            G=_frozen(G),
            V=_frozen(V),
            W=_frozen(W),
            pi=build_pi(G, V, theta0, omega0),
            big_pi=build_big_pi(G, V, W, theta0, sigma0, omega0),
        )

    @property
    def K(self) -> int:
        return self.big_pi.K

    @property
    def pi_min(self) -> float:
        return self.pi.pi_min

    @property
    def is_memoryless(self) -> bool:
        s = self.states
        return s.omega_size == s.sigma_size == s.theta_size == 1


def random_model(x_size=2, y_size=2, z_size=2, omega=2, sigma=2, theta=2, seed=0,
                 concentration=1.0) -> SystemModel:
    """Strictly positive kernels drawn from a symmetric Dirichlet."""
    rng = np.random.default_rng(seed)

    def draw(cond_shape, out_shape):
        k = int(np.prod(out_shape))
        rows = rng.dirichlet(np.full(k, concentration), size=int(np.prod(cond_shape)))
        # Dirichlet draws can underflow to exactly 0 for small concentration
        rows = np.maximum(rows, 1e-9)
        rows /= rows.sum(axis=1, keepdims=True)
        return rows.reshape(*cond_shape, *out_shape)

    G = draw((omega,), (x_size, omega))
    V = draw((x_size, theta), (y_size, theta))
    W = draw((x_size, sigma), (z_size, sigma))
    return SystemModel.from_kernels(G, V, W)


# --------------------------------------------------------------------------
# forward recursions

@njit(cache=True)
def _forward_kernel(table, initial, obs):
    B, n = obs.shape
    S = table.shape[0]
    out = np.empty(B)
    a = np.empty(S)
    nxt = np.empty(S)
    for r in range(B):
        a[:] = 0.0
        a[initial] = 1.0
        lp = 0.0
        for i in range(n):
            o = obs[r, i]
            tot = 0.0
            for t in range(S):
                acc = 0.0
                for s in range(S):
                    acc += a[s] * table[s, o, t]
                nxt[t] = acc
                tot += acc
            if tot <= 0.0:
                lp = -np.inf
                break
            lp += np.log(tot)
            for t in range(S):
                a[t] = nxt[t] / tot
        out[r] = lp
    return out


def forward_log_prob(table: np.ndarray, initial: int, obs) -> np.ndarray:
    """Batched scaled forward pass.

    table: [S', O, S] transition-emission kernel; obs: (B, n) int array.
    Returns natural-log probabilities of shape (B,), -inf where zero.
    """
    obs = np.ascontiguousarray(np.atleast_2d(obs), dtype=np.int64)
    table = np.asarray(table, dtype=float)
    if table.shape[0] == 1 and table.shape[2] == 1:
        # single state: the probability is a plain product of emissions
        with np.errstate(divide="ignore"):
            logtab = np.log(table[0, :, 0])
        return logtab[obs].sum(axis=1)
    return _forward_kernel(np.ascontiguousarray(table, dtype=float), int(initial), obs)


def _pair_obs(y, z, z_size: int) -> np.ndarray:
    y = np.atleast_2d(np.asarray(y, dtype=np.intp))
    z = np.atleast_2d(np.asarray(z, dtype=np.intp))
    if y.shape[-1] != z.shape[-1]:
        from .errors import LengthMismatch

        raise LengthMismatch(f"len(y)={y.shape[-1]} != len(z)={z.shape[-1]}")
    return y * z_size + z


def log_prob_y(pi: InducedKernel, y) -> float:
    """Natural log of P(y) under the hidden-Markov form of the induced source."""
    return float(forward_log_prob(pi.table, pi.initial, np.asarray(y)[None, :])[0])


def log_prob_y_batch(pi: InducedKernel, ys) -> np.ndarray:
    return forward_log_prob(pi.table, pi.initial, ys)


def log_prob_yz(Pi: JointKernel, y, z) -> float:
    obs = _pair_obs(y, z, Pi.z_size)
    return float(forward_log_prob(Pi.pair_table(), Pi.initial, obs)[0])


def log_prob_yz_batch(Pi: JointKernel, ys, zs) -> np.ndarray:
    obs = _pair_obs(ys, zs, Pi.z_size)
    return forward_log_prob(Pi.pair_table(), Pi.initial, obs)


def log_cond_z_given_y(Pi: JointKernel, pi: InducedKernel, y, z) -> float:
    """log P(z | y) = log P(y, z) - log P(y)."""
    ly = log_prob_y(pi, y)
    if ly == -np.inf:
        raise ConditioningOnNull("P(y) = 0")
    return log_prob_yz(Pi, y, z) - ly


# --------------------------------------------------------------------------
# sampling

def _draw(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of `probs` (rows need not be normalized)."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_triples(model: SystemModel, n: int, size: int, rng: np.random.Generator):
    """Draw `size` independent (x, y, z) triples of length n; arrays of shape (size, n)."""
    st, al = model.states, model.alphabet
    G2 = model.G.reshape(st.omega_size, -1)
    V2 = model.V.reshape(al.x_size, st.theta_size, -1)
    W2 = model.W.reshape(al.x_size, st.sigma_size, -1)
    x = np.empty((size, n), dtype=np.intp)
    y = np.empty_like(x)
    z = np.empty_like(x)
    om = np.full(size, st.omega0, dtype=np.intp)
    th = np.full(size, st.theta0, dtype=np.intp)
    sg = np.full(size, st.sigma0, dtype=np.intp)
    for i in range(n):
        x[:, i], om = np.divmod(_draw(rng, G2[om]), st.omega_size)
        y[:, i], th = np.divmod(_draw(rng, V2[x[:, i], th]), st.theta_size)
        z[:, i], sg = np.divmod(_draw(rng, W2[x[:, i], sg]), st.sigma_size)
    return x, y, z


def sample_triple(model: SystemModel, n: int, seed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n < 1:
        raise ValueError("n must be >= 1")
    x, y, z = sample_triples(model, n, 1, np.random.default_rng(seed))
    return x[0], y[0], z[0]


def sample_y(model: SystemModel, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `size` noisy codewords: x ~ G, then y ~ V( . | x)."""
    st, al = model.states, model.alphabet
    G2 = model.G.reshape(st.omega_size, -1)
    V2 = model.V.reshape(al.x_size, st.theta_size, -1)
    y = np.empty((size, n), dtype=np.intp)
    om = np.full(size, st.omega0, dtype=np.intp)
    th = np.full(size, st.theta0, dtype=np.intp)
    for i in range(n):
        x, om = np.divmod(_draw(rng, G2[om]), st.omega_size)
        y[:, i], th = np.divmod(_draw(rng, V2[x, th]), st.theta_size)
    return y


def sample_z_given_y(model: SystemModel, ys, rng: np.random.Generator) -> np.ndarray:
    """Exact draw of z ~ P(z | y) for each row of `ys`.

    Backward-filters the (th, w) chain given y, samples the hidden path and x
    forward from the smoothed posterior, then pushes x through W.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=np.intp))
    B, n = ys.shape
    st, al = model.states, model.alphabet
    pi = model.pi.table
    S = pi.shape[0]
    om_n = st.omega_size

    beta = np.empty((n + 1, B, S))
    beta[n] = 1.0
    for i in range(n, 0, -1):
        b = np.einsum("sbt,bt->bs", pi[:, ys[:, i - 1], :], beta[i])
        beta[i - 1] = b / b.sum(axis=1, keepdims=True)

    W2 = model.W.reshape(al.x_size, st.sigma_size, -1)
    z = np.empty((B, n), dtype=np.intp)
    s = np.full(B, model.pi.initial, dtype=np.intp)
    sg = np.full(B, st.sigma0, dtype=np.intp)
    for i in range(n):
        yi = ys[:, i]
        s_new = _draw(rng, pi[s, yi, :] * beta[i + 1])
        th_p, om_p = np.divmod(s, om_n)
        th_c, om_c = np.divmod(s_new, om_n)
        # x | (w', w, th', th, y) is proportional to G(x, w | w') V(y, th | x, th')
        px = model.G[om_p, :, om_c] * model.V[:, th_p, yi, th_c].T
        x = _draw(rng, px)
        z[:, i], sg = np.divmod(_draw(rng, W2[x, sg]), st.sigma_size)
        s = s_new
    return z


# --------------------------------------------------------------------------
# phrase-boundary quantities

def segment_log_matrix(table: np.ndarray, obs_segment: Sequence[int]) -> np.ndarray:
    """log of the product of table[:, o, :] over a segment: start state -> end state."""
    S = table.shape[0]
    m = np.eye(S)
    log_scale = 0.0
    for o in obs_segment:
        m = m @ table[:, o, :]
        top = m.max()
        if top > 0:
            m /= top
            log_scale += np.log(top)
    with np.errstate(divide="ignore"):
        return np.log(m) + log_scale


def _phrase_log_matrices(table, obs, boundaries):
    return [segment_log_matrix(table, obs[a:b]) for a, b in zip(boundaries[:-1], boundaries[1:])]


@dataclass(frozen=True)
class BoundaryStates:
    """Hidden states at phrase ends n_1..n_c (the state at n_0 is the fixed initial state)."""

    initial: int
    states: tuple[int, ...]
    factor_sizes: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.states)

    def tuples(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in np.unravel_index(s, self.factor_sizes)) for s in self.states]

    def start(self, i: int) -> int:
        return self.initial if i == 0 else self.states[i - 1]

    def end(self, i: int) -> int:
        return self.states[i]


def _boundary_max(mats: list[np.ndarray], initial: int, rtol: float = 1e-12):
    """Max-product over boundary states with earliest-boundary-smallest-index tie-break."""
    c = len(mats)
    S = mats[0].shape[0]
    # best value obtainable from boundary i in state s through the last phrase
    togo = [np.zeros(S) for _ in range(c + 1)]
    for i in range(c - 1, 0, -1):
        togo[i] = np.max(mats[i] + togo[i + 1][None, :], axis=1)
    prev = initial
    states = []
    total = 0.0
    for i in range(c):
        cand = mats[i][prev] + togo[i + 1]
        best = cand.max()
        tol = rtol * max(1.0, abs(best)) if np.isfinite(best) else 0.0
        s = int(np.flatnonzero(cand >= best - tol)[0])
        states.append(s)
        total += mats[i][prev, s]
        prev = s
    return tuple(states), float(total)


def phrase_viterbi_t_hat(Pi: JointKernel, y, z, boundaries) -> tuple[BoundaryStates, float]:
    """Boundary triples (th, sg, w) maximizing P(y, z, t) and the log of the maximum."""
    obs = _pair_obs(y, z, Pi.z_size)[0]
    mats = _phrase_log_matrices(Pi.pair_table(), obs, boundaries)
    states, val = _boundary_max(mats, Pi.initial)
    sizes = (Pi.theta_size, Pi.sigma_size, Pi.omega_size)
    return BoundaryStates(Pi.initial, states, sizes), val


def phrase_viterbi_s_tilde(pi: InducedKernel, y, boundaries) -> tuple[BoundaryStates, float]:
    """Boundary pairs (th, w) maximizing P(y, s) and the log of the maximum."""
    obs = np.asarray(y, dtype=np.intp)
    mats = _phrase_log_matrices(pi.table, obs, boundaries)
    states, val = _boundary_max(mats, pi.initial)
    return BoundaryStates(pi.initial, states, (pi.theta_size, pi.omega_size)), val


def pinned_log_prob_batch(table: np.ndarray, obs, boundaries, bstates: BoundaryStates) -> np.ndarray:
    """log P(obs, boundary states) for every row of `obs`, all pinned to the same states."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.intp))
    B = obs.shape[0]
    S = table.shape[0]
    total = np.zeros(B)
    for i, (a, b) in enumerate(zip(boundaries[:-1], boundaries[1:])):
        alpha = np.zeros((B, S))
        alpha[:, bstates.start(i)] = 1.0
        for k in range(a, b - 1):
            alpha = np.einsum("bs,sbt->bt", alpha, table[:, obs[:, k], :])
            c = alpha.sum(axis=1)
            with np.errstate(divide="ignore"):
                total += np.log(c)
            alpha /= np.where(c > 0, c, 1.0)[:, None]
        last = np.einsum("bs,sb->b", alpha, table[:, obs[:, b - 1], bstates.end(i)])
        with np.errstate(divide="ignore"):
            total += np.log(last)
    return total


def log_prob_y_s(pi: InducedKernel, y, s: BoundaryStates, boundaries) -> float:
    """log P(y, s): product over phrases of within-phrase sums pinned at boundary states."""
    if len(s) != len(boundaries) - 1:
        raise ValueError("boundary states do not match the number of phrases")
    return float(pinned_log_prob_batch(pi.table, np.asarray(y)[None, :], boundaries, s)[0])


def log_prob_yz_t(Pi: JointKernel, y, z, t: BoundaryStates, boundaries) -> float:
    if len(t) != len(boundaries) - 1:
        raise ValueError("boundary states do not match the number of phrases")
    obs = _pair_obs(y, z, Pi.z_size)
    return float(pinned_log_prob_batch(Pi.pair_table(), obs, boundaries, t)[0])
