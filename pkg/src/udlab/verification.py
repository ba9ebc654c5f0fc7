"""Enumeration-based checks of the inequalities behind the universality proof.

Every check returns BoundReport objects. Probabilities are compared in the
natural-log domain where they can be tiny; `holds` allows a relative slack of
REL_TOL for floating-point rounding only.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .decoding import codebook_size
from .errors import DomainError, TooLarge
from .exact import ExactTables, f_values, quantize, seq_index
from .lz import PhraseParse, cbar, cbar_formula_epsilon, joint_parse, v_batch
from .model import (
    BoundaryStates,
    SystemModel,
    _pair_obs,
    check_positivity,
    log_prob_y,
    log_prob_yz,
    phrase_viterbi_s_tilde,
    phrase_viterbi_t_hat,
    pinned_log_prob_batch,
)

log = logging.getLogger(__name__)

REL_TOL = 1e-9
E1_RTOL = 1e-9
T_GUARD = 1_000_000
LN2 = math.log(2.0)


@dataclass(frozen=True)
class BoundReport:
    name: str
    left: float
    right: float
    holds: bool
    slack: float
    instance: dict = field(default_factory=dict)
    logged_only: bool = False

    @property
    def ok(self) -> bool:
        """True unless this is a failure that should abort a sweep."""
        return self.holds or self.logged_only


def _le(name, left, right, instance=None, log_domain=False, logged_only=False) -> BoundReport:
    """Report for left <= right (both as logs when `log_domain`)."""
    if log_domain:
        holds = left <= right + REL_TOL * max(1.0, abs(right))
    else:
        holds = left <= right * (1 + REL_TOL) + 1e-300
    return BoundReport(name, float(left), float(right), bool(holds), float(right - left),
                       dict(instance or {}), logged_only and not holds)


def _state_product(model: SystemModel) -> int:
    return model.states.theta_size * model.states.omega_size


def default_log_alpha(model: SystemModel, n: int) -> float:
    """ln alpha for alpha = (K / pi_min)^(2 cbar_n)."""
    pm = check_positivity(model.pi)
    cb = cbar(n, model.alphabet.y_size * model.alphabet.z_size)
    return 2 * cb * math.log(model.K / pm)


def harmonic_bound(model: SystemModel, n: int) -> float:
    """n ln(1 / (pi_min |Theta| |Omega|)) + 1."""
    pm = check_positivity(model.pi)
    return n * math.log(1.0 / (pm * _state_product(model))) + 1.0


# --------------------------------------------------------------------------
# threshold-decoder lemma

def check_harmonic_lemma(model: SystemModel, z, n: int, tables: ExactTables | None = None) -> BoundReport:
    """L_n(z) = sum_y P(y) / P[E_o(y, z)] against n ln(1/(pi_min |Theta||Omega|)) + 1."""
    tables = tables or ExactTables(model, n)
    j = seq_index(z, model.alphabet.z_size)
    L = float(np.sum(tables.p_y / tables.set_prob_ml[:, j]))
    return _le("harmonic_lemma", L, harmonic_bound(model, n), {"z": tuple(int(v) for v in z), "n": n})


def check_threshold_lemma(model: SystemModel, z, n: int, alpha: float | None = None, *,
                          log_alpha: float | None = None, R: float = 0.1,
                          tables: ExactTables | None = None) -> BoundReport:
    """P_et(z) <= (alpha [n ln(1/(pi_min |Theta||Omega|)) + 1] + 1) P_eo(z)."""
    if log_alpha is None:
        if alpha is None:
            log_alpha = default_log_alpha(model, n)
        else:
            if alpha < 1:
                raise DomainError("alpha must be >= 1")
            log_alpha = math.log(alpha)
    tables = tables or ExactTables(model, n)
    j = seq_index(z, model.alphabet.z_size)
    M = codebook_size(n, R)
    pt = _given_z(tables, tables.set_prob("threshold", log_alpha), M, j)
    po = _given_z(tables, tables.set_prob_ml, M, j)
    # the factor can overflow a float, so compare logs
    log_factor = np.logaddexp(log_alpha + math.log(harmonic_bound(model, n)), 0.0)
    left = math.log(pt) if pt > 0 else -math.inf
    right = log_factor + (math.log(po) if po > 0 else -math.inf)
    return _le("threshold_lemma", left, right,
               {"z": tuple(int(v) for v in z), "n": n, "R": R, "log_alpha": log_alpha}, log_domain=True)


def _given_z(tables: ExactTables, set_prob: np.ndarray, M: int, j: int) -> float:
    col = tables.p_yz[:, j]
    return float(np.sum(col * f_values(set_prob[:, j], M)) / col.sum())


def check_E_o_in_E_t(tables: ExactTables, log_alpha: float) -> BoundReport:
    """E_o(y, z) is contained in E_t(y, z) for every (y, z) in the tables."""
    q = quantize(tables.log_cond)
    rank = np.argsort(np.argsort(tables.score("ml"), axis=0, kind="stable"), axis=0)
    worst = -math.inf
    for j in range(q.shape[1]):
        # E_o(y) = {y' : rank(y') <= rank(y)}; y' is in E_t(y) iff q(y') >= q(y) - ln alpha
        r = rank[:, j]
        in_o = r[None, :] <= r[:, None]
        gap = (q[:, j][:, None] - log_alpha) - q[:, j][None, :]
        gap = np.where(in_o, gap, -math.inf)
        worst = max(worst, float(gap.max()))
    return _le("E_o_subset_E_t", worst, 0.0, {"n": tables.n, "log_alpha": log_alpha})


# --------------------------------------------------------------------------
# phrase-boundary machinery

@dataclass
class PairContext:
    """Parse, boundary maximizers and their probabilities for one (y, z)."""

    model: SystemModel
    y: tuple
    z: tuple
    parse: PhraseParse
    t_hat: BoundaryStates
    log_t_hat: float
    s_tilde: BoundaryStates
    log_s_tilde: float

    @classmethod
    def build(cls, model: SystemModel, y, z) -> "PairContext":
        y = tuple(int(v) for v in y)
        z = tuple(int(v) for v in z)
        parse = joint_parse(y, z)
        t, lt = phrase_viterbi_t_hat(model.big_pi, y, z, parse.boundaries)
        s, ls = phrase_viterbi_s_tilde(model.pi, y, parse.boundaries)
        return cls(model, y, z, parse, t, lt, s, ls)

    @property
    def c(self) -> int:
        return self.parse.c_yz

    @property
    def n(self) -> int:
        return len(self.y)

    def descriptor(self) -> dict:
        return {"y": self.y, "z": self.z, "n": self.n, "c": self.c}


def check_boundary_max_bounds(model: SystemModel, y, z, ctx: PairContext | None = None) -> list[BoundReport]:
    """P(y, z, t_hat) >= K^-c P(y, z) and P(y, s_tilde) >= |Theta x Omega|^-c P(y)."""
    ctx = ctx or PairContext.build(model, y, z)
    c = ctx.c
    lyz = log_prob_yz(model.big_pi, ctx.y, ctx.z)
    ly = log_prob_y(model.pi, ctx.y)
    return [
        _le("t_hat_K_bound", lyz - c * math.log(model.K), ctx.log_t_hat, ctx.descriptor(), log_domain=True),
        _le("s_tilde_bound", ly - c * math.log(_state_product(model)), ctx.log_s_tilde, ctx.descriptor(),
            log_domain=True),
    ]


def check_zm92(model: SystemModel, y, z=None, ctx: PairContext | None = None) -> list[BoundReport]:
    """P(y) <= P(y, s_tilde) (|Theta x Omega| / pi_min^2)^c, and the weaker K form.

    Boundaries come from the joint parse of (y, z). A violation on an input
    with phrases shorter than three symbols is logged rather than failed.
    """
    pm = check_positivity(model.pi)
    if ctx is None:
        if z is None:
            raise ValueError("z is needed for the phrase boundaries")
        ctx = PairContext.build(model, y, z)
    short = min(ctx.parse.phrase_lengths()) < 3
    ly = log_prob_y(model.pi, ctx.y)
    desc = ctx.descriptor() | {"short_phrases": short}
    out = []
    for name, base in (("zm92", _state_product(model)), ("zm92_K", model.K)):
        right = ctx.log_s_tilde + ctx.c * (math.log(base) - 2 * math.log(pm))
        r = _le(name, ly, right, desc, log_domain=True, logged_only=short)
        if r.logged_only:
            log.warning("%s violated on short-phrase instance %s", name, desc)
        out.append(r)
    return out


def _pinned_logs(ctx: PairContext, ys: np.ndarray):
    model = ctx.model
    b = ctx.parse.boundaries
    zz = np.broadcast_to(np.asarray(ctx.z, dtype=np.intp), ys.shape)
    obs = _pair_obs(ys, zz, model.alphabet.z_size)
    lt = pinned_log_prob_batch(model.big_pi.pair_table(), obs, b, ctx.t_hat)
    ls = pinned_log_prob_batch(model.pi.table, ys, b, ctx.s_tilde)
    return lt, ls


def _log_close(a, b, rtol=E1_RTOL):
    return np.abs(a - b) <= rtol * np.maximum(1.0, np.abs(b))


def build_E1(model: SystemModel, y, z, tables: ExactTables | None = None,
             ctx: PairContext | None = None) -> np.ndarray:
    """Indices (into lexicographic Y^n) of y' with P(y', z, t_hat) = P(y, z, t_hat)
    and P(y', s_tilde) = P(y, s_tilde), at the t_hat, s_tilde of (y, z)."""
    ctx = ctx or PairContext.build(model, y, z)
    n = ctx.n
    if tables is None:
        from .exact import all_sequences

        ys = all_sequences(model.alphabet.y_size, n)
    else:
        ys = tables.ys
    lt, ls = _pinned_logs(ctx, ys)
    keep = _log_close(lt, ctx.log_t_hat) & _log_close(ls, ctx.log_s_tilde)
    return np.flatnonzero(keep)


def _distinct_perms(items):
    return sorted(set(itertools.permutations(items)))


def build_T(model: SystemModel, y, z, ctx: PairContext | None = None) -> np.ndarray:
    """Indices of sequences obtained from y by permuting y-phrases that share the
    z-phrase, the length, and the start and end states under both t_hat and s_tilde."""
    ctx = ctx or PairContext.build(model, y, z)
    spans = ctx.parse.spans()
    groups: dict[tuple, list[int]] = {}
    for i, (a, b) in enumerate(spans):
        key = (ctx.z[a:b], ctx.t_hat.start(i), ctx.t_hat.end(i), ctx.s_tilde.start(i), ctx.s_tilde.end(i))
        groups.setdefault(key, []).append(i)

    size = 1
    for members in groups.values():
        size *= math.factorial(len(members))
    if size > T_GUARD:
        raise TooLarge(f"{size} phrase permutations exceed the guard")

    per_group = []
    for members in groups.values():
        phrases = [ctx.y[spans[i][0]:spans[i][1]] for i in members]
        per_group.append((members, _distinct_perms(phrases)))

    A = model.alphabet.y_size
    out = set()
    for choice in itertools.product(*(perms for _, perms in per_group)):
        yy = list(ctx.y)
        for (members, _), perm in zip(per_group, choice):
            for i, ph in zip(members, perm):
                a, b = spans[i]
                yy[a:b] = ph
        out.add(seq_index(yy, A))
    return np.array(sorted(out), dtype=np.intp)


def check_Et_lower_bound(model: SystemModel, y, z, tables: ExactTables, log_alpha: float | None = None,
                         ctx: PairContext | None = None) -> list[BoundReport]:
    """Each link of P[E_t] >= sum_E1 P(y') >= sum_E1 P(y', s~) = |E1| P(y, s~)
    >= K^-c |E1| P(y) >= K^-cbar |T| P(y)."""
    ctx = ctx or PairContext.build(model, y, z)
    n = ctx.n
    if log_alpha is None:
        log_alpha = default_log_alpha(model, n)
    A = model.alphabet.y_size
    iy = seq_index(ctx.y, A)
    jz = seq_index(ctx.z, model.alphabet.z_size)
    e1 = build_E1(model, y, z, tables, ctx)
    T = build_T(model, y, z, ctx)
    _, ls_all = _pinned_logs(ctx, tables.ys[e1])
    p_et = float(tables.set_prob("threshold", log_alpha)[iy, jz])
    s_e1 = float(tables.p_y[e1].sum())
    s_e1_s = float(np.exp(ls_all).sum())
    k = len(e1)
    d = ctx.descriptor()
    lK = math.log(model.K)
    cb = cbar(n, A * model.alphabet.z_size)
    ly = float(tables.log_py[iy])
    in_t = set(T.tolist())
    return [
        _le("Et_ge_sum_E1", math.log(s_e1), math.log(p_et), d, log_domain=True),
        _le("sum_E1_ge_sum_E1_s", math.log(s_e1_s), math.log(s_e1), d, log_domain=True),
        _le("sum_E1_s_eq_card_Ps", abs(math.log(s_e1_s) - (math.log(k) + ctx.log_s_tilde)), 0.0, d,
            log_domain=True),
        _le("card_Ps_ge_Kc_P", math.log(k) - ctx.c * lK + ly, math.log(k) + ctx.log_s_tilde, d,
            log_domain=True),
        _le("Kc_ge_Kcbar", -cb * lK, -ctx.c * lK, d, log_domain=True),
        _le("E1_ge_T", len(T), k, d),
        _le("T_subset_E1", len(in_t - set(e1.tolist())), 0, d),
        _le("Et_ge_Kcbar_T_P", -cb * lK + math.log(len(T)) + ly, math.log(p_et), d, log_domain=True),
    ]


def check_E1_in_Et(model: SystemModel, y, z, tables: ExactTables, log_alpha: float | None = None,
                   ctx: PairContext | None = None) -> BoundReport:
    ctx = ctx or PairContext.build(model, y, z)
    if log_alpha is None:
        log_alpha = default_log_alpha(model, ctx.n)
    e1 = build_E1(model, y, z, tables, ctx)
    jz = seq_index(ctx.z, model.alphabet.z_size)
    iy = seq_index(ctx.y, model.alphabet.y_size)
    q = quantize(tables.log_cond[:, jz])
    worst = float(np.max(q[iy] - log_alpha - q[e1]))
    return _le("E1_subset_Et", worst, 0.0, ctx.descriptor() | {"E1": len(e1)})


# --------------------------------------------------------------------------
# Kraft sum and the universal-metric bounds

def kraft_sum(z, y_size: int, z_size: int | None = None) -> tuple[float, float]:
    """(sum over y' in Y^n of 2^-v(y', z), kappa = log2(sum) / n)."""
    from .exact import all_sequences

    z = np.asarray(z, dtype=np.intp)
    n = len(z)
    z_size = z_size or int(z.max()) + 1
    ys = all_sequences(y_size, n)
    s = float(np.sum(np.exp2(-v_batch(ys, z, y_size, z_size))))
    return s, math.log2(s) / n


def kappa_all_z(tables: ExactTables) -> np.ndarray:
    """kappa(n, z) for every z, from the cached v table."""
    return np.log2(np.sum(np.exp2(-tables.v), axis=0)) / tables.n


def kappa_max(n: int, y_size: int, z_size: int) -> float:
    """max_z kappa(n, z) by enumeration."""
    from .exact import all_sequences

    ys = all_sequences(y_size, n)
    zs = all_sequences(z_size, n)
    best = -math.inf
    for z in zs:
        s = np.sum(np.exp2(-v_batch(ys, z, y_size, z_size)))
        best = max(best, math.log2(s) / n)
    return best


def check_Eu_upper(tables: ExactTables, kappa_z: np.ndarray | None = None) -> BoundReport:
    """P[E_u(y, z)] <= 2^(n kappa(n, z)) 2^u(y, z) for all (y, z); reports the worst pair."""
    if kappa_z is None:
        kappa_z = kappa_all_z(tables)
    left = np.log2(tables.set_prob_universal)
    right = tables.n * kappa_z[None, :] + tables.u
    gap = left - right
    i, j = np.unravel_index(int(np.argmax(gap)), gap.shape)
    return _le("Eu_kraft_upper", float(left[i, j]), float(right[i, j]),
               {"y": tuple(tables.ys[i]), "z": tuple(tables.zs[j]), "n": tables.n}, log_domain=True)


def check_Et_universal_lower(tables: ExactTables, log_alpha: float | None = None) -> BoundReport:
    """P[E_t(y, z)] >= 2^(u(y, z) - n eps2(n)) for all (y, z); reports the worst pair."""
    model = tables.model
    n = tables.n
    if log_alpha is None:
        log_alpha = default_log_alpha(model, n)
    lad = epsilon_ladder(model, n, kappa=None)
    left = tables.u - n * lad.eps2
    right = np.log2(tables.set_prob("threshold", log_alpha))
    gap = left - right
    i, j = np.unravel_index(int(np.argmax(gap)), gap.shape)
    return _le("Et_universal_lower", float(left[i, j]), float(right[i, j]),
               {"y": tuple(tables.ys[i]), "z": tuple(tables.zs[j]), "n": n}, log_domain=True)


def T_size_report(model: SystemModel, y, z, ctx: PairContext | None = None) -> BoundReport:
    """|T| against 2^(v - n eps2'); reported, not asserted (vacuous at small n)."""
    ctx = ctx or PairContext.build(model, y, z)
    from .lz import v_metric

    T = build_T(model, y, z, ctx)
    lad = epsilon_ladder(model, ctx.n, kappa=None)
    return _le("T_size_lower", v_metric(ctx.parse) - ctx.n * lad.eps2_prime, math.log2(len(T)),
               ctx.descriptor())


# --------------------------------------------------------------------------
# f ratio and scalar helpers

def _log_f(t: float, M: int) -> float:
    inner = (M - 1) * math.log1p(-t) if t < 1 else -math.inf
    return math.log(-math.expm1(inner))


def check_f_ratio(a: float, b: float, n: int, R: float) -> BoundReport:
    """f(a) / f(b) <= max(1, a / b), evaluated in logs."""
    if not (0 < a <= 1 and 0 < b <= 1):
        raise DomainError("a and b must lie in (0, 1]")
    M = codebook_size(n, R)
    inst = {"a": a, "b": b, "n": n, "R": R}
    if M == 1:
        return _le("f_ratio", 0.0, 1.0, inst)
    left = _log_f(a, M) - _log_f(b, M)
    right = max(0.0, math.log(a) - math.log(b))
    return _le("f_ratio", left, right, inst, log_domain=True)


def check_log1p_inequality(u: float) -> BoundReport:
    """ln(1 + u) >= u / (1 + u) for u >= 0."""
    return _le("log1p_lower", u / (1 + u), math.log1p(u), {"u": u})


# --------------------------------------------------------------------------
# epsilon ladder

@dataclass(frozen=True)
class EpsilonLadder:
    n: int
    cbar: int
    eps_n: float
    eps1: float | None
    eps2_prime: float
    eps2: float
    eps3: float

    @property
    def eps(self) -> float | None:
        return None if self.eps1 is None else self.eps1 + self.eps2 + self.eps3


def epsilon_ladder(model: SystemModel, n: int, kappa: float | None | bool = True) -> EpsilonLadder:
    """eps2', eps2 (bits per symbol), eps3 (nats per symbol) and the measured eps1 stand-in.

    kappa=True measures max_z kappa(n, z) when enumeration is feasible; a
    float is used as given; None skips it.
    """
    pm = check_positivity(model.pi)
    st, al = model.states, model.alphabet
    A = al.y_size * al.z_size
    cb = cbar(n, A)
    K = model.K
    e2p = cb / n * math.log2(st.theta_size ** 4 * st.omega_size ** 4 * st.sigma_size ** 2 * math.e)
    e2 = e2p + cb * math.log2(K) / n
    inner = np.logaddexp(2 * cb * math.log(K / pm) + math.log(harmonic_bound(model, n)), 0.0)
    e3 = float(inner) / n
    if kappa is True:
        try:
            kappa = kappa_max(n, al.y_size, al.z_size) if A ** n <= 2 ** 22 else None
        except TooLarge:
            kappa = None
    elif kappa is False:
        kappa = None
    return EpsilonLadder(n, cb, cbar_formula_epsilon(n, A), kappa, e2p, e2, e3)


# --------------------------------------------------------------------------
# full sweep

def bounds_sweep(model: SystemModel, n: int, R: float = 0.1, log_alpha: float | None = None,
                 with_sets: bool = True) -> list[BoundReport]:
    """Every inequality over all (y, z) at block length n."""
    tables = ExactTables(model, n)
    if log_alpha is None:
        log_alpha = default_log_alpha(model, n)
    reports = [check_E_o_in_E_t(tables, log_alpha), check_E_o_in_E_t(tables, 0.0)]
    for z in tables.zs:
        reports.append(check_harmonic_lemma(model, z, n, tables))
        reports.append(check_threshold_lemma(model, z, n, log_alpha=log_alpha, R=R, tables=tables))
    reports.append(check_Eu_upper(tables))
    reports.append(check_Et_universal_lower(tables, log_alpha))
    for y in tables.ys:
        for z in tables.zs:
            ctx = PairContext.build(model, y, z)
            reports += check_boundary_max_bounds(model, y, z, ctx)
            reports += check_zm92(model, y, ctx=ctx)
            if with_sets:
                reports.append(check_E1_in_Et(model, y, z, tables, log_alpha, ctx))
                reports += check_Et_lower_bound(model, y, z, tables, log_alpha, ctx)
    return reports
