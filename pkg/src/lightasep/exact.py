"""Brute-force ground truth on a fixed light-particle sector.

States of the sector with ``r`` light particles on ``n`` sites are stored as
rows of an ``int8`` array, ordered lexicographically; the base-3 code of a
row is its sort key, so lookup is a ``searchsorted``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.stats import poisson

from .errors import GuardError, NumericError, ParameterError, ResourceError
from .phase import RateParams, rates_to_boundary

SECTOR_CAP = 200_000
NEG_SLACK = 1e-14
UNIFORMIZATION_TOL = 1e-12
# rank under the priority order 1 > 2 > 0
_RANK = np.array([0, 2, 1], dtype=np.int8)


def sector_size(n: int, r: int) -> int:
    return math.comb(n, r) * 2 ** (n - r)


def enumerate_sector(n: int, r: int, cap: int = SECTOR_CAP) -> np.ndarray:
    """All configurations in ``{0,1,2}^n`` with exactly ``r`` twos, lexicographically sorted."""
    if n < 1 or not 0 <= r <= n:
        raise ParameterError(f"need n >= 1 and 0 <= r <= n (got n={n}, r={r})")
    size = sector_size(n, r)
    if size > cap:
        raise ResourceError(f"sector (n={n}, r={r}) has {size} states, cap is {cap}")
    rows = []
    bits = (np.arange(2 ** (n - r))[:, None] >> np.arange(n - r - 1, -1, -1)) & 1
    for twos in _combinations(n, r):
        block = np.full((bits.shape[0], n), 2, dtype=np.int8)
        rest = [i for i in range(n) if i not in twos]
        block[:, rest] = bits
        rows.append(block)
    states = np.concatenate(rows, axis=0)
    return states[np.argsort(_codes(states), kind="stable")]


def _combinations(n, r):
    from itertools import combinations

    return [set(c) for c in combinations(range(n), r)]


def _codes(states: np.ndarray) -> np.ndarray:
    n = states.shape[1]
    weights = 3 ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return states.astype(np.int64) @ weights


@dataclass(frozen=True)
class GeneratorMatrix:
    n: int
    r: int
    rates: RateParams
    states: np.ndarray
    codes: np.ndarray
    Q: sp.csr_matrix

    @property
    def dimension(self) -> int:
        return self.states.shape[0]

    def index(self, state) -> int:
        code = int(_codes(np.asarray(state, dtype=np.int8)[None, :])[0])
        i = int(np.searchsorted(self.codes, code))
        if i >= len(self.codes) or self.codes[i] != code:
            raise ParameterError(f"state {tuple(state)} is not in sector (n={self.n}, r={self.r})")
        return i


def build_generator(n: int, r: int, rates: RateParams, cap: int = SECTOR_CAP) -> GeneratorMatrix:
    states = enumerate_sector(n, r, cap)
    codes = _codes(states)
    S = states.shape[0]
    pw = 3 ** np.arange(n - 1, -1, -1, dtype=np.int64)
    src, dst, val = [], [], []

    for i in range(n - 1):
        a = states[:, i].astype(np.int64)
        b = states[:, i + 1].astype(np.int64)
        shift = (b - a) * pw[i] + (a - b) * pw[i + 1]
        ra, rb = _RANK[a], _RANK[b]
        fwd = np.nonzero(ra > rb)[0]
        src.append(fwd)
        dst.append(codes[fwd] + shift[fwd])
        val.append(np.full(fwd.size, 1.0))
        if rates.q > 0:
            bwd = np.nonzero(ra < rb)[0]
            src.append(bwd)
            dst.append(codes[bwd] + shift[bwd])
            val.append(np.full(bwd.size, rates.q))

    def flip(site, frm, to, rate):
        if rate <= 0:
            return
        idx = np.nonzero(states[:, site] == frm)[0]
        src.append(idx)
        dst.append(codes[idx] + (to - frm) * pw[site])
        val.append(np.full(idx.size, rate))

    flip(0, 0, 1, rates.alpha)
    flip(0, 1, 0, rates.gamma)
    flip(n - 1, 1, 0, rates.beta)
    flip(n - 1, 0, 1, rates.delta)

    if src:
        rows = np.concatenate(src)
        cols = np.searchsorted(codes, np.concatenate(dst))
        vals = np.concatenate(val)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    off = sp.coo_matrix((vals, (rows, cols)), shape=(S, S)).tocsr()
    Q = (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()
    return GeneratorMatrix(n, r, rates, states, codes, Q)


def _clean(p: np.ndarray) -> np.ndarray:
    if p.min() < -NEG_SLACK:
        raise NumericError(f"distribution has a negative entry {p.min():.3e}")
    p = np.where(p < 0, 0.0, p)
    return p / p.sum()


def stationary(gen: GeneratorMatrix, tol: float = 1e-10) -> np.ndarray:
    """Solve ``pi Q = 0`` with ``sum(pi) = 1`` by replacing one balance equation."""
    S = gen.dimension
    M = gen.Q.T.tolil()
    M[0, :] = np.ones(S)
    rhs = np.zeros(S)
    rhs[0] = 1.0
    if S == 1:
        return np.ones(1)
    try:
        pi = spla.spsolve(M.tocsc(), rhs)
    except RuntimeError as exc:  # singular factorization
        raise NumericError(f"stationary solve failed: {exc}") from exc
    if not np.all(np.isfinite(pi)):
        raise NumericError("stationary solve returned non-finite values")
    pi = _clean(pi)
    resid = np.abs(gen.Q.T @ pi).max()
    if resid > tol:
        raise NumericError(f"stationary residual {resid:.3e} exceeds {tol:.1e}")
    return pi


def site_density(gen: GeneratorMatrix, pi: np.ndarray, site: int, species: int = 1) -> float:
    """Probability that ``site`` (1-based) holds ``species``."""
    if not 1 <= site <= gen.n:
        raise IndexError(f"site {site} outside [1, {gen.n}]")
    return float(pi[gen.states[:, site - 1] == species].sum())


def site_densities(gen: GeneratorMatrix, pi: np.ndarray, species: int = 1) -> np.ndarray:
    return (pi[:, None] * (gen.states == species)).sum(axis=0)


def loc_marginals(gen: GeneratorMatrix, pi: np.ndarray) -> np.ndarray:
    """``out[i-1, s-1] = P(loc_i = s)``; shape ``(r, n)``, empty when ``r = 0``."""
    r, n = gen.r, gen.n
    out = np.zeros((r, n))
    if r == 0:
        return out
    rows, cols = np.nonzero(gen.states == 2)
    # np.nonzero is row-major, so positions arrive sorted within each state
    cols = cols.reshape(-1, r)
    for i in range(r):
        np.add.at(out[i], cols[:, i], pi)
    return out


def transient(gen: GeneratorMatrix, init: np.ndarray, t: float, tol: float = UNIFORMIZATION_TOL) -> np.ndarray:
    """Law at time ``t`` by uniformization; ``init`` may be a vector or a stack of row vectors."""
    if t < 0:
        raise ParameterError("t must be nonnegative")
    v = np.array(init, dtype=float)
    lam = float(-gen.Q.diagonal().min()) if gen.dimension else 0.0
    if t == 0 or lam == 0:
        return v
    lam *= 1.02
    P = (sp.identity(gen.dimension, format="csr") + gen.Q / lam).T.tocsr()
    # chunks keep the Poisson weights representable and the term count modest
    chunks = max(1, math.ceil(lam * t / 400.0))
    dt = t / chunks
    mu = lam * dt
    # a tenth of the budget per chunk leaves room for rounding in the sums
    k_max = int(poisson.isf(tol / (10 * chunks), mu)) + 2
    weights = poisson.pmf(np.arange(k_max + 1), mu)
    for _ in range(chunks):
        term = v.T if v.ndim == 2 else v
        acc = weights[0] * term
        for k in range(1, k_max + 1):
            term = P @ term
            acc = acc + weights[k] * term
        v = acc.T if v.ndim == 2 else acc
    return v


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ParameterError(f"dimension mismatch {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def worst_case_tv(gen: GeneratorMatrix, pi: np.ndarray, t: float) -> float:
    """``max_x TV(P_t(x, .), pi)`` over every state of the sector."""
    Pt = transient(gen, np.eye(gen.dimension), t)
    return float(0.5 * np.abs(Pt - pi[None, :]).sum(axis=1).max())


def mixing_time_exact(n: int, r: int, rates: RateParams, eps: float, rel_tol: float = 1e-6,
                      cap: int = 4096) -> float:
    if not 0 < eps < 1:
        raise ParameterError("eps must lie in (0, 1)")
    gen = build_generator(n, r, rates, cap=cap)
    pi = stationary(gen)
    if worst_case_tv(gen, pi, 0.0) <= eps:
        return 0.0
    lo, hi = 0.0, 64.0 * n / (1.0 - rates.q)
    while worst_case_tv(gen, pi, hi) > eps:
        lo, hi = hi, 2.0 * hi
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if worst_case_tv(gen, pi, mid) > eps:
            lo = mid
        else:
            hi = mid
    return hi


def check_relation_guards(rates: RateParams, tol: float = 1e-8, lmax: int = 64) -> None:
    b = rates_to_boundary(rates)
    if abs(b.A * b.C - 1.0) < tol:
        raise GuardError(f"AC = {b.A * b.C!r} is within {tol} of 1")
    abcd = b.A * b.B * b.C * b.D
    ls = [0] if b.q == 0 else range(lmax + 1)
    worst = min(abs(abcd * b.q ** l - 1.0) for l in ls)
    if worst < tol:
        raise GuardError(f"ABCD = {abcd!r} is within {tol} of some q^-l")


def verify_simple_relation(n: int, rates: RateParams) -> float:
    """Max residual, over ``1 <= k <= l <= n``, of the one-light-particle location identity.

    The left side is ``P(k <= loc_1 <= l)`` in the ``(n, r=1)`` sector; the right
    side is a ratio of density differences in the standard ASEP on ``n+1`` sites.
    Both are computed by exact stationary solves.
    """
    check_relation_guards(rates)
    g1 = build_generator(n, 1, rates)
    loc = loc_marginals(g1, stationary(g1))[0]
    g0 = build_generator(n + 1, 0, rates)
    dens = site_densities(g0, stationary(g0))
    cum = np.concatenate([[0.0], np.cumsum(loc)])
    denom = dens[0] - dens[n]
    worst = 0.0
    for k in range(1, n + 1):
        for l in range(k, n + 1):
            lhs = cum[l] - cum[k - 1]
            rhs = (dens[k - 1] - dens[l]) / denom
            worst = max(worst, abs(lhs - rhs))
    return worst
