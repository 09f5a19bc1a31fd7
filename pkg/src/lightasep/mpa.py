"""Matrix product ansatz with the Askey-Wilson tridiagonal representation.

``D = I/(1-q) + x/sqrt(1-q)`` and ``E = I/(1-q) + y/sqrt(1-q)`` act on
sequences indexed by ``m = 0, 1, ...``; ``<W| = |V> = e_0``.  Every product of
``k`` tridiagonal factors applied to ``e_0`` is supported on ``0..k``, so
truncating at ``M >= N + 2`` is exact for any word of length ``N`` (the light
particle matrix ``DE - ED`` has reach 2).

Sweeps renormalize the working vector at every step and carry log scale
factors; all reported quantities are ratios.  ``precision="high"`` runs the
same code on ``object`` arrays of ``mpmath.mpf`` (34 significant digits).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import GuardError, ParameterError, WrongPhaseError
from .phase import BoundaryParams, Phase, classify, rates_to_boundary

GUARD_TOL = 1e-10
NONZERO_TOL = 1e-8
HIGH_DPS = 34

# private context, so high precision work leaves the global mpmath settings alone
_MP = mpmath.MPContext()
_MP.dps = HIGH_DPS


class _Backend:
    def __init__(self, precision: str):
        if precision not in ("double", "high"):
            raise ParameterError(f"precision must be 'double' or 'high', got {precision!r}")
        self.precision = precision
        self.high = precision == "high"

    def scalar(self, v):
        return _MP.mpf(v) if self.high else float(v)

    def sqrt(self, v):
        return _MP.sqrt(v) if self.high else math.sqrt(v)

    def log(self, v):
        return float(_MP.log(v)) if self.high else math.log(v)

    def zeros(self, n):
        if self.high:
            return np.array([_MP.mpf(0)] * n, dtype=object)
        return np.zeros(n)

    def array(self, seq):
        if self.high:
            return np.array([_MP.mpf(v) for v in seq], dtype=object)
        return np.asarray(seq, dtype=float)


@dataclass(frozen=True)
class AwCoefficients:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    eps: np.ndarray
    phi: np.ndarray


def _check_guards(b: BoundaryParams, M: int, tol: float = GUARD_TOL) -> None:
    X = b.A * b.B * b.C * b.D
    q = b.q
    # after cancelling common factors only (1 - ABCD q^k), 0 <= k <= 2M, remain
    for k in range(0, 2 * M + 1):
        if q == 0 and k > 0:
            break
        if abs(1.0 - X * q ** k) <= tol:
            m = (k + 1) // 2
            raise GuardError(f"representation singular: |1 - ABCD q^{k}| <= {tol} (m = {m})")


def aw_coefficients(b: BoundaryParams, M: int, precision: str = "double") -> AwCoefficients:
    """Recurrence coefficients ``alpha_m .. phi_m`` for ``0 <= m <= M``.

    Common factors are cancelled symbolically, so ``A = 0``, ``q = 0`` and the
    points where ``AC q^(m-1) = 1`` or ``AD q^(m-1) = 1`` need no special limit.
    """
    _check_guards(b, M)
    nb = _Backend(precision)
    A, B, C, D, q = (nb.scalar(v) for v in (b.A, b.B, b.C, b.D, b.q))
    one = nb.scalar(1)
    s = nb.sqrt(one - q)
    X = A * B * C * D
    al, be, ga, de, ep, ph = (nb.zeros(M + 1) for _ in range(6))

    be[0] = one / (s * (one - X))
    al[0] = -A * B * be[0]
    ga[0] = A / s + B * be[0] * (one - A * C) * (one - A * D)
    de[0] = (C + D - A * C * D - B * C * D) / (s * (one - X))
    for m in range(1, M + 1):
        qm1 = q ** (m - 1)
        qm = q ** m
        q2m, q2m1, q2m2 = q ** (2 * m), q ** (2 * m - 1), q ** (2 * m - 2)
        den = (one - X * q2m) * (one - X * q2m1)
        be[m] = (one - X * qm1) / (s * den)
        al[m] = -A * B * qm * be[m]
        # eps_m / ((1 - AC q^{m-1})(1 - AD q^{m-1}))
        et = (one - qm) * (one - B * C * qm1) * (one - B * D * qm1) / (s * (one - X * q2m2) * (one - X * q2m1))
        ep[m] = et * (one - A * C * qm1) * (one - A * D * qm1)
        ph[m] = -C * D * qm1 * ep[m]
        ga[m] = A / s + B * qm * be[m] * (one - A * C * qm) * (one - A * D * qm) - A * et
        # (den - (1 - X q^{m-1})(1 - AC q^m)(1 - AD q^m)) / A, expanded
        BCD = B * C * D
        G = (-BCD * q2m - BCD * q2m1 + X * BCD * q ** (4 * m - 1) + (C + D) * qm
             - A * C * D * q2m + BCD * qm1 - X * (C + D) * q2m1 + X * A * C * D * q ** (3 * m - 1))
        de[m] = G / (s * den) + A * C * D * qm1 * et
    return AwCoefficients(al, be, ga, de, ep, ph)


class Tridiag:
    """Square tridiagonal matrix stored by diagonals; ``sub[j] = T[j+1, j]``, ``sup[j] = T[j, j+1]``."""

    __slots__ = ("sub", "main", "sup")

    def __init__(self, sub, main, sup):
        self.sub, self.main, self.sup = sub, main, sup

    @property
    def size(self):
        return len(self.main)

    def rmul(self, w):
        """Row vector times matrix."""
        out = w * self.main
        out[1:] += w[:-1] * self.sup
        out[:-1] += w[1:] * self.sub
        return out

    def lmul(self, v):
        """Matrix times column vector."""
        out = self.main * v
        out[1:] += self.sub * v[:-1]
        out[:-1] += self.sup * v[1:]
        return out

    def __add__(self, other):
        return Tridiag(self.sub + other.sub, self.main + other.main, self.sup + other.sup)

    def dense(self) -> np.ndarray:
        """Dense copy; ``object`` entries (high precision) are kept as they are."""
        dt = object if np.asarray(self.main).dtype == object else float
        n = self.size
        T = np.zeros((n, n), dtype=dt)
        if dt is object:
            T[:] = _MP.mpf(0)
        idx = np.arange(n)
        T[idx, idx] = self.main
        T[idx[1:], idx[:-1]] = self.sub
        T[idx[:-1], idx[1:]] = self.sup
        return T


@dataclass(frozen=True)
class MpaRepresentation:
    b: BoundaryParams
    M: int
    coeffs: AwCoefficients
    x: Tridiag
    y: Tridiag
    D: Tridiag
    E: Tridiag
    precision: str = "double"

    @property
    def backend(self) -> _Backend:
        return _Backend(self.precision)

    def e0(self):
        v = self.backend.zeros(self.M)
        v[0] = self.backend.scalar(1)
        return v

    @property
    def W(self):
        return self.e0()

    @property
    def V(self):
        return self.e0()


def build_representation(b: BoundaryParams, M: int, precision: str = "double") -> MpaRepresentation:
    if M < 2:
        raise ParameterError("truncation size M must be at least 2")
    c = aw_coefficients(b, M, precision)
    nb = _Backend(precision)
    one = nb.scalar(1)
    s = nb.sqrt(one - nb.scalar(b.q))
    x = Tridiag(c.alpha[: M - 1].copy(), c.gamma[:M].copy(), c.eps[1:M].copy())
    y = Tridiag(c.beta[: M - 1].copy(), c.delta[:M].copy(), c.phi[1:M].copy())
    diag = one / (one - nb.scalar(b.q))
    D = Tridiag(x.sub / s, diag + x.main / s, x.sup / s)
    E = Tridiag(y.sub / s, diag + y.main / s, y.sup / s)
    return MpaRepresentation(b, M, c, x, y, D, E, precision)


def representation_for(rates_or_b, N: int, precision: str = "double") -> MpaRepresentation:
    """Representation truncated at the exact size ``N + 2`` for words of length ``<= N``."""
    b = rates_or_b if isinstance(rates_or_b, BoundaryParams) else rates_to_boundary(rates_or_b)
    return build_representation(b, N + 2, precision)


def _require(rep: MpaRepresentation, N: int) -> None:
    if N < 0:
        raise ParameterError("N must be nonnegative")
    if rep.M < N + 2:
        raise ParameterError(f"truncation M={rep.M} too small for N={N}; need M >= N + 2")


def _normalize(v, nb):
    m = max(abs(v))
    if m == 0:
        return v, -math.inf
    return v / m, nb.log(m)


def verify_dehp(rep: MpaRepresentation) -> tuple[float, float, float]:
    """Residuals of the quadratic and boundary relations on the untruncated block.

    Truncation pollutes the last row and column only, so the bulk residual is
    taken over the top-left ``(M-2) x (M-2)`` block and the boundary residuals
    over the first ``M-2`` entries.  The residuals are formed in the
    representation's own arithmetic, so a high precision representation
    separates rounding in the check from defects of the representation.
    """
    if rep.M < 4:
        raise ParameterError("verify_dehp needs M >= 4")
    from .phase import boundary_to_rates

    nb = rep.backend
    r = boundary_to_rates(rep.b)
    alpha, beta, gamma, delta, q = (nb.scalar(v) for v in (r.alpha, r.beta, r.gamma, r.delta, rep.b.q))
    D, E = rep.D.dense(), rep.E.dense()
    K = rep.M - 2
    bulk = D @ E - q * (E @ D) - D - E
    W = rep.e0()
    left = W @ (alpha * E - gamma * D) - W
    right = (beta * D - delta * E) @ W - W

    def top(a):
        return float(max(abs(v) for v in np.ravel(a)))

    return top(bulk[:K, :K]), top(left[:K]), top(right[:K])


def _forward(rep, mat: Tridiag, steps: int):
    """Row vectors ``<W| mat^j`` for ``j = 0..steps`` (normalized) and their log scales."""
    nb = rep.backend
    vecs = [rep.e0()]
    logs = [0.0]
    for _ in range(steps):
        v, lg = _normalize(mat.rmul(vecs[-1]), nb)
        vecs.append(v)
        logs.append(logs[-1] + lg)
    return vecs, np.array(logs)


def _backward(rep, mat: Tridiag, steps: int):
    nb = rep.backend
    vecs = [rep.e0()]
    logs = [0.0]
    for _ in range(steps):
        v, lg = _normalize(mat.lmul(vecs[-1]), nb)
        vecs.append(v)
        logs.append(logs[-1] + lg)
    return vecs, np.array(logs)


def _signed_log(v, nb) -> tuple[int, float]:
    if v == 0:
        return 0, -math.inf
    return (1 if v > 0 else -1), nb.log(abs(v))


@dataclass(frozen=True)
class PartitionValues:
    """``Z_k`` for ``k = 0..N`` and ``Zhat_k`` for ``k = 1..N``, stored as sign and log-magnitude."""

    log_Z: np.ndarray
    sign_Z: np.ndarray
    log_Zhat: np.ndarray
    sign_Zhat: np.ndarray

    @property
    def Z(self) -> np.ndarray:
        return self.sign_Z * np.exp(self.log_Z)

    @property
    def Zhat(self) -> np.ndarray:
        return self.sign_Zhat * np.exp(self.log_Zhat)


def partition_values(rep: MpaRepresentation, N: int) -> PartitionValues:
    """``Z_k = <W|(D+E)^k|V>`` and ``Zhat_k = [y^1] <W|(D+E+y(DE-ED))^k|V>``.

    ``Zhat`` is carried as the degree-1 part of a truncated polynomial in ``y``:
    the pair ``(v0, v1)`` evolves as ``v1 <- v1 (D+E) + v0 (DE - ED)``, ``v0 <- v0 (D+E)``.
    """
    _require(rep, N)
    nb = rep.backend
    S = rep.D + rep.E
    v0, v1 = rep.e0(), nb.zeros(rep.M)
    log_scale = 0.0
    log_Z, sign_Z = [0.0], [1]
    log_Zh, sign_Zh = [], []
    for _ in range(N):
        # v0 A = (v0 D) E - (v0 E) D
        vA = rep.E.rmul(rep.D.rmul(v0)) - rep.D.rmul(rep.E.rmul(v0))
        v1 = S.rmul(v1) + vA
        v0 = S.rmul(v0)
        m = max(max(abs(v0)), max(abs(v1)))
        v0, v1 = v0 / m, v1 / m
        log_scale += nb.log(m)
        sz, lz = _signed_log(v0[0], nb)
        sh, lh = _signed_log(v1[0], nb)
        sign_Z.append(sz)
        log_Z.append(lz + log_scale)
        sign_Zh.append(sh)
        log_Zh.append(lh + log_scale)
    return PartitionValues(np.array(log_Z), np.array(sign_Z), np.array(log_Zh), np.array(sign_Zh))


def _check_nonzero(sign, what):
    if sign == 0:
        raise GuardError(f"{what} vanishes")


def config_probability(rep: MpaRepresentation, tau) -> float:
    """Stationary probability of ``tau`` in ``{0,1}^N`` for the standard open ASEP."""
    tau = [int(t) for t in tau]
    N = len(tau)
    _require(rep, N)
    if any(t not in (0, 1) for t in tau):
        raise ParameterError("tau must be a 0/1 sequence")
    nb = rep.backend
    v = rep.e0()
    lg = 0.0
    for t in tau:
        v, l = _normalize((rep.D if t == 1 else rep.E).rmul(v), nb)
        lg += l
    s_num, l_num = _signed_log(v[0], nb)
    pv = partition_values(rep, N)
    _check_nonzero(pv.sign_Z[N], f"Z_{N}")
    if s_num == 0:
        return 0.0
    return float(s_num * pv.sign_Z[N] * math.exp(l_num + lg - pv.log_Z[N]))


def _ratio(num, den) -> float:
    return float(num / den)


def site_densities_mpa(rep: MpaRepresentation, N: int) -> np.ndarray:
    """``mu_N(tau_k = 1)`` for ``k = 1..N`` from one forward and one backward sweep."""
    _require(rep, N)
    if N < 1:
        raise ParameterError("N must be at least 1")
    S = rep.D + rep.E
    left, _ = _forward(rep, S, N - 1)
    right, _ = _backward(rep, S, N - 1)
    out = np.empty(N)
    for k in range(1, N + 1):
        l, r = left[k - 1], right[N - k]
        num = np.dot(rep.D.rmul(l), r)
        den = np.dot(S.rmul(l), r)
        if den == 0:
            raise GuardError(f"Z_{N} vanishes")
        out[k - 1] = _ratio(num, den)
    return out


def site_density_mpa(rep: MpaRepresentation, N: int, k: int) -> float:
    if not 1 <= k <= N:
        raise IndexError(f"site {k} outside [1, {N}]")
    return float(site_densities_mpa(rep, N)[k - 1])


def guard_nonzero(b: BoundaryParams, lmax: int = 64, tol: float = NONZERO_TOL) -> bool:
    """True iff ``ABCD`` stays away from every ``q^-l`` with ``l <= lmax``."""
    X = b.A * b.B * b.C * b.D
    ls = [0] if b.q == 0 else range(lmax + 1)
    return min(abs(X * b.q ** l - 1.0) for l in ls) > tol


def _light_guards(b: BoundaryParams) -> None:
    if not guard_nonzero(b):
        raise GuardError("ABCD is too close to some q^-l")
    if abs(b.A * b.C - 1.0) < NONZERO_TOL:
        raise GuardError("AC = 1: the one-light-particle normalization is not guaranteed nonzero")


def loc1_distribution(rep: MpaRepresentation, N: int, via: str = "direct") -> np.ndarray:
    """Law of the position of a single light particle on ``N`` sites.

    ``direct`` evaluates ``<W|(D+E)^(i-1) (DE-ED) (D+E)^(N-i)|V>`` for every ``i``;
    ``relation`` telescopes single-site densities of the standard ASEP on ``N+1`` sites.
    """
    _light_guards(rep.b)
    if via == "relation":
        _require(rep, N + 1)
        d = site_densities_mpa(rep, N + 1)
        return (d[:-1] - d[1:]) / (d[0] - d[-1])
    if via != "direct":
        raise ParameterError(f"unknown method {via!r}")
    _require(rep, N)
    nb = rep.backend
    S = rep.D + rep.E
    left, llog = _forward(rep, S, N - 1)
    right, rlog = _backward(rep, S, N - 1)
    signs = np.empty(N, dtype=int)
    logs = np.empty(N)
    for i in range(1, N + 1):
        l, r = left[i - 1], right[N - i]
        val = np.dot(rep.D.rmul(l), rep.E.lmul(r)) - np.dot(rep.E.rmul(l), rep.D.lmul(r))
        s, lg = _signed_log(val, nb)
        signs[i - 1] = s
        logs[i - 1] = lg + llog[i - 1] + rlog[N - i]
    top = logs[np.isfinite(logs)].max()
    w = signs * np.exp(logs - top)
    total = w.sum()
    if total == 0:
        raise GuardError(f"Zhat_{N} vanishes")
    return w / total


def aw_first_moment(a: float, b: float, c: float, d: float, q: float | None = None) -> float:
    """Mean of the Askey-Wilson (signed) measure with parameters ``a, b, c, d``.

    The first moment does not depend on ``q``; the argument is accepted for
    symmetry with the measure's full parameter list.  The admissible parameter
    region is not checked; that is the caller's job.
    """
    abcd = a * b * c * d
    if abs(1.0 - abcd) < 1e-15:
        raise GuardError("abcd = 1: first moment is singular")
    num = a + b + c + d - a * b * c - a * b * d - a * c * d - b * c * d
    return num / (2.0 * (1.0 - abcd))


def sigma_left_via_aw(b: BoundaryParams, t: float) -> float:
    """Left boundary density recovered from the first Askey-Wilson moment at parameter ``t``.

    Solves ``t s + 1 - s = pref * (1 + t + 2 sqrt(t) m1)`` for ``s``.  Maximal
    current: ``m1`` at ``(sqrt t, sqrt t, C/sqrt t, D/sqrt t)``, ``pref = 1/4``.
    High density: ``m1`` at ``(A sqrt t, sqrt t / A, C/sqrt t, D/sqrt t)``,
    ``pref = A/(1+A)^2``, valid for ``t`` close to 1.
    """
    if t == 1.0:
        raise ParameterError("t = 1 makes the linear equation degenerate")
    if not 0.0 < t < 1.0:
        raise ParameterError("t must lie in (0, 1)")
    phase = classify(b).phase
    rt = math.sqrt(t)
    if phase is Phase.MAX_CURRENT:
        m1 = aw_first_moment(rt, rt, b.C / rt, b.D / rt)
        pref = 0.25
    elif phase is Phase.HIGH_DENSITY:
        m1 = aw_first_moment(b.A * rt, rt / b.A, b.C / rt, b.D / rt)
        pref = b.A / (1.0 + b.A) ** 2
    else:
        raise WrongPhaseError(f"sigma_left_via_aw covers MaxCurrent and HighDensity, got {phase.value}")
    rhs = pref * (1.0 + t + 2.0 * rt * m1)
    return (rhs - 1.0) / (t - 1.0)


def sample_configurations(rep: MpaRepresentation, N: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from ``mu_N`` by sequential conditioning on matrix products.

    ``P(tau_k = 1 | tau_1..tau_{k-1}) = <l|D|r_{N-k}> / <l|(D+E)|r_{N-k}>`` with
    ``<l|`` the normalized product over the already drawn prefix.
    """
    _require(rep, N)
    S = rep.D + rep.E
    right, _ = _backward(rep, S, N - 1)
    out = np.empty((size, N), dtype=np.int8)
    for j in range(size):
        l = rep.e0()
        for k in range(1, N + 1):
            r = right[N - k]
            lD = rep.D.rmul(l)
            p = _ratio(np.dot(lD, r), np.dot(S.rmul(l), r))
            if rng.random() < p:
                out[j, k - 1] = 1
                l = lD
            else:
                out[j, k - 1] = 0
                l = rep.E.rmul(l)
            l = l / max(abs(l))
    return out
