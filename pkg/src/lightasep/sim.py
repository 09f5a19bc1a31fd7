"""Graphical-construction simulator with shared Poisson clocks.

Every run evolves ``K`` copies that live in one global frame of ``L`` cells.
Edge ``i`` joins cells ``i`` and ``i+1`` and carries a rate-1 clock (sort the
two spins increasingly for the priority ``0 < 2 < 1``) and a rate-``q`` clock
(sort decreasingly).  Copy ``k`` only reacts to edges ``elo[k] <= i <= ehi[k]``;
cells outside that range are frozen.  An *open* copy also reacts to the
boundary clocks of its group: ``alpha`` (0 -> 1) and ``gamma`` (1 -> 0) at
cell ``elo[k]``, ``beta`` (1 -> 0) and ``delta`` (0 -> 1) at cell ``ehi[k]+1``.
Boundary flips skip light particles.  Copies in the same group share
boundary clocks; distinct groups get independent ones.

Clocks are realized by superposition: one Poisson stream of total rate ``R``
and an independent uniform channel choice per event, which has the same
law as per-channel exponential clocks and keeps the coupling identity
(every copy sees the same channel sequence).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ParameterError, ResourceError
from .phase import RateParams

log = logging.getLogger(__name__)

_RANK = np.array([0, 2, 1], dtype=np.int8)
# burn-in horizon = BURNIN_FACTOR * C * n, C = median coalescence time per site
BURNIN_FACTOR = 8.0
CALIBRATION_REPS = 9

STOP_NONE, STOP_COALESCE, STOP_HIT = 0, 1, 2
CHECK_ORDER, CHECK_RIGHTMOST, CHECK_LEFTMOST = 1, 2, 4


def clock_generator(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit user seed; all randomness of a run comes from it."""
    if not 0 <= int(seed) < 2 ** 64:
        raise ParameterError("seed must be an unsigned 64-bit integer")
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def _chunks(first: int = 1 << 12, cap: int = 1 << 18):
    size = first
    while True:
        yield size
        size = min(2 * size, cap)


@njit(inline="always", error_model="numpy")
def _touch(occ, col, use_col, integ, last, k, s, t, t0):
    # close the constant stretch of cell s before it may change; branch-free on
    # purpose, branches here cost a factor of ten in the inlined edge update
    v = occ[k, s]
    on = (v == 1) + (use_col and v == 2) * (col[k, s] == 1)
    integ[k, s] += on * max(t - max(last[k, s], t0), 0.0)
    last[k, s] = t


@njit(cache=True, error_model="numpy")
def _extremes(occ, k):
    lm, rm = -1, -1
    for s in range(occ.shape[1]):
        if occ[k, s] == 2:
            if lm < 0:
                lm = s
            rm = s
    return lm, rm


@njit(cache=True, error_model="numpy")
def _record(occ, col, si, locs, snaps, csnaps):
    K, L = occ.shape
    if locs.shape[0] > 0:
        rmax = locs.shape[2]
        for k in range(K):
            j = 0
            for s in range(L):
                if occ[k, s] == 2 and j < rmax:
                    locs[si, k, j] = s
                    j += 1
            while j < rmax:
                locs[si, k, j] = -1
                j += 1
    if snaps.shape[0] > 0:
        for k in range(K):
            for s in range(L):
                snaps[si, k, s] = occ[k, s]
                if csnaps.shape[0] > 0:
                    csnaps[si, k, s] = col[k, s]


@njit(cache=True, error_model="numpy")
def _boundary_event(u, occ, col, use_col, elo, ehi, is_open, bgrp, rb, ngrp,
                    integ, last, do_int, t, t0, coalesce, checks, viol, ist):
    # rare relative to edge rings, kept out of line so the edge path stays tight
    K = occ.shape[0]
    bsum = rb[0] + rb[1] + rb[2] + rb[3]
    grp = int(u / bsum)
    if grp >= ngrp:
        grp = ngrp - 1
    u -= grp * bsum
    ch = 3
    acc = 0.0
    for c in range(3):
        acc += rb[c]
        if u < acc:
            ch = c
            break
    left = ch < 2
    newv = 1 if (ch == 0 or ch == 3) else 0
    s0 = -1
    pre = 0
    for k in range(K):
        if not is_open[k] or bgrp[k] != grp:
            continue
        s = elo[k] if left else ehi[k] + 1
        if s0 < 0:
            s0 = s
            if coalesce:
                pre = occ[0, s] != occ[1, s]
        if occ[k, s] == 2:
            if use_col and col[k, s] != newv:
                if do_int:
                    _touch(occ, col, use_col, integ, last, k, s, t, t0)
                col[k, s] = newv
        elif occ[k, s] != newv:
            if do_int:
                _touch(occ, col, use_col, integ, last, k, s, t, t0)
            occ[k, s] = newv
    if s0 >= 0:
        if coalesce:
            ist[2] += (occ[0, s0] != occ[1, s0]) - pre
        if checks & CHECK_ORDER:
            if occ[0, s0] < occ[1, s0]:
                viol[0] += 1


@njit(inline="always", error_model="numpy")
def _event(v, occ, col, use_col, elo, ehi, is_open, bgrp, lm, rm, q, rb, ngrp,
           integ, last, do_int, t, t0, coalesce, checks, viol, ist, e0, nE):
    """Apply the edge ring encoded by ``v`` to every copy; ``0 <= v < nE (1+q)``.

    Channel layout: edge ``i`` occupies ``[i(1+q), (i+1)(1+q))`` (rate-1 part
    first), then each boundary group ``[alpha, gamma, beta, delta]``; boundary
    rings are filtered by the callers and go to ``_boundary_event``.  Keeping
    calls out of this inlined body lets numba prune refcounting in the hot loop.
    """
    K = occ.shape[0]
    w = 1.0 + q
    j = int(v / w)
    if j >= nE:
        j = nE - 1
    inc = v - j * w < 1.0
    i = e0 + j
    pre = 0
    if coalesce:
        pre = (occ[0, i] != occ[1, i]) + (occ[0, i + 1] != occ[1, i + 1])
    for k in range(K):
        if i < elo[k] or i > ehi[k]:
            continue
        x = occ[k, i]
        y = occ[k, i + 1]
        rx = _RANK[x]
        ry = _RANK[y]
        if (inc and rx > ry) or ((not inc) and rx < ry):
            if do_int:
                _touch(occ, col, use_col, integ, last, k, i, t, t0)
                _touch(occ, col, use_col, integ, last, k, i + 1, t, t0)
            occ[k, i] = y
            occ[k, i + 1] = x
            # unconditional: guarding this with the runtime color flag costs ~10x
            c = col[k, i]
            col[k, i] = col[k, i + 1]
            col[k, i + 1] = c
            if x == 2:
                if rm[k] == i:
                    rm[k] = i + 1
                if lm[k] == i:
                    lm[k] = i + 1
            elif y == 2:
                if rm[k] == i + 1:
                    rm[k] = i
                if lm[k] == i + 1:
                    lm[k] = i
        elif use_col and x == 2 and y == 2:
            ci = col[k, i]
            cj = col[k, i + 1]
            if (inc and ci > cj) or ((not inc) and ci < cj):
                if do_int:
                    _touch(occ, col, use_col, integ, last, k, i, t, t0)
                    _touch(occ, col, use_col, integ, last, k, i + 1, t, t0)
                col[k, i] = cj
                col[k, i + 1] = ci
    if coalesce:
        ist[2] += (occ[0, i] != occ[1, i]) + (occ[0, i + 1] != occ[1, i + 1]) - pre
    if checks & CHECK_ORDER:
        if occ[0, i] < occ[1, i] or occ[0, i + 1] < occ[1, i + 1]:
            viol[0] += 1


@njit(inline="always", error_model="numpy")
def _post(lm, rm, checks, viol, stop_mode, thr, hit_t, t, ist):
    """Per-event bookkeeping shared by both drivers; sets ``ist[4] = 2`` when the run must stop."""
    if checks & CHECK_RIGHTMOST:
        viol[1] += rm[0] > rm[1]
    if checks & CHECK_LEFTMOST:
        viol[2] += lm[1] > lm[0]
    if stop_mode == STOP_COALESCE:
        ist[4] = 2 * (ist[2] == 0)
    elif stop_mode == STOP_HIT:
        while ist[3] < thr.shape[0] and rm[0] <= thr[ist[3]]:
            hit_t[ist[3]] = t
            ist[3] += 1
        ist[4] = 2 * (ist[3] == thr.shape[0])


_KERNELS = {}


def _kernels(use_col: bool, do_int: bool, stop_mode: int, checks: int):
    """Event loops with the run flags baked in as compile-time constants.

    Runtime flags inside the inlined edge update (or branches in inlined helpers
    that take arrays) stop numba from pruning reference counting in the loop,
    which costs roughly a factor of ten per event.  Closure values enter the
    cache key, so every variant is cached separately.
    """
    key = (bool(use_col), bool(do_int), int(stop_mode), int(checks))
    if key in _KERNELS:
        return _KERNELS[key]
    USE_COL, DO_INT, STOP, CHECKS = key
    COAL = STOP == STOP_COALESCE
    WATCH = STOP != STOP_NONE or CHECKS != 0

    @njit(cache=True, error_model="numpy")
    def timed_inner(E, U, j, R, t_end, t, t_sample, occ, col, elo, ehi, is_open, bgrp, lm, rm, q, rb, ngrp,
                    integ, last, t0, thr, hit_t, viol, ist, e0, nE):
        # returns (j, t, code): 0 buffer spent, 1 sample due, 2 boundary ring at
        # j - 1 still to apply, 3 horizon reached, 4 stopped
        lim = nE * (1.0 + q)
        while j < E.shape[0]:
            t_next = t + E[j] / R
            if t_sample < t_next:
                return j, t, 1
            if t_next > t_end:
                return j, t, 3
            t = t_next
            v = U[j] * R
            j += 1
            ist[1] += 1
            # exit on the channel here: branching on an inlined call's result
            # also keeps the refcounting inside the loop
            if v >= lim:
                return j, t, 2
            _event(v, occ, col, USE_COL, elo, ehi, is_open, bgrp, lm, rm, q, rb, ngrp,
                   integ, last, DO_INT, t, t0, COAL, CHECKS, viol, ist, e0, nE)
            if WATCH:
                _post(lm, rm, CHECKS, viol, STOP, thr, hit_t, t, ist)
                if ist[4] != 0:
                    return j, t, 4
        return j, t, 0

    @njit(cache=True, error_model="numpy")
    def timed(E, U, R, t_end, occ, col, elo, ehi, is_open, bgrp, lm, rm, q, rb, ngrp,
              integ, last, t0, samp_t, locs, snaps, csnaps, thr, hit_t, viol, fst, ist):
        # fst = [t]; ist = [sample index, events, disagreements, next threshold,
        # done (1 horizon, 2 stopped), first edge, edge count]
        S = samp_t.shape[0]
        e0 = ist[5]
        nE = ist[6]
        t = fst[0]
        j = 0
        while True:
            ts = samp_t[ist[0]] if ist[0] < S and samp_t[ist[0]] <= t_end else np.inf
            j, t, code = timed_inner(E, U, j, R, t_end, t, ts, occ, col, elo, ehi, is_open, bgrp, lm, rm, q, rb,
                                     ngrp, integ, last, t0, thr, hit_t, viol, ist, e0, nE)
            if code == 0:
                break
            if code == 1:
                _record(occ, col, ist[0], locs, snaps, csnaps)
                ist[0] += 1
            elif code == 2:
                _boundary_event(U[j - 1] * R - nE * (1.0 + q), occ, col, USE_COL, elo, ehi, is_open, bgrp, rb,
                                ngrp, integ, last, DO_INT, t, t0, COAL, CHECKS, viol, ist)
                if WATCH:
                    _post(lm, rm, CHECKS, viol, STOP, thr, hit_t, t, ist)
                    if ist[4] != 0:
                        break
            elif code == 3:
                while ist[0] < S and samp_t[ist[0]] <= t_end:
                    _record(occ, col, ist[0], locs, snaps, csnaps)
                    ist[0] += 1
                ist[4] = 1
                break
            else:
                break
        fst[0] = t

    @njit(cache=True, error_model="numpy")
    def untimed_inner(U, pos, stop, R, occ, col, elo, ehi, is_open, bgrp, lm, rm, q, rb, ngrp, viol, ist, e0, nE):
        # returns (pos, boundary ring pending at pos - 1)
        empty = np.zeros((0, 0))
        lim = nE * (1.0 + q)
        while pos < stop:
            v = U[pos] * R
            pos += 1
            if v >= lim:
                return pos, True
            _event(v, occ, col, USE_COL, elo, ehi, is_open, bgrp, lm, rm, q, rb, ngrp,
                   empty, empty, False, 0.0, 0.0, False, 0, viol, ist, e0, nE)
        return pos, False

    @njit(cache=True, error_model="numpy")
    def untimed(U, counts, R, occ, col, elo, ehi, is_open, bgrp, lm, rm, q, rb, ngrp, locs, snaps, csnaps, viol, ist):
        # event counts per sampling interval are given, only channels are drawn;
        # ist = [interval, events left in it, events, done, unused, first edge,
        # edge count]; interval j < S ends at sample j, the last one at the horizon
        S = counts.shape[0] - 1
        empty = np.zeros((0, 0))
        e0 = ist[5]
        nE = ist[6]
        pos = 0
        while True:
            while ist[1] == 0:
                if ist[0] < S:
                    _record(occ, col, ist[0], locs, snaps, csnaps)
                ist[0] += 1
                if ist[0] > S:
                    ist[3] = 1
                    return
                ist[1] = counts[ist[0]]
            if pos == U.shape[0]:
                return
            stop = min(U.shape[0], pos + ist[1])
            new, pending = untimed_inner(U, pos, stop, R, occ, col, elo, ehi, is_open, bgrp, lm, rm, q, rb, ngrp,
                                         viol, ist, e0, nE)
            ist[1] -= new - pos
            ist[2] += new - pos
            pos = new
            if pending:
                _boundary_event(U[pos - 1] * R - nE * (1.0 + q), occ, col, USE_COL, elo, ehi, is_open, bgrp, rb,
                                ngrp, empty, empty, False, 0.0, 0.0, False, 0, viol, ist)

    _KERNELS[key] = (timed, untimed)
    return _KERNELS[key]


@njit(cache=True, error_model="numpy")
def _single_light(U, counts, occ, q, e0, nE, pos, ist):
    """Lean path for one copy on a window carrying exactly one light; same channel layout as ``_event``.

    ``ist = [interval, events left in it, done]`` as in ``_untimed``; ``pos``
    collects the light's cell at each sample.
    """
    S = counts.shape[0] - 1
    w = 1.0 + q
    p = -1
    for s in range(occ.shape[0]):
        if occ[s] == 2:
            p = s
    j = 0
    while True:
        while ist[1] == 0:
            if ist[0] < S:
                pos[ist[0]] = p
            ist[0] += 1
            if ist[0] > S:
                ist[2] = 1
                return
            ist[1] = counts[ist[0]]
        if j == U.shape[0]:
            return
        v = U[j] * nE * w
        j += 1
        ist[1] -= 1
        k = int(v / w)
        if k >= nE:
            k = nE - 1
        inc = v - k * w < 1.0
        i = e0 + k
        x = occ[i]
        y = occ[i + 1]
        rx = _RANK[x]
        ry = _RANK[y]
        if (inc and rx > ry) or ((not inc) and rx < ry):
            occ[i] = y
            occ[i + 1] = x
            if x == 2:
                p = i + 1
            elif y == 2:
                p = i


@dataclass(frozen=True)
class ClockStream:
    """Seeded Poisson clocks of one run, realized by superposition.

    Channels are laid out as in the kernels: for each of ``n_edges`` edges its
    rate-1 then rate-``q`` clock, then ``(alpha, gamma, beta, delta)`` for each
    boundary group.  Timed runs draw buffers of exponential gaps and uniform
    channel choices alternately from one PCG64 generator, so a seed fixes the
    whole event sequence.
    """

    seed: int
    q: float
    n_edges: int
    boundary: tuple = ()

    def channel_rates(self) -> np.ndarray:
        rates = []
        for _ in range(self.n_edges):
            rates.extend((1.0, self.q))
        for grp in self.boundary:
            rates.extend(grp)
        return np.array(rates, dtype=float)

    @property
    def total_rate(self) -> float:
        return float(self.channel_rates().sum())

    def untimed_buffers(self, interval_lengths):
        """Poisson event counts per interval, then buffers of uniform channel choices."""
        rng = clock_generator(self.seed)
        counts = rng.poisson(self.total_rate * np.asarray(interval_lengths, dtype=float))

        def gen():
            for size in _chunks():
                yield rng.random(size)

        return counts.astype(np.int64), gen()

    def timed_buffers(self):
        rng = clock_generator(self.seed)
        for size in _chunks():
            yield rng.standard_exponential(size), rng.random(size)

    def events(self, T: float) -> tuple[np.ndarray, np.ndarray]:
        """Ring times and channel ids on ``[0, T]``."""
        rates = self.channel_rates()
        R = float(rates.sum())
        if R == 0:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        cum = np.cumsum(rates)
        times, chans, t = [], [], 0.0
        for E, U in self.timed_buffers():
            # left fold, matching the kernels' running sum
            tt = np.cumsum(np.concatenate(([t], E / R)))[1:]
            keep = tt <= T
            times.append(tt[keep])
            chans.append(np.minimum(np.searchsorted(cum, U[keep] * R, side="right"), rates.size - 1))
            if not keep.all():
                break
            t = tt[-1]
        return np.concatenate(times), np.concatenate(chans)


@dataclass(frozen=True)
class SimState:
    """Configuration over ``{0,1,2}`` on an open segment ``[1, n]`` or a window ``[-L, L]``."""

    kind: str
    occupancy: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=np.int8)
        if occ.ndim != 1 or occ.size == 0:
            raise ParameterError("occupancy must be a nonempty 1-d sequence")
        if occ.min() < 0 or occ.max() > 2:
            raise ParameterError("occupancy values must lie in {0, 1, 2}")
        if self.kind not in ("open", "window"):
            raise ParameterError(f"kind must be 'open' or 'window', got {self.kind!r}")
        if self.kind == "window" and occ.size % 2 == 0:
            raise ParameterError("a window [-L, L] has an odd number of cells")
        object.__setattr__(self, "occupancy", occ)

    @property
    def n(self) -> int:
        return self.occupancy.size

    @property
    def r(self) -> int:
        return int((self.occupancy == 2).sum())

    @property
    def half_width(self) -> int:
        return (self.n - 1) // 2

    def coordinates(self) -> np.ndarray:
        """Site labels: ``1..n`` on the segment, ``-L..L`` on a window."""
        if self.kind == "open":
            return np.arange(1, self.n + 1)
        return np.arange(-self.half_width, self.half_width + 1)


def open_state(occ) -> SimState:
    return SimState("open", np.asarray(occ, dtype=np.int8))


def extremal_state(n: int, r: int, top: bool) -> SimState:
    """All ones with the lights leftmost (``top``) or all zeros with the lights rightmost."""
    if not 0 <= r <= n:
        raise ParameterError("need 0 <= r <= n")
    occ = np.full(n, 1 if top else 0, dtype=np.int8)
    if top:
        occ[:r] = 2
    elif r:
        occ[n - r:] = 2
    return open_state(occ)


def window_state(L: int, rho: float, rng: np.random.Generator, overrides: dict | None = None) -> SimState:
    """Bernoulli(``rho``) occupancy on ``[-L, L]`` with ``overrides`` ({site: value}) applied."""
    if not 0.0 <= rho <= 1.0:
        raise ParameterError("rho must lie in [0, 1]")
    occ = (rng.random(2 * L + 1) < rho).astype(np.int8)
    for x, v in (overrides or {}).items():
        if not -L <= x <= L:
            raise ParameterError(f"override site {x} outside the window")
        occ[x + L] = v
    return SimState("window", occ)


@dataclass
class TrajectoryRecord:
    """Samples of one (possibly multi-copy) run.

    ``locs[s, k]`` lists light positions of copy ``k`` at ``times[s]`` in the
    copy's own coordinates, padded with a sentinel of 0 on the open segment
    and ``None`` never (windows pad with ``-L-1``).
    """

    seed: int
    times: np.ndarray
    locs: np.ndarray
    n_events: int
    final: list
    snapshots: np.ndarray | None = None
    colors: np.ndarray | None = None
    occupancy_integral: np.ndarray | None = None
    stop_time: float = math.inf
    hit_times: np.ndarray | None = None
    violations: np.ndarray | None = None
    config: dict = field(default_factory=dict)

    @property
    def loc(self) -> np.ndarray:
        """Light positions of the first copy, shape ``(samples, r)``."""
        return self.locs[:, 0, :]


def _run(states, rates: RateParams | None, q: float, T: float, seed: int, *,
         elo=None, ehi=None, bgrp=None, colors=None, sample_times=None, snapshots=False,
         integrate_from=None, stop_mode=STOP_NONE, thresholds=(), checks=0, timed=None):
    if T < 0:
        raise ParameterError("T must be nonnegative")
    K = len(states)
    L = max(s.n for s in states)
    occ = np.zeros((K, L), dtype=np.int8)
    for k, s in enumerate(states):
        if s.n != L:
            raise ParameterError("coupled states must live on lattices of equal size")
        occ[k] = s.occupancy
    is_open = np.array([s.kind == "open" for s in states])
    elo = np.zeros(K, dtype=np.int64) if elo is None else np.asarray(elo, dtype=np.int64)
    ehi = np.full(K, L - 2, dtype=np.int64) if ehi is None else np.asarray(ehi, dtype=np.int64)
    for k, s in enumerate(states):
        if s.kind == "window" and elo[k] == 0 and ehi[k] == L - 2:
            elo[k], ehi[k] = 1, L - 3
    bgrp = np.zeros(K, dtype=np.int64) if bgrp is None else np.asarray(bgrp, dtype=np.int64)
    ngrp = int(bgrp[is_open].max()) + 1 if is_open.any() else 0
    if rates is None:
        a = g = b = d = 0.0
    else:
        a, g, b, d = rates.alpha, rates.gamma, rates.beta, rates.delta
    use_col = colors is not None
    col = np.zeros((K, L), dtype=np.int8)
    if use_col:
        for k in range(K):
            where = np.nonzero(occ[k] == 2)[0]
            ck = np.asarray(colors[k], dtype=np.int8)
            if ck.size != where.size:
                raise ParameterError(f"need {where.size} colors for copy {k}, got {ck.size}")
            if ck.size and (ck.min() < 0 or ck.max() > 1):
                raise ParameterError("colors must be 0 or 1")
            col[k, where] = ck
    samp = np.zeros(0) if sample_times is None else np.asarray(sample_times, dtype=float)
    if samp.size and (np.any(np.diff(samp) <= 0) or samp[0] < 0 or samp[-1] > T):
        raise ParameterError("sample times must be strictly increasing within [0, T]")
    if stop_mode == STOP_COALESCE and (K != 2 or np.any(elo != elo[0]) or np.any(ehi != ehi[0])):
        raise ParameterError("coalescence needs two copies on the same edge range")
    S = samp.size
    rmax = max(1, max(s.r for s in states))
    locs = np.full((S, K, rmax), -1, dtype=np.int64)
    snaps = np.zeros((S, K, L), dtype=np.int8) if snapshots else np.zeros((0, 0, 0), dtype=np.int8)
    csnaps = np.zeros((S, K, L), dtype=np.int8) if (snapshots and use_col) else np.zeros((0, 0, 0), dtype=np.int8)
    integ = np.zeros((K, L)) if integrate_from is not None else np.zeros((0, 0))
    last = np.zeros((K, L))
    thr = np.asarray(thresholds, dtype=np.int64)
    hit_t = np.full(thr.size, np.inf)
    viol = np.zeros(3, dtype=np.int64)
    lm = np.full(K, -1, dtype=np.int64)
    rm = np.full(K, -1, dtype=np.int64)
    for k in range(K):
        w = np.nonzero(occ[k] == 2)[0]
        if w.size:
            lm[k], rm[k] = w[0], w[-1]
    rb = np.array([a, g, b, d], dtype=float)
    nE = int(ehi.max() - elo.min() + 1)
    clocks = ClockStream(seed, float(q), nE, tuple((a, g, b, d) for _ in range(ngrp)))
    R = clocks.total_rate
    if timed is None:
        timed = stop_mode != STOP_NONE or integrate_from is not None or checks != 0
    args = (occ, col, elo, ehi, is_open, bgrp, lm, rm, float(q), rb, ngrp)
    k_timed, k_untimed = _kernels(use_col, integrate_from is not None, stop_mode, checks)

    t_stop = math.inf
    if stop_mode == STOP_COALESCE and np.array_equal(occ[0], occ[1]):
        t_stop, events = 0.0, 0
        for si in range(S):
            _record(occ, col, si, locs, snaps, csnaps)
    elif stop_mode == STOP_HIT and np.all(rm[0] <= thr):
        t_stop, events = 0.0, 0
        hit_t[:] = 0.0
        for si in range(S):
            _record(occ, col, si, locs, snaps, csnaps)
    elif timed:
        fst = np.zeros(1)
        ist = np.zeros(7, dtype=np.int64)
        ist[5], ist[6] = elo.min(), nE
        if stop_mode == STOP_COALESCE:
            ist[2] = int((occ[0] != occ[1]).sum())
        if stop_mode == STOP_HIT:
            while ist[3] < thr.size and rm[0] <= thr[ist[3]]:
                hit_t[ist[3]] = 0.0
                ist[3] += 1
        for E, U in clocks.timed_buffers():
            k_timed(E, U, R, float(T), *args, integ, last, float(integrate_from or 0.0), samp, locs, snaps, csnaps,
                    thr, hit_t, viol, fst, ist)
            if ist[4]:
                break
        events = int(ist[1])
        if ist[4] == 2:
            t_stop = float(fst[0])
        # samples after an early stop keep the stopped state
        for si in range(int(ist[0]), S):
            _record(occ, col, si, locs, snaps, csnaps)
        if integrate_from is not None:
            t_fin = min(float(T), t_stop)
            for k in range(K):
                for s in range(L):
                    _touch(occ, col, use_col, integ, last, k, s, t_fin, float(integrate_from))
    else:
        edges = np.concatenate(([0.0], samp, [float(T)]))
        counts, bufs = clocks.untimed_buffers(np.diff(edges))
        ist = np.array([0, counts[0], 0, 0, 0, elo.min(), nE], dtype=np.int64)
        for U in bufs:
            k_untimed(U, counts, R, *args, locs, snaps, csnaps, viol, ist)
            if ist[3]:
                break
        events = int(ist[2])
    final = [SimState(s.kind, occ[k].copy(), float(min(T, t_stop))) for k, s in enumerate(states)]
    return dict(times=samp, locs=locs, snaps=snaps if snapshots else None,
                cols=csnaps if (snapshots and use_col) else None,
                integ=integ if integrate_from is not None else None,
                t_stop=float(t_stop), events=int(events), final=final, hit_t=hit_t, viol=viol)


def _open_locs(locs):
    # global cell index -> 1-based site, padding stays 0
    return np.where(locs >= 0, locs + 1, 0)


def _sample_grid(T: float, sample_dt: float | None) -> np.ndarray:
    if sample_dt is None:
        return np.zeros(0)
    if sample_dt <= 0:
        raise ParameterError("sample_dt must be positive")
    n = int(math.floor(T / sample_dt + 1e-9))
    return sample_dt * np.arange(0, n + 1)


def simulate_open(init: SimState, rates: RateParams, T: float, seed: int, sample_dt: float | None = 1.0, *,
                  snapshots: bool = False, integrate_from: float | None = None) -> TrajectoryRecord:
    """Open ASEP with light particles on ``[1, n]`` up to time ``T``.

    ``integrate_from`` turns on the per-site integral of the species-1 indicator
    over ``[integrate_from, T]``.
    """
    if init.kind != "open":
        raise ParameterError("simulate_open needs an open-segment state")
    samp = _sample_grid(T, sample_dt)
    out = _run([init], rates, rates.q, T, seed, sample_times=samp, snapshots=snapshots,
               integrate_from=integrate_from)
    return TrajectoryRecord(
        seed=seed, times=samp, locs=_open_locs(out["locs"][:, :, : max(init.r, 0)]), n_events=out["events"],
        final=out["final"], snapshots=None if out["snaps"] is None else out["snaps"][:, 0, :],
        occupancy_integral=None if out["integ"] is None else out["integ"][0],
        config=dict(kind="open", rates=rates, T=T, sample_dt=sample_dt, init=init, integrate_from=integrate_from),
    )


def window_margin(T: float) -> float:
    return 4.0 * T + 10.0 * math.sqrt(T)


def simulate_window(init: SimState, rho: float, q: float, T: float, seed: int, sample_dt: float | None = 1.0,
                    *, obs_range: int = 0, sample_times=None, snapshots: bool = False) -> TrajectoryRecord:
    """ASEP on ``[-L, L]`` with the two extreme cells frozen; light positions reported in ``-L..L``."""
    if init.kind != "window":
        raise ParameterError("simulate_window needs a window state")
    if not 0.0 <= q < 1.0:
        raise ParameterError("q must lie in [0, 1)")
    L = init.half_width
    need = window_margin(T) + obs_range
    if L < need:
        raise ParameterError(f"window too small: L={L} < 4T + 10 sqrt(T) + range = {need:.1f}")
    samp = np.asarray(sample_times, dtype=float) if sample_times is not None else _sample_grid(T, sample_dt)
    if init.r == 1 and not snapshots and samp.size and samp[-1] == T and np.all(np.diff(samp) > 0):
        occ = init.occupancy.copy()
        nE = 2 * L - 2
        clocks = ClockStream(seed, float(q), nE)
        counts, bufs = clocks.untimed_buffers(np.diff(np.concatenate(([0.0], samp, [float(T)]))))
        pos = np.empty(samp.size, dtype=np.int64)
        ist = np.array([0, counts[0], 0], dtype=np.int64)
        for U in bufs:
            _single_light(U, counts, occ, float(q), 1, nE, pos, ist)
            if ist[2]:
                break
        events = int(counts.sum())
        return TrajectoryRecord(
            seed=seed, times=samp, locs=(pos - L)[:, None, None], n_events=int(events),
            final=[SimState("window", occ, float(T))], config=dict(kind="window", rho=rho, q=q, T=T, L=L))
    out = _run([init], None, q, T, seed, sample_times=samp, snapshots=snapshots)
    locs = out["locs"][:, :, : max(init.r, 0)]
    locs = np.where(locs >= 0, locs - L, -L - 1)
    return TrajectoryRecord(
        seed=seed, times=samp, locs=locs, n_events=out["events"], final=out["final"],
        snapshots=None if out["snaps"] is None else out["snaps"][:, 0, :],
        config=dict(kind="window", rho=rho, q=q, T=T, L=L),
    )


@dataclass
class CoupledPair:
    """Two copies driven by one clock stream, with the run's coupling diagnostics."""

    first: TrajectoryRecord
    second: TrajectoryRecord
    coalescence_time: float
    violations: dict

    def overlay(self) -> np.ndarray | None:
        if self.first.snapshots is None:
            return None
        return disagreement_overlay(self.first.snapshots, self.second.snapshots)


def couple(init1: SimState, init2: SimState, seed: int, T: float, rates: RateParams | None = None, q: float | None = None,
           *, independent_boundaries: bool = False, sample_dt: float | None = None, snapshots: bool = False,
           stop_on_coalescence: bool = False, check_order: bool = False, check_rightmost: bool = False,
           check_leftmost: bool = False) -> CoupledPair:
    """Run two states under the basic coupling (shared edge clocks).

    Boundary clocks of open segments are shared unless ``independent_boundaries``.
    ``check_order`` counts events after which ``first >= second`` fails somewhere
    ({0,1}-valued copies); ``check_rightmost`` counts events after which the
    rightmost light of ``first`` is right of the rightmost light of ``second``;
    ``check_leftmost`` counts those with the leftmost light of ``second`` right
    of the leftmost light of ``first``.
    """
    if init1.kind != init2.kind or init1.n != init2.n:
        raise ParameterError("coupled states must live on the same lattice")
    if init1.kind == "open" and rates is None:
        raise ParameterError("open segments need boundary rates")
    qq = rates.q if rates is not None else q
    if qq is None:
        raise ParameterError("q is required")
    checks = (CHECK_ORDER if check_order else 0) | (CHECK_RIGHTMOST if check_rightmost else 0) \
        | (CHECK_LEFTMOST if check_leftmost else 0)
    if check_order and (init1.r or init2.r):
        raise ParameterError("order checks apply to {0,1}-valued states")
    if check_order and np.any(init1.occupancy < init2.occupancy):
        raise ParameterError("order check needs first >= second at time 0")
    samp = _sample_grid(T, sample_dt)
    out = _run([init1, init2], rates, qq, T, seed, bgrp=[0, 1] if independent_boundaries else [0, 0],
               sample_times=samp, snapshots=snapshots,
               stop_mode=STOP_COALESCE if stop_on_coalescence else STOP_NONE, checks=checks,
               timed=True)
    recs = []
    conv = _open_locs if init1.kind == "open" else (lambda x: np.where(x >= 0, x - init1.half_width, -init1.half_width - 1))
    for k, s in enumerate((init1, init2)):
        recs.append(TrajectoryRecord(
            seed=seed, times=samp, locs=conv(out["locs"][:, k, : s.r]), n_events=out["events"],
            final=[out["final"][k]], snapshots=None if out["snaps"] is None else out["snaps"][:, k, :],
            config=dict(kind=s.kind, rates=rates, q=qq, T=T)))
    coal = out["t_stop"] if stop_on_coalescence else (0.0 if np.array_equal(init1.occupancy, init2.occupancy) else math.inf)
    viol = dict(order=int(out["viol"][0]), rightmost=int(out["viol"][1]), leftmost=int(out["viol"][2]))
    return CoupledPair(recs[0], recs[1], coal, viol)


def coalescence_time(n: int, r: int, rates: RateParams, seed: int, t_max: float) -> float:
    """First time the extremal pair of the sector agrees under the basic coupling (``inf`` past ``t_max``)."""
    top, bottom = extremal_state(n, r, True), extremal_state(n, r, False)
    return couple(top, bottom, seed, t_max, rates, stop_on_coalescence=True).coalescence_time


def hitting_times(init: SimState, rates: RateParams, thresholds, seed: int, t_max: float) -> np.ndarray:
    """First times the rightmost light is at or left of each threshold (1-based sites, any order)."""
    if init.kind != "open" or init.r == 0:
        raise ParameterError("hitting times need an open segment with at least one light")
    thr = np.asarray(thresholds, dtype=np.int64)
    order = np.argsort(-thr, kind="stable")
    out = _run([init], rates, rates.q, t_max, seed, stop_mode=STOP_HIT, thresholds=thr[order] - 1)
    res = np.empty(thr.size)
    res[order] = out["hit_t"]
    return res


def disagreement_overlay(zeta1: np.ndarray, zeta2: np.ndarray) -> np.ndarray:
    """Shared value where the two configurations agree, 2 where they differ."""
    zeta1 = np.asarray(zeta1, dtype=np.int8)
    zeta2 = np.asarray(zeta2, dtype=np.int8)
    return np.where(zeta1 == zeta2, zeta1, 2).astype(np.int8)


@dataclass
class DisagreementRecord:
    times: np.ndarray
    overlay: np.ndarray  # (samples, cells)
    positions: list  # per sample: array of second class positions
    types: list  # per sample: value of the lower configuration at those positions


def disagreement(pair: CoupledPair) -> DisagreementRecord:
    """Overlay process of an ordered {0,1}-valued pair recorded with snapshots.

    The type of a second class particle is the value it is matched with: the
    lower configuration (0, empty site) or the upper one (1, particle) where
    they disagree, read off the lower configuration.
    """
    z1, z2 = pair.first.snapshots, pair.second.snapshots
    if z1 is None:
        raise ParameterError("the pair must be recorded with snapshots")
    if z1.max() > 1 or z2.max() > 1:
        raise ParameterError("disagreement needs {0,1}-valued configurations")
    if np.any(z1[0] < z2[0]) and np.any(z1[0] > z2[0]):
        raise ParameterError("initial configurations are not ordered")
    ov = disagreement_overlay(z1, z2)
    pos, types = [], []
    for s in range(ov.shape[0]):
        w = np.nonzero(ov[s] == 2)[0]
        pos.append(w)
        types.append(z2[s, w] if np.all(z1[0] >= z2[0]) else z1[s, w])
    return DisagreementRecord(pair.first.times, ov, pos, types)


def pair_ordering_check(zeta: np.ndarray, S, S_prime, q: float, T: float, seed: int) -> dict:
    """Run two second-class configurations over the common background ``zeta`` on a window.

    ``zeta`` is a {0,1} window configuration; the first copy holds lights on
    ``S``, the second on ``S_prime`` (window coordinates).  Returns the counts
    of events violating ``rightmost(first) <= rightmost(second)`` (when ``S``
    lies left of ``S_prime``) or ``leftmost(second) <= leftmost(first)`` (when
    ``S`` lies right of ``S_prime``), and whether the type-count hypothesis
    held at time 0.
    """
    zeta = np.asarray(zeta, dtype=np.int8)
    L = (zeta.size - 1) // 2
    S, S_prime = sorted(S), sorted(S_prime)
    if not S or not S_prime or set(S) & set(S_prime):
        raise ParameterError("S and S' must be nonempty and disjoint")
    x1, x2 = zeta.copy(), zeta.copy()
    x1[np.array(S) + L] = 2
    x2[np.array(S_prime) + L] = 2
    left = max(S) < min(S_prime)
    if not left and not min(S) > max(S_prime):
        raise ParameterError("S must lie entirely left or entirely right of S'")
    # types at time 0: the value of the other configuration, i.e. zeta
    t1 = zeta[np.array(S) + L]
    t2 = zeta[np.array(S_prime) + L]
    hyp = (t1 == 1).sum() <= (t2 == 1).sum() and (t1 == 0).sum() <= (t2 == 0).sum()
    pair = couple(SimState("window", x1), SimState("window", x2), seed, T, q=q,
                  check_rightmost=left, check_leftmost=not left)
    key = "rightmost" if left else "leftmost"
    return dict(hypothesis=bool(hyp), violations=pair.violations[key], events=pair.first.n_events, side=key)


def color_projection(traj: TrajectoryRecord, colors=None) -> TrajectoryRecord:
    """Standard open ASEP obtained by coloring the lights of an open trajectory.

    The run is replayed from ``traj``'s seed and configuration, so the light
    dynamics are identical; colors ride on the lights, adjacent lights sort
    their colors on the edge clocks, and a light on a boundary cell takes the
    color its boundary clock would have written.  Default initial colors are all 1.
    """
    cfg = traj.config
    if cfg.get("kind") != "open":
        raise ParameterError("color projection applies to open-segment trajectories")
    init: SimState = cfg["init"]
    cols = np.ones(init.r, dtype=np.int8) if colors is None else np.asarray(colors, dtype=np.int8)
    if cols.size != init.r:
        raise ParameterError(f"need {init.r} colors, got {cols.size}")
    samp = traj.times
    out = _run([init], cfg["rates"], cfg["rates"].q, cfg["T"], traj.seed, colors=[cols], sample_times=samp,
               snapshots=True, integrate_from=cfg.get("integrate_from"), timed=True)
    snaps = out["snaps"][:, 0, :]
    proj = np.where(snaps == 2, out["cols"][:, 0, :], snaps).astype(np.int8)
    fin = out["final"][0].occupancy
    return TrajectoryRecord(
        seed=traj.seed, times=samp, locs=np.zeros((samp.size, 1, 0), dtype=np.int64), n_events=out["events"],
        final=[open_state(np.where(fin == 2, 0, fin))], snapshots=proj, colors=out["cols"][:, 0, :],
        occupancy_integral=None if out["integ"] is None else out["integ"][0],
        config=dict(cfg, projected=True))


def coalescence_constant(n: int, r: int, rates: RateParams, seed: int, reps: int = CALIBRATION_REPS,
                         t_max: float = 1e9) -> float:
    """Median coalescence time of the extremal pair divided by ``n`` (seeds ``seed .. seed + reps - 1``)."""
    times = [coalescence_time(n, r, rates, seed + i, t_max) for i in range(reps)]
    return float(np.median(times)) / n


def burnin_horizon(n: int, r: int, rates: RateParams, seed: int) -> float:
    """Default burn-in time ``BURNIN_FACTOR * C * n`` with ``C`` measured on the same sector."""
    return BURNIN_FACTOR * coalescence_constant(n, r, rates, seed) * n


def sample_stationary(n: int, r: int, rates: RateParams, mode: str, seed: int, *, burnin: float | None = None,
                      cap: int | None = None) -> SimState:
    """One configuration from the stationary law of the ``(n, r)`` sector.

    ``exact-small`` samples the brute-force stationary vector; ``mpa`` samples
    ``r = 0`` configurations exactly from matrix products; ``burnin`` runs the
    dynamics from the top extremal state for ``burnin`` time units (default
    ``burnin_horizon``, calibrated with seeds derived from ``seed``) and is
    only approximate.
    """
    rng = np.random.default_rng(seed)
    if mode == "exact-small":
        from . import exact

        gen = exact.build_generator(n, r, rates, cap=cap or exact.SECTOR_CAP)
        pi = exact.stationary(gen)
        return open_state(gen.states[rng.choice(gen.dimension, p=pi)])
    if mode == "mpa":
        if r != 0:
            raise ParameterError("mpa sampling covers the r = 0 sector only")
        from .mpa import representation_for, sample_configurations

        return open_state(sample_configurations(representation_for(rates, n), n, 1, rng)[0])
    if mode == "burnin":
        explicit = burnin is not None
        if burnin is None:
            burnin = burnin_horizon(n, r, rates, int(rng.integers(2**62)))
        if burnin < 0:
            raise ParameterError("burn-in horizon must be nonnegative")
        # callers that pass a horizon have already been told; stay quiet for their replica loops
        (log.info if explicit else log.warning)("burn-in sample (n=%d, r=%d, horizon=%g) is approximate",
                                                n, r, burnin)
        rec = simulate_open(extremal_state(n, r, True), rates, burnin, seed, sample_dt=None)
        return rec.final[0]
    raise ParameterError(f"unknown mode {mode!r}")
