"""Finite-N experiments confronting the asymptotic statements with data.

Each experiment is split in two: a producer that computes raw rows (one per
replica, or one per site for the deterministic matrix-product experiments)
and a summarizer that turns raw rows into a :class:`ScalingReport`.  The
verdicts are therefore a function of the raw rows alone and can be recomputed
from a stored CSV with :func:`report_from_raw`.

Monte Carlo verdicts use normal-approximation 95% intervals.  Replica ``i``
uses seed ``base + i``; independent sub-streams of a replica (burn-in, run)
are derived from that seed with :func:`derive_seed`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import exact, mpa, sim
from .errors import ParameterError, WrongPhaseError
from .phase import (
    BoundaryParams,
    Phase,
    RateParams,
    Region,
    boundary_sigmas,
    boundary_to_rates,
    bulk_profile,
    classify,
    drift_kappa,
    light_mass_split,
    rates_to_boundary,
)

log = logging.getLogger(__name__)

Z95 = 1.959963984540054

_RATE_KEYS = ("alpha", "beta", "gamma", "delta")
_ABCD_KEYS = ("A", "B", "C", "D")

# per-experiment defaults; a config file only needs to override what differs
DEFAULTS = {
    "mass-split": dict(A=0.0, B=0.0, C=0.0, D=0.0, q=0.0, n_list=[50, 100, 200], tol=0.05),
    "concentration": dict(A=2.0, B=0.0, C=0.0, D=0.0, q=0.0, n_list=[50, 100], r=1, replicas=20,
                          horizon=2000.0, window=25, eps=0.1, sample_dt=1.0),
    "uniformity": dict(A=2.0, B=0.0, C=2.0, D=0.0, q=0.0, n_list=[50, 100, 200], tol=0.1),
    "coexistence-profile": dict(A=2.0, B=0.0, C=2.0, D=0.0, q=0.0, n_list=[50, 100, 200], thetas=19,
                                r2_min=0.98, mid_tol=0.05),
    "boundary-density": dict(A=0.0, B=0.0, C=0.0, D=0.0, q=0.0, n_list=[25, 50, 100, 200], tol=0.02),
    "drift": dict(rho=0.75, q=0.0, replicas=100, horizon=1000.0, n_times=8, exp_range=[0.5, 0.85]),
    "hitting": dict(A=2.0, B=0.0, C=0.0, D=0.0, q=0.0, n_list=[64, 128, 256], r=1, replicas=30,
                    horizon=1e7, theta=0.5, max_ratio=3.0),
    "coalescence": dict(A=2.0, B=0.0, C=0.0, D=0.0, q=0.0, n_list=[32, 64, 128], r=1, replicas=100,
                        horizon=1e8, ratio_range=[1.5, 2.5], exact_n=[4], exact_replicas=4000, eps=0.25),
}


def derive_seed(seed: int, *keys: int) -> int:
    """A seed in ``[0, 2^63)`` for the sub-stream ``keys`` of replica seed ``seed``."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass
class ExperimentConfig:
    """Resolved experiment parameters.

    ``params`` holds either jump rates (``q, alpha, beta, gamma, delta``) or
    the ``(A, B, C, D, q)`` parameterization, plus ``rho`` for the drift
    experiment.  ``options`` carries experiment-specific knobs (tolerances,
    windows, grids); see :data:`DEFAULTS`.
    """

    experiment: str
    params: dict = field(default_factory=dict)
    n_list: list = field(default_factory=list)
    r: int = 1
    replicas: int = 1
    horizon: float = 0.0
    seed: int = 0
    output: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in DEFAULTS:
            raise ParameterError(f"unknown experiment {self.experiment!r}; choose from {sorted(DEFAULTS)}")
        self.n_list = [int(n) for n in self.n_list]
        if any(n < 1 for n in self.n_list):
            raise ParameterError("system sizes must be positive")
        if self.r < 0 or self.replicas < 1 or self.horizon < 0:
            raise ParameterError("need r >= 0, replicas >= 1, horizon >= 0")
        if not 0 <= int(self.seed) < 2**63:
            raise ParameterError("seed must lie in [0, 2^63)")
        has_rates = any(k in self.params for k in _RATE_KEYS)
        has_abcd = any(k in self.params for k in _ABCD_KEYS)
        if has_rates and has_abcd:
            raise ParameterError("give either jump rates or A, B, C, D, not both")
        # validates ranges early
        if has_rates or has_abcd:
            self.boundary()

    @classmethod
    def from_mapping(cls, name: str, data: dict | None = None) -> "ExperimentConfig":
        """Build from a flat key-value mapping layered over the experiment defaults."""
        if name not in DEFAULTS:
            raise ParameterError(f"unknown experiment {name!r}; choose from {sorted(DEFAULTS)}")
        data = dict(data or {})
        data.pop("experiment", None)
        flat = dict(DEFAULTS[name])
        if any(k in data for k in _RATE_KEYS):
            for k in _ABCD_KEYS:
                flat.pop(k, None)
        flat.update(data)
        params, options = {}, {}
        kw = {}
        for k, v in flat.items():
            if k in ("n_list", "r", "replicas", "horizon", "seed", "output"):
                kw[k] = v
            elif k in _RATE_KEYS or k in _ABCD_KEYS or k in ("q", "rho"):
                params[k] = float(v)
            else:
                options[k] = v
        if isinstance(kw.get("n_list"), str):
            kw["n_list"] = [int(x) for x in kw["n_list"].split(",") if x.strip()]
        for k, typ in (("r", int), ("replicas", int), ("seed", int), ("horizon", float)):
            if k in kw:
                kw[k] = typ(kw[k])
        return cls(experiment=name, params=params, options=options, **kw)

    def to_dict(self) -> dict:
        """Flat mapping; ``from_mapping(c.experiment, c.to_dict())`` rebuilds the config."""
        out = dict(experiment=self.experiment, n_list=list(self.n_list), r=self.r, replicas=self.replicas,
                   horizon=self.horizon, seed=self.seed, output=self.output)
        out.update(self.params)
        out.update(self.options)
        return out

    def boundary(self) -> BoundaryParams:
        p = self.params
        q = p.get("q", 0.0)
        if any(k in p for k in _RATE_KEYS):
            return rates_to_boundary(self.rates())
        return BoundaryParams(p.get("A", 0.0), p.get("B", 0.0), p.get("C", 0.0), p.get("D", 0.0), q)

    def rates(self) -> RateParams:
        p = self.params
        if any(k in p for k in _RATE_KEYS):
            return RateParams(p.get("q", 0.0), p["alpha"], p["beta"], p.get("gamma", 0.0), p.get("delta", 0.0))
        return boundary_to_rates(self.boundary())

    def opt(self, key: str):
        if key in self.options:
            return self.options[key]
        return DEFAULTS[self.experiment][key]


@dataclass
class ScalingReport:
    """Summary rows, fits and verdicts of one experiment, with its raw rows."""

    experiment: str
    config: dict
    rows: list
    fits: dict
    verdicts: dict
    raw: list

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def summary(self) -> dict:
        """Everything except the raw rows (the content of the summary JSON)."""
        d = asdict(self)
        d.pop("raw")
        d["passed"] = self.passed
        return d


# ---------------------------------------------------------------- statistics


def mean_ci(x) -> tuple[float, float, float, float]:
    """Mean, standard error and normal 95% interval of a sample."""
    x = np.asarray(x, dtype=float)
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf
    return m, se, m - Z95 * se, m + Z95 * se


def _describe(x) -> dict:
    m, se, lo, hi = mean_ci(x)
    q = np.quantile(np.asarray(x, dtype=float), [0.1, 0.25, 0.5, 0.75, 0.9])
    return dict(mean=m, se=se, ci_low=lo, ci_high=hi, q10=float(q[0]), q25=float(q[1]), median=float(q[2]),
                q75=float(q[3]), q90=float(q[4]))


def _linfit(x, y) -> dict:
    res = stats.linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return dict(slope=float(res.slope), intercept=float(res.intercept), slope_se=float(res.stderr),
                slope_ci_low=float(res.slope - Z95 * res.stderr), slope_ci_high=float(res.slope + Z95 * res.stderr),
                r2=float(res.rvalue ** 2))


def _nonincreasing(v, slack: float = 1e-12) -> bool:
    return bool(np.all(np.diff(np.asarray(v, dtype=float)) <= slack))


def _decreasing(v) -> bool:
    return bool(np.all(np.diff(np.asarray(v, dtype=float)) < 0))


def kolmogorov_uniform(p) -> float:
    """Sup distance between the law of ``loc/N`` (``p`` over sites ``1..N``) and the uniform law on [0, 1]."""
    p = np.asarray(p, dtype=float)
    N = p.size
    F = np.cumsum(p)
    x = np.arange(1, N + 1) / N
    F_left = np.concatenate(([0.0], F[:-1]))
    return float(max(np.abs(F - x).max(), np.abs(F_left - x).max()))


def _by_n(raw, key="N"):
    out = {}
    for row in raw:
        out.setdefault(int(row[key]), []).append(row)
    return dict(sorted(out.items()))


def _phase_guard(b: BoundaryParams, phases, what: str, fan: bool = False):
    label = classify(b)
    if label.phase not in phases:
        raise WrongPhaseError(f"{what} needs phase in {[p.value for p in phases]}, got {label.phase.value}")
    if fan and label.region is not Region.FAN:
        raise WrongPhaseError(f"{what} needs the fan region AC < 1, got AC = {b.A * b.C:g}")
    return label


# ---------------------------------------------------------------- producers


def _raw_mass_split(cfg: ExperimentConfig) -> list:
    b = cfg.boundary()
    _phase_guard(b, (Phase.MAX_CURRENT,), "mass split")
    light_mass_split(b)  # raises on AC = 1
    raw = []
    for N in cfg.n_list:
        p = mpa.loc1_distribution(mpa.representation_for(b, N), N)
        raw += [dict(N=N, site=i + 1, prob=float(v)) for i, v in enumerate(p)]
    return raw


def _raw_loc_law(cfg: ExperimentConfig) -> list:
    b = cfg.boundary()
    _phase_guard(b, (Phase.COEXISTENCE,), "uniformity")
    raw = []
    for N in cfg.n_list:
        p = mpa.loc1_distribution(mpa.representation_for(b, N), N)
        raw += [dict(N=N, site=i + 1, prob=float(v)) for i, v in enumerate(p)]
    return raw


def _profile_sites(N: int, k: int) -> np.ndarray:
    th = np.linspace(0.0, 1.0, k + 2)[1:-1]
    return th, np.clip(np.floor(th * N).astype(int), 1, N)


def _raw_profile(cfg: ExperimentConfig) -> list:
    b = cfg.boundary()
    _phase_guard(b, (Phase.COEXISTENCE,), "coexistence profile")
    raw = []
    for N in cfg.n_list:
        d = mpa.site_densities_mpa(mpa.representation_for(b, N), N)
        raw += [dict(N=N, site=i + 1, density=float(v)) for i, v in enumerate(d)]
    return raw


def _raw_boundary(cfg: ExperimentConfig) -> list:
    b = cfg.boundary()
    raw = []
    for N in cfg.n_list:
        rep = mpa.representation_for(b, N)
        raw.append(dict(N=N, left=mpa.site_density_mpa(rep, N, 1), right=mpa.site_density_mpa(rep, N, N)))
    return raw


def _raw_concentration(cfg: ExperimentConfig) -> list:
    b = cfg.boundary()
    _phase_guard(b, (Phase.HIGH_DENSITY, Phase.LOW_DENSITY), "concentration", fan=True)
    rates = cfg.rates()
    r = cfg.r
    if r < 1:
        raise ParameterError("concentration needs r >= 1")
    w = int(cfg.opt("window"))
    ld = classify(b).phase is Phase.LOW_DENSITY
    raw = []
    for N in cfg.n_list:
        burn = sim.burnin_horizon(N, r, rates, derive_seed(cfg.seed, N, 0))
        log.warning("concentration N=%d: burn-in of %g time units gives approximate stationary starts", N, burn)
        for i in range(cfg.replicas):
            s = cfg.seed + i
            init = sim.sample_stationary(N, r, rates, "burnin", derive_seed(s, N, 1), burnin=burn)
            tr = sim.simulate_open(init, rates, cfg.horizon, derive_seed(s, N, 2), float(cfg.opt("sample_dt")))
            locs = tr.loc
            # LD mirror: the lights gather at the right end
            inside = locs[:, 0] >= N - w + 1 if ld else locs[:, -1] <= w
            raw.append(dict(N=N, replica=i, seed=s, burnin=burn, samples=int(inside.size),
                            mass=float(inside.mean())))
    return raw


def _raw_drift(cfg: ExperimentConfig) -> list:
    rho = cfg.params.get("rho")
    q = cfg.params.get("q", 0.0)
    if rho is None or not 0.0 < rho < 1.0:
        raise ParameterError("drift needs rho in (0, 1)")
    T = cfg.horizon
    L = int(math.ceil(sim.window_margin(T))) + 1
    times = drift_times(T, int(cfg.opt("n_times")))
    raw = []
    for i in range(cfg.replicas):
        s = cfg.seed + i
        init = sim.window_state(L, rho, np.random.default_rng(derive_seed(s, 1)), {0: 2})
        tr = sim.simulate_window(init, rho, q, T, derive_seed(s, 2), sample_times=times)
        z = tr.locs[:, 0, 0]
        raw += [dict(replica=i, seed=s, t=float(t), Z=int(v)) for t, v in zip(times, z)]
    return raw


def drift_times(T: float, k: int) -> np.ndarray:
    """``k`` log-spaced sample times ending at ``T`` (ratio 2 between neighbors)."""
    return T * 2.0 ** -np.arange(k - 1, -1, -1, dtype=float)


def _hitting_thresholds(N: int, theta: float) -> tuple[int, int]:
    nt = N ** theta
    return int(math.floor(N - nt)), int(math.floor(nt))


def _raw_hitting(cfg: ExperimentConfig) -> list:
    b = cfg.boundary()
    _phase_guard(b, (Phase.HIGH_DENSITY,), "hitting", fan=True)
    rates = cfg.rates()
    theta = float(cfg.opt("theta"))
    raw = []
    for N in cfg.n_list:
        esc, trav = _hitting_thresholds(N, theta)
        init = sim.extremal_state(N, cfg.r, False)
        for i in range(cfg.replicas):
            s = cfg.seed + i
            t_esc, t_trav = sim.hitting_times(init, rates, [esc, trav], derive_seed(s, N), cfg.horizon)
            raw.append(dict(N=N, replica=i, seed=s, t_escape=float(t_esc), t_traverse=float(t_trav)))
    return raw


def _raw_coalescence(cfg: ExperimentConfig) -> list:
    b = cfg.boundary()
    _phase_guard(b, (Phase.HIGH_DENSITY, Phase.LOW_DENSITY), "coalescence", fan=True)
    rates = cfg.rates()
    raw = []
    small = [int(n) for n in cfg.opt("exact_n")]
    for N in cfg.n_list:
        for i in range(cfg.replicas):
            s = cfg.seed + i
            raw.append(dict(N=N, replica=i, seed=s, kind="scaling",
                            t_coal=sim.coalescence_time(N, cfg.r, rates, derive_seed(s, N), cfg.horizon)))
    for n in small:
        for i in range(int(cfg.opt("exact_replicas"))):
            s = cfg.seed + i
            raw.append(dict(N=n, replica=i, seed=s, kind="exact",
                            t_coal=sim.coalescence_time(n, cfg.r, rates, derive_seed(s, n, 1), cfg.horizon)))
    return raw


# ---------------------------------------------------------------- summarizers


def _sum_mass_split(cfg, raw):
    b = cfg.boundary()
    left_t, right_t = light_mass_split(b)
    rows = []
    for N, rr in _by_n(raw).items():
        p = np.array([float(x["prob"]) for x in sorted(rr, key=lambda x: int(x["site"]))])
        a = math.isqrt(N)
        bN = N - a
        # [1, a], (a, b), [b, N]: a partition, so the three masses sum to one
        left, mid, right = p[:a].sum(), p[a:bN - 1].sum(), p[bN - 1:].sum()
        rows.append(dict(N=N, a_N=a, b_N=bN, left=float(left), middle=float(mid), right=float(right),
                         left_target=left_t, right_target=right_t, left_dev=abs(left - left_t),
                         right_dev=abs(right - right_t)))
    tol = float(cfg.opt("tol"))
    last = rows[-1]
    verdicts = dict(
        middle_decreasing=_decreasing([r["middle"] for r in rows]),
        deviation_nonincreasing=_nonincreasing([r["left_dev"] for r in rows])
        and _nonincreasing([r["right_dev"] for r in rows]),
        terminal_within_tol=bool(last["left_dev"] <= tol and last["right_dev"] <= tol),
    )
    return rows, {}, verdicts


def _sum_uniformity(cfg, raw):
    rows = []
    for N, rr in _by_n(raw).items():
        p = np.array([float(x["prob"]) for x in sorted(rr, key=lambda x: int(x["site"]))])
        rows.append(dict(N=N, kolmogorov=kolmogorov_uniform(p), mass=float(p.sum())))
    d = [r["kolmogorov"] for r in rows]
    verdicts = dict(distance_decreasing=_decreasing(d), terminal_within_tol=bool(d[-1] <= float(cfg.opt("tol"))))
    return rows, {}, verdicts


def _sum_profile(cfg, raw):
    b = cfg.boundary()
    A = b.A
    rows = []
    for N, rr in _by_n(raw).items():
        d = np.array([float(x["density"]) for x in sorted(rr, key=lambda x: int(x["site"]))])
        th, sites = _profile_sites(N, int(cfg.opt("thetas")))
        dens = d[sites - 1]
        target = np.array([bulk_profile(b, t) for t in th])
        fit = _linfit(th, dens)
        mid = d[max(1, N // 2) - 1]
        rows.append(dict(N=N, sup_dev=float(np.abs(dens - target).max()), r2=fit["r2"], slope=fit["slope"],
                         midpoint=float(mid), left_end=float(d[0]), right_end=float(d[-1]),
                         left_end_dev=abs(float(d[0]) - 1.0 / (1.0 + A)),
                         right_end_dev=abs(float(d[-1]) - A / (1.0 + A))))
    last = rows[-1]
    verdicts = dict(
        deviation_decreasing=_decreasing([r["sup_dev"] for r in rows]),
        linear_fit=bool(last["r2"] >= float(cfg.opt("r2_min"))),
        midpoint=bool(abs(last["midpoint"] - 0.5) <= float(cfg.opt("mid_tol"))),
    )
    return rows, {}, verdicts


def _sum_boundary(cfg, raw):
    b = cfg.boundary()
    sl, sr = boundary_sigmas(b)
    rows = []
    for row in sorted(raw, key=lambda x: int(x["N"])):
        l, r = float(row["left"]), float(row["right"])
        rows.append(dict(N=int(row["N"]), left=l, right=r, sigma_left=sl, sigma_right=sr,
                         left_dev=abs(l - sl), right_dev=abs(r - sr)))
    tol = float(cfg.opt("tol"))
    verdicts = dict(
        left_nonincreasing=_nonincreasing([r["left_dev"] for r in rows]),
        right_nonincreasing=_nonincreasing([r["right_dev"] for r in rows]),
        terminal_within_tol=bool(rows[-1]["left_dev"] <= tol and rows[-1]["right_dev"] <= tol),
    )
    return rows, {}, verdicts


def _sum_concentration(cfg, raw):
    b = cfg.boundary()
    eps = float(cfg.opt("eps"))
    w = int(cfg.opt("window"))
    rows, verdicts = [], {}
    for N, rr in _by_n(raw).items():
        row = dict(N=N, window=w, replicas=len(rr), **_describe([float(x["mass"]) for x in rr]))
        verdicts[f"mass_N{N}"] = bool(row["ci_low"] >= 1.0 - eps)
        if cfg.r == 1 and classify(b).region is Region.FAN and mpa.guard_nonzero(b):
            p = mpa.loc1_distribution(mpa.representation_for(b, N), N)
            ref = float(p[N - w:].sum() if classify(b).phase is Phase.LOW_DENSITY else p[:w].sum())
            row["mpa_mass"] = ref
            # positively correlated samples never beat the binomial error of all
            # samples pooled, which keeps the band honest when every replica reads 1
            n_tot = sum(int(x["samples"]) for x in rr)
            se = max(row["se"], math.sqrt(ref * (1.0 - ref) / n_tot))
            row["mpa_se"] = se
            verdicts[f"mpa_consistent_N{N}"] = bool(abs(row["mean"] - ref) <= 3.0 * se)
        rows.append(row)
    return rows, {}, verdicts


def _sum_drift(cfg, raw):
    rho, q = cfg.params["rho"], cfg.params.get("q", 0.0)
    kappa = drift_kappa(rho, q)
    by_t = {}
    for row in raw:
        by_t.setdefault(float(row["t"]), []).append(float(row["Z"]))
    rows = []
    for t, z in sorted(by_t.items()):
        z = np.asarray(z)
        m, se, lo, hi = mean_ci(z / t)
        rows.append(dict(t=t, replicas=z.size, mean_Z=float(z.mean()), var_Z=float(z.var(ddof=1)),
                         speed=m, speed_se=se, speed_ci_low=lo, speed_ci_high=hi, kappa=kappa))
    ts = np.array([r["t"] for r in rows])
    sd = np.sqrt([r["var_Z"] for r in rows])
    ok = sd > 0
    fit = _linfit(np.log(ts[ok]), np.log(sd[ok])) if ok.sum() >= 3 else dict(slope=math.nan, slope_ci_low=math.nan,
                                                                            slope_ci_high=math.nan)
    last = rows[-1]
    lo, hi = (float(x) for x in cfg.opt("exp_range"))
    verdicts = dict(
        speed_ci_contains_kappa=bool(last["speed_ci_low"] <= kappa <= last["speed_ci_high"]),
        exponent_in_range=bool(lo <= fit["slope"] <= hi),
    )
    return rows, dict(fluctuation_exponent=fit), verdicts


def _sum_hitting(cfg, raw):
    theta = float(cfg.opt("theta"))
    rows = []
    for N, rr in _by_n(raw).items():
        te = np.array([float(x["t_escape"]) for x in rr])
        tt = np.array([float(x["t_traverse"]) for x in rr])
        esc, trav = _hitting_thresholds(N, theta)
        rows.append(dict(N=N, escape_threshold=esc, traverse_threshold=trav,
                         median_escape=float(np.median(te)), median_traverse=float(np.median(tt)),
                         escape_scaled=float(np.median(te)) / (N ** theta * math.log(N)),
                         traverse_scaled=float(np.median(tt)) / N, all_hit=bool(np.all(np.isfinite(tt)))))
    mr = float(cfg.opt("max_ratio"))

    def bounded(v):
        v = np.asarray(v)
        return bool(np.all(np.isfinite(v)) and v.min() > 0 and v.max() / v.min() <= mr)

    verdicts = dict(
        escape_bounded=bounded([r["escape_scaled"] for r in rows]),
        traverse_bounded=bounded([r["traverse_scaled"] for r in rows]),
        escape_before_traverse=bool(all(r["median_escape"] <= r["median_traverse"] for r in rows)),
    )
    return rows, {}, verdicts


def _sum_coalescence(cfg, raw):
    rates = cfg.rates()
    scaling = [x for x in raw if x["kind"] == "scaling"]
    rows = []
    xs, ys = [], []
    for N, rr in _by_n(scaling).items():
        t = np.array([float(x["t_coal"]) for x in rr])
        rows.append(dict(N=N, kind="scaling", replicas=t.size, **_describe(t)))
        xs += [N] * t.size
        ys += list(t)
    fits = dict(linear=_linfit(xs, ys)) if len(set(xs)) >= 2 else {}
    lo, hi = (float(x) for x in cfg.opt("ratio_range"))
    ratios = []
    med = {r["N"]: r["median"] for r in rows}
    for N in med:
        if 2 * N in med:
            ratios.append(med[2 * N] / med[N])
    fits["doubling_ratios"] = ratios
    verdicts = dict(
        slope_positive=bool(fits.get("linear", {}).get("slope_ci_low", -1.0) > 0),
        ratios_in_range=bool(ratios and all(lo <= x <= hi for x in ratios)),
    )
    eps = float(cfg.opt("eps"))
    for n, rr in _by_n([x for x in raw if x["kind"] == "exact"]).items():
        t = np.array([float(x["t_coal"]) for x in rr])
        tmix = exact.mixing_time_exact(n, cfg.r, rates, eps)
        tmix_half = exact.mixing_time_exact(n, cfg.r, rates, 2 * eps) if 2 * eps < 1 else math.nan
        d = _describe(t)
        rows.append(dict(N=n, kind="exact", replicas=t.size, t_mix=tmix, t_mix_2eps=tmix_half, **d))
        verdicts[f"tmix_le_median_n{n}"] = bool(tmix <= d["median"])
        # what the coupling inequality guarantees: P(T > t_mix) >= eps at most is the (1-eps) quantile
        fits[f"tmix_le_quantile_n{n}"] = bool(tmix <= float(np.quantile(t, 1.0 - eps)))
    return rows, fits, verdicts


_EXPERIMENTS = {
    "mass-split": (_raw_mass_split, _sum_mass_split),
    "concentration": (_raw_concentration, _sum_concentration),
    "uniformity": (_raw_loc_law, _sum_uniformity),
    "coexistence-profile": (_raw_profile, _sum_profile),
    "boundary-density": (_raw_boundary, _sum_boundary),
    "drift": (_raw_drift, _sum_drift),
    "hitting": (_raw_hitting, _sum_hitting),
    "coalescence": (_raw_coalescence, _sum_coalescence),
}

EXPERIMENT_NAMES = tuple(_EXPERIMENTS)


def report_from_raw(cfg: ExperimentConfig, raw: list) -> ScalingReport:
    """Summaries and verdicts recomputed from raw rows (e.g. parsed back from CSV)."""
    if not raw:
        raise ParameterError("no raw rows to summarize")
    rows, fits, verdicts = _EXPERIMENTS[cfg.experiment][1](cfg, raw)
    return ScalingReport(cfg.experiment, cfg.to_dict(), _plain(rows), _plain(fits), _plain(verdicts), list(raw))


def _plain(x):
    # numpy scalars -> Python scalars, so reports serialize and compare cleanly
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def run_experiment(cfg: ExperimentConfig) -> ScalingReport:
    raw = _EXPERIMENTS[cfg.experiment][0](cfg)
    return report_from_raw(cfg, raw)


def exp_mass_split(config: ExperimentConfig) -> ScalingReport:
    return run_experiment(_named(config, "mass-split"))


def exp_concentration(config: ExperimentConfig) -> ScalingReport:
    return run_experiment(_named(config, "concentration"))


def exp_uniformity(config: ExperimentConfig) -> ScalingReport:
    return run_experiment(_named(config, "uniformity"))


def exp_coexistence_profile(config: ExperimentConfig) -> ScalingReport:
    return run_experiment(_named(config, "coexistence-profile"))


def exp_boundary_density(config: ExperimentConfig) -> ScalingReport:
    return run_experiment(_named(config, "boundary-density"))


def exp_drift(config: ExperimentConfig) -> ScalingReport:
    return run_experiment(_named(config, "drift"))


def exp_hitting(config: ExperimentConfig) -> ScalingReport:
    return run_experiment(_named(config, "hitting"))


def exp_coalescence(config: ExperimentConfig) -> ScalingReport:
    return run_experiment(_named(config, "coalescence"))


def _named(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    if cfg.experiment != name:
        raise ParameterError(f"config is for {cfg.experiment!r}, not {name!r}")
    return cfg


def calibrate_burnin(n_list, r: int, rates: RateParams, seed: int, reps: int = sim.CALIBRATION_REPS) -> list:
    """Coalescence constant ``C`` (median coalescence time per site) for each size.

    ``sim.burnin_horizon`` uses the same measurement for its default horizon;
    this table shows how ``C`` drifts with ``n`` for a parameter set.
    """
    out = []
    for n in n_list:
        c = sim.coalescence_constant(int(n), r, rates, derive_seed(seed, int(n)), reps)
        out.append(dict(N=int(n), C=c, horizon=sim.BURNIN_FACTOR * c * int(n)))
    return out
