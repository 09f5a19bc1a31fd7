"""The primary acceptance suite: thirteen numbered checks with fixed tolerances.

Each ``criterion_k(seed)`` returns a :class:`CriterionResult`; :func:`run_all`
runs a selection and optionally prints one ``PASS``/``FAIL`` line per check.
Random parameter draws come from ``numpy.random.default_rng(derive_seed(seed, k))``.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import exact, experiments, mpa, sim
from .errors import GuardError
from .experiments import ExperimentConfig, derive_seed
from .phase import BoundaryParams, Phase, Region, boundary_sigmas, boundary_to_rates, classify

RELATION_TOL = 1e-9
EQUIV_TOL = 1e-9
DEHP_TOL = 1e-10
AW_TOL = 1e-10
BERNOULLI_TOL = 1e-9

DRAW_PHASES = (Phase.MAX_CURRENT, Phase.HIGH_DENSITY, Phase.LOW_DENSITY, Phase.COEXISTENCE)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    COLUMNS = ("number", "name", "passed", "detail", "seconds")

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in self.COLUMNS}

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


# ---------------------------------------------------------------- parameter draws


def draw_boundary(phase: Phase, rng: np.random.Generator, q_max: float = 0.8, region: Region | None = None) -> BoundaryParams:
    """Random ``(A, B, C, D, q)`` in ``phase`` (optionally restricted to a fan/shock region)."""
    for _ in range(1000):
        q = float(rng.uniform(0.0, q_max))
        B, D = (float(x) for x in -rng.uniform(0.0, 0.8, 2))
        if phase is Phase.MAX_CURRENT:
            A, C = (float(x) for x in rng.uniform(0.0, 0.95, 2))
        elif phase is Phase.COEXISTENCE:
            A = C = float(rng.uniform(1.1, 4.0))
        else:
            hi = float(rng.uniform(1.1, 4.0))
            lo = float(rng.uniform(0.0, hi - 0.1))
            A, C = (hi, lo) if phase is Phase.HIGH_DENSITY else (lo, hi)
        b = BoundaryParams(A, B, C, D, q)
        lab = classify(b)
        if lab.phase is phase and (region is None or lab.region is region) and abs(A * C - 1.0) > 0.05:
            return b
    raise RuntimeError(f"could not draw parameters in {phase.value}")


def _timed(number: int, name: str, fn, seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    passed, detail = fn(np.random.default_rng(derive_seed(seed, number)), seed)
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - t0)


# ---------------------------------------------------------------- exact identities


def _c1(rng, seed):
    worst, used, skipped = 0.0, 0, 0
    for phase in DRAW_PHASES:
        got = 0
        while got < 20:
            rates = boundary_to_rates(draw_boundary(phase, rng))
            n = int(rng.integers(2, 7))
            try:
                res = exact.verify_simple_relation(n, rates)
            except GuardError:
                skipped += 1
                continue
            worst = max(worst, res)
            got += 1
        used += got
    return worst <= RELATION_TOL, f"max residual {worst:.2e} over {used} draws ({skipped} guard skips), tol {RELATION_TOL:g}"


def _c2(rng, seed):
    worst = {"config": 0.0, "density": 0.0, "loc1_direct": 0.0, "loc1_relation": 0.0}
    count = 0
    for region in (Region.FAN, Region.SHOCK):
        for phase in DRAW_PHASES:
            if (region is Region.FAN and phase is Phase.COEXISTENCE) or (
                    region is Region.SHOCK and phase is Phase.MAX_CURRENT):
                continue
            for j in range(20):
                n = 2 + j % 6
                b = draw_boundary(phase, rng, region=region)
                rates = boundary_to_rates(b)
                g0 = exact.build_generator(n, 0, rates)
                pi0 = exact.stationary(g0)
                rep = mpa.representation_for(b, n + 1)
                for s, p in zip(g0.states, pi0):
                    worst["config"] = max(worst["config"], abs(mpa.config_probability(rep, s) - p))
                dens = exact.site_densities(g0, pi0)
                worst["density"] = max(worst["density"], float(np.abs(mpa.site_densities_mpa(rep, n) - dens).max()))
                g1 = exact.build_generator(n, 1, rates)
                loc = exact.loc_marginals(g1, exact.stationary(g1))[0]
                for via in ("direct", "relation"):
                    d = float(np.abs(mpa.loc1_distribution(rep, n, via=via) - loc).max())
                    worst[f"loc1_{via}"] = max(worst[f"loc1_{via}"], d)
                count += 1
    top = max(worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    return top <= EQUIV_TOL, f"{count} draws; max residuals {detail}"


def _c3(rng, seed):
    # draws near a guard have entries in the thousands, where double rounding of
    # the residual itself exceeds the tolerance; those are re-checked at 34 digits
    worst, worst_double, escalated = 0.0, 0.0, 0
    for i in range(50):
        b = draw_boundary(DRAW_PHASES[i % 4], rng)
        res = max(mpa.verify_dehp(mpa.build_representation(b, 20)))
        worst_double = max(worst_double, res)
        if res > DEHP_TOL:
            escalated += 1
            res = max(mpa.verify_dehp(mpa.build_representation(b, 20, "high")))
        worst = max(worst, res)
    return worst <= DEHP_TOL, (f"max block residual {worst:.2e} over 50 draws at M=20 "
                               f"(double precision worst {worst_double:.1e}; {escalated} draws re-checked at 34 digits)")


def _c4(rng, seed):
    spread, err = 0.0, 0.0
    for phase, ts in ((Phase.MAX_CURRENT, (0.2, 0.5, 0.9)), (Phase.HIGH_DENSITY, (0.99, 0.995))):
        for _ in range(30):
            b = draw_boundary(phase, rng)
            if phase is Phase.HIGH_DENSITY:
                # the recovered density needs A sqrt(t) > 1 for every t used
                while b.A * math.sqrt(min(ts)) <= 1.0 + 1e-3:
                    b = draw_boundary(phase, rng)
            vals = np.array([mpa.sigma_left_via_aw(b, t) for t in ts])
            spread = max(spread, float(vals.max() - vals.min()))
            err = max(err, float(np.abs(vals - boundary_sigmas(b)[0]).max()))
    ok = spread <= AW_TOL and err <= AW_TOL
    return ok, f"t-spread {spread:.1e}, closed-form error {err:.1e} (tol {AW_TOL:g})"


def _c5(rng, seed):
    worst_exact, worst_mpa = 0.0, 0.0
    for i in range(10):
        C = float(np.exp(rng.uniform(-1.2, 1.2)))
        b = BoundaryParams(1.0 / C, float(-rng.uniform(0, 0.8)), C, float(-rng.uniform(0, 0.8)), float(rng.uniform(0, 0.8)))
        target = 1.0 / (1.0 + C)
        n = 2 + i % 6
        g = exact.build_generator(n, 0, boundary_to_rates(b))
        d = exact.site_densities(g, exact.stationary(g))
        worst_exact = max(worst_exact, float(np.abs(d - target).max()))
        d = mpa.site_densities_mpa(mpa.representation_for(b, 100), 100)
        worst_mpa = max(worst_mpa, float(np.abs(d - target).max()))
    ok = max(worst_exact, worst_mpa) <= BERNOULLI_TOL
    return ok, f"max |density - 1/(1+C)|: exact n<=7 {worst_exact:.1e}, matrix product N=100 {worst_mpa:.1e}"


# ---------------------------------------------------------------- finite-N trends


BOUNDARY_SETS = {
    "MC": dict(A=0.0, B=0.0, C=0.0, D=0.0, q=0.0),
    "HD": dict(A=2.0, B=-0.1, C=0.5, D=-0.2, q=0.4),
    "LD": dict(A=0.5, B=-0.2, C=2.0, D=-0.1, q=0.4),
}

MASS_SPLIT_SETS = {
    "symmetric": dict(A=0.0, B=0.0, C=0.0, D=0.0, q=0.0),
    "asymmetric": dict(A=0.0, B=0.0, C=0.5, D=0.0, q=0.0),
}


def _c6(rng, seed):
    ok, parts = True, []
    for name, p in BOUNDARY_SETS.items():
        rep = experiments.run_experiment(ExperimentConfig.from_mapping("boundary-density", dict(p, seed=seed)))
        last = rep.rows[-1]
        ok &= rep.passed
        parts.append(f"{name}: |dev| at N=200 {max(last['left_dev'], last['right_dev']):.4f} "
                     f"({'ok' if rep.passed else 'no'})")
    return ok, "; ".join(parts)


def _c7(rng, seed):
    ok, parts = True, []
    for name, p in MASS_SPLIT_SETS.items():
        rep = experiments.run_experiment(ExperimentConfig.from_mapping("mass-split", dict(p, seed=seed)))
        passed = rep.verdicts["middle_decreasing"] and rep.verdicts["terminal_within_tol"]
        ok &= passed
        last = rep.rows[-1]
        mids = "/".join(f"{r['middle']:.3f}" for r in rep.rows)
        parts.append(f"{name}: middle {mids}, terminal left {last['left']:.3f} vs {last['left_target']:.3f}, "
                     f"right {last['right']:.3f} vs {last['right_target']:.3f}")
    return ok, "; ".join(parts)


def _c8(rng, seed):
    rep = experiments.run_experiment(ExperimentConfig.from_mapping("uniformity", dict(seed=seed)))
    ks = "/".join(f"{r['kolmogorov']:.4f}" for r in rep.rows)
    return rep.passed, f"Kolmogorov distance over N=50/100/200: {ks}"


def _c9(rng, seed):
    ok, parts = True, []
    for r in (1, 2):
        cfg = ExperimentConfig.from_mapping("concentration", dict(n_list=[100], r=r, replicas=40, horizon=2000.0,
                                                                  seed=derive_seed(seed, 9, r)))
        rep = experiments.run_experiment(cfg)
        row = rep.rows[0]
        good = rep.verdicts["mass_N100"]
        ok &= good
        parts.append(f"r={r}: mass {row['mean']:.4f}, 95% CI low {row['ci_low']:.4f}")
    return ok, "; ".join(parts)


def _c10(rng, seed):
    ok, parts = True, []
    for rho, q in ((0.75, 0.0), (2.0 / 3.0, 0.5)):
        cfg = ExperimentConfig.from_mapping("drift", dict(rho=rho, q=q, replicas=500, horizon=1000.0,
                                                          seed=derive_seed(seed, 10, int(q * 10))))
        rep = experiments.run_experiment(cfg)
        last = rep.rows[-1]
        good = rep.verdicts["speed_ci_contains_kappa"]
        ok &= good
        parts.append(f"(rho,q)=({rho:.3f},{q}): speed CI [{last['speed_ci_low']:.4f}, {last['speed_ci_high']:.4f}] "
                     f"vs kappa {last['kappa']:.4f}")
    return ok, "; ".join(parts)


def _c11(rng, seed):
    cfg = ExperimentConfig.from_mapping("coalescence", dict(replicas=200, exact_n=[4], exact_replicas=4000,
                                                            seed=derive_seed(seed, 11)))
    rep = experiments.run_experiment(cfg)
    ok = rep.verdicts["ratios_in_range"] and rep.verdicts["tmix_le_median_n4"]
    ex = [r for r in rep.rows if r["kind"] == "exact"][0]
    ratios = "/".join(f"{x:.3f}" for x in rep.fits["doubling_ratios"])
    return ok, f"doubling ratios {ratios}; n=4 t_mix {ex['t_mix']:.3f} vs median coalescence {ex['median']:.3f}"


# ---------------------------------------------------------------- coupling invariants


def _c12(rng, seed):
    order_viol, n_traj = 0, 0
    for i in range(1000):
        n = int(rng.integers(4, 30))
        b = draw_boundary(DRAW_PHASES[i % 4], rng)
        rates = boundary_to_rates(b)
        hi = (rng.random(n) < 0.6).astype(np.int8)
        lo = hi * (rng.random(n) < 0.5).astype(np.int8)
        pair = sim.couple(sim.open_state(hi), sim.open_state(lo), derive_seed(seed, 12, 0, i), 30.0, rates,
                          check_order=True)
        order_viol += pair.violations["order"]
        n_traj += 1
    pos_viol, n_pairs, sides = 0, 0, {"rightmost": 0, "leftmost": 0}
    L = 15
    while n_pairs < 1000:
        zeta = (rng.random(2 * L + 1) < rng.uniform(0.2, 0.8)).astype(np.int8)
        cut = int(rng.integers(-L + 3, L - 2))
        left_cells = np.arange(-L + 1, cut + 1)
        right_cells = np.arange(cut + 1, L)
        k1 = int(rng.integers(1, 4))
        k2 = int(rng.integers(k1, k1 + 3))
        if n_pairs % 2 == 0:
            if k1 > left_cells.size or k2 > right_cells.size:
                continue
            S = rng.choice(left_cells, k1, replace=False)
            Sp = rng.choice(right_cells, k2, replace=False)
        else:
            if k1 > right_cells.size or k2 > left_cells.size:
                continue
            S = rng.choice(right_cells, k1, replace=False)
            Sp = rng.choice(left_cells, k2, replace=False)
        res = sim.pair_ordering_check(zeta, S.tolist(), Sp.tolist(), float(rng.uniform(0, 0.9)), 10.0,
                                      derive_seed(seed, 12, 1, n_pairs))
        if not res["hypothesis"]:
            continue
        pos_viol += res["violations"]
        sides[res["side"]] += 1
        n_pairs += 1
    ok = order_viol == 0 and pos_viol == 0
    return ok, (f"{order_viol} order violations over {n_traj} coupled trajectories; {pos_viol} position violations "
                f"over {n_pairs} pairs ({sides['rightmost']} left-of, {sides['leftmost']} right-of)")


def _c13(rng, seed):
    from .cli import run

    commands = [
        ["simulate", "--n", "30", "--r", "2", "--t", "50", "--seed", str(seed), "--reps", "3", "--snapshots",
         "--q", "0.3", "--alpha", "0.7", "--beta", "0.6", "--gamma", "0.1", "--delta", "0.05"],
        ["simulate", "--n", "60", "--r", "1", "--t", "20", "--seed", str(seed), "--init", "stationary",
         "--A", "2", "--C", "0.5"],
        ["experiment", "drift", "--seed", str(seed)],
    ]
    mismatched = []
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "drift.json"
        cfg.write_text('{"replicas": 20, "horizon": 100}')
        commands[2] += ["--config", str(cfg)]
        for j, argv in enumerate(commands):
            digests = []
            for rep in range(2):
                out = Path(tmp) / f"c{j}-{rep}"
                code = run(["--outdir", str(out)] + argv)
                if code not in (0, 1):
                    return False, f"command {' '.join(argv[:2])} exited {code}"
                files = sorted(p for p in out.iterdir() if not p.name.endswith(".manifest.json"))
                digests.append({p.name: p.read_bytes() for p in files})
            if digests[0] != digests[1] or not digests[0]:
                mismatched.append(" ".join(argv[:2]))
    return not mismatched, (f"{len(commands)} commands rerun, data files byte-identical" if not mismatched
                            else f"outputs differ for {mismatched}")


CRITERIA = {
    1: ("light location identity, brute force", _c1),
    2: ("matrix product vs brute force", _c2),
    3: ("algebra residuals M=20", _c3),
    4: ("Askey-Wilson boundary density", _c4),
    5: ("Bernoulli line AC=1", _c5),
    6: ("boundary densities vs N", _c6),
    7: ("light mass split", _c7),
    8: ("light location uniform on coexistence line", _c8),
    9: ("light concentration near the left end", _c9),
    10: ("second class particle drift", _c10),
    11: ("linear coalescence time", _c11),
    12: ("coupling invariants", _c12),
    13: ("determinism", _c13),
}


def criterion(number: int, seed: int = 42) -> CriterionResult:
    name, fn = CRITERIA[number]
    return _timed(number, name, fn, seed)


def run_all(seed: int = 42, only=None, echo: bool = False) -> list:
    out = []
    for k in sorted(CRITERIA):
        if only and k not in only:
            continue
        res = criterion(k, seed)
        if echo:
            print(res.line(), flush=True)
        out.append(res)
    return out
