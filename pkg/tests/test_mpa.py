import math

import mpmath
import numpy as np
import pytest
from scipy import stats

from lightasep import exact, mpa
from lightasep.errors import GuardError, ParameterError, WrongPhaseError
from lightasep.phase import BoundaryParams, RateParams, boundary_sigmas, boundary_to_rates, rates_to_boundary

from conftest import random_boundary

PHASES = ("MC", "HD", "LD", "CO")


def raw_coefficients(A, B, C, D, q, M, dps=50):
    """The recurrence coefficients as printed, evaluated at ``dps`` digits (needs A > 0, q > 0)."""
    with mpmath.workdps(dps):
        A, B, C, D, q = (mpmath.mpf(x) for x in (A, B, C, D, q))
        s = mpmath.sqrt(1 - q)
        X = A * B * C * D
        out = {k: [] for k in ("alpha", "beta", "gamma", "delta", "eps", "phi")}
        for m in range(M + 1):
            beta = (1 - X * q ** (m - 1)) / (s * (1 - X * q ** (2 * m)) * (1 - X * q ** (2 * m - 1)))
            alpha = -A * B * q ** m * beta
            eps = ((1 - q ** m) * (1 - A * C * q ** (m - 1)) * (1 - A * D * q ** (m - 1)) * (1 - B * C * q ** (m - 1))
                   * (1 - B * D * q ** (m - 1))) / (s * (1 - X * q ** (2 * m - 2)) * (1 - X * q ** (2 * m - 1)))
            phi = -C * D * q ** (m - 1) * eps
            den = (1 - A * C * q ** (m - 1)) * (1 - A * D * q ** (m - 1))
            gamma = A / s - alpha / A * (1 - A * C * q ** m) * (1 - A * D * q ** m) - A * eps / den
            delta = 1 / (A * s) - beta / A * (1 - A * C * q ** m) * (1 - A * D * q ** m) - A * phi / den
            for k, v in zip(out, (alpha, beta, gamma, delta, eps, phi)):
                out[k].append(float(v))
    return {k: np.array(v) for k, v in out.items()}


def _coeffs(b, M, precision="double"):
    c = mpa.aw_coefficients(b, M, precision)
    return {k: np.array([float(x) for x in getattr(c, k)]) for k in ("alpha", "beta", "gamma", "delta", "eps", "phi")}


def test_coefficient_identities(rng):
    for ph in PHASES:
        for _ in range(10):
            b = random_boundary(rng, ph)
            c = _coeffs(b, 20)
            m = np.arange(21)
            assert c["alpha"] == pytest.approx(-b.A * b.B * b.q ** m * c["beta"], rel=1e-13, abs=1e-300)
            assert c["phi"][1:] == pytest.approx(-b.C * b.D * b.q ** (m[1:] - 1) * c["eps"][1:], rel=1e-13, abs=1e-300)
            assert c["eps"][0] == 0


def test_coefficients_match_printed_formulas(rng):
    for ph in PHASES:
        for _ in range(5):
            b = random_boundary(rng, ph)
            if b.A < 0.05 or b.q < 0.05:
                continue
            c, ref = _coeffs(b, 15), raw_coefficients(b.A, b.B, b.C, b.D, b.q, 15)
            for k in c:
                scale = max(1.0, np.abs(ref[k]).max())
                assert np.abs(c[k] - ref[k]).max() <= 1e-9 * scale, k


@pytest.mark.parametrize("B, C, D, q", [(0, 0, 0, 0.3), (-0.3, 0.6, -0.2, 0.5), (-0.5, 2.0, -0.4, 0.2)])
def test_a_zero_is_the_continuous_limit(B, C, D, q):
    c0 = _coeffs(BoundaryParams(0.0, B, C, D, q), 12)
    ref = raw_coefficients(1e-6, B, C, D, q, 12)
    for k in c0:
        assert np.abs(c0[k] - ref[k]).max() <= 1e-5, k


def test_q_zero_is_the_continuous_limit():
    b0 = BoundaryParams(0.4, -0.2, 0.7, -0.3, 0.0)
    c0 = _coeffs(b0, 10)
    ref = raw_coefficients(0.4, -0.2, 0.7, -0.3, 1e-7, 10)
    for k in c0:
        assert np.abs(c0[k] - ref[k]).max() <= 1e-5, k


def test_all_zero_parameters():
    c = _coeffs(BoundaryParams(0, 0, 0, 0, 0), 6)
    assert c["beta"] == pytest.approx(np.ones(7))
    assert c["eps"] == pytest.approx(np.r_[0, np.ones(6)])
    assert c["gamma"][0] == 0


def test_guard_error_names_the_factor():
    with pytest.raises(GuardError, match="ABCD"):
        mpa.build_representation(BoundaryParams(2, -0.5, 2, -0.5, 0.0), 8)
    with pytest.raises(ParameterError):
        mpa.build_representation(BoundaryParams(0, 0, 0, 0, 0), 1)
    with pytest.raises(ParameterError):
        mpa.build_representation(BoundaryParams(0, 0, 0, 0, 0), 5, precision="quad")


def test_representation_shape():
    rep = mpa.build_representation(BoundaryParams(0.5, -0.1, 0.3, -0.2, 0.4), 8)
    assert np.dot(rep.W, rep.V) == 1
    for T in (rep.D.dense(), rep.E.dense()):
        assert np.all(np.triu(T, 2) == 0) and np.all(np.tril(T, -2) == 0)


def test_dehp_simple():
    rep = mpa.build_representation(rates_to_boundary(RateParams(0, 1, 1)), 10)
    assert max(mpa.verify_dehp(rep)) <= 1e-12
    with pytest.raises(ParameterError):
        mpa.verify_dehp(mpa.build_representation(BoundaryParams(0, 0, 0, 0, 0), 3))


def test_dehp_random(rng):
    for i in range(50):
        b = random_boundary(rng, PHASES[i % 4])
        assert max(mpa.verify_dehp(mpa.build_representation(b, 20, "high"))) <= 1e-10
        if b.A * b.C < 1:
            assert max(mpa.verify_dehp(mpa.build_representation(b, 20))) <= 1e-10


def test_truncated_last_band_is_not_exact():
    rep = mpa.build_representation(BoundaryParams(0.5, -0.1, 0.3, -0.2, 0.4), 8)
    D, E = rep.D.dense(), rep.E.dense()
    bulk = D @ E - 0.4 * E @ D - D - E
    assert np.abs(bulk[-1, -1]) > 1e-3


def test_high_precision_agrees_with_double(rng):
    b = random_boundary(rng, "MC")
    d1 = mpa.site_densities_mpa(mpa.representation_for(b, 40), 40)
    d2 = mpa.site_densities_mpa(mpa.representation_for(b, 40, "high"), 40)
    assert d1 == pytest.approx(d2, abs=1e-12)


def test_partition_values_small(rng):
    for _ in range(20):
        r = RateParams(float(rng.uniform(0, 0.8)), *(float(x) for x in rng.uniform(0.1, 2, 2)),
                       *(float(x) for x in rng.uniform(0, 0.5, 2)))
        b = rates_to_boundary(r)
        rep = mpa.representation_for(b, 1)
        pv = mpa.partition_values(rep, 1)
        assert pv.Z[0] == 1
        assert mpa.config_probability(rep, [1]) == pytest.approx((r.alpha + r.delta) / (r.alpha + r.beta + r.gamma + r.delta),
                                                                 abs=1e-12)


def test_zhat_ratio_matches_exact(rng):
    for N in range(1, 7):
        b = random_boundary(rng, PHASES[N % 3])
        rep = mpa.representation_for(b, N + 1)
        pv = mpa.partition_values(rep, N + 1)
        g = exact.build_generator(N + 1, 0, boundary_to_rates(b))
        d = exact.site_densities(g, exact.stationary(g))
        assert pv.Zhat[N - 1] / pv.Z[N + 1] == pytest.approx(d[0] - d[-1], abs=1e-10)


def test_require_truncation():
    rep = mpa.build_representation(BoundaryParams(0, 0, 0, 0, 0), 5)
    with pytest.raises(ParameterError):
        mpa.partition_values(rep, 4)
    with pytest.raises(ParameterError):
        mpa.config_probability(rep, [1, 0, 2])


def test_config_probabilities_match_exact(rng):
    for ph in PHASES:
        for n in (1, 3, 6):
            b = random_boundary(rng, ph)
            rep = mpa.representation_for(b, n)
            g = exact.build_generator(n, 0, boundary_to_rates(b))
            pi = exact.stationary(g)
            got = np.array([mpa.config_probability(rep, s) for s in g.states])
            assert got.sum() == pytest.approx(1, abs=1e-12)
            assert np.abs(got - pi).max() <= 1e-9


def test_densities_match_exact(rng):
    for ph in PHASES:
        for n in (2, 5, 7):
            b = random_boundary(rng, ph)
            g = exact.build_generator(n, 0, boundary_to_rates(b))
            d = exact.site_densities(g, exact.stationary(g))
            rep = mpa.representation_for(b, n)
            assert np.abs(mpa.site_densities_mpa(rep, n) - d).max() <= 1e-9
            assert mpa.site_density_mpa(rep, n, n) == pytest.approx(d[-1], abs=1e-9)
    with pytest.raises(IndexError):
        mpa.site_density_mpa(rep, n, n + 1)


def test_densities_bernoulli_line():
    b = BoundaryParams(0.5, -0.3, 2.0, -0.1, 0.4)
    d = mpa.site_densities_mpa(mpa.representation_for(b, 50), 50)
    assert d == pytest.approx(np.full(50, 1 / 3), abs=1e-9)


def test_density_mc_bulk():
    d = mpa.site_density_mpa(mpa.representation_for(BoundaryParams(0, 0, 0, 0, 0), 200), 200, 100)
    assert abs(d - 0.5) <= 0.05


def test_exact_truncation(rng):
    for ph in PHASES:
        b = random_boundary(rng, ph)
        N = 30
        if not mpa.guard_nonzero(b) or abs(b.A * b.C - 1) < 1e-6:
            continue
        r1, r2 = mpa.representation_for(b, N), mpa.build_representation(b, N + 10)
        assert np.abs(mpa.site_densities_mpa(r1, N) - mpa.site_densities_mpa(r2, N)).max() <= 1e-13
        p1, p2 = mpa.partition_values(r1, N), mpa.partition_values(r2, N)
        assert np.abs(p1.log_Z - p2.log_Z).max() <= 1e-13
        assert np.abs(p1.log_Zhat - p2.log_Zhat).max() <= 1e-13
        assert np.abs(mpa.loc1_distribution(r1, N) - mpa.loc1_distribution(r2, N)).max() <= 1e-13


def test_loc1_simple():
    rep = mpa.representation_for(BoundaryParams(0, 0, 0, 0, 0), 3)
    for via in ("direct", "relation"):
        assert mpa.loc1_distribution(rep, 2, via) == pytest.approx([0.5, 0.5], abs=1e-12)
    with pytest.raises(ParameterError):
        mpa.loc1_distribution(rep, 2, "other")


def test_loc1_matches_exact(rng):
    for ph in PHASES:
        for n in (1, 4, 7):
            b = random_boundary(rng, ph)
            g = exact.build_generator(n, 1, boundary_to_rates(b))
            loc = exact.loc_marginals(g, exact.stationary(g))[0]
            rep = mpa.representation_for(b, n + 1)
            for via in ("direct", "relation"):
                assert np.abs(mpa.loc1_distribution(rep, n, via) - loc).max() <= 1e-9


def test_loc1_routes_agree(rng):
    for N in (2, 10, 25, 50):
        for ph in PHASES:
            b = random_boundary(rng, ph)
            rep = mpa.representation_for(b, N + 1)
            p, r = mpa.loc1_distribution(rep, N, "direct"), mpa.loc1_distribution(rep, N, "relation")
            assert p.sum() == pytest.approx(1, abs=1e-12)
            assert np.abs(p - r).max() <= 1e-9


def test_loc1_guards():
    rep = mpa.representation_for(BoundaryParams(2, 0, 0.5, 0, 0.3), 5)
    with pytest.raises(GuardError):
        mpa.loc1_distribution(rep, 4)


def test_density_differences_keep_sign(rng):
    for ph in PHASES:
        for N in (5, 20, 50):
            b = random_boundary(rng, ph)
            diff = np.diff(mpa.site_densities_mpa(mpa.representation_for(b, N), N))
            assert np.all(diff <= 1e-15) or np.all(diff >= -1e-15)


def test_uniformity_coexistence():
    N = 200
    p = mpa.loc1_distribution(mpa.representation_for(BoundaryParams(2, 0, 2, 0, 0), N), N)
    assert np.abs(np.cumsum(p) - np.arange(1, N + 1) / N).max() <= 0.1


def test_aw_first_moment():
    assert mpa.aw_first_moment(0, 0, 0, 0) == 0
    assert mpa.aw_first_moment(0.5, 0, 0, 0) == 0.25
    assert mpa.aw_first_moment(0.3, 0.2, -0.1, 0.4, q=0.5) == mpa.aw_first_moment(0.3, 0.2, -0.1, 0.4)
    with pytest.raises(GuardError):
        mpa.aw_first_moment(1, 1, 1, 1)


def test_sigma_left_via_aw():
    b = BoundaryParams(0, 0, 0, 0, 0)
    for t in (0.2, 0.5, 0.9):
        assert mpa.sigma_left_via_aw(b, t) == pytest.approx(0.75, abs=1e-12)
    b = BoundaryParams(2, 0, 0, 0, 0)
    for t in (0.99, 0.995):
        assert mpa.sigma_left_via_aw(b, t) == pytest.approx(7 / 9, abs=1e-12)
    with pytest.raises(ParameterError):
        mpa.sigma_left_via_aw(b, 1.0)
    with pytest.raises(WrongPhaseError):
        mpa.sigma_left_via_aw(BoundaryParams(0, 0, 2, 0, 0), 0.5)


def test_sigma_left_via_aw_random(rng):
    for ph, ts in (("MC", np.linspace(0.1, 0.9, 5)), ("HD", np.linspace(0.99, 0.999, 5))):
        for _ in range(30):
            b = random_boundary(rng, ph)
            if ph == "HD" and b.A * math.sqrt(0.99) <= 1.001:
                continue
            vals = np.array([mpa.sigma_left_via_aw(b, t) for t in ts])
            assert np.abs(vals - boundary_sigmas(b)[0]).max() <= 1e-10


def test_guard_nonzero():
    assert mpa.guard_nonzero(BoundaryParams(0, 0, 0, 0, 0.5))
    assert not mpa.guard_nonzero(BoundaryParams(2, -0.5, 2, -0.5, 0))
    q = 0.5
    # ABCD = q^-3
    assert not mpa.guard_nonzero(BoundaryParams(4, -0.5, 4, -0.5, q))


def test_sample_configurations_chi_square():
    b = BoundaryParams(0.6, -0.2, 0.3, -0.1, 0.4)
    n = 4
    rep = mpa.representation_for(b, n)
    draws = mpa.sample_configurations(rep, n, 20000, np.random.default_rng(3))
    g = exact.build_generator(n, 0, boundary_to_rates(b))
    pi = exact.stationary(g)
    codes = draws @ (2 ** np.arange(n - 1, -1, -1))
    obs = np.bincount(codes, minlength=2 ** n)
    exp_codes = g.states @ (2 ** np.arange(n - 1, -1, -1))
    expected = np.zeros(2 ** n)
    expected[exp_codes] = pi * draws.shape[0]
    assert stats.chisquare(obs, expected).pvalue > 0.01
