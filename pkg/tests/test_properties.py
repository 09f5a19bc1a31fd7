import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from lightasep import cli, exact
from lightasep.phase import (
    BoundaryParams,
    Phase,
    RateParams,
    boundary_sigmas,
    boundary_to_rates,
    classify,
    drift_kappa,
    light_mass_split,
    phi_pm,
    rates_to_boundary,
)

unit = st.floats(0.0, 0.95)
pos = st.floats(0.01, 20.0)
nonneg = st.floats(0.0, 5.0)
rates_st = st.builds(RateParams, q=unit, alpha=pos, beta=pos, gamma=nonneg, delta=nonneg)
neg = st.floats(-0.95, 0.0)
boundary_st = st.builds(BoundaryParams, A=st.floats(0.0, 5.0), B=neg, C=st.floats(0.0, 5.0), D=neg, q=unit)


@given(rates_st)
def test_rates_boundary_round_trip(r):
    back = boundary_to_rates(rates_to_boundary(r))
    for k in ("alpha", "beta", "gamma", "delta"):
        assert abs(getattr(back, k) - getattr(r, k)) <= 1e-9 * max(1.0, getattr(r, k))


@given(rates_st)
def test_boundary_ranges(r):
    b = rates_to_boundary(r)
    assert b.A >= 0 and b.C >= 0 and -1 < b.B <= 0 and -1 < b.D <= 0


@given(st.floats(0.01, 10), st.floats(0, 10), unit, st.sampled_from([1, -1]))
def test_phi_pm_is_a_root(x, y, q, sign):
    z = phi_pm(x, y, q, sign)
    assert abs(x * z * z - (1 - q - x + y) * z - y) <= 1e-9 * (1 + x * z * z + abs(1 - q - x + y) * abs(z) + y)


@given(boundary_st)
def test_sigmas_are_densities(b):
    sl, sr = boundary_sigmas(b)
    assert -1e-12 <= sl <= 1 + 1e-12 and -1e-12 <= sr <= 1 + 1e-12


@given(boundary_st)
def test_mass_split_sums_to_one(b):
    if classify(b).phase is not Phase.MAX_CURRENT or abs(b.A * b.C - 1) < 1e-6 or max(b.A, b.C) >= 1:
        return
    left, right = light_mass_split(b)
    assert abs(left + right - 1) <= 1e-12
    assert -1e-12 <= left <= 1 + 1e-12


@given(st.floats(0, 1), unit)
def test_kappa_antisymmetric(rho, q):
    assert abs(drift_kappa(rho, q) + drift_kappa(1 - rho, q)) <= 1e-15
    assert abs(drift_kappa(rho, q)) <= 1 - q + 1e-15


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_tv_distance_bounds(a, b):
    n = min(len(a), len(b))
    p, q = np.array(a[:n]) + 1e-3, np.array(b[:n]) + 1e-3
    p, q = p / p.sum(), q / q.sum()
    d = exact.tv_distance(p, q)
    assert 0 <= d <= 1 + 1e-12
    assert d == exact.tv_distance(q, p)
    assert exact.tv_distance(p, p) == 0


@given(st.lists(st.integers(0, 2), min_size=1, max_size=40))
def test_rle_decodes(word):
    out = []
    for tok in cli.rle(word).split():
        v, k = tok.split("*")
        out += [int(v)] * int(k)
    assert out == word


@settings(max_examples=25, deadline=None)
@given(rates_st, st.integers(1, 5))
def test_stationary_is_a_distribution(r, n):
    g = exact.build_generator(n, 0, r)
    pi = exact.stationary(g)
    assert abs(pi.sum() - 1) <= 1e-12 and pi.min() >= 0
