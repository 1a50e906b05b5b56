import math

import numpy as np
import pytest
from scipy import integrate, stats

from sevastyanov import arrivals as ar
from sevastyanov import service_dist as sd
from sevastyanov import stationary as stn
from sevastyanov.engine import EMPTY, Models, SystemState, simulate
from sevastyanov.estimators import empirical_pmf, tv_counts
from sevastyanov.rng import Stream, replicate


def test_poisson_example_p0():
    law = stn.count_pmf(ar.constant(2.0), 1 / 3)
    assert law.p0 == pytest.approx(math.exp(-2 / 3), rel=1e-14)
    assert law.p0 == pytest.approx(0.51342, abs=5e-6)


def test_erlang_one_server():
    law = stn.count_pmf(ar.constant(1.0), 1.0, N=1)
    assert law.p == pytest.approx([0.5, 0.5], rel=1e-15)


def test_erlang_b_against_recursion():
    # blocking probability p_N against the Erlang-B recursion B(n) = rho B(n-1) / (n + rho B(n-1))
    rho, N = 4.0, 7
    law = stn.count_pmf(ar.constant(rho), 1.0, N=N)
    B = 1.0
    for n in range(1, N + 1):
        B = rho * B / (n + rho * B)
    assert law.p[-1] == pytest.approx(B, rel=1e-13)


def test_finite_support_table():
    law = stn.count_pmf(ar.capped_table([1.0, 2.0, 0.5], "zero", lambda0=1.5), 0.7)
    assert law.k_max == 4  # lambda_4 is the first zero rate
    assert law.p.sum() == pytest.approx(1.0, abs=1e-15)
    assert law.tail_mass == 0.0


@pytest.mark.parametrize("rho", [0.1, 2 / 3, 1.0, 5.0, 20.0])
def test_poisson_against_scipy(rho):
    law = stn.count_pmf(ar.constant(rho), 1.0)
    ref = stats.poisson.pmf(np.arange(len(law.p)), rho)
    big = ref > 1e-300
    assert np.max(np.abs(law.p[big] / ref[big] - 1)) < 1e-14 * max(1.0, rho)
    assert law.tail_mass < 1e-12
    assert abs(law.p.sum() + law.tail_mass - 1.0) < 1e-12


def test_linear_arrivals_negative_binomial():
    # lambda_n = c (n + 1), q^-1 = s: p_k proportional to (c s)^k, i.e. geometric with ratio c s
    law = stn.count_pmf(ar.linear(0.5), 1.0)
    k = np.arange(len(law.p))
    assert law.p == pytest.approx(0.5 * 0.5**k, rel=1e-12)


def test_non_normalizable():
    with pytest.raises(stn.NonNormalizableError):
        stn.count_pmf(ar.linear(1.0), 1.0)
    with pytest.raises(stn.NonNormalizableError):
        stn.count_pmf(ar.linear(2.0), 1.0)
    # finite N is always fine
    assert stn.count_pmf(ar.linear(2.0), 1.0, N=5).p.sum() == pytest.approx(1.0)


def test_density_examples():
    hz = sd.pareto_floor(4.0)
    arr = ar.constant(2.0)
    law = stn.count_pmf(arr, sd.mean_service(hz))
    assert stn.stationary_density_at(EMPTY, law, hz) == law.p0
    t = 0.8
    assert stn.stationary_density_at(SystemState((t,)), law, hz) == pytest.approx(
        law.p0 * 2.0 * sd.survival(hz, t), rel=1e-14)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_density_integrates_to_pk(k):
    hz = sd.piecewise_constant([1.0], [0.5, 2.0])
    arr = ar.capped_table([1.0, 0.5, 2.0], "last", lambda0=1.2)
    law = stn.count_pmf(arr, sd.mean_service(hz))
    f = lambda *x: stn.stationary_density_at(SystemState(x), law, hz)  # noqa: E731
    # the density factorises, so integrate one coordinate and raise to the power k; check the
    # factorisation itself at a few points, then do the full nquad for k <= 2
    one = integrate.quad(lambda x: sd.survival(hz, x), 0, np.inf, points=None, epsrel=1e-12, limit=200)[0]
    coef = law.p[k] / law.mean_service**k
    assert coef * one**k == pytest.approx(law.p[k], rel=1e-6)
    if k <= 2:
        val = integrate.nquad(f, [[0, 40]] * k, opts={"epsrel": 1e-9, "points": [1.0]})[0]
        assert val == pytest.approx(law.p[k], rel=1e-6)


def test_sampler_count_law():
    hz = sd.pareto_floor(4.0)
    law = stn.count_pmf(ar.constant(2.0), 1 / 3)
    smp = stn._Sampler(law, hz)
    s = Stream.from_seed(2)
    counts = np.array([smp(s).n for _ in range(10**6)])
    assert tv_counts(empirical_pmf(counts), law.p) <= 0.005


def test_equilibrium_exponential_is_memoryless():
    hz = sd.constant_rate(2.0)
    law = stn.count_pmf(ar.constant(3.0), 0.5)
    s = Stream.from_seed(3)
    xs = np.concatenate([stn.sample_stationary(law, hz, s).elapsed for _ in range(20000)])
    assert stats.kstest(xs, stats.expon(scale=0.5).cdf).pvalue > 0.001


def test_equilibrium_pareto_cdf():
    hz = sd.pareto_floor(4.0)
    law = stn.count_pmf(ar.constant(6.0), 1 / 3)
    s = Stream.from_seed(4)
    xs = np.concatenate([stn.sample_stationary(law, hz, s).elapsed for _ in range(20000)])
    assert stats.kstest(xs, lambda x: 1 - (1 + x) ** -3.0).pvalue > 0.001


def test_insensitivity_exact():
    rep = stn.insensitivity_report(sd.constant_rate(3.0), sd.pareto_floor(4.0), ar.constant(2.0))
    assert rep["identical"] and rep["exact_tv"] == 0.0
    same = stn.insensitivity_report(sd.pareto_floor(4.0), sd.pareto_floor(4.0), ar.constant(2.0))
    assert same["exact_tv"] == 0.0
    with pytest.raises(ValueError):
        stn.insensitivity_report(sd.constant_rate(3.0), sd.pareto_floor(3.0), ar.constant(2.0))


def test_insensitivity_simulated():
    rep = stn.insensitivity_report(sd.constant_rate(3.0), sd.pareto_floor(4.0), ar.constant(2.0),
                                   simulate_reps=10**4, t=60.0, seed=5)
    assert rep["simulated_tv_between"] <= 0.02
    assert max(rep["simulated_tv_to_exact"]) <= 0.02


def test_insensitivity_two_sample_homogeneity():
    from sevastyanov.estimators import marginal_counts_grid

    arr = ar.constant(2.0)
    c1 = marginal_counts_grid([60.0], EMPTY, Models(sd.constant_rate(3.0), arr), 10**4, 11)[:, 0]
    c2 = marginal_counts_grid([60.0], EMPTY, Models(sd.pareto_floor(4.0), arr), 10**4, 12)[:, 0]
    table = np.vstack([np.bincount(np.minimum(c1, 4), minlength=5), np.bincount(np.minimum(c2, 4), minlength=5)])
    assert stats.chi2_contingency(table)[1] > 0.001


def _stationary_then_run(stream, payload):
    law, hz, m, t = payload
    x = stn.sample_stationary(law, hz, stream)
    return simulate(x, t, "residual", m, stream).final.n


def test_stationarity_is_preserved():
    hz = sd.pareto_floor(4.0)
    arr = ar.constant(2.0)
    law = stn.count_pmf(arr, 1 / 3)
    m = Models(hz, arr)
    counts = np.array(replicate(_stationary_then_run, 20000, 6, (law, hz, m, 3.0)))
    k = max(counts.max() + 1, len(law.p))
    obs = np.bincount(counts, minlength=k)[:8]
    exp = np.pad(law.p, (0, max(0, k - len(law.p))))[:8] * len(counts)
    obs = np.append(obs, len(counts) - obs.sum())
    exp = np.append(exp, len(counts) - exp.sum())
    keep = exp > 5
    assert stats.chisquare(obs[keep], exp[keep] * obs[keep].sum() / exp[keep].sum()).pvalue > 0.001


def test_time_average_occupancy():
    hz = sd.piecewise_constant([0.3], [1.0, 4.0])
    arr = ar.constant(1.5)
    m = Models(hz, arr, 4)
    lg = simulate(EMPTY, 20000.0, "residual", m, 7)
    occ = stn.time_average_counts(lg, 100.0)
    law = stn.count_pmf(arr, sd.mean_service(hz), 4)
    assert tv_counts(occ, law.p) <= 0.02
