import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sevastyanov import arrivals as ar
from sevastyanov import engine as en
from sevastyanov import service_dist as sd
from sevastyanov.engine import ARRIVAL, BLOCKED, DEPARTURE, EMPTY, Models, SystemState
from sevastyanov.rng import Stream, replicate


def test_apply_arrival_examples():
    assert en.apply_arrival(SystemState((1.5, 2.0)), 1).elapsed == (1.5, 0.0, 2.0)
    assert en.apply_arrival(EMPTY, 0).elapsed == (0.0,)
    assert en.apply_arrival(SystemState((7.0,)), 1).elapsed == (7.0, 0.0)
    with pytest.raises(en.ContractViolation):
        en.apply_arrival(SystemState((1.0,)), 2)
    with pytest.raises(en.ContractViolation):
        en.apply_arrival(SystemState((1.0, 2.0)), 0, N=2)


def test_apply_departure_examples():
    assert en.apply_departure(SystemState((1.5, 2.0)), 1).elapsed == (2.0,)
    assert en.apply_departure(SystemState((3.3,)), 1).is_empty
    assert en.apply_departure(SystemState((1.0, 2.0, 3.0)), 2).elapsed == (1.0, 3.0)
    with pytest.raises(en.ContractViolation):
        en.apply_departure(EMPTY, 1)


def test_negative_elapsed_rejected():
    with pytest.raises(en.ContractViolation):
        SystemState((-1.0,))


@pytest.mark.parametrize("mode", en.MODES)
def test_no_arrivals_from_empty(mode):
    m = Models(sd.pareto_floor(3.0), ar.constant(0.0))
    lg = en.simulate(EMPTY, 100.0, mode, m, 1)
    assert len(lg) == 0 and lg.final.is_empty


@pytest.mark.parametrize("mode", en.MODES)
def test_determinism(mode):
    m = Models(sd.pareto_floor(4.0), ar.constant(2.0))
    a = en.simulate(SystemState((0.2, 1.0)), 20.0, mode, m, Stream.from_seed(42, 3))
    b = en.simulate(SystemState((0.2, 1.0)), 20.0, mode, m, Stream.from_seed(42, 3))
    assert a.times == b.times and a.kinds == b.kinds and a.positions == b.positions
    assert a.final == b.final


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(en.MODES), st.floats(0.1, 0.6), st.sampled_from([1, 3, math.inf]))
def test_bookkeeping_and_capacity(seed, mode, lam, N):
    m = Models(sd.piecewise_constant([0.5], [2.0, 0.7]), ar.linear(lam), N)
    lg = en.simulate(SystemState((0.1,)), 5.0, mode, m, seed)
    assert lg.bookkeeping_ok()
    assert all(n <= N for n in lg.n_after)
    n = 1
    for k, na in zip(lg.kinds, lg.n_after):
        if k == BLOCKED:
            assert n == N
        n = na
    assert lg.final.n == (lg.n_after[-1] if lg.n_after else 1)


def test_state_reconstruction_matches_runner():
    m = Models(sd.pareto_floor(3.0), ar.constant(1.5))
    lg = en.simulate(SystemState((0.5, 0.25)), 10.0, "residual", m, 9)
    assert lg.state_at(10.0).elapsed == pytest.approx(lg.final.elapsed, abs=1e-12)


def test_explosion_guard():
    m = Models(sd.constant_rate(1.0), ar.constant(50.0))
    with pytest.raises(en.ExplosionSuspected):
        en.simulate(EMPTY, 100.0, "residual", m, 1, max_events=100)


def test_csv_export(tmp_path):
    m = Models(sd.constant_rate(1.0), ar.constant(1.0))
    lg = en.simulate(EMPTY, 5.0, "residual", m, 1)
    p = tmp_path / "log.csv"
    lg.to_csv(p)
    rows = en.read_eventlog_csv(p)
    assert [r[0] for r in rows] == lg.times
    assert [r[2] for r in rows] == lg.n_after
    assert {r[1] for r in rows} <= {"arrival", "departure", "blocked"}


def test_hitting_time_empty_examples():
    m = Models(sd.constant_rate(1.0), ar.constant(1.0))
    assert en.hitting_time_empty(EMPTY, m, 1, 10.0) == en.HitResult(0.0, False)
    m0 = Models(sd.constant_rate(1.0), ar.constant(0.0))
    t = np.array([en.hitting_time_empty(SystemState((0.0,)), m0, Stream.from_seed(3, i), 1e3).time
                  for i in range(10**5)])
    assert abs(t.mean() - 1.0) < 3 * t.std(ddof=1) / math.sqrt(len(t))


def test_hitting_time_positive_recurrence():
    m = Models(sd.pareto_floor(10.0), ar.constant(2.0))
    cens = [en.hitting_time_empty(SystemState((0.0,)), m, Stream.from_seed(4, i), 1e3).censored
            for i in range(10**4)]
    assert np.mean(cens) < 1e-3


def _replay_departure_ages(lg):
    births = lg.init.births()
    ages = []
    for t, k, p in zip(lg.times, lg.kinds, lg.positions):
        if k == ARRIVAL:
            births.insert(p, t)
        elif k == DEPARTURE:
            ages.append(t - births.pop(p))
    return ages


def test_residual_service_times_follow_G():
    hz = sd.pareto_floor(4.0)
    m = Models(hz, ar.constant(3.0))
    lg = en.simulate(EMPTY, 20000.0, "residual", m, 17)
    ages = np.array(_replay_departure_ages(lg))
    assert len(ages) > 30000
    assert stats.kstest(ages, lambda v: 1 - sd.survival(hz, v)).pvalue > 0.001


def _summary_task(stream, payload):
    x, m, t, mode = payload
    lg = en.simulate(x, t, mode, m, stream)
    arrivals = sum(1 for k in lg.kinds if k == ARRIVAL)
    hit = next((tt for tt, na, k in zip(lg.times, lg.n_after, lg.kinds) if k == DEPARTURE and na == 0), t)
    return lg.final.n, arrivals, hit


def test_mode_equivalence_two_sample():
    m = Models(sd.piecewise_constant([0.5], [2.0, 0.8]), ar.linear(0.6), 4)
    x = SystemState((0.3,))
    res = {mode: np.array(replicate(_summary_task, 10**5, 100 + i, (x, m, 2.0, mode)))
           for i, mode in enumerate(en.MODES)}
    r, t = res["residual"], res["thinning"]
    for col in (0, 1):
        k = int(max(r[:, col].max(), t[:, col].max())) + 1
        table = np.vstack([np.bincount(r[:, col].astype(int), minlength=k),
                           np.bincount(t[:, col].astype(int), minlength=k)])
        table = table[:, table.sum(axis=0) > 0]
        assert stats.chi2_contingency(table)[1] > 0.001
    assert stats.ks_2samp(r[:, 2], t[:, 2]).pvalue > 0.001


def test_first_customer_runs_from_given_elapsed():
    # a single customer with elapsed 1 under h = C0/(1+t) leaves after T with P(T > t) = (2/(2+t))^C0
    hz = sd.pareto_floor(3.0)
    m = Models(hz, ar.constant(0.0))
    t = np.array([en.hitting_time_empty(SystemState((1.0,)), m, Stream.from_seed(8, i), 1e6).time
                  for i in range(20000)])
    ref = lambda v: 1 - (2.0 / (2.0 + v)) ** 3  # noqa: E731
    assert stats.kstest(t, ref).pvalue > 0.001


@pytest.mark.parametrize("models,x", [
    (Models(sd.pareto_floor(10.0), ar.constant(1.0)), SystemState((0.5, 0.0))),
    (Models(sd.piecewise_constant([0.5], [2.0, 0.7]), ar.linear(0.4), 3), SystemState((0.1, 0.2, 1.0))),
    (Models(sd.tabulated([0, 0.5, 1.5, 4], [0, 0.2, 1.7, 3]), ar.capped_table([1.0, 0.5, 2.0], "last")),
     SystemState((0.7,))),
])
def test_batch_hitting_times_match_engine(models, x):
    T, cens = en.hitting_times_batch(x, models, 200000, 1, 1e4)
    E = np.array([en.hitting_time_empty(x, models, Stream.from_seed(2, i), 1e4).time for i in range(20000)])
    assert not cens.any()
    assert stats.ks_2samp(T, E).pvalue > 0.001


def test_batch_hitting_times_exact_cases():
    m0 = Models(sd.constant_rate(1.0), ar.constant(0.0))
    T, _ = en.hitting_times_batch(SystemState((0.0,)), m0, 10**5, 3, 1e3)
    assert abs(T.mean() - 1.0) < 3 * T.std() / math.sqrt(len(T))
    assert abs(np.mean(T**2) - 2.0) < 3 * np.std(T**2) / math.sqrt(len(T))
    # a single customer with elapsed 1 under h = 3/(1+t): P(T > t) = (2/(2+t))^3
    T, _ = en.hitting_times_batch(SystemState((1.0,)), Models(sd.pareto_floor(3.0), ar.constant(0.0)), 20000, 4, 1e9)
    assert stats.kstest(T, lambda v: 1 - (2.0 / (2.0 + v)) ** 3).pvalue > 0.001
    T, c = en.hitting_times_batch(EMPTY, m0, 5, 1, 1.0)
    assert not T.any() and not c.any()


def test_batch_hitting_times_censoring_and_chunks():
    m = Models(sd.constant_rate(1.0), ar.constant(0.0))
    T, c = en.hitting_times_batch(SystemState((0.0,)), m, 10000, 5, 0.5)
    assert np.all(T[c] == 0.5) and np.all(T[~c] <= 0.5)
    assert abs(c.mean() - math.exp(-0.5)) < 0.02
    a = en.hitting_times_batch(SystemState((0.0, 0.3)), Models(sd.pareto_floor(4.0), ar.constant(2.0)), 3000, 6, 1e3)
    b = en.hitting_times_batch(SystemState((0.0, 0.3)), Models(sd.pareto_floor(4.0), ar.constant(2.0)), 3000, 6, 1e3)
    assert np.array_equal(a[0], b[0])
    # arrivals push rows past the initial width, exercising the growth path
    many, _ = en.hitting_times_batch(SystemState((0.0,)), Models(sd.pareto_floor(4.0), ar.constant(30.0)), 200, 7, 1e4)
    assert np.all(many > 0)
