import dataclasses
import math

import numpy as np
import pytest

from sevastyanov import arrivals as ar
from sevastyanov import coupling as cp
from sevastyanov import service_dist as sd
from sevastyanov.certificate import search_certificate
from sevastyanov.engine import EMPTY, Models, SystemState, hitting_time_empty
from sevastyanov.lyapunov import L
from sevastyanov.rng import Stream

CERT = search_certificate(10.0, 0.5, 0.5)
MODELS = Models(sd.pareto_floor(10.0), ar.constant(0.5))


def test_empty_pair_is_coupled_at_zero():
    r = cp.simulate_pair(EMPTY, CERT, MODELS, 100.0, 1, y=EMPTY)
    assert r.T == r.tau_bar_0 == r.tau_bar_0R == r.tau0_x == 0.0
    assert not r.censored and r.attempts == 1


def test_trivial_regime_is_max_of_emptying_times():
    models = Models(sd.pareto_floor(10.0), ar.constant(0.0))
    cert = search_certificate(10.0, 0.5, 0.0, target_k=1.0, allow_trivial=True)
    x, y = SystemState((0.0, 0.3)), SystemState((1.2,))
    for i in range(200):
        r = cp.simulate_pair(x, cert, models, 1e3, Stream.from_seed(5, i), y=y)
        parent = Stream.from_seed(5, i)
        sx, sy = parent.child(1), parent.child(2)  # the pair derives its two streams in this order
        tx = hitting_time_empty(x, models, sx, 1e3).time
        ty = hitting_time_empty(y, models, sy, 1e3).time
        assert r.T == pytest.approx(max(tx, ty), abs=1e-12)
        assert r.tau0_x == pytest.approx(tx, abs=1e-12)


def test_record_invariants():
    recs = cp.coupling_records(SystemState((0.0, 0.0)), CERT, MODELS, 2000, 7)
    for r in recs:
        if not r.censored:
            assert r.tau_bar_0R <= r.tau_bar_0
            assert r.attempts >= 1
            assert r.tau0_x <= r.tau_bar_0
    assert np.mean([r.censored for r in recs]) < 1e-2


def test_attempts_count_entries():
    # X empty and Y a fresh customer with L_{m,a-1/m} = 1 <= R: the pair starts inside the set
    cert = dataclasses.replace(CERT, R=2.0)
    r = cp.simulate_pair(EMPTY, cert, MODELS, 1e3, 3, y=SystemState((0.0,)))
    assert r.tau_bar_0R == 0.0 and r.attempts >= 1
    # with R below 1 the same start is outside the set
    r = cp.simulate_pair(EMPTY, dataclasses.replace(CERT, R=0.5), MODELS, 1e3, 3, y=SystemState((0.0,)))
    assert r.tau_bar_0R > 0.0


def test_tail_curve_properties():
    grid = np.linspace(0.0, 2.0, 21)
    tc = cp.coupling_tail(SystemState((0.0,)), CERT, MODELS, grid, 1000, 9)
    assert tc.values[0] == 1.0
    assert np.all(np.diff(tc.values) <= 0)
    assert np.all(tc.ci_lo <= tc.values) and np.all(tc.values <= tc.ci_hi)


def test_tail_from_empty_has_mass_at_zero():
    # from the empty state the pair is coupled at 0 exactly when the stationary draw is empty
    tc = cp.coupling_tail(EMPTY, CERT, MODELS, [0.0], 4000, 10)
    p0 = math.exp(-0.5 / 9.0)
    assert tc.ci_lo[0] <= 1 - p0 <= tc.ci_hi[0]


def test_survival_curve_rejects_grid_beyond_cap():
    with pytest.raises(ValueError):
        cp.survival_curve([1.0, 5.0], [False, True], [6.0])


def test_hitting_moment_empty_and_exponential():
    est = cp.hitting_moment(EMPTY, 2.0, CERT, MODELS, 10, 1)
    assert est.point == est.ci_lo == est.ci_hi == 0.0
    models = Models(sd.constant_rate(1.0), ar.constant(0.0))
    est = cp.hitting_moment(SystemState((0.0,)), 2.0, CERT, models, 40000, 2)
    se = (est.ci_hi - est.ci_lo) / (2 * 2.5758)
    assert abs(est.point - 2.0) < 3 * se
    assert est.extra["censored_frac"] == 0.0
    assert est.extra["L_ref"] == L((0.0,), CERT.m, CERT.a + max(CERT.ell - 1, 0) / CERT.m)


def test_hitting_moment_censoring_widens(caplog):
    models = Models(sd.constant_rate(1.0), ar.constant(0.0))
    with caplog.at_level("WARNING"):
        est = cp.hitting_moment(SystemState((0.0,)), 1.0, CERT, models, 2000, 3, cap=0.5)
    assert math.isinf(est.ci_hi) and est.extra["censored_frac"] > 0.5
    assert "censored" in caplog.text


def test_stress_states_sit_on_the_level_set():
    b = CERT.a - 1 / CERT.m
    states = cp.stress_states(CERT)
    assert states
    for s in states:
        assert L(s.elapsed, CERT.m, b) == pytest.approx(CERT.R + 1, rel=1e-12)


def test_meeting_params():
    mp = cp.estimate_meeting_params(CERT, MODELS, 2000, 11)
    assert 0 < mp.t1 < 5
    bound = 1 - 0.5 * math.exp(-CERT.lambda0 * mp.t1)
    assert mp.meeting_failure_prob == pytest.approx(bound)
    # empirical success of the two-sided meeting event against the guaranteed 1 - nu
    assert mp.success_fraction >= (1 - bound) - (0.5 - mp.success_ci_lo)
    up = np.array(mp.survival_upper)
    assert np.all(np.diff(up) <= 0)
    assert up.min() <= 0.5


def test_nu_bound_tends_to_half():
    cert = dataclasses.replace(CERT, lambda0=1e-9)
    mp = cp.estimate_meeting_params(cert, MODELS, 500, 12)
    assert mp.meeting_failure_prob == pytest.approx(0.5, abs=1e-8)


def test_t1_monotone_in_R():
    t1 = []
    for R in (0.25, 1.0, 4.0, 16.0):
        cert = dataclasses.replace(CERT, R=R)
        t1.append(cp.estimate_meeting_params(cert, MODELS, 2000, 13).t1)
    assert all(a <= b for a, b in zip(t1, t1[1:]))


def test_meeting_time_not_found():
    slow = Models(sd.constant_rate(0.01), ar.constant(0.5))
    with pytest.raises(cp.MeetingTimeNotFound):
        cp.estimate_meeting_params(CERT, slow, 200, 14, t_grid=[0.1, 1.0, 5.0], ceiling=5.0)


def test_hitting_moment_batch_agrees_with_engine():
    x = SystemState((0.5,))
    a = cp.hitting_moment(x, 2.0, CERT, MODELS, 20000, 4)
    b = cp.hitting_moment(x, 2.0, CERT, MODELS, 200000, 5, method="batch")
    assert abs(a.point - b.point) <= 1.2 * (a.half_width + b.half_width)
    assert b.extra["method"] == "batch"
    with pytest.raises(ValueError):
        cp.hitting_moment(x, 2.0, CERT, MODELS, 10, 1, method="magic")
