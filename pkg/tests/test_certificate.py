import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_k_max
from sevastyanov import arrivals as ar
from sevastyanov import certificate as ce
from sevastyanov import service_dist as sd
from sevastyanov.engine import Models

SUITE = [(10, 1, 0.5), (10, 0.5, 0.5), (3, 1e-3, 0.5), (50, 2, 1.0), (7, 0.5, 0.2),
         (20, 1, 2.0), (100, 5, 0.5), (6.5, 0.3, 0.5), (30, 0.1, 3.0), (12, 2, 0.5)]


def test_check_base_examples():
    r = ce.check_base(10, 1, 0.5)
    assert r.passed and r.aslambda == 4.0
    r = ce.check_base(6, 1, 0.5)
    assert not r.passed and r.aslambda == 0.0
    r = ce.check_base(10, 1, 0.0)
    assert not r.passed and "trivial" in r.note
    with pytest.raises(ValueError):
        ce.check_base(math.inf, 1, 1)


def test_check_am_example():
    rhs = (1.5 + 1 / 1.5) * (1.5 + 2 ** (0.5 + 1 / 1.5))
    assert ce.check_am(10, 1, 1.5, 1.5, 1) == pytest.approx(10 - rhs, rel=1e-14)
    assert ce.check_am(10, 1, 1.5, 1.5, 1) == pytest.approx(1.885, abs=1.5e-3)  # exact value 1.88600
    # k below 1 is treated as k v 1
    assert ce.check_am(10, 1, 1.5, 1.5, 0.2) == ce.check_am(10, 1, 1.5, 1.5, 1)


def test_am_sufficient_form_limit():
    # m = k, a -> 1: the condition tends to C0 > 2(k + 2 Lambda), so k < 3 at C0 = 10, Lambda = 1
    for k in (2.9, 2.99):
        assert ce.check_am(10, 1, k, 1 + 1e-9, k) == pytest.approx(10 - 2 * (k + 2), abs=1e-7)
    assert ce.check_am(10, 1, 3.01, 1 + 1e-9, 3.01) < 0


def test_small_k_feasible():
    assert ce.check_am(10, 1, 1.01, 1.01, 0.01) > 0
    cert = ce.search_certificate(6.5, 1, 0.5, target_k=0.01)
    assert cert.k == 0.01 and ce.revalidate(cert)["passed"]


def test_search_example():
    cert = ce.search_certificate(10, 1, 0.5)
    assert cert.k >= 1
    assert cert.k < 3.1
    assert ce.revalidate(cert)["passed"]
    assert 0 < cert.delta <= min(0.1, cert.k / 2)
    assert cert.drift_constant == pytest.approx(ce.encore1_slack(10, 1, cert.m, cert.a))


def test_boundary_infeasible():
    with pytest.raises(ce.InfeasibleCertificate) as e:
        ce.search_certificate(6.0, 1.0, 0.5)
    assert e.value.best_margin == 0.0
    with pytest.raises(ce.InfeasibleCertificate):
        ce.search_certificate(10.0, 1.0, 0.0)
    with pytest.raises(ce.InfeasibleCertificate):
        ce.search_certificate(10.0, 1.0, 0.5, target_k=3.5)


def test_trivial_regime():
    cert = ce.search_certificate(10.0, 1.0, 0.0, target_k=1.0, allow_trivial=True)
    assert cert.R == 1.0
    assert ce.revalidate(cert, allow_trivial=True)["passed"]
    assert not ce.revalidate(cert)["passed"]


@pytest.mark.parametrize("C0,Lambda,lambda0", SUITE)
def test_search_matches_oracle(C0, Lambda, lambda0):
    cert = ce.search_certificate(C0, Lambda, lambda0)
    assert abs(cert.k - brute_force_k_max(C0, Lambda)) <= 0.05
    rv = ce.revalidate(cert)
    assert rv["passed"] and all(v > 0 for v in rv["margins"].values())


def test_monotone_over_suite():
    ks = {}
    for C0 in (7, 10, 15, 25):
        for Lambda in (0.25, 0.5, 1.0):
            ks[C0, Lambda] = ce.search_certificate(C0, Lambda, 0.5).k
    for (C0, Lambda), k in ks.items():
        for (C1, L1), k1 in ks.items():
            if C1 >= C0 and L1 <= Lambda:
                assert k1 >= k


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0.01, 5.0), st.floats(0.1, 20.0), st.floats(0.01, 3.0))
def test_emitted_certificates_revalidate(Lambda, lambda0, extra, k):
    C0 = 2 * (1 + 2 * Lambda) + extra
    try:
        cert = ce.search_certificate(C0, Lambda, lambda0, target_k=k)
    except ce.InfeasibleCertificate:
        assert ce._best_ma(C0, Lambda, k)[0] <= 0
        return
    rv = ce.revalidate(cert)
    assert rv["passed"]
    assert (ce.encore1_slack(C0, Lambda, cert.m, cert.a) - cert.epsilon) * cert.R > lambda0


def test_serialisation():
    cert = ce.search_certificate(10, 1, 0.5, target_k=1.0)
    d = json.loads(cert.to_json())
    assert d["k"] == 1.0 and d["drift_constant"] == cert.drift_constant
    table = cert.margin_table()
    assert "encore2" in table and "eqR" in table


def test_certificate_for_models():
    m = Models(sd.pareto_floor(10.0), ar.constant(0.5))
    cert = ce.certificate_for(m)
    assert cert.Lambda == 0.5 and cert.C0 == 10.0 and cert.lambda0 == 0.5
    assert abs(cert.k - brute_force_k_max(10.0, 0.5)) <= 0.05
