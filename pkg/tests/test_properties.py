"""Property checks that need no experiment presets."""

import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from nctcp.model_nc import mask_probability, nc_average_throughput, recommend_redundancy, window_sum
from nctcp.model_tcp import P_MAX, FlowParams, tcp_throughput, timeout_probability
from nctcp.provisioning import active_probability, base_stations
from nctcp.sim import run_nc_flow, run_tcp_flow, single_flow_config

losses = st.floats(min_value=0.0, max_value=0.3)
seeds = st.integers(min_value=0, max_value=2**63)
sim_settings = settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@sim_settings
@given(p=losses, r=st.floats(min_value=1.0, max_value=1.5), seed=seeds, proto=st.sampled_from(["tcp", "nc"]))
def test_identical_seeds_identical_traces(p, r, seed, proto):
    cfg = single_flow_config(proto, p, r, duration=40.0, seed=seed)
    run = run_nc_flow if proto == "nc" else run_tcp_flow
    a, b = run(cfg), run(cfg)
    assert np.array_equal(a.window, b.window)
    assert np.array_equal(a.srtt, b.srtt)
    assert np.array_equal(a.delivered, b.delivered)
    assert a.events == b.events


@sim_settings
@given(p=losses, r=st.floats(min_value=1.0, max_value=1.5), seed=seeds,
       wmax=st.integers(min_value=1, max_value=60), proto=st.sampled_from(["tcp", "nc"]))
def test_window_bounds(p, r, seed, wmax, proto):
    cfg = single_flow_config(proto, p, r, duration=60.0, seed=seed, wmax=wmax)
    tr = (run_nc_flow if proto == "nc" else run_tcp_flow)(cfg)
    assert np.all(tr.window >= 1.0)
    assert np.all(tr.window <= wmax)
    assert np.all(np.diff(tr.delivered) >= 0)
    assert np.all(tr.delivered <= tr.tcp_sent)


@given(w1=st.integers(min_value=1, max_value=40), extra=st.integers(min_value=0, max_value=60))
def test_breakpoint_continuity(w1, extra):
    wmax = w1 + extra
    prm = FlowParams(0.0, 0.8, wmax=wmax, initial_window=w1)
    r = wmax - w1
    if r == 0:
        assert window_sum(prm, 1) == wmax
        return
    before = r * w1 + r * (r - 1) / 2
    after = r * wmax - r * (wmax - w1) + r * (r - 1) / 2
    assert before == after == window_sum(prm, r)
    assert window_sum(prm, r + 1) == window_sum(prm, r) + wmax


@given(p=st.floats(min_value=0.0, max_value=0.5), w=st.integers(min_value=1, max_value=60),
       k=st.integers(min_value=100, max_value=250))
def test_mask_probability_monotone_in_r(p, w, k):
    r = k / 100
    assert mask_probability(p, w, r) <= mask_probability(p, w, r + 0.01) + 1e-12


@given(p=st.floats(min_value=0.0, max_value=0.3), w=st.integers(min_value=1, max_value=60))
def test_recommended_r_above_minimum(p, w):
    try:
        r = recommend_redundancy(p, w)
    except Exception:
        return
    assert r >= 1 / (1 - p) - 1e-9


def test_tcp_throughput_monotone_in_p():
    grid = np.round(np.arange(0.001, 0.5001, 0.001), 6)
    rates = [tcp_throughput(FlowParams(p, 0.8)).packets_per_second for p in grid]
    assert all(b <= a + 1e-12 for a, b in zip(rates, rates[1:]))


@given(p=st.floats(min_value=0.0, max_value=P_MAX - 1e-6), rtt=st.floats(min_value=0.01, max_value=2.0),
       wmax=st.integers(min_value=1, max_value=200))
def test_tcp_clamp_and_units(p, rtt, wmax):
    est = tcp_throughput(FlowParams(p, rtt, wmax=wmax))
    assert est.packets_per_second <= wmax / rtt * (1 + 1e-12)
    assert math.isclose(est.mbps, est.packets_per_second * 8000 / 1e6, rel_tol=1e-12)


@given(p=st.floats(min_value=0.0, max_value=0.99), w=st.floats(min_value=3.0, max_value=100.0))
def test_timeout_probability_range(p, w):
    v = timeout_probability(p, w)
    assert 0.0 <= v <= 1.0
    assert timeout_probability(p, w + 1) <= v + 1e-12


@given(n=st.integers(min_value=49, max_value=5000))
def test_nc_average_bounded(n):
    prm = FlowParams(0.05, 0.8, redundancy=1.1, srtt=0.82)
    assert nc_average_throughput(prm, n).packets_per_second <= prm.wmax / prm.srtt


@given(mu=st.floats(min_value=1e3, max_value=1e9), theta=st.floats(min_value=0.01, max_value=100),
       q=st.floats(min_value=0.0, max_value=1.0), dq=st.floats(min_value=0.0, max_value=1.0))
def test_activity_monotone(mu, theta, q, dq):
    a = active_probability(mu, theta, q)
    assert 0.0 <= a <= 1.0
    assert active_probability(mu, theta, q + dq) >= a
    assert active_probability(mu, theta * 2, q) <= a


@given(n=st.integers(min_value=1, max_value=5000), p=st.floats(min_value=0, max_value=1),
       b=st.floats(min_value=0.01, max_value=100))
def test_base_stations_monotone(n, p, b):
    v = base_stations(n, p, b)
    assert base_stations(n + 1, p, b) >= v
    assert base_stations(n, p, b * 1.5) >= v
    assert base_stations(n, p, b, bmax=600) <= v
    assert base_stations(n, p, b, nmax=400) <= v
