import math

import numpy as np
import pytest

from nctcp.model_nc import recommend_redundancy
from nctcp.model_tcp import FlowParams
from nctcp.provisioning import (
    FILE_PRESETS,
    MB,
    SWEEP_COLUMNS,
    ProvisioningScenario,
    active_probability,
    base_stations,
    effective_throughput,
    mean_file_size,
    monte_carlo_occupancy,
    provision_sweep,
)

LIGHT = FILE_PRESETS["mu3.2"]
HEAVY = FILE_PRESETS["mu5.08"]


def scenario(q=0.01, b=1.0, dist=LIGHT, users=1000, p=0.0, protocol="ideal", **kw):
    prm = FlowParams(loss_prob=p, rtt=0.1, redundancy=recommend_redundancy(p, 50))
    return ProvisioningScenario(users, q, dist, b, prm, protocol, **kw)


class TestFileSizes:
    def test_presets(self):
        assert mean_file_size(LIGHT) / MB == pytest.approx(3.2, abs=0.005)
        assert mean_file_size(HEAVY) / MB == pytest.approx(5.08, abs=0.005)

    def test_single(self):
        assert mean_file_size([(123.0, 1.0)]) == 123.0

    @pytest.mark.parametrize("dist", [[], [(1.0, 0.5)], [(-1.0, 1.0)], [(1.0, 1.2), (2.0, -0.2)]])
    def test_invalid(self, dist):
        with pytest.raises(ValueError):
            mean_file_size(dist)


class TestActivity:
    def test_little(self):
        assert active_probability(25.6e6, 0.5, 0.01) == pytest.approx(0.512)
        assert active_probability(30e6, 1.0, 0.01) == pytest.approx(0.3)

    def test_edges(self):
        assert active_probability(1e6, 1.0, 0.0) == 0.0
        assert active_probability(1e6, 0.0, 0.1) == 1.0
        assert active_probability(1e9, 0.1, 1.0) == 1.0

    def test_base_stations(self):
        assert base_stations(1000, 1.0, 1.5) == pytest.approx(5.0)
        assert base_stations(1000, 0.0, 3.0) == 0.0
        assert base_stations(1000, 0.512, 3.0) == pytest.approx(5.12)

    def test_unstable_flag(self):
        res = scenario(q=0.03, dist=HEAVY).evaluate()
        assert res.unstable
        assert res.active_probability == 1.0
        assert res.n_bs_fractional == pytest.approx(5.0)
        assert res.n_bs_integral == 5

    def test_result_consistency(self):
        res = scenario(q=0.01, b=3.0).evaluate()
        assert res.n_bs_integral == math.ceil(res.n_bs_fractional)
        assert res.expected_active_users == pytest.approx(1000 * res.active_probability)
        assert not res.unstable


class TestEffectiveThroughput:
    def test_caps(self):
        assert effective_throughput("ideal", 100.0, FlowParams(0.0, 0.1)) == pytest.approx(4.0)
        assert effective_throughput("ideal", 100.0, FlowParams(0.0, 0.5)) == pytest.approx(0.8)
        for proto in ("tcp", "nc"):
            assert effective_throughput(proto, 100.0, FlowParams(0.0, 0.1)) == pytest.approx(4.0)
            assert effective_throughput(proto, 100.0, FlowParams(0.1, 0.1, redundancy=1.2)) <= 4.0

    @pytest.mark.parametrize("b", [0.3, 1.0, 4.0, 10.0])
    def test_zero_loss_agreement(self, b):
        prm = FlowParams(0.0, 0.1)
        vals = {effective_throughput(proto, b, prm) for proto in ("ideal", "tcp", "nc")}
        assert len(vals) == 1

    def test_loss_ceiling(self):
        prm = FlowParams(0.1855, 0.1, redundancy=1.3)
        for proto in ("ideal", "tcp", "nc"):
            assert effective_throughput(proto, 1.0, prm) <= 1.0 * (1 - 0.1855) + 1e-12

    def test_unknown_protocol(self):
        with pytest.raises(ValueError):
            effective_throughput("quic", 1.0, FlowParams(0.0, 0.1))


class TestMonteCarlo:
    def test_no_arrivals(self):
        tr = monte_carlo_occupancy(scenario(q=0.0), 50, seed=1)
        assert tr.active_users.sum() == 0
        assert tr.n_bs_ceil.sum() == 0

    def test_deterministic(self):
        a = monte_carlo_occupancy(scenario(), 100, seed=5)
        b = monte_carlo_occupancy(scenario(), 100, seed=5)
        assert np.array_equal(a.active_users, b.active_users)

    def test_little_law(self):
        sc = scenario(q=0.01, b=1.0, users=300)
        frac = np.mean([monte_carlo_occupancy(sc, 1000, seed=s).mean_active_fraction for s in range(3)])
        assert frac == pytest.approx(sc.evaluate().active_probability, abs=0.05)

    def test_unstable_saturates(self):
        tr = monte_carlo_occupancy(scenario(q=0.03, b=0.5, dist=HEAVY), 600, seed=2)
        assert tr.tail(0.3).mean_active_fraction > 0.95
        assert set(tr.tail(0.3).n_bs_ceil.tolist()) == {5}

    def test_processor_sharing(self):
        # one user, one 8 Mb file at 1 Mbps: busy for 8 s = 80 ticks
        sc = ProvisioningScenario(1, 10.0, [(8e6, 1.0)], 1.0, FlowParams(0.0, 0.1))
        tr = monte_carlo_occupancy(sc, 0.1, seed=0)
        assert tr.active_users.tolist() == [1]


def test_sweep_dominance():
    rows = provision_sweep([0.5, 1, 2, 4, 8], [0.0, 0.0199, 0.0587, 0.0963, 0.1855],
                           [0.005, 0.01, 0.03], [LIGHT, HEAVY], ("tcp", "nc"))
    assert set(rows[0]) == set(SWEEP_COLUMNS)
    keyed = {(r["B_mbps"], r["p"], r["q_user"], r["mu_f_mb"], r["protocol"]): r for r in rows}
    for key, row in keyed.items():
        if key[-1] == "nc":
            tcp = keyed[key[:-1] + ("tcp",)]
            assert row["throughput_mbps"] >= tcp["throughput_mbps"]
            assert row["n_bs_frac"] <= tcp["n_bs_frac"] + 1e-12
