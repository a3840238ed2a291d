import filecmp

import pytest

from nctcp import experiments as ex


def small(kind="table1", **kw):
    kw.setdefault("replications", 1)
    kw.setdefault("duration_s", 60.0)
    return ex.ExperimentSpec(kind=kind, **kw)


class TestSpec:
    def test_load(self, tmp_path):
        path = tmp_path / "e.toml"
        path.write_text('kind = "redundancy_sweep"\np = [0.0963]\nR = [1.1, 1.2]\nreplications = 3\n')
        spec = ex.load_spec(path)
        assert spec.R == (1.1, 1.2)
        assert spec.seeds() == [0, 1, 2]

    def test_override(self, tmp_path):
        path = tmp_path / "e.toml"
        path.write_text('kind = "table1"\n')
        spec = ex.load_spec(path, base_seed=40, replications=2, output=None)
        assert spec.seeds() == [40, 41]

    def test_field_diagnostics(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('kind = "congestion"\np = [0.1]\nreplications = 0\n')
        with pytest.raises(ex.ConfigError) as err:
            ex.load_spec(path)
        msg = str(err.value)
        assert "replications" in msg and "'C'" in msg and str(path) in msg

    def test_syntax_error_has_line(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('kind = "table1"\nR = [1.0,\n')
        with pytest.raises(ex.ConfigError, match="line"):
            ex.load_spec(path)

    def test_unknown_field(self):
        with pytest.raises(ex.ConfigError, match="colour"):
            ex.spec_from_mapping({"kind": "table1", "colour": 3})

    def test_list_expected(self):
        with pytest.raises(ex.ConfigError, match="expected a list"):
            ex.spec_from_mapping({"kind": "erasure_sweep", "p": 0.1})

    def test_q_link_conversion(self):
        spec = small("erasure_sweep", q_link=(0.05,))
        assert spec.losses[0] == pytest.approx(0.1855, abs=5e-5)


class TestRun:
    def test_table1_shape(self):
        res = ex.run_experiment(small(table_rows=((0.0, 1.0), (0.0963, 1.13))))
        rows = res.table("table1")
        assert [r["p"] for r in rows] == [0.0, 0.0963]
        assert set(rows[0]) == set(ex.TABLE1_COLUMNS)
        assert len(res.table("raw")) == 4

    def test_byte_identical(self, tmp_path):
        spec = small("erasure_sweep", p=(0.0963,), R=(1.2,))
        a = ex.run_experiment(spec).write(tmp_path / "a")
        b = ex.run_experiment(spec).write(tmp_path / "b")
        for pa, pb in zip(a, b):
            assert filecmp.cmp(pa, pb, shallow=False)

    def test_parallel_matches_serial(self):
        spec = small("redundancy_sweep", p=(0.0963,), R=(1.1, 1.2), replications=3)
        assert ex.run_experiment(spec, workers=2).table("raw") == ex.run_experiment(spec).table("raw")

    def test_seeds_and_aggregate(self):
        spec = small("redundancy_sweep", p=(0.0963,), R=(1.12,), replications=3, base_seed=7)
        res = ex.run_experiment(spec)
        raw = res.table("raw")
        assert [r["seed"] for r in raw] == [7, 8, 9]
        agg = res.table("aggregate")[0]
        vals = [r["mean_throughput_mbps"] for r in raw]
        assert agg["n"] == 3
        assert agg["mean_throughput_mbps"] == pytest.approx(sum(vals) / 3)

    def test_csv_round_trip(self, tmp_path):
        res = ex.run_experiment(small(table_rows=((0.0587, 1.09),)))
        paths = {p.stem: p for p in res.write(tmp_path)}
        assert ex.read_csv(paths["raw"]) == res.table("raw")
        assert ex.read_csv(paths["table1"]) == res.table("table1")

    def test_analytic(self):
        res = ex.run_experiment(ex.ExperimentSpec(kind="analytic_only", p=(0.0, 0.0963), R=(1.13,)))
        rows = res.table("analytic")
        assert rows[0]["tcp_mbps"] == pytest.approx(0.5)
        assert rows[1]["recommended_R"] == pytest.approx(1.13)

    def test_provision(self):
        spec = ex.ExperimentSpec(kind="provision_sweep", p=(0.0,), B=(1.0,), q_user=(0.01,),
                                 monte_carlo=True, replications=1, duration_s=20.0, users=50)
        res = ex.run_experiment(spec)
        assert len(res.table("provision")) == 3
        assert len(res.table("occupancy")) == 1

    def test_congestion_measure_window(self):
        spec = small("congestion", p=(0.0963,), R=(1.2,), C=(0.9,), flows=2,
                     stagger=(20.0, 40.0), measure=(20.0, 40.0), protocols=("nc",))
        raw = ex.run_experiment(spec).table("raw")
        assert [r["flow_id"] for r in raw] == [0, 1]


class TestCompare:
    def test_identical(self):
        devs = ex.compare_model_vs_sim({"a": 1.0, "b": 2.0}, {"a": 1.0, "b": 2.0}, rel_tol=0.0)
        assert all(d.abs_dev == 0 and not d.flagged for d in devs)

    def test_flags(self):
        devs = ex.compare_model_vs_sim({"a": 1.0, "b": 1.0}, {"a": 1.04, "b": 2.5}, rel_tol=0.05, factor=2)
        assert [d.flagged for d in devs] == [False, True]

    def test_mismatch(self):
        with pytest.raises(ValueError, match="row sets differ"):
            ex.compare_model_vs_sim({"a": 1.0}, {"b": 1.0})
