import json

import numpy as np
import pytest

from gsfmix import harness
from gsfmix.errors import ParseError, RaggedRows, TrialSumMismatch, UnknownModel
from gsfmix.harness import (REGISTRY, RunConfig, SelectionReport, ReplicationFailure, ar_covariance, emit_report,
                            ingest_csv, read_report, registry_lookup, replication_seed, run_replications)


class TestRegistry:
    def test_expected_ids(self):
        ids = {f"multinomial-{i}" for i in range(1, 8)}
        ids |= {f"gaussian-{i}{s}" for i in range(1, 6) for s in "ab"} | {"f1", "f2"}
        assert set(REGISTRY) == ids

    @pytest.mark.parametrize("model_id", sorted(REGISTRY))
    def test_valid_measures(self, model_id):
        m = registry_lookup(model_id)
        assert m.measure.weights.sum() == pytest.approx(1.0)
        assert m.measure.K == m.K0
        if m.kernel_id == "multinomial":
            np.testing.assert_allclose(m.measure.atoms.sum(axis=1), 1.0)
            assert m.trials == 50
        # distinct atoms
        diffs = m.measure.atoms[:, None] - m.measure.atoms[None]
        assert np.all(np.linalg.norm(diffs, axis=-1)[np.triu_indices(m.K0, 1)] > 0)

    def test_orders(self):
        assert [registry_lookup(f"multinomial-{i}").K0 for i in range(1, 8)] == [2, 3, 4, 5, 6, 7, 8]
        assert [registry_lookup(f"gaussian-{i}a").K0 for i in range(1, 6)] == [2, 4, 3, 5, 5]
        assert registry_lookup("f1").K0 == 2 and registry_lookup("f2").K0 == 3

    def test_covariances(self):
        np.testing.assert_array_equal(registry_lookup("gaussian-3a").covariance, np.eye(4))
        np.testing.assert_allclose(registry_lookup("gaussian-3b").covariance, ar_covariance(4))
        assert registry_lookup("gaussian-3b").covariance[0, 2] == pytest.approx(0.25)

    @pytest.mark.parametrize("d", range(1, 9))
    def test_ar_covariance_spd(self, d):
        S = ar_covariance(d)
        np.testing.assert_allclose(S, S.T)
        assert np.all(np.linalg.eigvalsh(S) > 0)

    def test_unknown(self):
        with pytest.raises(UnknownModel, match="no-such"):
            registry_lookup("no-such")

    def test_sample_shape_and_determinism(self):
        m = registry_lookup("multinomial-3")
        a, b = m.sample(30, 5), m.sample(30, 5)
        np.testing.assert_array_equal(a.observations, b.observations)
        assert a.observations.shape == (30, 3) and np.all(a.observations.sum(axis=1) == 50)

    def test_with_trials(self):
        assert registry_lookup("multinomial-1").with_trials(80).sample(5, 0).observations.sum(axis=1).tolist() == [80] * 5
        with pytest.raises(ValueError):
            registry_lookup("f1").with_trials(10)

    def test_replication_seeds_distinct(self):
        seeds = {replication_seed(0, r) for r in range(200)}
        assert len(seeds) == 200 and replication_seed(0, 3) == replication_seed(0, 3)


class TestIngest:
    def test_gaussian(self, tmp_path):
        p = tmp_path / "g.csv"
        p.write_text("1.0,2.0\n3.5,-1\n0,0\n")
        ds = ingest_csv(p)
        np.testing.assert_array_equal(ds.observations, [[1, 2], [3.5, -1], [0, 0]])

    def test_header(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("pine,oak,birch\n10,20,70\n30,30,40\n")
        ds = ingest_csv(p, "multinomial", header=True)
        assert ds.observations.shape == (2, 3) and ds.trials == 100

    def test_trial_mismatch_names_row(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("50,50\n40,60\n49,50\n")
        with pytest.raises(TrialSumMismatch, match="row 3 sums to 99, expected 100"):
            ingest_csv(p, "multinomial")

    def test_explicit_trials(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("5,5\n4,6\n")
        with pytest.raises(TrialSumMismatch, match="row 1"):
            ingest_csv(p, "multinomial", trials=20)

    def test_ragged(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(RaggedRows, match="row 2"):
            ingest_csv(p)

    def test_parse_error(self, tmp_path):
        p = tmp_path / "p.csv"
        p.write_text("1,2\n3,x\n")
        with pytest.raises(ParseError, match="row 2, column 2"):
            ingest_csv(p)

    def test_negative_counts(self, tmp_path):
        p = tmp_path / "n.csv"
        p.write_text("1,2\n-1,4\n")
        with pytest.raises(ParseError, match="row 2, column 1"):
            ingest_csv(p, "multinomial")

    def test_empty(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("a,b\n")
        with pytest.raises(ParseError):
            ingest_csv(p, header=True)


def _report(orders, methods=("bic",), K0=2):
    return SelectionReport("f1", K0, 100, 5, 0, tuple(methods), tuple(tuple(o) for o in orders), ())


class TestReport:
    def test_all_correct(self):
        text = emit_report(_report([(2,)] * 4))
        lines = text.strip().splitlines()
        assert lines[0] == "K_hat,bic"
        assert lines[1:] == ["1,0.000", "2,1.000"]

    def test_mixed(self):
        rep = _report([(2, 3), (2, 2), (1, 2), (2, 2)], methods=("a", "b"))
        rows = emit_report(rep).strip().splitlines()
        assert rows == ["K_hat,a,b", "1,0.250,0.000", "2,0.750,0.750", "3,0.000,0.250"]
        assert rep.proportion("a") == 0.75

    def test_json_round_trip(self, tmp_path):
        rep = SelectionReport("f1", 2, 100, 5, 7, ("bic", "gsf-scad"), ((2, None), (3, 2)),
                              ((0, "gsf-scad", "boom"),))
        text = emit_report(rep, "json", tmp_path / "r.json")
        assert (tmp_path / "r.json").read_text() == text
        assert read_report(text) == rep
        assert json.loads(text)["seed"] == 7

    def test_failures_excluded(self):
        rep = _report([(2,), (None,), (3,)])
        assert rep.selections("bic") == [2, 3] and rep.proportion("bic") == 0.5

    def test_bad_format(self):
        with pytest.raises(ValueError):
            emit_report(_report([(2,)]), "xml")


class TestRunConfig:
    @pytest.mark.parametrize("kw", [dict(replications=0), dict(n=0), dict(K_bound=0), dict(workers=0),
                                    dict(methods=("nope",))])
    def test_invalid(self, kw):
        base = dict(model="f1", n=50)
        base.update(kw)
        with pytest.raises(ValueError):
            RunConfig(**base)


class TestRunReplications:
    def test_small_run(self, tmp_path):
        cfg = RunConfig("f1", 120, replications=2, K_bound=3, methods=("bic", "gsf-scad"), seed=1,
                        output_dir=tmp_path, grid_count=8)
        rep = run_replications(cfg)
        assert len(rep.orders) == 2 and all(len(r) == 2 for r in rep.orders)
        assert all(1 <= o <= 3 for r in rep.orders for o in r)
        assert read_report((tmp_path / "report.json").read_text()) == rep
        assert (tmp_path / "report.csv").read_text().startswith("K_hat,bic,gsf-scad\n")

    def test_deterministic_and_worker_independent(self):
        cfg = RunConfig("f1", 80, replications=3, K_bound=3, methods=("bic", "naive-scad"), seed=4, grid_count=6)
        a = emit_report(run_replications(cfg), "json")
        b = emit_report(run_replications(cfg), "json")
        c = emit_report(run_replications(RunConfig(**{**cfg.__dict__, "workers": 2})), "json")
        assert a == b == c

    def test_failure_threshold(self, monkeypatch):
        calls = iter(range(100))

        def fake(model, dataset, methods, *args):
            i = next(calls)
            return {m: ("Boom: x" if i % 4 == 0 else 2) for m in methods}

        monkeypatch.setattr(harness, "run_methods", fake)
        with pytest.raises(ReplicationFailure, match="3 of 10"):
            run_replications(RunConfig("f1", 50, replications=10, methods=("bic",)))

    def test_failures_below_threshold_recorded(self, monkeypatch):
        calls = iter(range(100))

        def fake(model, dataset, methods, *args):
            i = next(calls)
            return {m: ("Boom: x" if i == 5 else 2) for m in methods}

        monkeypatch.setattr(harness, "run_methods", fake)
        rep = run_replications(RunConfig("f1", 50, replications=10, methods=("bic",)))
        assert rep.failures == ((5, "bic", "Boom: x"),) and rep.proportion("bic") == 1.0
