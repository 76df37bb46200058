import csv
from dataclasses import replace

import numpy as np
import pytest

from caccsim.control import FallbackEvent
from caccsim.scenario import (
    REPLICATION_FIELDS,
    SUMMARY_FIELDS,
    ReplicationResult,
    ScenarioConfig,
    XiSummary,
    aggregate,
    run_replication,
    sweep,
    write_summary,
)
from caccsim.traffic import DemandSpec, Freeway, InjectedEvent, InvariantViolation, LanePolicy

SHORT = ScenarioConfig(horizon_s=240.0, warmup_s=60.0, replications=1, base_seed=3)


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# caccsim")
    return list(csv.DictReader(lines[1:]))


def synthetic(trials, successes, xi=(), ok=True, policy=LanePolicy.DL, mpr=0.4):
    return ReplicationResult(policy, mpr, 0, 0, ok=ok, trials=trials, successes=successes,
                             xi_samples=np.asarray(xi, dtype=float), measured_s=3600.0)


def test_all_successful():
    assert aggregate([synthetic(50, 50, [1.0])]).reception_rate == 1.0


def test_xi_statistics():
    s = XiSummary.of([100.0, 200.0, 300.0])
    # population convention: ((-100)^2 + 0 + 100^2) / 3; the n-1 value would be 10000
    assert (s.median, s.mean) == (200.0, 200.0)
    assert s.var == pytest.approx(20000.0 / 3.0, rel=1e-15)
    assert (s.q1, s.q3, s.min, s.max) == (150.0, 250.0, 100.0, 300.0)
    assert XiSummary.of([]) is None
    assert XiSummary.of([5.0]).var == 0.0


def test_pooled_rate_is_weighted():
    counts = [(10, 9), (1000, 950), (200, 200), (5, 1), (300, 270)]
    agg = aggregate([synthetic(t, s) for t, s in counts])
    oracle = sum(s for _, s in counts) / sum(t for t, _ in counts)
    assert agg.reception_rate == pytest.approx(oracle)
    assert agg.reception_rate != pytest.approx(np.mean([s / t for t, s in counts]))


def test_failed_replications_excluded():
    agg = aggregate([synthetic(10, 5), synthetic(10, 10, ok=False)])
    assert agg.trials == 10 and len(agg.failed) == 1


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate([synthetic(1, 1, ok=False)])
    with pytest.raises(ValueError):
        aggregate([synthetic(1, 1), synthetic(1, 1, mpr=0.5)])


def test_no_trials_reported_absent(tmp_path):
    agg = aggregate([synthetic(0, 0)])
    assert agg.reception_rate is None and agg.xi is None
    write_summary(tmp_path / "s.csv", [agg])
    row = read_csv(tmp_path / "s.csv")[0]
    assert row["reception_rate"] == "" and row["xi_mean"] == ""


def test_mpr_zero_run_has_no_trials():
    res = run_replication(SHORT.cell("DL", 0.0))
    assert res.ok and res.trials == 0 and res.reception_rate is None


def test_base_has_no_trials():
    res = run_replication(SHORT.cell("BASE", 0.5))
    assert res.ok and res.trials == 0


def test_single_replication_metrics():
    res = run_replication(SHORT)
    assert res.ok and res.trials > 0
    assert 0.0 <= res.reception_rate <= 1.0
    assert res.spawned == res.retired + res.on_network
    assert len(res.xi_samples) == res.trials


def test_warmup_excluded(tmp_path):
    cfg = replace(SHORT, reception_log=True)
    res = run_replication(cfg, 0, tmp_path)
    rows = read_csv(tmp_path / f"{cfg.tag(0)}_reception.csv")
    before = [r for r in rows if float(r["time_s"]) < cfg.warmup_s]
    after = [r for r in rows if float(r["time_s"]) >= cfg.warmup_s]
    assert before, "need some warm-up trials for the check to mean anything"
    assert res.trials == len(after)
    assert res.successes == sum(int(r["success"]) for r in after)


@pytest.mark.slow
def test_injected_odd_exit_logged_once(tmp_path):
    ev = InjectedEvent(1000.0, "platooned", FallbackEvent.ODD_EXIT)
    cfg = replace(SHORT, horizon_s=1100.0, warmup_s=300.0, injected_events=(ev,), fallback_log=True)
    res = run_replication(cfg, 0, tmp_path)
    rows = read_csv(tmp_path / f"{cfg.tag(0)}_fallback.csv")
    hits = [r for r in rows if r["from_mode"] == "CACC_PLATOONED" and r["to_mode"] == "HUMAN"]
    assert len(hits) == 1
    assert float(hits[0]["time_s"]) >= 1000.0 and hits[0]["event"] == "ODD_EXIT"
    assert res.injected_applied == 1


def test_byte_identical_outputs(tmp_path):
    cfg = replace(SHORT, reception_log=True, fallback_log=True, trajectory=True)
    for d in ("a", "b"):
        sweep(["DL"], [0.4], cfg, tmp_path / d, workers=1)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert len(names) == 5
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n


def test_different_seeds_differ():
    a = run_replication(SHORT, 0)
    b = run_replication(SHORT, 1)
    assert a.seed != b.seed and (a.spawned, a.trials) != (b.spawned, b.trials)


def test_sweep_counting(tmp_path):
    cfg = replace(SHORT, horizon_s=60.0, warmup_s=10.0, replications=5)
    aggs = sweep(["UML", "MML", "DL", "DLA"], [0.4], cfg, tmp_path, workers=2)
    assert len(aggs) == 4
    assert len(read_csv(tmp_path / "summary.csv")) == 4
    reps = read_csv(tmp_path / "replications.csv")
    assert len(reps) == 20
    assert list(reps[0]) == list(REPLICATION_FIELDS)
    assert list(read_csv(tmp_path / "summary.csv")[0]) == list(SUMMARY_FIELDS)
    assert {r["seed"] for r in reps} == {str(3 + k) for k in range(5)}


def test_invariant_breach_fails_replication(monkeypatch, tmp_path):
    def boom(self):
        raise InvariantViolation("synthetic breach")

    monkeypatch.setattr(Freeway, "check_invariants", boom)
    aggs = sweep(["DL"], [0.4], replace(SHORT, horizon_s=20.0, warmup_s=0.0), tmp_path, workers=1)
    assert aggs == [None]
    reps = read_csv(tmp_path / "replications.csv")
    assert reps[0]["status"].startswith("failed")


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(warmup_s=4000.0)
    with pytest.raises(ValueError):
        ScenarioConfig(policy=LanePolicy.DLA, access_zones=((10.0, 5.0),))
    with pytest.raises(ValueError):
        ScenarioConfig(forced_probability=1.5)
    assert ScenarioConfig().steps == 7800
    assert ScenarioConfig(demand=DemandSpec(mpr=0.7)).mpr == 0.7
