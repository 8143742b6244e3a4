import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from cuckoo_oram import Mode, OramParams
from cuckoo_oram.cli import main
from cuckoo_oram.errors import UsageError
from cuckoo_oram.experiments import (CSV_COLUMNS, ExperimentConfig, make_workload,
                                     max_buffer, measure_accesses, parse_requests,
                                     predicted_accesses, run_obliviousness_suite,
                                     run_oracle_soak, run_overhead_scaling, run_stash_sweep,
                                     sweep_csv, trial_seed)
from cuckoo_oram.hierarchy import COUNTING


@pytest.mark.parametrize("token, n, want", [("5000", 64, 5000), ("n", 64, 64), ("2n", 64, 128),
                                            ("0.25n", 64, 16), ("n/4", 64, 16)])
def test_parse_requests(token, n, want):
    assert parse_requests(token, n) == want


@pytest.mark.parametrize("token", ["abc", "0", "n/3", "-5"])
def test_parse_requests_rejects(token):
    with pytest.raises(UsageError):
        parse_requests(token, 64)


def test_validate_lists_every_problem():
    cfg = ExperimentConfig(variant="x", n=[1], trials=0, workload="/no/such/file")
    with pytest.raises(UsageError) as info:
        cfg.validate()
    msg = str(info.value)
    for name in ("variant", "n:", "trials", "workload"):
        assert name in msg


def test_workloads(tmp_path):
    assert make_workload("sequential", 4, 6, 0).tolist() == [0, 1, 2, 3, 0, 1]
    assert make_workload("repeat", 4, 3, 0).tolist() == [0, 0, 0]
    u = make_workload("uniform", 50, 1000, 3)
    assert u.tolist() == make_workload("uniform", 50, 1000, 3).tolist() and u.max() < 50
    path = tmp_path / "idx.txt"
    path.write_text("3 1\n2\n")
    assert make_workload(str(path), 4, 5, 0).tolist() == [3, 1, 2, 3, 1]
    with pytest.raises(UsageError):
        make_workload(str(path), 3, 5, 0)


def small_sweep(**kw):
    cfg = dict(n=[64, 128], requests=["n/2", "n"], trials=4, seed=11)
    cfg.update(kw)
    return ExperimentConfig(**cfg)


def test_sweep_rows_and_determinism():
    records = run_stash_sweep(small_sweep())
    assert len(records) == 2 * 2 * 4
    assert [(r.n, r.r, r.trial) for r in records[:5]] == [
        (64, 32, 1), (64, 32, 2), (64, 32, 3), (64, 32, 4), (64, 64, 1)]
    text = sweep_csv(records)
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert sweep_csv(run_stash_sweep(small_sweep(jobs=2))) == text
    for rec in records:
        assert rec.overflowed == (rec.max_stash_demand > rec.stash_capacity)
        assert rec.wall_ms is None


def test_trial_independent_of_order():
    full = run_stash_sweep(small_sweep(n=[64], trials=3))
    alone = run_stash_sweep(small_sweep(n=[64], trials=1, seed=11))
    assert [r.max_stash_demand for r in full if r.trial == 1] == \
        [r.max_stash_demand for r in alone]


def test_prefix_runs_match_separate_runs():
    cfg = small_sweep(n=[64], requests=["n/2", "n"], trials=2)
    short = run_stash_sweep(replace(cfg, requests=["n/2"]))
    both = run_stash_sweep(cfg)
    assert [r.max_stash_demand for r in short] == \
        [r.max_stash_demand for r in both if r.r == 32]


def test_functional_sweep_matches_protocol_sweep():
    sim = run_stash_sweep(small_sweep(n=[64], trials=2))
    full = run_stash_sweep(small_sweep(n=[64], trials=2, mode="oblivious", cipher="transparent",
                                       nu=2.0))
    assert [r.max_stash_demand for r in sim] == [r.max_stash_demand for r in full]


def test_sweep_outputs(tmp_path):
    out = tmp_path / "sweep.csv"
    run_stash_sweep(small_sweep(out=str(out)))
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 16
    dat = out.with_suffix(".dat").read_text().splitlines()
    assert dat[0].startswith("#") and len(dat[1].split()) == 4
    meta = json.loads(out.with_suffix(".meta.json").read_text())
    assert meta["stash_capacity"]["64"] == {"log2": 6, "ln": 5}


@pytest.mark.parametrize("variant, n", [("prf", 40), ("tree", 16)])
@pytest.mark.parametrize("nu", [1.0, 2.0])
def test_predicted_equals_counted(variant, n, nu):
    params = OramParams(n, mode=Mode.OBLIVIOUS, cipher=COUNTING, nu=nu, master_seed=3)
    for r in (1, 7, 64):
        assert measure_accesses(variant, params, r, 5) == predicted_accesses(variant, params, r)


def test_max_buffer_fits_workspace():
    params = OramParams(256, mode=Mode.OBLIVIOUS, cipher=COUNTING)
    big = replace(params, workspace_cells=max_buffer("prf", params))
    assert predicted_accesses("prf", big, 200) < predicted_accesses("prf", params, 200)


def test_soak_pass_and_fault(tmp_path):
    report = tmp_path / "soak.json"
    cfg = ExperimentConfig(n=[32], requests=["600"], trials=2, report_out=str(report),
                           out=str(tmp_path / "x.csv"))
    assert run_oracle_soak(cfg).status == "PASS"
    assert json.loads(report.read_text())["status"] == "PASS"
    bad = run_oracle_soak(cfg, fault_at=300)
    assert bad.status == "FAIL" and bad.divergence["op_index"] >= 300
    assert (tmp_path / "divergence-trial1.ckor").exists()


def test_tree_soak():
    cfg = ExperimentConfig(variant="tree", n=[16], requests=["300"], trials=2)
    assert run_oracle_soak(cfg).status == "PASS"
    assert run_oracle_soak(cfg, fault_at=100).status == "FAIL"


def test_obliviousness_suite_small(tmp_path):
    cfg = ExperimentConfig(mode="oblivious", n=[32], requests=["200"], trials=4, nu=2.0,
                           cipher="transparent", trace_out=str(tmp_path / "t.jsonl"))
    doc, ok = run_obliviousness_suite(cfg)
    names = [c["name"] for c in doc["checks"]]
    assert names[0] == "shape_digest" and doc["checks"][0]["verdict"] == "pass"
    assert "two_sample_pooled" in names
    assert (tmp_path / "t.repeat.jsonl").exists()
    leak, leak_ok = run_obliviousness_suite(cfg, leaky=True)
    assert leak["checks"][0]["verdict"] == "pass"
    assert not leak_ok


def test_obliviousness_suite_too_short():
    cfg = ExperimentConfig(mode="oblivious", n=[32], requests=["5"], nu=2.0,
                           cipher="transparent")
    doc, ok = run_obliviousness_suite(cfg)
    assert not ok
    verdicts = {c["name"]: c["verdict"] for c in doc["checks"]}
    assert verdicts["shape_digest"] == "pass"
    assert verdicts["two_sample_pooled"] == verdicts["two_sample_per_trial"] == "insufficient_data"


def test_obliviousness_needs_oblivious_mode():
    with pytest.raises(UsageError):
        run_obliviousness_suite(ExperimentConfig(n=[32]))


def test_overhead_small_ladder():
    cfg = ExperimentConfig(mode="oblivious", n=[64, 128, 256, 512, 1024])
    rows, fits, ok = run_overhead_scaling(cfg)
    assert [r["n"] for r in rows] == [64, 128, 256, 512, 1024]
    assert {f.model for f in fits} == {"log", "log2", "const"}
    log = next(f for f in fits if f.model == "log")
    assert ok == (log.r2 >= 0.98)


def test_cli_exit_codes(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--n", "64", "--trials", "2", "--out", str(out)]) == 0
    assert out.exists()
    assert main(["sweep", "--n", "1"]) == 2
    assert main(["soak", "--n", "32", "--requests", "300"]) == 0
    assert main(["soak", "--n", "32", "--requests", "300", "--fault-at", "100"]) == 1
    assert main(["oblivious", "--mode", "functional", "--n", "32"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["sweep", "--bogus"])
    assert info.value.code == 2
    capsys.readouterr()


def test_cli_wall_time_column(tmp_path):
    out = tmp_path / "w.csv"
    main(["sweep", "--n", "64", "--wall-time", "--out", str(out)])
    row = next(csv.DictReader(out.open()))
    assert float(row["wall_ms"]) >= 0


def test_trace_files_deterministic(tmp_path):
    texts = []
    for run in range(2):
        path = tmp_path / f"run{run}.jsonl"
        cfg = ExperimentConfig(mode="oblivious", n=[32], requests=["60"], trials=1, nu=2.0,
                               cipher="transparent", trace_out=str(path))
        run_obliviousness_suite(cfg)
        texts.append([(tmp_path / f"run{run}.{k}.jsonl").read_bytes()
                      for k in ("repeat", "sequential", "uniform")])
    assert texts[0] == texts[1]


def test_trial_seed():
    assert trial_seed(0, 1) == 12634128529936681850
    assert np.unique([trial_seed(5, k) for k in range(1, 50)]).size == 49
