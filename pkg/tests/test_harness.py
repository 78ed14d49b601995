import csv
import json
import math

import numpy as np
import pytest

from risas.harness import (
    AGG_HEADER,
    SEED_HEADER,
    ExperimentResult,
    ExperimentSpec,
    aggregate,
    dbm_to_mw,
    emit_results,
    load_spec,
    main,
    run_experiment,
    spec_from_dict,
)
from risas.model import CONTINUOUS, SystemConfig

SMALL = SystemConfig.uniform(N=5, T=2, M=4, K=2, Nk=2, Lk=2, p=dbm_to_mw(-5),
                             sigma2=1e-12, q_bits=2)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_dbm_conversion():
    assert dbm_to_mw(-120) == pytest.approx(1e-12)
    assert dbm_to_mw(0) == 1.0


def test_aggregate():
    mean, std, n = aggregate([1.0, 2.0, math.nan, 3.0])
    assert (mean, n) == (2.0, 3)
    assert std == pytest.approx(1.0)
    assert aggregate([])[2] == 0


def test_single_random_row_is_deterministic():
    spec = ExperimentSpec(base=SMALL, schemes=("random",), n_realizations=1, seed0=4)
    a, b = run_experiment(spec), run_experiment(spec)
    assert len(a.records) == 1
    assert a.records == b.records


def test_schemes_share_channels():
    spec = ExperimentSpec(base=SMALL, schemes=("so", "ao", "random"), n_realizations=3,
                          sweep_var="power_dbm", sweep_values=(-10, 0))
    res = run_experiment(spec)
    assert not res.failures
    by_seed = {}
    for r in res.records:
        by_seed.setdefault((r.sweep_value, r.seed), set()).add(r.checksum)
    assert all(len(v) == 1 for v in by_seed.values())
    assert len(res.records) == 2 * 3 * 3
    for value in (-10, 0):
        for scheme in spec.schemes:
            assert len(res.values(value, scheme)) == 3


def test_sweep_points():
    spec = ExperimentSpec(base=SMALL, sweep_var="q_bits", sweep_values=(1, CONTINUOUS))
    assert [c.q_bits for _, c in spec.points()] == [1, CONTINUOUS]
    spec = ExperimentSpec(base=SMALL, sweep_var="rf_chains", sweep_values=(1, 3))
    assert [c.T for _, c in spec.points()] == [1, 3]
    with pytest.raises(ValueError):
        ExperimentSpec(base=SMALL, sweep_var="rf_chains", sweep_values=(5,))
    with pytest.raises(ValueError):
        ExperimentSpec(base=SMALL, sweep_var="power_dbm", sweep_values=())
    with pytest.raises(ValueError):
        ExperimentSpec(base=SMALL, schemes=("magic",))


def test_emit_empty_gives_headers(tmp_path):
    emit_results(ExperimentResult("power_dbm"), "csv", tmp_path)
    assert _read(tmp_path / "results.csv") == [SEED_HEADER]
    assert _read(tmp_path / "aggregate.csv") == [AGG_HEADER]


def test_csv_round_trip_and_bytes(tmp_path):
    spec = ExperimentSpec(base=SMALL, schemes=("so", "random"), n_realizations=4,
                          sweep_var="power_dbm", sweep_values=(-10, -5))
    res = run_experiment(spec)
    emit_results(res, "csv", tmp_path / "a")
    emit_results(res, "csv", tmp_path / "b")
    for name in ("results.csv", "aggregate.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    rows = _read(tmp_path / "a" / "results.csv")[1:]
    groups = {}
    for var, value, scheme, seed, rate in rows:
        groups.setdefault((value, scheme), []).append(float(rate))
    for var, value, scheme, mean, std, n in _read(tmp_path / "a" / "aggregate.csv")[1:]:
        vals = groups[(value, scheme)]
        assert int(n) == len(vals)
        assert abs(float(mean) - np.mean(vals)) <= 1e-12 * abs(float(mean))
        assert abs(float(std) - np.std(vals, ddof=1)) <= 1e-12 * max(abs(float(std)), 1)


def test_json_mirrors_csv(tmp_path):
    spec = ExperimentSpec(base=SMALL, schemes=("random",), n_realizations=3)
    res = run_experiment(spec)
    emit_results(res, "csv", tmp_path)
    emit_results(res, "json", tmp_path)
    rows = _read(tmp_path / "results.csv")
    table = json.loads((tmp_path / "results.json").read_text())
    assert [dict(zip(rows[0], r)) for r in rows[1:]] == table
    for rec, row in zip(res.records, table):
        assert float(row["sum_rate_bpshz"]) == rec.sum_rate


def test_pdd_traces_written(tmp_path):
    spec = ExperimentSpec(base=SMALL, schemes=("pdd",), n_realizations=2, trace=True,
                          sweep_var="q_bits", sweep_values=(1, 2))
    res = run_experiment(spec)
    emit_results(res, "csv", tmp_path)
    for q in (1, 2):
        rows = _read(tmp_path / f"trace_q_bits_{q}.csv")
        assert rows[0] == ["scheme", "seed", "outer_iter", "h", "rho", "sum_rate"]
        assert {r[1] for r in rows[1:]} == {"0", "1"}


def test_parallel_matches_serial():
    spec = ExperimentSpec(base=SMALL, schemes=("so", "random"), n_realizations=3)
    assert run_experiment(spec, jobs=2).records == run_experiment(spec).records


def test_config_parsing(tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(
        "system: {N: 6, T: 2, M: 4, K: 3, Nk: 2, Lk: 1, power_dbm: 0, noise_dbm: -90, q_bits: inf}\n"
        "fading: {pathloss_db: -100}\n"
        "sweep: {q_bits: [1, 3, inf]}\n"
        "schemes: [so]\n"
        "realizations: 7\n"
        "pdd: {chi: 0.5}\n")
    spec = load_spec(cfg, sweep="qbits")
    assert spec.base.pk == (1.0,) * 3 and spec.base.sigma2 == pytest.approx(1e-9)
    assert spec.base.q_bits == CONTINUOUS
    assert spec.sweep_values == (1, 3, CONTINUOUS)
    assert spec.n_realizations == 7 and spec.pdd.chi == 0.5
    assert spec.fading.pathloss_db == -100
    with pytest.raises(ValueError):
        spec_from_dict({"pdd": {"nonsense": 1}})
    with pytest.raises(ValueError):
        spec_from_dict({"system": {"Q": 3}})


def test_cli(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("system: {N: 5, T: 2, M: 4, K: 2, Nk: 2, Lk: 2}\n"
                   "sweep: {rf_chains: [1, 2]}\n")
    out = tmp_path / "out"
    code = main(["--config", str(cfg), "--schemes", "so,random", "--realizations", "2",
                 "--seed", "3", "--sweep", "rf", "--out", str(out)])
    assert code == 0
    rows = _read(out / "results.csv")
    assert len(rows) == 1 + 2 * 2 * 2
    assert rows[1][:4] == ["rf_chains", "1", "so", "3"]
    with pytest.raises(SystemExit):
        main(["--config", str(tmp_path / "missing.yaml")])
