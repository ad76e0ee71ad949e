import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from fockgen.analysis import synthesize_runs
from fockgen.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    SWEEP_COLUMNS,
    main,
    read_fit_dataset,
    write_fit_dataset,
)

GOLDEN = Path(__file__).parent / "golden"
CONFIGS = Path(__file__).parent.parent / "configs"


def closed_form_max_feasible_n(rep_rate, eta, floor, rate_floor, n_max):
    """Single mode, lossless signal: F = (1 - x (1 - eta))**(n + 1) with x = tanh(B)**2.

    p_n rises in x up to x = n / (n + 1); the fidelity floor caps x.
    """
    best = None
    for n in range(1, n_max + 1):
        x = min(n / (n + 1), (1 - floor ** (1 / (n + 1))) / (1 - eta))
        q = (1 - x) / (1 - x + eta * x)
        if rep_rate * q * (1 - q) ** n >= rate_floor:
            best = n
    return best


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# --------------------------------------------------------------------------- #
# sweep


def test_sweep_golden(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    code, _, _ = run(capsys, "sweep", "--config", GOLDEN / "sweep_small.cfg", "--out", out)
    assert code == EXIT_OK
    got, want = read_rows(out), read_rows(GOLDEN / "sweep_small.csv")
    assert list(got[0]) == SWEEP_COLUMNS
    assert len(got) == len(want) == 9
    for g, w in zip(got, want):
        for col in SWEEP_COLUMNS:
            assert float(g[col]) == pytest.approx(float(w[col]), rel=1e-13, abs=1e-300)


def test_sweep_golden_values_closed_form():
    for row in read_rows(GOLDEN / "sweep_small.csv"):
        b, n = float(row["B"]), int(row["n"])
        x = math.tanh(b) ** 2
        q = (1 - x) / ((1 - x) + 0.9 * x)
        assert float(row["p_n"]) == pytest.approx(q * (1 - q) ** n, rel=1e-13)
        assert float(row["F_single"]) == pytest.approx((1 - 0.1 * x) ** (n + 1), rel=1e-13)
        assert float(row["mean_photons_signal"]) == pytest.approx(math.sinh(b) ** 2, rel=1e-13)
        assert float(row["mean_photons_idler"]) == pytest.approx(0.9 * math.sinh(b) ** 2, rel=1e-13)


def test_sweep_byte_identical(tmp_path, capsys):
    paths = [tmp_path / f"s{i}.csv" for i in range(2)]
    for p in paths:
        assert run(capsys, "sweep", "--config", CONFIGS / "measured_source.cfg", "--out", p)[0] == EXIT_OK
    assert paths[0].read_bytes() == paths[1].read_bytes()
    meta = json.loads(paths[0].with_suffix(".json").read_text())
    assert meta["command"] == "sweep"
    assert meta["parameters"]["K"] == 1.61
    assert meta["eps_trunc"] == 1e-12


def test_sweep_metadata_path(tmp_path, capsys):
    meta = tmp_path / "meta.json"
    code, out, _ = run(capsys, "sweep", "--gains", "0.5", "--n", "1", "--meta", meta)
    assert code == EXIT_OK
    assert out.startswith(",".join(SWEEP_COLUMNS))
    assert json.loads(meta.read_text())["parameters"]["gains"] == "0.5"


def test_flag_overrides_config(tmp_path, capsys):
    out = tmp_path / "o.csv"
    code, _, _ = run(capsys, "sweep", "--config", GOLDEN / "sweep_small.cfg", "--gains", "0.7", "--out", out)
    assert code == EXIT_OK
    assert {r["B"] for r in read_rows(out)} == {"0.7"}


def test_single_mode_configs_reach_maxima(tmp_path, capsys):
    for eta in ("1.0", "0.9", "0.5"):
        out = tmp_path / f"single_{eta}.csv"
        assert run(capsys, "sweep", "--config", CONFIGS / f"single_mode_eta_idler_{eta}.cfg", "--out", out)[0] == 0
        rows = read_rows(out)
        for n in (1, 2, 5):
            best = max(float(r["p_n"]) for r in rows if int(r["n"]) == n)
            assert best == pytest.approx(n**n / (1 + n) ** (1 + n), abs=2e-4)


def test_multimode_fidelity_ceiling_decreases_with_modes(tmp_path, capsys):
    ceilings = []
    for K in ("1", "1.5", "2"):
        out = tmp_path / f"multi_{K}.csv"
        assert run(capsys, "sweep", "--config", CONFIGS / f"multimode_K_{K}.cfg", "--out", out)[0] == 0
        rows = [r for r in read_rows(out) if int(r["n"]) == 2]
        ceilings.append(max(float(r["F_single"]) for r in rows))
    assert ceilings[0] > ceilings[1] > ceilings[2]


# --------------------------------------------------------------------------- #
# errors


@pytest.mark.parametrize("argv", [
    ["sweep", "--gains", ""],
    ["sweep", "--gains", "1,0.5"],
    ["sweep", "--mu", "0.3", "--K", "2"],
    ["sweep", "--eta-idler", "1.5"],
    ["sweep", "--bogus"],
    ["frobnicate"],
])
def test_config_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == EXIT_CONFIG
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["kind"] == "config" and payload["exit_code"] == EXIT_CONFIG


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("mu = 0.1\ncolour = blue\n")
    code, _, err = run(capsys, "sweep", "--config", cfg)
    assert code == EXIT_CONFIG
    assert "colour" in json.loads(err)["error"]


def test_missing_file_is_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "fit", tmp_path / "nope.csv")
    assert code == EXIT_IO
    assert json.loads(err)["kind"] == "io"


def test_fit_schema_error_has_line_number(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    runs = synthesize_runs(1.61, 0.59, 0.64, [0.6, 0.9])
    write_fit_dataset(path, runs)
    lines = path.read_text().splitlines()
    lines[3] = lines[3].replace(lines[3].split(",")[2], "abc", 1)
    path.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "fit", path)
    assert code == EXIT_CONFIG
    assert "line 4" in json.loads(err)["error"]


# --------------------------------------------------------------------------- #
# other commands


def test_max_prob(capsys):
    code, out, _ = run(capsys, "max-prob", "--n", "1,5", "--eta-idler", "0.5")
    assert code == EXIT_OK
    maxima = json.loads(out)["maxima"]
    assert maxima[0]["prob"] == pytest.approx(0.25, abs=1e-10)
    assert maxima[1]["prob"] == pytest.approx(5**5 / 6**6, abs=1e-10)


def test_tradeoff(capsys):
    code, out, _ = run(capsys, "tradeoff", "--n", "2", "--eta-idler", "1.0", "--points", "5")
    assert code == EXIT_OK
    rows = list(csv.DictReader(out.splitlines()))
    assert len(rows) == 5
    assert all(float(r["F_single_max"]) == pytest.approx(1.0, abs=1e-12) for r in rows)


def test_feasibility_json(tmp_path, capsys):
    out = tmp_path / "feas.json"
    code, table, _ = run(capsys, "feasibility", "--config", CONFIGS / "feasibility.cfg", "--out", out)
    assert code == EXIT_OK
    assert "max feasible n" in table
    rep = json.loads(out.read_text())
    assert rep["max_feasible_n"] == closed_form_max_feasible_n(1e8, 0.9, 0.9, 0.1, 12)
    assert len(rep["per_n_max_rate"]) == 12


def test_feasibility_zero_rate_floor(capsys):
    code, out, _ = run(capsys, "feasibility", "--rate-floor", "0", "--n-max", "6")
    assert code == EXIT_OK
    assert json.loads(out)["max_feasible_n"] == 6


def test_feasibility_tight_floor(capsys):
    code, out, _ = run(capsys, "feasibility", "--fidelity-floor", "0.99")
    assert json.loads(out)["max_feasible_n"] < 9


def test_fit_round_trip(tmp_path, capsys):
    data = tmp_path / "runs.csv"
    write_fit_dataset(data, synthesize_runs(1.61, 0.59, 0.64, [0.6, 0.9, 1.2, 1.5]))
    again = read_fit_dataset(data)
    assert [r.run_id for r in again] == ["run0", "run1", "run2", "run3"]
    out, curves = tmp_path / "fit.json", tmp_path / "curves.csv"
    code, _, _ = run(capsys, "fit", data, "--out", out, "--curves", curves)
    assert code == EXIT_OK
    res = json.loads(out.read_text())
    assert res["K"] == pytest.approx(1.61, rel=1e-3)
    assert res["eta_idler"] == pytest.approx(0.59, rel=1e-3)
    assert res["eta_signal"] == pytest.approx(0.64, rel=1e-3)
    assert res["converged"]
    rows = read_rows(curves)
    assert {r["run_id"] for r in rows} == {"run0", "run1", "run2", "run3"}


def test_fit_dataset_rejects_inconsistent_mean(tmp_path, capsys):
    data = tmp_path / "runs.csv"
    write_fit_dataset(data, synthesize_runs(1.61, 0.59, 0.64, [0.6]))
    lines = data.read_text().splitlines()
    cells = lines[2].split(",")
    cells[-1] = "9.9"
    lines[2] = ",".join(cells)
    data.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "fit", data)
    assert code == EXIT_CONFIG
    assert "line 3" in json.loads(err)["error"]


def test_tes_pipeline(tmp_path, rng, capsys):
    labels = rng.choice(3, size=200_000, p=[0.5, 0.3, 0.2])
    events = np.array([0.0, 1.0, 2.0])[labels] + 0.2 * rng.standard_normal(labels.size)
    counts, edges = np.histogram(events, bins=150)
    hist_csv = tmp_path / "hist.csv"
    hist_csv.write_text("value,count\n" + "".join(
        f"{float(c)!r},{k}\n" for c, k in zip(0.5 * (edges[1:] + edges[:-1]), counts)))
    ev_csv = tmp_path / "events.csv"
    np.savetxt(ev_csv, events, header="value", comments="")
    fit_json, rec_json = tmp_path / "fit.json", tmp_path / "counts.json"

    assert run(capsys, "tes-fit", hist_csv, "--n-peaks", 3, "--out", fit_json)[0] == EXIT_OK
    fit = json.loads(fit_json.read_text())
    centers = [c["center"] for c in fit["components"]]
    assert np.allclose(centers, [0, 1, 2], atol=0.02)

    assert run(capsys, "tes-fit", ev_csv, "--n-peaks", 3, "--bins", 150)[0] == EXIT_OK

    assert run(capsys, "tes-assign", ev_csv, "--fit", fit_json, "--out", rec_json)[0] == EXIT_OK
    rec = json.loads(rec_json.read_text())
    assert rec["total"] == events.size
    assert sum(p["count"] for p in rec["photon_numbers"]) + rec["overflow"] == events.size
    for p, w in zip(rec["photon_numbers"], [0.5, 0.3, 0.2]):
        assert p["rate_low"] <= w <= p["rate_high"]


def test_tes_fit_mixed_columns_rejected(tmp_path, capsys):
    path = tmp_path / "mixed.csv"
    path.write_text("1.0,3\n2.0\n3.0,4\n")
    assert run(capsys, "tes-fit", path, "--n-peaks", 1)[0] == EXIT_CONFIG


def test_allan(tmp_path, rng, capsys):
    series = tmp_path / "series.csv"
    np.savetxt(series, rng.standard_normal(4096))
    code, out, _ = run(capsys, "allan", series, "--blocks", "1,4,16,64")
    assert code == EXIT_OK
    rows = list(csv.DictReader(out.splitlines()))
    assert [int(r["block_size"]) for r in rows] == [1, 4, 16, 64]
    av = np.array([float(r["allan_variance"]) for r in rows])
    assert np.all(np.diff(av) < 0)


def test_allan_too_short(tmp_path, capsys):
    series = tmp_path / "series.csv"
    np.savetxt(series, np.zeros(10))
    assert run(capsys, "allan", series, "--blocks", "8")[0] == EXIT_CONFIG
