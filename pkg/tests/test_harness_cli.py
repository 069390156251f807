from __future__ import annotations

import csv

import pytest

from fedplace.cli import main
from fedplace.dag import ConfigError
from fedplace.harness import (
    PHASES,
    ROW_COLUMNS,
    ROWS_HEADER,
    SUMMARY_HEADER,
    ScenarioConfig,
    fit_window,
    parse_config,
    parse_failures,
    parse_seeds,
    phase_cells,
    read_rows,
)

TINY = """
[scenario]
schema_version = 1
strategy = market
pipeline_kind = anomaly-sp

[workload]
lambda = 2
seeds = 0-4
duration_s = 20
warmup_s = 5
"""


def write_cfg(tmp_path, text=TINY):
    p = tmp_path / "cell.ini"
    p.write_text(text)
    return str(p)


def test_parse_config_reads_every_section():
    cfg = parse_config(TINY + "\n[market]\nwan_cost = 12\nprice_reservations = no\n"
                       "[failures]\nevents = 10:worker-kill:d3; 12:partition-start; 15:partition-end\n")
    assert cfg.pipeline_kind == "anomaly-sp" and cfg.seeds == (0, 1, 2, 3, 4)
    assert cfg.market.wan_cost == 12 and not cfg.market.price_reservations
    assert [e.kind for e in cfg.failures.events] == ["worker-kill", "partition-start", "partition-end"]


@pytest.mark.parametrize("text", [
    TINY + "\n[workload2]\nx = 1\n",
    TINY.replace("lambda = 2", "lambda = 2\nlamda = 3"),
    TINY.replace("schema_version = 1", "schema_version = 2"),
    TINY.replace("strategy = market", "strategy = heft"),
    TINY.replace("lambda = 2", "lambda = fast"),
    TINY.replace("lambda = 2", "lambda = -1"),
    "not an ini file",
])
def test_parse_config_rejects_bad_input(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_parse_helpers():
    assert parse_seeds("0,3-5") == (0, 3, 4, 5)
    with pytest.raises(ConfigError):
        parse_seeds("a")
    assert parse_failures("").events == ()
    with pytest.raises(ConfigError):
        parse_failures("soon:worker-kill")


def test_phase_cells_shapes():
    base = ScenarioConfig()
    assert len(phase_cells("allocation-grid", base)) == 7 * 3 * 3
    assert len(phase_cells("governance-grid", base)) == 12
    assert {c.heterogeneity for c in phase_cells("heterogeneity", base)} == {True}
    assert len(phase_cells("saturation", base, knee=50.0)) == 10
    with pytest.raises(ConfigError):
        phase_cells("saturation", base)
    with pytest.raises(ConfigError):
        phase_cells("warp", base)
    assert set(PHASES) >= {"federation", "failure-load", "knee-calibration"}


def test_fit_window_cuts_after_first_floor_point():
    pts = [(i, cr) for i, cr in enumerate([1, 1, 1, 0.6, 0.05, 0.0, 0.0])]
    assert fit_window(pts) == pts[:5]
    assert fit_window(pts[:3] + [(9, 0.0)]) == pts[:3] + [(9, 0.0)]
    assert fit_window([(1, 1.0), (2, 1.0)]) == [(1, 1.0), (2, 1.0)]


def test_run_cell_writes_rows_and_summary(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run-cell", "--config", write_cfg(tmp_path), "--out", str(out), "--parallel", "2"]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert len(files) == 6 and "market_anomaly-sp_2_summary.csv" in files
    rows = read_rows(out / "market_anomaly-sp_2_0.csv")
    assert rows and set(rows[0]) == set(ROW_COLUMNS)
    summary = (out / "market_anomaly-sp_2_summary.csv").read_text().splitlines()
    assert summary[0] == SUMMARY_HEADER
    body = list(csv.DictReader(summary[1:]))
    assert [r["seed"] for r in body] == ["0", "1", "2", "3", "4", "-1"]
    assert "wrote 6 files" in capsys.readouterr().out


def test_seed_flag_overrides_config(tmp_path):
    out = tmp_path / "o"
    assert main(["run-cell", "--config", write_cfg(tmp_path), "--out", str(out), "--seeds", "7"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["market_anomaly-sp_2_7.csv",
                                                    "market_anomaly-sp_2_summary.csv"]


def test_existing_output_needs_force(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "o")
    assert main(["run-cell", "--config", cfg, "--out", out, "--seeds", "0"]) == 0
    before = (tmp_path / "o" / "market_anomaly-sp_2_0.csv").read_text()
    assert main(["run-cell", "--config", cfg, "--out", out, "--seeds", "0"]) == 1
    assert "exists" in capsys.readouterr().err
    assert main(["run-cell", "--config", cfg, "--out", out, "--seeds", "0", "--force"]) == 0
    # same seed, same bytes
    assert (tmp_path / "o" / "market_anomaly-sp_2_0.csv").read_text() == before


def test_config_errors_exit_one(tmp_path):
    assert main(["run-cell", "--config", str(tmp_path / "missing.ini")]) == 1
    assert main(["run-cell", "--config", write_cfg(tmp_path, TINY.replace("lambda", "lambada"))]) == 1
    assert main(["accept", "--filter", "nonsense"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["launch"])
    assert exc.value.code == 1


def test_accept_exit_code_counts_failures(monkeypatch):
    from fedplace import acceptance

    fake = [acceptance.CriterionResult(i, "x", i != 2 and i != 3, "", 0.0) for i in range(1, 5)]
    monkeypatch.setattr(acceptance, "run_acceptance", lambda *a, **k: fake)
    assert main(["accept"]) == 3
    monkeypatch.setattr(acceptance, "run_acceptance", lambda *a, **k: fake[:1])
    assert main(["accept"]) == 0


def test_accept_runs_a_fast_criterion(capsys):
    assert main(["accept", "--filter", "structure"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "structure" in out


def test_report_lists_summaries(tmp_path, capsys):
    out = tmp_path / "o"
    main(["run-cell", "--config", write_cfg(tmp_path), "--out", str(out), "--seeds", "0"])
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "market anomaly-sp" in text and "seed=-1" in text
    (out / "bogus_summary.csv").write_text("# something-else v9\n")
    assert main(["report", "--out", str(out)]) == 1


def test_rows_header_is_versioned(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("# fedplace-rows v0\n" + ",".join(ROW_COLUMNS) + "\n")
    with pytest.raises(ConfigError):
        read_rows(p)
    assert ROWS_HEADER.endswith("v1")
