import csv
import json

import numpy as np
import pytest

from mrp.cli import EXIT_ERROR, EXIT_UNCONVERGED, main
from mrp.figure import FigureError, FigureOptions, count_panels, emit_state_grid_figure
from mrp.inference.results import SamplerConfig
from mrp.pipeline import LockError, PipelineConfig, PipelineError, run_pipeline
from mrp.poststrat import EstimateSeries
from mrp.replication import verify_manifest

STAMP = "2024-01-01T00:00:00Z"


@pytest.fixture(scope="module")
def simdir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--n", "2000", "--seed", "1", "--truth-seed", "3", "--out", str(out)]) == 0
    return out


def n_rows(path):
    with open(path, newline="") as fh:
        return sum(1 for _ in csv.reader(fh)) - 1


def config(simdir, out, **kw):
    kw.setdefault("method", "mmle")
    kw.setdefault("survey", str(simdir / "survey.csv"))
    kw.setdefault("cell_table", str(simdir / "cells.csv"))
    return PipelineConfig(out_dir=str(out), **kw)


def test_simulate_outputs(simdir):
    assert {p.name for p in simdir.iterdir()} >= {"survey.csv", "cells.csv", "truth.csv", "truth.json"}
    assert n_rows(simdir / "survey.csv") == 2000
    assert n_rows(simdir / "cells.csv") == 4080


def test_cli_run_mmle_and_map(simdir, tmp_path):
    out = tmp_path / "mmle"
    rc = main(["run", "--survey", str(simdir / "survey.csv"), "--cell-table", str(simdir / "cells.csv"),
               "--out-dir", str(out), "--method", "mmle"])
    assert rc == 0
    assert n_rows(out / "estimates.csv") == 510
    assert count_panels(out / "figure.svg") == 51
    map_out = tmp_path / "map"
    assert main(["run", "--survey", str(simdir / "survey.csv"), "--cell-table", str(simdir / "cells.csv"),
                 "--out-dir", str(map_out), "--method", "map"]) == 0
    assert not (map_out / "draws.csv").exists()
    rows = EstimateSeries.from_csv(map_out / "estimates.csv").rows
    assert all(r["q025"] is None and r["mean"] is not None for r in rows)


def test_hmc_run_writes_draws_and_flags_unconverged(simdir, tmp_path):
    args = ["run", "--survey", str(simdir / "survey.csv"), "--cell-table", str(simdir / "cells.csv"),
            "--method", "hmc", "--chains", "2", "--warmup", "10", "--samples", "20", "--seed", "0"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == EXIT_UNCONVERGED
    assert main(args + ["--out-dir", str(tmp_path / "b"), "--allow-unconverged"]) == 0
    assert n_rows(tmp_path / "b" / "draws.csv") == 40
    diag = json.loads((tmp_path / "b" / "diagnostics.json").read_text())
    assert diag["kind"] == "FULL_BAYES" and not diag["converged"]


def test_missing_cell_table_is_ingest_error(simdir, tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["run", "--survey", str(simdir / "survey.csv"), "--cell-table", str(tmp_path / "none.csv"),
               "--out-dir", str(out), "--method", "map"])
    assert rc == EXIT_ERROR
    assert "ingest" in capsys.readouterr().err
    assert [p.name for p in out.iterdir()] == []  # partial outputs removed
    with pytest.raises(PipelineError) as err:
        run_pipeline(config(simdir, out, cell_table=str(tmp_path / "none.csv")))
    assert err.value.stage == "ingest"


def test_same_config_byte_identical(simdir, tmp_path):
    a = run_pipeline(config(simdir, tmp_path / "a"), timestamp=STAMP)
    b = run_pipeline(config(simdir, tmp_path / "b"), timestamp=STAMP)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert {"estimates.csv", "figure.svg", "figure.csv", "diagnostics.json", "manifest-post.json"} <= set(names)
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n
    outputs = {k: v for k, v in a.files.items() if not k.startswith("manifest")}
    verify_manifest(a.files["manifest_post"], configs=config(simdir, "x").config_texts(), outputs=outputs,
                    pre_manifest=a.files["manifest_pre"])
    assert b.exit_code == 0


def test_prereg_rejects_changed_config(simdir, tmp_path):
    first = run_pipeline(config(simdir, tmp_path / "a"))
    pre = first.files["manifest_pre"]
    ok = run_pipeline(config(simdir, tmp_path / "b", prereg=True, pre_manifest=str(pre)))
    assert ok.exit_code == 0
    with pytest.raises(PipelineError) as err:
        run_pipeline(config(simdir, tmp_path / "c", prereg=True, pre_manifest=str(pre), tolerance=1e-3))
    assert err.value.stage == "manifest"


def test_lock_file_blocks_second_run(simdir, tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / ".lock").write_text("123")
    with pytest.raises(LockError):
        run_pipeline(config(simdir, out))


def test_config_file_with_flag_override(simdir, tmp_path, monkeypatch):
    cfg = {"survey": str(simdir / "survey.csv"), "cell_table": str(simdir / "cells.csv"), "out_dir": "out",
           "method": "hmc", "allow_unconverged": True, "sampler": {"chains": 2, "warmup": 10, "samples": 10}}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    monkeypatch.setenv("MRP_SEED", "17")
    assert main(["run", "--config", str(path), "--samples", "15"]) == 0
    diag = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
    assert diag["seed"] == 17 and diag["chains"] == 2
    assert n_rows(tmp_path / "out" / "draws.csv") == 30
    cfg["sampler"]["seed"] = 4
    cfg["out_dir"] = "out2"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path)]) == 0
    assert json.loads((tmp_path / "out2" / "diagnostics.json").read_text())["seed"] == 4


def test_subcommands_chain(simdir, tmp_path):
    fit_dir, est, fig = tmp_path / "fit", tmp_path / "est.csv", tmp_path / "fig.svg"
    assert main(["fit", "--survey", str(simdir / "survey.csv"), "--cell-table", str(simdir / "cells.csv"),
                 "--method", "map", "--out", str(fit_dir)]) == 0
    assert main(["poststratify", "--fit", str(fit_dir), "--cell-table", str(simdir / "cells.csv"),
                 "--survey", str(simdir / "survey.csv"), "--out", str(est)]) == 0
    assert main(["figure", "--estimates", str(est), "--cell-table", str(simdir / "cells.csv"),
                 "--filter", "contiguous-48", "--out", str(fig)]) == 0
    assert count_panels(fig) == 48
    assert main(["compare", str(est), str(est), "--out-json", str(tmp_path / "c.json")]) == 0
    assert json.loads((tmp_path / "c.json").read_text())["max_abs_diff"] == 0.0


# figure

@pytest.mark.parametrize("filt,panels", [("all", 51), ("states-50", 50), ("contiguous-48", 48)])
def test_panel_counts(tmp_path, sim2000, table, filt, panels):
    svg, csv_path, states = emit_state_grid_figure(sim2000[1].series, tmp_path / "f.svg",
                                                   FigureOptions(state_filter=filt), table.state_share)
    assert count_panels(svg) == panels == len(states)
    assert n_rows(csv_path) == panels * 10


def test_panel_order_default_by_share(tmp_path, sim2000, table):
    _, _, states = emit_state_grid_figure(sim2000[1].series, tmp_path / "f.svg", state_share=table.state_share)
    shares = table.state_share[np.array(states) - 1]
    assert np.all(np.diff(shares) >= 0)


def test_constant_series_deterministic(tmp_path, sim2000):
    series = EstimateSeries([dict(r, mean=0.5) for r in sim2000[1].series.rows])
    opts = FigureOptions(order="state")
    a, a_csv, _ = emit_state_grid_figure(series, tmp_path / "a.svg", opts)
    b, _, _ = emit_state_grid_figure(series, tmp_path / "b.svg", opts)
    assert a.read_bytes() == b.read_bytes()
    assert {r["mean"] for r in EstimateSeries.from_csv(a_csv).rows} == {0.5}


def test_figure_csv_roundtrip(tmp_path, sim2000, table):
    series = sim2000[1].series
    _, csv_path, _ = emit_state_grid_figure(series, tmp_path / "f.svg", state_share=table.state_share)
    again = EstimateSeries.from_csv(csv_path)
    assert again.by_key() == series.by_key()


def test_figure_errors(tmp_path, sim2000):
    rows = [r for r in sim2000[1].series.rows if not (r["state"] == 5 and r["income"] == 3)]
    with pytest.raises(FigureError, match="state 5"):
        emit_state_grid_figure(EstimateSeries(rows), tmp_path / "f.svg", FigureOptions(order="state"))
    with pytest.raises(ValueError):
        FigureOptions(state_filter="49")
