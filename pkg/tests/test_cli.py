"""End-to-end CLI behavior: determinism, reductions, exit codes, file formats."""

import json
import os

import numpy as np
import pytest

from parex import cli, estimators, marketplace


BASE_CFG = """
[experiment]
arrival = geometric:3
outcome_noise = 0.5

[campaign a]
index = 1
audience = range:0-2999
share = 0.7
bid = 3.0
baseline = 1.0
own_effect = 0.5

[campaign b]
index = 2
audience = range:0-2999
share = 0.7
bid = 2.0

[campaign c]
index = 3
audience = range:1000-3999
share = 0.6
bid = 1.0

[effects]
gamma 1 2 = 0.6
eta 1 2 = -0.3
gamma 1 3 = -0.4
"""


@pytest.fixture()
def config_path(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(BASE_CFG)
    return str(p)


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def sim(tmp_path, config_path, seed=11, name="sim", **kw):
    out = tmp_path / name
    out.mkdir(exist_ok=True)
    cli.run_simulate(config_path, seed, str(out), **kw)
    return out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_row_count_equals_total_arrivals(tmp_path):
    p = tmp_path / "one.cfg"
    p.write_text("[campaign a]\nindex = 1\naudience = range:0-99\nshare = 0.5\n")
    out = sim(tmp_path, str(p), seed=3, name="one")
    manifest = json.loads((out / "manifest.json").read_text())
    n_lines = sum(1 for _ in open(out / "exposure_log.csv")) - 1
    assert n_lines == manifest["counts"]["records"]
    records = marketplace.read_exposure_log(str(out / "exposure_log.csv"))
    per_user = {}
    for r in records:
        per_user[r.user_id] = per_user.get(r.user_id, 0) + 1
    assert sum(per_user.values()) == n_lines
    assert manifest["counts"]["users"] == 100


def test_simulate_deterministic_across_runs_and_threads(tmp_path, config_path):
    a = sim(tmp_path, config_path, name="a")
    b = sim(tmp_path, config_path, name="b")
    c = tmp_path / "c"
    c.mkdir()
    cli.run_simulate(config_path, 11, str(c), threads=8)
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    mc = json.loads((c / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"] == mc["outputs"]
    # Manifests differ only in the recorded thread-independent fields.
    assert ma == mb


def test_simulate_malformed_config_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("[campaign a]\nindex = 1\naudience = blob\nshare = .5\n")
    code = run_cli("simulate", "--config", p, "--seed", 1, "--out", tmp_path / "o")
    assert code == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_simulate_oracle_state_cap_skips(tmp_path):
    p = tmp_path / "many.cfg"
    lines = []
    for j in range(1, 9):
        lines.append(f"[campaign c{j}]\nindex = {j}\naudience = range:0-199\nshare = 0.5\n")
    p.write_text("\n".join(lines))
    out = tmp_path / "many_out"
    out.mkdir()
    cli.run_simulate(str(p), 5, str(out), oracle_reps=10, oracle_state_cap=16)
    manifest = json.loads((out / "manifest.json").read_text())
    # 2^7 = 128 states per focal partition > 16: all skipped.
    assert len(manifest["oracle"]["skipped_partitions"]) == 8
    assert open(out / "oracle_ates.csv").read().strip() == "focal,partition,state,tau,mc_se,R"


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def test_cells_vs_kernel_lambda0_identical(tmp_path, config_path):
    run = sim(tmp_path, config_path)
    cells_dir = tmp_path / "cells"
    kernel_dir = tmp_path / "kernel0"
    cells_dir.mkdir()
    kernel_dir.mkdir()
    cli.run_estimate(str(run), 1, "cells", str(cells_dir))
    cli.run_estimate(str(run), 1, "kernel", str(kernel_dir), split=0.0, lam=0.0)
    t_cells = estimators.read_ate_table(str(cells_dir / "ate_table.csv"), (2, 3))
    t_kernel = estimators.read_ate_table(str(kernel_dir / "ate_table.csv"), (2, 3))
    assert set(t_cells.cells) == set(t_kernel.cells)
    for key in t_cells.cells:
        assert t_kernel.cells[key].tau == pytest.approx(t_cells.cells[key].tau, rel=1e-10)
        assert t_kernel.cells[key].alpha == pytest.approx(t_cells.cells[key].alpha, rel=1e-10)
        assert t_kernel.cells[key].se_tau == pytest.approx(t_cells.cells[key].se_tau, rel=1e-8)


def test_kernel_split_partitions_counts(tmp_path, config_path):
    run = sim(tmp_path, config_path)
    out = tmp_path / "kernel_split"
    out.mkdir()
    payload = cli.run_estimate(str(run), 1, "kernel", str(out), split=0.1)
    counts = payload["counts"]
    assert counts["train"] + counts["estimate"] == counts["eligible"]
    assert 0.05 <= counts["train"] / counts["eligible"] <= 0.15
    assert (out / "bandwidths.csv").exists()
    assert payload["bandwidths"]["cv_loss"] > 0


def test_interaction_with_jitter_and_rival_scan(tmp_path):
    p = tmp_path / "jit.cfg"
    p.write_text(BASE_CFG.replace("[experiment]", "[experiment]\nqueue_jitter = 1.2"))
    run = sim(tmp_path, str(p), name="jitsim")
    records = marketplace.read_exposure_log(str(run / "exposure_log.csv"))

    # Brute-force co-occurrence oracle.
    counts = {2: 0, 3: 0}
    for r in records:
        if 1 in r.pre_filter_queue:
            for j in r.pre_filter_queue:
                if j != 1:
                    counts[j] += 1
    want = max(counts, key=lambda j: (counts[j], -j))
    assert estimators.pick_rival(records, 1) == want

    out = tmp_path / "inter"
    out.mkdir()
    payload = cli.run_estimate(str(run), 1, "interaction", str(out))
    assert payload["rival"] == want
    text = (out / "interaction.csv").read_text().splitlines()
    assert text[0] == "term,estimate,se,p_value"
    assert len(text) == 5


def test_estimate_not_identified_exit_3(tmp_path, capsys):
    # Bottom-ranked campaign, one slot, single auction, competitors always on:
    # the focal ad is never served nor the counterfactual head.
    p = tmp_path / "starved.cfg"
    p.write_text(
        "[experiment]\narrival = fixed:1\nslots = 1\n\n"
        "[campaign a]\nindex = 1\naudience = range:0-499\nshare = 1.0\nbid = 3.0\n\n"
        "[campaign b]\nindex = 2\naudience = range:0-499\nshare = 0.5\nbid = 1.0\n"
    )
    run = sim(tmp_path, str(p), name="starved")
    code = run_cli("estimate", "--run", run, "--focal", 2, "--method", "cells",
                   "--out", tmp_path / "starved_est")
    assert code == cli.EXIT_NOT_IDENTIFIED
    assert "not identified" in capsys.readouterr().err


def test_estimate_unknown_focal_exit_2(tmp_path, config_path):
    run = sim(tmp_path, config_path)
    code = run_cli("estimate", "--run", run, "--focal", 99, "--method", "cells",
                   "--out", tmp_path / "x")
    assert code == cli.EXIT_CONFIG


# ---------------------------------------------------------------------------
# calculus and diagnose
# ---------------------------------------------------------------------------

def test_calculus_pipeline(tmp_path, config_path):
    run = sim(tmp_path, config_path)
    est_dir = tmp_path / "est"
    est_dir.mkdir()
    cli.run_estimate(str(run), 1, "cells", str(est_dir))
    beliefs = tmp_path / "beliefs.cfg"
    beliefs.write_text(
        "[competitor 2]\np_not_adv = 0.2\np_adv_not_exp = 0.5\np_adv_exp = 0.3\nshare = 0.7\n"
        "[competitor 3]\np_not_adv = 1.0\n"
    )
    out = tmp_path / "calc"
    out.mkdir()
    payload = cli.run_calculus(
        str(est_dir / "ate_table.csv"), str(out), beliefs_path=str(beliefs),
        partition=2, curve=2, surface=2, scenarios=True, grid=5,
    )
    assert set(payload["outputs"]) == {
        "prospective.csv", "curve.csv", "surface.csv",
        "scenario_aligned.csv", "scenario_independent.csv",
    }
    curve = [l.split(",") for l in (out / "curve.csv").read_text().splitlines()[1:]]
    assert [float(x) for x, _ in curve] == [0.0, 0.25, 0.5, 0.75, 1.0]
    aligned = [l.split(",") for l in (out / "scenario_aligned.csv").read_text().splitlines()[1:]]
    indep = [l.split(",") for l in (out / "scenario_independent.csv").read_text().splitlines()[1:]]
    assert float(aligned[0][1]) == pytest.approx(float(indep[0][1]), abs=1e-12)


def test_diagnose_sixteen_campaigns(tmp_path):
    p = tmp_path / "sixteen.cfg"
    lines = ["[experiment]\narrival = fixed:1\n"]
    for j in range(1, 17):
        lines.append(
            f"[campaign c{j}]\nindex = {j}\naudience = range:0-1999\nshare = 0.7\nbid = {j}.0\n"
        )
    p.write_text("\n".join(lines))
    run = sim(tmp_path, str(p), name="sixteen", oracle_reps=0)
    out = tmp_path / "diag"
    out.mkdir()
    payload = cli.run_diagnose(str(run), str(out))
    assert 0.0 <= payload["uniformity"]["share"]["p_value"] <= 1.0
    assert 0.0 <= payload["uniformity"]["balance"]["p_value"] <= 1.0
    rows = (out / "diagnostics.csv").read_text().splitlines()
    assert len(rows) == 17
    q = (out / "quantile_balance.csv").read_text().splitlines()
    assert len(q) == 17


def test_diagnose_heterogeneity_outputs(tmp_path, config_path):
    run = sim(tmp_path, config_path)
    est_dir = tmp_path / "est2"
    est_dir.mkdir()
    cli.run_estimate(str(run), 1, "cells", str(est_dir))
    out = tmp_path / "diag2"
    out.mkdir()
    payload = cli.run_diagnose(
        str(run), str(out), table_path=str(est_dir / "ate_table.csv"), focal=1
    )
    for name in ("cdf.csv", "split_cdfs.csv", "boxplots.csv"):
        assert (out / name).exists()
    assert payload["pooled"]["percentile"] is not None


# ---------------------------------------------------------------------------
# replicate and misc
# ---------------------------------------------------------------------------

def test_replicate_unknown_scenario(tmp_path, capsys):
    code = run_cli("replicate", "--scenario", "nope", "--out", tmp_path / "r")
    assert code == cli.EXIT_CONFIG


def test_replicate_balance_report(tmp_path):
    out = tmp_path / "rep"
    out.mkdir()
    lines = cli.run_replicate("balance", str(out), seed=3)
    assert all(l.startswith(("PASS", "FAIL")) for l in lines)
    assert (out / "report.txt").exists()


def test_out_dir_env_var(tmp_path, config_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("PAREX_OUT", str(target))
    code = run_cli("simulate", "--config", config_path, "--seed", 2)
    assert code == 0
    assert (target / "manifest.json").exists()


def test_rerun_estimate_digest_identical(tmp_path, config_path):
    run = sim(tmp_path, config_path)
    outs = []
    for name in ("e1", "e2"):
        d = tmp_path / name
        d.mkdir()
        payload = cli.run_estimate(str(run), 1, "cells", str(d))
        outs.append(payload["outputs"])
    assert outs[0] == outs[1]
