"""Pipeline driver: simulate, estimate, calculus, diagnose, replicate.

Every subcommand is referentially transparent given its inputs and the seed:
outputs are written atomically (temp file + rename), manifests carry input
and output SHA-256 digests and never include wall-clock state, and re-running
a command reproduces byte-identical files.

Exit codes: 0 success, 2 configuration error, 3 identification failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile

import numpy as np
from scipy import stats as sps

from . import ate_calculus as calc
from . import core, diagnostics, estimators, marketplace, oracle, randomize
from .core import ConfigError, ExperimentConfig, ParexError
from .estimators import AnalysisSample, NotIdentifiedError

_COVARIATE_LABEL = "covariates"
_COVARIATE_RATES = (3.0, 1.0, 0.5, 2.0)  # page visits, carts, orders, sales
COVARIATE_COLUMNS = ("pre_visits", "pre_carts", "pre_orders", "pre_sales")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_IDENTIFIED = 3
EXIT_IO = 4


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_gzip(path: str, text: str) -> None:
    import gzip

    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as raw:
            # mtime=0 keeps the gzip header deterministic across runs.
            with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
                f.write(text.encode("utf-8"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_manifest(out_dir: str, name: str, payload: dict) -> None:
    _atomic_write_text(
        os.path.join(out_dir, name), json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def _default_out(args_out: str | None) -> str:
    out = args_out or os.environ.get("PAREX_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def covariate_matrix(user_ids: np.ndarray, seed: int) -> np.ndarray:
    """Pre-period activity counts, independent of every assignment stream."""
    cov_seed = randomize.derive_seed(seed, _COVARIATE_LABEL)
    cols = []
    for k, rate in enumerate(_COVARIATE_RATES):
        bits = randomize.mix64_bulk(user_ids, k + 1, cov_seed)
        u = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        cols.append(sps.poisson.ppf(u, rate))
    return np.column_stack(cols)


def _summary_from_sessions(cfg: ExperimentConfig, sessions) -> marketplace.ExposureSummary:
    campaigns = sorted(cfg.campaigns, key=lambda c: c.campaign_index)
    indices = tuple(c.campaign_index for c in campaigns)
    exposed, eligible = marketplace.summarize_sessions(sessions, indices)
    return marketplace.ExposureSummary(
        campaign_indices=indices,
        user_ids=np.asarray([s.user_id for s in sessions], dtype=np.uint64),
        arrivals=np.asarray([s.auction_count for s in sessions], dtype=np.int64),
        exposed=exposed,
        eligible=eligible,
    )


def run_simulate(config_path: str, seed: int, out_dir: str, threads: int = 1,
                 oracle_reps: int = 200, oracle_state_cap: int = 64,
                 compress: bool = False) -> dict:
    """Simulate the experiment and write logs, outcomes, covariates, oracle tables."""
    cfg = core.load_config(config_path)
    campaigns = sorted(cfg.campaigns, key=lambda c: c.campaign_index)
    model = oracle.OutcomeModel.from_config(cfg)

    sessions = marketplace.experiment_sessions(cfg, seed, threads=threads)
    summary = _summary_from_sessions(cfg, sessions)
    aset = core.assign_all(campaigns, seed)

    log_name = "exposure_log.csv.gz" if compress else "exposure_log.csv"
    log_text = marketplace.LOG_HEADER + "\n" + "".join(r + "\n" for r in marketplace.log_rows(sessions))
    if compress:
        _atomic_write_gzip(os.path.join(out_dir, log_name), log_text)
    else:
        _atomic_write_text(os.path.join(out_dir, log_name), log_text)
    del log_text
    n_records = sum(s.auction_count for s in sessions)

    y = oracle.realize_outcomes(summary, model, seed)
    lines = ["user_id,focal,campaign_arm,y"]
    for col, j in enumerate(model.campaign_indices):
        arm = aset.bits[:, aset.column(j)]
        for row, uid in enumerate(summary.user_ids):
            lines.append(f"{int(uid)},{j},{int(arm[row])},{float(y[row, col])!r}")
    _atomic_write_text(os.path.join(out_dir, "outcomes.csv"), "\n".join(lines) + "\n")

    cov = covariate_matrix(summary.user_ids, seed)
    lines = ["user_id," + ",".join(COVARIATE_COLUMNS)]
    for row, uid in enumerate(summary.user_ids):
        vals = ",".join(str(int(v)) for v in cov[row])
        lines.append(f"{int(uid)},{vals}")
    _atomic_write_text(os.path.join(out_dir, "covariates.csv"), "\n".join(lines) + "\n")

    partitions = core.build_partitions(campaigns)
    oracle_lines = ["focal,partition,state,tau,mc_se,R"]
    skipped = []
    if oracle_reps > 0:
        for focal in (c.campaign_index for c in campaigns):
            pidx = partitions[focal]
            for label in pidx.labels:
                n_states = 1 << len(pidx.competitors(label))
                if n_states > oracle_state_cap:
                    skipped.append({"focal": focal, "partition": label, "states": n_states})
                    continue
                table = oracle.true_ate_table(
                    model, campaigns, focal, partitions, label=label,
                    replications=oracle_reps, seed=seed,
                    arrival=cfg.arrival, slots=cfg.slots,
                )
                for omega, (tau, se) in sorted(table.items()):
                    bits = "".join(str(b) for b in omega)
                    oracle_lines.append(
                        f"{focal},{label},{bits},{tau!r},{se!r},{oracle_reps}"
                    )
    _atomic_write_text(os.path.join(out_dir, "oracle_ates.csv"), "\n".join(oracle_lines) + "\n")

    outputs = {
        name: _sha256(os.path.join(out_dir, name))
        for name in (log_name, "outcomes.csv", "covariates.csv", "oracle_ates.csv")
    }
    manifest = {
        "command": "simulate",
        "seed": seed,
        "config": {"path": os.path.abspath(config_path), "sha256": _sha256(config_path)},
        "campaigns": [
            {
                "index": c.campaign_index,
                "share": c.treatment_share,
                "bid": c.base_bid,
                "quality": c.quality,
                "audience_size": len(c.target_audience),
            }
            for c in campaigns
        ],
        "arrival": cfg.arrival,
        "slots": cfg.slots,
        "queue_jitter": cfg.queue_jitter,
        "counts": {"users": len(summary.user_ids), "records": n_records},
        "oracle": {
            "replications": oracle_reps,
            "state_cap": oracle_state_cap,
            "skipped_partitions": skipped,
        },
        "outputs": outputs,
    }
    _write_manifest(out_dir, "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def _log_path(run_dir: str) -> str:
    for name in ("exposure_log.csv", "exposure_log.csv.gz"):
        p = os.path.join(run_dir, name)
        if os.path.exists(p):
            return p
    raise ConfigError(f"no exposure log found in {run_dir}")


def _load_run(run_dir: str, config_override: str | None):
    manifest_path = os.path.join(run_dir, "manifest.json")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read run manifest {manifest_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"bad run manifest {manifest_path}: {e}") from e
    config_path = config_override or manifest["config"]["path"]
    cfg = core.load_config(config_path)
    if config_override is None and _sha256(config_path) != manifest["config"]["sha256"]:
        raise ConfigError(f"config {config_path} changed since the run was simulated")
    return manifest, cfg


def read_outcomes(path: str, focal: int) -> dict[int, float]:
    import pandas as pd

    df = pd.read_csv(path)
    sub = df[df["focal"] == focal]
    return dict(zip(sub["user_id"].astype(int), sub["y"].astype(float)))


def assemble_sample(
    cfg: ExperimentConfig,
    seed: int,
    records: list[marketplace.AuctionRecord],
    outcomes: dict[int, float],
    focal: int,
) -> AnalysisSample:
    """Build the focal advertiser's eligibility-filtered analysis sample.

    Assignments are recomputed from the seed (the hash stores the
    randomization, not the vectors); partitions come from the roster.
    """
    campaigns = sorted(cfg.campaigns, key=lambda c: c.campaign_index)
    if focal not in (c.campaign_index for c in campaigns):
        raise ConfigError(f"focal {focal} is not in the campaign roster")
    eligible = sorted(marketplace.eligible_sample(records, focal))
    if not eligible:
        raise NotIdentifiedError(f"eligible sample for focal {focal} is empty")
    users = np.asarray(eligible, dtype=np.uint64)

    aset = core.assign_all(campaigns, seed)
    rows = aset.rows_for(users)
    focal_col = aset.column(focal)
    rest_cols = [k for k in range(len(aset.campaign_indices)) if k != focal_col]

    pidx = core.build_partitions(campaigns)[focal]
    pos = np.searchsorted(pidx.user_ids, users)
    if np.any(pos >= len(pidx.user_ids)) or np.any(pidx.user_ids[pos] != users):
        raise ConfigError(f"eligible users outside focal {focal}'s audience; wrong config?")
    labels = pidx.user_labels[pos]

    try:
        y = np.asarray([outcomes[int(u)] for u in users], dtype=float)
    except KeyError as e:
        raise ConfigError(f"outcome file lacks eligible user {e} for focal {focal}") from e

    return AnalysisSample(
        focal=focal,
        competitors=tuple(aset.campaign_indices[k] for k in rest_cols),
        user_ids=users,
        y=y,
        d_focal=aset.bits[rows, focal_col],
        d_rest=aset.bits[np.ix_(rows, rest_cols)],
        partition=labels.astype(np.int64),
    )


def run_estimate(
    run_dir: str,
    focal: int,
    method: str,
    out_dir: str,
    config_override: str | None = None,
    split: float = 0.1,
    min_cell: int = 2,
    lam: float | None = None,
    rival: int | None = None,
    cv_seed: int = 0,
) -> dict:
    manifest_in, cfg = _load_run(run_dir, config_override)
    seed = int(manifest_in["seed"])
    records = marketplace.read_exposure_log(os.path.join(run_dir, "exposure_log.csv"))
    outcomes = read_outcomes(os.path.join(run_dir, "outcomes.csv"), focal)
    sample = assemble_sample(cfg, seed, records, outcomes, focal)

    payload: dict = {
        "command": "estimate",
        "focal": focal,
        "method": method,
        "competitors": list(sample.competitors),
        "partitions": {
            str(q): sorted(core.build_partitions(sorted(cfg.campaigns, key=lambda c: c.campaign_index))[focal].competitors(q))
            for q in sample.q_labels
        },
        "counts": {"eligible": sample.n},
        "inputs": {
            "run_dir": os.path.abspath(run_dir),
            "exposure_log.csv": _sha256(os.path.join(run_dir, "exposure_log.csv")),
            "outcomes.csv": _sha256(os.path.join(run_dir, "outcomes.csv")),
        },
        "seed": seed,
    }

    outputs = {}
    if method == "cells":
        table = estimators.stacked_ols(sample, min_cell=min_cell)
        if not table.cells:
            raise NotIdentifiedError(
                f"no identified cells for focal {focal}: {len(table.dropped)} one-armed cells"
            )
        estimators.write_ate_table(os.path.join(out_dir, "ate_table.csv"), table)
        outputs["ate_table.csv"] = _sha256(os.path.join(out_dir, "ate_table.csv"))
        payload["counts"]["cells"] = len(table.cells)
        payload["counts"]["dropped"] = len(table.dropped)
    elif method == "kernel":
        train, est_sample = estimators.split_train(sample, split, seed)
        if lam is None:
            bw = estimators.cv_bandwidths(train, seed=cv_seed)
        else:
            stats = estimators.cell_statistics(train)
            lamv = np.full(stats.v, float(lam))
            loss, skipped = estimators._cv_loss(
                lamv, stats, train.y.astype(float), train.d_focal.astype(bool)
            )
            bw = estimators.Bandwidths(
                lambdas=tuple(lamv),
                cv_loss=float(loss),
                skipped=skipped,
                constant=tuple(False for _ in range(stats.v)),
            )
        table = estimators.kernel_table(est_sample, np.asarray(bw.lambdas), min_cell=min_cell)
        if not table.cells:
            raise NotIdentifiedError(f"kernel estimator identified no cells for focal {focal}")
        estimators.write_ate_table(os.path.join(out_dir, "ate_table.csv"), table)
        estimators.write_bandwidths(os.path.join(out_dir, "bandwidths.csv"), bw)
        outputs["ate_table.csv"] = _sha256(os.path.join(out_dir, "ate_table.csv"))
        outputs["bandwidths.csv"] = _sha256(os.path.join(out_dir, "bandwidths.csv"))
        payload["counts"]["train"] = train.n if split > 0 else 0
        payload["counts"]["estimate"] = est_sample.n
        payload["counts"]["cells"] = len(table.cells)
        payload["split"] = split
        payload["bandwidths"] = {
            "lambdas": list(bw.lambdas),
            "cv_loss": bw.cv_loss,
            "skipped": bw.skipped,
            "constant": list(bw.constant),
        }
    elif method == "interaction":
        if rival is None:
            rival = estimators.pick_rival(records, focal)
        if rival == focal:
            raise ConfigError("rival must differ from the focal campaign")
        rival_eligible = marketplace.eligible_sample(records, rival)
        keep = np.asarray([int(u) in rival_eligible for u in sample.user_ids])
        both = estimators.subset(sample, keep)
        if both.n == 0:
            raise NotIdentifiedError(f"no users eligible for both {focal} and {rival}")
        dk = both.d_rest[:, both.competitors.index(rival)]
        fit = estimators.interaction_ols(both.y, both.d_focal, dk)
        lines = ["term,estimate,se,p_value"]
        for name, b, s, p in zip(("alpha", "beta1", "beta2", "beta3"), fit.params, fit.se, fit.p_values):
            lines.append(f"{name},{b!r},{s!r},{p!r}")
        _atomic_write_text(os.path.join(out_dir, "interaction.csv"), "\n".join(lines) + "\n")
        outputs["interaction.csv"] = _sha256(os.path.join(out_dir, "interaction.csv"))
        payload["rival"] = rival
        payload["counts"]["both_eligible"] = both.n
    else:
        raise ConfigError(f"unknown method {method!r}")

    payload["outputs"] = outputs
    _write_manifest(out_dir, "estimate_manifest.json", payload)
    return payload


# ---------------------------------------------------------------------------
# calculus
# ---------------------------------------------------------------------------

def run_calculus(
    table_path: str,
    out_dir: str,
    beliefs_path: str | None = None,
    manifest_path: str | None = None,
    partition: int = 1,
    curve: int | None = None,
    surface: int | None = None,
    scenarios: bool = False,
    grid: int = 21,
    share: float = 0.7,
    normalize: bool = False,
) -> dict:
    manifest_path = manifest_path or os.path.join(os.path.dirname(table_path), "estimate_manifest.json")
    try:
        with open(manifest_path) as f:
            est_manifest = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read estimate manifest {manifest_path}: {e}") from e
    competitors = tuple(int(k) for k in est_manifest["competitors"])
    table = estimators.read_ate_table(table_path, competitors)

    payload: dict = {
        "command": "calculus",
        "table": {"path": os.path.abspath(table_path), "sha256": _sha256(table_path)},
        "focal": table.focal,
        "partition": partition,
        "outputs": {},
    }
    grid_pts = [i / (grid - 1) for i in range(grid)] if grid > 1 else [0.0]

    if beliefs_path is not None:
        beliefs = calc.read_beliefs(beliefs_path, competitors)
        value = calc.prospective_ate(table, beliefs, label=partition)
        _atomic_write_text(os.path.join(out_dir, "prospective.csv"), f"value\n{value!r}\n")
        payload["outputs"]["prospective.csv"] = _sha256(os.path.join(out_dir, "prospective.csv"))
        payload["prospective"] = value

    if curve is not None:
        pts = calc.competitor_curve(table, curve, grid_pts, label=partition, normalize=normalize)
        lines = ["x,value"] + [f"{x!r},{v!r}" for x, v in pts]
        _atomic_write_text(os.path.join(out_dir, "curve.csv"), "\n".join(lines) + "\n")
        payload["outputs"]["curve.csv"] = _sha256(os.path.join(out_dir, "curve.csv"))
        payload["curve_competitor"] = curve

    if surface is not None:
        rows = calc.experimentation_surface(
            table, surface, grid_pts, grid_pts, sigma=share, label=partition
        )
        lines = ["x,y,value"] + [f"{x!r},{y!r},{v!r}" for x, y, v in rows]
        _atomic_write_text(os.path.join(out_dir, "surface.csv"), "\n".join(lines) + "\n")
        payload["outputs"]["surface.csv"] = _sha256(os.path.join(out_dir, "surface.csv"))
        payload["surface_competitor"] = surface

    if scenarios:
        curves = calc.scenario_curves(table, grid_pts, sigma=share, label=partition)
        for mode, pts in curves.items():
            name = f"scenario_{mode}.csv"
            lines = ["x,value"] + [f"{x!r},{v!r}" for x, v in pts]
            _atomic_write_text(os.path.join(out_dir, name), "\n".join(lines) + "\n")
            payload["outputs"][name] = _sha256(os.path.join(out_dir, name))

    _write_manifest(out_dir, "calculus_manifest.json", payload)
    return payload


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def run_diagnose(run_dir: str, out_dir: str, config_override: str | None = None,
                 table_path: str | None = None, focal: int | None = None) -> dict:
    import pandas as pd

    manifest_in, cfg = _load_run(run_dir, config_override)
    seed = int(manifest_in["seed"])
    campaigns = sorted(cfg.campaigns, key=lambda c: c.campaign_index)

    cov_df = pd.read_csv(os.path.join(run_dir, "covariates.csv"))
    cov_users = cov_df["user_id"].to_numpy(dtype=np.uint64)
    cov = cov_df[list(COVARIATE_COLUMNS)].to_numpy(dtype=float)

    share_ps, balance_ps, rows = [], [], []
    for c in campaigns:
        aud = np.fromiter(sorted(c.target_audience), dtype=np.uint64, count=len(c.target_audience))
        arms = randomize.assign_bulk(aud, c.campaign_index, seed, c.treatment_share)
        p_share = diagnostics.proportion_test(arms, c.treatment_share)
        pos = np.searchsorted(cov_users, aud)
        ok = (pos < len(cov_users)) & (cov_users[np.minimum(pos, len(cov_users) - 1)] == aud)
        p_balance = diagnostics.balance_test(cov[pos[ok]], arms[ok])
        share_ps.append(p_share)
        balance_ps.append(p_balance)
        rows.append(f"{c.campaign_index},{p_share!r},{p_balance!r}")

    _atomic_write_text(
        os.path.join(out_dir, "diagnostics.csv"),
        "campaign,share_pvalue,balance_pvalue\n" + "\n".join(rows) + "\n",
    )

    uniformity_rows = []
    meta = {}
    for name, ps in (("share", share_ps), ("balance", balance_ps)):
        if len(ps) >= 5:
            stat, p = diagnostics.ks_uniformity(ps)
        else:
            stat, p = float("nan"), float("nan")
        uniformity_rows.append(f"{name},{stat!r},{p!r}")
        meta[name] = {"ks_stat": stat, "p_value": p}
        pairs = diagnostics.quantile_pairs(ps)
        lines = ["uniform_quantile,empirical_quantile"] + [f"{u!r},{e!r}" for u, e in pairs]
        _atomic_write_text(os.path.join(out_dir, f"quantile_{name}.csv"), "\n".join(lines) + "\n")
    _atomic_write_text(
        os.path.join(out_dir, "uniformity.csv"),
        "set,ks_stat,pvalue\n" + "\n".join(uniformity_rows) + "\n",
    )

    payload = {
        "command": "diagnose",
        "seed": seed,
        "uniformity": meta,
        "outputs": {
            name: _sha256(os.path.join(out_dir, name))
            for name in (
                "diagnostics.csv",
                "uniformity.csv",
                "quantile_share.csv",
                "quantile_balance.csv",
            )
        },
    }

    if table_path is not None:
        manifest_path = os.path.join(os.path.dirname(table_path), "estimate_manifest.json")
        with open(manifest_path) as f:
            competitors = tuple(int(k) for k in json.load(f)["competitors"])
        table = estimators.read_ate_table(table_path, competitors)
        pooled = None
        if focal is not None:
            outcomes = read_outcomes(os.path.join(run_dir, "outcomes.csv"), focal)
            records = marketplace.read_exposure_log(os.path.join(run_dir, "exposure_log.csv"))
            sample = assemble_sample(cfg, seed, records, outcomes, focal)
            pooled = estimators.pooled_ols(sample.y, sample.d_focal).tau
        summ = diagnostics.heterogeneity_summary(table, pooled=pooled)
        lines = ["tau,cdf"] + [f"{t!r},{p!r}" for t, p in summ.cdf]
        _atomic_write_text(os.path.join(out_dir, "cdf.csv"), "\n".join(lines) + "\n")
        lines = ["competitor,omega,tau"]
        for k, (off, on) in sorted(summ.split.items()):
            lines += [f"{k},0,{float(t)!r}" for t in off]
            lines += [f"{k},1,{float(t)!r}" for t in on]
        _atomic_write_text(os.path.join(out_dir, "split_cdfs.csv"), "\n".join(lines) + "\n")
        lines = ["n_advertising,min,q1,median,q3,max"]
        for n_adv, stats5 in sorted(summ.boxplots.items()):
            lines.append(f"{n_adv}," + ",".join(repr(v) for v in stats5))
        _atomic_write_text(os.path.join(out_dir, "boxplots.csv"), "\n".join(lines) + "\n")
        for name in ("cdf.csv", "split_cdfs.csv", "boxplots.csv"):
            payload["outputs"][name] = _sha256(os.path.join(out_dir, name))
        if pooled is not None:
            payload["pooled"] = {"tau": pooled, "percentile": summ.pooled_percentile}

    _write_manifest(out_dir, "diagnose_manifest.json", payload)
    return payload


# ---------------------------------------------------------------------------
# replicate
# ---------------------------------------------------------------------------

def _scenario_two_firm(out_dir: str, seed: int) -> list[str]:
    """Two advertisers with a partial overlap: the three-ATE structure."""
    # The focal campaign outranks the rival so that its eligible sample is its
    # whole audience (every user's counterfactual head is the focal ad).
    cfg_text = (
        "[experiment]\narrival = geometric:3\noutcome_noise = 0.5\n\n"
        "[campaign one]\nindex = 1\naudience = range:0-14999\nshare = 0.7\nbid = 3.0\n"
        "baseline = 1.0\nown_effect = 0.5\n\n"
        "[campaign two]\nindex = 2\naudience = range:7500-22499\nshare = 0.5\nbid = 2.0\n"
        "baseline = 1.0\nown_effect = 0.4\n\n"
        "[effects]\ngamma 1 2 = 0.6\neta 1 2 = -0.3\n"
    )
    cfg_path = os.path.join(out_dir, "two_firm.cfg")
    _atomic_write_text(cfg_path, cfg_text)
    sim_dir = os.path.join(out_dir, "sim")
    os.makedirs(sim_dir, exist_ok=True)
    run_simulate(cfg_path, seed, sim_dir, oracle_reps=300)
    est_dir = os.path.join(out_dir, "estimate")
    os.makedirs(est_dir, exist_ok=True)
    run_estimate(sim_dir, focal=1, method="cells", out_dir=est_dir, split=0.0)

    table = estimators.read_ate_table(os.path.join(est_dir, "ate_table.csv"), competitors=(2,))
    import csv as _csv

    oracle_taus = {}
    with open(os.path.join(sim_dir, "oracle_ates.csv"), newline="") as f:
        for row in _csv.DictReader(f):
            if int(row["focal"]) == 1:
                oracle_taus[(int(row["partition"]), row["state"])] = (
                    float(row["tau"]),
                    float(row["mc_se"]),
                )

    cfg = core.load_config(cfg_path)
    pidx = core.build_partitions(sorted(cfg.campaigns, key=lambda c: c.campaign_index))[1]
    shared = [q for q in pidx.labels if pidx.competitors(q) == frozenset({2})][0]
    alone = [q for q in pidx.labels if pidx.competitors(q) == frozenset()][0]

    lines = []

    def check(name, est_cell, oracle_key):
        tau_o, se_o = oracle_taus[oracle_key]
        gap = abs(est_cell.tau - tau_o)
        bound = 3 * (est_cell.se_tau**2 + se_o**2) ** 0.5
        ok = gap <= bound
        lines.append(
            f"{'PASS' if ok else 'FAIL'} {name}: est {est_cell.tau:.4f} vs oracle {tau_o:.4f} "
            f"(gap {gap:.4f}, 3-se bound {bound:.4f})"
        )

    from .estimators import CellKey

    check("tau(rival absent | shared)", table.cells[CellKey((0,), shared)], (shared, "0"))
    check("tau(rival present | shared)", table.cells[CellKey((1,), shared)], (shared, "1"))
    check("tau(no-rival partition)", table.cells[CellKey((0,), alone)], (alone, "0"))

    # Sigma-mixing: the rival experimenting at its configured share.
    t0 = table.cells[CellKey((0,), shared)]
    t1 = table.cells[CellKey((1,), shared)]
    mixed = calc.mix_sigma(t0.tau, t1.tau, 0.5)
    model = oracle.OutcomeModel.from_config(cfg)
    campaigns = sorted(cfg.campaigns, key=lambda c: c.campaign_index)
    parts = core.build_partitions(campaigns)
    got, se = oracle.true_mixed_ate(
        model, campaigns, 1, {2: 0.5}, (0,), parts, label=shared,
        replications=300, seed=seed, arrival=cfg.arrival, slots=cfg.slots,
    )
    bound = 3 * (se**2 + (0.5 * t0.se_tau) ** 2 + (0.5 * t1.se_tau) ** 2) ** 0.5
    ok = abs(mixed - got) <= bound
    lines.append(
        f"{'PASS' if ok else 'FAIL'} sigma-mixing at 0.5: mixed {mixed:.4f} vs "
        f"re-simulated {got:.4f} (bound {bound:.4f})"
    )
    return lines


def _scenario_overlap_table(out_dir: str, seed: int) -> list[str]:
    """Distribution of per-user campaign-exposure counts across 16 campaigns."""
    sections = ["[experiment]\narrival = geometric:2\n"]
    for j in range(1, 17):
        share = 0.35 + 0.02 * j  # varying pairwise overlaps
        sections.append(
            f"[campaign c{j}]\nindex = {j}\naudience = hash:{share:.2f} of 0-19999\n"
            f"share = 0.7\nbid = {1.0 + 0.1 * j:.1f}\n"
        )
    cfg_path = os.path.join(out_dir, "overlap.cfg")
    _atomic_write_text(cfg_path, "\n".join(sections))
    sim_dir = os.path.join(out_dir, "sim")
    os.makedirs(sim_dir, exist_ok=True)
    run_simulate(cfg_path, seed, sim_dir, oracle_reps=0)

    records = marketplace.read_exposure_log(os.path.join(sim_dir, "exposure_log.csv"))
    counts: dict[int, int] = {}
    for j in range(1, 17):
        for uid in marketplace.eligible_sample(records, j):
            counts[uid] = counts.get(uid, 0) + 1
    dist: dict[int, int] = {}
    for c in counts.values():
        dist[c] = dist.get(c, 0) + 1
    total = sum(dist.values())
    lines_csv = ["n_campaigns,users,share"]
    for k in sorted(dist):
        lines_csv.append(f"{k},{dist[k]},{dist[k] / total!r}")
    _atomic_write_text(os.path.join(out_dir, "overlap_table.csv"), "\n".join(lines_csv) + "\n")

    multi = sum(v for k, v in dist.items() if k >= 2) / total
    return [
        f"PASS overlap table written: {total} exposed users, "
        f"{multi:.1%} exposed to 2+ campaigns (see overlap_table.csv)"
    ]


def _scenario_balance(out_dir: str, seed: int) -> list[str]:
    """Fig.-6-style randomization checks on a 16-campaign null simulation."""
    sections = ["[experiment]\narrival = fixed:1\n"]
    for j in range(1, 17):
        sections.append(
            f"[campaign c{j}]\nindex = {j}\naudience = range:0-9999\nshare = 0.7\nbid = {j}.0\n"
        )
    cfg_path = os.path.join(out_dir, "balance.cfg")
    _atomic_write_text(cfg_path, "\n".join(sections))
    sim_dir = os.path.join(out_dir, "sim")
    os.makedirs(sim_dir, exist_ok=True)
    run_simulate(cfg_path, seed, sim_dir, oracle_reps=0)
    diag_dir = os.path.join(out_dir, "diagnose")
    os.makedirs(diag_dir, exist_ok=True)
    payload = run_diagnose(sim_dir, diag_dir)
    lines = []
    for name in ("share", "balance"):
        p = payload["uniformity"][name]["p_value"]
        ok = p > 0.05
        lines.append(
            f"{'PASS' if ok else 'FAIL'} {name} p-values uniform (KS p = {p:.3f}); "
            f"quantile data in diagnose/quantile_{name}.csv"
        )
    return lines


SCENARIOS = {
    "two_firm": _scenario_two_firm,
    "overlap_table": _scenario_overlap_table,
    "balance": _scenario_balance,
}


def run_replicate(scenario: str, out_dir: str, seed: int = 7) -> list[str]:
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    lines = SCENARIOS[scenario](out_dir, seed)
    _atomic_write_text(os.path.join(out_dir, "report.txt"), "\n".join(lines) + "\n")
    return lines


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parex", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the marketplace simulation and write logs")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out")
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--oracle-reps", type=int, default=200)
    sim.add_argument("--oracle-states", type=int, default=64)

    est = sub.add_parser("estimate", help="estimate treatment effects from a simulated run")
    est.add_argument("--run", required=True, help="directory produced by simulate")
    est.add_argument("--config", help="override the config path recorded in the run manifest")
    est.add_argument("--focal", type=int, required=True)
    est.add_argument("--method", choices=("cells", "kernel", "interaction"), default="cells")
    est.add_argument("--split", type=float, default=0.1, help="training fraction for bandwidth CV")
    est.add_argument("--min-cell", type=int, default=2)
    est.add_argument("--lambda", dest="lam", type=float, help="fix all bandwidths, skipping CV")
    est.add_argument("--rival", type=int, help="rival campaign for method=interaction")
    est.add_argument("--out")

    cal = sub.add_parser("calculus", help="combine a degenerate ATE table into prospective views")
    cal.add_argument("--table", required=True)
    cal.add_argument("--manifest", help="estimate manifest (defaults to the table's directory)")
    cal.add_argument("--beliefs")
    cal.add_argument("--partition", type=int, default=1)
    cal.add_argument("--curve", type=int, metavar="COMPETITOR")
    cal.add_argument("--surface", type=int, metavar="COMPETITOR")
    cal.add_argument("--scenarios", action="store_true")
    cal.add_argument("--grid", type=int, default=21)
    cal.add_argument("--share", type=float, default=0.7)
    cal.add_argument("--normalize", action="store_true")
    cal.add_argument("--out")

    dia = sub.add_parser("diagnose", help="randomization and balance checks for a run")
    dia.add_argument("--run", required=True)
    dia.add_argument("--config")
    dia.add_argument("--table", help="ATE table for heterogeneity summaries")
    dia.add_argument("--focal", type=int, help="compute the pooled ATE comparison line")
    dia.add_argument("--out")

    rep = sub.add_parser("replicate", help="run a built-in end-to-end scenario")
    rep.add_argument("--scenario", required=True)
    rep.add_argument("--seed", type=int, default=7)
    rep.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = _default_out(getattr(args, "out", None))
        if args.command == "simulate":
            manifest = run_simulate(
                args.config, args.seed, out, threads=args.threads,
                oracle_reps=args.oracle_reps, oracle_state_cap=args.oracle_states,
            )
            print(
                f"simulated {manifest['counts']['users']} users, "
                f"{manifest['counts']['records']} auction records -> {out}"
            )
        elif args.command == "estimate":
            payload = run_estimate(
                args.run, args.focal, args.method, out,
                config_override=args.config, split=args.split,
                min_cell=args.min_cell, lam=args.lam, rival=args.rival,
            )
            print(f"estimated focal {args.focal} via {args.method} -> {out}")
            if "bandwidths" in payload:
                lams = ", ".join(f"{v:.3f}" for v in payload["bandwidths"]["lambdas"])
                print(f"bandwidths: [{lams}] (cv loss {payload['bandwidths']['cv_loss']:.6f})")
        elif args.command == "calculus":
            payload = run_calculus(
                args.table, out, beliefs_path=args.beliefs,
                manifest_path=args.manifest, partition=args.partition,
                curve=args.curve, surface=args.surface, scenarios=args.scenarios,
                grid=args.grid, share=args.share, normalize=args.normalize,
            )
            if "prospective" in payload:
                print(f"prospective ATE: {payload['prospective']:.6f}")
            print(f"calculus outputs -> {out}")
        elif args.command == "diagnose":
            payload = run_diagnose(
                args.run, out, config_override=args.config,
                table_path=args.table, focal=args.focal,
            )
            for name, m in payload["uniformity"].items():
                print(f"{name}: KS p-value {m['p_value']:.4f}")
        elif args.command == "replicate":
            for line in run_replicate(args.scenario, out, seed=args.seed):
                print(line)
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotIdentifiedError, calc.CalculusError) as e:
        print(f"not identified: {e}", file=sys.stderr)
        return EXIT_NOT_IDENTIFIED
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
