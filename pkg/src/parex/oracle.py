"""Ground-truth outcome model and brute-force treatment-effect oracle.

The outcome model turns exposure histories into per-(user, focal) outcomes:

    Y_ij = b_j + delta_j * E_ij + sum_k gamma_jk * E_ik
         + sum_k eta_jk * E_ij * E_ik + eps

with E_ik = 1 iff user i was served campaign k at least once (binary
served-at-least-once exposure, matching the intent-to-treat reading of the
design; exposure counts deliberately do not enter). Noise is additive
Gaussian by default; a Poisson count mode draws Y ~ Poisson(max(mu, 0))
because the real-world outcome is a visit count.

`true_degenerate_ates` is the validation oracle: it simulates a forced world
in which each competitor either always advertises or is absent, contrasts the
focal advertiser being always eligible against never eligible over fresh
Monte Carlo replications of arrivals and noise, and reports the mean
difference with its Monte Carlo standard error. Estimators elsewhere in the
package are judged against these numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtri

from . import randomize
from .core import Campaign, ExperimentConfig, ParexError, PartitionIndex
from .marketplace import ArrivalModel

_NOISE_LABEL = "outcome-noise"
_MIX_ASSIGN_LABEL = "oracle-mixed-assignment"


class ModelError(ParexError):
    """Outcome model references campaigns that do not exist, or is malformed."""


@dataclass(frozen=True)
class OutcomeModel:
    """Linear exposure-set outcome model over a fixed campaign roster.

    All arrays are ordered by ascending campaign_index: `baseline[j]` and
    `own_effect[j]` are per-focal scalars; `gamma[j, k]` is the direct effect
    of exposure to k on outcomes toward j; `eta[j, k]` the extra effect when
    the user is also exposed to j. Diagonals of gamma/eta are ignored.
    """

    campaign_indices: tuple[int, ...]
    baseline: np.ndarray = field(repr=False)
    own_effect: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)
    noise_scale: float = 0.0
    mode: str = "gaussian"

    def __post_init__(self):
        n = len(self.campaign_indices)
        if self.baseline.shape != (n,) or self.own_effect.shape != (n,):
            raise ModelError("baseline/own_effect must have one entry per campaign")
        if self.gamma.shape != (n, n) or self.eta.shape != (n, n):
            raise ModelError("gamma/eta must be square over the campaign roster")
        if self.noise_scale < 0:
            raise ModelError("noise_scale must be >= 0")
        if self.mode not in ("gaussian", "poisson"):
            raise ModelError(f"unknown outcome mode {self.mode!r}")

    def column(self, campaign_index: int) -> int:
        try:
            return self.campaign_indices.index(campaign_index)
        except ValueError:
            raise ModelError(f"model does not cover campaign {campaign_index}") from None

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "OutcomeModel":
        order = tuple(c.campaign_index for c in cfg.campaigns)
        n = len(order)
        pos = {j: k for k, j in enumerate(order)}
        gamma = np.zeros((n, n))
        eta = np.zeros((n, n))
        for (j, k), v in cfg.gamma.items():
            gamma[pos[j], pos[k]] = v
        for (j, k), v in cfg.eta.items():
            eta[pos[j], pos[k]] = v
        return cls(
            campaign_indices=order,
            baseline=np.asarray([cfg.baselines.get(j, 1.0) for j in order], dtype=float),
            own_effect=np.asarray([cfg.own_effects.get(j, 1.0) for j in order], dtype=float),
            gamma=gamma,
            eta=eta,
            noise_scale=cfg.outcome_noise,
            mode=cfg.outcome_mode,
        )

    @classmethod
    def simple(cls, campaign_indices, baseline=1.0, own_effect=1.0, noise_scale=0.0, mode="gaussian"):
        """All-scalar constructor with zero cross effects, for tests and toys."""
        n = len(campaign_indices)
        return cls(
            campaign_indices=tuple(campaign_indices),
            baseline=np.full(n, float(baseline)),
            own_effect=np.full(n, float(own_effect)),
            gamma=np.zeros((n, n)),
            eta=np.zeros((n, n)),
            noise_scale=noise_scale,
            mode=mode,
        )


@dataclass(frozen=True)
class OutcomeRecord:
    """One realized outcome: the user's cumulative response toward one focal ad."""

    user_id: int
    focal: int
    campaign_arm: int
    y: float


def _noise_uniforms(user_ids: np.ndarray, tag: int, seed: int) -> np.ndarray:
    """Strictly interior uniforms for inverse-CDF noise draws."""
    bits = randomize.mix64_bulk(user_ids, tag, seed)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _apply_noise(mu: np.ndarray, u: np.ndarray, model: OutcomeModel) -> np.ndarray:
    if model.mode == "poisson":
        return stats.poisson.ppf(u, np.clip(mu, 0.0, None))
    if model.noise_scale == 0:
        return mu
    return mu + model.noise_scale * ndtri(u)


def mean_outcomes(model: OutcomeModel, exposed: np.ndarray) -> np.ndarray:
    """Systematic outcome component for every focal: (n_users, n_campaigns)."""
    e = exposed.astype(float)
    n = len(model.campaign_indices)
    off = ~np.eye(n, dtype=bool)
    cross = e @ (model.gamma * off).T
    inter = e @ (model.eta * off).T
    return model.baseline[None, :] + model.own_effect[None, :] * e + cross + e * inter


def realize_outcomes(
    summary,
    model: OutcomeModel,
    seed: int,
    focals: tuple[int, ...] | None = None,
) -> np.ndarray:
    """Outcomes for every (user, focal) pair from an ExposureSummary.

    Returns an (n_users, n_focals) array with focals in the order given
    (default: every campaign in the model). Noise draws are keyed by
    (user_id, focal), independent of everything else.
    """
    focals = focals or model.campaign_indices
    for j in summary.campaign_indices:
        model.column(j)  # raises ModelError on unknown campaigns
    if tuple(summary.campaign_indices) != tuple(model.campaign_indices):
        raise ModelError("exposure summary and model cover different campaign rosters")
    mu = mean_outcomes(model, summary.exposed)
    noise_seed = randomize.derive_seed(seed, _NOISE_LABEL)
    out = np.empty((len(summary.user_ids), len(focals)))
    for col, j in enumerate(focals):
        u = _noise_uniforms(summary.user_ids, j, noise_seed)
        out[:, col] = _apply_noise(mu[:, model.column(j)], u, model)
    return out


def outcome_records(summary, model: OutcomeModel, seed: int, arms: np.ndarray):
    """Yield one OutcomeRecord per (user, focal) pair.

    `arms` is the (n_users, n_campaigns) assignment matrix aligned with the
    summary's campaign order.
    """
    y = realize_outcomes(summary, model, seed)
    for col, j in enumerate(model.campaign_indices):
        for row, uid in enumerate(summary.user_ids):
            yield OutcomeRecord(
                user_id=int(uid), focal=j, campaign_arm=int(arms[row, col]), y=float(y[row, col])
            )


# ---------------------------------------------------------------------------
# Forced-world oracle
# ---------------------------------------------------------------------------

def _ranked_columns(campaigns: list[Campaign]) -> list[int]:
    order = sorted(campaigns, key=lambda c: c.campaign_index)
    return [col for col, _ in sorted(enumerate(order), key=lambda t: (-t[1].score, t[1].campaign_index))]


def _forced_exposures(elig: np.ndarray, ranked_cols: list[int], arrivals: np.ndarray, slots: int) -> np.ndarray:
    """Exposure sets when eligibility is forced: top min(T, slots) eligible ads."""
    elig_r = elig[:, ranked_cols]
    cap = np.minimum(arrivals, slots)[:, None]
    served_r = elig_r & (np.cumsum(elig_r, axis=1) <= cap)
    out = np.zeros_like(elig)
    out[:, ranked_cols] = served_r
    return out


def competitor_order(campaigns: list[Campaign], focal: int) -> tuple[int, ...]:
    """Competitor campaign indices in ascending order (the omega coordinate order)."""
    return tuple(sorted(c.campaign_index for c in campaigns if c.campaign_index != focal))


def true_degenerate_ates(
    model: OutcomeModel,
    campaigns: list[Campaign],
    focal: int,
    omega,
    partitions: dict[int, PartitionIndex],
    label: int = 1,
    replications: int = 200,
    seed: int = 0,
    arrival: str = "geometric:3",
    slots: int = 8,
) -> tuple[float, float]:
    """True degenerate ATE for one (state, partition) by forced-world simulation.

    `omega` orders competitors by ascending campaign index; entries for
    competitors that do not target the partition are irrelevant (their forced
    advertising never reaches these users). Returns (tau, mc_se) over
    `replications` fresh draws of arrivals and outcome noise; within one
    replication the same noise is used for both arms (unit-level potential
    outcomes share their noise).
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    omega = tuple(getattr(omega, "omega", omega))
    comp = competitor_order(campaigns, focal)
    if len(omega) != len(comp):
        raise ValueError(f"omega has {len(omega)} coordinates; expected {len(comp)}")
    order = sorted(campaigns, key=lambda c: c.campaign_index)
    col_of = {c.campaign_index: k for k, c in enumerate(order)}

    members = partitions[focal].members(label)
    active = {k for k, w in zip(comp, omega) if w == 1}
    ranked_cols = _ranked_columns(order)
    arrival_model = ArrivalModel.parse(arrival)
    noise_seed = randomize.derive_seed(seed, _NOISE_LABEL)
    jcol = col_of[focal]

    base = np.zeros((len(members), len(order)), dtype=bool)
    for k in active:
        # Forced advertisers reach only the users they target.
        base[:, col_of[k]] = np.isin(members, np.fromiter(
            sorted(next(c for c in order if c.campaign_index == k).target_audience),
            dtype=np.uint64,
        ), assume_unique=True)

    taus = np.empty(replications)
    for r in range(replications):
        arr = arrival_model.draw(members, seed, salt=r + 1)
        elig_test = base.copy()
        elig_test[:, jcol] = True
        e_test = _forced_exposures(elig_test, ranked_cols, arr, slots)
        e_ctrl = _forced_exposures(base, ranked_cols, arr, slots)
        u = _noise_uniforms(members, r + 1, noise_seed)
        y_test = _apply_noise(mean_outcomes(model, e_test)[:, jcol], u, model)
        y_ctrl = _apply_noise(mean_outcomes(model, e_ctrl)[:, jcol], u, model)
        taus[r] = y_test.mean() - y_ctrl.mean()
    se = float(taus.std(ddof=1) / np.sqrt(replications)) if replications > 1 else float("nan")
    return float(taus.mean()), se


def true_ate_table(
    model: OutcomeModel,
    campaigns: list[Campaign],
    focal: int,
    partitions: dict[int, PartitionIndex],
    label: int = 1,
    replications: int = 200,
    seed: int = 0,
    arrival: str = "geometric:3",
    slots: int = 8,
) -> dict[tuple[int, ...], tuple[float, float]]:
    """Oracle taus for every state over the partition's competitor set.

    Keys are full omega vectors (ascending competitor index) with
    non-targeting competitors fixed at 0.
    """
    from .core import enumerate_states

    comp = competitor_order(campaigns, focal)
    relevant = sorted(partitions[focal].competitors(label))
    out = {}
    for s in enumerate_states(len(relevant)):
        omega = tuple(
            s.omega[relevant.index(k)] if k in relevant else 0 for k in comp
        )
        out[omega] = true_degenerate_ates(
            model, campaigns, focal, omega, partitions, label,
            replications=replications, seed=seed, arrival=arrival, slots=slots,
        )
    return out


def true_mixed_ate(
    model: OutcomeModel,
    campaigns: list[Campaign],
    focal: int,
    experimenting: dict[int, float],
    omega,
    partitions: dict[int, PartitionIndex],
    label: int = 1,
    replications: int = 200,
    seed: int = 0,
    arrival: str = "geometric:3",
    slots: int = 8,
) -> tuple[float, float]:
    """Focal ATE in a world where some competitors experiment at given shares.

    `experimenting` maps competitor index -> share sigma_k; those competitors'
    eligibility is re-randomized per user within each replication. Remaining
    competitors follow `omega` as in `true_degenerate_ates`. This is the
    re-simulation oracle for the sigma-mixing identity.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    omega = tuple(getattr(omega, "omega", omega))
    comp = competitor_order(campaigns, focal)
    order = sorted(campaigns, key=lambda c: c.campaign_index)
    col_of = {c.campaign_index: k for k, c in enumerate(order)}
    members = partitions[focal].members(label)
    ranked_cols = _ranked_columns(order)
    arrival_model = ArrivalModel.parse(arrival)
    noise_seed = randomize.derive_seed(seed, _NOISE_LABEL)
    mix_seed = randomize.derive_seed(seed, _MIX_ASSIGN_LABEL)
    jcol = col_of[focal]

    base = np.zeros((len(members), len(order)), dtype=bool)
    for k, w in zip(comp, omega):
        if w == 1 and k not in experimenting:
            aud = next(c for c in order if c.campaign_index == k).target_audience
            base[:, col_of[k]] = np.isin(
                members, np.fromiter(sorted(aud), dtype=np.uint64), assume_unique=True
            )

    taus = np.empty(replications)
    for r in range(replications):
        elig = base.copy()
        for k, share in experimenting.items():
            aud = next(c for c in order if c.campaign_index == k).target_audience
            in_aud = np.isin(members, np.fromiter(sorted(aud), dtype=np.uint64), assume_unique=True)
            # Fresh assignment per replication: tag packs (replication, campaign).
            tag = (r + 1 << 20) | k
            drawn = randomize.unit_floats(members, tag, mix_seed) < share
            elig[:, col_of[k]] = in_aud & drawn
        arr = arrival_model.draw(members, seed, salt=r + 1)
        elig_test = elig.copy()
        elig_test[:, jcol] = True
        elig_ctrl = elig.copy()
        elig_ctrl[:, jcol] = False
        e_test = _forced_exposures(elig_test, ranked_cols, arr, slots)
        e_ctrl = _forced_exposures(elig_ctrl, ranked_cols, arr, slots)
        u = _noise_uniforms(members, r + 1, noise_seed)
        y_test = _apply_noise(mean_outcomes(model, e_test)[:, jcol], u, model)
        y_ctrl = _apply_noise(mean_outcomes(model, e_ctrl)[:, jcol], u, model)
        taus[r] = y_test.mean() - y_ctrl.mean()
    se = float(taus.std(ddof=1) / np.sqrt(replications)) if replications > 1 else float("nan")
    return float(taus.mean()), se
