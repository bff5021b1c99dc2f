"""Ranked-queue ad serving under the parallel experimentation design.

Every impression opportunity draws a ranked queue of the campaigns targeting
the user (score = bid x quality, optional per-auction jitter). The head of
that queue is logged as the auction-specific counterfactual ad: what the user
would have been served with no experimentation. The factual serve removes all
campaigns whose assignment bit is 0, applies a simplified user-experience
filter (no advertiser repeats within one multi-slot serve event), and serves
the surviving head. NO_AD (index 0) marks an empty outcome on either side.

Two execution paths produce identical results:

* a per-user record path (`run_session`) that materializes `AuctionRecord`s
  for the exposure log, and
* a vectorized path (`simulate_exposures`) that skips record assembly and
  returns only per-user exposure/eligibility matrices (available when queue
  jitter is off; the equality of the two paths is under test).

All randomness is counter-based: arrivals, jitter, and noise are derived from
(seed, user_id, ordinal) hashes, so logs are a pure function of (config,
seed), independent of evaluation order and thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import randomize
from .core import NO_AD, Campaign, ConfigError

_ARRIVAL_LABEL = "arrivals"
_JITTER_LABEL = "queue-jitter"

# Auction ids pack (user_id, ordinal); sessions longer than this are refused.
_MAX_SESSION = 1 << 20


@dataclass(frozen=True)
class ScoringConfig:
    """Queue scoring: descending bid*quality, ties by ascending campaign index.

    `jitter` > 0 multiplies each campaign's score by exp(jitter * z) with z a
    per-(user, auction, campaign) standard normal, modelling per-impression
    queue variation.
    """

    jitter: float = 0.0

    def __post_init__(self):
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")


@dataclass(frozen=True)
class AuctionRecord:
    """One auction: the logged queue, the factual serve, and the counterfactual head."""

    auction_id: int
    user_id: int
    slot: int
    pre_filter_queue: tuple[int, ...]
    served: int
    counterfactual: int


@dataclass(frozen=True)
class Session:
    """All auctions of one user during the experiment window."""

    user_id: int
    records: tuple[AuctionRecord, ...]

    @property
    def auction_count(self) -> int:
        return len(self.records)


def rank_queue(
    campaigns: list[Campaign],
    scoring: ScoringConfig | None = None,
    draw: np.ndarray | None = None,
) -> tuple[int, ...]:
    """Rank campaigns by descending score, ties broken by ascending index.

    `draw` supplies the per-campaign standard-normal jitter draws (parallel to
    `campaigns`) when scoring.jitter > 0.
    """
    scoring = scoring or ScoringConfig()
    scored = []
    for pos, c in enumerate(campaigns):
        s = c.score
        if scoring.jitter > 0 and draw is not None:
            s *= math.exp(scoring.jitter * float(draw[pos]))
        scored.append((-s, c.campaign_index))
    scored.sort()
    return tuple(index for _, index in scored)


def serve(
    queue: tuple[int, ...],
    assignment: dict[int, int],
    already_served: frozenset[int] = frozenset(),
) -> tuple[int, int]:
    """Resolve one auction: (served, counterfactual).

    The counterfactual is the queue head regardless of any assignment. The
    factual serve is the first queued campaign with assignment bit 1 that has
    not already been served within the current serve event.
    """
    counterfactual = queue[0] if queue else NO_AD
    served = NO_AD
    for j in queue:
        if assignment[j] == 1 and j not in already_served:
            served = j
            break
    return served, counterfactual


@dataclass(frozen=True)
class ArrivalModel:
    """Per-user auction-count distribution.

    Specs: "geometric:MEAN" (support 1, 2, ...), "poisson:MEAN" (support >= 0),
    "fixed:N". Draws are inverse-CDF transforms of counter-based uniforms, so
    they depend only on (seed, user_id).
    """

    kind: str
    param: float

    @classmethod
    def parse(cls, spec: str) -> "ArrivalModel":
        kind, _, raw = spec.strip().partition(":")
        try:
            param = float(raw)
        except ValueError as e:
            raise ConfigError(f"bad arrival spec {spec!r}") from e
        if kind == "geometric":
            if param < 1:
                raise ConfigError("geometric arrival mean must be >= 1")
        elif kind == "poisson":
            if param < 0:
                raise ConfigError("poisson arrival mean must be >= 0")
        elif kind == "fixed":
            if param < 0 or param != int(param):
                raise ConfigError("fixed arrival count must be a nonnegative integer")
        else:
            raise ConfigError(f"unknown arrival model {kind!r}")
        return cls(kind=kind, param=param)

    def draw(self, user_ids: np.ndarray, seed: int, salt: int = 0) -> np.ndarray:
        """Vectorized T_i draws; `salt` distinguishes replications."""
        if self.kind == "fixed":
            return np.full(len(user_ids), int(self.param), dtype=np.int64)
        u = randomize.unit_floats(user_ids, salt, randomize.derive_seed(seed, _ARRIVAL_LABEL))
        if self.kind == "geometric":
            p = 1.0 / self.param
            if p >= 1.0:
                return np.ones(len(user_ids), dtype=np.int64)
            t = np.ceil(np.log1p(-u) / math.log1p(-p))
            return np.maximum(t, 1.0).astype(np.int64)
        from scipy import stats

        return stats.poisson.ppf(u, self.param).astype(np.int64)


def _jitter_draws(user_id: int, ordinal: int, n: int, seed: int) -> np.ndarray:
    """Standard normals for one auction's queue jitter, counter-based."""
    from scipy.special import ndtri

    idx = np.arange(n, dtype=np.uint64) + np.uint64((ordinal << 24) + 1)
    bits = randomize.mix64_bulk(idx, user_id, randomize.derive_seed(seed, _JITTER_LABEL))
    u = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def run_session(
    user_id: int,
    campaigns: list[Campaign],
    assignment: dict[int, int],
    auction_count: int,
    seed: int = 0,
    slots: int = 8,
    scoring: ScoringConfig | None = None,
) -> Session:
    """Run `auction_count` auctions for one user, chunked into serve events.

    `campaigns` must be the campaigns targeting this user. The assignment is
    fixed across all auctions. Each serve event fills up to `slots` slots and
    the experience filter forbids repeat serves within it.
    """
    if auction_count < 0:
        raise ValueError("auction_count must be >= 0")
    if auction_count >= _MAX_SESSION:
        raise ValueError(f"session of {auction_count} auctions exceeds the {_MAX_SESSION} cap")
    scoring = scoring or ScoringConfig()
    base_queue = rank_queue(campaigns, ScoringConfig())  # jitter-free ranking
    records = []
    served_this_event: set[int] = set()
    for ordinal in range(auction_count):
        slot = ordinal % slots + 1
        if slot == 1:
            served_this_event = set()
        if scoring.jitter > 0:
            draw = _jitter_draws(user_id, ordinal, len(campaigns), seed)
            queue = rank_queue(campaigns, scoring, draw)
        else:
            queue = base_queue
        got, cf = serve(queue, assignment, frozenset(served_this_event))
        if got != NO_AD:
            served_this_event.add(got)
        records.append(
            AuctionRecord(
                auction_id=(user_id << 20) | ordinal,
                user_id=user_id,
                slot=slot,
                pre_filter_queue=queue,
                served=got,
                counterfactual=cf,
            )
        )
    return Session(user_id=user_id, records=tuple(records))


def eligible_sample(sessions_or_records, focal: int) -> set[int]:
    """Users served the focal ad factually or counterfactually at least once."""
    out: set[int] = set()
    for item in sessions_or_records:
        records = item.records if isinstance(item, Session) else (item,)
        for r in records:
            if r.served == focal or r.counterfactual == focal:
                out.add(r.user_id)
                break
    return out


# ---------------------------------------------------------------------------
# Vectorized experiment path (jitter-free)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExposureSummary:
    """Per-user exposure and eligibility for a whole experiment.

    Column order follows ascending campaign_index. `exposed[u, k]` is True iff
    the user was factually served campaign k at least once; `eligible[u, k]`
    additionally admits users whose counterfactual ad was k at least once.
    """

    campaign_indices: tuple[int, ...]
    user_ids: np.ndarray = field(repr=False)
    arrivals: np.ndarray = field(repr=False)
    exposed: np.ndarray = field(repr=False)
    eligible: np.ndarray = field(repr=False)

    def column(self, campaign_index: int) -> int:
        return self.campaign_indices.index(campaign_index)


def simulate_exposures(
    campaigns: list[Campaign],
    user_ids: np.ndarray,
    bits: np.ndarray,
    arrivals: np.ndarray,
    slots: int = 8,
) -> ExposureSummary:
    """Vectorized jitter-free equivalent of running every user's session.

    With a fixed ranking, a user's factual exposures are the first
    min(T_i, slots) campaigns of their assignment-filtered queue, and the
    counterfactual head is their top-ranked targeting campaign. `bits` is the
    (n_users, n_campaigns) assignment matrix with campaigns in ascending index
    order; non-members must already be 0.
    """
    order = sorted(campaigns, key=lambda c: c.campaign_index)
    member = np.zeros_like(bits, dtype=bool)
    for col, c in enumerate(order):
        aud = np.fromiter(sorted(c.target_audience), dtype=np.uint64, count=len(c.target_audience))
        pos = np.searchsorted(user_ids, aud)
        ok = pos < len(user_ids)
        pos = pos[ok]
        hit = user_ids[pos] == aud[ok]
        member[pos[hit], col] = True

    # Global rank order of the columns (scores are user-independent).
    ranked_cols = [
        col for col, _ in sorted(enumerate(order), key=lambda t: (-t[1].score, t[1].campaign_index))
    ]
    member_r = member[:, ranked_cols]
    elig_r = bits[:, ranked_cols].astype(bool) & member_r

    cap = np.minimum(arrivals, slots)[:, None]
    served_r = elig_r & (np.cumsum(elig_r, axis=1) <= cap)

    # Counterfactual head: the user's first targeting campaign in rank order.
    first = np.argmax(member_r, axis=1)
    any_target = member_r.any(axis=1)
    cf_head = np.where(any_target & (arrivals > 0), first, -1)

    n, m = bits.shape
    exposed = np.zeros((n, m), dtype=bool)
    exposed[:, ranked_cols] = served_r
    eligible = exposed.copy()
    rows = np.nonzero(cf_head >= 0)[0]
    eligible[rows, np.asarray(ranked_cols)[cf_head[rows]]] = True

    return ExposureSummary(
        campaign_indices=tuple(c.campaign_index for c in order),
        user_ids=user_ids,
        arrivals=arrivals,
        exposed=exposed,
        eligible=eligible,
    )


def summarize_sessions(
    sessions: list[Session], campaign_indices: tuple[int, ...]
) -> tuple[np.ndarray, np.ndarray]:
    """(exposed, eligible) matrices from materialized sessions, for cross-checks."""
    col = {j: k for k, j in enumerate(campaign_indices)}
    exposed = np.zeros((len(sessions), len(campaign_indices)), dtype=bool)
    eligible = np.zeros_like(exposed)
    for row, s in enumerate(sessions):
        for r in s.records:
            if r.served != NO_AD:
                exposed[row, col[r.served]] = True
                eligible[row, col[r.served]] = True
            if r.counterfactual != NO_AD:
                eligible[row, col[r.counterfactual]] = True
    return exposed, eligible


# ---------------------------------------------------------------------------
# Whole-experiment drivers and the exposure log
# ---------------------------------------------------------------------------

LOG_HEADER = "user_id,auction_id,slot,queue,served,counterfactual"


def experiment_sessions(cfg, seed: int, threads: int = 1) -> list[Session]:
    """Run every user's session under a parsed ExperimentConfig.

    Sessions come back sorted by user id regardless of `threads`; all draws
    are counter-based, so the output is a pure function of (cfg, seed).
    """
    from concurrent.futures import ThreadPoolExecutor

    from .core import assign_all, universe

    campaigns = sorted(cfg.campaigns, key=lambda c: c.campaign_index)
    users = universe(campaigns)
    aset = assign_all(campaigns, seed)
    arrivals = ArrivalModel.parse(cfg.arrival).draw(users, seed)
    scoring = ScoringConfig(jitter=cfg.queue_jitter)

    audiences = {c.campaign_index: c.target_audience for c in campaigns}

    def one(i: int) -> Session:
        uid = int(users[i])
        targeting = [c for c in campaigns if uid in audiences[c.campaign_index]]
        assignment = {
            c.campaign_index: int(aset.bits[i, aset.column(c.campaign_index)]) for c in targeting
        }
        return run_session(
            uid, targeting, assignment, int(arrivals[i]), seed=seed, slots=cfg.slots, scoring=scoring
        )

    indices = range(len(users))
    if threads <= 1:
        return [one(i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, indices, chunksize=max(1, len(users) // (threads * 8) or 1)))


def experiment_summary(cfg, seed: int) -> ExposureSummary:
    """Vectorized end-to-end exposure summary (requires queue_jitter == 0)."""
    from .core import assign_all, universe

    if cfg.queue_jitter != 0:
        raise ValueError("the vectorized path does not support queue jitter; use experiment_sessions")
    campaigns = sorted(cfg.campaigns, key=lambda c: c.campaign_index)
    users = universe(campaigns)
    aset = assign_all(campaigns, seed)
    arrivals = ArrivalModel.parse(cfg.arrival).draw(users, seed)
    return simulate_exposures(campaigns, users, aset.bits, arrivals, slots=cfg.slots)


def log_rows(sessions: list[Session]):
    """Yield exposure-log CSV rows (as strings, no trailing newline)."""
    for s in sessions:
        for r in s.records:
            queue = "|".join(str(j) for j in r.pre_filter_queue)
            yield f"{r.user_id},{r.auction_id},{r.slot},{queue},{r.served},{r.counterfactual}"


def write_exposure_log(path: str, sessions: list[Session]) -> int:
    """Write the exposure log; returns the record count."""
    n = 0
    with open(path, "w", newline="") as f:
        f.write(LOG_HEADER + "\n")
        for row in log_rows(sessions):
            f.write(row + "\n")
            n += 1
    return n


def read_exposure_log(path: str) -> list[AuctionRecord]:
    import gzip

    opener = gzip.open if path.endswith(".gz") else open
    records = []
    with opener(path, "rt") as f:
        header = f.readline().strip()
        if header != LOG_HEADER:
            raise ConfigError(f"{path}: unexpected exposure log header {header!r}")
        for line in f:
            user, auction, slot, queue, served, cf = line.rstrip("\n").split(",")
            records.append(
                AuctionRecord(
                    auction_id=int(auction),
                    user_id=int(user),
                    slot=int(slot),
                    pre_filter_queue=tuple(int(x) for x in queue.split("|")) if queue else (),
                    served=int(served),
                    counterfactual=int(cf),
                )
            )
    return records
