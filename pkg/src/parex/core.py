"""Domain types and design checks for parallel advertiser experiments.

Holds the campaign roster, per-user treatment assignment vectors, the
audience partitions induced by overlapping target audiences, the degenerate
states of the world for a focal advertiser, and the overlap / full-support
feasibility checks that an experiment must satisfy before its per-cell
contrasts are identified.

All types are immutable after construction and all operations are pure, so
everything here is safe to evaluate in parallel over users or advertisers.
"""

from __future__ import annotations

import configparser
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import randomize

# Campaign index 0 is reserved for the "no ad" outside option in logs.
NO_AD = 0

# Fixed salt for hash-defined audiences: membership must not depend on the
# experiment seed, otherwise audiences would change between runs.
_AUDIENCE_SALT = 0x41554449454E4345

STATE_CAP = 24


class ParexError(Exception):
    """Base class for all package errors."""


class ConfigError(ParexError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class Campaign:
    """One advertiser's campaign: audience, experiment share, and auction inputs."""

    campaign_index: int
    target_audience: frozenset[int]
    treatment_share: float
    base_bid: float = 1.0
    quality: float = 1.0

    def __post_init__(self):
        if self.campaign_index < 1:
            raise ConfigError(f"campaign_index must be >= 1, got {self.campaign_index}")
        if not 0.0 <= self.treatment_share <= 1.0:
            raise ConfigError(f"treatment_share must lie in [0, 1], got {self.treatment_share}")
        if self.base_bid < 0 or self.quality < 0:
            raise ConfigError("base_bid and quality must be nonnegative")

    @property
    def score(self) -> float:
        """Queue-ranking score: bid times quality."""
        return self.base_bid * self.quality


@dataclass(frozen=True)
class TreatmentAssignment:
    """A user's total treatment assignment: one bit per campaign, ordered by campaign_index."""

    user_id: int
    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("assignment bits must be 0 or 1")

    def without(self, position: int) -> tuple[int, ...]:
        """Partial assignment: the bit vector with the focal coordinate dropped."""
        return self.bits[:position] + self.bits[position + 1 :]


@dataclass(frozen=True)
class StateOfWorld:
    """Degenerate competitor state: 0 = not advertising, 1 = advertising, not experimenting."""

    omega: tuple[int, ...]

    def __post_init__(self):
        if any(w not in (0, 1) for w in self.omega):
            raise ValueError("state coordinates must be 0 or 1")


def enumerate_states(n_competitors: int, cap: int = STATE_CAP) -> list[StateOfWorld]:
    """All 2^n degenerate states, lexicographic by campaign index order.

    Refuses n above `cap` (default 24) to bound memory.
    """
    if n_competitors < 0:
        raise ValueError("n_competitors must be >= 0")
    if n_competitors > cap:
        raise ValueError(f"refusing to enumerate 2^{n_competitors} states (cap is 2^{cap})")
    return [StateOfWorld(w) for w in itertools.product((0, 1), repeat=n_competitors)]


@dataclass(frozen=True)
class PartitionIndex:
    """Audience partition of one focal advertiser's target audience.

    Users are grouped by the exact set of other advertisers targeting them;
    labels are dense 1-based integers, assigned by sorting the distinct
    competitor-set signatures by (size, indices) so they are stable under any
    reordering of users.
    """

    focal: int
    competitor_sets: tuple[frozenset[int], ...]  # position q-1 holds O_jq
    user_ids: np.ndarray = field(repr=False)  # sorted, equals TA_focal
    user_labels: np.ndarray = field(repr=False)  # parallel to user_ids, values in 1..Q

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(range(1, len(self.competitor_sets) + 1))

    def competitors(self, label: int) -> frozenset[int]:
        return self.competitor_sets[label - 1]

    def members(self, label: int) -> np.ndarray:
        return self.user_ids[self.user_labels == label]

    def label_of(self, user_id: int) -> int:
        pos = np.searchsorted(self.user_ids, user_id)
        if pos >= len(self.user_ids) or self.user_ids[pos] != user_id:
            raise KeyError(f"user {user_id} not in focal {self.focal}'s audience")
        return int(self.user_labels[pos])


def _validate_roster(campaigns: list[Campaign]) -> None:
    if not campaigns:
        raise ConfigError("campaign list is empty")
    indices = [c.campaign_index for c in campaigns]
    if len(set(indices)) != len(indices):
        raise ConfigError(f"duplicate campaign indices: {sorted(indices)}")
    for c in campaigns:
        if not c.target_audience:
            raise ConfigError(f"campaign {c.campaign_index} has an empty audience")


def universe(campaigns: list[Campaign]) -> np.ndarray:
    """Sorted array of every user targeted by at least one campaign."""
    ids: set[int] = set()
    for c in campaigns:
        ids.update(c.target_audience)
    return np.fromiter(sorted(ids), dtype=np.uint64, count=len(ids))


def membership_matrix(campaigns: list[Campaign], users: np.ndarray) -> np.ndarray:
    """Boolean (n_users, n_campaigns) matrix of audience membership.

    Column order follows ascending campaign_index.
    """
    order = sorted(campaigns, key=lambda c: c.campaign_index)
    out = np.zeros((len(users), len(order)), dtype=bool)
    for col, c in enumerate(order):
        aud = np.fromiter(sorted(c.target_audience), dtype=np.uint64, count=len(c.target_audience))
        pos = np.searchsorted(users, aud)
        ok = pos < len(users)
        pos = pos[ok]
        hit = users[pos] == aud[ok]
        out[pos[hit], col] = True
    return out


def build_partitions(campaigns: list[Campaign]) -> dict[int, PartitionIndex]:
    """Partition each advertiser's audience by the exact competitor set targeting each user.

    Returns one PartitionIndex per campaign, keyed by campaign index. Within a
    focal audience the partitions are pairwise disjoint and their union is the
    full audience.
    """
    _validate_roster(campaigns)
    order = sorted(campaigns, key=lambda c: c.campaign_index)
    idx = [c.campaign_index for c in order]
    users = universe(campaigns)
    member = membership_matrix(campaigns, users)

    # Encode each user's targeting set as a bit code for fast grouping.
    if len(order) > 63:
        raise ConfigError("more than 63 campaigns is unsupported")
    codes = member @ (1 << np.arange(len(order), dtype=np.uint64))

    out: dict[int, PartitionIndex] = {}
    for col, focal in enumerate(idx):
        in_focal = member[:, col]
        focal_users = users[in_focal]
        rest_codes = codes[in_focal] & ~np.uint64(1 << col)
        distinct = np.unique(rest_codes)

        def to_set(code: int) -> frozenset[int]:
            return frozenset(idx[k] for k in range(len(idx)) if code >> k & 1)

        sigs = sorted((to_set(int(c)) for c in distinct), key=lambda s: (len(s), sorted(s)))
        code_of = {int(c): to_set(int(c)) for c in distinct}
        label_of_sig = {s: q + 1 for q, s in enumerate(sigs)}
        labels = np.fromiter(
            (label_of_sig[code_of[int(c)]] for c in rest_codes), dtype=np.int64, count=len(rest_codes)
        )
        out[focal] = PartitionIndex(
            focal=focal,
            competitor_sets=tuple(sigs),
            user_ids=focal_users,
            user_labels=labels,
        )
    return out


@dataclass(frozen=True)
class AssignmentSet:
    """Bulk treatment assignments for every user in the experiment universe.

    `bits[u, k]` is 1 iff user `user_ids[u]` is in the test group of the k-th
    campaign (ascending campaign_index order); 0 for control or non-members.
    """

    campaign_indices: tuple[int, ...]
    user_ids: np.ndarray = field(repr=False)
    bits: np.ndarray = field(repr=False)

    def column(self, campaign_index: int) -> int:
        return self.campaign_indices.index(campaign_index)

    def rows_for(self, users: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.user_ids, users)
        if np.any(pos >= len(self.user_ids)) or np.any(self.user_ids[pos] != users):
            raise KeyError("assignment set does not cover all requested users")
        return pos

    def for_user(self, user_id: int) -> TreatmentAssignment:
        pos = self.rows_for(np.asarray([user_id], dtype=np.uint64))[0]
        return TreatmentAssignment(user_id=user_id, bits=tuple(int(b) for b in self.bits[pos]))


def assign_all(campaigns: list[Campaign], seed: int) -> AssignmentSet:
    """Hash-split every user of every audience; non-members get 0."""
    _validate_roster(campaigns)
    order = sorted(campaigns, key=lambda c: c.campaign_index)
    users = universe(campaigns)
    member = membership_matrix(campaigns, users)
    bits = np.zeros_like(member, dtype=np.int8)
    for col, c in enumerate(order):
        test = randomize.assign_bulk(users, c.campaign_index, seed, c.treatment_share)
        bits[:, col] = (test & member[:, col]).astype(np.int8)
    return AssignmentSet(
        campaign_indices=tuple(c.campaign_index for c in order),
        user_ids=users,
        bits=bits,
    )


@dataclass(frozen=True)
class PartitionReport:
    """Feasibility report for one (focal, partition) pair.

    overlap: empirical test share per advertiser active in the partition, which
    must lie strictly inside (0, 1). full_support_a: every test/control cell
    over the active advertisers holds at least `min_cell` users. full_support_b:
    the all-test and all-control cells are nonempty.
    """

    focal: int
    label: int
    competitors: frozenset[int]
    n_users: int
    min_cell: int
    shares: dict[int, float]
    overlap_violations: tuple[int, ...]
    sparse_cells: tuple[tuple[tuple[int, ...], int], ...]  # (cell bits, count) with count < min_cell
    full_support_b_ok: bool

    @property
    def overlap_ok(self) -> bool:
        return not self.overlap_violations

    @property
    def full_support_a_ok(self) -> bool:
        return not self.sparse_cells

    @property
    def ok(self) -> bool:
        return self.overlap_ok and self.full_support_a_ok and self.full_support_b_ok


def check_assumptions(
    assignments: AssignmentSet,
    partitions: dict[int, PartitionIndex],
    min_cell: int = 1,
) -> list[PartitionReport]:
    """Report overlap and full-support status for every (focal, partition) pair.

    Report-only: violations are flagged, never raised.
    """
    if min_cell < 1:
        raise ValueError("min_cell must be >= 1")
    reports = []
    for focal in sorted(partitions):
        pidx = partitions[focal]
        for label in pidx.labels:
            members = pidx.members(label)
            active = sorted({focal} | pidx.competitors(label))
            cols = [assignments.column(a) for a in active]
            rows = assignments.rows_for(members)
            sub = assignments.bits[np.ix_(rows, cols)]

            shares = {a: float(sub[:, k].mean()) for k, a in enumerate(active)}
            overlap_bad = tuple(a for a in active if not 0.0 < shares[a] < 1.0)

            # Occupancy of every test/control combination over the active set.
            weights = 1 << np.arange(len(active))
            cell_codes = sub.astype(np.int64) @ weights
            counts = np.bincount(cell_codes, minlength=1 << len(active))
            sparse = tuple(
                (tuple(int(code >> k & 1) for k in range(len(active))), int(counts[code]))
                for code in range(1 << len(active))
                if counts[code] < min_cell
            )
            all_test = int(counts[(1 << len(active)) - 1])
            all_control = int(counts[0])

            reports.append(
                PartitionReport(
                    focal=focal,
                    label=label,
                    competitors=pidx.competitors(label),
                    n_users=len(members),
                    min_cell=min_cell,
                    shares=shares,
                    overlap_violations=overlap_bad,
                    sparse_cells=sparse,
                    full_support_b_ok=all_test > 0 and all_control > 0,
                )
            )
    return reports


# ---------------------------------------------------------------------------
# Configuration file
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed experiment configuration: roster plus simulator settings."""

    campaigns: tuple[Campaign, ...]
    slots: int = 8
    arrival: str = "geometric:3"
    queue_jitter: float = 0.0
    outcome_mode: str = "gaussian"
    outcome_noise: float = 0.5
    baselines: dict[int, float] = field(default_factory=dict)
    own_effects: dict[int, float] = field(default_factory=dict)
    gamma: dict[tuple[int, int], float] = field(default_factory=dict)
    eta: dict[tuple[int, int], float] = field(default_factory=dict)

    def campaign(self, index: int) -> Campaign:
        for c in self.campaigns:
            if c.campaign_index == index:
                return c
        raise KeyError(f"no campaign with index {index}")


def parse_audience(spec: str, campaign_index: int) -> frozenset[int]:
    """Parse an audience spec.

    Forms:
      range:LO-HI          every user id in [LO, HI]
      ids:1,2,3            an explicit list
      hash:P of LO-HI      deterministic pseudo-random subset of [LO, HI] with
                           inclusion probability P (independent of the
                           experiment seed; keyed by campaign index)
    """
    spec = spec.strip()
    try:
        kind, _, rest = spec.partition(":")
        if kind == "range":
            lo, hi = (int(x) for x in rest.split("-"))
            if hi < lo:
                raise ValueError
            return frozenset(range(lo, hi + 1))
        if kind == "ids":
            return frozenset(int(x) for x in rest.split(","))
        if kind == "hash":
            p_str, _, rng = rest.partition(" of ")
            p = float(p_str)
            lo, hi = (int(x) for x in rng.split("-"))
            if not 0.0 <= p <= 1.0 or hi < lo:
                raise ValueError
            ids = np.arange(lo, hi + 1, dtype=np.uint64)
            keep = randomize.unit_floats(ids, campaign_index, _AUDIENCE_SALT) < p
            return frozenset(int(u) for u in ids[keep])
    except (ValueError, TypeError):
        pass
    raise ConfigError(f"bad audience spec {spec!r} for campaign {campaign_index}")


def _get_float(section, key: str, default: float | None = None) -> float:
    raw = section.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"[{section.name}] missing required key '{key}'")
        return default
    try:
        return float(raw)
    except ValueError as e:
        raise ConfigError(f"[{section.name}] key '{key}': not a number: {raw!r}") from e


def load_config(path: str) -> ExperimentConfig:
    """Read the plain-text key-value experiment configuration.

    One `[campaign NAME]` section per campaign with keys index, audience,
    share, bid, quality and optional outcome keys baseline / own_effect; an
    optional `[experiment]` section for simulator settings; an optional
    `[effects]` section for cross-campaign outcome effects with keys like
    `gamma 1 2` and `eta 1 2`.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    campaigns: list[Campaign] = []
    baselines: dict[int, float] = {}
    own_effects: dict[int, float] = {}
    for name in parser.sections():
        if not name.lower().startswith("campaign"):
            continue
        sec = parser[name]
        if "index" not in sec:
            raise ConfigError(f"[{name}] missing required key 'index'")
        try:
            index = int(sec["index"])
        except ValueError as e:
            raise ConfigError(f"[{name}] key 'index': not an integer") from e
        if "audience" not in sec:
            raise ConfigError(f"[{name}] missing required key 'audience'")
        campaigns.append(
            Campaign(
                campaign_index=index,
                target_audience=parse_audience(sec["audience"], index),
                treatment_share=_get_float(sec, "share"),
                base_bid=_get_float(sec, "bid", 1.0),
                quality=_get_float(sec, "quality", 1.0),
            )
        )
        baselines[index] = _get_float(sec, "baseline", 1.0)
        own_effects[index] = _get_float(sec, "own_effect", 1.0)
    _validate_roster(campaigns)
    known = {c.campaign_index for c in campaigns}

    slots, arrival, jitter = 8, "geometric:3", 0.0
    mode, noise = "gaussian", 0.5
    if parser.has_section("experiment"):
        sec = parser["experiment"]
        slots = int(_get_float(sec, "slots", 8))
        arrival = sec.get("arrival", "geometric:3").strip()
        jitter = _get_float(sec, "queue_jitter", 0.0)
        mode = sec.get("outcome_mode", "gaussian").strip().lower()
        noise = _get_float(sec, "outcome_noise", 0.5)
        if slots < 1:
            raise ConfigError("[experiment] slots must be >= 1")
        if mode not in ("gaussian", "poisson"):
            raise ConfigError(f"[experiment] outcome_mode must be gaussian or poisson, got {mode!r}")
        if noise < 0:
            raise ConfigError("[experiment] outcome_noise must be >= 0")

    gamma: dict[tuple[int, int], float] = {}
    eta: dict[tuple[int, int], float] = {}
    if parser.has_section("effects"):
        for key, raw in parser["effects"].items():
            parts = key.split()
            if len(parts) != 3 or parts[0] not in ("gamma", "eta"):
                raise ConfigError(f"[effects] bad key {key!r}; expected 'gamma J K' or 'eta J K'")
            j, k = int(parts[1]), int(parts[2])
            if j not in known or k not in known:
                raise ConfigError(f"[effects] key {key!r} references an unknown campaign")
            if j == k:
                raise ConfigError(f"[effects] key {key!r} must reference two distinct campaigns")
            try:
                value = float(raw)
            except ValueError as e:
                raise ConfigError(f"[effects] key {key!r}: not a number: {raw!r}") from e
            (gamma if parts[0] == "gamma" else eta)[(j, k)] = value

    return ExperimentConfig(
        campaigns=tuple(sorted(campaigns, key=lambda c: c.campaign_index)),
        slots=slots,
        arrival=arrival,
        queue_jitter=jitter,
        outcome_mode=mode,
        outcome_noise=noise,
        baselines=baselines,
        own_effects=own_effects,
        gamma=gamma,
        eta=eta,
    )
