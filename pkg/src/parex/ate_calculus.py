"""Combining degenerate ATEs into experimentation-aware and prospective ATEs.

A degenerate ATE table gives the focal effect in every world where each
competitor either advertises-without-experimenting (1) or is absent (0).
This module mixes those numbers:

* `mix_sigma`: the two-point convex combination for one competitor
  experimenting at test share sigma.
* `prospective_ate`: belief-weighted average over all competitor states,
  with independent per-competitor beliefs (each competitor contributes
  p(omega_k) + p*(1) * sigma_k^omega_k (1-sigma_k)^(1-omega_k)) or an
  explicit joint state table.
* `competitor_curve`: the focal ATE as a function of one competitor's
  presence probability, averaging (unweighted) over the other competitors'
  states.
* `experimentation_surface`: the same as a function of one competitor's
  (advertising prob, experimenting-given-advertising prob) pair.
* `scenario_curves`: aligned vs independent competitor experimentation as a
  function of a common experimentation probability.

Competitors that do not target a partition's users never enter its table
cells: their coordinates stay 0 ("absent"), and any belief state over them is
projected onto the 0 row, which carries the same effect.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, ParexError, enumerate_states
from .estimators import AteTable, CellKey

_WEIGHT_TOL = 1e-9
_PROB_TOL = 1e-12


class CalculusError(ParexError):
    """Belief weights or table states are inconsistent."""


def mix_sigma(tau0: float, tau1: float, sigma: float) -> float:
    """ATE when the competitor experiments at test share sigma."""
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must lie in [0, 1], got {sigma}")
    return (1.0 - sigma) * tau0 + sigma * tau1


@dataclass(frozen=True)
class CompetitorBelief:
    """Forward-looking probabilities for one competitor.

    p_not_adv + p_adv_not_exp + p_adv_exp must sum to 1; `share` is the test
    share the competitor would use if it experiments.
    """

    p_not_adv: float
    p_adv_not_exp: float
    p_adv_exp: float
    share: float = 0.7

    def __post_init__(self):
        probs = (self.p_not_adv, self.p_adv_not_exp, self.p_adv_exp)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise CalculusError(f"belief probabilities outside [0, 1]: {probs}")
        if abs(sum(probs) - 1.0) > _PROB_TOL:
            raise CalculusError(f"belief probabilities must sum to 1, got {sum(probs)!r}")
        if not 0.0 <= self.share <= 1.0:
            raise CalculusError(f"share must lie in [0, 1], got {self.share}")

    def presence_weight(self, omega_k: int) -> float:
        """Probability the competitor is present (omega_k=1) or absent (0) to a user."""
        if omega_k == 1:
            return self.p_adv_not_exp + self.p_adv_exp * self.share
        return self.p_not_adv + self.p_adv_exp * (1.0 - self.share)


@dataclass(frozen=True)
class BeliefProfile:
    """Beliefs over all competitors: independent per-competitor terms, or a joint table.

    `competitors` is ascending by campaign index and fixes the coordinate
    order of every state. A joint table maps full state vectors to
    probabilities and must sum to 1.
    """

    competitors: tuple[int, ...]
    independent: dict[int, CompetitorBelief] | None = None
    joint: dict[tuple[int, ...], float] | None = None

    def __post_init__(self):
        if (self.independent is None) == (self.joint is None):
            raise CalculusError("provide exactly one of independent beliefs or a joint table")
        if self.independent is not None:
            missing = set(self.competitors) - set(self.independent)
            if missing:
                raise CalculusError(f"no beliefs for competitors {sorted(missing)}")
        else:
            total = sum(self.joint.values())
            if abs(total - 1.0) > _WEIGHT_TOL:
                raise CalculusError(f"joint belief table sums to {total!r}, expected 1")
            for state in self.joint:
                if len(state) != len(self.competitors):
                    raise CalculusError(f"joint state {state} has wrong dimension")

    @classmethod
    def point_mass(cls, competitors, omega) -> "BeliefProfile":
        """Degenerate beliefs concentrated on a single state."""
        omega = tuple(omega)
        beliefs = {
            k: CompetitorBelief(
                p_not_adv=1.0 - w, p_adv_not_exp=float(w), p_adv_exp=0.0
            )
            for k, w in zip(competitors, omega)
        }
        return cls(competitors=tuple(competitors), independent=beliefs)

    def weight(self, omega: tuple[int, ...]) -> float:
        if self.joint is not None:
            return self.joint.get(omega, 0.0)
        w = 1.0
        for k, bit in zip(self.competitors, omega):
            w *= self.independent[k].presence_weight(bit)
        return w


def _active_coordinates(table: AteTable, label: int) -> list[int]:
    """Competitor coordinates that take value 1 in some cell of the partition."""
    cells = [k for k in table.cells if k.s == label]
    if not cells:
        raise CalculusError(f"table has no cells for partition {label}")
    width = len(cells[0].d)
    return [v for v in range(width) if any(key.d[v] == 1 for key in cells)]


def _project_tau(table: AteTable, label: int, omega: tuple[int, ...], active: list[int]) -> float:
    """tau at a full state, read from the cell with inactive coordinates zeroed."""
    d = tuple(omega[v] if v in active else 0 for v in range(len(omega)))
    key = CellKey(d=d, s=label)
    if key not in table.cells:
        raise CalculusError(
            f"state {omega} requires cell d={d} in partition {label}, which the table lacks"
        )
    return table.cells[key].tau


def prospective_ate(table: AteTable, beliefs: BeliefProfile, label: int = 1) -> float:
    """Belief-weighted average of the degenerate ATEs within one partition.

    Enumerates every competitor state; belief weights must sum to 1 within
    1e-9, and every required (projected) state must be present in the table.
    """
    if tuple(beliefs.competitors) != tuple(table.competitors):
        raise CalculusError(
            f"beliefs cover {beliefs.competitors} but the table covers {table.competitors}"
        )
    active = _active_coordinates(table, label)
    total_w = 0.0
    value = 0.0
    for state in enumerate_states(len(table.competitors)):
        w = beliefs.weight(state.omega)
        total_w += w
        if w != 0.0:
            value += w * _project_tau(table, label, state.omega, active)
    if abs(total_w - 1.0) > _WEIGHT_TOL:
        raise CalculusError(f"belief weights sum to {total_w!r}, expected 1")
    return value


def state_averages(
    table: AteTable, label: int, competitor: int, beliefs: BeliefProfile | None = None
) -> tuple[float, float]:
    """(tau_bar at omega_k=0, tau_bar at omega_k=1) over the partition's cells.

    The remaining competitors' states are averaged with equal weight by
    default; passing independent `beliefs` switches to belief-weighted
    averaging (each remaining competitor contributes its presence
    probability, normalized within each side of the split).
    """
    try:
        v = table.competitors.index(competitor)
    except ValueError:
        raise CalculusError(f"{competitor} is not a competitor of focal {table.focal}") from None
    if beliefs is not None and beliefs.independent is None:
        raise CalculusError("belief-weighted state averaging needs independent beliefs")
    cells = [(key, e.tau) for key, e in table.cells.items() if key.s == label]
    if not cells:
        raise CalculusError(f"table has no cells for partition {label}")

    def rest_weight(key: CellKey) -> float:
        if beliefs is None:
            return 1.0
        w = 1.0
        for u, j in enumerate(table.competitors):
            if u != v:
                w *= beliefs.independent[j].presence_weight(key.d[u])
        return w

    def side_mean(bit: int):
        group = [(rest_weight(key), tau) for key, tau in cells if key.d[v] == bit]
        total = sum(w for w, _ in group)
        if not group or total <= 0:
            return None
        return sum(w * tau for w, tau in group) / total

    on = side_mean(1)
    off = side_mean(0)
    if on is None:  # competitor inactive in this partition: presence changes nothing
        return off, off
    return off, on


def competitor_curve(
    table: AteTable,
    competitor: int,
    grid,
    label: int = 1,
    normalize: bool = False,
    beliefs: BeliefProfile | None = None,
) -> list[tuple[float, float]]:
    """Focal ATE as a function of the probability the competitor is present.

    Returns (p, value) pairs; with `normalize`, values are divided by the
    curve's maximum absolute value. `beliefs` switches the averaging over the
    remaining competitors from unweighted to belief-weighted.
    """
    tau_off, tau_on = state_averages(table, label, competitor, beliefs)
    pts = []
    for p in grid:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"grid probability outside [0, 1]: {p}")
        pts.append((float(p), p * tau_on + (1.0 - p) * tau_off))
    if normalize:
        peak = max(abs(v) for _, v in pts)
        if peak > 0:
            pts = [(p, v / peak) for p, v in pts]
    return pts


def experimentation_surface(
    table: AteTable,
    competitor: int,
    grid_adv,
    grid_exp,
    sigma: float = 0.7,
    label: int = 1,
    beliefs: BeliefProfile | None = None,
) -> list[tuple[float, float, float]]:
    """Focal ATE over (P(advertise), P(experiment | advertise)) for one competitor.

    The competitor's presence probability at a node is
    p_adv*(1-p_exp) + p_adv*p_exp*sigma; the remaining competitors are
    averaged over their states exactly as in `competitor_curve`.
    """
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must lie in [0, 1], got {sigma}")
    tau_off, tau_on = state_averages(table, label, competitor, beliefs)
    rows = []
    for p_adv in grid_adv:
        for p_exp in grid_exp:
            if not (0.0 <= p_adv <= 1.0 and 0.0 <= p_exp <= 1.0):
                raise ValueError(f"grid node outside the simplex: ({p_adv}, {p_exp})")
            present = p_adv * (1.0 - p_exp) + p_adv * p_exp * sigma
            rows.append(
                (float(p_adv), float(p_exp), present * tau_on + (1.0 - present) * tau_off)
            )
    return rows


def scenario_curves(
    table: AteTable,
    p_exp_grid,
    sigma: float = 0.7,
    label: int = 1,
    modes: tuple[str, ...] = ("aligned", "independent"),
) -> dict[str, list[tuple[float, float]]]:
    """Aligned vs independent competitor experimentation curves.

    Every competitor advertises with probability one. With probability p_exp
    the competitors experiment (test share `sigma`); under `aligned` they do
    so as one block (users land in all-test or all-control together), under
    `independent` each competitor's assignment is independent.
    """
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must lie in [0, 1], got {sigma}")
    active = _active_coordinates(table, label)
    k = len(table.competitors)
    all1 = tuple(1 for _ in range(k))
    all0 = tuple(0 for _ in range(k))
    out: dict[str, list[tuple[float, float]]] = {}
    for mode in modes:
        if mode not in ("aligned", "independent"):
            raise ValueError(f"unknown scenario mode {mode!r}")
        pts = []
        for p in p_exp_grid:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p_exp outside [0, 1]: {p}")
            if mode == "aligned":
                w1 = (1.0 - p) + p * sigma
                value = w1 * _project_tau(table, label, all1, active)
                value += p * (1.0 - sigma) * _project_tau(table, label, all0, active)
            else:
                beliefs = BeliefProfile(
                    competitors=table.competitors,
                    independent={
                        j: CompetitorBelief(
                            p_not_adv=0.0,
                            p_adv_not_exp=1.0 - p,
                            p_adv_exp=p,
                            share=sigma,
                        )
                        for j in table.competitors
                    },
                )
                value = prospective_ate(table, beliefs, label)
            pts.append((float(p), value))
        out[mode] = pts
    return out


# ---------------------------------------------------------------------------
# Belief configuration file
# ---------------------------------------------------------------------------

def read_beliefs(path: str, competitors: tuple[int, ...]) -> BeliefProfile:
    """Read a belief profile from the key-value config format.

    Independent beliefs: one `[competitor K]` section per competitor with
    keys p_not_adv, p_adv_not_exp, p_adv_exp and optional share. Joint
    beliefs: a single `[joint]` section with `state <bits> = prob` entries,
    bits ordered by ascending competitor index.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e
    except OSError as e:
        raise ConfigError(f"cannot read beliefs {path}: {e}") from e

    if parser.has_section("joint"):
        joint: dict[tuple[int, ...], float] = {}
        for key, raw in parser["joint"].items():
            parts = key.split()
            if len(parts) != 2 or parts[0] != "state":
                raise ConfigError(f"[joint] bad key {key!r}; expected 'state <bits>'")
            bits = tuple(int(b) for b in parts[1])
            if len(bits) != len(competitors) or any(b not in (0, 1) for b in bits):
                raise ConfigError(f"[joint] state {parts[1]!r} does not match {len(competitors)} competitors")
            joint[bits] = float(raw)
        try:
            return BeliefProfile(competitors=competitors, joint=joint)
        except CalculusError as e:
            raise ConfigError(str(e)) from e

    beliefs = {}
    for name in parser.sections():
        if not name.lower().startswith("competitor"):
            continue
        try:
            k = int(name.split()[-1])
        except ValueError as e:
            raise ConfigError(f"bad competitor section name {name!r}") from e
        sec = parser[name]
        try:
            beliefs[k] = CompetitorBelief(
                p_not_adv=float(sec.get("p_not_adv", "0")),
                p_adv_not_exp=float(sec.get("p_adv_not_exp", "0")),
                p_adv_exp=float(sec.get("p_adv_exp", "0")),
                share=float(sec.get("share", "0.7")),
            )
        except (ValueError, CalculusError) as e:
            raise ConfigError(f"[{name}]: {e}") from e
    try:
        return BeliefProfile(competitors=competitors, independent=beliefs)
    except CalculusError as e:
        raise ConfigError(str(e)) from e
