"""Campaign roster, partitions, feasibility checks, state enumeration, config parsing."""

import numpy as np
import pytest

from parex import core, randomize
from parex.core import Campaign, ConfigError


def camp(i, audience, share=0.5, bid=1.0, quality=1.0):
    return Campaign(
        campaign_index=i,
        target_audience=frozenset(audience),
        treatment_share=share,
        base_bid=bid,
        quality=quality,
    )


# ---------------------------------------------------------------------------
# Partitions
# ---------------------------------------------------------------------------

def test_three_advertiser_intersections():
    # Focal j=1 overlapping k=2 and l=3 with all four region types populated.
    j = camp(1, range(0, 100))
    k = camp(2, range(50, 150))
    l = camp(3, list(range(25, 60)) + list(range(200, 220)))
    pidx = core.build_partitions([j, k, l])[1]
    assert pidx.competitor_sets == (
        frozenset(),
        frozenset({2}),
        frozenset({3}),
        frozenset({2, 3}),
    )
    # q=1: targeted by 1 only; q=2: 1 and 2; q=3: 1 and 3; q=4: all three.
    assert set(pidx.members(1)) == set(range(0, 25))
    assert set(pidx.members(2)) == set(range(60, 100))
    assert set(pidx.members(3)) == set(range(25, 50))
    assert set(pidx.members(4)) == set(range(50, 60))


def test_single_advertiser_single_partition():
    pidx = core.build_partitions([camp(1, range(10))])[1]
    assert pidx.labels == (1,)
    assert pidx.competitors(1) == frozenset()
    assert set(pidx.members(1)) == set(range(10))


def test_partitions_match_bruteforce_grouping():
    # Oracle: group users by their exact per-user competitor sets, via plain
    # python set comparisons.
    rng = np.random.default_rng(7)
    audiences = [frozenset(int(u) for u in rng.choice(1000, size=600, replace=False)) for _ in range(4)]
    campaigns = [camp(i + 1, audiences[i]) for i in range(4)]
    parts = core.build_partitions(campaigns)
    for focal in range(1, 5):
        expected = {}
        for u in audiences[focal - 1]:
            sig = frozenset(
                c.campaign_index for c in campaigns if c.campaign_index != focal and u in c.target_audience
            )
            expected.setdefault(sig, set()).add(u)
        pidx = parts[focal]
        got = {pidx.competitors(q): set(int(x) for x in pidx.members(q)) for q in pidx.labels}
        assert got == expected
        # Closure: disjoint union of members equals the audience.
        all_members = [int(x) for q in pidx.labels for x in pidx.members(q)]
        assert len(all_members) == len(set(all_members))
        assert set(all_members) == set(audiences[focal - 1])


def test_partition_labels_stable_and_label_of():
    campaigns = [camp(1, range(100)), camp(2, range(50, 100))]
    pidx = core.build_partitions(campaigns)[1]
    assert pidx.competitors(1) == frozenset()
    assert pidx.competitors(2) == frozenset({2})
    assert pidx.label_of(10) == 1
    assert pidx.label_of(75) == 2
    with pytest.raises(KeyError):
        pidx.label_of(5000)


def test_empty_roster_rejected():
    with pytest.raises(ConfigError):
        core.build_partitions([])


# ---------------------------------------------------------------------------
# States of the world
# ---------------------------------------------------------------------------

def test_enumerate_states_small():
    assert [s.omega for s in core.enumerate_states(0)] == [()]
    assert [s.omega for s in core.enumerate_states(2)] == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_enumerate_states_count_2_to_the_15():
    assert len(core.enumerate_states(15)) == 32768


def test_enumerate_states_cap():
    with pytest.raises(ValueError):
        core.enumerate_states(25)
    with pytest.raises(ValueError):
        core.enumerate_states(-1)


# ---------------------------------------------------------------------------
# Assignments and assumption checks
# ---------------------------------------------------------------------------

def test_assignment_zero_outside_audience():
    campaigns = [camp(1, range(100), share=1.0), camp(2, range(50, 150), share=1.0)]
    aset = core.assign_all(campaigns, seed=3)
    ta = aset.for_user(10)
    assert ta.bits == (1, 0)  # user 10 not in campaign 2's audience
    assert ta.without(0) == (0,)
    assert aset.for_user(120).bits == (0, 1)


def test_overlap_violation_flagged_for_degenerate_share():
    campaigns = [camp(1, range(1000), share=1.0), camp(2, range(1000), share=0.5)]
    aset = core.assign_all(campaigns, seed=5)
    parts = core.build_partitions(campaigns)
    reports = {(r.focal, r.label): r for r in core.check_assumptions(aset, parts)}
    r = reports[(1, 1)]
    assert 1 in r.overlap_violations
    assert not r.ok


def test_clean_design_all_cells_occupied():
    campaigns = [camp(1, range(10_000), share=0.7), camp(2, range(10_000), share=0.7)]
    aset = core.assign_all(campaigns, seed=11)
    parts = core.build_partitions(campaigns)
    for r in core.check_assumptions(aset, parts):
        assert r.ok, r
        assert 0.0 < r.shares[1] < 1.0 and 0.0 < r.shares[2] < 1.0
    # Cross-check occupancy against direct cell counting.
    bits = aset.bits
    codes = bits[:, 0] * 2 + bits[:, 1]
    assert np.all(np.bincount(codes, minlength=4) > 0)


def test_pigeonhole_full_support_violation():
    campaigns = [
        camp(1, [1, 2], share=0.5),
        camp(2, [1, 2], share=0.5),
        camp(3, [1, 2], share=0.5),
    ]
    aset = core.assign_all(campaigns, seed=1)
    parts = core.build_partitions(campaigns)
    r = [x for x in core.check_assumptions(aset, parts) if x.focal == 1][0]
    # 2 users cannot fill 8 cells.
    assert len(r.sparse_cells) >= 6
    assert not r.full_support_a_ok


def test_full_support_violation_rate_vanishes_at_scale():
    n = 10**5
    campaigns = [camp(i, range(n), share=0.5) for i in range(1, 6)]
    aset = core.assign_all(campaigns, seed=21)
    parts = core.build_partitions(campaigns)
    for r in core.check_assumptions(aset, parts):
        assert r.full_support_a_ok and r.full_support_b_ok and r.overlap_ok


def test_min_cell_configurable():
    campaigns = [camp(1, range(40), share=0.5), camp(2, range(40), share=0.5)]
    aset = core.assign_all(campaigns, seed=2)
    parts = core.build_partitions(campaigns)
    loose = core.check_assumptions(aset, parts, min_cell=1)[0]
    strict = core.check_assumptions(aset, parts, min_cell=30)[0]
    assert loose.full_support_a_ok
    assert not strict.full_support_a_ok


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

def write_config(tmp_path, text):
    p = tmp_path / "exp.cfg"
    p.write_text(text)
    return str(p)


def test_load_config_roundtrip(tmp_path):
    path = write_config(
        tmp_path,
        """
[experiment]
slots = 4
arrival = fixed:2
outcome_noise = 0.25

[campaign a]
index = 1
audience = range:0-99
share = 0.7
bid = 2.0
quality = 1.5
baseline = 3.0
own_effect = 0.5

[campaign b]
index = 2
audience = ids:5,6,7
share = 0.5

[effects]
gamma 1 2 = 0.25
eta 2 1 = -0.1
""",
    )
    cfg = core.load_config(path)
    assert cfg.slots == 4
    assert cfg.arrival == "fixed:2"
    assert cfg.outcome_noise == 0.25
    c1 = cfg.campaign(1)
    assert c1.score == 3.0
    assert c1.target_audience == frozenset(range(100))
    assert cfg.campaign(2).target_audience == frozenset({5, 6, 7})
    assert cfg.baselines[1] == 3.0 and cfg.own_effects[1] == 0.5
    assert cfg.gamma[(1, 2)] == 0.25
    assert cfg.eta[(2, 1)] == -0.1


def test_hash_audience_deterministic(tmp_path):
    spec = "hash:0.5 of 0-9999"
    a = core.parse_audience(spec, 3)
    b = core.parse_audience(spec, 3)
    assert a == b
    assert abs(len(a) / 10_000 - 0.5) < 0.05
    # Different campaigns draw different subsets.
    assert core.parse_audience(spec, 4) != a
    # Membership is independent of the experiment seed by construction: the
    # parse takes no seed argument at all.


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        core.load_config(write_config(tmp_path, "[campaign x]\naudience = range:0-9\nshare = .5\n"))
    with pytest.raises(ConfigError):
        core.load_config(write_config(tmp_path, "[campaign x]\nindex = 1\nshare = .5\n"))
    with pytest.raises(ConfigError):
        core.load_config(
            write_config(tmp_path, "[campaign x]\nindex = 1\naudience = blob:77\nshare = .5\n")
        )
    with pytest.raises(ConfigError):
        core.load_config(
            write_config(
                tmp_path,
                "[campaign x]\nindex = 1\naudience = range:0-9\nshare = .5\n"
                "[effects]\ngamma 1 9 = 1.0\n",
            )
        )
    with pytest.raises(ConfigError):
        core.load_config(write_config(tmp_path, "not an ini file at all ["))


def test_campaign_validation():
    with pytest.raises(ConfigError):
        camp(0, [1])
    with pytest.raises(ConfigError):
        camp(1, [1], share=1.2)
    with pytest.raises(ConfigError):
        Campaign(1, frozenset([1]), 0.5, base_bid=-1.0)


def test_duplicate_index_rejected():
    with pytest.raises(ConfigError):
        core.build_partitions([camp(1, [1]), camp(1, [2])])
