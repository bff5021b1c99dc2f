"""Shared builders: the canonical 3-advertiser fully-overlapping experiment.

The closed-form taus below were recorded from the forced-world oracle before
the estimators were built (R=1e4 and R=1e5 runs agree within 3 combined MC
standard errors) and verified against hand-derived expressions for the
geometric arrival model: with P(T >= t) = (2/3)^(t-1),

    tau(0,0) = 0.5
    tau(1,0) = 0.5 + 0.6*(2/3 - 1) - 0.3*(2/3)            = 0.1
    tau(0,1) = 0.5 - 0.4*(2/3 - 1) + 0.2*(2/3)            = 23/30
    tau(1,1) = tau(1,0) - 0.4*(4/9 - 2/3) + 0.2*(4/9)     = 5/18
"""

import numpy as np
import pytest

from parex import core, marketplace as mp, oracle
from parex.core import Campaign, ExperimentConfig
from parex.estimators import AnalysisSample
from parex.oracle import OutcomeModel

THREE_ADV_TAUS = {
    (0, 0): 0.5,
    (1, 0): 0.1,
    (0, 1): 23 / 30,
    (1, 1): 5 / 18,
}


def three_adv_campaigns(n_users):
    audience = frozenset(range(n_users))
    return [
        Campaign(1, audience, 0.7, base_bid=3.0),
        Campaign(2, audience, 0.7, base_bid=2.0),
        Campaign(3, audience, 0.7, base_bid=1.0),
    ]


def three_adv_model():
    return OutcomeModel(
        campaign_indices=(1, 2, 3),
        baseline=np.array([1.0, 1.0, 1.0]),
        own_effect=np.array([0.5, 0.4, 0.3]),
        gamma=np.array([
            [0.0, 0.6, -0.4],
            [0.2, 0.0, 0.0],
            [0.1, 0.0, 0.0],
        ]),
        eta=np.array([
            [0.0, -0.3, 0.2],
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
        ]),
        noise_scale=0.5,
    )


def three_adv_config(n_users):
    return ExperimentConfig(campaigns=tuple(three_adv_campaigns(n_users)), arrival="geometric:3")


def three_adv_sample(n_users, seed):
    """Simulate the experiment and assemble the focal-1 analysis sample.

    Focal 1 is the top-ranked campaign, so its eligible sample is every user
    (everyone's counterfactual head is campaign 1 and T_i >= 1 always).
    """
    cfg = three_adv_config(n_users)
    campaigns = list(cfg.campaigns)
    summary = mp.experiment_summary(cfg, seed)
    model = three_adv_model()
    y = oracle.realize_outcomes(summary, model, seed, focals=(1,))[:, 0]
    aset = core.assign_all(campaigns, seed)
    assert np.array_equal(aset.user_ids, summary.user_ids)
    eligible = summary.eligible[:, summary.column(1)]
    assert eligible.all()
    return AnalysisSample(
        focal=1,
        competitors=(2, 3),
        user_ids=summary.user_ids,
        y=y,
        d_focal=aset.bits[:, 0],
        d_rest=aset.bits[:, 1:],
        partition=np.ones(len(y), dtype=np.int64),
    )


@pytest.fixture(scope="session")
def three_adv_sample_10k():
    return three_adv_sample(10_000, seed=2024)
