"""parex: simulate and analyze parallel A/B experiments on an ad marketplace.

Subpackages follow the pipeline: ``core`` (campaigns, partitions, design
checks), ``randomize`` (hash-split assignment), ``marketplace`` (ranked-queue
serving and logs), ``oracle`` (ground-truth outcome model and forced-world
ATEs), ``estimators`` (per-cell OLS, interaction OLS, categorical-kernel
estimator), ``ate_calculus`` (prospective/belief-weighted ATEs), and
``diagnostics`` (randomization and balance checks). ``cli`` drives everything
over CSV files.
"""

__version__ = "0.1.0"
