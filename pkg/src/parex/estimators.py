"""Treatment-effect estimators over experiment cells.

A cell is one (partial assignment d, partition s) combination for a focal
advertiser. Everything here runs on per-cell sufficient statistics (counts
and outcome sums per arm), so the cost of a kernel evaluation scales with the
number of distinct observed cells, not with the number of users.

Estimators:

* `cell_ols` / `stacked_ols`: per-cell difference in means with
  heteroskedasticity-robust (HC0, two-sample) standard errors. The stacked
  regression over saturated dummies is block-diagonal, so stacking recovers
  exactly the per-cell numbers.
* `interaction_ols`: the two-advertiser regression on
  [1, D_j, D_k, D_j*D_k] with an HC0 sandwich covariance.
* `kernel_theta` / `kernel_variance` / `cv_bandwidths`: categorical
  product-kernel smoothing across cells. A coordinate matches with weight 1
  and mismatches with weight lambda_v in [0, 1]; lambda = 0 reduces to the
  per-cell estimator and lambda = 1 to pooled OLS. Bandwidths are chosen by
  leave-one-out cross-validation, minimized with multi-start coordinate
  descent (golden-section line searches with explicit endpoint checks, so the
  all-0 and all-1 anchors can never be beaten silently).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import randomize
from .core import ParexError

FLAG_OK = "ok"
FLAG_LOW_SUPPORT = "low_support"
NOT_IDENTIFIED = "not_identified"

_SPLIT_LABEL = "cv-split"
_CV_STARTS_LABEL = "cv-starts"

# Weight mass below this is treated as an empty arm when solving the 2x2
# weighted normal equations.
_MASS_EPS = 1e-12


class NotIdentifiedError(ParexError):
    """The requested contrast is not identified by the data."""


@dataclass(frozen=True)
class CellKey:
    """One estimation cell: partial assignment bits and a partition label."""

    d: tuple[int, ...]
    s: int


@dataclass(frozen=True)
class CellEstimate:
    alpha: float
    tau: float
    se_alpha: float
    se_tau: float
    n_test: int
    n_control: int
    flag: str = FLAG_OK


@dataclass(frozen=True)
class AteTable:
    """Estimated degenerate ATEs for one focal advertiser.

    `cells` holds identified cells; `dropped` maps unidentifiable cells to a
    reason code (e.g. one-armed cells).
    """

    focal: int
    competitors: tuple[int, ...]
    cells: dict[CellKey, CellEstimate]
    dropped: dict[CellKey, str] = field(default_factory=dict)

    def tau(self, key: CellKey) -> float:
        return self.cells[key].tau

    def partitions(self) -> tuple[int, ...]:
        return tuple(sorted({k.s for k in self.cells}))


@dataclass(frozen=True)
class Bandwidths:
    """Cross-validated kernel bandwidths, one per Z coordinate.

    Coordinates that never vary in the training data cannot mismatch, so
    their bandwidth is unidentified; they are reported as 1.0 and flagged in
    `constant`.
    """

    lambdas: tuple[float, ...]
    cv_loss: float
    skipped: int
    constant: tuple[bool, ...]

    def __post_init__(self):
        if any(not 0.0 <= v <= 1.0 for v in self.lambdas):
            raise ValueError("every bandwidth must lie in [0, 1]")


@dataclass(frozen=True)
class AnalysisSample:
    """Per-user analysis rows for one focal advertiser.

    `d_rest` columns follow `competitors` (ascending campaign index);
    `partition` holds the focal advertiser's partition label per user.
    """

    focal: int
    competitors: tuple[int, ...]
    user_ids: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    d_focal: np.ndarray = field(repr=False)
    d_rest: np.ndarray = field(repr=False)
    partition: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.y)
        if not (len(self.user_ids) == len(self.d_focal) == len(self.partition) == n):
            raise ValueError("sample arrays must share their length")
        if self.d_rest.shape != (n, len(self.competitors)):
            raise ValueError("d_rest must be (n, n_competitors)")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def q_labels(self) -> tuple[int, ...]:
        return tuple(int(q) for q in np.unique(self.partition))

    def z_matrix(self) -> np.ndarray:
        """Smoothing covariates: [partial assignment bits, partition one-hots]."""
        onehot = (self.partition[:, None] == np.asarray(self.q_labels)[None, :]).astype(np.int8)
        return np.hstack([self.d_rest.astype(np.int8), onehot])

    def key_of_z(self, z_row: np.ndarray) -> CellKey:
        k = len(self.competitors)
        d = tuple(int(b) for b in z_row[:k])
        onehot = z_row[k:]
        s = int(self.q_labels[int(np.argmax(onehot))])
        return CellKey(d=d, s=s)


def subset(sample: AnalysisSample, mask: np.ndarray) -> AnalysisSample:
    return AnalysisSample(
        focal=sample.focal,
        competitors=sample.competitors,
        user_ids=sample.user_ids[mask],
        y=sample.y[mask],
        d_focal=sample.d_focal[mask],
        d_rest=sample.d_rest[mask],
        partition=sample.partition[mask],
    )


def split_train(sample: AnalysisSample, fraction: float, seed: int) -> tuple[AnalysisSample, AnalysisSample]:
    """Deterministic (train, estimate) split by user hash; fraction 0 disables."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("split fraction must lie in [0, 1)")
    if fraction == 0.0:
        return sample, sample
    u = randomize.unit_floats(sample.user_ids, 0, randomize.derive_seed(seed, _SPLIT_LABEL))
    train = u < fraction
    if not train.any() or train.all():
        raise NotIdentifiedError("training split is empty or exhausts the sample")
    return subset(sample, train), subset(sample, ~train)


# ---------------------------------------------------------------------------
# Sufficient statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellStats:
    """Per-cell sufficient statistics: counts, outcome sums, squared sums per arm."""

    z: np.ndarray = field(repr=False)  # (C, V) distinct Z rows, int8
    n0: np.ndarray = field(repr=False)
    n1: np.ndarray = field(repr=False)
    sy0: np.ndarray = field(repr=False)
    sy1: np.ndarray = field(repr=False)
    syy0: np.ndarray = field(repr=False)
    syy1: np.ndarray = field(repr=False)
    cell_of: np.ndarray = field(repr=False)  # (I,) row index into z

    @property
    def n_cells(self) -> int:
        return len(self.n0)

    @property
    def n_obs(self) -> int:
        return len(self.cell_of)

    @property
    def v(self) -> int:
        return self.z.shape[1]


def cell_statistics(sample: AnalysisSample) -> CellStats:
    z = sample.z_matrix()
    cells, inverse = np.unique(z, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    c = len(cells)
    d = sample.d_focal.astype(bool)
    y = sample.y.astype(float)

    def acc(values, mask):
        return np.bincount(inverse[mask], weights=values[mask], minlength=c)

    ones = np.ones_like(y)
    return CellStats(
        z=cells,
        n0=acc(ones, ~d),
        n1=acc(ones, d),
        sy0=acc(y, ~d),
        sy1=acc(y, d),
        syy0=acc(y * y, ~d),
        syy1=acc(y * y, d),
        cell_of=inverse,
    )


# ---------------------------------------------------------------------------
# Per-cell and stacked OLS
# ---------------------------------------------------------------------------

def _estimate_from_sums(n0, n1, sy0, sy1, syy0, syy1, min_cell: int) -> CellEstimate:
    if n0 < 1 or n1 < 1:
        raise NotIdentifiedError("cell has an empty arm")
    alpha = sy0 / n0
    m1 = sy1 / n1
    tau = m1 - alpha
    ssr0 = max(syy0 - sy0 * sy0 / n0, 0.0)
    ssr1 = max(syy1 - sy1 * sy1 / n1, 0.0)
    se_alpha = float(np.sqrt(ssr0) / n0)
    se_tau = float(np.sqrt(ssr0 / n0**2 + ssr1 / n1**2))
    flag = FLAG_OK if min(n0, n1) >= min_cell else FLAG_LOW_SUPPORT
    return CellEstimate(
        alpha=float(alpha),
        tau=float(tau),
        se_alpha=se_alpha,
        se_tau=se_tau,
        n_test=int(n1),
        n_control=int(n0),
        flag=flag,
    )


def cell_ols(y: np.ndarray, d: np.ndarray, min_cell: int = 2) -> CellEstimate:
    """Difference in means within one cell, with two-sample HC0 robust ses.

    Raises NotIdentifiedError when either arm is empty.
    """
    y = np.asarray(y, dtype=float)
    d = np.asarray(d).astype(bool)
    n1 = int(d.sum())
    n0 = len(d) - n1
    return _estimate_from_sums(
        n0, n1,
        float(y[~d].sum()), float(y[d].sum()),
        float((y[~d] ** 2).sum()), float((y[d] ** 2).sum()),
        min_cell,
    )


def pooled_ols(y: np.ndarray, d: np.ndarray) -> CellEstimate:
    """Unconditional OLS of Y on [1, D]: one pooled cell over the whole sample."""
    return cell_ols(y, d, min_cell=1)


def stacked_ols(sample: AnalysisSample, min_cell: int = 2) -> AteTable:
    """All identified cells at once; numerically identical to per-cell OLS."""
    stats = cell_statistics(sample)
    cells: dict[CellKey, CellEstimate] = {}
    dropped: dict[CellKey, str] = {}
    for c in range(stats.n_cells):
        key = sample.key_of_z(stats.z[c])
        try:
            cells[key] = _estimate_from_sums(
                stats.n0[c], stats.n1[c],
                stats.sy0[c], stats.sy1[c],
                stats.syy0[c], stats.syy1[c],
                min_cell,
            )
        except NotIdentifiedError:
            dropped[key] = "one_arm"
    return AteTable(focal=sample.focal, competitors=sample.competitors, cells=cells, dropped=dropped)


# ---------------------------------------------------------------------------
# Interaction regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InteractionFit:
    """OLS of Y on [1, D_j, D_k, D_j*D_k] with HC0 sandwich errors."""

    params: tuple[float, float, float, float]  # alpha, b1, b2, b3
    se: tuple[float, float, float, float]
    p_values: tuple[float, float, float, float]
    n: int

    @property
    def tau_rival_off(self) -> float:
        return self.params[1]

    @property
    def tau_rival_on(self) -> float:
        return self.params[1] + self.params[3]


def interaction_ols(y: np.ndarray, d_focal: np.ndarray, d_rival: np.ndarray) -> InteractionFit:
    """Two-advertiser interaction regression; requires all four cells populated."""
    y = np.asarray(y, dtype=float)
    dj = np.asarray(d_focal, dtype=float)
    dk = np.asarray(d_rival, dtype=float)
    cells = dj * 2 + dk
    if len(np.unique(cells)) < 4:
        raise NotIdentifiedError("interaction regression needs all four (D_j, D_k) cells populated")
    x = np.column_stack([np.ones_like(y), dj, dk, dj * dk])
    xtx_inv = np.linalg.inv(x.T @ x)
    beta = xtx_inv @ (x.T @ y)
    resid = y - x @ beta
    meat = (x * resid[:, None] ** 2).T @ x
    cov = xtx_inv @ meat @ xtx_inv
    se = np.sqrt(np.diag(cov))
    z = beta / se
    p = 2 * sps.norm.sf(np.abs(z))
    return InteractionFit(
        params=tuple(float(b) for b in beta),
        se=tuple(float(s) for s in se),
        p_values=tuple(float(v) for v in p),
        n=len(y),
    )


def pick_rival(records, focal: int) -> int:
    """Closest competitor: the campaign co-occurring with the focal in the most queues.

    Ties break toward the smaller campaign index.
    """
    counts: dict[int, int] = {}
    for r in records:
        q = r.pre_filter_queue
        if focal in q:
            for j in q:
                if j != focal:
                    counts[j] = counts.get(j, 0) + 1
    if not counts:
        raise NotIdentifiedError(f"no campaign ever shares a queue with focal {focal}")
    return min(counts, key=lambda j: (-counts[j], j))


# ---------------------------------------------------------------------------
# Categorical product kernel
# ---------------------------------------------------------------------------

def kernel_weight(z_row, z, lam) -> np.ndarray | float:
    """Product kernel weight: coordinates match with 1, mismatch with lambda_v.

    `z_row` may be a single vector or a matrix of rows; lambda components must
    lie in [0, 1].
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or np.any(lam > 1):
        raise ValueError("every bandwidth must lie in [0, 1]")
    z_row = np.asarray(z_row)
    z = np.asarray(z)
    w = np.where(z_row == z, 1.0, lam).prod(axis=-1)
    return w if w.ndim else float(w)


def _weighted_moments(stats: CellStats, z, lam) -> tuple[float, float, float, float]:
    w = kernel_weight(stats.z, np.asarray(z), lam)
    s0 = float(w @ stats.n0)
    s1 = float(w @ stats.n1)
    b0 = float(w @ (stats.sy0 + stats.sy1))
    b1 = float(w @ stats.sy1)
    return s0, s1, b0, b1


def kernel_theta(z, lam, stats: CellStats) -> tuple[float, float]:
    """Solve the 2x2 weighted normal equations at evaluation point z.

    Cost is O(number of distinct cells). Raises NotIdentifiedError when either
    arm carries (numerically) no weight at z.
    """
    s0, s1, b0, b1 = _weighted_moments(stats, z, lam)
    if s0 <= _MASS_EPS or s1 <= _MASS_EPS:
        raise NotIdentifiedError(f"singular weighted moment matrix at z={tuple(int(v) for v in np.asarray(z))}")
    alpha = (b0 - b1) / s0
    tau = b1 / s1 - alpha
    return float(alpha), float(tau)


def kernel_variance(z, lam, stats: CellStats, theta: tuple[float, float] | None = None) -> dict:
    """Sandwich covariance of (alpha, tau) at z, scaled to per-estimate variance.

    Returns {"sigma": 2x2 asymptotic covariance, "se_alpha": ..., "se_tau": ...};
    the ses already include the 1/I scaling.
    """
    if theta is None:
        theta = kernel_theta(z, lam, stats)
    alpha, tau = theta
    w = kernel_weight(stats.z, np.asarray(z), lam)
    s0 = float(w @ stats.n0)
    s1 = float(w @ stats.n1)
    if s0 <= _MASS_EPS or s1 <= _MASS_EPS:
        raise NotIdentifiedError("singular weighted moment matrix")
    i_total = stats.n_obs
    m1 = alpha + tau
    ssr0 = stats.syy0 - 2 * alpha * stats.sy0 + stats.n0 * alpha**2
    ssr1 = stats.syy1 - 2 * m1 * stats.sy1 + stats.n1 * m1**2
    o11 = float(w @ (ssr0 + ssr1)) / i_total
    o22 = float(w @ ssr1) / i_total
    a = np.array([[s0 + s1, s1], [s1, s1]]) / i_total
    omega = np.array([[o11, o22], [o22, o22]])
    a_inv = np.linalg.inv(a)
    sigma = a_inv @ omega @ a_inv
    return {
        "sigma": sigma,
        "se_alpha": float(np.sqrt(sigma[0, 0] / i_total)),
        "se_tau": float(np.sqrt(sigma[1, 1] / i_total)),
    }


def kernel_table(
    sample: AnalysisSample,
    lam,
    stats: CellStats | None = None,
    min_cell: int = 2,
) -> AteTable:
    """Evaluate the kernel estimator at every observed cell of the sample."""
    stats = stats if stats is not None else cell_statistics(sample)
    cells: dict[CellKey, CellEstimate] = {}
    dropped: dict[CellKey, str] = {}
    for c in range(stats.n_cells):
        key = sample.key_of_z(stats.z[c])
        try:
            alpha, tau = kernel_theta(stats.z[c], lam, stats)
            var = kernel_variance(stats.z[c], lam, stats, (alpha, tau))
        except NotIdentifiedError:
            dropped[key] = "one_arm"
            continue
        n0, n1 = int(stats.n0[c]), int(stats.n1[c])
        flag = FLAG_OK if min(n0, n1) >= min_cell else FLAG_LOW_SUPPORT
        cells[key] = CellEstimate(
            alpha=alpha,
            tau=tau,
            se_alpha=var["se_alpha"],
            se_tau=var["se_tau"],
            n_test=n1,
            n_control=n0,
            flag=flag,
        )
    return AteTable(focal=sample.focal, competitors=sample.competitors, cells=cells, dropped=dropped)


# ---------------------------------------------------------------------------
# Leave-one-out cross-validation
# ---------------------------------------------------------------------------

def _cv_loss(lam: np.ndarray, stats: CellStats, y: np.ndarray, d: np.ndarray) -> tuple[float, int]:
    """CV(lambda): mean squared LOO residual over points whose leave-one-out
    moment matrix stays nonsingular; also returns the skipped count."""
    c = stats.n_cells
    # Per evaluation cell: weighted moments against every data cell. Pair
    # weights are built coordinate by coordinate in row blocks to bound memory.
    s0 = np.empty(c)
    s1 = np.empty(c)
    b0 = np.empty(c)
    b1 = np.empty(c)
    sy = stats.sy0 + stats.sy1
    block = max(1, min(c, 16_000_000 // max(c, 1)))
    for lo in range(0, c, block):
        hi = min(c, lo + block)
        w = np.ones((hi - lo, c))
        for k in range(stats.v):
            w *= np.where(stats.z[lo:hi, k][:, None] == stats.z[None, :, k], 1.0, lam[k])
        s0[lo:hi] = w @ stats.n0
        s1[lo:hi] = w @ stats.n1
        b0[lo:hi] = w @ sy
        b1[lo:hi] = w @ stats.sy1
    cell = stats.cell_of
    dd = d.astype(float)
    s1_i = s1[cell] - dd
    s0_i = s0[cell] - (1.0 - dd)
    b0_i = b0[cell] - y
    b1_i = b1[cell] - dd * y
    valid = (s1_i > _MASS_EPS) & (s0_i > _MASS_EPS)
    a_i = (b0_i - b1_i) / np.where(s0_i > _MASS_EPS, s0_i, 1.0)
    t_i = b1_i / np.where(s1_i > _MASS_EPS, s1_i, 1.0) - a_i
    resid = y - (a_i + t_i * dd)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return float("inf"), stats.n_obs
    loss = float((resid[valid] ** 2).mean())
    return loss, stats.n_obs - n_valid


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_line_search(f, current_x: float, current_f: float, move_tol: float, xtol: float = 5e-3):
    """Search [0, 1] for a point beating the incumbent by more than `move_tol`.

    Golden-section with the endpoints always tried; when nothing improves on
    the incumbent by more than the tolerance, the incumbent stands. Loss
    differences below the tolerance are treated as flat, so anchors are never
    abandoned over sub-tolerance dips.
    """
    best_x, best_f = 0.0, f(0.0)
    f_hi = f(1.0)
    if f_hi < best_f:
        best_x, best_f = 1.0, f_hi
    a, b = 0.0, 1.0
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > xtol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    x_mid = (a + b) / 2
    f_mid = f(x_mid)
    if f_mid < best_f:
        best_x, best_f = x_mid, f_mid
    if best_f < current_f - move_tol:
        return best_x, best_f
    return current_x, current_f


def cv_bandwidths(
    sample: AnalysisSample,
    seed: int = 0,
    n_starts: int = 5,
    tol: float = 1e-4,
    max_sweeps: int = 8,
) -> Bandwidths:
    """Minimize the leave-one-out CV criterion over lambda in [0, 1]^V.

    Multi-start coordinate descent: the all-0 and all-1 anchors and the
    all-0.5 point always seed the search, plus `n_starts - 3` corners sampled
    from {0, 0.5, 1}^V. `tol` is the resolution of the search: a coordinate
    move must improve the loss by more than `tol` to be adopted, a sweep with
    no adopted move ends a start, and if a pure anchor (all-0 or all-1) comes
    within `tol` of the best interior point found, the anchor is returned. The
    anchors can therefore only be beaten by structure the criterion actually
    resolves, never by sub-tolerance noise dips.
    """
    stats = cell_statistics(sample)
    if stats.n_obs < 2:
        raise NotIdentifiedError("cross-validation needs at least 2 observations")
    y = sample.y.astype(float)
    d = sample.d_focal.astype(bool)
    v = stats.v
    varying = np.asarray([len(np.unique(stats.z[:, k])) > 1 for k in range(v)])

    cache: dict[tuple, tuple[float, int]] = {}

    def loss_of(lam_vary: np.ndarray) -> float:
        key = tuple(np.round(lam_vary, 12))
        if key not in cache:
            lam = np.ones(v)
            lam[varying] = lam_vary
            cache[key] = _cv_loss(lam, stats, y, d)
        return cache[key][0]

    k_vary = int(varying.sum())
    if k_vary == 0:
        lam = np.ones(v)
        loss, skipped = _cv_loss(lam, stats, y, d)
        if not np.isfinite(loss):
            raise NotIdentifiedError("every leave-one-out point was skipped")
        return Bandwidths(tuple(lam), loss, skipped, tuple(not x for x in varying))

    rng = np.random.default_rng(randomize.derive_seed(seed, _CV_STARTS_LABEL) % 2**32)
    starts = [np.zeros(k_vary), np.ones(k_vary), np.full(k_vary, 0.5)]
    for _ in range(max(0, n_starts - len(starts))):
        starts.append(rng.choice([0.0, 0.5, 1.0], size=k_vary))

    best_lam, best_loss = None, np.inf
    for start in starts:
        lam = start.copy()
        loss = loss_of(lam)
        for _ in range(max_sweeps):
            moved = False
            for k in range(k_vary):
                def along(x, k=k):
                    trial = lam.copy()
                    trial[k] = x
                    return loss_of(trial)

                new_x, new_loss = _golden_line_search(along, lam[k], loss, move_tol=tol)
                if new_x != lam[k]:
                    lam[k], loss = new_x, new_loss
                    moved = True
            if not moved:
                break
        if loss < best_loss:
            best_lam, best_loss = lam.copy(), loss

    if not np.isfinite(best_loss):
        raise NotIdentifiedError("every leave-one-out point was skipped at every start")

    # Anchor preference: a pure reduction within tolerance of the best point
    # wins (the better anchor when both qualify).
    anchors = [np.zeros(k_vary), np.ones(k_vary)]
    qualifying = [a for a in anchors if loss_of(a) <= best_loss + tol]
    if qualifying:
        best_lam = min(qualifying, key=loss_of)
        best_loss = loss_of(best_lam)

    full = np.ones(v)
    full[varying] = best_lam
    _, skipped = cache[tuple(np.round(best_lam, 12))]
    return Bandwidths(
        lambdas=tuple(float(x) for x in full),
        cv_loss=float(best_loss),
        skipped=skipped,
        constant=tuple(not x for x in varying),
    )


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def write_ate_table(path: str, table: AteTable) -> None:
    """Write `focal,partition,d_bits,alpha,tau,se_tau,n_test,n_control,flag` rows.

    Dropped cells appear with empty numeric fields and their reason code.
    """
    def bits(d):
        return "".join(str(b) for b in d)

    with open(path, "w", newline="") as f:
        f.write("focal,partition,d_bits,alpha,tau,se_tau,n_test,n_control,flag\n")
        for key in sorted(table.cells, key=lambda k: (k.s, k.d)):
            e = table.cells[key]
            f.write(
                f"{table.focal},{key.s},{bits(key.d)},{e.alpha!r},{e.tau!r},"
                f"{e.se_tau!r},{e.n_test},{e.n_control},{e.flag}\n"
            )
        for key in sorted(table.dropped, key=lambda k: (k.s, k.d)):
            f.write(f"{table.focal},{key.s},{bits(key.d)},,,,,,{table.dropped[key]}\n")


def read_ate_table(path: str, competitors: tuple[int, ...]) -> AteTable:
    cells: dict[CellKey, CellEstimate] = {}
    dropped: dict[CellKey, str] = {}
    focal = None
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("focal,partition,d_bits"):
            raise ParexError(f"{path}: unexpected ATE table header")
        for line in f:
            parts = line.rstrip("\n").split(",")
            focal = int(parts[0])
            key = CellKey(d=tuple(int(b) for b in parts[2]), s=int(parts[1]))
            if parts[3] == "":
                dropped[key] = parts[8]
                continue
            cells[key] = CellEstimate(
                alpha=float(parts[3]),
                tau=float(parts[4]),
                se_alpha=float("nan"),
                se_tau=float(parts[5]),
                n_test=int(parts[6]),
                n_control=int(parts[7]),
                flag=parts[8],
            )
    if focal is None:
        raise ParexError(f"{path}: empty ATE table")
    return AteTable(focal=focal, competitors=competitors, cells=cells, dropped=dropped)


def write_bandwidths(path: str, bw: Bandwidths) -> None:
    with open(path, "w", newline="") as f:
        f.write("coord,lambda,constant\n")
        for k, (lam, const) in enumerate(zip(bw.lambdas, bw.constant)):
            f.write(f"{k},{lam!r},{int(const)}\n")
