"""Statistical primitives: KL estimation, two-sample tests, Shapley values.

Everything that draws random numbers takes an explicit integer seed, so
results are reproducible and safe to evaluate concurrently.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.special import comb
from scipy.stats import t as student_t

MAX_EXACT_PLAYERS = 14

# Fixed seed for the tie-breaking jitter of the nearest-neighbour KL
# estimator; keeping it constant makes every estimate a pure function of
# its inputs.
_JITTER_SEED = 0x5EED


class KLSupportError(ValueError):
    """The DISCRETE estimator found probability mass outside q's support."""


def _as_1d(x: Iterable[float], name: str) -> np.ndarray:
    arr = np.asarray(list(x) if not isinstance(x, np.ndarray) else x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr


def _kth_nn_distance(query: np.ndarray, ref_sorted: np.ndarray, k: int, skip_self: bool) -> np.ndarray:
    """Distance from each query point to its k-th nearest neighbour in ref.

    ``ref_sorted`` must be sorted ascending. With ``skip_self`` the query
    array is assumed to be the reference itself and the zero self-distance
    is excluded.
    """
    m = ref_sorted.size
    w = k + (2 if skip_self else 1)  # candidates per side, with slack
    pos = np.searchsorted(ref_sorted, query)
    offsets = np.arange(-w, w)
    idx = pos[:, None] + offsets[None, :]
    valid = (idx >= 0) & (idx < m)
    d = np.where(
        valid,
        np.abs(query[:, None] - ref_sorted[np.clip(idx, 0, m - 1)]),
        np.inf,
    )
    kth = k if skip_self else k - 1  # 0-based order statistic
    return np.partition(d, kth, axis=1)[:, kth]


def _kl_knn(p: np.ndarray, q: np.ndarray, k: int) -> float:
    n, m = p.size, q.size
    if n < k + 1 or m < k + 1:
        raise ValueError(f"KNN estimator with k={k} needs at least {k + 1} samples per side")
    rng = np.random.default_rng(_JITTER_SEED)
    scale = max(float(np.max(np.abs(np.concatenate([p, q])))), 1.0) * 1e-10
    ps = np.sort(p + rng.normal(0.0, scale, n))
    qs = np.sort(q + rng.normal(0.0, scale, m))
    rho = np.maximum(_kth_nn_distance(ps, ps, k, skip_self=True), 1e-300)
    nu = np.maximum(_kth_nn_distance(ps, qs, k, skip_self=False), 1e-300)
    return float(np.mean(np.log(nu / rho)) + math.log(m / (n - 1)))


def _kl_discrete(p: np.ndarray, q: np.ndarray) -> float:
    pv, pc = np.unique(p, return_counts=True)
    qv, qc = np.unique(q, return_counts=True)
    q_freq = {float(v): c / q.size for v, c in zip(qv, qc)}
    total = 0.0
    for v, c in zip(pv, pc):
        p_hat = c / p.size
        q_hat = q_freq.get(float(v))
        if q_hat is None:
            raise KLSupportError(f"value {float(v)!r} has p-mass but no q-mass")
        total += p_hat * (math.log(p_hat) - math.log(q_hat))
    return total


def kl_divergence(
    p_samples: Iterable[float],
    q_samples: Iterable[float],
    estimator: str = "knn",
    k: int = 5,
) -> float:
    """Estimate D(p || q) in nats from two samples.

    ``knn``: one-dimensional k-nearest-neighbour estimator (default k=5),
    self-matches excluded, distance ties broken by a deterministic tiny
    jitter. The estimate is returned unclipped and may be negative.

    ``discrete``: plug-in estimate treating exact values as categories;
    requires q's support to cover p's and is always non-negative.
    """
    p = _as_1d(p_samples, "p_samples")
    q = _as_1d(q_samples, "q_samples")
    if p.size == 0 or q.size == 0:
        raise ValueError("samples must be non-empty")
    if estimator == "knn":
        return _kl_knn(p, q, k)
    if estimator == "discrete":
        return _kl_discrete(p, q)
    raise ValueError(f"unknown estimator {estimator!r}")


def kl_divergence_binned(p_samples: Iterable[float], q_samples: Iterable[float]) -> float:
    """DISCRETE estimate after shared-support binning of the pooled samples.

    Bin edges follow the Freedman-Diaconis rule on the pooled data (with
    numpy's fallback when the IQR degenerates). Raises
    :class:`KLSupportError` when some p-mass lands in a bin with no q-mass.
    """
    p = _as_1d(p_samples, "p_samples")
    q = _as_1d(q_samples, "q_samples")
    pooled = np.concatenate([p, q])
    if np.ptp(pooled) == 0:
        return 0.0
    edges = np.histogram_bin_edges(pooled, bins="auto")
    p_hist = np.histogram(p, bins=edges)[0].astype(np.float64)
    q_hist = np.histogram(q, bins=edges)[0].astype(np.float64)
    p_hat = p_hist / p.size
    q_hat = q_hist / q.size
    bad = (p_hat > 0) & (q_hat == 0)
    if bad.any():
        raise KLSupportError(f"{int(bad.sum())} bins carry p-mass but no q-mass")
    mask = p_hat > 0
    return float(np.sum(p_hat[mask] * (np.log(p_hat[mask]) - np.log(q_hat[mask]))))


def _walk_weights(a_count: int, b_count: int) -> tuple[float, float]:
    return 1.0 / a_count, -1.0 / b_count


def _perm_statistics(
    sorted_vals: np.ndarray,
    label_rows: np.ndarray,
    statistic: str,
    boundaries: np.ndarray,
) -> np.ndarray:
    if statistic == "mean_diff":
        return np.abs(label_rows @ sorted_vals)
    cum = np.cumsum(label_rows, axis=1)
    return np.max(np.abs(cum[:, boundaries]), axis=1)


def two_sample_perm_test(
    a: Iterable[float],
    b: Iterable[float],
    statistic: str = "mean_diff",
    n_perm: int = 999,
    seed: int = 0,
    exact: bool | None = None,
) -> float:
    """Permutation p-value for a difference between two samples.

    ``mean_diff`` uses |mean(a) - mean(b)|; ``ks`` the two-sample
    Kolmogorov-Smirnov statistic. Sampled mode draws ``n_perm`` relabelings
    and applies add-one smoothing, p = (1 + #{perm >= observed}) /
    (n_perm + 1). When ``exact`` is true (or by default when the number of
    distinct label splits is at most ``n_perm``) every split is enumerated
    and p is the exact exceedance fraction.
    """
    a_arr = _as_1d(a, "a")
    b_arr = _as_1d(b, "b")
    if a_arr.size == 0 or b_arr.size == 0:
        raise ValueError("both samples must be non-empty")
    if n_perm < 100:
        raise ValueError("n_perm must be at least 100")
    if statistic not in ("mean_diff", "ks"):
        raise ValueError(f"unknown statistic {statistic!r}")
    na, nb = a_arr.size, b_arr.size
    n = na + nb
    pooled = np.concatenate([a_arr, b_arr])
    order = np.argsort(pooled, kind="stable")
    sorted_vals = pooled[order]
    boundaries = np.append(np.flatnonzero(np.diff(sorted_vals) != 0), n - 1)
    wa, wb = _walk_weights(na, nb)
    observed_labels = np.where(order < na, wa, wb)
    observed = _perm_statistics(sorted_vals, observed_labels[None, :], statistic, boundaries)[0]
    eps = 1e-12 * (1.0 + abs(observed))

    n_splits = comb(n, na, exact=True)
    if exact is None:
        exact = n_splits <= n_perm
    if exact:
        count = 0
        for combo in itertools.combinations(range(n), na):
            labels = np.full(n, wb)
            labels[list(combo)] = wa
            stat = _perm_statistics(sorted_vals, labels[None, :], statistic, boundaries)[0]
            if stat >= observed - eps:
                count += 1
        return count / n_splits

    rng = np.random.default_rng(seed)
    base = np.where(np.arange(n) < na, wa, wb)
    label_rows = rng.permuted(np.tile(base, (n_perm, 1)), axis=1)
    stats = _perm_statistics(sorted_vals, label_rows, statistic, boundaries)
    return (1 + int(np.sum(stats >= observed - eps))) / (n_perm + 1)


def welch_t_test(a: Iterable[float], b: Iterable[float]) -> tuple[float, float]:
    """Two-sided Welch t-test with Satterthwaite degrees of freedom.

    Degenerate samples follow a documented convention: both variances zero
    with equal means gives (0, 1); unequal means with both variances zero
    gives (+-inf, 0).
    """
    a_arr = _as_1d(a, "a")
    b_arr = _as_1d(b, "b")
    if a_arr.size < 2 or b_arr.size < 2:
        raise ValueError("welch_t_test needs at least two observations per sample")
    mean_a, mean_b = float(a_arr.mean()), float(b_arr.mean())
    var_a = float(a_arr.var(ddof=1))
    var_b = float(b_arr.var(ddof=1))
    if var_a == 0.0 and var_b == 0.0:
        if mean_a == mean_b:
            return 0.0, 1.0
        return math.copysign(math.inf, mean_a - mean_b), 0.0
    se_a = var_a / a_arr.size
    se_b = var_b / b_arr.size
    t_stat = (mean_a - mean_b) / math.sqrt(se_a + se_b)
    dof = (se_a + se_b) ** 2 / (
        se_a**2 / (a_arr.size - 1) + se_b**2 / (b_arr.size - 1)
    )
    p = 2.0 * float(student_t.sf(abs(t_stat), dof))
    return t_stat, p


@dataclass
class ShapleyGame:
    """A cooperative game over named players with a memoised value function.

    ``value_fn`` maps a frozenset of player names to a real value; it is
    evaluated at most once per subset (keyed by subset bitmask), so a
    stochastic-but-seeded value function still yields a deterministic game.
    ``mode`` is ``"exact"`` (full enumeration, at most 14 players) or
    ``"permutation"`` (``n_permutations`` sampled orderings).
    """

    players: tuple[str, ...]
    value_fn: Callable[[frozenset[str]], float]
    mode: str = "exact"
    n_permutations: int = 2000
    _cache: dict[int, float] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.players:
            raise ValueError("a game needs at least one player")
        if len(set(self.players)) != len(self.players):
            raise ValueError("duplicate player names")
        if self.mode not in ("exact", "permutation"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def _subset(self, mask: int) -> frozenset[str]:
        return frozenset(p for i, p in enumerate(self.players) if mask >> i & 1)

    def value_of_mask(self, mask: int) -> float:
        if mask not in self._cache:
            self._cache[mask] = float(self.value_fn(self._subset(mask)))
        return self._cache[mask]

    def value(self, subset: frozenset[str]) -> float:
        mask = 0
        for i, p in enumerate(self.players):
            if p in subset:
                mask |= 1 << i
        return self.value_of_mask(mask)


def _shapley_exact(game: ShapleyGame) -> dict[str, float]:
    n = len(game.players)
    if n > MAX_EXACT_PLAYERS:
        raise ValueError(
            f"exact Shapley enumeration limited to {MAX_EXACT_PLAYERS} players, got {n}"
        )
    # weight of a coalition of size s when adding one player
    weights = [
        math.factorial(s) * math.factorial(n - 1 - s) / math.factorial(n)
        for s in range(n)
    ]
    values = [game.value_of_mask(mask) for mask in range(1 << n)]
    scores = np.zeros(n)
    for mask in range(1 << n):
        size = mask.bit_count()
        v_without = values[mask]
        for i in range(n):
            if mask >> i & 1:
                continue
            scores[i] += weights[size] * (values[mask | (1 << i)] - v_without)
    return {p: float(scores[i]) for i, p in enumerate(game.players)}


def _shapley_permutation(game: ShapleyGame, seed: int) -> dict[str, float]:
    n = len(game.players)
    rng = np.random.default_rng(seed)
    totals = np.zeros(n)
    for _ in range(game.n_permutations):
        ordering = rng.permutation(n)
        mask = 0
        previous = game.value_of_mask(0)
        for idx in ordering:
            mask |= 1 << int(idx)
            current = game.value_of_mask(mask)
            totals[idx] += current - previous
            previous = current
    totals /= game.n_permutations
    return {p: float(totals[i]) for i, p in enumerate(game.players)}


def shapley(game: ShapleyGame, seed: int = 0) -> dict[str, float]:
    """Shapley value of every player.

    Exact mode enumerates all 2^n coalitions and satisfies efficiency,
    symmetry, dummy and linearity up to floating-point rounding. Permutation
    mode averages marginal contributions over seeded random orderings;
    thanks to memoisation the per-ordering contributions telescope, so the
    scores still sum to v(all) - v(empty).
    """
    if game.mode == "exact":
        return _shapley_exact(game)
    return _shapley_permutation(game, seed)
