"""Model selection across chains, relabeling and partition metrics.

Partitions passed to the metrics may use any integer labels.  Relabeled
allocations and MAP partitions are 0-based internally and exported 1-based.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from .sampler import TraceStore


class IdentificationError(RuntimeError):
    """No iteration could be relabeled consistently."""

    def __init__(self, message, failure_rate: float):
        super().__init__(message)
        self.failure_rate = failure_rate


def posterior_mode(values: Sequence[int]) -> int:
    """Most frequent value; ties go to the smaller one."""
    counts = Counter(int(v) for v in values)
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def estimate_num_clusters(traces: Sequence[TraceStore], criterion: str = "max") -> tuple:
    """Pick ``K_hat`` as the most frequent per-chain mode of ``K_plus``.

    Among chains whose mode equals ``K_hat`` the one with the highest
    recorded log-likelihood (``criterion="max"``) or highest mean
    log-likelihood (``"mean"``) is selected.  Returns ``(K_hat, chain position)``.
    """
    if not traces or any(len(t) == 0 for t in traces):
        raise ValueError("need at least one nonempty trace")
    modes = [posterior_mode(t.K_plus) for t in traces]
    k_hat = posterior_mode(modes)
    reduce = {"max": np.max, "mean": np.mean}[criterion]
    candidates = [i for i, m in enumerate(modes) if m == k_hat]
    scores = [reduce(traces[i].log_likelihood) for i in candidates]
    return k_hat, candidates[int(np.argmax(scores))]


def compute_functionals(w: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Class-weighted occurrence probabilities ``sum_l w_kl pi_kl``, one row per component."""
    return np.einsum("kl,klm->km", w, pi)


@dataclass
class IdentifiedResult:
    K_hat: int
    selected_chain: int
    kept_iterations: np.ndarray
    eta: np.ndarray            # (T, K_hat)
    mu: np.ndarray             # (T, K_hat, M)
    functionals: np.ndarray    # (T, K_hat, M)
    S: np.ndarray              # (T, N), 0-based
    map_partition: np.ndarray  # (N,), 0-based
    permutation_failure_rate: float
    extra: dict = field(default_factory=dict)

    def posterior_means(self) -> dict:
        return {"eta": self.eta.mean(axis=0), "mu": self.mu.mean(axis=0),
                "functionals": self.functionals.mean(axis=0)}


def relabel_draws(functionals: np.ndarray, k_hat: int, seed: int = 0, n_init: int = 10):
    """Cluster stacked functionals and derive one permutation per iteration.

    ``functionals`` has shape ``(T, K_hat, M)``.  Returns
    ``(perms, valid)``: ``perms[t, k]`` is the identified label of the
    ``k``-th component of iteration ``t``; rows where the k-means labels do
    not form a permutation are flagged invalid.
    """
    functionals = np.asarray(functionals, dtype=float)
    T = functionals.shape[0]
    if T == 0:
        raise ValueError("no draws to relabel")
    if k_hat == 1:
        return np.zeros((T, 1), dtype=np.int64), np.ones(T, dtype=bool)
    stacked = functionals.reshape(T * k_hat, -1)
    km = KMeans(n_clusters=k_hat, n_init=n_init, random_state=seed).fit(stacked)
    # canonical group order: lexicographic on the centroids, so the result does
    # not depend on k-means' internal label numbering
    order = np.lexsort(km.cluster_centers_.T[::-1])
    rename = np.empty(k_hat, dtype=np.int64)
    rename[order] = np.arange(k_hat)
    perms = rename[km.labels_].reshape(T, k_hat)
    valid = np.all(np.sort(perms, axis=1) == np.arange(k_hat), axis=1)
    return perms, valid


def map_partition(S_draws: np.ndarray) -> np.ndarray:
    """Per-observation modal label across draws; ties go to the smaller label."""
    S_draws = np.asarray(S_draws, dtype=np.int64)
    n_labels = int(S_draws.max()) + 1
    counts = np.zeros((n_labels, S_draws.shape[1]), dtype=np.int64)
    for row in S_draws:
        counts[row, np.arange(S_draws.shape[1])] += 1
    return counts.argmax(axis=0)


def identify(traces: Sequence[TraceStore], seed: int = 0, criterion: str = "max") -> IdentifiedResult:
    """Model selection, relabeling of the selected chain and MAP partition."""
    k_hat, chain = estimate_num_clusters(traces, criterion)
    trace = traces[chain]
    kept = np.flatnonzero(np.asarray(trace.K_plus) == k_hat)
    func = np.stack([compute_functionals(trace.w[t], trace.pi[t]) for t in kept])
    perms, valid = relabel_draws(func, k_hat, seed=seed)
    failure_rate = float(1.0 - valid.mean())
    if not valid.any():
        raise IdentificationError(
            f"no iteration of chain {trace.chain_index} could be relabeled "
            f"(failure rate {failure_rate:.3f})", failure_rate)
    kept, perms = kept[valid], perms[valid]
    func = func[valid]
    # inverse permutation: slot k_new holds old component inv[t, k_new]
    inv = np.argsort(perms, axis=1)
    rows = np.arange(len(kept))[:, None]
    eta = np.stack([trace.eta[t] for t in kept])[rows, inv]
    mu = np.stack([trace.mu[t] for t in kept])[rows, inv]
    func = func[rows, inv]
    S = np.stack([perms[i][np.asarray(trace.S[t], dtype=np.int64)] for i, t in enumerate(kept)])
    return IdentifiedResult(K_hat=k_hat, selected_chain=chain, kept_iterations=kept,
                            eta=eta, mu=mu, functionals=func, S=S,
                            map_partition=map_partition(S),
                            permutation_failure_rate=failure_rate)


# ---------------------------------------------------------------------------
# partition metrics


def contingency_table(p1, p2) -> np.ndarray:
    p1, p2 = np.asarray(p1), np.asarray(p2)
    if p1.shape != p2.shape or p1.ndim != 1:
        raise ValueError("partitions must be vectors of equal length")
    _, a = np.unique(p1, return_inverse=True)
    _, b = np.unique(p2, return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


def _pairs(x) -> int:
    return sum(int(v) * (int(v) - 1) // 2 for v in np.ravel(x))


def adjusted_rand_index(p1, p2) -> float:
    """Pair-counting ARI (Hubert and Arabie).

    Pair counts are Python integers, so the only rounding is the final
    division.
    """
    table = contingency_table(p1, p2)
    n = int(table.sum())
    if n < 2:
        raise ValueError("ARI needs at least two observations")
    index = _pairs(table)
    a = _pairs(table.sum(axis=1))
    b = _pairs(table.sum(axis=0))
    total = n * (n - 1) // 2
    # (index - a*b/total) / ((a+b)/2 - a*b/total), scaled by 2*total
    numerator = 2 * (index * total - a * b)
    denominator = total * (a + b) - 2 * a * b
    if denominator == 0:
        # only reachable when both partitions are all-singletons or one block
        return 1.0
    return numerator / denominator


def misclassification_rate(p1, reference) -> float:
    """Share of observations misassigned under the best label matching.

    Optimal assignment when both partitions have the same number of
    clusters, otherwise greedy matching on the largest overlaps.
    """
    table = contingency_table(p1, reference)
    n = table.sum()
    if table.shape[0] == table.shape[1]:
        rows, cols = linear_sum_assignment(-table)
        matched = table[rows, cols].sum()
    else:
        work = table.astype(float).copy()
        matched = 0
        for _ in range(min(work.shape)):
            i, j = np.unravel_index(np.argmax(work), work.shape)
            matched += table[i, j]
            work[i, :] = -1
            work[:, j] = -1
    return float(1.0 - matched / n)
