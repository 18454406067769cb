"""Categorical datasets: CSV ingestion, export and copula-based simulation."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.stats import norm

SCHEMA_VERSION = 1


class DataFormatError(ValueError):
    """Malformed input file (ragged rows, unreadable sidecar, ...)."""


class DataValidationError(ValueError):
    """Input parses but violates a dataset invariant."""


class GenerationError(ValueError):
    """A simulation design cannot be realized (e.g. infeasible correlation)."""


@dataclass
class CategoricalDataset:
    """``N x r`` matrix of 1-based category codes.

    ``num_categories[j]`` is ``D_j``; ``true_labels`` (1-based cluster ids)
    is only present for simulated data.
    """

    values: np.ndarray
    num_categories: np.ndarray
    true_labels: Optional[np.ndarray] = None
    label_maps: Optional[list] = None
    column_names: Optional[list] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        self.num_categories = np.asarray(self.num_categories, dtype=np.int64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise DataValidationError("values must be a nonempty N x r matrix")
        if self.num_categories.shape != (self.values.shape[1],):
            raise DataValidationError("num_categories must have one entry per variable")
        if np.any(self.num_categories < 2):
            raise DataValidationError("variable has fewer than 2 categories")
        if np.any(self.values < 1) or np.any(self.values > self.num_categories[None, :]):
            raise DataValidationError("category code outside 1..D_j")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
            if self.true_labels.shape != (self.values.shape[0],):
                raise DataValidationError("true_labels length must equal N")

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def one_hot(self) -> np.ndarray:
        """Dummy coding, ``N x sum(D_j)``, variables laid out consecutively."""
        starts = np.concatenate([[0], np.cumsum(self.num_categories)[:-1]])
        out = np.zeros((self.n_obs, int(self.num_categories.sum())))
        rows = np.arange(self.n_obs)[:, None]
        out[rows, starts[None, :] + self.values - 1] = 1.0
        return out


# ---------------------------------------------------------------------------
# CSV input / output


def load_csv(path, schema: Optional[dict] = None, header: bool = False) -> CategoricalDataset:
    """Read a CSV of category labels.

    Labels are coded ``1..D_j`` in order of first appearance unless
    ``schema`` maps a column (index or header name) to an ordered label list.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    names = None
    if header:
        if not rows:
            raise DataFormatError(f"{path}: empty file")
        names, rows = rows[0], rows[1:]
    if not rows:
        raise DataValidationError(f"{path}: no observations")
    r = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != r:
            raise DataFormatError(f"{path}: row {i + 1} has {len(row)} fields, expected {r}")

    schema = schema or {}
    values = np.zeros((len(rows), r), dtype=np.int64)
    label_maps = []
    for j in range(r):
        column = [row[j].strip() for row in rows]
        if any(cell == "" for cell in column):
            raise DataValidationError(f"{path}: missing value in column {j + 1}")
        key = names[j] if names is not None and names[j] in schema else j
        if key in schema or str(key) in schema:
            labels = [str(v) for v in schema.get(key, schema.get(str(key)))]
            unknown = set(column) - set(labels)
            if unknown:
                raise DataValidationError(
                    f"{path}: column {j + 1} has labels {sorted(unknown)} not in schema")
        else:
            labels = list(dict.fromkeys(column))
        if len(labels) < 2:
            raise DataValidationError(
                f"{path}: column {j + 1}: variable has fewer than 2 categories")
        code = {lab: d + 1 for d, lab in enumerate(labels)}
        values[:, j] = [code[c] for c in column]
        label_maps.append(labels)
    return CategoricalDataset(values, [len(m) for m in label_maps],
                              label_maps=label_maps, column_names=names)


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def save_dataset(data: CategoricalDataset, path) -> Path:
    """Write codes as CSV plus a JSON sidecar (``D_j``, label maps, truth)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        names = data.column_names or [f"V{j + 1}" for j in range(data.n_vars)]
        writer.writerow(names)
        writer.writerows(data.values.tolist())
    meta = {
        "schema_version": SCHEMA_VERSION,
        "num_categories": data.num_categories.tolist(),
        "label_maps": data.label_maps,
        "column_names": names,
        "true_labels": None if data.true_labels is None else data.true_labels.tolist(),
    }
    sidecar = sidecar_path(path)
    sidecar.write_text(json.dumps(meta, indent=1, sort_keys=True))
    return sidecar


def load_dataset(path) -> CategoricalDataset:
    """Inverse of :func:`save_dataset`.  Falls back to :func:`load_csv` without a sidecar."""
    path = Path(path)
    sidecar = sidecar_path(path)
    if not sidecar.exists():
        return load_csv(path, header=True)
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{sidecar}: {exc}") from exc
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    try:
        values = np.array([[int(c) for c in row] for row in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-integer code ({exc})") from exc
    return CategoricalDataset(values, meta["num_categories"],
                              true_labels=meta.get("true_labels"),
                              label_maps=meta.get("label_maps"),
                              column_names=meta.get("column_names"))


# ---------------------------------------------------------------------------
# Gaussian-copula simulation


@dataclass
class SimulationSpec:
    """Design of a simulated clustered dataset.

    ``cluster_marginals[k][j]`` is either a success probability (binary
    variable, ``P(code = 1)``) or a full probability vector over the
    ``D_j`` categories.  ``correlation_blocks[k]`` lists ``(start, stop, rho)``
    with 0-based half-open index ranges.  With ``fixed_sizes`` the cluster
    sizes are the rounded expected sizes instead of multinomial draws.
    """

    num_obs: int
    cluster_marginals: list
    correlation_blocks: list
    cluster_weights: Sequence[float]
    seed: int = 0
    fixed_sizes: bool = False

    def __post_init__(self):
        w = np.asarray(self.cluster_weights, dtype=float)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise GenerationError("cluster_weights must be positive and sum to 1")
        if len(self.cluster_marginals) != len(w) or len(self.correlation_blocks) != len(w):
            raise GenerationError("marginals, blocks and weights disagree on the cluster count")
        r = len(self.cluster_marginals[0])
        for k, blocks in enumerate(self.correlation_blocks):
            if len(self.cluster_marginals[k]) != r:
                raise GenerationError("every cluster needs marginals for all variables")
            used = np.zeros(r, dtype=bool)
            for start, stop, rho in blocks:
                if not 0 <= start < stop <= r:
                    raise GenerationError(f"block ({start}, {stop}) outside 0..{r}")
                if used[start:stop].any():
                    raise GenerationError(f"overlapping blocks in cluster {k + 1}")
                if not 0.0 <= rho < 1.0:
                    raise GenerationError("block correlation must lie in [0, 1)")
                used[start:stop] = True

    @property
    def n_vars(self) -> int:
        return len(self.cluster_marginals[0])

    def category_probs(self, k: int) -> list:
        out = []
        for p in self.cluster_marginals[k]:
            if np.ndim(p) == 0:
                if not 0.0 < p < 1.0:
                    raise GenerationError("success probabilities must lie in (0, 1)")
                out.append(np.array([p, 1.0 - p]))
            else:
                p = np.asarray(p, dtype=float)
                if np.any(p <= 0) or abs(p.sum() - 1) > 1e-9:
                    raise GenerationError("category probabilities must be positive and sum to 1")
                out.append(p)
        return out


def bivariate_normal_cdf(h: float, k: float, rho: float) -> float:
    """``P(Z1 <= h, Z2 <= k)`` for standard normals with correlation ``rho``.

    Uses the identity d/drho Phi2 = phi2 and deterministic quadrature in rho.
    """
    if h == -np.inf or k == -np.inf:
        return 0.0
    if h == np.inf:
        return float(norm.cdf(k))
    if k == np.inf:
        return float(norm.cdf(h))
    base = norm.cdf(h) * norm.cdf(k)
    if rho == 0.0:
        return float(base)

    def density(t):
        s = 1.0 - t * t
        return np.exp(-(h * h - 2.0 * t * h * k + k * k) / (2.0 * s)) / (2.0 * np.pi * np.sqrt(s))

    extra, _ = integrate.quad(density, 0.0, rho, epsabs=1e-12, epsrel=1e-10, limit=200)
    return float(base + extra)


def _thresholds(p: np.ndarray) -> np.ndarray:
    """Latent cut points ``-inf, t_1, ..., t_{D-1}, inf`` for category probabilities ``p``."""
    cum = np.clip(np.cumsum(p)[:-1], 0.0, 1.0)
    return np.concatenate([[-np.inf], norm.ppf(cum), [np.inf]])


def discrete_correlation(p1, p2, latent_rho: float) -> float:
    """Pearson correlation of the codes obtained by thresholding a bivariate normal."""
    p1, p2 = np.asarray(p1, float), np.asarray(p2, float)
    t1, t2 = _thresholds(p1), _thresholds(p2)
    codes1 = np.arange(1, len(p1) + 1)
    codes2 = np.arange(1, len(p2) + 1)
    # P(code1 <= a, code2 <= b) on the grid of upper cut points
    cdf = np.zeros((len(p1) + 1, len(p2) + 1))
    for a in range(1, len(p1) + 1):
        for b in range(1, len(p2) + 1):
            cdf[a, b] = bivariate_normal_cdf(t1[a], t2[b], latent_rho)
    cell = np.diff(np.diff(cdf, axis=0), axis=1)
    m1, m2 = codes1 @ p1, codes2 @ p2
    cov = codes1 @ cell @ codes2 - m1 * m2
    sd1 = np.sqrt(codes1 ** 2 @ p1 - m1 ** 2)
    sd2 = np.sqrt(codes2 ** 2 @ p2 - m2 ** 2)
    return float(cov / (sd1 * sd2))


@lru_cache(maxsize=1024)
def _calibrate_cached(p1: tuple, p2: tuple, target: float, tol: float) -> float:
    if target == 0.0:
        return 0.0
    lo, hi = 0.0, 1.0 - 1e-10
    if discrete_correlation(p1, p2, hi) < target - tol:
        raise GenerationError(
            f"correlation {target} is not attainable for marginals {p1} and {p2}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        value = discrete_correlation(p1, p2, mid)
        if abs(value - target) <= tol * 1e-2:
            return mid
        if value < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    mid = 0.5 * (lo + hi)
    if abs(discrete_correlation(p1, p2, mid) - target) > tol:
        raise GenerationError(f"calibration did not converge for target {target}")
    return mid


def calibrate_latent_correlation(p1, p2, target: float, tol: float = 1e-4) -> float:
    """Latent normal correlation giving discrete Pearson correlation ``target``.

    Bisection on ``[0, 1)``; the discrete correlation is increasing in the
    latent one.
    """
    return _calibrate_cached(tuple(np.round(np.asarray(p1, float), 12)),
                             tuple(np.round(np.asarray(p2, float), 12)),
                             float(target), float(tol))


def latent_correlation_matrix(probs: list, blocks) -> np.ndarray:
    r = len(probs)
    corr = np.eye(r)
    for start, stop, rho in blocks:
        for a in range(start, stop):
            for b in range(a + 1, stop):
                corr[a, b] = corr[b, a] = calibrate_latent_correlation(probs[a], probs[b], rho)
    return corr


def _cluster_sizes(spec: SimulationSpec, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(spec.cluster_weights, dtype=float)
    if not spec.fixed_sizes:
        return rng.multinomial(spec.num_obs, w)
    expected = spec.num_obs * w
    sizes = np.floor(expected).astype(np.int64)
    leftover = spec.num_obs - sizes.sum()
    order = np.argsort(-(expected - sizes), kind="stable")
    sizes[order[:leftover]] += 1
    return sizes


def generate_dataset(spec: SimulationSpec) -> CategoricalDataset:
    """Simulate clustered categorical data via Gaussian-copula discretization."""
    rng = np.random.default_rng(spec.seed)
    sizes = _cluster_sizes(spec, rng)
    labels = rng.permutation(np.repeat(np.arange(1, len(sizes) + 1), sizes))
    r = spec.n_vars
    values = np.zeros((spec.num_obs, r), dtype=np.int64)
    num_categories = None
    for k in range(len(sizes)):
        probs = spec.category_probs(k)
        dk = np.array([len(p) for p in probs])
        if num_categories is None:
            num_categories = dk
        elif np.any(num_categories != dk):
            raise GenerationError("clusters disagree on category counts")
        corr = latent_correlation_matrix(probs, spec.correlation_blocks[k])
        try:
            chol = np.linalg.cholesky(corr)
        except np.linalg.LinAlgError as exc:
            raise GenerationError(
                f"latent correlation matrix of cluster {k + 1} is not positive definite") from exc
        idx = np.flatnonzero(labels == k + 1)
        z = rng.standard_normal((idx.size, r)) @ chol.T
        codes = np.ones((idx.size, r), dtype=np.int64)
        for j, p in enumerate(probs):
            cuts = _thresholds(p)[1:-1]
            codes[:, j] += (z[:, j, None] > cuts[None, :]).sum(axis=1)
        values[idx] = codes
    return CategoricalDataset(values, num_categories, true_labels=labels)


# ---------------------------------------------------------------------------
# Built-in simulation designs


def _benchmark_marginals(n_clusters_vars=30):
    hi, lo = 0.8, 0.2
    third = n_clusters_vars // 3
    c1 = [hi] * (2 * third) + [lo] * third
    c2 = [lo] * third + [hi] * third + [lo] * third
    c3 = [lo] * (2 * third) + [hi] * third
    return [c1, c2, c3]


def benchmark_design(rho: float, num_obs: int = 500, seed: int = 0) -> SimulationSpec:
    """Three equal clusters on 30 binary variables with block correlation ``rho``.

    Cluster 1 correlates V1-V15, cluster 2 the middle ten (V11-V20) and
    cluster 3 six successive blocks of five variables.
    """
    blocks = [
        [(0, 15, rho)],
        [(10, 20, rho)],
        [(s, s + 5, rho) for s in range(0, 30, 5)],
    ]
    return SimulationSpec(num_obs=num_obs, cluster_marginals=_benchmark_marginals(),
                          correlation_blocks=blocks, cluster_weights=[1 / 3] * 3,
                          seed=seed, fixed_sizes=True)


# name -> (rho, N, replications)
PRESETS = {
    "sim-rho00": (0.0, 500, 30),
    "sim-rho03": (0.3, 500, 30),
    "sim-rho00-desk": (0.0, 500, 5),
    "sim-rho03-desk": (0.3, 500, 5),
}


def preset_specs(name: str, base_seed: int = 0, replications: Optional[int] = None) -> list:
    """One :class:`SimulationSpec` per replication of a named preset."""
    try:
        rho, n_obs, reps = PRESETS[name]
    except KeyError:
        raise GenerationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    reps = replications or reps
    seeds = np.random.SeedSequence(base_seed).generate_state(reps)
    return [benchmark_design(rho, n_obs, int(s)) for s in seeds]


# ---------------------------------------------------------------------------
# Association diagnostics


def log_odds_matrix(data: CategoricalDataset, subset=None, correction: float = 0.5) -> np.ndarray:
    """Pairwise log-odds ratios of binary variables (continuity corrected)."""
    if np.any(data.num_categories != 2):
        raise NotImplementedError("log-odds ratios require binary variables")
    values = data.values if subset is None else data.values[np.asarray(subset)]
    ones = (values == 1).astype(float)
    zeros = 1.0 - ones
    n11 = ones.T @ ones
    n00 = zeros.T @ zeros
    n10 = ones.T @ zeros
    n01 = zeros.T @ ones
    c = correction
    out = np.log((n11 + c) * (n00 + c)) - np.log((n10 + c) * (n01 + c))
    np.fill_diagonal(out, 0.0)
    return out
