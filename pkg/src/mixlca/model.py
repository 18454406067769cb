"""Mixture of latent class models: parameter containers and likelihood.

Internally components, subcomponents and categories are 0-based.  Per-variable
probability vectors of different lengths are stored back to back along one
flat axis of width ``sum(D_j)``; :class:`Layout` holds the segment offsets.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .data import CategoricalDataset
from .distributions import BnbParams, DomainError, log_sum_exp, segment_sum


@dataclass
class Hyperparameters:
    """Prior constants, MH calibration and run budget."""

    bnb: BnbParams = field(default_factory=BnbParams)
    alpha_shape: float = 1.0
    alpha_rate: float = 2.0
    delta: float = 1.0
    a_mu: float = 10.0
    a_phi: float = 1.0
    c_b: float = 20.0
    d_b: float = 1.0
    a_00: float = 0.01
    L: int = 3
    K_max: int = 50
    K_init: int = 10
    s_mu: float = 100.0
    s_phi: float = 0.5
    s_alpha: float = 0.5
    adapt: bool = True
    iterations: int = 5000
    burn_in: int = 1000
    num_chains: int = 10
    base_seed: int = 0

    def __post_init__(self):
        if isinstance(self.bnb, dict):
            self.bnb = BnbParams(**self.bnb)
        elif isinstance(self.bnb, (list, tuple)):
            self.bnb = BnbParams(*self.bnb)
        positive = ("alpha_shape", "alpha_rate", "delta", "a_mu", "a_phi", "c_b", "d_b",
                    "a_00", "s_mu", "s_phi", "s_alpha")
        for name in positive:
            if not getattr(self, name) > 0:
                raise DomainError(f"hyperparameter {name} must be > 0")
        if self.L < 1 or self.K_max < 1 or self.K_init < 1:
            raise DomainError("L, K_max and K_init must be >= 1")
        if self.iterations <= 0 or not 0 <= self.burn_in < self.iterations:
            raise DomainError("need iterations > 0 and 0 <= burn_in < iterations")
        if self.num_chains < 1:
            raise DomainError("num_chains must be >= 1")

    def updated(self, **changes) -> "Hyperparameters":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["bnb"] = [self.bnb.r_bnb, self.bnb.alpha_bnb, self.bnb.beta_bnb]
        return out


@dataclass(frozen=True)
class Layout:
    """Offsets of the per-variable category blocks along the flat axis."""

    sizes: np.ndarray

    @classmethod
    def from_counts(cls, num_categories) -> "Layout":
        return cls(np.asarray(num_categories, dtype=np.int64))

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)

    @property
    def width(self) -> int:
        return int(self.sizes.sum())

    @property
    def n_vars(self) -> int:
        return len(self.sizes)

    def expand(self, per_variable):
        """Repeat a ``(..., r)`` array across each variable's categories."""
        return np.repeat(per_variable, self.sizes, axis=-1)

    def segment_sum(self, values):
        return segment_sum(values, self.starts)

    def uniform(self) -> np.ndarray:
        return 1.0 / self.expand(self.sizes.astype(float))

    def split(self, flat) -> list:
        """Flat vector to a list of per-variable vectors."""
        return np.split(np.asarray(flat), np.cumsum(self.sizes)[:-1], axis=-1)


@dataclass
class MCMCState:
    """One configuration of all unknowns.

    Shapes: ``eta (K,)``, ``S, I (N,)``, ``w (K, L)``, ``pi (K, L, M)``,
    ``mu (K, M)``, ``phi (K, r)``, ``b_phi (r,)`` with ``M = sum(D_j)``.
    Components ``0..K_plus-1`` are the filled ones.
    """

    K: int
    eta: np.ndarray
    S: np.ndarray
    I: np.ndarray
    w: np.ndarray
    pi: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    alpha: float
    b_phi: np.ndarray
    layout: Layout

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.S, minlength=self.K)

    @property
    def K_plus(self) -> int:
        return int(np.count_nonzero(self.counts))

    def copy(self) -> "MCMCState":
        return MCMCState(self.K, self.eta.copy(), self.S.copy(), self.I.copy(), self.w.copy(),
                         self.pi.copy(), self.mu.copy(), self.phi.copy(), float(self.alpha),
                         self.b_phi.copy(), self.layout)

    def check(self, atol: float = 1e-9) -> None:
        """Assert the structural invariants; raises ``AssertionError``."""
        K, lay = self.K, self.layout
        assert self.eta.shape == (K,) and self.w.shape[0] == K
        assert self.pi.shape[:2] == self.w.shape and self.mu.shape == (K, lay.width)
        assert abs(self.eta.sum() - 1) < atol and np.all(self.eta >= 0)
        assert np.allclose(self.w.sum(axis=1), 1, atol=atol)
        assert np.allclose(lay.segment_sum(self.pi), 1, atol=atol)
        assert np.allclose(lay.segment_sum(self.mu), 1, atol=atol)
        assert np.all(self.phi > 0) and self.alpha > 0 and np.all(self.b_phi > 0)
        counts = self.counts
        kp = self.K_plus
        assert kp <= K and np.all(counts[:kp] > 0) and np.all(counts[kp:] == 0)


def subcomponent_log_densities(onehot: np.ndarray, log_pi: np.ndarray) -> np.ndarray:
    """``log prod_j pi_{kl, j, y_ij}`` for all rows; result ``(N, K, L)``."""
    K, L, M = log_pi.shape
    return (onehot @ log_pi.reshape(K * L, M).T).reshape(-1, K, L)


def component_log_densities(onehot: np.ndarray, w: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """LCA component log-densities for all rows and components, ``(N, K)``."""
    with np.errstate(divide="ignore"):
        sub = subcomponent_log_densities(onehot, np.log(pi)) + np.log(w)[None]
    return log_sum_exp(sub, axis=2)


def _row_onehot(y, layout: Layout) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (layout.n_vars,):
        raise DomainError("observation length does not match the number of variables")
    if np.any(y < 1) or np.any(y > layout.sizes):
        raise DomainError("category code outside 1..D_j")
    row = np.zeros(layout.width)
    row[layout.starts + y - 1] = 1.0
    return row[None, :]


def component_log_density(y, w, pi, layout: Layout) -> float:
    """Log-density of one observation under a single LCA component.

    ``w`` has shape ``(L,)`` and ``pi`` shape ``(L, sum(D_j))``.
    """
    w = np.asarray(w, dtype=float)
    pi = np.asarray(pi, dtype=float)
    return float(component_log_densities(_row_onehot(y, layout), w[None], pi[None])[0, 0])


def mixture_log_density(y, state: MCMCState) -> float:
    """Log-density of one observation under the full mixture."""
    comp = component_log_densities(_row_onehot(y, state.layout), state.w, state.pi)[0]
    with np.errstate(divide="ignore"):
        return log_sum_exp(np.log(state.eta) + comp)


def observation_log_likelihoods(onehot: np.ndarray, state: MCMCState) -> np.ndarray:
    comp = component_log_densities(onehot, state.w, state.pi)
    with np.errstate(divide="ignore"):
        return log_sum_exp(np.log(state.eta)[None, :] + comp, axis=1)


def dataset_log_likelihood(data: CategoricalDataset, state: MCMCState) -> float:
    """Sum of mixture log-densities over all observations."""
    if not np.array_equal(data.num_categories, state.layout.sizes):
        raise DomainError("dataset and state disagree on the category layout")
    return float(observation_log_likelihoods(data.one_hot(), state).sum())
