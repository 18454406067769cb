"""Telescoping MCMC sampler for the mixture of latent class models.

One sweep runs, in order: allocations ``S`` (with relabeling so filled
components come first), subcomponent indicators ``I``, subcomponent weights
``w``, occurrence probabilities ``pi``, Metropolis-Hastings moves for the
cluster locations ``mu`` and precisions ``phi``, the Gibbs draw of ``b_phi``,
the number of components ``K`` and ``alpha``, and finally fresh empty
components and new component weights ``eta``.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import gammaln
from sklearn.cluster import KMeans

from .data import CategoricalDataset
from .distributions import (PROPOSAL_FLOOR, bnb_log_pmf, gamma_log_density,
                            inv_gamma_log_density, log_gamma_sample, log_sum_exp,
                            segment_dirichlet_log_density, segment_dirichlet_sample)
from .model import (Hyperparameters, Layout, MCMCState, observation_log_likelihoods,
                    subcomponent_log_densities)

logger = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1
ACCEPTANCE_TARGET = 0.3


class SamplerError(RuntimeError):
    """A sweep failed; the message carries the iteration index."""


# ---------------------------------------------------------------------------
# small helpers


def _dirichlet_rows(concentration: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Dirichlet draws for every row of ``concentration``."""
    log_g = log_gamma_sample(concentration, rng)
    log_g -= log_g.max(axis=-1, keepdims=True)
    g = np.exp(log_g)
    x = np.maximum(g / g.sum(axis=-1, keepdims=True), np.finfo(float).tiny)
    return x / x.sum(axis=-1, keepdims=True)


def _categorical_rows(log_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row from unnormalized log-weights."""
    p = np.exp(log_weights - log_weights.max(axis=1, keepdims=True))
    cum = np.cumsum(p, axis=1)
    u = rng.random(len(p)) * cum[:, -1]
    return np.minimum((cum < u[:, None]).sum(axis=1), p.shape[1] - 1)


def _category_counts(onehot: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    """Per-group category counts: ``(n_groups, sum(D_j))``."""
    indicator = np.zeros((n_groups, len(groups)))
    indicator[groups, np.arange(len(groups))] = 1.0
    return indicator @ onehot


def _permute_components(state: MCMCState, order: np.ndarray) -> None:
    state.eta = state.eta[order]
    state.w = state.w[order]
    state.pi = state.pi[order]
    state.mu = state.mu[order]
    state.phi = state.phi[order]
    inverse = np.empty_like(order)
    inverse[order] = np.arange(len(order))
    state.S = inverse[state.S]


# ---------------------------------------------------------------------------
# initialization


def initialize(data: CategoricalDataset, hp: Hyperparameters,
               rng: np.random.Generator) -> MCMCState:
    """Starting state from k-means on the dummy-coded data.

    ``I`` is uniform within components, ``pi`` the smoothed empirical
    frequencies, ``mu`` uniform and ``phi = D_j``; ``alpha`` and ``b_phi`` come
    from their priors, ``w`` and ``eta`` from their count-conditional priors.
    """
    layout = Layout.from_counts(data.num_categories)
    onehot = data.one_hot()
    n = data.n_obs
    k_init = min(hp.K_init, hp.K_max)
    if n < k_init:
        warnings.warn(f"only {n} observations; lowering the initial number of "
                      f"clusters from {k_init} to {n}", stacklevel=2)
        k_init = n
    if k_init == 1:
        labels = np.zeros(n, dtype=np.int64)
    else:
        km = KMeans(n_clusters=k_init, n_init=10, random_state=int(rng.integers(2**31 - 1)))
        labels = km.fit_predict(onehot)
    # compact to 0..K-1 in order of first appearance
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    S = rank[inverse].astype(np.int64)
    K = int(S.max()) + 1
    L = hp.L
    I = rng.integers(L, size=n)

    counts = _category_counts(onehot, S * L + I, K * L).reshape(K, L, -1)
    smoothed = counts + hp.a_00
    pi = smoothed / layout.expand(layout.segment_sum(smoothed))
    mu = np.tile(layout.uniform(), (K, 1))
    phi = np.tile(layout.sizes.astype(float), (K, 1))
    alpha = float(rng.gamma(hp.alpha_shape, 1.0 / hp.alpha_rate))
    b_phi = rng.gamma(hp.c_b, 1.0 / hp.d_b, size=layout.n_vars)
    n_kl = np.bincount(S * L + I, minlength=K * L).reshape(K, L)
    w = _dirichlet_rows(hp.delta + n_kl, rng)
    eta = _dirichlet_rows(alpha / K + np.bincount(S, minlength=K), rng)
    return MCMCState(K, eta, S, I, w, pi, mu, phi, alpha, b_phi, layout)


# ---------------------------------------------------------------------------
# step 1: allocations


def sample_allocations_S(state: MCMCState, onehot: np.ndarray,
                         rng: np.random.Generator) -> np.ndarray:
    """Draw ``S`` marginally over ``I`` and move filled components to the front.

    Returns the ``(N, K, L)`` subcomponent log-densities (including
    ``log w``) in the new component order, for reuse when drawing ``I``.
    """
    with np.errstate(divide="ignore"):
        sub = subcomponent_log_densities(onehot, np.log(state.pi)) + np.log(state.w)[None]
        comp = log_sum_exp(sub, axis=2)
        state.S = _categorical_rows(np.log(state.eta)[None, :] + comp, rng)
    counts = np.bincount(state.S, minlength=state.K)
    order = np.concatenate([np.flatnonzero(counts > 0), np.flatnonzero(counts == 0)])
    _permute_components(state, order)
    return sub[:, order, :]


# ---------------------------------------------------------------------------
# step 2: parameters of the filled components


def sample_subcomponents_I(state: MCMCState, sub_log_dens: np.ndarray,
                           rng: np.random.Generator) -> None:
    """``P(I_i = l) ~ w_kl prod_j pi_{kl,j,y_ij}`` for ``k = S_i``.

    ``sub_log_dens`` is the ``(N, K, L)`` array from step 1.
    """
    rows = sub_log_dens[np.arange(len(state.S)), state.S, :]
    state.I = _categorical_rows(rows, rng)


def sample_subcomponent_weights(state: MCMCState, hp: Hyperparameters,
                                rng: np.random.Generator) -> None:
    kp, L = state.K_plus, state.w.shape[1]
    n_kl = np.bincount(state.S * L + state.I, minlength=kp * L).reshape(kp, L)
    state.w[:kp] = _dirichlet_rows(hp.delta + n_kl, rng)


def sample_occurrence_probabilities(state: MCMCState, onehot: np.ndarray, hp: Hyperparameters,
                                    rng: np.random.Generator) -> None:
    kp, L = state.K_plus, state.w.shape[1]
    lay = state.layout
    counts = _category_counts(onehot, state.S * L + state.I, kp * L).reshape(kp, L, -1)
    prior = state.mu[:kp] * lay.expand(state.phi[:kp]) + hp.a_00
    state.pi[:kp] = segment_dirichlet_sample(prior[:, None, :] + counts, lay.starts,
                                             lay.sizes, rng)


def mu_log_target(mu, phi, pi, layout: Layout, a_mu: float, a_00: float) -> np.ndarray:
    """Unnormalized log conditional of the cluster locations, ``(K, r)``.

    ``mu (K, M)``, ``phi (K, r)``, ``pi (K, L, M)``; with ``L = 0`` only the
    Dirichlet(a_mu) prior remains.
    """
    starts = layout.starts
    prior = segment_dirichlet_log_density(mu, np.full_like(mu, a_mu), starts)
    conc = mu * layout.expand(phi) + a_00
    lik = segment_dirichlet_log_density(pi, np.broadcast_to(conc[:, None, :], pi.shape), starts)
    return prior + lik.sum(axis=1)


def _mu_proposal_conc(mu, s_mu):
    return np.maximum(mu * s_mu, PROPOSAL_FLOOR)


def mu_log_acceptance(mu, mu_prop, phi, pi, layout: Layout, a_mu, a_00, s_mu) -> np.ndarray:
    """Log MH ratio of the Dirichlet-proposal move for ``mu``, per ``(k, j)``."""
    starts = layout.starts
    fwd = segment_dirichlet_log_density(mu_prop, _mu_proposal_conc(mu, s_mu), starts)
    bwd = segment_dirichlet_log_density(mu, _mu_proposal_conc(mu_prop, s_mu), starts)
    return (mu_log_target(mu_prop, phi, pi, layout, a_mu, a_00) + bwd
            - mu_log_target(mu, phi, pi, layout, a_mu, a_00) - fwd)


def mh_step_mu(mu, phi, pi, layout: Layout, a_mu, a_00, s_mu, rng):
    """One MH move for every ``mu_{k,j}``.  Returns ``(new_mu, accepted)``."""
    proposal = segment_dirichlet_sample(_mu_proposal_conc(mu, s_mu), layout.starts,
                                        layout.sizes, rng)
    log_a = mu_log_acceptance(mu, proposal, phi, pi, layout, a_mu, a_00, s_mu)
    accepted = np.log(rng.random(log_a.shape)) < log_a
    return np.where(layout.expand(accepted), proposal, mu), accepted


def phi_log_target(phi, mu, pi, b_phi, layout: Layout, a_phi, a_00) -> np.ndarray:
    """Unnormalized log conditional of the precisions, ``(K, r)``."""
    prior = inv_gamma_log_density(phi, a_phi, b_phi[None, :])
    conc = mu * layout.expand(phi) + a_00
    lik = segment_dirichlet_log_density(pi, np.broadcast_to(conc[:, None, :], pi.shape),
                                        layout.starts)
    return prior + lik.sum(axis=1)


def phi_log_acceptance(phi, phi_prop, mu, pi, b_phi, layout: Layout, a_phi, a_00) -> np.ndarray:
    """Log MH ratio of the log-scale random walk for ``phi`` (with Jacobian)."""
    return (phi_log_target(phi_prop, mu, pi, b_phi, layout, a_phi, a_00) + np.log(phi_prop)
            - phi_log_target(phi, mu, pi, b_phi, layout, a_phi, a_00) - np.log(phi))


def mh_step_phi(phi, mu, pi, b_phi, layout: Layout, a_phi, a_00, s_phi, rng):
    proposal = phi * np.exp(s_phi * rng.standard_normal(phi.shape))
    log_a = phi_log_acceptance(phi, proposal, mu, pi, b_phi, layout, a_phi, a_00)
    accepted = np.log(rng.random(log_a.shape)) < log_a
    return np.where(accepted, proposal, phi), accepted


def mh_update_mu(state: MCMCState, hp: Hyperparameters, s_mu: float, rng) -> float:
    """Update ``mu`` of the filled components; returns the acceptance rate."""
    kp = state.K_plus
    state.mu[:kp], acc = mh_step_mu(state.mu[:kp], state.phi[:kp], state.pi[:kp],
                                    state.layout, hp.a_mu, hp.a_00, s_mu, rng)
    return float(acc.mean())


def mh_update_phi(state: MCMCState, hp: Hyperparameters, s_phi: float, rng) -> float:
    kp = state.K_plus
    state.phi[:kp], acc = mh_step_phi(state.phi[:kp], state.mu[:kp], state.pi[:kp],
                                      state.b_phi, state.layout, hp.a_phi, hp.a_00, s_phi, rng)
    return float(acc.mean())


# ---------------------------------------------------------------------------
# step 3


def b_phi_conditional(phi_filled: np.ndarray, hp: Hyperparameters):
    """Shape and rate of the gamma conditional of ``b_phi`` (filled components only)."""
    shape = hp.c_b + phi_filled.shape[0] * hp.a_phi
    rate = hp.d_b + (1.0 / phi_filled).sum(axis=0)
    return shape, rate


def sample_b_phi(state: MCMCState, hp: Hyperparameters, rng) -> None:
    shape, rate = b_phi_conditional(state.phi[:state.K_plus], hp)
    state.b_phi = rng.gamma(shape, 1.0 / rate)


# ---------------------------------------------------------------------------
# step 4: K and alpha


def partition_log_factor(counts: np.ndarray, alpha: float, K) -> np.ndarray:
    """``sum_k log Gamma(N_k + alpha/K) - log Gamma(1 + alpha/K)`` over filled ``k``."""
    g = alpha / np.atleast_1d(np.asarray(K, dtype=float))
    counts = np.asarray(counts, dtype=float)
    return (gammaln(counts[None, :] + g[:, None]).sum(axis=1)
            - len(counts) * gammaln(1.0 + g))


def log_posterior_K(counts: np.ndarray, alpha: float, hp: Hyperparameters):
    """Normalized log conditional ``p(K | partition, alpha)`` on ``K_plus..K_max``.

    ``counts`` holds the sizes of the filled components only.
    """
    kp = len(counts)
    if hp.K_max < kp:
        raise SamplerError(f"K_max={hp.K_max} is below the number of filled components {kp}")
    ks = np.arange(kp, hp.K_max + 1)
    logw = (bnb_log_pmf(ks, hp.bnb) + kp * np.log(alpha) + gammaln(ks + 1.0)
            - kp * np.log(ks) - gammaln(ks - kp + 1.0)
            + partition_log_factor(counts, alpha, ks))
    return ks, logw - log_sum_exp(logw)


def sample_K(state: MCMCState, hp: Hyperparameters, rng) -> None:
    counts = np.bincount(state.S)
    counts = counts[counts > 0]
    ks, logp = log_posterior_K(counts, state.alpha, hp)
    state.K = int(ks[_categorical_rows(logp[None, :], rng)[0]])


def alpha_log_target(alpha: float, counts: np.ndarray, K: int, a: float, b: float) -> float:
    """Unnormalized ``log p(alpha | partition, K)``; empty ``counts`` leaves the prior."""
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    kp = len(counts)
    out = gamma_log_density(alpha, a, b) + kp * np.log(alpha) + gammaln(alpha) - gammaln(n + alpha)
    if kp:
        out += partition_log_factor(counts, alpha, K)[0]
    return float(out)


def mh_step_alpha(alpha, counts, K, a, b, s_alpha, rng):
    proposal = alpha * np.exp(s_alpha * rng.standard_normal())
    log_a = (alpha_log_target(proposal, counts, K, a, b) + np.log(proposal)
             - alpha_log_target(alpha, counts, K, a, b) - np.log(alpha))
    if np.log(rng.random()) < log_a:
        return float(proposal), True
    return float(alpha), False


def mh_update_alpha(state: MCMCState, hp: Hyperparameters, s_alpha: float, rng) -> float:
    counts = np.bincount(state.S)
    counts = counts[counts > 0]
    state.alpha, acc = mh_step_alpha(state.alpha, counts, state.K, hp.alpha_shape,
                                     hp.alpha_rate, s_alpha, rng)
    return float(acc)


# ---------------------------------------------------------------------------
# step 5


def _prior_components(n: int, layout: Layout, b_phi, hp: Hyperparameters, rng):
    """``n`` component parameter sets ``(w, pi, mu, phi)`` from the hierarchical prior."""
    L, M = hp.L, layout.width
    w = _dirichlet_rows(np.full((n, L), hp.delta), rng)
    mu = segment_dirichlet_sample(np.full((n, M), hp.a_mu), layout.starts, layout.sizes, rng)
    phi = 1.0 / rng.gamma(hp.a_phi, 1.0 / np.broadcast_to(b_phi, (n, layout.n_vars)))
    conc = mu * layout.expand(phi) + hp.a_00
    pi = segment_dirichlet_sample(np.broadcast_to(conc[:, None, :], (n, L, M)),
                                  layout.starts, layout.sizes, rng)
    return w, pi, mu, phi


def refresh_empty_components_and_eta(state: MCMCState, hp: Hyperparameters, rng) -> None:
    """Draw ``K - K_plus`` empty components from the prior and resample ``eta``."""
    kp, K = state.K_plus, state.K
    keep = slice(0, kp)
    w, pi, mu, phi = _prior_components(K - kp, state.layout, state.b_phi, hp, rng)
    state.w = np.concatenate([state.w[keep], w])
    state.pi = np.concatenate([state.pi[keep], pi])
    state.mu = np.concatenate([state.mu[keep], mu])
    state.phi = np.concatenate([state.phi[keep], phi])
    counts = np.bincount(state.S, minlength=K)
    state.eta = _dirichlet_rows(state.alpha / K + counts, rng)


# ---------------------------------------------------------------------------
# one sweep


@dataclass
class StepSizes:
    s_mu: float
    s_phi: float
    s_alpha: float

    def adapt(self, rates: dict, gain: float) -> None:
        """Robbins-Monro move toward the target acceptance rate."""
        self.s_mu = float(np.clip(self.s_mu * np.exp(-gain * (rates["mu"] - ACCEPTANCE_TARGET)),
                                  1.0, 1e6))
        self.s_phi = float(np.clip(self.s_phi * np.exp(gain * (rates["phi"] - ACCEPTANCE_TARGET)),
                                   1e-3, 10.0))
        self.s_alpha = float(np.clip(self.s_alpha
                                     * np.exp(gain * (rates["alpha"] - ACCEPTANCE_TARGET)),
                                     1e-3, 10.0))


def gibbs_sweep(state: MCMCState, onehot: np.ndarray, hp: Hyperparameters,
                steps: StepSizes, rng: np.random.Generator) -> dict:
    """Run one full iteration in place; returns per-move acceptance rates."""
    sub = sample_allocations_S(state, onehot, rng)
    sample_subcomponents_I(state, sub, rng)
    sample_subcomponent_weights(state, hp, rng)
    sample_occurrence_probabilities(state, onehot, hp, rng)
    rates = {"mu": mh_update_mu(state, hp, steps.s_mu, rng),
             "phi": mh_update_phi(state, hp, steps.s_phi, rng)}
    sample_b_phi(state, hp, rng)
    sample_K(state, hp, rng)
    rates["alpha"] = mh_update_alpha(state, hp, steps.s_alpha, rng)
    refresh_empty_components_and_eta(state, hp, rng)
    return rates


# ---------------------------------------------------------------------------
# prior simulation (joint-consistency checks)


def sample_from_prior(n_obs: int, num_categories, hp: Hyperparameters, rng):
    """Draw a complete state and a dataset from the joint prior.

    ``K`` follows the BNB prior truncated to ``K_max``.  Returns
    ``(state, values)`` with 1-based codes.
    """
    layout = Layout.from_counts(num_categories)
    ks = np.arange(1, hp.K_max + 1)
    logp = bnb_log_pmf(ks, hp.bnb)
    K = int(ks[_categorical_rows(logp[None, :], rng)[0]])
    alpha = float(rng.gamma(hp.alpha_shape, 1.0 / hp.alpha_rate))
    eta = _dirichlet_rows(np.full(K, alpha / K), rng)
    b_phi = rng.gamma(hp.c_b, 1.0 / hp.d_b, size=layout.n_vars)
    w, pi, mu, phi = _prior_components(K, layout, b_phi, hp, rng)
    S = _categorical_rows(np.tile(np.log(eta), (n_obs, 1)), rng)
    I = _categorical_rows(np.log(w[S]), rng)
    state = MCMCState(K, eta, S, I, w, pi, mu, phi, alpha, b_phi, layout)
    counts = np.bincount(S, minlength=K)
    _permute_components(state, np.concatenate([np.flatnonzero(counts > 0),
                                               np.flatnonzero(counts == 0)]))
    return state, simulate_observations(state, rng)


def simulate_observations(state: MCMCState, rng) -> np.ndarray:
    """Draw ``y_i`` given ``S_i``, ``I_i`` and ``pi``; 1-based codes."""
    lay = state.layout
    probs = state.pi[state.S, state.I]                      # (N, M)
    n = probs.shape[0]
    out = np.empty((n, lay.n_vars), dtype=np.int64)
    for j, (start, size) in enumerate(zip(lay.starts, lay.sizes)):
        out[:, j] = 1 + _categorical_rows(np.log(probs[:, start:start + size]), rng)
    return out


# ---------------------------------------------------------------------------
# chains and traces


@dataclass
class TraceStore:
    """Post-burn-in draws of one chain.

    Component-indexed draws keep only the filled slots, so their first
    dimension is ``K_plus[t]`` and varies across iterations.
    """

    chain_index: int
    K: list = field(default_factory=list)
    K_plus: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    log_likelihood: list = field(default_factory=list)
    S: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    w: list = field(default_factory=list)
    pi: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    b_phi: list = field(default_factory=list)
    acceptance: list = field(default_factory=list)
    accepted: dict = field(default_factory=lambda: {"mu": 0.0, "phi": 0.0, "alpha": 0.0})
    proposed: dict = field(default_factory=lambda: {"mu": 0, "phi": 0, "alpha": 0})
    step_sizes: Optional[dict] = None
    num_categories: Optional[list] = None

    def __len__(self) -> int:
        return len(self.K)

    def record(self, state: MCMCState, loglik: float, rates: dict) -> None:
        kp = state.K_plus
        self.K.append(state.K)
        self.K_plus.append(kp)
        self.alpha.append(state.alpha)
        self.log_likelihood.append(loglik)
        self.S.append(state.S.astype(np.int32))
        self.eta.append(state.eta[:kp].copy())
        self.w.append(state.w[:kp].copy())
        self.pi.append(state.pi[:kp].copy())
        self.mu.append(state.mu[:kp].copy())
        self.phi.append(state.phi[:kp].copy())
        self.b_phi.append(state.b_phi.copy())
        self.acceptance.append((rates["mu"], rates["phi"], rates["alpha"]))

    def acceptance_rates(self) -> dict:
        return {k: self.accepted[k] / self.proposed[k] if self.proposed[k] else float("nan")
                for k in self.accepted}


def chain_rng(base_seed: int, chain_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([base_seed, chain_index]))


def run_chain(data: CategoricalDataset, hp: Hyperparameters, chain_index: int = 0,
              check_invariants: bool = False) -> TraceStore:
    """Initialize and run one chain; returns its post-burn-in trace."""
    rng = chain_rng(hp.base_seed, chain_index)
    onehot = data.one_hot()
    state = initialize(data, hp, rng)
    steps = StepSizes(hp.s_mu, hp.s_phi, hp.s_alpha)
    trace = TraceStore(chain_index=chain_index, num_categories=data.num_categories.tolist())
    for it in range(hp.iterations):
        try:
            rates = gibbs_sweep(state, onehot, hp, steps, rng)
            if check_invariants:
                state.check()
        except Exception as exc:
            raise SamplerError(f"chain {chain_index}, iteration {it + 1}: {exc}") from exc
        kp_r = state.K_plus * state.layout.n_vars
        trace.accepted["mu"] += rates["mu"] * kp_r
        trace.accepted["phi"] += rates["phi"] * kp_r
        trace.accepted["alpha"] += rates["alpha"]
        trace.proposed["mu"] += kp_r
        trace.proposed["phi"] += kp_r
        trace.proposed["alpha"] += 1
        if it < hp.burn_in:
            if hp.adapt:
                steps.adapt(rates, gain=(it + 1.0) ** -0.6)
            continue
        loglik = float(observation_log_likelihoods(onehot, state).sum())
        trace.record(state, loglik, rates)
    trace.step_sizes = {"s_mu": steps.s_mu, "s_phi": steps.s_phi, "s_alpha": steps.s_alpha}
    logger.debug("chain %d done: acceptance %s", chain_index, trace.acceptance_rates())
    return trace


# ---------------------------------------------------------------------------
# trace export


def _pad(arrays: list, width: int) -> np.ndarray:
    shape = (len(arrays), width) + arrays[0].shape[1:]
    out = np.full(shape, np.nan)
    for t, a in enumerate(arrays):
        out[t, :len(a)] = a
    return out


def write_trace(trace: TraceStore, directory, stem: Optional[str] = None) -> tuple:
    """Write ``<stem>.csv`` (per-iteration scalars) and ``<stem>.npz`` (all draws).

    In the ``.npz`` blob component-indexed arrays are padded with NaN up to
    the largest recorded ``K_plus``; ``K_plus`` tells how many slots are live.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or f"chain_{trace.chain_index:02d}"
    csv_path = directory / f"{stem}.csv"
    with csv_path.open("w") as fh:
        fh.write("iteration,K,K_plus,alpha,log_likelihood,acc_mu,acc_phi,acc_alpha\n")
        for t in range(len(trace)):
            a_mu, a_phi, a_alpha = trace.acceptance[t]
            fh.write(f"{t + 1},{trace.K[t]},{trace.K_plus[t]},{trace.alpha[t]!r},"
                     f"{trace.log_likelihood[t]!r},{a_mu!r},{a_phi!r},{a_alpha!r}\n")
    npz_path = directory / f"{stem}.npz"
    width = max(trace.K_plus) if len(trace) else 0
    meta = {"schema_version": TRACE_SCHEMA_VERSION, "chain_index": trace.chain_index,
            "num_categories": trace.num_categories, "step_sizes": trace.step_sizes,
            "acceptance_rates": trace.acceptance_rates()}
    blobs = dict(K=np.array(trace.K), K_plus=np.array(trace.K_plus),
                 alpha=np.array(trace.alpha), log_likelihood=np.array(trace.log_likelihood),
                 b_phi=np.array(trace.b_phi), S=np.array(trace.S),
                 acceptance=np.array(trace.acceptance), meta=np.array(json.dumps(meta)))
    if len(trace):
        for name in ("eta", "w", "pi", "mu", "phi"):
            blobs[name] = _pad(getattr(trace, name), width)
    np.savez_compressed(npz_path, **blobs)
    return csv_path, npz_path


def read_trace(npz_path) -> TraceStore:
    """Load a trace written by :func:`write_trace`."""
    with np.load(npz_path) as blob:
        meta = json.loads(str(blob["meta"]))
        if meta.get("schema_version") != TRACE_SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema {meta.get('schema_version')}")
        trace = TraceStore(chain_index=meta["chain_index"], num_categories=meta["num_categories"],
                           step_sizes=meta["step_sizes"])
        kp = blob["K_plus"].astype(int)
        trace.K = blob["K"].astype(int).tolist()
        trace.K_plus = kp.tolist()
        trace.alpha = blob["alpha"].tolist()
        trace.log_likelihood = blob["log_likelihood"].tolist()
        trace.b_phi = list(blob["b_phi"])
        trace.S = list(blob["S"])
        trace.acceptance = [tuple(a) for a in blob["acceptance"]]
        for name in ("eta", "w", "pi", "mu", "phi"):
            if name in blob:
                padded = blob[name]
                setattr(trace, name, [padded[t, :kp[t]] for t in range(len(kp))])
    return trace
