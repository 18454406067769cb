"""Probability primitives used by the sampler.

Everything is evaluated in log space.  Samplers take an explicit
``numpy.random.Generator`` so that chains stay reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln

# Dirichlet proposal concentrations are floored here before use.
PROPOSAL_FLOOR = 1e-3

_TINY = np.finfo(float).tiny


class DomainError(ValueError):
    """Raised when an argument lies outside a distribution's support."""


@dataclass(frozen=True)
class BnbParams:
    """Parameters of the beta-negative-binomial prior on ``K - 1``."""

    r_bnb: float = 1.0
    alpha_bnb: float = 4.0
    beta_bnb: float = 3.0

    def __post_init__(self):
        if min(self.r_bnb, self.alpha_bnb, self.beta_bnb) <= 0:
            raise DomainError("BNB parameters must be strictly positive")


def bnb_log_pmf(k, params: BnbParams = BnbParams()):
    """Log-pmf of the translated BNB prior, ``K - 1 ~ BNB(r, alpha, beta)``.

    Accepts a scalar or an array of integers ``k >= 1``.
    """
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise DomainError("K must be >= 1")
    r, a, b = params.r_bnb, params.alpha_bnb, params.beta_bnb
    km1 = k_arr - 1.0
    out = (gammaln(r + km1) + betaln(r + a, km1 + b)
           - gammaln(r) - gammaln(k_arr) - betaln(a, b))
    return float(out) if np.ndim(out) == 0 else out


def log_sum_exp(values, axis=None):
    """Numerically stable ``log(sum(exp(values)))``."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DomainError("log_sum_exp of an empty vector")
    m = np.max(values, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(values - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_gamma_sample(shape, rng: np.random.Generator):
    """Draw ``log G`` with ``G ~ Gamma(shape, 1)``, elementwise.

    Shapes below one use ``G = G' * U**(1/shape)`` with ``G' ~ Gamma(shape + 1)``,
    which keeps the log finite where a direct draw would underflow to zero.
    """
    shape = np.asarray(shape, dtype=float)
    small = shape < 1.0
    boosted = np.where(small, shape + 1.0, shape)
    log_g = np.log(rng.gamma(boosted))
    if np.any(small):
        u = rng.random(shape.shape)
        log_g = np.where(small, log_g + np.log(u) / np.where(small, shape, 1.0), log_g)
    return log_g


def dirichlet_sample(concentration, rng: np.random.Generator) -> np.ndarray:
    """One draw from a Dirichlet distribution (normalized gamma variates)."""
    a = np.asarray(concentration, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise DomainError("concentration must be a nonempty vector")
    if np.any(a <= 0):
        raise DomainError("Dirichlet concentration entries must be > 0")
    if a.size == 1:
        return np.ones(1)
    log_g = log_gamma_sample(a, rng)
    x = np.exp(log_g - log_sum_exp(log_g))
    x = np.maximum(x, _TINY)
    return x / x.sum()


def dirichlet_log_density(x, concentration) -> float:
    """Log-density of a Dirichlet; ``-inf`` whenever a coordinate is <= 0."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(concentration, dtype=float)
    if x.shape != a.shape or x.ndim != 1:
        raise DomainError("dimension mismatch between x and concentration")
    if np.any(a <= 0):
        raise DomainError("Dirichlet concentration entries must be > 0")
    if np.any(x <= 0):
        return -np.inf
    return float(gammaln(a.sum()) - gammaln(a).sum() + np.sum((a - 1.0) * np.log(x)))


def gamma_sample(shape, rate, rng: np.random.Generator, size=None):
    """Gamma draw parameterized by shape and rate (mean ``shape / rate``)."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise DomainError("gamma parameters must be > 0")
    return rng.gamma(shape, 1.0 / rate, size=size)


def inv_gamma_sample(shape, scale, rng: np.random.Generator, size=None):
    """Inverse-gamma draw: ``1 / Gamma(shape, rate=scale)``."""
    return 1.0 / gamma_sample(shape, scale, rng, size=size)


def gamma_log_density(x, shape, rate):
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def inv_gamma_log_density(x, shape, scale):
    x = np.asarray(x, dtype=float)
    return shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x


# ---------------------------------------------------------------------------
# Segmented ("ragged") helpers.  A block of categorical probability vectors
# with category counts D_1..D_r is stored flat along the last axis; ``starts``
# holds the first column of every segment.


def segment_sum(values, starts):
    """Sum the last axis of ``values`` within each segment."""
    return np.add.reduceat(values, starts, axis=-1)


def segment_dirichlet_sample(concentration, starts, sizes, rng: np.random.Generator,
                             floor: float = 0.0):
    """Independent Dirichlet draws for every segment of the last axis."""
    a = np.asarray(concentration, dtype=float)
    if floor > 0:
        a = np.maximum(a, floor)
    log_g = log_gamma_sample(a, rng)
    seg_max = np.maximum.reduceat(log_g, starts, axis=-1)
    g = np.exp(log_g - np.repeat(seg_max, sizes, axis=-1))
    x = g / np.repeat(segment_sum(g, starts), sizes, axis=-1)
    x = np.maximum(x, _TINY)
    return x / np.repeat(segment_sum(x, starts), sizes, axis=-1)


def segment_dirichlet_log_density(x, concentration, starts):
    """Per-segment Dirichlet log-densities; result drops the flat axis to ``r``."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(concentration, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (a - 1.0) * np.log(x) - gammaln(a)
    out = gammaln(segment_sum(a, starts)) + segment_sum(terms, starts)
    return np.where(np.isnan(out), -np.inf, out)
