"""Gaussian mixture math: MDN loss and gradients, sampling, binned mass, 1-d EM."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

log = logging.getLogger(__name__)

SIGMA_MIN = 1e-4
SIGMA_MAX = 10.0
LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass
class MixtureParams:
    """Batched mixture parameters, each of shape (n, G)."""
    alpha: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=np.float64))
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if not (self.alpha.shape == self.mu.shape == self.sigma.shape):
            raise ValueError("alpha, mu and sigma must share a shape")
        if np.any(self.sigma <= 0):
            raise ValueError("mixture sigma must be positive")
        if np.any(self.alpha < 0) or not np.allclose(self.alpha.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("mixture weights must lie on the simplex")

    @property
    def components(self) -> int:
        return self.alpha.shape[1]

    def row(self, i: int) -> "MixtureParams":
        return MixtureParams(self.alpha[i:i + 1], self.mu[i:i + 1], self.sigma[i:i + 1])


def _logsumexp(a, axis=1):
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def sigma_from_raw(s_raw):
    return np.clip(np.exp(s_raw), SIGMA_MIN, SIGMA_MAX)


def mixture_from_raw(a_logits, mu, s_raw) -> MixtureParams:
    a = np.asarray(a_logits, dtype=np.float64)
    a = np.exp(a - _logsumexp(a)[:, None])
    return MixtureParams(a / a.sum(axis=1, keepdims=True), mu, sigma_from_raw(np.asarray(s_raw, np.float64)))


def mdn_nll(p: MixtureParams, x) -> np.ndarray:
    """Per-row negative log mixture density at ``x`` (log-sum-exp form)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    z = (x - p.mu) / p.sigma
    with np.errstate(divide="ignore"):
        log_a = np.log(p.alpha)
    comp = log_a - 0.5 * z * z - np.log(p.sigma) - LOG_SQRT_2PI
    out = -_logsumexp(comp)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite mixture NLL")
    return out


def mdn_nll_grad(a_logits, mu, s_raw, x):
    """Mean NLL over rows and its gradients w.r.t. the raw head outputs.

    Raw outputs: weight logits, means, and log-sigma before clamping.
    Returns (loss, d_logits, d_mu, d_sraw).
    """
    a_logits = np.asarray(a_logits, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    s_raw = np.asarray(s_raw, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    n = a_logits.shape[0]
    log_alpha = a_logits - _logsumexp(a_logits)[:, None]
    sigma = sigma_from_raw(s_raw)
    z = (x - mu) / sigma
    comp = log_alpha - 0.5 * z * z - np.log(sigma) - LOG_SQRT_2PI
    lse = _logsumexp(comp)
    loss = -lse
    if not np.all(np.isfinite(loss)):
        raise FloatingPointError("non-finite mixture NLL")
    gamma = np.exp(comp - lse[:, None])  # posterior responsibilities
    alpha = np.exp(log_alpha)
    d_logits = (alpha - gamma) / n
    d_mu = -gamma * z / sigma / n
    inside = (s_raw > math.log(SIGMA_MIN)) & (s_raw < math.log(SIGMA_MAX))
    d_sraw = -gamma * (z * z - 1.0) * inside / n
    return float(loss.mean()), d_logits, d_mu, d_sraw


def softmax_ce(logits, target) -> np.ndarray:
    """Per-row cross entropy -log softmax(logits)[target]."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    logp = logits - _logsumexp(logits)[:, None]
    return -logp[np.arange(len(t)), t]


def softmax_ce_grad(logits, target):
    logits = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.int64)
    n = len(t)
    logp = logits - _logsumexp(logits)[:, None]
    loss = -logp[np.arange(n), t]
    if not np.all(np.isfinite(loss)):
        raise FloatingPointError("non-finite cross entropy")
    g = np.exp(logp)
    g[np.arange(n), t] -= 1.0
    return float(loss.mean()), g / n


def softmax(logits) -> np.ndarray:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def sample_categorical(probs, rng: np.random.Generator) -> np.ndarray:
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_mixture(p: MixtureParams, rng: np.random.Generator) -> np.ndarray:
    """One draw per row: component ~ Categorical(alpha), then Normal(mu_c, sigma_c)."""
    c = sample_categorical(p.alpha, rng)
    rows = np.arange(p.alpha.shape[0])
    return p.mu[rows, c] + p.sigma[rows, c] * rng.standard_normal(len(rows))


def mixture_bin_masses(p: MixtureParams, edges) -> np.ndarray:
    """Probability mass of each bin; the outer bins absorb the infinite tails."""
    e = np.asarray(edges, dtype=np.float64).copy()
    e[0], e[-1] = -np.inf, np.inf
    cdf = (p.alpha[:, :, None] * ndtr((e[None, None, :] - p.mu[:, :, None]) / p.sigma[:, :, None])).sum(axis=1)
    return np.clip(np.diff(cdf, axis=1), 0.0, None)


# --------------------------------------------------------------------------- EM

@dataclass
class Mixture1D:
    alpha: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    converged: bool = True
    iterations: int = 0

    def params(self, n: int = 1) -> MixtureParams:
        return MixtureParams(np.tile(self.alpha, (n, 1)), np.tile(self.mu, (n, 1)), np.tile(self.sigma, (n, 1)))

    def to_dict(self):
        return {"alpha": self.alpha.tolist(), "mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["alpha"]), np.array(d["mu"]), np.array(d["sigma"]))


def fit_mixture_1d(x, components: int, max_iter: int = 100, tol: float = 1e-6,
                   sigma_floor: float = 1e-6, warn: bool = True) -> Mixture1D:
    """EM for a 1-d Gaussian mixture, initialised from data quantiles."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot fit a mixture to no data")
    g = max(1, min(int(components), x.size))
    spread = x.std()
    floor = max(sigma_floor, 1e-3 * spread) if spread > 0 else sigma_floor
    # k-means style start: quantile centres, one hard assignment pass
    mu = np.quantile(x, (np.arange(g) + 0.5) / g)
    assign = np.abs(x[:, None] - mu[None, :]).argmin(axis=1)
    alpha = np.bincount(assign, minlength=g) / x.size + 1e-12
    alpha /= alpha.sum()
    sigma = np.array([x[assign == i].std() if np.any(assign == i) else spread for i in range(g)])
    sigma = np.maximum(np.where(sigma > 0, sigma, spread if spread > 0 else floor), floor)
    prev = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = (x[:, None] - mu) / sigma
        comp = np.log(alpha) - 0.5 * z * z - np.log(sigma) - LOG_SQRT_2PI
        lse = _logsumexp(comp)
        ll = float(lse.mean())
        resp = np.exp(comp - lse[:, None])
        nk = resp.sum(axis=0) + 1e-12
        alpha = nk / nk.sum()
        mu = (resp * x[:, None]).sum(axis=0) / nk
        sigma = np.sqrt((resp * (x[:, None] - mu) ** 2).sum(axis=0) / nk)
        sigma = np.maximum(sigma, floor)
        if abs(ll - prev) < tol:
            converged = True
            break
        prev = ll
    if not converged and warn:
        log.warning("EM did not converge in %d iterations; keeping the last estimate", max_iter)
    return Mixture1D(alpha, mu, sigma, converged, it)
