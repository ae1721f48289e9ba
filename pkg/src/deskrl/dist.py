"""Stochastic policy heads: sampling, log-densities and entropies.

All functions are pure given an explicit numpy Generator, so they are
safe to call from anywhere and reproducible under a fixed seed.
"""

from __future__ import annotations

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_TANH_CLIP = 1.0 - 1e-7


def clamp_log_std(log_std):
    return np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)


def gaussian_sample(mean, log_std, rng):
    """Sample a ~ N(mean, diag(std^2)); returns (action, logp, eps)."""
    mean = np.asarray(mean, dtype=np.float64)
    log_std = clamp_log_std(np.asarray(log_std, dtype=np.float64))
    std = np.exp(log_std)
    eps = rng.standard_normal(mean.shape)
    action = mean + std * eps
    return action, gaussian_logp(action, mean, log_std), eps


def gaussian_logp(action, mean, log_std):
    """Exact diagonal-Gaussian log-density, summed over the last axis."""
    log_std = clamp_log_std(np.asarray(log_std, dtype=np.float64))
    z = (np.asarray(action) - mean) / np.exp(log_std)
    return (-0.5 * z ** 2 - log_std - _HALF_LOG_2PI).sum(axis=-1)


def gaussian_entropy(log_std):
    """Entropy of a diagonal Gaussian, summed over dimensions."""
    log_std = clamp_log_std(np.asarray(log_std, dtype=np.float64))
    return (log_std + 0.5 + _HALF_LOG_2PI).sum(axis=-1)


def tanh_gaussian_sample(mean, log_std, rng):
    """Squashed-Gaussian sample in (-1, 1)^d; returns (action, logp, eps).

    logp includes the tanh change-of-variables term, computed in the
    numerically stable form log(1 - tanh(u)^2) = 2(log 2 - u - softplus(-2u)).
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_std = clamp_log_std(np.asarray(log_std, dtype=np.float64))
    std = np.exp(log_std)
    eps = rng.standard_normal(mean.shape)
    u = mean + std * eps
    action = np.clip(np.tanh(u), -_TANH_CLIP, _TANH_CLIP)
    logp_u = (-0.5 * eps ** 2 - log_std - _HALF_LOG_2PI).sum(axis=-1)
    correction = 2.0 * (np.log(2.0) - u - _softplus(-2.0 * u)).sum(axis=-1)
    return action, logp_u - correction, eps


def _softplus(x):
    return np.logaddexp(0.0, x)


def categorical_sample(logits, rng):
    """Sample from softmax(logits); returns (action, logp, entropy)."""
    logits = np.asarray(logits, dtype=np.float64)
    probs = _softmax(logits)
    action = int(rng.choice(logits.shape[-1], p=probs))
    logp = float(np.log(probs[action]))
    return action, logp, categorical_entropy(logits)


def categorical_logp(logits, actions):
    """Log-probability of given actions under softmax(logits), row-wise."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    logz = np.log(np.exp(logits - logits.max(axis=1, keepdims=True))
                  .sum(axis=1)) + logits.max(axis=1)
    picked = logits[np.arange(logits.shape[0]), np.asarray(actions, dtype=int)]
    return picked - logz


def categorical_entropy(logits):
    logits = np.asarray(logits, dtype=np.float64)
    probs = _softmax(logits)
    logp = np.log(np.maximum(probs, 1e-300))
    return float(-(probs * logp).sum(axis=-1))


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def epsilon_greedy(q, eps, rng):
    """Uniform-random with probability eps, else argmax (ties -> lowest index)."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size < 1:
        raise ValueError("q must be a non-empty vector")
    if rng.random() < eps:
        return int(rng.integers(q.size))
    return int(np.argmax(q))
