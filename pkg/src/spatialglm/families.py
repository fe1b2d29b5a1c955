"""Canonical exponential families used by the GLM fitting routines.

Each family is summarized by its cumulant function and the first two
derivatives: ``mean`` is the mean map (derivative of the cumulant) and
``variance`` is the variance function (second derivative).  The base
measure never enters any computation here because it cancels in every
likelihood difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class ExponentialFamily:
    """Descriptor of a one-parameter exponential family with canonical link.

    ``mean_domain`` is the open interval of means attainable by the mean
    map.  The cumulant is convex and smooth on all of R, and the variance
    function is strictly positive, so Newton steps on the log-likelihood
    always see negative-definite curvature.
    """

    name: str
    mean_domain: tuple[float, float]

    def cumulant(self, theta):
        raise NotImplementedError

    def mean(self, theta):
        raise NotImplementedError

    def variance(self, theta):
        raise NotImplementedError

    def in_mean_closure(self, a) -> bool:
        """True when every entry of ``a`` lies in the closed mean domain."""
        a = np.asarray(a, dtype=float)
        lo, hi = self.mean_domain
        return bool(np.all(a >= lo) and np.all(a <= hi))

    def on_mean_boundary(self, a) -> bool:
        """True when some entry of ``a`` sits exactly on the domain boundary."""
        a = np.asarray(a, dtype=float)
        lo, hi = self.mean_domain
        hit = np.zeros(a.shape, dtype=bool)
        if math.isfinite(lo):
            hit |= a == lo
        if math.isfinite(hi):
            hit |= a == hi
        return bool(np.any(hit))


class _Bernoulli(ExponentialFamily):
    def cumulant(self, theta):
        # log(1 + e^theta), overflow-safe for large |theta|
        return np.logaddexp(0.0, theta)

    def mean(self, theta):
        return expit(theta)

    def variance(self, theta):
        p = expit(theta)
        return p * (1.0 - p)


class _Poisson(ExponentialFamily):
    def cumulant(self, theta):
        return np.exp(theta)

    def mean(self, theta):
        return np.exp(theta)

    def variance(self, theta):
        return np.exp(theta)


class _GaussianIdentity(ExponentialFamily):
    def cumulant(self, theta):
        theta = np.asarray(theta, dtype=float)
        return 0.5 * theta**2

    def mean(self, theta):
        return np.asarray(theta, dtype=float)

    def variance(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.ones_like(theta)


BERNOULLI = _Bernoulli("bernoulli", (0.0, 1.0))
POISSON = _Poisson("poisson", (0.0, math.inf))
GAUSSIAN = _GaussianIdentity("gaussian", (-math.inf, math.inf))

_BY_TOKEN = {f.name: f for f in (BERNOULLI, POISSON, GAUSSIAN)}


def family_from_token(token: str) -> ExponentialFamily:
    """Resolve a config token (``bernoulli|poisson|gaussian``) to a family."""
    try:
        return _BY_TOKEN[token.strip().lower()]
    except KeyError:
        raise ValueError(
            f"unknown family token {token!r}; expected one of {sorted(_BY_TOKEN)}"
        ) from None
