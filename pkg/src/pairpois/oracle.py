"""Slow reference implementations used by the test suite.

These trade speed for trustworthiness: the full likelihood comes from a
dense-grid filtering recursion (one-dimensional integrals chained over
time), and pair densities from plain Monte Carlo over the latent pair.
They exist to cross-check the production Gauss-Hermite path at small
scale and are not meant for fitting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure
from .model import CountSeries, Params, poisson_log_pmf

MAX_FILTER_N = 50
MAX_FILTER_PHI = 0.6
_MASS_DRIFT_LIMIT = 1e-4


@dataclass(frozen=True)
class GridSpec:
    """Uniform latent grid for the filtering recursion.

    Bounds must cover at least +-8 stationary standard deviations, and
    at least 200 points are required.
    """

    lo: float
    hi: float
    m: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("grid bounds must satisfy lo < hi")
        if self.m < 200:
            raise ValueError("grid needs at least 200 points")

    @classmethod
    def for_params(cls, params: Params, m: int = 400, half_width: float = 8.0) -> "GridSpec":
        tau = math.sqrt(params.tau2)
        return cls(lo=-half_width * tau, hi=half_width * tau, m=m)

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.m)

    def trap_weights(self) -> np.ndarray:
        w = np.full(self.m, (self.hi - self.lo) / (self.m - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        return w


def _normal_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def full_loglik_filter(series: CountSeries, params: Params, grid: GridSpec) -> float:
    """Full log-likelihood via the predictive-density recursion on a grid.

    Starting from the stationary prior, alternate propagating the
    filtered latent density through the AR transition kernel and
    integrating the Poisson likelihood against it; the log-likelihood is
    the sum of the log one-step predictive densities.  Trapezoid
    integration throughout.

    Guards: test scale only (n <= 50) and moderate autocorrelation
    (|phi| <= 0.6), where the non-adaptive recursion is dependable.

    Raises
    ------
    NumericalFailure
        If the predictive density's mass on the grid drifts from one by
        more than 1e-4 (grid too coarse or too narrow).
    """
    if series.n > MAX_FILTER_N:
        raise ValueError(f"filter reference is limited to n <= {MAX_FILTER_N}")
    if abs(params.phi) > MAX_FILTER_PHI:
        raise ValueError(f"filter reference is limited to |phi| <= {MAX_FILTER_PHI}")
    if not params.sigma2 > 0:
        raise ValueError("filter reference needs sigma2 > 0")
    tau = math.sqrt(params.tau2)
    if grid.lo > -8.0 * tau or grid.hi < 8.0 * tau:
        raise ValueError("grid must cover +-8 stationary standard deviations")

    u = grid.points()
    w = grid.trap_weights()
    eta = series.X @ params.beta
    # transition[a, b] = density of u_t = u[a] given u_{t-1} = u[b]
    transition = _normal_pdf(u[:, None], params.phi * u[None, :], params.sigma2)

    density = _normal_pdf(u, 0.0, params.tau2)  # latent prior at t = 1
    loglik = 0.0
    for t in range(series.n):
        if t > 0:
            density = transition @ (w * density)
            mass = float(w @ density)
            if abs(mass - 1.0) > _MASS_DRIFT_LIMIT:
                raise NumericalFailure(
                    f"predictive mass drifted to {mass:.6f} at t = {t + 1}; refine the grid",
                    time_index=t + 1,
                )
        like = np.exp(poisson_log_pmf(series.y[t], eta[t] + u))
        predictive = float(w @ (like * density))
        if not predictive > 0:
            raise NumericalFailure(
                f"one-step predictive density vanished at t = {t + 1}", time_index=t + 1
            )
        loglik += math.log(predictive)
        density = like * density / predictive
        density = density / float(w @ density)
    return loglik


def mc_pair_density(
    y1: int,
    y2: int,
    x1: np.ndarray,
    x2: np.ndarray,
    lag: int,
    params: Params,
    n_draws: int,
    seed: int,
) -> tuple[float, float]:
    """Monte Carlo estimate of the joint pair density with its standard
    error.

    Averages the product of the two Poisson probabilities over draws of
    the latent pair from its stationary bivariate normal law.  At least
    1e5 draws are required.
    """
    if n_draws < 100_000:
        raise ValueError("use at least 1e5 draws for a trustworthy reference")
    if lag < 1:
        raise ValueError("lag must be >= 1")
    eta1 = float(np.dot(np.asarray(x1, dtype=float), params.beta))
    eta2 = float(np.dot(np.asarray(x2, dtype=float), params.beta))
    tau = math.sqrt(params.tau2)
    rho = params.phi**lag

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed,)))
    total = 0.0
    total_sq = 0.0
    left = n_draws
    chunk = 1_000_000
    while left > 0:
        m = min(chunk, left)
        z = rng.standard_normal((m, 2))
        uu = tau * z[:, 0]
        vv = tau * (rho * z[:, 0] + math.sqrt(1.0 - rho * rho) * z[:, 1])
        vals = np.exp(poisson_log_pmf(y1, eta1 + uu) + poisson_log_pmf(y2, eta2 + vv))
        total += float(vals.sum())
        total_sq += float((vals**2).sum())
        left -= m
    mean = total / n_draws
    var = max(total_sq / n_draws - mean * mean, 0.0)
    return mean, math.sqrt(var / n_draws)


def mc_full_likelihood(
    series: CountSeries, params: Params, n_draws: int, seed: int
) -> tuple[float, float]:
    """Brute-force Monte Carlo estimate of the full likelihood.

    Draws whole latent paths from the stationary AR(1) law and averages
    the product of the Poisson probabilities; returns the estimate and
    its standard error.  Only sensible for very short series.
    """
    if series.n > 12:
        raise ValueError("path Monte Carlo is only usable for very short series")
    eta = series.X @ params.beta
    tau = math.sqrt(params.tau2)
    sigma = math.sqrt(params.sigma2)
    phi = params.phi

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed,)))
    total = 0.0
    total_sq = 0.0
    left = n_draws
    chunk = max(1, 2_000_000 // series.n)
    while left > 0:
        m = min(chunk, left)
        z = rng.standard_normal((m, series.n))
        u = np.empty_like(z)
        u[:, 0] = tau * z[:, 0]
        for t in range(1, series.n):
            u[:, t] = phi * u[:, t - 1] + sigma * z[:, t]
        logw = poisson_log_pmf(series.y[None, :], eta[None, :] + u).sum(axis=1)
        vals = np.exp(logw)
        total += float(vals.sum())
        total_sq += float((vals**2).sum())
        left -= m
    mean = total / n_draws
    var = max(total_sq / n_draws - mean * mean, 0.0)
    return mean, math.sqrt(var / n_draws)
