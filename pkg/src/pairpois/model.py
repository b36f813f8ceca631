"""Latent AR(1) Poisson count model.

Counts y_t are conditionally Poisson with log-mean x_t'beta + u_t, where
u_t is an unobserved stationary Gaussian AR(1) process with innovation
variance sigma2 and autoregression phi.  This module holds the parameter
containers, the closed-form marginal moments, the Gauss-Hermite pair
densities, and the weighted pairwise log-likelihood with its analytic
score on the unconstrained (working) scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import NumericalFailure
from .quadrature import QuadRule

RECTANGULAR = "rectangular"
TRAPEZOIDAL = "trapezoidal"

_SCHEME_ALIASES = {
    "rect": RECTANGULAR,
    "rectangular": RECTANGULAR,
    "trap": TRAPEZOIDAL,
    "trapezoidal": TRAPEZOIDAL,
}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Params:
    """Model parameters on the natural scale.

    ``beta`` are the regression coefficients on the log scale, ``sigma2``
    the latent innovation variance and ``phi`` the latent autoregression.
    The stationary latent variance ``tau2 = sigma2 / (1 - phi**2)`` is
    derived on access.  ``sigma2 == 0`` is allowed as the degenerate
    (no latent component) boundary used by the independence restriction.
    """

    beta: np.ndarray
    sigma2: float
    phi: float

    def __post_init__(self):
        beta = _readonly(np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "phi", float(self.phi))
        if beta.ndim != 1 or not np.all(np.isfinite(beta)):
            raise ValueError("beta must be a finite 1-D coefficient vector")
        if not self.sigma2 >= 0 or not np.isfinite(self.sigma2):
            raise ValueError(f"sigma2 must be non-negative, got {self.sigma2}")
        if not abs(self.phi) < 1:
            raise ValueError(f"phi must lie in (-1, 1), got {self.phi}")

    @property
    def tau2(self) -> float:
        return self.sigma2 / (1.0 - self.phi * self.phi)

    @property
    def n_coef(self) -> int:
        return self.beta.shape[0]

    def to_working(self) -> "WorkingParams":
        log_sigma2 = math.log(self.sigma2) if self.sigma2 > 0 else -math.inf
        return WorkingParams(beta=self.beta, log_sigma2=log_sigma2, z_phi=math.atanh(self.phi))


@dataclass(frozen=True)
class WorkingParams:
    """Unconstrained parametrization used by the optimizer.

    ``log_sigma2 = log(sigma2)`` and ``z_phi = atanh(phi)`` keep the
    positivity and stationarity constraints implicit; the map to
    :class:`Params` is a bijection (round trips to within 1e-12).
    """

    beta: np.ndarray
    log_sigma2: float
    z_phi: float

    def __post_init__(self):
        beta = _readonly(np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "log_sigma2", float(self.log_sigma2))
        object.__setattr__(self, "z_phi", float(self.z_phi))

    def to_params(self) -> Params:
        return Params(beta=self.beta, sigma2=math.exp(self.log_sigma2), phi=math.tanh(self.z_phi))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, [self.log_sigma2, self.z_phi]])

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_coef: int) -> "WorkingParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (n_coef + 2,):
            raise ValueError(f"expected vector of length {n_coef + 2}, got shape {vec.shape}")
        return cls(beta=vec[:n_coef], log_sigma2=vec[n_coef], z_phi=vec[n_coef + 1])


@dataclass(frozen=True)
class CountSeries:
    """Observed counts with their covariate matrix and time labels.

    ``y`` holds n non-negative integer counts, ``X`` the n x (p+1)
    covariate matrix whose first column is the intercept, and ``t_index``
    arbitrary per-observation labels (month strings for real data,
    1-based integers for simulated series).
    """

    y: np.ndarray
    X: np.ndarray
    t_index: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 1:
            raise ValueError("y must be 1-D")
        if not np.issubdtype(y.dtype, np.integer):
            y_int = np.asarray(y, dtype=np.int64)
            if not np.array_equal(y_int, y):
                raise ValueError("counts must be integers")
            y = y_int
        if np.any(y < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "y", _readonly(y.astype(np.int64)))

        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError("X must be an (n, p+1) matrix aligned with y")
        if not np.all(np.isfinite(X)):
            raise ValueError("X must be finite")
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise ValueError("X must have full column rank")
        object.__setattr__(self, "X", _readonly(X))

        t_index = self.t_index
        if t_index is None:
            t_index = np.arange(1, y.shape[0] + 1)
        t_index = np.asarray(t_index)
        if t_index.shape[0] != y.shape[0]:
            raise ValueError("t_index must align with y")
        object.__setattr__(self, "t_index", t_index)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_coef(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class PairWeights:
    """Normalized lag weights for the pairwise likelihood.

    ``w[i-1]`` weights pairs that are i lags apart, for i = 1..len(w).
    The window length ``m_d`` (equal to d for rectangular weights and 2d
    for trapezoidal) sets where the outer likelihood sum starts; for the
    trapezoidal scheme the zero weight at lag 2d is not stored, so
    ``len(w) == m_d - 1`` there.
    """

    d: int
    scheme: str
    w: np.ndarray
    m_d: int

    def __post_init__(self):
        object.__setattr__(self, "w", _readonly(np.asarray(self.w, dtype=float)))

    @property
    def lags(self) -> np.ndarray:
        return np.arange(1, self.w.shape[0] + 1)


def make_weights(d: int, scheme: str = RECTANGULAR) -> PairWeights:
    """Build normalized pair weights of order ``d`` for the given scheme.

    Rectangular weights are 1/d for lags 1..d.  Trapezoidal weights are
    proportional to 1 for lags below d and to (2d - i)/d for lags
    d <= i < 2d, so they stay flat and then decay linearly to zero.

    Raises
    ------
    ValueError
        If ``d < 1`` or the scheme is unknown.
    """
    if isinstance(d, bool) or not isinstance(d, (int, np.integer)) or d < 1:
        raise ValueError(f"order d must be a positive integer, got {d!r}")
    d = int(d)
    key = str(scheme).lower()
    if key not in _SCHEME_ALIASES:
        raise ValueError(f"unknown weight scheme {scheme!r}")
    scheme = _SCHEME_ALIASES[key]

    if scheme == RECTANGULAR:
        w = np.full(d, 1.0 / d)
        m_d = d
    else:
        lags = np.arange(1, 2 * d)
        raw = np.where(lags < d, 1.0, (2.0 * d - lags) / d)
        w = raw / raw.sum()
        m_d = 2 * d
    return PairWeights(d=d, scheme=scheme, w=w, m_d=m_d)


# ---------------------------------------------------------------------------
# marginal moments


def marginal_mean(x: np.ndarray, params: Params) -> float:
    """Marginal mean exp(x'beta + tau2/2) of a count with covariates x."""
    return float(np.exp(np.dot(x, params.beta) + 0.5 * params.tau2))


def marginal_var(x: np.ndarray, params: Params) -> float:
    """Marginal variance m + m^2 * (exp(tau2) - 1), always >= the mean."""
    m = marginal_mean(x, params)
    return m + m * m * math.expm1(params.tau2)


def autocorrelation(lag: int, x_t: np.ndarray, x_lag: np.ndarray, params: Params) -> float:
    """Marginal autocorrelation of counts ``lag`` steps apart.

    Depends on the marginal moments at both time points, so it varies
    with the covariates even though the latent correlation phi**lag
    does not.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    m_t = marginal_mean(x_t, params)
    m_l = marginal_mean(x_lag, params)
    num = m_t * m_l * math.expm1(params.phi**lag * params.tau2)
    return num / math.sqrt(marginal_var(x_t, params) * marginal_var(x_lag, params))


def dispersion_index(x: np.ndarray, params: Params) -> float:
    """Dispersion index E(y) * (exp(tau2) - 1).

    The conditional-variance excess relative to the mean; it governs how
    many quadrature nodes the pair densities need.
    """
    return marginal_mean(x, params) * math.expm1(params.tau2)


def poisson_log_pmf(y, log_mean):
    """Poisson log-pmf with the mean given on the log scale.

    Uses the log-gamma function, never factorials, so large counts are
    safe.  Overflowing means saturate to a log-pmf of -inf.
    """
    y = np.asarray(y)
    log_mean = np.asarray(log_mean, dtype=float)
    with np.errstate(over="ignore"):
        return y * log_mean - np.exp(log_mean) - gammaln(y + 1.0)


# ---------------------------------------------------------------------------
# pair densities and the weighted pairwise likelihood

_LOG_PI = math.log(math.pi)


def _grid_pieces(rule: QuadRule, tau2: float, rho: float):
    """Latent values at the tensor nodes: u over j, v over (j, k)."""
    x = rule.nodes
    c = math.sqrt(2.0 * tau2)
    s = math.sqrt(1.0 - rho * rho)
    u = c * x
    v = c * (rho * x[:, None] + s * x[None, :])
    logw = np.log(rule.weights)
    logw2 = logw[:, None] + logw[None, :] - _LOG_PI
    return u, v, logw2


def pair_log_density(
    y1: int,
    y2: int,
    x1: np.ndarray,
    x2: np.ndarray,
    lag: int,
    params: Params,
    rule: QuadRule,
) -> float:
    """Log joint density of two counts ``lag`` steps apart.

    The double integral over the latent pair is approximated with the
    tensor Gauss-Hermite rule mapped through the Cholesky factor of the
    latent covariance, and accumulated in log space (log-sum-exp over
    the full grid) so that large counts cannot underflow.

    When the two covariate rows are identical the arguments are ordered
    canonically first, which makes the exchange symmetry
    ``p(y1, y2) == p(y2, y1)`` hold exactly rather than only to
    quadrature accuracy.

    Raises
    ------
    NumericalFailure
        If every grid term underflows even in log space.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    if y1 < 0 or y2 < 0:
        raise ValueError("counts must be non-negative")
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)

    if params.tau2 == 0.0:
        return float(
            poisson_log_pmf(y1, np.dot(x1, params.beta))
            + poisson_log_pmf(y2, np.dot(x2, params.beta))
        )

    if np.array_equal(x1, x2) and y2 < y1:
        y1, y2 = y2, y1

    rho = params.phi**lag
    u, v, logw2 = _grid_pieces(rule, params.tau2, rho)
    a = np.dot(x1, params.beta) + u
    b = np.dot(x2, params.beta) + v
    with np.errstate(over="ignore"):
        term = logw2 + poisson_log_pmf(y1, a)[:, None] + poisson_log_pmf(y2, b)
        m = term.max()
        if not np.isfinite(m):
            raise NumericalFailure(
                f"pair density underflowed for counts ({y1}, {y2}) at lag {lag}", lag=lag
            )
        out = m + math.log(np.exp(term - m).sum())
    return float(out)


class PairwiseEvaluator:
    """Precomputed machinery for one (series, weights, rule) triple.

    Groups the lag-i pairs by their distinct (count, covariate) content
    so each distinct pair density is evaluated once per parameter value;
    on covariate-free data this collapses hundreds of pairs to a few
    dozen grid evaluations.  All public methods are pure functions of
    the working parameters; the per-t sums run in a fixed order, so
    results are bit-reproducible.
    """

    def __init__(self, series: CountSeries, weights: PairWeights, rule: QuadRule):
        n = series.n
        if n <= weights.m_d:
            raise ValueError(f"series length {n} must exceed the window m_d = {weights.m_d}")
        self.series = series
        self.weights = weights
        self.rule = rule
        self.n = n
        self.m_d = weights.m_d
        self.n_pairs = n - weights.m_d
        self.n_coef = series.n_coef
        self.dim = series.n_coef + 2

        y = series.y
        X = series.X
        self._lgam = gammaln(y + 1.0)

        outer = np.arange(weights.m_d, n)  # 0-based positions of t = m_d+1 .. n
        self._blocks = []
        for lag, w_lag in zip(weights.lags, weights.w):
            idx2 = outer
            idx1 = outer - lag
            same_x = np.all(X[idx1] == X[idx2], axis=1)
            swap = same_x & (y[idx1] > y[idx2])
            a1 = np.where(swap, idx2, idx1)
            a2 = np.where(swap, idx1, idx2)
            key = np.column_stack([y[a1], y[a2], X[a1], X[a2]])
            _, rep, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
            self._blocks.append(
                {
                    "lag": int(lag),
                    "w": float(w_lag),
                    "i1": a1[rep],
                    "i2": a2[rep],
                    "inverse": inverse,
                    "counts": np.bincount(inverse, minlength=rep.shape[0]).astype(float),
                }
            )

    # -- core passes -------------------------------------------------------

    def _block_terms(self, block, eta, u, v, logw2, lag, tau2, phi, want_grad):
        """Log density and (optionally) working-scale gradient pieces for
        the distinct pairs of one lag block."""
        y = self.series.y
        X = self.series.X
        i1, i2 = block["i1"], block["i2"]
        y1 = y[i1]
        y2 = y[i2]
        eta1 = eta[i1]
        eta2 = eta[i2]

        with np.errstate(over="ignore"):
            exp_u = np.exp(u)
            exp_v = np.exp(v)
            exp_eta1 = np.exp(eta1)
            exp_eta2 = np.exp(eta2)
            exp_a = exp_eta1[:, None] * exp_u[None, :]
            exp_b = exp_eta2[:, None, None] * exp_v[None, :, :]
            lp1 = y1[:, None] * (eta1[:, None] + u[None, :]) - exp_a - self._lgam[i1][:, None]
            term = (
                logw2[None, :, :]
                + lp1[:, :, None]
                + (y2 * eta2 - self._lgam[i2])[:, None, None]
                + y2[:, None, None] * v[None, :, :]
                - exp_b
            )
            m = term.max(axis=(1, 2))
            bad = ~np.isfinite(m)
            if np.any(bad):
                pos = int(np.nonzero(block["inverse"] == int(np.nonzero(bad)[0][0]))[0][0])
                raise NumericalFailure(
                    f"pair density underflowed at t = {self.m_d + 1 + pos}, lag {lag}",
                    time_index=self.m_d + 1 + pos,
                    lag=lag,
                )
            ew = np.exp(term - m[:, None, None])
            total = ew.sum(axis=(1, 2))
            logp = m + np.log(total)

        if not want_grad:
            return logp, None

        pi = ew / total[:, None, None]
        pj = pi.sum(axis=2)
        r1 = y1 - np.einsum("uj,uj->u", pj, exp_a)
        r2 = y2 - np.einsum("ujk,ujk->u", pi, exp_b)
        s1 = np.einsum("uj,uj,j->u", pj, y1[:, None] - exp_a, u)
        resid2 = pi * (y2[:, None, None] - exp_b)
        s2 = np.einsum("ujk,jk->u", resid2, v)
        g_ls = 0.5 * (s1 + s2)

        rho = phi**lag
        s_rho = math.sqrt(1.0 - rho * rho)
        x = self.rule.nodes
        c = math.sqrt(2.0 * tau2)
        drho_dz = lag * phi ** (lag - 1) * (1.0 - phi * phi)
        dv_drho = c * (x[:, None] - (rho / s_rho) * x[None, :])
        g_z = phi * (s1 + s2) + drho_dz * np.einsum("ujk,jk->u", resid2, dv_drho)

        grads = np.empty((i1.shape[0], self.dim))
        grads[:, : self.n_coef] = r1[:, None] * X[i1] + r2[:, None] * X[i2]
        grads[:, self.n_coef] = g_ls
        grads[:, self.n_coef + 1] = g_z
        return logp, grads

    def _evaluate(self, working: WorkingParams, want_grad: bool, want_pairs: bool):
        params = working.to_params()
        tau2 = params.tau2
        if not tau2 > 0:
            raise ValueError("working parameters must have sigma2 > 0; use the "
                             "degenerate helpers for the independence boundary")
        phi = params.phi
        eta = self.series.X @ params.beta

        loglik = 0.0
        score = np.zeros(self.dim) if want_grad else None
        pair_grads = [] if want_pairs else None
        for block in self._blocks:
            lag = block["lag"]
            rho = phi**lag
            u, v, logw2 = _grid_pieces(self.rule, tau2, rho)
            logp, grads = self._block_terms(
                block, eta, u, v, logw2, lag, tau2, phi, want_grad or want_pairs
            )
            loglik += block["w"] * float(block["counts"] @ logp)
            if want_grad or want_pairs:
                if want_grad:
                    score += block["w"] * (block["counts"] @ grads)
                if want_pairs:
                    pair_grads.append((lag, block["w"], grads[block["inverse"]]))
        return loglik, score, pair_grads

    # -- public surface ----------------------------------------------------

    def loglik(self, working: WorkingParams) -> float:
        value, _, _ = self._evaluate(working, want_grad=False, want_pairs=False)
        return value

    def loglik_and_score(self, working: WorkingParams) -> tuple[float, np.ndarray]:
        value, score, _ = self._evaluate(working, want_grad=True, want_pairs=False)
        return value, score

    def pair_gradients(self, working: WorkingParams):
        """Log-likelihood plus, per lag, the (n_pairs, dim) matrix of
        per-pair score contributions (weight not applied)."""
        value, _, pairs = self._evaluate(working, want_grad=False, want_pairs=True)
        return value, pairs

    def per_t_scores(self, working: WorkingParams) -> np.ndarray:
        """Weighted per-time score terms, one row per t = m_d+1 .. n."""
        _, pairs = self.pair_gradients(working)
        psi = np.zeros((self.n_pairs, self.dim))
        for _, w_lag, grads in pairs:
            psi += w_lag * grads
        return psi


def _degenerate_loglik(series: CountSeries, beta: np.ndarray, weights: PairWeights) -> float:
    """Weighted pairwise log-likelihood at tau2 = 0 (Poisson products)."""
    n = series.n
    if n <= weights.m_d:
        raise ValueError(f"series length {n} must exceed the window m_d = {weights.m_d}")
    eta = series.X @ beta
    lp = poisson_log_pmf(series.y, eta)
    outer = np.arange(weights.m_d, n)
    total = 0.0
    for lag, w_lag in zip(weights.lags, weights.w):
        total += w_lag * float(np.sum(lp[outer - lag] + lp[outer]))
    return total


def _degenerate_pair_gradients(series: CountSeries, beta: np.ndarray, weights: PairWeights):
    """Per-pair coefficient scores at tau2 = 0, mirroring
    :meth:`PairwiseEvaluator.pair_gradients` restricted to beta."""
    n = series.n
    eta = series.X @ beta
    resid = series.y - np.exp(eta)
    outer = np.arange(weights.m_d, n)
    pairs = []
    for lag, w_lag in zip(weights.lags, weights.w):
        i1 = outer - lag
        grads = resid[i1, None] * series.X[i1] + resid[outer, None] * series.X[outer]
        pairs.append((int(lag), float(w_lag), grads))
    return _degenerate_loglik(series, beta, weights), pairs


def pairwise_loglik(
    series: CountSeries, params: Params, weights: PairWeights, rule: QuadRule
) -> float:
    """Weighted pairwise log-likelihood.

    Sums w_i * log p(y_{t-i}, y_t) over lags i and over t = m_d+1 .. n;
    pairs whose later member falls at or before m_d are excluded, which
    matches the indexing the variance theory assumes.
    """
    if params.tau2 == 0.0:
        return _degenerate_loglik(series, params.beta, weights)
    return PairwiseEvaluator(series, weights, rule).loglik(params.to_working())


def pairwise_score(
    series: CountSeries, working: WorkingParams, weights: PairWeights, rule: QuadRule
) -> np.ndarray:
    """Exact gradient of the quadrature-approximated pairwise log-likelihood
    with respect to the working parameters (beta, log sigma2, atanh phi).

    Differentiates through the fixed Hermite nodes, the closed-form 2x2
    Cholesky transform of the latent covariance, and the log-sum-exp, so
    it agrees with finite differences of :func:`pairwise_loglik` to
    near machine precision.
    """
    _, score = PairwiseEvaluator(series, weights, rule).loglik_and_score(working)
    return score


def per_t_score(
    series: CountSeries, t: int, working: WorkingParams, weights: PairWeights, rule: QuadRule
) -> np.ndarray:
    """The t-th summand of the pairwise score (t is 1-based, m_d < t <= n).

    Summing over every admissible t recovers :func:`pairwise_score`.
    """
    ev = PairwiseEvaluator(series, weights, rule)
    if not (weights.m_d < t <= series.n):
        raise ValueError(f"t must satisfy {weights.m_d} < t <= {series.n}, got {t}")
    return ev.per_t_scores(working)[t - weights.m_d - 1]
