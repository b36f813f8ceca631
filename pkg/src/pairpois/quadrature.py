"""Gauss-Hermite rules and their transform to bivariate-normal expectations.

Rules follow the physicists' convention: an order-n rule integrates
f(x) exp(-x^2) exactly for polynomials f of degree <= 2n - 1, and the
weights sum to sqrt(pi).  The bivariate transform maps a tensor product
of two one-dimensional rules onto the stationary law of two latent
values with common variance tau2 and correlation rho.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal

MAX_ORDER = 100


@dataclass(frozen=True)
class QuadRule:
    """One-dimensional Gauss-Hermite rule for the weight exp(-x^2).

    Nodes are strictly increasing and symmetric about zero; weights are
    positive, symmetric, and sum to sqrt(pi).
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class BivariateRule:
    """Cubature rule for E[f(u, v)] with (u, v) centered bivariate normal.

    ``points`` is an (order**2, 2) array of (u, v) evaluation points and
    ``weights`` the matching probability weights (they sum to one).  The
    rule reproduces the covariance tau2 * [[1, rho], [rho, 1]] exactly
    for order >= 2.
    """

    points: np.ndarray
    weights: np.ndarray
    tau2: float
    rho: float

    @property
    def order(self) -> int:
        return int(round(math.sqrt(self.points.shape[0])))

    def expect(self, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
        """Approximate E[f(u, v)] under the bivariate normal law."""
        return float(np.sum(self.weights * f(self.points[:, 0], self.points[:, 1])))


@lru_cache(maxsize=None)
def gauss_hermite(order: int) -> QuadRule:
    """Build the order-point Gauss-Hermite rule.

    Nodes and weights come from the eigen-decomposition of the symmetric
    tridiagonal Jacobi matrix, which is stable for all supported orders.
    The rule is cached, and its arrays are marked read-only.

    Parameters
    ----------
    order : int
        Number of nodes, between 1 and 100.

    Raises
    ------
    ValueError
        If ``order`` is not an integer in [1, 100].
    """
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)):
        raise ValueError(f"order must be an integer, got {order!r}")
    order = int(order)
    if order < 1 or order > MAX_ORDER:
        raise ValueError(f"order must be in [1, {MAX_ORDER}], got {order}")

    if order == 1:
        nodes = np.zeros(1)
        weights = np.array([math.sqrt(math.pi)])
    else:
        off_diag = np.sqrt(np.arange(1, order) / 2.0)
        nodes = eigh_tridiagonal(np.zeros(order), off_diag, eigvals_only=True)
        # enforce the exact symmetry the continuous rule has
        nodes = 0.5 * (nodes - nodes[::-1])
        if order % 2 == 1:
            nodes[order // 2] = 0.0
        # Weights through the Christoffel function 1 / sum_k p_k(x)^2 of
        # the orthonormal recurrence: positive by construction, and free
        # of the underflow the eigenvector route suffers at high order.
        p_prev = np.zeros(order)
        p = np.full(order, math.pi**-0.25)
        total = p * p
        for k in range(1, order):
            p, p_prev = nodes * p * math.sqrt(2.0 / k) - p_prev * math.sqrt((k - 1.0) / k), p
            total += p * p
        weights = 1.0 / total
        weights = 0.5 * (weights + weights[::-1])

    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule(order=order, nodes=nodes, weights=weights)


def bivariate_normal_rule(rule: QuadRule, tau2: float, rho: float) -> BivariateRule:
    """Transform a 1-D rule into a rule for a centered bivariate normal.

    The tensor-product Hermite nodes x are mapped through
    z = sqrt(2) * L * x, with L the lower-triangular square root of
    tau2 * [[1, rho], [rho, 1]]; the product weights are divided by pi
    so they form a probability measure.

    Raises
    ------
    ValueError
        If ``tau2 <= 0`` or ``abs(rho) >= 1``.
    """
    if not tau2 > 0:
        raise ValueError(f"tau2 must be positive, got {tau2}")
    if not abs(rho) < 1:
        raise ValueError(f"rho must lie in (-1, 1), got {rho}")

    scale = math.sqrt(2.0 * tau2)
    s = math.sqrt(1.0 - rho * rho)
    x = rule.nodes
    xj = np.repeat(x, rule.order)
    xk = np.tile(x, rule.order)
    points = np.column_stack([scale * xj, scale * (rho * xj + s * xk)])
    weights = np.outer(rule.weights, rule.weights).ravel() / math.pi

    points.setflags(write=False)
    weights.setflags(write=False)
    return BivariateRule(points=points, weights=weights, tau2=float(tau2), rho=float(rho))
