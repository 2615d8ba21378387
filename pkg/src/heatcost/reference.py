"""
Brute-force reference computations used to cross-check the fast paths.

These routines deliberately avoid the closed forms used elsewhere:

* :func:`sphere_max_ratio` maximizes a Rayleigh quotient by sampling unit
  directions (uniformly, then in shrinking caps around the incumbent);
* :func:`trapezoid_observability_forms` integrates the free flow in time
  with the trapezoidal rule;
* :func:`knot_min_norm_cost` solves the dense minimum-norm problem over
  piecewise-linear-in-time nodal controls, with constraint rows built by
  Gauss--Legendre quadrature.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.integrate import trapezoid

from .elliptic import SpectralBasis, filter_modes
from .geometry import Subdomain

__all__ = [
    "sphere_max_ratio",
    "trapezoid_observability_forms",
    "knot_min_norm_cost",
]


def _unit(rng, n, dim):
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sphere_max_ratio(num, den, n_directions: int = 1_000_000, seed: int = 0,
                     uniform_fraction: float = 0.25, batch: int = 2_000) -> float:
    """``max sqrt(a^T num a / a^T den a)`` over sampled unit vectors ``a``.

    A quarter of the budget (``uniform_fraction``) samples the sphere
    uniformly.  The rest drives a sampling search around the best direction
    found so far: each batch draws Gaussian steps with covariance
    ``sigma^2 C``.  After an improving batch, ``C`` is blended with the
    covariance of the best tenth of the batch and ``sigma`` grows; otherwise
    ``sigma`` shrinks.  Adapting ``C`` lets the search follow the thin ridges
    a Rayleigh quotient develops when ``den`` is ill-conditioned.  A Rayleigh
    quotient has no local maxima on the sphere besides the global one, so
    the search cannot get trapped.  Only quotient values are used.
    """
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    dim = num.shape[0]
    rng = np.random.default_rng(seed)

    def quotient(a):
        return np.einsum("ij,jk,ik->i", a, num, a) / np.einsum("ij,jk,ik->i", a, den, a)

    best_val, best_dir = -np.inf, None
    left = int(n_directions * uniform_fraction)
    while left > 0:
        n = min(batch, left)
        left -= n
        a = _unit(rng, n, dim)
        q = quotient(a)
        k = int(np.argmax(q))
        if q[k] > best_val:
            best_val, best_dir = float(q[k]), a[k].copy()
    left = n_directions - int(n_directions * uniform_fraction)
    sigma = 0.3
    C = np.eye(dim) / dim
    n_elite = max(2, batch // 10)
    while left > 0 and dim > 1:
        n = min(batch, left)
        left -= n
        L = np.linalg.cholesky(C + 1e-300 * np.eye(dim))
        steps = rng.standard_normal((n, dim)) @ L.T
        a = best_dir + sigma * steps
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        q = quotient(a)
        order = np.argsort(q)[::-1]
        if q[order[0]] > best_val:
            elite = steps[order[:n_elite]]
            Ce = elite.T @ elite / n_elite
            C = 0.7 * C + 0.3 * Ce / np.trace(Ce)
            C /= np.trace(C)
            best_val, best_dir = float(q[order[0]]), a[order[0]].copy()
            sigma = min(1.5 * sigma, 0.3)
        else:
            sigma = max(0.5 * sigma, 1e-16)
    return float(np.sqrt(max(best_val, 0.0)))


def trapezoid_observability_forms(basis: SpectralBasis, omega: Subdomain, omega_delta: Subdomain,
                                  lambda_cut: float, T: float, n_time: int = 200_001):
    """Numerator and denominator forms with the time integral done by trapezoid.

    The free flow of each mode is sampled in time, restricted to ``omega``
    on the node grid, and the space-time L2 inner products are accumulated
    with the trapezoidal rule.
    """
    J = filter_modes(basis, lambda_cut)
    lam = basis.eigenvalues[J]
    E = basis.eigenvectors[:, J]
    w = omega.weights
    G = E.T @ (w[:, None] * E)
    t = np.linspace(0.0, T, n_time)
    decay = np.exp(-np.outer(t, lam))  # (n_time, m)
    # int_0^T e^{-lam_i t} e^{-lam_j t} dt by trapezoid, then weighted by G
    prod = decay[:, :, None] * decay[:, None, :]
    integ = trapezoid(prod, t, axis=0)
    den = G * integ
    ET = E * np.exp(-lam * T)
    wd = omega_delta.weights
    num = ET.T @ (wd[:, None] * ET)
    return num, den


def _hat_moments(rate, knots, n_gauss=8):
    """``int e^{-rate (tau - t)} hat_k(t) dt`` for every knot by Gauss--Legendre."""
    tau = knots[-1]
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    K = len(knots)
    out = np.zeros((len(rate), K))
    for i in range(K - 1):
        a, b = knots[i], knots[i + 1]
        t = 0.5 * (b - a) * xg + 0.5 * (a + b)
        wt = 0.5 * (b - a) * wg
        kern = np.exp(-np.outer(rate, tau - t))  # (m, g)
        left = (b - t) / (b - a)
        right = (t - a) / (b - a)
        out[:, i] += kern @ (wt * left)
        out[:, i + 1] += kern @ (wt * right)
    return out


def knot_min_norm_cost(basis: SpectralBasis, omega: Subdomain, modes, rhs, tau: float,
                       n_knots: int = 256) -> float:
    """Minimal ``||f||_{L2((0,tau) x omega)}`` over piecewise-linear nodal controls.

    Constraints: for each mode ``i`` in ``modes``,
    ``int_0^tau e^{-lambda_i (tau - t)} <f(t), e_i>_omega dt = rhs_i``.
    The KKT system of the dense quadratic program is solved directly.
    """
    modes = np.asarray(modes, dtype=int)
    rhs = np.asarray(rhs, dtype=float)
    idx = omega.indices
    w = omega.weights[idx]
    E = basis.eigenvectors[np.ix_(idx, modes)]  # (n_omega, m)
    lam = basis.eigenvalues[modes]
    knots = np.linspace(0.0, tau, n_knots)
    dt = knots[1] - knots[0]
    # piecewise-linear mass matrix in time
    Mt = np.diag(np.full(n_knots, 4.0)) + np.diag(np.ones(n_knots - 1), 1) + np.diag(np.ones(n_knots - 1), -1)
    Mt[0, 0] = Mt[-1, -1] = 2.0
    Mt *= dt / 6.0
    Q = np.kron(Mt, np.diag(w))  # variables ordered (knot, node)
    q = _hat_moments(lam, knots)  # (m, K)
    C = np.einsum("ik,xi->ikx", q, w[:, None] * E).reshape(len(modes), -1)
    n = Q.shape[0]
    m = len(modes)
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = 2 * Q
    kkt[:n, n:] = C.T
    kkt[n:, :n] = C
    sol = scipy.linalg.solve(kkt, np.concatenate([np.zeros(n), rhs]), assume_a="sym")
    f = sol[:n]
    return float(np.sqrt(max(f @ Q @ f, 0.0)))
