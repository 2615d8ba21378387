"""
Optimal constants of spectral inequalities on low-frequency subspaces.

For the span ``E_lam`` of the eigenvectors with ``lambda_i <= lam`` every
constant here is a generalized Rayleigh quotient

    K(lam)^2 = max_a  (a^T N a) / (a^T D a),

with ``N`` and ``D`` the compressed quadratic forms of the target and source
norms.  ``K`` is the square root of the largest generalized eigenvalue of
``(N, D)``.

* :func:`optimal_constant` -- ``N = Gram(target)``, ``D = Gram(source)``
  (the estimate ``||v||_{omega_delta} <= K ||v||_omega``);
* :func:`classical_constant` -- ``N = Lambda + I`` (discrete H1 norm over the
  whole domain), ``D = Gram(omega)``;
* :func:`observability_constant` -- ``N = e^{-Lambda T} Gram(target)
  e^{-Lambda T}`` and ``D`` the exact time integral of the free flow
  observed on ``omega``.

When ``D`` is numerically singular (the source region does not see part of
the subspace) a fixed diagonal jitter is added and the estimate is flagged
as regularized; such points are kept out of envelope fits.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .elliptic import SpectralBasis, filter_modes
from .errors import BlindSubspaceWarning, ValidationError
from .geometry import Subdomain

__all__ = [
    "ConstantEstimate",
    "EnvelopeFit",
    "InequalityProbe",
    "classical_constant",
    "default_lambda_grid",
    "fit_envelope",
    "fit_line",
    "observability_constant",
    "observability_estimate",
    "observability_forms",
    "classical_estimate",
    "count_trend_violations",
    "LiftCheck",
    "optimal_constant",
    "sinh_lift_residual",
]

logger = logging.getLogger(__name__)

#: diagonal jitter added to a singular denominator form (relative to its norm)
JITTER = 1e-12
#: denominator eigenvalue ratio below which the form is treated as singular
SINGULAR_RCOND = 1e-12


@dataclass(frozen=True)
class ConstantEstimate:
    """One evaluation of a Rayleigh-quotient constant.

    Attributes
    ----------
    lambda_cut : float
    dim : int
        Dimension of ``E_lam``.
    value : float
        The constant ``K``.
    regularized : bool
        True when the denominator form was singular and jitter was added.
    rcond : float
        Smallest over largest eigenvalue of the denominator form.
    blind_modes : tuple of int
        Zero-based indices of modes whose source norm falls below the
        singularity threshold (empty unless ``regularized``).
    """

    lambda_cut: float
    dim: int
    value: float
    regularized: bool = False
    rcond: float = 1.0
    blind_modes: tuple = ()


def _max_ratio(num, den, lambda_cut=np.nan):
    """Largest generalized eigenvalue of ``(num, den)``, regularizing ``den``."""
    num = 0.5 * (num + num.T)
    den = 0.5 * (den + den.T)
    m = den.shape[0]
    w = np.linalg.eigvalsh(den)
    top = max(w[-1], 0.0)
    rcond = w[0] / top if top > 0 else 0.0
    regularized = not rcond > SINGULAR_RCOND
    blind = ()
    if regularized:
        diag = np.diag(den)
        blind = tuple(int(i) for i in np.flatnonzero(diag <= SINGULAR_RCOND * max(top, 1e-300)))
        scale = top if top > 0 else 1.0
        den = den + JITTER * scale * np.eye(m)
        msg = (f"source form singular on E_lam (lambda_cut={lambda_cut:.6g}, dim={m}, "
               f"rcond={rcond:.3g}); blind modes {list(blind)}; jitter {JITTER:g} applied")
        logger.info(msg)
        warnings.warn(msg, BlindSubspaceWarning, stacklevel=3)
    val = scipy.linalg.eigh(num, den, eigvals_only=True, subset_by_index=[m - 1, m - 1])[0]
    return float(np.sqrt(max(val, 0.0))), regularized, float(rcond), blind


def _modes(basis: SpectralBasis, lambda_cut: float) -> range:
    J = filter_modes(basis, lambda_cut)
    if len(J) == 0:
        raise ValidationError(f"E_lam is empty for lambda_cut={lambda_cut:g} < lambda_1={basis.eigenvalues[0]:g}")
    return J


def default_lambda_grid(basis: SpectralBasis, n_points: int = 12) -> np.ndarray:
    """Log-spaced cutoffs from ``2 lambda_1`` to ``lambda_{N/2}``."""
    lo = 2.0 * basis.eigenvalues[0]
    hi = basis.eigenvalues[basis.count // 2 - 1]
    if hi <= lo:
        raise ValidationError("basis too small for the default lambda grid")
    return np.geomspace(lo, hi, n_points)


@dataclass(frozen=True, eq=False)
class InequalityProbe:
    """Source/target pair and a grid of spectral cutoffs.

    Attributes
    ----------
    basis : SpectralBasis
    source_region : Subdomain
        The observation set ``omega``.
    target_region : Subdomain
        ``omega_delta`` or the whole domain.
    lambda_grid : ndarray
        Strictly increasing cutoffs, each ``>= lambda_1``.
    """

    basis: SpectralBasis
    source_region: Subdomain
    target_region: Subdomain
    lambda_grid: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.source_region.measure <= 0:
            raise ValidationError("source region has zero measure")
        grid = np.asarray(self.lambda_grid, dtype=float)
        if grid.ndim != 1 or len(grid) == 0:
            raise ValidationError("lambda grid must be a nonempty 1D sequence")
        if np.any(np.diff(grid) <= 0):
            raise ValidationError("lambda grid must be strictly increasing")
        if grid[0] < self.basis.eigenvalues[0] * (1 - 1e-12):
            raise ValidationError("lambda grid starts below lambda_1")
        grid.flags.writeable = False
        object.__setattr__(self, "lambda_grid", grid)

    @classmethod
    def build(cls, basis, source, target, lambda_grid=None, n_points: int = 12):
        grid = default_lambda_grid(basis, n_points) if lambda_grid is None else lambda_grid
        return cls(basis, source, target, grid)

    def _grams(self, m):
        """Source/target Gram matrices over the first ``m`` modes (cached)."""
        have = self._cache.get("m", 0)
        if m > have:
            top = int(filter_modes(self.basis, self.lambda_grid[-1]).stop)
            top = max(top, m)
            modes = slice(0, top)
            self._cache["G"] = self.basis.gram(self.source_region, modes)
            self._cache["Gp"] = self.basis.gram(self.target_region, modes)
            self._cache["m"] = top
        return self._cache["G"][:m, :m], self._cache["Gp"][:m, :m]

    def estimate(self, lambda_cut: float) -> ConstantEstimate:
        m = len(_modes(self.basis, lambda_cut))
        G, Gp = self._grams(m)
        val, reg, rc, blind = _max_ratio(Gp, G, lambda_cut)
        return ConstantEstimate(float(lambda_cut), m, val, reg, rc, blind)

    def sweep(self) -> list:
        """Estimates at every grid cutoff."""
        return [self.estimate(lam) for lam in self.lambda_grid]


def optimal_constant(probe: InequalityProbe, lambda_cut: float) -> float:
    """Best ``K`` with ``||v||_target <= K ||v||_source`` for all ``v`` in ``E_lam``.

    Examples
    --------
    >>> from heatcost.geometry import build_domain, Subdomain
    >>> from heatcost.elliptic import assemble, eigendecompose, CoefficientField
    >>> dom = build_domain(1, (0, 1), 63)
    >>> basis = eigendecompose(assemble(dom, CoefficientField.constant(1.0)))
    >>> om = Subdomain.interval(dom, 0.3, 0.6)
    >>> probe = InequalityProbe.build(basis, om, om)
    >>> round(optimal_constant(probe, 200.0), 12)
    1.0
    """
    return probe.estimate(lambda_cut).value


def classical_constant(basis: SpectralBasis, omega: Subdomain, lambda_cut: float) -> float:
    """Best ``K`` with ``||v||_{H1(domain)} <= K ||v||_omega`` on ``E_lam``.

    The discrete H1 form is ``v^T (K + M) v``, which on mass-orthonormal
    modes is ``diag(1 + lambda_i)``.
    """
    return classical_estimate(basis, omega, lambda_cut).value


def classical_estimate(basis, omega, lambda_cut) -> ConstantEstimate:
    J = _modes(basis, lambda_cut)
    lam = basis.eigenvalues[J]
    G = basis.gram(omega, J)
    val, reg, rc, blind = _max_ratio(np.diag(1.0 + lam), G, lambda_cut)
    return ConstantEstimate(float(lambda_cut), len(J), val, reg, rc, blind)


def observability_forms(basis, omega, omega_delta, lambda_cut, T):
    """Numerator and denominator forms of the time-integrated inequality."""
    if not T > 0:
        raise ValidationError(f"T must be positive, got {T!r}")
    J = _modes(basis, lambda_cut)
    lam = basis.eigenvalues[J]
    G = basis.gram(omega, J)
    Gp = basis.gram(omega_delta, J)
    d = np.exp(-lam * T)
    num = d[:, None] * Gp * d[None, :]
    s = lam[:, None] + lam[None, :]
    den = G * (-np.expm1(-s * T) / s)
    return num, den


def observability_estimate(basis, omega, omega_delta, lambda_cut, T) -> ConstantEstimate:
    num, den = observability_forms(basis, omega, omega_delta, lambda_cut, T)
    val, reg, rc, blind = _max_ratio(num, den, lambda_cut)
    return ConstantEstimate(float(lambda_cut), num.shape[0], val, reg, rc, blind)


def observability_constant(basis: SpectralBasis, omega: Subdomain, omega_delta: Subdomain,
                           lambda_cut: float, T: float) -> float:
    """Best ``K`` with ``||v(T)||_{omega_delta} <= K ||v||_{L2((0,T) x omega)}``.

    ``v`` is the free heat flow started from ``v0`` in ``E_lam``.  The
    denominator time integrals are evaluated in closed form.
    """
    return observability_estimate(basis, omega, omega_delta, lambda_cut, T).value


# --------------------------------------------------------------------------
# envelope fits
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class EnvelopeFit:
    """Least-squares line ``log K = intercept + slope * sqrt(lambda)``.

    Attributes
    ----------
    points : ndarray, shape (P, 2)
        ``(sqrt(lambda), log K)`` pairs used in the fit.
    slope, intercept : float
        Least-squares estimates (``eps_hat`` and ``log C_hat``).
    residual : float
        Largest absolute deviation of a point from the line.
    envelope_slope : float
        Smallest slope of a line through ``(0, intercept)`` lying on or
        above every point.
    r_squared : float
    excluded : int
        Number of grid points left out (regularized or non-finite).
    """

    points: np.ndarray = field(repr=False)
    slope: float
    intercept: float
    residual: float
    envelope_slope: float
    r_squared: float
    excluded: int = 0

    @property
    def fitted_range(self) -> float:
        x = self.points[:, 0]
        return abs(self.slope) * float(x.max() - x.min())

    @property
    def relative_residual(self) -> float:
        """Residual as a fraction of the fitted range (``inf`` for flat fits)."""
        r = self.fitted_range
        return self.residual / r if r > 0 else (0.0 if self.residual == 0 else np.inf)

    def dominates(self) -> bool:
        """``log K <= intercept + slope*x + residual`` at every point."""
        x, y = self.points.T
        return bool(np.all(y <= self.intercept + self.slope * x + self.residual * (1 + 1e-12) + 1e-15))


def fit_line(x, y, excluded: int = 0) -> EnvelopeFit:
    """Least-squares line through ``(x, y)`` with residual and envelope."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 4:
        raise ValidationError(f"need at least 4 points with finite values, got {len(x)}")
    X = np.column_stack([np.ones_like(x), x])
    (b0, b1), *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - (b0 + b1 * x)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res**2)) / ss if ss > 0 else 1.0
    pos = x > 0
    env = float(np.max((y[pos] - b0) / x[pos])) if np.any(pos) else np.nan
    return EnvelopeFit(np.column_stack([x, y]), float(b1), float(b0),
                       float(np.max(np.abs(res))), env, r2, excluded)


def fit_envelope(probe, estimates=None) -> EnvelopeFit:
    """Fit ``log K`` against ``sqrt(lambda)`` over the probe's grid.

    Regularized and non-finite estimates are excluded; at least four
    points must remain.

    Parameters
    ----------
    probe : InequalityProbe
    estimates : list of ConstantEstimate, optional
        Precomputed ``probe.sweep()``.
    """
    est = probe.sweep() if estimates is None else estimates
    keep = [e for e in est if not e.regularized and np.isfinite(e.value) and e.value > 0]
    x = np.sqrt([e.lambda_cut for e in keep])
    y = np.log([e.value for e in keep])
    return fit_line(x, y, excluded=len(est) - len(keep))


def count_trend_violations(values, increasing: bool = True, rtol: float = 1e-12) -> int:
    """Number of consecutive pairs breaking a monotone trend."""
    v = np.asarray(values, dtype=float)
    d = np.diff(v) if increasing else -np.diff(v)
    return int(np.sum(d < -rtol * np.maximum(np.abs(v[1:]), np.abs(v[:-1]))))


# --------------------------------------------------------------------------
# harmonic lift in one extra variable
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class LiftCheck:
    """Residuals of the lifted function ``V(x, z)``.

    Attributes
    ----------
    residual : float
        Max interior residual of ``d2V/dz2 - L V`` relative to ``max |L V|``.
    trace_error : float
        ``max |V(., 0)|``.
    flux_error : float
        ``max |dV/dz(., 0) - v|``.
    """

    residual: float
    trace_error: float
    flux_error: float


def sinh_lift_residual(basis: SpectralBasis, lambda_cut: float, coefficients, n_layers: int,
                       vertical: str = "continuous") -> LiftCheck:
    """Residual of ``V = sum a_i lambda_i^{-1/2} sinh(sqrt(lambda_i) z) e_i``.

    ``V`` is sampled on ``n_layers`` equispaced layers ``z in [0, 1]`` and the
    residual of ``d2V/dz2 + div(A grad_x V)`` is evaluated with the discrete
    spatial operator and the three-point second difference in ``z`` at the
    interior layers.

    Parameters
    ----------
    vertical : {"continuous", "discrete"}
        ``"continuous"`` uses ``sinh(sqrt(lambda) z)`` (residual ``O(dz^2)``);
        ``"discrete"`` replaces ``sqrt(lambda)`` by the rate ``mu`` solving the
        discrete vertical dispersion relation ``2 (cosh(mu dz) - 1)/dz^2 =
        lambda``, which makes the residual vanish up to round-off.
    """
    if n_layers < 3:
        raise ValidationError("n_layers must be at least 3")
    J = filter_modes(basis, lambda_cut)
    a = np.asarray(coefficients, dtype=float)
    if a.shape != (len(J),):
        raise ValidationError(f"expected {len(J)} coefficients, got shape {a.shape}")
    lam = basis.eigenvalues[J]
    E = basis.eigenvectors[:, J]
    dz = 1.0 / (n_layers - 1)
    z = dz * np.arange(n_layers)
    if vertical == "continuous":
        mu = np.sqrt(lam)
    elif vertical == "discrete":
        mu = np.arccosh(1.0 + 0.5 * lam * dz**2) / dz
    else:
        raise ValidationError(f"unknown vertical mode {vertical!r}")
    # modal profiles normalized so that dV/dz(0) = sum a_i e_i exactly
    prof = np.sinh(np.outer(z, mu)) / mu  # (layers, modes)
    V = (prof * a) @ E.T  # (layers, nodes)
    LV = basis.operator.apply(V.T).T
    d2 = (V[2:] - 2 * V[1:-1] + V[:-2]) / dz**2
    R = d2 - LV[1:-1]
    scale = np.abs(LV).max()
    res = float(np.abs(R).max() / scale) if scale > 0 else float(np.abs(R).max())
    v = E @ a
    flux = (np.cosh(0.0 * mu) * a) @ E.T
    return LiftCheck(res, float(np.abs(V[0]).max()), float(np.abs(flux - v).max()))
