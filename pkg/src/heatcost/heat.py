"""
Forward solvers for the controlled heat equation ``u' + L u = 1_omega f``.

Two interchangeable integrators are provided:

* :func:`evolve_spectral` -- exact modal Duhamel formula in a (possibly
  truncated) eigenbasis, with closed-form time integrals for the supported
  control signals;
* :func:`evolve_cn` -- Crank--Nicolson on the full nodal system with the
  source sampled at step midpoints, used to cross-check the spectral path.

Control signals come in two flavours.  :class:`KnotControl` is piecewise
linear in time on a knot grid; :class:`ModalControl` is the exponential
profile ``1_omega * sum_k c_k exp(-lambda_k (t_end - t)) e_k`` produced by
Gramian-based synthesis, which the spectral solver integrates exactly.
:class:`ControlSequence` concatenates signals on disjoint windows (zero
elsewhere).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .elliptic import EllipticOperator, SpectralBasis
from .errors import SolverError, ValidationError
from .geometry import Subdomain

__all__ = [
    "HeatState",
    "KnotControl",
    "ModalControl",
    "ControlSequence",
    "evolve_spectral",
    "evolve_cn",
    "write_trajectory",
]

_TIME_TOL = 1e-12


@dataclass(frozen=True)
class HeatState:
    """Nodal state ``u(time, .)`` on the interior nodes."""

    time: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise ValidationError("state values must be a 1D nodal vector")
        if not self.time >= 0:
            raise ValidationError(f"state time must be >= 0, got {self.time!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "time", float(self.time))

    def norm(self, mass) -> float:
        """Mass-weighted L2 norm."""
        return float(np.sqrt(np.sum(np.asarray(mass) * self.values**2)))


def _check_state(basis_or_nodes: int, u0: HeatState):
    if len(u0.values) != basis_or_nodes:
        raise ValidationError(f"state has {len(u0.values)} values, expected {basis_or_nodes}")


# --------------------------------------------------------------------------
# exponential-integrator weights
# --------------------------------------------------------------------------
def _phi0(z):
    """``(1 - e^{-z}) / z`` with the limit 1 at ``z = 0``."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    return out


def _phi1(z):
    """``(1 - e^{-z}(1 + z)) / z^2`` with a series near 0 (limit 1/2)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-3
    zs = z[small]
    out[small] = 0.5 - zs / 3 + zs**2 / 8 - zs**3 / 30
    zb = z[~small]
    out[~small] = (-np.expm1(-zb) - zb * np.exp(-zb)) / zb**2
    return out


def exp_integral(rate, length):
    """``int_0^length exp(-rate * s) ds`` evaluated stably."""
    rate = np.asarray(rate, dtype=float)
    return length * _phi0(rate * length)


# --------------------------------------------------------------------------
# control signals
# --------------------------------------------------------------------------
class KnotControl:
    """Piecewise-linear-in-time control supported on a node mask.

    Parameters
    ----------
    support : Subdomain
    time_grid : array_like, shape (K,)
        Strictly increasing knots.
    values : array_like, shape (K, n_nodes)
        Nodal values at each knot; must vanish off the support mask.
    """

    def __init__(self, support: Subdomain, time_grid, values):
        t = np.array(time_grid, dtype=float)
        v = np.array(values, dtype=float)
        if t.ndim != 1 or len(t) < 2 or np.any(np.diff(t) <= 0):
            raise ValidationError("time grid must be strictly increasing with >= 2 knots")
        if v.shape != (len(t), support.parent.n_nodes):
            raise ValidationError(f"values shape {v.shape} != ({len(t)}, {support.parent.n_nodes})")
        if np.any(v[:, ~support.membership] != 0):
            raise ValidationError("control values must vanish outside the support mask")
        t.flags.writeable = False
        v.flags.writeable = False
        self.support = support
        self.time_grid = t
        self.values = v
        self._norm_sq = None

    @property
    def t_start(self) -> float:
        return float(self.time_grid[0])

    @property
    def t_end(self) -> float:
        return float(self.time_grid[-1])

    @property
    def breakpoints(self) -> np.ndarray:
        """Times where the signal may be discontinuous (its window ends)."""
        return np.array([self.t_start, self.t_end])

    @property
    def norm_sq(self) -> float:
        """Exact ``int ||f||^2_{L2(omega)} dt`` of the piecewise-linear signal."""
        if self._norm_sq is None:
            w = self.support.weights
            a = self.values[:-1]
            b = self.values[1:]
            dt = np.diff(self.time_grid)
            per = np.sum(w * (a * a + a * b + b * b), axis=1) / 3.0
            self._norm_sq = float(np.sum(dt * per))
        return self._norm_sq

    def sample(self, t: float) -> np.ndarray:
        """Nodal values at time ``t`` (zero outside the knot window)."""
        t = float(t)
        tg = self.time_grid
        if t < tg[0] - _TIME_TOL or t > tg[-1] + _TIME_TOL:
            return np.zeros(self.values.shape[1])
        k = int(np.clip(np.searchsorted(tg, t, side="right") - 1, 0, len(tg) - 2))
        s = (t - tg[k]) / (tg[k + 1] - tg[k])
        s = min(max(s, 0.0), 1.0)
        return (1 - s) * self.values[k] + s * self.values[k + 1]

    def duhamel(self, basis: SpectralBasis, t0: float, t1: float) -> np.ndarray:
        """Modal ``int_{t0}^{t1} e^{-Lambda (t1 - s)} P f(s) ds`` (exact)."""
        lam = basis.eigenvalues
        out = np.zeros(basis.count)
        tg = self.time_grid
        a, b = max(t0, tg[0]), min(t1, tg[-1])
        if b <= a:
            return out
        # knots clipped to [a, b] plus the clip points themselves
        inner = tg[(tg > a) & (tg < b)]
        pts = np.concatenate(([a], inner, [b]))
        g = np.array([basis.to_modal(self.sample(p)) for p in pts])  # (P, N)
        for i in range(len(pts) - 1):
            dt = pts[i + 1] - pts[i]
            z = lam * dt
            w1 = dt * _phi1(z)  # weight on the left value
            w0 = dt * _phi0(z) - w1  # weight on the right value
            out = out + np.exp(-lam * (t1 - pts[i + 1])) * (w1 * g[i] + w0 * g[i + 1])
        return out


class ModalControl:
    """Control ``1_omega * sum_k c_k exp(-lambda_k (t_end - t)) e_k`` on a window.

    This is the form of minimal-norm controls for a finite set of modes.
    ``modes`` index into ``basis``; the signal vanishes outside
    ``[t_start, t_end]``.

    Parameters
    ----------
    basis : SpectralBasis
    support : Subdomain
    modes : sequence of int
    coefficients : array_like
    t_start, t_end : float
    n_knots : int
        Knots used by :attr:`time_grid` / :attr:`values` for export.
    """

    def __init__(self, basis: SpectralBasis, support: Subdomain, modes, coefficients,
                 t_start: float, t_end: float, n_knots: int = 64):
        self.basis = basis
        self.support = support
        self.modes = np.asarray(modes, dtype=int)
        self.coefficients = np.asarray(coefficients, dtype=float)
        if self.coefficients.shape != self.modes.shape:
            raise ValidationError("one coefficient per mode required")
        if not t_end > t_start:
            raise ValidationError("empty control window")
        self.t_start = float(t_start)
        self.t_end = float(t_end)
        self.n_knots = int(n_knots)
        self._B = None

    @property
    def breakpoints(self) -> np.ndarray:
        return np.array([self.t_start, self.t_end])

    @property
    def rates(self) -> np.ndarray:
        return self.basis.eigenvalues[self.modes]

    def _coupling(self):
        """``B[:, modes]`` with ``B = E^T W_omega E`` over all basis modes."""
        if self._B is None:
            self._B = self.basis.gram(self.support)[:, self.modes] if len(self.modes) else np.zeros((self.basis.count, 0))
        return self._B

    @property
    def norm_sq(self) -> float:
        """Exact ``int ||f||^2_{L2(omega)} dt``."""
        if len(self.modes) == 0:
            return 0.0
        B = self._coupling()[self.modes]
        lam = self.rates
        s = lam[:, None] + lam[None, :]
        H = B * exp_integral(s, self.t_end - self.t_start)
        c = self.coefficients
        return float(max(c @ H @ c, 0.0))

    @property
    def time_grid(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_knots)

    @property
    def values(self) -> np.ndarray:
        return np.array([self.sample(t) for t in self.time_grid])

    def sample(self, t: float) -> np.ndarray:
        t = float(t)
        n = self.support.parent.n_nodes
        if t < self.t_start - _TIME_TOL or t > self.t_end + _TIME_TOL or len(self.modes) == 0:
            return np.zeros(n)
        amp = self.coefficients * np.exp(-self.rates * (self.t_end - t))
        v = self.basis.eigenvectors[:, self.modes] @ amp
        return np.where(self.support.membership, v, 0.0)

    def duhamel(self, basis: SpectralBasis, t0: float, t1: float) -> np.ndarray:
        if basis is not self.basis:
            raise ValidationError("modal control used with a different basis")
        out = np.zeros(basis.count)
        a, b = max(t0, self.t_start), min(t1, self.t_end)
        if b <= a or len(self.modes) == 0:
            return out
        lam = basis.eigenvalues
        mu = self.rates
        B = self._coupling()
        # int_a^b e^{-lam_j (t1-s)} e^{-mu_k (t_end-s)} ds
        #   = e^{-lam_j (t1-b)} e^{-mu_k (t_end-b)} int_0^{b-a} e^{-(lam_j+mu_k) u} du
        I = exp_integral(lam[:, None] + mu[None, :], b - a)
        I *= np.exp(-lam * (t1 - b))[:, None] * np.exp(-mu * (self.t_end - b))[None, :]
        return (B * I) @ self.coefficients


class ControlSequence:
    """Sum of signals on disjoint windows; zero outside all windows."""

    def __init__(self, signals):
        self.signals = [s for s in signals if s is not None]
        if not self.signals:
            raise ValidationError("empty control sequence")
        win = sorted((s.t_start, s.t_end) for s in self.signals)
        for (a0, b0), (a1, b1) in zip(win, win[1:]):
            if a1 < b0 - _TIME_TOL:
                raise ValidationError("control windows overlap")
        self.support = self.signals[0].support

    @property
    def t_start(self):
        return min(s.t_start for s in self.signals)

    @property
    def t_end(self):
        return max(s.t_end for s in self.signals)

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(np.concatenate([s.breakpoints for s in self.signals]))

    @property
    def norm_sq(self) -> float:
        return float(sum(s.norm_sq for s in self.signals))

    def sample(self, t):
        return sum(s.sample(t) for s in self.signals)

    def duhamel(self, basis, t0, t1):
        return sum(s.duhamel(basis, t0, t1) for s in self.signals)


def _check_cover(f, t0, t1):
    if isinstance(f, KnotControl):
        if f.t_start > t0 + _TIME_TOL or f.t_end < t1 - _TIME_TOL:
            raise ValidationError(
                f"control knots [{f.t_start:g}, {f.t_end:g}] do not cover [{t0:g}, {t1:g}]")


# --------------------------------------------------------------------------
# integrators
# --------------------------------------------------------------------------
def evolve_spectral(basis: SpectralBasis, u0: HeatState, f, T: float) -> HeatState:
    """Exact modal evolution from ``u0.time`` to ``u0.time + T``.

    The initial state is projected onto the basis; the returned nodal state
    is the synthesis of the evolved modal coefficients.  Use
    :func:`evolve_modal` to stay in modal coordinates.

    Parameters
    ----------
    basis : SpectralBasis
    u0 : HeatState
    f : KnotControl, ModalControl, ControlSequence or None
    T : float
        Duration, ``T > 0``.
    """
    _check_state(basis.eigenvectors.shape[0], u0)
    c = evolve_modal(basis, basis.to_modal(u0.values), u0.time, f, T)
    return HeatState(u0.time + T, basis.from_modal(c))


def evolve_modal(basis: SpectralBasis, c0, t0: float, f, T: float) -> np.ndarray:
    """Modal Duhamel formula ``e^{-Lambda T} c0 + int e^{-Lambda (t1 - s)} f^(s) ds``."""
    if not T > 0:
        raise ValidationError(f"T must be positive, got {T!r}")
    t1 = t0 + T
    c = np.exp(-basis.eigenvalues * T) * np.asarray(c0, dtype=float)
    if f is not None:
        _check_cover(f, t0, t1)
        c = c + f.duhamel(basis, t0, t1)
    return c


def _step_source(f, ta, tb, bps):
    """Midpoint value of ``f`` on ``[ta, tb]``, split at interior breakpoints.

    A control window ending inside a step would otherwise be sampled on one
    side only, degrading the scheme to first order.
    """
    inner = bps[(bps > ta + _TIME_TOL) & (bps < tb - _TIME_TOL)]
    if len(inner) == 0:
        return f.sample(0.5 * (ta + tb))
    edges = np.concatenate(([ta], inner, [tb]))
    out = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        out = out + (b - a) * f.sample(0.5 * (a + b))
    return out / (tb - ta)


def evolve_cn(op: EllipticOperator, u0: HeatState, f, T: float, n_steps: int) -> HeatState:
    """Crank--Nicolson with the source sampled at step midpoints.

    Steps that contain a discontinuity of the control (the ends of its
    time windows) use the length-weighted midpoint values of the pieces on
    either side.  Each step solves ``(M/dt + K/2) u_new = (M/dt - K/2) u_old + M f_mid``;
    the matrix is factorized once.
    """
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    if not T > 0:
        raise ValidationError(f"T must be positive, got {T!r}")
    _check_state(op.domain.n_nodes, u0)
    t0 = u0.time
    if f is not None:
        _check_cover(f, t0, t0 + T)
    dt = T / n_steps
    m = op.mass_diag
    M = sparse.diags(m)
    lhs = (M / dt + 0.5 * op.stiffness).tocsc()
    rhs_op = (M / dt - 0.5 * op.stiffness).tocsr()
    try:
        lu = spla.splu(lhs)
    except RuntimeError as exc:
        raise SolverError(f"Crank-Nicolson factorization failed: {exc}") from exc
    u = np.array(u0.values)
    bps = np.asarray(f.breakpoints if f is not None else [], dtype=float)
    for k in range(n_steps):
        b = rhs_op @ u
        if f is not None:
            b += m * _step_source(f, t0 + k * dt, t0 + (k + 1) * dt, bps)
        u = lu.solve(b)
        if not np.all(np.isfinite(u)):
            raise SolverError("Crank-Nicolson produced non-finite values")
    return HeatState(t0 + T, u)


def write_trajectory(basis: SpectralBasis, u0: HeatState, f, times, path) -> None:
    """Write ``t, node, value`` rows of the spectral solution at ``times``."""
    times = np.asarray(sorted(float(t) for t in times))
    c = basis.to_modal(u0.values)
    t_prev = u0.time
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "node", "value"])
        for t in times:
            if t < t_prev - _TIME_TOL:
                raise ValidationError("sample times must not precede the initial time")
            if t > t_prev:
                c = evolve_modal(basis, c, t_prev, f, t - t_prev)
                t_prev = t
            u = basis.from_modal(c)
            for i, val in enumerate(u):
                w.writerow([f"{t:.16e}", i, f"{val:.16e}"])
