"""
Empirical probe of a three-sphere interpolation inequality with partial data.

Harmonic functions ``V`` on the annulus ``R1 < |x| < R3`` are sampled on a
uniform grid.  Cauchy data are only observed on an arc ``Sigma`` of the inner
circle (the *window*); the grid region ``D`` is the annulus minus the nodes
within ``r0`` of the window endpoints ``Gamma``.  For each field the probe
reports

* ``data``   -- a discrete surrogate of the trace and flux norms on ``Sigma``,
* ``mid``    -- the discrete H1 norm on the shell ``R1 + r1 < |x| < R1 + r2``,
* ``global`` -- the discrete H1 norm on ``D``,

and the exponent witness ``log(mid/global) / log(data/global)``: the
smallest ``alpha`` for which ``mid <= data^alpha global^(1 - alpha)``.

The data surrogate uses a fixed length scale ``ell`` rather than the mesh
width, so that it converges under grid refinement::

    data = sqrt(||V||^2_Sigma + ell^2 ||d_s V||^2_Sigma) + ell ||d_r V||_Sigma

with the trace sampled by bilinear interpolation at arc-length spacing
``h`` and the radial derivative by a one-sided difference of width ``h``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import linalg as spla

from .errors import SolverError, ValidationError

__all__ = [
    "SlitAnnulusGrid",
    "InterpolationSample",
    "InterpolationProbe",
    "solve_elliptic_on_annulus",
    "probe_interpolation",
    "harmonic_samples",
    "hidden_arc_data",
]

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
DEFAULT_WINDOW = (0.35, TWO_PI - 0.35)


def _in_window(theta, window):
    a, b = window
    return np.mod(theta - a, TWO_PI) < np.mod(b - a, TWO_PI)


@dataclass(frozen=True, eq=False)
class SlitAnnulusGrid:
    """Grid realization of the annulus minus a neighbourhood of ``Gamma``.

    Build with :meth:`build`.

    Attributes
    ----------
    R1, R3 : float
    gamma_window : tuple of float
        ``(theta_a, theta_b)``; the window is the counter-clockwise arc from
        ``theta_a`` to ``theta_b`` on the inner circle.
    h : float
    r0 : float
    xs : ndarray
        Grid coordinates along each axis (the square ``[-R3, R3]^2``).
    mask : ndarray of bool, shape (n, n)
        Unknown nodes (the region ``D``).
    """

    R1: float
    R3: float
    gamma_window: tuple
    h: float
    r0: float
    xs: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, R1=0.5, R3=1.5, h=1 / 128, window=DEFAULT_WINDOW, r0=None):
        if not 0 < R1 < R3:
            raise ValidationError(f"need 0 < R1 < R3, got R1={R1}, R3={R3}")
        a, b = (float(w) for w in window)
        span = np.mod(b - a, TWO_PI)
        if not 0 < span < TWO_PI or np.isclose(span, 0.0):
            raise ValidationError("window must be a nonempty strict sub-arc of the inner circle")
        if not 0 < h < (R3 - R1) / 4:
            raise ValidationError(f"grid spacing {h} too coarse for the annulus")
        r0 = 3.0 * h if r0 is None else float(r0)
        if not 0 <= r0 < (R3 - R1) / 2:
            raise ValidationError(f"bad excluded radius r0={r0}")
        n = int(round(2 * R3 / h))
        xs = -R3 + h * np.arange(n + 1)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        r = np.hypot(X, Y)
        ends = [R1 * np.array([np.cos(t), np.sin(t)]) for t in (a, b)]
        dG = np.min([np.hypot(X - e[0], Y - e[1]) for e in ends], axis=0)
        mask = (r > R1) & (r < R3) & (dG >= r0)
        labels, count = ndimage.label(mask)
        if count != 1:
            raise ValidationError(f"region D is not connected ({count} components)")
        xs.flags.writeable = False
        mask.flags.writeable = False
        return cls(float(R1), float(R3), (a, b), float(h), r0, xs, mask)

    # geometry helpers ---------------------------------------------------
    @property
    def shape(self):
        return self.mask.shape

    def coordinates(self):
        return np.meshgrid(self.xs, self.xs, indexing="ij")

    def radius(self):
        X, Y = self.coordinates()
        return np.hypot(X, Y)

    @property
    def n_unknowns(self) -> int:
        return int(self.mask.sum())

    def shell(self, r_in, r_out):
        """Mask of ``D`` nodes with ``R1 + r_in < |x| < R1 + r_out``."""
        r = self.radius()
        return self.mask & (r > self.R1 + r_in) & (r < self.R1 + r_out)

    def boundary_mask(self):
        """Nodes outside ``D`` with a grid neighbour in ``D`` (Dirichlet nodes)."""
        m = self.mask
        nb = np.zeros_like(m)
        nb[1:, :] |= m[:-1, :]
        nb[:-1, :] |= m[1:, :]
        nb[:, 1:] |= m[:, :-1]
        nb[:, :-1] |= m[:, 1:]
        return nb & ~m

    # linear algebra -------------------------------------------------------
    def _system(self, coefficient=None):
        key = "identity" if coefficient is None else id(coefficient)
        if key in self._cache:
            return self._cache[key]
        m = self.mask
        h = self.h
        idx = -np.ones(m.shape, dtype=int)
        idx[m] = np.arange(m.sum())
        I, J = np.nonzero(m)
        X, Y = self.coordinates()
        rows, cols, vals = [], [], []
        diag = np.zeros(len(I))
        bsrc = []
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            I2, J2 = I + di, J + dj
            if coefficient is None:
                c = np.ones(len(I))
            else:
                xm = 0.5 * (X[I, J] + X[I2, J2])
                ym = 0.5 * (Y[I, J] + Y[I2, J2])
                c = np.asarray(coefficient(xm, ym), dtype=float)
                if np.any(c <= 0):
                    raise ValidationError("coefficient must be positive")
            diag += c
            inside = m[I2, J2]
            rows.append(idx[I, J][inside])
            cols.append(idx[I2, J2][inside])
            vals.append(-c[inside])
            bsrc.append((idx[I, J][~inside], I2[~inside], J2[~inside], c[~inside]))
        N = len(I)
        A = sparse.csc_matrix((np.concatenate(vals + [diag]),
                               (np.concatenate(rows + [np.arange(N)]), np.concatenate(cols + [np.arange(N)]))),
                              shape=(N, N))
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
        self._cache[key] = (A, lu, bsrc)
        return self._cache[key]


def _extended(grid, values):
    """Full-grid array of boundary values (callable or array input)."""
    if callable(values):
        X, Y = grid.coordinates()
        with np.errstate(all="ignore"):
            full = np.asarray(values(X, Y), dtype=float)
    else:
        full = np.array(values, dtype=float)
    if full.shape != grid.shape:
        raise ValidationError(f"boundary values have shape {full.shape}, expected {grid.shape}")
    full = np.where(np.isfinite(full), full, 0.0)
    if not np.all(np.isfinite(full[grid.boundary_mask()])):
        raise ValidationError("boundary values are not finite on the Dirichlet nodes")
    return full


def solve_elliptic_on_annulus(grid: SlitAnnulusGrid, boundary_values, coefficient=None,
                              rtol: float = 1e-10) -> np.ndarray:
    """Solve ``div(m grad V) = 0`` in ``D`` with Dirichlet data.

    Parameters
    ----------
    grid : SlitAnnulusGrid
    boundary_values : callable or ndarray
        ``f(X, Y)`` evaluated on the full grid, or a full-grid array; only
        the values on the Dirichlet nodes adjacent to ``D`` enter the solve.
    coefficient : callable, optional
        Positive scalar ``m(x, y)`` evaluated at edge midpoints (flux form);
        the five-point Laplacian is used when omitted.
    rtol : float
        Required relative residual; one step of iterative refinement is
        attempted before giving up.

    Returns
    -------
    ndarray, shape grid.shape
        Solution on ``D``, boundary values elsewhere.

    Raises
    ------
    SolverError
    """
    full = _extended(grid, boundary_values)
    A, lu, bsrc = grid._system(coefficient)
    b = np.zeros(A.shape[0])
    for rid, I2, J2, c in bsrc:
        np.add.at(b, rid, c * full[I2, J2])
    u = lu.solve(b)
    scale = max(np.linalg.norm(b), np.finfo(float).tiny)
    res = np.linalg.norm(A @ u - b) / scale
    if res > rtol:
        u = u + lu.solve(b - A @ u)
        res = np.linalg.norm(A @ u - b) / scale
        if res > rtol:
            raise SolverError(f"annulus solve residual {res:.3e} exceeds {rtol:g}")
    out = full.copy()
    out[grid.mask] = u
    return out


# --------------------------------------------------------------------------
# norms
# --------------------------------------------------------------------------
def h1_norm(grid: SlitAnnulusGrid, V, region) -> float:
    """Discrete H1 norm: nodal L2 plus squared differences over edges in ``region``."""
    h = grid.h
    s = np.sum(V[region] ** 2) * h * h
    ex = region[1:, :] & region[:-1, :]
    ey = region[:, 1:] & region[:, :-1]
    s += np.sum((V[1:, :] - V[:-1, :])[ex] ** 2) + np.sum((V[:, 1:] - V[:, :-1])[ey] ** 2)
    return float(np.sqrt(s))


def data_norm(grid: SlitAnnulusGrid, V, length_scale: float = 0.1):
    """Trace/flux surrogate on the window arc minus the ``r0``-neighbourhood of ``Gamma``.

    Returns
    -------
    total : float
    trace : float
        L2 norm of the trace alone.
    """
    a, b = grid.gamma_window
    R1, h = grid.R1, grid.h
    span = np.mod(b - a, TWO_PI)
    margin = grid.r0 / R1
    th = a + np.arange(margin, span - margin, h / R1)
    if len(th) < 2:
        raise ValidationError("observed arc is empty after removing the r0 margin")
    interp = RegularGridInterpolator((grid.xs, grid.xs), V)
    p0 = np.column_stack([R1 * np.cos(th), R1 * np.sin(th)])
    p1 = np.column_stack([(R1 + h) * np.cos(th), (R1 + h) * np.sin(th)])
    v0 = interp(p0)
    v1 = interp(p1)
    ds = R1 * (th[1] - th[0])
    trace = np.sqrt(np.sum(v0**2) * ds)
    tangential = np.sqrt(np.sum(np.diff(v0) ** 2) / ds)
    flux = np.sqrt(np.sum(((v1 - v0) / h) ** 2) * ds)
    total = np.sqrt(trace**2 + (length_scale * tangential) ** 2) + length_scale * flux
    return float(total), float(trace)


# --------------------------------------------------------------------------
# probe
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class InterpolationSample:
    sample_id: int
    boundary_data_norm: float
    mid_norm: float
    global_norm: float
    alpha_witness: float
    trace_norm: float = np.nan
    status: str = "ok"  # "ok", "degenerate" or "nonbinding"


@dataclass(frozen=True)
class InterpolationProbe:
    """Probe output: per-field samples and the fitted ``(alpha_hat, C_hat)``.

    ``alpha_hat`` is the minimum witness over binding samples;
    ``C_hat = max mid / (data^alpha_hat * global^(1 - alpha_hat))`` over all
    non-degenerate samples.  Samples with ``data >= global`` constrain no
    exponent in ``[0, 1]`` and are counted as skipped (non-binding), as are
    samples with vanishing global norm.
    """

    samples: list = field(repr=False)
    alpha_hat: float
    C_hat: float
    n_skipped: int
    r0: float
    r1: float
    r2: float
    length_scale: float

    def summary(self) -> dict:
        return {"r0": self.r0, "r1": self.r1, "r2": self.r2, "alpha_hat": self.alpha_hat,
                "C_hat": self.C_hat, "n_skipped": self.n_skipped, "length_scale": self.length_scale}


def _measure(grid, V, sid, mid_region, length_scale):
    glob = h1_norm(grid, V, grid.mask)
    mid = h1_norm(grid, V, mid_region)
    data, trace = data_norm(grid, V, length_scale)
    if not glob > 1e-13 * max(1.0, np.abs(V[grid.mask]).max()):
        return InterpolationSample(sid, data, mid, glob, np.nan, trace, "degenerate")
    if data >= glob:
        return InterpolationSample(sid, data, mid, glob, np.nan, trace, "nonbinding")
    if mid >= glob:
        w = 0.0
    else:
        w = float(np.log(mid / glob) / np.log(data / glob))
    return InterpolationSample(sid, data, mid, glob, w, trace)


def probe_interpolation(grid: SlitAnnulusGrid, sample_fields, r0=None, r1=0.1, r2=0.3,
                        length_scale: float = 0.1, min_samples: int = 20) -> InterpolationProbe:
    """Measure the interpolation exponent over a set of fields.

    Parameters
    ----------
    grid : SlitAnnulusGrid
    sample_fields : sequence
        Full-grid arrays (already solved) or callables giving boundary data,
        which are then solved with :func:`solve_elliptic_on_annulus`.
    r0 : float, optional
        Must equal ``grid.r0`` when given (the exclusion is built into the
        grid).
    r1, r2 : float
        Shell offsets, ``r0 < r1 < r2 < R3 - R1``.
    length_scale : float
        ``ell`` in the data surrogate.
    """
    r0 = grid.r0 if r0 is None else float(r0)
    if not np.isclose(r0, grid.r0):
        raise ValidationError(f"r0={r0} differs from the grid's excluded radius {grid.r0}")
    if not r0 < r1 < r2 < grid.R3 - grid.R1:
        raise ValidationError(f"need r0 < r1 < r2 < R3 - R1, got {r0}, {r1}, {r2}")
    fields = list(sample_fields)
    if len(fields) < min_samples:
        raise ValidationError(f"need at least {min_samples} sample fields, got {len(fields)}")
    mid_region = grid.shell(r1, r2)
    samples = []
    for sid, f in enumerate(fields):
        V = solve_elliptic_on_annulus(grid, f) if callable(f) else np.asarray(f, dtype=float)
        samples.append(_measure(grid, V, sid, mid_region, length_scale))
    ok = [s for s in samples if s.status == "ok"]
    if not ok:
        raise ValidationError("no binding samples: every field was degenerate or non-binding")
    alpha = min(s.alpha_witness for s in ok)
    valid = [s for s in samples if s.status != "degenerate"]
    C = max(s.mid_norm / (s.boundary_data_norm**alpha * s.global_norm ** (1 - alpha)) for s in valid)
    n_skip = len(samples) - len(ok)
    if n_skip:
        logger.info("skipped %d of %d samples", n_skip, len(samples))
    return InterpolationProbe(samples, float(alpha), float(C), n_skip, r0, float(r1), float(r2),
                              float(length_scale))


# --------------------------------------------------------------------------
# sample families
# --------------------------------------------------------------------------
def harmonic_samples(n: int, seed: int = 0, R1: float = 0.5, R3: float = 1.5, order: int = 6):
    """Random harmonic functions on the annulus (callables ``f(X, Y)``).

    ``c0 + c1 log(r/R1) + sum_k (r/R3)^k (a_k cos k t + b_k sin k t)
    + (R1/r)^k (c_k cos k t + d_k sin k t)`` with standard normal
    coefficients scaled by ``1/(k+1)``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        coef = rng.standard_normal((4, order + 1)) / np.arange(1, order + 2)
        c = rng.standard_normal(2)

        def f(X, Y, coef=coef, c=c):
            r = np.hypot(X, Y)
            t = np.arctan2(Y, X)
            with np.errstate(all="ignore"):
                v = c[0] + c[1] * np.log(r / R1)
                for k in range(1, order + 1):
                    v = v + (r / R3) ** k * (coef[0, k] * np.cos(k * t) + coef[1, k] * np.sin(k * t)) \
                        + (R1 / r) ** k * (coef[2, k] * np.cos(k * t) + coef[3, k] * np.sin(k * t))
            return v

        out.append(f)
    return out


def hidden_arc_data(grid: SlitAnnulusGrid, amplitude: float = 1.0):
    """Boundary data supported on the inner-circle nodes outside the window.

    The returned full-grid array is a smooth bump in the angle on the
    hidden arc, zero on the window side and on the outer circle.
    """
    X, Y = grid.coordinates()
    r = np.hypot(X, Y)
    th = np.mod(np.arctan2(Y, X), TWO_PI)
    a, b = grid.gamma_window
    hidden = (r <= grid.R1) & ~_in_window(th, (a, b))
    # angular coordinate across the hidden arc, mapped to [-1, 1]
    span = np.mod(a - b, TWO_PI)
    s = 2.0 * np.mod(th - b, TWO_PI) / span - 1.0
    bump = np.zeros_like(r)
    inside = hidden & (np.abs(s) < 1)
    bump[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return amplitude * bump
