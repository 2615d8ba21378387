"""
Flux-form finite differences for ``-div(A grad u)`` with Dirichlet conditions.

The stored matrices are the *weighted* forms

    K = W L,    M = W,

where ``L`` is the finite-difference operator and ``W = diag(prod(h))`` the
lumped nodal mass.  ``K`` is symmetric, ``M`` diagonal, and the generalized
eigenpairs of ``(K, M)`` are the eigenpairs of ``L``.  Eigenvectors are
normalized so that ``E.T @ M @ E = I``, the discrete counterpart of an
L2-orthonormal eigenbasis.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse

from .errors import SolverError, ValidationError
from .geometry import DiscreteDomain, Subdomain

__all__ = [
    "CoefficientField",
    "EllipticOperator",
    "SpectralBasis",
    "assemble",
    "eigendecompose",
    "filter_modes",
    "parse_coefficient",
    "write_eigendata",
]

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# coefficient fields
# --------------------------------------------------------------------------
def _bump_profile(rho):
    """Smooth bump ``exp(1 - 1/(1 - rho^2))`` on ``rho < 1`` (peak value 1)."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    inside = rho < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - rho[inside] ** 2))
    return out


@dataclass(frozen=True)
class CoefficientField:
    """Symmetric positive-definite matrix field ``A(x)``.

    Only fields of the form ``A(x) = a(x) I`` (scalar times identity) or
    constant matrices are provided by the constructors; ``evaluate`` returns
    the full ``d x d`` matrices so that checks are generic.

    Attributes
    ----------
    dimension : int
    scalar : callable or None
        ``points (P, d) -> (P,)`` for isotropic fields.
    matrix : ndarray or None
        Constant ``d x d`` matrix for anisotropic constant fields.
    lipschitz_bound : float
    ellipticity_bounds : tuple of float
    name : str
    """

    dimension: int
    scalar: object = field(default=None, repr=False)
    matrix: object = field(default=None, repr=False)
    lipschitz_bound: float = 0.0
    ellipticity_bounds: tuple = (1.0, 1.0)
    name: str = ""

    def evaluate(self, points) -> np.ndarray:
        """Return ``A`` at each point as an array of shape ``(P, d, d)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dimension:
            pts = pts.reshape(-1, self.dimension)
        if self.matrix is not None:
            return np.broadcast_to(np.asarray(self.matrix, float), (len(pts), self.dimension, self.dimension)).copy()
        a = np.asarray(self.scalar(pts), dtype=float)
        return a[:, None, None] * np.eye(self.dimension)

    def __call__(self, x):
        return self.evaluate(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def axis_values(self, points, axis: int) -> np.ndarray:
        """Diagonal entry ``A[axis, axis]`` at each point."""
        return self.evaluate(points)[:, axis, axis]

    def check(self, points, rng=None, n_pairs: int = 200) -> None:
        """Validate symmetry, ellipticity bounds and the Lipschitz bound.

        Raises
        ------
        ValidationError
            If a sample is not symmetric positive definite, leaves the
            declared ellipticity interval, or violates the Lipschitz bound
            on a random pair of points.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        A = self.evaluate(pts)
        if not np.allclose(A, np.swapaxes(A, 1, 2), rtol=0, atol=1e-14 * max(1.0, np.abs(A).max())):
            raise ValidationError(f"coefficient {self.name!r} is not symmetric")
        ev = np.linalg.eigvalsh(A)
        lo, hi = self.ellipticity_bounds
        if ev.min() <= 0:
            raise ValidationError(f"coefficient {self.name!r} is not positive definite (min eig {ev.min():.3g})")
        tol = 1e-12 * max(1.0, abs(hi))
        if ev.min() < lo - tol or ev.max() > hi + tol:
            raise ValidationError(
                f"coefficient {self.name!r} eigenvalues [{ev.min():.6g}, {ev.max():.6g}] "
                f"outside declared bounds [{lo:.6g}, {hi:.6g}]"
            )
        rng = np.random.default_rng(0) if rng is None else rng
        if len(pts) >= 2:
            i = rng.integers(0, len(pts), n_pairs)
            j = rng.integers(0, len(pts), n_pairs)
            keep = i != j
            i, j = i[keep], j[keep]
            dA = np.linalg.norm(A[i] - A[j], ord=2, axis=(1, 2))
            dx = np.linalg.norm(pts[i] - pts[j], axis=1)
            if np.any(dA > self.lipschitz_bound * dx * (1 + 1e-9) + 1e-14):
                raise ValidationError(f"coefficient {self.name!r} violates its Lipschitz bound")

    # constructors -----------------------------------------------------
    @classmethod
    def constant(cls, c: float, dimension: int = 1) -> "CoefficientField":
        c = float(c)
        if not c > 0:
            raise ValidationError(f"constant coefficient must be positive, got {c}")
        return cls(dimension, scalar=lambda p: np.full(len(p), c), lipschitz_bound=0.0,
                   ellipticity_bounds=(c, c), name=f"constant:{c:g}")

    @classmethod
    def affine(cls, a: float, b: float, dimension: int = 1, extent=((0.0, 1.0),)) -> "CoefficientField":
        """``A(x) = (a + b x1) I``; must stay positive on the extent."""
        a, b = float(a), float(b)
        x0, x1 = extent[0]
        ends = (a + b * x0, a + b * x1)
        if min(ends) <= 0:
            raise ValidationError(f"affine coefficient {a:g}+{b:g}*x is not positive on [{x0}, {x1}]")
        return cls(dimension, scalar=lambda p: a + b * p[:, 0], lipschitz_bound=abs(b),
                   ellipticity_bounds=(min(ends), max(ends)), name=f"affine:{a:g},{b:g}")

    @classmethod
    def bump(cls, dimension: int = 1, extent=None, amplitude: float = 0.5, radius: float = 0.25) -> "CoefficientField":
        """``A(x) = (1 + amplitude * bump(|x - c| / radius)) I`` centred in the domain."""
        if extent is None:
            extent = ((0.0, 1.0),) * dimension
        center = np.array([(lo + hi) / 2 for lo, hi in extent[:dimension]], dtype=float)
        s = np.linspace(0, 1, 20001)[:-1]
        slope = np.max(np.abs(np.gradient(_bump_profile(s), s)))
        lip = amplitude * slope / radius * 1.01

        def scalar(p):
            rho = np.linalg.norm(p - center, axis=1) / radius
            return 1.0 + amplitude * _bump_profile(rho)

        return cls(dimension, scalar=scalar, lipschitz_bound=float(lip),
                   ellipticity_bounds=(1.0, 1.0 + amplitude), name="bump")


def parse_coefficient(text: str, dimension: int = 1, extent=None) -> CoefficientField:
    """Parse ``constant:c``, ``affine:a,b`` or ``bump``."""
    kind, _, args = str(text).strip().partition(":")
    kind = kind.lower()
    if extent is None:
        extent = ((0.0, 1.0),) * dimension
    try:
        vals = [float(s) for s in args.split(",")] if args.strip() else []
    except ValueError:
        raise ValidationError(f"bad numbers in coefficient {text!r}") from None
    if kind == "constant" and len(vals) == 1:
        return CoefficientField.constant(vals[0], dimension)
    if kind == "affine" and len(vals) == 2:
        return CoefficientField.affine(vals[0], vals[1], dimension, extent)
    if kind == "bump" and not vals:
        return CoefficientField.bump(dimension, extent)
    raise ValidationError(f"unknown coefficient specification {text!r}")


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """Weighted stiffness ``K`` and lumped mass ``M`` on a domain."""

    stiffness: sparse.csr_matrix = field(repr=False)
    mass: sparse.dia_matrix = field(repr=False)
    domain: DiscreteDomain
    coefficient: CoefficientField

    @property
    def mass_diag(self) -> np.ndarray:
        return self.mass.diagonal()

    def discrete_operator(self) -> sparse.csr_matrix:
        """The finite-difference operator ``L = M^{-1} K``."""
        return sparse.diags(1.0 / self.mass_diag) @ self.stiffness

    def apply(self, v) -> np.ndarray:
        """Apply ``L = M^{-1} K`` to a nodal vector (or columns of a matrix)."""
        v = np.asarray(v, dtype=float)
        Kv = self.stiffness @ v
        d = self.mass_diag
        return Kv / (d[:, None] if Kv.ndim == 2 else d)


def assemble(domain: DiscreteDomain, coeff: CoefficientField) -> EllipticOperator:
    """Assemble ``K = W L`` and ``M = W`` for ``-div(A grad u)``.

    In 1D the three-point stencil uses ``A`` at cell midpoints
    ``x_i +- h/2``.  In 2D the five-point stencil uses, per axis, the
    diagonal entry ``A[k, k]`` at the midpoints of the grid edges along axis
    ``k``; off-diagonal coefficient entries are not representable by this
    stencil and are rejected.

    Raises
    ------
    ValidationError
        If the coefficient is not SPD at a node or edge midpoint, or has
        off-diagonal entries in 2D.
    """
    if coeff.dimension != domain.dimension:
        raise ValidationError("coefficient and domain dimensions differ")
    coeff.check(domain.node_coords)
    d = domain.dimension
    h = domain.h
    n = domain.n_interior
    idx = np.arange(domain.n_nodes).reshape(n)

    diag = np.zeros(n)
    rows, cols, vals = [], [], []
    for k in range(d):
        # midpoints between consecutive nodes along axis k, boundary faces included
        full_axis = np.concatenate(([domain.extent[k][0]], domain.axes[k], [domain.extent[k][1]]))
        faces = 0.5 * (full_axis[:-1] + full_axis[1:])  # n_k + 1 faces
        coords = [domain.axes[j] for j in range(d)]
        coords[k] = faces
        mesh = np.meshgrid(*coords, indexing="ij")
        A = coeff.evaluate(np.stack([g.ravel() for g in mesh], axis=1))
        if np.linalg.eigvalsh(A).min() <= 0:
            raise ValidationError("coefficient not positive definite at an edge midpoint")
        if d == 2 and np.abs(A[:, 0, 1]).max() > 1e-14 * np.abs(A).max():
            raise ValidationError("the five-point flux stencil requires a diagonal coefficient matrix")
        a = np.moveaxis(A[:, k, k].reshape(mesh[0].shape), k, 0) / h[k] ** 2
        ik = np.moveaxis(idx, k, 0)
        diag += np.moveaxis(a[:-1] + a[1:], 0, k)
        # coupling between node i and i+1 along axis k through interior face i+1
        rows.append(ik[:-1].ravel())
        cols.append(ik[1:].ravel())
        vals.append(-a[1:-1].ravel())
    r = np.concatenate(rows + cols + [idx.ravel()])
    c = np.concatenate(cols + rows + [idx.ravel()])
    v = np.concatenate(vals + vals + [diag.ravel()])
    L = sparse.csr_matrix((v, (r, c)), shape=(domain.n_nodes, domain.n_nodes))
    w = domain.cell_volume
    K = (w * L).tocsr()
    K.sort_indices()
    M = sparse.diags(domain.weights)
    return EllipticOperator(stiffness=K, mass=M, domain=domain, coefficient=coeff)


# --------------------------------------------------------------------------
# eigendecomposition
# --------------------------------------------------------------------------
def _fix_sign(v, tol=1e-6):
    """Make the first significant entry of ``v`` positive."""
    big = np.flatnonzero(np.abs(v) > tol * np.abs(v).max())
    return -v if v[big[0]] < 0 else v


def _canonical_cluster(V):
    """Deterministic orthonormal basis of ``span(V)`` (columns orthonormal).

    The basis is built from the projector ``V V^T``: its columns at the
    pivot positions of a column-pivoted QR are orthonormalized in pivot
    order.  The result depends only on the subspace, not on the basis the
    eigensolver happened to return.
    """
    k = V.shape[1]
    P = V @ V.T
    _, _, piv = scipy.linalg.qr(V.T, mode="economic", pivoting=True)
    Q, _ = np.linalg.qr(P[:, np.sort(piv[:k])])
    return np.column_stack([_fix_sign(Q[:, j]) for j in range(k)])


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Generalized eigenpairs of ``(K, M)`` in ascending order.

    Attributes
    ----------
    eigenvalues : ndarray, shape (N,)
    eigenvectors : ndarray, shape (n_nodes, N)
        Columns are mass-orthonormal: ``E.T @ diag(mass) @ E = I``.
    mass : ndarray, shape (n_nodes,)
        Diagonal of ``M``.
    operator : EllipticOperator or None
    """

    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    operator: object = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("eigenvalues", "eigenvectors", "mass"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    @property
    def domain(self) -> DiscreteDomain:
        return self.operator.domain

    def filter(self, lambda_cut: float) -> range:
        return filter_modes(self, lambda_cut)

    def truncate(self, n_modes: int) -> "SpectralBasis":
        """Basis restricted to the ``n_modes`` lowest eigenpairs."""
        if not 1 <= n_modes <= self.count:
            raise ValidationError(f"n_modes must lie in [1, {self.count}], got {n_modes}")
        return SpectralBasis(self.eigenvalues[:n_modes], self.eigenvectors[:, :n_modes],
                             self.mass, self.operator)

    def to_modal(self, values) -> np.ndarray:
        """Mass-weighted projection ``E.T M v`` onto the basis."""
        return self.eigenvectors.T @ (self.mass * np.asarray(values, dtype=float))

    def from_modal(self, coefficients) -> np.ndarray:
        return self.eigenvectors @ np.asarray(coefficients, dtype=float)

    def gram(self, sub: Subdomain, modes=None) -> np.ndarray:
        """Subdomain Gram matrix ``E_J.T G_sub E_J`` for the mode set ``J``."""
        E = self.eigenvectors if modes is None else self.eigenvectors[:, modes]
        Es = E[sub.membership]
        G = Es.T @ (sub.parent.cell_volume * Es)
        return 0.5 * (G + G.T)


def eigendecompose(op: EllipticOperator, cluster_rtol: float = 1e-9) -> SpectralBasis:
    """All generalized eigenpairs of ``(K, M)`` by a dense symmetric solve.

    The problem is reduced to ``M^{-1/2} K M^{-1/2}`` and handed to LAPACK.
    Eigenvectors of simple eigenvalues are sign-normalized (first
    significant entry positive); clusters of numerically equal eigenvalues
    get the projector-based canonical basis of ``_canonical_cluster`` so the
    output does not depend on the solver's internal choices.

    Raises
    ------
    SolverError
        If LAPACK fails to converge.
    """
    d = op.mass_diag
    s = 1.0 / np.sqrt(d)
    S = (op.stiffness.multiply(s[:, None]).multiply(s[None, :])).toarray()
    S = 0.5 * (S + S.T)
    try:
        lam, V = scipy.linalg.eigh(S, driver="evr")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"dense symmetric eigensolver failed: {exc}") from exc
    if lam[0] <= 0:
        raise SolverError(f"nonpositive eigenvalue {lam[0]:.3g}: operator not coercive")

    V = np.array(V)
    scale = cluster_rtol * lam[-1]
    i = 0
    N = len(lam)
    while i < N:
        j = i + 1
        while j < N and lam[j] - lam[j - 1] <= scale:
            j += 1
        if j - i == 1:
            V[:, i] = _fix_sign(V[:, i])
        else:
            V[:, i:j] = _canonical_cluster(V[:, i:j])
            lam[i:j] = np.mean(lam[i:j])
        i = j
    E = s[:, None] * V
    return SpectralBasis(lam, E, d, op)


def filter_modes(basis: SpectralBasis, lambda_cut: float, rtol: float = 1e-10) -> range:
    """Indices of the modes with ``lambda_i <= lambda_cut`` (a prefix).

    The inequality is inclusive; a relative slack of ``rtol`` absorbs
    round-off so that passing an eigenvalue itself always includes it.
    """
    cut = float(lambda_cut)
    m = int(np.searchsorted(basis.eigenvalues, cut + rtol * abs(cut), side="right"))
    return range(m)


def write_eigendata(basis: SpectralBasis, path) -> None:
    """Write ``index, lambda`` rows (1-based index, 17 significant digits)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "lambda"])
        for k, lam in enumerate(basis.eigenvalues, start=1):
            w.writerow([k, f"{lam:.16e}"])
