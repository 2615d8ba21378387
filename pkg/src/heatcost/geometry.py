"""
Uniform grids, node-mask subdomains and their dilations.

A :class:`DiscreteDomain` is the set of interior nodes of a uniform grid on an
interval or an axis-aligned rectangle (homogeneous Dirichlet nodes on the
boundary are excluded).  A :class:`Subdomain` is a boolean mask over those
nodes.  Integrals over a subdomain use nodal (lumped) quadrature: every node
carries the weight ``prod(h)``, so the L2 Gram form of a subdomain is diagonal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import ValidationError

__all__ = [
    "DiscreteDomain",
    "Subdomain",
    "build_domain",
    "dilate",
    "subdomain_mass_matrix",
    "parse_subdomain",
]

logger = logging.getLogger(__name__)

#: flag attached to dilations whose radius is below the grid resolution
BELOW_RESOLUTION = "dilation_below_resolution"


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DiscreteDomain:
    """Interior nodes of a uniform grid on an interval or rectangle.

    Attributes
    ----------
    dimension : int
        1 or 2.
    extent : tuple of (float, float)
        One ``(lo, hi)`` pair per axis.
    n_interior : tuple of int
        Number of interior nodes per axis.
    h : tuple of float
        Mesh spacing per axis.
    axes : tuple of ndarray
        Interior node coordinates along each axis.
    node_coords : ndarray, shape (n_nodes, dimension)
        Coordinates of the interior nodes; in 2D the first axis varies
        slowest (``numpy`` C order of an ``(nx, ny)`` array).
    """

    dimension: int
    extent: tuple
    n_interior: tuple
    h: tuple
    axes: tuple = field(repr=False)
    node_coords: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.n_interior))

    @property
    def shape(self) -> tuple:
        return tuple(self.n_interior)

    @property
    def cell_volume(self) -> float:
        """Quadrature weight carried by every interior node."""
        return float(np.prod(self.h))

    @property
    def weights(self) -> np.ndarray:
        """Nodal quadrature weights (all equal to :attr:`cell_volume`)."""
        return np.full(self.n_nodes, self.cell_volume)

    @property
    def measure(self) -> float:
        return float(np.prod([b - a for a, b in self.extent]))


def build_domain(dimension, extent, n_interior) -> DiscreteDomain:
    """Build a uniform grid with Dirichlet boundary nodes removed.

    Parameters
    ----------
    dimension : {1, 2}
    extent : sequence
        ``(a, b)`` in 1D or ``((ax, bx), (ay, by))`` in 2D.
    n_interior : int or sequence of int
        Interior nodes per axis (a scalar is used for every axis).

    Returns
    -------
    DiscreteDomain

    Examples
    --------
    >>> dom = build_domain(1, (0.0, 1.0), 9)
    >>> dom.h
    (0.1,)
    >>> dom.n_nodes
    9
    """
    if dimension not in (1, 2):
        raise ValidationError(f"dimension must be 1 or 2, got {dimension!r}")
    if dimension == 1:
        ext = np.asarray(extent, dtype=float).reshape(1, 2)
    else:
        ext = np.asarray(extent, dtype=float).reshape(2, 2)
    counts = np.broadcast_to(np.asarray(n_interior, dtype=int), (dimension,))
    if np.any(counts < 3):
        raise ValidationError(f"need at least 3 interior nodes per axis, got {tuple(counts)}")
    if not np.all(np.isfinite(ext)) or np.any(ext[:, 1] - ext[:, 0] <= 0):
        raise ValidationError(f"degenerate extent {ext.tolist()}")

    h = tuple(float((b - a) / (n + 1)) for (a, b), n in zip(ext, counts))
    axes = tuple(
        _frozen(a + hk * np.arange(1, n + 1)) for (a, _), hk, n in zip(ext, h, counts)
    )
    grids = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)
    return DiscreteDomain(
        dimension=dimension,
        extent=tuple((float(a), float(b)) for a, b in ext),
        n_interior=tuple(int(n) for n in counts),
        h=h,
        axes=axes,
        node_coords=_frozen(coords),
    )


@dataclass(frozen=True, eq=False)
class Subdomain:
    """Boolean node mask over the interior nodes of a domain.

    Attributes
    ----------
    parent : DiscreteDomain
    membership : ndarray of bool, shape (n_nodes,)
    flags : tuple of str
        Diagnostics attached at construction (e.g. a dilation radius below
        the grid resolution).
    label : str
        Free-form description used in logs and outputs.
    """

    parent: DiscreteDomain
    membership: np.ndarray = field(repr=False)
    flags: tuple = ()
    label: str = ""

    def __post_init__(self):
        mask = np.asarray(self.membership, dtype=bool)
        if mask.shape != (self.parent.n_nodes,):
            raise ValidationError(
                f"membership has shape {mask.shape}, expected ({self.parent.n_nodes},)"
            )
        object.__setattr__(self, "membership", _frozen(mask))

    @property
    def count(self) -> int:
        return int(self.membership.sum())

    @property
    def empty(self) -> bool:
        return self.count == 0

    @property
    def measure(self) -> float:
        """Sum of quadrature weights over member nodes."""
        return self.count * self.parent.cell_volume

    @property
    def weights(self) -> np.ndarray:
        """Diagonal of the subdomain Gram form (zero off the mask)."""
        return np.where(self.membership, self.parent.cell_volume, 0.0)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.membership)

    def issubset(self, other: "Subdomain") -> bool:
        return bool(np.all(other.membership[self.membership]))

    def norm_sq(self, v) -> float:
        """Lumped quadrature of ``v**2`` over the subdomain."""
        v = np.asarray(v, dtype=float)
        return float(np.sum(self.weights * v * v))

    # constructors -----------------------------------------------------
    @classmethod
    def full(cls, domain: DiscreteDomain) -> "Subdomain":
        return cls(domain, np.ones(domain.n_nodes, dtype=bool), label="full")

    @classmethod
    def interval(cls, domain: DiscreteDomain, a: float, b: float) -> "Subdomain":
        """Nodes in the open interval ``(a, b)`` (1D), or slab in ``x1`` (2D)."""
        x = domain.node_coords[:, 0]
        return cls(domain, (x > a) & (x < b), label=f"interval:{a:g},{b:g}")

    @classmethod
    def rectangle(cls, domain: DiscreteDomain, lo, hi) -> "Subdomain":
        """Nodes strictly inside the box ``lo < x < hi`` (componentwise)."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        x = domain.node_coords
        mask = np.all((x > lo) & (x < hi), axis=1)
        return cls(domain, mask, label=f"rect:{lo.tolist()},{hi.tolist()}")

    @classmethod
    def disc(cls, domain: DiscreteDomain, center, radius: float) -> "Subdomain":
        """Nodes at Euclidean distance ``< radius`` from ``center``."""
        c = np.asarray(center, dtype=float)
        d = np.linalg.norm(domain.node_coords - c, axis=1)
        return cls(domain, d < radius, label=f"disc:{c.tolist()},{radius:g}")

    def union(self, other: "Subdomain") -> "Subdomain":
        if other.parent is not self.parent:
            raise ValidationError("cannot combine subdomains of different domains")
        return Subdomain(
            self.parent,
            self.membership | other.membership,
            flags=tuple(sorted(set(self.flags) | set(other.flags))),
            label=f"{self.label}+{other.label}",
        )


def dilate(sub: Subdomain, r: float) -> Subdomain:
    """Grid realization of the open neighbourhood ``{x : dist(x, sub) < r}``.

    A node belongs to the result when its Euclidean distance to the nearest
    member node is strictly less than ``r``.  Distances that equal ``r`` up to
    round-off (``1e-9 h``) are treated as ties and excluded, so the result does
    not depend on the last bits of the node coordinates.

    Parameters
    ----------
    sub : Subdomain
    r : float
        Dilation radius, ``r >= 0``.  ``r = 0`` returns the input mask.
        A positive radius below half the smallest mesh spacing cannot be
        resolved; the result then carries the ``dilation_below_resolution``
        flag.

    Returns
    -------
    Subdomain
    """
    if not np.isfinite(r) or r < 0:
        raise ValidationError(f"dilation radius must be >= 0, got {r!r}")
    dom = sub.parent
    flags = set(sub.flags)
    label = f"{sub.label}~{r:g}"
    if r == 0 or sub.empty:
        return Subdomain(dom, sub.membership.copy(), flags=tuple(sorted(flags)), label=label)
    hmin = min(dom.h)
    if r < 0.5 * hmin:
        logger.warning("dilation radius %g below half the mesh spacing %g", r, hmin)
        flags.add(BELOW_RESOLUTION)
    tree = cKDTree(dom.node_coords[sub.membership])
    dist, _ = tree.query(dom.node_coords, k=1)
    mask = dist < r - 1e-9 * hmin
    mask |= sub.membership
    return Subdomain(dom, mask, flags=tuple(sorted(flags)), label=label)


def subdomain_mass_matrix(sub: Subdomain) -> sparse.dia_matrix:
    """Lumped L2 Gram form of a subdomain as a sparse diagonal matrix.

    ``v @ G @ v`` approximates the integral of ``v**2`` over the subdomain.
    """
    return sparse.diags(sub.weights)


def parse_subdomain(domain: DiscreteDomain, text: str) -> Subdomain:
    """Parse a subdomain specification.

    Pieces are joined with ``+``.  Each piece is one of

    ``interval:a,b``
        nodes with ``a < x1 < b``;
    ``rect:x0,x1,y0,y1``
        2D box;
    ``disc:cx,cy,r``
        2D disc;
    ``full``
        every interior node.

    Examples
    --------
    >>> dom = build_domain(1, (0, 1), 99)
    >>> parse_subdomain(dom, "interval:0.2,0.3+interval:0.6,0.7").count
    18
    """
    pieces = [p.strip() for p in str(text).split("+") if p.strip()]
    if not pieces:
        raise ValidationError(f"empty subdomain specification {text!r}")
    out = None
    for piece in pieces:
        kind, _, args = piece.partition(":")
        kind = kind.strip().lower()
        try:
            vals = [float(s) for s in args.split(",")] if args.strip() else []
        except ValueError:
            raise ValidationError(f"bad numbers in subdomain piece {piece!r}") from None
        if kind in ("full", "all", "omega_full"):
            s = Subdomain.full(domain)
        elif kind == "interval" and len(vals) == 2:
            s = Subdomain.interval(domain, *vals)
        elif kind in ("rect", "rectangle") and len(vals) == 4 and domain.dimension == 2:
            s = Subdomain.rectangle(domain, (vals[0], vals[2]), (vals[1], vals[3]))
        elif kind == "disc" and len(vals) == 3 and domain.dimension == 2:
            s = Subdomain.disc(domain, vals[:2], vals[2])
        else:
            raise ValidationError(f"cannot parse subdomain piece {piece!r}")
        out = s if out is None else out.union(s)
    return Subdomain(out.parent, out.membership, flags=out.flags, label=str(text))
