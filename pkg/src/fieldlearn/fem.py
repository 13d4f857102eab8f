"""Structured meshes, linear elements, quadrature, and weak-form residuals.

Meshes are uniform tensor grids in one or two dimensions with linear (1D) or
bilinear (2D) elements. Nodes are numbered x-fastest: in 2D, node ``(ix, iy)``
has index ``iy * nx + ix``. All types are treated as immutable after
construction, and every assembly routine is single threaded and deterministic:
identical inputs give bitwise identical outputs.

Boundary conditions travel as a per-node image with two channels. Channel 0
carries Dirichlet values with ``-1`` meaning "not set"; channel 1 carries
Neumann flux values with ``-1`` meaning "not set" and ``-2`` marking nodes
outside the problem domain. Consequently the encoding cannot express a
Dirichlet value of exactly -1 or a flux of exactly -1; values below -1 in
either channel (other than the exterior sentinel) are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DataError, ShapeError

# Node classes.
INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2
EXTERIOR = 3

# Sentinels of the two-channel boundary-condition image.
UNSET_SENTINEL = -1.0
EXTERIOR_SENTINEL = -2.0


@dataclass(frozen=True)
class StructuredMesh:
    """Uniform tensor-product grid.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    nodes_per_axis : tuple of int
        Node count along each axis (each >= 2).
    spacing : tuple of float
        Node spacing along each axis (each > 0).
    origin : tuple of float
        Coordinate of the first node.
    """

    dim: int
    nodes_per_axis: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigurationError(f"dim must be 1 or 2 (got {self.dim})")
        for name, tup in (("nodes_per_axis", self.nodes_per_axis),
                          ("spacing", self.spacing), ("origin", self.origin)):
            if len(tup) != self.dim:
                raise ConfigurationError(f"{name} must have length dim={self.dim} (got {tup})")
        if any(n < 2 for n in self.nodes_per_axis):
            raise ConfigurationError(f"nodes_per_axis entries must be >= 2 (got {self.nodes_per_axis})")
        if any(h <= 0 for h in self.spacing):
            raise ConfigurationError(f"spacing entries must be > 0 (got {self.spacing})")

    @property
    def n_nodes(self) -> int:
        n = 1
        for k in self.nodes_per_axis:
            n *= k
        return n

    @property
    def n_elements(self) -> int:
        n = 1
        for k in self.nodes_per_axis:
            n *= k - 1
        return n

    @property
    def nodes_per_element(self) -> int:
        return 2 ** self.dim

    def node_coords(self) -> np.ndarray:
        """Coordinates of all nodes, shape (n_nodes, dim), x-fastest order."""
        axes = [self.origin[d] + self.spacing[d] * np.arange(self.nodes_per_axis[d])
                for d in range(self.dim)]
        if self.dim == 1:
            return axes[0][:, None]
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="xy")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def connectivity(self) -> np.ndarray:
        """Element-to-node map, shape (n_elements, 2**dim).

        2D local node order is counterclockwise from the lower-left corner,
        matching the reference square corners (-1,-1), (1,-1), (1,1), (-1,1).
        """
        if self.dim == 1:
            i = np.arange(self.nodes_per_axis[0] - 1)
            return np.column_stack([i, i + 1])
        nx = self.nodes_per_axis[0]
        ex = np.arange(self.nodes_per_axis[0] - 1)
        ey = np.arange(self.nodes_per_axis[1] - 1)
        exx, eyy = np.meshgrid(ex, ey, indexing="xy")
        base = eyy.ravel() * nx + exx.ravel()
        return np.column_stack([base, base + 1, base + nx + 1, base + nx])

    def boundary_nodes(self) -> np.ndarray:
        """Boolean mask over nodes, True on the mesh boundary."""
        if self.dim == 1:
            out = np.zeros(self.n_nodes, dtype=bool)
            out[0] = out[-1] = True
            return out
        nx, ny = self.nodes_per_axis
        out = np.zeros((ny, nx), dtype=bool)
        out[0, :] = out[-1, :] = True
        out[:, 0] = out[:, -1] = True
        return out.ravel()


def make_interval_mesh(n_nodes: int, length: float = 1.0, origin: float = 0.0) -> StructuredMesh:
    """Uniform 1D mesh with `n_nodes` nodes on [origin, origin + length]."""
    return StructuredMesh(1, (n_nodes,), (length / (n_nodes - 1),), (origin,))


def make_grid_mesh(nodes: tuple[int, int], lengths: tuple[float, float],
                   origin: tuple[float, float] = (0.0, 0.0)) -> StructuredMesh:
    """Uniform 2D mesh with `nodes` = (nx, ny) nodes spanning `lengths`."""
    nx, ny = nodes
    return StructuredMesh(2, (nx, ny),
                          (lengths[0] / (nx - 1), lengths[1] / (ny - 1)),
                          tuple(origin))


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss-Legendre rule on the reference element [-1,1]^dim."""

    points: np.ndarray   # (n_points, dim)
    weights: np.ndarray  # (n_points,)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def gauss_rule(n_points_per_axis: int, dim: int) -> QuadratureRule:
    """Gauss-Legendre rule with `n_points_per_axis` points per axis.

    Supports 1, 2, or 3 points per axis; a 1D rule with n points integrates
    polynomials of degree <= 2n - 1 exactly.
    """
    if n_points_per_axis not in (1, 2, 3):
        raise ConfigurationError(
            f"n_points_per_axis must be 1, 2, or 3 (got {n_points_per_axis})")
    if dim not in (1, 2):
        raise ConfigurationError(f"dim must be 1 or 2 (got {dim})")
    x, w = np.polynomial.legendre.leggauss(n_points_per_axis)
    if dim == 1:
        return QuadratureRule(x[:, None].copy(), w.copy())
    # Tensor product, x-fastest to match node ordering conventions.
    xx, yy = np.meshgrid(x, x, indexing="xy")
    ww = np.outer(w, w)  # ww[j, i] = w[j] * w[i] pairs with (x[i], y[j])
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return QuadratureRule(pts, ww.ravel())


@dataclass(frozen=True)
class ShapeFunctions:
    """Linear/bilinear shape data at the quadrature points of a uniform mesh.

    `N` has shape (n_q, n_loc); `B` has shape (n_q, n_loc, dim) and holds
    physical gradients (constant across elements for a uniform mesh). `detJ`
    is the Jacobian determinant per quadrature point, (h/2)**dim throughout,
    and `wdetj` is the quadrature weight times `detJ`.
    """

    N: np.ndarray
    B: np.ndarray
    detJ: np.ndarray
    wdetj: np.ndarray


def shape_eval(mesh: StructuredMesh, rule: QuadratureRule) -> ShapeFunctions:
    """Evaluate shape functions and physical gradients at quadrature points."""
    if rule.points.shape[1] != mesh.dim:
        raise ConfigurationError(
            f"rule dimension {rule.points.shape[1]} does not match mesh dimension {mesh.dim}")
    if mesh.dim == 1:
        h = mesh.spacing[0]
        xi = rule.points[:, 0]
        N = np.column_stack([(1.0 - xi) / 2.0, (1.0 + xi) / 2.0])
        B = np.empty((rule.n_points, 2, 1))
        B[:, 0, 0] = -1.0 / h
        B[:, 1, 0] = 1.0 / h
        detJ = np.full(rule.n_points, h / 2.0)
        return ShapeFunctions(N, B, detJ, rule.weights * detJ)
    hx, hy = mesh.spacing
    xi = rule.points[:, 0]
    eta = rule.points[:, 1]
    corners = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    N = np.empty((rule.n_points, 4))
    B = np.empty((rule.n_points, 4, 2))
    for a, (xa, ya) in enumerate(corners):
        N[:, a] = (1.0 + xa * xi) * (1.0 + ya * eta) / 4.0
        B[:, a, 0] = xa * (1.0 + ya * eta) / 4.0 * (2.0 / hx)
        B[:, a, 1] = ya * (1.0 + xa * xi) / 4.0 * (2.0 / hy)
    detJ = np.full(rule.n_points, (hx / 2.0) * (hy / 2.0))
    return ShapeFunctions(N, B, detJ, rule.weights * detJ)


@dataclass(frozen=True)
class BoundaryMask:
    """Per-node boundary classification.

    `classes` holds INTERIOR/DIRICHLET/NEUMANN/EXTERIOR codes.
    `dirichlet_values` and `neumann_values` are NaN where the class does not
    apply. Dirichlet rows are never removed from assembled residuals; callers
    use `classes` to decide what to do with them.
    """

    classes: np.ndarray
    dirichlet_values: np.ndarray
    neumann_values: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.classes.shape[0]

    def is_free(self) -> np.ndarray:
        """Nodes carrying unknowns: not Dirichlet and not exterior."""
        return (self.classes != DIRICHLET) & (self.classes != EXTERIOR)


def all_interior_mask(mesh: StructuredMesh) -> BoundaryMask:
    """Mask with every node interior (natural boundary conditions)."""
    n = mesh.n_nodes
    return BoundaryMask(np.zeros(n, dtype=np.int8),
                        np.full(n, np.nan), np.full(n, np.nan))


def boundary_masks_from_input(bc_image: np.ndarray, mesh: StructuredMesh) -> BoundaryMask:
    """Decode a two-channel boundary-condition image into a BoundaryMask.

    Channel 0: Dirichlet values, -1 where not prescribed. Channel 1: Neumann
    flux values, -1 where not prescribed, exactly -2 on exterior nodes.
    Any other value below -1, a non-finite entry, or a node carrying both a
    Dirichlet and a Neumann value is a data error naming the node index.
    """
    bc_image = np.asarray(bc_image, dtype=float)
    if bc_image.shape != (mesh.n_nodes, 2):
        raise DataError(
            f"bc image shape {bc_image.shape} does not match (n_nodes, 2) = ({mesh.n_nodes}, 2)")
    classes = np.zeros(mesh.n_nodes, dtype=np.int8)
    dirichlet = np.full(mesh.n_nodes, np.nan)
    neumann = np.full(mesh.n_nodes, np.nan)
    ch0, ch1 = bc_image[:, 0], bc_image[:, 1]
    if not np.all(np.isfinite(bc_image)):
        bad = int(np.nonzero(~np.isfinite(bc_image).all(axis=1))[0][0])
        raise DataError(f"bc image has a non-finite entry at node {bad}")
    for i in range(mesh.n_nodes):
        d, n = ch0[i], ch1[i]
        if d < UNSET_SENTINEL:
            raise DataError(f"bc image channel 0 value {d} at node {i} is outside the encoding range")
        if n == EXTERIOR_SENTINEL:
            classes[i] = EXTERIOR
            continue
        if n < UNSET_SENTINEL:
            raise DataError(f"bc image channel 1 value {n} at node {i} is outside the encoding range")
        has_d = d != UNSET_SENTINEL
        has_n = n != UNSET_SENTINEL
        if has_d and has_n:
            raise DataError(f"node {i} carries both a Dirichlet and a Neumann value")
        if has_d:
            classes[i] = DIRICHLET
            dirichlet[i] = d
        elif has_n:
            classes[i] = NEUMANN
            neumann[i] = n
    return BoundaryMask(classes, dirichlet, neumann)


def boundary_image_from_mask(mask: BoundaryMask) -> np.ndarray:
    """Inverse of `boundary_masks_from_input` (round-trip for serialization)."""
    n = mask.n_nodes
    image = np.full((n, 2), UNSET_SENTINEL)
    image[mask.classes == DIRICHLET, 0] = mask.dirichlet_values[mask.classes == DIRICHLET]
    image[mask.classes == NEUMANN, 1] = mask.neumann_values[mask.classes == NEUMANN]
    image[mask.classes == EXTERIOR, 1] = EXTERIOR_SENTINEL
    return image


def active_elements(mesh: StructuredMesh, mask: BoundaryMask | None) -> np.ndarray:
    """Boolean mask over elements; False when any node is exterior."""
    if mask is None:
        return np.ones(mesh.n_elements, dtype=bool)
    conn = mesh.connectivity()
    return ~np.any(mask.classes[conn] == EXTERIOR, axis=1)


# ---------------------------------------------------------------------------
# Interpolation and weak-form assembly helpers
# ---------------------------------------------------------------------------

def interpolate_at_qp(mesh: StructuredMesh, sf: ShapeFunctions, nodal: np.ndarray) -> np.ndarray:
    """Values of the interpolated nodal field at each (element, qp).

    Accumulates over local nodes in index order so an element loop doing the
    same matches bit for bit.
    """
    conn = mesh.connectivity()
    f = nodal[conn]  # (n_elem, n_loc)
    n_q, n_loc = sf.N.shape
    out = np.zeros((conn.shape[0], n_q))
    for a in range(n_loc):
        out += sf.N[None, :, a] * f[:, a][:, None]
    return out


def gradient_at_qp(mesh: StructuredMesh, sf: ShapeFunctions, nodal: np.ndarray) -> np.ndarray:
    """Gradients of the interpolated nodal field, shape (n_elem, n_q, dim).

    Same local-node accumulation order as `interpolate_at_qp`.
    """
    conn = mesh.connectivity()
    f = nodal[conn]
    n_q, n_loc, dim = sf.B.shape
    out = np.zeros((conn.shape[0], n_q, dim))
    for a in range(n_loc):
        out += sf.B[None, :, a, :] * f[:, a][:, None, None]
    return out


def weak_source(mesh: StructuredMesh, sf: ShapeFunctions, values: np.ndarray,
                active: np.ndarray | None = None) -> np.ndarray:
    """Assemble integral of N_i * s from per-(element, qp) values of s."""
    conn = mesh.connectivity()
    contrib = np.einsum("q,qa,eq->ea", sf.wdetj, sf.N, values)
    if active is not None:
        contrib = contrib * active[:, None]
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, conn.ravel(), contrib.ravel())
    return out


def weak_flux(mesh: StructuredMesh, sf: ShapeFunctions, flux: np.ndarray,
              active: np.ndarray | None = None) -> np.ndarray:
    """Assemble integral of grad(N_i) . flux from per-(element, qp, dim) flux values.

    Accumulation runs in (element, local node) order with an explicit loop
    over quadrature points and spatial components, so a plain element loop
    reproduces the result bit for bit.
    """
    conn = mesh.connectivity()
    n_elem, n_q, dim = flux.shape
    contrib = np.zeros((n_elem, conn.shape[1]))
    for q in range(n_q):
        inner = sf.B[q, :, 0][None, :] * flux[:, q, 0][:, None]
        for d in range(1, dim):
            inner = inner + sf.B[q, :, d][None, :] * flux[:, q, d][:, None]
        contrib += sf.wdetj[q] * inner
    if active is not None:
        contrib = contrib * active[:, None]
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, conn.ravel(), contrib.ravel())
    return out


def assemble_matrix(mesh: StructuredMesh, kind: str, rule: QuadratureRule | None = None,
                    mask: BoundaryMask | None = None) -> sp.csr_matrix:
    """Assemble the consistent mass or unit stiffness matrix.

    `kind` is "mass" (integral of N_a N_b) or "stiffness" (integral of
    grad N_a . grad N_b). Elements touching exterior nodes are skipped.
    """
    if kind not in ("mass", "stiffness"):
        raise ConfigurationError(f"kind must be 'mass' or 'stiffness' (got {kind!r})")
    if rule is None:
        rule = gauss_rule(2, mesh.dim)
    sf = shape_eval(mesh, rule)
    wd = sf.wdetj
    if kind == "mass":
        local = np.einsum("q,qa,qb->ab", wd, sf.N, sf.N)
    else:
        local = np.einsum("q,qad,qbd->ab", wd, sf.B, sf.B)
    conn = mesh.connectivity()
    act = active_elements(mesh, mask)
    conn_act = conn[act]
    n_loc = conn.shape[1]
    rows = np.repeat(conn_act, n_loc, axis=1).ravel()
    cols = np.tile(conn_act, (1, n_loc)).ravel()
    vals = np.tile(local.ravel(), conn_act.shape[0])
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return mat.tocsr()


# ---------------------------------------------------------------------------
# Residual operators
# ---------------------------------------------------------------------------

def bulk_residual_diffusion(field: np.ndarray, mesh: StructuredMesh,
                            mask: BoundaryMask | None, diffusivity: float,
                            rule: QuadratureRule | None = None) -> np.ndarray:
    """Bulk weak residual of steady diffusion: sum_e integral(B^T H) with H = -D grad(c).

    Rows at Dirichlet nodes are assembled like any other (the caller decides
    whether to use them); rows supported only by elements with exterior nodes
    are zero because those elements are excluded.
    """
    if diffusivity <= 0:
        raise ConfigurationError(f"diffusivity must be > 0 (got {diffusivity})")
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.n_nodes,):
        raise ShapeError(f"field shape {field.shape} does not match n_nodes {mesh.n_nodes}")
    if not np.all(np.isfinite(field)):
        bad = int(np.nonzero(~np.isfinite(field))[0][0])
        raise DataError(f"field has a non-finite value at node {bad}")
    if rule is None:
        rule = gauss_rule(2, mesh.dim)
    sf = shape_eval(mesh, rule)
    grads = gradient_at_qp(mesh, sf, field)
    flux = -diffusivity * grads
    act = active_elements(mesh, mask)
    return weak_flux(mesh, sf, flux, active=act)


def bulk_residual_diffusion_reference(field: np.ndarray, mesh: StructuredMesh,
                                      mask: BoundaryMask | None, diffusivity: float,
                                      rule: QuadratureRule | None = None) -> np.ndarray:
    """Element-loop reference for `bulk_residual_diffusion`.

    Kept as the normative implementation; the vectorized path must agree
    bit for bit (same accumulation order in IEEE doubles).
    """
    if rule is None:
        rule = gauss_rule(2, mesh.dim)
    sf = shape_eval(mesh, rule)
    conn = mesh.connectivity()
    act = active_elements(mesh, mask)
    wd = sf.wdetj
    field = np.asarray(field, dtype=float)
    out = np.zeros(mesh.n_nodes)
    n_loc = conn.shape[1]
    for e in range(mesh.n_elements):
        ce = conn[e]
        contrib = np.zeros(n_loc)
        for q in range(rule.n_points):
            grad = np.zeros(mesh.dim)
            for a in range(n_loc):
                for d in range(mesh.dim):
                    grad[d] += sf.B[q, a, d] * field[ce[a]]
            flux = -diffusivity * grad
            inner = np.empty(n_loc)
            for a in range(n_loc):
                val = sf.B[q, a, 0] * flux[0]
                for d in range(1, mesh.dim):
                    val = val + sf.B[q, a, d] * flux[d]
                inner[a] = val
            contrib += wd[q] * inner
        contrib = contrib * act[e]
        for a in range(n_loc):
            out[ce[a]] += contrib[a]
    return out


def _boundary_edges(mesh: StructuredMesh) -> np.ndarray:
    """All boundary edges of a 2D mesh as (n_edges, 2) node-index pairs."""
    nx, ny = mesh.nodes_per_axis
    idx = lambda ix, iy: iy * nx + ix
    edges = []
    for ix in range(nx - 1):                      # bottom, top
        edges.append((idx(ix, 0), idx(ix + 1, 0)))
        edges.append((idx(ix, ny - 1), idx(ix + 1, ny - 1)))
    for iy in range(ny - 1):                      # left, right
        edges.append((idx(0, iy), idx(0, iy + 1)))
        edges.append((idx(nx - 1, iy), idx(nx - 1, iy + 1)))
    return np.array(edges, dtype=int)


def neumann_residual(mesh: StructuredMesh, mask: BoundaryMask) -> np.ndarray:
    """Boundary term of the weak residual: -integral(N^T Hbar) over Neumann boundary.

    In 1D the boundary is two points, so the contribution at a Neumann
    endpoint is -Hbar there. In 2D the flux is integrated with a 2-point
    Gauss rule over every boundary edge whose two endpoints both carry
    Neumann values, interpolating Hbar linearly along the edge.
    """
    out = np.zeros(mesh.n_nodes)
    neumann_nodes = np.nonzero(mask.classes == NEUMANN)[0]
    if neumann_nodes.size == 0:
        return out
    on_boundary = mesh.boundary_nodes()
    for i in neumann_nodes:
        if not on_boundary[i]:
            raise DataError(f"Neumann node {i} is not on the mesh boundary")
    if mesh.dim == 1:
        for i in neumann_nodes:
            out[i] -= mask.neumann_values[i]
        return out
    edges = _boundary_edges(mesh)
    is_neumann = mask.classes == NEUMANN
    coords = mesh.node_coords()
    xi, w = np.polynomial.legendre.leggauss(2)
    for a, b in edges:
        if not (is_neumann[a] and is_neumann[b]):
            continue
        h = float(np.linalg.norm(coords[b] - coords[a]))
        na = (1.0 - xi) / 2.0
        nb = (1.0 + xi) / 2.0
        hbar = na * mask.neumann_values[a] + nb * mask.neumann_values[b]
        out[a] -= float(np.sum(w * (h / 2.0) * na * hbar))
        out[b] -= float(np.sum(w * (h / 2.0) * nb * hbar))
    return out


def scatter_element_to_nodes(element_values: np.ndarray, mesh: StructuredMesh) -> np.ndarray:
    """Accumulate per-(element, local node) values onto global nodes.

    Accumulation order is element-major and deterministic.
    """
    element_values = np.asarray(element_values, dtype=float)
    expected = (mesh.n_elements, mesh.nodes_per_element)
    if element_values.shape != expected:
        raise ShapeError(
            f"element_values shape {element_values.shape} does not match {expected}")
    conn = mesh.connectivity()
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, conn.ravel(), element_values.ravel())
    return out
