"""Discrete spaces: discontinuous P_k on simplices and the bicubic Hermite
(Bogner-Fox-Schmit) space on axis-aligned rectangles.

Both are handled through a common interface: reference tabulation of basis
values/gradients/Hessians, per-cell affine geometry, nodal or L2-projection
interpolation, and enumeration of boundary trace nodes.  All evaluation is
batched; reference tables broadcast over arbitrary leading shapes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import quadrature
from .fields import ScalarField
from .mesh import Mesh


# -- reference elements -------------------------------------------------------


def simplex_lattice(dim: int, degree: int) -> np.ndarray:
    """Reference lattice points {multi-indices/degree}, deterministic order."""
    pts = []
    if dim == 1:
        return np.array([[i / degree] for i in range(degree + 1)])
    if dim == 2:
        for i in range(degree + 1):
            for j in range(degree + 1 - i):
                pts.append((i / degree, j / degree))
    else:
        for i in range(degree + 1):
            for j in range(degree + 1 - i):
                for k in range(degree + 1 - i - j):
                    pts.append((i / degree, j / degree, k / degree))
    return np.asarray(pts)


def _monomial_exponents(dim: int, degree: int):
    exps = []
    for total in range(degree + 1):
        for combo in itertools.product(range(total + 1), repeat=dim):
            if sum(combo) == total:
                exps.append(combo)
    return np.asarray(sorted(exps), dtype=np.int64)


def _mono_tables(pts: np.ndarray, exps: np.ndarray):
    """Values, gradients, Hessians of monomials at pts (..., d)."""
    pts = np.asarray(pts, dtype=float)
    lead = pts.shape[:-1]
    d = pts.shape[-1]
    nm = exps.shape[0]

    def power(base, e):
        # 0**0 == 1, negative exponents clipped to zero coefficient upstream
        out = np.ones(lead)
        if e > 0:
            out = base ** e
        return out

    val = np.ones(lead + (nm,))
    grad = np.zeros(lead + (nm, d))
    hess = np.zeros(lead + (nm, d, d))
    for m, exp in enumerate(exps):
        v = np.ones(lead)
        for a in range(d):
            v = v * power(pts[..., a], exp[a])
        val[..., m] = v
        for a in range(d):
            if exp[a] == 0:
                continue
            g = np.full(lead, float(exp[a]))
            for b in range(d):
                e = exp[b] - (1 if b == a else 0)
                g = g * power(pts[..., b], e)
            grad[..., m, a] = g
        for a in range(d):
            for b in range(d):
                ea = list(exp)
                coef = ea[a]
                ea[a] -= 1
                if ea[a] < 0:
                    continue
                coef *= ea[b]
                ea[b] -= 1
                if ea[b] < 0 or coef == 0:
                    continue
                hval = np.full(lead, float(coef))
                for cc in range(d):
                    hval = hval * power(pts[..., cc], ea[cc])
                hess[..., m, a, b] = hval
    return val, grad, hess


class _RefSimplex:
    """Lagrange P_k basis on the reference simplex via monomial coefficients."""

    def __init__(self, dim: int, degree: int):
        self.dim = dim
        self.degree = degree
        self.nodes = simplex_lattice(dim, degree)
        self.exps = _monomial_exponents(dim, degree)
        v, _, _ = _mono_tables(self.nodes, self.exps)
        self.coeffs = np.linalg.inv(v)  # (nm, nb): basis j = sum_m coeffs[m, j] x^m
        self.nb = self.nodes.shape[0]

    def tabulate(self, pts):
        v, g, h = _mono_tables(pts, self.exps)
        val = v @ self.coeffs
        grad = np.einsum("...md,mj->...jd", g, self.coeffs)
        hess = np.einsum("...mde,mj->...jde", h, self.coeffs)
        return val, grad, hess


def _hermite1d(t: np.ndarray):
    """Cubic Hermite shape functions on [0,1] with values/derivatives.

    Order: (endpoint 0 value, endpoint 0 slope, endpoint 1 value,
    endpoint 1 slope); returns arrays of shape t.shape + (4,).
    """
    t = np.asarray(t, dtype=float)
    one = np.ones_like(t)
    val = np.stack([
        1 - 3 * t**2 + 2 * t**3,
        t - 2 * t**2 + t**3,
        3 * t**2 - 2 * t**3,
        -(t**2) + t**3,
    ], axis=-1)
    dv = np.stack([
        -6 * t + 6 * t**2,
        one - 4 * t + 3 * t**2,
        6 * t - 6 * t**2,
        -2 * t + 3 * t**2,
    ], axis=-1)
    dd = np.stack([
        -6 * one + 12 * t,
        -4 * one + 6 * t,
        6 * one - 12 * t,
        -2 * one + 6 * t,
    ], axis=-1)
    return val, dv, dd


# local dof order: corner (0,0),(1,0),(1,1),(0,1) x (value, dx, dy, dxy)
_BFS_CORNERS = [(0, 0), (1, 0), (1, 1), (0, 1)]
_BFS_DTYPES = [(0, 0), (1, 0), (0, 1), (1, 1)]


class _RefBFS:
    """Bicubic Hermite tensor element on [0,1]^2, 16 dofs."""

    nb = 16
    dim = 2
    degree = 3

    def tabulate(self, pts):
        pts = np.asarray(pts, dtype=float)
        lead = pts.shape[:-1]
        hx, dhx, ddhx = _hermite1d(pts[..., 0])
        hy, dhy, ddhy = _hermite1d(pts[..., 1])
        val = np.zeros(lead + (16,))
        grad = np.zeros(lead + (16, 2))
        hess = np.zeros(lead + (16, 2, 2))
        for ci, (i, j) in enumerate(_BFS_CORNERS):
            for di, (a, b) in enumerate(_BFS_DTYPES):
                k = 4 * ci + di
                ix, iy = 2 * i + a, 2 * j + b
                val[..., k] = hx[..., ix] * hy[..., iy]
                grad[..., k, 0] = dhx[..., ix] * hy[..., iy]
                grad[..., k, 1] = hx[..., ix] * dhy[..., iy]
                hess[..., k, 0, 0] = ddhx[..., ix] * hy[..., iy]
                hess[..., k, 1, 1] = hx[..., ix] * ddhy[..., iy]
                hess[..., k, 0, 1] = dhx[..., ix] * dhy[..., iy]
                hess[..., k, 1, 0] = hess[..., k, 0, 1]
        return val, grad, hess


# -- boundary node set --------------------------------------------------------


@dataclass(frozen=True)
class BoundaryNodeSet:
    """Boundary trace nodes, one entry per (node, adjacent boundary cell).

    rows are the trace functionals: value of the cell-local trace at the node,
    expressed over global dofs (dof indices `dofs[i]`, coefficients `vals[i]`).
    """

    points: np.ndarray   # (m, d)
    cells: np.ndarray    # (m,)
    dofs: np.ndarray     # (m, nb) global dof indices
    vals: np.ndarray     # (m, nb) trace row coefficients

    @property
    def num_entries(self) -> int:
        return self.points.shape[0]

    def evaluate(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("mi,mi->m", self.vals, coeffs[self.dofs])


# -- spaces -------------------------------------------------------------------


class _SpaceBase:
    kind = "?"

    def __init__(self, mesh: Mesh, ref, quad_degree: int):
        self.mesh = mesh
        self.ref = ref
        self.nb = ref.nb
        coords = mesh.cell_coords()
        if mesh.cell_kind == "simplex":
            self.origin = coords[:, 0, :]
            self.jac = np.stack([coords[:, i + 1, :] - coords[:, 0, :]
                                 for i in range(mesh.dim)], axis=2)
        else:
            self.origin = coords[:, 0, :]
            hx = coords[:, 1, 0] - coords[:, 0, 0]
            hy = coords[:, 3, 1] - coords[:, 0, 1]
            self.jac = np.zeros((mesh.num_cells, 2, 2))
            self.jac[:, 0, 0] = hx
            self.jac[:, 1, 1] = hy
        self.jac_inv = np.linalg.inv(self.jac)
        self.det_jac = np.abs(np.linalg.det(self.jac))
        self.quad_degree = quad_degree
        self.volume_quad = quadrature.volume_rule(mesh.cell_kind, mesh.dim, quad_degree)
        ref_measure = quadrature.reference_measure(mesh.cell_kind, mesh.dim)
        # physical quadrature weights: w_ref scales with |det J| directly
        # because sum(w_ref) equals the reference measure
        self.quad_weights = self.volume_quad.weights[None, :] * self.det_jac[:, None]
        self.quad_points = self.ref_to_phys(self.volume_quad.points)
        del ref_measure

    # -- geometry --

    def ref_to_phys(self, ref_pts: np.ndarray) -> np.ndarray:
        """Map reference points (m, d) into every cell: (nc, m, d)."""
        return self.origin[:, None, :] + np.einsum("cde,me->cmd", self.jac, ref_pts)

    def phys_to_ref(self, cell: int, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.einsum("de,me->md", self.jac_inv[cell], x - self.origin[cell])

    def cell_ref_vertex(self, cell: int, vertex_id: int) -> np.ndarray:
        """Reference coordinates of a global vertex within one of its cells."""
        return self.phys_to_ref(cell, self.mesh.vertices[vertex_id])[0]

    # -- evaluation --

    def eval_basis(self, cell: int, ref_pts: np.ndarray):
        """Physical-frame basis (values, gradients, Hessians) at reference points."""
        ref_pts = np.atleast_2d(np.asarray(ref_pts, dtype=float))
        self._check_inside(ref_pts)
        v, g, h = self.ref.tabulate(ref_pts)
        return self._push_forward(cell, v, g, h)

    def _push_forward(self, cell, v, g, h):
        ji = self.jac_inv[cell]
        scale = self.dof_scale[cell]
        val = v * scale
        grad = np.einsum("ed,...je->...jd", ji, g) * scale[:, None]
        hess = np.einsum("ea,...jef,fb->...jab", ji, h, ji) * scale[:, None, None]
        return val, grad, hess

    def _check_inside(self, ref_pts, tol=1e-10):
        if self.mesh.cell_kind == "simplex":
            ok = np.all(ref_pts >= -tol) and np.all(ref_pts.sum(axis=-1) <= 1 + tol)
        else:
            ok = np.all(ref_pts >= -tol) and np.all(ref_pts <= 1 + tol)
        if not ok:
            raise ValueError("reference point outside the reference cell")

    def tabulate_all(self, ref_pts: np.ndarray):
        """Reference tables shared by all cells: (m,nb), (m,nb,d), (m,nb,d,d)."""
        return self.ref.tabulate(np.asarray(ref_pts, dtype=float))

    def eval_coeffs(self, coeffs: np.ndarray, ref_pts: np.ndarray):
        """Evaluate a discrete function on every cell at shared reference points.

        Returns (values (nc, m), gradients (nc, m, d), Hessians (nc, m, d, d))
        in the physical frame; gradients/Hessians are the broken (cellwise)
        derivatives for discontinuous spaces.
        """
        v, g, h = self.tabulate_all(ref_pts)
        local = coeffs[self.cell_dofs] * self.dof_scale  # (nc, nb)
        val = np.einsum("mj,cj->cm", v, local)
        gref = np.einsum("mjd,cj->cmd", g, local)
        href = np.einsum("mjde,cj->cmde", h, local)
        ji = self.jac_inv
        grad = np.einsum("ced,cme->cmd", np.swapaxes(ji, 1, 2), gref)
        hess = np.einsum("cea,cmef,cfb->cmab", ji, href, ji)
        return val, grad, hess

    def eval_cell(self, cell: int, coeffs: np.ndarray, ref_pts: np.ndarray):
        v, g, h = self.eval_basis(cell, ref_pts)
        local = coeffs[self.cell_dofs[cell]]
        return v @ local, np.einsum("mjd,j->md", g, local), np.einsum("mjde,j->mde", h, local)

    # -- interpolation --

    def interpolate(self, field: ScalarField) -> np.ndarray:
        raise NotImplementedError

    # -- L-infinity sampling --

    def linf_sample_ref(self, extra: int = 3) -> np.ndarray:
        """Reference lattice of degree k+extra used for sup-norm sampling."""
        degree = self.degree + extra
        if self.mesh.cell_kind == "simplex":
            return simplex_lattice(self.mesh.dim, degree)
        t = np.linspace(0.0, 1.0, degree + 1)
        X, Y = np.meshgrid(t, t, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    # -- boundary nodes --

    def boundary_nodes(self) -> BoundaryNodeSet:
        if not hasattr(self, "_bnodes"):
            self._bnodes = self._build_boundary_nodes()
        return self._bnodes

    def _trace_node_weights(self):
        """Barycentric weights of the trace Lagrange nodes on one face."""
        raise NotImplementedError

    def _build_boundary_nodes(self) -> BoundaryNodeSet:
        faces = self.mesh.faces()
        weights = self._trace_node_weights()  # (nn, nfv)
        pts, cells, rows_i, rows_v = [], [], [], []
        seen = set()
        for f in faces.boundary_ids():
            cell = int(faces.cells[f, 0])
            ref_verts = np.stack([self.cell_ref_vertex(cell, int(v))
                                  for v in faces.vertices[f]])
            ref_nodes = weights @ ref_verts
            phys = self.origin[cell] + ref_nodes @ self.jac[cell].T
            val, _, _ = self.ref.tabulate(ref_nodes)
            val = val * self.dof_scale[cell]
            for i in range(ref_nodes.shape[0]):
                key = (cell, tuple(np.round(phys[i], 12)))
                if key in seen:
                    continue
                seen.add(key)
                pts.append(phys[i])
                cells.append(cell)
                rows_i.append(self.cell_dofs[cell])
                rows_v.append(val[i])
        return BoundaryNodeSet(np.asarray(pts), np.asarray(cells, dtype=np.int64),
                               np.asarray(rows_i, dtype=np.int64), np.asarray(rows_v))


class DGSpace(_SpaceBase):
    """Discontinuous piecewise P_k on a simplicial mesh, k >= 1 (use k >= 2
    for second-order problems)."""

    kind = "dg_simplex"

    def __init__(self, mesh: Mesh, degree: int, quad_degree: int | None = None):
        if mesh.cell_kind != "simplex":
            raise ValueError("DGSpace requires a simplicial mesh")
        if degree < 1:
            raise ValueError("polynomial degree must be at least 1")
        self.degree = degree
        ref = _RefSimplex(mesh.dim, degree)
        self.cell_dofs = np.arange(mesh.num_cells * ref.nb,
                                   dtype=np.int64).reshape(mesh.num_cells, ref.nb)
        self.ndof = mesh.num_cells * ref.nb
        self.dof_scale = np.ones((mesh.num_cells, ref.nb))
        super().__init__(mesh, ref, quad_degree or 2 * degree + 2)
        m = np.einsum("qi,qj,q->ij", *self._mass_tables())
        self._ref_mass_inv = np.linalg.inv(m)

    def _mass_tables(self):
        rule = self.volume_quad
        v, _, _ = self.ref.tabulate(rule.points)
        return v, v, rule.weights

    def interpolate(self, field: ScalarField) -> np.ndarray:
        """Cellwise L2 projection onto P_k."""
        rule = self.volume_quad
        v, _, _ = self.ref.tabulate(rule.points)
        fvals = field(self.quad_points.reshape(-1, self.mesh.dim))
        fvals = fvals.reshape(self.mesh.num_cells, -1)
        rhs = np.einsum("cq,q,qi->ci", fvals, rule.weights, v)
        return (rhs @ self._ref_mass_inv.T).ravel()

    def _trace_node_weights(self):
        k = self.degree
        if self.mesh.dim == 2:
            t = np.linspace(0.0, 1.0, k + 1)
            return np.stack([1 - t, t], axis=1)
        pts = simplex_lattice(2, k)
        return np.stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]], axis=1)


class BFSSpace(_SpaceBase):
    """Bicubic Hermite rectangles: (value, dx, dy, dxy) at each vertex, C^1 on
    tensor grids."""

    kind = "bfs_rectangle"
    degree = 3

    def __init__(self, mesh: Mesh, quad_degree: int | None = None):
        if mesh.cell_kind != "rectangle":
            raise ValueError("BFSSpace requires a rectangle mesh")
        ref = _RefBFS()
        nc = mesh.num_cells
        self.cell_dofs = np.empty((nc, 16), dtype=np.int64)
        for ci in range(4):
            for di in range(4):
                self.cell_dofs[:, 4 * ci + di] = 4 * mesh.cells[:, ci] + di
        self.ndof = 4 * mesh.num_vertices
        coords = mesh.cell_coords()
        hx = coords[:, 1, 0] - coords[:, 0, 0]
        hy = coords[:, 3, 1] - coords[:, 0, 1]
        scale = np.empty((nc, 16))
        for ci in range(4):
            for di, (a, b) in enumerate(_BFS_DTYPES):
                scale[:, 4 * ci + di] = hx**a * hy**b
        self.dof_scale = scale
        super().__init__(mesh, ref, quad_degree or 2 * 3 + 2)

    def interpolate(self, field: ScalarField) -> np.ndarray:
        if field.grad is None or field.hess is None:
            raise ValueError("Hermite interpolation needs gradient and Hessian callbacks")
        verts = self.mesh.vertices
        coeffs = np.empty(self.ndof)
        coeffs[0::4] = field(verts)
        grads = field.grad(verts)
        coeffs[1::4] = grads[:, 0]
        coeffs[2::4] = grads[:, 1]
        coeffs[3::4] = field.hess(verts)[:, 0, 1]
        return coeffs

    def _trace_node_weights(self):
        t = np.linspace(0.0, 1.0, 4)
        return np.stack([1 - t, t], axis=1)


def make_space(mesh: Mesh, kind: str, k: int | None = None):
    """Space factory used by presets and the experiment drivers."""
    if kind == "dg_simplex":
        if k is None:
            k = 3 if mesh.dim == 2 else 2
        return DGSpace(mesh, k)
    if kind == "bfs_rectangle":
        return BFSSpace(mesh)
    raise ValueError(f"unknown space kind {kind!r}")


def face_barycentric(weights: np.ndarray, space, face_id: int, side: int = 0):
    """Map barycentric face weights (m, nfv) into cell reference coordinates.

    side selects which adjacent cell (0 = lower id, 1 = the other).
    Returns (cell id, ref points (m, d)).
    """
    faces = space.mesh.faces()
    cell = int(faces.cells[face_id, side])
    if cell < 0:
        raise ValueError("face has no adjacent cell on that side")
    ref_verts = np.stack([space.cell_ref_vertex(cell, int(v))
                          for v in faces.vertices[face_id]])
    return cell, weights @ ref_verts


def face_rule_barycentric(cell_kind: str, dim: int, degree: int):
    """Face quadrature as (barycentric weights (m, nfv), ref weights (m,))."""
    rule = quadrature.face_rule(cell_kind, dim, degree)
    if rule.points.shape[1] == 1:
        t = rule.points[:, 0]
        lam = np.stack([1 - t, t], axis=1)
        ref_measure = 1.0
    else:
        a, b = rule.points[:, 0], rule.points[:, 1]
        lam = np.stack([1 - a - b, a, b], axis=1)
        ref_measure = 0.5
    return lam, rule.weights / ref_measure


def face_lattice_barycentric(dim: int, degree: int) -> np.ndarray:
    """Barycentric weights of the face Lagrange lattice of a given degree."""
    if dim == 2:
        t = np.linspace(0.0, 1.0, degree + 1)
        return np.stack([1 - t, t], axis=1)
    pts = simplex_lattice(2, degree)
    return np.stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]], axis=1)
