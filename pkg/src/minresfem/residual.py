"""Assembly of the minimal-residual objective pieces.

For a frozen policy (A, b, c, f_pol) the misfit at a volume quadrature point
is the affine functional  f(x) - f_pol + A:D2v - b.grad v - c v  of the dof
vector; the practical objective raises misfit, face-jump, and slack terms to
the n-th power (n = space dimension).  The true nonlinear residual uses the
operator itself instead of a frozen policy and is the a posteriori quantity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import ScalarField, as_field
from .operators import Operator
from .spaces import face_lattice_barycentric, face_rule_barycentric


@dataclass
class PolicyField:
    """Frozen linear coefficients per (cell, volume quadrature point)."""

    A: np.ndarray    # (nc, nq, d, d)
    b: np.ndarray    # (nc, nq, d)
    c: np.ndarray    # (nc, nq)
    f: np.ndarray    # (nc, nq) policy-dependent source

    def max_difference(self, other: "PolicyField") -> float:
        return max(
            float(np.max(np.abs(self.A - other.A), initial=0.0)),
            float(np.max(np.abs(self.b - other.b), initial=0.0)),
            float(np.max(np.abs(self.c - other.c), initial=0.0)),
            float(np.max(np.abs(self.f - other.f), initial=0.0)),
        )


@dataclass
class MisfitForms:
    """Per-(cell, point) affine misfit rows over the cell dofs."""

    weights: np.ndarray  # (nc, nq) physical quadrature weights
    rows: np.ndarray     # (nc, nq, nb)
    const: np.ndarray    # (nc, nq)
    dofs: np.ndarray     # (nc, nb) global dof indices

    def residuals(self, v: np.ndarray) -> np.ndarray:
        return self.const + np.einsum("cqi,ci->cq", self.rows, v[self.dofs])

    def value(self, v: np.ndarray, n: float) -> float:
        return float(np.sum(self.weights * np.abs(self.residuals(v)) ** n))


@dataclass
class StabForms:
    """Jump-penalty rows on interior faces (value + gradient components).

    Weights already include the h_F powers and the physical face quadrature
    weights, so the penalty reads sum w |jump|^p termwise.
    """

    p: float
    dofs: np.ndarray       # (nfi, 2*nb) dofs of both adjacent cells
    w_val: np.ndarray      # (nfi, nqf)
    rows_val: np.ndarray   # (nfi, nqf, 2*nb)
    w_grad: np.ndarray     # (nfi, nqf)
    rows_grad: np.ndarray  # (nfi, nqf, d, 2*nb)

    @property
    def num_faces(self) -> int:
        return self.dofs.shape[0]

    def jumps(self, v: np.ndarray):
        local = v[self.dofs]
        jv = np.einsum("fqi,fi->fq", self.rows_val, local)
        jg = np.einsum("fqdi,fi->fqd", self.rows_grad, local)
        return jv, jg

    def value(self, v: np.ndarray) -> float:
        if self.num_faces == 0:
            return 0.0
        jv, jg = self.jumps(v)
        out = np.sum(self.w_val * np.abs(jv) ** self.p)
        out += np.sum(self.w_grad[:, :, None] * np.abs(jg) ** self.p)
        return float(out)


@dataclass
class ConstraintSet:
    """Boundary trace rows with targets; slack mode couples them to t."""

    mode: str            # "slack" | "fixed"
    points: np.ndarray   # (m, d)
    cells: np.ndarray    # (m,)
    dofs: np.ndarray     # (m, nb)
    vals: np.ndarray     # (m, nb)
    targets: np.ndarray  # (m,)

    @property
    def num_rows(self) -> int:
        return self.points.shape[0]

    def trace(self, v: np.ndarray) -> np.ndarray:
        return np.einsum("mi,mi->m", self.vals, v[self.dofs])

    def misfits(self, v: np.ndarray) -> np.ndarray:
        return self.targets - self.trace(v)


@dataclass
class SubproblemForms:
    """Convex objective data of one policy-frozen subproblem.

    objective(t, v) = sigma t^n + sum_q w_q |misfit_q(v)|^n + tau s_j(v; n)
    """

    n: int
    ndof: int
    sigma: float
    tau: float
    misfit: MisfitForms
    stab: StabForms | None = None

    def objective(self, t: float, v: np.ndarray) -> float:
        out = self.sigma * abs(t) ** self.n + self.misfit.value(v, self.n)
        if self.stab is not None:
            out += self.tau * self.stab.value(v)
        return float(out)


# -- policy handling -----------------------------------------------------------


def _flat_quad_states(space, v: np.ndarray):
    rule = space.volume_quad
    vals, grads, hess = space.eval_coeffs(v, rule.points)
    nc, nq = vals.shape
    d = space.mesh.dim
    x = space.quad_points.reshape(nc * nq, d)
    return x, vals.reshape(-1), grads.reshape(-1, d), hess.reshape(-1, d, d), (nc, nq)


def freeze_policy(space, op: Operator, v: np.ndarray, f) -> PolicyField:
    """Supremizing policy of the operator at the current iterate."""
    x, r, p, M, (nc, nq) = _flat_quad_states(space, v)
    d = space.mesh.dim
    A, b, c, fpol = op.supremizer(x, r, p, M)
    return PolicyField(A.reshape(nc, nq, d, d), b.reshape(nc, nq, d),
                       c.reshape(nc, nq), fpol.reshape(nc, nq))


def initial_policy(space, op: Operator) -> PolicyField:
    """Family-specific starting policy (coefficient I/2 where meaningful)."""
    nc, nq = space.quad_weights.shape
    d = space.mesh.dim
    x = space.quad_points.reshape(nc * nq, d)
    A, b, c, fpol = op.initial_policy(x)
    return PolicyField(A.reshape(nc, nq, d, d), b.reshape(nc, nq, d),
                       c.reshape(nc, nq), fpol.reshape(nc, nq))


def assemble_misfit(space, policy: PolicyField, f) -> MisfitForms:
    """Misfit rows  f - f_pol + A:D2 phi_i - b.grad phi_i - c phi_i  per point."""
    f = as_field(f, space.mesh.dim)
    rule = space.volume_quad
    V, G, H = space.tabulate_all(rule.points)     # reference tables
    ji = space.jac_inv                            # (nc, d, d)
    # pull the policy back to the reference frame: A:H_phys = (Jinv A Jinv^T):H_ref
    A_ref = np.einsum("cde,cqef,cgf->cqdg", ji, policy.A, ji)
    b_ref = np.einsum("cde,cqe->cqd", ji, policy.b)
    rows = (np.einsum("cqde,qide->cqi", A_ref, H)
            - np.einsum("cqd,qid->cqi", b_ref, G)
            - policy.c[:, :, None] * V[None, :, :])
    rows *= space.dof_scale[:, None, :]
    fvals = f(space.quad_points.reshape(-1, space.mesh.dim)).reshape(policy.c.shape)
    const = fvals - policy.f
    return MisfitForms(space.quad_weights, rows, const, space.cell_dofs)


def _face_side_tables(space, face_ids: np.ndarray, lam: np.ndarray, side: int):
    """Trace tables of one adjacency side for a batch of faces.

    Returns (cell ids (nf,), values (nf, nq, nb), physical gradients
    (nf, nq, nb, d), physical points (nf, nq, d)).
    """
    faces = space.mesh.faces()
    cells = faces.cells[face_ids, side]
    if np.any(cells < 0):
        raise ValueError("requested side has no adjacent cell")
    verts = space.mesh.vertices[faces.vertices[face_ids]]          # (nf, nfv, d)
    rel = verts - space.origin[cells][:, None, :]
    ref_verts = np.einsum("fde,fve->fvd", space.jac_inv[cells], rel)
    ref_pts = np.einsum("qv,fvd->fqd", lam, ref_verts)             # (nf, nq, d)
    v, g, _ = space.ref.tabulate(ref_pts)
    scale = space.dof_scale[cells]
    val = v * scale[:, None, :]
    grad = np.einsum("fed,fqje->fqjd", space.jac_inv[cells], g) * scale[:, None, :, None]
    phys = space.origin[cells][:, None, :] + np.einsum(
        "fde,fqe->fqd", space.jac[cells], ref_pts)
    return cells, val, grad, phys


def assemble_stabilization(space, p: float | None = None) -> StabForms:
    """Face-jump penalty rows h^{1-2p}|[v]|^p + h^{1-p}|[grad v]|^p."""
    if space.kind != "dg_simplex":
        raise ValueError("stabilization applies to discontinuous spaces only; "
                         "conforming spaces have no jump terms")
    d = space.mesh.dim
    if p is None:
        p = d
    if not p > 1:
        raise ValueError("jump exponent must exceed 1")
    faces = space.mesh.faces()
    interior = faces.interior()
    nfi = len(interior)
    nb = space.nb
    lam, wref = face_rule_barycentric("simplex", d, 2 * space.degree + 2)
    nqf = lam.shape[0]
    if nfi == 0:
        return StabForms(float(p), np.empty((0, 2 * nb), dtype=np.int64),
                         np.empty((0, nqf)), np.empty((0, nqf, 2 * nb)),
                         np.empty((0, nqf)), np.empty((0, nqf, d, 2 * nb)))
    cm, vm, gm, _ = _face_side_tables(space, interior, lam, 0)
    cp, vp, gp, _ = _face_side_tables(space, interior, lam, 1)
    dofs = np.concatenate([space.cell_dofs[cm], space.cell_dofs[cp]], axis=1)
    rows_val = np.concatenate([vm, -vp], axis=2)
    rows_grad = np.concatenate([np.swapaxes(gm, 2, 3), -np.swapaxes(gp, 2, 3)], axis=3)
    w_phys = wref[None, :] * faces.measure[interior][:, None]
    h_f = faces.h[interior][:, None]
    return StabForms(p=float(p), dofs=dofs,
                     w_val=h_f ** (1.0 - 2.0 * p) * w_phys, rows_val=rows_val,
                     w_grad=h_f ** (1.0 - p) * w_phys, rows_grad=rows_grad)


def boundary_constraints(space, g, mode: str = "slack") -> ConstraintSet:
    """Admissibility rows  -t <= g_j(z) - v(z) <= t  (or v(z) = g_j(z))."""
    if mode not in ("slack", "fixed"):
        raise ValueError("mode must be 'slack' or 'fixed'")
    g = as_field(g, space.mesh.dim)
    bn = space.boundary_nodes()
    return ConstraintSet(mode=mode, points=bn.points, cells=bn.cells,
                         dofs=bn.dofs, vals=bn.vals, targets=g(bn.points))


# -- nonlinear (true) residual ---------------------------------------------------


@dataclass
class ResidualBreakdown:
    boundary_sup: float
    misfit: float        # L^n norm (not the n-th power)
    stab_root: float     # s_j(v)^{1/n}
    total: float


def boundary_sup_error(space, v: np.ndarray, g, extra: int = 3) -> float:
    """sup over boundary samples of |g - v|, Lagrange points of degree k+extra."""
    g = as_field(g, space.mesh.dim)
    faces = space.mesh.faces()
    bnd = faces.boundary_ids()
    lam = face_lattice_barycentric(space.mesh.dim, space.degree + extra)
    cells, val_tab, _, phys = _face_side_tables(space, bnd, lam, 0)
    vals = np.einsum("fqi,fi->fq", val_tab, v[space.cell_dofs[cells]])
    gvals = g(phys.reshape(-1, space.mesh.dim)).reshape(vals.shape)
    return float(np.max(np.abs(gvals - vals), initial=0.0))


def misfit_norm(space, v: np.ndarray, op: Operator, f) -> float:
    """||f - F_pw[v]||_{L^n} with the true nonlinear operator."""
    f = as_field(f, space.mesh.dim)
    x, r, p, M, (nc, nq) = _flat_quad_states(space, v)
    fv = op.evaluate(x, r, p, M).reshape(nc, nq)
    integrand = np.abs(f(x).reshape(nc, nq) - fv) ** space.mesh.dim
    return float(np.sum(space.quad_weights * integrand) ** (1.0 / space.mesh.dim))


def evaluate_residual(space, v: np.ndarray, op: Operator, f, g,
                      stab: StabForms | None = None) -> ResidualBreakdown:
    """The a posteriori residual: boundary sup + L^n misfit + jump penalty root.

    Conforming spaces contribute no jump term; pass precomputed StabForms to
    avoid reassembly.
    """
    n = space.mesh.dim
    bnd = boundary_sup_error(space, v, g)
    mis = misfit_norm(space, v, op, f)
    if space.kind == "dg_simplex":
        if stab is None:
            stab = assemble_stabilization(space, n)
        stab_root = stab.value(v) ** (1.0 / n)
    else:
        stab_root = 0.0
    return ResidualBreakdown(bnd, mis, stab_root, bnd + mis + stab_root)


def nonlinear_objective(space, t: float, v: np.ndarray, op: Operator, f,
                        sigma: float, tau: float,
                        stab: StabForms | None = None) -> float:
    """The practical functional with the true operator (the 'energy' value)."""
    n = space.mesh.dim
    out = sigma * abs(t) ** n + misfit_norm(space, v, op, f) ** n
    if space.kind == "dg_simplex":
        if stab is None:
            stab = assemble_stabilization(space, n)
        out += tau * stab.value(v)
    return float(out)
