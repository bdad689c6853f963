"""Minimal-residual finite elements for fully nonlinear elliptic PDE.

The discrete solution minimizes a residual functional built from the boundary
sup misfit (via a slack variable and nodal constraints), the L^n norm of the
pointwise operator misfit under a frozen policy, and, for discontinuous
spaces, face jump penalties.  An outer policy iteration re-freezes the
supremizing coefficients of the Bellman-type operator between convex solves.
"""

from .mesh import Mesh, initial_mesh, refine_marked, refine_uniform, write_vtk
from .quadrature import QuadratureRule, volume_rule, face_rule
from .fields import ScalarField, constant_field
from .spaces import make_space, DGSpace, BFSSpace, BoundaryNodeSet
from .operators import (
    LinearOperator,
    PucciOperator,
    HJBSupOperator,
    MongeAmpereOperator,
    pucci_plus,
    pucci_minus,
    ma_reg_sup,
    check_structure,
)

__version__ = "0.1.0"
