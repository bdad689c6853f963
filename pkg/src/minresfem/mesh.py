"""Simplicial (2D/3D) and rectangular (2D) meshes with conforming refinement.

Simplices refine by tagged bisection: each cell stores its vertices in an
order such that (first, last) is the refinement edge, plus a type tag that
cycles through the bisection generations (the tag only matters in 3D).
Marked refinement bisects every marked cell once and then runs a closure
loop until no cell has a hanging edge midpoint.  Rectangles refine by
quadsection and reject marked (adaptive) refinement.

Meshes are immutable after construction; refinement returns a new mesh.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

_CLOSURE_ROUND_CAP = 500


@dataclass(frozen=True)
class Mesh:
    """Conforming mesh of simplices or axis-aligned rectangles.

    Attributes
    ----------
    dim : spatial dimension, 2 or 3.
    vertices : (nv, dim) float array of vertex coordinates.
    cells : (nc, dim+1) int array for simplices, vertex order encodes the
        refinement edge (cells[:, 0], cells[:, -1]); (nc, 4) for rectangles
        with corners ordered (v00, v10, v11, v01).
    cell_kind : "simplex" or "rectangle".
    cell_type : (nc,) int bisection type tags (all zero in 2D).
    parent : (nc,) int cell id, in the mesh this one was refined from, that
        each cell descends from; identity for a freshly constructed mesh.
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    cell_kind: str
    cell_type: np.ndarray
    parent: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def refinement_edges(self) -> np.ndarray:
        """(nc, 2) vertex index pairs of the bisection edges (simplices)."""
        if self.cell_kind != "simplex":
            raise ValueError("refinement edges are defined for simplicial meshes only")
        return np.stack([self.cells[:, 0], self.cells[:, -1]], axis=1)

    # -- geometry -----------------------------------------------------------

    def cell_coords(self) -> np.ndarray:
        """(nc, verts_per_cell, dim) coordinates of the cell vertices."""
        return self.vertices[self.cells]

    def cell_volumes(self) -> np.ndarray:
        coords = self.cell_coords()
        if self.cell_kind == "simplex":
            edges = coords[:, 1:, :] - coords[:, :1, :]
            det = np.linalg.det(edges)
            return np.abs(det) / _factorial(self.dim)
        dx = coords[:, 1, 0] - coords[:, 0, 0]
        dy = coords[:, 3, 1] - coords[:, 0, 1]
        return np.abs(dx * dy)

    def cell_diameters(self) -> np.ndarray:
        coords = self.cell_coords()
        nloc = coords.shape[1]
        diam = np.zeros(self.num_cells)
        for i, j in itertools.combinations(range(nloc), 2):
            diam = np.maximum(diam, np.linalg.norm(coords[:, i] - coords[:, j], axis=1))
        return diam

    def cell_inradii(self) -> np.ndarray:
        """Inscribed-sphere radii (simplices only)."""
        if self.cell_kind != "simplex":
            raise ValueError("inradii implemented for simplices")
        coords = self.cell_coords()
        vol = self.cell_volumes()
        surf = np.zeros(self.num_cells)
        nloc = coords.shape[1]
        for f in range(nloc):
            fverts = coords[:, [i for i in range(nloc) if i != f], :]
            surf += _facet_measure(fverts, self.dim)
        return self.dim * vol / surf

    def shape_ratio(self) -> float:
        """max over cells of diameter / inradius, a shape-regularity measure."""
        return float(np.max(self.cell_diameters() / self.cell_inradii()))

    def cell_centroids(self) -> np.ndarray:
        return self.cell_coords().mean(axis=1)

    def faces(self) -> "FaceSet":
        if "faces" not in self._cache:
            self._cache["faces"] = enumerate_faces(self)
        return self._cache["faces"]


@dataclass(frozen=True)
class FaceSet:
    """Codimension-1 faces with adjacency and geometry.

    cells[:, 1] == -1 marks boundary faces.  The unit normal points out of
    cells[:, 0] (the lower adjacent cell id), which also fixes the jump sign
    convention used by the stabilization.
    """

    vertices: np.ndarray       # (nf, dim) vertex ids per face
    cells: np.ndarray          # (nf, 2) adjacent cell ids, -1 for boundary
    boundary: np.ndarray       # (nf,) bool
    h: np.ndarray              # (nf,) face diameters
    measure: np.ndarray        # (nf,) length / area
    normal: np.ndarray         # (nf, dim) unit normals

    @property
    def num_faces(self) -> int:
        return self.vertices.shape[0]

    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def boundary_ids(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)


def _factorial(n: int) -> int:
    out = 1
    for i in range(2, n + 1):
        out *= i
    return out


def _facet_measure(coords: np.ndarray, dim: int) -> np.ndarray:
    """Measure of (dim-1)-simplices given (..., dim, dim) vertex coords."""
    if dim == 2:
        return np.linalg.norm(coords[:, 1] - coords[:, 0], axis=1)
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def _local_faces(dim: int, cell_kind: str):
    if cell_kind == "rectangle":
        return [(0, 1), (1, 2), (2, 3), (3, 0)]
    if dim == 2:
        return [(1, 2), (0, 2), (0, 1)]
    return [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]


def enumerate_faces(mesh: Mesh) -> FaceSet:
    """Build the face list with adjacency, diameters, and outward normals."""
    local = _local_faces(mesh.dim, mesh.cell_kind)
    seen: dict[tuple, int] = {}
    fverts: list[tuple] = []
    fcells: list[list[int]] = []
    for c in range(mesh.num_cells):
        cell = mesh.cells[c]
        for lf in local:
            key = tuple(sorted(int(cell[i]) for i in lf))
            idx = seen.get(key)
            if idx is None:
                seen[key] = len(fverts)
                fverts.append(tuple(int(cell[i]) for i in lf))
                fcells.append([c])
            else:
                fcells[idx].append(c)

    nf = len(fverts)
    verts = np.asarray(fverts, dtype=np.int64)
    cells = np.full((nf, 2), -1, dtype=np.int64)
    for i, adj in enumerate(fcells):
        if len(adj) > 2:
            raise ValueError("non-manifold face encountered")
        adj = sorted(adj)
        cells[i, : len(adj)] = adj
    boundary = cells[:, 1] < 0

    coords = mesh.vertices[verts]
    nfv = verts.shape[1]
    h = np.zeros(nf)
    for i, j in itertools.combinations(range(nfv), 2):
        h = np.maximum(h, np.linalg.norm(coords[:, i] - coords[:, j], axis=1))
    if mesh.dim == 2:
        measure = np.linalg.norm(coords[:, 1] - coords[:, 0], axis=1)
        tang = coords[:, 1] - coords[:, 0]
        normal = np.stack([tang[:, 1], -tang[:, 0]], axis=1)
    else:
        e1 = coords[:, 1] - coords[:, 0]
        e2 = coords[:, 2] - coords[:, 0]
        cr = np.cross(e1, e2)
        measure = 0.5 * np.linalg.norm(cr, axis=1)
        normal = cr
    normal = normal / np.linalg.norm(normal, axis=1, keepdims=True)
    # orient out of the first (lower-id) adjacent cell
    owner_centroid = mesh.cell_centroids()[cells[:, 0]]
    face_centroid = coords.mean(axis=1)
    flip = np.einsum("fd,fd->f", normal, face_centroid - owner_centroid) < 0
    normal[flip] *= -1.0
    return FaceSet(verts, cells, boundary, h, measure, normal)


# -- construction ------------------------------------------------------------


def simplicial_mesh(vertices, cells) -> Mesh:
    """Tag and order raw simplices for bisection refinement.

    In 2D the initial refinement edge of each cell is its longest edge, ties
    broken by the lexicographically smallest sorted vertex-index pair; the
    type tag is irrelevant.  3D input is taken as already ordered (the preset
    cube mesh is compatibly tagged) with type 0.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    dim = vertices.shape[1]
    if dim == 2:
        ordered = np.empty_like(cells)
        for row, cell in enumerate(cells):
            best = None
            for i, j in itertools.combinations(range(3), 2):
                a, b = int(cell[i]), int(cell[j])
                length = np.linalg.norm(vertices[a] - vertices[b])
                key = (-length, min(a, b), max(a, b))
                if best is None or key < best[0]:
                    best = (key, (a, b))
            a, b = sorted(best[1])
            (mid,) = [int(v) for v in cell if v not in (a, b)]
            ordered[row] = (a, mid, b)
        cells = ordered
    _check_volumes(vertices, cells, dim)
    return Mesh(
        dim=dim,
        vertices=vertices,
        cells=cells,
        cell_kind="simplex",
        cell_type=np.zeros(len(cells), dtype=np.int64),
        parent=np.arange(len(cells), dtype=np.int64),
    )


def rectangle_mesh(x_coords, y_coords) -> Mesh:
    """Tensor grid of axis-aligned rectangles."""
    x = np.asarray(x_coords, dtype=float)
    y = np.asarray(y_coords, dtype=float)
    nx, ny = len(x) - 1, len(y) - 1
    xx, yy = np.meshgrid(x, y, indexing="ij")
    vertices = np.stack([xx.ravel(), yy.ravel()], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    cells = []
    for i in range(nx):
        for j in range(ny):
            cells.append((vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)))
    cells = np.asarray(cells, dtype=np.int64)
    return Mesh(2, vertices, cells, "rectangle",
                np.zeros(len(cells), dtype=np.int64),
                np.arange(len(cells), dtype=np.int64))


def initial_mesh(domain: str, cell_kind: str = "simplex") -> Mesh:
    """Preset initial meshes for the experiment domains."""
    if domain == "unit_square":
        if cell_kind == "rectangle":
            return rectangle_mesh([0.0, 1.0], [0.0, 1.0])
        verts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        cells = [(0, 1, 2), (0, 2, 3)]
        return simplicial_mesh(verts, cells)
    if domain == "lshape":
        if cell_kind != "simplex":
            raise ValueError("the L-shaped domain is simplicial only")
        # (-1,1)^2 minus the closed quadrant [0,1] x [-1,0];
        # diagonals run through the re-entrant corner at the origin.
        verts = [
            (0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0),
            (-1.0, 1.0), (-1.0, 0.0), (-1.0, -1.0), (0.0, -1.0),
        ]
        cells = [
            (0, 1, 2), (0, 2, 3),      # top right square
            (0, 3, 4), (0, 4, 5),      # top left square
            (0, 5, 6), (0, 6, 7),      # bottom left square
        ]
        return simplicial_mesh(verts, cells)
    if domain == "unit_cube":
        if cell_kind != "simplex":
            raise ValueError("the unit cube mesh is simplicial only")
        corners = np.array(list(itertools.product((0.0, 1.0), repeat=3)))

        def cid(c):
            return int(c[0] * 4 + c[1] * 2 + c[2])

        cells = []
        for perm in sorted(itertools.permutations(range(3))):
            path = [np.zeros(3)]
            for axis in perm:
                nxt = path[-1].copy()
                nxt[axis] = 1.0
                path.append(nxt)
            cells.append(tuple(cid(p) for p in path))
        mesh = Mesh(3, corners, np.asarray(cells, dtype=np.int64), "simplex",
                    np.zeros(6, dtype=np.int64), np.arange(6, dtype=np.int64))
        _check_volumes(mesh.vertices, mesh.cells, 3)
        return mesh
    raise ValueError(f"unknown domain {domain!r}")


def _check_volumes(vertices, cells, dim):
    edges = vertices[cells[:, 1:]] - vertices[cells[:, :1]]
    det = np.linalg.det(edges)
    if np.any(np.abs(det) < 1e-14):
        raise ValueError("degenerate cell with zero volume")


# -- refinement --------------------------------------------------------------


def _bisect_children(cell: tuple, ctype: int, z: int, dim: int):
    """Children of a tagged simplex, Traxler/Stevenson ordering."""
    n = dim
    first = (cell[0], z) + cell[1:n]
    prefix = cell[1 : ctype + 1]
    suffix = tuple(reversed(cell[ctype + 1 : n]))
    second = (cell[n], z) + prefix + suffix
    return first, second, (ctype + 1) % n


def refine_marked(mesh: Mesh, marked) -> Mesh:
    """Bisect the marked cells and close until the mesh conforms.

    Every marked cell is bisected at least once; closure bisections are added
    until no cell contains an edge whose midpoint already exists.  Parent ids
    trace descendants back to cells of the input mesh.
    """
    if mesh.cell_kind != "simplex":
        raise ValueError("adaptive refinement supports simplicial meshes only "
                         "(rectangle meshes refine uniformly)")
    marked = set(int(m) for m in marked)
    if not marked:
        return mesh
    if marked - set(range(mesh.num_cells)):
        raise ValueError("marked set contains invalid cell ids")

    coords = [mesh.vertices[i] for i in range(mesh.num_vertices)]
    midpoint: dict[tuple, int] = {}
    cells = [tuple(int(v) for v in c) for c in mesh.cells]
    types = [int(t) for t in mesh.cell_type]
    parents = [int(p) for p in mesh.parent]
    dim = mesh.dim

    def bisect(idx_list):
        nonlocal cells, types, parents
        new_cells, new_types, new_parents = [], [], []
        idx = set(idx_list)
        for i, cell in enumerate(cells):
            if i not in idx:
                new_cells.append(cell)
                new_types.append(types[i])
                new_parents.append(parents[i])
                continue
            a, b = cell[0], cell[-1]
            key = (a, b) if a < b else (b, a)
            z = midpoint.get(key)
            if z is None:
                z = len(coords)
                coords.append(0.5 * (coords[a] + coords[b]))
                midpoint[key] = z
            c1, c2, t = _bisect_children(cell, types[i], z, dim)
            new_cells.extend((c1, c2))
            new_types.extend((t, t))
            new_parents.extend((parents[i], parents[i]))
        cells, types, parents = new_cells, new_types, new_parents

    def hanging():
        bad = []
        for i, cell in enumerate(cells):
            for a, b in itertools.combinations(cell, 2):
                key = (a, b) if a < b else (b, a)
                if key in midpoint:
                    bad.append(i)
                    break
        return bad

    bisect(marked)
    for _ in range(_CLOSURE_ROUND_CAP):
        bad = hanging()
        if not bad:
            break
        bisect(bad)
    else:
        raise RuntimeError("bisection closure did not terminate; "
                           "initial mesh tagging is incompatible")

    return Mesh(dim, np.asarray(coords), np.asarray(cells, dtype=np.int64),
                "simplex", np.asarray(types, dtype=np.int64),
                np.asarray(parents, dtype=np.int64))


def bisect_all(mesh: Mesh) -> Mesh:
    """One full bisection generation (every cell bisected once, plus closure)."""
    return refine_marked(mesh, range(mesh.num_cells))


def refine_uniform(mesh: Mesh) -> Mesh:
    """Uniform refinement: 2^dim children per simplex, quadsection per rectangle."""
    if mesh.cell_kind == "simplex":
        out = mesh
        root = np.arange(mesh.num_cells, dtype=np.int64)
        for _ in range(mesh.dim):
            nxt = bisect_all(out)
            root = root[nxt.parent]
            out = nxt
        out = Mesh(out.dim, out.vertices, out.cells, out.cell_kind,
                   out.cell_type, root)
        if _nonconforming(out):
            raise RuntimeError("uniform bisection produced a nonconforming mesh")
        return out

    # rectangle quadsection
    coords = [mesh.vertices[i] for i in range(mesh.num_vertices)]
    midpoint: dict[tuple, int] = {}

    def mid(a, b):
        key = (a, b) if a < b else (b, a)
        z = midpoint.get(key)
        if z is None:
            z = len(coords)
            coords.append(0.5 * (coords[a] + coords[b]))
            midpoint[key] = z
        return z

    new_cells, new_parents = [], []
    for i, cell in enumerate(mesh.cells):
        v00, v10, v11, v01 = (int(v) for v in cell)
        s = mid(v00, v10)
        e = mid(v10, v11)
        nn = mid(v11, v01)
        w = mid(v01, v00)
        ctr = len(coords)
        coords.append(0.25 * (coords[v00] + coords[v10] + coords[v11] + coords[v01]))
        new_cells.extend([
            (v00, s, ctr, w), (s, v10, e, ctr), (ctr, e, v11, nn), (w, ctr, nn, v01),
        ])
        new_parents.extend([i] * 4)
    return Mesh(2, np.asarray(coords), np.asarray(new_cells, dtype=np.int64),
                "rectangle", np.zeros(len(new_cells), dtype=np.int64),
                np.asarray(new_parents, dtype=np.int64))


def _nonconforming(mesh: Mesh) -> bool:
    """A simplicial mesh conforms iff no cell edge has another vertex on it.

    Cheap topological proxy: an interior face shared by exactly two cells and
    no face shared by more; enumerate_faces raises on non-manifold input, so
    only hanging vertices remain to check.
    """
    cells = mesh.cells
    midcoords = {}
    for c in cells:
        for a, b in itertools.combinations(c.tolist(), 2):
            key = (a, b) if a < b else (b, a)
            midcoords.setdefault(key, 0.5 * (mesh.vertices[a] + mesh.vertices[b]))
    existing = {tuple(np.round(v, 12)) for v in mesh.vertices}
    for key, m in midcoords.items():
        if tuple(np.round(m, 12)) in existing:
            return True
    return False


# -- export ------------------------------------------------------------------

_VTK_CELL_TYPE = {("simplex", 2): 5, ("simplex", 3): 10, ("rectangle", 2): 9}


def write_vtk(mesh: Mesh, path, cell_data: dict | None = None) -> None:
    """Write legacy ASCII VTK (POINTS/CELLS/CELL_TYPES), deterministic order."""
    lines = ["# vtk DataFile Version 3.0", "minresfem mesh", "ASCII",
             "DATASET UNSTRUCTURED_GRID"]
    nv = mesh.num_vertices
    lines.append(f"POINTS {nv} double")
    for v in mesh.vertices:
        x, y = v[0], v[1]
        z = v[2] if mesh.dim == 3 else 0.0
        lines.append(f"{x:.16e} {y:.16e} {z:.16e}")
    nc = mesh.num_cells
    per = mesh.cells.shape[1]
    lines.append(f"CELLS {nc} {nc * (per + 1)}")
    for c in mesh.cells:
        lines.append(" ".join([str(per)] + [str(int(v)) for v in c]))
    lines.append(f"CELL_TYPES {nc}")
    ct = _VTK_CELL_TYPE[(mesh.cell_kind, mesh.dim)]
    lines.extend([str(ct)] * nc)
    if cell_data:
        lines.append(f"CELL_DATA {nc}")
        for name, values in cell_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.16e}" for v in np.asarray(values, dtype=float))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
