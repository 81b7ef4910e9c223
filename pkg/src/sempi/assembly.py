"""Global continuous-Galerkin operators on hybrid meshes.

Nodes are numbered by topological keys: a reference node is identified by the
set of element vertices it is a convex combination of, together with the
(quantized) weights.  Conforming node sets on shared faces therefore collapse
onto the same global index regardless of the local vertex orientation.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import refelem
from .errors import DomainError, SingularityWarning, TopologyError
from .mesh import FREE_SURFACE, HybridMesh, as_tag, surface_quadrature

log = logging.getLogger(__name__)

_WEIGHT_QUANT = 1e9
_CHUNK_BYTES = 64e6


@dataclass(frozen=True, eq=False)
class DofMap:
    order: int
    n_dof: int
    tet_dofs: np.ndarray        # (Nt, Np_tet)
    prism_dofs: np.ndarray      # (Np, Np_prism)
    coords: np.ndarray          # (n_dof, 3) physical node positions
    boundary_nodes: dict = field(repr=False)   # tag name -> sorted global ids

    def element_dofs(self, shape):
        return self.tet_dofs if shape == "tet" else self.prism_dofs

    def nodes_on(self, tag):
        name = as_tag(tag).name
        if name not in self.boundary_nodes:
            raise DomainError(f"tag {name} not present")
        return self.boundary_nodes[name]


def _node_keys(conn, weights):
    """Keys (E*np, 12): sorted vertex ids padded with -1, then quantized weights."""
    E, nv = conn.shape
    npn = weights.shape[0]
    ids = np.broadcast_to(conn[:, None, :], (E, npn, nv)).astype(np.int64)
    q = np.broadcast_to(np.rint(weights * _WEIGHT_QUANT).astype(np.int64)[None], (E, npn, nv))
    ids = np.where(q > 0, ids, np.iinfo(np.int64).max)
    order = np.argsort(ids, axis=2, kind="stable")
    ids = np.take_along_axis(ids, order, axis=2)
    q = np.take_along_axis(q, order, axis=2)
    ids = np.where(ids == np.iinfo(np.int64).max, -1, ids)
    q = np.where(ids < 0, 0, q)
    pad = 6 - nv
    if pad:
        ids = np.concatenate([ids, -np.ones((E, npn, pad), np.int64)], axis=2)
        q = np.concatenate([q, np.zeros((E, npn, pad), np.int64)], axis=2)
    return np.concatenate([ids, q], axis=2).reshape(E * npn, 12)


def node_coordinates(mesh: HybridMesh, shape: str, P: int):
    """Physical coordinates (E, Np, 3) of the order-P nodes of every element."""
    geo_ref = refelem.build_reference(shape, mesh.geometry_order)
    ref = refelem.build_reference(shape, P)
    h, _ = geo_ref.basis_at(ref.nodes)
    return np.einsum("ng,ega->ena", h, mesh.geometry_nodes(shape))


def build_dofmap(mesh: HybridMesh, P: int) -> DofMap:
    """Continuous global numbering of order-P nodes."""
    keys, shapes = [], []
    for shape in ("tet", "prism"):
        conn = mesh.tets if shape == "tet" else mesh.prisms
        ref = refelem.build_reference(shape, P)
        keys.append(_node_keys(conn, ref.node_vertex_weights))
        shapes.append((shape, len(conn), ref.n_nodes))
    allkeys = np.vstack(keys)
    if len(allkeys) == 0:
        raise TopologyError("mesh has no elements")
    _, inv = np.unique(allkeys, axis=0, return_inverse=True)
    inv = inv.ravel()
    n_dof = int(inv.max()) + 1
    off = 0
    dofs = {}
    coords = np.zeros((n_dof, 3))
    for shape, E, npn in shapes:
        d = inv[off:off + E * npn].reshape(E, npn)
        off += E * npn
        dofs[shape] = d
        if E:
            coords[d.ravel()] = node_coordinates(mesh, shape, P).reshape(-1, 3)
    _check_conformity(mesh, dofs, P)
    bnodes = {}
    for tag in mesh.present_tags():
        elems, faces = mesh.facets_with(tag)
        ids = []
        for e, f in zip(elems.tolist(), faces.tolist()):
            shape = mesh.element_shape(e)
            fn = refelem.build_reference(shape, P).face_nodes[f]
            ids.append(dofs[shape][mesh.local_index(e), list(fn)])
        bnodes[tag.name] = np.unique(np.concatenate(ids))
    for arr in (*dofs.values(), coords):
        arr.flags.writeable = False
    return DofMap(P, n_dof, dofs["tet"], dofs["prism"], coords, bnodes)


def _check_conformity(mesh, dofs, P):
    from .mesh import _face_keys
    keys, owners = _face_keys(mesh.tets, mesh.prisms)
    if not len(keys):
        return
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    shared = np.nonzero(counts[inv] == 2)[0]
    if not len(shared):
        return
    order = np.argsort(inv[shared], kind="stable")
    pairs = shared[order].reshape(-1, 2)
    for a, b in pairs:
        sa = _face_dofs(mesh, dofs, P, owners[a])
        sb = _face_dofs(mesh, dofs, P, owners[b])
        if not np.array_equal(np.sort(sa), np.sort(sb)):
            raise TopologyError(
                f"inconsistent face nodes between elements {owners[a][0]} and {owners[b][0]}",
                element=int(owners[a][0]))


def _face_dofs(mesh, dofs, P, owner):
    e, f = int(owner[0]), int(owner[1])
    shape = mesh.element_shape(e)
    fn = refelem.build_reference(shape, P).face_nodes[f]
    return dofs[shape][mesh.local_index(e), list(fn)]


# ---------------------------------------------------------------------------
# volume operators
# ---------------------------------------------------------------------------

def _chunks(E, per_elem_bytes):
    step = max(1, int(_CHUNK_BYTES // max(per_elem_bytes, 1)))
    for s in range(0, E, step):
        yield slice(s, min(E, s + step))


def _coo_to_csr(rows, cols, vals, n):
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _volume_quadrature(mesh, shape, P, degree):
    ref = refelem.build_reference(shape, P)
    if degree is None:
        degree = 2 * P + 1
    qp, qw = refelem.volume_quadrature(shape, degree)
    H, dH = ref.basis_at(qp)
    return ref, qp, qw, H, dH


def assemble_stiffness(mesh: HybridMesh, dofmap: DofMap, degree=None) -> sp.csr_matrix:
    """Stiffness matrix ``A_ij = int grad h_i . grad h_j`` in CSR form."""
    rows, cols, vals = [], [], []
    P = dofmap.order
    for shape in ("tet", "prism"):
        dofs = dofmap.element_dofs(shape)
        E = len(dofs)
        if not E:
            continue
        ref, qp, qw, H, dH = _volume_quadrature(mesh, shape, P, degree)
        npn, nq = ref.n_nodes, len(qw)
        for sl in _chunks(E, 8 * nq * (3 * npn + 20) + 8 * npn * npn):
            emap = mesh_element_maps(mesh, shape, qp, sl)
            G = np.einsum("eqab,bqi->eqai", emap.inv_t, dH, optimize=True)
            G = G.reshape(G.shape[0], nq * 3, npn)
            w = np.repeat(emap.det * qw[None], 3, axis=1)
            K = np.matmul((G * w[..., None]).transpose(0, 2, 1), G)
            d = dofs[sl]
            rows.append(np.repeat(d, npn, axis=1).ravel())
            cols.append(np.tile(d, (1, npn)).ravel())
            vals.append(K.ravel())
    A = _coo_to_csr(rows, cols, vals, dofmap.n_dof)
    # exact symmetrization removes accumulation-order round-off
    return ((A + A.T) * 0.5).tocsr()


def assemble_mass(mesh: HybridMesh, dofmap: DofMap, degree=None) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    P = dofmap.order
    for shape in ("tet", "prism"):
        dofs = dofmap.element_dofs(shape)
        if not len(dofs):
            continue
        ref, qp, qw, H, _ = _volume_quadrature(mesh, shape, P, degree)
        npn = ref.n_nodes
        for sl in _chunks(len(dofs), 8 * len(qw) * 20 + 8 * npn * npn):
            emap = mesh_element_maps(mesh, shape, qp, sl)
            M = np.matmul((H[None] * (emap.det * qw[None])[..., None]).transpose(0, 2, 1), H[None])
            d = dofs[sl]
            rows.append(np.repeat(d, npn, axis=1).ravel())
            cols.append(np.tile(d, (1, npn)).ravel())
            vals.append(M.ravel())
    return _coo_to_csr(rows, cols, vals, dofmap.n_dof)


def mesh_element_maps(mesh, shape, points, sl=slice(None)):
    geo_ref = refelem.build_reference(shape, mesh.geometry_order)
    return refelem.geometric_factors(geo_ref, mesh.geometry_nodes(shape)[sl], points)


def assemble_volume_load(mesh: HybridMesh, dofmap: DofMap, f, degree=None) -> np.ndarray:
    """Load vector ``int f h_i`` for a callable ``f(xyz) -> values``."""
    b = np.zeros(dofmap.n_dof)
    P = dofmap.order
    for shape in ("tet", "prism"):
        dofs = dofmap.element_dofs(shape)
        if not len(dofs):
            continue
        ref, qp, qw, H, _ = _volume_quadrature(mesh, shape, P, degree)
        geo_ref = refelem.build_reference(shape, mesh.geometry_order)
        hg, _ = geo_ref.basis_at(qp)
        for sl in _chunks(len(dofs), 8 * len(qw) * 30):
            emap = mesh_element_maps(mesh, shape, qp, sl)
            x = np.einsum("qg,ega->eqa", hg, mesh.geometry_nodes(shape)[sl])
            fv = np.asarray(f(x.reshape(-1, 3))).reshape(x.shape[:2])
            contrib = np.einsum("qi,eq->ei", H, fv * emap.det * qw[None])
            np.add.at(b, dofs[sl].ravel(), contrib.ravel())
    return b


# ---------------------------------------------------------------------------
# boundary operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundaryOperator:
    """Quadrature on a tagged surface with the trace of the nodal basis.

    ``trace`` (nq x n_dof) evaluates a nodal field at the quadrature points;
    ``trace.T @ (weights * q)`` is the Neumann load of point values ``q``.
    """
    tag: str
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    trace: sp.csr_matrix

    @property
    def n_points(self):
        return len(self.weights)

    def load(self, q):
        return self.trace.T @ (self.weights * np.asarray(q, dtype=float))

    def integrate(self, values):
        """Integral over the surface of point values (last axis = points)."""
        return np.asarray(values) @ self.weights

    def field_at_points(self, phi):
        return self.trace @ phi


def boundary_operator(mesh: HybridMesh, dofmap: DofMap, tag, degree=None) -> BoundaryOperator:
    tag = as_tag(tag)
    P = dofmap.order
    degree = 2 * P + 1 if degree is None else degree
    sq = surface_quadrature(mesh, tag, degree)
    rows, cols, vals = [], [], []
    for shape, f, local, sl in sq.groups:
        ref = refelem.build_reference(shape, P)
        rp, _, _ = refelem.face_quadrature(shape, f, degree)
        H, _ = ref.basis_at(rp)
        fn = list(ref.face_nodes[f])
        Hf = H[:, fn]
        d = dofmap.element_dofs(shape)[local][:, fn]
        nqf = len(rp)
        r = sl.start + np.arange(len(local) * nqf).reshape(len(local), nqf)
        rows.append(np.repeat(r, len(fn), axis=1).ravel())
        cols.append(np.repeat(d[:, None, :], nqf, axis=1).reshape(len(local), -1).ravel())
        vals.append(np.broadcast_to(Hf, (len(local), nqf, len(fn))).ravel())
    trace = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(len(sq.weights), dofmap.n_dof)).tocsr()
    return BoundaryOperator(tag.name, sq.points, sq.weights, sq.normals, trace)


def assemble_neumann_load(mesh: HybridMesh, dofmap: DofMap, tag, q, degree=None) -> np.ndarray:
    """Load ``int_tag q h_i`` for flux values ``q`` at the tag's quadrature points
    (ordering of :func:`boundary_operator`), or a callable ``q(points, normals)``."""
    op = boundary_operator(mesh, dofmap, tag, degree)
    if callable(q):
        q = q(op.points, op.normals)
    q = np.broadcast_to(np.asarray(q, dtype=float), (op.n_points,))
    if not np.all(np.isfinite(q)):
        raise DomainError("non-finite flux values")
    return op.load(q)


# ---------------------------------------------------------------------------
# Dirichlet conditions
# ---------------------------------------------------------------------------

def impose_dirichlet(A: sp.spmatrix, b: np.ndarray, nodes, values):
    """Symmetric elimination: returns (A', b') with unit rows/cols at ``nodes``."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    nodes = np.asarray(nodes, dtype=np.int64)
    g = np.zeros(n)
    g[nodes] = values
    if len(nodes) == 0:
        warnings.warn("no Dirichlet nodes: system is singular, deflating constants",
                      SingularityWarning, stacklevel=2)
        return A.copy(), np.asarray(b, dtype=float) - np.mean(b)
    mask = np.zeros(n, dtype=bool)
    mask[nodes] = True
    b2 = np.asarray(b, dtype=float) - A @ g
    keep = sp.diags((~mask).astype(float))
    A2 = (keep @ A @ keep + sp.diags(mask.astype(float))).tocsr()
    A2.eliminate_zeros()
    A2.sort_indices()
    b2[mask] = g[mask]
    return A2, b2


# ---------------------------------------------------------------------------
# free-surface operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FreeSurfaceOperators:
    nodes: np.ndarray           # global ids of free-surface nodes (sorted)
    coords: np.ndarray          # (n_fs, 2) xy
    mass: sp.csr_matrix         # (n_fs, n_fs)
    stiffness: sp.csr_matrix    # (n_fs, n_fs) 2D Laplacian weak form
    dz_trace: sp.csr_matrix     # (n_fs, n_dof) averaged element-local d/dz at FS nodes
    triangles: np.ndarray       # (m, n_face_nodes) local FS indices of each top face
    rim: dict = field(default_factory=dict, repr=False)   # tag name -> local FS indices


def _fs_faces(mesh: HybridMesh, dofmap: DofMap, degree):
    """Per-top-face quadrature data: local FS ids, 2D gradients, traces, weights, points."""
    P = dofmap.order
    fs_nodes = dofmap.nodes_on(FREE_SURFACE)
    local = -np.ones(dofmap.n_dof, dtype=np.int64)
    local[fs_nodes] = np.arange(len(fs_nodes))
    elems, _ = mesh.facets_with(FREE_SURFACE)
    pids = elems - mesh.n_tets
    ref = refelem.build_reference("prism", P)
    face = refelem.PRISM_TOP_FACE
    fn = list(ref.face_nodes[face])
    rp, rw, rn = refelem.face_quadrature("prism", face, degree)
    H, dH = ref.basis_at(rp)
    emap = mesh_element_maps(mesh, "prism", rp, pids)
    nds = emap.det[..., None] * np.einsum("eqab,b->eqa", emap.inv_t, rn)
    jac = np.linalg.norm(nds, axis=2) * rw[None]
    G = np.einsum("eqab,bqi->eqai", emap.inv_t, dH)[:, :, :2, :][..., fn]
    geo = refelem.build_reference("prism", mesh.geometry_order)
    hg, _ = geo.basis_at(rp)
    xq = np.einsum("qg,ega->eqa", hg, mesh.geometry_nodes("prism")[pids])[..., :2]
    d = local[dofmap.prism_dofs[pids][:, fn]]
    if np.any(d < 0):
        raise TopologyError("free-surface face node missing from free-surface set")
    return dict(fs_nodes=fs_nodes, local=local, pids=pids, ref=ref, fn=fn, d=d, G=G,
                Hf=H[:, fn], jac=jac, xq=xq)


def _fs_matrix(Ke, d, n):
    nf = d.shape[1]
    r = np.repeat(d, nf, axis=1).ravel()
    c = np.tile(d, (1, nf)).ravel()
    K = sp.coo_matrix((Ke.ravel(), (r, c)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return ((K + K.T) * 0.5).tocsr()


def fs_weighted_stiffness(mesh: HybridMesh, dofmap: DofMap, weight, degree=None) -> sp.csr_matrix:
    """``int c(x, y) grad2 h_i . grad2 h_j`` over the free surface for a callable ``c(xy)``."""
    degree = 2 * dofmap.order + 1 if degree is None else degree
    F = _fs_faces(mesh, dofmap, degree)
    c = np.asarray(weight(F["xq"].reshape(-1, 2)), dtype=float).reshape(F["jac"].shape)
    Ke = np.einsum("eqai,eqaj,eq->eij", F["G"], F["G"], F["jac"] * c)
    return _fs_matrix(Ke, F["d"], len(F["fs_nodes"]))


def assemble_fs_operators(mesh: HybridMesh, dofmap: DofMap, degree=None) -> FreeSurfaceOperators:
    if not mesh.has_tag(FREE_SURFACE):
        raise DomainError("mesh has no free surface")
    P = dofmap.order
    degree = 2 * P + 1 if degree is None else degree
    F = _fs_faces(mesh, dofmap, degree)
    fs_nodes, local, pids, ref, fn, d = (F[k] for k in ("fs_nodes", "local", "pids", "ref",
                                                         "fn", "d"))
    Hf, G, jac = F["Hf"], F["G"], F["jac"]
    nf = len(fn)
    n = len(fs_nodes)
    M = _fs_matrix(np.einsum("qi,qj,eq->eij", Hf, Hf, jac), d, n)
    K = _fs_matrix(np.einsum("eqai,eqaj,eq->eij", G, G, jac), d, n)
    # d/dz at the top-face nodes, averaged over the prisms sharing a node
    top_pts = ref.nodes[fn]
    nmap = mesh_element_maps(mesh, "prism", top_pts, pids)
    Dref = np.stack([D[fn, :] for D in ref.diff_ops])            # (3, nf, np)
    Dz = np.einsum("eqb,bqi->eqi", nmap.inv_t[:, :, 2, :], Dref)  # (E, nf, np)
    gd = dofmap.prism_dofs[pids]
    rows = np.repeat(d, ref.n_nodes, axis=1).ravel()
    cols = np.repeat(gd[:, None, :], nf, axis=1).ravel()
    Z = sp.coo_matrix((Dz.ravel(), (rows, cols)), shape=(n, dofmap.n_dof)).tocsr()
    counts = np.bincount(d.ravel(), minlength=n).astype(float)
    Z = (sp.diags(1.0 / counts) @ Z).tocsr()
    rim = {}
    for name, ids in dofmap.boundary_nodes.items():
        if name == FREE_SURFACE.name:
            continue
        loc = local[ids]
        loc = loc[loc >= 0]
        if len(loc):
            rim[name] = np.sort(loc)
    return FreeSurfaceOperators(fs_nodes, dofmap.coords[fs_nodes, :2].copy(), M, K, Z, d, rim)


# ---------------------------------------------------------------------------
# bundled operators and debugging dumps
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GlobalOperators:
    dofmap: DofMap
    stiffness: sp.csr_matrix
    fs: FreeSurfaceOperators | None
    boundaries: dict            # tag name -> BoundaryOperator

    @property
    def fs_mass(self):
        return self.fs.mass

    @property
    def fs_stiffness(self):
        return self.fs.stiffness

    @property
    def dz_trace(self):
        return self.fs.dz_trace

    @property
    def body_quadrature(self):
        return self.boundaries.get("body")

    def boundary(self, tag):
        name = as_tag(tag).name
        if name not in self.boundaries:
            raise DomainError(f"tag {name} not assembled")
        return self.boundaries[name]


def assemble_operators(mesh: HybridMesh, P: int, boundary_tags=("body",)) -> GlobalOperators:
    dm = build_dofmap(mesh, P)
    A = assemble_stiffness(mesh, dm)
    fs = assemble_fs_operators(mesh, dm) if mesh.has_tag(FREE_SURFACE) else None
    bnd = {}
    for t in boundary_tags:
        if mesh.has_tag(t):
            bnd[as_tag(t).name] = boundary_operator(mesh, dm, t)
    log.info("assembled P=%d: %d elements, %d dofs, nnz=%d", P, mesh.n_elements, dm.n_dof, A.nnz)
    return GlobalOperators(dm, A, fs, bnd)


def dump_matrix_market(path, A, comment=""):
    """Write a sparse operator in matrix-market text format."""
    scipy.io.mmwrite(str(Path(path)), sp.coo_matrix(A), comment=comment, precision=17)
