"""Small structured hybrid meshes for tests, examples and convergence studies.

The solver consumes externally generated meshes; this module only produces
desk-scale fixtures (box tanks, floating/submerged spheres, box bodies with a
moonpool).  Every generator builds hexahedra first and then

* splits hexes touching ``z = 0`` into two prisms (one thin vertical layer),
* splits all other hexes into six tets by a cone from the lowest-numbered
  vertex, with every quad face cut along the diagonal through its
  lowest-numbered vertex, which makes the tetrahedralisation conforming.

Boundary facets are tagged geometrically afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import refelem
from .mesh import (BATHYMETRY, BODY, FAR_FIELD, FREE_SURFACE, SYM_X, SYM_Y,
                   HybridMesh, _face_keys, special)
from .errors import ParameterError

# hex local faces (bottom 0-3 cyclic, top 4-7 above them)
_HEX_FACES = ((0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7))


def segment_lines(breaks, counts, growth=None):
    """Grid lines through ``breaks`` with ``counts[i]`` cells on segment i.

    ``growth[i]`` (optional) gives a geometric cell-size ratio on segment i.
    """
    out = [float(breaks[0])]
    for i, n in enumerate(counts):
        a, b = float(breaks[i]), float(breaks[i + 1])
        g = 1.0 if growth is None else float(growth[i])
        if abs(g - 1.0) < 1e-14:
            t = np.linspace(0, 1, n + 1)[1:]
        else:
            w = g ** np.arange(n)
            t = np.cumsum(w) / w.sum()
        out.extend((a + (b - a) * t).tolist())
    out[-1] = float(breaks[-1])
    return np.array(out)


# ---------------------------------------------------------------------------
# hex -> hybrid conversion
# ---------------------------------------------------------------------------

def _dedupe(points, scale):
    q = np.round(points / (scale * 1e-9)).astype(np.int64)
    uniq, first, inv = np.unique(q, axis=0, return_index=True, return_inverse=True)
    # keep deterministic ordering by sorting on (z, y, x) of representative points
    reps = points[first]
    order = np.lexsort((reps[:, 0], reps[:, 1], reps[:, 2]))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return reps[order], rank[inv.ravel()]


def _orient_tets(V, T):
    X = V[T]
    vol = np.einsum("ij,ij->i", np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), X[:, 3] - X[:, 0])
    T = T.copy()
    neg = vol < 0
    T[neg, 1], T[neg, 2] = T[neg, 2].copy(), T[neg, 1].copy()
    return T


def _split_hex_cone(h):
    """Six tets from one hex (global ids, local order as in _HEX_FACES)."""
    lv = int(np.argmin(h))
    tets = []
    for f in _HEX_FACES:
        if lv in f:
            continue
        g = [h[i] for i in f]
        m = int(np.argmin(g))
        a, b, c, d = g[m:] + g[:m]
        tets.append((h[lv], a, b, c))
        tets.append((h[lv], a, c, d))
    return tets


def _split_hex_prisms(h, V):
    bottom = [h[i] for i in (0, 1, 2, 3)]
    top = dict(zip((h[0], h[1], h[2], h[3]), (h[4], h[5], h[6], h[7])))
    m = int(np.argmin(bottom))
    a, b, c, d = bottom[m:] + bottom[:m]
    out = []
    for tri in ((a, b, c), (a, c, d)):
        p = V[list(tri)]
        cross = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        if cross < 0:
            tri = (tri[0], tri[2], tri[1])
        out.append(tri + tuple(top[v] for v in tri))
    return out


@dataclass
class _Tagger:
    depth: float
    xlim: tuple
    ylim: tuple
    sym_x: bool
    sym_y: bool
    special_region: object = None    # callable(x, y) -> bool for special1 at z=0

    def __call__(self, pts):
        c = pts.mean(axis=0)
        scale = max(self.depth, self.xlim[1] - self.xlim[0], self.ylim[1] - self.ylim[0])
        tol = 1e-9 * scale
        if np.all(np.abs(pts[:, 2]) < tol):
            if self.special_region is not None and self.special_region(c[0], c[1]):
                return special(1)
            return FREE_SURFACE
        if np.all(np.abs(pts[:, 2] + self.depth) < tol):
            return BATHYMETRY
        if self.sym_y and np.all(np.abs(pts[:, 0]) < tol):
            return SYM_Y
        if self.sym_x and np.all(np.abs(pts[:, 1]) < tol):
            return SYM_X
        if np.all(np.abs(pts[:, 0] - self.xlim[1]) < tol) or np.all(np.abs(pts[:, 0] - self.xlim[0]) < tol):
            return FAR_FIELD
        if np.all(np.abs(pts[:, 1] - self.ylim[1]) < tol) or np.all(np.abs(pts[:, 1] - self.ylim[0]) < tol):
            return FAR_FIELD
        return BODY


def hexes_to_hybrid(hex_points, tagger, top_z=0.0, name="", project=None,
                    geometry_order=1):
    """Convert hexes given by corner coordinates (H, 8, 3) into a HybridMesh.

    Hexes whose top face lies at ``top_z`` become prism pairs; the rest tets.
    ``project`` maps points onto the curved body surface for quadratic geometry.
    """
    hex_points = np.asarray(hex_points, dtype=float)
    scale = float(np.ptp(hex_points.reshape(-1, 3), axis=0).max())
    V, ids = _dedupe(hex_points.reshape(-1, 3), scale)
    H = ids.reshape(-1, 8)
    tol = 1e-9 * scale
    is_top = np.all(np.abs(V[H[:, 4:], 2] - top_z) < tol, axis=1)
    tets, prisms = [], []
    for h, top in zip(H.tolist(), is_top):
        if top:
            prisms.extend(_split_hex_prisms(h, V))
        else:
            tets.extend(_split_hex_cone(h))
    T = _orient_tets(V, np.array(tets, dtype=np.int64).reshape(-1, 4))
    Pr = np.array(prisms, dtype=np.int64).reshape(-1, 6)
    keys, owners = _face_keys(T, Pr)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    ext = counts[inv.ravel()] == 1
    fe, ff, tg = [], [], []
    tags = []
    for (e, f) in owners[ext].tolist():
        if e < len(T):
            pts = V[T[e, list(refelem.TET_FACES[f])]]
        else:
            pts = V[Pr[e - len(T), list(refelem.PRISM_FACES[f])]]
        tag = tagger(pts)
        if tag not in tags:
            tags.append(tag)
        fe.append(e)
        ff.append(f)
        tg.append(tags.index(tag))
    # drop unused vertices
    used = np.unique(np.concatenate([T.ravel(), Pr.ravel()]))
    remap = -np.ones(len(V), dtype=np.int64)
    remap[used] = np.arange(len(used))
    V = V[used]
    T = remap[T]
    Pr = remap[Pr]
    mesh = HybridMesh(V, T, Pr, np.array(fe), np.array(ff), np.array(tg), tuple(tags), name=name)
    if geometry_order == 2:
        mesh = make_quadratic(mesh, project)
    return mesh


def make_quadratic(mesh: HybridMesh, project=None) -> HybridMesh:
    """Add mid-edge / face-centre geometry nodes, projecting body ones with ``project``."""
    V = mesh.vertices
    body_code = mesh.tag_code(BODY)
    body_sets = set()
    if body_code is not None and project is not None:
        sel = mesh.facet_tag == body_code
        for e, f in zip(mesh.facet_elem[sel], mesh.facet_face[sel]):
            shape = mesh.element_shape(e)
            conn = (mesh.tets if shape == "tet" else mesh.prisms)[mesh.local_index(e)]
            fv = [int(conn[i]) for i in refelem.reference_faces(shape)[f]]
            n = len(fv)
            for i in range(n):
                body_sets.add(frozenset((fv[i], fv[(i + 1) % n])))
            if n == 4:
                body_sets.add(frozenset(fv))
    new_pts = []
    index = {}

    def node_for(key):
        if key not in index:
            ids = sorted(key)
            p = V[ids].mean(axis=0)
            if project is not None and frozenset(ids) in body_sets:
                p = project(p[None])[0]
            index[key] = len(V) + len(new_pts)
            new_pts.append(p)
        return index[key]

    geo = {}
    for shape in ("tet", "prism"):
        conn = mesh.tets if shape == "tet" else mesh.prisms
        ref = refelem.build_reference(shape, 2)
        W = ref.node_vertex_weights
        out = np.zeros((len(conn), ref.n_nodes), dtype=np.int64)
        for k in range(ref.n_nodes):
            nz = np.nonzero(W[k] > 1e-12)[0]
            if len(nz) == 1:
                out[:, k] = conn[:, nz[0]]
            else:
                for e in range(len(conn)):
                    out[e, k] = node_for(frozenset(int(conn[e, j]) for j in nz))
        geo[shape] = out
    Vn = np.vstack([V, np.array(new_pts).reshape(-1, 3)])
    return HybridMesh(Vn, mesh.tets, mesh.prisms, mesh.facet_elem, mesh.facet_face,
                      mesh.facet_tag, mesh.tags, geometry_order=2, tet_geometry=geo["tet"],
                      prism_geometry=geo["prism"], name=mesh.name)


# ---------------------------------------------------------------------------
# mirroring (quarter -> half -> full with exactly mirrored discretisation)
# ---------------------------------------------------------------------------

def mirror_mesh(mesh: HybridMesh, axis: str) -> HybridMesh:
    """Reflect across ``x = 0`` (axis='x') or ``y = 0`` (axis='y') and glue."""
    ax = "xy".index(axis)
    plane_tag = SYM_Y if axis == "x" else SYM_X
    V = mesh.vertices
    tol = 1e-10 * mesh.scale
    on_plane = np.abs(V[:, ax]) < tol
    mirror_id = np.empty(len(V), dtype=np.int64)
    off_ids = np.nonzero(~on_plane)[0]
    mirror_id[on_plane] = np.nonzero(on_plane)[0]
    mirror_id[off_ids] = len(V) + np.arange(len(off_ids))
    MV = V[off_ids].copy()
    MV[:, ax] *= -1
    Vn = np.vstack([V, MV])
    nt = mesh.n_tets
    T2 = mirror_id[mesh.tets][:, [0, 2, 1, 3]]
    P2 = mirror_id[mesh.prisms][:, [0, 2, 1, 3, 5, 4]]
    perm_t = _mirror_node_perm("tet")
    perm_p = _mirror_node_perm("prism")
    TG2 = mirror_id[mesh.tet_geometry][:, perm_t[mesh.geometry_order]]
    PG2 = mirror_id[mesh.prism_geometry][:, perm_p[mesh.geometry_order]]
    T = np.vstack([mesh.tets, T2])
    Pr = np.vstack([mesh.prisms, P2])
    TG = np.vstack([mesh.tet_geometry, TG2])
    PG = np.vstack([mesh.prism_geometry, PG2])

    def new_id(e, copy):
        if e < nt:
            return e + copy * nt
        return 2 * nt + (e - nt) + copy * mesh.n_prisms

    fe, ff, ft = [], [], []
    plane_code = mesh.tag_code(plane_tag)
    for copy in (0, 1):
        for e, f, t in zip(mesh.facet_elem.tolist(), mesh.facet_face.tolist(),
                           mesh.facet_tag.tolist()):
            if t == plane_code:
                continue
            shape = mesh.element_shape(e)
            fm = f if copy == 0 else _mirrored_face(shape, f)
            fe.append(new_id(e, copy))
            ff.append(fm)
            ft.append(t)
    used_codes = sorted(set(ft))
    tags = tuple(mesh.tags[c] for c in used_codes)
    ft = [used_codes.index(c) for c in ft]
    return HybridMesh(Vn, T, Pr, np.array(fe), np.array(ff), np.array(ft), tags,
                      geometry_order=mesh.geometry_order, tet_geometry=TG, prism_geometry=PG,
                      name=mesh.name + f"-mirror{axis}")


def _vertex_perm(shape):
    return (0, 2, 1, 3) if shape == "tet" else (0, 2, 1, 3, 5, 4)


def _mirrored_face(shape, f):
    perm = _vertex_perm(shape)
    faces = refelem.reference_faces(shape)
    target = {perm[v] for v in faces[f]}
    for g, fv in enumerate(faces):
        if set(fv) == target:
            return g
    raise AssertionError("face permutation failed")


def _mirror_node_perm(shape):
    """For each geometry order, node permutation matching the vertex swap."""
    out = {}
    for q in (1, 2):
        ref = refelem.build_reference(shape, q)
        W = ref.node_vertex_weights
        perm = list(_vertex_perm(shape))
        Wm = W[:, perm]   # weights of the new element's local vertices
        # new node k sits where old node with weights Wm[k] sits
        d = np.abs(Wm[:, None, :] - W[None, :, :]).sum(axis=2)
        out[q] = d.argmin(axis=1)
    return out


def full_from_quarter(mesh: HybridMesh) -> HybridMesh:
    m = mirror_mesh(mesh, "x")
    m = mirror_mesh(m, "y")
    return HybridMesh(m.vertices, m.tets, m.prisms, m.facet_elem, m.facet_face, m.facet_tag,
                      m.tags, geometry_order=m.geometry_order, tet_geometry=m.tet_geometry,
                      prism_geometry=m.prism_geometry, name=mesh.name.replace("quarter", "full"))


# ---------------------------------------------------------------------------
# Cartesian regions
# ---------------------------------------------------------------------------

def _cartesian_hexes(xs, ys, zs, keep=None):
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    P = np.stack([X, Y, Z], axis=-1)
    hexes = []
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            for k in range(len(zs) - 1):
                if keep is not None:
                    c = np.array([(xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2,
                                  (zs[k] + zs[k + 1]) / 2])
                    if not keep(c):
                        continue
                hexes.append([P[i, j, k], P[i + 1, j, k], P[i + 1, j + 1, k], P[i, j + 1, k],
                              P[i, j, k + 1], P[i + 1, j, k + 1], P[i + 1, j + 1, k + 1],
                              P[i, j + 1, k + 1]])
    return np.array(hexes).reshape(-1, 8, 3)


def box_tank(lx=2.0, ly=2.0, depth=1.0, nx=3, ny=3, nz=3, top_layer=None, name="box-tank"):
    """Rectangular tank [0,lx]x[0,ly]x[-depth,0]; all sides tagged (MMS use).

    The top layer (prisms) has thickness ``top_layer`` (default: one z cell).
    Sides are far-field, bottom bathymetry, top free surface.
    """
    if top_layer is None:
        zs = np.linspace(-depth, 0, nz + 1)
    else:
        zs = np.concatenate([np.linspace(-depth, -top_layer, nz), [0.0]])
    xs = np.linspace(0, lx, nx + 1)
    ys = np.linspace(0, ly, ny + 1)
    tagger = _Tagger(depth, (0, lx), (0, ly), sym_x=False, sym_y=False)
    return hexes_to_hybrid(_cartesian_hexes(xs, ys, zs), tagger, name=name)


def refine_box_tank(lx, ly, depth, level, base=(2, 2, 2)):
    """Nested family member: base counts times 2**level in every direction."""
    f = 2 ** level
    return box_tank(lx, ly, depth, base[0] * f, base[1] * f, base[2] * f,
                    name=f"box-tank-L{level}")


def box_body_tank(half_length=1.0, half_width=1.0, draft=1.0, x_out=4.0, y_out=4.0, depth=3.0,
                  n_body=2, n_out=3, growth=1.3, nz_body=2, nz_below=2, top_layer=0.25,
                  chamber=None, quarter=True, name="box-body"):
    """Quarter (or full, by mirroring) tank with a surface-piercing box body.

    ``chamber=(cx, cy)`` opens a moonpool of half-sizes (cx, cy) through the
    body; its water-plane lid at z=0 is tagged ``special1``.
    """
    if top_layer >= draft:
        raise ParameterError("top layer must be thinner than the draft")
    bx = [0.0]
    cnt_x = []
    if chamber is not None:
        bx.append(chamber[0])
        cnt_x.append(1)
        if half_length <= chamber[0]:
            raise ParameterError("chamber must lie inside the body")
    bx += [half_length, x_out]
    cnt_x += [n_body, n_out]
    gx = [1.0] * (len(cnt_x) - 1) + [growth]
    by = [0.0]
    cnt_y = []
    if chamber is not None:
        by.append(chamber[1])
        cnt_y.append(1)
    by += [half_width, y_out]
    cnt_y += [n_body, n_out]
    xs = segment_lines(bx, cnt_x, gx)
    ys = segment_lines(by, cnt_y, gx)
    zs = segment_lines([-depth, -draft, -top_layer, 0.0], [nz_below, nz_body, 1],
                       [1.0 / growth, 1.0, 1.0])

    def fluid(c):
        inside = (abs(c[0]) < half_length) and (abs(c[1]) < half_width) and c[2] > -draft
        if inside and chamber is not None and abs(c[0]) < chamber[0] and abs(c[1]) < chamber[1]:
            return True
        return not inside

    region = None
    if chamber is not None:
        cx, cy = chamber

        def region(x, y):
            return abs(x) < cx and abs(y) < cy

    tagger = _Tagger(depth, (0, x_out), (0, y_out), sym_x=True, sym_y=True, special_region=region)
    mesh = hexes_to_hybrid(_cartesian_hexes(xs, ys, zs, keep=fluid), tagger,
                           name=name + ("-quarter" if quarter else ""))
    return mesh if quarter else full_from_quarter(mesh)


# ---------------------------------------------------------------------------
# sphere meshes (cubed-sphere shell + Cartesian surroundings)
# ---------------------------------------------------------------------------

def _shell_hexes(faces, lam, project):
    """Hexes between projected surface points and cube-face grids.

    ``faces`` is a list of (n_u+1, n_v+1, 3) arrays of cube-surface grid points.
    """
    out = []
    for G in faces:
        S = project(G.reshape(-1, 3)).reshape(G.shape)
        layers = [S + l * (G - S) for l in lam]
        for l in range(len(lam) - 1):
            A, B = layers[l], layers[l + 1]
            for i in range(G.shape[0] - 1):
                for j in range(G.shape[1] - 1):
                    out.append([A[i, j], A[i + 1, j], A[i + 1, j + 1], A[i, j + 1],
                                B[i, j], B[i + 1, j], B[i + 1, j + 1], B[i, j + 1]])
    return np.array(out).reshape(-1, 8, 3)


def _radial_levels(n, grading):
    w = grading ** np.arange(n)
    return np.concatenate([[0.0], np.cumsum(w) / w.sum()])


def sphere_tank(radius=1.0, depth=3.0, extent=4.0, cube=2.0, n_cube=4, n_shell=3,
                n_out=3, nz_out=2, growth=1.3, shell_grading=1.4, top_layer=0.1,
                submerged_depth=None, geometry_order=1, quarter=True, name=None):
    """Quarter tank around a floating hemisphere-like body or a submerged sphere.

    Floating: the body is a vertical band of radius ``radius`` and height
    ``top_layer`` over a half-ellipsoid of equal radius and total draft
    ``radius`` (so the water-plane prism layer is vertical at the body).
    Submerged: an exact sphere centred at ``z = -submerged_depth``.
    """
    R, A = radius, cube
    if A <= R * 1.05:
        raise ParameterError("cube must enclose the sphere")
    floating = submerged_depth is None
    xs_in = np.linspace(0, A, n_cube + 1)
    xs = np.concatenate([xs_in, segment_lines([A, extent], [n_out], [growth])[1:]])
    if floating:
        if top_layer >= R:
            raise ParameterError("top layer must be thinner than the draft")
        z_lo, z_hi = -A, -top_layer
        centre = np.array([0.0, 0.0, -top_layer])
        semi_z = R - top_layer
        zs_in = np.linspace(z_lo, z_hi, n_cube + 1)
        zs = np.concatenate([segment_lines([-depth, z_lo], [nz_out], [1 / growth])[:-1],
                             zs_in, [0.0]])

        def project(p):
            q = p - centre
            t = 1.0 / np.sqrt((q[:, 0] ** 2 + q[:, 1] ** 2) / R ** 2 + (q[:, 2] / semi_z) ** 2)
            band = p[:, 2] > -top_layer + 1e-12 * R
            out = centre + t[:, None] * q
            if np.any(band):
                rho = np.hypot(p[band, 0], p[band, 1])
                out[band, 0] = p[band, 0] * R / rho
                out[band, 1] = p[band, 1] * R / rho
                out[band, 2] = p[band, 2]
            return out
    else:
        d = submerged_depth
        z_lo, z_hi = -d - A, -d + A
        if z_hi >= -top_layer or z_lo <= -depth:
            raise ParameterError("submerged sphere cube must fit between bottom and top layer")
        centre = np.array([0.0, 0.0, -d])
        zs_in = np.linspace(z_lo, z_hi, 2 * n_cube + 1)
        zs = np.concatenate([segment_lines([-depth, z_lo], [nz_out], [1 / growth])[:-1], zs_in,
                             segment_lines([z_hi, -top_layer], [max(1, nz_out)], [1.0])[1:],
                             [0.0]])

        def project(p):
            q = p - centre
            return centre + R * q / np.linalg.norm(q, axis=1)[:, None]

    faces = []
    Yg, Zg = np.meshgrid(xs_in, zs_in, indexing="ij")
    faces.append(np.stack([np.full_like(Yg, A), Yg, Zg], axis=-1))       # x = A
    faces.append(np.stack([Yg, np.full_like(Yg, A), Zg], axis=-1))       # y = A
    Xg, Yb = np.meshgrid(xs_in, xs_in, indexing="ij")
    faces.append(np.stack([Xg, Yb, np.full_like(Xg, z_lo)], axis=-1))    # bottom
    if not floating:
        faces.append(np.stack([Xg, Yb, np.full_like(Xg, z_hi)], axis=-1))  # top
    lam = _radial_levels(n_shell, shell_grading)
    shell = _shell_hexes(faces, lam, project)

    def outside_cube(c):
        return not (c[0] < A and c[1] < A and z_lo < c[2] < z_hi)

    below = _cartesian_hexes(xs, xs, zs[:-1], keep=outside_cube)
    hexes = np.concatenate([shell, below])
    # extrude every face lying at the top-layer level up to z = 0
    zt = zs[-2]
    tol = 1e-9 * extent
    top = []
    for h in hexes:
        for f in _HEX_FACES:
            q = h[list(f)]
            if np.all(np.abs(q[:, 2] - zt) < tol):
                q = q.copy()
                # orient counter-clockwise seen from above
                area = np.cross(q[1] - q[0], q[2] - q[0])[2]
                if area < 0:
                    q = q[::-1]
                up = q.copy()
                up[:, 2] = 0.0
                top.append(np.vstack([q, up]))
    hexes = np.concatenate([hexes, np.array(top)])
    tagger = _Tagger(depth, (0, extent), (0, extent), sym_x=True, sym_y=True)
    if name is None:
        name = ("sphere-floating" if floating else "sphere-submerged") + "-quarter"
    mesh = hexes_to_hybrid(hexes, tagger, name=name, project=project,
                           geometry_order=geometry_order)
    return mesh if quarter else full_from_quarter(mesh)
