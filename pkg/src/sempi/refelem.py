"""Reference tetrahedra and prisms: nodes, orthonormal modal bases, quadrature.

Reference domains are bi-unit:

* tet: ``r, s, t >= -1`` and ``r + s + t <= -1`` (volume 4/3)
* prism: ``(r, s)`` in the bi-unit triangle, ``t`` in ``[-1, 1]`` (volume 4),
  with ``t`` running upward (bottom triangle at ``t = -1``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, roots_jacobi

from .errors import DomainError, GeometryError, ParameterError

log = logging.getLogger(__name__)

MAX_ORDER = 10
SHAPES = ("tet", "prism")

# warp-and-blend optimised blending parameters for the tetrahedron, order 1..15
_TET_ALPHA = (0.0, 0.0, 0.0, 0.1002, 1.1332, 1.5608, 1.3413, 1.2577, 1.1603,
              1.10153, 0.6080, 0.4523, 0.8856, 0.8717, 0.9655)

TET_VERTICES = np.array([[-1.0, -1.0, -1.0], [1.0, -1.0, -1.0],
                         [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
PRISM_VERTICES = np.array([[-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0],
                           [-1.0, -1.0, 1.0], [1.0, -1.0, 1.0], [-1.0, 1.0, 1.0]])

# local faces as tuples of local vertex ids; quads listed cyclically
TET_FACES = ((0, 1, 2), (0, 1, 3), (1, 2, 3), (0, 2, 3))
PRISM_FACES = ((0, 1, 2), (3, 4, 5), (0, 1, 4, 3), (1, 2, 5, 4), (0, 2, 5, 3))
PRISM_TOP_FACE = 1
PRISM_BOTTOM_FACE = 0

_S3 = 1.0 / np.sqrt(3.0)
_S2 = 1.0 / np.sqrt(2.0)
TET_FACE_NORMALS = np.array([[0, 0, -1.0], [0, -1.0, 0], [_S3, _S3, _S3], [-1.0, 0, 0]])
PRISM_FACE_NORMALS = np.array([[0, 0, -1.0], [0, 0, 1.0], [0, -1.0, 0],
                               [_S2, _S2, 0], [-1.0, 0, 0]])


# ---------------------------------------------------------------------------
# one-dimensional building blocks
# ---------------------------------------------------------------------------

def jacobi(x, alpha, beta, n):
    """Orthonormal Jacobi polynomial P_n^(alpha,beta) evaluated at x."""
    return jacobi_all(x, alpha, beta, n)[n]


def jacobi_all(x, alpha, beta, n):
    """All orthonormal Jacobi polynomials up to degree n, shape (n+1, len(x))."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((n + 1,) + x.shape)
    ab = alpha + beta
    lg0 = (ab + 1) * np.log(2.0) - np.log(ab + 1) + gammaln(alpha + 1) + gammaln(beta + 1) \
        - gammaln(ab + 1)
    gamma0 = np.exp(lg0)
    out[0] = 1.0 / np.sqrt(gamma0)
    if n == 0:
        return out
    gamma1 = (alpha + 1) * (beta + 1) / (ab + 3) * gamma0
    out[1] = ((ab + 2) * x / 2 + (alpha - beta) / 2) / np.sqrt(gamma1)
    aold = 2.0 / (2 + ab) * np.sqrt((alpha + 1) * (beta + 1) / (ab + 3))
    for i in range(1, n):
        h1 = 2 * i + ab
        anew = 2.0 / (h1 + 2) * np.sqrt((i + 1) * (i + 1 + ab) * (i + 1 + alpha)
                                        * (i + 1 + beta) / (h1 + 1) / (h1 + 3))
        bnew = -(alpha ** 2 - beta ** 2) / h1 / (h1 + 2)
        out[i + 1] = (-aold * out[i - 1] + (x - bnew) * out[i]) / anew
        aold = anew
    return out


def grad_jacobi(x, alpha, beta, n):
    """Derivative of the orthonormal Jacobi polynomial."""
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.zeros_like(x)
    return np.sqrt(n * (n + alpha + beta + 1)) * jacobi(x, alpha + 1, beta + 1, n - 1)


def gauss_jacobi(n, alpha=0.0, beta=0.0):
    """n-point Gauss-Jacobi rule on [-1, 1] for weight (1-x)^alpha (1+x)^beta."""
    if n == 1:
        x0 = (beta - alpha) / (alpha + beta + 2)
        w0 = 2 ** (alpha + beta + 1) * np.exp(gammaln(alpha + 1) + gammaln(beta + 1)
                                                - gammaln(alpha + beta + 2))
        return np.array([x0]), np.array([w0])
    x, w = roots_jacobi(n, alpha, beta)
    return x, w


def gauss_lobatto(p):
    """Legendre-Gauss-Lobatto points (p+1 of them) on [-1, 1], ascending."""
    if p == 1:
        return np.array([-1.0, 1.0])
    xi, _ = gauss_jacobi(p - 1, 1.0, 1.0)
    return np.concatenate(([-1.0], np.sort(xi), [1.0]))


# ---------------------------------------------------------------------------
# node distributions
# ---------------------------------------------------------------------------

def _warp_factor(p, xout):
    # interpolant of (GL - equidistant) displacement, Warburton's evalwarp
    xeq = np.array([-1.0 + 2.0 * (p - i) / p for i in range(p + 1)])
    xgl = -gauss_lobatto(p)
    warp = np.zeros_like(xout)
    for i in range(p + 1):
        d = np.full_like(xout, xgl[i] - xeq[i])
        for j in range(1, p):
            if i != j:
                d = d * (xout - xeq[j]) / (xeq[i] - xeq[j])
        if i != 0:
            d = -d / (xeq[i] - xeq[0])
        if i != p:
            d = d / (xeq[i] - xeq[p])
        warp = warp + d
    return warp


def _eval_shift(p, pval, l1, l2, l3):
    blend1, blend2, blend3 = l2 * l3, l1 * l3, l1 * l2
    w1 = 4 * _warp_factor(p, l3 - l2)
    w2 = 4 * _warp_factor(p, l1 - l3)
    w3 = 4 * _warp_factor(p, l2 - l1)
    warp1 = blend1 * w1 * (1 + (pval * l1) ** 2)
    warp2 = blend2 * w2 * (1 + (pval * l2) ** 2)
    warp3 = blend3 * w3 * (1 + (pval * l3) ** 2)
    dx = warp1 + np.cos(2 * np.pi / 3) * warp2 + np.cos(4 * np.pi / 3) * warp3
    dy = np.sin(2 * np.pi / 3) * warp2 + np.sin(4 * np.pi / 3) * warp3
    return dx, dy


def _equidistant_tet(p):
    pts = []
    for n in range(p + 1):
        for m in range(p + 1 - n):
            for q in range(p + 1 - n - m):
                pts.append((-1 + 2.0 * q / p, -1 + 2.0 * m / p, -1 + 2.0 * n / p))
    return np.array(pts)


@lru_cache(maxsize=None)
def tet_nodes(p):
    """Warp-and-blend nodes on the reference tet; vertices come first for p=1."""
    if p < 1:
        raise ParameterError(f"order must be >= 1, got {p}")
    alpha = _TET_ALPHA[p - 1] if p <= len(_TET_ALPHA) else 1.0
    tol = 1e-10
    rst = _equidistant_tet(p)
    r, s, t = rst.T
    L1 = (1 + t) / 2
    L2 = (1 + s) / 2
    L3 = -(1 + r + s + t) / 2
    L4 = (1 + r) / 2
    v1 = np.array([-1.0, -1 / np.sqrt(3), -1 / np.sqrt(6)])
    v2 = np.array([1.0, -1 / np.sqrt(3), -1 / np.sqrt(6)])
    v3 = np.array([0.0, 2 / np.sqrt(3), -1 / np.sqrt(6)])
    v4 = np.array([0.0, 0.0, 3 / np.sqrt(6)])
    t1 = np.array([v2 - v1, v2 - v1, v3 - v2, v3 - v1])
    t2 = np.array([v3 - 0.5 * (v1 + v2), v4 - 0.5 * (v1 + v2),
                   v4 - 0.5 * (v2 + v3), v4 - 0.5 * (v1 + v3)])
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 /= np.linalg.norm(t2, axis=1)[:, None]
    xyz = np.outer(L3, v1) + np.outer(L4, v2) + np.outer(L2, v3) + np.outer(L1, v4)
    shift = np.zeros_like(xyz)
    faces = ((L1, L2, L3, L4), (L2, L1, L3, L4), (L3, L1, L4, L2), (L4, L1, L3, L2))
    for face, (La, Lb, Lc, Ld) in enumerate(faces):
        warp1, warp2 = _eval_shift(p, alpha, Lb, Lc, Ld)
        blend = Lb * Lc * Ld
        denom = (Lb + 0.5 * La) * (Lc + 0.5 * La) * (Ld + 0.5 * La)
        ids = denom > tol
        blend[ids] = (1 + (alpha * La[ids]) ** 2) * blend[ids] / denom[ids]
        shift += np.outer(blend * warp1, t1[face]) + np.outer(blend * warp2, t2[face])
        on_face = (La < tol) & ((Lb > tol).astype(int) + (Lc > tol) + (Ld > tol) < 3)
        shift[on_face] = np.outer(warp1[on_face], t1[face]) \
            + np.outer(warp2[on_face], t2[face])
    xyz += shift
    rhs = xyz - 0.5 * (v2 + v3 + v4 - v1)
    A = np.column_stack([0.5 * (v2 - v1), 0.5 * (v3 - v1), 0.5 * (v4 - v1)])
    out = np.linalg.solve(A, rhs.T).T
    out[np.abs(out + 1) < 1e-13] = -1.0
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def tri_nodes(p):
    """Triangle nodes, taken as the t=-1 face of the tet set so faces conform."""
    rst = tet_nodes(p)
    on = np.abs(rst[:, 2] + 1) < 1e-12
    out = rst[on, :2].copy()
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def prism_nodes(p):
    """Tensor nodes: triangle nodes (horizontal) x Gauss-Lobatto (vertical)."""
    tri = tri_nodes(p)
    z = gauss_lobatto(p)
    out = np.array([(a, b, c) for c in z for a, b in tri])
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# orthonormal modal bases
# ---------------------------------------------------------------------------

def _collapse_tri(r, s):
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(np.abs(1 - s) > 1e-14, 2 * (1 + r) / (1 - s) - 1, -1.0)
    return a, s


def _collapse_tet(r, s, t):
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(np.abs(s + t) > 1e-14, 2 * (1 + r) / (-s - t) - 1, -1.0)
        b = np.where(np.abs(t - 1) > 1e-14, 2 * (1 + s) / (1 - t) - 1, -1.0)
    return a, b, t


def tri_modes(p):
    return [(i, j) for i in range(p + 1) for j in range(p + 1 - i)]


def tet_modes(p):
    return [(i, j, k) for i in range(p + 1) for j in range(p + 1 - i)
            for k in range(p + 1 - i - j)]


def prism_modes(p):
    return [(i, j, k) for i, j in tri_modes(p) for k in range(p + 1)]


def tri_basis(r, s, p):
    """Dubiner basis and its (r, s) gradients, each shaped (npts, nmodes)."""
    a, b = _collapse_tri(r, s)
    modes = tri_modes(p)
    val = np.zeros((len(r), len(modes)))
    dr = np.zeros_like(val)
    ds = np.zeros_like(val)
    for m, (i, j) in enumerate(modes):
        fa, dfa = jacobi(a, 0, 0, i), grad_jacobi(a, 0, 0, i)
        gb, dgb = jacobi(b, 2 * i + 1, 0, j), grad_jacobi(b, 2 * i + 1, 0, j)
        val[:, m] = np.sqrt(2.0) * fa * gb * (1 - b) ** i
        ddr = dfa * gb
        dds = dfa * gb * (0.5 * (1 + a))
        if i > 0:
            ddr = ddr * (0.5 * (1 - b)) ** (i - 1)
            dds = dds * (0.5 * (1 - b)) ** (i - 1)
        tmp = dgb * (0.5 * (1 - b)) ** i
        if i > 0:
            tmp = tmp - 0.5 * i * gb * (0.5 * (1 - b)) ** (i - 1)
        dds = dds + fa * tmp
        dr[:, m] = 2 ** (i + 0.5) * ddr
        ds[:, m] = 2 ** (i + 0.5) * dds
    return val, dr, ds


def tet_basis(r, s, t, p):
    """Orthonormal tet basis and (r, s, t) gradients, each (npts, nmodes)."""
    a, b, c = _collapse_tet(r, s, t)
    modes = tet_modes(p)
    val = np.zeros((len(r), len(modes)))
    dr = np.zeros_like(val)
    ds = np.zeros_like(val)
    dt = np.zeros_like(val)
    for m, (i, j, k) in enumerate(modes):
        fa, dfa = jacobi(a, 0, 0, i), grad_jacobi(a, 0, 0, i)
        gb, dgb = jacobi(b, 2 * i + 1, 0, j), grad_jacobi(b, 2 * i + 1, 0, j)
        hc = jacobi(c, 2 * (i + j) + 2, 0, k)
        dhc = grad_jacobi(c, 2 * (i + j) + 2, 0, k)
        val[:, m] = 2 * np.sqrt(2.0) * fa * gb * (1 - b) ** i * hc * (1 - c) ** (i + j)
        vr = dfa * gb * hc
        if i > 0:
            vr = vr * (0.5 * (1 - b)) ** (i - 1)
        if i + j > 0:
            vr = vr * (0.5 * (1 - c)) ** (i + j - 1)
        vs = 0.5 * (1 + a) * vr
        tmp = dgb * (0.5 * (1 - b)) ** i
        if i > 0:
            tmp = tmp + (-0.5 * i) * gb * (0.5 * (1 - b)) ** (i - 1)
        if i + j > 0:
            tmp = tmp * (0.5 * (1 - c)) ** (i + j - 1)
        tmp = fa * tmp * hc
        vs = vs + tmp
        vt = 0.5 * (1 + a) * vr + 0.5 * (1 + b) * tmp
        tmp = dhc * (0.5 * (1 - c)) ** (i + j)
        if i + j > 0:
            tmp = tmp - 0.5 * (i + j) * hc * (0.5 * (1 - c)) ** (i + j - 1)
        tmp = fa * gb * tmp * (0.5 * (1 - b)) ** i
        vt = vt + tmp
        scale = 2 ** (2 * i + j + 1.5)
        dr[:, m], ds[:, m], dt[:, m] = scale * vr, scale * vs, scale * vt
    return val, dr, ds, dt


def prism_basis(r, s, t, p):
    """Dubiner(r, s) x Legendre(t) basis and gradients, each (npts, nmodes)."""
    tv, tr, ts = tri_basis(r, s, p)
    leg = jacobi_all(t, 0, 0, p)
    dleg = np.array([grad_jacobi(t, 0, 0, k) for k in range(p + 1)])
    tmodes = tri_modes(p)
    n = len(tmodes) * (p + 1)
    val = np.zeros((len(r), n))
    dr = np.zeros_like(val)
    ds = np.zeros_like(val)
    dt = np.zeros_like(val)
    m = 0
    for q in range(len(tmodes)):
        for k in range(p + 1):
            val[:, m] = tv[:, q] * leg[k]
            dr[:, m] = tr[:, q] * leg[k]
            ds[:, m] = ts[:, q] * leg[k]
            dt[:, m] = tv[:, q] * dleg[k]
            m += 1
    return val, dr, ds, dt


def modal_basis(shape, rst, p):
    rst = np.atleast_2d(rst)
    if shape == "tet":
        return tet_basis(rst[:, 0], rst[:, 1], rst[:, 2], p)
    if shape == "prism":
        return prism_basis(rst[:, 0], rst[:, 1], rst[:, 2], p)
    raise ParameterError(f"unsupported shape {shape!r}")


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def _npts_for_degree(degree):
    return degree // 2 + 1


@lru_cache(maxsize=None)
def tri_quadrature(degree):
    """Collapsed Gauss-Jacobi rule on the bi-unit triangle, exact to degree."""
    n = _npts_for_degree(degree)
    xa, wa = gauss_jacobi(n, 0.0, 0.0)
    xb, wb = gauss_jacobi(n, 1.0, 0.0)
    A, B = np.meshgrid(xa, xb, indexing="ij")
    W = np.outer(wa, wb) / 2.0
    r = (1 + A) * (1 - B) / 2 - 1
    return np.column_stack([r.ravel(), B.ravel()]), W.ravel()


@lru_cache(maxsize=None)
def quad_quadrature(degree):
    n = _npts_for_degree(degree)
    x, w = gauss_jacobi(n, 0.0, 0.0)
    U, V = np.meshgrid(x, x, indexing="ij")
    return np.column_stack([U.ravel(), V.ravel()]), np.outer(w, w).ravel()


@lru_cache(maxsize=None)
def tet_quadrature(degree):
    """Stroud conical-product rule on the bi-unit tet, positive weights."""
    n = _npts_for_degree(degree)
    xa, wa = gauss_jacobi(n, 0.0, 0.0)
    xb, wb = gauss_jacobi(n, 1.0, 0.0)
    xc, wc = gauss_jacobi(n, 2.0, 0.0)
    A, B, C = np.meshgrid(xa, xb, xc, indexing="ij")
    W = np.einsum("i,j,k->ijk", wa, wb, wc) / 8.0
    t = C
    s = (1 + B) * (1 - C) / 2 - 1
    r = (1 + A) * (1 - B) * (1 - C) / 4 - 1
    return np.column_stack([r.ravel(), s.ravel(), t.ravel()]), W.ravel()


@lru_cache(maxsize=None)
def prism_quadrature(degree):
    tri, wt = tri_quadrature(degree)
    n = _npts_for_degree(degree)
    z, wz = gauss_jacobi(n, 0.0, 0.0)
    pts = np.array([(a, b, c) for a, b in tri for c in z])
    w = np.outer(wt, wz).ravel()
    return pts, w


def volume_quadrature(shape, degree):
    if shape == "tet":
        return tet_quadrature(degree)
    if shape == "prism":
        return prism_quadrature(degree)
    raise ParameterError(f"unsupported shape {shape!r}")


# ---------------------------------------------------------------------------
# reference element
# ---------------------------------------------------------------------------

def reference_volume(shape):
    return {"tet": 4.0 / 3.0, "prism": 4.0}[shape]


def reference_vertices(shape):
    return {"tet": TET_VERTICES, "prism": PRISM_VERTICES}[shape]


def reference_faces(shape):
    return {"tet": TET_FACES, "prism": PRISM_FACES}[shape]


def reference_face_normals(shape):
    return {"tet": TET_FACE_NORMALS, "prism": PRISM_FACE_NORMALS}[shape]


def vertex_weights(shape, rst):
    """Linear (tet) or linear-in-t times linear triangle (prism) vertex weights."""
    r, s, t = np.atleast_2d(rst).T
    if shape == "tet":
        return np.column_stack([-(1 + r + s + t) / 2, (1 + r) / 2, (1 + s) / 2, (1 + t) / 2])
    mu = np.column_stack([-(r + s) / 2, (1 + r) / 2, (1 + s) / 2])
    lo, hi = (1 - t) / 2, (1 + t) / 2
    return np.column_stack([mu * lo[:, None], mu * hi[:, None]])


def inside_reference(shape, rst, tol=1e-10):
    r, s, t = np.atleast_2d(rst).T
    if shape == "tet":
        return (r >= -1 - tol) & (s >= -1 - tol) & (t >= -1 - tol) & (r + s + t <= -1 + tol)
    return (r >= -1 - tol) & (s >= -1 - tol) & (r + s <= tol) & (np.abs(t) <= 1 + tol)


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    shape: str
    order: int
    nodes: np.ndarray
    vandermonde: np.ndarray
    inv_vandermonde: np.ndarray
    diff_ops: tuple
    quad_points: np.ndarray
    quad_weights: np.ndarray
    quad_basis: np.ndarray          # (nq, np) nodal basis at quadrature points
    quad_grad: np.ndarray           # (3, nq, np) reference gradients there
    face_nodes: tuple = field(repr=False)
    node_vertex_weights: np.ndarray = field(repr=False)
    condition: float = 0.0

    @property
    def n_nodes(self):
        return len(self.nodes)

    def basis_at(self, rst):
        """Nodal basis values (npts, np) and reference gradients (3, npts, np)."""
        val, dr, ds, dt = modal_basis(self.shape, rst, self.order)
        iv = self.inv_vandermonde
        return val @ iv, np.stack([dr @ iv, ds @ iv, dt @ iv])


def _node_count(shape, p):
    if shape == "tet":
        return (p + 1) * (p + 2) * (p + 3) // 6
    return (p + 1) * (p + 1) * (p + 2) // 2


@lru_cache(maxsize=None)
def build_reference(shape, order, quad_degree=None):
    """Build (and cache) the reference element of given shape and order."""
    if shape not in SHAPES:
        raise ParameterError(f"unsupported shape {shape!r}")
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= MAX_ORDER:
        raise ParameterError(f"order must be an integer in [1, {MAX_ORDER}], got {order!r}")
    order = int(order)
    nodes = tet_nodes(order) if shape == "tet" else prism_nodes(order)
    assert len(nodes) == _node_count(shape, order)
    V, Vr, Vs, Vt = modal_basis(shape, nodes, order)
    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond):
        raise GeometryError(f"singular Vandermonde for {shape} P={order}")
    log.debug("vandermonde %s P=%d cond=%.3e", shape, order, cond)
    iV = np.linalg.inv(V)
    diff = tuple(D @ iV for D in (Vr, Vs, Vt))
    if quad_degree is None:
        quad_degree = 2 * order + 1
    qp, qw = volume_quadrature(shape, quad_degree)
    qv, qr, qs, qt = modal_basis(shape, qp, order)
    faces = []
    normals = reference_face_normals(shape)
    verts = reference_vertices(shape)
    for f, fv in enumerate(reference_faces(shape)):
        # node is on the face plane through the first face vertex
        d = (nodes - verts[fv[0]]) @ normals[f]
        faces.append(tuple(np.nonzero(np.abs(d) < 1e-10)[0]))
    for arr in (nodes, V, iV, *diff, qp, qw):
        arr.flags.writeable = False
    return ReferenceElement(
        shape=shape, order=order, nodes=nodes, vandermonde=V, inv_vandermonde=iV,
        diff_ops=diff, quad_points=qp, quad_weights=qw, quad_basis=qv @ iV,
        quad_grad=np.stack([qr @ iV, qs @ iV, qt @ iV]), face_nodes=tuple(faces),
        node_vertex_weights=vertex_weights(shape, nodes), condition=cond)


def interpolate(ref: ReferenceElement, values, targets, tol=1e-10):
    """Evaluate the nodal interpolant with given nodal values at reference targets."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if not np.all(inside_reference(ref.shape, targets, tol)):
        raise DomainError("interpolation target outside the reference element")
    h, _ = ref.basis_at(targets)
    return h @ np.asarray(values)


# ---------------------------------------------------------------------------
# element maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ElementMap:
    """Jacobians of x(r) for a batch of elements at a set of reference points.

    ``jacobian[e, q, a, b] = dx_a / dr_b``.
    """
    jacobian: np.ndarray
    det: np.ndarray
    inv_t: np.ndarray      # inverse-transpose, maps reference to physical gradients


def geometric_factors(geo_ref: ReferenceElement, geo_nodes, points=None):
    """Element maps for elements whose geometry nodes are given in the node order
    of ``geo_ref`` (shape (E, n_geo, 3) or (n_geo, 3)); evaluated at ``points``
    (defaults to the quadrature points of ``geo_ref``)."""
    X = np.asarray(geo_nodes, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1] != geo_ref.n_nodes:
        raise ParameterError("geometry node count does not match reference element")
    if points is None:
        dG = geo_ref.quad_grad
    else:
        _, dG = geo_ref.basis_at(points)
    J = np.einsum("ega,bqg->eqab", X, dG)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        bad = np.unique(np.nonzero(det <= 0)[0])
        raise GeometryError(f"non-positive Jacobian in element(s) {bad[:10].tolist()}")
    inv_t = np.swapaxes(np.linalg.inv(J), -1, -2)
    return ElementMap(jacobian=J, det=det, inv_t=inv_t)


# ---------------------------------------------------------------------------
# face quadrature
# ---------------------------------------------------------------------------

def _face_is_quad(shape, face):
    return len(reference_faces(shape)[face]) == 4


@lru_cache(maxsize=None)
def face_quadrature(shape, face, degree):
    """Quadrature on one reference face, returned as volume coordinates.

    Returns ``(points, weights, normal)`` where ``weights`` already include the
    reference-face area scaling and ``normal`` is the unit outward reference
    normal of the face.
    """
    verts = reference_vertices(shape)[list(reference_faces(shape)[face])]
    if len(verts) == 3:
        uv, w = tri_quadrature(degree)
        lam = np.column_stack([-(uv[:, 0] + uv[:, 1]) / 2, (1 + uv[:, 0]) / 2, (1 + uv[:, 1]) / 2])
        scale = np.linalg.norm(np.cross(verts[1] - verts[0], verts[2] - verts[0])) / 4
    else:
        uv, w = quad_quadrature(degree)
        u, v = uv.T
        lam = np.column_stack([(1 - u) * (1 - v), (1 + u) * (1 - v),
                               (1 + u) * (1 + v), (1 - u) * (1 + v)]) / 4
        scale = np.linalg.norm(verts[1] - verts[0]) * np.linalg.norm(verts[3] - verts[0]) / 4
    pts = lam @ verts
    pts.flags.writeable = False
    return pts, w * scale, reference_face_normals(shape)[face].copy()
