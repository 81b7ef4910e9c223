"""Hybrid prism/tet meshes: MSH 4.1 ingestion, validation, stretching, geometric queries.

Element ids are global: tets come first (``0 .. n_tets-1``), then prisms.
Prisms store the bottom triangle followed by the top triangle, vertically
aligned, with the top at ``z = 0``.
"""
from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from . import refelem
from .errors import (DomainError, GeometryError, ParameterError, ParseError,
                     TaggingError, TopologyError)

log = logging.getLogger(__name__)

TEXT_FORMAT_VERSION = 1


class TagKind(enum.Enum):
    FREE_SURFACE = "freesurface"
    BATHYMETRY = "bathymetry"
    FAR_FIELD = "farfield"
    BODY = "body"
    SYM_X = "symx"
    SYM_Y = "symy"
    SPECIAL = "special"


@dataclass(frozen=True, order=True)
class BoundaryTag:
    kind: TagKind = field(compare=False)
    index: int = 0
    name: str = field(default="", compare=True)

    def __post_init__(self):
        if self.kind is TagKind.SPECIAL and self.index < 1:
            raise TaggingError("special boundary index must be >= 1")
        if self.kind is not TagKind.SPECIAL and self.index != 0:
            raise TaggingError(f"{self.kind.value} takes no index")
        object.__setattr__(self, "name", self.kind.value + (str(self.index) if self.index else ""))

    @classmethod
    def from_name(cls, name):
        key = name.strip().strip('"').lower()
        m = re.fullmatch(r"special(\d+)", key)
        if m:
            return cls(TagKind.SPECIAL, int(m.group(1)))
        for kind in TagKind:
            if kind is not TagKind.SPECIAL and kind.value == key:
                return cls(kind)
        raise TaggingError(f"unknown boundary name {name!r}")

    def __str__(self):
        return self.name


FREE_SURFACE = BoundaryTag(TagKind.FREE_SURFACE)
BATHYMETRY = BoundaryTag(TagKind.BATHYMETRY)
FAR_FIELD = BoundaryTag(TagKind.FAR_FIELD)
BODY = BoundaryTag(TagKind.BODY)
SYM_X = BoundaryTag(TagKind.SYM_X)
SYM_Y = BoundaryTag(TagKind.SYM_Y)


def special(i):
    return BoundaryTag(TagKind.SPECIAL, i)


def as_tag(tag):
    return tag if isinstance(tag, BoundaryTag) else BoundaryTag.from_name(str(tag))


@dataclass(frozen=True)
class StretchSpec:
    """Geometric grid stretching beyond ``start`` along an axis.

    ``spacing`` is the reference layer width; it is inferred from the mesh
    (smallest coordinate gap beyond ``start``) when not given.
    """
    axis: str
    start: float
    ratio: float
    spacing: float | None = None
    both_sides: bool = True

    def __post_init__(self):
        if self.axis not in ("x", "y", "radial"):
            raise ParameterError(f"unknown stretching axis {self.axis!r}")
        if not self.ratio > 1.0:
            raise ParameterError(f"stretch ratio must exceed 1, got {self.ratio}")
        if self.spacing is not None and not self.spacing > 0:
            raise ParameterError("stretch spacing must be positive")


@dataclass(frozen=True, eq=False)
class FreeSurfaceTrace:
    nodes: np.ndarray          # (n, 2) xy of trace vertices
    triangles: np.ndarray      # (m, 3) indices into nodes
    vertex_map: np.ndarray     # (n,) 3D vertex ids
    prisms: np.ndarray         # (m,) prism index owning each triangle


# reference coordinates of gmsh nodes (in the bi-unit reference) for
# mapping MSH node order onto the P=2 reference node order
_GMSH_TET_EDGES = ((0, 1), (1, 2), (2, 0), (3, 0), (3, 2), (3, 1))
_GMSH_PRISM_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 4), (2, 5), (3, 4), (3, 5), (4, 5))
_GMSH_PRISM_QUADS = ((0, 1, 4, 3), (0, 3, 5, 2), (1, 2, 5, 4))
_GMSH_TRI_EDGES = ((0, 1), (1, 2), (2, 0))
_GMSH_QUAD_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))

_GMSH_TYPES = {4: ("tet", 1), 11: ("tet", 2), 6: ("prism", 1), 13: ("prism", 2),
               2: ("tri", 1), 9: ("tri", 2), 3: ("quad", 1), 10: ("quad", 2)}
_NODES_PER_TYPE = {4: 4, 11: 10, 6: 6, 13: 18, 2: 3, 9: 6, 3: 4, 10: 9, 15: 1, 1: 2, 8: 3}


def _gmsh_reference(shape):
    verts = refelem.reference_vertices(shape)
    if shape == "tet":
        extra = [(verts[a] + verts[b]) / 2 for a, b in _GMSH_TET_EDGES]
    else:
        extra = [(verts[a] + verts[b]) / 2 for a, b in _GMSH_PRISM_EDGES]
        extra += [verts[list(q)].mean(axis=0) for q in _GMSH_PRISM_QUADS]
    return np.vstack([verts, extra])


def _order_maps(shape):
    """perm with my_nodes[i] == gmsh_nodes[perm[i]] for P=2."""
    mine = refelem.build_reference(shape, 2).nodes
    gm = _gmsh_reference(shape)
    d = np.linalg.norm(mine[:, None, :] - gm[None, :, :], axis=2)
    perm = d.argmin(axis=1)
    assert np.all(d[np.arange(len(mine)), perm] < 1e-12)
    return perm


_PERM = {}


def gmsh_to_ref_perm(shape):
    if shape not in _PERM:
        _PERM[shape] = _order_maps(shape)
    return _PERM[shape]


def _face_local_nodes_p2(shape, face):
    """Indices (into P=2 reference nodes) of a face, in gmsh tri6/quad9 order."""
    ref = refelem.build_reference(shape, 2)
    fv = refelem.reference_faces(shape)[face]
    verts = refelem.reference_vertices(shape)[list(fv)]
    pts = list(verts)
    edges = _GMSH_TRI_EDGES if len(fv) == 3 else _GMSH_QUAD_EDGES
    pts += [(verts[a] + verts[b]) / 2 for a, b in edges]
    if len(fv) == 4:
        pts.append(verts.mean(axis=0))
    pts = np.array(pts)
    d = np.linalg.norm(pts[:, None, :] - ref.nodes[None], axis=2)
    return d.argmin(axis=1)


# ---------------------------------------------------------------------------
# the mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HybridMesh:
    vertices: np.ndarray               # (Nv, 3); may also hold high-order geometry nodes
    tets: np.ndarray                   # (Nt, 4)
    prisms: np.ndarray                 # (Np, 6)
    facet_elem: np.ndarray             # (Nf,) global element id
    facet_face: np.ndarray             # (Nf,) local face id
    facet_tag: np.ndarray              # (Nf,) index into tags
    tags: tuple                        # BoundaryTag per tag code
    geometry_order: int = 1
    tet_geometry: np.ndarray | None = None     # (Nt, n_geo) node ids in reference order
    prism_geometry: np.ndarray | None = None
    name: str = ""
    free_surface_trace: FreeSurfaceTrace = field(init=False, repr=False)

    def __post_init__(self):
        V = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        T = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        Pr = np.asarray(self.prisms, dtype=np.int64).reshape(-1, 6)
        fe = np.asarray(self.facet_elem, dtype=np.int64)
        ff = np.asarray(self.facet_face, dtype=np.int64)
        ft = np.asarray(self.facet_tag, dtype=np.int64)
        order = np.lexsort((ff, fe))
        fe, ff, ft = fe[order], ff[order], ft[order]
        tg = self.geometry_order
        if tg not in (1, 2):
            raise ParameterError(f"geometry order must be 1 or 2, got {tg}")
        tgeo = T if self.tet_geometry is None else np.asarray(self.tet_geometry, np.int64)
        pgeo = Pr if self.prism_geometry is None else np.asarray(self.prism_geometry, np.int64)
        if tg == 1:
            tgeo, pgeo = T, Pr
        n_geo = {"tet": 10 if tg == 2 else 4, "prism": 18 if tg == 2 else 6}
        tgeo = tgeo.reshape(len(T), n_geo["tet"])
        pgeo = pgeo.reshape(len(Pr), n_geo["prism"])
        for name, arr in (("vertices", V), ("tets", T), ("prisms", Pr), ("facet_elem", fe),
                          ("facet_face", ff), ("facet_tag", ft), ("tet_geometry", tgeo),
                          ("prism_geometry", pgeo)):
            arr = np.array(arr, copy=True)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "tags", tuple(self.tags))
        self._validate()
        object.__setattr__(self, "free_surface_trace", self._build_trace())

    # -- basic queries -----------------------------------------------------
    @property
    def n_tets(self):
        return len(self.tets)

    @property
    def n_prisms(self):
        return len(self.prisms)

    @property
    def n_elements(self):
        return self.n_tets + self.n_prisms

    @property
    def scale(self):
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo)) or 1.0

    @property
    def boundary_facets(self):
        return [(int(e), int(f), self.tags[t]) for e, f, t in
                zip(self.facet_elem, self.facet_face, self.facet_tag)]

    def tag_code(self, tag):
        tag = as_tag(tag)
        for i, t in enumerate(self.tags):
            if t == tag:
                return i
        return None

    def has_tag(self, tag):
        c = self.tag_code(tag)
        return c is not None and bool(np.any(self.facet_tag == c))

    def facets_with(self, tag):
        """Arrays (element ids, local faces) of facets carrying ``tag``."""
        c = self.tag_code(tag)
        if c is None or not np.any(self.facet_tag == c):
            raise DomainError(f"tag {as_tag(tag)} not present in mesh")
        sel = self.facet_tag == c
        return self.facet_elem[sel], self.facet_face[sel]

    def present_tags(self):
        return tuple(self.tags[c] for c in sorted(set(self.facet_tag.tolist())))

    def geometry_nodes(self, shape):
        """Geometry node coordinates (E, n_geo, 3) in reference node order."""
        ids = self.tet_geometry if shape == "tet" else self.prism_geometry
        return self.vertices[ids]

    def element_shape(self, e):
        return "tet" if e < self.n_tets else "prism"

    def local_index(self, e):
        return e if e < self.n_tets else e - self.n_tets

    def corner_vertices(self):
        used = np.unique(np.concatenate([self.tets.ravel(), self.prisms.ravel()]))
        return used

    # -- validation --------------------------------------------------------
    def _validate(self):
        V, T, Pr = self.vertices, self.tets, self.prisms
        nv = len(V)
        for name, arr in (("tet", T), ("prism", Pr)):
            if arr.size and (arr.min() < 0 or arr.max() >= nv):
                raise TopologyError(f"{name} connectivity references missing vertex")
        scale = self.scale
        if len(Pr):
            zt = V[Pr[:, 3:], 2]
            zb = V[Pr[:, :3], 2]
            bad = np.nonzero(np.abs(zt).max(axis=1) > 1e-12 * scale)[0]
            if len(bad):
                e = int(bad[0])
                raise TopologyError(f"prism {e} (element {e + len(T)}) top is not at z=0",
                                    element=e + len(T))
            dxy = np.abs(V[Pr[:, 3:], :2] - V[Pr[:, :3], :2]).max(axis=(1, 2))
            bad = np.nonzero(dxy > 1e-10 * scale)[0]
            if len(bad):
                e = int(bad[0])
                raise TopologyError(f"prism {e} (element {e + len(T)}) is not vertically extruded",
                                    element=e + len(T))
            bad = np.nonzero(zb.max(axis=1) >= -1e-12 * scale)[0]
            if len(bad):
                e = int(bad[0])
                raise TopologyError(f"prism {e} (element {e + len(T)}) has degenerate height",
                                    element=e + len(T))
            # single layer: a prism bottom face may not coincide with a prism top face
            tops = {tuple(sorted(r)) for r in Pr[:, 3:].tolist()}
            for i, r in enumerate(Pr[:, :3].tolist()):
                if tuple(sorted(r)) in tops:
                    raise TopologyError(f"prism {i} stacks on another prism", element=i + len(T))
        # positive volumes
        for shape, conn in (("tet", T), ("prism", Pr)):
            if not len(conn):
                continue
            vol = _signed_volumes(shape, V[conn])
            bad = np.nonzero(vol <= 0)[0]
            if len(bad):
                e = int(bad[0]) + (0 if shape == "tet" else len(T))
                raise TopologyError(f"element {e} ({shape}) has non-positive volume", element=e)
        # every exterior face carries exactly one tag
        keys, owners = _face_keys(T, Pr)
        uniq, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        if np.any(counts > 2):
            raise TopologyError("non-manifold face shared by more than two elements")
        exterior = counts[inv] == 1
        ext_owner = owners[exterior]
        ext_set = {(int(e), int(f)) for e, f in ext_owner}
        tagged = list(zip(self.facet_elem.tolist(), self.facet_face.tolist()))
        if len(set(tagged)) != len(tagged):
            raise TaggingError("boundary facet carries more than one tag")
        missing = ext_set - set(tagged)
        if missing:
            e, f = sorted(missing)[0]
            raise TaggingError(f"{len(missing)} boundary facet(s) untagged, e.g. element {e} face {f}")
        extra = set(tagged) - ext_set
        if extra:
            e, f = sorted(extra)[0]
            raise TopologyError(f"tagged facet is interior: element {e} face {f}", element=e)
        specials = sorted(t.index for t in self.tags if t.kind is TagKind.SPECIAL)
        if specials and specials != list(range(1, len(specials) + 1)):
            raise TaggingError(f"special boundary indices not contiguous from 1: {specials}")
        fs = self.tag_code(FREE_SURFACE)
        if fs is not None:
            sel = self.facet_tag == fs
            ok = (self.facet_elem[sel] >= len(T)) & (self.facet_face[sel] == refelem.PRISM_TOP_FACE)
            if not np.all(ok):
                raise TopologyError("free-surface facets must be prism tops")

    def _build_trace(self):
        fs = self.tag_code(FREE_SURFACE)
        if fs is None or not np.any(self.facet_tag == fs):
            z = np.zeros((0, 2))
            return FreeSurfaceTrace(z, np.zeros((0, 3), np.int64), np.zeros(0, np.int64),
                                    np.zeros(0, np.int64))
        sel = self.facet_tag == fs
        pids = self.facet_elem[sel] - self.n_tets
        tri3 = self.prisms[pids, 3:]
        vmap, local = np.unique(tri3.ravel(), return_inverse=True)
        return FreeSurfaceTrace(self.vertices[vmap, :2].copy(), local.reshape(-1, 3),
                                vmap, pids)

    def equals(self, other):
        if not isinstance(other, HybridMesh):
            return False
        arrays = ("vertices", "tets", "prisms", "facet_elem", "facet_face",
                  "tet_geometry", "prism_geometry")
        if any(not np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays):
            return False
        mine = [self.tags[t] for t in self.facet_tag]
        theirs = [other.tags[t] for t in other.facet_tag]
        return mine == theirs and self.geometry_order == other.geometry_order

    def summary(self):
        counts = {}
        for t in self.facet_tag.tolist():
            counts[self.tags[t].name] = counts.get(self.tags[t].name, 0) + 1
        return {"name": self.name, "vertices": int(len(self.corner_vertices())),
                "tets": self.n_tets, "prisms": self.n_prisms, "elements": self.n_elements,
                "geometry_order": self.geometry_order, "facets": counts}

    def translated(self, shift):
        return _replace(self, vertices=self.vertices + np.asarray(shift, float))


def _replace(mesh, **kw):
    args = dict(vertices=mesh.vertices, tets=mesh.tets, prisms=mesh.prisms,
                facet_elem=mesh.facet_elem, facet_face=mesh.facet_face,
                facet_tag=mesh.facet_tag, tags=mesh.tags, geometry_order=mesh.geometry_order,
                tet_geometry=mesh.tet_geometry, prism_geometry=mesh.prism_geometry,
                name=mesh.name)
    args.update(kw)
    return HybridMesh(**args)


def _signed_volumes(shape, X):
    if shape == "tet":
        return np.einsum("ij,ij->i", np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]),
                         X[:, 3] - X[:, 0]) / 6
    # split into three tets consistent with the vertex ordering
    parts = ((0, 1, 2, 3), (1, 2, 3, 4), (2, 3, 4, 5))
    vols = [_signed_volumes("tet", X[:, list(p)]) for p in parts]
    return np.min(vols, axis=0) * 3


def _face_keys(T, Pr):
    """Sorted corner-vertex keys (padded with -1) and (element, face) owners."""
    keys, owners = [], []
    nt = len(T)
    for shape, conn, off in (("tet", T, 0), ("prism", Pr, nt)):
        if not len(conn):
            continue
        for f, fv in enumerate(refelem.reference_faces(shape)):
            k = np.sort(conn[:, list(fv)], axis=1)
            if k.shape[1] == 3:
                k = np.column_stack([np.full(len(k), -1), k])
            keys.append(k)
            owners.append(np.column_stack([np.arange(len(conn)) + off, np.full(len(conn), f)]))
    if not keys:
        return np.zeros((0, 4), np.int64), np.zeros((0, 2), np.int64)
    return np.vstack(keys), np.vstack(owners)


# ---------------------------------------------------------------------------
# MSH 4.1 ASCII
# ---------------------------------------------------------------------------

class _Lines:
    def __init__(self, text):
        self.lines = text.splitlines()
        self.i = 0

    def next(self):
        while self.i < len(self.lines):
            line = self.lines[self.i].strip()
            self.i += 1
            if line:
                return line
        raise ParseError("unexpected end of file", self.i)

    @property
    def lineno(self):
        return self.i

    def ints(self):
        line = self.next()
        try:
            return [int(x) for x in line.split()]
        except ValueError:
            raise ParseError(f"expected integers, got {line!r}", self.lineno) from None

    def floats(self):
        line = self.next()
        try:
            return [float(x) for x in line.split()]
        except ValueError:
            raise ParseError(f"expected numbers, got {line!r}", self.lineno) from None

    def expect(self, token):
        line = self.next()
        if line != token:
            raise ParseError(f"expected {token}, got {line!r}", self.lineno)


def parse_msh(text, name=""):
    """Parse MSH 4.1 ASCII text into a HybridMesh."""
    if isinstance(text, bytes):
        try:
            text = text.decode("ascii")
        except UnicodeDecodeError:
            raise ParseError("binary MSH files are not supported", 1) from None
    L = _Lines(text)
    phys_names = {}
    entity_phys = {}
    nodes = {}
    elem_blocks = []
    seen_format = False
    while True:
        try:
            line = L.next()
        except ParseError:
            break
        if line == "$MeshFormat":
            parts = L.next().split()
            if len(parts) < 3:
                raise ParseError("malformed $MeshFormat", L.lineno)
            if not parts[0].startswith("4.1"):
                raise ParseError(f"only MSH 4.1 is supported, got version {parts[0]}", L.lineno)
            if parts[1] != "0":
                raise ParseError("binary MSH files are not supported", L.lineno)
            L.expect("$EndMeshFormat")
            seen_format = True
        elif line == "$PhysicalNames":
            (n,) = L.ints()
            for _ in range(n):
                row = L.next()
                m = re.match(r'\s*(\d+)\s+(\d+)\s+"(.*)"\s*$', row)
                if not m:
                    raise ParseError(f"malformed physical name {row!r}", L.lineno)
                phys_names[(int(m.group(1)), int(m.group(2)))] = m.group(3)
            L.expect("$EndPhysicalNames")
        elif line == "$Entities":
            counts = L.ints()
            if len(counts) != 4:
                raise ParseError("malformed $Entities header", L.lineno)
            for dim, n in enumerate(counts):
                for _ in range(n):
                    row = L.next().split()
                    try:
                        tag = int(row[0])
                        if dim == 0:
                            nphys = int(row[4])
                            phys = [int(x) for x in row[5:5 + nphys]]
                        else:
                            nphys = int(row[7])
                            phys = [int(x) for x in row[8:8 + nphys]]
                    except (ValueError, IndexError):
                        raise ParseError("malformed entity record", L.lineno) from None
                    entity_phys[(dim, tag)] = phys
            L.expect("$EndEntities")
        elif line == "$Nodes":
            hdr = L.ints()
            if len(hdr) != 4:
                raise ParseError("malformed $Nodes header", L.lineno)
            for _ in range(hdr[0]):
                b = L.ints()
                if len(b) != 4:
                    raise ParseError("malformed node block header", L.lineno)
                _, _, parametric, count = b
                tags = []
                while len(tags) < count:
                    tags.extend(L.ints())
                for tg in tags:
                    xyz = L.floats()
                    if len(xyz) < 3:
                        raise ParseError("node record needs three coordinates", L.lineno)
                    nodes[tg] = xyz[:3]
            L.expect("$EndNodes")
        elif line == "$Elements":
            hdr = L.ints()
            if len(hdr) != 4:
                raise ParseError("malformed $Elements header", L.lineno)
            for _ in range(hdr[0]):
                b = L.ints()
                if len(b) != 4:
                    raise ParseError("malformed element block header", L.lineno)
                dim, etag, etype, count = b
                if etype not in _NODES_PER_TYPE:
                    raise ParseError(f"unsupported element type {etype}", L.lineno)
                nper = _NODES_PER_TYPE[etype]
                rows = []
                for _ in range(count):
                    r = L.ints()
                    if len(r) != nper + 1:
                        raise ParseError(f"element of type {etype} needs {nper} nodes", L.lineno)
                    rows.append(r[1:])
                elem_blocks.append((dim, etag, etype, np.array(rows, dtype=np.int64).reshape(-1, nper),
                                    L.lineno))
            L.expect("$EndElements")
        elif line.startswith("$"):
            end = "$End" + line[1:]
            while L.next() != end:
                pass
        else:
            raise ParseError(f"unexpected content {line!r}", L.lineno)
    if not seen_format:
        raise ParseError("missing $MeshFormat section", 1)
    if not nodes:
        raise ParseError("missing or empty $Nodes section", L.lineno)
    node_tags = np.array(sorted(nodes))
    index = {t: i for i, t in enumerate(node_tags.tolist())}
    verts = np.array([nodes[t] for t in node_tags.tolist()])

    def remap(rows, lineno):
        try:
            return np.vectorize(index.__getitem__, otypes=[np.int64])(rows) if rows.size else rows
        except KeyError as exc:
            raise ParseError(f"element references unknown node {exc}", lineno) from None

    tets, prisms, tet_geo, prism_geo = [], [], [], []
    facets = []   # (corner ids, tag)
    orders = set()
    for dim, etag, etype, rows, lineno in elem_blocks:
        if etype not in _GMSH_TYPES:
            continue
        shape, q = _GMSH_TYPES[etype]
        rows = remap(rows, lineno)
        if shape in ("tet", "prism"):
            orders.add(q)
            nc = 4 if shape == "tet" else 6
            (tets if shape == "tet" else prisms).append(rows[:, :nc])
            geo = rows[:, gmsh_to_ref_perm(shape)] if q == 2 else rows[:, :nc]
            (tet_geo if shape == "tet" else prism_geo).append(geo)
        else:
            phys = entity_phys.get((2, etag), [])
            names = {phys_names.get((2, p)) for p in phys} - {None}
            if not names:
                raise TaggingError(f"surface entity {etag} carries no physical name")
            tags = {BoundaryTag.from_name(nm) for nm in names}
            if len(tags) != 1:
                raise TaggingError(f"surface entity {etag} maps to several boundary kinds")
            tag = tags.pop()
            nc = 3 if shape == "tri" else 4
            for r in rows[:, :nc]:
                facets.append((r, tag))
    if len(orders) > 1:
        raise ParseError("mixed geometry orders are not supported", L.lineno)
    gorder = orders.pop() if orders else 1
    T = np.vstack(tets) if tets else np.zeros((0, 4), np.int64)
    Pr = np.vstack(prisms) if prisms else np.zeros((0, 6), np.int64)
    TG = np.vstack(tet_geo) if tet_geo else np.zeros((0, 10 if gorder == 2 else 4), np.int64)
    PG = np.vstack(prism_geo) if prism_geo else np.zeros((0, 18 if gorder == 2 else 6), np.int64)
    return _assemble_mesh(verts, T, Pr, facets, gorder, TG, PG, name)


def _assemble_mesh(verts, T, Pr, facets, gorder, TG, PG, name):
    keys, owners = _face_keys(T, Pr)
    lookup = {tuple(k): (int(o[0]), int(o[1])) for k, o in zip(keys.tolist(), owners.tolist())}
    tags = []
    fe, ff, ft = [], [], []
    seen = {}
    for corners, tag in facets:
        k = sorted(int(c) for c in corners)
        if len(k) == 3:
            k = [-1] + k
        owner = lookup.get(tuple(k))
        if owner is None:
            raise TopologyError(f"boundary facet {list(corners)} does not match any element face")
        if owner in seen:
            if seen[owner] != tag:
                raise TaggingError(f"facet of element {owner[0]} carries two tags")
            continue
        seen[owner] = tag
        if tag not in tags:
            tags.append(tag)
        fe.append(owner[0])
        ff.append(owner[1])
        ft.append(tags.index(tag))
    tags_sorted = sorted(tags, key=_tag_sort_key)
    remap_codes = np.array([tags_sorted.index(t) for t in tags], dtype=np.int64)
    ft = remap_codes[np.asarray(ft, dtype=np.int64)] if ft else np.zeros(0, np.int64)
    return HybridMesh(verts, T, Pr, np.asarray(fe, np.int64), np.asarray(ff, np.int64), ft,
                      tuple(tags_sorted), geometry_order=gorder, tet_geometry=TG,
                      prism_geometry=PG, name=name)


def _tag_sort_key(tag):
    return (list(TagKind).index(tag.kind), tag.index)


def read_msh(path):
    from pathlib import Path
    p = Path(path)
    raw = p.read_bytes()
    return parse_msh(raw, name=p.stem)


def write_msh(mesh: HybridMesh) -> str:
    """Serialize to MSH 4.1 ASCII (one volume entity, one surface entity per tag)."""
    out = ["$MeshFormat", "4.1 0 8", "$EndMeshFormat"]
    used_tags = [mesh.tags[c] for c in sorted(set(mesh.facet_tag.tolist()))]
    out.append("$PhysicalNames")
    out.append(str(len(used_tags) + 1))
    for i, t in enumerate(used_tags):
        out.append(f'2 {i + 1} "{t.name}"')
    out.append(f'3 {len(used_tags) + 1} "fluid"')
    out.append("$EndPhysicalNames")
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    bb = " ".join(_fmt(v) for v in (*lo, *hi))
    out.append("$Entities")
    out.append(f"0 0 {len(used_tags)} 1")
    for i in range(len(used_tags)):
        out.append(f"{i + 1} {bb} 1 {i + 1} 0")
    out.append(f"1 {bb} 1 {len(used_tags) + 1} 0")
    out.append("$EndEntities")
    nv = len(mesh.vertices)
    out.append("$Nodes")
    out.append(f"1 {nv} 1 {nv}")
    out.append(f"3 1 0 {nv}")
    out.extend(str(i + 1) for i in range(nv))
    out.extend(" ".join(_fmt(c) for c in v) for v in mesh.vertices)
    out.append("$EndNodes")
    q = mesh.geometry_order
    blocks = []
    if mesh.n_tets:
        blocks.append((3, 1, 4 if q == 1 else 11, _to_gmsh(mesh.tet_geometry, "tet", q)))
    if mesh.n_prisms:
        blocks.append((3, 1, 6 if q == 1 else 13, _to_gmsh(mesh.prism_geometry, "prism", q)))
    for i, t in enumerate(used_tags):
        code = mesh.tags.index(t)
        sel = mesh.facet_tag == code
        for nc in (3, 4):
            rows = []
            for e, f in zip(mesh.facet_elem[sel], mesh.facet_face[sel]):
                shape = mesh.element_shape(e)
                if len(refelem.reference_faces(shape)[f]) != nc:
                    continue
                ids = (mesh.tet_geometry if shape == "tet" else mesh.prism_geometry)[
                    mesh.local_index(e)]
                if q == 1:
                    rows.append(ids[list(refelem.reference_faces(shape)[f])])
                else:
                    rows.append(ids[_face_local_nodes_p2(shape, f)])
            if rows:
                etype = {(3, 1): 2, (3, 2): 9, (4, 1): 3, (4, 2): 10}[(nc, q)]
                blocks.append((2, i + 1, etype, np.array(rows)))
    total = sum(len(b[3]) for b in blocks)
    out.append("$Elements")
    out.append(f"{len(blocks)} {total} 1 {total}")
    tag = 1
    for dim, ent, etype, rows in blocks:
        out.append(f"{dim} {ent} {etype} {len(rows)}")
        for r in rows:
            out.append(f"{tag} " + " ".join(str(int(x) + 1) for x in r))
            tag += 1
    out.append("$EndElements")
    return "\n".join(out) + "\n"


def _to_gmsh(geo, shape, q):
    if q == 1:
        return geo
    perm = gmsh_to_ref_perm(shape)
    out = np.empty_like(geo)
    out[:, perm] = geo
    return out


def _fmt(x):
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# versioned plain-text serialization (golden fixtures)
# ---------------------------------------------------------------------------

def to_text(mesh: HybridMesh) -> str:
    out = [f"sempi-mesh {TEXT_FORMAT_VERSION}", f"name {mesh.name}",
           f"geometry_order {mesh.geometry_order}", f"vertices {len(mesh.vertices)}"]
    out.extend(" ".join(_fmt(c) for c in v) for v in mesh.vertices)
    for label, arr in (("tets", mesh.tets), ("prisms", mesh.prisms),
                       ("tet_geometry", mesh.tet_geometry),
                       ("prism_geometry", mesh.prism_geometry)):
        out.append(f"{label} {len(arr)}")
        out.extend(" ".join(str(int(x)) for x in r) for r in arr)
    out.append(f"facets {len(mesh.facet_elem)}")
    for e, f, t in zip(mesh.facet_elem, mesh.facet_face, mesh.facet_tag):
        out.append(f"{int(e)} {int(f)} {mesh.tags[t].name}")
    return "\n".join(out) + "\n"


def from_text(text: str) -> HybridMesh:
    lines = text.splitlines()
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise ParseError("unexpected end of mesh text", pos)
        pos += 1
        return lines[pos - 1]

    head = take().split()
    if head[:1] != ["sempi-mesh"] or len(head) != 2:
        raise ParseError("not a sempi mesh text file", 1)
    if int(head[1]) != TEXT_FORMAT_VERSION:
        raise ParseError(f"unsupported mesh text version {head[1]}", 1)
    name = take()[5:]
    gorder = int(take().split()[1])

    def block(label, conv):
        hdr = take().split()
        if hdr[0] != label:
            raise ParseError(f"expected {label}", pos)
        return [list(map(conv, take().split())) for _ in range(int(hdr[1]))]

    verts = np.array(block("vertices", float), dtype=float).reshape(-1, 3)
    T = np.array(block("tets", int), dtype=np.int64).reshape(-1, 4)
    Pr = np.array(block("prisms", int), dtype=np.int64).reshape(-1, 6)
    TG = np.array(block("tet_geometry", int), dtype=np.int64).reshape(len(T), -1)
    PG = np.array(block("prism_geometry", int), dtype=np.int64).reshape(len(Pr), -1)
    hdr = take().split()
    if hdr[0] != "facets":
        raise ParseError("expected facets", pos)
    fe, ff, names = [], [], []
    for _ in range(int(hdr[1])):
        e, f, nm = take().split()
        fe.append(int(e))
        ff.append(int(f))
        names.append(BoundaryTag.from_name(nm))
    tags = sorted(set(names), key=_tag_sort_key)
    ft = np.array([tags.index(t) for t in names], dtype=np.int64)
    return HybridMesh(verts, T, Pr, np.array(fe, np.int64), np.array(ff, np.int64), ft,
                      tuple(tags), geometry_order=gorder, tet_geometry=TG, prism_geometry=PG,
                      name=name)


# ---------------------------------------------------------------------------
# transformations and geometric queries
# ---------------------------------------------------------------------------

def _stretch_1d(u, start, ratio, spacing):
    """Map coordinates u >= start onto a geometric series of layer widths."""
    out = np.array(u, dtype=float, copy=True)
    beyond = out > start
    layers = (out[beyond] - start) / spacing
    lr = np.log1p(ratio - 1.0)
    growth = np.expm1(layers * lr) / (ratio - 1.0)
    out[beyond] = start + spacing * ratio * growth
    return out


def _infer_spacing(coords, start):
    c = np.unique(np.round(coords[coords >= start - 1e-12 * max(1.0, abs(start))], 12))
    gaps = np.diff(c)
    gaps = gaps[gaps > 1e-12]
    if not len(gaps):
        raise ParameterError("no mesh layers beyond stretching start")
    return float(gaps.min())


def apply_stretching(mesh: HybridMesh, spec: StretchSpec) -> HybridMesh:
    """Geometrically stretch node coordinates beyond ``spec.start``."""
    V = mesh.vertices.copy()
    lo, hi = V.min(axis=0), V.max(axis=0)
    if spec.axis == "radial":
        r = np.hypot(V[:, 0], V[:, 1])
        coord = r
        inside = 0 <= spec.start < r.max()
    else:
        ax = "xy".index(spec.axis)
        coord = V[:, ax]
        inside = lo[ax] <= spec.start <= hi[ax] or (spec.both_sides and lo[ax] <= -spec.start <= hi[ax])
    if not inside:
        raise ParameterError("stretching start lies outside the mesh")
    if spec.axis == "radial":
        d = spec.spacing or _infer_spacing(coord, spec.start)
        rn = _stretch_1d(coord, spec.start, spec.ratio, d)
        scale = np.ones_like(coord)
        nz = coord > 0
        scale[nz] = rn[nz] / coord[nz]
        V[:, 0] *= scale
        V[:, 1] *= scale
    else:
        ax = "xy".index(spec.axis)
        pos = coord
        d = spec.spacing or _infer_spacing(pos, spec.start)
        new = _stretch_1d(pos, spec.start, spec.ratio, d)
        if spec.both_sides and spec.start > 0:
            neg = -_stretch_1d(-pos, spec.start, spec.ratio, spec.spacing or d)
            new = np.where(pos < -spec.start, neg, new)
        V[:, ax] = new
    try:
        out = _replace(mesh, vertices=V)
    except TopologyError as exc:
        raise TopologyError(f"stretching inverted an element: {exc}", element=exc.element) from None
    if mesh.geometry_order > 1:
        # validate the curved map as well
        for shape in ("tet", "prism"):
            if (out.n_tets if shape == "tet" else out.n_prisms):
                try:
                    refelem.geometric_factors(refelem.build_reference(shape, 2),
                                              out.geometry_nodes(shape))
                except GeometryError as exc:
                    raise TopologyError(f"stretching inverted an element: {exc}") from None
    return out


def min_spacing(mesh: HybridMesh, P: int = 1) -> float:
    """Smallest free-surface edge length times the minimum Gauss-Lobatto gap fraction."""
    tr = mesh.free_surface_trace
    if not len(tr.triangles):
        raise DomainError("mesh has no free surface")
    xy = mesh.vertices[tr.vertex_map[tr.triangles]][..., :2]
    edges = np.concatenate([xy[:, 1] - xy[:, 0], xy[:, 2] - xy[:, 1], xy[:, 0] - xy[:, 2]])
    h = float(np.sqrt((edges ** 2).sum(axis=1)).min())
    gl = refelem.gauss_lobatto(P)
    return h * float(np.diff(gl).min()) / 2.0


def element_maps(mesh: HybridMesh, shape: str, points=None, elements=None):
    """Element maps for all elements of one shape at reference ``points``."""
    geo_ref = refelem.build_reference(shape, mesh.geometry_order)
    X = mesh.geometry_nodes(shape)
    if elements is not None:
        X = X[elements]
    return refelem.geometric_factors(geo_ref, X, points)


@dataclass(frozen=True, eq=False)
class SurfaceQuadrature:
    """Quadrature data on a set of tagged facets, grouped by (shape, face)."""
    points: np.ndarray       # (nq, 3) physical points
    weights: np.ndarray      # (nq,) physical surface measure
    normals: np.ndarray      # (nq, 3) unit normals out of the fluid
    groups: tuple            # ((shape, face, element ids, slice into arrays), ...)

    @property
    def area(self):
        return float(self.weights.sum())


def surface_quadrature(mesh: HybridMesh, tag, degree: int) -> SurfaceQuadrature:
    elems, faces = mesh.facets_with(tag)
    pts, wts, nrm, groups = [], [], [], []
    start = 0
    for shape in ("tet", "prism"):
        nfaces = len(refelem.reference_faces(shape))
        off = 0 if shape == "tet" else mesh.n_tets
        is_shape = (elems >= mesh.n_tets) == (shape == "prism")
        for f in range(nfaces):
            sel = is_shape & (faces == f)
            if not np.any(sel):
                continue
            local = elems[sel] - off
            rp, rw, rn = refelem.face_quadrature(shape, f, degree)
            geo_ref = refelem.build_reference(shape, mesh.geometry_order)
            X = mesh.geometry_nodes(shape)[local]
            hgeo, _ = geo_ref.basis_at(rp)
            emap = refelem.geometric_factors(geo_ref, X, rp)
            nds = emap.det[..., None] * np.einsum("eqab,b->eqa", emap.inv_t, rn)
            mag = np.linalg.norm(nds, axis=2)
            if np.any(mag <= 1e-14 * mesh.scale ** 2):
                raise GeometryError(f"degenerate {tag} facet (zero area)")
            x = np.einsum("qg,ega->eqa", hgeo, X)
            n = len(local) * len(rw)
            pts.append(x.reshape(-1, 3))
            wts.append((mag * rw[None]).reshape(-1))
            nrm.append((nds / mag[..., None]).reshape(-1, 3))
            groups.append((shape, f, local, slice(start, start + n)))
            start += n
    return SurfaceQuadrature(np.vstack(pts), np.concatenate(wts), np.vstack(nrm), tuple(groups))


def facet_normals(mesh: HybridMesh, tag, degree: int = 3) -> np.ndarray:
    """Unit normals (pointing out of the fluid) at the facet quadrature points."""
    return surface_quadrature(mesh, as_tag(tag), degree).normals
