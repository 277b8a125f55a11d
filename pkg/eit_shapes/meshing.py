"""
Conforming triangulations of the partitioned unit square and their nested red refinements.

The coarse mesh is a constrained Delaunay triangulation (``triangle``) whose segments are the
square boundary and every partition edge, with no Steiner points allowed on any segment. Its
input vertices are the partition vertices first, then the boundary nodes, so partition vertex
``l`` is coarse node ``l``. Red refinement appends edge midpoints after the existing nodes, so
coarse node indices survive in every refinement.
"""
import json
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp
import triangle as tr

from .exceptions import MeshingError, TransportError
from .geometry import Diagnostic, Partition, locate_many, VALID
from .logs import mesh_logger as logger

ELECTRODE_LEVELS = (4, 8, 16)
BOUNDARY_LENGTH = 4.0
SIDES = ('bottom', 'right', 'top', 'left')
# arclength spacing of coarse boundary nodes, every electrode endpoint of every level is a multiple
COARSE_BOUNDARY_STEP = 0.25
MIN_ANGLE = 5.0
QUALITY_OPTS = 'pYYq20'
StrPath = Union[str, Path]


def arclength(xy: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """
    Arclength in [0, 4) of points on ∂Ω, counterclockwise from (0, 0).
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    x, y = xy[:, 0], xy[:, 1]
    return np.where(y == 0, x, np.where(x == 1, 1 + y, np.where(y == 1, 3 - x, 4 - y)))


def boundary_point(s: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Inverse of ``arclength``."""
    s = np.mod(np.asarray(s, dtype=float), BOUNDARY_LENGTH)
    side = np.minimum(np.floor(s).astype(int), 3)
    t = s - side
    x = np.choose(side, [t, np.ones_like(t), 1 - t, np.zeros_like(t)])
    y = np.choose(side, [np.zeros_like(t), t, np.ones_like(t), 1 - t])
    return np.column_stack([x, y])


def electrode_index(s: npt.ArrayLike, level: int) -> npt.NDArray[np.int_]:
    """Electrode e covers the arclength interval [4e/level, 4(e+1)/level)."""
    s = np.mod(np.asarray(s, dtype=float), BOUNDARY_LENGTH)
    return np.minimum(np.floor(s * level / BOUNDARY_LENGTH).astype(int), level - 1)


def _on_boundary(xy: npt.NDArray[np.float64]) -> npt.NDArray[np.bool_]:
    return (xy[:, 0] == 0) | (xy[:, 0] == 1) | (xy[:, 1] == 0) | (xy[:, 1] == 1)


class BoundaryGrid:
    """
    Boundary nodes of a mesh ordered counterclockwise from (0, 0), with the exact P1 mass
    matrix of the closed boundary curve. Edge ``k`` joins entries ``k`` and ``k + 1`` (cyclic).
    """

    def __init__(self, nodes: npt.NDArray[np.int_], s: npt.NDArray[np.float64]):
        if len(nodes) < 4:
            raise MeshingError('a boundary grid needs at least the 4 corners')
        self.nodes = nodes
        self.s = s
        self.lengths = np.diff(np.append(s, BOUNDARY_LENGTH + s[0]))

    @classmethod
    def from_points(cls, xy: npt.NDArray[np.float64]) -> 'BoundaryGrid':
        idx = np.flatnonzero(_on_boundary(xy))
        s = arclength(xy[idx])
        order = np.argsort(s, kind='stable')
        return cls(idx[order], s[order])

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def edge_midpoints(self) -> npt.NDArray[np.float64]:
        return np.mod(self.s + 0.5 * self.lengths, BOUNDARY_LENGTH)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        n = len(self)
        k = np.arange(n)
        nxt = (k + 1) % n
        diag = (self.lengths + np.roll(self.lengths, 1)) / 3
        off = self.lengths / 6
        rows = np.concatenate([k, k, nxt])
        cols = np.concatenate([k, nxt, k])
        return sp.coo_matrix((np.concatenate([diag, off, off]), (rows, cols)), shape=(n, n)).tocsr()

    @cached_property
    def weights(self) -> npt.NDArray[np.float64]:
        """∫ φ_k ds for every boundary hat function."""
        return 0.5 * (self.lengths + np.roll(self.lengths, 1))

    def integrate(self, values: npt.ArrayLike) -> Any:
        """∫ v ds of a piecewise linear trace, values shaped (nb,) or (nb, m)."""
        return self.weights @ np.asarray(values, dtype=float)

    def inner(self, a: npt.ArrayLike, b: npt.ArrayLike) -> float:
        a = np.asarray(a, dtype=float)
        return float(np.sum(a * (self.mass @ np.asarray(b, dtype=float))))

    def l2_norm(self, values: npt.ArrayLike) -> float:
        return float(np.sqrt(max(self.inner(values, values), 0.0)))

    def interpolate(self, s_target: npt.ArrayLike, values: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Periodic piecewise linear interpolation of this grid's trace at arclengths ``s_target``."""
        values = np.asarray(values, dtype=float)
        s_target = np.asarray(s_target, dtype=float)
        if values.ndim == 1:
            return np.interp(s_target, self.s, values, period=BOUNDARY_LENGTH)
        return np.column_stack([
            np.interp(s_target, self.s, values[:, j], period=BOUNDARY_LENGTH) for j in range(values.shape[1])
        ])


class BoundaryEdge(NamedTuple):
    nodes: Tuple[int, int]  # counterclockwise
    side: str
    electrode: int


class MeshQuality(NamedTuple):
    min_angle: float
    max_aspect: float


class TriMesh:
    """
    P1 triangle mesh. ``parent`` indexes triangles of ``coarse`` (the mesh this one refines),
    ``coarse_vertex_map[l]`` is the node of partition vertex ``l``.
    """

    def __init__(self, nodes: npt.ArrayLike, triangles: npt.ArrayLike, region: npt.ArrayLike, *,
                 electrode_level: int = 4,
                 coarse_vertex_map: Optional[npt.ArrayLike] = None,
                 parent: Optional[npt.ArrayLike] = None,
                 coarse: Optional['TriMesh'] = None,
                 levels: int = 0):
        self.nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        self.triangles = np.asarray(triangles, dtype=int).reshape(-1, 3)
        self.region = np.asarray(region, dtype=int)
        self.electrode_level = electrode_level
        self.coarse_vertex_map = np.asarray(
            coarse_vertex_map if coarse_vertex_map is not None else [], dtype=int)
        self.parent = None if parent is None else np.asarray(parent, dtype=int)
        self.coarse = coarse
        self.levels = levels
        if len(self.region) != len(self.triangles):
            raise MeshingError('region labels must match the triangle count')
        if (self.parent is None) != (self.coarse is None):
            raise MeshingError('parent links and the coarse mesh must be given together')

    def __repr__(self) -> str:
        return '<TriMesh {} nodes {} triangles levels={}>'.format(len(self.nodes), len(self.triangles), self.levels)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def corners(self) -> npt.NDArray[np.float64]:
        return self.nodes[self.triangles]

    @cached_property
    def areas(self) -> npt.NDArray[np.float64]:
        return _signed_areas(self.corners)

    @cached_property
    def centroids(self) -> npt.NDArray[np.float64]:
        return self.corners.mean(axis=1)

    @cached_property
    def grads(self) -> npt.NDArray[np.float64]:
        """Barycentric gradients ∇λ_i, shape (n_triangles, 3, 2)."""
        p = self.corners
        e = np.roll(p, -1, axis=1) - np.roll(p, -2, axis=1)
        g = np.stack([e[..., 1], -e[..., 0]], axis=-1)
        return g / (2 * self.areas)[:, None, None]

    @cached_property
    def boundary(self) -> BoundaryGrid:
        return BoundaryGrid.from_points(self.nodes)

    @property
    def boundary_edges(self) -> List[BoundaryEdge]:
        b = self.boundary
        mids = b.edge_midpoints
        sides = np.minimum(np.floor(mids).astype(int), 3)
        electrodes = electrode_index(mids, self.electrode_level)
        nxt = np.roll(b.nodes, -1)
        return [
            BoundaryEdge((int(a), int(c)), SIDES[side], int(e))
            for a, c, side, e in zip(b.nodes, nxt, sides, electrodes)
        ]

    @cached_property
    def boundary_mask(self) -> npt.NDArray[np.bool_]:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary.nodes] = True
        return mask

    def edges(self) -> npt.NDArray[np.int_]:
        """Unique undirected edges, sorted node pairs."""
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        return np.unique(e, axis=0)

    def moved(self, displacement: npt.ArrayLike) -> 'TriMesh':
        """
        Same topology, labels and parent links with nodes displaced; raises TransportError if a
        triangle inverts.
        """
        d = np.asarray(displacement, dtype=float).reshape(self.nodes.shape)
        m = TriMesh(self.nodes + d, self.triangles, self.region, electrode_level=self.electrode_level,
                    coarse_vertex_map=self.coarse_vertex_map, parent=self.parent, coarse=self.coarse,
                    levels=self.levels)
        if np.any(m.areas <= 0):
            raise TransportError('{} triangles inverted by the displacement, reduce t'.format(
                int(np.count_nonzero(m.areas <= 0))))
        return m

    def to_json(self) -> Dict[str, Any]:
        return {
            'nodes': self.nodes.tolist(),
            'triangles': self.triangles.tolist(),
            'regions': self.region.tolist(),
            'electrode_level': self.electrode_level,
            'levels': self.levels,
        }

    def dump(self, path: StrPath) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def _signed_areas(p: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _orient_ccw(nodes: npt.NDArray[np.float64], tris: npt.NDArray[np.int_]) -> npt.NDArray[np.int_]:
    tris = tris.copy()
    flip = _signed_areas(nodes[tris]) < 0
    tris[np.ix_(flip, [1, 2])] = tris[np.ix_(flip, [2, 1])]
    return tris


def _ring_segments(start: int, n: int) -> npt.NDArray[np.int_]:
    k = np.arange(n)
    return np.column_stack([start + k, start + (k + 1) % n])


def _triangulate(vertices: npt.NDArray[np.float64], segments: npt.NDArray[np.int_], opts: str) -> Dict[str, Any]:
    try:
        out = tr.triangulate({'vertices': vertices, 'segments': segments}, opts)
    except Exception as e:
        raise MeshingError('triangulation failed: {}'.format(e)) from e
    if 'triangles' not in out or len(out['triangles']) == 0:
        raise MeshingError('triangulation produced no triangles')
    return out


def coarse_mesh(part: Partition, electrode_level: int = 4, *, min_angle: float = MIN_ANGLE) -> TriMesh:
    """
    Constrained triangulation of Ω whose segments are the square boundary and the partition
    edges. Boundary nodes sit at every multiple of 0.25 in arclength. If the triangulation has
    an angle below ``min_angle`` degrees, it is redone with interior Steiner points allowed.
    """
    if electrode_level not in ELECTRODE_LEVELS:
        raise MeshingError('electrode level must be one of {}, got {}'.format(ELECTRODE_LEVELS, electrode_level))
    part_vertices = part.vertex_array()
    nv = len(part_vertices)
    n_boundary = int(round(BOUNDARY_LENGTH / COARSE_BOUNDARY_STEP))
    boundary_xy = boundary_point(np.arange(n_boundary) * COARSE_BOUNDARY_STEP)
    vertices = np.concatenate([part_vertices, boundary_xy])

    segments = [_ring_segments(nv, n_boundary)]
    start = 0
    for p in part.inclusions:
        segments.append(_ring_segments(start, len(p)))
        start += len(p)
    segs = np.concatenate(segments)

    out = _triangulate(vertices, segs, 'pYY')
    m = _build_coarse(part, out, electrode_level, nv)
    quality = mesh_quality(m)
    if quality.min_angle < min_angle:
        logger.debug('coarse mesh min angle %0.2f° below %0.1f°, retrying with interior Steiner points',
                     quality.min_angle, min_angle)
        m = _build_coarse(part, _triangulate(vertices, segs, QUALITY_OPTS), electrode_level, nv)
    if not np.allclose(m.nodes[:len(vertices)], vertices):
        raise MeshingError('triangulation reordered the input vertices')
    logger.debug('coarse mesh: %d nodes, %d triangles, min angle %0.2f°',
                 m.n_nodes, m.n_triangles, mesh_quality(m).min_angle)
    return m


def _build_coarse(part: Partition, out: Dict[str, Any], electrode_level: int, nv: int) -> TriMesh:
    nodes = np.asarray(out['vertices'], dtype=float)
    tris = _orient_ccw(nodes, np.asarray(out['triangles'], dtype=int))
    areas = _signed_areas(nodes[tris])
    if np.any(areas <= 0):
        raise MeshingError('triangulation produced {} degenerate triangles'.format(int(np.count_nonzero(areas <= 0))))
    region = locate_many(part, nodes[tris].mean(axis=1))
    return TriMesh(nodes, tris, region, electrode_level=electrode_level, coarse_vertex_map=np.arange(nv))


def _red_refine_once(nodes: npt.NDArray[np.float64], tris: npt.NDArray[np.int_]):
    nt = len(tris)
    e = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    edges, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.reshape(-1) + len(nodes)
    mab, mbc, mca = inv[:nt], inv[nt:2 * nt], inv[2 * nt:]
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    new_nodes = np.concatenate([nodes, 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])])
    children = np.stack([
        np.column_stack([a, mab, mca]),
        np.column_stack([mab, b, mbc]),
        np.column_stack([mca, mbc, c]),
        np.column_stack([mab, mbc, mca]),
    ], axis=1).reshape(-1, 3)
    return new_nodes, children, np.repeat(np.arange(nt), 4)


def refine(m: TriMesh, levels: int = 1) -> TriMesh:
    """
    ``levels`` rounds of red refinement: every triangle splits into four congruent children
    through its edge midpoints. The result's parent links point into ``m``.
    """
    if levels < 1:
        raise MeshingError('refinement levels must be at least 1, got {}'.format(levels))
    nodes, tris = m.nodes, m.triangles
    parent = np.arange(m.n_triangles)
    for _ in range(levels):
        nodes, tris, local = _red_refine_once(nodes, tris)
        parent = parent[local]
    refined = TriMesh(nodes, tris, m.region[parent], electrode_level=m.electrode_level,
                      coarse_vertex_map=m.coarse_vertex_map, parent=parent, coarse=m, levels=levels)
    logger.debug('refined %r -> %r', m, refined)
    return refined


def check_nested(coarse: TriMesh, refined: TriMesh) -> npt.NDArray[np.int_]:
    if refined.coarse is not coarse or refined.parent is None:
        raise MeshingError('mesh is not a refinement of the given coarse mesh')
    return refined.parent


def parent_barycentric(coarse: TriMesh, refined: TriMesh) -> npt.NDArray[np.float64]:
    """
    Barycentric coordinates of every refined triangle's corners inside its coarse parent,
    shape (n_triangles, 3 corners, 3 coordinates).
    """
    parent = check_nested(coarse, refined)
    g = coarse.grads[parent]
    rel = refined.corners - coarse.centroids[parent][:, None, :]
    return 1 / 3 + np.einsum('tbd,tnd->tnb', g, rel)


def prolong(coarse: TriMesh, refined: TriMesh, values: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Nodal values on ``refined`` of the P1 field given by nodal ``values`` on ``coarse``."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != coarse.n_nodes:
        raise MeshingError('expected {} coarse nodal values, got {}'.format(coarse.n_nodes, values.shape[0]))
    lam = parent_barycentric(coarse, refined)
    parent_values = values[coarse.triangles[refined.parent]]
    corner_values = np.einsum('tnb,tb...->tn...', lam, parent_values)
    out = np.zeros((refined.n_nodes,) + values.shape[1:])
    out[refined.triangles.reshape(-1)] = corner_values.reshape((-1,) + values.shape[1:])
    return out


def mesh_quality(m: TriMesh) -> MeshQuality:
    """Worst minimum angle (degrees) and worst circumradius/(2·inradius) over all triangles."""
    p = m.corners
    lengths = np.linalg.norm(np.roll(p, -1, axis=1) - p, axis=2)
    la, lb, lc = lengths[:, 1], lengths[:, 2], lengths[:, 0]  # opposite corners 0, 1, 2
    cos = np.stack([
        (lb ** 2 + lc ** 2 - la ** 2) / (2 * lb * lc),
        (la ** 2 + lc ** 2 - lb ** 2) / (2 * la * lc),
        (la ** 2 + lb ** 2 - lc ** 2) / (2 * la * lb),
    ], axis=1)
    angles = np.degrees(np.arccos(np.clip(cos, -1, 1)))
    area = np.abs(m.areas)
    circum = la * lb * lc / (4 * area)
    inradius = 2 * area / (la + lb + lc)
    return MeshQuality(float(angles.min()), float(np.max(circum / (2 * inradius))))


def conformity_check(m: TriMesh) -> Diagnostic:
    if np.any(m.areas <= 0):
        return Diagnostic(False, 'non-positive triangle area')
    t = m.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    if np.any(counts > 2):
        return Diagnostic(False, '{} edges shared by more than two triangles'.format(int(np.count_nonzero(counts > 2))))
    single = edges[counts == 1]
    on_boundary = m.boundary_mask[single].all(axis=1)
    if not on_boundary.all():
        return Diagnostic(False, '{} interior edges belong to one triangle only'.format(
            int(np.count_nonzero(~on_boundary))))
    if len(single) != len(m.boundary):
        return Diagnostic(False, 'boundary edge count {} does not match {} boundary nodes'.format(
            len(single), len(m.boundary)))
    return VALID


class InteriorEdges(NamedTuple):
    nodes: npt.NDArray[np.int_]  # (n, 2) sorted node pairs
    first: npt.NDArray[np.int_]  # the two triangles sharing each edge
    second: npt.NDArray[np.int_]


def interior_edges(m: TriMesh) -> InteriorEdges:
    t = m.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    owner = np.tile(np.arange(m.n_triangles), 3)
    _, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    order = np.argsort(inv, kind='stable')
    same = inv[order[:-1]] == inv[order[1:]]
    a, b = order[:-1][same], order[1:][same]
    return InteriorEdges(e[a], owner[a], owner[b])
