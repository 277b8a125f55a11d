"""
Polygon and partition primitives for Ω = (0, 1)².

A partition is a tuple of disjoint simple CCW polygons (the inclusions) strictly inside the
unit square; everything else is the background region. Region ids: background is
``BACKGROUND`` (0), inclusion ``i`` (0-based position) has id ``i + 1``.
"""
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Iterable, List, NamedTuple, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
import shapely
from shapely.geometry import LinearRing
from shapely.geometry import Polygon as ShapelyPolygon

from .exceptions import DegeneratePolygonError, EitConfigError, GeometryError, StepCollapseError
from .logs import mesh_logger as logger

BACKGROUND = 0
StrPath = Union[str, Path]


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Diagnostic:
    ok: bool
    reason: str = ''

    def __bool__(self) -> bool:
        return self.ok


VALID = Diagnostic(True)


@dataclass(frozen=True)
class Polygon:
    vertices: Tuple[Point2, ...]

    @classmethod
    def from_coords(cls, coords: npt.ArrayLike) -> 'Polygon':
        arr = np.asarray(coords, dtype=float).reshape(-1, 2)
        return cls(tuple(Point2(float(x), float(y)) for x, y in arr))

    def __len__(self) -> int:
        return len(self.vertices)

    @cached_property
    def coords(self) -> npt.NDArray[np.float64]:
        return np.array(self.vertices, dtype=float).reshape(-1, 2)

    @cached_property
    def signed_area(self) -> float:
        x, y = self.coords[:, 0], self.coords[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    def edge_lengths(self) -> npt.NDArray[np.float64]:
        c = self.coords
        return np.linalg.norm(np.roll(c, -1, axis=0) - c, axis=1)

    @cached_property
    def shape(self) -> ShapelyPolygon:
        return ShapelyPolygon(self.coords)

    def centroid(self) -> Point2:
        c = self.shape.centroid
        return Point2(c.x, c.y)


@dataclass(frozen=True)
class Partition:
    inclusions: Tuple[Polygon, ...] = ()

    @property
    def n_regions(self) -> int:
        return len(self.inclusions) + 1

    @property
    def vertex_count(self) -> int:
        return sum(len(p) for p in self.inclusions)

    def vertex_array(self) -> npt.NDArray[np.float64]:
        """All vertices, inclusion by inclusion, in the partition's enumeration order."""
        if not self.inclusions:
            return np.zeros((0, 2))
        return np.concatenate([p.coords for p in self.inclusions])

    def vertex_owner(self) -> npt.NDArray[np.int_]:
        """Region id of the polygon owning each enumerated vertex."""
        return np.repeat(np.arange(1, self.n_regions), [len(p) for p in self.inclusions]).astype(int)

    def with_vertices(self, vertices: npt.ArrayLike) -> 'Partition':
        arr = np.asarray(vertices, dtype=float).reshape(-1, 2)
        if arr.shape[0] != self.vertex_count:
            raise GeometryError('expected {} vertices, got {}'.format(self.vertex_count, arr.shape[0]))
        polys = []
        start = 0
        for p in self.inclusions:
            polys.append(Polygon.from_coords(arr[start:start + len(p)]))
            start += len(p)
        return Partition(tuple(polys))

    def to_json(self) -> Dict[str, Any]:
        return {'inclusions': [[[x, y] for x, y in p.vertices] for p in self.inclusions]}

    @classmethod
    def from_json(cls, obj: Dict[str, Any]) -> 'Partition':
        try:
            raw = obj['inclusions']
        except (KeyError, TypeError) as e:
            raise GeometryError('partition JSON must contain an "inclusions" list') from e
        return cls(tuple(Polygon.from_coords(coords) for coords in raw))

    def dump(self, path: StrPath) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: StrPath) -> 'Partition':
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RegularizationParams:
    delta1: float
    delta2: float

    def __post_init__(self) -> None:
        if not 0 < self.delta1 < self.delta2:
            raise EitConfigError('regularization thresholds must satisfy 0 < delta1 < delta2, got {} and {}'.format(
                self.delta1, self.delta2))


def polygon_validate(p: Polygon) -> Diagnostic:
    if len(p) < 3:
        return Diagnostic(False, 'fewer than 3 vertices')
    c = p.coords
    if not np.all(np.isfinite(c)):
        return Diagnostic(False, 'non-finite coordinates')
    if len(np.unique(c, axis=0)) < len(c):
        return Diagnostic(False, 'repeated vertices')
    if not LinearRing(c).is_simple:
        return Diagnostic(False, 'self-intersection')
    if p.signed_area <= 0:
        return Diagnostic(False, 'clockwise orientation')
    return VALID


def partition_validate(part: Partition, clearance: float = 0.0) -> Diagnostic:
    """
    Check every inclusion, strict interiority (distance to ∂Ω greater than clearance) and
    pairwise disjoint closures.
    """
    for i, p in enumerate(part.inclusions, start=1):
        d = polygon_validate(p)
        if not d:
            return Diagnostic(False, 'inclusion {}: {}'.format(i, d.reason))
        c = p.coords
        if c.min() <= clearance or c.max() >= 1 - clearance:
            return Diagnostic(False, 'inclusion {} is not strictly inside the domain'.format(i))
    shapes = [p.shape for p in part.inclusions]
    for i in range(len(shapes)):
        for j in range(i + 1, len(shapes)):
            if shapes[i].intersects(shapes[j]):
                return Diagnostic(False, 'inclusions {} and {} intersect'.format(i + 1, j + 1))
    return VALID


def regular_polygon(center: Sequence[float], radius: float, sides: int) -> Polygon:
    if sides < 3 or radius <= 0:
        raise DegeneratePolygonError('a regular polygon needs at least 3 sides and a positive radius')
    angles = 2 * np.pi * np.arange(sides) / sides
    coords = np.column_stack([center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)])
    return Polygon.from_coords(coords)


def _regularize_ring(coords: npt.NDArray[np.float64], delta1: float, delta2: float) -> npt.NDArray[np.float64]:
    n = len(coords)
    if n < 3:
        raise DegeneratePolygonError('cannot regularize a polygon with {} vertices'.format(n))
    out: List[npt.NDArray[np.float64]] = [coords[0]]
    for k in range(1, n):
        prev, nxt = out[-1], coords[k]
        d = math.hypot(*(nxt - prev))
        if d < delta1 and len(out) + (n - k - 1) >= 3:
            # drop the second vertex of the pair, the survivor is compared with the following one
            continue
        if d > delta2:
            out.append(0.5 * (prev + nxt))
        out.append(nxt)

    # wrap-around pair (last survivor, first vertex)
    prev, first = out[-1], out[0]
    d = math.hypot(*(first - prev))
    if d < delta1 and len(out) > 3:
        out.pop(0)
    elif d > delta2:
        out.append(0.5 * (prev + first))
    return np.array(out)


def regularize(part: Partition, params: RegularizationParams) -> Partition:
    """
    One pass of vertex removal/insertion so edge lengths drift towards [delta1, delta2].
    """
    polys = []
    for i, p in enumerate(part.inclusions, start=1):
        new = Polygon.from_coords(_regularize_ring(p.coords, params.delta1, params.delta2))
        if len(new) != len(p):
            logger.debug('inclusion %d regularized: %d -> %d vertices', i, len(p), len(new))
        polys.append(new)
    result = Partition(tuple(polys))
    diag = partition_validate(result)
    if not diag:
        raise DegeneratePolygonError('regularization produced an invalid partition: {}'.format(diag.reason))
    return result


def move_vertices(part: Partition, theta: npt.ArrayLike, beta: float, *,
                  max_halvings: int = 10, clearance: float = 0.0) -> Tuple[Partition, float]:
    """
    Move every vertex V_l to V_l + beta * theta_l, halving beta jointly for all vertices until
    the moved partition is valid.

    :return: tuple (moved partition, effective beta)
    """
    steps = np.asarray(theta, dtype=float).reshape(-1, 2)
    if steps.shape[0] != part.vertex_count:
        raise GeometryError('theta has {} entries for {} partition vertices'.format(
            steps.shape[0], part.vertex_count))
    base = part.vertex_array()
    step = beta
    for attempt in range(max_halvings + 1):
        candidate = part.with_vertices(base + step * steps)
        diag = partition_validate(candidate, clearance)
        if diag:
            if attempt:
                logger.debug('vertex step halved %d times, effective beta %g', attempt, step)
            return candidate, step
        logger.debug('step %g rejected: %s', step, diag.reason)
        step *= 0.5
    raise StepCollapseError('no feasible vertex step after {} halvings of beta={:g}'.format(max_halvings, beta), step)


def _check_in_domain(xy: npt.NDArray[np.float64]) -> None:
    if xy.size and (xy.min() < 0 or xy.max() > 1 or not np.all(np.isfinite(xy))):
        raise GeometryError('query point outside the unit square')


def locate_many(part: Partition, points: npt.ArrayLike) -> npt.NDArray[np.int_]:
    xy = np.asarray(points, dtype=float).reshape(-1, 2)
    _check_in_domain(xy)
    labels = np.full(len(xy), BACKGROUND, dtype=int)
    for i, p in enumerate(part.inclusions, start=1):
        labels[shapely.contains_xy(p.shape, xy[:, 0], xy[:, 1])] = i
    return labels


def locate(part: Partition, q: Sequence[float]) -> int:
    return int(locate_many(part, [q])[0])


def _raster_xor(a: Any, b: Any, resolution: int) -> float:
    bounds = [g.bounds for g in (a, b) if not g.is_empty]
    if not bounds:
        return 0.0
    xmin = min(bd[0] for bd in bounds)
    ymin = min(bd[1] for bd in bounds)
    xmax = max(bd[2] for bd in bounds)
    ymax = max(bd[3] for bd in bounds)
    dx = (xmax - xmin) / resolution
    dy = (ymax - ymin) / resolution
    xs = xmin + (np.arange(resolution) + 0.5) * dx
    ys = ymin + (np.arange(resolution) + 0.5) * dy
    x, y = np.meshgrid(xs, ys)
    inside_a = shapely.contains_xy(a, x, y) if not a.is_empty else np.zeros(x.shape, dtype=bool)
    inside_b = shapely.contains_xy(b, x, y) if not b.is_empty else np.zeros(x.shape, dtype=bool)
    return float(np.count_nonzero(inside_a ^ inside_b)) * dx * dy


def symmetric_difference_area(a: Polygon, b: Polygon, resolution: int = 1000) -> float:
    """Area of a △ b, rasterized on a resolution × resolution grid over the joint bounding box."""
    return _raster_xor(a.shape, b.shape, resolution)


def partition_symmetric_difference_area(a: Partition, b: Partition, resolution: int = 1000) -> float:
    return _raster_xor(_union(a.inclusions), _union(b.inclusions), resolution)


def _union(polys: Iterable[Polygon]) -> Any:
    return shapely.union_all([p.shape for p in polys])
