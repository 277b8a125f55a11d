import math

import numpy as np
import pytest

from eit_shapes.exceptions import EitConfigError, GeometryError, StepCollapseError
from eit_shapes.geometry import (Partition, Polygon, RegularizationParams, locate, locate_many, move_vertices,
                                 partition_symmetric_difference_area, partition_validate, polygon_validate,
                                 regular_polygon, regularize, symmetric_difference_area)
from eit_shapes.measurements import phantom

from .conftest import SQUARE, square_partition


@pytest.mark.parametrize('coords,reason', [
    ([(0.2, 0.2), (0.4, 0.2)], 'fewer than 3 vertices'),
    ([(0.2, 0.2), (0.4, float('nan')), (0.3, 0.4)], 'non-finite coordinates'),
    ([(0.2, 0.2), (0.4, 0.2), (0.4, 0.2), (0.3, 0.4)], 'repeated vertices'),
    ([(0.2, 0.2), (0.4, 0.4), (0.4, 0.2), (0.2, 0.4)], 'self-intersection'),
    ([(0.2, 0.2), (0.3, 0.4), (0.4, 0.2)], 'clockwise orientation'),
])
def test_polygon_invalid(coords, reason):
    diag = polygon_validate(Polygon.from_coords(coords))
    assert not diag
    assert diag.reason == reason


def test_polygon_valid():
    p = Polygon.from_coords(SQUARE)
    assert polygon_validate(p)
    assert p.signed_area == pytest.approx(0.16)
    assert p.edge_lengths() == pytest.approx([0.4] * 4)
    assert p.centroid() == pytest.approx((0.5, 0.5))


def test_partition_touching_boundary():
    part = square_partition([(0.0, 0.3), (0.4, 0.3), (0.4, 0.7)])
    diag = partition_validate(part)
    assert diag.reason == 'inclusion 1 is not strictly inside the domain'


def test_partition_clearance():
    part = square_partition([(0.005, 0.3), (0.4, 0.3), (0.4, 0.7)])
    assert partition_validate(part)
    assert not partition_validate(part, clearance=0.01)


def test_partition_overlap():
    a = Polygon.from_coords(SQUARE)
    b = Polygon.from_coords([(0.6, 0.6), (0.9, 0.6), (0.9, 0.9), (0.6, 0.9)])
    diag = partition_validate(Partition((a, b)))
    assert diag.reason == 'inclusions 1 and 2 intersect'


def test_partition_vertices():
    a = Polygon.from_coords(SQUARE)
    b = regular_polygon((0.8, 0.8), 0.1, 5)
    part = Partition((a, b))
    assert part.n_regions == 3
    assert part.vertex_count == 9
    assert part.vertex_owner().tolist() == [1, 1, 1, 1, 2, 2, 2, 2, 2]
    moved = part.with_vertices(part.vertex_array() + 0.01)
    assert moved.inclusions[1].coords == pytest.approx(b.coords + 0.01)
    with pytest.raises(GeometryError):
        part.with_vertices(np.zeros((3, 2)))


def test_partition_json(tmpworkdir):
    part = Partition((regular_polygon((0.5, 0.5), 0.2, 7),))
    part.dump('partition.json')
    assert Partition.load('partition.json') == part


def test_regular_polygon():
    p = regular_polygon((0.5, 0.5), 0.25, 14)
    assert len(p) == 14
    assert p.vertices[0] == pytest.approx((0.75, 0.5))
    assert p.signed_area > 0
    assert p.edge_lengths() == pytest.approx([0.5 * math.sin(math.pi / 14)] * 14)


def test_regularization_params():
    with pytest.raises(EitConfigError):
        RegularizationParams(0.3, 0.2)


def test_regularize_inserts():
    part = regularize(square_partition(), RegularizationParams(0.05, 0.3))
    p = part.inclusions[0]
    assert len(p) == 8
    assert p.edge_lengths() == pytest.approx([0.2] * 8)
    assert p.signed_area == pytest.approx(0.16)


def test_regularize_removes():
    part = square_partition(SQUARE + [(0.3, 0.69)])
    out = regularize(part, RegularizationParams(0.05, 0.5))
    assert out.inclusions[0].coords.tolist() == [list(v) for v in SQUARE]


def test_regularize_keeps_triangles():
    part = square_partition([(0.5, 0.5), (0.51, 0.5), (0.505, 0.51)])
    out = regularize(part, RegularizationParams(0.05, 0.5))
    assert len(out.inclusions[0]) == 3


def test_move_vertices():
    part = square_partition()
    moved, beta = move_vertices(part, np.tile([0.1, 0.0], (4, 1)), 0.5)
    assert beta == 0.5
    assert moved.inclusions[0].coords[:, 0] == pytest.approx([0.35, 0.75, 0.75, 0.35])


def test_move_vertices_halving():
    part = square_partition()
    moved, beta = move_vertices(part, np.tile([1.0, 0.0], (4, 1)), 0.5)
    assert beta == 0.25
    assert partition_validate(moved)


def test_move_vertices_collapse():
    with pytest.raises(StepCollapseError) as exc_info:
        move_vertices(square_partition(), np.tile([1.0, 0.0], (4, 1)), 0.5, max_halvings=0)
    assert exc_info.value.beta == 0.25


def test_move_vertices_shape():
    with pytest.raises(GeometryError, match='theta has 3 entries for 4 partition vertices'):
        move_vertices(square_partition(), np.zeros((3, 2)), 0.1)


def test_locate():
    part = square_partition()
    assert locate(part, (0.5, 0.5)) == 1
    assert locate(part, (0.1, 0.9)) == 0
    assert locate_many(part, [(0.5, 0.5), (0.2, 0.2), (0.69, 0.31)]).tolist() == [1, 0, 1]
    with pytest.raises(GeometryError):
        locate(part, (1.2, 0.5))


def _even_odd(coords, xy):
    x, y = xy[:, 0:1], xy[:, 1:2]
    x0, y0 = coords[:, 0], coords[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    straddles = (y0 > y) != (y1 > y)
    with np.errstate(divide='ignore', invalid='ignore'):
        x_cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return np.count_nonzero(straddles & (x < x_cross), axis=1) % 2 == 1


def test_locate_many_ray_casting():
    part = phantom('heart_lung').partition
    xy = np.random.default_rng(1).uniform(0, 1, size=(10_000, 2))
    expected = np.zeros(len(xy), dtype=int)
    for i, p in enumerate(part.inclusions, start=1):
        expected[_even_odd(p.coords, xy)] = i
    assert np.count_nonzero(expected) > 0
    assert np.array_equal(locate_many(part, xy), expected)


def test_symmetric_difference():
    a = Polygon.from_coords([(0.2, 0.2), (0.4, 0.2), (0.4, 0.4), (0.2, 0.4)])
    b = Polygon.from_coords([(0.3, 0.3), (0.5, 0.3), (0.5, 0.5), (0.3, 0.5)])
    assert symmetric_difference_area(a, a) == 0
    assert symmetric_difference_area(a, b) == pytest.approx(0.06, abs=1e-3)
    pa, pb = Partition((a,)), Partition((b,))
    assert partition_symmetric_difference_area(pa, pb) == pytest.approx(0.06, abs=1e-3)
    assert partition_symmetric_difference_area(pa, Partition()) == pytest.approx(0.04, abs=1e-3)
