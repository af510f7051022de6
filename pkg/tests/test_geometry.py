"""Tests for geometry module."""
import itertools

import numpy as np
import pytest

import geometry
from geometry import Box, ConvexBody, HPolytope


def diamond(r=1.0):
    normals = ((1, 1), (1, -1), (-1, 1), (-1, -1))
    return HPolytope(normals, (r, r, r, r), Box((-r, -r), (r, r)))


def lattice(lo, hi):
    return itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi)))


def test_inflate_and_erode_box():
    B = Box((-1, -1), (1, 1))
    assert geometry.inflate(B, 0.5).world() == Box((-1.5, -1.5), (1.5, 1.5))
    assert geometry.erode(B, 0.25).world() == Box((-0.75, -0.75), (0.75, 0.75))
    assert geometry.erode(B, 1.5) is None
    with pytest.raises(ValueError):
        geometry.inflate(B, -0.1)


def test_inflate_and_erode_polytope():
    P = geometry.inflate(diamond(), 0.5).world()
    # facet offsets grow by alpha * |a|_1 and the inflated bounding box is added
    assert P.offsets[:4] == (2.0, 2.0, 2.0, 2.0)
    assert P.bbox == Box((-1.5, -1.5), (1.5, 1.5))
    assert geometry.contains(P, (1.5, 0.0))
    assert not geometry.contains(P, (1.5, 0.6))
    E = geometry.erode(diamond(), 0.4).world()
    assert np.allclose(E.offsets, 0.2)


def test_carrier_transform():
    body = ConvexBody(Box((-1, -1), (1, 1)), translation=(1.0, 0.0125), scale=0.005)
    w = body.world()
    assert np.allclose(w.lo, (0.995, 0.0075)) and np.allclose(w.hi, (1.005, 0.0175))
    P = ConvexBody(diamond(), translation=(2.0, 0.0), scale=0.5).world()
    assert geometry.contains(P, (2.5, 0.0)) and not geometry.contains(P, (2.6, 0.0))


def test_unit_square_examples():
    B = Box((0, 0), (1, 1))
    assert geometry.inflate(B, 0.5).world() == Box((-0.5, -0.5), (1.5, 1.5))
    assert geometry.inflate(B, 0.0).world() == B
    assert geometry.erode(B, 0.6) is None
    assert geometry.erode(B, 0.25).world() == Box((0.25, 0.25), (0.75, 0.75))
    assert geometry.contains(B, (0.5, 0.5))
    assert geometry.contains(B, (1.0, 0.3))
    assert not geometry.contains(diamond(), (0.6, 0.6))


def test_dist_boundary_examples():
    B = Box((0, 0), (1, 1))
    assert geometry.dist_boundary(B, (0.4, 0.5)) == pytest.approx(0.4)
    assert geometry.dist_boundary(B, (1.5, 0.5)) == pytest.approx(0.5)
    assert geometry.dist_boundary(diamond(), (0.0, 0.0)) == pytest.approx(0.5)


def test_rasterize_examples():
    assert len(geometry.rasterize(Box.centered((0, 0), 0.1055), 0.0, 0.01)) == 441
    assert len(geometry.rasterize(diamond(), 0.0, 0.5)) == 13


def test_dist_boundary_polytope_exterior_bisection():
    rho = 0.01
    assert geometry.dist_boundary(diamond(), (2.0, 0.0), rho) == pytest.approx(1.0, abs=1e-3 * rho)
    assert geometry.dist_boundary(diamond(), (1.0, 1.0), rho) == pytest.approx(0.5, abs=1e-3 * rho)
    square = HPolytope.from_box(Box((-1, -1), (1, 1)))
    assert geometry.dist_boundary(square, (1.5, 0.5), rho) == pytest.approx(0.5, abs=1e-3 * rho)


def test_rasterize_counts():
    assert len(geometry.rasterize(Box((-1, -1), (1, 1)), 0.0, 0.25)) == 81
    assert len(geometry.rasterize(Box((-1, -1), (1, 1)), 0.25, 0.25)) == 121
    ring = geometry.rasterize_boundary(Box((-1, -1), (1, 1)), 0.25, 0.25)
    # 11x11 minus the strictly eroded 5x5 core
    assert len(ring) == 96
    assert all(max(abs(c) for c in p) >= 3 for p in ring)


def test_rasterize_tie_is_closed():
    # the point at distance exactly alpha is included
    cells = geometry.rasterize(Box.point((0.0, 0.0)), 0.5, 1.0)
    assert set(cells) == {(0, 0)}
    cells = geometry.rasterize(Box.point((0.5, 0.0)), 0.5, 1.0)
    assert set(cells) == {(0, 0), (1, 0)}


def test_rasterize_inflation_identity():
    B = ConvexBody(Box((-0.33, -0.1), (0.47, 0.29)))
    assert geometry.rasterize(B, 0.07, 0.05) == geometry.rasterize(geometry.inflate(B, 0.07), 0.0, 0.05)
    P = ConvexBody(diamond(0.4))
    assert geometry.rasterize(P, 0.07, 0.05) == geometry.rasterize(geometry.inflate(P, 0.07), 0.0, 0.05)


def test_zero_width_boundary_is_the_body():
    pt = Box.point((0.3, -0.2))
    assert geometry.rasterize_boundary(pt, 0.05, 0.1) == geometry.rasterize(pt, 0.05, 0.1)


def test_unbounded_and_negative_radius_rejected():
    with pytest.raises(ValueError):
        geometry.rasterize(Box((0, 0), (1, 1)), float("inf"), 0.1)
    with pytest.raises(ValueError):
        geometry.rasterize_band(Box((0, 0), (1, 1)), 0.1, -0.1, 0.1)


@pytest.mark.parametrize("seed", range(5))
def test_box_band_matches_dist_boundary_oracle(seed):
    rng = np.random.default_rng(seed)
    rho = 0.1
    lo = rng.uniform(-1, 0, size=2)
    hi = lo + rng.uniform(0.05, 1.2, size=2)
    alpha = float(rng.uniform(0.05, 0.3))
    B = Box(tuple(lo), tuple(hi))
    got = set(geometry.rasterize_boundary(B, alpha, rho))
    expect = set()
    for p in lattice((-25, -25), (25, 25)):
        d = geometry.dist_boundary(B, np.array(p) * rho)
        if d <= alpha + 1e-12:
            expect.add(p)
    assert got == expect


@pytest.mark.parametrize("seed", range(4))
def test_polytope_path_agrees_with_box_path(seed):
    rng = np.random.default_rng(50 + seed)
    lo = rng.uniform(-1, 0, size=2)
    hi = lo + rng.uniform(0.1, 1.0, size=2)
    B = Box(tuple(lo), tuple(hi))
    P = HPolytope.from_box(B)
    for outer, inner in ((0.1, None), (0.1, 0.1), (0.1, 0.3)):
        assert geometry.rasterize_band(P, outer, inner, 0.05) == geometry.rasterize_band(B, outer, inner, 0.05)


def test_has_interior():
    assert geometry.has_interior(diamond())
    flat = HPolytope(((0, 1), (0, -1)), (0.0, 0.0), Box((-1, 0), (1, 0)))
    assert not geometry.has_interior(flat)


def random_polytope(rng):
    """Bounded polygon around a random centre, with the exact vertex bounding box."""
    m = int(rng.integers(5, 9))
    theta = 2 * np.pi * (np.arange(m) + rng.uniform(-0.2, 0.2, size=m)) / m
    A = np.column_stack([np.cos(theta), np.sin(theta)])
    centre = rng.uniform(-0.3, 0.3, size=2)
    b = rng.uniform(0.4, 1.0, size=m) + A @ centre
    vertices = []
    for i, j in itertools.combinations(range(m), 2):
        M = A[[i, j]]
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        v = np.linalg.solve(M, b[[i, j]])
        if np.all(A @ v <= b + 1e-9):
            vertices.append(v)
    vertices = np.array(vertices)
    bbox = Box(tuple(vertices.min(axis=0)), tuple(vertices.max(axis=0)))
    return HPolytope(tuple(map(tuple, A)), tuple(b), bbox)


def random_box(rng):
    lo = rng.uniform(-1, 0.5, size=2)
    return Box(tuple(lo), tuple(lo + rng.uniform(0.1, 1.5, size=2)))


def samples(rng, shape, n=2000, margin=0.5):
    box = shape.bbox if isinstance(shape, HPolytope) else shape
    return rng.uniform(box.lo_array - margin, box.hi_array + margin, size=(n, 2))


@pytest.mark.parametrize("seed", range(6))
def test_inflate_and_erode_contain_the_right_points(seed):
    rng = np.random.default_rng(300 + seed)
    alpha = float(rng.uniform(0.02, 0.3))
    corners = np.array(list(itertools.product((-alpha, alpha), repeat=2)))
    for P in (random_box(rng), random_polytope(rng)):
        pts = samples(rng, P)
        inside = geometry.contains_many(P, pts)
        shift = rng.uniform(-alpha, alpha, size=pts.shape)
        assert np.all(geometry.contains_many(geometry.inflate(P, alpha), pts[inside] + shift[inside], tol=1e-9))
        core = geometry.erode(P, alpha)
        if core is None:
            continue
        deep = pts[geometry.contains_many(core, pts)]
        for c in corners:
            assert np.all(geometry.contains_many(P, deep + c, tol=1e-9))


@pytest.mark.parametrize("seed", range(4))
def test_erode_undoes_inflate_on_the_lattice(seed):
    rng = np.random.default_rng(400 + seed)
    rho = 0.05
    for P in (random_box(rng), random_polytope(rng)):
        alpha = float(rng.uniform(0.02, 0.2))
        body = set(geometry.rasterize(P, 0.0, rho))
        assert body <= set(geometry.rasterize(geometry.erode(geometry.inflate(P, alpha), alpha), 0.0, rho))
        core = geometry.erode(P, alpha)
        if core is not None:
            assert set(geometry.rasterize(geometry.inflate(core, alpha), 0.0, rho)) <= body


@pytest.mark.parametrize("seed", range(4))
def test_growth_is_monotone_in_alpha(seed):
    rng = np.random.default_rng(500 + seed)
    rho = 0.05
    small, large = sorted(rng.uniform(0.0, 0.3, size=2))
    for P in (random_box(rng), random_polytope(rng)):
        assert set(geometry.rasterize(P, small, rho)) <= set(geometry.rasterize(P, large, rho))
        assert set(geometry.rasterize_boundary(P, small, rho)) <= set(geometry.rasterize_boundary(P, large, rho))
        pts = samples(rng, P)
        grown = geometry.contains_many(geometry.inflate(P, small), pts)
        assert np.all(geometry.contains_many(geometry.inflate(P, large), pts[grown]))
        deep = geometry.erode(P, large)
        if deep is not None:
            assert np.all(geometry.contains_many(geometry.erode(P, small), pts[geometry.contains_many(deep, pts)]))


@pytest.mark.parametrize("seed", range(6))
def test_boundary_band_lies_in_the_inflation(seed):
    rng = np.random.default_rng(600 + seed)
    rho = float(rng.choice([0.025, 0.05, 0.1]))
    alpha = float(rng.uniform(0.0, 0.4))
    for P in (random_box(rng), random_polytope(rng)):
        assert set(geometry.rasterize_boundary(P, alpha, rho)) <= set(geometry.rasterize(P, alpha, rho))


@pytest.mark.parametrize("seed", range(3))
def test_polytope_band_matches_dist_boundary_oracle(seed):
    rng = np.random.default_rng(700 + seed)
    rho = 0.1
    alpha = float(rng.uniform(0.05, 0.3))
    P = random_polytope(rng)
    got = set(geometry.rasterize_boundary(P, alpha, rho))
    lo = np.floor((P.bbox.lo_array - alpha) / rho).astype(int) - 1
    hi = np.ceil((P.bbox.hi_array + alpha) / rho).astype(int) + 1
    expect, unsure = set(), set()
    for p in lattice(lo, hi):
        d = geometry.dist_boundary(P, np.array(p) * rho, rho)
        if abs(d - alpha) <= 2e-3 * rho:
            unsure.add(p)
        elif d < alpha:
            expect.add(p)
    assert got - unsure == expect
    assert got <= set(lattice(lo, hi))


def test_diamond_inflation_by_dense_membership():
    grown = geometry.inflate(diamond(), 0.5)
    g = np.linspace(-2.0, 2.0, 321)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    a = np.abs(pts).max(axis=1)
    s = np.abs(pts).sum(axis=1)
    # smallest r whose max-norm ball around the point reaches |y|_1 <= 1
    dist = np.maximum.reduce([np.zeros_like(s), (s - 1) / 2, a - 1])
    clear = np.abs(dist - 0.5) > 1e-9
    member = geometry.contains_many(grown, pts)
    assert np.array_equal(member[clear], dist[clear] <= 0.5)
    assert geometry.contains(grown, (1.5, 0.5)) and not geometry.contains(grown, (1.5, 0.51))
