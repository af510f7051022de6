"""
Convex bodies under the max-norm: axis boxes and H-polytopes carried by an affine map.

Inflation and erosion by a max-norm ball, membership, signed distance to the boundary
and exact rasterization onto the lattice rho*Z^d. An empty body is represented by None.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

import config
from grid import GridSet, union_of_boxes

log = logging.getLogger(__name__)


def _floats(values: Sequence[float]) -> tuple[float, ...]:
    return tuple(float(v) for v in np.asarray(values, dtype=float).ravel())


def _tie(values: np.ndarray) -> np.ndarray:
    return config.TIE_RTOL * np.maximum(1.0, np.abs(values))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box prod [lo_k, hi_k]; zero width on an axis is allowed."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo, hi = _floats(self.lo), _floats(self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("box bounds must have the same positive dimension")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box has lo > hi: {lo} / {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def centered(cls, center: Sequence[float], radius: float) -> Box:
        c = np.asarray(center, dtype=float)
        return cls(tuple(c - radius), tuple(c + radius))

    @classmethod
    def point(cls, p: Sequence[float]) -> Box:
        return cls(tuple(p), tuple(p))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def lo_array(self) -> np.ndarray:
        return np.array(self.lo)

    @property
    def hi_array(self) -> np.ndarray:
        return np.array(self.hi)


@dataclass(frozen=True)
class HPolytope:
    """{x : a_j . x <= b_j} with a bounding box that contains it (trusted input)."""

    normals: tuple[tuple[float, ...], ...]
    offsets: tuple[float, ...]
    bbox: Box

    def __post_init__(self):
        A = np.asarray(self.normals, dtype=float)
        b = np.asarray(self.offsets, dtype=float).ravel()
        if A.ndim != 2 or A.shape[0] != len(b):
            raise ValueError("need one offset per normal")
        if A.shape[1] != self.bbox.dim:
            raise ValueError("normals and bounding box differ in dimension")
        if np.any(np.abs(A).sum(axis=1) == 0):
            raise ValueError("zero normal in H-polytope")
        object.__setattr__(self, "normals", tuple(tuple(float(v) for v in row) for row in A))
        object.__setattr__(self, "offsets", tuple(float(v) for v in b))

    @classmethod
    def from_box(cls, box: Box) -> HPolytope:
        eye = np.eye(box.dim)
        return cls(
            tuple(map(tuple, np.vstack([eye, -eye]))),
            tuple(np.concatenate([box.hi_array, -box.lo_array])),
            box,
        )

    @property
    def dim(self) -> int:
        return self.bbox.dim

    @cached_property
    def A(self) -> np.ndarray:
        return np.array(self.normals)

    @cached_property
    def b(self) -> np.ndarray:
        return np.array(self.offsets)

    @cached_property
    def norms1(self) -> np.ndarray:
        return np.abs(self.A).sum(axis=1)


Shape = Union[Box, HPolytope]


@dataclass(frozen=True)
class ConvexBody:
    """shape mapped by x -> scale * x + translation."""

    shape: Shape
    translation: tuple[float, ...] | None = None
    scale: float = 1.0
    _world: Shape | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("carrier scale must be positive")
        t = (0.0,) * self.shape.dim if self.translation is None else _floats(self.translation)
        if len(t) != self.shape.dim:
            raise ValueError("translation dimension mismatch")
        object.__setattr__(self, "translation", t)

    @property
    def dim(self) -> int:
        return self.shape.dim

    def world(self) -> Shape:
        """The shape in world coordinates."""
        if self._world is None:
            object.__setattr__(self, "_world", _transform(self.shape, self.scale, np.array(self.translation)))
        return self._world  # type: ignore[return-value]


def _transform(shape: Shape, s: float, c: np.ndarray) -> Shape:
    if s == 1.0 and not c.any():
        return shape
    if isinstance(shape, Box):
        return Box(tuple(shape.lo_array * s + c), tuple(shape.hi_array * s + c))
    bbox = _transform(shape.bbox, s, c)
    return HPolytope(shape.normals, tuple(s * shape.b + shape.A @ c), bbox)  # type: ignore[arg-type]


def as_body(P: ConvexBody | Shape) -> ConvexBody:
    return P if isinstance(P, ConvexBody) else ConvexBody(P)


def _inflate_shape(shape: Shape, alpha: float) -> Shape:
    if isinstance(shape, Box):
        return Box(tuple(shape.lo_array - alpha), tuple(shape.hi_array + alpha))
    bbox = _inflate_shape(shape.bbox, alpha)
    eye = np.eye(shape.dim)
    A = np.vstack([shape.A, eye, -eye])
    b = np.concatenate([shape.b + alpha * shape.norms1, bbox.hi_array, -bbox.lo_array])  # type: ignore[union-attr]
    return HPolytope(tuple(map(tuple, A)), tuple(b), bbox)  # type: ignore[arg-type]


def _erode_shape(shape: Shape, alpha: float) -> Shape | None:
    if isinstance(shape, Box):
        lo, hi = shape.lo_array + alpha, shape.hi_array - alpha
        if np.any(lo > hi):
            return None
        return Box(tuple(lo), tuple(hi))
    bbox = _erode_shape(shape.bbox, alpha)
    if bbox is None:
        return None
    return HPolytope(shape.normals, tuple(shape.b - alpha * shape.norms1), bbox)  # type: ignore[arg-type]


def inflate(P: ConvexBody | Shape, alpha: float) -> ConvexBody:
    """Body containing P + B_alpha: exact for boxes, an over-approximation for H-polytopes."""
    if alpha < 0:
        raise ValueError("inflation radius must be non-negative")
    return ConvexBody(_inflate_shape(as_body(P).world(), alpha))


def erode(P: ConvexBody | Shape, alpha: float) -> ConvexBody | None:
    """{x : x + B_alpha within P}, or None when that is empty (boxes) or inverted (bounding box)."""
    if alpha < 0:
        raise ValueError("erosion radius must be non-negative")
    shape = _erode_shape(as_body(P).world(), alpha)
    return None if shape is None else ConvexBody(shape)


def contains_many(P: ConvexBody | Shape, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
    shape = as_body(P).world()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if isinstance(shape, Box):
        return np.all((pts >= shape.lo_array - tol) & (pts <= shape.hi_array + tol), axis=1)
    return np.all(pts @ shape.A.T <= shape.b + tol * shape.norms1, axis=1)


def contains(P: ConvexBody | Shape, x: Sequence[float], tol: float = 0.0) -> bool:
    return bool(contains_many(P, np.asarray(x, dtype=float)[None, :], tol)[0])


def dist_boundary(P: ConvexBody | Shape, x: Sequence[float], rho: float = 1.0) -> float:
    """Max-norm distance from x to the boundary of P (inscribed radius inside, distance to P outside)."""
    shape = as_body(P).world()
    x = np.asarray(x, dtype=float)
    if isinstance(shape, Box):
        below, above = shape.lo_array - x, x - shape.hi_array
        if np.all(below <= 0) and np.all(above <= 0):
            return float(min((-below).min(), (-above).min()))
        return float(max(below.max(), above.max()))
    slack = (shape.b - shape.A @ x) / shape.norms1
    if np.all(slack >= 0):
        return float(slack.min())
    # Monotone bisection on the inflation radius until x enters inflate(P, r).
    lo_r = 0.0
    bbox_gap = max(float((shape.bbox.lo_array - x).max()), float((x - shape.bbox.hi_array).max()), 0.0)
    hi_r = bbox_gap + float(max(-slack.min(), 0.0)) + rho
    while not contains(inflate(shape, hi_r), x):
        hi_r *= 2.0
    while hi_r - lo_r > config.BISECTION_RTOL * rho:
        mid = 0.5 * (lo_r + hi_r)
        if contains(inflate(shape, mid), x):
            hi_r = mid
        else:
            lo_r = mid
    return hi_r


def has_interior(P: ConvexBody | Shape, samples: int = 17) -> bool:
    """Sampled check that some point of the bounding box lies strictly inside P."""
    shape = as_body(P).world()
    if isinstance(shape, Box):
        return all(h > l for l, h in zip(shape.lo, shape.hi))
    axes = [np.linspace(l, h, samples) for l, h in zip(shape.bbox.lo, shape.bbox.hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, shape.dim)
    slack = shape.b - pts @ shape.A.T
    return bool(np.any(np.all(slack > _tie(shape.b)[None, :], axis=1)))


def box_band_boxes(
    lo: np.ndarray, hi: np.ndarray, outer: float, inner: float | None, rho: float
) -> tuple[np.ndarray, np.ndarray]:
    """Index boxes whose union is rasterize_band for each box row [lo_j, hi_j].

    The band of a box is its inflation minus the strict interior of its erosion. A box with a
    hole splits into 2*d slabs (overlapping at the corners).
    """
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    if outer < 0 or (inner is not None and inner < 0):
        raise ValueError("band radii must be non-negative")
    if not math.isfinite(outer):
        raise ValueError("cannot rasterize an unbounded body")
    out_lo, out_hi = lo - outer, hi + outer
    L = np.ceil((out_lo - _tie(out_lo)) / rho).astype(np.int64)
    H = np.floor((out_hi + _tie(out_hi)) / rho).astype(np.int64)
    if inner is None or math.isinf(inner):
        return L, H
    in_lo, in_hi = lo + inner, hi - inner
    hole_lo = np.maximum(np.floor((in_lo + _tie(in_lo)) / rho).astype(np.int64) + 1, L)
    hole_hi = np.minimum(np.ceil((in_hi - _tie(in_hi)) / rho).astype(np.int64) - 1, H)
    hollow = np.all(hole_lo <= hole_hi, axis=1)
    out_l, out_h = [L[~hollow]], [H[~hollow]]
    Lh, Hh, hl, hh = L[hollow], H[hollow], hole_lo[hollow], hole_hi[hollow]
    for k in range(lo.shape[1]):
        below_hi = Hh.copy()
        below_hi[:, k] = hl[:, k] - 1
        above_lo = Lh.copy()
        above_lo[:, k] = hh[:, k] + 1
        out_l += [Lh, above_lo]
        out_h += [below_hi, Hh]
    return np.concatenate(out_l), np.concatenate(out_h)


def rasterize_band(P: ConvexBody | Shape, outer: float, inner: float | None, rho: float) -> GridSet:
    """Lattice points in inflate(P, outer) that are not strictly inside erode(P, inner).

    inner=None keeps the whole inflation.
    """
    if outer < 0 or (inner is not None and inner < 0):
        raise ValueError("band radii must be non-negative")
    if not math.isfinite(outer):
        raise ValueError("cannot rasterize an unbounded body")
    shape = as_body(P).world()
    if isinstance(shape, Box):
        blo, bhi = box_band_boxes(shape.lo_array, shape.hi_array, outer, inner, rho)
        return union_of_boxes(blo, bhi, shape.dim, rho)
    grown = _inflate_shape(shape, outer)
    box = grown.bbox  # type: ignore[union-attr]
    L = np.ceil((box.lo_array - _tie(box.lo_array)) / rho).astype(np.int64)
    H = np.floor((box.hi_array + _tie(box.hi_array)) / rho).astype(np.int64)
    if np.any(H < L):
        return GridSet.empty(shape.dim, rho)
    axes = [np.arange(l, h + 1) for l, h in zip(L, H)]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, shape.dim)
    pts = idx * rho
    tol = _tie(np.abs(pts).max(axis=1))[:, None]
    keep = np.all(pts @ grown.A.T <= grown.b + tol * grown.norms1, axis=1)  # type: ignore[union-attr]
    if inner is not None and not math.isinf(inner):
        core = _erode_shape(shape, inner)
        if core is not None:
            strict = np.all(pts @ core.A.T < core.b - tol * core.norms1, axis=1)  # type: ignore[union-attr]
            keep &= ~strict
    return GridSet(shape.dim, rho, idx[keep])


def rasterize(P: ConvexBody | Shape, alpha: float, rho: float) -> GridSet:
    """{x in rho*Z^d : dist(x, P) <= alpha}."""
    return rasterize_band(P, alpha, None, rho)


def rasterize_boundary(P: ConvexBody | Shape, alpha: float, rho: float) -> GridSet:
    """{x in rho*Z^d : dist(x, boundary of P) <= alpha}."""
    return rasterize_band(P, alpha, alpha, rho)
