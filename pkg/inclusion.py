"""
Right-hand side F(t,x) = f(t,x) + U of a differential inclusion, its Euler map
Phi(t,x) = x + h*F(t,x), the lattice blowups of Phi, a Lipschitz sampler and the
constructive inverse iteration.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

import config
from exprparser import Expr, ExprError, evaluate, parse
from geometry import Box, ConvexBody, contains, has_interior, box_band_boxes, rasterize, rasterize_band, rasterize_boundary
from grid import GridIndex, GridSet, union_all, union_of_boxes

log = logging.getLogger(__name__)

# Built-in drift tags -> expression strings (dimension 2 for mustache).
BUILTIN_DRIFTS = {
    "identity": lambda dim: [f"x{k}" for k in range(1, dim + 1)],
    "zero": lambda dim: ["0"] * dim,
    "mustache": lambda dim: ["x1*(1-abs(x1)) - x1*x2", "x1^4 - 1/2"],
}


class DriftEvaluationError(RuntimeError):
    def __init__(self, t: float, x: Sequence[float], cause: Exception):
        self.t = t
        self.x = tuple(float(v) for v in x)
        super().__init__(f"drift evaluation failed at t={t:g}, x={self.x}: {cause}")


class InverseIterationError(RuntimeError):
    """Residuals did not contract; the declared L is probably too small."""


@dataclass(frozen=True)
class InclusionRHS:
    dim: int
    drift: tuple[Expr, ...]
    disturbance: ConvexBody
    lipschitz: float | None = None
    lipschitz_certified: bool = True
    drift_sources: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.drift) != self.dim:
            raise ValueError(f"drift has {len(self.drift)} components, dimension is {self.dim}")
        if self.disturbance.dim != self.dim:
            raise ValueError("disturbance dimension mismatch")
        if not contains(self.disturbance, np.zeros(self.dim), tol=config.TIE_RTOL):
            raise ValueError("disturbance must contain 0")
        if not isinstance(self.disturbance.world(), Box) and not has_interior(self.disturbance):
            log.warning("Polytope disturbance looks flat; boundary rasterization needs a nonempty interior")

    @classmethod
    def from_strings(
        cls,
        drift: str | Sequence[str],
        disturbance: ConvexBody,
        dim: int | None = None,
        lipschitz: float | None = None,
        lipschitz_certified: bool = True,
    ) -> InclusionRHS:
        """drift is a list of expressions or a built-in tag (identity, zero, mustache)."""
        dim = dim or disturbance.dim
        if isinstance(drift, str):
            if drift not in BUILTIN_DRIFTS:
                raise ValueError(f"unknown drift tag {drift!r}; known: {', '.join(BUILTIN_DRIFTS)}")
            if drift == "mustache" and dim != 2:
                raise ValueError("mustache drift is planar (dim 2)")
            sources = BUILTIN_DRIFTS[drift](dim)
        else:
            sources = list(drift)
        return cls(
            dim=dim,
            drift=tuple(parse(s, dim) for s in sources),
            disturbance=disturbance,
            lipschitz=lipschitz,
            lipschitz_certified=lipschitz_certified,
            drift_sources=tuple(sources),
        )

    def drift_at(self, t: float, x: np.ndarray) -> np.ndarray:
        """f(t, x) for one point (shape (d,)) or many (shape (n, d))."""
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        cols = [pts[:, k] for k in range(self.dim)]
        try:
            values = [np.broadcast_to(evaluate(e, cols, t), (len(pts),)) for e in self.drift]
        except ExprError as e:
            raise DriftEvaluationError(t, self._first_failure(t, pts), e) from e
        out = np.stack(values, axis=1)
        return out[0] if x.ndim == 1 else out

    def _first_failure(self, t: float, pts: np.ndarray) -> np.ndarray:
        for row in pts:
            try:
                for e in self.drift:
                    evaluate(e, list(row), t)
            except ExprError:
                return row
        return pts[0]


def euler_image(rhs: InclusionRHS, t: float, x: Sequence[float], h: float) -> ConvexBody:
    """Phi(t,x) = x + h*f(t,x) + h*U as a carried body."""
    if not h > 0:
        raise ValueError("step size h must be positive")
    x = np.asarray(x, dtype=float)
    center = x + h * rhs.drift_at(t, x)
    return ConvexBody(rhs.disturbance.world(), translation=tuple(center), scale=h)


def _check_alpha(alpha: float, rho: float) -> None:
    if alpha < rho / 2:
        log.warning("Blowup alpha=%g below rho/2=%g; images may miss the lattice", alpha, rho / 2)


def image_cells(rhs: InclusionRHS, t: float, x: GridIndex, h: float, alpha: float, rho: float) -> GridSet:
    _check_alpha(alpha, rho)
    return rasterize(euler_image(rhs, t, np.asarray(x) * rho, h), alpha, rho)


def boundary_cells(rhs: InclusionRHS, t: float, x: GridIndex, h: float, alpha: float, rho: float) -> GridSet:
    _check_alpha(alpha, rho)
    return rasterize_boundary(euler_image(rhs, t, np.asarray(x) * rho, h), alpha, rho)


def band_cells(
    rhs: InclusionRHS, t: float, x: GridIndex, h: float, alpha: float, kappa: float, rho: float
) -> GridSet:
    """Cells within alpha + kappa of the boundary of Phi(t,x)."""
    if kappa < 0:
        raise ValueError("band radius kappa must be non-negative")
    return rasterize_boundary(euler_image(rhs, t, np.asarray(x) * rho, h), alpha + kappa, rho)


def _map_shard(
    rhs: InclusionRHS, t: float, cells: np.ndarray, h: float, outer: float, inner: float | None, rho: float
) -> GridSet:
    xs = cells * rho
    centers = xs + h * rhs.drift_at(t, xs)
    U = rhs.disturbance.world()
    if isinstance(U, Box):
        blo, bhi = box_band_boxes(centers + h * U.lo_array, centers + h * U.hi_array, outer, inner, rho)
        return union_of_boxes(blo, bhi, rhs.dim, rho)
    parts = [rasterize_band(ConvexBody(U, tuple(c), h), outer, inner, rho) for c in centers]
    return union_all(parts, rhs.dim, rho)


def map_cells(
    rhs: InclusionRHS,
    t: float,
    sources: GridSet,
    h: float,
    outer: float,
    inner: float | None,
    rho: float,
    threads: int = 1,
) -> GridSet:
    """Union over x in sources of rasterize_band(Phi(t, rho*x), outer, inner, rho)."""
    if not h > 0:
        raise ValueError("step size h must be positive")
    if not len(sources):
        return GridSet.empty(rhs.dim, rho)
    shards = [s for s in np.array_split(sources.cells, max(1, threads)) if len(s)]
    if len(shards) == 1:
        return _map_shard(rhs, t, shards[0], h, outer, inner, rho)
    with ThreadPoolExecutor(max_workers=len(shards)) as pool:
        parts = list(pool.map(lambda s: _map_shard(rhs, t, s, h, outer, inner, rho), shards))
    return union_all(parts, rhs.dim, rho)


@dataclass(frozen=True)
class LipschitzEstimate:
    raw: float
    reported: float
    certified: bool = False

    def as_dict(self) -> dict:
        return {"raw": self.raw, "reported": self.reported, "certified": self.certified}


def estimate_lipschitz(rhs: InclusionRHS, domain: Box, samples_per_axis: int = 21, t: float = 0.0) -> LipschitzEstimate:
    """Max-norm Lipschitz constant of f sampled by central differences over a regular grid."""
    if samples_per_axis < 2:
        raise ValueError("samples_per_axis must be >= 2")
    if domain.dim != rhs.dim:
        raise ValueError("domain dimension mismatch")
    axes = [np.linspace(lo, hi, samples_per_axis) for lo, hi in zip(domain.lo, domain.hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, rhs.dim)
    jac = np.empty((len(pts), rhs.dim, rhs.dim))
    for k in range(rhs.dim):
        width = (domain.hi[k] - domain.lo[k]) or 1.0
        step = width / (10 * samples_per_axis)
        e = np.zeros(rhs.dim)
        e[k] = step
        jac[:, :, k] = (rhs.drift_at(t, pts + e) - rhs.drift_at(t, pts - e)) / (2 * step)
    raw = float(np.abs(jac).sum(axis=2).max())
    estimate = LipschitzEstimate(raw=raw, reported=raw * config.LIPSCHITZ_SAFETY)
    log.warning("Lipschitz estimate %.6g (reported %.6g) is sampled, not certified", estimate.raw, estimate.reported)
    return estimate


@dataclass
class InverseResult:
    x: np.ndarray
    residuals: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return max(0, len(self.residuals) - 1)

    @property
    def ratios(self) -> list[float]:
        r = self.residuals
        return [r[k + 1] / r[k] for k in range(len(r) - 1) if r[k] > 0]


def inverse_image_point(
    rhs: InclusionRHS,
    t: float,
    h: float,
    x0: Sequence[float],
    y_hat: Sequence[float],
    tol: float = 1e-12,
    lipschitz: float | None = None,
) -> InverseResult:
    """Find x with y_hat in Phi(t,x), starting from x0.

    Each round projects y_hat onto Phi(t,x^k) (clipping, box disturbances only) and moves x
    by the residual; residuals contract by at least L*h.
    """
    U = rhs.disturbance.world()
    if not isinstance(U, Box):
        raise ValueError("inverse_image_point needs a box disturbance")
    if not tol > 0:
        raise ValueError("tol must be positive")
    L = lipschitz if lipschitz is not None else rhs.lipschitz
    if L is None:
        raise ValueError("inverse_image_point needs a Lipschitz constant")
    Lh = max(L, 0.0) * h
    if Lh >= 1:
        raise ValueError(f"L*h = {Lh:g} must be < 1")
    y = np.asarray(y_hat, dtype=float)
    x = np.asarray(x0, dtype=float).copy()

    def residual(at: np.ndarray) -> np.ndarray:
        center = at + h * rhs.drift_at(t, at)
        return y - np.clip(y, center + h * U.lo_array, center + h * U.hi_array)

    r = residual(x)
    result = InverseResult(x=x, residuals=[float(np.abs(r).max())])
    if result.residuals[0] <= tol:
        return result
    cap = 50 + (math.ceil(math.log(tol / result.residuals[0]) / math.log(Lh)) if Lh > 0 else 1)
    for _ in range(cap):
        x = x + r
        r = residual(x)
        norm = float(np.abs(r).max())
        prev = result.residuals[-1]
        result.residuals.append(norm)
        if prev > tol and norm > Lh * prev * (1 + 1e-9) + tol:
            log.warning("Inverse iteration residual ratio %.3g exceeds L*h=%.3g", norm / prev, Lh)
        if norm <= tol:
            result.x = x
            return result
    raise InverseIterationError(
        f"no convergence after {cap} iterations (residual {result.residuals[-1]:.3g}); L may be underestimated"
    )
