"""
Error against the closed-form linear reachable set, convergence studies, topology reports
and the full-vs-boundary comparator.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from geometry import Box, ConvexBody
from grid import BoundaryState, GridSet, connected_components, extract_layers
from scenarios import ScenarioConfig, build_scenario, with_overrides
from scheme import FullState, State, layers_of, run

log = logging.getLogger(__name__)

LINEAR_SCENARIOS = ("linear2d",)


class UnsupportedScenarioError(ValueError):
    pass


def exact_linear_reachable(T: float, dim: int = 2) -> ConvexBody:
    """Reachable set of x' in x + B_1 from {0}: the box of radius e^T - 1."""
    if T < 0:
        raise ValueError("T must be non-negative")
    return ConvexBody(Box.centered(np.zeros(dim), math.expm1(T)))


def _lattice_box(state: State) -> tuple[np.ndarray, np.ndarray, float]:
    """Index bounds (lo, hi) of the lattice box a state represents."""
    if isinstance(state, FullState):
        cells = state.cells
        if not len(cells):
            raise ValueError("cannot measure the error of an empty state")
        lo, hi = cells.bounds()  # type: ignore[misc]
        if len(cells) != int(np.prod(hi - lo + 1)):
            raise ValueError("full state is not a lattice box")
        return lo, hi, cells.spacing
    b0 = state.boundary
    if not len(b0):
        raise ValueError("cannot measure the error of an empty state")
    lo, hi = b0.bounds()  # type: ignore[misc]
    on_face = np.any((b0.cells == lo) | (b0.cells == hi), axis=1)
    extent = hi - lo + 1
    inner = np.prod(np.maximum(extent - 2, 0))
    if not on_face.all() or len(b0) != int(np.prod(extent) - inner):
        raise ValueError("boundary layer is not the perimeter of a lattice box")
    return lo, hi, b0.spacing


def _point_gap(y: float, lo: int, hi: int, rho: float) -> float:
    i = min(max(math.floor(y / rho), lo), hi)
    return min(abs(y - i * rho), abs(y - min(i + 1, hi) * rho))


def _axis_gap(lo: int, hi: int, rho: float, r: float) -> float:
    """sup over y in [-r, r] of the distance from y to {i*rho : lo <= i <= hi}."""
    gaps = [_point_gap(-r, lo, hi, rho), _point_gap(r, lo, hi, rho)]
    # Midpoints between consecutive lattice points inside [-r, r] sit rho/2 away.
    first = max(lo, math.ceil(-r / rho - 0.5))
    last = min(hi - 1, math.floor(r / rho - 0.5))
    if first <= last:
        gaps.append(rho / 2)
    return max(gaps)


def error_vs_exact(state: State, T: float, scenario_name: str = "linear2d") -> float:
    """Max-norm Hausdorff distance between the discrete set and the exact box of radius e^T - 1.

    Boundary states are measured through the lattice box whose perimeter they are, so both
    variants report the same number for the same step.
    """
    if scenario_name not in LINEAR_SCENARIOS:
        raise UnsupportedScenarioError(f"closed-form reachable set only known for {', '.join(LINEAR_SCENARIOS)}")
    lo, hi, rho = _lattice_box(state)
    r = math.expm1(T)
    overhang = max(0.0, float(np.max(np.maximum(-lo, hi))) * rho - r)
    missing = max(_axis_gap(int(a), int(b), rho, r) for a, b in zip(lo, hi))
    return max(overhang, missing)


@dataclass
class ErrorRecord:
    h: float
    rho: float
    T: float
    hausdorff_error: float
    wall_ms_boundary: float
    cells_touched_boundary: int
    wall_ms_full: float | None = None
    cells_touched_full: int | None = None


def _slope(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    pairs = [(x, y) for x, y in zip(xs, ys) if x and y and x > 0 and y > 0]
    if len(pairs) < 2:
        return None
    lx, ly = np.log([p[0] for p in pairs]), np.log([p[1] for p in pairs])
    if np.ptp(lx) == 0:
        return None
    return float(np.polyfit(lx, ly, 1)[0])


@dataclass
class StudyResult:
    records: list[ErrorRecord] = field(default_factory=list)
    order_h: float | None = None
    cost_rate_full: float | None = None
    cost_rate_boundary: float | None = None

    def to_dict(self) -> dict:
        return {
            "order_h": self.order_h,
            "cost_rate_full": self.cost_rate_full,
            "cost_rate_boundary": self.cost_rate_boundary,
            "records": [r.__dict__ for r in self.records],
        }


def convergence_study(
    h_list: Sequence[float],
    template: ScenarioConfig,
    T: float | None = None,
    with_full: bool = True,
    threads: int = 1,
) -> StudyResult:
    """Run the boundary (and full) scheme for each h with rho = h^2 and fit error trends.

    order_h is the log-log slope of error against h; cost rates are minus the slope of
    error against wall time.
    """
    result = StudyResult()
    T = template.T if T is None else T
    for h in h_list:
        cfg = with_overrides(template, h=float(h), T=T)
        cfg.rho = float(h) ** 2
        scenario = build_scenario(cfg)
        boundary = run("boundary", scenario, threads=threads, with_components=False, keep_states=True)
        record = ErrorRecord(
            h=float(h),
            rho=cfg.rho,
            T=T,
            hausdorff_error=error_vs_exact(boundary.final_state, T, template.name),  # type: ignore[arg-type]
            wall_ms_boundary=boundary.total_wall_ms,
            cells_touched_boundary=boundary.total_sources_touched,
        )
        if with_full:
            full = run("full", scenario, threads=threads, with_components=False)
            record.wall_ms_full = full.total_wall_ms
            record.cells_touched_full = full.total_sources_touched
        log.info(
            "study h=%g rho=%g error=%.6g boundary %.0f ms full %s ms",
            record.h, record.rho, record.hausdorff_error, record.wall_ms_boundary,
            f"{record.wall_ms_full:.0f}" if record.wall_ms_full is not None else "-",
        )
        result.records.append(record)
    errors = [r.hausdorff_error for r in result.records]
    result.order_h = _slope([r.h for r in result.records], errors)
    rate_b = _slope([r.wall_ms_boundary for r in result.records], errors)
    result.cost_rate_boundary = -rate_b if rate_b is not None else None
    if with_full:
        rate_f = _slope([r.wall_ms_full or 0.0 for r in result.records], errors)
        result.cost_rate_full = -rate_f if rate_f is not None else None
    return result


@dataclass(frozen=True)
class TopologyReport:
    boundary_components: int
    enclosed_voids: int | None


def enclosed_voids(boundary: GridSet, outer: GridSet) -> int:
    """Planar holes: 4-connected pieces of the complement of the boundary layer that hold
    outer-layer cells and do not reach the frame."""
    if boundary.dim != 2:
        raise ValueError("void counting needs dimension 2")
    if not len(boundary):
        return 0
    cells = np.concatenate([boundary.cells, outer.cells]) if len(outer) else boundary.cells
    lo = cells.min(axis=0) - 1
    shape = tuple(int(v) for v in cells.max(axis=0) - lo + 2)
    free = np.ones(shape, dtype=bool)
    idx = boundary.cells - lo
    free[idx[:, 0], idx[:, 1]] = False
    labels, _ = ndimage.label(free)
    frame = np.unique(np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]]))
    if not len(outer):
        return 0
    oidx = outer.cells - lo
    exterior = np.unique(labels[oidx[:, 0], oidx[:, 1]])
    return int(len(np.setdiff1d(exterior[exterior > 0], frame)))


def topology_report(state: State) -> TopologyReport:
    boundary, outer = layers_of(state)
    components = len(connected_components(boundary))
    voids = enclosed_voids(boundary, outer) if boundary.dim == 2 else None
    return TopologyReport(components, voids)


@dataclass
class StepComparison:
    index: int
    boundary_equal: bool
    outer_equal: bool
    boundary_diff: GridSet = field(repr=False)
    outer_diff: GridSet = field(repr=False)

    @property
    def equal(self) -> bool:
        return self.boundary_equal and self.outer_equal

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "boundary_equal": self.boundary_equal,
            "outer_equal": self.outer_equal,
            "boundary_diff_cells": len(self.boundary_diff),
            "outer_diff_cells": len(self.outer_diff),
        }


def compare_runs(full_states: Sequence[FullState], boundary_states: Sequence[BoundaryState]) -> list[StepComparison]:
    """Per step: do the boundary scheme's layers equal the layers of the full scheme's set?"""
    if len(full_states) != len(boundary_states):
        raise ValueError(f"runs differ in length: {len(full_states)} full vs {len(boundary_states)} boundary")
    out = []
    for full, bnd in zip(full_states, boundary_states):
        layers = extract_layers(full.cells, 0, 1)
        b_diff = layers[0] ^ bnd.boundary
        o_diff = layers[1] ^ bnd.outer
        out.append(StepComparison(bnd.step_index, not len(b_diff), not len(o_diff), b_diff, o_diff))
        if len(b_diff) or len(o_diff):
            log.warning(
                "Step %d: boundary differs in %d cells, outer layer in %d", bnd.step_index, len(b_diff), len(o_diff)
            )
    return out
