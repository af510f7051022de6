"""
Scheme parameters and the three steppers: the fully discrete Euler scheme, the preliminary
boundary Euler scheme and the final boundary Euler scheme with the kappa band.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence, Union

import config
from geometry import ConvexBody, rasterize
from grid import (
    BoundaryState,
    GridMismatchError,
    GridSet,
    adjacent_filter,
    connected_components,
    derive_adjacent_layers,
    extract_layers,
    is_chain_connected,
    union_all,
)
from inclusion import InclusionRHS, map_cells

if TYPE_CHECKING:
    from scenarios import Scenario

log = logging.getLogger(__name__)

VARIANTS = ("full", "preliminary", "boundary")


class ParameterError(ValueError):
    pass


class SchemeError(RuntimeError):
    pass


class DegenerateStateError(SchemeError):
    pass


class DisconnectedInitialSetError(SchemeError):
    pass


@dataclass(frozen=True)
class SchemeParams:
    L: float
    h: float
    rho: float
    n_steps: int = 0
    beta_star: float = 0.0
    kappa_override: float | None = None
    unchecked: bool = False

    @property
    def h_star(self) -> float:
        return 1.0 / (4.0 * self.L)

    @property
    def alpha_star(self) -> float:
        return (1.0 + self.L * self.h) * self.rho / 2.0

    @property
    def beta_bound(self) -> float:
        Lh = self.L * self.h
        return min((1.0 - 3.0 * Lh) * self.rho, (1.0 - Lh) * self.rho / 2.0)

    @property
    def kappa_formula(self) -> float:
        # The exterior points that matter lie in the first two outer layers, so the
        # distance-to-M term is bounded by 2*rho.
        Lh = self.L * self.h
        return (
            (2.0 + 2.0 * Lh) / (1.0 - Lh) * self.alpha_star
            + (3.0 + Lh) / (1.0 - Lh) * self.beta_star
            + (1.0 + Lh) * 2.0 * self.rho
        )

    @property
    def kappa_hat(self) -> float:
        return self.kappa_formula if self.kappa_override is None else self.kappa_override

    def echo(self) -> dict:
        out = asdict(self)
        out.update(
            h_star=self.h_star,
            alpha_star=self.alpha_star,
            beta_bound=self.beta_bound,
            kappa_hat=self.kappa_hat,
            kappa_source="override" if self.kappa_override is not None else "formula",
        )
        return out


def validate(params: SchemeParams, enforce_step_bound: bool = True) -> SchemeParams:
    """Check the admissible parameter regime; returns params unchanged when valid."""
    if not params.L > 0:
        raise ParameterError(f"L must be positive (floor {config.LIPSCHITZ_FLOOR:g} for disturbance-only dynamics)")
    if not params.h > 0:
        raise ParameterError("h must be positive")
    if not params.rho > 0:
        raise ParameterError("rho must be positive")
    if params.n_steps < 0:
        raise ParameterError("n_steps must be non-negative")
    h_star = params.h_star
    if params.h > h_star:
        if enforce_step_bound and not params.unchecked:
            raise ParameterError(f"h exceeds h* = {h_star:g} (h = {params.h:g}, L = {params.L:g})")
        log.warning("Step-size gate skipped: h=%g exceeds h*=%g; results are not guaranteed", params.h, h_star)
    elif params.h >= (1.0 - config.H_STAR_WARN_FRACTION) * h_star:
        log.warning("h=%g is within %d%% of h*=%g", params.h, round(100 * config.H_STAR_WARN_FRACTION), h_star)
    bound = params.beta_bound
    if not 0.0 <= params.beta_star < bound and not (params.unchecked and params.beta_star == 0.0):
        raise ParameterError(f"beta* = {params.beta_star:g} outside admissible interval [0, {bound:g})")
    if params.kappa_override is not None and not params.kappa_override >= 0:
        raise ParameterError("kappa override must be non-negative")
    return params


@dataclass(frozen=True)
class FullState:
    cells: GridSet
    step_index: int = 0


State = Union[FullState, BoundaryState]
InitialSet = Union[GridSet, ConvexBody, Sequence[ConvexBody]]


@dataclass
class WorkCounter:
    """Source cells whose images were computed."""

    sources: int = 0

    def add(self, *sets: GridSet) -> None:
        self.sources += sum(len(s) for s in sets)


def _initial_cells(X0: InitialSet, params: SchemeParams) -> GridSet:
    if isinstance(X0, GridSet):
        if X0.spacing != params.rho:
            raise GridMismatchError(f"initial cells have spacing {X0.spacing}, scheme uses rho={params.rho}")
        cells = X0
    else:
        bodies = [X0] if isinstance(X0, ConvexBody) else list(X0)
        if not bodies:
            raise DegenerateStateError("initial set is empty")
        cells = union_all([rasterize(b, params.alpha_star, params.rho) for b in bodies], bodies[0].dim, params.rho)
    if not len(cells):
        raise DegenerateStateError("initial set rasterizes to no cells")
    return cells


def init_full(X0: InitialSet, params: SchemeParams) -> FullState:
    return FullState(_initial_cells(X0, params), 0)


def init_boundary(X0: InitialSet, params: SchemeParams, strict: bool = True, meta: dict | None = None) -> BoundaryState:
    cells = _initial_cells(X0, params)
    connected = is_chain_connected(cells)
    if meta is not None:
        meta["initial_chain_connected"] = connected
    if not connected:
        if strict:
            raise DisconnectedInitialSetError("initial set not chain-connected")
        log.warning("Initial set not chain-connected; boundary layers may diverge from the full scheme")
    layers = extract_layers(cells, 0, 1)
    return BoundaryState(layers[0], layers[1], 0)


def step_full(
    state: FullState,
    rhs: InclusionRHS,
    params: SchemeParams,
    t: float,
    threads: int = 1,
    counter: WorkCounter | None = None,
) -> FullState:
    if counter is not None:
        counter.add(state.cells)
    cells = map_cells(rhs, t, state.cells, params.h, params.alpha_star, None, params.rho, threads)
    return FullState(cells, state.step_index + 1)


def _next_layers(S0: GridSet, S1: GridSet, step_index: int) -> BoundaryState:
    outer = adjacent_filter(S1 - S0, S0)
    boundary = adjacent_filter(S0, outer)
    if not len(boundary):
        raise DegenerateStateError(f"boundary layer collapsed at step {step_index}")
    return BoundaryState(boundary, outer, step_index)


def step_boundary_preliminary(
    state: BoundaryState,
    rhs: InclusionRHS,
    params: SchemeParams,
    t: float,
    threads: int = 1,
    counter: WorkCounter | None = None,
) -> BoundaryState:
    alpha, h, rho = params.alpha_star, params.h, params.rho
    b0, b1 = state.boundary, state.outer
    inner, outer2 = derive_adjacent_layers(b0, b1)
    exterior = b1 | outer2
    if counter is not None:
        counter.add(b0, inner, exterior)
    S0 = map_cells(rhs, t, b0, h, alpha, None, rho, threads) | map_cells(rhs, t, inner, h, alpha, alpha, rho, threads)
    S1 = map_cells(rhs, t, exterior, h, alpha, alpha, rho, threads)
    return _next_layers(S0, S1, state.step_index + 1)


def step_boundary(
    state: BoundaryState,
    rhs: InclusionRHS,
    params: SchemeParams,
    t: float,
    threads: int = 1,
    counter: WorkCounter | None = None,
    pooled: bool = False,
) -> BoundaryState:
    """One step of the final scheme.

    The image of each boundary cell is cut down to cells within alpha + kappa of that same
    image's boundary (pooled=True intersects the unions instead).
    """
    alpha, h, rho, kappa = params.alpha_star, params.h, params.rho, params.kappa_hat
    b0, b1 = state.boundary, state.outer
    inner, outer2 = derive_adjacent_layers(b0, b1)
    exterior = b1 | outer2
    if counter is not None:
        counter.add(b0, inner, exterior)
    if math.isinf(kappa):
        S00 = map_cells(rhs, t, b0, h, alpha, None, rho, threads)
    elif pooled:
        S00 = map_cells(rhs, t, b0, h, alpha, None, rho, threads) & map_cells(
            rhs, t, b0, h, alpha + kappa, alpha + kappa, rho, threads
        )
    else:
        S00 = map_cells(rhs, t, b0, h, alpha, alpha + kappa, rho, threads)
    S0m1 = map_cells(rhs, t, inner, h, alpha, alpha, rho, threads)
    S1 = map_cells(rhs, t, exterior, h, alpha, alpha, rho, threads)
    return _next_layers(S00 | S0m1, S1, state.step_index + 1)


@dataclass
class StepRecord:
    index: int
    t: float
    boundary_cells: int
    outer_cells: int
    full_cells: int | None
    wall_ms: float
    components: int | None
    sources_touched: int


@dataclass
class RunReport:
    scenario: str
    variant: str
    params: dict
    metadata: dict = field(default_factory=dict)
    steps: list[StepRecord] = field(default_factory=list)
    states: list[State] = field(default_factory=list, repr=False)

    @property
    def total_sources_touched(self) -> int:
        return sum(s.sources_touched for s in self.steps)

    @property
    def total_wall_ms(self) -> float:
        return sum(s.wall_ms for s in self.steps)

    @property
    def final_state(self) -> State | None:
        return self.states[-1] if self.states else None

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "variant": self.variant,
            "params": self.params,
            "metadata": self.metadata,
            "total_sources_touched": self.total_sources_touched,
            "steps": [asdict(s) for s in self.steps],
        }


# emit(variant, step_index, boundary, outer, full_or_None)
EmitFn = Callable[[str, int, GridSet, GridSet, Union[GridSet, None]], None]


def layers_of(state: State) -> tuple[GridSet, GridSet]:
    """(boundary, outer) of a state; full states are layered on demand."""
    if isinstance(state, BoundaryState):
        return state.boundary, state.outer
    layers = extract_layers(state.cells, 0, 1)
    return layers[0], layers[1]


def run(
    variant: str,
    scenario: Scenario,
    params: SchemeParams | None = None,
    emit: EmitFn | None = None,
    threads: int = 1,
    pooled: bool = False,
    strict: bool | None = None,
    with_components: bool = True,
    keep_states: bool = False,
) -> RunReport:
    """Iterate one variant for n_steps; per-step counts, timings and optional dumps."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    params = validate(params or scenario.params)
    strict = scenario.strict if strict is None else strict
    report = RunReport(scenario=scenario.name, variant=variant, params=params.echo())
    report.metadata.update(
        threads=threads,
        unchecked=params.unchecked,
        lipschitz_certified=scenario.rhs.lipschitz_certified,
        kappa_source=report.params["kappa_source"],
        s00_intersection="pooled" if pooled else "per-cell",
        strict_connectivity=strict,
    )
    rhs = scenario.rhs
    counter = WorkCounter()

    def record(state: State, wall_ms: float, touched: int) -> None:
        boundary, outer = layers_of(state)
        full = state.cells if isinstance(state, FullState) else None
        report.steps.append(
            StepRecord(
                index=state.step_index,
                t=state.step_index * params.h,
                boundary_cells=len(boundary),
                outer_cells=len(outer),
                full_cells=len(full) if full is not None else None,
                wall_ms=wall_ms,
                components=len(connected_components(boundary)) if with_components else None,
                sources_touched=touched,
            )
        )
        if keep_states:
            report.states.append(state)
        if emit is not None:
            emit(variant, state.step_index, boundary, outer, full)

    start = time.perf_counter()
    if variant == "full":
        state: State = init_full(scenario.initial, params)
    else:
        state = init_boundary(scenario.initial, params, strict=strict, meta=report.metadata)
    record(state, (time.perf_counter() - start) * 1000.0, 0)

    for n in range(params.n_steps):
        t = n * params.h
        before = counter.sources
        start = time.perf_counter()
        try:
            if variant == "full":
                state = step_full(state, rhs, params, t, threads, counter)  # type: ignore[arg-type]
            elif variant == "preliminary":
                state = step_boundary_preliminary(state, rhs, params, t, threads, counter)  # type: ignore[arg-type]
            else:
                state = step_boundary(state, rhs, params, t, threads, counter, pooled)  # type: ignore[arg-type]
        except Exception as e:
            e.add_note(f"while computing step {n + 1} of the {variant} scheme ({scenario.name})")
            raise
        wall_ms = (time.perf_counter() - start) * 1000.0
        record(state, wall_ms, counter.sources - before)
        last = report.steps[-1]
        log.info(
            "%s step %d t=%.4g boundary=%d outer=%d %.1f ms",
            variant, last.index, last.t, last.boundary_cells, last.outer_cells, wall_ms,
        )
    return report
