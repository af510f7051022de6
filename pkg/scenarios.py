"""
Scenario configs: pydantic models for the JSON schema with pointer-annotated errors, the
built-in registry, and assembly of a runnable Scenario (right-hand side, initial set, parameters).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import numpy as np
from pydantic import (
    AfterValidator,
    BaseModel,
    ConfigDict,
    Discriminator,
    Field,
    Tag,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

import config
from exprparser import parse
from geometry import Box, ConvexBody, HPolytope
from grid import GridSet
from inclusion import BUILTIN_DRIFTS, InclusionRHS, estimate_lipschitz
from scheme import InitialSet, SchemeParams

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Schema violation; the message starts with a JSON pointer such as /drift/0."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer or "/"
        super().__init__(f"{self.pointer}: {message}")

    @classmethod
    def from_validation(cls, exc: ValidationError, data: Any) -> ConfigError:
        errors = exc.errors()
        first = errors[0]
        pointer = json_pointer(first["loc"], data)
        cause = (first.get("ctx") or {}).get("error")
        if first["type"] in ("union_tag_invalid", "union_tag_not_found"):
            pointer = pointer.rstrip("/") + "/type"
        if isinstance(cause, FieldError):
            pointer = pointer.rstrip("/") + "/" + cause.field
        if first["type"] == "missing":
            message = "required"
        elif first["type"] == "extra_forbidden":
            message = "unknown field"
        elif isinstance(cause, Exception):
            message = str(cause)
        else:
            message = first["msg"]
        if len(errors) > 1:
            message += f" (and {len(errors) - 1} more)"
        return cls(pointer, message)


class FieldError(ValueError):
    """Raised by a model-level check that belongs to one named field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(message)


def json_pointer(loc: tuple, data: Any) -> str:
    """Pointer into the raw input for a pydantic error location; union tags are dropped."""
    parts: list[str] = []
    node, fresh = data, True
    for key in loc:
        if fresh and isinstance(node, dict) and node.get("type") == key:
            fresh = False
            continue
        if isinstance(node, dict) and key in node:
            node = node[key]
        elif isinstance(node, list) and isinstance(key, int) and 0 <= key < len(node):
            node = node[key]
        elif isinstance(key, str) and node is not None and not isinstance(node, dict):
            continue
        else:
            node = None
        parts.append(str(key))
        fresh = True
    return "/" + "/".join(parts)


def _dim(info: ValidationInfo) -> int | None:
    dim = (info.context or {}).get("dim")
    if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
        return None
    return dim


def _dim_length(value: list, info: ValidationInfo) -> list:
    dim = _dim(info)
    if dim is not None and len(value) != dim:
        raise ValueError(f"expected {dim} entries, got {len(value)}")
    return value


def _expression(source: str, info: ValidationInfo) -> str:
    dim = _dim(info)
    if dim is not None:
        parse(source, dim)
    return source


def _drift_tag(name: str) -> str:
    if name not in BUILTIN_DRIFTS:
        raise ValueError(f"unknown drift tag {name!r}; known: {', '.join(BUILTIN_DRIFTS)}")
    return name


FiniteFloat = Annotated[float, Field(allow_inf_nan=False)]
PositiveFloat = Annotated[float, Field(gt=0, allow_inf_nan=False)]
NonNegativeFloat = Annotated[float, Field(ge=0, allow_inf_nan=False)]
Vector = Annotated[list[FiniteFloat], AfterValidator(_dim_length)]
IndexRow = Annotated[list[int], AfterValidator(_dim_length)]
Expression = Annotated[str, AfterValidator(_expression)]
Drift = Annotated[
    Union[
        Annotated[Annotated[str, AfterValidator(_drift_tag)], Tag("tag")],
        Annotated[Annotated[list[Expression], AfterValidator(_dim_length)], Tag("expressions")],
    ],
    Discriminator(lambda v: "tag" if isinstance(v, str) else "expressions"),
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)


class Span(_Strict):
    lo: Vector
    hi: Vector

    @model_validator(mode="after")
    def _ordered(self) -> Span:
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError("lo exceeds hi")
        return self


class BoxDisturbance(_Strict):
    type: Literal["box"]
    radius: NonNegativeFloat | None = None
    lo: Vector | None = None
    hi: Vector | None = None

    @model_validator(mode="after")
    def _extent(self) -> BoxDisturbance:
        if self.radius is None:
            if self.lo is None or self.hi is None:
                raise ValueError("give radius, or lo and hi")
            if any(a > b for a, b in zip(self.lo, self.hi)):
                raise ValueError("lo exceeds hi")
        return self


class Halfspace(_Strict):
    normal: Vector
    offset: FiniteFloat


class PolytopeDisturbance(_Strict):
    type: Literal["hpolytope"]
    halfspaces: Annotated[list[Halfspace], Field(min_length=1)]
    bbox: Span


Disturbance = Annotated[Union[BoxDisturbance, PolytopeDisturbance], Field(discriminator="type")]


class PointStart(_Strict):
    type: Literal["point"]
    at: Vector


class PointsStart(_Strict):
    type: Literal["points"]
    at: Annotated[list[Vector], Field(min_length=1)]


class BoxStart(Span):
    type: Literal["box"]


class AnnulusStart(_Strict):
    type: Literal["annulus"]
    r_in: NonNegativeFloat
    r_out: NonNegativeFloat
    center: Vector | None = None

    @model_validator(mode="after")
    def _radii(self) -> AnnulusStart:
        if self.r_in > self.r_out:
            raise ValueError("need 0 <= r_in <= r_out")
        return self


class CellsStart(_Strict):
    type: Literal["cells"]
    cells: Annotated[list[IndexRow], Field(min_length=1)]


StartSet = Annotated[
    Union[PointStart, PointsStart, BoxStart, AnnulusStart, CellsStart], Field(discriminator="type")
]


class ScenarioConfig(_Strict):
    name: Annotated[str, Field(min_length=1)]
    dim: Annotated[int, Field(ge=1)]
    drift: Drift
    disturbance: Disturbance
    x0: StartSet
    h: PositiveFloat
    T: NonNegativeFloat
    L: FiniteFloat | None = None
    rho: PositiveFloat | None = None
    scheme: Literal["full", "preliminary", "boundary"] = "boundary"
    strict_connectivity: bool = True
    kappa_override: float | None = None
    beta_star: FiniteFloat = 0.0
    lipschitz_certified: bool | None = None
    lipschitz_domain: Span | None = None

    @field_validator("L")
    @classmethod
    def _positive_lipschitz(cls, value: float | None) -> float | None:
        if value is not None and not value > 0:
            raise ValueError(f"must be positive; use {config.LIPSCHITZ_FLOOR:g} for disturbance-only dynamics")
        return value

    @field_validator("kappa_override", mode="before")
    @classmethod
    def _kappa_inf(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
            return math.inf
        return value

    @model_validator(mode="after")
    def _lipschitz_source(self) -> ScenarioConfig:
        if self.L is None:
            if self.lipschitz_domain is None:
                raise FieldError("L", "required unless lipschitz_domain is given for estimation")
            self.lipschitz_certified = False
        elif self.lipschitz_certified is None:
            self.lipschitz_certified = True
        return self

    @property
    def effective_rho(self) -> float:
        return self.rho if self.rho is not None else self.h**2


@dataclass
class Scenario:
    name: str
    rhs: InclusionRHS
    initial: InitialSet
    params: SchemeParams
    variant: str = "boundary"
    strict: bool = True
    config: ScenarioConfig | None = field(default=None, repr=False)


def config_from_dict(data: Any) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("/", "expected a JSON object")
    try:
        return ScenarioConfig.model_validate(data, context={"dim": data.get("dim")})
    except ValidationError as e:
        raise ConfigError.from_validation(e, data) from e


BUILTINS: dict[str, ScenarioConfig] = {
    "linear2d": config_from_dict({
        "name": "linear2d",
        "dim": 2,
        "drift": ["x1", "x2"],
        "disturbance": {"type": "box", "radius": 1.0},
        "x0": {"type": "point", "at": [0.0, 0.0]},
        "L": 1.0,
        "h": 0.2,
        "T": 1.0,
    }),
    # L is the sampled estimate over lipschitz_domain (14.85) rounded up; the published
    # step h = 0.025 exceeds h* = 1/60 and needs --unchecked.
    "mustache": config_from_dict({
        "name": "mustache",
        "dim": 2,
        "drift": ["x1*(1-abs(x1)) - x1*x2", "x1^4 - 1/2"],
        "disturbance": {"type": "box", "radius": 0.2},
        "x0": {"type": "point", "at": [0.0, 0.0]},
        "L": 15.0,
        "h": 0.025,
        "T": 5.3,
        "lipschitz_certified": False,
        "lipschitz_domain": {"lo": [-1.5, -1.5], "hi": [1.5, 1.5]},
    }),
    "annulus": config_from_dict({
        "name": "annulus",
        "dim": 2,
        "drift": "zero",
        "disturbance": {"type": "box", "radius": 1.0},
        "x0": {"type": "annulus", "r_in": 1.0, "r_out": 2.0},
        "L": config.LIPSCHITZ_FLOOR,
        "h": 0.2,
        "T": 1.2,
        "rho": 0.04,
    }),
    # Points 5*rho apart: their images overlap, so one final-scheme step shows the mismatch.
    "twopoints": config_from_dict({
        "name": "twopoints",
        "dim": 2,
        "drift": "zero",
        "disturbance": {"type": "box", "radius": 1.0},
        "x0": {"type": "points", "at": [[0.0, 0.3125], [0.3125, 0.0]]},
        "L": config.LIPSCHITZ_FLOOR,
        "h": 0.25,
        "T": 0.25,
        "rho": 0.0625,
    }),
    "twopoints-wide": config_from_dict({
        "name": "twopoints-wide",
        "dim": 2,
        "drift": "zero",
        "disturbance": {"type": "box", "radius": 1.0},
        "x0": {"type": "points", "at": [[0.0, 1.0], [1.0, 0.0]]},
        "L": config.LIPSCHITZ_FLOOR,
        "h": 0.25,
        "T": 0.25,
        "rho": 0.0625,
    }),
}


def get_builtin(name: str) -> ScenarioConfig:
    if name not in BUILTINS:
        raise ConfigError("/name", f"unknown scenario {name!r}; built-ins: {', '.join(BUILTINS)}")
    return BUILTINS[name].model_copy(deep=True)


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse a JSON scenario file."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError("/", f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    cfg = config_from_dict(data)
    log.info("Loaded scenario %s from %s", cfg.name, path)
    return cfg


def config_to_dict(cfg: ScenarioConfig) -> dict:
    out = cfg.model_dump(exclude_none=True)
    if "kappa_override" in out and math.isinf(out["kappa_override"]):
        out["kappa_override"] = "inf"
    return out


def emit_config(cfg: ScenarioConfig, path: str | Path | None = None) -> dict:
    """Config as a JSON-ready dict; also written to path when given."""
    data = config_to_dict(cfg)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return data


def with_overrides(cfg: ScenarioConfig, **changes: Any) -> ScenarioConfig:
    """Copy of cfg with the non-None changes applied."""
    return cfg.model_copy(update={k: v for k, v in changes.items() if v is not None}, deep=True)


def disturbance_body(data: BoxDisturbance | PolytopeDisturbance, dim: int) -> ConvexBody:
    if isinstance(data, BoxDisturbance):
        if data.radius is not None:
            return ConvexBody(Box.centered(np.zeros(dim), data.radius))
        return ConvexBody(Box(tuple(data.lo), tuple(data.hi)))  # type: ignore[arg-type]
    bbox = Box(tuple(data.bbox.lo), tuple(data.bbox.hi))
    normals = tuple(tuple(hs.normal) for hs in data.halfspaces)
    offsets = tuple(hs.offset for hs in data.halfspaces)
    return ConvexBody(HPolytope(normals, offsets, bbox))


def annulus_boxes(r_in: float, r_out: float, center: np.ndarray) -> list[Box]:
    """{x : r_in <= |x - center|_inf <= r_out} as 2*d slabs."""
    dim = len(center)
    boxes = []
    for k in range(dim):
        for sign in (-1.0, 1.0):
            lo = center - r_out
            hi = center + r_out
            if sign > 0:
                lo[k] = center[k] + r_in
            else:
                hi[k] = center[k] - r_in
            boxes.append(Box(tuple(lo), tuple(hi)))
    return boxes


def initial_set(data: PointStart | PointsStart | BoxStart | AnnulusStart | CellsStart, dim: int, rho: float) -> InitialSet:
    if isinstance(data, PointStart):
        return ConvexBody(Box.point(data.at))
    if isinstance(data, PointsStart):
        return [ConvexBody(Box.point(p)) for p in data.at]
    if isinstance(data, BoxStart):
        return ConvexBody(Box(tuple(data.lo), tuple(data.hi)))
    if isinstance(data, AnnulusStart):
        center = np.array(data.center if data.center is not None else [0.0] * dim, dtype=float)
        return [ConvexBody(b) for b in annulus_boxes(data.r_in, data.r_out, center)]
    return GridSet.from_cells(data.cells, dim, rho)


def build_scenario(cfg: ScenarioConfig, unchecked: bool = False) -> Scenario:
    """Assemble rhs, initial set and parameters; n_steps = round(T / h)."""
    rho = cfg.effective_rho
    n_steps = round(cfg.T / cfg.h)
    if abs(n_steps * cfg.h - cfg.T) > 1e-9 * max(1.0, abs(cfg.T)):
        log.warning("T=%g is not a multiple of h=%g; running %d steps (t=%g)", cfg.T, cfg.h, n_steps, n_steps * cfg.h)
    try:
        disturbance = disturbance_body(cfg.disturbance, cfg.dim)
    except ValueError as e:
        raise ConfigError("/disturbance", str(e)) from e
    L, certified = cfg.L, bool(cfg.lipschitz_certified)
    if L is None and cfg.lipschitz_domain is None:
        raise ConfigError("/L", "required unless lipschitz_domain is given for estimation")
    try:
        if L is None:
            domain = Box(tuple(cfg.lipschitz_domain.lo), tuple(cfg.lipschitz_domain.hi))
            sampled = InclusionRHS.from_strings(cfg.drift, disturbance, dim=cfg.dim)
            L = max(estimate_lipschitz(sampled, domain).reported, config.LIPSCHITZ_FLOOR)
            certified = False
        rhs = InclusionRHS.from_strings(cfg.drift, disturbance, dim=cfg.dim, lipschitz=L, lipschitz_certified=certified)
    except ValueError as e:
        raise ConfigError("/drift", str(e)) from e
    params = SchemeParams(
        L=L,
        h=cfg.h,
        rho=rho,
        n_steps=n_steps,
        beta_star=cfg.beta_star,
        kappa_override=cfg.kappa_override,
        unchecked=unchecked,
    )
    return Scenario(
        name=cfg.name,
        rhs=rhs,
        initial=initial_set(cfg.x0, cfg.dim, rho),
        params=params,
        variant=cfg.scheme,
        strict=cfg.strict_connectivity,
        config=cfg,
    )
