"""
Sparse lattice sets on rho*Z^d: discrete layers, chain connectivity, Chebyshev Hausdorff distance.

Cells are integer index rows; rho only enters when converting to world coordinates, so
membership is exact. Bulk operations pack rows of a bounded lattice box into int64 keys
and work on sorted key arrays.
"""
from __future__ import annotations

import io
import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _csgraph_components

import config

log = logging.getLogger(__name__)

GridIndex = tuple[int, ...]


class GridMismatchError(ValueError):
    """Operands live on different lattices (dimension or spacing)."""


@lru_cache(maxsize=None)
def unit_offsets(dim: int) -> np.ndarray:
    """The 3^d - 1 nonzero offsets of max-norm 1, in lexicographic order."""
    rows = [o for o in itertools.product((-1, 0, 1), repeat=dim) if any(o)]
    arr = np.array(rows, dtype=np.int64).reshape(-1, dim)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _forward_offsets(dim: int) -> np.ndarray:
    """Half of unit_offsets: each undirected adjacency appears once."""
    offs = unit_offsets(dim)
    first_nonzero = np.array([row[np.flatnonzero(row)[0]] for row in offs])
    arr = offs[first_nonzero > 0]
    arr.setflags(write=False)
    return arr


def neighbors(p: Sequence[int]) -> frozenset[GridIndex]:
    """Indices at Chebyshev distance exactly 1 from p."""
    p = tuple(int(c) for c in p)
    if not p:
        raise ValueError("grid index needs dimension >= 1")
    return frozenset(tuple(c + o for c, o in zip(p, off)) for off in unit_offsets(len(p)).tolist())


class _KeySpace:
    """Packs index rows inside a lattice box [lo, hi] into sortable int64 keys (C order)."""

    def __init__(self, dim: int, arrays: Iterable[np.ndarray], margin: int = 0):
        nonempty = [a for a in arrays if len(a)]
        if nonempty:
            lo = np.min([a.min(axis=0) for a in nonempty], axis=0) - margin
            hi = np.max([a.max(axis=0) for a in nonempty], axis=0) + margin
        else:
            lo = np.zeros(dim, dtype=np.int64)
            hi = np.zeros(dim, dtype=np.int64)
        self.dim = dim
        self.lo = lo.astype(np.int64)
        self.hi = hi.astype(np.int64)
        self.shape = tuple(int(v) for v in self.hi - self.lo + 1)
        if math.prod(self.shape) >= config.MAX_LATTICE_KEYS:
            raise ValueError(f"lattice extent {self.shape} too large for packed keys")
        self.strides = np.array([math.prod(self.shape[k + 1:]) for k in range(dim)], dtype=np.int64)

    def encode(self, rows: np.ndarray) -> np.ndarray:
        if not len(rows):
            return np.empty(0, dtype=np.int64)
        return (rows - self.lo) @ self.strides

    def decode(self, keys: np.ndarray) -> np.ndarray:
        rows = np.empty((len(keys), self.dim), dtype=np.int64)
        rem = np.asarray(keys, dtype=np.int64).copy()
        for k in range(self.dim):
            rows[:, k] = rem // self.strides[k]
            rem -= rows[:, k] * self.strides[k]
        return rows + self.lo

    def neighborhood(self, keys: np.ndarray) -> np.ndarray:
        """Sorted unique keys of all unit neighbors of keys that stay inside the box."""
        if not len(keys):
            return np.empty(0, dtype=np.int64)
        rows = self.decode(keys)
        parts = []
        for off in unit_offsets(self.dim):
            shifted = rows + off
            inside = np.all((shifted >= self.lo) & (shifted <= self.hi), axis=1)
            parts.append(keys[inside] + int(off @ self.strides))
        return np.unique(np.concatenate(parts))


def _isin_sorted(a: np.ndarray, sorted_b: np.ndarray) -> np.ndarray:
    """Membership of a in a sorted unique key array."""
    if not len(sorted_b) or not len(a):
        return np.zeros(len(a), dtype=bool)
    idx = np.searchsorted(sorted_b, a)
    idx[idx == len(sorted_b)] = 0
    return sorted_b[idx] == a


def _canonical(rows: np.ndarray, dim: int) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, dim)
    if len(rows) > 1:
        try:
            space = _KeySpace(dim, [rows])
            rows = space.decode(np.unique(space.encode(rows)))
        except ValueError:
            rows = np.unique(rows, axis=0)
    rows = np.ascontiguousarray(rows)
    rows.setflags(write=False)
    return rows


@dataclass(frozen=True, eq=False)
class GridSet:
    """Finite set of lattice indices with spacing rho. Immutable; rows sorted lexicographically."""

    dim: int
    spacing: float
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("grid dimension must be >= 1")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "cells", _canonical(self.cells, self.dim))

    @classmethod
    def empty(cls, dim: int, spacing: float) -> GridSet:
        return cls(dim, spacing, np.empty((0, dim), dtype=np.int64))

    @classmethod
    def from_cells(cls, cells: Iterable[Sequence[int]], dim: int, spacing: float) -> GridSet:
        rows = [tuple(int(c) for c in cell) for cell in cells]
        if any(len(r) != dim for r in rows):
            raise GridMismatchError(f"cells must have dimension {dim}")
        return cls(dim, spacing, np.array(rows, dtype=np.int64).reshape(-1, dim))

    def __len__(self) -> int:
        return len(self.cells)

    def __bool__(self) -> bool:
        return len(self.cells) > 0

    def __iter__(self) -> Iterator[GridIndex]:
        return iter(map(tuple, self.cells.tolist()))

    @cached_property
    def _members(self) -> frozenset[GridIndex]:
        return frozenset(self)

    def __contains__(self, p: object) -> bool:
        try:
            return tuple(int(c) for c in p) in self._members  # type: ignore[union-attr]
        except TypeError:
            return False

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridSet):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.spacing == other.spacing
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"GridSet(dim={self.dim}, spacing={self.spacing!r}, cells={len(self)})"

    def world(self) -> np.ndarray:
        """World coordinates rho * index, shape (n, dim)."""
        return self.cells * self.spacing

    def bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        if not len(self):
            return None
        return self.cells.min(axis=0), self.cells.max(axis=0)

    def _binary(self, other: GridSet, op) -> GridSet:
        _check_compatible(self, other)
        space = _KeySpace(self.dim, [self.cells, other.cells])
        keys = op(space.encode(self.cells), space.encode(other.cells))
        return GridSet(self.dim, self.spacing, space.decode(keys))

    def __or__(self, other: GridSet) -> GridSet:
        return self._binary(other, np.union1d)

    def __and__(self, other: GridSet) -> GridSet:
        return self._binary(other, lambda a, b: np.intersect1d(a, b, assume_unique=True))

    def __sub__(self, other: GridSet) -> GridSet:
        return self._binary(other, lambda a, b: np.setdiff1d(a, b, assume_unique=True))

    def __xor__(self, other: GridSet) -> GridSet:
        return self._binary(other, lambda a, b: np.setxor1d(a, b, assume_unique=True))

    def issubset(self, other: GridSet) -> bool:
        return len(self - other) == 0

    def isdisjoint(self, other: GridSet) -> bool:
        return len(self & other) == 0


def _check_compatible(*sets: GridSet) -> None:
    first = sets[0]
    for s in sets[1:]:
        if s.dim != first.dim or s.spacing != first.spacing:
            raise GridMismatchError(
                f"lattice mismatch: (d={first.dim}, rho={first.spacing}) vs (d={s.dim}, rho={s.spacing})"
            )


def union_all(sets: Sequence[GridSet], dim: int, spacing: float) -> GridSet:
    """Union of many sets; the result does not depend on their order."""
    if sets:
        _check_compatible(GridSet.empty(dim, spacing), *sets)
    parts = [s.cells for s in sets if len(s)]
    if not parts:
        return GridSet.empty(dim, spacing)
    return GridSet(dim, spacing, np.concatenate(parts))


def union_of_boxes(lo: np.ndarray, hi: np.ndarray, dim: int, spacing: float) -> GridSet:
    """All indices i with lo_j <= i <= hi_j for some row j (inclusive integer boxes)."""
    lo = np.asarray(lo, dtype=np.int64).reshape(-1, dim)
    hi = np.asarray(hi, dtype=np.int64).reshape(-1, dim)
    keep = np.all(hi >= lo, axis=1)
    lo, hi = lo[keep], hi[keep]
    if not len(lo):
        return GridSet.empty(dim, spacing)
    ext = hi - lo + 1
    counts = np.prod(ext, axis=1)
    total = int(counts.sum())
    blo, bhi = lo.min(axis=0), hi.max(axis=0)
    area = math.prod(int(v) for v in bhi - blo + 1)
    if total <= area:
        return _enumerate_boxes(lo, ext, counts, total, dim, spacing)
    return _cover_boxes(lo, hi, blo, bhi, dim, spacing)


def _enumerate_boxes(lo, ext, counts, total, dim, spacing) -> GridSet:
    box_id = np.repeat(np.arange(len(lo)), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(total, dtype=np.int64) - starts[box_id]
    cells = np.empty((total, dim), dtype=np.int64)
    for k in reversed(range(dim)):
        e = ext[box_id, k]
        cells[:, k] = local % e
        local //= e
    cells += lo[box_id]
    return GridSet(dim, spacing, cells)


def _cover_boxes(lo, hi, blo, bhi, dim, spacing) -> GridSet:
    # Difference array: +-1 at the 2^d corners of every box, prefix sums give coverage counts.
    shape = tuple(int(v) + 1 for v in bhi - blo + 1)
    flats, signs = [], []
    for bits in itertools.product((0, 1), repeat=dim):
        mask = np.array(bits, dtype=bool)
        corner = np.where(mask, hi - blo + 1, lo - blo)
        flats.append(np.ravel_multi_index(corner.T, shape))
        signs.append(np.full(len(lo), -1.0 if sum(bits) % 2 else 1.0))
    cover = np.bincount(
        np.concatenate(flats), weights=np.concatenate(signs), minlength=math.prod(shape)
    ).reshape(shape)
    for axis in range(dim):
        cover = np.cumsum(cover, axis=axis)
    inside = cover[tuple(slice(0, s - 1) for s in shape)] > 0.5
    return GridSet(dim, spacing, np.argwhere(inside) + blo)


@dataclass(frozen=True)
class Layers:
    """Discrete layers of a set M: k=0 boundary, k>0 exterior shells, k<0 interior shells."""

    layers: dict[int, GridSet]
    interior: GridSet

    def __getitem__(self, k: int) -> GridSet:
        return self.layers[k]

    @property
    def boundary(self) -> GridSet:
        return self.layers[0]


def extract_layers(M: GridSet, k_lo: int = -1, k_hi: int = 1) -> Layers:
    """Layers d_rho^k M for k_lo <= k <= k_hi plus int_rho M."""
    if k_lo > 0 or k_hi < 0:
        raise ValueError("need k_lo <= 0 <= k_hi")
    empty = GridSet.empty(M.dim, M.spacing)
    if not len(M):
        return Layers({k: empty for k in range(k_lo, k_hi + 1)}, empty)
    depth = max(-k_lo, k_hi)
    space = _KeySpace(M.dim, [M.cells], margin=depth + 1)
    mkeys = space.encode(M.cells)
    inner = np.ones(len(mkeys), dtype=bool)
    for off in unit_offsets(M.dim):
        inner &= _isin_sorted(mkeys + int(off @ space.strides), mkeys)
    b0 = mkeys[~inner]
    keys: dict[int, np.ndarray] = {0: b0}
    # Chebyshev distance to b0 equals king-move graph distance on the whole lattice.
    visited, frontier = b0, b0
    for k in range(1, depth + 1):
        ring = np.setdiff1d(space.neighborhood(frontier), visited, assume_unique=True)
        in_m = _isin_sorted(ring, mkeys)
        if k <= k_hi:
            keys[k] = ring[~in_m]
        if -k >= k_lo:
            keys[-k] = ring[in_m]
        visited = np.union1d(visited, ring)
        frontier = ring
    layers = {k: GridSet(M.dim, M.spacing, space.decode(v)) for k, v in sorted(keys.items())}
    return Layers(layers, GridSet(M.dim, M.spacing, space.decode(mkeys[inner])))


def neighborhood(S: GridSet) -> GridSet:
    """Union of neighbors(p) over p in S."""
    if not len(S):
        return S
    space = _KeySpace(S.dim, [S.cells], margin=1)
    return GridSet(S.dim, S.spacing, space.decode(space.neighborhood(space.encode(S.cells))))


def derive_adjacent_layers(b0: GridSet, b1: GridSet) -> tuple[GridSet, GridSet]:
    """(d^-1 M, d^2 M) from (d^0 M, d^1 M).

    Every neighbor of d^0 outside M lies in d^1, and every neighbor of d^1 inside M lies
    in d^0, so removing d^0 and d^1 from the two neighborhoods leaves exactly d^-1 and d^2.
    """
    _check_compatible(b0, b1)
    space = _KeySpace(b0.dim, [b0.cells, b1.cells], margin=1)
    k0, k1 = space.encode(b0.cells), space.encode(b1.cells)
    known = np.union1d(k0, k1)
    inner = np.setdiff1d(space.neighborhood(k0), known, assume_unique=True)
    outer2 = np.setdiff1d(space.neighborhood(k1), known, assume_unique=True)
    return (
        GridSet(b0.dim, b0.spacing, space.decode(inner)),
        GridSet(b0.dim, b0.spacing, space.decode(outer2)),
    )


def adjacent_filter(S: GridSet, T: GridSet) -> GridSet:
    """{x in S : x not in T and dist(x, T) = rho}."""
    _check_compatible(S, T)
    if not len(S) or not len(T):
        return GridSet.empty(S.dim, S.spacing)
    space = _KeySpace(S.dim, [S.cells, T.cells], margin=1)
    ks, kt = space.encode(S.cells), space.encode(T.cells)
    cand = np.setdiff1d(ks, kt, assume_unique=True)
    hit = _isin_sorted(cand, space.neighborhood(kt))
    return GridSet(S.dim, S.spacing, space.decode(cand[hit]))


def connected_components(M: GridSet) -> list[GridSet]:
    """Maximal chain-connected subsets, ordered by their lexicographically smallest cell."""
    n = len(M)
    if not n:
        return []
    space = _KeySpace(M.dim, [M.cells])
    keys = space.encode(M.cells)
    src, dst = [], []
    for off in _forward_offsets(M.dim):
        shifted = M.cells + off
        inside = np.all(shifted <= space.hi, axis=1) & np.all(shifted >= space.lo, axis=1)
        i = np.flatnonzero(inside)
        target = keys[i] + int(off @ space.strides)
        hit = _isin_sorted(target, keys)
        src.append(i[hit])
        dst.append(np.searchsorted(keys, target[hit]))
    rows = np.concatenate(src)
    cols = np.concatenate(dst)
    graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n)).tocsr()
    count, labels = _csgraph_components(graph, directed=False)
    # Rank labels by first occurrence; rows are already lexicographically sorted.
    _, first = np.unique(labels, return_index=True)
    rank = np.empty(count, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(count)
    order = np.argsort(rank[labels], kind="stable")
    sizes = np.bincount(rank[labels], minlength=count)
    parts = np.split(M.cells[order], np.cumsum(sizes)[:-1])
    return [GridSet(M.dim, M.spacing, part) for part in parts]


def is_chain_connected(M: GridSet) -> bool:
    return len(M) <= 1 or len(connected_components(M)) == 1


def _directed_index_distance(A: GridSet, B: GridSet) -> int:
    # A king-move geodesic between two cells stays in their bounding box, so the
    # breadth-first shells from B can be clipped to the joint bounding box.
    space = _KeySpace(A.dim, [A.cells, B.cells])
    ka, kb = space.encode(A.cells), space.encode(B.cells)
    remaining = ka[~_isin_sorted(ka, kb)]
    k, visited, frontier = 0, kb, kb
    while len(remaining):
        k += 1
        ring = np.setdiff1d(space.neighborhood(frontier), visited, assume_unique=True)
        if not len(ring):
            raise RuntimeError("shell expansion stalled inside the bounding box")
        remaining = remaining[~_isin_sorted(remaining, ring)]
        visited = np.union1d(visited, ring)
        frontier = ring
    return k


def hausdorff(A: GridSet, B: GridSet) -> float:
    """Symmetric Hausdorff distance in the max-norm, world units."""
    _check_compatible(A, B)
    if not len(A) or not len(B):
        raise ValueError("undefined Hausdorff distance: empty operand")
    k = max(_directed_index_distance(A, B), _directed_index_distance(B, A))
    return A.spacing * k


@dataclass(frozen=True)
class BoundaryState:
    """(d^0 M, d^1 M) carried by the boundary Euler scheme; time t_n = n*h."""

    boundary: GridSet
    outer: GridSet
    step_index: int = 0

    def check(self) -> None:
        """Raise ValueError if the layers are not disjoint or outer is not adjacent to boundary."""
        if not self.boundary.isdisjoint(self.outer):
            raise ValueError("boundary and outer layers intersect")
        if adjacent_filter(self.outer, self.boundary) != self.outer:
            raise ValueError("outer layer has cells not adjacent to the boundary")


CSV_KINDS = ("boundary", "outer", "full")


def write_csv(path: str | Path, S: GridSet, kind: str) -> Path:
    """Cell dump: '# d=<dim> rho=<spacing> kind=<kind>' then one index row per line."""
    if kind not in CSV_KINDS:
        raise ValueError(f"kind must be one of {CSV_KINDS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"d={S.dim} rho={S.spacing!r} kind={kind}"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        np.savetxt(f, S.cells, fmt="%d", delimiter=",", header=header, comments="# ")
    return path


def read_csv(path: str | Path) -> tuple[GridSet, str]:
    text = Path(path).read_text(encoding="utf-8")
    first, _, body = text.partition("\n")
    if not first.startswith("#"):
        raise ValueError(f"{path}: missing '# d=... rho=... kind=...' header")
    fields = dict(part.split("=", 1) for part in first.lstrip("# ").split())
    dim, rho, kind = int(fields["d"]), float(fields["rho"]), fields["kind"]
    if body.strip():
        rows = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.int64, ndmin=2, comments="#")
    else:
        rows = np.empty((0, dim), dtype=np.int64)
    return GridSet(dim, rho, rows.reshape(-1, dim)), kind
