# dyadic_core.py
"""
Dyadic grid arithmetic: scales, cell sets, covering numbers and refinements.

A ``CellSet`` is a union of half-open dyadic cells of side ``2**-k`` inside
``[0, 1]**n``.  Cells are stored as sorted, unique, row-major flat indices so
that set algebra reduces to sorted-array operations.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from errors import DomainError, ParameterError

logger = logging.getLogger(__name__)

MAX_K = 20
DIMENSIONS = (1, 2, 3)


# ======================================================
# SCALES
# ======================================================
@dataclass(frozen=True, order=True)
class DyadicScale:
    """Side length ``2**-k``.  ``k = 0`` is the unit scale, only reached by coarsening."""

    k: int

    def __post_init__(self):
        if isinstance(self.k, bool) or int(self.k) != self.k:
            raise ParameterError(f"scale exponent must be an integer, got {self.k!r}")
        if not 0 <= self.k <= MAX_K:
            raise ParameterError(f"scale exponent {self.k} outside [0, {MAX_K}]")
        object.__setattr__(self, "k", int(self.k))

    @property
    def delta(self) -> float:
        return 2.0 ** -self.k

    @property
    def side(self) -> int:
        return 1 << self.k

    @classmethod
    def from_value(cls, rho: float) -> "DyadicScale":
        if isinstance(rho, DyadicScale):
            return rho
        if isinstance(rho, Fraction):
            if rho <= 0 or rho.numerator != 1 or rho.denominator & (rho.denominator - 1):
                raise ParameterError(f"non-dyadic scale {rho}")
            return cls(rho.denominator.bit_length() - 1)
        rho = float(rho)
        if not 0 < rho <= 1:
            raise ParameterError(f"scale {rho} outside (0, 1]")
        mant, exp = math.frexp(rho)
        if mant != 0.5:
            raise ParameterError(f"non-dyadic scale {rho}")
        return cls(1 - exp)


def as_scale(rho) -> DyadicScale:
    """Accept a DyadicScale or a dyadic value such as 0.25 or Fraction(1, 4)."""
    if isinstance(rho, DyadicScale):
        return rho
    return DyadicScale.from_value(rho)


# ======================================================
# CELL SETS
# ======================================================
class CellSet:
    """Immutable set of dyadic cells at scale ``2**-k`` in ``[0,1]**n``."""

    def __init__(self, n: int, k: int, cells=()):
        if n not in DIMENSIONS:
            raise ParameterError(f"dimension {n} not in {DIMENSIONS}")
        self.n = int(n)
        self.k = DyadicScale(k).k
        flat = np.unique(np.asarray(cells, dtype=np.int64).ravel())
        total = self.side ** self.n
        if flat.size and (flat[0] < 0 or flat[-1] >= total):
            raise ParameterError(f"cell index outside [0, {total}) at n={n}, k={k}")
        flat.setflags(write=False)
        self._flat = flat

    # ---- constructors ----
    @classmethod
    def from_coords(cls, n: int, k: int, coords) -> "CellSet":
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, n)
        side = 1 << k
        if coords.size and (coords.min() < 0 or coords.max() >= side):
            raise ParameterError(f"cell coordinates outside [0, {side})")
        if not coords.size:
            return cls(n, k)
        return cls(n, k, np.ravel_multi_index(tuple(coords.T), (side,) * n))

    @classmethod
    def from_points(cls, n: int, k: int, points) -> "CellSet":
        """Cells containing the given points of ``[0,1]**n``; points outside are dropped."""
        pts = np.asarray(points, dtype=float).reshape(-1, n)
        side = 1 << k
        idx = np.floor(pts * side).astype(np.int64)
        idx[pts == 1.0] = side - 1
        keep = np.all((idx >= 0) & (idx < side), axis=1)
        return cls.from_coords(n, k, idx[keep])

    @classmethod
    def empty(cls, n: int, k: int) -> "CellSet":
        return cls(n, k)

    @classmethod
    def full(cls, n: int, k: int) -> "CellSet":
        return cls(n, k, np.arange((1 << k) ** n, dtype=np.int64))

    # ---- basic views ----
    @property
    def scale(self) -> DyadicScale:
        return DyadicScale(self.k)

    @property
    def delta(self) -> float:
        return 2.0 ** -self.k

    @property
    def side(self) -> int:
        return 1 << self.k

    @property
    def flat(self) -> np.ndarray:
        return self._flat

    @cached_property
    def coords(self) -> np.ndarray:
        if not self._flat.size:
            return np.zeros((0, self.n), dtype=np.int64)
        out = np.stack(np.unravel_index(self._flat, (self.side,) * self.n), axis=1)
        out.setflags(write=False)
        return out

    def centers(self) -> np.ndarray:
        return (self.coords + 0.5) / self.side

    @property
    def measure(self) -> Fraction:
        return Fraction(len(self), self.side ** self.n)

    def __len__(self):
        return int(self._flat.size)

    def __bool__(self):
        return bool(self._flat.size)

    def __iter__(self):
        return (tuple(int(c) for c in row) for row in self.coords)

    def __contains__(self, coord):
        coord = np.asarray(coord, dtype=np.int64).reshape(-1)
        if coord.size != self.n or coord.min() < 0 or coord.max() >= self.side:
            return False
        flat = np.ravel_multi_index(tuple(coord), (self.side,) * self.n)
        i = np.searchsorted(self._flat, flat)
        return bool(i < self._flat.size and self._flat[i] == flat)

    def __eq__(self, other):
        if not isinstance(other, CellSet):
            return NotImplemented
        return self.n == other.n and self.k == other.k and np.array_equal(self._flat, other._flat)

    def __hash__(self):
        return hash((self.n, self.k, self._flat.tobytes()))

    def __repr__(self):
        return f"CellSet(n={self.n}, k={self.k}, cells={len(self)})"

    # ---- set algebra ----
    def _same_grid(self, other: "CellSet"):
        if (self.n, self.k) != (other.n, other.k):
            raise ParameterError(
                f"grid mismatch: (n={self.n}, k={self.k}) vs (n={other.n}, k={other.k})"
            )

    def union(self, other: "CellSet") -> "CellSet":
        self._same_grid(other)
        return CellSet(self.n, self.k, np.union1d(self._flat, other._flat))

    def intersection(self, other: "CellSet") -> "CellSet":
        self._same_grid(other)
        return CellSet(self.n, self.k, np.intersect1d(self._flat, other._flat, assume_unique=True))

    def difference(self, other: "CellSet") -> "CellSet":
        self._same_grid(other)
        return CellSet(self.n, self.k, np.setdiff1d(self._flat, other._flat, assume_unique=True))

    def issubset(self, other: "CellSet") -> bool:
        self._same_grid(other)
        return bool(np.isin(self._flat, other._flat, assume_unique=True).all())

    __or__ = union
    __and__ = intersection
    __sub__ = difference
    __le__ = issubset

    def take(self, mask) -> "CellSet":
        """Sub-set selected by a boolean mask aligned with ``flat``."""
        return CellSet(self.n, self.k, self._flat[np.asarray(mask, dtype=bool)])

    def at_scale(self, k: int) -> "CellSet":
        """Re-express at a finer scale ``k >= self.k`` (each cell becomes its children)."""
        if k < self.k:
            raise ParameterError(f"at_scale needs k >= {self.k}; use covering_set to coarsen")
        if k == self.k:
            return self
        f = 1 << (k - self.k)
        offsets = np.stack(
            np.unravel_index(np.arange(f ** self.n), (f,) * self.n), axis=1
        ).astype(np.int64)
        fine = (self.coords[:, None, :] * f + offsets[None, :, :]).reshape(-1, self.n)
        return CellSet.from_coords(self.n, k, fine)

    # ---- serialization ----
    def to_json(self) -> dict:
        return {"n": self.n, "k": self.k, "cells": [int(c) for c in self._flat]}

    @classmethod
    def from_json(cls, obj: dict) -> "CellSet":
        try:
            return cls(int(obj["n"]), int(obj["k"]), obj["cells"])
        except KeyError as exc:
            raise ParameterError(f"CellSet JSON missing field {exc}") from exc


def union_all(sets, n: int, k: int) -> CellSet:
    sets = list(sets)
    if not sets:
        return CellSet.empty(n, k)
    for s in sets:
        if (s.n, s.k) != (n, k):
            raise ParameterError("union_all over mixed grids")
    return CellSet(n, k, np.concatenate([s.flat for s in sets]))


# ======================================================
# COVERINGS AND REFINEMENTS
# ======================================================
def _coarse_coords(E: CellSet, rho) -> tuple[np.ndarray, int]:
    scale = as_scale(rho)
    if scale.k > E.k:
        raise ParameterError(f"covering scale 2^-{scale.k} finer than set scale 2^-{E.k}")
    return E.coords >> (E.k - scale.k), scale.k


def covering_set(E: CellSet, rho) -> CellSet:
    """(E)_rho: the dyadic rho-cells meeting E."""
    coarse, j = _coarse_coords(E, rho)
    return CellSet.from_coords(E.n, j, coarse)


def covering_count(E: CellSet, rho) -> int:
    """|E|_rho on the dyadic grid: number of rho-cells meeting E."""
    return len(covering_set(E, rho))


def covering_profile(E: CellSet) -> np.ndarray:
    """covering_count(E, 2**-j) for j = 0..k."""
    return np.array([covering_count(E, DyadicScale(j)) for j in range(E.k + 1)], dtype=np.int64)


def is_refinement(E2: CellSet, E1: CellSet, c: float) -> tuple[bool, Fraction]:
    """True iff E2 is a subset of E1 with #E2 >= c #E1; also returns #E2/#E1."""
    if (E2.n, E2.k) != (E1.n, E1.k):
        raise ParameterError("is_refinement needs both sets on the same grid")
    if c <= 0:
        raise ParameterError(f"refinement constant must be positive, got {c}")
    if not E1:
        return (not E2), Fraction(1)
    ratio = Fraction(len(E2), len(E1))
    return bool(E2.issubset(E1) and ratio >= c), ratio


# ======================================================
# SLACK BOOKKEEPING
# ======================================================
@dataclass
class SlackLedger:
    """Explicit record of the constant/polylog losses taken by pigeonholing steps."""

    entries: list = field(default_factory=list)

    def add(self, op: str, factor: float) -> "SlackLedger":
        factor = float(factor)
        if factor < 1.0:
            factor = 1.0 / factor if factor > 0 else math.inf
        self.entries.append({"op": op, "factor": factor})
        logger.debug("slack %s x%.4g", op, factor)
        return self

    def extend(self, other: "SlackLedger") -> "SlackLedger":
        self.entries.extend(dict(e) for e in other.entries)
        return self

    @property
    def total(self) -> float:
        return float(np.prod([e["factor"] for e in self.entries])) if self.entries else 1.0

    def to_list(self) -> list:
        return [dict(e) for e in self.entries]


def dyadic_bands(weights) -> np.ndarray:
    """Band index ``floor(log2(w / min w))`` of each positive weight."""
    w = np.asarray(weights, dtype=float)
    if not w.size:
        raise DomainError("dyadic bands of an empty weight list")
    if (w <= 0).any():
        raise ParameterError("dyadic bands need positive weights")
    ratio = w / w.min()
    bands = np.floor(np.log2(ratio)).astype(np.int64)
    # guard against log2 rounding at exact powers of two
    bands -= (np.exp2(bands) > ratio).astype(np.int64)
    bands += (np.exp2(bands + 1) <= ratio).astype(np.int64)
    return bands


def polylog_slack(k: int, c: float) -> float:
    """(1/delta)^(c ln ln(1/delta)) at delta = 2**-k; 1 when ln ln(1/delta) <= 0."""
    L = k * math.log(2.0)
    if L <= 1.0 or c <= 0:
        return 1.0
    return math.exp(c * math.log(L) * L)


def log_inv_delta(x: float, k: int) -> float:
    """log base 1/delta of x at delta = 2**-k."""
    if k == 0:
        raise DomainError("log base 1/delta undefined at delta = 1")
    return math.log2(x) / k
