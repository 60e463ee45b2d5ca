# tube_geometry.py
"""
Discretized lines and tubes, shadings, two-ends conditions, separation,
parallelism and point-line duality.

A line is ``ℓ_(a,b) = {(a + z b, z) : z ∈ R}`` with the height ``z`` as the
last coordinate.  Lines make an angle of at most π/4 with the vertical axis,
i.e. ``|b| <= 1``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
from scipy.spatial.distance import pdist

from branching import is_uniform
from dyadic_core import CellSet, union_all
from errors import NormalizationError, ParameterError, PreconditionError

logger = logging.getLogger(__name__)

TUBE_WIDTH = 1.5
DUAL_SLACK = 4.0


# ======================================================
# LINES
# ======================================================
@dataclass(frozen=True)
class DiscreteLine:
    """
    ℓ_(a,b) = (a, 0) + R(b, 1).

    Any finite ``a`` and |b| <= 1 are accepted: every line within π/4 of vertical,
    which covers the dual lines ℓ_(x1, x2) of points of the unit square.
    Generated families stay in the standard box a ∈ [0,1]^(n-1),
    |b|_∞ <= 1/2 on the δ-grid; ``in_standard_box`` checks that.
    """

    n: int
    a: tuple
    b: tuple

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ParameterError(f"line dimension {self.n} not in (2, 3)")
        a = tuple(float(v) for v in np.atleast_1d(self.a))
        b = tuple(float(v) for v in np.atleast_1d(self.b))
        if len(a) != self.n - 1 or len(b) != self.n - 1:
            raise ParameterError(f"line parameters need {self.n - 1} coordinates each")
        if not all(math.isfinite(v) for v in a + b):
            raise ParameterError(f"line parameters must be finite, got a={a}, b={b}")
        if math.hypot(*b) > 1 + 1e-12:
            raise NormalizationError(f"|b|={math.hypot(*b):.4g} > 1: line too close to horizontal")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def a_vec(self) -> np.ndarray:
        return np.asarray(self.a)

    @property
    def b_vec(self) -> np.ndarray:
        return np.asarray(self.b)

    def direction(self) -> np.ndarray:
        d = np.append(self.b_vec, 1.0)
        return d / np.linalg.norm(d)

    def point_at(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return np.column_stack([self.a_vec[None, :] + z[:, None] * self.b_vec[None, :], z])

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the line."""
        P = np.asarray(points, dtype=float).reshape(-1, self.n)
        w = P - np.append(self.a_vec, 0.0)
        d = self.direction()
        perp = w - (w @ d)[:, None] * d[None, :]
        return np.linalg.norm(perp, axis=1)

    def angle_with(self, other: "DiscreteLine") -> float:
        c = abs(float(self.direction() @ other.direction()))
        return math.acos(min(1.0, c))

    def in_standard_box(self, k: int | None = None) -> bool:
        a, b = self.a_vec, self.b_vec
        inside = bool(np.all((a >= 0) & (a <= 1)) and np.all(np.abs(b) <= 0.5))
        if k is None or not inside:
            return inside
        side = 1 << k
        return bool(np.all(a * side == np.round(a * side)) and np.all(b * side == np.round(b * side)))

    def snapped(self, k: int) -> "DiscreteLine":
        side = 1 << k
        return DiscreteLine(self.n, tuple(np.round(self.a_vec * side) / side),
                            tuple(np.round(self.b_vec * side) / side))

    def to_json(self) -> dict:
        return {"a": list(self.a), "b": list(self.b)}


def rasterize_tube(line: DiscreteLine, k: int) -> CellSet:
    """Cells of [0,1]^n whose centres lie within 1.5δ of the line (strictly)."""
    side = 1 << k
    delta = 1.0 / side
    z = (np.arange(side) + 0.5) * delta
    pos = line.a_vec[None, :] + z[:, None] * line.b_vec[None, :]
    reach = 3
    offsets = np.stack(np.meshgrid(*[np.arange(-reach, reach + 1)] * (line.n - 1), indexing="ij"),
                       axis=-1).reshape(-1, line.n - 1)
    base = np.floor(pos * side).astype(np.int64)
    cand = base[:, None, :] + offsets[None, :, :]
    rows = np.broadcast_to(np.arange(side)[:, None, None], cand.shape[:2] + (1,))
    cells = np.concatenate([cand, rows], axis=2).reshape(-1, line.n)
    inside = np.all((cells >= 0) & (cells < side), axis=1)
    cells = cells[inside]
    if not len(cells):
        return CellSet.empty(line.n, k)
    near = line.distance((cells + 0.5) * delta) < TUBE_WIDTH * delta
    return CellSet.from_coords(line.n, k, cells[near])


def core_cells(line: DiscreteLine, k: int) -> CellSet:
    """One cell per row: the cell holding the line's point at the row's mid-height."""
    side = 1 << k
    z = (np.arange(side) + 0.5) / side
    pos = np.floor((line.a_vec[None, :] + z[:, None] * line.b_vec[None, :]) * side).astype(np.int64)
    cells = np.column_stack([pos, np.arange(side)])
    inside = np.all((cells >= 0) & (cells < side), axis=1)
    return CellSet.from_coords(line.n, k, cells[inside])


# ======================================================
# DUALITY (planar)
# ======================================================
def dualize(x) -> DiscreteLine:
    """F(x) = ℓ_(x1, x2)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != 2:
        raise ParameterError("duality is planar")
    return DiscreteLine(2, (x[0],), (x[1],))


def dualize_line(line: DiscreteLine) -> np.ndarray:
    """F^-1(ℓ_(a,b)) = (a, b)."""
    if line.n != 2:
        raise ParameterError("duality is planar")
    return np.array([line.a[0], line.b[0]])


def pencil(x) -> DiscreteLine:
    """Parameters (a, b) of every line through x: a = x1 - x2 b, i.e. ℓ_(x1, -x2) in (a, b)-space."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != 2:
        raise ParameterError("duality is planar")
    return DiscreteLine(2, (x[0],), (-x[1],))


def incident(x, line: DiscreteLine, tol: float = 1e-12) -> bool:
    x = np.asarray(x, dtype=float)
    return abs(x[0] - (line.a[0] + x[1] * line.b[0])) <= tol


def dual_incident(x, line: DiscreteLine, tol: float = 1e-12) -> bool:
    """F^-1(ℓ) lies on the pencil of x."""
    a, b = dualize_line(line)
    return abs(a - (x[0] - x[1] * b)) <= tol


def thickened_duality(x, line: DiscreteLine, delta: float) -> dict:
    """Primal and dual distances of a (point, tube) pair and whether both implications hold."""
    primal = float(line.distance(x)[0])
    dual = float(pencil(x).distance(dualize_line(line))[0])
    forward = primal > TUBE_WIDTH * delta or dual <= DUAL_SLACK * delta
    backward = dual > TUBE_WIDTH * delta or primal <= DUAL_SLACK * delta
    return {"primal": primal, "dual": dual, "holds": forward and backward}


# ======================================================
# SHADED FAMILIES
# ======================================================
@dataclass
class ShadedFamily:
    n: int
    k: int
    lines: list
    shadings: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.lines) != len(self.shadings):
            raise ParameterError("one shading per line required")
        for Y in self.shadings:
            if (Y.n, Y.k) != (self.n, self.k):
                raise ParameterError("shading grid does not match the family")

    def __len__(self):
        return len(self.lines)

    @property
    def delta(self) -> float:
        return 2.0 ** -self.k

    @property
    def side(self) -> int:
        return 1 << self.k

    @cached_property
    def tubes(self) -> list:
        return [rasterize_tube(line, self.k) for line in self.lines]

    def validate(self) -> "ShadedFamily":
        for i, (Y, T) in enumerate(zip(self.shadings, self.tubes)):
            if not Y.issubset(T):
                raise ParameterError(f"shading {i} leaves its tube")
        return self

    def density(self) -> float:
        """min over lines of |Y(ℓ)| / |N_δ(ℓ) ∩ [0,1]^n|."""
        if not self.lines:
            return 1.0
        return min(len(Y) / len(T) if len(T) else 1.0 for Y, T in zip(self.shadings, self.tubes))

    def union(self) -> CellSet:
        return union_all(self.shadings, self.n, self.k)

    def total_shading(self):
        """Σ |Y(ℓ)| as an exact rational."""
        return sum((Y.measure for Y in self.shadings), Fraction(0))

    def multiplicity(self) -> tuple[np.ndarray, np.ndarray]:
        """(flat cell indices of E_L, #L(x) per cell)."""
        if not self.shadings:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        flat = np.concatenate([Y.flat for Y in self.shadings])
        return np.unique(flat, return_counts=True)

    def subfamily(self, idx) -> "ShadedFamily":
        idx = list(idx)
        return ShadedFamily(self.n, self.k, [self.lines[i] for i in idx],
                            [self.shadings[i] for i in idx], dict(self.meta))

    def with_shadings(self, shadings) -> "ShadedFamily":
        return ShadedFamily(self.n, self.k, list(self.lines), list(shadings), dict(self.meta))

    def to_json(self) -> dict:
        return {
            "n": self.n, "k": self.k,
            "lines": [line.to_json() for line in self.lines],
            "shadings": [{"cells": Y.to_json()["cells"]} for Y in self.shadings],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ShadedFamily":
        n, k = int(obj["n"]), int(obj["k"])
        lines = [DiscreteLine(n, tuple(l["a"]), tuple(l["b"])) for l in obj["lines"]]
        shadings = [CellSet(n, k, s["cells"]) for s in obj["shadings"]]
        return cls(n, k, lines, shadings, dict(obj.get("meta", {})))


def refine_shading(F: ShadedFamily, keep) -> ShadedFamily:
    """Shading refinement Y'(ℓ) = Y(ℓ) ∩ keep (keep is a CellSet) or keep(i, Y) -> CellSet."""
    if isinstance(keep, CellSet):
        return F.with_shadings([Y & keep for Y in F.shadings])
    return F.with_shadings([keep(i, Y) for i, Y in enumerate(F.shadings)])


def family_is_refinement(F2: ShadedFamily, F1: ShadedFamily, c: float) -> tuple[bool, float]:
    """Y2(ℓ) ⊆ Y1(ℓ) for every line and Σ|Y2| >= c Σ|Y1|."""
    if len(F2) != len(F1) or any(l2 != l1 for l2, l1 in zip(F2.lines, F1.lines)):
        raise ParameterError("refinement must keep the same lines")
    nested = all(Y2.issubset(Y1) for Y2, Y1 in zip(F2.shadings, F1.shadings))
    t1 = sum(len(Y) for Y in F1.shadings)
    t2 = sum(len(Y) for Y in F2.shadings)
    ratio = t2 / t1 if t1 else 1.0
    return nested and ratio >= c, ratio


# ======================================================
# TWO-ENDS
# ======================================================
@dataclass(frozen=True)
class TwoEndsCertificate:
    holds: bool
    worst_window: tuple | None
    worst_fraction: float
    bound: float


def _check_two_ends_params(eps1, eps2):
    if not 0 < eps2 < eps1 < 1:
        raise ParameterError(f"two-ends needs 0 < eps2 < eps1 < 1, got eps1={eps1}, eps2={eps2}")


def two_ends_certificate(Y: CellSet, eps1: float, eps2: float, C: float) -> TwoEndsCertificate:
    """
    No height window [t, t + δ^eps1) holds more than C δ^eps2 of the shading.

    Windows are measured along the height coordinate, which is within a
    factor √2 of arclength for normalized lines.
    """
    _check_two_ends_params(eps1, eps2)
    delta = Y.delta
    bound = C * delta ** eps2
    if not Y:
        return TwoEndsCertificate(True, None, 0.0, bound)
    heights = np.sort((Y.coords[:, -1] + 0.5) * delta)
    length = delta ** eps1
    ends = np.searchsorted(heights, heights + length - 1e-12, side="left")
    counts = ends - np.arange(len(heights))
    i = int(np.argmax(counts))
    frac = counts[i] / len(heights)
    window = (float(heights[i] - 0.5 * delta), float(heights[i] - 0.5 * delta + length))
    return TwoEndsCertificate(bool(frac <= bound + 1e-12), window, float(frac), float(bound))


def family_two_ends(F: ShadedFamily, eps1: float, eps2: float, C: float) -> bool:
    return all(two_ends_certificate(Y, eps1, eps2, C).holds for Y in F.shadings)


@dataclass(frozen=True)
class ReductionScale:
    rho: float
    flagged: bool
    counts: tuple


def two_ends_reduction_scale(Y: CellSet, v: float, C: float, eps1: float | None = None,
                             eps2: float | None = None) -> ReductionScale:
    """
    Least dyadic r in [δ, 1] with |Y|_r < C^-1 r^-v, |Y|_r counted along the height axis.

    Returns ρ = 1 with ``flagged`` set when no r qualifies.  With (eps1, eps2)
    given and Y two-ends with constant C, ρ >= δ^eps1 is asserted for v < eps2.
    """
    if not 0 < v < 1:
        raise ParameterError(f"v={v} outside (0, 1)")
    if C < 1:
        raise ParameterError(f"C={C} must be >= 1")
    rows = np.unique(Y.coords[:, -1]) if Y else np.zeros(0, dtype=np.int64)
    if len(rows) and not is_uniform(CellSet(1, Y.k, rows)):
        logger.warning("two_ends_reduction_scale on a non-uniform shading")
    counts = tuple(int(len(np.unique(rows >> (Y.k - j)))) for j in range(Y.k + 1))
    rho, flagged = 1.0, True
    for j in range(Y.k, -1, -1):
        r = 2.0 ** -j
        if counts[j] < r ** -v / C:
            rho, flagged = r, False
            break
    if eps1 is not None and eps2 is not None and v < eps2 and not flagged:
        if two_ends_certificate(Y, eps1, eps2, C).holds and rho < Y.delta ** eps1 - 1e-12:
            raise PreconditionError(f"reduction scale {rho} below δ^eps1 for a two-ends shading")
    return ReductionScale(rho=rho, flagged=flagged, counts=counts)


# ======================================================
# SEPARATION, PARALLELISM, L[T]
# ======================================================
def _params(lines, which: str) -> np.ndarray:
    if which == "b":
        return np.array([l.b for l in lines], dtype=float).reshape(len(lines), -1)
    return np.array([l.a + l.b for l in lines], dtype=float).reshape(len(lines), -1)


def is_delta_separated(lines, delta: float) -> bool:
    """Parameters (a, b) pairwise at sup-distance >= δ."""
    if len(lines) < 2:
        return True
    return bool(pdist(_params(lines, "ab"), metric="chebyshev").min() >= delta - 1e-12)


def is_directionally_separated(lines, delta: float) -> bool:
    """Directions b pairwise at sup-distance >= δ."""
    if len(lines) < 2:
        return True
    return bool(pdist(_params(lines, "b"), metric="chebyshev").min() >= delta - 1e-12)


def parallelism(lines, delta: float) -> int:
    """Max number of lines whose direction b falls in one δ-cell of [-1, 1]^(n-1)."""
    if not lines:
        return 0
    bins = np.floor((_params(lines, "b") + 1.0) / delta + 1e-9).astype(np.int64)
    _, counts = np.unique(bins, axis=0, return_counts=True)
    return int(counts.max())


def _min_distance_to_core(line: DiscreteLine, core: DiscreteLine) -> float:
    """min over z in [0, 1] of the distance from ℓ(z) to the core line."""
    d = core.direction()
    p0 = np.append(core.a_vec, 0.0)
    w0 = np.append(line.a_vec, 0.0) - p0
    w1 = np.append(line.b_vec, 1.0)
    u0 = w0 - (w0 @ d) * d
    u1 = w1 - (w1 @ d) * d
    alpha, beta, gamma = u1 @ u1, 2 * (u0 @ u1), u0 @ u0
    zs = [0.0, 1.0]
    if alpha > 0:
        zs.append(min(1.0, max(0.0, -beta / (2 * alpha))))
    q = min(alpha * z * z + beta * z + gamma for z in zs)
    return math.sqrt(max(q, 0.0))


def lines_near_tube(lines, core: DiscreteLine, v: float, delta: float | None = None) -> list:
    """Indices of lines meeting the v-tube around ``core`` with angle <= v."""
    if delta is not None and v < delta:
        raise ParameterError(f"tube radius v={v} below δ={delta}")
    return [i for i, line in enumerate(lines)
            if line.angle_with(core) <= v + 1e-12 and _min_distance_to_core(line, core) <= v + 1e-12]
