# incidence_lab.py
"""
Incidence oracles and inequality checkers.

Left-hand sides are always measured by the union / census oracles on the
cell grid; right-hand sides are arithmetic in the certified parameters.
Comparisons run in log2 space.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import pandas as pd

from dyadic_core import SlackLedger
from errors import CapacityError, ParameterError, PreconditionError
from exponents import CONJECTURE, MEASUREMENT, THEOREM
from refinement import dyadic_pigeonhole
from tube_geometry import (
    DiscreteLine,
    ShadedFamily,
    core_cells,
    family_two_ends,
    is_delta_separated,
    parallelism,
)

logger = logging.getLogger(__name__)

LATTICE_LIMIT = 1 << 32
INCIDENCE_CHUNK = 1 << 22
MAX_QUADRUPLES = 4096
CSV_COLUMNS = ["name", "n", "k", "lambda", "m", "eps1", "eps2", "lhs", "rhs", "ratio", "verdict", "seed"]


# ======================================================
# REPORTS
# ======================================================
@dataclass
class InequalityReport:
    """
    One measured inequality.  ``sense="lower"`` checks lhs >= rhs·δ^slack,
    ``sense="upper"`` checks lhs <= rhs·δ^-slack.
    """

    name: str
    ref: str
    params: dict
    lhs: float
    rhs: float
    slack: float = 0.0
    sense: str = "lower"
    grade: str = THEOREM
    verdict: str = ""
    seed: int | None = None
    ledger: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.verdict:
            self.verdict = "pass" if self.holds() else "fail"

    @property
    def ratio(self) -> float:
        if self.rhs == 0:
            return math.inf if self.lhs > 0 else 1.0
        return self.lhs / self.rhs

    def holds(self) -> bool:
        k = int(self.params.get("k", 0))
        if self.sense == "lower":
            if self.rhs <= 0:
                return True
            if self.lhs <= 0:
                return False
            return math.log2(self.lhs) >= math.log2(self.rhs) - self.slack * k - 1e-9
        if self.lhs <= 0:
            return True
        if self.rhs <= 0:
            return False
        return math.log2(self.lhs) <= math.log2(self.rhs) + self.slack * k + 1e-9

    def to_row(self) -> dict:
        row = {c: self.params.get(c) for c in ("n", "k", "lambda", "m", "eps1", "eps2")}
        row.update(name=self.name, lhs=self.lhs, rhs=self.rhs, ratio=self.ratio,
                   verdict=self.verdict, seed=self.seed)
        return {c: row.get(c) for c in CSV_COLUMNS}

    def to_json(self) -> dict:
        return {"name": self.name, "ref": self.ref, "grade": self.grade, "params": self.params,
                "lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio, "slack": self.slack,
                "sense": self.sense, "verdict": self.verdict, "seed": self.seed,
                "slack_ledger": list(self.ledger), "extra": self.extra}


# ======================================================
# UNION / CENSUS
# ======================================================
def union_measure(F: ShadedFamily) -> Fraction:
    """|E_L| = δ^n · #cells of the union of the shadings."""
    return F.union().measure


def multiplicity_census(F: ShadedFamily, tubes: bool = False) -> pd.Series:
    """Histogram of #L(x) over E_L (over the full tubes when ``tubes``)."""
    if tubes:
        F = F.with_shadings(F.tubes)
    _, counts = F.multiplicity()
    hist = pd.Series(counts).value_counts().sort_index()
    hist.index.name = "multiplicity"
    hist.name = "cells"
    return hist


def _params(F: ShadedFamily, **more) -> dict:
    out = {"n": F.n, "k": F.k, "lambda": F.meta.get("lambda"), "m": F.meta.get("m"),
           "eps1": F.meta.get("eps1"), "eps2": F.meta.get("eps2"), "lines": len(F)}
    out.update(more)
    return out


def _certified(F: ShadedFamily, one_parallel: bool = True) -> tuple[float, float, float]:
    """Re-check the certificates a checker relies on; returns (λ, ε1, ε2)."""
    missing = [key for key in ("lambda", "eps1", "eps2", "m") if key not in F.meta]
    if missing:
        raise PreconditionError(f"family lacks certificates: {', '.join(missing)}")
    lam, e1, e2 = float(F.meta["lambda"]), float(F.meta["eps1"]), float(F.meta["eps2"])
    if F.density() < lam * (1 - 1e-9):
        raise PreconditionError(f"density {F.density():.4g} below certified λ={lam:.4g}")
    if not family_two_ends(F, e1, e2, float(F.meta.get("C", 2.0))):
        raise PreconditionError("shadings are not two-ends at the certified constants")
    if not is_delta_separated(F.lines, F.delta):
        raise PreconditionError("lines are not δ-separated")
    m = parallelism(F.lines, F.delta)
    if m > int(F.meta["m"]) or (one_parallel and m > 1):
        raise PreconditionError(f"family is {m}-parallel")
    return lam, e1, e2


# ======================================================
# CHECKERS
# ======================================================
def check_two_ends_furstenberg_2d(F: ShadedFamily, eps: float = 0.1, slack: float = 0.0) -> InequalityReport:
    """|E_L| >= δ^ε δ^(ε1/2) λ^(1/2) Σ|Y(ℓ)| for planar two-ends families."""
    if F.n != 2:
        raise ParameterError("planar checker needs n = 2")
    lam, e1, _ = _certified(F)
    d = F.delta
    rhs = d ** eps * d ** (e1 / 2) * lam ** 0.5 * float(F.total_shading())
    return InequalityReport("two_ends_furstenberg_2d", "two-ends-furstenberg-planar", _params(F, eps=eps),
                            float(union_measure(F)), rhs, slack, seed=F.meta.get("seed"))


def check_hairbrush_3d(F: ShadedFamily, eps: float = 0.1, slack: float = 0.0) -> InequalityReport:
    """|E_L| >= δ^ε δ^(3ε1/4) λ^(3/4) δ^(1/2) Σ|Y(ℓ)| in three dimensions."""
    if F.n != 3:
        raise ParameterError("hairbrush checker needs n = 3")
    lam, e1, _ = _certified(F)
    d = F.delta
    rhs = d ** eps * d ** (0.75 * e1) * lam ** 0.75 * d ** 0.5 * float(F.total_shading())
    return InequalityReport("hairbrush_3d", "two-ends-hairbrush-3d", _params(F, eps=eps),
                            float(union_measure(F)), rhs, slack, seed=F.meta.get("seed"))


def check_bush_nd(F: ShadedFamily, eps: float = 0.1, slack: float = 0.0) -> InequalityReport:
    """|E_L| >= δ^ε δ^(ε1/2) λ δ^((n-1)/2) (δ^(n-1) #L)^(1/2)."""
    lam, e1, _ = _certified(F, one_parallel=False)
    d, n = F.delta, F.n
    rhs = d ** eps * d ** (e1 / 2) * lam * d ** ((n - 1) / 2) * (d ** (n - 1) * len(F)) ** 0.5
    return InequalityReport("bush_nd", "two-ends-bush", _params(F, eps=eps),
                            float(union_measure(F)), rhs, slack, seed=F.meta.get("seed"))


def check_furstenberg_conjecture(F: ShadedFamily, eps: float = 0.0, slack: float = 0.0) -> InequalityReport:
    """Search mode for |E_L| ⪆ λ^((n-1)/2) Σ|Y(ℓ)|; the ratio is the quantity of interest."""
    lam, _, _ = _certified(F, one_parallel=False)
    rhs = F.delta ** eps * lam ** ((F.n - 1) / 2) * float(F.total_shading())
    rep = InequalityReport("furstenberg_conjecture", "two-ends-furstenberg-conjecture", _params(F, eps=eps),
                           float(union_measure(F)), rhs, slack, grade=CONJECTURE if F.n > 2 else THEOREM,
                           seed=F.meta.get("seed"))
    logger.info("furstenberg search n=%d k=%d: ratio %.4g", F.n, F.k, rep.ratio)
    return rep


# ======================================================
# INCIDENCES AND THE LATTICE EXAMPLE
# ======================================================
def incidences(points, lines, tol: float = 1e-9, height_axis: int = -1) -> int:
    """
    Brute-force count of pairs (p, ℓ) with p on ℓ.

    ``lines`` holds DiscreteLine objects or (a, b) pairs; p is on ℓ_(a,b) when
    the non-height coordinates equal a + z b (within ``tol``), z being the
    coordinate at ``height_axis``.
    """
    P = np.asarray(points, dtype=float)
    if not len(P) or not len(lines):
        return 0
    n = P.shape[1]
    z = P[:, height_axis]
    rest = np.delete(P, height_axis % n, axis=1)
    if isinstance(lines[0], DiscreteLine):
        A = np.array([l.a for l in lines], dtype=float)
        B = np.array([l.b for l in lines], dtype=float)
    else:
        A = np.array([np.atleast_1d(a) for a, _ in lines], dtype=float)
        B = np.array([np.atleast_1d(b) for _, b in lines], dtype=float)
    step = max(1, INCIDENCE_CHUNK // len(P))
    total = 0
    for s in range(0, len(A), step):
        pred = A[s:s + step, None, :] + z[None, :, None] * B[s:s + step, None, :]
        total += int(np.all(np.abs(pred - rest[None, :, :]) <= tol, axis=2).sum())
    return total


@dataclass
class LatticeExample:
    n: int
    N: int
    k: tuple
    A: np.ndarray
    B: np.ndarray
    count: int

    @property
    def n_points(self) -> int:
        return (self.N + 1) * math.prod(kj * self.N + 1 for kj in self.k)

    @property
    def n_lines(self) -> int:
        return len(self.A)

    @property
    def points(self) -> np.ndarray:
        axes = [np.arange(self.N + 1)] + [np.arange(kj * self.N + 1) for kj in self.k]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.n)

    @property
    def lines(self) -> list:
        return list(zip(self.A, self.B))

    @property
    def predicted(self) -> float:
        """(#P)^(2/(n+1)) (#L)^(n/(n+1))."""
        n = self.n
        return self.n_points ** (2 / (n + 1)) * self.n_lines ** (n / (n + 1))


def _grid(ranges) -> np.ndarray:
    return np.stack(np.meshgrid(*[np.arange(lo, hi + 1) for lo, hi in ranges], indexing="ij"),
                    axis=-1).reshape(-1, len(ranges)).astype(np.int64)


def gen_lattice_example(n: int, N: int, k) -> LatticeExample:
    """
    P = [0,N] x [0,k1 N] x ... (integer points), L = {(a,0) + R(1,b)} with
    a in [1,k N] and b in [1,k]; the first coordinate is the line parameter.
    """
    if n not in (2, 3):
        raise ParameterError(f"lattice example needs n in (2, 3), got {n}")
    k = tuple(int(v) for v in np.atleast_1d(k))
    if len(k) != n - 1 or N < 1 or min(k) < 1:
        raise ParameterError(f"need N >= 1 and {n - 1} multipliers k_j >= 1, got N={N}, k={k}")
    if N ** n * math.prod(v * v for v in k) > LATTICE_LIMIT:
        raise CapacityError(f"lattice N={N}, k={k} exceeds 2^32")
    a_vals = _grid([(1, kj * N) for kj in k])
    b_vals = _grid([(1, kj) for kj in k])
    A = np.repeat(a_vals, len(b_vals), axis=0)
    B = np.tile(b_vals, (len(a_vals), 1))
    top = np.array([kj * N for kj in k], dtype=np.int64)
    # lattice points of a line sit at integer parameters t = 0 .. t_max
    t_max = np.minimum(N, ((top[None, :] - A) // B).min(axis=1))
    return LatticeExample(n, N, k, A, B, int(np.maximum(t_max + 1, 0).sum()))


def incidence_exponents(n: int, Ns=(4, 8, 16), k=None, k_scales=(1, 2)) -> dict:
    """
    Fit I ≈ c (#P)^α (#L)^β over a sweep of N and of the multipliers k·c.

    Varying N alone keeps log #P and log #L collinear, so the sweep also
    scales k.  Returns the fit, its distance to (2/(n+1), n/(n+1)) and the
    sweep table.
    """
    base = np.full(n - 1, 2, dtype=np.int64) if k is None else np.atleast_1d(k).astype(np.int64)
    rows = []
    for N in Ns:
        for c in k_scales:
            ex = gen_lattice_example(n, int(N), tuple(base * c))
            rows.append({"N": int(N), "k": tuple(int(v) for v in base * c), "points": ex.n_points,
                         "lines": ex.n_lines, "incidences": ex.count})
    table = pd.DataFrame(rows)
    X = np.column_stack([np.ones(len(table)), np.log(table["points"]), np.log(table["lines"])])
    coef, *_ = np.linalg.lstsq(X, np.log(table["incidences"]), rcond=None)
    alpha, beta = float(coef[1]), float(coef[2])
    target = (2 / (n + 1), n / (n + 1))
    return {"alpha": alpha, "beta": beta, "target": target,
            "distance": math.hypot(alpha - target[0], beta - target[1]), "table": table}


# ======================================================
# RICH BALLS
# ======================================================
def rich_ball_census(F: ShadedFamily, r: int, slack: float = 0.1) -> InequalityReport:
    """
    #δ-cells meeting >= r tubes against (#T)^(n/(n-1)) / r^((n+1)/(n-1)).

    A tube meets a cell when its core passes through it at the row's
    mid-height, one cell per row, so a tube counts like a chain of δ-balls.
    """
    if F.n not in (2, 3):
        raise ParameterError("census needs n in (2, 3)")
    if r < 1:
        raise ParameterError(f"richness r={r} must be >= 1")
    if F.lines:
        flat = np.concatenate([core_cells(line, F.k).flat for line in F.lines])
        _, counts = np.unique(flat, return_counts=True)
    else:
        counts = np.zeros(0, dtype=np.int64)
    census = int((counts >= r).sum())
    n = F.n
    bound = len(F) ** (n / (n - 1)) / r ** ((n + 1) / (n - 1)) if len(F) else 0.0
    return InequalityReport("rich_ball_census", "well-spaced-rich-balls", _params(F, r=r),
                            float(census), float(bound), slack, sense="upper", grade=MEASUREMENT,
                            seed=F.meta.get("seed"), extra={"core_cells": int(len(counts))})


# ======================================================
# CONVEX WOLFF
# ======================================================
@dataclass(frozen=True)
class WolffWitness:
    C_lower: float
    kind: str
    params: dict
    count: int
    volume: float
    t: float
    is_lower_bound: bool = True


def _slab_normals() -> np.ndarray:
    normals = [(0.0, 0.0, 1.0)]
    for phi in np.arange(8) * np.pi / 8:
        for tau in (-0.5, -0.25, 0.0, 0.25, 0.5):
            normals.append((math.cos(phi), math.sin(phi), tau))
    N = np.asarray(normals)
    return N / np.linalg.norm(N, axis=1, keepdims=True)


def convex_wolff_deficiency(lines, k: int, t: float) -> WolffWitness:
    """
    max over a finite dictionary of convex U of #T[U] / (|U|^t #T).

    Dictionary: dyadic cubes, slabs {c <= u·x < c + w} for a fixed set of
    41 normals u and dyadic widths w (offsets w/2 apart), and tubes of
    dyadic radius around each core line.  T[U] are the tubes whose core
    segment (heights 0..1) lies in U; |U| is the δ-cell volume of U ∩ [0,1]^3.
    The result lower-bounds the axiom's error constant.
    """
    lines = list(lines)
    if not lines:
        raise ParameterError("Wolff scan of an empty family")
    if any(l.n != 3 for l in lines):
        raise ParameterError("convex Wolff scan is three-dimensional")
    if not 0 < t < 2:
        raise ParameterError(f"t={t} outside (0, 2)")
    side = 1 << k
    dv = side ** -3.0
    centres = (np.stack(np.meshgrid(*[np.arange(side)] * 3, indexing="ij"), -1).reshape(-1, 3) + 0.5) / side
    P0 = np.array([l.point_at(0.0)[0] for l in lines])
    P1 = np.array([l.point_at(1.0)[0] for l in lines])
    T = len(lines)
    best = WolffWitness(0.0, "none", {}, 0, 0.0, t)

    def consider(kind, count, vol, params):
        nonlocal best
        if count and vol > 0:
            C = count / (vol ** t * T)
            if C > best.C_lower:
                best = WolffWitness(float(C), kind, params, int(count), float(vol), t)

    # dyadic cubes
    for j in range(k + 1):
        w = 2.0 ** -j
        lo0, lo1 = np.floor(P0 / w), np.floor(P1 / w)
        same = np.all(lo0 == lo1, axis=1) & np.all((P0 >= 0) & (P0 < 1) & (P1 >= 0) & (P1 < 1), axis=1)
        if same.any():
            keys, counts = np.unique(lo0[same], axis=0, return_counts=True)
            i = int(np.argmax(counts))
            consider("cube", counts[i], w ** 3, {"side": w, "corner": (keys[i] * w).tolist()})

    # slabs
    for u in _slab_normals():
        proj = np.sort(centres @ u)
        e0, e1 = P0 @ u, P1 @ u
        tmin, tmax = np.minimum(e0, e1), np.maximum(e0, e1)
        for j in range(k + 1):
            w = 2.0 ** -j
            starts = np.arange(proj[0] - w / 2, proj[-1] + w / 2, w / 2)
            inside = (tmin[None, :] >= starts[:, None]) & (tmax[None, :] < starts[:, None] + w)
            counts = inside.sum(axis=1)
            i = int(np.argmax(counts))
            if counts[i]:
                c = starts[i]
                vol = (np.searchsorted(proj, c + w, "left") - np.searchsorted(proj, c, "left")) * dv
                consider("slab", counts[i], vol, {"normal": u.tolist(), "offset": float(c), "width": w})

    # tubes around each core
    for idx, core in enumerate(lines):
        dist_cells = np.sort(core.distance(centres))
        far = np.maximum(core.distance(P0), core.distance(P1))
        for j in range(1, k + 1):
            w = 2.0 ** -j
            count = int((far <= w).sum())
            vol = np.searchsorted(dist_cells, w, "right") * dv
            consider("tube", count, vol, {"core": idx, "radius": w})
    return best


# ======================================================
# SUMS AND DIFFERENCES
# ======================================================
@dataclass
class ProjectionSystem:
    """
    G ⊂ Z x Z as integer δ-grid coordinates (A[i], B[i]) in Z = (δZ)^d,
    with slopes r1, r1', r2, r2' and s = r_j + r_j / r_j'.
    """

    A: np.ndarray
    B: np.ndarray
    r1: float
    r1p: float
    r2: float
    r2p: float
    s: float
    k: int

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.int64).reshape(len(self.A), -1)
        self.B = np.asarray(self.B, dtype=np.int64).reshape(len(self.B), -1)
        if self.A.shape != self.B.shape:
            raise ParameterError("G needs matching a and b coordinates")
        if 0 in (self.r1p, self.r2p):
            raise ParameterError("r1' and r2' must be nonzero")
        tol = 2.0 ** -self.k
        for r, rp in ((self.r1, self.r1p), (self.r2, self.r2p)):
            if abs(r + r / rp - self.s) > tol + 1e-12:
                raise ParameterError(f"slope constraint violated: {r} + {r}/{rp} != s={self.s}")

    @classmethod
    def from_ratios(cls, A, B, k: int, r1: float, r1p: float, r2: float, r2p: float) -> "ProjectionSystem":
        return cls(A, B, r1, r1p, r2, r2p, r1 + r1 / r1p, k)

    def __len__(self):
        return len(self.A)

    @property
    def slopes(self) -> dict:
        return {"0": 0.0, "r1": self.r1, "r1'": self.r1p, "r2": self.r2, "r2'": self.r2p, "inf": math.inf}

    def project(self, t: float) -> int:
        """#π_t(G) at δ resolution; π_∞ is the b-projection."""
        if not len(self):
            return 0
        if math.isinf(t):
            return len(np.unique(self.B, axis=0))
        bins = np.floor(self.A + t * self.B + 1e-9).astype(np.int64)
        return len(np.unique(bins, axis=0))


def sums_diffs_check(P: ProjectionSystem, slack: float = 0.0) -> InequalityReport:
    """#π_-1(G) against sup over the six slopes of #π_t(G)^(7/4)."""
    counts = {name: P.project(t) for name, t in P.slopes.items()}
    diff = P.project(-1.0)
    sup = max(counts.values()) if counts else 0
    trivial = all(c <= len(P) for c in counts.values()) and diff <= counts["0"] * counts["inf"]
    if not trivial:
        raise ParameterError("projection counts exceed their trivial bounds")
    return InequalityReport("sums_diffs", "sums-and-differences", {"k": P.k, "G": len(P), "s": P.s},
                            float(diff), float(sup) ** 1.75, slack, sense="upper",
                            extra={"projections": counts, "difference": diff})


def sums_diffs_sweep(sizes, k: int, seed: int = 0, slopes=(0.5, 2.0, 0.6, 4.0)) -> pd.DataFrame:
    """Ratio #π_-1 / sup^(7/4) for random G of each size (distinct points of the δ-grid square)."""
    r1, r1p, r2, r2p = slopes
    rows = []
    side = 1 << k
    for i, size in enumerate(sizes):
        rng = np.random.default_rng([int(seed), i])
        if size > side * side:
            raise CapacityError(f"|G|={size} exceeds the {side}x{side} grid")
        flat = rng.choice(side * side, size=int(size), replace=False)
        P = ProjectionSystem.from_ratios(flat // side, flat % side, k, r1, r1p, r2, r2p)
        rep = sums_diffs_check(P)
        rows.append({"size": int(size), "difference": rep.lhs, "sup": max(rep.extra["projections"].values()),
                     "ratio": rep.ratio})
    return pd.DataFrame(rows)


# ======================================================
# SIX-SLICE EXPERIMENT
# ======================================================
def _row_matrix(F: ShadedFamily) -> np.ndarray:
    S = np.zeros((len(F), F.side), dtype=bool)
    for i, Y in enumerate(F.shadings):
        if Y:
            S[i, np.unique(Y.coords[:, -1])] = True
    return S


def _s_matches(pairs: np.ndarray, r: np.ndarray, tol: float, gap: float) -> np.ndarray:
    """Quadruples (h3, h4, h5, h6) from pairs with |s(h3,h4) - s(h5,h6)| <= tol and |h3 - h5| >= gap."""
    s = r[pairs[:, 0]] + r[pairs[:, 0]] / r[pairs[:, 1]]
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    hi = np.searchsorted(s_sorted, s_sorted + tol, side="right")
    out = []
    for i in range(len(order)):
        for j in range(i + 1, hi[i]):
            p, q = pairs[order[i]], pairs[order[j]]
            if abs(int(p[0]) - int(q[0])) >= gap:
                out.append((p[0], p[1], q[0], q[1]))
    return np.asarray(out, dtype=np.int64).reshape(-1, 4)


def six_slice_experiment(F: ShadedFamily, eps: float = 0.0, slack: float = 0.2,
                         max_lines: int = 16) -> InequalityReport:
    """
    Lower bound on |E_L| from six horizontal slices, against
    δ^ε1 λ^((2n+10)/7) δ^((3n-3)/7) (Σ|Y|)^(4/7).

    Steps: band the rows of E_L by slice size; pick t1, t2 among the banded
    rows, N/8 apart, shared by the most lines; census the admissible pairs
    Q(ℓ); match pairs by s = r + r/r' within δ with |t3 - t5| >= λ²/8; pick
    the matched quadruple shared by the most lines L'; build G from the
    positions of L' at t1, t2 and run the sums-and-differences count.

    The count bounds a generic slice below by (#G d^((n-1)/4))^(4/7),
    d = |t3 - t5|; lhs is that bound times the banded rows, as a measure.
    Without a derived bound lhs is 0 and ``extra["union"]`` holds |E_L|.
    """
    if F.n not in (2, 3):
        raise ParameterError("six-slice experiment needs n in (2, 3)")
    ledger = SlackLedger()
    k, N = F.k, F.side
    lam = float(F.meta.get("lambda", F.density()))
    lam_exp = math.log2(1 / lam) / k if lam < 1 else 0.0
    regime = "strong" if lam_exp <= 0.25 + 1e-12 else "weak" if lam_exp <= 0.5 + 1e-12 else "skip"
    params = _params(F, eps=eps, regime=regime)
    e1 = float(F.meta.get("eps1", 0.0))
    n = F.n
    rhs = (F.delta ** eps * F.delta ** e1 * lam ** ((2 * n + 10) / 7) * F.delta ** ((3 * n - 3) / 7)
           * float(F.total_shading()) ** (4 / 7))
    union = float(union_measure(F))
    base = dict(name="six_slice", ref="six-slice-sums-differences", params=params, lhs=0.0, rhs=rhs,
                slack=slack, seed=F.meta.get("seed"))
    if regime == "skip":
        return InequalityReport(verdict="skip", grade=MEASUREMENT,
                                extra={"reason": "λ below δ^(1/2)", "union": union}, **base)
    certified = "eps1" in F.meta and "eps2" in F.meta and family_two_ends(
        F, e1, float(F.meta["eps2"]), float(F.meta.get("C", 2.0)))

    E = F.union()
    if not E:
        return InequalityReport(verdict="measured", grade=MEASUREMENT, extra={"reason": "empty", "union": union},
                                **base)
    slice_counts = np.bincount(E.coords[:, -1], minlength=N)
    occupied = np.flatnonzero(slice_counts)
    ph = dyadic_pigeonhole(occupied, weight=slice_counts[occupied], ledger=ledger, op="six_slice:rows")
    rows = np.asarray(ph.items, dtype=np.int64)

    S = _row_matrix(F)
    M = S.T.astype(np.int64) @ S.astype(np.int64)
    sep = N / 8
    h1 = h2 = None
    best = 0
    for a, b in itertools.combinations(rows, 2):
        if b - a >= sep and M[a, b] > best:
            h1, h2, best = int(a), int(b), int(M[a, b])
    extra = {"regime": regime, "rows_banded": int(len(rows)), "slack_total": ledger.total, "union": union}
    if h1 is None:
        extra["reason"] = "no separated pair of banded rows"
        return InequalityReport(verdict="measured", grade=MEASUREMENT, ledger=ledger.to_list(), extra=extra, **base)
    L12 = np.flatnonzero(S[:, h1] & S[:, h2])
    ledger.add("six_slice:heights", len(F) / max(1, len(L12)))

    z = (np.arange(N) + 0.5) / N
    z1, z2 = z[h1], z[h2]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (z - z1) / (z2 - z)
    admissible = np.abs(np.arange(N) - h1) >= sep
    admissible &= np.abs(np.arange(N) - h2) >= sep
    census, pair_sets = [], {}
    for i in L12:
        hs = np.flatnonzero(S[i] & admissible)
        pairs = np.array([(a, b) for a, b in itertools.permutations(hs, 2) if abs(a - b) >= sep],
                         dtype=np.int64).reshape(-1, 2)
        census.append(len(pairs))
        pair_sets[int(i)] = pairs
    census = pd.Series(census, index=L12, dtype=np.int64)
    extra.update(t=[float(z1), float(z2)], lines_t1t2=int(len(L12)),
                 Q_median=float(census.median()) if len(census) else 0.0,
                 Q_expected=lam ** 2 * N ** 2)

    top = census.sort_values(ascending=False, kind="stable").index[:max_lines]
    gap = max(1.0, lam ** 2 * sep)
    matches = {int(i): _s_matches(pair_sets[int(i)], r, 1.0 / N, gap) for i in top}
    match_counts = [len(m) for m in matches.values()]
    extra.update(matches_median=float(np.median(match_counts)) if match_counts else 0.0,
                 matches_expected=lam ** 4 * N ** 3)
    if not certified or not any(match_counts):
        extra["reason"] = "not two-ends" if not certified else "no s-matched quadruples"
        return InequalityReport(verdict="measured", grade=MEASUREMENT, ledger=ledger.to_list(), extra=extra, **base)

    cand = np.concatenate([m for m in matches.values() if len(m)])
    cand = np.unique(cand, axis=0)
    if len(cand) > MAX_QUADRUPLES:
        cand = cand[np.linspace(0, len(cand) - 1, MAX_QUADRUPLES).astype(np.int64)]
    S12 = S[L12]
    shared = S12[:, cand].all(axis=2).sum(axis=0)
    h3, h4, h5, h6 = (int(v) for v in cand[int(np.argmax(shared))])
    Lp = L12[S12[:, [h3, h4, h5, h6]].all(axis=1)]
    ledger.add("six_slice:quadruple", len(L12) / max(1, len(Lp)))

    lines = [F.lines[i] for i in Lp]
    A = np.array([np.floor(l.point_at(z1)[0, :-1] * N) for l in lines], dtype=np.int64)
    B = np.array([np.floor(l.point_at(z2)[0, :-1] * N) for l in lines], dtype=np.int64)
    system = ProjectionSystem.from_ratios(A, B, k, r[h3], r[h4], r[h5], r[h6])
    sd = sums_diffs_check(system)
    G = len(np.unique(np.hstack([A, B]), axis=0))
    d = abs(z[h3] - z[h5])
    slice_lower = (G * d ** ((n - 1) / 4)) ** (4 / 7)
    extra.update(t_slices=[float(z[h]) for h in (h3, h4, h5, h6)], lines_prime=int(len(Lp)), G=G, d=float(d),
                 slice_lower=slice_lower, slice_median=float(np.median(slice_counts[rows])),
                 sums_diffs=sd.to_json(), slack_total=ledger.total)
    base["lhs"] = slice_lower * len(rows) * F.delta ** n
    return InequalityReport(grade=THEOREM, ledger=ledger.to_list(), extra=extra, **base)
