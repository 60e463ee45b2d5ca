# branching.py
"""
Scale analysis: uniform sets, branching functions, clustering of branching
profiles, Lipschitz partitions and the multi-scale decomposition.

All scales live on the dyadic ladder ρ_j = 2**-j, so a branching function
of a set at scale δ = 2**-k is sampled at x_j = j/k.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from dyadic_core import CellSet, SlackLedger, covering_count, dyadic_bands
from errors import CertificateError, DomainError, InternalError, ParameterError
from set_classes import frostman_deficiency

logger = logging.getLogger(__name__)

TOL = 1e-12


# ======================================================
# UNIFORM SETS
# ======================================================
def _level_ids(coords: np.ndarray, k: int, j: int, n: int) -> np.ndarray:
    c = coords >> (k - j)
    if not len(c):
        return np.zeros(0, dtype=np.int64)
    return np.ravel_multi_index(tuple(c.T), (1 << j,) * n)


def _children_counts(coords, k, j, n):
    """Surviving parents at level j, their child counts at level j+1 and their descendant mass."""
    parent = _level_ids(coords, k, j, n)
    child = _level_ids(coords, k, j + 1, n)
    pairs = np.unique(np.stack([parent, child], axis=1), axis=0)
    parents, nchild = np.unique(pairs[:, 0], return_counts=True)
    _, mass = np.unique(parent, return_counts=True)
    return parent, parents, nchild, mass


def uniformity_profile(E: CellSet) -> list[tuple[int, int, int]]:
    """(level, min children, max children) for each step j -> j+1 of the ladder."""
    out = []
    for j in range(E.k):
        _, _, nchild, _ = _children_counts(E.coords, E.k, j, E.n)
        if len(nchild):
            out.append((j, int(nchild.min()), int(nchild.max())))
    return out


def is_uniform(E: CellSet, C: int = 2) -> bool:
    """Children counts at every ladder step lie within a factor < C of each other."""
    return all(hi < C * lo for _, lo, hi in uniformity_profile(E))


@dataclass
class UniformizeResult:
    cells: CellSet
    ratio: float
    ledger: SlackLedger = field(default_factory=SlackLedger)


def uniformize_with_report(E: CellSet) -> UniformizeResult:
    """
    Uniform refinement by dyadic pigeonholing on children counts.

    Levels are processed from the finest parent level upward; at each level
    the parents whose children counts share the dyadic band of largest
    descendant mass survive.  Pruning a parent removes its whole subtree, so
    finer levels stay uniform.
    """
    if not E:
        raise DomainError("uniformize needs a nonempty set")
    coords = E.coords
    keep = np.ones(len(E), dtype=bool)
    ledger = SlackLedger()
    for j in range(E.k - 1, -1, -1):
        parent, parents, nchild, mass = _children_counts(coords[keep], E.k, j, E.n)
        bands = dyadic_bands(nchild)
        band_mass = np.bincount(bands, weights=mass)
        win = int(np.argmax(band_mass))
        good = parents[bands == win]
        before = int(keep.sum())
        keep[keep] = np.isin(parent, good)
        after = int(keep.sum())
        ledger.add(f"uniformize level {j} ({len(band_mass)} bands)", before / after)
    out = E.take(keep)
    ratio = len(out) / len(E)
    logger.debug("uniformize %r -> %r (ratio %.4g)", E, out, ratio)
    return UniformizeResult(cells=out, ratio=ratio, ledger=ledger)


def uniformize(E: CellSet) -> CellSet:
    return uniformize_with_report(E).cells


# ======================================================
# BRANCHING FUNCTIONS
# ======================================================
@dataclass(frozen=True)
class BranchingFunction:
    xs: tuple
    values: tuple
    n: int
    k: int

    def __call__(self, x):
        return np.interp(x, self.xs, self.values)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.xs, dtype=float), np.asarray(self.values, dtype=float)

    def normalized(self) -> "BranchingFunction":
        """β/n, a non-decreasing 1-Lipschitz profile."""
        return BranchingFunction(self.xs, tuple(v / self.n for v in self.values), 1, self.k)

    def slopes(self) -> np.ndarray:
        x, v = self.as_arrays()
        return np.diff(v) / np.diff(x)

    def is_valid(self) -> bool:
        s = self.slopes()
        return bool(abs(self.values[0]) <= TOL and (s >= -TOL).all() and (s <= self.n + 1e-9).all())

    def to_json(self) -> dict:
        return {"n": self.n, "k": self.k, "xs": list(self.xs), "values": list(self.values)}


def branching_function(E: CellSet) -> BranchingFunction:
    """β(j/k) = log_{1/δ} |E|_{2^-j} for j = 0..k."""
    if not E:
        raise DomainError("branching function of an empty set")
    if E.k == 0:
        raise DomainError("branching function needs δ < 1")
    if not is_uniform(E):
        logger.warning("branching_function on a non-uniform set %r", E)
    k = E.k
    values = tuple(math.log2(covering_count(E, 2.0 ** -j)) / k for j in range(k + 1))
    xs = tuple(j / k for j in range(k + 1))
    return BranchingFunction(xs=xs, values=values, n=E.n, k=k)


@dataclass
class BranchingCluster:
    members: list
    representative: int
    branching: BranchingFunction
    eps: float
    count_bound: float
    subfamily: list = field(default_factory=list)


def cluster_branching(family: list) -> BranchingCluster:
    """Largest greedy ε-cluster of branching profiles, ε = 1/|ln δ|."""
    if not family:
        raise DomainError("cluster_branching on an empty family")
    n, k = family[0].n, family[0].k
    if any((E.n, E.k) != (n, k) for E in family):
        raise ParameterError("cluster_branching needs a common grid")
    profiles = [branching_function(E) for E in family]
    B = np.array([p.values for p in profiles])
    eps = 1.0 / (k * math.log(2.0))
    dist = np.abs(B[:, None, :] - B[None, :, :]).max(axis=2)
    within = dist <= eps + TOL
    sizes = within.sum(axis=1)
    rep = int(np.argmax(sizes))
    members = [int(i) for i in np.flatnonzero(within[rep])]
    count_bound = len(family) / (n * math.log(2.0) * k * math.log(2.0)) ** k
    logger.debug("cluster_branching: %d/%d members, eps=%.4g", len(members), len(family), eps)
    return BranchingCluster(
        members=members, representative=rep, branching=profiles[rep], eps=eps,
        count_bound=count_bound, subfamily=[family[i] for i in members],
    )


# ======================================================
# LIPSCHITZ PARTITION
# ======================================================
@dataclass(frozen=True)
class MultiScalePlan:
    eta: float
    A: tuple
    slopes: tuple

    @property
    def eta0(self) -> float:
        return self.eta ** (2.0 / self.eta)

    @property
    def H(self) -> int:
        return len(self.slopes)

    def blocks(self):
        return [(self.A[h], self.A[h + 1], self.slopes[h]) for h in range(self.H)]

    def to_json(self) -> dict:
        return {
            "eta": self.eta,
            "blocks": [{"A_lo": lo, "A_hi": hi, "slope": s} for lo, hi, s in self.blocks()],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MultiScalePlan":
        blocks = obj["blocks"]
        A = tuple([b["A_lo"] for b in blocks] + [blocks[-1]["A_hi"]])
        return cls(eta=float(obj["eta"]), A=A, slopes=tuple(b["slope"] for b in blocks))


def _lower_hull(x: np.ndarray, f: np.ndarray) -> list[int]:
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (f[i] - f[a]) - (f[b] - f[a]) * (x[i] - x[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def partition_conclusions(x, f, plan: MultiScalePlan) -> list[str]:
    """Violated partition inequalities (empty when all four hold on the sample grid)."""
    x, f = np.asarray(x, dtype=float), np.asarray(f, dtype=float)
    eta = plan.eta
    bad = []
    fx = lambda t: float(np.interp(t, x, f))
    for h, (lo, hi, s) in enumerate(plan.blocks()):
        if hi - lo < plan.eta0 / eta - TOL:
            bad.append(f"block {h}: length {hi - lo:.4g} < eta0/eta")
        inside = x[(x >= lo - TOL) & (x <= hi + TOL)]
        lower = fx(lo) + s * (inside - lo) - eta * (hi - lo)
        if (np.interp(inside, x, f) < lower - TOL).any():
            bad.append(f"block {h}: lower chord bound")
        if fx(hi) > fx(lo) + (s + 3 * eta) * (hi - lo) + TOL:
            bad.append(f"block {h}: upper endpoint bound")
    if plan.slopes[-1] < f[-1] - f[0] - eta - TOL:
        bad.append("final slope below f(1) - f(0) - eta")
    if any(b <= a for a, b in zip(plan.slopes, plan.slopes[1:])):
        bad.append("slopes not strictly increasing")
    return bad


def lipschitz_partition(beta, eta: float) -> MultiScalePlan:
    """
    Partition [0, 1] for a non-decreasing 1-Lipschitz profile.

    Blocks start at vertices of the greatest convex minorant and take the
    slope of the next hull segment; a block is extended to the farthest hull
    vertex still under the (s + 3η) upper bound.  It may close at 1 only when
    its slope is at least f(1) - f(0) - η.
    """
    if isinstance(beta, BranchingFunction):
        x, f = beta.as_arrays()
    else:
        x, f = (np.asarray(a, dtype=float) for a in beta)
    if not 0 < eta <= 0.1:
        raise ParameterError(f"eta={eta} outside (0, 1/10]")
    if len(x) < 2 or abs(x[0]) > TOL or abs(x[-1] - 1) > TOL or (np.diff(x) <= 0).any():
        raise ParameterError("profile must be sampled on 0 = x_0 < ... < x_N = 1")
    slopes = np.diff(f) / np.diff(x)
    if (slopes < -TOL).any() or (slopes > 1 + 1e-9).any():
        raise ParameterError("profile must be non-decreasing and 1-Lipschitz")

    hull = _lower_hull(x, f)
    seg = [(f[b] - f[a]) / (x[b] - x[a]) for a, b in zip(hull, hull[1:])]
    total = f[-1] - f[0]
    A, S = [x[hull[0]]], []
    i = 0
    while i < len(hull) - 1:
        s = seg[i]
        a = hull[i]
        end = i + 1
        for j in range(i + 1, len(hull)):
            b = hull[j]
            if f[b] > f[a] + (s + 3 * eta) * (x[b] - x[a]) + TOL:
                break
            if j == len(hull) - 1 and s < total - eta - TOL:
                break
            end = j
        A.append(x[hull[end]])
        S.append(float(s))
        i = end
    plan = MultiScalePlan(eta=float(eta), A=tuple(float(a) for a in A), slopes=tuple(S))
    bad = partition_conclusions(x, f, plan)
    if bad:
        raise InternalError(f"lipschitz_partition produced an invalid plan: {bad}")
    return plan


# ======================================================
# MULTI-SCALE DECOMPOSITION
# ======================================================
@dataclass
class MultiScaleReport:
    plan: MultiScalePlan
    items: list
    passed: bool
    precondition_ok: bool
    n: int

    @property
    def failures(self) -> list:
        return [it for it in self.items if not it["ok"]]


def _block_frostman(E: CellSet, a: int, b: int, s: float, cache: dict) -> float:
    """Worst standard Frostman constant over rescaled level-b blocks inside level-a cells."""
    coarse = E.coords >> (E.k - b)
    coarse = np.unique(coarse, axis=0)
    parent = coarse >> (b - a)
    local = coarse - (parent << (b - a))
    order = np.lexsort(parent.T[::-1])
    parent, local = parent[order], local[order]
    keys, starts = np.unique(parent, axis=0, return_index=True)
    bounds = list(starts) + [len(parent)]
    worst = 0.0
    for q in range(len(keys)):
        sub = CellSet.from_coords(E.n, b - a, local[bounds[q]:bounds[q + 1]])
        key = (sub.flat.tobytes(), b - a, s)
        if key not in cache:
            cache[key] = 1.0 if s <= TOL else frostman_deficiency(sub, s).C_min
        worst = max(worst, cache[key])
    return worst


def multiscale_decompose(family: list, eta: float, strict: bool = False) -> MultiScaleReport:
    """
    Multi-scale decomposition of a family sharing a branching profile.

    The plan comes from the pointwise upper envelope of the members'
    profiles, normalized by n; slopes are reported in [0, n].  Each member
    is checked for block lengths, covering-count growth per block, Frostman
    structure of every rescaled block and the final slope.
    """
    if not family:
        raise DomainError("multiscale_decompose on an empty family")
    n, k = family[0].n, family[0].k
    if any((E.n, E.k) != (n, k) for E in family):
        raise ParameterError("multiscale_decompose needs a common grid")
    profiles = [branching_function(E) for E in family]
    env = np.max(np.array([p.values for p in profiles]), axis=0)
    xs = np.asarray(profiles[0].xs)
    norm_plan = lipschitz_partition((xs, env / n), eta / n)
    plan = MultiScalePlan(eta=float(eta), A=norm_plan.A, slopes=tuple(n * s for s in norm_plan.slopes))
    precondition_ok = k * math.log(2.0) * plan.eta0 > 2
    if not precondition_ok:
        logger.warning("multiscale precondition |log δ| η0 > 2 fails (k=%d, eta=%g)", k, eta)

    items = []
    levels = [int(round(a * k)) for a in plan.A]
    cache: dict = {}
    for m, (E, prof) in enumerate(zip(family, profiles)):
        beta = np.asarray(prof.values)
        for h, (lo, hi, s) in enumerate(plan.blocks()):
            a, b = levels[h], levels[h + 1]
            min_length = plan.eta0 / plan.eta
            items.append(dict(member=m, block=h, item=1, value=hi - lo,
                              bound=min_length, ok=hi - lo >= min_length - TOL))
            growth = beta[b] - beta[a]
            bound2 = (s + 4 * eta) * (hi - lo)
            items.append(dict(member=m, block=h, item=2, value=growth, bound=bound2,
                              ok=growth <= bound2 + TOL))
            C = _block_frostman(E, a, b, s, cache)
            bound3 = 2.0 ** (4 * eta * (b - a)) * 4.0 ** n
            items.append(dict(member=m, block=h, item=3, value=C, bound=bound3, ok=C <= bound3))
        final = beta[-1] - eta
        items.append(dict(member=m, block=plan.H - 1, item=4, value=plan.slopes[-1], bound=final,
                          ok=plan.slopes[-1] >= final - TOL))
    passed = all(it["ok"] for it in items)
    report = MultiScaleReport(plan=plan, items=items, passed=passed,
                              precondition_ok=precondition_ok, n=n)
    if not passed:
        for it in report.failures:
            logger.info("multiscale failure: member %(member)d block %(block)d item %(item)d "
                        "value %(value).4g bound %(bound).4g", it)
        if strict:
            raise CertificateError("multi-scale certificate failed", report=report)
    return report
