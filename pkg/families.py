# families.py
"""
Generators for shaded line families: bushes, hairbrushes, random two-ends
families and well-spaced grids.

Each generator re-validates what its name promises with the validators of
``tube_geometry`` (containment, density, two-ends, separation) and records
the certified parameters in ``meta``.
"""
from __future__ import annotations

import itertools
import logging
import math

import numpy as np

from dyadic_core import CellSet, DyadicScale
from errors import CapacityError, CertificateError, ParameterError
from tube_geometry import (
    DiscreteLine,
    ShadedFamily,
    family_two_ends,
    is_delta_separated,
    is_directionally_separated,
    parallelism,
    rasterize_tube,
    two_ends_certificate,
)

logger = logging.getLogger(__name__)

B_MAX = 0.5
DEFAULT_EPS = (0.5, 0.25)
DEFAULT_C = 2.0


# ---- shared pieces ----
def _check(n: int, k: int, count: int, lam: float):
    if n not in (2, 3):
        raise ParameterError(f"generators work in n = 2, 3, got {n}")
    DyadicScale(k)
    if k < 2:
        raise ParameterError("generators need k >= 2")
    if count < 0:
        raise ParameterError(f"negative line count {count}")
    if not 0 < lam <= 1:
        raise ParameterError(f"density λ={lam} outside (0, 1]")


def direction_grid(n: int, k: int, exclude_zero: bool = False) -> np.ndarray:
    """δ-grid of directions b with |b|_∞ <= 1/2."""
    delta = 2.0 ** -k
    axis = np.arange(-(1 << (k - 1)), (1 << (k - 1)) + 1) * delta
    grid = np.array(list(itertools.product(axis, repeat=n - 1)), dtype=float)
    if exclude_zero:
        grid = grid[np.abs(grid).max(axis=1) > 0]
    return grid


def _spread(grid: np.ndarray, count: int) -> np.ndarray:
    """``count`` grid rows spread evenly along the (row-major) grid order."""
    if count > len(grid):
        raise CapacityError(f"{count} directions requested, only {len(grid)} at this scale")
    if count == 0:
        return grid[:0]
    idx = np.unique(np.round(np.linspace(0, len(grid) - 1, count)).astype(np.int64))
    return grid[idx]


def stratified_shading(tube: CellSet, lam: float, rng: np.random.Generator) -> CellSet:
    """ceil(λ|T|) cells of the tube chosen by systematic sampling in height."""
    if not tube:
        return tube
    order = np.lexsort((tube.flat, tube.coords[:, -1]))
    target = min(len(tube), math.ceil(lam * len(tube) - 1e-9))
    u = rng.random()
    picks = np.floor((np.arange(target) + u) * len(tube) / target).astype(np.int64)
    return CellSet(tube.n, tube.k, tube.flat[order[np.unique(picks)]])


def _shade(lines, n, k, lam, rng, force=None) -> list:
    shadings = []
    for line in lines:
        T = rasterize_tube(line, k)
        Y = stratified_shading(T, lam, rng)
        if force is not None and force in T:
            Y = Y | CellSet.from_coords(n, k, [force])
        shadings.append(Y)
    return shadings


def certify(F: ShadedFamily, lam: float, eps1: float | None, eps2: float | None,
            C: float = DEFAULT_C, directional: bool = True) -> ShadedFamily:
    """Re-validate a generated family and record its certificates in ``meta``."""
    F.validate()
    dens = F.density()
    problems = []
    if dens < lam * (1 - 1e-9):
        problems.append(f"density {dens:.4g} < λ={lam:.4g}")
    if eps1 is not None and eps2 is not None and not family_two_ends(F, eps1, eps2, C):
        worst = max(two_ends_certificate(Y, eps1, eps2, C).worst_fraction for Y in F.shadings)
        problems.append(f"two-ends fails: worst window fraction {worst:.4g}")
    sep = is_directionally_separated(F.lines, F.delta) if directional else is_delta_separated(F.lines, F.delta)
    if not sep:
        problems.append("lines not δ-separated")
    if problems:
        raise CertificateError("; ".join(problems), report={"meta": F.meta, "problems": problems})
    F.meta.update({"lambda": float(lam), "m": parallelism(F.lines, F.delta), "C": float(C),
                   "standard_box": all(line.in_standard_box() for line in F.lines)})
    if eps1 is not None and eps2 is not None:
        F.meta.update({"eps1": float(eps1), "eps2": float(eps2)})
    return F


# ======================================================
# GENERATORS
# ======================================================
def gen_bush(n: int, k: int, count: int, lam: float, seed: int = 0, eps1=DEFAULT_EPS[0],
             eps2=DEFAULT_EPS[1], C: float = DEFAULT_C, root=None, through_root: bool = False) -> ShadedFamily:
    """Lines through one root point with evenly spread grid directions."""
    _check(n, k, count, lam)
    rng = np.random.default_rng([int(seed), 0])
    root = np.full(n, 0.5) if root is None else np.asarray(root, dtype=float)
    B = _spread(direction_grid(n, k), count)
    lines = [DiscreteLine(n, tuple(root[:-1] - root[-1] * b), tuple(b)) for b in B]
    force = tuple(int(c) for c in np.minimum(np.floor(root * (1 << k)), (1 << k) - 1)) if through_root else None
    F = ShadedFamily(n, k, lines, _shade(lines, n, k, lam, rng, force),
                     {"generator": "bush", "seed": int(seed), "root": [float(v) for v in root]})
    return certify(F, lam, eps1, eps2, C)


def gen_hairbrush(k: int, count: int, lam: float, seed: int = 0, eps1=DEFAULT_EPS[0],
                  eps2=DEFAULT_EPS[1], C: float = DEFAULT_C, planes: int | None = None) -> ShadedFamily:
    """
    A vertical stem through (1/2, 1/2) with bristles in ``planes`` planes
    containing it; every bristle meets the stem at a height in [1/4, 3/4].
    """
    n = 3
    _check(n, k, count, lam)
    rng = np.random.default_rng([int(seed), 0])
    planes = planes or max(1, int(round(math.sqrt(count))))
    grid = direction_grid(n, k, exclude_zero=True)
    angle = np.mod(np.arctan2(grid[:, 1], grid[:, 0]), np.pi)
    # grid directions nearest to each bristle plane
    targets = np.arange(planes) * np.pi / planes
    gap = np.abs(angle[:, None] - targets[None, :])
    gap = np.minimum(gap, np.pi - gap)
    owner, dist = gap.argmin(axis=1), gap.min(axis=1)
    pool = np.flatnonzero(dist <= np.pi / (4 * planes))
    if count > len(pool):
        raise CapacityError(f"{count} bristles requested, {len(pool)} available at k={k}")
    per_plane = [rng.permutation(pool[owner[pool] == p]) for p in range(planes)]
    chosen, depth = [], 0
    # round-robin over the planes
    while len(chosen) < count:
        for members in per_plane:
            if depth < len(members) and len(chosen) < count:
                chosen.append(members[depth])
        depth += 1
    B = grid[np.sort(np.asarray(chosen, dtype=np.int64))]
    heights = rng.uniform(0.25, 0.75, size=len(B))
    lines = [DiscreteLine(3, tuple(0.5 - h * b), tuple(b)) for b, h in zip(B, heights)]
    F = ShadedFamily(n, k, lines, _shade(lines, n, k, lam, rng),
                     {"generator": "hairbrush", "seed": int(seed), "planes": planes})
    return certify(F, lam, eps1, eps2, C)


def gen_random_two_ends(n: int, k: int, count: int, lam: float, seed: int = 0, eps1=DEFAULT_EPS[0],
                        eps2=DEFAULT_EPS[1], C: float = DEFAULT_C) -> ShadedFamily:
    """Random distinct grid directions, positions keeping each line inside the unit cube."""
    _check(n, k, count, lam)
    if count == 0:
        return ShadedFamily(n, k, [], [], {"generator": "random_two_ends", "seed": int(seed),
                                           "lambda": float(lam), "m": 0, "C": float(C),
                                           "eps1": float(eps1), "eps2": float(eps2)})
    rng = np.random.default_rng([int(seed), 0])
    grid = direction_grid(n, k)
    if count > len(grid):
        raise CapacityError(f"{count} directions requested, only {len(grid)} at k={k}")
    B = grid[np.sort(rng.choice(len(grid), size=count, replace=False))]
    lo, hi = np.maximum(0.0, -B), np.minimum(1.0, 1.0 - B)
    A = lo + rng.random(B.shape) * (hi - lo)
    lines = [DiscreteLine(n, tuple(a), tuple(b)) for a, b in zip(A, B)]
    F = ShadedFamily(n, k, lines, _shade(lines, n, k, lam, rng),
                     {"generator": "random_two_ends", "seed": int(seed)})
    return certify(F, lam, eps1, eps2, C)


def gen_well_spaced(n: int, k: int, count: int, lam: float = 1.0, seed: int = 0) -> ShadedFamily:
    """
    One tube per σ-cell of the parameter box a ∈ [0,1)^(n-1), b ∈ [-1/2,1/2)^(n-1),
    σ = 1/W with W^(2(n-1)) = count.

    Inside its cell each tube sits at a seeded δ-grid point, which keeps the
    family clear of lattice concurrences; ``well_spaced_census`` checks the
    spacing.
    """
    _check(n, k, count, lam)
    d = n - 1
    W = round(count ** (1.0 / (2 * d)))
    if W < 1 or W ** (2 * d) != count:
        raise ParameterError(f"count={count} is not a perfect {2 * d}-th power")
    side = 1 << k
    if W > side:
        raise CapacityError(f"grid spacing 1/{W} below δ=2^-{k}")
    rng = np.random.default_rng([int(seed), 0])
    # δ-grid indices [lo, hi) covered by each of the W cells
    edges = -((-np.arange(W + 1) * side) // W)
    cells = np.array(list(itertools.product(range(W), repeat=2 * d)), dtype=np.int64)
    lo, hi = edges[cells], edges[cells + 1]
    idx = lo + np.floor(rng.random(cells.shape) * (hi - lo)).astype(np.int64)
    lines = [DiscreteLine(n, tuple(row[:d] / side), tuple(row[d:] / side - 0.5)) for row in idx]
    F = ShadedFamily(n, k, lines, _shade(lines, n, k, lam, rng),
                     {"generator": "well_spaced", "seed": int(seed), "W": W, "sigma": 1.0 / W})
    return certify(F, lam, None, None, directional=False)


def well_spaced_census(lines, sigma: float) -> tuple[int, int]:
    """(min, max) number of lines per occupied σ-cell of the box [0,1)^(n-1) x [-1/2,1/2)^(n-1)."""
    if not lines:
        return 0, 0
    P = np.array([tuple(l.a) + tuple(np.asarray(l.b) + 0.5) for l in lines], dtype=float)
    bins = np.floor(P / sigma + 1e-9).astype(np.int64)
    _, counts = np.unique(bins, axis=0, return_counts=True)
    return int(counts.min()), int(counts.max())


def project_planar(F: ShadedFamily, lam: float, seed: int = 0, eps1=DEFAULT_EPS[0],
                   eps2=DEFAULT_EPS[1], C: float = DEFAULT_C) -> ShadedFamily:
    """Shadow (x_1, x_n) of a spatial family, reshaded; of the lines sharing a shadow direction the first is kept."""
    if F.n != 3:
        raise ParameterError(f"project_planar needs a spatial family, got n={F.n}")
    seen, lines = set(), []
    for line in F.lines:
        b = float(line.b[0])
        if b not in seen:
            seen.add(b)
            lines.append(DiscreteLine(2, (float(line.a[0]),), (b,)))
    rng = np.random.default_rng([int(seed), 1])
    P = ShadedFamily(2, F.k, lines, _shade(lines, 2, F.k, lam, rng),
                     {"generator": f"{F.meta.get('generator', 'family')}_planar", "seed": int(seed)})
    return certify(P, lam, eps1, eps2, C)


GENERATORS = {
    "bush": gen_bush,
    "hairbrush": lambda n, k, count, lam, seed=0, **kw: gen_hairbrush(k, count, lam, seed, **kw),
    "hairbrush_planar": lambda n, k, count, lam, seed=0, **kw: project_planar(
        gen_hairbrush(k, count, 1.0, seed), lam, seed, **kw),
    "random_two_ends": gen_random_two_ends,
    "well_spaced": lambda n, k, count, lam, seed=0, **kw: gen_well_spaced(n, k, count, lam, seed),
}
