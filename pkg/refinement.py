# refinement.py
"""
Pigeonholing and refinement subroutines: dyadic pigeonholing, rich-point
refinement, the broad-narrow cap split and high-multiplicity excision.

Every pigeonhole records its loss in a ``SlackLedger`` so the ≈ / ⪆ slack of
a chain of refinements is an explicit product of factors.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from dyadic_core import CellSet, SlackLedger, dyadic_bands, polylog_slack
from errors import DomainError, InternalError, PreconditionError
from exponents import mu_thresholds
from tube_geometry import ShadedFamily, family_two_ends

logger = logging.getLogger(__name__)

REQUIRED_META = ("lambda", "eps1", "eps2", "m")


# ======================================================
# DYADIC PIGEONHOLE
# ======================================================
@dataclass
class PigeonholeResult:
    lo: float
    hi: float
    indices: np.ndarray
    items: list
    total: float
    grand_total: float
    n_bands: int

    @property
    def band(self) -> tuple:
        return (self.lo, self.hi)

    @property
    def loss(self) -> float:
        return self.grand_total / self.total if self.total else math.inf


def dyadic_pigeonhole(items, weight=None, key=None, ledger: SlackLedger | None = None,
                      op: str = "dyadic_pigeonhole") -> PigeonholeResult:
    """
    Keep the dyadic band [w, 2w) of largest total weight.

    ``weight`` is a callable or an array aligned with ``items`` (default: the
    items themselves).  ``key`` optionally bands on a different quantity
    while totals still use ``weight``.  Ties go to the lowest band.
    """
    items = list(items)
    if not items:
        raise DomainError("dyadic pigeonhole over an empty list")
    if weight is None:
        w = np.asarray(items, dtype=float)
    elif callable(weight):
        w = np.asarray([weight(x) for x in items], dtype=float)
    else:
        w = np.asarray(weight, dtype=float)
    if key is None:
        kv = w
    elif callable(key):
        kv = np.asarray([key(x) for x in items], dtype=float)
    else:
        kv = np.asarray(key, dtype=float)
    bands = dyadic_bands(kv)
    n_bands = int(bands.max()) + 1
    totals = np.bincount(bands, weights=w, minlength=n_bands)
    b = int(np.argmax(totals))
    idx = np.flatnonzero(bands == b)
    lo = float(kv.min()) * 2.0 ** b
    res = PigeonholeResult(lo=lo, hi=2 * lo, indices=idx, items=[items[i] for i in idx],
                           total=float(totals[b]), grand_total=float(w.sum()), n_bands=n_bands)
    if ledger is not None:
        ledger.add(op, res.loss)
    return res


# ======================================================
# RICH POINTS
# ======================================================
@dataclass
class RichnessProfile:
    mu: int
    E_mu: CellSet
    cells: np.ndarray
    counts: np.ndarray
    bands: tuple = ()
    checks: dict = field(default_factory=dict)

    def multiplicity_of(self, cell) -> int:
        flat = np.ravel_multi_index(tuple(np.asarray(cell, dtype=np.int64)), (self.E_mu.side,) * self.E_mu.n)
        i = np.searchsorted(self.cells, flat)
        return int(self.counts[i]) if i < len(self.cells) and self.cells[i] == flat else 0


def rich_point_refinement(F: ShadedFamily, ledger: SlackLedger | None = None):
    """
    Pigeonhole a shaded family onto the points of one multiplicity band.

    1. band E_L by #L(x), weighting by #L(x), giving μ and E^μ;
    2. Y'(ℓ) = E^μ ∩ Y(ℓ);
    3. band the lines by |Y'(ℓ)|/|Y(ℓ)|, weighting by |Y'(ℓ)|, giving L'.

    Returns ``(RichnessProfile, ShadedFamily on L', SlackLedger)``; the
    profile's ``checks`` hold the four refinement properties, each asserted.
    """
    ledger = SlackLedger() if ledger is None else ledger
    if not len(F) or not any(F.shadings):
        raise DomainError("rich-point refinement needs a nonempty shading")
    cells, counts = F.multiplicity()
    ph_cells = dyadic_pigeonhole(counts, weight=counts, ledger=ledger, op="rich_point:multiplicity")
    mu = int(round(ph_cells.lo))
    E_mu = CellSet(F.n, F.k, cells[ph_cells.indices])

    Y1 = [Y & E_mu for Y in F.shadings]
    live = [i for i, Y in enumerate(Y1) if Y]
    ratios = [len(Y1[i]) / len(F.shadings[i]) for i in live]
    ph_lines = dyadic_pigeonhole(live, weight=[len(Y1[i]) for i in live], key=ratios,
                                 ledger=ledger, op="rich_point:lines")
    keep = [int(i) for i in ph_lines.items]
    refined = ShadedFamily(F.n, F.k, [F.lines[i] for i in keep], [Y1[i] for i in keep], dict(F.meta))

    # multiplicity of the full refined shading Y' over all of L
    full = F.with_shadings(Y1)
    c1, m1 = full.multiplicity()
    mass1 = int(sum(len(Y) for Y in Y1))
    mass0 = int(counts.sum())
    checks = {
        "min_line_ratio": float(min(len(Y1[i]) / len(F.shadings[i]) for i in keep)),
        "line_band": (ph_lines.lo, ph_lines.hi),
        "multiplicity_band": bool(len(m1) == 0 or (m1.min() >= mu and m1.max() < 2 * mu)),
        "shading_is_rich_set": all(Y1[i] == (E_mu & F.shadings[i]) for i in keep),
        "mu_ratio": mass1 / (mu * len(c1)) if len(c1) else 1.0,
        "mass_kept": Fraction(sum(len(Y1[i]) for i in keep), mass0),
        "mass_bound": Fraction(1, ph_cells.n_bands * ph_lines.n_bands),
    }
    checks["mu_ratio_ok"] = 1.0 <= checks["mu_ratio"] < 2.0
    checks["lines_ok"] = sum(len(Y1[i]) for i in keep) * ph_lines.n_bands >= mass1
    checks["mass_ok"] = checks["mass_kept"] >= checks["mass_bound"]
    for name in ("multiplicity_band", "shading_is_rich_set", "mu_ratio_ok", "lines_ok", "mass_ok"):
        if not checks[name]:
            raise InternalError(f"rich-point refinement violated {name}: {checks}")
    logger.debug("rich points: mu=%d |E_mu|=%d lines %d -> %d", mu, len(E_mu), len(F), len(keep))
    profile = RichnessProfile(mu=mu, E_mu=E_mu, cells=cells, counts=counts,
                              bands=(ph_cells.n_bands, ph_lines.n_bands), checks=checks)
    return profile, refined, ledger


# ======================================================
# BROAD-NARROW
# ======================================================
@dataclass
class BroadNarrow:
    x: tuple
    rho: float
    L_prime: list
    L1: list
    L2: list
    c: float
    A: int
    degenerate: bool
    levels: int
    ledger: SlackLedger = field(default_factory=SlackLedger)

    def to_json(self) -> dict:
        return {"x": list(self.x), "rho": self.rho, "L_prime": self.L_prime, "L1": self.L1,
                "L2": self.L2, "c": self.c, "A": self.A, "degenerate": self.degenerate,
                "levels": self.levels, "slack": self.ledger.to_list()}


def lines_through(F: ShadedFamily, x) -> list:
    """L(x): indices of lines whose shading contains the cell x."""
    return [i for i, Y in enumerate(F.shadings) if x in Y]


def _angles(dirs_a: np.ndarray, dirs_b: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(np.abs(dirs_a @ dirs_b.T), 0.0, 1.0))


def broad_narrow(F: ShadedFamily, x, ledger: SlackLedger | None = None) -> BroadNarrow:
    """
    Cap-splitting at the cell x on a base-2 ladder of direction caps.

    Directions are read in b-space ([-1, 1]^(n-1)).  A cap of side w is cut
    into 4^(n-1) quarter cells; the algorithm descends into the heaviest
    block of 2^(n-1) adjacent quarters (a cap of side w/2) while that block
    holds more than half the lines and w/2 >= 10δ.  When it stops, L1 and L2
    are the two non-adjacent quarters whose smaller count is largest.

    ρ is the largest angle inside L'(x), clamped to [10δ, 1]; c is the
    smallest L1-L2 angle divided by ρ.
    """
    ledger = SlackLedger() if ledger is None else ledger
    x = tuple(int(v) for v in np.asarray(x).reshape(-1))
    d = F.n - 1
    A = 10 * 2 ** F.n
    floor_rho = min(1.0, 10 * F.delta)
    Lx = lines_through(F, x)
    if len(Lx) < 2:
        return BroadNarrow(x, floor_rho, Lx, list(Lx), [], 0.0, A, True, 0, ledger)

    B = np.array([F.lines[i].b for i in Lx], dtype=float).reshape(len(Lx), d)
    current = np.arange(len(Lx))
    centre, w, levels = np.zeros(d), 2.0, 0
    starts = list(itertools.product(range(3), repeat=d))
    while True:
        q_idx = np.clip(np.floor((B[current] - (centre - w / 2)) / (w / 4)).astype(np.int64), 0, 3)
        best, best_start = -1, None
        for s in starts:
            s = np.asarray(s)
            inside = np.all((q_idx >= s) & (q_idx <= s + 1), axis=1)
            cnt = int(inside.sum())
            if cnt > best:
                best, best_start, best_mask = cnt, s, inside
        if best * 2 > len(current) and w / 2 >= 10 * F.delta:
            ledger.add("broad_narrow:descend", len(current) / best)
            centre = centre - w / 2 + (best_start + 1) * (w / 4)
            current = current[best_mask]
            w /= 2
            levels += 1
            continue
        break

    Lp = [Lx[i] for i in current]
    dirs = np.array([F.lines[i].direction() for i in Lp])
    rho = float(np.clip(_angles(dirs, dirs).max(), floor_rho, 1.0))

    cells, inv = np.unique(q_idx, axis=0, return_inverse=True)
    inv = np.asarray(inv).reshape(-1)
    sizes = np.bincount(inv, minlength=len(cells))
    best_pair, best_min = None, 0
    for a, b in itertools.combinations(range(len(cells)), 2):
        if np.abs(cells[a] - cells[b]).max() >= 2 and min(sizes[a], sizes[b]) > best_min:
            best_pair, best_min = (a, b), int(min(sizes[a], sizes[b]))
    if best_pair is None:
        logger.debug("broad_narrow at %s: narrow to the floor, degenerate", x)
        return BroadNarrow(x, rho, Lp, list(Lp), [], 0.0, A, True, levels, ledger)

    L1 = [Lp[i] for i in np.flatnonzero(inv == best_pair[0])]
    L2 = [Lp[i] for i in np.flatnonzero(inv == best_pair[1])]
    ang = _angles(np.array([F.lines[i].direction() for i in L1]),
                  np.array([F.lines[i].direction() for i in L2]))
    c = float(ang.min()) / rho
    ledger.add("broad_narrow:pair", len(Lp) / min(len(L1), len(L2)))
    if set(L1) & set(L2):
        raise InternalError("broad_narrow produced overlapping line sets")
    return BroadNarrow(x, rho, Lp, L1, L2, c, A, False, levels, ledger)


# ======================================================
# HIGH-MULTIPLICITY EXCISION
# ======================================================
@dataclass(frozen=True)
class Excision:
    E_mu: CellSet
    removed_fraction: Fraction
    threshold: float
    max_kept: int


def _require_meta(F: ShadedFamily):
    missing = [key for key in REQUIRED_META if key not in F.meta]
    if missing:
        raise PreconditionError(f"family lacks certificates: {', '.join(missing)}")


def excise_high_multiplicity(F: ShadedFamily, mu: float, slack: float = 1.0) -> Excision:
    """E_mu = {x in E_L : #L(x) <= μ·slack} and |E_L \\ E_mu| / |E_L|."""
    _require_meta(F)
    cells, counts = F.multiplicity()
    threshold = float(mu) * float(slack)
    keep = counts <= threshold
    E_mu = CellSet(F.n, F.k, cells[keep])
    removed = Fraction(int((~keep).sum()), len(cells)) if len(cells) else Fraction(0)
    max_kept = int(counts[keep].max()) if keep.any() else 0
    logger.debug("excision at μ=%.4g: removed %s of %d cells", threshold, removed, len(cells))
    return Excision(E_mu, removed, threshold, max_kept)


@dataclass(frozen=True)
class ExcisionCheck:
    excision: Excision
    rule: str
    mu: float
    bound: float
    holds: bool
    two_ends: bool


def excise_at_threshold(F: ShadedFamily, rule: str | None = None, polylog_c: float = 0.0) -> ExcisionCheck:
    """
    Excise at the μ given by the family's (n, m, λ, ε1) and compare the
    removed fraction with δ^ε1.  λ is read as δ^lam_exp from the density
    recorded in the family meta.
    """
    _require_meta(F)
    lam = float(F.meta["lambda"])
    if not 0 < lam <= 1:
        raise PreconditionError(f"density λ={lam} outside (0, 1]")
    lam_exp = round(math.log2(1 / lam) / F.k, 6)
    th = mu_thresholds(F.n, int(F.meta["m"]), lam_exp, F.meta["eps1"])
    rule = rule or th.selected
    mu = th.mu(F.k, rule)
    ex = excise_high_multiplicity(F, mu, polylog_slack(F.k, polylog_c))
    bound = F.delta ** float(F.meta["eps1"])
    two_ends = family_two_ends(F, float(F.meta["eps1"]), float(F.meta["eps2"]), float(F.meta.get("C", 2.0)))
    if not two_ends:
        logger.warning("excision check on a family that is not two-ends at its recorded constants")
    return ExcisionCheck(ex, rule, mu, bound, float(ex.removed_fraction) <= bound, two_ends)
