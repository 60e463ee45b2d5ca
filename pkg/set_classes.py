# set_classes.py
"""
Non-concentration certificates for discretized sets.

Three flavours are scanned on the dyadic lattice:

* ``standard``  : |E ∩ B(x, r)|_δ <= C r^s |E|_δ for r in [δ, 1]
* ``windowed``  : the same inequality restricted to r in [Δ, 1]
* ``katz_tao``  : #(E ∩ B(x, r)) <= C (r/δ)^s for r in [δ, 1]

Balls are open sup-norm balls centred at cell centres; a cell is counted when
it lies inside the ball.  On the dyadic ladder a ball of radius ``2**-j``
around a centre therefore holds the cells at index distance ``< 2**(k-j)``.
The continuous supremum over (x, r) exceeds the scanned one by at most
``2**s * 2**n``; that factor is carried in every certificate.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from dyadic_core import CellSet, DyadicScale, as_scale, covering_set
from errors import CapacityError, DomainError, ParameterError, ProbabilisticFailure

logger = logging.getLogger(__name__)

VARIANTS = ("standard", "katz_tao", "windowed")
DENSE_LIMIT = 1 << 24
SPARSIFY_RETRIES = 16


# ======================================================
# CERTIFICATES
# ======================================================
@dataclass(frozen=True)
class FrostmanCertificate:
    s: float
    C_min: float
    witness_x: tuple
    witness_r: float
    variant: str
    window: float | None = None
    scan_slack: float = 1.0

    def to_json(self) -> dict:
        out = {
            "s": self.s,
            "variant": self.variant,
            "C_min": self.C_min,
            "witness": {"x": list(self.witness_x), "r": self.witness_r},
        }
        if self.window is not None:
            out["window"] = self.window
        return out

    def holds(self, C: float) -> bool:
        return self.C_min <= C


@dataclass(frozen=True)
class RefinementVerdict:
    lhs: float
    rhs: float
    holds: bool
    certificate_E: FrostmanCertificate | None = None
    certificate_E2: FrostmanCertificate | None = None


@dataclass
class SparsifyResult:
    points: np.ndarray
    attempts: int
    size_ratio: float
    C_prime: float
    C_input: float
    checks: dict = field(default_factory=dict)


# ======================================================
# BALL COUNTS
# ======================================================
def _dense(E: CellSet) -> np.ndarray:
    total = E.side ** E.n
    if total > DENSE_LIMIT:
        raise CapacityError(f"dense grid of {total} cells exceeds {DENSE_LIMIT}")
    grid = np.zeros((E.side,) * E.n, dtype=np.int64)
    grid[tuple(E.coords.T)] = 1
    return grid


def _prefix(grid: np.ndarray) -> np.ndarray:
    S = np.pad(grid, [(1, 0)] * grid.ndim)
    for axis in range(grid.ndim):
        S = np.cumsum(S, axis=axis)
    return S


def box_counts(E: CellSet, half_width: int, at=None, prefix=None) -> np.ndarray:
    """#E within sup-distance ``half_width`` (index units) of each cell in ``at`` (default E)."""
    centres = E.coords if at is None else np.asarray(at, dtype=np.int64).reshape(-1, E.n)
    S = _prefix(_dense(E)) if prefix is None else prefix
    lo = np.clip(centres - half_width, 0, E.side)
    hi = np.clip(centres + half_width + 1, 0, E.side)
    total = np.zeros(len(centres), dtype=np.int64)
    for corner in itertools.product((0, 1), repeat=E.n):
        idx = tuple(np.where(bit, hi[:, d], lo[:, d]) for d, bit in enumerate(corner))
        sign = -1 if (E.n - sum(corner)) % 2 else 1
        total += sign * S[idx]
    return total


def _check_s(s: float, n: int):
    if not 0 < s <= n:
        raise ParameterError(f"exponent s={s} outside (0, {n}]")


# ======================================================
# FROSTMAN SCAN
# ======================================================
def frostman_deficiency(E: CellSet, s: float, variant: str = "standard", window=None,
                        normalization: int | None = None) -> FrostmanCertificate:
    """
    Least C for which E satisfies the chosen non-concentration condition.

    Parameters
    ----------
    E : CellSet
        Nonempty set at scale δ.
    s : float
        Exponent in (0, n].
    variant : {"standard", "katz_tao", "windowed"}
    window : dyadic float or DyadicScale, optional
        Δ for the windowed variant.
    normalization : int, optional
        Replace |E|_δ in the standard/windowed ratio by a fixed count.

    Returns
    -------
    FrostmanCertificate
        C_min with the (centre, radius) witness attaining it.
    """
    if not E:
        raise DomainError("Frostman deficiency of an empty set")
    if variant not in VARIANTS:
        raise ParameterError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    _check_s(s, E.n)
    j_max = E.k
    window_value = None
    if variant == "windowed":
        if window is None:
            raise ParameterError("windowed variant needs a window Δ")
        w = as_scale(window)
        if w.k > E.k:
            raise ParameterError(f"window 2^-{w.k} finer than δ=2^-{E.k}")
        j_max, window_value = w.k, w.delta
    norm = len(E) if normalization is None else int(normalization)
    if norm <= 0:
        raise ParameterError("normalization must be positive")

    prefix = _prefix(_dense(E))
    best, best_i, best_r = -1.0, 0, 1.0
    for j in range(j_max + 1):
        m = 1 << (E.k - j)
        r = 2.0 ** -j
        counts = box_counts(E, m - 1, prefix=prefix)
        if variant == "katz_tao":
            vals = counts / float(m) ** s
        else:
            vals = counts / (r ** s * norm)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best, best_i, best_r = float(vals[i]), i, r
    x = tuple(float(c) for c in (E.coords[best_i] + 0.5) / E.side)
    cert = FrostmanCertificate(
        s=float(s), C_min=best, witness_x=x, witness_r=best_r, variant=variant,
        window=window_value, scan_slack=2.0 ** s * 2.0 ** E.n,
    )
    logger.debug("frostman %s s=%.3g on %r -> C=%.4g at r=%g", variant, s, E, best, best_r)
    return cert


def refinement_preserves_frostman(E: CellSet, E2: CellSet, s: float, variant: str = "standard",
                                  window=None) -> RefinementVerdict:
    """Check C(E2) <= C(E) #E/#E2 for a refinement E2 of E."""
    if not E2.issubset(E):
        raise ParameterError("refinement_preserves_frostman needs E2 ⊆ E")
    if not E2:
        return RefinementVerdict(lhs=0.0, rhs=math.inf, holds=True)
    cE = frostman_deficiency(E, s, variant, window)
    cE2 = frostman_deficiency(E2, s, variant, window)
    rhs = cE.C_min * len(E) / len(E2)
    lhs = cE2.C_min
    return RefinementVerdict(lhs=lhs, rhs=rhs, holds=lhs <= rhs * (1 + 1e-12),
                             certificate_E=cE, certificate_E2=cE2)


def coarse_view(E: CellSet, window) -> CellSet:
    """E re-expressed at resolution Δ."""
    return covering_set(E, window)


def tube_family_certificate(lines, k: int, s: float, variant: str = "standard") -> FrostmanCertificate:
    """Certify a planar line family through its dual point set {(a, b)}."""
    pts = []
    for line in lines:
        if line.n != 2:
            raise ParameterError("dual certification is planar only")
        pts.append((float(line.a[0]), float(line.b[0]) + 0.5))
    if not pts:
        raise DomainError("empty line family")
    dual = CellSet.from_points(2, k, np.clip(np.asarray(pts), 0.0, 1.0))
    return frostman_deficiency(dual, s, variant)


# ======================================================
# KATZ-TAO SPARSIFICATION
# ======================================================
def katz_tao_constant(points, scale: float, s: float) -> float:
    """max over x in E, dyadic r in [scale, 1] of #(E ∩ B(x, r)) / (r/scale)^s (open sup-norm balls)."""
    pts = np.asarray(points, dtype=float)
    if not len(pts):
        return 0.0
    D = cdist(pts, pts, metric="chebyshev")
    best = 0.0
    r = 1.0
    while r >= scale * (1 - 1e-12):
        counts = (D < r).sum(axis=1)
        best = max(best, float(counts.max()) / (r / scale) ** s)
        r /= 2
    return best


def _greedy_separated(points: np.ndarray, sep: float) -> np.ndarray:
    chosen = []
    for p in points:
        if not chosen or np.max(np.abs(np.asarray(chosen) - p), axis=1).min() >= sep:
            chosen.append(p)
    return np.asarray(chosen, dtype=float).reshape(-1, points.shape[1] if points.ndim == 2 else 1)


def sparsify_katz_tao(E, delta: float, rho: float, s: float, C: float, seed: int,
                      log_factor: float = 1.0, kappa: float = 0.5, C_prime_max: float = 8.0,
                      max_retries: int = SPARSIFY_RETRIES) -> SparsifyResult:
    """
    Random sparsification of a Katz-Tao (δ, s, C)-set to a Katz-Tao (ρ, s)-set.

    Sample each point with probability (δ/ρ)^s / (log_factor C), keep a greedy
    maximal ρ·log_factor²-separated subset, then check

    (a) ρ^s #E' >= κ δ^s #E / (log_factor C)
    (b) the Katz-Tao (ρ, s) constant of E' is at most ``C_prime_max``.

    ``log_factor`` stands for |log δ| on a continuous ladder; the dyadic
    ladder used throughout the lab sets it to 1.
    """
    pts = E.centers() if isinstance(E, CellSet) else np.asarray(E, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if not delta < rho:
        raise ParameterError(f"sparsification needs δ < ρ, got δ={delta}, ρ={rho}")
    if C <= 0 or log_factor < 1:
        raise ParameterError("C must be positive and log_factor >= 1")
    _check_s(s, pts.shape[1])

    C_input = katz_tao_constant(pts, delta, s)
    if C_input > C * (1 + 1e-12):
        logger.warning("input is not Katz-Tao (δ=%g, s=%g, C=%g): measured C=%.3g", delta, s, C, C_input)

    p = min(1.0, (delta / rho) ** s / (log_factor * C))
    # required count is an integer; tiny inputs pass vacuously
    required = math.floor(kappa * (delta / rho) ** s * len(pts) / (log_factor * C) + 1e-12)
    sep = rho * log_factor ** 2
    last = None
    for attempt in range(max_retries):
        rng = np.random.default_rng([int(seed), attempt])
        sample = pts[rng.random(len(pts)) < p]
        chosen = _greedy_separated(sample, sep) if len(sample) else sample
        size_ok = len(chosen) >= required
        C_prime = katz_tao_constant(chosen, rho, s)
        kt_ok = C_prime <= C_prime_max
        last = dict(size=len(chosen), required=required, C_prime=C_prime)
        if size_ok and kt_ok:
            return SparsifyResult(
                points=chosen, attempts=attempt + 1,
                size_ratio=rho ** s * len(chosen) / (delta ** s * len(pts)) if len(pts) else 1.0,
                C_prime=C_prime, C_input=C_input,
                checks={"size": size_ok, "katz_tao": kt_ok, "p": p},
            )
        logger.debug("sparsify attempt %d rejected: %s", attempt, last)
    raise ProbabilisticFailure(f"sparsification failed after {max_retries} attempts: {last}",
                               attempts=max_retries)
