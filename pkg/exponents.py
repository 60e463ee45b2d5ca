# exponents.py
"""
Exact-rational exponent calculus.

Every value here is a ``fractions.Fraction``.  Floats passed in are read
through their shortest decimal representation, so ``3.2`` means ``16/5``.
Powers of δ are written by their exponent: ``λ = δ**lam_exp`` with
``lam_exp >= 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import pandas as pd

from errors import DomainError, ParameterError

logger = logging.getLogger(__name__)

THEOREM = "theorem"
CONJECTURE = "conjecture"
MEASUREMENT = "measurement"

ASYMPTOTIC_COEFFICIENT = Fraction(28, 11)


def q(x) -> Fraction:
    """Coerce int, str, Fraction or float (via its repr) to a Fraction."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise ParameterError("booleans are not exponents")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    try:
        return Fraction(str(x))
    except (ValueError, ZeroDivisionError) as exc:
        raise ParameterError(f"not a rational: {x!r}") from exc


# ======================================================
# EXPRESSIONS
# ======================================================
@dataclass(frozen=True)
class ExponentExpr:
    """A min over affine branches, evaluated exactly, with its argmin."""

    value: Fraction
    branch: str
    branches: dict = field(default_factory=dict)
    grade: str = THEOREM
    ref: str = ""

    @property
    def ties(self) -> tuple:
        return tuple(name for name, v in self.branches.items() if v == self.value)

    def to_json(self) -> dict:
        return {
            "value": str(self.value),
            "branch": self.branch,
            "branches": {k: str(v) for k, v in self.branches.items()},
            "grade": self.grade,
            "ref": self.ref,
        }


def _min_expr(branches: dict, grade: str, ref: str) -> ExponentExpr:
    # first listed branch wins ties
    name = min(branches, key=lambda b: branches[b])
    return ExponentExpr(value=branches[name], branch=name, branches=dict(branches), grade=grade, ref=ref)


# ======================================================
# RESTRICTION EXPONENT p(n)
# ======================================================
class PValue(NamedTuple):
    p: Fraction
    residual: Fraction
    branch: str


@dataclass(frozen=True)
class Estimate:
    """An L^p bound of the shape R^{R_exp} λ^{lam_exp} on ‖Ef‖_p^p, as exponents."""

    name: str
    p: Fraction
    lam_exp: Fraction
    R_exp: Fraction


def _check_n(n: int, least: int = 3):
    if isinstance(n, bool) or int(n) != n:
        raise ParameterError(f"dimension must be an integer, got {n!r}")
    if n < least:
        raise DomainError(f"n={n} below {least}; the planar exponent is p=4 (planar_p)")


def planar_p() -> Fraction:
    return Fraction(4)


def lpn(n: int) -> Fraction:
    """The bilinear-range exponent 2(n+1)/(n-1)."""
    return Fraction(2 * (n + 1), n - 1)


def interpolation_inputs(n: int) -> dict:
    """The estimates combined by the case split (and by the n=3 interpolation)."""
    _check_n(n)
    out = {"l2": Estimate("l2", Fraction(2), Fraction(1), Fraction(1))}
    if n == 3:
        out["l4"] = Estimate("l4", Fraction(4), Fraction(-3, 4), Fraction(-3, 4))
        return out
    pn = lpn(n)
    out["lpn_high"] = Estimate("lpn_high", pn, Fraction(-2 * (2 * n + 7), 7 * (n - 1)), Fraction(-4, 7))
    out["lpn_low"] = Estimate("lpn_low", pn, Fraction(0), Fraction(-1, 2))
    return out


def p_case_split(n: int) -> list:
    """
    Both density cases of the interpolation that yields p(n).

    Returns one dict per case with the weight on the lpn estimate, the
    interpolated p and the λ / R exponents of the combined bound.
    """
    _check_n(n)
    est = interpolation_inputs(n)
    l2 = est["l2"]
    if n == 3:
        w = Fraction(4, 7)
        p, (lam, R) = interpolate_holder(est["l4"].p, (est["l4"].lam_exp, est["l4"].R_exp),
                                         l2.p, (l2.lam_exp, l2.R_exp), weights=(w, 1 - w))
        return [{"case": "n3", "weight": w, "p": p, "lam_exp": lam, "R_exp": R}]
    cases = []
    for case, key, w in (("high_density", "lpn_high", Fraction(49 * (n - 1), 77 * n - 95)),
                         ("low_density", "lpn_low", Fraction(7, 11))):
        e = est[key]
        p, (lam, R) = interpolate_holder(e.p, (e.lam_exp, e.R_exp), l2.p, (l2.lam_exp, l2.R_exp),
                                         weights=(w, 1 - w))
        cases.append({"case": case, "weight": w, "p": p, "lam_exp": lam, "R_exp": R})
    return cases


def p_of_n(n: int) -> PValue:
    """
    Restriction exponent p(n) with its asymptotic residual p(n) - (2 + 28/(11n)).

    n = 3 gives 22/7; n >= 4 gives (154n + 6)/(77n - 95), the high-density
    case of the split, which dominates the low-density value for every n >= 4.
    """
    _check_n(n)
    if n == 3:
        p, branch = Fraction(22, 7), "n3"
    else:
        p, branch = Fraction(154 * n + 6, 77 * n - 95), "high_density"
    return PValue(p, p - (2 + ASYMPTOTIC_COEFFICIENT / n), branch)


# ======================================================
# INTERPOLATION
# ======================================================
def _as_tuple(e) -> tuple:
    if isinstance(e, (tuple, list)):
        return tuple(q(v) for v in e)
    return (q(e),)


def interpolate_holder(p1, exp1, p2, exp2, weights=None, target=None, target_index: int = 0):
    """
    Hölder-interpolate two estimates.

    Parameters
    ----------
    p1, p2 : rational
        Lebesgue exponents, p1 != p2.
    exp1, exp2 : rational or tuple of rationals
        Exponents carried by each estimate (e.g. (λ-exp, R-exp)).
    weights : (w1, w2), optional
        Convex weights in [0, 1] summing to 1.
    target : rational, optional
        Solve for the weights making component ``target_index`` equal ``target``.

    Returns
    -------
    (p, exponent)
        ``p = w1 p1 + w2 p2`` and the componentwise combination of exponents
        (a scalar when scalars were given).
    """
    p1, p2 = q(p1), q(p2)
    if p1 == p2:
        raise ParameterError("interpolation needs p1 != p2")
    e1, e2 = _as_tuple(exp1), _as_tuple(exp2)
    if len(e1) != len(e2):
        raise ParameterError("exponent tuples differ in length")
    if (weights is None) == (target is None):
        raise ParameterError("give exactly one of weights or target")
    if weights is not None:
        w1, w2 = (q(w) for w in weights)
        if w1 + w2 != 1 or not (0 <= w1 <= 1 and 0 <= w2 <= 1):
            raise DomainError(f"weights {w1}, {w2} are not convex")
    else:
        t = q(target)
        a, b = e1[target_index], e2[target_index]
        if a == b:
            raise DomainError("target component is equal in both estimates")
        w1 = (t - b) / (a - b)
        w2 = 1 - w1
        if not 0 <= w1 <= 1:
            raise DomainError(f"target {t} not reachable (weight {w1})")
    p = w1 * p1 + w2 * p2
    combined = tuple(w1 * x + w2 * y for x, y in zip(e1, e2))
    scalar = not isinstance(exp1, (tuple, list))
    return p, combined[0] if scalar else combined


# ======================================================
# KAKEYA <-> RESTRICTION
# ======================================================
def kakeya_dim_from_restriction(p0) -> Fraction:
    """s(p0) = (6 - p0)/(p0 - 2) for p0 in (2, 6]; p0 = 6 gives the limit 0."""
    p0 = q(p0)
    if not 2 < p0 <= 6:
        raise DomainError(f"p0={p0} outside (2, 6]")
    return (6 - p0) / (p0 - 2)


def restriction_from_kakeya_dim(s) -> Fraction:
    """Inverse of kakeya_dim_from_restriction: p0 = (6 + 2s)/(1 + s) for s >= 0."""
    s = q(s)
    if s < 0:
        raise DomainError(f"s={s} negative")
    return (6 + 2 * s) / (1 + s)


# ======================================================
# FURSTENBERG NUMEROLOGY
# ======================================================
REGIMES = ("planar", "three_dim", "n_dim", "two_ends")


def furstenberg_exponent(regime: str, s=None, t=None, n: int | None = None) -> ExponentExpr:
    """
    Covering exponent of a Furstenberg-type union.

    ``planar``    min{t, (s+t)/2, 1}              (theorem; bound λδ·δ^-value)
    ``three_dim`` min{s+2t, t+2s, 2+s}            (conjecture)
    ``n_dim``     min{s+(n-1)t, (n-1)t/2+(n+1)s/2, n-1+s}, n >= 4 (conjecture)
    ``two_ends``  (n-1)/2 as the λ-power of the lower bound (theorem for n = 2)
    """
    if regime not in REGIMES:
        raise ParameterError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if regime == "two_ends":
        if n is None or n < 2:
            raise DomainError("two_ends regime needs n >= 2")
        v = Fraction(n - 1, 2)
        return ExponentExpr(v, "two_ends", {"two_ends": v}, THEOREM if n == 2 else CONJECTURE,
                            "two-ends-furstenberg")
    s, t = q(s), q(t)
    if not 0 < s <= 1:
        raise DomainError(f"s={s} outside (0, 1]")
    if regime == "planar":
        if not 0 < t <= 2:
            raise DomainError(f"t={t} outside (0, 2]")
        return _min_expr({"bush": t, "lattice": (s + t) / 2, "hyperplane": Fraction(1)},
                         THEOREM, "planar-furstenberg")
    if not 0 < t < 2:
        raise DomainError(f"t={t} outside (0, 2)")
    if regime == "three_dim":
        return _min_expr({"bush": s + 2 * t, "lattice": t + 2 * s, "hyperplane": 2 + s},
                         CONJECTURE, "furstenberg-3d")
    if n is None or n < 4:
        raise DomainError("n_dim regime needs n >= 4")
    return _min_expr({"bush": s + (n - 1) * t,
                      "lattice": Fraction(n - 1, 2) * t + Fraction(n + 1, 2) * s,
                      "hyperplane": n - 1 + s},
                     CONJECTURE, "furstenberg-nd")


# ======================================================
# MULTIPLICITY THRESHOLDS
# ======================================================
@dataclass(frozen=True)
class MuThresholds:
    """
    μ = m δ^exponent for each rule; ``selected`` is the rule excision uses.

    Rules: ``n3`` (three dimensions), ``high_density`` (λ >= δ^1/4),
    ``low_density`` (λ <= δ^1/4; also the density-free baseline).
    """

    n: int
    m: int
    lam_exp: Fraction
    eps1: Fraction
    exponents: dict
    selected: str

    def exponent(self, rule: str | None = None) -> Fraction:
        return self.exponents[rule or self.selected]

    def mu(self, k: int, rule: str | None = None) -> float:
        return self.m * 2.0 ** (-k * float(self.exponent(rule)))

    def to_json(self) -> dict:
        return {"n": self.n, "m": self.m, "lam_exp": str(self.lam_exp), "eps1": str(self.eps1),
                "selected": self.selected, "exponents": {k: str(v) for k, v in self.exponents.items()}}


def mu_thresholds(n: int, m: int, lam_exp, eps1) -> MuThresholds:
    """Multiplicity thresholds for an m-parallel, λ-dense family with λ = δ**lam_exp."""
    if n < 2:
        raise DomainError(f"n={n} below 2")
    if m < 1:
        raise ParameterError(f"parallelism m={m} must be >= 1")
    lam, e1 = q(lam_exp), q(eps1)
    if lam < 0:
        raise DomainError(f"λ = δ^{lam} exceeds 1")
    exps = {"low_density": -2 * e1 - Fraction(n - 1, 2)}
    exps["high_density"] = -2 * e1 - Fraction(2 * n + 7, 7) * lam - Fraction(3 * n - 3, 7)
    if n == 3:
        exps["n3"] = -2 * e1 - Fraction(3, 4) * lam - Fraction(1, 2)
        selected = "n3"
    else:
        selected = "high_density" if lam <= Fraction(1, 4) else "low_density"
    return MuThresholds(n=n, m=int(m), lam_exp=lam, eps1=e1, exponents=exps, selected=selected)


# ======================================================
# TABLE
# ======================================================
def named_exponents(n: int, s=None, t=None, lam_exp=0, p=None) -> pd.DataFrame:
    """Every named exponent that applies to (n, s, t, λ, p), one row each."""
    rows = []

    def add(name, value, branch="", grade=THEOREM, ref=""):
        rows.append({"name": name, "value": str(value), "float": float(value),
                     "branch": branch, "grade": grade, "ref": ref})

    if n == 2:
        add("p", planar_p(), "planar", ref="planar-restriction")
    else:
        pv = p_of_n(n)
        add("p", pv.p, pv.branch, ref="restriction-p-of-n")
        add("p_residual", pv.residual, pv.branch, MEASUREMENT, "restriction-asymptotics")
        for case in p_case_split(n):
            add(f"p[{case['case']}]", case["p"], case["case"], ref="restriction-case-split")
    if p is not None:
        add("kakeya_dim", kakeya_dim_from_restriction(p), "", ref="kakeya-from-restriction")
    if s is not None and t is not None:
        regime = {2: "planar", 3: "three_dim"}.get(n, "n_dim")
        e = furstenberg_exponent(regime, s, t, n)
        add(f"furstenberg[{regime}]", e.value, e.branch, e.grade, e.ref)
    e = furstenberg_exponent("two_ends", n=n)
    add("two_ends_lambda_power", e.value * q(lam_exp), e.branch, e.grade, e.ref)
    mt = mu_thresholds(n, 1, lam_exp, 0)
    for rule, v in mt.exponents.items():
        add(f"mu_exponent[{rule}]", v, "selected" if rule == mt.selected else "", ref="mu-threshold")
    return pd.DataFrame(rows)
