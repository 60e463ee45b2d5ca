from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from errors import DomainError, ParameterError
from exponents import (
    ASYMPTOTIC_COEFFICIENT,
    CONJECTURE,
    THEOREM,
    furstenberg_exponent,
    interpolate_holder,
    interpolation_inputs,
    kakeya_dim_from_restriction,
    mu_thresholds,
    named_exponents,
    p_case_split,
    p_of_n,
    planar_p,
    q,
    restriction_from_kakeya_dim,
)


# ---- coercion ----
def test_rational_coercion():
    assert q(3.2) == Fraction(16, 5)
    assert q("3/4") == Fraction(3, 4)
    assert q(2) == 2
    with pytest.raises(ParameterError):
        q(True)
    with pytest.raises(ParameterError):
        q("three")


# ---- p(n) ----
def test_three_dimensional_exponent():
    pv = p_of_n(3)
    assert pv.p == Fraction(22, 7)
    assert pv.residual == Fraction(22, 7) - 2 - Fraction(28, 33)


def test_four_dimensional_exponent():
    assert p_of_n(4).p == Fraction(622, 213)
    assert ASYMPTOTIC_COEFFICIENT == Fraction(28, 11)


def test_planar_case_is_separate():
    assert planar_p() == 4
    with pytest.raises(DomainError):
        p_of_n(2)


@pytest.mark.parametrize("n", range(4, 13))
def test_case_split_reproduces_p(n):
    cases = {c["case"]: c for c in p_case_split(n)}
    assert cases["high_density"]["p"] == p_of_n(n).p
    assert cases["low_density"]["p"] == Fraction(22 * n + 6, 11 * (n - 1))
    assert cases["high_density"]["p"] > cases["low_density"]["p"]


def test_three_dimensional_interpolation_weights():
    (case,) = p_case_split(3)
    assert case["weight"] == Fraction(4, 7)
    assert case["p"] == Fraction(22, 7)


# ---- Kakeya <-> restriction ----
def test_kakeya_dimension_values():
    assert kakeya_dim_from_restriction(Fraction(22, 7)) == Fraction(5, 2)
    assert kakeya_dim_from_restriction(3.2) == Fraction(7, 3)
    assert kakeya_dim_from_restriction(6) == 0
    with pytest.raises(DomainError):
        kakeya_dim_from_restriction(2)
    with pytest.raises(DomainError):
        restriction_from_kakeya_dim(-1)


@settings(max_examples=200, deadline=None)
@given(st.fractions(min_value=0, max_value=1000))
def test_kakeya_round_trip(s):
    assert kakeya_dim_from_restriction(restriction_from_kakeya_dim(s)) == s


# ---- interpolation ----
def test_holder_interpolation():
    assert interpolate_holder(4, 0, 2, 0, weights=(Fraction(4, 7), Fraction(3, 7)))[0] == Fraction(22, 7)
    assert interpolate_holder(6, 0, 2, 0, weights=(Fraction(1, 2), Fraction(1, 2)))[0] == 4
    assert interpolate_holder(5, 1, 2, 3, weights=(1, 0)) == (5, 1)


def test_holder_target_solves_weights():
    p, e = interpolate_holder(4, (0, 1), 2, (1, 0), target=Fraction(3, 7))
    assert p == Fraction(22, 7)
    assert e == (Fraction(3, 7), Fraction(4, 7))


def test_holder_errors():
    with pytest.raises(ParameterError):
        interpolate_holder(2, 0, 2, 1, weights=(Fraction(1, 2), Fraction(1, 2)))
    with pytest.raises(DomainError):
        interpolate_holder(4, 0, 2, 1, target=2)
    with pytest.raises(DomainError):
        interpolate_holder(4, 0, 2, 1, weights=(Fraction(3, 2), Fraction(-1, 2)))


# ---- Furstenberg numerology ----
def test_planar_tie():
    e = furstenberg_exponent("planar", 1, 1)
    assert e.value == 1 and len(e.ties) == 3
    assert e.grade == THEOREM


def test_three_dimensional_tie():
    e = furstenberg_exponent("three_dim", 1, 1)
    assert e.value == 3 and e.grade == CONJECTURE


def test_n_dimensional_branch():
    e = furstenberg_exponent("n_dim", Fraction(1, 2), 1, n=4)
    assert e.value == Fraction(11, 4)
    assert e.branch == "lattice"


def test_two_ends_power():
    assert furstenberg_exponent("two_ends", n=2).grade == THEOREM
    e = furstenberg_exponent("two_ends", n=3)
    assert e.value == 1 and e.grade == CONJECTURE


def test_furstenberg_ranges():
    with pytest.raises(DomainError):
        furstenberg_exponent("planar", 0, 1)
    with pytest.raises(DomainError):
        furstenberg_exponent("three_dim", 1, 2)
    with pytest.raises(ParameterError):
        furstenberg_exponent("quartic", 1, 1)


# ---- multiplicity thresholds ----
def test_mu_thresholds():
    assert mu_thresholds(3, 1, Fraction(1, 2), 0).exponent() == Fraction(-7, 8)
    assert mu_thresholds(3, 1, 0, 0).exponent() == Fraction(-1, 2)
    assert mu_thresholds(5, 1, Fraction(1, 8), 0).selected == "high_density"
    assert mu_thresholds(5, 1, Fraction(1, 2), 0).selected == "low_density"
    assert mu_thresholds(3, 4, 0, 0).mu(6) == pytest.approx(4 * 2.0 ** 3)


def test_mu_threshold_errors():
    with pytest.raises(ParameterError):
        mu_thresholds(3, 0, 0, 0)
    with pytest.raises(DomainError):
        mu_thresholds(3, 1, -1, 0)


# ---- table ----
def test_named_exponent_table():
    df = named_exponents(3, s=1, t=1, lam_exp=Fraction(1, 2), p=Fraction(22, 7)).set_index("name")
    assert df.loc["p", "value"] == "22/7"
    assert df.loc["kakeya_dim", "value"] == "5/2"
    assert df.loc["furstenberg[three_dim]", "grade"] == CONJECTURE
    assert df.loc["mu_exponent[n3]", "branch"] == "selected"


def test_interpolation_inputs():
    est = interpolation_inputs(3)
    assert sorted(est) == ["l2", "l4"]
    assert est["l4"].p == 4
    est = interpolation_inputs(5)
    assert sorted(est) == ["l2", "lpn_high", "lpn_low"]
    assert est["lpn_high"].p == est["lpn_low"].p == Fraction(3)
    assert est["lpn_low"].lam_exp == 0
    with pytest.raises(DomainError):
        interpolation_inputs(2)
