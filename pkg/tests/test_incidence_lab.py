from fractions import Fraction

import numpy as np
import pytest

from dyadic_core import CellSet, union_all
from errors import CapacityError, ParameterError, PreconditionError
from exponents import CONJECTURE, MEASUREMENT, THEOREM
from families import gen_bush, gen_hairbrush, gen_random_two_ends, gen_well_spaced, project_planar
from incidence_lab import (
    CSV_COLUMNS,
    InequalityReport,
    ProjectionSystem,
    check_bush_nd,
    check_furstenberg_conjecture,
    check_hairbrush_3d,
    check_two_ends_furstenberg_2d,
    convex_wolff_deficiency,
    gen_lattice_example,
    incidence_exponents,
    incidences,
    multiplicity_census,
    rich_ball_census,
    six_slice_experiment,
    sums_diffs_check,
    sums_diffs_sweep,
    union_measure,
)
from tube_geometry import DiscreteLine, ShadedFamily, core_cells, rasterize_tube

SLOPES = (0.5, 2.0, 0.6, 4.0)


# ---- reports ----
def test_report_verdicts():
    params = {"k": 6}
    assert InequalityReport("x", "r", params, 1.0, 2.0, slack=0.2).verdict == "pass"
    assert InequalityReport("x", "r", params, 1.0, 4.0, slack=0.2).verdict == "fail"
    assert InequalityReport("x", "r", params, 3.0, 1.0, sense="upper", slack=0.1).verdict == "fail"
    rep = InequalityReport("x", "r", params, 0.0, 0.0)
    assert rep.ratio == 1.0 and rep.verdict == "pass"
    assert list(rep.to_row()) == CSV_COLUMNS


# ---- union and census ----
def test_union_of_one_full_tube():
    line = DiscreteLine(2, (0.5,), (0.2,))
    T = rasterize_tube(line, 5)
    assert union_measure(ShadedFamily(2, 5, [line], [T])) == T.measure


def test_union_of_disjoint_tubes():
    lines = [DiscreteLine(2, (0.2,), (0.0,)), DiscreteLine(2, (0.8,), (0.0,))]
    tubes = [rasterize_tube(l, 5) for l in lines]
    F = ShadedFamily(2, 5, lines, tubes)
    assert union_measure(F) == tubes[0].measure + tubes[1].measure
    assert multiplicity_census(F).to_dict() == {1: len(tubes[0]) + len(tubes[1])}


def test_union_matches_set_oracle():
    F = gen_random_two_ends(2, 6, 32, 0.5, seed=7)
    cells = set()
    for Y in F.shadings:
        cells |= {tuple(c) for c in Y.coords}
    assert union_measure(F) == Fraction(len(cells), 4 ** 6)
    hist = multiplicity_census(F)
    assert int((hist.index * hist).sum()) == sum(len(Y) for Y in F.shadings)


# ---- checkers ----
def test_single_line_planar_check():
    F = gen_random_two_ends(2, 6, 1, 1.0, seed=3)
    rep = check_two_ends_furstenberg_2d(F)
    assert rep.lhs == pytest.approx(float(F.total_shading()))
    assert rep.verdict == "pass"


def test_planar_bush_passes():
    F = gen_bush(2, 7, 11, 2.0 ** -3.5, seed=1, eps1=0.5, eps2=0.25)
    rep = check_two_ends_furstenberg_2d(F, eps=0.1)
    assert rep.verdict == "pass"
    assert rep.grade == THEOREM


def test_planar_random_family_passes(planar_family):
    assert check_two_ends_furstenberg_2d(planar_family).verdict == "pass"
    assert check_bush_nd(planar_family).verdict == "pass"


def _planar_configuration(i):
    kind = ("bush", "hairbrush", "random")[i % 3]
    k = (6, 7)[(i // 6) % 2]
    lam = 2.0 ** (-k * (0.5, 0.25)[(i // 3) % 2])
    ends = dict(eps1=0.5, eps2=0.2)
    if kind == "bush":
        return gen_bush(2, k, 11, lam, seed=i, **ends)
    if kind == "hairbrush":
        return project_planar(gen_hairbrush(k, 16, 1.0, seed=i), lam, seed=i, **ends)
    return gen_random_two_ends(2, k, 16, lam, seed=i, **ends)


@pytest.mark.slow
def test_planar_two_ends_sweep():
    for i in range(50):
        F = _planar_configuration(i)
        rep = check_two_ends_furstenberg_2d(F, eps=0.1)
        assert rep.verdict == "pass", (i, F.meta["generator"], rep.ratio)


def test_hairbrush_check():
    F = gen_hairbrush(5, 16, 0.5, seed=0)
    rep = check_hairbrush_3d(F)
    assert rep.verdict == "pass"
    assert rep.ratio > 1


def test_spatial_checks(spatial_bush):
    assert check_bush_nd(spatial_bush).verdict == "pass"
    assert check_hairbrush_3d(gen_random_two_ends(3, 5, 16, 0.5, seed=2)).verdict == "pass"


def test_checker_preconditions(planar_family):
    bare = ShadedFamily(2, planar_family.k, planar_family.lines, planar_family.shadings)
    with pytest.raises(PreconditionError):
        check_two_ends_furstenberg_2d(bare)
    with pytest.raises(ParameterError):
        check_hairbrush_3d(planar_family)


def test_conjecture_grades(planar_family, spatial_bush):
    assert check_furstenberg_conjecture(planar_family).grade == THEOREM
    rep = check_furstenberg_conjecture(spatial_bush)
    assert rep.grade == CONJECTURE
    assert rep.ratio > 0


# ---- lattice ----
def test_small_lattice_counts():
    ex = gen_lattice_example(2, 4, (2,))
    assert ex.n_points == 45 and ex.n_lines == 16
    assert ex.count == 50
    assert incidences(ex.points, ex.lines, height_axis=0) == ex.count


def test_tiny_lattice():
    ex = gen_lattice_example(2, 1, (1,))
    assert ex.n_points == 4 and ex.n_lines == 1
    assert ex.count == incidences(ex.points, ex.lines, height_axis=0) == 1


def test_spatial_lattice_brute_force():
    ex = gen_lattice_example(3, 3, (1, 2))
    assert ex.count == incidences(ex.points, ex.lines, height_axis=0)


def test_lattice_guards():
    with pytest.raises(CapacityError):
        gen_lattice_example(3, 1024, (64, 64))
    with pytest.raises(ParameterError):
        gen_lattice_example(3, 4, (2,))


@pytest.mark.slow
def test_planar_lattice_fit():
    fit = incidence_exponents(2, Ns=(8, 16, 32), k=(2,), k_scales=(1, 2))
    assert abs(fit["alpha"] - 2 / 3) <= 0.15
    assert abs(fit["beta"] - 2 / 3) <= 0.15
    assert set(fit["table"]["N"]) == {8, 16, 32}


@pytest.mark.slow
def test_spatial_lattice_fit():
    fit = incidence_exponents(3, Ns=(8, 16, 32), k=(2, 2), k_scales=(1, 4))
    assert abs(fit["alpha"] - 0.5) <= 0.15
    assert abs(fit["beta"] - 0.75) <= 0.15


def test_incidences_of_discrete_lines():
    line = DiscreteLine(2, (0.25,), (0.5,))
    pts = np.array([[0.5, 0.5], [0.25, 0.0], [0.3, 0.3]])
    assert incidences(pts, [line]) == 2
    assert incidences(np.zeros((0, 2)), [line]) == 0


# ---- rich balls ----
def test_core_cells_one_per_row():
    vertical = core_cells(DiscreteLine(2, (0.3,), (0.0,)), 4)
    assert len(vertical) == 16
    assert set(vertical.coords[:, 0]) == {4}
    steep = core_cells(DiscreteLine(2, (0.75,), (0.5,)), 4)
    assert len(steep) == 8
    assert steep.coords[:, 1].max() == 7


def test_census_extremes(planar_family):
    core = union_all([core_cells(l, planar_family.k) for l in planar_family.lines], 2, planar_family.k)
    rep = rich_ball_census(planar_family, 1)
    assert rep.lhs == len(core) == rep.extra["core_cells"]
    assert rich_ball_census(planar_family, len(planar_family) + 1).lhs == 0
    assert rep.grade == MEASUREMENT and rep.sense == "upper"


@pytest.mark.parametrize("r", [4, 8])
def test_census_on_well_spaced_tubes(r):
    F = gen_well_spaced(2, 6, 64)
    rep = rich_ball_census(F, r)
    assert rep.rhs == pytest.approx(64 ** 2 / r ** 3)
    assert rep.verdict == "pass"


def test_census_two_rich_cells_within_a_constant():
    F = gen_well_spaced(2, 6, 64)
    rep = rich_ball_census(F, 2)
    assert rep.rhs == pytest.approx(512)
    assert rich_ball_census(F, 4).lhs <= rep.lhs <= 3 * rep.rhs * 2 ** 0.6


# ---- convex Wolff ----
def test_slab_detection():
    k = 4
    lines = [DiscreteLine(3, (0.5, 0.2 + 0.1 * i), (0.0, 0.05 * (i - 3))) for i in range(6)]
    w = convex_wolff_deficiency(lines, k, 1.0)
    assert w.C_lower >= 2.0 ** k - 1e-9
    assert w.is_lower_bound


def test_single_tube_witness():
    k = 4
    line = DiscreteLine(3, (8.5 / 16, 8.5 / 16), (0.0, 0.0))
    w = convex_wolff_deficiency([line], k, 1.0)
    assert w.kind == "tube"
    assert w.C_lower == pytest.approx(1 / w.volume)
    assert 4.0 ** k / 8 <= w.C_lower <= 4.0 ** k


def test_wolff_parameters():
    line = DiscreteLine(3, (0.5, 0.5), (0.0, 0.0))
    with pytest.raises(ParameterError):
        convex_wolff_deficiency([line], 4, 2.0)
    with pytest.raises(ParameterError):
        convex_wolff_deficiency([DiscreteLine(2, (0.5,), (0.0,))], 4, 1.0)


# ---- sums and differences ----
def test_diagonal_has_one_difference():
    a = np.arange(64)
    rep = sums_diffs_check(ProjectionSystem.from_ratios(a, a, 6, *SLOPES))
    assert rep.extra["difference"] == 1
    assert rep.verdict == "pass"


def test_product_set_projections():
    A = np.arange(16) * 3
    B = np.arange(16) * 5
    aa, bb = np.meshgrid(A, B, indexing="ij")
    P = ProjectionSystem.from_ratios(aa.ravel(), bb.ravel(), 8, *SLOPES)
    rep = sums_diffs_check(P)
    counts = rep.extra["projections"]
    assert counts["0"] == 16 and counts["inf"] == 16
    assert rep.extra["difference"] <= 16 * 16
    assert all(c <= len(P) for c in counts.values())


def test_random_sweep_is_not_explosive():
    table = sums_diffs_sweep([2 ** j for j in range(4, 11)], 8, seed=0)
    ratios = table["ratio"].to_numpy()
    assert (ratios[1:] <= 2 * ratios[:-1]).all()


def test_slope_constraint():
    a = np.arange(8)
    with pytest.raises(ParameterError):
        ProjectionSystem(a, a, 0.5, 2.0, 0.6, 4.0, 1.0, 6)


# ---- six slices ----
def test_full_shadings_pass():
    F = gen_random_two_ends(2, 5, 8, 1.0, seed=0)
    rep = six_slice_experiment(F)
    assert rep.extra["regime"] == "strong"
    assert rep.verdict == "pass"
    assert rep.extra["G"] >= 1


def test_slice_bound_drives_the_verdict():
    F = gen_random_two_ends(2, 5, 8, 1.0, seed=0)
    rep = six_slice_experiment(F)
    ex = rep.extra
    assert ex["slice_lower"] == pytest.approx((ex["G"] * ex["d"] ** 0.25) ** (4 / 7))
    assert rep.lhs == pytest.approx(ex["slice_lower"] * ex["rows_banded"] / 32 ** 2)
    assert ex["union"] == pytest.approx(float(union_measure(F)))
    assert rep.lhs != ex["union"]
    e1 = F.meta["eps1"]
    assert rep.rhs == pytest.approx(2.0 ** (-5 * e1) * 2.0 ** (-15 / 7) * float(F.total_shading()) ** (4 / 7))


def test_sparse_shadings_skip():
    F = gen_random_two_ends(2, 6, 8, 2.0 ** -4.5, seed=0, eps1=0.5, eps2=0.2)
    rep = six_slice_experiment(F)
    assert rep.verdict == "skip"
    assert rep.lhs == 0.0 and rep.extra["union"] > 0


def test_concentrated_shadings_are_only_measured():
    lines = [DiscreteLine(2, (0.2 + 0.1 * i,), (0.0,)) for i in range(6)]
    bottom = CellSet.from_coords(2, 6, [(i, j) for i in range(64) for j in range(16)])
    F = ShadedFamily(2, 6, lines, [rasterize_tube(l, 6) & bottom for l in lines])
    rep = six_slice_experiment(F)
    assert rep.verdict == "measured"
    assert rep.grade == MEASUREMENT
    assert "reason" in rep.extra
