from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etdrk.phi import phi
from etdrk.tableau import (
    SCHEME_NAMES,
    ZERO,
    CoefficientExpr,
    Tableau,
    TableauParseError,
    builtin_scheme,
    equilibria_check,
    evaluate,
    format_expr,
    load_tableau,
    order_conditions,
    parse_expr,
    parse_tableau,
    phi_expr,
    resolve_scheme,
)

GOLDEN = Path(__file__).parent / "golden"


def golden_blocks(name):
    text = (GOLDEN / name).read_text(encoding="utf-8")
    return [b for b in text.split("\n\n") if "weights" in b]


def test_registry_names():
    assert SCHEME_NAMES == (
        "etd1", "etdrk2", "cm-etdrk3", "ed-etdrk3a", "ed-etdrk3b", "cm-etdrk4", "krogstad-etdrk4",
    )
    with pytest.raises(ValueError, match="choose from"):
        builtin_scheme("rk4")


def test_hand_transcribed_tableaux_match_registry():
    parsed = [parse_tableau(b) for b in golden_blocks("builtin_schemes.tab")]
    assert [t.name for t in parsed] == list(SCHEME_NAMES)
    for t in parsed:
        assert t == builtin_scheme(t.name)


def test_pretty_printing_is_stable():
    expected = (GOLDEN / "builtin_schemes_canonical.tab").read_text(encoding="utf-8")
    assert "\n".join(builtin_scheme(n).to_text() for n in SCHEME_NAMES) == expected


@pytest.mark.parametrize("name", SCHEME_NAMES)
def test_text_round_trip(name):
    tab = builtin_scheme(name)
    assert parse_tableau(tab.to_text()) == tab


def test_examples_from_registry():
    etd1 = builtin_scheme("etd1")
    assert etd1.stages == 1 and etd1.b[0] == phi_expr(1)
    tab = builtin_scheme("ed-etdrk3a")
    assert tab.c == (0, 1, Fraction(2, 3))
    assert format_expr(tab.b[0]) == "3/4*phi1(z) - phi2(z)"
    cm4 = builtin_scheme("cm-etdrk4")
    assert cm4.c == (0, Fraction(1, 2), Fraction(1, 2), 1)
    assert cm4.a[3][1].is_zero


def test_evaluate_examples():
    A, b, chi = evaluate(builtin_scheme("etdrk2"), 0.0)
    np.testing.assert_allclose(A, [[0, 0], [1, 0]])
    np.testing.assert_allclose(b, [0.5, 0.5])
    np.testing.assert_allclose(chi, [1, 1])
    _, b, _ = evaluate(builtin_scheme("etd1"), -1.0)
    assert b[0] == pytest.approx(0.632120558828558, rel=1e-14)
    _, b, chi = evaluate(builtin_scheme("ed-etdrk3a"), 0.0)
    # 3/4 - 1/2, 1/2 - 1/2, 3/4
    np.testing.assert_allclose(b, [0.25, 0.0, 0.75], atol=1e-15)
    _, _, chi = evaluate(builtin_scheme("ed-etdrk3a"), -3.0)
    np.testing.assert_allclose(chi, np.exp([0.0, -3.0, -2.0]))


def test_evaluate_array_shape():
    z = -np.linspace(0, 5, 12).reshape(3, 4)
    A, b, chi = evaluate(builtin_scheme("krogstad-etdrk4"), z)
    assert A.shape == (4, 4, 3, 4) and b.shape == (4, 3, 4) and chi.shape == (4, 3, 4)
    A0, b0, _ = evaluate(builtin_scheme("krogstad-etdrk4"), z[1, 2])
    np.testing.assert_allclose(A[..., 1, 2], A0, rtol=1e-15)
    np.testing.assert_allclose(b[:, 1, 2], b0, rtol=1e-15)


def test_product_coefficient_evaluates():
    a41 = builtin_scheme("cm-etdrk4").a[3][0]
    for z in (-0.01, -1.0, -30.0):
        expected = 0.5 * phi(1, z / 2) * (np.exp(z / 2) - 1)
        assert a41.evaluate(z) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("name", SCHEME_NAMES)
def test_equilibria_on_random_samples(name):
    z = -np.random.default_rng(3).uniform(0, 100, 100)
    report = equilibria_check(builtin_scheme(name), z)
    assert report.passed, report.summary()


def test_equilibria_detects_perturbed_weight():
    tab = builtin_scheme("etdrk2")
    bad = Tableau("bad", tab.c, tab.a, (tab.b[0] + CoefficientExpr.const(Fraction(1, 100)), tab.b[1]), 2)
    report = equilibria_check(bad, [-1.0])
    assert not report.passed
    assert "-1" in report.summary()


def test_equilibria_exact_for_etdrk2():
    report = equilibria_check(builtin_scheme("etdrk2"), [-2.0])
    assert report.passed


def test_order_conditions_examples():
    r = order_conditions(builtin_scheme("etd1"), 1, [-1.0, -5.0])
    assert r.passed and r.conditions[0].max_residual == 0.0
    r = order_conditions(builtin_scheme("etdrk2"), 2, [-1.0])
    assert r.passed and r.stiff_passed
    assert all(c.max_residual <= 1e-12 for c in r.conditions)
    r = order_conditions(builtin_scheme("etd1"), 2, [-1.0])
    assert not r.passed
    assert r.conditions[1].name == "psi_2" and r.conditions[1].max_residual > 0.3


@pytest.mark.parametrize("name", SCHEME_NAMES)
def test_claimed_order_in_classical_reading(name):
    tab = builtin_scheme(name)
    assert order_conditions(tab, tab.claimed_order, [-0.5, -2.0, -20.0]).passed


@pytest.mark.parametrize("name", SCHEME_NAMES)
def test_no_scheme_exceeds_its_order(name):
    tab = builtin_scheme(name)
    if tab.claimed_order < 4:
        assert not order_conditions(tab, tab.claimed_order + 1, [-1.0]).passed


def test_third_order_schemes_are_not_stiffly_exact():
    # the scalar psi_3 residual of ed-etdrk3a is nonzero away from z = 0
    r = order_conditions(builtin_scheme("ed-etdrk3a"), 3, [-0.5, -2.0, -20.0], mode="stiff")
    assert not r.passed
    psi3 = next(c for c in r.conditions if c.name == "psi_3")
    assert psi3.max_residual > 1e-3 and psi3.classical_pass


def test_order_report_lines():
    lines = list(order_conditions(builtin_scheme("etdrk2"), 2, [-1.0]).lines())
    assert lines[0].startswith("# scheme=etdrk2") and "verdict=pass" in lines[0]
    assert lines[2] == "condition,order,max_residual,stiff_pass,classical_pass"


# expression grammar ----------------------------------------------------------------
def test_parse_expr_forms():
    assert parse_expr("phi1(z)") == phi_expr(1)
    assert parse_expr("2/3*phi1(2/3*z) - 4/9*phi2(2/3*z)") == (
        Fraction(2, 3) * phi_expr(1, Fraction(2, 3)) - Fraction(4, 9) * phi_expr(2, Fraction(2, 3))
    )
    assert parse_expr("0") == ZERO
    assert parse_expr("-phi2(z) + 1/2") == CoefficientExpr.const(Fraction(1, 2)) - phi_expr(2)
    assert parse_expr("phi1(z/2)") == phi_expr(1, Fraction(1, 2))


@pytest.mark.parametrize("bad", ["phi1(", "phi(z)", "2*", "phi1(z) +", "phi1(2*y)", "1/0", "phi1(z))"])
def test_parse_expr_rejects(bad):
    with pytest.raises(TableauParseError):
        parse_expr(bad)


_factor = st.tuples(st.integers(0, 4), st.sampled_from([Fraction(1), Fraction(1, 2), Fraction(2, 3), Fraction(4, 9)]))
_weight = st.fractions(min_value=-5, max_value=5, max_denominator=12)


@st.composite
def expressions(draw):
    expr = CoefficientExpr.const(draw(_weight))
    for _ in range(draw(st.integers(0, 4))):
        term = CoefficientExpr.const(draw(_weight))
        for k, s in draw(st.lists(_factor, min_size=1, max_size=2)):
            term = term * phi_expr(k, s)
        expr = expr + term
    return expr


@settings(max_examples=150, deadline=None)
@given(expressions())
def test_format_parse_round_trip(expr):
    assert parse_expr(format_expr(expr)) == expr


@settings(max_examples=100, deadline=None)
@given(expressions(), st.floats(-40, -1e-3))
def test_round_trip_preserves_value(expr, z):
    assert parse_expr(format_expr(expr)).evaluate(z) == pytest.approx(expr.evaluate(z), rel=1e-12, abs=1e-12)


def test_taylor_coefficients_exact():
    # phi1(z) = 1 + z/2 + z^2/6 + ...
    assert phi_expr(1).taylor(3) == [Fraction(1), Fraction(1, 2), Fraction(1, 6)]
    assert phi_expr(2, Fraction(1, 2)).taylor(2) == [Fraction(1, 2), Fraction(1, 12)]


# tableau files -----------------------------------------------------------------------
def test_parse_tableau_errors():
    with pytest.raises(TableauParseError, match="line 1"):
        parse_tableau("stage one c=0 a=\nweights b=phi1(z)")
    with pytest.raises(TableauParseError):
        parse_tableau("stage 1 c=0 a=\n")
    with pytest.raises(TableauParseError):
        parse_tableau("stage 1 c=0 a=\nstage 3 c=1 a=phi1(z),0\nweights b=phi1(z),0")
    with pytest.raises(TableauParseError):
        parse_tableau("stage 1 c=0 a=\nweights b=phi1(z),phi2(z)")


def test_load_and_resolve_file(tmp_path):
    path = tmp_path / "mine.tab"
    path.write_text(builtin_scheme("ed-etdrk3b").to_text().replace("name ed-etdrk3b", "name mine"))
    tab = load_tableau(path)
    assert tab.name == "mine" and tab.stages == 3
    assert resolve_scheme(path).b == builtin_scheme("ed-etdrk3b").b


def test_resolve_rejects_non_equilibrium_tableau(tmp_path):
    path = tmp_path / "bad.tab"
    path.write_text("stage 1 c=0 a=\nweights b=phi2(z)\n")
    with pytest.raises(TableauParseError, match="equilibria"):
        resolve_scheme(path)
    with pytest.raises(ValueError, match="neither"):
        resolve_scheme(tmp_path / "missing.tab")
