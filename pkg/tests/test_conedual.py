"""Tests for cone families: construction, non-degeneracy, Lagrangian
compatibility, osculating bundles, the bracket-osculation condition, the
Cauchy-characteristic correction, and the induced splitting."""

import random
from fractions import Fraction

import pytest

from dist235.conedual import (
    BUILTIN_MODELS, ConeFamily, DirectionField, builtin_model,
    check_lagrangian, check_nondegenerate, check_osculating_condition,
    cone_frame, cone_generator, osculating, prolong_cone, solve_U,
)
from dist235.distduality import (
    Distribution235, StructureError, symbol_algebra_at,
    verify_pseudo_product,
)
from dist235.scalar import evaluate, is_zero, parse_expr, to_text
from dist235.vecfield import (
    Chart, ChartError, Frame, lie_bracket, pair, rank_at, reduce_mod,
)

TOL = 1e-9
SEED = 47110815

X_CHART = Chart(("x1", "x2", "x3", "x4", "x5"))
ALPHA = ("0", "-x3", "2*x2", "-x1", "1")


def family_from(a_text, b_text, s_text, name="family"):
    """Family in normal form with the compatible fifth component."""
    t_text = (f"x3*({a_text}) - 2*x2*({b_text}) + x1*({s_text})")
    return ConeFamily.build(X_CHART, (a_text, b_text, s_text, t_text),
                            ALPHA, name=name)


def compliant_bc(terms):
    """Example family from direction-only perturbations satisfying the
    integral relation: for b = sum beta*th^k the matching c has
    c = sum 3*(k-1)/(k+1) * beta * th^(k+1)."""
    b_parts, c_parts = [], []
    for beta, k in terms:
        b_parts.append(f"({beta})*th^{k}")
        coeff = Fraction(3 * (k - 1), k + 1) * Fraction(beta)
        c_parts.append(f"({coeff})*th^{k + 1}")
    b_text = " + ".join(b_parts) if b_parts else "0"
    c_text = " + ".join(c_parts) if c_parts else "0"
    return builtin_model("noncubic-bc", {"b": b_text, "c": c_text})


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

class TestConeFamilyBuild:
    def test_flat_family_builds_with_exact_annihilation(self):
        family = builtin_model("flat-cone")
        assert family.alpha_status == "provably-zero"
        assert family.z_chart.variables == \
            ("x1", "x2", "x3", "x4", "x5", "th")

    def test_non_contact_form_rejected(self):
        with pytest.raises(StructureError):
            ConeFamily.build(
                X_CHART, ("th", "th^2", "th^3", "0"),
                ("0", "0", "0", "0", "1"))

    def test_non_annihilating_form_rejected(self):
        # The compatible fifth component replaced by zero: the contact
        # form no longer annihilates the generator.
        with pytest.raises(StructureError):
            ConeFamily.build(
                X_CHART, ("th", "th^2", "th^3", "0"), ALPHA)

    def test_wrong_dimension_rejected(self):
        with pytest.raises(ChartError):
            ConeFamily.build(Chart(("x1", "x2", "x3")),
                             ("th", "th", "th", "th"), ("0", "0", "1"))

    def test_direction_name_collision_rejected(self):
        with pytest.raises(ChartError):
            ConeFamily.build(X_CHART, ("th", "th", "th", "th"), ALPHA,
                             theta="x1")

    def test_one_form_instance_accepted(self):
        from dist235.vecfield import OneForm
        alpha = OneForm(X_CHART, tuple(
            parse_expr(c, X_CHART.variables) for c in ALPHA))
        family = ConeFamily.build(
            X_CHART,
            ("th", "th^2", "th^3",
             "x3*th - 2*x2*th^2 + x1*th^3"), alpha)
        assert family.alpha is alpha


# ---------------------------------------------------------------------------
# the moving frame
# ---------------------------------------------------------------------------

class TestConeFrame:
    def test_flat_generator_components(self):
        family = builtin_model("flat-cone")
        zeta2 = cone_generator(family)
        assert [to_text(c) for c in zeta2.components] == [
            "1", "th", "th^2", "th^3",
            "x1*th^3 - 2*x2*th^2 + x3*th", "0"]

    def test_flat_first_derivative_matches_display(self):
        # Frozen: zeta3 = d2 + 2 th d3 + 3 th^2 d4
        #                + (x3 - 4 x2 th + 3 x1 th^2) d5.
        family = builtin_model("flat-cone")
        assert [to_text(c) for c in family.zeta(3).components] == [
            "0", "1", "2*th", "3*th^2",
            "3*x1*th^2 - 4*x2*th + x3", "0"]

    def test_frame_has_five_fields(self):
        family = builtin_model("flat-cone")
        frame = cone_frame(family)
        assert len(frame) == 5
        assert frame[0].components[5] == parse_expr("1", ())

    def test_third_derivative_is_constant_for_cubic(self):
        family = builtin_model("cubic-a", {"a": "x1"})
        zeta5 = family.zeta(5)
        assert [to_text(c) for c in zeta5.components] == [
            "0", "0", "0", "6", "6*x1", "0"]


# ---------------------------------------------------------------------------
# non-degeneracy
# ---------------------------------------------------------------------------

class TestNondegenerate:
    def test_flat_family_nondegenerate(self):
        assert check_nondegenerate(builtin_model("flat-cone"))

    def test_truncated_family_degenerate(self):
        # Without the cubic part the third derivative vanishes.
        family = family_from("th", "th^2", "0", name="truncated")
        assert not check_nondegenerate(family)

    def test_compliant_bc_family_nondegenerate(self):
        family = builtin_model("noncubic-bc",
                               {"b": "th^3", "c": "3/2*th^4"})
        assert check_nondegenerate(family)

    def test_off_base_point(self):
        family = builtin_model("flat-cone")
        probe = dict(family.base_point)
        probe["x2"] = Fraction(1, 8)
        probe["th"] = Fraction(-1, 4)
        assert check_nondegenerate(family, probe)


# ---------------------------------------------------------------------------
# Lagrangian compatibility
# ---------------------------------------------------------------------------

class TestLagrangian:
    def test_flat_family_passes_symbolically(self):
        report = check_lagrangian(builtin_model("flat-cone"))
        assert report.passed
        assert report.section is None
        assert [status for _, status, _ in report.checks] == \
            ["provably-zero"] * 3
        assert report.box.variables[-1] == "th"

    def test_flat_family_with_zero_section(self):
        report = check_lagrangian(builtin_model("flat-cone"),
                                  DirectionField.constant(0))
        assert report.passed
        assert report.section == "0"
        assert "th" not in report.box.variables

    def test_compliant_bc_random_constant_sections(self):
        family = builtin_model("noncubic-bc",
                               {"b": "th^3", "c": "3/2*th^4"})
        rng = random.Random(SEED)
        for _ in range(10):
            value = Fraction(rng.randint(-8, 8), 16)
            report = check_lagrangian(family,
                                      DirectionField.constant(value))
            assert report.passed

    def test_isotropy_failure_detected(self):
        # Quartic term in the fourth slot without a matching correction:
        # annihilation still holds by construction, isotropy does not.
        family = family_from("th", "th^2", "th^3 + th^4",
                             name="nonlagrangian")
        report = check_lagrangian(family)
        assert not report.passed
        names = [name for name, _, witness in report.checks if witness]
        assert names == ["tangent plane is isotropic"]

    def test_isotropy_quantity_matches_hand_formula(self):
        # Frozen by hand: the isotropy pairing of the generator with its
        # derivative equals 3*(A*B_th - B*A_th) - S_th, here -4*th^3.
        family = family_from("th", "th^2", "th^3 + th^4",
                             name="nonlagrangian")
        from dist235.vecfield import exterior_derivative
        d_alpha = exterior_derivative(family.lifted_alpha)
        quantity = pair(d_alpha, family.zeta(2), family.zeta(3))
        difference = family.z_chart.parse(
            f"({to_text(quantity)}) + 4*th^3")
        assert is_zero(difference, family.box,
                       family.z_chart.variables).status == "provably-zero"


# ---------------------------------------------------------------------------
# osculating bundles
# ---------------------------------------------------------------------------

class TestOsculating:
    def test_flat_ranks(self):
        data = osculating(builtin_model("flat-cone"))
        assert data.tangent_frame.rank == 2
        assert data.second_frame.rank == 3
        assert data.third_frame.rank == 4
        assert data.third_space_section_independent

    def test_flat_third_space_is_contact_kernel(self):
        family = builtin_model("flat-cone")
        data = osculating(family)
        x_base = family.x_part(family.base_point)
        for field_ in data.third_frame.fields:
            value = evaluate(pair(family.alpha, field_), x_base)
            assert value == 0

    def test_explicit_sections_agree_on_third_space(self):
        family = builtin_model("flat-cone")
        sections = (DirectionField.constant(0),
                    DirectionField.constant(Fraction(1, 8)),
                    DirectionField(parse_expr("x2 * 1/4",
                                              X_CHART.variables)))
        datas = [osculating(family, s) for s in sections]
        x_base = family.x_part(family.base_point)
        union = tuple(f for d in datas for f in d.third_frame.fields)
        assert rank_at(union, x_base) == 4

    def test_degenerate_family_names_failing_stage(self):
        family = family_from("th", "th^2", "0", name="truncated")
        with pytest.raises(StructureError, match="third osculating"):
            osculating(family)

    def test_section_outside_direction_interval_rejected(self):
        family = builtin_model("flat-cone")
        with pytest.raises(StructureError, match="interval"):
            osculating(family, DirectionField.constant(2))


# ---------------------------------------------------------------------------
# the bracket-osculation condition
# ---------------------------------------------------------------------------

class TestOsculatingCondition:
    def test_flat_family_passes_exactly(self):
        report = check_osculating_condition(builtin_model("flat-cone"))
        assert report.passed
        # the bracket vanishes identically: every coefficient is zero
        assert set(report.coefficients) == {"0"}

    def test_compliant_bc_passes(self):
        family = builtin_model("noncubic-bc",
                               {"b": "th^3", "c": "3/2*th^4"})
        report = check_osculating_condition(family)
        assert report.passed

    def test_violating_bc_fails_with_cubic_residual(self):
        # Frozen by hand: with b = th^3, c = th^4 the residual along the
        # completing direction is, up to the unit factor (3 th + 1)^2,
        # exactly c_th - (3 th b_th - 3 b) = -2 th^3.
        family = builtin_model("noncubic-bc", {"b": "th^3", "c": "th^4"})
        report = check_osculating_condition(family)
        assert not report.passed
        label, text, status, witness = report.residuals[1]
        assert status == "nonzero"
        assert witness is not None
        residual = family.z_chart.parse(text)
        target = family.z_chart.parse("-2*th^3")
        for point in family.box.sample_points(25):
            got = float(evaluate(residual, point, family.registry))
            want = float(evaluate(target, point, family.registry))
            assert abs(got - want) <= TOL

    def test_cubic_a_outcomes_recorded(self):
        # Computed outcome, not assumed: a identically zero passes; the
        # linear choice fails with the bracket equal to -1/2 times the
        # third derivative field.
        assert check_osculating_condition(
            builtin_model("flat-cone")).passed
        report = check_osculating_condition(
            builtin_model("cubic-a", {"a": "x1"}))
        assert not report.passed
        label, text, status, _ = report.residuals[0]
        assert "third derivative" in label
        assert status == "nonzero"
        from dist235.scalar import normalize
        difference = normalize(
            parse_expr(f"({text}) - (-1/2)", ("th",)), ("th",))
        assert to_text(difference) == "0"

    def test_cubic_a_bracket_is_half_fifth_frame_field(self):
        # The full decomposition for a = x1: [zeta2, zeta3] = -1/2 zeta5.
        family = builtin_model("cubic-a", {"a": "x1"})
        bracket = lie_bracket(family.zeta(2), family.zeta(3))
        half = family.zeta(5)
        for got, want in zip(bracket.components, half.components):
            difference = family.z_chart.parse(
                f"({to_text(got)}) + 1/2*({to_text(want)})")
            assert is_zero(difference, family.box,
                           family.z_chart.variables).status == \
                "provably-zero"

    def test_affine_reparametrization_invariance(self):
        # th -> lam*th + mu preserves the verdict (the curve of
        # directions is unchanged, only its parametrization moves).
        rng = random.Random(SEED + 1)
        cases = (("flat", ("th", "th^2", "th^3"), True),
                 ("bad-bc", ("th", "th^2 + th^3", "th^3 + th^4"), False))
        for _, comps, expected in cases:
            for _ in range(5):
                lam = Fraction(rng.choice((1, 2, -1, 3)),
                               rng.choice((1, 2)))
                mu = Fraction(rng.randint(-2, 2), 8)
                new_theta = f"(({lam})*th + ({mu}))"
                a_text, b_text, s_text = (
                    c.replace("th", new_theta) for c in comps)
                family = family_from(a_text, b_text, s_text,
                                     name="reparam")
                report = check_osculating_condition(family)
                assert report.passed == expected


# ---------------------------------------------------------------------------
# the correction scalar
# ---------------------------------------------------------------------------

class TestSolveU:
    def test_flat_correction_vanishes(self):
        result = solve_U(builtin_model("flat-cone"))
        assert to_text(result.expression) == "0"
        assert result.report.passed

    def test_shifted_flat_has_frozen_correction(self):
        # Frozen by hand: shifting the direction parameter by the second
        # coordinate gives the correction -(th + x2).
        family = family_from("th + x2", "(th + x2)^2", "(th + x2)^3",
                             name="shifted")
        result = solve_U(family)
        difference = family.z_chart.parse(
            f"({to_text(result.expression)}) + th + x2")
        assert is_zero(difference, family.box,
                       family.z_chart.variables).status == "provably-zero"

    def test_corrected_bracket_reduces_at_samples(self):
        family = builtin_model("noncubic-bc",
                               {"b": "th^3", "c": "3/2*th^4"})
        result = solve_U(family)
        low = Frame(family.z_chart,
                    (family.zeta(1), family.zeta(2), family.zeta(3)),
                    family.base_point, family.registry)
        bracket = lie_bracket(result.l_field, family.zeta(3))
        for point in family.box.sample_points(50):
            reduced = reduce_mod(bracket, low, point, TOL)
            assert reduced.member

    def test_failing_condition_blocks_solve(self):
        family = builtin_model("noncubic-bc", {"b": "th^3", "c": "th^4"})
        with pytest.raises(StructureError, match="no correction"):
            solve_U(family)


# ---------------------------------------------------------------------------
# the induced splitting
# ---------------------------------------------------------------------------

class TestProlongCone:
    def test_flat_structure_passes_everything(self):
        structure = prolong_cone(builtin_model("flat-cone"))
        report = verify_pseudo_product(structure, samples=20)
        assert report.valid
        assert symbol_algebra_at(structure).passed

    def test_compliant_bc_structure_valid(self):
        family = builtin_model("noncubic-bc",
                               {"b": "th^3", "c": "3/2*th^4"})
        structure = prolong_cone(family)
        report = verify_pseudo_product(structure, samples=20)
        assert report.valid
        assert symbol_algebra_at(structure).passed

    def test_shifted_flat_structure_valid(self):
        family = family_from("th + x2", "(th + x2)^2", "(th + x2)^3",
                             name="shifted")
        structure = prolong_cone(family)
        assert verify_pseudo_product(structure, samples=8).valid

    def test_symbol_algebra_off_base(self):
        structure = prolong_cone(builtin_model("flat-cone"))
        for point in structure.box.sample_points(3):
            assert symbol_algebra_at(structure, point).passed

    def test_failing_osculating_names_clause(self):
        with pytest.raises(StructureError, match="osculating"):
            prolong_cone(builtin_model("cubic-a", {"a": "x1"}))

    def test_failing_nondegeneracy_names_clause(self):
        family = family_from("th", "th^2", "0", name="truncated")
        with pytest.raises(StructureError, match="non-degeneracy"):
            prolong_cone(family)

    def test_failing_isotropy_names_clause(self):
        family = family_from("th", "th^2", "th^3 + th^4",
                             name="nonlagrangian")
        with pytest.raises(StructureError, match="Lagrangian"):
            prolong_cone(family)

    def test_k_line_is_fiber_direction(self):
        structure = prolong_cone(builtin_model("flat-cone"))
        vec = structure.k_field.evaluate_at(structure.base_point)
        assert tuple(vec) == (0, 0, 0, 0, 0, 1)


# ---------------------------------------------------------------------------
# bundled models
# ---------------------------------------------------------------------------

class TestBuiltinModels:
    def test_model_names(self):
        assert set(BUILTIN_MODELS) == {
            "flat-cone", "cubic-a", "noncubic-bc", "hilbert-cartan"}

    def test_flat_cone_equals_cubic_a_at_zero(self):
        flat = builtin_model("flat-cone")
        cubic = builtin_model("cubic-a", {"a": "0"})
        for lhs, rhs in zip(flat.components, cubic.components):
            difference = flat.z_chart.parse(
                f"({to_text(lhs)}) - ({to_text(rhs)})")
            assert is_zero(difference, flat.box,
                           flat.z_chart.variables).status == \
                "provably-zero"

    def test_hilbert_cartan_is_distribution(self):
        model = builtin_model("hilbert-cartan")
        assert isinstance(model, Distribution235)
        assert model.report.growth == (2, 3, 5)

    def test_low_order_b_rejected(self):
        with pytest.raises(StructureError, match="order"):
            builtin_model("noncubic-bc", {"b": "th^2", "c": "th^4"})

    def test_low_order_c_rejected(self):
        with pytest.raises(StructureError, match="order"):
            builtin_model("noncubic-bc", {"b": "th^3", "c": "th^3"})

    def test_order_bounds_inclusive(self):
        family = builtin_model("noncubic-bc",
                               {"b": "th^3", "c": "th^4"})
        assert family.name == "noncubic-bc"

    def test_cubic_a_requires_vanishing_at_origin(self):
        with pytest.raises(StructureError, match="vanish"):
            builtin_model("cubic-a", {"a": "x1 + 1"})

    def test_cubic_a_rejects_other_variables(self):
        with pytest.raises(StructureError, match="x1"):
            builtin_model("cubic-a", {"a": "x2"})

    def test_unknown_model_rejected(self):
        with pytest.raises(StructureError, match="unknown"):
            builtin_model("engel")

    def test_extraneous_params_rejected(self):
        with pytest.raises(StructureError):
            builtin_model("flat-cone", {"a": "0"})
        with pytest.raises(StructureError):
            builtin_model("hilbert-cartan", {"b": "0"})


# ---------------------------------------------------------------------------
# cubic-versus-noncubic invariants
# ---------------------------------------------------------------------------

class TestCubicInvariants:
    def test_cubic_family_fourth_derivative_vanishes(self):
        from dist235.scalar import differentiate
        family = builtin_model("cubic-a", {"a": "x1"})
        for comp in family.zeta(5).components:
            fourth = differentiate(comp, "th", family.z_chart.variables)
            assert to_text(fourth) == "0"

    def test_quartic_b_family_is_not_cubic(self):
        from dist235.scalar import differentiate
        family = builtin_model("noncubic-bc",
                               {"b": "th^3 + th^4", "c": "3/2*th^4"})
        nonzero = False
        for comp in family.zeta(5).components:
            fourth = differentiate(comp, "th", family.z_chart.variables)
            if to_text(fourth) != "0":
                nonzero = True
        assert nonzero


# ---------------------------------------------------------------------------
# seeded sweep over direction perturbations
# ---------------------------------------------------------------------------

class TestBCSweep:
    def test_compliant_pairs_pass(self):
        rng = random.Random(SEED + 2)
        for _ in range(12):
            terms = []
            for k in (3, 4, 5):
                beta = rng.randint(-2, 2)
                if beta:
                    terms.append((beta, k))
            if not terms:
                terms = [(1, 3)]
            family = compliant_bc(terms)
            assert check_osculating_condition(family).passed

    def test_detuned_pairs_fail(self):
        rng = random.Random(SEED + 3)
        for _ in range(12):
            beta = rng.choice((-2, -1, 1, 2))
            k = rng.choice((3, 4))
            # the matching c detuned by a higher-order term
            b_text = f"({beta})*th^{k}"
            coeff = Fraction(3 * (k - 1), k + 1) * Fraction(beta)
            delta = rng.choice((-1, 1))
            c_text = f"({coeff})*th^{k + 1} + ({delta})*th^6"
            detuned = builtin_model("noncubic-bc",
                                    {"b": b_text, "c": c_text})
            assert not check_osculating_condition(detuned).passed
