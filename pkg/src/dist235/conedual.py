"""Cone families inside a contact structure: non-degeneracy, Lagrangian
compatibility, osculating bundles, the Cauchy-characteristic correction,
and the induced splitting on the space of cone directions.

A family is stored in normal form: on a 5-dimensional chart with a
direction coordinate, the moving generator is

    zeta2 = d/dx1 + A d/dx2 + B d/dx3 + S d/dx4 + T d/dx5

with A, B, S, T scalar expressions in the base coordinates and the
direction coordinate.  Successive direction-derivatives zeta3, zeta4,
zeta5 describe the curve of directions to third order; the fiber field
zeta1 = d/d(theta) completes the picture on the 6-chart.  Radial scaling
is dropped throughout (cones are scale-invariant); it reappears only in
the path integration module.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

from . import linalg
from .boxes import Box, as_fraction
from .distduality import PseudoProductStructure, StructureError
from .scalar import (
    Const, Opaque, OpaqueRegistry, Pow, Prod, ScalarExpr, Sum,
    default_registry, differentiate, evaluate, free_variables, is_zero,
    min_degree, normalize, parse_expr, substitute, to_text,
)
from .vecfield import (
    Chart, ChartError, DegenerateFrameError, Frame, OneForm, VectorField,
    check_contact, coordinate_field, exterior_derivative, lie_bracket,
    pair, rank_at, reduce_mod, symbolic_decompose,
)

_SECTION_SEED = 94070


def _format_point(point: dict) -> str:
    return "(" + ", ".join(f"{k}={point[k]}" for k in point) + ")"


def _as_expr(value, variables, registry) -> ScalarExpr:
    if isinstance(value, ScalarExpr):
        return value
    if isinstance(value, str):
        return parse_expr(value, variables, registry)
    return Const(as_fraction(value))


# ---------------------------------------------------------------------------
# direction fields (sections of the direction bundle)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DirectionField:
    """A choice of cone direction over the base: theta = s(x)."""

    expr: ScalarExpr

    @classmethod
    def constant(cls, value) -> "DirectionField":
        return cls(Const(as_fraction(value)))

    def value_at(self, point: dict, registry=None):
        return evaluate(self.expr, point, registry)


# ---------------------------------------------------------------------------
# the family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConeFamily:
    """A one-parameter family of base directions in normal form, together
    with the contact form whose kernel contains every direction."""

    x_chart: Chart
    theta: str
    components: tuple  # (A, B, S, T) on the extended chart
    alpha: OneForm
    base_point: dict = field(compare=False)
    box: Box = field(compare=False)
    registry: OpaqueRegistry = field(compare=False)
    name: str = "cone-family"
    alpha_status: str = field(default="unchecked", compare=False)

    @classmethod
    def build(cls, x_chart: Chart, components: Sequence,
              alpha_components: Sequence, theta: str = "th",
              base_point: Optional[dict] = None, box: Optional[Box] = None,
              registry: Optional[OpaqueRegistry] = None,
              name: str = "cone-family") -> "ConeFamily":
        if registry is None:
            registry = default_registry()
        if x_chart.dimension != 5:
            raise ChartError("cone families live over a 5-dimensional "
                             "chart")
        if theta in x_chart.variables:
            raise ChartError(
                f"direction coordinate {theta!r} collides with a base "
                "coordinate")
        z_chart = x_chart.extend(theta)
        comps = tuple(
            normalize(_as_expr(c, z_chart.variables, registry),
                      z_chart.variables)
            for c in components)
        if len(comps) != 4:
            raise StructureError(
                "a family needs the four non-trivial generator components")
        if isinstance(alpha_components, OneForm):
            alpha = alpha_components
            if alpha.chart != x_chart:
                raise ChartError("contact form lives on the wrong chart")
        else:
            alpha = OneForm(x_chart, tuple(
                _as_expr(c, x_chart.variables, registry)
                for c in alpha_components))
        if base_point is None:
            base_point = z_chart.origin()
        if box is None:
            x_part = {v: base_point[v] for v in x_chart.variables}
            box = Box(Box.around(x_part, Fraction(1, 4)).intervals
                      + ((theta,
                          as_fraction(base_point[theta]) - Fraction(1, 2),
                          as_fraction(base_point[theta]) + Fraction(1, 2)),))

        family = cls(x_chart=x_chart, theta=theta, components=comps,
                     alpha=alpha, base_point=base_point, box=box,
                     registry=registry, name=name)

        x_base = {v: base_point[v] for v in x_chart.variables}
        if not check_contact(alpha, x_base, registry=registry):
            raise StructureError(
                f"{name}: the one-form is not contact at the base point")
        annihilation = pair(family.lifted_alpha, family.zeta(2))
        verdict = is_zero(annihilation, box, family.z_chart.variables,
                          registry)
        if verdict.status == "nonzero":
            raise StructureError(
                f"{name}: the contact form does not annihilate the "
                f"directions; value {verdict.value} at "
                f"{_format_point(verdict.witness)}")
        object.__setattr__(family, "alpha_status", verdict.status)
        return family

    @property
    def z_chart(self) -> Chart:
        return self.x_chart.extend(self.theta)

    @property
    def lifted_alpha(self) -> OneForm:
        return OneForm(self.z_chart,
                       tuple(c for c in self.alpha.components)
                       + (Const(Fraction(0)),))

    def zeta(self, k: int) -> VectorField:
        """zeta1 is the direction-coordinate field; zeta2 the moving
        generator; zeta(k+1) its k-th direction-derivative."""
        return self._zetas[k - 1]

    @property
    def _zetas(self) -> tuple:
        cached = self.__dict__.get("_zeta_cache")
        if cached is not None:
            return cached
        z_chart = self.z_chart
        zeta1 = coordinate_field(z_chart, self.theta).renamed("zeta1")
        comps = (Const(Fraction(1)),) + self.components + (
            Const(Fraction(0)),)
        fields = [zeta1, VectorField(z_chart, comps, "zeta2")]
        for k in (3, 4, 5):
            prev = fields[-1]
            fields.append(VectorField(
                z_chart,
                tuple(differentiate(c, self.theta, z_chart.variables,
                                    self.registry)
                      for c in prev.components),
                f"zeta{k}"))
        cached = tuple(fields)
        self.__dict__["_zeta_cache"] = cached
        return cached

    def x_part(self, point: dict) -> dict:
        return {v: point[v] for v in self.x_chart.variables}

    def section_field(self, k: int, section: DirectionField) -> VectorField:
        """The base-chart field obtained from zeta(k) by substituting the
        section for the direction coordinate (the fiber slot is zero)."""
        mapping = {self.theta: section.expr}
        comps = tuple(
            normalize(substitute(c, mapping), self.x_chart.variables)
            for c in self.zeta(k).components[:5])
        return VectorField(self.x_chart, comps,
                           f"{self.zeta(k).name}@s")


def cone_generator(family: ConeFamily) -> VectorField:
    """The moving generator zeta2 of the family."""
    return family.zeta(2)


def cone_frame(family: ConeFamily) -> tuple:
    """(zeta1, ..., zeta5): the fiber field, the generator, and its first
    three direction-derivatives."""
    return tuple(family.zeta(k) for k in range(1, 6))


# ---------------------------------------------------------------------------
# non-degeneracy
# ---------------------------------------------------------------------------

def check_nondegenerate(family: ConeFamily, point: Optional[dict] = None,
                        samples: int = 8,
                        rtol: float = linalg.FLOAT_RTOL) -> bool:
    """True when the generator and its three direction-derivatives have
    rank 4 at the point and along sampled directions through it.

    Equivalently: the curve of directions is non-degenerate (no
    osculating subspace collapses) near the point.
    """
    if point is None:
        point = family.base_point
    fields = tuple(family.zeta(k) for k in (2, 3, 4, 5))
    lo, hi = family.box.bounds(family.theta)
    theta_values = [point[family.theta]]
    for i in range(samples):
        theta_values.append(lo + (hi - lo) * Fraction(2 * i + 1,
                                                      2 * samples))
    for theta in theta_values:
        probe = dict(point)
        probe[family.theta] = theta
        if rank_at(fields, probe, rtol, family.registry) != 4:
            return False
    return True


# ---------------------------------------------------------------------------
# Lagrangian compatibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LagrangianReport:
    """Outcome of the isotropy checks for the family's tangent planes.

    With no section given the checks run symbolically in the direction
    coordinate, certifying every section at once over `box`; with a
    section they run on the base chart after substitution.  The box the
    certificate refers to is always recorded.
    """

    passed: bool
    checks: tuple          # (name, status, witness text or None)
    box: Box = field(compare=False)
    section: Optional[str] = None

    def __bool__(self):
        return self.passed


def check_lagrangian(family: ConeFamily,
                     section: Optional[DirectionField] = None,
                     box: Optional[Box] = None) -> LagrangianReport:
    """Check that the plane spanned by the generator and its first
    direction-derivative is annihilated by the contact form and isotropic
    for its exterior derivative."""
    registry = family.registry
    alpha = family.lifted_alpha
    d_alpha = exterior_derivative(alpha, registry)
    zeta2, zeta3 = family.zeta(2), family.zeta(3)
    quantities = (
        ("contact form annihilates the generator", pair(alpha, zeta2)),
        ("contact form annihilates the derivative direction",
         pair(alpha, zeta3)),
        ("tangent plane is isotropic", pair(d_alpha, zeta2, zeta3)),
    )
    if section is None:
        check_box = box if box is not None else family.box
        variables = family.z_chart.variables
        exprs = quantities
        section_text = None
    else:
        x_box = (box if box is not None
                 else Box(tuple(iv for iv in family.box.intervals
                                if iv[0] != family.theta)))
        check_box = x_box
        variables = family.x_chart.variables
        mapping = {family.theta: section.expr}
        exprs = tuple((name, normalize(substitute(q, mapping), variables))
                      for name, q in quantities)
        section_text = to_text(section.expr)

    checks = []
    passed = True
    for name, expr in exprs:
        verdict = is_zero(expr, check_box, variables, registry)
        witness = None
        if verdict.status == "nonzero":
            passed = False
            witness = (f"value {verdict.value} at "
                       f"{_format_point(verdict.witness)}")
        checks.append((name, verdict.status, witness))
    return LagrangianReport(passed=passed, checks=tuple(checks),
                            box=check_box, section=section_text)


# ---------------------------------------------------------------------------
# osculating bundles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OsculatingData:
    """Frames of the tangent plane along a section and of its second and
    third osculating spaces at a base point, plus the verdict that the
    third space does not depend on the chosen section."""

    tangent_frame: Frame
    second_frame: Frame
    third_frame: Frame
    point: tuple
    section: str
    third_space_section_independent: bool
    witnesses: tuple = ()


_OSCULATING_STAGES = (
    ("tangent plane", 2),
    ("second osculating space", 3),
    ("third osculating space", 4),
)


def osculating(family: ConeFamily,
               section: Optional[DirectionField] = None,
               point: Optional[dict] = None) -> OsculatingData:
    """Build the frames of the tangent plane and osculating spaces along
    a section, verifying ranks 2, 3, 4 at the point and checking that the
    third osculating space is independent of the section."""
    registry = family.registry
    if section is None:
        section = DirectionField.constant(
            family.base_point[family.theta])
    if point is None:
        point = family.x_part(family.base_point)
    lo, hi = family.box.bounds(family.theta)
    s_value = section.value_at(point, registry)
    if not (float(lo) <= float(s_value) <= float(hi)):
        raise StructureError(
            f"section value {s_value} leaves the direction interval "
            f"[{lo}, {hi}]")

    fields = [family.section_field(k, section) for k in (2, 3, 4, 5)]
    frames = []
    for (stage_name, expected), count in zip(_OSCULATING_STAGES, (2, 3, 4)):
        stage_fields = tuple(fields[:count])
        achieved = rank_at(stage_fields, point, registry=registry)
        if achieved != expected:
            raise StructureError(
                f"{stage_name} has rank {achieved}, expected {expected} "
                f"at {_format_point(point)}")
        frames.append(Frame(family.x_chart, stage_fields, point, registry))

    # The third osculating space must not depend on the section: adding
    # the frames of a handful of deterministic alternative sections must
    # not raise the rank above 4.
    rng = random.Random(_SECTION_SEED)
    witnesses = []
    independent = True
    span = float(hi - lo)
    for case in range(5):
        if case < 3:
            offset = Fraction(rng.randint(-4, 4), 16)
            alt = DirectionField(Const(
                as_fraction(lo + hi) / 2 + offset * as_fraction(span)))
        else:
            coeff = Fraction(rng.randint(-2, 2), 8)
            alt = DirectionField(parse_expr(
                f"({as_fraction(lo + hi) / 2}) + ({coeff}) * "
                f"{family.x_chart.variables[1]}",
                family.x_chart.variables))
        alt_fields = tuple(family.section_field(k, alt)
                           for k in (2, 3, 4, 5))
        union_rank = rank_at(frames[2].fields + alt_fields, point,
                             registry=registry)
        if union_rank != 4:
            independent = False
            witnesses.append(
                f"section {to_text(alt.expr)} moves the third osculating "
                f"space (union rank {union_rank})")
    return OsculatingData(
        tangent_frame=frames[0], second_frame=frames[1],
        third_frame=frames[2], point=tuple(sorted(point.items())),
        section=to_text(section.expr),
        third_space_section_independent=independent,
        witnesses=tuple(witnesses))


# ---------------------------------------------------------------------------
# the osculating condition and the Cauchy-characteristic correction
# ---------------------------------------------------------------------------

def _full_frame(family: ConeFamily) -> tuple:
    """(fields, complement): the five zetas completed to a 6-frame by the
    first coordinate field keeping full rank at the base point."""
    zetas = cone_frame(family)
    for var in reversed(family.x_chart.variables):
        candidate = coordinate_field(family.z_chart, var)
        if rank_at(zetas + (candidate,), family.base_point,
                   registry=family.registry) == 6:
            return zetas + (candidate,), candidate
    raise DegenerateFrameError(
        "no coordinate field completes the direction frame at the base "
        "point")


@dataclass(frozen=True)
class OsculatingConditionReport:
    """Verdict of the bracket-osculation condition: the bracket of the
    generator with its derivative must stay in the span of the fiber
    field, the generator, and its first two derivatives, identically.

    The two residual coefficients (along the third derivative and along
    the completing coordinate direction) are recorded as expressions with
    their zero-check statuses; a failure carries a pointwise witness.
    """

    passed: bool
    residuals: tuple       # (label, expression text, status, witness)
    coefficients: tuple = field(compare=False, default=())
    box: Optional[Box] = field(compare=False, default=None)

    def __bool__(self):
        return self.passed


@lru_cache(maxsize=64)
def _bracket_decomposition(family: ConeFamily):
    """Coefficients of [zeta2, zeta3] over the completed 6-frame."""
    fields, complement = _full_frame(family)
    bracket = lie_bracket(family.zeta(2), family.zeta(3), family.registry)
    coeffs = symbolic_decompose(bracket, fields, family.base_point,
                                family.registry)
    return coeffs, complement


def check_osculating_condition(family: ConeFamily,
                               box: Optional[Box] = None
                               ) -> OsculatingConditionReport:
    """Check [zeta2, zeta3] = 0 modulo (zeta1, zeta2, zeta3, zeta4)
    identically over the box.

    This single identity on the direction space discharges the
    section-wise condition for every direction field at once.
    """
    box = box if box is not None else family.box
    coeffs, complement = _bracket_decomposition(family)
    labels = ("coefficient along the third derivative direction",
              f"coefficient along {complement.name}")
    residuals = []
    passed = True
    for label, expr in zip(labels, coeffs[4:6]):
        verdict = is_zero(expr, box, family.z_chart.variables,
                          family.registry)
        witness = None
        if verdict.status == "nonzero":
            passed = False
            witness = (f"value {verdict.value} at "
                       f"{_format_point(verdict.witness)}")
        residuals.append((label, to_text(expr), verdict.status, witness))
    return OsculatingConditionReport(
        passed=passed, residuals=tuple(residuals),
        coefficients=tuple(to_text(c) for c in coeffs), box=box)


@dataclass(frozen=True)
class SolveUResult:
    """The correction scalar making the generator a Cauchy characteristic
    of the derived plane field, with the corrected generator."""

    expression: ScalarExpr
    l_field: VectorField
    k_field: VectorField
    report: OsculatingConditionReport


def solve_U(family: ConeFamily, self_check_samples: int = 20,
            rtol: float = linalg.FLOAT_RTOL) -> SolveUResult:
    """Solve for U with [zeta2 + U*zeta1, zeta3] = 0 modulo
    (zeta1, zeta2, zeta3).

    Since [zeta1, zeta3] is exactly zeta4, U is the negated
    fourth-frame coefficient of [zeta2, zeta3]; existence requires the
    osculating condition (the residual coefficients vanish).
    """
    report = check_osculating_condition(family)
    if not report.passed:
        details = "; ".join(w for _, _, _, w in report.residuals if w)
        raise StructureError(
            f"{family.name}: no correction scalar exists, the bracket "
            f"leaves the osculating span ({details})")
    coeffs, _ = _bracket_decomposition(family)
    z_vars = family.z_chart.variables
    u_expr = normalize(Prod((Const(Fraction(-1)), coeffs[3])), z_vars)
    zeta1, zeta2 = family.zeta(1), family.zeta(2)
    l_field = VectorField(
        family.z_chart,
        tuple(normalize(Sum((c2, Prod((u_expr, c1)))), z_vars)
              for c1, c2 in zip(zeta1.components, zeta2.components)),
        "L")
    # Self-check: the corrected generator's bracket with zeta3 reduces
    # into (zeta1, zeta2, zeta3) at sample points.
    low_frame = Frame(family.z_chart,
                      (zeta1, zeta2, family.zeta(3)),
                      family.base_point, family.registry)
    corrected_bracket = lie_bracket(l_field, family.zeta(3),
                                    family.registry)
    for point in family.box.sample_points(self_check_samples):
        result = reduce_mod(corrected_bracket, low_frame, point, rtol,
                            family.registry)
        if not result.member:
            raise StructureError(
                "correction self-check failed: the corrected bracket "
                f"leaves the low span at {_format_point(point)}")
    return SolveUResult(expression=u_expr, l_field=l_field,
                        k_field=zeta1.renamed("K"), report=report)


# ---------------------------------------------------------------------------
# the induced splitting
# ---------------------------------------------------------------------------

def prolong_cone(family: ConeFamily) -> PseudoProductStructure:
    """Build the splitting of the direction-space plane field: K is the
    fiber line, L the corrected generator line.

    Preconditions (each failure names its clause): the family must be
    non-degenerate, Lagrangian-compatible, and satisfy the osculating
    condition.
    """
    if not check_nondegenerate(family):
        raise StructureError(
            f"{family.name}: cannot build the splitting, the "
            "non-degeneracy check fails")
    lagrange = check_lagrangian(family)
    if not lagrange.passed:
        failing = [name for name, _, witness in lagrange.checks if witness]
        raise StructureError(
            f"{family.name}: cannot build the splitting, the Lagrangian "
            f"compatibility fails ({', '.join(failing)})")
    try:
        solved = solve_U(family)
    except StructureError as exc:
        raise StructureError(
            f"{family.name}: cannot build the splitting, the osculating "
            f"condition fails: {exc}") from exc
    return PseudoProductStructure.build(
        family.z_chart, (family.zeta(1), family.zeta(2)),
        solved.k_field, solved.l_field, family.base_point, family.box,
        family.registry, name=family.name)


# ---------------------------------------------------------------------------
# bundled models
# ---------------------------------------------------------------------------

_X_CHART = Chart(("x1", "x2", "x3", "x4", "x5"))
_ALPHA = ("0", "-x3", "2*x2", "-x1", "1")
_BASE_CHART = Chart(("x", "y", "y1", "y2", "z"))

BUILTIN_MODELS = ("flat-cone", "cubic-a", "noncubic-bc", "hilbert-cartan")


def builtin_model(name: str, params: Optional[dict] = None,
                  registry: Optional[OpaqueRegistry] = None):
    """Construct a bundled model family by name.

    * ``flat-cone``: the homogeneous cubic family (all parameters zero).
    * ``cubic-a``: cubic family driven by a function of the first base
      coordinate (parameter ``a``, vanishing at 0).
    * ``noncubic-bc``: family perturbed by functions of the direction
      (parameters ``b``, ``c`` with lowest orders at least 3 and 4).
    * ``hilbert-cartan``: the flat growth-(2,3,5) plane field (returns a
      distribution, not a cone family).
    """
    from .distduality import Distribution235

    if registry is None:
        registry = default_registry()
    params = dict(params or {})

    if name == "hilbert-cartan":
        if params:
            raise StructureError("this model takes no parameters")
        eta1 = VectorField(_BASE_CHART, tuple(
            parse_expr(text, _BASE_CHART.variables, registry)
            for text in ("1", "y1", "y2", "0", "y2^2")), "eta1")
        eta2 = VectorField(_BASE_CHART, tuple(
            parse_expr(text, _BASE_CHART.variables, registry)
            for text in ("0", "0", "0", "1", "0")), "eta2")
        return Distribution235(_BASE_CHART, eta1, eta2,
                               _BASE_CHART.origin(), registry=registry,
                               name=name)

    z_vars = _X_CHART.variables + ("th",)
    if name in ("flat-cone", "cubic-a"):
        if name == "flat-cone":
            if params:
                raise StructureError("this model takes no parameters")
            a = Const(Fraction(0))
        else:
            if set(params) != {"a"}:
                raise StructureError(
                    "this model takes exactly the parameter 'a'")
            a = _as_expr(params["a"], z_vars, registry)
            extra = _free_outside(a, ("x1",))
            if extra:
                raise StructureError(
                    f"parameter 'a' may only involve x1, found {extra}")
            origin_value = evaluate(a, {"x1": Fraction(0)}, registry)
            if isinstance(origin_value, Fraction):
                if origin_value != 0:
                    raise StructureError(
                        "parameter 'a' must vanish at the base point")
            elif abs(float(origin_value)) > 1e-12:
                raise StructureError(
                    "parameter 'a' must vanish at the base point")
        a_text = to_text(a)
        comp_a = "th"
        comp_b = f"th^2 + ({a_text})"
        comp_s = f"th^3 - 3*th*({a_text})"
        comp_t = (f"x3*th - 2*x2*(th^2 + ({a_text})) "
                  f"+ x1*(th^3 - 3*th*({a_text}))")
        return ConeFamily.build(
            _X_CHART, (comp_a, comp_b, comp_s, comp_t), _ALPHA,
            registry=registry, name=name)

    if name == "noncubic-bc":
        if set(params) != {"b", "c"}:
            raise StructureError(
                "this model takes exactly the parameters 'b' and 'c'")
        b = _as_expr(params["b"], z_vars, registry)
        c = _as_expr(params["c"], z_vars, registry)
        for label, expr, bound in (("b", b, 3), ("c", c, 4)):
            extra = _free_outside(expr, ("th",))
            if extra:
                raise StructureError(
                    f"parameter {label!r} may only involve the direction "
                    f"coordinate, found {extra}")
            order = _polynomial_order(expr)
            if order is not None and order < bound:
                raise StructureError(
                    f"parameter {label!r} has lowest order {order}, "
                    f"need at least {bound}")
        b_text, c_text = to_text(b), to_text(c)
        comp_a = "th"
        comp_b = f"th^2 + ({b_text})"
        comp_s = f"th^3 + ({c_text})"
        comp_t = (f"x3*th - 2*x2*(th^2 + ({b_text})) "
                  f"+ x1*(th^3 + ({c_text}))")
        return ConeFamily.build(
            _X_CHART, (comp_a, comp_b, comp_s, comp_t), _ALPHA,
            registry=registry, name=name)

    raise StructureError(
        f"unknown model {name!r}; available: {', '.join(BUILTIN_MODELS)}")


def _free_outside(expr: ScalarExpr, allowed: tuple) -> tuple:
    return tuple(sorted(free_variables(expr) - set(allowed)))


def _non_polynomial(expr: ScalarExpr) -> bool:
    """True when the tree contains opaque calls or negative powers, i.e.
    when a lowest-order count on the numerator would be unreliable."""
    if isinstance(expr, Opaque):
        return True
    if isinstance(expr, Pow):
        return expr.exponent < 0 or _non_polynomial(expr.base)
    if isinstance(expr, Sum):
        return any(_non_polynomial(t) for t in expr.terms)
    if isinstance(expr, Prod):
        return any(_non_polynomial(f) for f in expr.factors)
    return False


def _polynomial_order(expr: ScalarExpr) -> Optional[int]:
    """Lowest order in the direction coordinate for polynomial input;
    None when the expression is not plainly polynomial (no order
    constraint is enforced then) or is identically zero."""
    if _non_polynomial(expr):
        return None
    return min_degree(expr, "th", ("th",))
