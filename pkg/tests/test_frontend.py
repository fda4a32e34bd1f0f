"""Surface syntax: parsing, resolution errors, canonical rendering."""

from fractions import Fraction
from pathlib import Path

import pytest

from artifact.frontend import (
    ParseError,
    dump_database,
    load_database,
    parse_condition,
    parse_property,
    parse_spec,
    parse_spec_source,
    render_condition,
    render_property,
    render_spec,
)
from artifact.model import (
    And,
    CmpOp,
    Eq,
    Exists,
    Implies,
    LinCmp,
    LinExpr,
    NULL,
    Not,
    Num,
    Or,
    RelAtom,
    SetAtom,
    Sort,
    TRUE,
    Var,
)
from artifact.property_ast import (
    ChildFormula,
    CondAtom,
    LtlAtom,
    LtlF,
    LtlG,
    LtlImplies,
    LtlNot,
    LtlU,
    LtlW,
    LtlX,
    Obs,
    ServiceAtom,
)

FIXTURES = Path(__file__).parent / "fixtures"

ENV = {
    "x": Sort.REAL,
    "y": Sort.REAL,
    "a": Sort.ID,
    "b": Sort.ID,
}


def cond(text, **kw):
    return parse_condition(text, ENV, **kw)


# ---------------------------------------------------------------------------
# Conditions
# ---------------------------------------------------------------------------


class TestConditionParsing:
    def test_precedence(self):
        c = cond("x = 1 or x = 2 and y = 3")
        assert isinstance(c, Or)
        assert isinstance(c.items[1], And)

    def test_implies_right_associative(self):
        c = cond("x = 1 implies x = 2 implies y = 3")
        assert isinstance(c, Implies)
        assert isinstance(c.rhs, Implies)

    def test_id_equalities(self):
        assert cond("a = b") == Eq(Var("a"), Var("b"))
        assert cond("a != null") == Not(Eq(Var("a"), NULL))
        assert cond("null = null") == Eq(NULL, NULL)

    def test_numeric_comparisons(self):
        assert cond("x = y") == LinCmp(CmpOp.EQ, LinExpr.build({"x": 1, "y": -1}))
        assert cond("x + 2*y <= 3/2") == LinCmp(
            CmpOp.LE, LinExpr.build({"x": 1, "y": 2}, Fraction(-3, 2))
        )
        assert cond("2 < x") == LinCmp(CmpOp.LT, LinExpr.build({"x": -1}, 2))
        assert cond("x != 0") == LinCmp(CmpOp.NE, LinExpr.var("x"))

    def test_unary_minus_and_constants(self):
        assert cond("x = -1") == LinCmp(CmpOp.EQ, LinExpr.build({"x": 1}, 1))
        assert cond("x = Paid", constants={"Paid": Fraction(1)}) == LinCmp(
            CmpOp.EQ, LinExpr.build({"x": 1}, -1)
        )

    def test_parenthesized_arithmetic_vs_condition(self):
        assert cond("(x + 1) = y") == LinCmp(
            CmpOp.EQ, LinExpr.build({"x": 1, "y": -1}, 1)
        )
        c = cond("(x = 1 and y = 2)")
        assert isinstance(c, And)

    def test_exists_maximal_scope(self):
        c = cond("x = 1 and exists k: ID . a = k and x = 2")
        assert isinstance(c, And)
        ex = c.items[1]
        assert isinstance(ex, Exists)
        assert isinstance(ex.body, And)

    def test_nonlinear_product_rejected(self):
        with pytest.raises(ParseError, match="nonlinear"):
            cond("x * y = 1")

    def test_null_arithmetic_rejected(self):
        with pytest.raises(ParseError, match="null"):
            cond("null + 1 = x")

    def test_id_in_arithmetic_rejected(self):
        with pytest.raises(ParseError, match="identifier"):
            cond("a + 1 = x")

    def test_id_ordering_rejected(self):
        with pytest.raises(ParseError, match="= and !="):
            cond("a < b")

    def test_sort_mismatch_rejected(self):
        with pytest.raises(ParseError, match="sort"):
            cond("a = 3")

    def test_unknown_name(self):
        with pytest.raises(ParseError, match="unknown variable"):
            cond("ghost = 1")

    def test_reserved_binder(self):
        with pytest.raises(ParseError, match="reserved"):
            cond("exists null: ID . x = 1")

    def test_shadowing_rejected(self):
        with pytest.raises(ParseError, match="shadows"):
            cond("exists x: REAL . x = 1")

    def test_error_positions(self):
        with pytest.raises(ParseError) as exc:
            parse_condition("x =\n  ghost", {"x": Sort.REAL})
        assert exc.value.line == 2
        assert exc.value.col == 3


class TestConditionRendering:
    CASES = [
        "x = 1 and (a != null or x + 2*y <= 3/2)",
        "not (x = 1 and y = 2)",
        "x = 1 implies (exists k: ID, w: REAL . R(k, w) and w = x)",
        "(x = 1 implies y = 2) implies x = 3",
        "x + 1 = y - 2",
        "0 <= x - 2",
        "2*x = 1/3",
        "null = null",
    ]

    @pytest.mark.parametrize("text", CASES)
    def test_round_trip(self, text):
        from artifact.model import Relation, Schema

        schema = Schema((Relation("R", "id", ("w",), ()),))
        first = parse_condition(text, ENV, schema=schema)
        rendered = render_condition(first)
        again = parse_condition(rendered, ENV, schema=schema)
        assert again == first, rendered


# ---------------------------------------------------------------------------
# Specifications
# ---------------------------------------------------------------------------


class TestSpecParsing:
    def test_travel_shape(self):
        spec = parse_spec((FIXTURES / "travel.has").read_text())
        assert [t.name for t in spec.tasks] == [
            "ManageTrips",
            "AddFlight",
            "AddHotel",
            "AlsoBookHotel",
            "BookInitialTrip",
            "Cancel",
        ]
        root = spec.task("ManageTrips")
        assert [l.child for l in root.children] == [
            "AddFlight",
            "AddHotel",
            "BookInitialTrip",
            "Cancel",
        ]
        assert root.child_link("AddHotel").f_in == (
            ("flight_id", "flight_id"),
            ("status", "status"),
            ("amount_paid", "amount_paid"),
        )
        assert root.child_link("Cancel").f_out == (("status", "status"),)
        assert dict(spec.constants)["FlightCanceled"] == 3

    def test_booking_payment_has_five_quantifiers(self):
        spec = parse_spec((FIXTURES / "travel.has").read_text())
        post = spec.task("BookInitialTrip").service("Pay").post
        depth = 0
        node = post
        while isinstance(node, Exists):
            depth += len(node.bound)
            node = node.body
        assert depth == 5

    def test_closing_conditions_resolve_in_child_scope(self):
        spec = parse_spec((FIXTURES / "travel.has").read_text())
        closing = spec.task("AlsoBookHotel").closing_pre
        assert closing == LinCmp(
            CmpOp.EQ, LinExpr.build({"hotel_amount_paid": 1, "hotel_price": -1})
        )

    def test_spec_round_trip(self):
        for name in ("travel.has", "travel_fixed.has"):
            spec = parse_spec((FIXTURES / name).read_text(), source=name)
            assert parse_spec(render_spec(spec)) == spec

    def test_source_spans(self):
        spec, src = parse_spec_source((FIXTURES / "travel.has").read_text())
        pos = src.position_of("task Cancel, service CancelFlight (pre)")
        assert pos is not None
        line, col = pos
        assert line > 1

    def test_root_inference_failure(self):
        text = """
        schema { relation R { id: ID; } }
        task A { vars x: ID; child B { open-pre: true; close-pre: true; } }
        task B { vars y: ID; child A { open-pre: true; close-pre: true; } }
        """
        with pytest.raises(ParseError, match="exactly one root"):
            parse_spec(text)

    def test_two_parents_rejected(self):
        text = """
        schema { relation R { id: ID; } }
        task A {
          vars x: ID;
          child C { open-pre: true; close-pre: true; }
          child B { open-pre: true; close-pre: true; }
        }
        task B { vars y: ID; child C { open-pre: true; close-pre: true; } }
        task C { vars z: ID; }
        """
        with pytest.raises(ParseError, match="child of both"):
            parse_spec(text)

    def test_unknown_set_in_update(self):
        text = """
        schema { relation R { id: ID; } }
        task A {
          vars x: ID;
          set S(x);
          service w { pre: true; post: true; update: +Other; }
        }
        """
        with pytest.raises(ParseError, match="unknown artifact set"):
            parse_spec(text)

    def test_opening_resolves_in_parent_scope(self):
        text = """
        schema { relation R { id: ID; } }
        task A {
          vars x: ID;
          child B { open-pre: q != null; close-pre: true; }
        }
        task B { vars q: ID; }
        """
        with pytest.raises(ParseError, match="unknown variable"):
            parse_spec(text)

    def test_attribute_order_enforced(self):
        text = """
        schema { relation R { id: ID; ref: -> R; v: REAL; } }
        task A { vars x: ID; }
        """
        with pytest.raises(ParseError, match="precede foreign keys"):
            parse_spec(text)


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------


class TestPropertyParsing:
    def spec(self):
        return parse_spec((FIXTURES / "travel.has").read_text())

    def test_discount_property_shape(self):
        spec = self.spec()
        prop = parse_property((FIXTURES / "discount.hltl").read_text(), spec)
        assert prop.root_task == "ManageTrips"
        assert prop.globals_ == ()
        f = prop.formula
        assert isinstance(f, LtlImplies)
        assert isinstance(f.lhs, LtlF)
        lhs_atom = f.lhs.body
        assert isinstance(lhs_atom, LtlAtom)
        assert isinstance(lhs_atom.atom, ChildFormula)
        assert lhs_atom.atom.child == "AddHotel"
        assert isinstance(f.rhs, LtlG)

    def test_condition_scope_switches_inside_child_formula(self):
        spec = self.spec()
        prop = parse_property(
            "property ManageTrips { [ F {amount_refunded = 0} ]Cancel }", spec
        )
        atom = prop.formula
        assert isinstance(atom, LtlAtom)
        inner = atom.atom
        assert isinstance(inner, ChildFormula)

    def test_parent_scope_var_invisible_in_child(self):
        with pytest.raises(ParseError, match="unknown variable"):
            parse_property(
                "property ManageTrips { [ F {amount_paid = 0} ]AddFlight }",
                self.spec(),
            )

    def test_until_and_weak_until(self):
        spec = self.spec()
        prop = parse_property(
            "property ManageTrips { X opened U closed W svc(StoreTrip) }", spec
        )
        f = prop.formula
        assert isinstance(f, LtlU)
        assert isinstance(f.lhs, LtlX)
        assert isinstance(f.rhs, LtlW)

    def test_set_atoms_use_globals(self):
        spec = self.spec()
        prop = parse_property(
            "forall y1: ID, y2: ID;\nproperty ManageTrips { G {not TRIPS(y1, y2)} }",
            spec,
        )
        g = prop.formula
        assert isinstance(g, LtlG)
        c = g.body.atom.cond
        assert c == Not(SetAtom("ManageTrips", (Var("y1"), Var("y2"))))

    def test_set_atom_args_must_be_globals(self):
        with pytest.raises(ParseError, match="quantified property variables"):
            parse_property(
                "property ManageTrips { G {not TRIPS(flight_id, hotel_id)} }",
                self.spec(),
            )

    def test_unknown_service(self):
        with pytest.raises(ParseError, match="no internal service"):
            parse_property("property ManageTrips { F svc(Ghost) }", self.spec())

    def test_child_formula_must_name_a_child(self):
        with pytest.raises(ParseError, match="not a child"):
            parse_property(
                "property ManageTrips { [ F opened ]AlsoBookHotel }", self.spec()
            )

    def test_anchor_must_be_root(self):
        with pytest.raises(ParseError, match="root task"):
            parse_property("property Cancel { F opened }", self.spec())

    def test_property_round_trip(self):
        spec = self.spec()
        cases = [
            (FIXTURES / "discount.hltl").read_text(),
            "forall y1: ID, y2: ID;\nproperty ManageTrips { G {not TRIPS(y1, y2)} }",
            "property ManageTrips { not (opened U (closed or X false)) }",
            "property ManageTrips { F [ G {hotel_price >= 0} W closed ]AddHotel }",
            "property ManageTrips { (opened U closed) U svc(StoreTrip) }",
        ]
        for text in cases:
            prop = parse_property(text, spec)
            rendered = render_property(prop, spec)
            assert parse_property(rendered, spec) == prop, rendered


# ---------------------------------------------------------------------------
# Databases
# ---------------------------------------------------------------------------


class TestDatabaseFiles:
    def test_load_travel(self):
        spec = parse_spec((FIXTURES / "travel.has").read_text())
        db = load_database((FIXTURES / "travel_db.json").read_text(), spec.schema)
        rows = db.rows_of("FLIGHTS")
        assert len(rows) == 2
        assert rows[0][1] == Fraction(300)
        assert rows[0][2].rel == "HOTELS"
        assert load_database(dump_database(db, spec.schema), spec.schema) == db

    def test_duplicate_key_rejected(self):
        spec = parse_spec((FIXTURES / "travel.has").read_text())
        text = """{"HOTELS": [
            {"hotel_id": "h", "unit_price": 1, "discount_price": 1},
            {"hotel_id": "h", "unit_price": 2, "discount_price": 2}]}"""
        with pytest.raises(ParseError, match="duplicate key"):
            load_database(text, spec.schema)

    def test_dangling_reference_rejected(self):
        spec = parse_spec((FIXTURES / "travel.has").read_text())
        text = """{"FLIGHTS": [
            {"flight_id": "f", "price": 1, "comp_hotel_id": "nowhere"}]}"""
        with pytest.raises(ParseError, match="dangling"):
            load_database(text, spec.schema)

    def test_fraction_cells(self):
        spec = parse_spec((FIXTURES / "travel.has").read_text())
        text = """{"HOTELS": [
            {"hotel_id": "h", "unit_price": "7/2", "discount_price": 0.5}]}"""
        db = load_database(text, spec.schema)
        row = db.rows_of("HOTELS")[0]
        assert row[1] == Fraction(7, 2)
        assert row[2] == Fraction(1, 2)

    def test_wrong_attributes_rejected(self):
        spec = parse_spec((FIXTURES / "travel.has").read_text())
        with pytest.raises(ParseError, match="attributes must be exactly"):
            load_database('{"HOTELS": [{"hotel_id": "h"}]}', spec.schema)
