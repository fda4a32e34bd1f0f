"""Core object model: expressions, conditions, schema analysis, validation."""

from fractions import Fraction
from pathlib import Path

import pytest

from artifact.frontend import parse_spec
from artifact.model import (
    And,
    CmpOp,
    Database,
    Eq,
    Exists,
    FALSE,
    HasSpec,
    IdVal,
    LinCmp,
    LinExpr,
    NULL,
    RelAtom,
    Relation,
    Schema,
    SchemaClass,
    Sort,
    Task,
    TRUE,
    Var,
    classify_schema,
    cond_vars,
    conjoin,
    rename_cond,
    validate_spec,
)

FIXTURES = Path(__file__).parent / "fixtures"


def travel_spec() -> HasSpec:
    return parse_spec((FIXTURES / "travel.has").read_text(), source="travel.has")


# ---------------------------------------------------------------------------
# Linear expressions
# ---------------------------------------------------------------------------


class TestLinExpr:
    def test_build_sorts_and_drops_zeros(self):
        e = LinExpr.build({"b": 2, "a": 1, "c": 0}, 5)
        assert e.terms == (("a", Fraction(1)), ("b", Fraction(2)))
        assert e.const == 5

    def test_algebra(self):
        x, y = LinExpr.var("x"), LinExpr.var("y")
        e = x + y.scale(2) - LinExpr.of(3)
        assert e == LinExpr.build({"x": 1, "y": 2}, -3)
        assert -e == LinExpr.build({"x": -1, "y": -2}, 3)
        assert (x - x) == LinExpr.of(0)
        assert (x - x).is_const

    def test_substitute(self):
        e = LinExpr.build({"x": 2, "y": 1}, 1)
        out = e.substitute({"x": LinExpr.build({"z": 1}, 4)})
        assert out == LinExpr.build({"z": 2, "y": 1}, 9)

    def test_rename_merges(self):
        e = LinExpr.build({"x": 2, "y": 3})
        assert e.rename({"y": "x"}) == LinExpr.build({"x": 5})


# ---------------------------------------------------------------------------
# Conditions
# ---------------------------------------------------------------------------


class TestConditions:
    def test_conjoin(self):
        a = Eq(Var("x"), NULL)
        assert conjoin([]) == TRUE
        assert conjoin([a]) == a
        assert conjoin([TRUE, a]) == a
        assert conjoin([a, FALSE]) == FALSE
        assert conjoin([And((a, a)), a]) == And((a, a, a))

    def test_cond_vars_excludes_bound(self):
        inner = RelAtom("R", (Var("k"), Var("p")))
        c = And((Eq(Var("x"), NULL), Exists((("k", Sort.ID),), inner)))
        assert cond_vars(c) == {"x", "p"}

    def test_rename_cond(self):
        c = And((Eq(Var("x"), Var("y")), LinCmp(CmpOp.LT, LinExpr.var("z"))))
        out = rename_cond(c, {"x": "a", "z": "b"})
        assert cond_vars(out) == {"a", "y", "b"}

    def test_exists_rename_respects_binding(self):
        c = Exists((("x", Sort.ID),), Eq(Var("x"), Var("y")))
        out = rename_cond(c, {"x": "z", "y": "w"})
        assert out == Exists((("x", Sort.ID),), Eq(Var("x"), Var("w")))


# ---------------------------------------------------------------------------
# Schema classification
# ---------------------------------------------------------------------------


def _rel(name, nums=(), fks=()):
    return Relation(name, "id", tuple(nums), tuple(fks))


class TestClassifySchema:
    def test_travel_is_acyclic(self):
        assert classify_schema(travel_spec().schema).kind is SchemaClass.ACYCLIC

    def test_self_loop_is_linearly_cyclic(self):
        s = Schema((_rel("R", (), (("next", "R"),)),))
        assert classify_schema(s).kind is SchemaClass.LINEARLY_CYCLIC

    def test_two_relation_cycle_is_linearly_cyclic(self):
        s = Schema((_rel("A", (), (("b", "B"),)), _rel("B", (), (("a", "A"),))))
        assert classify_schema(s).kind is SchemaClass.LINEARLY_CYCLIC

    def test_parallel_self_loops_are_cyclic(self):
        s = Schema((_rel("R", (), (("n1", "R"), ("n2", "R"))),))
        assert classify_schema(s).kind is SchemaClass.CYCLIC

    def test_two_cycles_through_one_relation_are_cyclic(self):
        s = Schema(
            (
                _rel("A", (), (("b", "B"), ("c", "C"))),
                _rel("B", (), (("a", "A"),)),
                _rel("C", (), (("a", "A"),)),
            )
        )
        assert classify_schema(s).kind is SchemaClass.CYCLIC


# ---------------------------------------------------------------------------
# Databases
# ---------------------------------------------------------------------------


class TestDatabase:
    def schema(self) -> Schema:
        return Schema(
            (
                Relation("R", "id", ("v",), (("ref", "S"),)),
                Relation("S", "id", (), ()),
            )
        )

    def test_consistent(self):
        db = Database(
            {
                "R": (((IdVal("R", "r1"), Fraction(2), IdVal("S", "s1"))),),
                "S": ((IdVal("S", "s1"),),),
            }
        )
        assert db.check(self.schema()) == []
        assert db.ids_of("S") == (IdVal("S", "s1"),)
        assert set(db.all_ids()) == {IdVal("R", "r1"), IdVal("S", "s1")}

    def test_duplicate_key(self):
        db = Database({"S": ((IdVal("S", "a"),), (IdVal("S", "a"),))})
        assert any("duplicate key" in p for p in db.check(self.schema()))

    def test_dangling_fk(self):
        db = Database(
            {"R": ((IdVal("R", "r1"), Fraction(0), IdVal("S", "ghost")),), "S": ()}
        )
        assert any("dangling" in p for p in db.check(self.schema()))

    def test_wrong_sorts(self):
        db = Database({"S": ((Fraction(3),),)})
        assert any("expected an identifier" in p for p in db.check(self.schema()))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


class TestValidateTravel:
    def test_no_errors(self):
        diags = validate_spec(travel_spec())
        assert [d for d in diags if d.severity == "error"] == []

    def test_normalization_flags(self):
        diags = validate_spec(travel_spec())
        codes = sorted(d.code for d in diags)
        assert codes == [
            "existential",
            "existential",
            "existential",
            "existential",
            "existential",
            "numeric-return",
            "numeric-return",
            "numeric-return",
            "numeric-return",
            "numeric-return",
            "pass-return-overlap",
        ]

    def test_tree_shape(self):
        spec = travel_spec()
        assert spec.root == "ManageTrips"
        assert spec.task_order() == (
            "ManageTrips",
            "AddFlight",
            "AddHotel",
            "AlsoBookHotel",
            "BookInitialTrip",
            "Cancel",
        )
        assert spec.parent_of("AlsoBookHotel") == "AddHotel"
        assert spec.parent_of("ManageTrips") is None
        assert spec.descendants("AddHotel") == ("AlsoBookHotel",)

    def test_service_updates(self):
        root = travel_spec().task("ManageTrips")
        assert root.service("StoreTrip").delta == ("+",)
        assert root.service("RetrieveTrip").delta == ("-",)
        assert root.set_relation == "TRIPS"
        assert root.set_vars == ("flight_id", "hotel_id")

    def test_root_closing_is_false(self):
        assert travel_spec().task("ManageTrips").closing_pre == FALSE


def _mini_task(**kw) -> Task:
    base = dict(
        name="T",
        id_vars=("x",),
        num_vars=(),
        input_vars=(),
        set_relation=None,
        set_vars=(),
        services=(),
        closing_pre=FALSE,
        children=(),
    )
    base.update(kw)
    return Task(**base)


class TestValidateErrors:
    def test_return_target_must_not_be_input(self):
        text = """
        schema { relation R { id: ID; } }
        task P {
          vars a: ID;
          input a;
          child C {
            open-pre: true;
            close-pre: x != null;
            out: x -> a;
          }
        }
        task C {
          vars x: ID;
        }
        """
        diags = validate_spec(parse_spec(text))
        assert any(d.code == "restriction-3" and d.severity == "error" for d in diags)

    def test_f_in_must_cover_inputs(self):
        text = """
        schema { relation R { id: ID; } }
        task P {
          vars a: ID;
          child C {
            open-pre: true;
            close-pre: true;
          }
        }
        task C {
          vars x: ID;
          input x;
        }
        """
        diags = validate_spec(parse_spec(text))
        assert any(d.code == "passing-map" for d in diags)

    def test_duplicate_set_names(self):
        text = """
        schema { relation R { id: ID; } }
        task P {
          vars a: ID;
          set S(a);
          child C { open-pre: true; close-pre: true; }
        }
        task C {
          vars x: ID;
          set S(x);
        }
        """
        diags = validate_spec(parse_spec(text))
        assert any(d.code == "restriction-5" and "duplicate" in d.message for d in diags)

    def test_root_closing_enforced_on_handbuilt_spec(self):
        spec = HasSpec(
            schema=Schema((Relation("R", "id", (), ()),)),
            tasks=(_mini_task(closing_pre=TRUE),),
            root="T",
            global_pre=TRUE,
        )
        diags = validate_spec(spec)
        assert any(d.code == "root-closing" for d in diags)

    def test_negative_existential_rejected(self):
        text = """
        schema { relation R { id: ID; } }
        task P {
          vars a: ID;
          service s {
            pre: not (exists k: ID . R(k));
            post: true;
          }
        }
        """
        diags = validate_spec(parse_spec(text))
        assert any(d.code == "negative-existential" and d.severity == "error" for d in diags)
