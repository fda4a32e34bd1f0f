"""Exact linear arithmetic: feasibility, elimination, cells."""

import random
from fractions import Fraction

import pytest

from artifact.arith import (
    Cell,
    LinConstraint,
    constraint,
    eliminate,
    feasible,
    fm_project,
    full_cell,
    make_cell,
    negate_constraint,
    project_cell,
    refines_onto,
    sign_cells,
    sign_of_poly,
)
from artifact.model import CmpOp, LinCmp, LinExpr

X, Y, Z = LinExpr.var("x"), LinExpr.var("y"), LinExpr.var("z")


def holds(k: LinConstraint, point) -> bool:
    s = sign_of_poly(k.expr, point)
    return {
        "=": s == 0,
        "!=": s != 0,
        "<": s < 0,
        "<=": s <= 0,
    }[k.rel]


class TestConstraints:
    def test_normalization_flips_gt_ge(self):
        k = constraint(LinCmp(CmpOp.GT, X))
        assert k.rel == "<" and k.expr == -X
        k = constraint(LinCmp(CmpOp.GE, X))
        assert k.rel == "<=" and k.expr == -X
        k = constraint(LinCmp(CmpOp.LE, X))
        assert k.rel == "<=" and k.expr == X

    def test_negation(self):
        (k,) = negate_constraint(LinConstraint(X, "<"))
        assert k == LinConstraint(-X, "<=")
        (k,) = negate_constraint(LinConstraint(X, "="))
        assert k == LinConstraint(X, "!=")


class TestFeasible:
    def test_simple_interval(self):
        w = feasible([
            LinConstraint(LinExpr.build({"x": 1}, -3), "<"),
            LinConstraint(LinExpr.build({"x": -1}, 1), "<"),
        ])
        assert w is not None and 1 < w["x"] < 3

    def test_contradiction(self):
        assert feasible([LinConstraint(X, "<"), LinConstraint(-X, "<")]) is None

    def test_equality_chain(self):
        w = feasible([
            LinConstraint(X - Y, "="),
            LinConstraint(Y - Z, "="),
            LinConstraint(LinExpr.build({"z": 1}, -5), "="),
        ])
        assert w == {"x": 5, "y": 5, "z": 5}

    def test_disequality_forces_branch(self):
        w = feasible([
            LinConstraint(LinExpr.build({"x": -1}), "<="),  # x >= 0
            LinConstraint(LinExpr.build({"x": 1}, -1), "<="),  # x <= 1
            LinConstraint(X, "!="),
            LinConstraint(LinExpr.build({"x": 1}, -1), "!="),
        ])
        assert w is not None and 0 < w["x"] < 1

    def test_ground_checks(self):
        assert feasible([LinConstraint(LinExpr.of(1), "<")]) is None
        assert feasible([LinConstraint(LinExpr.of(-1), "<")]) == {}

    def test_random_systems_witnesses_are_exact(self):
        rng = random.Random(7)
        names = ["x", "y", "z"]
        for _ in range(300):
            cons = []
            for _ in range(rng.randint(1, 5)):
                coeffs = {v: rng.randint(-2, 2) for v in names}
                expr = LinExpr.build(coeffs, rng.randint(-3, 3))
                cons.append(LinConstraint(expr, rng.choice(["=", "<", "<=", "!="])))
            w = feasible(cons)
            if w is not None:
                assert all(holds(k, w) for k in cons)


class TestEliminate:
    def test_substitution(self):
        out = eliminate(
            [LinConstraint(X - Y, "="), LinConstraint(-Y, "<=")], {"y"}
        )
        assert out == (LinConstraint(-X, "<="),)

    def test_pair_combination(self):
        # y > x and y < z  =>  x < z
        out = eliminate(
            [LinConstraint(X - Y, "<"), LinConstraint(Y - Z, "<")], {"y"}
        )
        assert out == (LinConstraint(X - Z, "<"),)

    def test_ground_contradiction(self):
        out = eliminate(
            [LinConstraint(X, "="), LinConstraint(LinExpr.build({"x": 1}, -1), "=")],
            {"x"},
        )
        assert out is None

    def test_rejects_disequalities(self):
        with pytest.raises(ValueError):
            eliminate([LinConstraint(X, "!=")], {"x"})

    def test_projection_is_sound_and_complete(self):
        rng = random.Random(11)
        names = ["x", "y", "z"]
        for _ in range(150):
            cons = []
            for _ in range(rng.randint(1, 4)):
                coeffs = {v: rng.randint(-2, 2) for v in names}
                expr = LinExpr.build(coeffs, rng.randint(-2, 2))
                cons.append(LinConstraint(expr, rng.choice(["=", "<", "<="])))
            out = eliminate(cons, {"z"})
            w = feasible(cons)
            if out is None:
                assert w is None
                continue
            if w is not None:  # soundness: projections of solutions survive
                assert all(holds(k, w) for k in out)
            # completeness: solutions of the projection lift back
            pw = feasible(out)
            if pw is not None:
                lifted = feasible(
                    list(cons)
                    + [
                        LinConstraint(
                            LinExpr.var(v) - LinExpr.of(pw.get(v, 0)), "="
                        )
                        for v in ("x", "y")
                    ]
                )
                assert lifted is not None


class TestCells:
    def test_fm_project_splits_signs(self):
        cells = fm_project(
            [LinConstraint(X - Y, "="), LinConstraint(-Y, "<=")], {"x"}
        )
        assert sorted(str(c) for c in cells) == ["{x = 0}", "{x > 0}"]

    def test_fm_project_keep_all_identity(self):
        c = make_cell({"x", "y"}, {X: 1, Y: -1, X - Y: 1})
        assert project_cell(c, {"x", "y"}) == [c]

    def test_fm_project_infeasible(self):
        assert fm_project([LinConstraint(X, "<"), LinConstraint(-X, "<")], {"x"}) == []

    def test_make_cell_infeasible(self):
        assert make_cell({"x", "y"}, {X: 1, Y: 1, X + Y: -1}) is None

    def test_make_cell_ground_consistency(self):
        assert make_cell({"x"}, {LinExpr.of(3): 1, X: 0}) is not None
        assert make_cell({"x"}, {LinExpr.of(3): -1, X: 0}) is None

    def test_make_cell_axis_escape(self):
        with pytest.raises(ValueError):
            make_cell({"x"}, {Y: 1})

    def test_canonicalization_merges_scales(self):
        c = make_cell({"x", "y"}, {X.scale(2) - Y.scale(2): 1})
        assert len(c.polys) == 1
        assert c.sign_of(X - Y) == 1
        assert c.sign_of(Y - X) == -1
        assert c.sign_of((Y - X).scale(Fraction(3, 2))) == -1
        assert c.sign_of(Z) is None
        assert c.sign_of(LinExpr.of(-2)) == -1

    def test_refines(self):
        big = make_cell({"x", "y"}, {X: 1, Y: 0, X - Y: 1})
        small = make_cell({"x"}, {X: 1})
        assert big.refines(small)
        assert not small.refines(big)
        assert big.refines(big)
        assert big.refines(full_cell({"x"}))
        other = make_cell({"x"}, {X: -1})
        assert not big.refines(other)

    def test_refines_onto(self):
        big = make_cell({"x", "y"}, {X: 1, Y: 0, X - Y: 1})
        target = make_cell({"x", "y"}, {X - Y: 1, Y: 0})
        assert refines_onto(big, target, {"x"})
        neg = make_cell({"x"}, {X: -1})
        assert not refines_onto(neg, target, {"x"})

    def test_sign_cells_partition(self):
        polys = [X, Y, X - Y]
        cells = sign_cells(polys, {"x", "y"})
        # every random rational point lies in exactly one cell
        rng = random.Random(3)
        for _ in range(50):
            pt = {
                "x": Fraction(rng.randint(-4, 4), rng.randint(1, 3)),
                "y": Fraction(rng.randint(-4, 4), rng.randint(1, 3)),
            }
            homes = [
                c
                for c in cells
                if all(holds(k, pt) for k in c.constraints())
            ]
            assert len(homes) == 1

    def test_sign_cells_ambient(self):
        cells = sign_cells([X], {"x"}, ambient=[LinConstraint(-X, "<")])
        assert [str(c) for c in cells] == ["{x > 0}"]

    def test_witness_lies_in_cell(self):
        for c in sign_cells([X, Y, X - Y, X + Y], {"x", "y"}):
            w = c.witness()
            assert all(holds(k, w) for k in c.constraints())
