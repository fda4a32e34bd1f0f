"""Tests for the concrete bounded interpreter."""

import random
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import pytest

from artifact.frontend import load_database, parse_property, parse_spec
from artifact.model import Database, IdVal, Sort, validate_spec
from artifact.oracle import (
    ConcreteLocalRun,
    ConcreteTree,
    ConditionEvaluator,
    Pools,
    SearchBounds,
    Step,
    TaskInstance,
    UnsupportedCondition,
    certification_problems,
    check_tree,
    child_initial,
    concrete_step,
    default_pools,
    divergence_tags,
    falsifying_assignment,
    find_violation,
    freeze_valuation,
    linearize,
    open_instance,
    random_tree,
    satisfies,
    tree_nodes,
    validate_tree,
    writeback,
)
from artifact.property_ast import LTL_TRUE, HltlProperty

FIXTURES = Path(__file__).parent / "fixtures"

TINY = """
schema {
  relation R {
    r_id: ID;
    w: REAL;
  }
}

task Root {
  vars x: ID, n: REAL;
  set BAG(x, n);
  service Grab {
    pre: true;
    post: n = 1;
    update: +BAG;
  }
  service Drop {
    pre: true;
    post: true;
    update: -BAG;
  }
  child Kid {
    open-pre: x != null;
    in: m <- n;
    close-pre: y = m + 1;
    out: y -> n;
  }
  child Kid2 {
    open-pre: true;
    close-pre: true;
  }
}

task Kid {
  vars y: REAL, m: REAL;
  input m;
  service Tick {
    pre: true;
    post: y = m + 1;
  }
  service Spin {
    pre: true;
    post: y = y;
  }
}

task Kid2 {
  vars z: REAL;
  service Zip {
    pre: true;
    post: z = 0;
  }
}
"""

SOLO = """
schema {
  relation R {
    r_id: ID;
  }
}

task Solo {
  vars n: REAL;
  service Move {
    pre: true;
    post: n = 1 or n = 2;
  }
}
"""


@pytest.fixture(scope="module")
def tiny():
    spec = parse_spec(TINY)
    assert not [d for d in validate_spec(spec) if d.severity == "error"]
    db = Database({"R": ((IdVal("R", "r1"), Fraction(5)),)})
    return spec, db


@pytest.fixture(scope="module")
def travel():
    spec = parse_spec((FIXTURES / "travel.has").read_text())
    db = load_database((FIXTURES / "travel_db.json").read_text(), spec.schema)
    assert db.check(spec.schema) == []
    return spec, db


def pick(successors, **want):
    """The unique successor whose valuation matches the given items."""
    found = [
        s for s in successors
        if all(dict(s.valuation)[k] == v for k, v in want.items())
    ]
    assert len(found) == 1, f"{len(found)} successors match {want}"
    return found[0]


def build_lifecycle_tree(spec, db):
    """Root: Grab, open Kid, close Kid, Drop — exercising insert, child
    passing, numeric write-back, and retrieval."""
    root = spec.task("Root")
    kid = spec.task("Kid")
    pools = default_pools(spec, db)
    r1 = IdVal("R", "r1")

    i0 = open_instance(root, {})
    succ = concrete_step(spec, i0, root.service("Grab"), db, pools=pools)
    i1 = pick(succ, x=r1, n=Fraction(1))
    assert i1.store == frozenset({(None, Fraction(0))})

    k0 = open_instance(kid, child_initial(root.child_link("Kid"), i1.vmap()))
    assert k0.vmap() == {"y": Fraction(0), "m": Fraction(1)}
    ksucc = concrete_step(spec, k0, kid.service("Tick"), db, pools=pools)
    k1 = pick(ksucc, y=Fraction(2))
    kid_run = ConcreteLocalRun(
        "Kid",
        freeze_valuation({"m": Fraction(1)}),
        ((k0, Step("opened")), (k1, Step("svc", "Tick")), (k1, Step("closed"))),
    )
    kid_tree = ConcreteTree(kid_run)

    nu3 = writeback(root, root.child_link("Kid"), i1.vmap(), k1.vmap())
    assert nu3["n"] == Fraction(2) and nu3["x"] == r1
    i3 = TaskInstance("Root", freeze_valuation(nu3), i1.store)

    dsucc = concrete_step(spec, i3, root.service("Drop"), db, pools=pools)
    i4 = pick(dsucc, x=None, n=Fraction(0))
    assert i4.store == frozenset()

    run = ConcreteLocalRun(
        "Root",
        (),
        (
            (i0, Step("opened")),
            (i1, Step("svc", "Grab")),
            (i1, Step("open", "Kid")),
            (i3, Step("close", "Kid")),
            (i4, Step("svc", "Drop")),
        ),
    )
    return ConcreteTree(run, ((2, kid_tree),))


class TestConcreteStep:
    def test_no_delta_preserves_set_and_inputs(self, tiny):
        spec, db = tiny
        kid = spec.task("Kid")
        inst = open_instance(kid, {"m": Fraction(3)})
        succ = concrete_step(spec, inst, kid.service("Tick"), db)
        assert succ
        for s in succ:
            assert s.store == inst.store == frozenset()
            assert dict(s.valuation)["m"] == Fraction(3)
            assert dict(s.valuation)["y"] == Fraction(4)

    def test_retrieval_from_empty_set_blocks(self, tiny):
        spec, db = tiny
        root = spec.task("Root")
        inst = open_instance(root, {})
        assert concrete_step(spec, inst, root.service("Drop"), db) == ()

    def test_insert_records_old_tuple(self, tiny):
        spec, db = tiny
        root = spec.task("Root")
        inst = open_instance(root, {})
        succ = concrete_step(spec, inst, root.service("Grab"), db)
        assert succ
        for s in succ:
            # The inserted tuple is the valuation *before* the step.
            assert s.store == frozenset({(None, Fraction(0))})
            assert dict(s.valuation)["n"] == Fraction(1)

    def test_retrieval_returns_stored_tuple(self, tiny):
        spec, db = tiny
        r1 = IdVal("R", "r1")
        stored = (r1, Fraction(7))
        inst = TaskInstance(
            "Root",
            freeze_valuation({"x": None, "n": Fraction(0)}),
            frozenset({stored}),
        )
        root = spec.task("Root")
        succ = concrete_step(spec, inst, root.service("Drop"), db)
        assert succ
        for s in succ:
            assert dict(s.valuation) == {"x": r1, "n": Fraction(7)}
            assert s.store == frozenset()

    def test_false_pre_blocks(self, travel):
        spec, db = travel
        cancel = spec.task("Cancel")
        # status starts at 0, flight_id comes in null: CancelFlight needs it.
        inst = open_instance(
            cancel, {"hotel_id": None, "flight_id": None, "amount_paid": Fraction(0)}
        )
        assert concrete_step(spec, inst, cancel.service("CancelFlight"), db) == ()

    def test_travel_pay_sets_status_paid(self, travel):
        """Paying exactly flight price + companion discount yields Paid."""
        spec, db = travel
        bit = spec.task("BookInitialTrip")
        f1 = next(i for i in db.ids_of("FLIGHTS") if i.token == "f1")
        h1 = next(i for i in db.ids_of("HOTELS") if i.token == "h1")
        inst = open_instance(bit, {"flight_id": f1, "hotel_id": h1})
        succ = concrete_step(spec, inst, bit.service("Pay"), db)
        assert succ
        # FLIGHTS(f1, 300, h1), HOTELS(h1, 200, 150): companion discount 150.
        right = Fraction(450)
        paid = [s for s in succ if dict(s.valuation)["amount_paid"] == right]
        assert paid, "no successor pays price + discount"
        for s in paid:
            assert dict(s.valuation)["status"] == Fraction(1)
        for s in succ:
            v = dict(s.valuation)
            if v["amount_paid"] != right:
                assert v["status"] == Fraction(2)

    def test_travel_companion_pricing(self, travel):
        spec, db = travel
        ah = spec.task("AddHotel")
        f1 = next(i for i in db.ids_of("FLIGHTS") if i.token == "f1")
        inst = open_instance(
            ah, {"flight_id": f1, "status": Fraction(1), "amount_paid": Fraction(300)}
        )
        succ = concrete_step(spec, inst, ah.service("ChooseHotel"), db)
        by_hotel = {dict(s.valuation)["hotel_id"].token: dict(s.valuation) for s in succ}
        assert set(by_hotel) == {"h1", "h2"}
        # h1 is f1's companion: discount price; h2 is not: unit price.
        assert by_hotel["h1"]["hotel_price"] == Fraction(150)
        assert by_hotel["h2"]["hotel_price"] == Fraction(80)


class TestEvaluator:
    def test_exists_numeric_solved_exactly(self, tiny):
        _, db = tiny
        ev = ConditionEvaluator(db)
        from artifact.frontend import parse_condition

        cond = parse_condition(
            "exists p: REAL . p > 1 and p < 2 and n = 2*p", {"n": Sort.REAL}
        )
        assert ev.decide(cond, {"n": Fraction(3)})
        assert not ev.decide(cond, {"n": Fraction(5)})

    def test_exists_id_uses_fresh_identifier(self, tiny):
        _, db = tiny
        ev = ConditionEvaluator(db)
        from artifact.frontend import parse_condition

        schema = parse_spec(TINY).schema
        outside = parse_condition(
            "exists a: ID . a != null and (not (exists q: REAL . R(a, q)))",
            {},
            schema=schema,
        )
        assert ev.decide(outside, {})  # a fresh identifier is outside R
        member = parse_condition(
            "exists a: ID . exists q: REAL . R(a, q)", {}, schema=schema
        )
        assert ev.decide(member, {})
        assert not ConditionEvaluator(Database({})).decide(member, {})

    def test_universal_over_unknown_number_unsupported(self, tiny):
        _, db = tiny
        ev = ConditionEvaluator(db)
        from artifact.frontend import parse_condition

        cond = parse_condition(
            "exists p: REAL . not (exists q: REAL . q > p)", {}
        )
        with pytest.raises(UnsupportedCondition):
            ev.decide(cond, {})

    def test_relation_row_binding(self, travel):
        spec, db = travel
        ev = ConditionEvaluator(db)
        from artifact.frontend import parse_condition

        cond = parse_condition(
            "exists p: REAL . exists c: ID . FLIGHTS(f, p, c) and p > 200",
            {"f": Sort.ID},
            schema=spec.schema,
        )
        f1 = next(i for i in db.ids_of("FLIGHTS") if i.token == "f1")  # price 300
        f2 = next(i for i in db.ids_of("FLIGHTS") if i.token == "f2")  # price 120
        assert ev.decide(cond, {"f": f1})
        assert not ev.decide(cond, {"f": f2})


class TestInstances:
    def test_open_instance_defaults(self, tiny):
        spec, _ = tiny
        kid = spec.task("Kid")
        inst = open_instance(kid, {"m": Fraction(9)})
        assert inst.vmap() == {"m": Fraction(9), "y": Fraction(0)}
        assert inst.store == frozenset()
        with pytest.raises(ValueError):
            open_instance(kid, {})

    def test_writeback_guards_bound_identifiers(self, travel):
        spec, _ = travel
        mt = spec.task("ManageTrips")
        link = mt.child_link("AddHotel")
        h1, h9 = IdVal("HOTELS", "h1"), IdVal("HOTELS", "h9")
        parent = {
            "flight_id": None, "hotel_id": h1,
            "status": Fraction(1), "amount_paid": Fraction(300),
        }
        child_final = {"hotel_id": h9, "new_amount_paid": Fraction(450)}
        out = writeback(mt, link, parent, child_final)
        assert out["hotel_id"] == h1  # non-null identifier target survives
        assert out["amount_paid"] == Fraction(450)  # numeric always written
        parent["hotel_id"] = None
        out = writeback(mt, link, parent, child_final)
        assert out["hotel_id"] == h9  # null identifier target takes the value


class TestValidateTree:
    def test_lifecycle_tree_is_valid(self, tiny):
        spec, db = tiny
        tree = build_lifecycle_tree(spec, db)
        assert validate_tree(tree, spec, db) == []

    def test_random_trees_are_valid(self, tiny, travel):
        for spec, db in (tiny, travel):
            rng = random.Random(11)
            for _ in range(25):
                tree = random_tree(spec, db, rng, max_steps=7)
                assert validate_tree(tree, spec, db) == []

    def test_internal_step_with_open_child_rejected(self, tiny):
        spec, db = tiny
        tree = build_lifecycle_tree(spec, db)
        # Move the Drop step between open and close: Grab, open, Drop, close.
        s = list(tree.run.steps)
        s[3], s[4] = s[4], s[3]
        bad = replace(tree, run=replace(tree.run, steps=tuple(s)))
        probs = validate_tree(bad, spec, db)
        assert any("still open" in p for p in probs)

    def test_tampered_postcondition_rejected(self, tiny):
        spec, db = tiny
        tree = build_lifecycle_tree(spec, db)
        s = list(tree.run.steps)
        inst, step = s[1]  # the Grab step: post forces n = 1
        nu = inst.vmap()
        nu["n"] = Fraction(42)
        s[1] = (TaskInstance(inst.task, freeze_valuation(nu), inst.store), step)
        bad = replace(tree, run=replace(tree.run, steps=tuple(s)))
        probs = validate_tree(bad, spec, db)
        assert any("postcondition of Grab" in p for p in probs)

    def test_wrong_child_input_rejected(self, tiny):
        spec, db = tiny
        tree = build_lifecycle_tree(spec, db)
        pos, kid_tree = tree.children[0]
        bad_kid = replace(
            kid_tree, run=replace(kid_tree.run, nu_in=freeze_valuation({"m": Fraction(8)}))
        )
        bad = replace(tree, children=((pos, bad_kid),))
        probs = validate_tree(bad, spec, db)
        assert any("passed by the parent" in p for p in probs)

    def test_wrong_writeback_rejected(self, tiny):
        spec, db = tiny
        tree = build_lifecycle_tree(spec, db)
        s = list(tree.run.steps)
        inst, step = s[3]  # close Kid: n must become 2
        nu = inst.vmap()
        nu["n"] = Fraction(99)
        s[3] = (TaskInstance(inst.task, freeze_valuation(nu), inst.store), step)
        # Drop the final step so only the write-back mismatch trips.
        bad = replace(tree, run=replace(tree.run, steps=tuple(s[:4])))
        probs = validate_tree(bad, spec, db)
        assert any("returned values" in p for p in probs)

    def test_returning_child_must_be_closed(self, tiny):
        spec, db = tiny
        tree = build_lifecycle_tree(spec, db)
        run = tree.run
        # Truncate the parent right after the open: child still returns.
        bad = ConcreteTree(replace(run, steps=run.steps[:3]), tree.children)
        probs = validate_tree(bad, spec, db)
        assert any("never closed" in p for p in probs)

    def test_initial_defaults_enforced(self, tiny):
        spec, db = tiny
        root = spec.task("Root")
        nu = {"x": IdVal("R", "r1"), "n": Fraction(0)}  # x must start null
        inst = TaskInstance("Root", freeze_valuation(nu), frozenset())
        tree = ConcreteTree(ConcreteLocalRun("Root", (), ((inst, Step("opened")),)))
        probs = validate_tree(tree, spec, db)
        assert any("not null initially" in p for p in probs)


class TestSatisfies:
    def test_trivial_property_on_single_node(self, tiny):
        spec, db = tiny
        tree = ConcreteTree(
            ConcreteLocalRun("Root", (), ((open_instance(spec.task("Root"), {}),
                                           Step("opened")),))
        )
        prop = HltlProperty((), "Root", LTL_TRUE)
        assert check_tree(tree, prop, spec, db) == (True, True)

    def test_temporal_operators_finite_semantics(self, tiny):
        spec, db = tiny
        tree = build_lifecycle_tree(spec, db)

        def holds(text):
            prop = parse_property(f"property Root {{ {text} }}", spec)
            return satisfies(tree, prop, spec, db)

        assert holds("opened") is True  # position 0 is the opening
        assert holds("X svc(Grab)") is True
        assert holds("X X open(Kid)") is True
        assert holds("F close(Kid)") is True
        assert holds("G {n <= 2}") is True
        assert holds("F {n = 2}") is True
        assert holds("{n = 0} U svc(Grab)") is True
        assert holds("F (svc(Drop) and X svc(Grab))") is False  # X past the end
        assert holds("G F svc(Drop)") is True
        assert holds("F [ F closed ]Kid") is True
        assert holds("F [ G {m = 1} ]Kid") is True
        assert holds("F [ X svc(Spin) ]Kid") is False

    def test_diverging_child_taints_child_formula(self, tiny):
        spec, db = tiny
        root = spec.task("Root")
        pools = default_pools(spec, db)
        i0 = open_instance(root, {})
        i1 = pick(concrete_step(spec, i0, root.service("Grab"), db, pools=pools),
                  x=IdVal("R", "r1"), n=Fraction(1))
        kid0 = open_instance(spec.task("Kid"),
                             child_initial(root.child_link("Kid"), i1.vmap()))
        kid_tree = ConcreteTree(ConcreteLocalRun(
            "Kid", freeze_valuation({"m": Fraction(1)}), ((kid0, Step("opened")),)))
        tree = ConcreteTree(
            ConcreteLocalRun("Root", (), (
                (i0, Step("opened")), (i1, Step("svc", "Grab")),
                (i1, Step("open", "Kid")),
            )),
            ((2, kid_tree),),
        )
        assert validate_tree(tree, spec, db) == []
        inspect = parse_property("property Root { F [ F closed ]Kid }", spec)
        assert satisfies(tree, inspect, spec, db) is None  # depends on unseen steps
        outside = parse_property("property Root { F open(Kid) }", spec)
        assert satisfies(tree, outside, spec, db) is True
        # And the blocked tree is certified: Kid can spin forever.
        assert certification_problems(tree, spec, db) == []

    def test_divergence_tags_decide_child_inspections(self, tiny):
        spec, db = tiny
        root = spec.task("Root")
        pools = default_pools(spec, db)
        i0 = open_instance(root, {})
        i1 = pick(concrete_step(spec, i0, root.service("Grab"), db, pools=pools),
                  x=IdVal("R", "r1"), n=Fraction(1))
        kid0 = open_instance(spec.task("Kid"),
                             child_initial(root.child_link("Kid"), i1.vmap()))
        kid_tree = ConcreteTree(ConcreteLocalRun(
            "Kid", freeze_valuation({"m": Fraction(1)}), ((kid0, Step("opened")),)))
        tree = ConcreteTree(
            ConcreteLocalRun("Root", (), (
                (i0, Step("opened")), (i1, Step("svc", "Grab")),
                (i1, Step("open", "Kid")),
            )),
            ((2, kid_tree),),
        )
        tags = divergence_tags(tree, spec, db)
        assert tags[id(kid_tree)] == "lasso"  # Kid can take Spin forever
        assert tags[id(tree)] == "blocked"  # the root waits on Kid forever

        def val(text):
            prop = parse_property(f"property Root {{ {text} }}", spec)
            return satisfies(tree, prop, spec, db, diverging=tags)

        # On the diverging continuation Kid never closes...
        assert val("F [ F closed ]Kid") is False
        assert val("F [ G (closed implies {y = 5}) ]Kid") is True
        # ... its input m stays frozen at 1 through every unseen step ...
        assert val("F [ G {m = 1} ]Kid") is True
        # ... but non-input values and service names stay unknown.
        assert val("F [ F {y = 2} ]Kid") is None
        assert val("F [ X svc(Spin) ]Kid") is None
        # Without the tags all of these are unknown.
        assert satisfies(tree, parse_property(
            "property Root { F [ F closed ]Kid }", spec), spec, db) is None

    def test_find_violation_uses_divergence_tags(self, tiny):
        spec, db = tiny
        # "Whenever Kid is opened it eventually returns" — refuted only by a
        # blocked tree, whose child inspection needs the divergence tags.
        prop = parse_property(
            "property Root { G ([ F closed ]Kid or not open(Kid)) }", spec)
        hit = find_violation(spec, prop, db)
        assert hit is not None
        assert certification_problems(hit.tree, spec, db) == []
        assert hit.tree.unmatched()

    def test_identifier_globals_enumerated(self, tiny):
        spec, db = tiny
        tree = build_lifecycle_tree(spec, db)
        prop = parse_property(
            "forall u: ID; property Root { G {x = u or x != u} }", spec)
        assert satisfies(tree, prop, spec, db) is True
        # x takes the value r1 at some point, so "always different from u"
        # fails for u = r1 — and only for identifiers the run actually uses.
        prop2 = parse_property("forall u: ID; property Root { G {x != u} }", spec)
        assert satisfies(tree, prop2, spec, db) is False
        gamma = falsifying_assignment(tree, prop2, spec, db)
        assert gamma == {"u": IdVal("R", "r1")}


class TestCertificationAndSearch:
    def test_solo_task_cannot_be_certified(self):
        spec = parse_spec(SOLO)
        db = Database({"R": ((IdVal("R", "r1"),),)})
        prop = parse_property("property Solo { G {n != 2} }", spec)
        certified = find_violation(spec, prop, db)
        assert certified is None  # a childless root is never blocked forever
        loose = find_violation(
            spec, prop, db, bounds=SearchBounds(require_certified=False))
        assert loose is not None
        vtree = loose.tree
        assert validate_tree(vtree, spec, db) == []
        assert satisfies(vtree, prop, spec, db,
                         gamma=dict(loose.assignment)) is False
        assert certification_problems(vtree, spec, db) != []

    def test_certified_violation_found(self, tiny):
        spec, db = tiny
        prop = parse_property("property Root { G (not open(Kid)) }", spec)
        hit = find_violation(spec, prop, db)
        assert hit is not None
        tree = hit.tree
        assert validate_tree(tree, spec, db) == []
        assert certification_problems(tree, spec, db) == []
        assert satisfies(tree, prop, spec, db, gamma=dict(hit.assignment)) is False
        # The tree really opens Kid and stays blocked on a diverging child.
        assert any(step.kind == "open" and step.name == "Kid"
                   for _, step in tree.run.steps)
        assert tree.unmatched()

    def test_holding_property_yields_nothing(self, tiny):
        spec, db = tiny
        prop = parse_property("property Root { opened }", spec)
        assert find_violation(spec, prop, db) is None

    def test_blocked_f_violation_certified(self, tiny):
        spec, db = tiny
        # Once Kid is open and diverging, the root never reaches n = 2.
        prop = parse_property("property Root { F {n = 2} }", spec)
        hit = find_violation(spec, prop, db)
        assert hit is not None
        assert certification_problems(hit.tree, spec, db) == []
        final_n = dict(hit.tree.run.final_instance.valuation)["n"]
        assert final_n != Fraction(2)


class TestLinearize:
    def test_single_run_single_linearization(self, tiny):
        spec, db = tiny
        root = spec.task("Root")
        i0 = open_instance(root, {})
        i1 = pick(concrete_step(spec, i0, root.service("Grab"), db),
                  x=None, n=Fraction(1))
        tree = ConcreteTree(ConcreteLocalRun(
            "Root", (), ((i0, Step("opened")), (i1, Step("svc", "Grab")))))
        seqs = list(linearize(tree, spec))
        assert len(seqs) == 1
        labels = [ev.label for ev, _ in seqs[0]]
        assert labels == ["open Root", "Root.Grab"]
        last = seqs[0][-1][1]
        assert last.valuation("Root") == i1.valuation
        assert last.store("Root") == i1.store
        assert last.stage("Root") == "active"

    def test_parent_child_synchronization(self, tiny):
        spec, db = tiny
        tree = build_lifecycle_tree(spec, db)
        seqs = list(linearize(tree, spec))
        assert len(seqs) == 1  # a single chain: everything is ordered
        labels = [ev.label for ev, _ in seqs[0]]
        assert labels == [
            "open Root", "Root.Grab", "open Kid", "Kid.Tick", "close Kid",
            "Root.Drop",
        ]
        states = [st for _, st in seqs[0]]
        assert [st.stage("Kid") for st in states] == [
            "init", "init", "active", "active", "closed", "init",
        ]  # the final internal step resets descendants
        # Opening resets the child's slot; closing updates the parent's.
        assert dict(states[2].valuation("Kid"))["m"] == Fraction(1)
        assert dict(states[4].valuation("Root"))["n"] == Fraction(2)
        assert states[4].store("Kid") == frozenset()

    def test_independent_children_interleave(self, tiny):
        spec, db = tiny
        root = spec.task("Root")
        kid2 = spec.task("Kid2")
        i0 = open_instance(root, {})
        k0 = open_instance(kid2, {})
        z0 = pick(concrete_step(spec, k0, kid2.service("Zip"), db), z=Fraction(0))
        kid2_tree = ConcreteTree(ConcreteLocalRun(
            "Kid2", (), ((k0, Step("opened")), (z0, Step("svc", "Zip")))))
        # Grab makes x non-null so Kid may open alongside Kid2.
        i1 = pick(concrete_step(spec, i0, root.service("Grab"), db),
                  x=IdVal("R", "r1"), n=Fraction(1))
        kid0 = open_instance(spec.task("Kid"),
                             child_initial(root.child_link("Kid"), i1.vmap()))
        s0 = pick(concrete_step(spec, kid0, spec.task("Kid").service("Spin"), db),
                  y=Fraction(0))
        kid_tree = ConcreteTree(ConcreteLocalRun(
            "Kid", freeze_valuation({"m": Fraction(1)}),
            ((kid0, Step("opened")), (s0, Step("svc", "Spin")))))
        tree = ConcreteTree(
            ConcreteLocalRun("Root", (), (
                (i0, Step("opened")),
                (i1, Step("svc", "Grab")),
                (i1, Step("open", "Kid")),
                (i1, Step("open", "Kid2")),
            )),
            ((2, kid_tree), (3, kid2_tree)),
        )
        assert validate_tree(tree, spec, db) == []
        seqs = list(linearize(tree, spec))
        orders = set()
        for seq in seqs:
            labels = [ev.label for ev, _ in seq]
            spin, zip_ = labels.index("Kid.Spin"), labels.index("Kid2.Zip")
            orders.add(spin < zip_)
        assert orders == {True, False}  # both interleavings enumerated

    def test_projection_recovers_local_runs(self, tiny):
        spec, db = tiny
        rng = random.Random(5)
        tree = random_tree(spec, db, rng, max_steps=6)
        nodes = tree_nodes(tree)
        lengths = {i: len(n.run.steps) for i, _, n in nodes}
        for seq in list(linearize(tree, spec))[:8]:
            seen: dict[int, list[int]] = {i: [] for i in lengths}
            for ev, _ in seq:
                if ev.kind == "internal":
                    seen[ev.node].append(ev.pos)
                elif ev.kind == "open":
                    if ev.node == ev.child_node:  # the initial pseudo-event
                        seen[ev.node].append(0)
                    else:
                        seen[ev.node].append(ev.pos)
                        seen[ev.child_node].append(0)
                else:  # close
                    seen[ev.node].append(ev.pos)
                    if ev.child_node is not None:
                        seen[ev.child_node].append(lengths[ev.child_node] - 1)
            for i, positions in seen.items():
                assert positions == list(range(lengths[i])), (
                    f"node {i}: projection {positions}"
                )
