import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iterplan import behaviour as bh
from iterplan.behaviour import (Always, AlwaysEventually, Atom, Const, Fluent, Implies, Lts, Not,
                                WeakUntil)

from oracles import (fluent_at, holds_unrolled, is_trace, product_states, random_formula,
                     random_lts, safety_violated)


def edges(lts):
    return {(s, a, t) for s, a, t in lts.transitions}


# ---------------------------------------------------------------- labels and LTS

@pytest.mark.parametrize("name", ["go.next", "has.next?", "is.next.inP?", "a1.b2", "reset"])
def test_valid_labels(name):
    assert bh.check_label(name) == name


@pytest.mark.parametrize("name", ["", "Go", "1go", "go..next", "go.", "go?x", "a b"])
def test_invalid_labels(name):
    with pytest.raises(bh.BehaviourError):
        bh.check_label(name)


def test_lts_rejects_nondeterminism():
    with pytest.raises(bh.BehaviourError, match="nondeterministic"):
        Lts("n", (0, 1), 0, {(0, "a", 0), (0, "a", 1)}, {"a"})


def test_lts_rejects_unknown_initial_and_labels():
    with pytest.raises(bh.BehaviourError):
        Lts("n", (0,), 5, set(), set())
    with pytest.raises(bh.BehaviourError):
        Lts("n", (0,), 0, {(0, "b", 0)}, {"a"})
    with pytest.raises(bh.BehaviourError):
        Lts("n", (0,), 0, {(0, "a", 0)}, {"a"}, {"z"})


def test_prune_keeps_reachable_only():
    lts = Lts("p", (0, 1, 2), 0, {(0, "a", 1), (2, "b", 0)}, {"a", "b"})
    assert set(lts.prune().states) == {0, 1}


# ---------------------------------------------------------------- composition

def test_compose_single_is_identity():
    it = bh.iterator_model()
    c = bh.compose([it])
    assert len(c.states) == 4
    assert {a for _, a, _ in c.transitions} == it.alphabet


def test_compose_empty_raises():
    with pytest.raises(bh.BehaviourError):
        bh.compose([])


def test_compose_controllability_conflict():
    a = Lts("a", (0,), 0, {(0, "x", 0)}, {"x"}, {"x"})
    b = Lts("b", (0,), 0, {(0, "x", 0)}, {"x"}, set())
    with pytest.raises(bh.BehaviourError, match="controllability"):
        bh.compose([a, b])


def test_compose_two_state_shared_label():
    # a: 0 -s-> 1 -p-> 0 ; b: 0 -q-> 1 -s-> 0 ; shared s
    a = Lts("a", (0, 1), 0, {(0, "s", 1), (1, "p", 0)}, {"s", "p"})
    b = Lts("b", (0, 1), 0, {(0, "q", 1), (1, "s", 0)}, {"s", "q"})
    c = bh.compose([a, b])
    expected, _ = product_states(a, b)
    assert set(c.states) == expected
    assert set(c.states) == {(0, 0), (0, 1), (1, 0), (1, 1)}
    assert c.successors((0, 0)) == {"q": (0, 1)}
    assert c.successors((0, 1)) == {"s": (1, 0)}


def test_compose_fire_sensor_with_current_window():
    sensor = bh.binary_sensor("fire?", "yes.fire", "no.fire")
    window = bh.current_query_window("fire?", "take.photo")
    c = bh.compose([sensor, window])
    for trace in (["fire?"], ["has.next?", "fire?"], ["arrived", "has.next?", "fire?"]):
        assert not is_trace(c, trace)
    assert is_trace(c, ["arrived", "fire?", "yes.fire", "take.photo", "has.next?"])


def test_compose_projection_small_random():
    rng = np.random.default_rng(3)
    for k in range(30):
        a = random_lts(rng, "a", {"x", "y", "z"}, {"x"}, 3)
        b = random_lts(rng, "b", {"y", "z", "w"}, {"w"}, 3)
        c = bh.compose([a, b])
        expected, _ = product_states(a, b)
        assert set(c.states) == expected
        s = c.initial
        trace = []
        for _ in range(12):
            succ = sorted(c.successors(s).items())
            if not succ:
                break
            lab, s = succ[int(rng.integers(len(succ)))]
            trace.append(lab)
        assert is_trace(a, [t for t in trace if t in a.alphabet])
        assert is_trace(b, [t for t in trace if t in b.alphabet])


def test_compose_commutative_and_associative_up_to_size():
    rng = np.random.default_rng(11)
    for _ in range(20):
        parts = [random_lts(rng, n, set(al), set(), 3)
                 for n, al in (("a", "xy"), ("b", "yz"), ("c", "zx"))]
        a, b, c = parts
        ab_c = bh.compose([bh.compose([a, b]), c])
        a_bc = bh.compose([a, bh.compose([b, c])])
        flat = bh.compose([c, b, a])
        assert len(ab_c.states) == len(a_bc.states) == len(flat.states)
        assert len(ab_c.transitions) == len(a_bc.transitions) == len(flat.transitions)


# ---------------------------------------------------------------- fluents

GOING = Fluent("Going", {"go.next"}, {"arrived"}, False)


def test_fluent_step_examples():
    assert bh.fluent_step(GOING, False, "go.next") is True
    assert bh.fluent_step(GOING, True, "unrelated.action") is True
    assert bh.fluent_step(GOING, True, "arrived") is False


def test_evaluate_trace_examples():
    assert bh.evaluate_trace([], [GOING]) == [{"Going": False}]
    vals = bh.evaluate_trace(["go.next", "arrived"], [GOING])
    assert [v["Going"] for v in vals] == [False, True, False]


def test_fluent_invariants():
    with pytest.raises(bh.BehaviourError):
        Fluent("F", {"a"}, {"a"})
    with pytest.raises(bh.BehaviourError):
        Fluent("F", set(), set())


def test_action_fluent_true_right_after_label():
    rng = np.random.default_rng(5)
    alphabet = ["a", "b", "c"]
    f = bh.action_fluent("a", alphabet)
    for _ in range(200):
        trace = [alphabet[i] for i in rng.integers(3, size=int(rng.integers(0, 10)))]
        vals = bh.evaluate_trace(trace, [f])
        for k in range(1, len(trace) + 1):
            assert vals[k]["a"] == (trace[k - 1] == "a")
        assert vals[0]["a"] is False


def test_evaluate_trace_random_against_reference():
    rng = np.random.default_rng(8)
    labels = ["a", "b", "c", "d"]
    for _ in range(1000):
        init = set(rng.choice(labels, size=2, replace=False).tolist())
        term = set(labels) - init - {labels[int(rng.integers(4))]}
        f = Fluent("F", init, term - init, bool(rng.integers(2)))
        trace = [labels[i] for i in rng.integers(4, size=int(rng.integers(0, 12)))]
        vals = bh.evaluate_trace(trace, [f])
        assert [v["F"] for v in vals] == [fluent_at(trace, f, k) for k in range(len(trace) + 1)]


def test_evaluate_trace_short_traces_exhaustive():
    # the acceptance suite runs the full length-8 enumeration; this is the quick version
    f = Fluent("F", {"a"}, {"b"}, False)
    for n in range(5):
        for trace in itertools.product("abc", repeat=n):
            vals = bh.evaluate_trace(trace, [f])
            assert [v["F"] for v in vals] == [fluent_at(trace, f, k) for k in range(n + 1)]


# ---------------------------------------------------------------- lasso semantics

def V(**kw):
    return kw


def test_holds_lasso_examples():
    assert bh.holds_lasso(AlwaysEventually(Atom("a")), [], [V(a=False), V(a=True)])
    f = WeakUntil(Not(Atom("b")), Atom("c"))
    assert not bh.holds_lasso(f, [V(b=True, c=False)], [V(b=False, c=False)])
    assert bh.holds_lasso(f, [V(b=False, c=False)], [V(b=False, c=False)])
    with pytest.raises(bh.BehaviourError):
        bh.holds_lasso(Atom("a"), [V(a=True)], [])


def test_holds_lasso_random_against_unrolling():
    rng = np.random.default_rng(21)
    names = ["p", "q"]
    for _ in range(400):
        f = random_formula(rng, names, 3)
        pre = [dict(zip(names, map(bool, rng.integers(2, size=2)))) for _ in range(int(rng.integers(0, 4)))]
        loop = [dict(zip(names, map(bool, rng.integers(2, size=2)))) for _ in range(int(rng.integers(1, 4)))]
        assert bh.holds_lasso(f, pre, loop) == holds_unrolled(f, pre, loop)


# ---------------------------------------------------------------- safety monitors

def test_safety_shapes():
    assert bh.as_safety_pattern(Always(Implies(Atom("a"), Atom("b")))).kind == "invariant"
    p = bh.as_safety_pattern(Always(Implies(Atom("a"), WeakUntil(Not(Atom("b")), Atom("c")))))
    assert p.kind == "unless"
    with pytest.raises(bh.BehaviourError):
        bh.as_safety_pattern(Always(Atom("a")))
    with pytest.raises(bh.BehaviourError):
        bh.as_safety_pattern(Always(Implies(Atom("a"), WeakUntil(Atom("b"), Atom("c")))))


def test_monitor_true_implies_false_errors_after_any_action():
    f = Fluent("X", {"a"}, {"b"})
    mon = bh.safety_monitor(Always(Implies(Const(True), Const(False))), [f])
    for s, a, t in mon.transitions:
        assert t[0] == bh.ERROR


def test_monitor_phi1_remove_before_visit_condition():
    labels = ["y.next", "remove.next", "has.next?", "arrived"]
    flu = [bh.action_fluent("y.next", labels), bh.action_fluent("remove.next", labels),
           Fluent("Arrived", {"arrived"}, {"has.next?"})]
    phi = Always(Implies(Atom("y.next"), WeakUntil(Not(Atom("remove.next")), Atom("Arrived"))))
    mon = bh.SafetyMonitor(bh.as_safety_pattern(phi))
    vals = bh.evaluate_trace(["y.next", "remove.next"], flu)
    assert mon.run(vals)[-1] == bh.ERROR
    vals = bh.evaluate_trace(["y.next", "arrived", "remove.next"], flu)
    assert mon.run(vals)[-1] != bh.ERROR


def test_monitor_error_is_sink():
    f = Fluent("X", {"a"}, {"b"})
    g = Fluent("Y", {"c"}, {"a"})
    mon = bh.safety_monitor(Always(Implies(Atom("X"), WeakUntil(Not(Atom("Y")), Atom("X")))), [f, g],
                            alphabet=["a", "b", "c"])
    for s, a, t in mon.transitions:
        if s[0] == bh.ERROR:
            assert t == s


def test_monitor_random_traces_against_reference():
    rng = np.random.default_rng(4)
    labels = ["a", "b", "c", "d"]
    flu = [Fluent("F", {"a"}, {"b"}), Fluent("G", {"c"}, {"a", "d"}), Fluent("H", {"d"}, {"c"}, True)]
    names = ["F", "G", "H"]
    checked = 0
    for _ in range(500):
        atoms = [Atom(n) for n in rng.choice(names, size=3)]
        if rng.random() < 0.5:
            phi = Always(Implies(atoms[0], atoms[1]))
        else:
            phi = Always(Implies(atoms[0], WeakUntil(Not(atoms[1]), atoms[2])))
        pat = bh.as_safety_pattern(phi)
        mon = bh.SafetyMonitor(pat)
        trace = [labels[i] for i in rng.integers(4, size=int(rng.integers(0, 10)))]
        vals = bh.evaluate_trace(trace, flu)
        in_error = mon.run(vals)[-1] == bh.ERROR
        assert in_error == safety_violated(pat, vals, bh.eval_bool)
        lts = bh.safety_monitor(phi, flu, labels)
        s = lts.initial
        for a in trace:
            s = lts.step(s, a)
        assert (s[0] == bh.ERROR) == in_error
        checked += 1
    assert checked == 500


def test_compiled_monitor_matches_interpreted():
    rng = np.random.default_rng(9)
    names = ["F", "G", "H"]
    index = {n: i for i, n in enumerate(names)}
    phi = Always(Implies(Atom("F"), WeakUntil(Not(Atom("G")), Atom("H"))))
    mon = bh.SafetyMonitor(bh.as_safety_pattern(phi))
    step = mon.compile(index)
    for _ in range(300):
        status = [bh.IDLE, bh.WATCHING, bh.ERROR][int(rng.integers(3))]
        v = tuple(bool(x) for x in rng.integers(2, size=3))
        assert step(status, v) == mon.step(status, dict(zip(names, v)))


# ---------------------------------------------------------------- templates

def test_iterator_model_exact():
    it = bh.iterator_model()
    assert edges(it) == {(0, "has.next?", 1), (1, "y.next", 2), (1, "n.next", 3),
                         (2, "remove.next", 0), (3, "reset", 0)}
    assert it.controllable == {"has.next?", "remove.next", "reset"}


def test_binary_sensor_exact():
    s = bh.binary_sensor("fire?", "yes.fire", "no.fire")
    assert edges(s) == {(0, "fire?", 1), (1, "yes.fire", 0), (1, "no.fire", 0)}
    assert s.controllable == {"fire?"}
    with pytest.raises(bh.BehaviourError):
        bh.binary_sensor("fire?", "fire?", "no.fire")


def test_template_state_counts():
    assert len(bh.next_query_window("is.next.inP?").states) == 2
    assert len(bh.current_query_window("fire?", "take.photo").states) == 2
    assert len(bh.capability_pair("go.next", "arrived").states) == 2
    assert len(bh.go_guard().states) == 3


def test_go_guard_requires_y_next():
    g = bh.go_guard()
    assert not is_trace(g, ["go.next"])
    assert is_trace(g, ["y.next", "go.next", "remove.next"])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["has.next?", "y.next", "n.next", "remove.next", "reset"]), max_size=12))
def test_iterator_model_traces_alternate(trace):
    # has.next? is always answered before the next query
    if is_trace(bh.iterator_model(), trace):
        asked = 0
        for a in trace:
            if a == "has.next?":
                assert asked == 0
                asked = 1
            elif a in ("y.next", "n.next"):
                assert asked == 1
                asked = 0
