"""Labelled transition systems, fluents and FLTL over finite and lasso traces."""
from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

LABEL_RE = re.compile(r"[a-z][a-zA-Z0-9]*(\.[a-zA-Z0-9]+)*\??\Z")


class BehaviourError(ValueError):
    """Raised for malformed transition systems, fluents or formulas."""


def check_label(name: str) -> str:
    if not isinstance(name, str) or not LABEL_RE.match(name):
        raise BehaviourError(f"invalid action label {name!r}")
    return name


@dataclass(frozen=True)
class ActionLabel:
    name: str
    controlled: bool

    def __post_init__(self):
        check_label(self.name)


# ---------------------------------------------------------------------------
# LTS


@dataclass(frozen=True, eq=False)
class Lts:
    """A deterministic finite LTS.

    ``controllable`` is the subset of ``alphabet`` the controller may disable.
    """

    name: str
    states: tuple
    initial: object
    transitions: frozenset
    alphabet: frozenset
    controllable: frozenset = frozenset()
    _delta: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "transitions", frozenset(self.transitions))
        object.__setattr__(self, "alphabet", frozenset(self.alphabet))
        object.__setattr__(self, "controllable", frozenset(self.controllable))
        known = set(states)
        if self.initial not in known:
            raise BehaviourError(f"{self.name}: initial state {self.initial!r} not in states")
        for label in self.alphabet:
            check_label(label)
        if not self.controllable <= self.alphabet:
            extra = sorted(self.controllable - self.alphabet)
            raise BehaviourError(f"{self.name}: controllable labels outside alphabet: {extra}")
        delta: dict = {s: {} for s in states}
        for src, label, dst in self.transitions:
            if src not in known or dst not in known:
                raise BehaviourError(f"{self.name}: transition {src}-{label}->{dst} uses unknown state")
            if label not in self.alphabet:
                raise BehaviourError(f"{self.name}: label {label!r} not in alphabet")
            if label in delta[src] and delta[src][label] != dst:
                raise BehaviourError(f"{self.name}: nondeterministic on ({src!r}, {label})")
            delta[src][label] = dst
        object.__setattr__(self, "_delta", delta)

    def successors(self, state) -> Mapping[str, object]:
        return self._delta[state]

    def enabled(self, state) -> frozenset:
        return frozenset(self._delta[state])

    def step(self, state, label):
        return self._delta[state].get(label)

    def is_controllable(self, label: str) -> bool:
        return label in self.controllable

    def reachable(self) -> list:
        seen = {self.initial}
        order = [self.initial]
        queue = deque(order)
        while queue:
            s = queue.popleft()
            for label in sorted(self._delta[s]):
                t = self._delta[s][label]
                if t not in seen:
                    seen.add(t)
                    order.append(t)
                    queue.append(t)
        return order

    def prune(self) -> "Lts":
        keep = self.reachable()
        kept = set(keep)
        trans = {(s, a, t) for (s, a, t) in self.transitions if s in kept}
        return Lts(self.name, tuple(keep), self.initial, trans, self.alphabet, self.controllable)

    def canonical(self, name: str | None = None) -> "Lts":
        """Reachable part renumbered 0..n-1 in BFS order over sorted labels."""
        order = self.reachable()
        index = {s: i for i, s in enumerate(order)}
        trans = {
            (index[s], a, index[t])
            for s in order
            for a, t in self._delta[s].items()
        }
        return Lts(name or self.name, tuple(range(len(order))), 0, trans,
                   self.alphabet, self.controllable)

    def __len__(self):
        return len(self.states)

    def __repr__(self):
        return (f"Lts({self.name!r}, states={len(self.states)}, "
                f"transitions={len(self.transitions)}, alphabet={len(self.alphabet)})")


def compose(parts: Sequence[Lts], name: str | None = None) -> Lts:
    """Parallel composition; shared labels synchronise, others interleave."""
    parts = list(parts)
    if not parts:
        raise BehaviourError("compose needs at least one LTS")
    controllable: set = set()
    uncontrollable: set = set()
    for p in parts:
        controllable |= p.controllable
        uncontrollable |= p.alphabet - p.controllable
    conflict = controllable & uncontrollable
    if conflict:
        raise BehaviourError(f"controllability conflict on {sorted(conflict)}")
    alphabet = frozenset().union(*(p.alphabet for p in parts))
    owners = {a: [i for i, p in enumerate(parts) if a in p.alphabet] for a in alphabet}
    initial = tuple(p.initial for p in parts)
    seen = {initial}
    order = [initial]
    trans = set()
    queue = deque([initial])
    while queue:
        state = queue.popleft()
        candidates = set()
        for i, p in enumerate(parts):
            candidates.update(p._delta[state[i]])
        for label in sorted(candidates):
            nxt = list(state)
            ok = True
            for i in owners[label]:
                t = parts[i]._delta[state[i]].get(label)
                if t is None:
                    ok = False
                    break
                nxt[i] = t
            if not ok:
                continue
            nxt = tuple(nxt)
            trans.add((state, label, nxt))
            if nxt not in seen:
                seen.add(nxt)
                order.append(nxt)
                queue.append(nxt)
    return Lts(name or "||".join(p.name for p in parts), tuple(order), initial, trans,
               alphabet, frozenset(controllable))


def lts_from_edges(name: str, edges: Iterable[tuple], controllable: Iterable[str],
                   n_states: int | None = None, initial=0) -> Lts:
    edges = list(edges)
    if n_states is None:
        n_states = 1 + max([initial] + [max(s, t) for s, _, t in edges])
    alphabet = {a for _, a, _ in edges}
    ctrl = set(controllable) & alphabet
    return Lts(name, tuple(range(n_states)), initial, edges, alphabet, ctrl)


# ---------------------------------------------------------------------------
# Fluents


@dataclass(frozen=True)
class Fluent:
    name: str
    initiating: frozenset
    terminating: frozenset
    initial: bool = False

    def __post_init__(self):
        object.__setattr__(self, "initiating", frozenset(self.initiating))
        object.__setattr__(self, "terminating", frozenset(self.terminating))
        if self.initiating & self.terminating:
            raise BehaviourError(f"fluent {self.name}: initiating and terminating overlap")
        if not (self.initiating | self.terminating):
            raise BehaviourError(f"fluent {self.name}: no initiating or terminating actions")


def action_fluent(label: str, alphabet: Iterable[str]) -> Fluent:
    """The fluent that is true exactly right after ``label``."""
    return Fluent(label, frozenset({label}), frozenset(alphabet) - {label}, False)


def fluent_step(fluent: Fluent, current: bool, action: str) -> bool:
    if action in fluent.initiating:
        return True
    if action in fluent.terminating:
        return False
    return current


def evaluate_trace(trace: Sequence[str], fluents: Iterable[Fluent]) -> list[dict]:
    fluents = list(fluents)
    val = {f.name: f.initial for f in fluents}
    out = [dict(val)]
    for action in trace:
        val = {f.name: fluent_step(f, val[f.name], action) for f in fluents}
        out.append(val)
    return out


# ---------------------------------------------------------------------------
# FLTL syntax


class Formula:
    __slots__ = ()


@dataclass(frozen=True)
class Const(Formula):
    value: bool


@dataclass(frozen=True)
class Atom(Formula):
    name: str


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Iff(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Always(Formula):
    arg: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    arg: Formula


@dataclass(frozen=True)
class WeakUntil(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class AlwaysEventually(Formula):
    arg: Formula


BOOLEAN_NODES = (Const, Atom, Not, And, Or, Implies, Iff)
TEMPORAL_NODES = (Always, Eventually, WeakUntil, AlwaysEventually)


def is_boolean(f: Formula) -> bool:
    if isinstance(f, (Const, Atom)):
        return True
    if isinstance(f, Not):
        return is_boolean(f.arg)
    if isinstance(f, (And, Or, Implies, Iff)):
        return is_boolean(f.left) and is_boolean(f.right)
    return False


def atoms(f: Formula) -> set[str]:
    if isinstance(f, Atom):
        return {f.name}
    if isinstance(f, Const):
        return set()
    if isinstance(f, (Not, Always, Eventually, AlwaysEventually)):
        return atoms(f.arg)
    if isinstance(f, (And, Or, Implies, Iff, WeakUntil)):
        return atoms(f.left) | atoms(f.right)
    raise BehaviourError(f"unsupported formula node {type(f).__name__}")


def eval_bool(f: Formula, val: Mapping[str, bool], defines: Mapping[str, Formula] | None = None) -> bool:
    """Evaluate a boolean combination of fluents; names may refer to ``defines``."""
    if isinstance(f, Atom):
        if defines and f.name in defines:
            return eval_bool(defines[f.name], val, defines)
        return val[f.name]
    if isinstance(f, Const):
        return f.value
    if isinstance(f, Not):
        return not eval_bool(f.arg, val, defines)
    if isinstance(f, And):
        return eval_bool(f.left, val, defines) and eval_bool(f.right, val, defines)
    if isinstance(f, Or):
        return eval_bool(f.left, val, defines) or eval_bool(f.right, val, defines)
    if isinstance(f, Implies):
        return (not eval_bool(f.left, val, defines)) or eval_bool(f.right, val, defines)
    if isinstance(f, Iff):
        return eval_bool(f.left, val, defines) == eval_bool(f.right, val, defines)
    raise BehaviourError(f"not a boolean combination of fluents: {type(f).__name__}")


def compile_bool(f: Formula, index: Mapping[str, int],
                 defines: Mapping[str, Formula] | None = None):
    """Compile a boolean combination into a predicate over valuation tuples."""
    if isinstance(f, Atom):
        if defines and f.name in defines:
            return compile_bool(defines[f.name], index, defines)
        i = index[f.name]
        return lambda v: v[i]
    if isinstance(f, Const):
        value = f.value
        return lambda v: value
    if isinstance(f, Not):
        a = compile_bool(f.arg, index, defines)
        return lambda v: not a(v)
    if isinstance(f, (And, Or, Implies, Iff)):
        a = compile_bool(f.left, index, defines)
        b = compile_bool(f.right, index, defines)
        if isinstance(f, And):
            return lambda v: a(v) and b(v)
        if isinstance(f, Or):
            return lambda v: a(v) or b(v)
        if isinstance(f, Implies):
            return lambda v: (not a(v)) or b(v)
        return lambda v: a(v) == b(v)
    raise BehaviourError(f"not a boolean combination of fluents: {type(f).__name__}")


def expand_defines(f: Formula, defines: Mapping[str, Formula]) -> Formula:
    if isinstance(f, Atom):
        if f.name in defines:
            return expand_defines(defines[f.name], defines)
        return f
    if isinstance(f, Const):
        return f
    if isinstance(f, (Not, Always, Eventually, AlwaysEventually)):
        return type(f)(expand_defines(f.arg, defines))
    if isinstance(f, (And, Or, Implies, Iff, WeakUntil)):
        return type(f)(expand_defines(f.left, defines), expand_defines(f.right, defines))
    raise BehaviourError(f"unsupported formula node {type(f).__name__}")


def holds_lasso(formula: Formula, prefix: Sequence[Mapping[str, bool]],
                loop: Sequence[Mapping[str, bool]],
                defines: Mapping[str, Formula] | None = None) -> bool:
    """Truth of ``formula`` at position 0 of the word prefix . loop^omega."""
    if not loop:
        raise BehaviourError("lasso loop must be non-empty")
    word = list(prefix) + list(loop)
    n = len(word)
    start = len(prefix)
    succ = [i + 1 for i in range(n - 1)] + [start]

    def fix(init: bool, update) -> list[bool]:
        vec = [init] * n
        while True:
            new = [update(i, vec) for i in range(n)]
            if new == vec:
                return vec
            vec = new

    def ev(f: Formula) -> list[bool]:
        if isinstance(f, BOOLEAN_NODES) and is_boolean(f):
            return [eval_bool(f, v, defines) for v in word]
        if isinstance(f, Not):
            return [not x for x in ev(f.arg)]
        if isinstance(f, (And, Or, Implies, Iff)):
            a, b = ev(f.left), ev(f.right)
            op = {And: lambda x, y: x and y, Or: lambda x, y: x or y,
                  Implies: lambda x, y: (not x) or y, Iff: lambda x, y: x == y}[type(f)]
            return [op(x, y) for x, y in zip(a, b)]
        if isinstance(f, Always):
            a = ev(f.arg)
            return fix(True, lambda i, g: a[i] and g[succ[i]])
        if isinstance(f, Eventually):
            a = ev(f.arg)
            return fix(False, lambda i, g: a[i] or g[succ[i]])
        if isinstance(f, AlwaysEventually):
            return ev(Always(Eventually(f.arg)))
        if isinstance(f, WeakUntil):
            a, b = ev(f.left), ev(f.right)
            return fix(True, lambda i, g: b[i] or (a[i] and g[succ[i]]))
        raise BehaviourError(f"unsupported formula node {type(f).__name__}")

    return ev(formula)[0]


# ---------------------------------------------------------------------------
# Safety patterns and monitors

IDLE, WATCHING, ERROR = "idle", "watching", "error"


@dataclass(frozen=True)
class SafetyPattern:
    """``always (trigger => required)`` or ``always (trigger => not forbidden wuntil release)``."""

    trigger: Formula
    required: Formula | None = None
    forbidden: Formula | None = None
    release: Formula | None = None

    @property
    def kind(self) -> str:
        return "invariant" if self.forbidden is None else "unless"

    def to_formula(self) -> Formula:
        if self.forbidden is None:
            return Always(Implies(self.trigger, self.required))
        return Always(Implies(self.trigger, WeakUntil(Not(self.forbidden), self.release)))


def as_safety_pattern(f: Formula) -> SafetyPattern:
    if isinstance(f, SafetyPattern):
        return f
    if isinstance(f, Always) and isinstance(f.arg, Implies) and is_boolean(f.arg.left):
        alpha, body = f.arg.left, f.arg.right
        if is_boolean(body):
            return SafetyPattern(alpha, required=body)
        if (isinstance(body, WeakUntil) and isinstance(body.left, Not)
                and is_boolean(body.left.arg) and is_boolean(body.right)):
            return SafetyPattern(alpha, forbidden=body.left.arg, release=body.right)
    raise BehaviourError("safety formula must be always (A => B) or always (A => not B wuntil C)")


def as_liveness(f: Formula) -> Formula:
    """Body of a ``[]<> phi`` formula with boolean ``phi``."""
    if isinstance(f, AlwaysEventually) and is_boolean(f.arg):
        return f.arg
    if isinstance(f, Always) and isinstance(f.arg, Eventually) and is_boolean(f.arg.arg):
        return f.arg.arg
    raise BehaviourError("liveness formula must be []<> of a boolean combination")


@dataclass(frozen=True)
class SafetyMonitor:
    """Activation-status monitor; fluent values come from the caller's valuation."""

    pattern: SafetyPattern
    defines: Mapping[str, Formula] | None = None

    def step(self, status: str, val: Mapping[str, bool]) -> str:
        p = self.pattern
        if status == ERROR:
            return ERROR
        if p.forbidden is None:
            if eval_bool(p.trigger, val, self.defines) and not eval_bool(p.required, val, self.defines):
                return ERROR
            return IDLE
        if status != WATCHING and not eval_bool(p.trigger, val, self.defines):
            return IDLE
        if eval_bool(p.release, val, self.defines):
            return IDLE
        if eval_bool(p.forbidden, val, self.defines):
            return ERROR
        return WATCHING

    def initial(self, val: Mapping[str, bool]) -> str:
        return self.step(IDLE, val)

    def compile(self, index: Mapping[str, int]):
        """Same transition function over valuation tuples indexed by ``index``."""
        p = self.pattern
        trig = compile_bool(p.trigger, index, self.defines)
        if p.forbidden is None:
            req = compile_bool(p.required, index, self.defines)

            def step(status, v):
                if status == ERROR or (trig(v) and not req(v)):
                    return ERROR
                return IDLE
            return step
        forb = compile_bool(p.forbidden, index, self.defines)
        rel = compile_bool(p.release, index, self.defines)

        def step(status, v):
            if status == ERROR:
                return ERROR
            if status != WATCHING and not trig(v):
                return IDLE
            if rel(v):
                return IDLE
            if forb(v):
                return ERROR
            return WATCHING
        return step

    def run(self, valuations: Sequence[Mapping[str, bool]]) -> list[str]:
        out = [self.initial(valuations[0])]
        for v in valuations[1:]:
            out.append(self.step(out[-1], v))
        return out


def safety_monitor(pattern, fluents: Iterable[Fluent], alphabet: Iterable[str] | None = None,
                   defines: Mapping[str, Formula] | None = None) -> Lts:
    """Explicit monitor LTS over ``alphabet``; states are (status, valuation) pairs.

    The state whose status is ``"error"`` is a sink.
    """
    pattern = as_safety_pattern(pattern)
    fluents = sorted(fluents, key=lambda f: f.name)
    if alphabet is None:
        alphabet = set()
        for f in fluents:
            alphabet |= f.initiating | f.terminating
    alphabet = sorted(alphabet)
    names = [f.name for f in fluents]
    mon = SafetyMonitor(pattern, defines)
    v0 = tuple(f.initial for f in fluents)
    s0 = (mon.initial(dict(zip(names, v0))), v0)
    seen = {s0}
    queue = deque([s0])
    trans = set()
    while queue:
        status, v = queue.popleft()
        for a in alphabet:
            if status == ERROR:
                t = (ERROR, v)
            else:
                nv = tuple(fluent_step(f, x, a) for f, x in zip(fluents, v))
                t = (mon.step(status, dict(zip(names, nv))), nv)
            trans.add(((status, v), a, t))
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return Lts("monitor", tuple(sorted(seen, key=repr)), s0, trans, alphabet, frozenset())


# ---------------------------------------------------------------------------
# Templates (models of the iterator, sensors, constraints and capabilities)

HAS_NEXT, Y_NEXT, N_NEXT, REMOVE_NEXT, RESET = "has.next?", "y.next", "n.next", "remove.next", "reset"
GO_NEXT, ARRIVED = "go.next", "arrived"


def _template(name: str, edges, controlled, n_states: int) -> Lts:
    for _, a, _ in edges:
        check_label(a)
    return lts_from_edges(name, edges, controlled, n_states)


def _distinct(*labels):
    if len(set(labels)) != len(labels):
        raise BehaviourError(f"label collision in template arguments {labels}")


def iterator_model() -> Lts:
    edges = [(0, HAS_NEXT, 1), (1, Y_NEXT, 2), (1, N_NEXT, 3), (2, REMOVE_NEXT, 0), (3, RESET, 0)]
    return _template("iterator", edges, {HAS_NEXT, REMOVE_NEXT, RESET}, 4)


def binary_sensor(query: str, yes: str, no: str) -> Lts:
    _distinct(query, yes, no)
    edges = [(0, query, 1), (1, yes, 0), (1, no, 0)]
    return _template(f"sensor({query})", edges, {query}, 2)


def next_query_window(*queries: str) -> Lts:
    """Queries about the iterator's next location only between y.next and remove.next."""
    if not queries:
        raise BehaviourError("next_query_window needs at least one query")
    _distinct(Y_NEXT, REMOVE_NEXT, *queries)
    edges = [(0, Y_NEXT, 1), (1, REMOVE_NEXT, 0), (0, REMOVE_NEXT, 0)]
    edges += [(1, q, 1) for q in queries]
    return _template("next_window", edges, {REMOVE_NEXT, *queries}, 2)


def current_query_window(*queries: str) -> Lts:
    """Actions about the current location only between arrived and has.next?."""
    if not queries:
        raise BehaviourError("current_query_window needs at least one query")
    _distinct(ARRIVED, HAS_NEXT, *queries)
    edges = [(0, ARRIVED, 1), (1, HAS_NEXT, 0), (0, HAS_NEXT, 0)]
    edges += [(1, q, 1) for q in queries]
    return _template("current_window", edges, {HAS_NEXT, *queries}, 2)


def capability_pair(command: str, done: str, *instant: str) -> Lts:
    """Start/end of a control mode, with instantaneous capabilities allowed throughout."""
    _distinct(command, done, *instant)
    edges = [(0, command, 1), (1, done, 0)]
    edges += [(s, a, s) for a in instant for s in (0, 1)]
    return _template(f"capability({command})", edges, {command, *instant}, 2)


def go_guard() -> Lts:
    edges = [(0, Y_NEXT, 1), (1, GO_NEXT, 2), (1, REMOVE_NEXT, 0), (2, REMOVE_NEXT, 0)]
    return _template("go_guard", edges, {GO_NEXT, REMOVE_NEXT}, 3)


TEMPLATES = {
    "iterator": iterator_model,
    "binary_sensor": binary_sensor,
    "next_query_window": next_query_window,
    "current_query_window": current_query_window,
    "capability_pair": capability_pair,
    "go_guard": go_guard,
}
