"""Two-player GR(1) games over explicit arenas.

The controller may disable controllable labels only. At each state it either
allows exactly one controllable plus every uncontrollable, or just the
uncontrollables ("wait"). A decision is legal when it leaves at least one
move, so deadlock freedom is part of the game.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import behaviour as bh
from .behaviour import Formula, Lts

DEFAULT_CAP = 10**6
WAIT = None


class ArenaTooLarge(RuntimeError):
    pass


@dataclass(eq=False)
class GameArena:
    """Explicit game graph. ``moves[s]`` is a label-sorted list of (label, target)."""

    keys: list
    initial: int
    moves: list
    controllable: frozenset
    error: np.ndarray
    assumption_sets: list
    goal_sets: list
    fluent_names: tuple = ()
    _edges: tuple | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.keys)

    @property
    def n_states(self) -> int:
        return len(self.keys)

    def edges(self):
        """(unc_src, unc_dst, ctl_src, ctl_dst) index arrays, cached."""
        if self._edges is None:
            us, ud, cs, cd = [], [], [], []
            for s, row in enumerate(self.moves):
                for label, t in row:
                    if label in self.controllable:
                        cs.append(s)
                        cd.append(t)
                    else:
                        us.append(s)
                        ud.append(t)
            self._edges = tuple(np.asarray(a, dtype=np.int64) for a in (us, ud, cs, cd))
        return self._edges

    def options(self, s: int) -> list:
        """Legal decisions at ``s``: WAIT first when available, then controllables by label."""
        row = self.moves[s]
        out = []
        if any(l not in self.controllable for l, _ in row):
            out.append(WAIT)
        out.extend(l for l, _ in row if l in self.controllable)
        return out

    def allowed(self, s: int, decision) -> list:
        return [(l, t) for l, t in self.moves[s] if l not in self.controllable or l == decision]

    def serialize(self) -> str:
        lines = [f"arena states={len(self.keys)} initial={self.initial}",
                 "fluents " + " ".join(self.fluent_names),
                 "controllable " + " ".join(sorted(self.controllable))]
        for s, key in enumerate(self.keys):
            flags = "E" if self.error[s] else "-"
            a = "".join("1" if m[s] else "0" for m in self.assumption_sets)
            g = "".join("1" if m[s] else "0" for m in self.goal_sets)
            moves = " ".join(f"{l}>{t}" for l, t in self.moves[s])
            lines.append(f"{s} {key!r} {flags} A{a} G{g} | {moves}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


def arena_from_lists(moves: Sequence[Sequence[tuple]], controllable: Iterable[str],
                     goals: Sequence[Iterable[int]], assumptions: Sequence[Iterable[int]] = (),
                     error: Iterable[int] = (), initial: int = 0) -> GameArena:
    """Build an arena from plain lists; used for hand-made and random instances."""
    n = len(moves)

    def mask(items):
        m = np.zeros(n, dtype=bool)
        m[list(items)] = True
        return m

    err = mask(error)
    rows = [[] if err[s] else sorted(row) for s, row in enumerate(moves)]
    goal_sets = [mask(g) for g in goals] or [np.ones(n, dtype=bool)]
    ass_sets = [mask(a) for a in assumptions] or [np.ones(n, dtype=bool)]
    return GameArena(list(range(n)), initial, rows, frozenset(controllable), err, ass_sets, goal_sets)


def build_game(doc, cap: int = DEFAULT_CAP) -> GameArena:
    """Product of plant, safety monitors and fluent valuations."""
    plant = doc.plant_lts()
    fluents = doc.fluent_set()
    names = tuple(f.name for f in fluents)
    index = {n: i for i, n in enumerate(names)}
    effects = {}
    for label in sorted(plant.alphabet):
        eff = tuple(True if label in f.initiating else False if label in f.terminating else None
                    for f in fluents)
        effects[label] = eff

    def apply(v, label):
        return tuple(v[i] if e is None else e for i, e in enumerate(effects[label]))

    monitors = [bh.SafetyMonitor(p, doc.defines).compile(index) for p in doc.safety_goals()]
    goal_preds = [bh.compile_bool(g, index, doc.defines) for g in doc.liveness_goals()]
    ass_preds = [bh.compile_bool(a, index, doc.defines) for a in doc.liveness_assumptions()]

    v0 = tuple(f.initial for f in fluents)
    init = (plant.initial, tuple(m(bh.IDLE, v0) for m in monitors), v0)
    ids = {init: 0}
    keys = [init]
    moves = []
    queue = deque([init])
    while queue:
        key = queue.popleft()
        ps, st, v = key
        row = []
        if bh.ERROR not in st:
            for label, ps2 in sorted(plant.successors(ps).items()):
                v2 = apply(v, label)
                nxt = (ps2, tuple(m(s, v2) for m, s in zip(monitors, st)), v2)
                t = ids.get(nxt)
                if t is None:
                    if len(keys) >= cap:
                        raise ArenaTooLarge(f"game exceeds {cap} states")
                    t = ids[nxt] = len(keys)
                    keys.append(nxt)
                    queue.append(nxt)
                row.append((label, t))
        moves.append(row)

    n = len(keys)
    error = np.fromiter((bh.ERROR in k[1] for k in keys), dtype=bool, count=n)

    def sets(preds):
        if not preds:
            return [np.ones(n, dtype=bool)]
        return [np.fromiter((p(k[2]) for k in keys), dtype=bool, count=n) for p in preds]

    return GameArena(keys, 0, moves, plant.controllable | (doc.controlled & plant.alphabet),
                     error, sets(ass_preds), sets(goal_preds), names)


# ---------------------------------------------------------------- solving

class _Cpre:
    def __init__(self, arena: GameArena):
        n = arena.n_states
        us, ud, cs, cd = arena.edges()
        self.n, self.us, self.ud, self.cs, self.cd = n, us, ud, cs, cd
        self.has_unc = np.zeros(n, dtype=bool)
        self.has_unc[us] = True
        self.ok = ~arena.error

    def __call__(self, S: np.ndarray) -> np.ndarray:
        bad = np.zeros(self.n, dtype=bool)
        bad[self.us[~S[self.ud]]] = True
        ctl = np.zeros(self.n, dtype=bool)
        ctl[self.cs[S[self.cd]]] = True
        return self.ok & ~bad & (self.has_unc | ctl)


def _nu_x(cpre, start, not_a, top):
    X = top
    while True:
        nxt = start | (not_a & cpre(X))
        if np.array_equal(nxt, X):
            return X
        X = nxt


def _mu_y(arena, cpre, Z, gi, record=False):
    n = arena.n_states
    top = np.ones(n, dtype=bool)
    base = gi & cpre(Z)
    Y = np.zeros(n, dtype=bool)
    layers = []
    while True:
        start = base | cpre(Y)
        xs = [_nu_x(cpre, start, ~a, top) for a in arena.assumption_sets]
        nxt = np.logical_or.reduce(xs)
        if record:
            layers.append((Y, xs))
        if np.array_equal(nxt, Y):
            return Y, layers
        Y = nxt


def winning_region(arena: GameArena) -> np.ndarray:
    cpre = _Cpre(arena)
    Z = ~arena.error
    while True:
        nxt = Z.copy()
        for gi in arena.goal_sets:
            Y, _ = _mu_y(arena, cpre, Z, gi)
            nxt &= Y
        if np.array_equal(nxt, Z):
            return Z
        Z = nxt


@dataclass
class Strategy:
    """Decisions on (state, memory) pairs reachable from (initial, 0)."""

    arena: GameArena
    decisions: dict
    winning: np.ndarray

    @property
    def n_goals(self) -> int:
        return len(self.arena.goal_sets)

    def next_memory(self, s: int, mem: int) -> int:
        return (mem + 1) % self.n_goals if self.arena.goal_sets[mem][s] else mem


def _choose(arena, s, target):
    for d in arena.options(s):
        if all(target[t] for _, t in arena.allowed(s, d)):
            return d, True
    return None, False


def solve_gr1(arena: GameArena) -> Strategy | None:
    """Winning strategy from the initial state, or None when unrealizable."""
    Z = winning_region(arena)
    if not Z[arena.initial]:
        return None
    cpre = _Cpre(arena)
    n = arena.n_states
    rank, layer_x = [], []
    for gi in arena.goal_sets:
        _, layers = _mu_y(arena, cpre, Z, gi, record=True)
        r = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
        for k in range(len(layers) - 1, 0, -1):
            r[layers[k][0]] = k
        rank.append(r)
        layer_x.append(layers)

    def decide(s, i):
        if arena.goal_sets[i][s]:
            d, ok = _choose(arena, s, Z)
            if ok:
                return d
        r = int(rank[i][s])
        Yprev, xs = layer_x[i][r - 1]
        for x in xs:
            if x[s]:
                d, ok = _choose(arena, s, Yprev & Z)
                if ok:
                    return d
                d, ok = _choose(arena, s, x & Z)
                if ok:
                    return d
        raise AssertionError(f"no ranked decision at state {s} mode {i}")

    strategy = Strategy(arena, {}, Z)
    queue = deque([(arena.initial, 0)])
    strategy.decisions[(arena.initial, 0)] = decide(arena.initial, 0)
    while queue:
        s, i = queue.popleft()
        m = strategy.next_memory(s, i)
        for _, t in arena.allowed(s, strategy.decisions[(s, i)]):
            if (t, m) not in strategy.decisions:
                strategy.decisions[(t, m)] = decide(t, m)
                queue.append((t, m))
    return strategy


def _strategy_graph(arena: GameArena, decisions: Mapping, n_goals: int):
    """BFS order of (state, memory) pairs and their labelled successors."""
    order = [(arena.initial, 0)]
    ids = {order[0]: 0}
    succ = []
    k = 0
    while k < len(order):
        s, i = order[k]
        m = (i + 1) % n_goals if arena.goal_sets[i][s] else i
        row = []
        for label, t in arena.allowed(s, decisions[(s, i)]):
            node = (t, m)
            if node not in ids:
                ids[node] = len(order)
                order.append(node)
            row.append((label, ids[node]))
        succ.append(row)
        k += 1
    return order, succ


def extract_controller(arena: GameArena, strategy: Strategy, name: str = "CONTROLLER") -> Lts:
    order, succ = _strategy_graph(arena, strategy.decisions, strategy.n_goals)
    trans = [(s, l, t) for s, row in enumerate(succ) for l, t in row]
    alphabet = {l for row in arena.moves for l, _ in row}
    return Lts(name, tuple(range(len(order))), 0, trans, alphabet, arena.controllable & alphabet)


def controller_text(c: Lts) -> str:
    """Spec-lang fragment: label headers plus one explicit process."""
    ctl = sorted(c.controllable)
    unc = sorted(c.alphabet - c.controllable)
    parts = [f"states {len(c.states)}", f"init {c.initial}"]
    parts += [f"{s} -{l}-> {t}" for s, l, t in sorted(c.transitions, key=lambda x: (x[0], x[1]))]
    head = ""
    if ctl:
        head += "controlled " + " ".join(ctl) + "\n"
    if unc:
        head += "uncontrolled " + " ".join(unc) + "\n"
    return head + f"process {c.name} = " + " ; ".join(parts) + "\n"


def controller_dot(c: Lts) -> str:
    lines = [f"digraph {c.name} {{", "  rankdir=LR;", f"  start [shape=point]; start -> {c.initial};"]
    for s, l, t in sorted(c.transitions, key=lambda x: (x[0], x[1])):
        style = "dashed" if l in c.controllable else "solid"
        lines.append(f'  {s} -> {t} [label="{l}", style={style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- checking

def _tarjan(nodes: Sequence[int], succ: Callable[[int], Iterable[int]]) -> list[list[int]]:
    """Iterative Tarjan restricted to ``nodes``."""
    inside = set(nodes)
    index, low, on, stack, out = {}, {}, set(), [], []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter([t for t in succ(root) if t in inside]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on.add(w)
                    work.append((w, iter([t for t in succ(w) if t in inside])))
                    advanced = True
                    break
                if w in on:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                out.append(comp)
    return out


def _bfs_path(src, targets, succ_labelled, allowed=None):
    """Shortest labelled path from src to any node in targets (len 0 if src in targets)."""
    if src in targets:
        return src, []
    parent = {src: None}
    queue = deque([src])
    while queue:
        v = queue.popleft()
        for label, w in succ_labelled(v):
            if w in parent or (allowed is not None and w not in allowed):
                continue
            parent[w] = (v, label)
            if w in targets:
                path = []
                x = w
                while parent[x] is not None:
                    x, l = parent[x][0], parent[x][1]
                    path.append(l)
                return w, path[::-1]
            queue.append(w)
    return None, None


def fair_cycle(n_nodes: int, succ: Callable[[int], list], bad: Callable[[int], bool],
               fair_sets: Sequence[Callable[[int], bool]]):
    """Lasso (prefix labels, loop labels) inside ``bad`` nodes touching every fair set, else None.

    Nodes are 0..n_nodes-1, all assumed reachable from node 0.
    """
    def plain(v):
        return [w for _, w in succ(v)]

    nodes = [v for v in range(n_nodes) if bad(v)]
    for comp in _tarjan(nodes, plain):
        cset = set(comp)
        if len(comp) == 1:
            v = comp[0]
            if v not in plain(v):
                continue
        if not all(any(f(v) for v in comp) for f in fair_sets):
            continue
        anchor = min(comp)
        _, prefix = _bfs_path(0, {anchor}, succ)
        loop, cur = [], anchor
        for f in fair_sets:
            hits = {v for v in comp if f(v)}
            cur2, seg = _bfs_path(cur, hits, succ, cset)
            loop += seg
            cur = cur2
        if cur != anchor or not loop:
            if cur == anchor:
                lab, w = next((l, w) for l, w in succ(anchor) if w in cset)
                loop.append(lab)
                cur = w
            _, seg = _bfs_path(cur, {anchor}, succ, cset) if cur != anchor else (anchor, [])
            loop += seg
        return prefix, loop
    return None


@dataclass
class Violation:
    check: str
    message: str
    witness: list
    loop: list = field(default_factory=list)

    def __str__(self):
        text = f"[{self.check}] {self.message}: " + " ".join(self.witness)
        if self.loop:
            text += " (" + " ".join(self.loop) + ")^w"
        return text


@dataclass
class VerificationReport:
    states: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def failed(self, check: str) -> bool:
        return any(v.check == check for v in self.violations)

    def __str__(self):
        if self.ok:
            return f"verified: {self.states} product states, all checks pass"
        return "\n".join(str(v) for v in self.violations)


CHECKS = ("deadlock", "blocking", "safety", "liveness")


def _check_product(init, expand, goals, assumptions) -> VerificationReport:
    """Shared core. ``expand(node)`` returns (moves, blocked_labels, is_error, info)."""
    ids = {init: 0}
    nodes = [init]
    succ, error, info = [], [], []
    violations = []
    parents = {0: None}

    def path_to(k):
        out = []
        while parents[k] is not None:
            k, l = parents[k]
            out.append(l)
        return out[::-1]

    k = 0
    while k < len(nodes):
        moves, blocked, is_err, extra = expand(nodes[k])
        row = []
        for label, node in moves:
            j = ids.get(node)
            if j is None:
                j = ids[node] = len(nodes)
                nodes.append(node)
                parents[j] = (k, label)
            row.append((label, j))
        succ.append(row)
        error.append(is_err)
        info.append(extra)
        if is_err:
            violations.append(Violation("safety", "monitor error reachable", path_to(k)))
        else:
            if not row:
                violations.append(Violation("deadlock", "no enabled move", path_to(k)))
            if blocked:
                violations.append(Violation("blocking", "uncontrollable disabled: "
                                            + ",".join(sorted(blocked)), path_to(k)))
        k += 1
    fair = [lambda v, a=a: a(info[v]) for a in assumptions]
    for i, g in enumerate(goals):
        lasso = fair_cycle(len(nodes), lambda v: succ[v],
                           lambda v: not error[v] and not g(info[v]), fair)
        if lasso is not None:
            violations.append(Violation("liveness", f"goal {i} avoided forever", lasso[0], lasso[1]))
    return VerificationReport(len(nodes), violations)


def _as_pred(item, index, defines):
    if isinstance(item, Formula):
        f = bh.compile_bool(bh.as_liveness(item) if not bh.is_boolean(item) else item, index, defines)
        return lambda x: f(x[1])
    if callable(item):
        return lambda x: item(x[0])
    members = frozenset(item)
    return lambda x: x[0] in members


def verify_controller(E: Lts, C: Lts, controllable: Iterable[str] | None = None,
                      assumptions: Sequence = (), goals: Sequence = (),
                      safety: Sequence[bh.SafetyPattern] = (), fluents: Sequence[bh.Fluent] = (),
                      defines: Mapping[str, Formula] | None = None,
                      plant_error: Iterable = ()) -> VerificationReport:
    """Explicit check of E||C.

    Goals and assumptions are fluent formulas (``[]<> b`` or plain ``b``) or
    sets of plant states. ``plant_error`` marks plant states that count as
    safety failures, for arenas without monitors.
    """
    ctl = frozenset(E.controllable if controllable is None else controllable)
    names = tuple(f.name for f in fluents)
    index = {n: i for i, n in enumerate(names)}
    eff = {l: tuple(True if l in f.initiating else False if l in f.terminating else None
                    for f in fluents) for l in E.alphabet | C.alphabet}
    monitors = [bh.SafetyMonitor(p, defines).compile(index) for p in safety]
    perr = frozenset(plant_error)
    shared = E.alphabet & C.alphabet

    v0 = tuple(f.initial for f in fluents)
    init = (E.initial, C.initial, tuple(m(bh.IDLE, v0) for m in monitors), v0)

    def expand(node):
        e, c, st, v = node
        is_err = bh.ERROR in st or e in perr
        if is_err:
            return [], (), True, (e, v)
        es, cs = E.successors(e), C.successors(c)
        moves = []
        blocked = []
        for label in sorted(set(es) | set(cs)):
            if label in shared:
                if label in es and label in cs:
                    e2, c2 = es[label], cs[label]
                elif label in es and label not in ctl:
                    blocked.append(label)
                    continue
                else:
                    continue
            elif label in es:
                e2, c2 = es[label], c
            else:
                e2, c2 = e, cs[label]
            v2 = tuple(v[i] if x is None else x for i, x in enumerate(eff[label]))
            moves.append((label, (e2, c2, tuple(m(s, v2) for m, s in zip(monitors, st)), v2)))
        return moves, blocked, False, (e, v)

    return _check_product(init, expand,
                          [_as_pred(g, index, defines) for g in goals],
                          [_as_pred(a, index, defines) for a in assumptions])


def arena_lts(arena: GameArena, name: str = "ARENA") -> Lts:
    trans = [(s, l, t) for s, row in enumerate(arena.moves) for l, t in row]
    alphabet = {l for _, l, _ in trans}
    return Lts(name, tuple(range(arena.n_states)), arena.initial, trans, alphabet,
               arena.controllable & alphabet)


def verify_arena_controller(arena: GameArena, C: Lts) -> VerificationReport:
    E = arena_lts(arena)
    goals = [set(np.flatnonzero(g).tolist()) for g in arena.goal_sets]
    ass = [set(np.flatnonzero(a).tolist()) for a in arena.assumption_sets]
    return verify_controller(E, C, arena.controllable, ass, goals,
                             plant_error=np.flatnonzero(arena.error).tolist())


def verify_doc_controller(doc, C: Lts) -> VerificationReport:
    ass = doc.liveness_assumptions()
    return verify_controller(doc.plant_lts(), C, doc.controlled, ass, doc.liveness_goals(),
                             doc.safety_goals(), doc.fluent_set(), doc.defines)


# ---------------------------------------------------------------- oracle

def brute_force_realizability(arena: GameArena, max_states: int = 8, max_sets: int = 2) -> bool:
    """Exhaustive search over memoryful strategies (goal index memory).

    Decisions are assigned lazily to reachable (state, memory) pairs, pruning
    as soon as an error state becomes reachable.
    """
    if arena.n_states > max_states or len(arena.goal_sets) > max_sets \
            or len(arena.assumption_sets) > max_sets:
        raise ValueError("arena outside brute-force bounds")
    n_goals = len(arena.goal_sets)

    def closure(assign):
        seen = {(arena.initial, 0)}
        order = [(arena.initial, 0)]
        k = 0
        while k < len(order):
            s, i = order[k]
            k += 1
            if arena.error[s]:
                return None, None
            d = assign.get((s, i), "?")
            if d == "?":
                continue
            m = (i + 1) % n_goals if arena.goal_sets[i][s] else i
            for _, t in arena.allowed(s, d):
                if (t, m) not in seen:
                    seen.add((t, m))
                    order.append((t, m))
        return order, [p for p in order if p not in assign]

    def live(assign, order):
        ids = {p: k for k, p in enumerate(order)}
        succ = []
        for s, i in order:
            m = (i + 1) % n_goals if arena.goal_sets[i][s] else i
            succ.append([(l, ids[(t, m)]) for l, t in arena.allowed(s, assign[(s, i)])])
        fair = [lambda v, a=a: bool(a[order[v][0]]) for a in arena.assumption_sets]
        for g in arena.goal_sets:
            if fair_cycle(len(order), lambda v: succ[v],
                          lambda v, g=g: not g[order[v][0]], fair) is not None:
                return False
        return True

    def search(assign):
        order, open_ = closure(assign)
        if order is None:
            return False
        if not open_:
            return live(assign, order)
        pair = open_[0]
        for d in arena.options(pair[0]):
            assign[pair] = d
            if search(assign):
                return True
            del assign[pair]
        return False

    return search({})


def random_arena(rng: np.random.Generator, max_states: int = 8, max_sets: int = 2,
                 p_edge: float = 0.45, p_error: float = 0.12) -> GameArena:
    n = int(rng.integers(1, max_states + 1))
    labels = ["c1", "c2", "u1", "u2"]
    moves = []
    for _ in range(n):
        row = [(l, int(rng.integers(n))) for l in labels if rng.random() < p_edge]
        moves.append(row)
    error = [s for s in range(1, n) if rng.random() < p_error]

    def subset():
        return [s for s in range(n) if rng.random() < 0.4]

    goals = [subset() for _ in range(int(rng.integers(1, max_sets + 1)))]
    ass = [subset() for _ in range(int(rng.integers(0, max_sets + 1)))]
    return arena_from_lists(moves, {"c1", "c2"}, goals, ass, error)


def synthesize(doc, cap: int = DEFAULT_CAP):
    """build_game + solve_gr1 + extract_controller; returns (arena, controller or None)."""
    arena = build_game(doc, cap)
    strategy = solve_gr1(arena)
    return arena, (None if strategy is None else extract_controller(arena, strategy))
