"""Line-oriented ``.isp`` format for control problems: parser, validator, printer.

A document looks like::

    controlled   has.next? remove.next reset
    uncontrolled y.next n.next
    process ITER = template iterator
    process P = states 2 ; init 0 ; 0 -y.next-> 1 ; 1 -remove.next-> 0
    fluent Arrived = <{arrived}, {has.next?}> initially false
    define Ready = Arrived and not Going
    assume liveness []<> SomeFluent
    goal liveness []<> has.next?
    goal safety always (y.next => not remove.next wuntil Ready)
    plant ITER P
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterator

from . import behaviour as bh
from .behaviour import (And, Atom, Always, AlwaysEventually, Const, Fluent, Formula, Iff,
                        Implies, Lts, Not, Or, WeakUntil)

KEYWORDS = {
    "controlled", "uncontrolled", "process", "template", "states", "init", "fluent",
    "initially", "true", "false", "assume", "goal", "liveness", "safety", "always",
    "not", "and", "or", "iff", "wuntil", "plant", "define",
}

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<arrow>->)
  | (?P<implies>=>)
  | (?P<box_dia>\[\]<>)
  | (?P<int>[0-9]+)
  | (?P<label>[a-z][a-zA-Z0-9_]*(?:\.[a-zA-Z0-9_]+)*\??)
  | (?P<name>[A-Z][A-Za-z0-9_]*)
  | (?P<punct>[=;<>{},()\-])
""", re.VERBOSE)


class SpecError(ValueError):
    """Parse or validation failure located at ``line``/``column`` (1-based)."""

    def __init__(self, message: str, line: int, column: int, end_column: int | None = None,
                 kind: str = "syntax"):
        self.message = message
        self.line = line
        self.column = column
        self.end_column = end_column if end_column is not None else column + 1
        self.kind = kind
        super().__init__(f"{line}:{column}: {kind} error: {message}")

    @property
    def span(self) -> tuple[int, int, int]:
        return (self.line, self.column, self.end_column)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int

    @property
    def end(self) -> int:
        return self.col + len(self.text)


def tokenize_line(text: str, lineno: int) -> list[Token]:
    out = []
    pos = 0
    while pos < len(text):
        if text[pos] == "#":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise SpecError(f"unexpected character {text[pos]!r}", lineno, pos + 1, kind="lexical")
        kind = m.lastgroup
        if kind != "ws":
            tok = m.group()
            if kind == "label" and tok in KEYWORDS:
                kind = "kw"
            out.append(Token(kind, tok, lineno, pos + 1))
        pos = m.end()
    return out


# ---------------------------------------------------------------------------
# document model


@dataclass(frozen=True)
class ProcessDef:
    name: str
    template: str | None = None
    args: tuple = ()
    n_states: int = 1
    initial: int = 0
    transitions: tuple = ()

    def labels(self) -> set[str]:
        if self.template is not None:
            return set(bh.TEMPLATES[self.template](*self.args).alphabet)
        return {a for _, a, _ in self.transitions}


@dataclass
class SpecDocument:
    controlled: frozenset = frozenset()
    uncontrolled: frozenset = frozenset()
    processes: dict = field(default_factory=dict)
    fluents: dict = field(default_factory=dict)
    defines: dict = field(default_factory=dict)
    assumptions: list = field(default_factory=list)
    goals: list = field(default_factory=list)
    plant: list = field(default_factory=list)

    @property
    def labels(self) -> frozenset:
        return self.controlled | self.uncontrolled

    def liveness_goals(self) -> list[Formula]:
        return [bh.as_liveness(g) for g in self.goals if not _is_safety(g)]

    def safety_goals(self) -> list[bh.SafetyPattern]:
        return [bh.as_safety_pattern(g) for g in self.goals if _is_safety(g)]

    def liveness_assumptions(self) -> list[Formula]:
        return [bh.as_liveness(a) for a in self.assumptions]

    def build_process(self, name: str) -> Lts:
        p = self.processes[name]
        if p.template is not None:
            lts = bh.TEMPLATES[p.template](*p.args)
            trans = lts.transitions
            n, init = len(lts.states), lts.initial
        else:
            trans, n, init = p.transitions, p.n_states, p.initial
        alphabet = {a for _, a, _ in trans}
        return Lts(name, tuple(range(n)), init, trans, alphabet, alphabet & self.controlled)

    def plant_lts(self) -> Lts:
        return bh.compose([self.build_process(n) for n in self.plant], name="plant")

    def referenced_atoms(self) -> set[str]:
        names = set()
        for f in list(self.assumptions) + list(self.goals) + list(self.defines.values()):
            names |= bh.atoms(f)
        return names

    def fluent_set(self) -> list[Fluent]:
        """Declared fluents plus one action fluent per label used as an atom, sorted by name."""
        out = dict(self.fluents)
        for name in self.referenced_atoms():
            if name in self.labels and name not in out:
                out[name] = bh.action_fluent(name, self.labels)
        return [out[k] for k in sorted(out)]


def _is_safety(f: Formula) -> bool:
    return isinstance(f, Always) and isinstance(f.arg, Implies)


# ---------------------------------------------------------------------------
# parser


class _Cursor:
    def __init__(self, toks: list[Token], line: int, length: int):
        self.toks = toks
        self.i = 0
        self.line = line
        self.length = length

    def peek(self) -> Token | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def at(self, text: str) -> bool:
        t = self.peek()
        return t is not None and t.text == text

    def error(self, msg: str, tok: Token | None = None, kind: str = "syntax") -> SpecError:
        tok = tok or self.peek()
        if tok is None:
            col = self.length + 1
            return SpecError(msg + " (end of line)", self.line, max(col - 1, 1), col, kind)
        return SpecError(msg, tok.line, tok.col, tok.end, kind)

    def take(self, kind: str | None = None, text: str | None = None) -> Token:
        t = self.peek()
        if t is None or (kind and t.kind != kind) or (text and t.text != text):
            want = text or kind
            found = "end of line" if t is None else repr(t.text)
            raise self.error(f"expected {want}, found {found}")
        self.i += 1
        return t

    def action(self) -> str:
        t = self.take("label")
        if not bh.LABEL_RE.match(t.text):
            raise self.error(f"invalid action label {t.text!r}", t, kind="lexical")
        return t.text

    def done(self) -> bool:
        return self.i >= len(self.toks)

    def expect_end(self):
        if not self.done():
            raise self.error(f"unexpected {self.peek().text!r}")


def _parse_expr(c: _Cursor) -> Formula:
    left = _parse_iff(c)
    if c.at("=>"):
        c.take()
        return Implies(left, _parse_expr(c))
    return left


def _parse_iff(c: _Cursor) -> Formula:
    left = _parse_or(c)
    while c.at("iff"):
        c.take()
        left = Iff(left, _parse_or(c))
    return left


def _parse_or(c: _Cursor) -> Formula:
    left = _parse_and(c)
    while c.at("or"):
        c.take()
        left = Or(left, _parse_and(c))
    return left


def _parse_and(c: _Cursor) -> Formula:
    left = _parse_unary(c)
    while c.at("and"):
        c.take()
        left = And(left, _parse_unary(c))
    return left


def _parse_unary(c: _Cursor) -> Formula:
    t = c.peek()
    if t is None:
        raise c.error("expected expression")
    if t.text == "not":
        c.take()
        return Not(_parse_unary(c))
    if t.text == "(":
        c.take()
        e = _parse_expr(c)
        c.take(text=")")
        return e
    if t.text in ("true", "false"):
        c.take()
        return Const(t.text == "true")
    if t.kind in ("name", "label"):
        c.take()
        return _located_atom(t)
    raise c.error(f"expected expression, found {t.text!r}")


def _located_atom(tok: Token) -> Atom:
    a = Atom(tok.text)
    object.__setattr__(a, "_tok", tok)
    return a


def _parse_label_set(c: _Cursor) -> frozenset:
    if c.at("{"):
        c.take()
        labels = []
        if not c.at("}"):
            labels.append(c.action())
            while c.at(","):
                c.take()
                labels.append(c.action())
        c.take(text="}")
        return frozenset(labels)
    return frozenset({c.action()})


def _parse_safety(c: _Cursor) -> Formula:
    c.take(text="always")
    c.take(text="(")
    trigger = _parse_iff(c)
    c.take(text="=>")
    body = _parse_iff(c)
    if c.at("wuntil"):
        tok = c.take()
        if not isinstance(body, Not):
            raise c.error("left operand of wuntil must be 'not <expr>'", tok)
        release = _parse_iff(c)
        body = WeakUntil(body, release)
    c.take(text=")")
    return Always(Implies(trigger, body))


def _parse_process_body(c: _Cursor, name: str) -> ProcessDef:
    if c.at("template"):
        c.take()
        tname = c.take().text
        if tname not in bh.TEMPLATES:
            raise c.error(f"unknown template {tname!r}", c.toks[c.i - 1], kind="undeclared")
        args = []
        if c.at("("):
            c.take()
            if not c.at(")"):
                args.append(c.action())
                while c.at(","):
                    c.take()
                    args.append(c.action())
            c.take(text=")")
        return ProcessDef(name, template=tname, args=tuple(args))
    c.take(text="states")
    n_tok = c.take("int")
    n = int(n_tok.text)
    if n < 1:
        raise c.error("a process needs at least one state", n_tok)
    init = 0
    trans = []
    while c.at(";"):
        c.take()
        if c.at("init"):
            c.take()
            t = c.take("int")
            init = int(t.text)
            if init >= n:
                raise c.error("initial state out of range", t)
            continue
        s_tok = c.take("int")
        c.take(text="-")
        lab = c.action()
        c.take(text="->")
        d_tok = c.take("int")
        s, d = int(s_tok.text), int(d_tok.text)
        for tok, v in ((s_tok, s), (d_tok, d)):
            if v >= n:
                raise c.error(f"state {v} out of range 0..{n - 1}", tok)
        trans.append((s, lab, d))
    return ProcessDef(name, n_states=n, initial=init, transitions=tuple(sorted(set(trans))))


def _lines(text: str) -> Iterator[tuple[int, str]]:
    for i, line in enumerate(text.splitlines(), start=1):
        yield i, line


def parse(text: str) -> SpecDocument:
    """Parse and validate a document; raises :class:`SpecError` with a source location."""
    doc = SpecDocument()
    controlled: list[str] = []
    uncontrolled: list[str] = []
    where: dict = {}  # name -> token, for later diagnostics
    label_tokens: dict = {}
    formula_sites: list = []
    plant_tokens: list = []
    for lineno, raw in _lines(text):
        toks = tokenize_line(raw, lineno)
        if not toks:
            continue
        c = _Cursor(toks, lineno, len(raw))
        head = c.take()
        kw = head.text
        if kw in ("controlled", "uncontrolled"):
            target = controlled if kw == "controlled" else uncontrolled
            while not c.done():
                c.action()
                t = c.toks[c.i - 1]
                if t.text in controlled or t.text in uncontrolled:
                    other = "controlled" if t.text in controlled else "uncontrolled"
                    if other != kw:
                        raise c.error(f"label {t.text!r} is both controlled and uncontrolled", t,
                                      kind="controllability")
                    raise c.error(f"duplicate label {t.text!r}", t, kind="duplicate")
                target.append(t.text)
                label_tokens[t.text] = t
        elif kw == "process":
            nt = c.take("name")
            if nt.text in doc.processes:
                raise c.error(f"duplicate process {nt.text!r}", nt, kind="duplicate")
            c.take(text="=")
            doc.processes[nt.text] = _parse_process_body(c, nt.text)
            where[("process", nt.text)] = nt
            c.expect_end()
        elif kw == "fluent":
            nt = c.take("name")
            if nt.text in doc.fluents or nt.text in doc.defines:
                raise c.error(f"duplicate definition {nt.text!r}", nt, kind="duplicate")
            c.take(text="=")
            c.take(text="<")
            init_start = c.peek()
            initiating = _parse_label_set(c)
            c.take(text=",")
            terminating = _parse_label_set(c)
            c.take(text=">")
            initial = False
            if c.at("initially"):
                c.take()
                v = c.take()
                if v.text not in ("true", "false"):
                    raise c.error("expected true or false", v)
                initial = v.text == "true"
            c.expect_end()
            try:
                doc.fluents[nt.text] = Fluent(nt.text, initiating, terminating, initial)
            except bh.BehaviourError as exc:
                raise c.error(str(exc), nt, kind="semantic") from None
            where[("fluent", nt.text)] = init_start
        elif kw == "define":
            nt = c.take("name")
            if nt.text in doc.fluents or nt.text in doc.defines:
                raise c.error(f"duplicate definition {nt.text!r}", nt, kind="duplicate")
            c.take(text="=")
            e = _parse_expr(c)
            c.expect_end()
            doc.defines[nt.text] = e
            formula_sites.append(e)
        elif kw in ("assume", "goal"):
            mode = c.take()
            if mode.text == "liveness":
                c.take("box_dia")
                f = AlwaysEventually(_parse_expr(c))
            elif mode.text == "safety" and kw == "goal":
                f = _parse_safety(c)
            else:
                raise c.error(f"expected 'liveness'{' or safety' if kw == 'goal' else ''}", mode)
            c.expect_end()
            (doc.assumptions if kw == "assume" else doc.goals).append(f)
            formula_sites.append(f)
        elif kw == "plant":
            while not c.done():
                t = c.take("name")
                doc.plant.append(t.text)
                plant_tokens.append(t)
        else:
            raise c.error(f"unknown statement {kw!r}", head)
    doc.controlled = frozenset(controlled)
    doc.uncontrolled = frozenset(uncontrolled)
    _validate(doc, where, formula_sites, plant_tokens, text)
    return doc


def _tok_of(f) -> Token | None:
    return getattr(f, "_tok", None)


def _validate(doc: SpecDocument, where, formula_sites, plant_tokens, text):
    labels = doc.labels
    first_line = next((i for i, l in _lines(text) if l.strip()), 1)
    for (kind, name), tok in where.items():
        if kind == "process":
            p = doc.processes[name]
            try:
                lts = doc.build_process(name) if p.template is None else bh.TEMPLATES[p.template](*p.args)
            except (bh.BehaviourError, TypeError) as exc:
                raise SpecError(f"process {name}: {exc}", tok.line, tok.col, tok.end, "semantic") from None
            for a in sorted(lts.alphabet):
                if a not in labels:
                    raise SpecError(f"process {name}: label {a!r} not declared controlled or uncontrolled",
                                    tok.line, tok.col, tok.end, "undeclared")
            if p.template is not None:
                for a in sorted(lts.alphabet):
                    if (a in lts.controllable) != (a in doc.controlled):
                        raise SpecError(
                            f"process {name}: template treats {a!r} as "
                            f"{'controlled' if a in lts.controllable else 'uncontrolled'}",
                            tok.line, tok.col, tok.end, "controllability")
        elif kind == "fluent":
            fl = doc.fluents[name]
            for a in sorted(fl.initiating | fl.terminating):
                if a not in labels:
                    raise SpecError(f"fluent {name}: label {a!r} not declared", tok.line, tok.col,
                                    tok.end, "undeclared")
    known = set(doc.fluents) | set(doc.defines) | set(labels)

    def check_atoms(f):
        if isinstance(f, Atom):
            if f.name not in known:
                t = _tok_of(f)
                line, col, end = (t.line, t.col, t.end) if t else (first_line, 1, 2)
                raise SpecError(f"undeclared fluent or label {f.name!r}", line, col, end, "undeclared")
            return
        for sub in vars(f).values():
            if isinstance(sub, Formula):
                check_atoms(sub)

    for f in formula_sites:
        check_atoms(f)
    # define cycles
    state: dict = {}

    def visit(name, chain):
        if state.get(name) == 1:
            return
        if state.get(name) == 0:
            raise SpecError(f"cyclic define {' -> '.join(chain + [name])}", first_line, 1, 2, "semantic")
        state[name] = 0
        for a in bh.atoms(doc.defines[name]):
            if a in doc.defines:
                visit(a, chain + [name])
        state[name] = 1

    for name in doc.defines:
        visit(name, [])
    for t in plant_tokens:
        if t.text not in doc.processes:
            raise SpecError(f"plant references undeclared process {t.text!r}", t.line, t.col, t.end,
                            "undeclared")


# ---------------------------------------------------------------------------
# printer

_BINARY = {And: "and", Or: "or", Implies: "=>", Iff: "iff"}


def format_expr(f: Formula, top: bool = True) -> str:
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Not):
        return "not " + format_expr(f.arg, top=False)
    if type(f) in _BINARY:
        s = f"{format_expr(f.left, False)} {_BINARY[type(f)]} {format_expr(f.right, False)}"
        return s if top else f"({s})"
    raise bh.BehaviourError(f"cannot print {type(f).__name__} as a boolean expression")


def _operand(f: Formula) -> str:
    # safety operands are read at iff precedence, so a bare => needs brackets
    return format_expr(f, top=not isinstance(f, Implies))


def format_formula(f: Formula) -> str:
    if isinstance(f, AlwaysEventually):
        return "liveness []<> " + format_expr(f.arg)
    p = bh.as_safety_pattern(f)
    if p.forbidden is None:
        return f"safety always ({_operand(p.trigger)} => {_operand(p.required)})"
    return (f"safety always ({_operand(p.trigger)} => not {format_expr(p.forbidden, False)} "
            f"wuntil {_operand(p.release)})")


def _format_set(labels) -> str:
    return "{" + ", ".join(sorted(labels)) + "}"


def format_process(p: ProcessDef) -> str:
    if p.template is not None:
        args = f"({', '.join(p.args)})" if p.args else ""
        return f"process {p.name} = template {p.template}{args}"
    parts = [f"states {p.n_states}", f"init {p.initial}"]
    parts += [f"{s} -{a}-> {d}" for s, a, d in sorted(p.transitions)]
    return f"process {p.name} = " + " ; ".join(parts)


def print_doc(doc: SpecDocument) -> str:
    """Canonical text; ``parse(print_doc(d))`` is structurally equal to ``d``."""
    out = []
    if doc.controlled:
        out.append("controlled " + " ".join(sorted(doc.controlled)))
    if doc.uncontrolled:
        out.append("uncontrolled " + " ".join(sorted(doc.uncontrolled)))
    for p in doc.processes.values():
        out.append(format_process(p))
    for fl in doc.fluents.values():
        out.append(f"fluent {fl.name} = <{_format_set(fl.initiating)}, {_format_set(fl.terminating)}>"
                   f" initially {'true' if fl.initial else 'false'}")
    for name, e in doc.defines.items():
        out.append(f"define {name} = {format_expr(e)}")
    for a in doc.assumptions:
        out.append("assume " + format_formula(a))
    for g in doc.goals:
        out.append("goal " + format_formula(g))
    if doc.plant:
        out.append("plant " + " ".join(doc.plant))
    return "\n".join(out) + ("\n" if out else "")


print = print_doc  # noqa: A001  (module-level name used by callers as speclang.print)


# ---------------------------------------------------------------------------
# bundled task specifications

MAX_ORDERED = 5
BUILTIN_NAMES = ("fire_patrol", "find_nemo", "search_and_map", "cover", "ordered_patrol")


def _resource_text(name: str) -> str:
    return resources.files("iterplan.specs").joinpath(f"{name}.isp").read_text("utf-8")


def ordered_patrol_text(n: int, max_n: int = MAX_ORDERED) -> str:
    if not 1 <= n <= max_n:
        raise ValueError(f"ordered_patrol arity must be in 1..{max_n}, got {n}")
    ks = range(1, n + 1)
    queries = [f"is.next.w{k}?" for k in ks]
    yes = [f"yes.next.w{k}" for k in ks]
    no = [f"no.next.w{k}" for k in ks]
    lines = [
        "# Ordered patrol: visit waypoints w1..wn cyclically in order, photographing each.",
        "controlled has.next? remove.next reset go.next take.photo takeoff land idle " + " ".join(queries),
        "uncontrolled y.next n.next arrived airborne landed " + " ".join(yes + no),
        "process ITER = template iterator",
    ]
    for k in ks:
        lines.append(f"process SENSOR{k} = template binary_sensor({queries[k - 1]}, {yes[k - 1]}, {no[k - 1]})")
    lines += [
        f"process NEXTW = template next_query_window({', '.join(queries)})",
        "process CURW = template current_query_window(take.photo)",
        "process CAP = template capability_pair(go.next, arrived, take.photo)",
        "process GO = template go_guard",
        "process FLIGHT = states 5 ; init 0 ; 0 -takeoff-> 1 ; 1 -airborne-> 2 ; 2 -has.next?-> 2 ; "
        "2 -land-> 3 ; 3 -landed-> 4 ; 4 -idle-> 4",
        "process MOVE = states 2 ; init 0 ; 0 -go.next-> 1 ; 1 -arrived-> 0 ; 0 -remove.next-> 0 ; 0 -reset-> 0",
    ]
    # ORDER: state 2k waits for waypoint k+1 to be offered, 2k+1 has it confirmed
    order = []
    for k in range(n):
        due, conf, nxt = 2 * k, 2 * k + 1, 2 * ((k + 1) % n)
        order.append(f"{due} -{queries[k]}-> {due}")
        order.append(f"{due} -{yes[k]}-> {conf}")
        order.append(f"{due} -{no[k]}-> {due}")
        order.append(f"{conf} -arrived-> {nxt}")
    lines.append(f"process ORDER = states {2 * n} ; init 0 ; " + " ; ".join(order))
    lines += [
        f"fluent MustPatrol = <{{{', '.join(yes)}}}, {{has.next?}}> initially false",
        f"fluent PatrolAnswered = <{{{', '.join(yes + no)}}}, {{has.next?}}> initially false",
        "fluent Arrived = <{arrived}, {has.next?}> initially false",
        "fluent PhotoTaken = <{take.photo}, {has.next?}> initially false",
        "define VisitCondition = PatrolAnswered and (MustPatrol iff Arrived)",
        "goal liveness []<> has.next?",
        "goal safety always (y.next => not remove.next wuntil VisitCondition)",
        "goal safety always (arrived => not remove.next wuntil PhotoTaken)",
        "plant ITER " + " ".join(f"SENSOR{k}" for k in ks) + " NEXTW CURW CAP GO FLIGHT MOVE ORDER",
    ]
    return "\n".join(lines) + "\n"


def builtin_spec(name: str, n: int | None = None, max_n: int = MAX_ORDERED) -> SpecDocument:
    if name == "ordered_patrol":
        return parse(ordered_patrol_text(3 if n is None else n, max_n))
    if name not in BUILTIN_NAMES:
        raise KeyError(f"unknown builtin spec {name!r}")
    return parse(_resource_text(name))


def builtin_text(name: str, n: int | None = None) -> str:
    if name == "ordered_patrol":
        return ordered_patrol_text(3 if n is None else n)
    return _resource_text(name)


def builtin_specs(max_ordered: int = MAX_ORDERED) -> dict[str, SpecDocument]:
    """All bundled task documents; ``ordered_patrol`` is the three-waypoint instance."""
    out = {name: builtin_spec(name) for name in BUILTIN_NAMES if name != "ordered_patrol"}
    out["ordered_patrol"] = builtin_spec("ordered_patrol", 3, max_ordered)
    return out
