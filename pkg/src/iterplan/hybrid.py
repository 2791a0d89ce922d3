"""Runtime layer between a synthesized controller and the simulated world.

The iterator hides the workspace behind ``has.next?`` / ``remove.next`` /
``reset``; sorters decide which remaining location is offered next.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .behaviour import Lts
from .motion import VehicleLimits, VehicleState, csc_lengths
from .workspace import GridMap

SORTERS = ("distance", "last", "random")
_CHUNK = 512

# controller labels with a fixed meaning in the runtime
HAS_NEXT, YES_NEXT, NO_NEXT = "has.next?", "y.next", "n.next"
REMOVE, RESET, GO, ARRIVED = "remove.next", "reset", "go.next", "arrived"
TAKEOFF, AIRBORNE, LAND, LANDED, IDLE = "takeoff", "airborne", "land", "landed", "idle"
PHOTO = "take.photo"


class IteratorError(RuntimeError):
    pass


class ControllerAbort(RuntimeError):
    """The world produced an event the controller cannot accept."""


@dataclass(frozen=True)
class SorterStrategy:
    kind: str = "distance"
    seed: int = 0
    interesting: frozenset = frozenset()

    def __post_init__(self):
        if self.kind not in SORTERS:
            raise ValueError(f"unknown sorter {self.kind!r}; expected one of {SORTERS}")

    @property
    def ref_dependent(self) -> bool:
        return self.kind == "distance"


def sort_order(strategy: SorterStrategy, reference: VehicleState, cells: Sequence[int],
               grid: GridMap, limits: VehicleLimits = VehicleLimits(),
               arrival_axis: float | None = None, round_: int = 0) -> np.ndarray:
    """Full ordering of ``cells``; the iterator produces the same sequence lazily."""
    cells = np.asarray(cells, dtype=np.int64)
    if strategy.kind == "distance":
        axis = grid.axis_heading if arrival_axis is None else arrival_axis
        lengths = csc_lengths(reference, grid.centers(cells), axis, limits.min_turn_radius)
        return cells[np.lexsort((cells, lengths))]
    if strategy.kind == "last":
        ids = np.sort(cells)
        flag = np.fromiter((c in strategy.interesting for c in ids.tolist()), dtype=bool, count=len(ids))
        return np.concatenate((ids[~flag], ids[flag]))
    rng = np.random.default_rng([strategy.seed, round_])
    return rng.permutation(np.sort(cells))


class _Static:
    def __init__(self, order: np.ndarray):
        self.order = order
        self.i = 0
        self.ref = None

    def pop(self, state: np.ndarray) -> int:
        while self.i < len(self.order):
            p = int(self.order[self.i])
            self.i += 1
            if state[p] == 0:
                return p
        return -1


class _Nearest:
    """Positions by (length, cell id), extracted a chunk at a time."""

    def __init__(self, ref, positions, lengths, ids):
        self.ref = ref
        self.pos = positions
        self.len = lengths
        self.ids = ids
        self.buf = np.empty(0, dtype=np.int64)
        self.i = 0

    def _refill(self):
        k = len(self.pos)
        if k == 0:
            return False
        if k > _CHUNK:
            thr = np.partition(self.len, _CHUNK - 1)[_CHUNK - 1]
            take = self.len <= thr
        else:
            take = np.ones(k, dtype=bool)
        pos, lens, ids = self.pos[take], self.len[take], self.ids[take]
        self.buf = pos[np.lexsort((ids, lens))]
        self.i = 0
        keep = ~take
        self.pos, self.len, self.ids = self.pos[keep], self.len[keep], self.ids[keep]
        return True

    def pop(self, state: np.ndarray) -> int:
        while True:
            while self.i < len(self.buf):
                p = int(self.buf[self.i])
                self.i += 1
                if state[p] == 0:
                    return p
            if not self._refill():
                return -1


class LocationIterator:
    """The <D, n, R> triple over a fixed universe of cell ids."""

    def __init__(self, universe: Iterable[int], grid: GridMap, sorter: SorterStrategy,
                 start: VehicleState, limits: VehicleLimits = VehicleLimits(),
                 arrival_axis: float | None = None):
        cells = np.unique(np.asarray(list(universe) if not isinstance(universe, np.ndarray)
                                     else universe, dtype=np.int64))
        if len(cells) == 0:
            raise IteratorError("empty universe")
        self.universe = cells
        self.grid = grid
        self.sorter = sorter
        self.limits = limits
        self.axis = grid.axis_heading if arrival_axis is None else arrival_axis
        self._centers = grid.centers(cells) if sorter.ref_dependent else None
        self._state = np.zeros(len(cells), dtype=np.int8)  # 0 remaining, 1 next, 2 done
        self._round = -1
        self._next = -1
        self._n_done = 0
        self.reset(start)

    # -- ordering
    def _stream(self, ref):
        if self.sorter.kind == "distance":
            pos = np.flatnonzero(self._state == 0)
            lens = csc_lengths(ref, self._centers[pos], self.axis, self.limits.min_turn_radius)
            return _Nearest(ref, pos, lens, self.universe[pos])
        order = sort_order(self.sorter, ref, self.universe, self.grid, self.limits, self.axis, self._round)
        return _Static(np.searchsorted(self.universe, order))

    def _advance(self):
        p = self._cursor.pop(self._state)
        self._next = p
        if p >= 0:
            self._state[p] = 1

    # -- operations
    def reset(self, reference: VehicleState):
        self._state[:] = 0
        self._n_done = 0
        self._round += 1
        self._cursor = self._stream(reference)
        self._advance()

    def has_next(self) -> bool:
        return self._next >= 0

    @property
    def next(self) -> int | None:
        return None if self._next < 0 else int(self.universe[self._next])

    def remove_next(self, reference: VehicleState):
        if self._next < 0:
            raise IteratorError("remove.next on an exhausted iterator")
        self._state[self._next] = 2
        self._n_done += 1
        if self.sorter.ref_dependent and self._cursor.ref != reference:
            self._cursor = self._stream(reference)
        self._advance()

    @property
    def done(self) -> set:
        return set(self.universe[self._state == 2].tolist())

    @property
    def remaining(self) -> set:
        return set(self.universe[self._state == 0].tolist())

    @property
    def n_done(self) -> int:
        return self._n_done

    @property
    def rounds(self) -> int:
        return self._round

    def __len__(self):
        return len(self.universe)


@dataclass(frozen=True)
class SensorBinding:
    query: str
    yes: str
    no: str
    scope: str  # "next" or "current"
    predicate: Callable[[int, float], bool]

    def __post_init__(self):
        if self.scope not in ("next", "current"):
            raise ValueError(f"sensor scope must be 'next' or 'current', got {self.scope!r}")


class ControllerCursor:
    """Position in a controller LTS plus the queue of pending world events."""

    def __init__(self, controller: Lts):
        self.controller = controller
        self.table = {s: dict(controller.successors(s)) for s in controller.states}
        self.choice = {}
        for s, row in self.table.items():
            ctl = sorted(l for l in row if l in controller.controllable)
            self.choice[s] = ctl[0] if ctl else None
        self.state = controller.initial
        self.pending: deque = deque()

    def fire(self, label: str):
        row = self.table[self.state]
        if label not in row:
            raise ControllerAbort(f"controller state {self.state} does not accept {label}")
        self.state = row[label]


class HybridLayer:
    """Routes controller actions to the iterator, sensors, motion and actuators.

    ``world`` must provide ``now``, ``current_cell``, ``reference_state()``,
    ``start_flight(cell)``, ``flight_active()``, ``charge(label)``,
    ``answer(query, cell, value)`` and ``actuate(label)``.
    """

    def __init__(self, controller: Lts, iterator: LocationIterator,
                 sensors: Iterable[SensorBinding], world, record: Callable | None = None):
        self.cursor = ControllerCursor(controller)
        self.iterator = iterator
        self.sensors = {s.query: s for s in sensors}
        self.world = world
        self.record = record

    def step(self) -> str | None:
        """Take one controller transition; None means waiting on the world."""
        c = self.cursor
        if c.pending:
            label = c.pending.popleft()
            c.fire(label)
            if self.record:
                self.record(label)
            return label
        label = c.choice[c.state]
        if label is None:
            return None
        c.fire(label)
        if self.record:
            self.record(label)
        self._route(label)
        return label

    def _route(self, label: str):
        it, w, q = self.iterator, self.world, self.cursor.pending
        if label == HAS_NEXT:
            q.append(YES_NEXT if it.has_next() else NO_NEXT)
        elif label in (REMOVE, RESET) and w.flight_active():
            raise ControllerAbort(f"{label} while flying to the next location")
        elif label == REMOVE:
            it.remove_next(w.reference_state())
            w.charge(label)
        elif label == RESET:
            it.reset(w.reference_state())
        elif label == GO:
            cell = it.next
            if cell is None:
                raise ControllerAbort("go.next with no next location")
            w.start_flight(cell)
        elif label in self.sensors:
            s = self.sensors[label]
            cell = it.next if s.scope == "next" else w.current_cell
            ok = cell is not None and bool(s.predicate(cell, w.now))
            q.append(s.yes if ok else s.no)
            w.answer(label, cell, ok)
        else:
            reply = w.actuate(label)
            if reply is not None:
                q.append(reply)
