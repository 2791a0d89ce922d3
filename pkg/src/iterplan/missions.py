"""Benchmark missions: configuration, simulated world, run loop and metrics."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import tomli

from . import hybrid as hy
from . import motion as mo
from . import speclang as sl
from . import synthesis as sy
from . import workspace as ws

TASKS = ("fire_patrol", "find_nemo", "search_and_map", "ordered_patrol", "cover")
LOG_LEVELS = ("mission", "full")
# simulated cost of one remove.next round trip: the 2.9 s budget spread over 40 000 locations
REMOVE_LATENCY = 2.9 / 40000


class MissionError(RuntimeError):
    pass


@dataclass(frozen=True)
class StopCondition:
    loops: int | None = None
    time_limit: float | None = None
    complete: bool = False

    def __post_init__(self):
        if self.loops is None and self.time_limit is None and not self.complete:
            raise MissionError("stop condition needs loops, time_limit or complete")


@dataclass(frozen=True)
class MissionConfig:
    task: str
    seed: int
    grid: ws.GridMap
    sorter: str = "distance"
    order_n: int = 3
    patrol: tuple = ()          # P for fire_patrol
    fire: tuple = ()
    interest: tuple = ()        # find_nemo
    cover: tuple = ()
    waypoints: tuple = ()       # ordered_patrol, in visiting order
    target: int | None = None   # search_and_map
    visibility: float = 75.0
    p_appear: float = 0.001
    p_disappear: float = 0.0005
    limits: mo.VehicleLimits = mo.VehicleLimits()
    home: int = 0
    heading: float = 0.0
    arrival_axis: float | None = None
    stop: StopCondition = StopCondition(loops=1)
    dt: float = 0.1
    latency: float = REMOVE_LATENCY
    log_level: str = "mission"
    name: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise MissionError(f"unknown task {self.task!r}")
        if self.sorter not in hy.SORTERS:
            raise MissionError(f"unknown sorter {self.sorter!r}")
        if self.log_level not in LOG_LEVELS:
            raise MissionError(f"log level must be one of {LOG_LEVELS}")
        if self.seed is None:
            raise MissionError("seed is mandatory")
        n = self.grid.n_cells
        for name in ("patrol", "fire", "interest", "cover", "waypoints"):
            for c in getattr(self, name):
                if not 0 <= c < n:
                    raise MissionError(f"{name} cell {c} outside the grid")
        for c in (self.home,) + (() if self.target is None else (self.target,)):
            if not 0 <= c < n:
                raise MissionError(f"cell {c} outside the grid")
        if self.task == "ordered_patrol" and len(self.waypoints) != self.order_n:
            raise MissionError("ordered_patrol needs exactly order_n waypoints")
        if self.task == "search_and_map" and self.target is None:
            raise MissionError("search_and_map needs a target cell")

    @property
    def axis(self) -> float:
        return self.grid.axis_heading if self.arrival_axis is None else self.arrival_axis

    def interesting(self) -> frozenset:
        """Cells the last sorter pushes to the end of each pass."""
        return frozenset({"fire_patrol": self.patrol, "find_nemo": self.interest,
                          "cover": self.cover, "ordered_patrol": self.waypoints,
                          "search_and_map": ()}[self.task])

    def n_targets(self) -> int:
        if self.task == "search_and_map":
            return 1
        return len(self.interesting())


# ---------------------------------------------------------------- controllers

@lru_cache(maxsize=None)
def controller_for(task: str, order_n: int = 3):
    """Synthesize and verify the controller of a bundled task (cached per process)."""
    doc = sl.builtin_spec(task, order_n if task == "ordered_patrol" else None)
    arena, ctrl = sy.synthesize(doc)
    if ctrl is None:
        raise MissionError(f"{task} is unrealizable")
    report = sy.verify_doc_controller(doc, ctrl)
    if not report.ok:
        raise MissionError(f"{task} controller failed verification:\n{report}")
    return ctrl


def synthesize_task(cfg: MissionConfig):
    """Arena and controller for a mission config, built fresh.

    Only the task name reaches the synthesis; the grid never does.
    """
    doc = sl.builtin_spec(cfg.task, cfg.order_n if cfg.task == "ordered_patrol" else None)
    return sy.synthesize(doc)


# ---------------------------------------------------------------- environment

class NemoProcess:
    """Independent two-state Markov presence per interest cell, sampled lazily."""

    def __init__(self, seed: int, cells: Iterable[int], p_appear: float, p_disappear: float):
        self.seed = seed
        self.cells = frozenset(cells)
        self.a, self.d = p_appear, p_disappear
        self._state: dict[int, tuple[float, bool, np.random.Generator]] = {}

    def present(self, cell: int, t: float) -> bool:
        if cell not in self.cells:
            return False
        t0, x0, rng = self._state.get(cell) or (0.0, False, np.random.default_rng([self.seed, cell]))
        rate = self.a + self.d
        pi = self.a / rate if rate > 0 else 0.0
        p = pi + ((1.0 if x0 else 0.0) - pi) * math.exp(-rate * max(t - t0, 0.0))
        x = bool(rng.random() < p)
        self._state[cell] = (t, x, rng)
        return x


class SightingStore:
    def __init__(self, grid: ws.GridMap):
        self.grid = grid
        self.cells: set[int] = set()

    def add(self, cell: int):
        self.cells.add(cell)

    def adjacent(self, cell: int) -> bool:
        r, c = self.grid.row_col(cell)
        for s in self.cells:
            rs, cs = self.grid.row_col(s)
            if abs(rs - r) <= 1 and abs(cs - c) <= 1:
                return True
        return False


# ---------------------------------------------------------------- logging

@dataclass
class MissionLog:
    level: str = "mission"
    lines: list = field(default_factory=list)
    photos: list = field(default_factory=list)      # (t, cell)
    arrivals: list = field(default_factory=list)    # (t, cell)
    answers: list = field(default_factory=list)     # (t, query, cell, value)
    resets: list = field(default_factory=list)
    completions: list = field(default_factory=list)
    poses: list = field(default_factory=list)       # (t, x, y, heading)

    def add(self, t: float, kind: str, **fields):
        text = " ".join(f"{k}={v}" for k, v in fields.items())
        self.lines.append(f"t={t:.6f} kind={kind}" + (" " + text if text else ""))

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


@dataclass
class Metrics:
    sim_duration: float
    ideal_duration: float
    overhead_ratio: float
    loop_durations: list
    covered: int
    wall_clock: float
    aborted: str = ""


# ---------------------------------------------------------------- world

# controller events worth a line in a mission-level log; go.next and arrived
# are logged by the world together with their cell
_MISSION_EVENTS = frozenset({hy.TAKEOFF, hy.AIRBORNE, hy.LAND, hy.LANDED, hy.RESET, hy.IDLE})


class World:
    """Vehicle, environment and clock; the world side of the hybrid layer."""

    def __init__(self, cfg: MissionConfig, log: MissionLog):
        self.cfg = cfg
        self.log = log
        self.grid = cfg.grid
        hx, hy_ = cfg.grid.cell_center(cfg.home)
        self.state = mo.VehicleState(hx, hy_, cfg.heading, cfg.limits.cruise_speed)
        self.path: mo.Trajectory | None = None
        self.flight: mo.Trajectory | None = None
        self.target: int | None = None
        self.now = 0.0
        self._owed = 0.0
        self.current_cell: int | None = None
        self.last_arrival = self.state
        self.finished = False
        self.nemo = NemoProcess(cfg.seed, cfg.interest, cfg.p_appear, cfg.p_disappear)
        self.sightings = SightingStore(cfg.grid)
        self._due = 0
        self._full = cfg.log_level == "full"
        log.poses.append((0.0, hx, hy_, cfg.heading))
        if cfg.task == "cover":
            self._uncovered = set(cfg.cover)

    # -- motion
    def _move(self, seconds: float):
        """Fly the current path, orbiting once it runs out."""
        while seconds > 1e-15:
            if self.path is None:
                self.path = mo.loiter(self.state, self.cfg.limits)
            self.state, self.path, unused = mo.step(self.state, self.path, seconds)
            seconds = unused / self.state.speed

    def settle(self):
        if self._owed:
            self._move(self._owed)
            self._owed = 0.0

    def reference_state(self) -> mo.VehicleState:
        return self.flight.end if self.flight is not None else self.last_arrival

    def flight_active(self) -> bool:
        return self.flight is not None

    def charge(self, label: str):
        self.now += self.cfg.latency
        self._owed += self.cfg.latency

    def start_flight(self, cell: int):
        self.settle()
        self.target = cell
        centre = self.grid.cell_center(cell)
        plan = mo.plan_trajectory(self.state, centre, self.cfg.axis, self.cfg.limits)
        if cell == self.current_cell and mo.trajectory_length(plan) <= self.cfg.limits.arrival_radius:
            # revisiting the cell we are over: come round once more
            plan = mo.loiter(self.state, self.cfg.limits)
        self.flight = self.path = plan
        self.log.add(self.now, "event", label=hy.GO, cell=self.grid.name_of(cell))

    def fly_until_arrival(self) -> str:
        """Integrate at ``dt`` until the planned path is complete."""
        if self.flight is None:
            raise hy.ControllerAbort("controller waits but no flight is in progress")
        self.settle()
        dt = self.cfg.dt
        while self.path is not None and self.path.segments:
            self.state, self.path, _ = mo.step(self.state, self.path, dt)
            self.now += dt
            self.log.poses.append((self.now, self.state.x, self.state.y, self.state.heading))
            if self._full:
                self.log.add(self.now, "pose", x=f"{self.state.x:.3f}", y=f"{self.state.y:.3f}",
                             heading=f"{self.state.heading:.6f}")
        self.path = None
        self._arrive()
        return hy.ARRIVED

    def _arrive(self):
        cell = self.target
        self.last_arrival = self.flight.end
        self.flight = None
        self.current_cell = cell
        self.log.arrivals.append((self.now, cell))
        self.log.add(self.now, "event", label=hy.ARRIVED, cell=self.grid.name_of(cell))
        cfg = self.cfg
        if cfg.task == "ordered_patrol" and cell == cfg.waypoints[self._due]:
            self._due += 1
            if self._due == cfg.order_n:
                self._due = 0
                self.log.completions.append(self.now)
        if cfg.task == "cover":
            self._uncovered.discard(cell)
            if not self._uncovered:
                self.log.completions.append(self.now)

    # -- sensing and actuation
    def answer(self, query: str, cell, value: bool):
        self.log.answers.append((self.now, query, cell, value))
        if query == "target?" and value:
            self.sightings.add(cell)
        if value or self._full or query not in self._next_queries:
            self.log.add(self.now, "answer", query=query,
                         cell="-" if cell is None else self.grid.name_of(cell),
                         value="yes" if value else "no")

    def actuate(self, label: str):
        if label == hy.PHOTO:
            cell = self.current_cell
            self.log.photos.append((self.now, cell))
            self.log.add(self.now, "photo", cell="-" if cell is None else self.grid.name_of(cell))
            return None
        if label == hy.TAKEOFF:
            return hy.AIRBORNE
        if label == hy.LAND:
            return hy.LANDED
        if label == hy.IDLE:
            self.finished = True
            return None
        return None

    def sensors(self) -> list[hy.SensorBinding]:
        cfg = self.cfg
        B = hy.SensorBinding
        if cfg.task == "fire_patrol":
            P, F = frozenset(cfg.patrol), frozenset(cfg.fire)
            out = [B("is.next.inP?", "yes.next.inP", "no.next.inP", "next", lambda c, t: c in P),
                   B("fire?", "yes.fire", "no.fire", "current", lambda c, t: c in F)]
        elif cfg.task == "cover":
            C = frozenset(cfg.cover)
            out = [B("is.next.inC?", "yes.next.inC", "no.next.inC", "next", lambda c, t: c in C)]
        elif cfg.task == "find_nemo":
            I = frozenset(cfg.interest)
            out = [B("is.next.inI?", "yes.next.inI", "no.next.inI", "next", lambda c, t: c in I),
                   B("nemo?", "yes.nemo", "no.nemo", "current", self.nemo.present)]
        elif cfg.task == "search_and_map":
            vis = visible_cells(cfg)
            out = [B("target?", "yes.target", "no.target", "current", lambda c, t: c in vis),
                   B("adjacent.next?", "y.adjacent.next", "n.adjacent.next", "next",
                     lambda c, t: self.sightings.adjacent(c))]
        else:
            out = [B(f"is.next.w{k + 1}?", f"yes.next.w{k + 1}", f"no.next.w{k + 1}", "next",
                     lambda c, t, w=w: c == w) for k, w in enumerate(cfg.waypoints)]
        self._next_queries = frozenset(b.query for b in out if b.scope == "next")
        return out


# ---------------------------------------------------------------- running

def visible_cells(cfg: MissionConfig) -> frozenset:
    """Cells whose centre lies within the visibility radius of the target."""
    grid = cfg.grid
    c = grid.centers()
    tx, ty = grid.cell_center(cfg.target)
    return frozenset(np.flatnonzero(np.hypot(c[:, 0] - tx, c[:, 1] - ty) <= cfg.visibility).tolist())


def _neighbourhood(grid: ws.GridMap, cell: int):
    r, c = grid.row_col(cell)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if 0 <= r + dr < grid.rows and 0 <= c + dc < grid.cols:
                n = (r + dr) * grid.cols + c + dc
                if n < grid.n_cells:
                    yield n


def ideal_duration(cfg: MissionConfig) -> float:
    grid, v = cfg.grid, cfg.limits.cruise_speed
    start = grid.cell_center(cfg.home)
    if cfg.task == "cover":
        return ws.ideal_distance((), "cover", start, grid, cfg.cover) / v
    if cfg.task == "search_and_map":
        # every sighting's neighbourhood gets visited, and the visible cells chain together
        need = {n for c in visible_cells(cfg) for n in _neighbourhood(grid, c)}
        return ws.ideal_distance((), "cover", start, grid, need) / v
    cells = sorted(cfg.interesting()) if cfg.task != "ordered_patrol" else list(cfg.waypoints)
    if len(cells) <= ws.MAX_EXACT_TSP:
        # a fire patrol loop runs reset to reset and may open at the cell the last one closed on,
        # so only a Hamiltonian path is guaranteed; ordered loops close on the same waypoint
        mode = "open-path" if cfg.task == "fire_patrol" else "tour"
        return ws.ideal_distance([grid.cell_center(c) for c in cells], mode) / v
    # too many for the exact tour: one pitch per location is a valid lower bound
    return len(cells) * grid.pitch / v


def _stop(cfg: MissionConfig, world: World, log: MissionLog) -> bool:
    s = cfg.stop
    if world.finished:
        return True
    if s.time_limit is not None and world.now >= s.time_limit:
        return True
    if s.loops is not None:
        count = len(log.resets) if cfg.task in ("fire_patrol", "find_nemo") else len(log.completions)
        if count >= s.loops:
            return True
    if s.complete and cfg.task == "cover" and log.completions:
        return True
    return False


def run_mission(cfg: MissionConfig, max_steps: int | None = None):
    """Simulate a mission; returns (MissionLog, Metrics)."""
    wall = time.perf_counter()
    log = MissionLog(cfg.log_level)
    world = World(cfg, log)
    sensors = world.sensors()
    ctrl = controller_for(cfg.task, cfg.order_n)
    sorter = hy.SorterStrategy(cfg.sorter, cfg.seed, cfg.interesting())
    iterator = hy.LocationIterator(range(cfg.grid.n_cells), cfg.grid, sorter, world.state,
                                   cfg.limits, cfg.axis)
    full = cfg.log_level == "full"

    def record(label):
        if label == hy.RESET:
            log.resets.append(world.now)
        if label in _MISSION_EVENTS or full and label not in (hy.GO, hy.ARRIVED):
            log.add(world.now, "event", label=label)

    layer = hy.HybridLayer(ctrl, iterator, sensors, world, record)
    log.add(0.0, "start", task=cfg.task, sorter=cfg.sorter, seed=cfg.seed, cells=cfg.grid.n_cells)
    aborted = ""
    steps = 0
    try:
        while not _stop(cfg, world, log):
            if layer.step() is None:
                layer.cursor.pending.append(world.fly_until_arrival())
            steps += 1
            if max_steps is not None and steps >= max_steps:
                raise MissionError(f"step budget {max_steps} exhausted")
    except hy.ControllerAbort as exc:
        aborted = str(exc)
        log.add(world.now, "abort", reason=aborted.replace(" ", "_"))
    log.add(world.now, "end")
    return log, compute_metrics(log, cfg, world.now, time.perf_counter() - wall, aborted)


def compute_metrics(log: MissionLog, cfg: MissionConfig, end_time: float | None = None,
                    wall: float = 0.0, aborted: str = "") -> Metrics:
    end = end_time if end_time is not None else (log.arrivals[-1][0] if log.arrivals else 0.0)
    if cfg.task in ("fire_patrol", "find_nemo"):
        marks = log.resets
    else:
        marks = log.completions
    loops = [b - a for a, b in zip(marks, marks[1:])]
    if cfg.task in ("ordered_patrol", "fire_patrol") and loops:
        sim = float(np.mean(loops))
    elif cfg.task == "cover" and log.completions:
        sim = log.completions[0]
    else:
        sim = end
    ideal = ideal_duration(cfg)
    overhead = 0.0 if ideal == 0 else (sim - ideal) / ideal
    covered = len({c for _, c in log.arrivals})
    return Metrics(sim, ideal, overhead, loops, covered, wall, aborted)


# ---------------------------------------------------------------- scenarios

def _cell(grid: ws.GridMap, r: int, c: int) -> int:
    return grid._check(r * grid.cols + c)


ORDERED_WAYPOINTS = ((2, 2), (2, 29), (28, 15))
ORDERED_MIN_UNIVERSE = 900
# cover runs in a corridor five cells wide; regions are strips three cells wide
COVER_CORRIDOR = 5
COVER_WIDTH = 3
COVER_TURN_RADIUS = 30.0


def corridor_grid(n_cells: int, cols: int = COVER_CORRIDOR, pitch: float = 50.0) -> ws.GridMap:
    rows = -(-n_cells // cols)
    return ws.build_grid((0.0, 0.0), pitch, rows, cols, 0.0, None if rows * cols == n_cells else n_cells)


def cover_block(grid: ws.GridMap, size: int, width: int = COVER_WIDTH, corner=(1, 1)) -> tuple:
    """``size`` cells filled row by row, ``width`` columns wide, from ``corner``."""
    r0, c0 = corner
    return tuple(_cell(grid, r0 + i // width, c0 + i % width) for i in range(size))


def scenario(task: str, universe: int, sorter: str = "distance", seed: int = 0,
             targets: int | None = None, **overrides) -> MissionConfig:
    """Sweep scenario on a square-ish grid holding ``universe`` cells."""
    grid = corridor_grid(universe) if task == "cover" else ws.universe_grid(universe)
    rng = np.random.default_rng([seed, 7])
    heading = float(rng.uniform(0.0, 2 * math.pi))
    base = dict(task=task, seed=seed, grid=grid, sorter=sorter, home=0, heading=heading)
    if task == "ordered_patrol":
        if grid.n_cells < ORDERED_MIN_UNIVERSE:
            raise MissionError(f"ordered_patrol scenarios need at least {ORDERED_MIN_UNIVERSE} locations")
        base["waypoints"] = tuple(_cell(grid, r, c) for r, c in ORDERED_WAYPOINTS)
        base["stop"] = StopCondition(loops=2)
    elif task == "cover":
        base["limits"] = mo.VehicleLimits(min_turn_radius=COVER_TURN_RADIUS)
        if "cover" not in overrides:
            base["cover"] = cover_block(grid, 61 if targets is None else targets)
        base["stop"] = StopCondition(complete=True)
    elif task == "fire_patrol":
        k = 3 if targets is None else targets
        pick = np.sort(rng.choice(grid.n_cells, size=k, replace=False))
        base["patrol"] = tuple(int(c) for c in pick)
        base["fire"] = tuple(int(c) for c in pick[: max(1, k // 3)])
        base["stop"] = StopCondition(loops=2)
    elif task == "find_nemo":
        k = 4 if targets is None else targets
        base["interest"] = tuple(int(c) for c in np.sort(rng.choice(grid.n_cells, size=k, replace=False)))
        base["stop"] = StopCondition(time_limit=3600.0)
    else:
        base["target"] = int(rng.integers(grid.n_cells))
        base["stop"] = StopCondition(complete=True, time_limit=24 * 3600.0)
    base.update(overrides)
    return MissionConfig(**base)


# ---------------------------------------------------------------- config files

def _cells(grid: ws.GridMap, items) -> tuple:
    out = []
    for it in items or ():
        out.append(grid.id_of(it) if isinstance(it, str) else grid._check(it))
    return tuple(out)


def config_from_mapping(data: Mapping, base_dir=None) -> MissionConfig:
    """Build a config from parsed TOML (see README for the schema)."""
    try:
        m = data["mission"]
        g = data.get("grid", {})
        if "universe" in g:
            grid = ws.universe_grid(int(g["universe"]), float(g.get("pitch", 50.0)))
        else:
            grid = ws.build_grid(tuple(g.get("origin", (0.0, 0.0))), float(g.get("pitch", 50.0)),
                                 int(g.get("rows", 7)), int(g.get("cols", 7)),
                                 math.radians(float(g.get("axis_deg", 0.0))), g.get("limit"))
        r = data.get("regions", {})
        cover = _cells(grid, r.get("cover"))
        if "cover_file" in r:
            path = Path(base_dir or ".") / r["cover_file"]
            cover = tuple(ws.parse_region(grid, "cover", path.read_text()).sorted())
        v = data.get("vehicle", {})
        limits = mo.VehicleLimits(float(v.get("turn_radius", 60.0)), float(v.get("speed", 17.0)),
                                  float(v.get("arrival_radius", 15.0)))
        s = data.get("start", {})
        st = data.get("stop", {})
        stop = StopCondition(st.get("loops"), st.get("time_limit"), bool(st.get("complete", False)))
        env = data.get("environment", {})
        target = env.get("target")
        sim = data.get("sim", {})
        axis = data.get("vehicle", {}).get("arrival_axis_deg")
        return MissionConfig(
            task=m["task"], seed=int(m["seed"]), grid=grid, sorter=m.get("sorter", "distance"),
            order_n=int(m.get("order", len(r.get("waypoints", ())) or 3)),
            patrol=_cells(grid, r.get("patrol")), fire=_cells(grid, env.get("fire")),
            interest=_cells(grid, r.get("interest")), cover=cover,
            waypoints=_cells(grid, r.get("waypoints")),
            target=None if target is None else _cells(grid, [target])[0],
            visibility=float(env.get("visibility", 75.0)),
            p_appear=float(env.get("p_appear", 0.001)), p_disappear=float(env.get("p_disappear", 0.0005)),
            limits=limits, home=_cells(grid, [s.get("cell", 0)])[0],
            heading=math.radians(float(s.get("heading_deg", 0.0))),
            arrival_axis=None if axis is None else math.radians(float(axis)),
            stop=stop, dt=float(sim.get("dt", 0.1)), latency=float(sim.get("latency", REMOVE_LATENCY)),
            log_level=sim.get("log_level", "mission"), name=m.get("name", ""))
    except KeyError as exc:
        raise MissionError(f"missing config key {exc}") from None
    except (ws.WorkspaceError, ValueError, TypeError) as exc:
        raise MissionError(str(exc)) from None


def load_config(path) -> MissionConfig:
    p = Path(path)
    try:
        data = tomli.loads(p.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise MissionError(f"{p}: {exc}") from None
    return config_from_mapping(data, p.parent)


def with_seed(cfg: MissionConfig, seed: int) -> MissionConfig:
    return replace(cfg, seed=seed)
