"""Grid maps, cell naming, regions and ideal mission baselines."""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MAX_EXACT_TSP = 12
_NAME = re.compile(r"([A-Z]+)([1-9][0-9]*)\Z")


class WorkspaceError(ValueError):
    pass


def row_letters(row: int) -> str:
    """0 -> A, 25 -> Z, 26 -> AA (spreadsheet style)."""
    if row < 0:
        raise WorkspaceError(f"negative row {row}")
    out = ""
    row += 1
    while row:
        row, rem = divmod(row - 1, 26)
        out = chr(65 + rem) + out
    return out


def row_index(letters: str) -> int:
    n = 0
    for ch in letters:
        n = n * 26 + (ord(ch) - 64)
    return n - 1


@dataclass(frozen=True)
class GridMap:
    """Row-major grid. ``limit`` keeps only the first ``limit`` cells."""

    origin: tuple = (0.0, 0.0)
    pitch: float = 50.0
    rows: int = 1
    cols: int = 1
    axis_heading: float = 0.0
    limit: int | None = None

    def __post_init__(self):
        if not self.pitch > 0:
            raise WorkspaceError("pitch must be positive")
        if self.rows < 1 or self.cols < 1:
            raise WorkspaceError("rows and cols must be positive")
        if self.limit is not None and not 1 <= self.limit <= self.rows * self.cols:
            raise WorkspaceError("limit outside grid")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols if self.limit is None else self.limit

    def __len__(self):
        return self.n_cells

    def _check(self, cell: int) -> int:
        cell = int(cell)
        if not 0 <= cell < self.n_cells:
            raise WorkspaceError(f"cell id {cell} out of range 0..{self.n_cells - 1}")
        return cell

    def row_col(self, cell: int) -> tuple[int, int]:
        return divmod(self._check(cell), self.cols)

    def cell_center(self, cell: int) -> tuple[float, float]:
        r, c = self.row_col(cell)
        return self._rotate((c + 0.5) * self.pitch, (r + 0.5) * self.pitch)

    def _rotate(self, u, v):
        ca, sa = math.cos(self.axis_heading), math.sin(self.axis_heading)
        return (self.origin[0] + ca * u - sa * v, self.origin[1] + sa * u + ca * v)

    def centers(self, cells: Sequence[int] | np.ndarray | None = None) -> np.ndarray:
        """(k, 2) array of centres; all cells when ``cells`` is None."""
        ids = np.arange(self.n_cells) if cells is None else np.asarray(cells, dtype=np.int64)
        r, c = np.divmod(ids, self.cols)
        u = (c + 0.5) * self.pitch
        v = (r + 0.5) * self.pitch
        ca, sa = math.cos(self.axis_heading), math.sin(self.axis_heading)
        return np.column_stack((self.origin[0] + ca * u - sa * v, self.origin[1] + sa * u + ca * v))

    def name_of(self, cell: int) -> str:
        r, c = self.row_col(cell)
        return f"{row_letters(r)}{c + 1}"

    def id_of(self, name: str) -> int:
        m = _NAME.match(name.strip())
        if not m:
            raise WorkspaceError(f"malformed cell name {name!r}")
        r, c = row_index(m.group(1)), int(m.group(2)) - 1
        if r >= self.rows or c >= self.cols:
            raise WorkspaceError(f"cell {name} outside {self.rows}x{self.cols} grid")
        return self._check(r * self.cols + c)

    def cell_at(self, point) -> int | None:
        """Cell containing ``point``, or None outside the map."""
        dx, dy = point[0] - self.origin[0], point[1] - self.origin[1]
        ca, sa = math.cos(self.axis_heading), math.sin(self.axis_heading)
        u, v = ca * dx + sa * dy, -sa * dx + ca * dy
        c, r = math.floor(u / self.pitch), math.floor(v / self.pitch)
        if 0 <= r < self.rows and 0 <= c < self.cols and r * self.cols + c < self.n_cells:
            return r * self.cols + c
        return None


def build_grid(origin=(0.0, 0.0), pitch: float = 50.0, rows: int = 1, cols: int = 1,
               axis_heading: float = 0.0, limit: int | None = None) -> GridMap:
    return GridMap((float(origin[0]), float(origin[1])), float(pitch), int(rows), int(cols),
                   float(axis_heading), limit)


def universe_grid(n_cells: int, pitch: float = 50.0, origin=(0.0, 0.0)) -> GridMap:
    """First ``n_cells`` cells (row-major) of the smallest square grid holding them."""
    if n_cells < 1:
        raise WorkspaceError("universe must contain at least one cell")
    side = math.isqrt(n_cells - 1) + 1
    rows = -(-n_cells // side)
    return build_grid(origin, pitch, rows, side, 0.0, None if rows * side == n_cells else n_cells)


@dataclass(frozen=True)
class RegionSet:
    name: str
    members: frozenset

    def __contains__(self, cell):
        return cell in self.members

    def __len__(self):
        return len(self.members)

    def sorted(self) -> list[int]:
        return sorted(self.members)


def region(grid: GridMap, name: str, cells: Iterable) -> RegionSet:
    ids = set()
    for c in cells:
        ids.add(grid.id_of(c) if isinstance(c, str) else grid._check(c))
    return RegionSet(name, frozenset(ids))


def parse_region(grid: GridMap, name: str, text: str) -> RegionSet:
    """Lines hold a cell name or ``NAME@ROWSxCOLS``; ``#`` starts a comment."""
    ids = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "@" in line:
            head, span = line.split("@", 1)
            m = re.fullmatch(r"\s*(\d+)\s*x\s*(\d+)\s*", span)
            if not m:
                raise WorkspaceError(f"line {lineno}: bad rectangle {span!r}")
            base = grid.id_of(head.strip())
            r0, c0 = divmod(base, grid.cols)
            nr, nc = int(m.group(1)), int(m.group(2))
            if nr < 1 or nc < 1 or c0 + nc > grid.cols:
                raise WorkspaceError(f"line {lineno}: rectangle leaves the grid")
            for r in range(r0, r0 + nr):
                for c in range(c0, c0 + nc):
                    ids.add(grid._check(r * grid.cols + c))
        else:
            ids.add(grid.id_of(line))
    return RegionSet(name, frozenset(ids))


def format_region(grid: GridMap, reg: RegionSet) -> str:
    return "".join(grid.name_of(c) + "\n" for c in reg.sorted())


# ---------------------------------------------------------------- baselines

def _dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _held_karp(points, start=None, cycle=True) -> float:
    n = len(points)
    if n == 0:
        return 0.0
    if n == 1:
        return 0.0 if start is None else _dist(start, points[0])
    d = [[_dist(p, q) for q in points] for p in points]
    full = (1 << n) - 1
    if cycle:
        # fix point 0 as the origin of the cycle
        best = {(1, 0): 0.0}
        for mask in range(1, full + 1):
            if not mask & 1:
                continue
            for j in range(n):
                if (mask, j) not in best:
                    continue
                base = best[(mask, j)]
                for k in range(1, n):
                    if mask >> k & 1:
                        continue
                    key = (mask | 1 << k, k)
                    val = base + d[j][k]
                    if val < best.get(key, math.inf):
                        best[key] = val
        return min(best[(full, j)] + d[j][0] for j in range(1, n))
    if start is None:
        best = {(1 << j, j): 0.0 for j in range(n)}
    else:
        best = {(1 << j, j): _dist(start, points[j]) for j in range(n)}
    for mask in range(1, full + 1):
        for j in range(n):
            if (mask, j) not in best:
                continue
            base = best[(mask, j)]
            for k in range(n):
                if mask >> k & 1:
                    continue
                key = (mask | 1 << k, k)
                val = base + d[j][k]
                if val < best.get(key, math.inf):
                    best[key] = val
    return min(best[(full, j)] for j in range(n))


def ideal_distance(targets: Sequence, mode: str = "tour", start=None, grid: GridMap | None = None,
                   cover: RegionSet | Iterable[int] | None = None) -> float:
    """Minimum flight distance ignoring turn limits.

    ``tour``: shortest closed cycle through the targets (the loop length of a
    patrol). ``open-path``: shortest path visiting every target, beginning at
    ``start`` when given. ``cover``: (|region| - 1) * pitch plus the distance
    from ``start`` to the nearest region cell centre.
    """
    if mode == "cover":
        if grid is None or cover is None:
            raise WorkspaceError("cover baseline needs a grid and a region")
        cells = sorted(cover.members if isinstance(cover, RegionSet) else set(cover))
        if not cells:
            return 0.0
        lead = 0.0
        if start is not None:
            c = grid.centers(cells)
            lead = float(np.min(np.hypot(c[:, 0] - start[0], c[:, 1] - start[1])))
        return (len(cells) - 1) * grid.pitch + lead
    pts = [tuple(map(float, p)) for p in targets]
    if len(pts) > MAX_EXACT_TSP:
        raise WorkspaceError(f"exact TSP limited to {MAX_EXACT_TSP} targets")
    if mode == "tour":
        return _held_karp(pts, cycle=True)
    if mode == "open-path":
        return _held_karp(pts, start, cycle=False)
    raise WorkspaceError(f"unknown baseline mode {mode!r}")


def brute_force_distance(targets: Sequence, mode: str = "tour", start=None) -> float:
    """Permutation enumeration; reference for the dynamic program."""
    pts = [tuple(map(float, p)) for p in targets]
    if not pts:
        return 0.0
    best = math.inf
    for perm in itertools.permutations(range(len(pts))):
        if mode == "tour" and perm[0] != 0:
            continue
        seq = [pts[i] for i in perm]
        total = sum(_dist(a, b) for a, b in zip(seq, seq[1:]))
        if mode == "tour":
            total += _dist(seq[-1], seq[0])
        elif start is not None:
            total += _dist(start, seq[0])
        best = min(best, total)
    return best
