"""SVG figures for mission runs and sweeps.

Figures are drawn with matplotlib's object API on the SVG canvas. A fixed
hash salt and an empty date make the output a pure function of the input.
"""
from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.collections import PatchCollection
from matplotlib.figure import Figure
from matplotlib.patches import Polygon

from .workspace import GridMap

_SALT = "iterplan"
_COLOURS = {"distance": "#1f77b4", "last": "#d62728", "random": "#2ca02c"}
_FALLBACK = ("#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    FigureCanvasSVG(fig)
    with matplotlib.rc_context({"svg.hashsalt": _SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _cell_polygon(grid: GridMap, cell: int):
    r, c = grid.row_col(cell)
    p = grid.pitch
    ca, sa = math.cos(grid.axis_heading), math.sin(grid.axis_heading)
    ox, oy = grid.origin
    corners = [(c * p, r * p), ((c + 1) * p, r * p), ((c + 1) * p, (r + 1) * p), (c * p, (r + 1) * p)]
    return [(ox + ca * u - sa * v, oy + sa * u + ca * v) for u, v in corners]


def plot_path(grid: GridMap, poses: Sequence, path, regions: Mapping[str, Iterable[int]] = (),
              photos: Sequence[int] = (), title: str = "", max_cells: int = 2500) -> Path:
    """Flight path over the grid with shaded regions and photo markers."""
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    ax.set_aspect("equal")
    regions = dict(regions)
    if grid.n_cells <= max_cells:
        outline = [Polygon(_cell_polygon(grid, c)) for c in range(grid.n_cells)]
        ax.add_collection(PatchCollection(outline, facecolor="none", edgecolor="#d0d0d0", linewidth=0.4))
    for k, (name, cells) in enumerate(sorted(regions.items())):
        cells = sorted(cells)
        if not cells:
            continue
        colour = _FALLBACK[k % len(_FALLBACK)] if name not in ("fire", "patrol") else (
            "#ff7f0e" if name == "patrol" else "#d62728")
        patches = [Polygon(_cell_polygon(grid, c)) for c in cells]
        ax.add_collection(PatchCollection(patches, facecolor=colour, alpha=0.35, edgecolor="none"))
        ax.plot([], [], "s", color=colour, alpha=0.5, label=name)
    if len(poses):
        xs = [p[1] for p in poses]
        ys = [p[2] for p in poses]
        ax.plot(xs, ys, "-", color="#1f3b73", linewidth=0.9, label="UAV")
        ax.plot(xs[:1], ys[:1], "o", color="#1f3b73", markersize=4)
    if photos:
        centres = [grid.cell_center(c) for c in sorted(set(photos))]
        ax.plot([c[0] for c in centres], [c[1] for c in centres], "*", color="#ffbf00",
                markeredgecolor="k", markersize=10, linestyle="none", label="photo")
    xs = [p[0] for c in (0, grid.n_cells - 1) for p in _cell_polygon(grid, c)]
    ys = [p[1] for c in (0, grid.n_cells - 1) for p in _cell_polygon(grid, c)]
    if len(poses):
        xs += [p[1] for p in poses]
        ys += [p[2] for p in poses]
    pad = grid.pitch
    ax.set_xlim(min(xs) - pad, max(xs) + pad)
    ax.set_ylim(min(ys) - pad, max(ys) + pad)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title:
        ax.set_title(title)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="upper right", fontsize="small")
    return _save(fig, path)


def mean_se(xs: Sequence[float]) -> tuple[float, float]:
    """Sample mean and standard error of the mean (0 for a single sample)."""
    n = len(xs)
    mean = math.fsum(xs) / n
    se = math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / (n - 1) / n) if n > 1 else 0.0
    return mean, se


def aggregate(rows: Iterable[Mapping], value: str = "overhead"):
    """(n, mean, standard error) of ``value`` per (sorter, universe)."""
    groups: dict = defaultdict(list)
    for r in rows:
        groups[(r["sorter"], int(r["universe"]))].append(float(r[value]))
    return {key: (len(groups[key]),) + mean_se(groups[key]) for key in sorted(groups)}


def _ylabel(value: str) -> str:
    return {"overhead": "overhead ratio", "sim_s": "duration (s)", "wall_s": "wall clock (s)"}.get(value, value)


def plot_sweep(rows: Sequence[Mapping], path, value: str = "overhead", title: str = "",
               xlabel: str = "universe") -> Path:
    """One line per sorter, error bars three standard errors wide each side."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    stats = aggregate(rows, value)
    sorters = sorted({k[0] for k in stats})
    for i, s in enumerate(sorters):
        pts = sorted((u, m, se) for (so, u), (n, m, se) in stats.items() if so == s)
        colour = _COLOURS.get(s, _FALLBACK[i % len(_FALLBACK)])
        ax.errorbar([p[0] for p in pts], [p[1] for p in pts], yerr=[3 * p[2] for p in pts],
                    marker="o", capsize=3, color=colour, label=s)
    universes = sorted({k[1] for k in stats})
    if universes and universes[-1] / max(universes[0], 1) >= 50:
        ax.set_xscale("log")
    ax.set_xlabel("locations" if xlabel == "universe" else "locations to cover")
    ax.set_ylabel(_ylabel(value))
    if title:
        ax.set_title(title)
    if sorters:
        ax.legend(fontsize="small")
    return _save(fig, path)


def plot_scatter(rows: Sequence[Mapping], path, value: str = "overhead", title: str = "") -> Path:
    """Every run as a point, coloured by sorter."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    by_sorter = defaultdict(list)
    for r in rows:
        by_sorter[r["sorter"]].append((int(r["universe"]), float(r[value])))
    for i, s in enumerate(sorted(by_sorter)):
        pts = sorted(by_sorter[s])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o", markersize=3, alpha=0.7,
                color=_COLOURS.get(s, _FALLBACK[i % len(_FALLBACK)]), label=s)
    ax.set_xlabel("locations")
    ax.set_ylabel(_ylabel(value))
    if title:
        ax.set_title(title)
    if by_sorter:
        ax.legend(fontsize="small")
    return _save(fig, path)


def plot_poses(poses: Sequence, path, title: str = "") -> Path:
    """Bare flight path from (t, x, y, heading) rows."""
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    ax.set_aspect("equal", adjustable="datalim")
    if len(poses):
        ax.plot([p[1] for p in poses], [p[2] for p in poses], "-", color="#1f3b73", linewidth=0.9)
        ax.plot([poses[0][1]], [poses[0][2]], "o", color="#1f3b73", markersize=4)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title:
        ax.set_title(title)
    return _save(fig, path)
