"""Required-integration-time maps for anchor arrangements."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .rfmodel import LinkBudget, integration_constant

MIN_DISTANCE = 0.1


@dataclass(frozen=True)
class AnchorLayout:
    """Anchor placement over an axis-aligned room.

    Monostatic units transmit and receive from the same point, so only
    the pairings (i, i) are used and cells within ``flash_radius`` of a
    unit are excluded (infinite time).  Bistatic layouts pair every
    transmitter with every other anchor as receiver.
    """

    arrangement: str
    positions: tuple
    room: tuple = ((0.0, 0.0), (80.0, 80.0))
    resolution: float = 1.0
    height: float | None = None
    flash_radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "positions",
                           tuple(tuple(float(v) for v in p) for p in self.positions))
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if self.arrangement not in ("monostatic", "bistatic"):
            out.append(f"unknown arrangement {self.arrangement!r}")
        if not self.positions:
            out.append("layout needs at least one anchor")
        if self.arrangement == "bistatic" and len(set(self.positions)) < 2:
            out.append("bistatic layout needs at least 2 distinct positions")
        if not self.resolution > 0:
            out.append("resolution must be > 0")
        lo, hi = self.room
        if any(h <= l for l, h in zip(lo, hi)):
            out.append("room upper bounds must exceed lower bounds")
        return out

    @property
    def pairings(self) -> list[tuple[int, int]]:
        n = len(self.positions)
        if self.arrangement == "monostatic":
            return [(i, i) for i in range(n)]
        return [(i, j) for i, j in itertools.product(range(n), repeat=2) if i != j]

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates along x and y."""
        (x0, y0), (x1, y1) = self.room[0][:2], self.room[1][:2]
        nx = max(1, int(round((x1 - x0) / self.resolution)))
        ny = max(1, int(round((y1 - y0) / self.resolution)))
        return (x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx,
                y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny)

    def tag_height(self) -> float:
        if self.height is not None:
            return self.height
        return float(np.mean([p[2] if len(p) > 2 else 0.0 for p in self.positions]))


@dataclass
class CoverageMap:
    x: np.ndarray
    y: np.ndarray
    seconds: np.ndarray  # shape (len(y), len(x))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "seconds"])
            for iy, yv in enumerate(self.y):
                for ix, xv in enumerate(self.x):
                    w.writerow([repr(float(xv)), repr(float(yv)), repr(float(self.seconds[iy, ix]))])

    def to_grid(self, path) -> None:
        """Rendering-ready matrix: first row x centres, first column y centres."""
        grid = np.full((self.y.size + 1, self.x.size + 1), np.nan)
        grid[0, 1:] = self.x
        grid[1:, 0] = self.y
        grid[1:, 1:] = self.seconds
        np.savetxt(path, grid, delimiter=",", fmt="%.17g")


def _pos3(p, height) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p if p.size == 3 else np.array([p[0], p[1], height])


def integration_time_map(layout: AnchorLayout, budget: LinkBudget | None = None) -> CoverageMap:
    """Shortest required integration over all pairings, per cell."""
    x, y = layout.axes()
    h = layout.tag_height()
    gx, gy = np.meshgrid(x, y)
    cells = np.stack([gx, gy, np.full_like(gx, h)], axis=-1)
    k = integration_constant(budget)
    pos = [_pos3(p, h) for p in layout.positions]
    best = np.full(gx.shape, np.inf)
    for i, j in layout.pairings:
        r1 = np.linalg.norm(cells - pos[i], axis=-1)
        r2 = np.linalg.norm(cells - pos[j], axis=-1)
        t = k * (np.maximum(r1, MIN_DISTANCE) * np.maximum(r2, MIN_DISTANCE)) ** 2
        if layout.arrangement == "monostatic":
            t = np.where(r1 < layout.flash_radius, np.inf, t)
        best = np.minimum(best, t)
    return CoverageMap(x, y, best)


def coverage_cdf(values) -> list[tuple[float, float]]:
    """Empirical CDF as (value, fraction of cells <= value) steps."""
    v = np.asarray(values.seconds if isinstance(values, CoverageMap) else values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty map")
    u, counts = np.unique(v, return_counts=True)
    frac = np.cumsum(counts) / v.size
    return [(float(a), float(b)) for a, b in zip(u, frac)]


def cdf_quantile(cdf, q: float) -> float:
    """Smallest value whose cumulative fraction reaches ``q``."""
    for value, frac in cdf:
        if frac >= q - 1e-12:
            return value
    return cdf[-1][0]


def write_cdf_csv(path, cdf) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seconds", "fraction"])
        for v, f in cdf:
            w.writerow([repr(v), repr(f)])


def room_corners(room, height: float = 0.0, inset: float = 0.0) -> list[tuple]:
    (x0, y0), (x1, y1) = room[0][:2], room[1][:2]
    return [(x0 + inset, y0 + inset, height), (x1 - inset, y0 + inset, height),
            (x1 - inset, y1 - inset, height), (x0 + inset, y1 - inset, height)]
