"""Tag position from TDoA ellipsoids by multi-start gradient descent."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .ranging import TdoaMeasurement
from .rfmodel import SPEED_OF_LIGHT

FOCUS_GUARD = 1e-3
GRAD_TOL = 1e-9
STEP_TOL = 1e-6


@dataclass(frozen=True)
class PositionEstimate:
    position: np.ndarray
    residual_rms: float
    iterations: int
    converged: bool
    start_index: int = 0
    in_bounds: bool = True


class InsufficientMeasurementsError(ValueError):
    pass


def _anchor_map(anchors) -> dict:
    if isinstance(anchors, dict):
        return anchors
    return {a.id: a for a in anchors}


def foci(m: TdoaMeasurement, anchors, split: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Transmit and receive focus of a measurement ellipsoid."""
    amap = _anchor_map(anchors)
    try:
        tx, rx = amap[m.tx_anchor], amap[m.rx_anchor]
    except KeyError as e:
        raise KeyError(f"unknown anchor id {e.args[0]!r}") from None
    if split:
        return tx.tx_position, rx.rx_position
    return np.asarray(tx.position, dtype=float), np.asarray(rx.position, dtype=float)


def ellipsoid_residual(p, m: TdoaMeasurement, anchors, split: bool = True) -> float:
    """``|T - p| + |p - R| - (|T - R| + c tdoa)`` in metres."""
    t, r = foci(m, anchors, split)
    p = np.asarray(p, dtype=float)
    return float(np.linalg.norm(t - p) + np.linalg.norm(p - r)
                 - np.linalg.norm(t - r) - SPEED_OF_LIGHT * m.tdoa)


class _Problem:
    def __init__(self, measurements, anchors, split):
        pairs = [foci(m, anchors, split) for m in measurements]
        self.t = np.array([p[0] for p in pairs])
        self.r = np.array([p[1] for p in pairs])
        self.target = (np.linalg.norm(self.t - self.r, axis=1)
                       + SPEED_OF_LIGHT * np.array([m.tdoa for m in measurements]))

    def residuals(self, p) -> np.ndarray:
        return (np.linalg.norm(self.t - p, axis=1) + np.linalg.norm(self.r - p, axis=1)
                - self.target)

    def cost_grad(self, p):
        dt = p - self.t
        dr = p - self.r
        nt = np.maximum(np.linalg.norm(dt, axis=1), FOCUS_GUARD)
        nr = np.maximum(np.linalg.norm(dr, axis=1), FOCUS_GUARD)
        res = nt + nr - self.target
        g = 2.0 * (res[:, None] * (dt / nt[:, None] + dr / nr[:, None])).sum(axis=0)
        return float(res @ res), g

    def newton_distance(self, p) -> float:
        """Length of the Gauss-Newton step from ``p``: the linearised
        distance still separating ``p`` from the local minimum."""
        dt = p - self.t
        dr = p - self.r
        nt = np.maximum(np.linalg.norm(dt, axis=1), FOCUS_GUARD)
        nr = np.maximum(np.linalg.norm(dr, axis=1), FOCUS_GUARD)
        jac = dt / nt[:, None] + dr / nr[:, None]
        res = nt + nr - self.target
        step, *_ = np.linalg.lstsq(jac, res, rcond=None)
        return float(np.linalg.norm(step))

    def nudge(self, p) -> np.ndarray:
        """Move ``p`` off any focus (the gradient is undefined there)."""
        for f in np.concatenate([self.t, self.r]):
            d = p - f
            n = np.linalg.norm(d)
            if n < FOCUS_GUARD:
                p = f + (d / n if n > 0 else np.array([1.0, 0, 0])) * FOCUS_GUARD
        return p


def _descend(prob: _Problem, p0, max_iter: int):
    """Barzilai-Borwein gradient descent with Armijo backtracking."""
    p = prob.nudge(np.asarray(p0, dtype=float).copy())
    f, g = prob.cost_grad(p)
    step = 1e-2
    prev = None
    for it in range(max_iter):
        gn = float(np.linalg.norm(g))
        if gn < GRAD_TOL or prob.newton_distance(p) < STEP_TOL:
            return p, it, True
        if prev is not None:
            s, y = p - prev[0], g - prev[1]
            sy = float(s @ y)
            step = float(s @ s) / sy if sy > 0 else 1e-2
        a = step
        while True:
            q = prob.nudge(p - a * g)
            fq, gq = prob.cost_grad(q)
            if fq <= f - 1e-4 * a * gn * gn:
                break
            a *= 0.5
            if a * gn < 1e-15:
                return p, it, False
        prev = (p, g)
        p, f, g = q, fq, gq
    return p, max_iter, False


def default_bounds(anchors, margin: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    pts = np.array([np.asarray(a.position, dtype=float) for a in _anchor_map(anchors).values()])
    return pts.min(axis=0) - margin, pts.max(axis=0) + margin


def start_points(bounds, init=None) -> np.ndarray:
    """``init`` (or the box centre) followed by the 8 octant centres."""
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    pts = [np.asarray(init, dtype=float) if init is not None else (lo + hi) / 2]
    for corner in itertools.product((0.25, 0.75), repeat=3):
        pts.append(lo + np.array(corner) * (hi - lo))
    return np.array(pts)


def solve_position(measurements, anchors, init=None, bounds=None, split: bool = True,
                   max_iter: int = 5000, bounds_tolerance: float = 0.25) -> PositionEstimate:
    """Least-squares intersection of the measurement ellipsoids.

    Each start descends independently; estimates inside ``bounds``
    (within ``bounds_tolerance``) are preferred, then the lowest residual,
    then the lowest start index.
    """
    measurements = list(measurements)
    if len(measurements) < 3:
        raise InsufficientMeasurementsError("3D position needs at least 3 TDoA measurements")
    amap = _anchor_map(anchors)
    for m in measurements:
        foci(m, amap, split)
    pairs = {(m.tx_anchor, m.rx_anchor) for m in measurements}
    if len(pairs) < 3:
        raise InsufficientMeasurementsError("need at least 3 distinct anchor pairs")
    prob = _Problem(measurements, amap, split)
    if bounds is None:
        bounds = default_bounds(amap)
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    best = None
    for i, p0 in enumerate(start_points((lo, hi), init)):
        p, it, ok = _descend(prob, p0, max_iter)
        res = prob.residuals(p)
        rms = float(np.sqrt(np.mean(res ** 2)))
        inside = bool(np.all(p >= lo - bounds_tolerance) and np.all(p <= hi + bounds_tolerance))
        key = (not inside, round(rms, 12), i)
        if best is None or key < best[0]:
            best = (key, PositionEstimate(p, rms, it, ok, i, inside))
    return best[1]


def write_positions_csv(path, estimates) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z", "residual_m", "converged"])
        for e in estimates:
            x, y, z = (float(v) for v in e.position)
            w.writerow([repr(x), repr(y), repr(z), repr(e.residual_rms), int(e.converged)])

