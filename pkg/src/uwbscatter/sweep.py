"""Bandstitched sweep capture, recording container and calibration."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import Band, Scene, _tag_states, frontend_response, synthesize_cfr

MAGIC = b"SLOREC1\0"
_HEADER = struct.Struct("<8s3I5d")

#: Candidate inter-anchor reference phase states (divide-by-4 chain).
CLOCK_STATES = 4


@dataclass(frozen=True)
class SweepPlan:
    f0: float = 3.3e9
    band_width: float = 25e6
    n_bands: int = 49
    sub_bins_per_band: int = 20
    dwell: float = 2.0
    snapshot_rate: float = 1250.0
    trim: float = 0.080

    def violations(self) -> list[str]:
        out = []
        if int(self.n_bands) != self.n_bands or self.n_bands < 1:
            out.append("n_bands must be an integer >= 1")
        if int(self.sub_bins_per_band) != self.sub_bins_per_band or self.sub_bins_per_band < 1:
            out.append("sub_bins_per_band must be an integer >= 1")
        if not self.f0 > 0:
            out.append("f0 must be > 0")
        if not self.band_width > 0:
            out.append("band_width must be > 0")
        if not self.snapshot_rate > 0:
            out.append("snapshot_rate must be > 0")
        if not self.trim >= 0:
            out.append("trim must be >= 0")
        if not self.dwell > self.trim:
            out.append("dwell must exceed trim")
        elif self.snapshot_rate > 0 and self.snapshots_per_band < 1:
            out.append("dwell - trim must hold at least one snapshot")
        return out

    @property
    def n_bins(self) -> int:
        return self.n_bands * self.sub_bins_per_band

    @property
    def total_bandwidth(self) -> float:
        return self.n_bands * self.band_width

    @property
    def bin_spacing(self) -> float:
        return self.band_width / self.sub_bins_per_band

    @property
    def sweep_time(self) -> float:
        return self.n_bands * self.dwell

    @property
    def unambiguous_delay(self) -> float:
        return 1.0 / self.bin_spacing

    @property
    def snapshots_per_band(self) -> int:
        return int(math.floor((self.dwell - self.trim) * self.snapshot_rate + 1e-9))

    def frequencies(self) -> np.ndarray:
        """Sub-bin centre frequencies, shape ``(n_bands, sub_bins)``."""
        b = np.arange(self.n_bands)[:, None]
        k = np.arange(self.sub_bins_per_band)[None, :]
        return self.f0 + b * self.band_width + (k + 0.5) * self.bin_spacing

    def band(self, b: int) -> Band:
        if not 0 <= b < self.n_bands:
            raise KeyError(f"band {b} outside plan")
        return Band(b, self.frequencies()[b])

    def snapshot_times(self, b: int, start_time: float = 0.0) -> np.ndarray:
        n = self.snapshots_per_band
        return start_time + b * self.dwell + self.trim + np.arange(n) / self.snapshot_rate


def plan_sweep(f0: float = 3.3e9, band_width: float = 25e6, n_bands: int = 49,
               sub_bins: int = 20, dwell: float = 2.0, snapshot_rate: float = 1250.0,
               trim: float = 0.080) -> SweepPlan:
    plan = SweepPlan(f0, band_width, int(n_bands), int(sub_bins), dwell, snapshot_rate, trim)
    problems = plan.violations()
    if problems:
        raise ValueError("; ".join(problems))
    return plan


@dataclass
class SweepRecording:
    """Decimated CFR snapshots of one sweep.

    ``times`` has shape ``(n_bands, n_snap)`` and ``data`` shape
    ``(n_bands, n_snap, sub_bins)``.
    """

    plan: SweepPlan
    times: np.ndarray
    data: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def snapshot_count(self) -> int:
        return self.times.shape[1]

    def replace_data(self, data: np.ndarray, times: np.ndarray | None = None,
                     **meta) -> "SweepRecording":
        md = dict(self.metadata)
        md.update(meta)
        return SweepRecording(self.plan, self.times if times is None else times, data, md)

    def write(self, path) -> None:
        write_recording(path, self)

    @classmethod
    def read(cls, path) -> "SweepRecording":
        return read_recording(path)


@dataclass
class Calibration:
    """Reference response per band from a cabled anchor-to-anchor capture."""

    plan: SweepPlan
    response: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=complex)
        if self.response.shape != (self.plan.n_bands, self.plan.sub_bins_per_band):
            raise ValueError("calibration shape does not match plan")

    @classmethod
    def identity(cls, plan: SweepPlan) -> "Calibration":
        return cls(plan, np.ones((plan.n_bands, plan.sub_bins_per_band), dtype=complex))

    def write(self, path) -> None:
        rec = SweepRecording(self.plan, np.zeros((self.plan.n_bands, 1)),
                             self.response[:, None, :], dict(self.metadata, kind="calibration"))
        write_recording(path, rec)

    @classmethod
    def read(cls, path) -> "Calibration":
        rec = read_recording(path)
        if rec.snapshot_count != 1:
            raise ValueError("calibration container must hold exactly one snapshot")
        return cls(rec.plan, rec.data[:, 0, :], rec.metadata)


def write_recording(path, rec: SweepRecording) -> None:
    p = rec.plan
    meta = json.dumps(rec.metadata, sort_keys=True).encode("utf-8")
    n_bands, n_snap, n_sub = rec.data.shape
    header = _HEADER.pack(MAGIC, n_bands, n_sub, n_snap, p.f0, p.band_width,
                          p.snapshot_rate, p.dwell, p.trim)
    body = np.empty((n_bands, n_snap, 1 + 2 * n_sub), dtype="<f8")
    body[:, :, 0] = rec.times
    body[:, :, 1::2] = rec.data.real
    body[:, :, 2::2] = rec.data.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(body.tobytes())


def read_recording(path) -> SweepRecording:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a sweep recording")
    _, n_bands, n_sub, n_snap, f0, bw, rate, dwell, trim = _HEADER.unpack_from(raw, 0)
    off = _HEADER.size
    (mlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    metadata = json.loads(raw[off:off + mlen].decode("utf-8")) if mlen else {}
    off += mlen
    body = np.frombuffer(raw, dtype="<f8", offset=off).reshape(n_bands, n_snap, 1 + 2 * n_sub)
    plan = SweepPlan(f0, bw, n_bands, n_sub, dwell, rate, trim)
    data = body[:, :, 1::2] + 1j * body[:, :, 2::2]
    return SweepRecording(plan, body[:, :, 0].copy(), data, metadata)


def capture_sweep(scene: Scene, tx: str, rx: str, plan: SweepPlan, seed: int = 0,
                  start_time: float = 0.0, clock_offset: int = 0,
                  noise: bool = True) -> SweepRecording:
    """Simulate one bandstitched sweep from anchor ``tx`` to anchor ``rx``.

    Band ``b`` dwells over ``[start_time + b*dwell, start_time + (b+1)*dwell)``
    with the first ``trim`` seconds discarded.  Each band draws noise from
    its own generator derived from ``(seed, b)``.  ``clock_offset`` injects
    one of the inter-anchor reference phase states as a per-band phase
    staircase.
    """
    problems = plan.violations() + scene.violations()
    if problems:
        raise ValueError("; ".join(problems))
    scene.anchor(tx), scene.anchor(rx)
    n = plan.snapshots_per_band
    times = np.stack([plan.snapshot_times(b, start_time) for b in range(plan.n_bands)])
    states = [_tag_states(scene, tag, times.ravel()).reshape(times.shape) for tag in scene.tags]
    data = np.empty((plan.n_bands, n, plan.sub_bins_per_band), dtype=complex)
    for b in range(plan.n_bands):
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFF, b])
        data[b] = synthesize_cfr(scene, tx, rx, plan.band(b), times[b], rng,
                                 1.0 / plan.snapshot_rate, noise=noise,
                                 tag_states=[s[b] for s in states])
        if clock_offset % CLOCK_STATES:
            data[b] *= clock_phase(clock_offset, b)
    meta = {"tx": tx, "rx": rx, "scene": scene.digest(), "seed": int(seed),
            "start_time": float(start_time)}
    return SweepRecording(plan, times, data, meta)


def clock_phase(state: int, band_index: int) -> complex:
    """Per-band phase produced by reference phase state ``state``."""
    return complex(np.exp(0.5j * np.pi * (state % CLOCK_STATES) * band_index))


def capture_calibration(scene: Scene, tx: str, rx: str, plan: SweepPlan) -> Calibration:
    """Cabled reference capture: the frontend response alone, noise free."""
    h = frontend_response(scene, scene.anchor(tx), scene.anchor(rx), plan.frequencies())
    return Calibration(plan, h, {"tx": tx, "rx": rx, "scene": scene.digest()})


def apply_calibration(cfr, cal: Calibration) -> np.ndarray:
    """Per-bin complex division of a stitched CFR by the calibration."""
    resp = cal.response
    if np.any(np.abs(resp) == 0):
        raise ZeroDivisionError("calibration has a zero-magnitude bin")
    cfr = np.asarray(cfr, dtype=complex)
    if cfr.shape[-2:] == resp.shape:
        return cfr / resp
    if cfr.shape[-1] == resp.size:
        return cfr / resp.ravel()
    raise ValueError("CFR shape does not match calibration")


def clock_continuity(cfr: np.ndarray) -> np.ndarray:
    """Boundary coherence for every candidate clock state.

    ``cfr`` is a calibrated ``(n_bands, sub_bins)`` response.  For each
    candidate the per-band staircase is removed and the phase step across
    each band boundary is compared with the mean step between adjacent
    sub-bins inside bands.  Returns one score in [-1, 1] per candidate.
    """
    n_bands, n_sub = cfr.shape
    inner = cfr[:, 1:] * np.conj(cfr[:, :-1])
    ref = np.sum(inner)
    if n_sub < 2 or n_bands < 2 or ref == 0:
        return np.zeros(CLOCK_STATES)
    ref = ref / abs(ref)
    edge = cfr[1:, 0] * np.conj(cfr[:-1, -1])
    norm = np.sum(np.abs(edge))
    if norm == 0:
        return np.zeros(CLOCK_STATES)
    scores = np.empty(CLOCK_STATES)
    for k in range(CLOCK_STATES):
        # undoing state k rotates every boundary step by -k*pi/2
        rot = np.exp(-0.5j * np.pi * k)
        scores[k] = np.real(np.sum(edge * rot) * np.conj(ref)) / norm
    return scores


def resolve_clock_ambiguity(rec: SweepRecording, cal: Calibration,
                            min_score: float = 0.5, min_margin: float = 0.3) -> SweepRecording:
    """Remove the inter-anchor reference phase staircase.

    The state whose removal makes band boundaries most continuous is
    chosen.  Results are recorded in ``metadata`` under ``clock_offset``,
    ``clock_score`` and ``clock_ambiguous``; ambiguous recordings are
    returned uncorrected.
    """
    mean_cfr = apply_calibration(rec.data.mean(axis=1), cal)
    scores = clock_continuity(mean_cfr)
    order = np.argsort(-scores, kind="stable")
    best = int(order[0])
    margin = float(scores[best] - scores[order[1]])
    ambiguous = bool(scores[best] < min_score or margin < min_margin)
    meta = {"clock_offset": 0 if ambiguous else best, "clock_score": float(scores[best]),
            "clock_ambiguous": ambiguous}
    if ambiguous or best == 0:
        return rec.replace_data(rec.data, **meta)
    fix = np.array([np.conj(clock_phase(best, b)) for b in range(rec.plan.n_bands)])
    return rec.replace_data(rec.data * fix[:, None, None], **meta)
