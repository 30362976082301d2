"""Ground-truth channel frequency response synthesis for a room scene."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .rfmodel import (SPEED_OF_LIGHT, THERMAL_NOISE_DBM_HZ, LinkBudget,
                      backscatter_rx_power, free_space_gain)
from .waveform import TagConfig, tag_state


def _vec(p) -> np.ndarray:
    v = np.asarray(p, dtype=float).reshape(3)
    return v


@dataclass(frozen=True)
class Anchor:
    """An anchor with separate transmit and receive antennas.

    ``obstruction_db`` is excess loss applied to every path touching this
    anchor; ``cable_delay`` is the frontend delay removed by calibration.
    """

    id: str
    position: tuple
    tx_offset: tuple = (0.0, 0.0, 0.0)
    rx_offset: tuple = (0.0, 0.0, 0.0)
    obstruction_db: float = 0.0
    cable_delay: float = 0.0

    @property
    def tx_position(self) -> np.ndarray:
        return _vec(self.position) + _vec(self.tx_offset)

    @property
    def rx_position(self) -> np.ndarray:
        return _vec(self.position) + _vec(self.rx_offset)


@dataclass(frozen=True)
class Reflector:
    position: tuple
    reflection_gain: float = -6.0


@dataclass(frozen=True)
class TagPlacement:
    config: TagConfig
    position: tuple


@dataclass(frozen=True)
class InterferenceSource:
    """A dynamic process perturbing the channel.

    ``amplitude_db`` is the per-bin power of the perturbation relative to
    the direct path.  Walking is a sum of random low-frequency tones with
    Gaussian spread ``corner_hz``; fluorescent lighting is a line spectrum
    at ``line_hz`` and its first ``harmonics`` multiples; ``custom`` uses
    ``lines`` as (frequency Hz, relative amplitude) pairs.
    """

    kind: str = "walking"
    amplitude_db: float = -30.0
    corner_hz: float = 8.0
    line_hz: float = 60.0
    harmonics: int = 2
    lines: tuple = ()
    seed: int = 0
    n_components: int = 64

    def violations(self) -> list[str]:
        out = []
        if self.kind not in ("walking", "fluorescent", "custom"):
            out.append(f"unknown interference kind {self.kind!r}")
        if math.isnan(self.amplitude_db) or self.amplitude_db == math.inf:
            out.append("interference amplitude must be finite or -inf")
        if not self.corner_hz > 0 or not self.line_hz > 0:
            out.append("interference corner/line frequencies must be > 0")
        return out


@dataclass(frozen=True)
class Scene:
    anchors: tuple
    reflectors: tuple = ()
    tags: tuple = ()
    interference: tuple = ()
    temperature_noise_floor: float = THERMAL_NOISE_DBM_HZ
    budget: LinkBudget = field(default_factory=LinkBudget)
    reflection_model: str = "antipodal"
    frontend_ripple_db: float = 0.0
    frontend_seed: int = 0

    def __post_init__(self):
        for name in ("anchors", "reflectors", "tags", "interference"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def violations(self) -> list[str]:
        out = []
        ids = [a.id for a in self.anchors]
        if len(set(ids)) != len(ids):
            out.append("anchor ids must be unique")
        for a in self.anchors:
            for p in (a.position, a.tx_offset, a.rx_offset):
                if not np.all(np.isfinite(np.asarray(p, dtype=float))):
                    out.append(f"anchor {a.id}: non-finite position")
        for r in self.reflectors:
            if r.reflection_gain > 0:
                out.append("reflection_gain must be <= 0")
            if not np.all(np.isfinite(np.asarray(r.position, dtype=float))):
                out.append("reflector position must be finite")
        for t in self.tags:
            if not np.all(np.isfinite(np.asarray(t.position, dtype=float))):
                out.append("tag position must be finite")
        for s in self.interference:
            out.extend(s.violations())
        if self.reflection_model not in ("antipodal", "onoff"):
            out.append(f"unknown reflection_model {self.reflection_model!r}")
        out.extend(self.budget.violations())
        return out

    def anchor(self, anchor_id: str) -> Anchor:
        for a in self.anchors:
            if a.id == anchor_id:
                return a
        raise KeyError(f"unknown anchor id {anchor_id!r}")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Band(NamedTuple):
    index: int
    freqs: np.ndarray


def path_delay(a, b, c=None) -> float:
    """Propagation time along a->b (or a->b->c), seconds."""
    a, b = _vec(a), _vec(b)
    d = float(np.linalg.norm(b - a))
    if c is not None:
        d += float(np.linalg.norm(_vec(c) - b))
    return d / SPEED_OF_LIGHT


def _amp(power_dbm: float) -> float:
    return math.sqrt(10.0 ** (power_dbm / 10.0))


def direct_path(scene: Scene, tx: Anchor, rx: Anchor) -> tuple[float, float]:
    """(amplitude, delay) of the anchor-to-anchor line-of-sight path."""
    b = scene.budget
    d = float(np.linalg.norm(rx.rx_position - tx.tx_position))
    p = (b.p_t + b.g_t + b.g_r + free_space_gain(b.wavelength, max(d, 1e-3))
         - tx.obstruction_db - rx.obstruction_db)
    return _amp(p), d / SPEED_OF_LIGHT


def reflector_paths(scene: Scene, tx: Anchor, rx: Anchor) -> list[tuple[float, float]]:
    b = scene.budget
    out = []
    for r in scene.reflectors:
        d = float(np.linalg.norm(_vec(r.position) - tx.tx_position)
                  + np.linalg.norm(rx.rx_position - _vec(r.position)))
        p = (b.p_t + b.g_t + b.g_r + free_space_gain(b.wavelength, d)
             + r.reflection_gain - tx.obstruction_db - rx.obstruction_db)
        out.append((_amp(p), d / SPEED_OF_LIGHT))
    return out


def tag_path(scene: Scene, tx: Anchor, rx: Anchor, tag: TagPlacement) -> tuple[float, float]:
    """(amplitude, delay) of the tag reflection; amplitude squared is the
    backscatter power of the link budget."""
    pos = _vec(tag.position)
    r1 = max(float(np.linalg.norm(pos - tx.tx_position)), 1e-3)
    r2 = max(float(np.linalg.norm(rx.rx_position - pos)), 1e-3)
    p = backscatter_rx_power(scene.budget.with_distances(r1, r2))
    p -= tx.obstruction_db + rx.obstruction_db
    return _amp(p), (r1 + r2) / SPEED_OF_LIGHT


def frontend_response(scene: Scene, tx: Anchor, rx: Anchor, freqs) -> np.ndarray:
    """Deterministic transmit/receive chain response removed by calibration."""
    freqs = np.asarray(freqs, dtype=float)
    h = np.exp(-2j * np.pi * freqs * (tx.cable_delay + rx.cable_delay))
    if scene.frontend_ripple_db:
        # smooth ripple: a few random sinusoids over the absolute frequency axis
        rng = np.random.default_rng([scene.frontend_seed, 0xF0E1])
        periods = rng.uniform(50e6, 400e6, 4)
        phases = rng.uniform(0, 2 * np.pi, 4)
        ripple = sum(np.sin(2 * np.pi * freqs / p + ph) for p, ph in zip(periods, phases)) / 4
        phase = sum(np.cos(2 * np.pi * freqs / p - ph) for p, ph in zip(periods, phases)) / 4
        h = h * 10.0 ** (scene.frontend_ripple_db * ripple / 20.0) * np.exp(1j * phase)
    return h


def interference_waveform(src: InterferenceSource, t) -> np.ndarray:
    """Complex multiplier contributed by ``src`` at times ``t``.

    Unit mean power scaled by ``amplitude_db``; a pure function of ``t``
    and ``src.seed``.
    """
    t = np.asarray(t, dtype=float)
    if src.amplitude_db == -math.inf:
        return np.zeros(t.shape, dtype=complex)
    rng = np.random.default_rng([src.seed, 0x1F7E])
    if src.kind == "walking":
        freqs = rng.normal(0.0, src.corner_hz, src.n_components)
        amps = (rng.standard_normal(src.n_components)
                + 1j * rng.standard_normal(src.n_components)) / math.sqrt(2 * src.n_components)
    elif src.kind == "fluorescent":
        k = np.arange(1, src.harmonics + 1)
        freqs = src.line_hz * k
        amps = (1.0 / k) * np.exp(2j * np.pi * rng.uniform(size=k.size))
        amps = amps / np.sqrt(np.sum(np.abs(amps) ** 2))
    else:
        if not src.lines:
            return np.zeros(t.shape, dtype=complex)
        freqs = np.array([f for f, _ in src.lines], dtype=float)
        amps = np.array([a for _, a in src.lines], dtype=float)
        amps = amps / np.sqrt(np.sum(amps ** 2)) * np.exp(2j * np.pi * rng.uniform(size=freqs.size))
    w = np.exp(2j * np.pi * np.multiply.outer(t, freqs)) @ amps
    return w * 10.0 ** (src.amplitude_db / 20.0)


def interference_profile(src: InterferenceSource, band_index: int, n_sub: int) -> np.ndarray:
    """Per-sub-bin complex gains of an interference source (unit mean power)."""
    rng = np.random.default_rng([src.seed, 0xB1, band_index])
    return (rng.standard_normal(n_sub) + 1j * rng.standard_normal(n_sub)) / math.sqrt(2)


def noise_std(scene: Scene, snapshot_interval: float) -> float:
    """Per-snapshot complex noise standard deviation (sqrt mW).

    Thermal noise integrated over one snapshot plus the receiver noise
    figure, so that averaging snapshots follows the -174 + 10 log10(1/t)
    law.
    """
    p = (scene.temperature_noise_floor + scene.budget.eta_r
         + 10.0 * math.log10(1.0 / snapshot_interval))
    return _amp(p)


def static_cfr(scene: Scene, tx: Anchor, rx: Anchor, freqs) -> np.ndarray:
    freqs = np.asarray(freqs, dtype=float)
    a, tau = direct_path(scene, tx, rx)
    h = a * np.exp(-2j * np.pi * freqs * tau)
    for a, tau in reflector_paths(scene, tx, rx):
        h = h + a * np.exp(-2j * np.pi * freqs * tau)
    return h


def _tag_states(scene: Scene, tag: TagPlacement, t) -> np.ndarray:
    s = tag_state(tag.config, t).astype(float)
    if scene.reflection_model == "onoff":
        s = (s + 1.0) / 2.0
    return s


def synthesize_cfr(scene: Scene, tx: str, rx: str, band: Band, t, rng=None,
                   snapshot_interval: float = 1.0 / 1250.0, noise: bool = True,
                   tag_states: Sequence | None = None) -> np.ndarray:
    """Channel frequency response snapshots for one band.

    Returns shape ``(len(t), n_sub)`` (or ``(n_sub,)`` for scalar ``t``).
    ``tag_states`` optionally supplies precomputed per-tag state arrays
    for ``t``.
    """
    tx_a, rx_a = scene.anchor(tx), scene.anchor(rx)
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    freqs = np.asarray(band.freqs, dtype=float)
    fe = frontend_response(scene, tx_a, rx_a, freqs)

    out = np.empty((t.size, freqs.size), dtype=complex)
    out[:] = static_cfr(scene, tx_a, rx_a, freqs) * fe
    for i, tag in enumerate(scene.tags):
        a, tau = tag_path(scene, tx_a, rx_a, tag)
        s = _tag_states(scene, tag, t) if tag_states is None else tag_states[i]
        out += np.outer(s, a * np.exp(-2j * np.pi * freqs * tau) * fe)
    if scene.interference:
        a_d, tau_d = direct_path(scene, tx_a, rx_a)
        ref = a_d * fe
        for src in scene.interference:
            w = interference_waveform(src, t)
            out += np.outer(w, ref * interference_profile(src, band.index, freqs.size))
    if noise:
        if rng is None:
            raise ValueError("rng required when noise is enabled")
        sigma = noise_std(scene, snapshot_interval) / math.sqrt(2.0)
        out += sigma * (rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape))
    return out[0] if scalar else out
