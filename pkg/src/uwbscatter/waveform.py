"""Tag modulation: PN codes, square-wave mixing and clock jitter."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Fibonacci LFSR taps (polynomial exponents, constant term implied), one
# primitive polynomial per register size.
PRIMITIVE_TAPS = {
    2: (2, 1),
    3: (3, 2),
    4: (4, 3),
    5: (5, 3),
    6: (6, 5),
    7: (7, 6),
    8: (8, 6, 5, 4),
    9: (9, 5),
    10: (10, 7),
    11: (11, 9),
    12: (12, 11, 10, 4),
    13: (13, 12, 11, 8),
    14: (14, 13, 12, 2),
    15: (15, 14),
    16: (16, 15, 13, 4),
}

# x^6+x+1 and x^6+x^5+1: a preferred pair, so they seed a Gold family.
PREFERRED_PAIR_6 = ((6, 1), (6, 5))

DEFAULT_CYCLES_PER_CHIP = 4
_JITTER_BLOCK = 1 << 16


def lfsr_bits(register_bits: int, seed_state: int = 1, taps=None) -> np.ndarray:
    """One full period of LFSR output bits (0/1)."""
    if not 2 <= register_bits <= 16:
        raise ValueError("register_bits must be in [2, 16]")
    if taps is None:
        taps = PRIMITIVE_TAPS[register_bits]
    mask = (1 << register_bits) - 1
    state = seed_state & mask
    if state == 0:
        raise ValueError("seed_state 0 is the LFSR lockup state")
    n = (1 << register_bits) - 1
    out = np.empty(n, dtype=np.int8)
    # bit i of `state` holds stage i+1; output is the last stage
    for i in range(n):
        out[i] = (state >> (register_bits - 1)) & 1
        fb = 0
        for t in taps:
            fb ^= (state >> (t - 1)) & 1
        state = ((state << 1) | fb) & mask
    return out


def pn_sequence(register_bits: int, seed_state: int = 1, taps=None) -> np.ndarray:
    """Maximal-length sequence as +-1 chips (bit 0 -> +1, bit 1 -> -1).

    Different nonzero seeds give cyclic shifts of the same sequence; pass
    ``taps`` to select another primitive polynomial.
    """
    bits = lfsr_bits(register_bits, seed_state, taps)
    return (1 - 2 * bits.astype(np.int8)).astype(np.int8)


def gold_code(shift: int, register_bits: int = 6, pair=PREFERRED_PAIR_6) -> np.ndarray:
    """Gold code: product of a preferred pair of m-sequences at relative ``shift``."""
    a = pn_sequence(register_bits, 1, pair[0])
    b = pn_sequence(register_bits, 1, pair[1])
    return (a * np.roll(b, -shift)).astype(np.int8)


def circular_correlation(a, b) -> np.ndarray:
    """``out[k] = sum_i a[i] * b[(i + k) % n]`` in integer arithmetic."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    return np.array([int(np.dot(a, np.roll(b, -k))) for k in range(len(a))])


@dataclass(frozen=True)
class TagConfig:
    """Modulation parameters of one tag.

    ``start_cycles`` is the modulation phase (in cycles, integer part
    selecting the code position) at simulated time zero.
    """

    f_mod: float = 256.0
    code: tuple = (1,)
    cycles_per_chip: int = DEFAULT_CYCLES_PER_CHIP
    jitter_ppm: float = 0.0
    freq_offset_ppm: float = 0.0
    seed: int = 0
    start_cycles: float = 0.0
    max_offset_ppm: float = field(default=500.0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "code", tuple(int(c) for c in self.code))
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if not self.f_mod > 0:
            out.append("f_mod must be > 0")
        if len(self.code) < 1:
            out.append("code must have at least one chip")
        if any(c not in (-1, 1) for c in self.code):
            out.append("code chips must be +1 or -1")
        if int(self.cycles_per_chip) != self.cycles_per_chip or self.cycles_per_chip < 1:
            out.append("cycles_per_chip must be an integer >= 1")
        if abs(self.freq_offset_ppm) > self.max_offset_ppm:
            out.append(f"|freq_offset_ppm| must be <= {self.max_offset_ppm}")
        if self.jitter_ppm < 0:
            out.append("jitter_ppm must be >= 0")
        return out

    @property
    def true_frequency(self) -> float:
        return self.f_mod * (1.0 + self.freq_offset_ppm * 1e-6)

    @property
    def code_period(self) -> float:
        """Seconds per full code period at the true (offset) frequency."""
        return len(self.code) * self.cycles_per_chip / self.true_frequency


@dataclass(frozen=True)
class ChipTimeline:
    transitions: np.ndarray
    states: np.ndarray
    duration: float


def _jitter_block(seed: int, index: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0x6A177E, index])
    return np.random.default_rng(ss).standard_normal(_JITTER_BLOCK)


def unit_timing_walk(seed: int, n_steps: int) -> np.ndarray:
    """Cumulative sum of ``n_steps`` unit normals, prefix-stable in ``n_steps``.

    Element ``k`` is the walk after ``k + 1`` steps; asking for more steps
    never changes earlier values.
    """
    n_blocks = -(-n_steps // _JITTER_BLOCK)
    steps = np.concatenate([_jitter_block(seed, i) for i in range(n_blocks)]) \
        if n_blocks else np.zeros(0)
    return np.cumsum(steps[:n_steps])


def tag_cycles(cfg: TagConfig, t) -> np.ndarray:
    """Elapsed modulation cycles (including ``start_cycles``) at times ``t``.

    Each half period ends late or early by a Gaussian error with standard
    deviation ``jitter_ppm * 1e-6`` of the half period; the errors
    accumulate as a random walk.
    """
    t = np.asarray(t, dtype=float)
    f = cfg.true_frequency
    if cfg.jitter_ppm == 0:
        return cfg.start_cycles + f * t
    if np.any(t < 0):
        raise ValueError("times must be >= 0")
    half = 0.5 / f
    n_edges = int(math.ceil(np.max(t, initial=0.0) / half)) + 4
    walk = unit_timing_walk(cfg.seed, n_edges) * (cfg.jitter_ppm * 1e-6 * half)
    idx = np.arange(n_edges + 1)
    edges = idx * half + np.concatenate(([0.0], walk))
    return cfg.start_cycles + 0.5 * np.interp(t, edges, idx)


def square_code_wave(cycles, code, cycles_per_chip: int) -> np.ndarray:
    """``code[chip] * sgn(sin(2 pi cycles))`` with sgn(0) taken as +1."""
    cycles = np.asarray(cycles, dtype=float)
    whole = np.floor(cycles)
    sq = np.where(cycles - whole < 0.5, 1, -1).astype(np.int8)
    code = np.asarray(code, dtype=np.int8)
    if len(code) == 1:
        return sq * code[0]
    chip = (whole.astype(np.int64) // cycles_per_chip) % len(code)
    return sq * code[chip]


def tag_state(cfg: TagConfig, t) -> np.ndarray:
    """Antenna state of the tag at ``t``: +1 reflect, -1 absorb."""
    return square_code_wave(tag_cycles(cfg, t), cfg.code, cfg.cycles_per_chip)


def chip_timeline(cfg: TagConfig, duration: float) -> ChipTimeline:
    """Antenna-state transitions of a jitter-free tag over ``[0, duration)``."""
    if cfg.jitter_ppm:
        raise ValueError("chip_timeline is defined for jitter-free tags")
    f = cfg.true_frequency
    c0 = cfg.start_cycles
    k = np.arange(math.floor(2 * c0) + 1, math.ceil(2 * (c0 + f * duration)))
    times = (k / 2 - c0) / f
    times = times[(times > 0) & (times < duration)]
    probe = np.concatenate(([0.0], times)) + 1e-9 / f
    states = tag_state(cfg, probe)
    keep = np.concatenate(([True], states[1:] != states[:-1]))
    return ChipTimeline(times[keep[1:]], states[keep], duration)


def max_jitter_for_integration(t_int: float, f_mod: float = 256.0, trials: int = 200,
                               seed: int = 0, quantile: float = 0.95,
                               cap_ppm: float = 1e6) -> float:
    """Largest jitter (ppm) keeping the tag within a quarter bit of its mean rate.

    A bit is one antenna state, i.e. half a modulation period.  The clock
    deviation scales linearly with the jitter, so each Monte Carlo
    realization is simulated once at 1 ppm and the answer is the quarter
    bit divided by the ``quantile`` of the per-trial peak deviation.
    Realizations share prefixes across ``t_int``, making the result
    nonincreasing in ``t_int`` for a fixed seed.
    """
    if not t_int > 0:
        raise ValueError("t_int must be > 0")
    if trials < 100:
        raise ValueError("trials must be >= 100")
    half = 0.5 / f_mod
    n_steps = int(math.floor(t_int / half))
    if n_steps == 0:
        return cap_ppm
    peaks = np.empty(trials)
    for i in range(trials):
        walk = unit_timing_walk(seed * 1_000_003 + i, n_steps)
        peaks[i] = np.max(np.abs(walk)) * 1e-6 * half
    worst = np.quantile(peaks, quantile)
    return float(min(cap_ppm, (half / 4.0) / worst))
