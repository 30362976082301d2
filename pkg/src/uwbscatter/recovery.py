"""Sub-noise tag recovery: filtering, correlation search, integration, CIR."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.signal
import scipy.sparse

from .sweep import Calibration, SweepPlan, SweepRecording, apply_calibration
from .waveform import DEFAULT_CYCLES_PER_CHIP, square_code_wave

DETECTION_SNR_DB = 26.0
UNCODED = (1,)


@dataclass(frozen=True)
class TagSignalHypothesis:
    """Modulation frequency, phase (radians in [0, pi)), code and code phase.

    ``code_offset`` is counted in half modulation cycles.  Together with a
    phase in [0, pi), which spans half a cycle, this represents any start
    position of a coded tag exactly.
    """

    f_cand: float
    phi0: float
    code: tuple = UNCODED
    code_offset: int = 0
    correlation_score: float = 0.0
    cycles_per_chip: int = DEFAULT_CYCLES_PER_CHIP

    def __post_init__(self):
        if not 0 <= self.phi0 < math.pi:
            raise ValueError("phi0 must lie in [0, pi)")
        if self.correlation_score < 0:
            raise ValueError("correlation_score must be >= 0")

    def cycles(self, t) -> np.ndarray:
        return (self.f_cand * np.asarray(t, dtype=float) + self.phi0 / (2 * math.pi)
                + 0.5 * self.code_offset)

    def waveform(self, t) -> np.ndarray:
        return square_code_wave(self.cycles(t), self.code, self.cycles_per_chip)


@dataclass
class CirEstimate:
    samples: np.ndarray
    time_step: float
    origin: float = 0.0
    snr: float = float("nan")
    zero_pad_factor: int = 10

    def __post_init__(self):
        if not self.time_step > 0:
            raise ValueError("time_step must be > 0")

    @property
    def times(self) -> np.ndarray:
        return self.origin + self.time_step * np.arange(self.samples.size)

    @property
    def magnitude_db(self) -> np.ndarray:
        mag = np.abs(self.samples)
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(mag)

    @property
    def unambiguous_range(self) -> float:
        return self.samples.size * self.time_step

    def to_csv(self, path) -> None:
        write_cir_csv(path, self)


def write_cir_csv(path, cir: CirEstimate) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "re", "im", "magnitude_db"])
        for t, z, m in zip(cir.times, cir.samples, cir.magnitude_db):
            w.writerow([repr(float(t)), repr(float(z.real)), repr(float(z.imag)), repr(float(m))])


def read_cir_csv(path, zero_pad_factor: int = 10) -> CirEstimate:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    samples = data[:, 1] + 1j * data[:, 2]
    step = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 1.0
    return CirEstimate(samples, step, float(data[0, 0]),
                       cir_snr(samples, zero_pad_factor), zero_pad_factor)


# -- filtering -------------------------------------------------------------

def highpass_taps(cutoff_hz: float, rate: float, numtaps: int | None = None) -> np.ndarray:
    """Linear-phase high-pass FIR with exactly zero DC response."""
    if numtaps is None:
        numtaps = int(round(0.24 * rate)) | 1
    taps = scipy.signal.firwin(numtaps, cutoff_hz, fs=rate, pass_zero=False)
    return taps - taps.mean()


def highpass(rec: SweepRecording, cutoff_hz: float, numtaps: int | None = None) -> SweepRecording:
    """High-pass every sub-bin time series of every band.

    Only fully-overlapped output samples are kept, so each band loses
    ``numtaps - 1`` snapshots split evenly between both ends and no filter
    start-up transient survives.
    """
    rate = rec.plan.snapshot_rate
    if not 0 < cutoff_hz < rate / 2:
        raise ValueError(f"cutoff must lie in (0, {rate / 2}) Hz")
    taps = highpass_taps(cutoff_hz, rate, numtaps)
    m = taps.size
    if rec.snapshot_count < m:
        raise ValueError("recording shorter than the filter")
    data = scipy.signal.fftconvolve(rec.data, taps[None, :, None], mode="valid", axes=1)
    h = (m - 1) // 2
    times = rec.times[:, h:rec.snapshot_count - h]
    return rec.replace_data(data, times, highpass_hz=float(cutoff_hz))


def highpass_power_gain(cutoff_hz: float, rate: float, numtaps: int | None = None) -> float:
    """Output/input power ratio of :func:`highpass` for white input."""
    taps = highpass_taps(cutoff_hz, rate, numtaps)
    return float(np.sum(taps ** 2))


# -- correlation search ------------------------------------------------------

def _frequency_grid(nominal: float, span_ppm: float, step_ppm: float,
                    centre_ppm: float = 0.0) -> np.ndarray:
    n = int(math.floor(span_ppm / step_ppm + 1e-9))
    ppm = centre_ppm + step_ppm * np.arange(-n, n + 1)
    return nominal * (1.0 + ppm * 1e-6)


def _upsampled(code, cpc: int) -> np.ndarray:
    """Chip value per half modulation cycle."""
    return np.repeat(np.asarray(code, dtype=float), 2 * cpc)


@dataclass
class SearchGrid:
    """Correlation scores over (code, frequency, phase, code offset)."""

    nominal_f: float
    freqs: np.ndarray
    phases: np.ndarray
    codes: list
    cycles_per_chip: int
    scores: np.ndarray  # (n_codes, n_freqs, n_phases, n_offsets)

    @property
    def ppm(self) -> np.ndarray:
        return (self.freqs / self.nominal_f - 1.0) * 1e6

    def best(self, code_index: int = 0) -> TagSignalHypothesis:
        s = self.scores[code_index]
        i, j, k = np.unravel_index(int(np.argmax(s)), s.shape)
        return TagSignalHypothesis(float(self.freqs[i]), float(self.phases[j]),
                                   tuple(self.codes[code_index]), int(k), float(s[i, j, k]),
                                   self.cycles_per_chip)

    def best_overall(self) -> TagSignalHypothesis:
        flat = self.scores.reshape(len(self.codes), -1).max(axis=1)
        return self.best(int(np.argmax(flat)))

    def heatmap(self, code_index: int = 0) -> np.ndarray:
        """Best-over-phase score per (frequency, code offset)."""
        return self.scores[code_index].max(axis=1)


def _demean(x: np.ndarray) -> np.ndarray:
    return x - x.mean(axis=0, keepdims=True)


def _band_scores(times, x, freqs, phases, codes, cpc, window) -> np.ndarray:
    """Sum over sub-bins of |correlation|^2 for one band."""
    n = times.size
    xw = _demean(x)
    if window is not None:
        xw = xw * scipy.signal.get_window(window, n, fftbins=False)[:, None]
    cyc = (freqs[:, None, None] * times[None, None, :]
           + phases[None, :, None] / (2 * math.pi))          # (F, P, n)
    whole = np.floor(cyc)
    sq = np.where(cyc - whole < 0.5, 1.0, -1.0)
    n_combo = freqs.size * phases.size
    lengths = {len(c) for c in codes}
    if lengths == {1}:
        t = sq.reshape(n_combo, n)
        re = t @ xw.real
        im = t @ xw.imag
        power = np.sum(re * re + im * im, axis=1)
        out = np.empty((len(codes), freqs.size, phases.size, 1))
        for ci, c in enumerate(codes):
            out[ci, :, :, 0] = power.reshape(freqs.size, phases.size)
        return out
    if len(lengths) != 1:
        raise ValueError("all searched codes must share one length")
    # slots are half cycles; the square-wave sign of a half-cycle shift
    # is common to a whole offset and drops out of |corr|^2
    n_slots = 2 * lengths.pop() * cpc
    slot = (np.floor(2 * cyc).astype(np.int64) % n_slots).reshape(n_combo, n)
    rows = (np.arange(n_combo)[:, None] * n_slots + slot).ravel()
    cols = np.broadcast_to(np.arange(n), (n_combo, n)).ravel()
    m = scipy.sparse.csr_matrix((sq.ravel(), (rows, cols)), shape=(n_combo * n_slots, n))
    acc = (m @ xw).reshape(n_combo, n_slots, -1)            # (combo, slot, sub)
    # corr[k] = sum_s u[(s + k) % L] acc[s]
    fa = np.fft.fft(np.conj(acc), axis=1)
    out = np.empty((len(codes), freqs.size, phases.size, n_slots))
    for ci, c in enumerate(codes):
        fu = np.fft.fft(_upsampled(c, cpc))
        corr = np.conj(np.fft.ifft(np.conj(fa) * fu[None, :, None], axis=1))
        out[ci] = np.sum(np.abs(corr) ** 2, axis=2).reshape(freqs.size, phases.size, n_slots)
    return out


def search_scores(rec: SweepRecording, freqs, n_phases: int = 8, codes=None,
                  cycles_per_chip: int = DEFAULT_CYCLES_PER_CHIP, window: str | None = "blackman",
                  bands=None, nominal_f: float | None = None, phases=None) -> SearchGrid:
    """Exhaustive correlation scores for explicit candidate frequencies."""
    if rec.snapshot_count == 0:
        raise ValueError("empty recording")
    freqs = np.asarray(freqs, dtype=float)
    if phases is None:
        if n_phases < 1:
            raise ValueError("n_phases must be >= 1")
        phases = np.pi * np.arange(n_phases) / n_phases
    phases = np.asarray(phases, dtype=float)
    codes = [tuple(UNCODED)] if not codes else [tuple(int(v) for v in c) for c in codes]
    bands = range(rec.plan.n_bands) if bands is None else bands
    total = None
    for b in bands:
        s = _band_scores(rec.times[b], rec.data[b], freqs, phases, codes, cycles_per_chip, window)
        total = s if total is None else total + s
    nominal = float(np.median(freqs)) if nominal_f is None else nominal_f
    return SearchGrid(nominal, freqs, phases, codes, cycles_per_chip, total)


def search_grid(rec: SweepRecording, nominal_f: float = 256.0, span_ppm: float = 500.0,
                step_ppm: float = 5.0, n_phases: int = 8, codes=None,
                cycles_per_chip: int = DEFAULT_CYCLES_PER_CHIP, window: str | None = "blackman",
                bands=None) -> SearchGrid:
    """Exhaustive search over ``nominal_f`` +- ``span_ppm`` in ``step_ppm`` steps."""
    if not span_ppm >= step_ppm > 0:
        raise ValueError("need span_ppm >= step_ppm > 0")
    freqs = _frequency_grid(nominal_f, span_ppm, step_ppm)
    return search_scores(rec, freqs, n_phases, codes, cycles_per_chip, window, bands, nominal_f)


def search_tag(rec: SweepRecording, nominal_f: float = 256.0, span_ppm: float = 500.0,
               step_ppm: float = 5.0, n_phases: int = 8, codes=None,
               cycles_per_chip: int = DEFAULT_CYCLES_PER_CHIP, window: str | None = "blackman",
               coarse_step_ppm: float | None = None, refine: bool = False,
               bands=None, code_index: int | None = None) -> TagSignalHypothesis:
    """Strongest (frequency, phase, code, code offset) candidate.

    The default is an exhaustive scan of the ``step_ppm`` grid.  With
    ``coarse_step_ppm`` the span is first scanned coarsely and only the
    fine steps within one coarse step of the coarse peak are visited.
    ``refine`` then fits the residual frequency and phase continuously
    from the per-band phase progression (see :func:`refine_hypothesis`).
    ``code_index`` restricts the answer to one of ``codes``.
    """
    if not span_ppm >= step_ppm > 0:
        raise ValueError("need span_ppm >= step_ppm > 0")
    if coarse_step_ppm:
        coarse = search_grid(rec, nominal_f, span_ppm, coarse_step_ppm, n_phases, codes,
                             cycles_per_chip, window, bands)
        h = coarse.best_overall() if code_index is None else coarse.best(code_index)
        centre = (h.f_cand / nominal_f - 1.0) * 1e6
        freqs = _frequency_grid(nominal_f, coarse_step_ppm, step_ppm, centre)
        lim = nominal_f * (1 + np.array([-span_ppm, span_ppm]) * 1e-6)
        freqs = freqs[(freqs >= lim[0] - 1e-12) & (freqs <= lim[1] + 1e-12)]
        grid = search_scores(rec, freqs, n_phases, codes, cycles_per_chip, window, bands, nominal_f)
    else:
        grid = search_grid(rec, nominal_f, span_ppm, step_ppm, n_phases, codes,
                           cycles_per_chip, window, bands)
    hyp = grid.best_overall() if code_index is None else grid.best(code_index)
    if refine:
        hyp = refine_hypothesis(rec, hyp, max_ppm=step_ppm, bands=bands)
    return hyp


def refine_hypothesis(rec: SweepRecording, hyp: TagSignalHypothesis, max_ppm: float = 5.0,
                      bands=None, n_grid: int = 2001) -> TagSignalHypothesis:
    """Continuous frequency/phase correction from per-band phase progression.

    After removing the hypothesised code, the modulation fundamental is
    projected onto both rotation senses in each band; their product
    cancels the unknown channel response and leaves twice the residual
    phase.  A line fitted through those phases across bands gives the
    residual frequency and the phase at time zero.
    """
    bands = list(range(rec.plan.n_bands)) if bands is None else list(bands)
    pts, mids = [], []
    for b in bands:
        t = rec.times[b]
        x = _demean(rec.data[b])
        c = hyp.cycles(t)
        chips = square_code_wave(c, hyp.code, hyp.cycles_per_chip) * \
            square_code_wave(c, UNCODED, hyp.cycles_per_chip)
        xc = x * chips[:, None]
        rot = np.exp(-2j * np.pi * c)
        y_pos = rot @ xc
        y_neg = np.conj(rot) @ xc
        pts.append(np.sum(y_pos * np.conj(-y_neg)))
        mids.append(t.mean())
    pts = np.asarray(pts)
    mids = np.asarray(mids)
    w = pts / np.maximum(np.abs(pts), 1e-300) * np.sqrt(np.abs(pts))
    dmax = hyp.f_cand * max_ppm * 1e-6
    df = np.linspace(-dmax, dmax, n_grid)
    power = np.abs(np.exp(-4j * np.pi * np.outer(df, mids)) @ w)
    i = int(np.argmax(power))
    if 0 < i < n_grid - 1:
        a, b0, c0 = power[i - 1], power[i], power[i + 1]
        den = a - 2 * b0 + c0
        shift = 0.5 * (a - c0) / den if den != 0 else 0.0
        best_df = df[i] + shift * (df[1] - df[0])
    else:
        best_df = df[i]
    e0 = np.angle(np.sum(w * np.exp(-4j * np.pi * best_df * mids))) / (4 * np.pi)
    cyc0 = hyp.phi0 / (2 * math.pi) + e0
    # phases are reported in [0, pi); a half-cycle shift only flips the sign
    halves = math.floor(cyc0 / 0.5)
    cyc0 -= 0.5 * halves
    offset = hyp.code_offset + halves
    n_slots = 2 * len(hyp.code) * hyp.cycles_per_chip
    phi = min(2 * math.pi * cyc0, math.nextafter(math.pi, 0))
    return replace(hyp, f_cand=hyp.f_cand + best_df, phi0=phi, code_offset=offset % n_slots)


# -- integration and CIR ------------------------------------------------------

def integrate_band(times, snapshots, hyp: TagSignalHypothesis, t_int: float | None = None) -> np.ndarray:
    """Correlate each sub-bin series against the hypothesis waveform.

    Uses the first ``t_int`` seconds (all snapshots when None).  The
    per-bin mean is removed first, which makes the correlation blind to
    any static channel component.  Returns the mean correlated value per
    sub-bin, an estimate of the tag-path amplitude.
    """
    times = np.asarray(times, dtype=float)
    snapshots = np.asarray(snapshots)
    if t_int is not None:
        span = times[-1] - times[0] + (times[1] - times[0] if times.size > 1 else 0.0)
        if t_int > span * (1 + 1e-9):
            raise ValueError(f"t_int {t_int} s exceeds the {span} s available")
        n = int(round(t_int * (times.size / span)))
        times, snapshots = times[:n], snapshots[:n]
    if times.size == 0:
        raise ValueError("no snapshots to integrate")
    tmpl = hyp.waveform(times).astype(float)
    return tmpl @ _demean(snapshots) / times.size


def integrate_recording(rec: SweepRecording, hyp: TagSignalHypothesis,
                        t_int: float | None = None) -> np.ndarray:
    """:func:`integrate_band` for every band, shape ``(n_bands, sub_bins)``."""
    return np.stack([integrate_band(rec.times[b], rec.data[b], hyp, t_int)
                     for b in range(rec.plan.n_bands)])


def direct_cfr(rec: SweepRecording, t_int: float | None = None) -> np.ndarray:
    """Plain time average of every band (no correlation)."""
    if t_int is None:
        return rec.data.mean(axis=1)
    n = max(1, int(round(t_int * rec.plan.snapshot_rate)))
    return rec.data[:, :n].mean(axis=1)


def cir_snr(samples, zero_pad_factor: int = 10, guard_cells: int = 2) -> float:
    """Peak power over mean off-peak noise power, dB.

    The noise power is estimated from the median of the off-peak samples,
    scaled by 1/ln 2 so that complex Gaussian noise gives an unbiased
    mean; samples within ``guard_cells`` resolution cells of the peak are
    excluded.
    """
    p = np.abs(np.asarray(samples)) ** 2
    m = p.size
    k = int(np.argmax(p))
    guard = guard_cells * zero_pad_factor
    dist = np.abs((np.arange(m) - k + m // 2) % m - m // 2)
    off = p[dist > guard]
    if off.size == 0:
        return float("nan")
    noise = np.median(off) / math.log(2.0)
    if noise <= 0:
        return float("inf")
    return float(10.0 * math.log10(p[k] / noise))


def stitch_to_cir(values, cal: Calibration | None = None, zero_pad_factor: int = 10,
                  plan: SweepPlan | None = None) -> CirEstimate:
    """Stitch per-band CFR values, calibrate, zero-pad and invert.

    Sample ``n`` equals ``(1/N) sum_k H_k exp(2j pi k n / (zp N))`` so that
    padding interpolates without rescaling.
    """
    values = np.asarray(values, dtype=complex)
    if values.ndim != 2:
        raise ValueError("expected (n_bands, sub_bins) values")
    if plan is None:
        if cal is None:
            raise ValueError("need a calibration or a plan")
        plan = cal.plan
    if values.shape != (plan.n_bands, plan.sub_bins_per_band):
        raise ValueError(f"expected {plan.n_bands} bands of {plan.sub_bins_per_band} bins, "
                         f"got {values.shape}")
    if np.any(np.isnan(values)):
        raise ValueError("missing band values")
    if zero_pad_factor < 1 or int(zero_pad_factor) != zero_pad_factor:
        raise ValueError("zero_pad_factor must be a positive integer")
    h = apply_calibration(values, cal) if cal is not None else values
    h = h.ravel()
    n = h.size
    padded = np.zeros(n * zero_pad_factor, dtype=complex)
    padded[:n] = h
    samples = np.fft.ifft(padded) * zero_pad_factor
    step = 1.0 / (zero_pad_factor * n * plan.bin_spacing)
    return CirEstimate(samples, step, 0.0, cir_snr(samples, zero_pad_factor), zero_pad_factor)
