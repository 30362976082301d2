"""Leading-edge time of arrival and backscatter TDoA."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .recovery import DETECTION_SNR_DB, CirEstimate
from .rfmodel import SPEED_OF_LIGHT

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.30
SEARCH_WINDOW_FRACTION = 0.20


class NoCrossingError(ValueError):
    """The CIR never rises through the threshold inside the search window."""


@dataclass(frozen=True)
class TdoaMeasurement:
    tx_anchor: str
    rx_anchor: str
    tdoa: float
    direct_snr: float
    tag_snr: float
    threshold_fraction: float = DEFAULT_THRESHOLD
    valid: bool = True

    @property
    def tdoa_m(self) -> float:
        return self.tdoa * SPEED_OF_LIGHT


def estimate_toa(cir: CirEstimate, threshold_fraction: float = DEFAULT_THRESHOLD,
                 window_fraction: float = SEARCH_WINDOW_FRACTION) -> float:
    """First crossing of ``threshold_fraction`` of the peak magnitude.

    The search starts ``window_fraction`` of the unambiguous range before
    the global peak (wrapping circularly) and walks forward to the first
    sample that rises through the threshold.  The crossing
    time is linearly interpolated between the two bracketing samples.
    """
    if not 0 < threshold_fraction < 1:
        raise ValueError("threshold_fraction must lie in (0, 1)")
    mag = np.abs(np.asarray(cir.samples))
    n = mag.size
    if n < 2 or not np.any(mag > 0):
        raise NoCrossingError("CIR is empty or identically zero")
    if not cir.snr >= DETECTION_SNR_DB:
        log.warning("CIR SNR %.1f dB below %.0f dB; ToA is low confidence",
                    cir.snr, DETECTION_SNR_DB)
    scale = mag.max()
    mag = mag / scale
    peak = int(np.argmax(mag))
    back = max(1, int(round(window_fraction * n)))
    idx = (peak - back + np.arange(back + 1)) % n
    seg = mag[idx]
    # first upward crossing: below threshold at k-1, at or above at k
    up = (seg[:-1] < threshold_fraction) & (seg[1:] >= threshold_fraction)
    if not up.any():
        raise NoCrossingError("no upward threshold crossing inside the search window")
    k = int(np.argmax(up)) + 1
    lo, hi = seg[k - 1], seg[k]
    frac = (threshold_fraction - lo) / (hi - lo)
    pos = peak - back + (k - 1) + frac
    return float(cir.origin + (pos % n) * cir.time_step)


def estimate_tdoa(direct: CirEstimate, tag: CirEstimate, threshold_fraction: float = DEFAULT_THRESHOLD,
                  tx_anchor: str = "", rx_anchor: str = "",
                  tolerance: float | None = None) -> TdoaMeasurement:
    """Tag ToA minus direct ToA.

    Differences are taken modulo the unambiguous range into
    ``(-range/2, range/2]``.  A result more negative than ``tolerance``
    (default half the native resolution) is marked invalid.
    """
    if abs(direct.unambiguous_range - tag.unambiguous_range) > 1e-6 * direct.unambiguous_range:
        raise ValueError("CIRs come from different sweep plans")
    t_d = estimate_toa(direct, threshold_fraction)
    t_t = estimate_toa(tag, threshold_fraction)
    span = direct.unambiguous_range
    d = (t_t - t_d) % span
    if d > span / 2:
        d -= span
    if tolerance is None:
        tolerance = 0.5 * direct.time_step * direct.zero_pad_factor
    return TdoaMeasurement(tx_anchor, rx_anchor, float(d), float(direct.snr), float(tag.snr),
                           threshold_fraction, bool(d >= -tolerance))


def geometric_tdoa(tx, tag, rx) -> float:
    """Noiseless TDoA, ``(|T - p| + |p - R| - |T - R|) / c``."""
    tx, tag, rx = (np.asarray(v, dtype=float) for v in (tx, tag, rx))
    extra = np.linalg.norm(tag - tx) + np.linalg.norm(rx - tag) - np.linalg.norm(rx - tx)
    return float(extra / SPEED_OF_LIGHT)


def write_tdoa_csv(path, measurements) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tx", "rx", "tdoa_s", "tdoa_m", "direct_snr_db", "tag_snr_db"])
        for m in measurements:
            w.writerow([m.tx_anchor, m.rx_anchor, repr(m.tdoa), repr(m.tdoa_m),
                        repr(m.direct_snr), repr(m.tag_snr)])


def read_tdoa_csv(path, threshold_fraction: float = DEFAULT_THRESHOLD) -> list[TdoaMeasurement]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(TdoaMeasurement(row["tx"], row["rx"], float(row["tdoa_s"]),
                                       float(row["direct_snr_db"]), float(row["tag_snr_db"]),
                                       threshold_fraction))
    return out
