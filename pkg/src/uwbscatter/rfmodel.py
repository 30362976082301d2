"""Closed-form RF budget for a bistatic backscatter link.

All powers are carried in dB units and combined additively.  Transmit and
received figures are power densities (dBm/MHz) but, as in the usual
back-of-envelope treatment, they are composed directly with thermal noise
expressed in dBm.  :func:`db_to_linear` / :func:`linear_to_db` are the only
unit conversions used across the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_HZ = -174.0

#: Regulatory UWB limit, also the default transmit density.
UWB_TX_DENSITY_DBM_MHZ = -41.3

DEFAULT_N_BINS = 980


def db_to_linear(db):
    """Power ratio in dB to linear power ratio."""
    return 10.0 ** (db / 10.0)


def linear_to_db(x):
    """Linear power ratio to dB."""
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class LinkBudget:
    """Terms of the backscatter link budget.

    Gains are in dBi, losses and noise figure in dB, distances and
    wavelength in metres.  ``r1`` is transmitter to tag, ``r2`` tag to
    receiver.
    """

    p_t: float = UWB_TX_DENSITY_DBM_MHZ
    g_t: float = 0.0
    g_r: float = 0.0
    g_bt: float = 0.0
    g_br: float = 0.0
    wavelength: float = 0.075
    r1: float = 5.0
    r2: float = 5.0
    l_b: float = 1.0
    eta_r: float = 10.0
    g_cfr_cir: float = 10.0 * math.log10(DEFAULT_N_BINS)
    snr_target: float = 26.0

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if not self.r1 > 0:
            out.append(f"r1 must be > 0 (got {self.r1})")
        if not self.r2 > 0:
            out.append(f"r2 must be > 0 (got {self.r2})")
        if not self.wavelength > 0:
            out.append(f"wavelength must be > 0 (got {self.wavelength})")
        if not self.l_b >= 0:
            out.append(f"l_b must be >= 0 (got {self.l_b})")
        if not self.eta_r >= 0:
            out.append(f"eta_r must be >= 0 (got {self.eta_r})")
        if not self.snr_target > 0:
            out.append(f"snr_target must be > 0 (got {self.snr_target})")
        return out

    def with_distances(self, r1: float, r2: float) -> "LinkBudget":
        return replace(self, r1=r1, r2=r2)

    @classmethod
    def for_bins(cls, n_bins: int, **kw) -> "LinkBudget":
        """Budget whose stitching gain matches ``n_bins`` coherently summed bins."""
        return cls(g_cfr_cir=10.0 * math.log10(n_bins), **kw)


def free_space_gain(wavelength: float, distance: float) -> float:
    """One-way free-space gain ``20 log10(lambda / (4 pi d))`` in dB."""
    if not wavelength > 0 or not distance > 0:
        raise ValueError("wavelength and distance must be positive")
    return 20.0 * math.log10(wavelength / (4.0 * math.pi * distance))


def backscatter_rx_power(b: LinkBudget) -> float:
    """Power density reaching the receiver via the tag, dBm/MHz."""
    b.validate()
    return (
        b.p_t + b.g_t + b.g_bt + b.g_br + b.g_r
        + free_space_gain(b.wavelength, b.r1)
        + free_space_gain(b.wavelength, b.r2)
        - b.l_b
    )


def thermal_noise_power(t: float, floor: float = THERMAL_NOISE_DBM_HZ) -> float:
    """Noise power left after integrating for ``t`` seconds, dBm."""
    if not t > 0:
        raise ValueError(f"integration time must be > 0 (got {t})")
    return floor + 10.0 * math.log10(1.0 / t)


def required_noise_floor(b: LinkBudget) -> float:
    """Noise level the integrated channel estimate must reach, dBm."""
    return backscatter_rx_power(b) - b.eta_r + b.g_cfr_cir - b.snr_target


def integration_constant(b: LinkBudget | None = None,
                         floor: float = THERMAL_NOISE_DBM_HZ) -> float:
    """``K`` in ``t = K (r1 r2)^2`` for the gains and losses of ``b``.

    Evaluated at unit distances, so only the non-distance terms of ``b``
    matter.
    """
    b = LinkBudget() if b is None else b
    p_hat = required_noise_floor(b.with_distances(1.0, 1.0))
    return 10.0 ** (-(p_hat - floor) / 10.0)


def min_integration_time(r1: float, r2: float, b: LinkBudget | None = None,
                         floor: float = THERMAL_NOISE_DBM_HZ) -> float:
    """Shortest integration (s) that lifts the tag to the target CIR SNR.

    Inverts the thermal-noise law at the required noise floor.  Since the
    received power falls as ``(r1 r2)^-2`` the result is ``K (r1 r2)^2``.
    """
    if not r1 > 0 or not r2 > 0:
        raise ValueError(f"distances must be > 0 (got r1={r1}, r2={r2})")
    return integration_constant(b, floor) * (r1 * r2) ** 2
