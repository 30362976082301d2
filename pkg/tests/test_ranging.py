import itertools
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from uwbscatter.channel import Anchor, Scene, TagPlacement, direct_path, tag_path
from uwbscatter.ranging import (NoCrossingError, TdoaMeasurement, estimate_tdoa, estimate_toa,
                                geometric_tdoa, read_tdoa_csv, write_tdoa_csv)
from uwbscatter.recovery import CirEstimate, stitch_to_cir
from uwbscatter.rfmodel import SPEED_OF_LIGHT as C0
from uwbscatter.sweep import plan_sweep
from uwbscatter.waveform import TagConfig

PLAN = plan_sweep()
F = PLAN.frequencies()


def _cir(paths, noise=None):
    h = sum(a * np.exp(-2j * np.pi * F * tau) for a, tau in paths)
    if noise is not None:
        h = h + noise
    return stitch_to_cir(h, plan=PLAN)


def _continuous(paths):
    """Band-limited CIR magnitude evaluated directly from the CFR, any t."""
    k = np.arange(F.size)
    h = sum(a * np.exp(-2j * np.pi * F.ravel() * tau) for a, tau in paths)
    return lambda t: abs(np.mean(h * np.exp(2j * np.pi * k * PLAN.bin_spacing * t)))


def _oracle_crossing(paths, thr, t_lo, t_hi):
    g = _continuous(paths)
    ts = np.linspace(t_lo, t_hi, 601)
    mags = np.array([g(t) for t in ts])
    top = mags.max()
    i = int(np.argmax(mags >= thr * top))
    return brentq(lambda t: g(t) - thr * top, ts[i - 1], ts[i], xtol=1e-15)


def test_single_path_leading_edge():
    tau = 41.7e-9
    cir = _cir([(1.0, tau)])
    assert abs(cir.times[np.argmax(np.abs(cir.samples))] - tau) <= cir.time_step
    want = _oracle_crossing([(1.0, tau)], 0.3, tau - 5e-9, tau + 1e-9)
    assert abs(estimate_toa(cir, 0.3) - want) <= cir.time_step


def test_two_path_tracks_first_arrival():
    tau = 20e-9
    paths = [(1.0, tau), (0.5, tau + 5e-9)]
    cir = _cir(paths)
    got = estimate_toa(cir, 0.3)
    want = _oracle_crossing(paths, 0.3, tau - 5e-9, tau + 8e-9)
    assert abs(got - want) <= cir.time_step
    assert abs(got - tau) < abs(got - (tau + 5e-9))


def _noisy_errors(thr, seeds=20, snr_db=0.0):
    tau = 60e-9
    edge = _oracle_crossing([(1.0, tau)], thr, tau - 5e-9, tau + 1e-9)
    out = []
    for s in range(seeds):
        rng = np.random.default_rng(s)
        sigma = 10 ** (-snr_db / 20) / math.sqrt(2)
        noise = sigma * (rng.standard_normal(F.shape) + 1j * rng.standard_normal(F.shape))
        out.append(abs(estimate_toa(_cir([(1.0, tau)], noise), thr) - edge) * C0)
    return np.array(out)


def test_threshold_sweep():
    # about 30 dB CIR SNR: thresholds >= 30% stay sub-metre, 5% locks onto noise
    for thr in (0.3, 0.5, 0.7, 0.9):
        assert np.median(_noisy_errors(thr)) < 1.0
    assert np.median(_noisy_errors(0.05)) > 1.0


@settings(max_examples=20)
@given(st.floats(1e-6, 1e6))
def test_toa_scale_invariant(scale):
    cir = _cir([(1.0, 30e-9), (0.4, 36e-9)])
    big = CirEstimate(cir.samples * scale, cir.time_step, cir.origin, cir.snr)
    assert estimate_toa(big) == pytest.approx(estimate_toa(cir), abs=1e-15)


def test_toa_errors(caplog):
    z = CirEstimate(np.zeros(100, complex), 1e-9, snr=0.0)
    with pytest.raises(NoCrossingError):
        estimate_toa(z)
    cir = _cir([(1.0, 30e-9)])
    with pytest.raises(ValueError):
        estimate_toa(cir, 1.0)
    weak = CirEstimate(cir.samples, cir.time_step, snr=10.0)
    with caplog.at_level(logging.WARNING):
        estimate_toa(weak)
    assert "low confidence" in caplog.text
    flat = CirEstimate(np.ones(100, complex), 1e-9, snr=40.0)
    with pytest.raises(NoCrossingError):
        estimate_toa(flat)


def _pair_tdoa(scene, tx, rx, tag):
    a, b = scene.anchor(tx), scene.anchor(rx)
    d = _cir([direct_path(scene, a, b)])
    t = _cir([tag_path(scene, a, b, tag)])
    return estimate_tdoa(d, t, 0.3, tx, rx)


def _scene(tag_pos, a=(0, 0, 1), b=(5, 0, 1)):
    tag = TagPlacement(TagConfig(), tuple(tag_pos))
    return Scene((Anchor("A", a, (0, 0.36, 0), (0, -0.36, 0), cable_delay=4e-9),
                  Anchor("B", b, (0, 0.36, 0), (0, -0.36, 0))), tags=(tag,)), tag


def test_tag_on_the_line():
    scene = Scene((Anchor("A", (0, 0, 1)), Anchor("B", (6, 0, 1))),
                  tags=(TagPlacement(TagConfig(), (2.0, 0, 1)),))
    m = _pair_tdoa(scene, "A", "B", scene.tags[0])
    assert abs(m.tdoa) <= 0.1e-9 and m.valid


def test_thirty_metre_geometry():
    a, b = (0, 0, 0), (30, 0, 0)
    assert geometric_tdoa(a, (1, 0, 0), b) == pytest.approx(0.0, abs=1e-18)
    off = (0, 1, 0)
    exact = (1 + math.sqrt(30 ** 2 + 1) - 30) / C0
    assert geometric_tdoa(a, off, b) == pytest.approx(exact, rel=1e-12)
    scene = Scene((Anchor("A", a), Anchor("B", b)), tags=(TagPlacement(TagConfig(), off),))
    m = _pair_tdoa(scene, "A", "B", scene.tags[0])
    step = 1 / (10 * F.size * PLAN.bin_spacing)
    assert abs(m.tdoa - exact) <= step


def test_noiseless_grid_matches_geometry():
    step = 1 / (10 * F.size * PLAN.bin_spacing)
    for x, y, z in itertools.product(np.linspace(0.5, 4.5, 5), np.linspace(-2, 2, 5), (0.3, 1.8)):
        scene, tag = _scene((x, y, z))
        a, b = scene.anchor("A"), scene.anchor("B")
        m = _pair_tdoa(scene, "A", "B", tag)
        assert abs(m.tdoa - geometric_tdoa(a.tx_position, (x, y, z), b.rx_position)) <= step


def test_negative_tdoa_invalid():
    d = _cir([(1.0, 30e-9)])
    t = _cir([(1.0, 25e-9)])
    m = estimate_tdoa(d, t)
    assert m.tdoa == pytest.approx(-5e-9, abs=0.1e-9) and not m.valid
    other = stitch_to_cir(np.ones((3, 4)), plan=plan_sweep(n_bands=3, sub_bins=4))
    with pytest.raises(ValueError):
        estimate_tdoa(d, other)


def test_error_monotone_in_integration_time():
    # noise amplitude falls as 1/sqrt(t); fixed seeds, median over 20
    tau_d, tau_t = 20e-9, 32e-9
    base = [np.random.default_rng(s) for s in range(20)]
    noises = [(r.standard_normal(F.shape) + 1j * r.standard_normal(F.shape)) / math.sqrt(2)
              for r in base]
    truth = tau_t - tau_d
    med = []
    for t in (0.25, 1, 4, 16, 64):
        errs = [abs(estimate_tdoa(_cir([(1.0, tau_d)]), _cir([(0.05, tau_t)], 0.05 * n / math.sqrt(t)))
                    .tdoa - truth) for n in noises]
        med.append(np.median(errs))
    assert all(b <= a + 1e-15 for a, b in zip(med, med[1:]))


def test_tdoa_csv_round_trip(tmp_path):
    ms = [TdoaMeasurement("A", "B", 3.2e-9, 40.1, 31.5), TdoaMeasurement("A", "C", 7e-10, 38.0, 29.0)]
    write_tdoa_csv(tmp_path / "t.csv", ms)
    assert open(tmp_path / "t.csv").readline().strip() == \
        "tx,rx,tdoa_s,tdoa_m,direct_snr_db,tag_snr_db"
    assert read_tdoa_csv(tmp_path / "t.csv") == ms
