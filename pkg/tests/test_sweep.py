import json
import math
import struct
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uwbscatter.channel import Anchor, Reflector, Scene, noise_std
from uwbscatter.recovery import direct_cfr, highpass, search_tag, stitch_to_cir
from uwbscatter.sweep import (MAGIC, Calibration, SweepPlan, SweepRecording, apply_calibration,
                              capture_calibration, capture_sweep, clock_phase, plan_sweep,
                              read_recording, resolve_clock_ambiguity)

C0 = 299_792_458.0


def test_default_plan():
    p = plan_sweep()
    assert (p.n_bands, p.n_bins, p.total_bandwidth) == (49, 980, 1.225e9)


@pytest.mark.parametrize("dwell,total", [(2.0, 98.0), (0.25, 12.25)])
def test_sweep_time(dwell, total):
    assert plan_sweep(dwell=dwell).sweep_time == pytest.approx(total)


def test_sub_bin_centres():
    p = plan_sweep(f0=1e9, band_width=10e6, n_bands=3, sub_bins=4)
    f = p.frequencies()
    assert f[2, 1] == pytest.approx(1e9 + 2 * 10e6 + 1.5 * 2.5e6)


@pytest.mark.parametrize("kw", [dict(dwell=0.05), dict(n_bands=0), dict(band_width=-1),
                                dict(snapshot_rate=0)])
def test_inconsistent_plan(kw):
    with pytest.raises(ValueError):
        plan_sweep(**kw)


def test_snapshot_count_and_times(pair_scene):
    p = plan_sweep(n_bands=3, sub_bins=4, dwell=0.3)
    rec = capture_sweep(pair_scene, "A", "B", p, seed=5)
    # exact rational oracle: (0.3 - 0.08) * 1250 is 275 in real arithmetic
    assert rec.snapshot_count == math.floor((Fraction('0.3') - Fraction('0.08')) * 1250)
    flat = rec.times.ravel()
    assert np.all(np.diff(flat) > 0)
    assert rec.times[1, 0] == pytest.approx(0.3 + 0.08)
    again = capture_sweep(pair_scene, "A", "B", p, seed=5)
    assert np.array_equal(rec.data, again.data) and np.array_equal(rec.times, again.times)


def test_empty_scene_mean_is_zero(rng):
    scene = Scene((Anchor("A", (0, 0, 0)),))
    p = plan_sweep(n_bands=2, sub_bins=10, dwell=1.0)
    rec = capture_sweep(scene, "A", "A", p, seed=1)
    # a lone co-located anchor still sees its own direct path; remove it exactly
    from uwbscatter.channel import static_cfr
    a = scene.anchor("A")
    resid = rec.data - static_cfr(scene, a, a, p.frequencies())[:, None, :]
    sigma = noise_std(scene, 1 / 1250) / np.sqrt(rec.snapshot_count)
    assert np.all(np.abs(resid.mean(axis=1)) < 3 * sigma * np.sqrt(2))


def test_static_scene_variance_matches_noise():
    scene = Scene((Anchor("A", (0, 0, 0)), Anchor("B", (3, 0, 0))))
    p = plan_sweep(n_bands=2, sub_bins=10, dwell=2.0)
    rec = capture_sweep(scene, "A", "B", p, seed=2)
    var = rec.data.var(axis=1)
    assert np.allclose(var, noise_std(scene, 1 / 1250) ** 2, rtol=0.10)


def test_tag_tone_detectable(pair_scene):
    p = plan_sweep(n_bands=8, sub_bins=8, dwell=2.0)
    rec = highpass(capture_sweep(pair_scene, "A", "B", p, seed=3), 50)
    hyp = search_tag(rec, 256.0, 500, 5)
    assert abs(hyp.f_cand - pair_scene.tags[0].config.true_frequency) <= 256 * 5e-6


def test_clock_offset_zero_is_identity(pair_scene, small_plan):
    rec = capture_sweep(pair_scene, "A", "B", small_plan, seed=1)
    cal = capture_calibration(pair_scene, "A", "B", small_plan)
    out = resolve_clock_ambiguity(rec, cal)
    assert np.array_equal(out.data, rec.data)
    assert out.metadata["clock_offset"] == 0 and not out.metadata["clock_ambiguous"]


def _exhaustive_clock_oracle(rec, cal):
    """Pick the candidate whose correction gives the most coherent direct CIR peak."""
    best, best_peak = None, -1.0
    for k in range(4):
        fix = np.array([np.conj(clock_phase(k, b)) for b in range(rec.plan.n_bands)])
        cir = stitch_to_cir(direct_cfr(rec) * fix[:, None], cal)
        peak = np.max(np.abs(cir.samples))
        if peak > best_peak:
            best, best_peak = k, peak
    return best


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_clock_offset_recovered(k):
    scene = Scene((Anchor("A", (0, 0, 1), cable_delay=7e-9), Anchor("B", (5, 0, 1))),
                  (Reflector((2.5, 3.0, 1.0), -6),))
    p = plan_sweep(n_bands=12, sub_bins=20, dwell=0.2)
    rec = capture_sweep(scene, "A", "B", p, seed=9, clock_offset=k)
    cal = capture_calibration(scene, "A", "B", p)
    out = resolve_clock_ambiguity(rec, cal)
    assert out.metadata["clock_offset"] == k == _exhaustive_clock_oracle(rec, cal)
    clean = capture_sweep(scene, "A", "B", p, seed=9)
    assert np.allclose(out.data, clean.data, atol=1e-12 * np.abs(clean.data).max())


def test_all_noise_flagged_ambiguous():
    p = plan_sweep(n_bands=6, sub_bins=20, dwell=0.2)
    rng = np.random.default_rng(0)
    data = rng.standard_normal((6, p.snapshots_per_band, 20)) + 0j
    times = np.stack([p.snapshot_times(b) for b in range(6)])
    rec = SweepRecording(p, times, data)
    out = resolve_clock_ambiguity(rec, Calibration.identity(p))
    assert out.metadata["clock_ambiguous"]


@settings(max_examples=15)
@given(st.integers(0, 3), st.integers(0, 10_000))
def test_inject_then_resolve_is_identity(k, seed):
    scene = Scene((Anchor("A", (0, 0, 1)), Anchor("B", (5, 1, 1))), (Reflector((2, 3, 1)),))
    p = plan_sweep(n_bands=8, sub_bins=10, dwell=0.1)
    cal = capture_calibration(scene, "A", "B", p)
    ref = capture_sweep(scene, "A", "B", p, seed=seed)
    assert stitch_to_cir(direct_cfr(ref), cal).snr >= 26
    out = resolve_clock_ambiguity(capture_sweep(scene, "A", "B", p, seed=seed, clock_offset=k), cal)
    assert np.allclose(out.data, ref.data, atol=1e-12 * np.abs(ref.data).max())


def test_calibration_identity():
    p = plan_sweep(n_bands=2, sub_bins=3)
    x = np.arange(6).reshape(2, 3) + 1j
    assert np.array_equal(apply_calibration(x, Calibration.identity(p)), x)


def test_calibration_round_trip_removes_frontend():
    scene = Scene((Anchor("A", (0, 0, 1), cable_delay=11e-9), Anchor("B", (4, 2, 1),
                                                                        cable_delay=3e-9)),
                  (Reflector((1, 3, 1)),), frontend_ripple_db=2.0, frontend_seed=4)
    p = plan_sweep()
    cal = capture_calibration(scene, "A", "B", p)
    rec = capture_sweep(scene, "A", "B", p, seed=0, noise=False)
    got = apply_calibration(rec.data[:, 0, :], cal)
    from uwbscatter.channel import static_cfr
    want = static_cfr(scene, scene.anchor("A"), scene.anchor("B"), p.frequencies())
    assert np.max(np.abs(got - want) / np.abs(want)) < 1e-9


def test_calibration_zero_bin():
    p = plan_sweep(n_bands=2, sub_bins=3)
    r = np.ones((2, 3), complex)
    r[1, 2] = 0
    with pytest.raises(ZeroDivisionError):
        apply_calibration(np.ones((2, 3)), Calibration(p, r))


def test_file_format_bit_exact(tmp_path, pair_scene):
    p = plan_sweep(n_bands=2, sub_bins=3, dwell=0.1)
    rec = capture_sweep(pair_scene, "A", "B", p, seed=4)
    path = tmp_path / "r.slorec"
    rec.write(path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC == b"SLOREC1\0"
    n_bands, n_sub, n_snap = struct.unpack_from("<3I", raw, 8)
    assert (n_bands, n_sub, n_snap) == (2, 3, rec.snapshot_count)
    f0, bw, rate, dwell, trim = struct.unpack_from("<5d", raw, 20)
    assert (f0, bw, rate, dwell, trim) == (p.f0, p.band_width, 1250.0, 0.1, 0.08)
    (mlen,) = struct.unpack_from("<I", raw, 60)
    meta = json.loads(raw[64:64 + mlen])
    assert meta["tx"] == "A" and meta["seed"] == 4
    body = np.frombuffer(raw, "<f8", offset=64 + mlen)
    assert body.size == 2 * n_snap * (1 + 2 * 3)
    assert body[0] == rec.times[0, 0]
    assert body[1] == rec.data[0, 0, 0].real and body[2] == rec.data[0, 0, 0].imag
    back = read_recording(path)
    assert np.array_equal(back.data, rec.data) and back.plan == rec.plan


def test_calibration_container(tmp_path, pair_scene, small_plan):
    cal = capture_calibration(pair_scene, "A", "B", small_plan)
    cal.write(tmp_path / "c")
    raw = (tmp_path / "c").read_bytes()
    assert struct.unpack_from("<3I", raw, 8)[2] == 1
    back = Calibration.read(tmp_path / "c")
    assert np.array_equal(back.response, cal.response)


def test_not_a_recording(tmp_path):
    (tmp_path / "x").write_bytes(b"nope" * 20)
    with pytest.raises(ValueError):
        read_recording(tmp_path / "x")


def test_resolution_and_unambiguous_range():
    p = plan_sweep()
    assert p.bin_spacing == pytest.approx(25e6 / 20)
    assert p.unambiguous_delay == pytest.approx(p.sub_bins_per_band * p.n_bands / p.total_bandwidth)
    # a path delayed by one unambiguous range aliases onto the zero-delay one
    f = p.frequencies().ravel()
    assert np.allclose(np.exp(-2j * np.pi * f * (30e-9 + p.unambiguous_delay)),
                       np.exp(-2j * np.pi * f * 30e-9) * np.exp(-2j * np.pi * f[0] * p.unambiguous_delay))
