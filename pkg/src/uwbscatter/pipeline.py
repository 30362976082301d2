"""End-to-end run: capture, clock fix, search, integrate, range, locate."""

from __future__ import annotations

import dataclasses
import json
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, sub_seed
from .locate import solve_position, write_positions_csv
from .ranging import NoCrossingError, TdoaMeasurement, estimate_tdoa, geometric_tdoa, write_tdoa_csv
from .recovery import (DETECTION_SNR_DB, CirEstimate, TagSignalHypothesis, direct_cfr, highpass,
                       integrate_recording, search_tag, stitch_to_cir, write_cir_csv)
from .sweep import (CLOCK_STATES, Calibration, SweepRecording, capture_calibration, capture_sweep,
                    resolve_clock_ambiguity)

log = logging.getLogger(__name__)

# sub-seed stream identifiers
_CAPTURE, _CLOCK, _TAG = 1, 2, 3


@dataclass
class TagRecovery:
    hypothesis: TagSignalHypothesis
    cir: CirEstimate

    @property
    def found(self) -> bool:
        return bool(self.cir.snr >= DETECTION_SNR_DB)


@dataclass
class PairResult:
    tx: str
    rx: str
    direct: CirEstimate
    tags: list
    clock: dict = field(default_factory=dict)


def recover_recording(rec: SweepRecording, cal: Calibration, params, codes=None) -> PairResult:
    """Recovery chain for one anchor pair.

    ``codes`` lists the chip sequence of each tag to look for (``None``
    searches for a single uncoded tag).  Used both in-process and by the
    ``recover`` subcommand so file round trips give identical results.
    """
    rec = resolve_clock_ambiguity(rec, cal)
    direct = stitch_to_cir(direct_cfr(rec), cal, params.zero_pad_factor)
    filt = highpass(rec, params.cutoff_hz)
    codes = [(1,)] if not codes else [tuple(c) for c in codes]
    tags = []
    for i, code in enumerate(codes):
        hyp = search_tag(filt, params.nominal_f, params.span_ppm, params.step_ppm, params.n_phases,
                         codes=[code], coarse_step_ppm=params.coarse_step_ppm, refine=params.refine)
        cir = stitch_to_cir(integrate_recording(filt, hyp), cal, params.zero_pad_factor)
        tags.append(TagRecovery(hyp, cir))
    clock = {k: rec.metadata[k] for k in ("clock_offset", "clock_score", "clock_ambiguous")}
    return PairResult(rec.metadata.get("tx", ""), rec.metadata.get("rx", ""), direct, tags, clock)


def fix_scene(cfg: ScenarioConfig, fix: int):
    """Scene for location fix ``fix`` with its tag clocks drawn from the seed."""
    scene = cfg.scene
    tags = list(scene.tags)
    if cfg.tag_positions:
        tags = [dataclasses.replace(tags[0], position=cfg.tag_positions[fix])]
    if cfg.randomize_clocks:
        out = []
        for j, t in enumerate(tags):
            rng = np.random.default_rng(sub_seed(cfg.seed, _TAG, fix, j))
            c = t.config
            span = 0.8 * c.max_offset_ppm
            slots = len(c.code) * c.cycles_per_chip
            c = dataclasses.replace(c, freq_offset_ppm=float(rng.uniform(-span, span)),
                                    start_cycles=float(rng.uniform(0, slots)),
                                    seed=int(rng.integers(2 ** 31)))
            out.append(dataclasses.replace(t, config=c))
        tags = out
    return dataclasses.replace(scene, tags=tuple(tags))


def n_fixes(cfg: ScenarioConfig) -> int:
    return len(cfg.tag_positions) if cfg.tag_positions else 1


def capture_pair(cfg: ScenarioConfig, fix: int, pair_index: int):
    tx, rx = cfg.pairs[pair_index]
    scene = fix_scene(cfg, fix)
    offset = 0
    if cfg.inject_clock_offsets:
        offset = int(np.random.default_rng(sub_seed(cfg.seed, _CLOCK, fix, pair_index))
                     .integers(CLOCK_STATES))
    rec = capture_sweep(scene, tx, rx, cfg.sweep, sub_seed(cfg.seed, _CAPTURE, fix, pair_index),
                        clock_offset=offset)
    rec.metadata["injected_clock_offset"] = offset
    rec.metadata["fix"] = fix
    return rec, capture_calibration(scene, tx, rx, cfg.sweep)


def _search_codes(cfg: ScenarioConfig):
    if not cfg.scene.tags:
        return None
    return [t.config.code for t in cfg.scene.tags]


def _process(cfg: ScenarioConfig, fix: int, k: int) -> PairResult:
    rec, cal = capture_pair(cfg, fix, k)
    return recover_recording(rec, cal, cfg.recovery, _search_codes(cfg))


def _tdoa_row(m: TdoaMeasurement, truth: float | None, hyp, found, clock) -> dict:
    row = {"tx": m.tx_anchor, "rx": m.rx_anchor, "tdoa_s": m.tdoa, "tdoa_m": m.tdoa_m,
           "direct_snr_db": m.direct_snr, "tag_snr_db": m.tag_snr, "found": found,
           "valid": m.valid, "f_cand_hz": hyp.f_cand, "phi0": hyp.phi0,
           "code_offset": hyp.code_offset, "clock_offset": clock["clock_offset"],
           "clock_ambiguous": clock["clock_ambiguous"]}
    if truth is not None:
        row["truth_m"] = truth
        row["error_m"] = m.tdoa_m - truth
    return row


def run_end_to_end(cfg: ScenarioConfig, out_dir=None, threads: int = 1) -> dict:
    """Run every fix of ``cfg`` and return a JSON-ready report.

    The report is a pure function of the config (timings are returned
    separately under ``report["timings"]`` and never written to disk).
    With ``out_dir`` the CIRs, TDoAs, positions and report are written.
    """
    t_start = time.perf_counter()
    fixes = n_fixes(cfg)
    jobs = [(f, k) for f in range(fixes) for k in range(len(cfg.pairs))]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda j: _process(cfg, *j), jobs))
    else:
        results = [_process(cfg, *j) for j in jobs]
    t_recover = time.perf_counter() - t_start
    by_job = dict(zip(jobs, results))
    amap = {a.id: a for a in cfg.scene.anchors}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    fix_blocks, all_tdoas, estimates, errors = [], [], [], []
    statuses = set()
    for f in range(fixes):
        scene = fix_scene(cfg, f)
        n_tags = max(1, len(scene.tags))
        tag_blocks = []
        for j in range(n_tags):
            truth = list(scene.tags[j].position) if scene.tags else None
            rows, measurements = [], []
            for k, (tx, rx) in enumerate(cfg.pairs):
                pr = by_job[(f, k)]
                rec_j = pr.tags[j]
                if out is not None:
                    write_cir_csv(out / f"cir_direct_f{f}_{tx}-{rx}.csv", pr.direct)
                    write_cir_csv(out / f"cir_tag{j}_f{f}_{tx}-{rx}.csv", rec_j.cir)
                try:
                    m = estimate_tdoa(pr.direct, rec_j.cir, cfg.recovery.threshold_fraction, tx, rx)
                except NoCrossingError as e:
                    log.warning("fix %d tag %d %s->%s: %s", f, j, tx, rx, e)
                    continue
                t_geo = None
                if truth is not None:
                    t_geo = geometric_tdoa(amap[tx].tx_position, truth, amap[rx].rx_position) \
                        * 299_792_458.0
                rows.append(_tdoa_row(m, t_geo, rec_j.hypothesis, rec_j.found, pr.clock))
                if rec_j.found and m.valid:
                    measurements.append(m)
                    all_tdoas.append(m)
            block = {"tag": j, "truth": truth, "tdoas": rows, "position": None}
            if len(cfg.pairs) < 3:
                status = "ranged" if measurements else "not_found"
            elif len(measurements) < 3:
                status = "not_found"
            else:
                est = solve_position(measurements, amap, bounds=cfg.room)
                estimates.append(est)
                block["position"] = {"estimate": [float(v) for v in est.position],
                                     "residual_m": est.residual_rms,
                                     "converged": est.converged, "iterations": est.iterations}
                status = "ok" if est.converged else "no_convergence"
                if truth is not None:
                    err = float(np.linalg.norm(est.position - np.asarray(truth)))
                    block["error_3d_m"] = err
                    block["error_2d_m"] = float(np.linalg.norm(est.position[:2]
                                                               - np.asarray(truth[:2])))
                    errors.append(err)
            if not scene.tags:
                status = "not_found"
            block["status"] = status
            statuses.add(status)
            tag_blocks.append(block)
        fix_blocks.append({"fix": f, "tags": tag_blocks})

    if "no_convergence" in statuses:
        overall = "no_convergence"
    elif "not_found" in statuses:
        overall = "not_found"
    elif "ranged" in statuses:
        overall = "ranged"
    else:
        overall = "ok"
    summary = {"n_fixes": fixes, "n_located": len(estimates)}
    if errors:
        summary.update(mean_error_3d_m=float(np.mean(errors)),
                       median_error_3d_m=float(statistics.median(errors)),
                       min_error_3d_m=float(min(errors)), max_error_3d_m=float(max(errors)))
    report = {"name": cfg.name, "seed": cfg.seed, "status": overall,
              "message": "tag not found" if overall == "not_found" else "",
              "summary": summary, "fixes": fix_blocks}
    if out is not None:
        write_tdoa_csv(out / "tdoa.csv", all_tdoas)
        write_positions_csv(out / "positions.csv", estimates)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True,
                                                    default=_json_default) + "\n")
    report["timings"] = {"recovery_s": t_recover,
                         "total_s": time.perf_counter() - t_start,
                         "simulated_sweep_s": cfg.sweep.sweep_time}
    return report


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")
