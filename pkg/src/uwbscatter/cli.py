"""Command-line front door.

Exit codes: 0 ok, 2 configuration error, 3 tag not found or ambiguous
signal, 4 solver did not converge.  Errors are printed to stderr as one
JSON object.  ``SLOC_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import coverage as cov
from .config import ConfigError, RecoveryParams, from_dict, parse_code, preset_dict
from .locate import InsufficientMeasurementsError, solve_position, write_positions_csv
from .pipeline import capture_pair, n_fixes, recover_recording, run_end_to_end
from .ranging import NoCrossingError, estimate_tdoa, read_tdoa_csv, write_tdoa_csv
from .recovery import highpass, read_cir_csv, search_grid, write_cir_csv
from .rfmodel import (LinkBudget, backscatter_rx_power, min_integration_time,
                      required_noise_floor, thermal_noise_power)
from .sweep import Calibration, SweepRecording, resolve_clock_ambiguity

EXIT_OK, EXIT_CONFIG, EXIT_NOT_FOUND, EXIT_NO_CONVERGENCE = 0, 2, 3, 4

log = logging.getLogger("uwbscatter")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_doc(args) -> dict:
    if args.config and args.preset:
        raise CliError(EXIT_CONFIG, "config", "use either --config or --preset")
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise CliError(EXIT_CONFIG, "config", f"config file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise CliError(EXIT_CONFIG, "config", f"invalid JSON in {args.config}: {e}")
    else:
        try:
            doc = preset_dict(args.preset or "room3d")
        except KeyError as e:
            raise CliError(EXIT_CONFIG, "config", str(e.args[0]))
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, "config", "config must be a JSON object")
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "dwell", None) is not None:
        doc.setdefault("sweep", {})["dwell"] = args.dwell
    if getattr(args, "threshold", None) is not None:
        doc.setdefault("recovery", {})["threshold_fraction"] = args.threshold
    if getattr(args, "cutoff_hz", None) is not None:
        doc.setdefault("recovery", {})["cutoff_hz"] = args.cutoff_hz
    return doc


def _config(args):
    return from_dict(_load_doc(args))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_budget(args) -> int:
    doc = _load_doc(args) if (args.config or args.preset) else {}
    fields = dict(doc.get("budget", {}))
    if args.r1 is not None:
        fields["r1"] = args.r1
    if args.r2 is not None:
        fields["r2"] = args.r2
    try:
        b = LinkBudget(**fields)
        b.validate()
    except (TypeError, ValueError) as e:
        raise CliError(EXIT_CONFIG, "config", str(e))
    floor = doc.get("noise", {}).get("temperature_noise_floor", -174.0)
    res = {"rx_power_dbm_mhz": backscatter_rx_power(b),
           "required_noise_floor_dbm": required_noise_floor(b),
           "min_integration_time_s": min_integration_time(b.r1, b.r2, b, floor),
           "thermal_noise_dbm": {str(t): thermal_noise_power(t, floor)
                                 for t in (0.001, 0.1, 1.0, 60.0, 3600.0)}}
    text = json.dumps(res, indent=2, sort_keys=True)
    print(text)
    if args.out:
        _dump(_out(args) / "budget.json", res)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(args)
    if not 0 <= args.fix < n_fixes(cfg):
        raise CliError(EXIT_CONFIG, "config", f"--fix must be in [0, {n_fixes(cfg)})")
    manifest = []
    for k, (tx, rx) in enumerate(cfg.pairs):
        rec, cal = capture_pair(cfg, args.fix, k)
        rec.write(out / f"rec_{tx}-{rx}.slorec")
        cal.write(out / f"cal_{tx}-{rx}.slorec")
        manifest.append({"tx": tx, "rx": rx, "recording": f"rec_{tx}-{rx}.slorec",
                         "calibration": f"cal_{tx}-{rx}.slorec"})
    _dump(out / "manifest.json", {"fix": args.fix, "seed": cfg.seed, "pairs": manifest})
    return EXIT_OK


def _recovery_params(args) -> RecoveryParams:
    if args.config or args.preset:
        return _config(args).recovery
    kw = {}
    if args.cutoff_hz is not None:
        kw["cutoff_hz"] = args.cutoff_hz
    if args.threshold is not None:
        kw["threshold_fraction"] = args.threshold
    p = RecoveryParams(**kw)
    if p.violations():
        raise ConfigError(p.violations())
    return p


def _read_inputs(args):
    try:
        rec = SweepRecording.read(args.recording)
        cal = Calibration.read(args.calibration) if args.calibration else \
            Calibration.identity(rec.plan)
    except FileNotFoundError as e:
        raise CliError(EXIT_CONFIG, "input", f"file not found: {e.filename}")
    except ValueError as e:
        raise CliError(EXIT_CONFIG, "input", str(e))
    return rec, cal


def cmd_recover(args) -> int:
    params = _recovery_params(args)
    rec, cal = _read_inputs(args)
    codes = [parse_code(c) for c in args.codes] if args.codes else None
    res = recover_recording(rec, cal, params, codes)
    out = _out(args)
    write_cir_csv(out / "cir_direct.csv", res.direct)
    summary = {"clock": res.clock, "direct_snr_db": res.direct.snr, "tags": []}
    for j, t in enumerate(res.tags):
        write_cir_csv(out / f"cir_tag{j}.csv", t.cir)
        h = t.hypothesis
        summary["tags"].append({"f_cand_hz": h.f_cand, "phi0": h.phi0,
                                "code_offset": h.code_offset, "score": h.correlation_score,
                                "snr_db": t.cir.snr, "found": t.found})
    _dump(out / "recovery.json", summary)
    if res.clock["clock_ambiguous"] or not all(t.found for t in res.tags):
        raise CliError(EXIT_NOT_FOUND, "not_found", "tag not found or clock ambiguous",
                       summary=summary)
    return EXIT_OK


def cmd_range(args) -> int:
    try:
        direct = read_cir_csv(args.direct)
        tag = read_cir_csv(args.tag)
    except (FileNotFoundError, OSError) as e:
        raise CliError(EXIT_CONFIG, "input", str(e))
    threshold = 0.30 if args.threshold is None else args.threshold
    try:
        m = estimate_tdoa(direct, tag, threshold, args.tx, args.rx)
    except NoCrossingError as e:
        raise CliError(EXIT_NOT_FOUND, "not_found", str(e))
    write_tdoa_csv(_out(args) / "tdoa.csv", [m])
    if not m.valid:
        raise CliError(EXIT_NOT_FOUND, "invalid", "negative TDoA", tdoa_s=m.tdoa)
    return EXIT_OK


def cmd_locate(args) -> int:
    cfg = _config(args)
    try:
        ms = read_tdoa_csv(args.tdoa)
    except FileNotFoundError as e:
        raise CliError(EXIT_CONFIG, "input", f"file not found: {e.filename}")
    try:
        est = solve_position(ms, cfg.scene.anchors, bounds=cfg.room)
    except InsufficientMeasurementsError as e:
        raise CliError(EXIT_CONFIG, "input", str(e))
    except KeyError as e:
        raise CliError(EXIT_CONFIG, "config", str(e.args[0]))
    write_positions_csv(_out(args) / "positions.csv", [est])
    if not est.converged:
        raise CliError(EXIT_NO_CONVERGENCE, "no_convergence", "solver did not converge")
    return EXIT_OK


def cmd_coverage(args) -> int:
    try:
        anchors = json.loads(args.anchors)
        room = ((0.0, 0.0), (args.width, args.length))
        layout = cov.AnchorLayout(args.arrangement, anchors, room, args.resolution,
                                  args.height, args.flash_radius)
    except (ValueError, TypeError) as e:
        raise CliError(EXIT_CONFIG, "config", str(e))
    m = cov.integration_time_map(layout)
    out = _out(args)
    m.to_csv(out / "coverage.csv")
    m.to_grid(out / "coverage_grid.csv")
    cdf = cov.coverage_cdf(m)
    cov.write_cdf_csv(out / "coverage_cdf.csv", cdf)
    return EXIT_OK


def cmd_e2e(args) -> int:
    cfg = _config(args)
    report = run_end_to_end(cfg, _out(args), threads=args.threads)
    log.info("timings: %s", json.dumps(report["timings"]))
    print(json.dumps({"status": report["status"], "summary": report["summary"]}, sort_keys=True))
    if report["status"] == "not_found":
        raise CliError(EXIT_NOT_FOUND, "not_found", report["message"] or "tag not found")
    if report["status"] == "no_convergence":
        raise CliError(EXIT_NO_CONVERGENCE, "no_convergence", "solver did not converge")
    return EXIT_OK


def cmd_multitag_search(args) -> int:
    params = _recovery_params(args)
    rec, cal = _read_inputs(args)
    rec = resolve_clock_ambiguity(rec, cal)
    filt = highpass(rec, params.cutoff_hz)
    codes = [parse_code(c) for c in (args.codes or ["mseq6a", "mseq6b", "gold:5"])]
    step = args.step_ppm or params.step_ppm
    grid = search_grid(filt, params.nominal_f, params.span_ppm, step, params.n_phases, codes)
    out = _out(args)
    peaks = []
    for i in range(len(codes)):
        hm = grid.heatmap(i)
        rows = [(p, k, hm[a, k]) for a, p in enumerate(grid.ppm) for k in range(hm.shape[1])]
        np.savetxt(out / f"heatmap_code{i}.csv", np.array(rows), delimiter=",", fmt="%.17g",
                   header="ppm,code_offset_half_cycles,score", comments="")
        h = grid.best(i)
        peaks.append({"code": args.codes[i] if args.codes else ["mseq6a", "mseq6b", "gold:5"][i],
                      "f_cand_hz": h.f_cand, "code_offset": h.code_offset,
                      "score": h.correlation_score})
    _dump(out / "peaks.json", peaks)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario JSON")
    common.add_argument("--preset", help="named preset (room3d, hallway, multitag, empty)")
    common.add_argument("--seed", type=int, help="root seed (u64)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--dwell", type=float, help="per-band dwell, s")
    common.add_argument("--threshold", type=float, help="leading-edge threshold fraction")
    common.add_argument("--cutoff-hz", type=float, help="high-pass cutoff, Hz")

    p = argparse.ArgumentParser(prog="uwbscatter", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("budget", parents=[common], help="link budget and integration time")
    s.add_argument("--r1", type=float)
    s.add_argument("--r2", type=float)
    s.set_defaults(func=cmd_budget, out=None)

    s = sub.add_parser("simulate", parents=[common], help="capture recordings for one fix")
    s.add_argument("--fix", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    for name, fn, text in (("recover", cmd_recover, "clock fix, tag search and CIRs"),
                           ("multitag-search", cmd_multitag_search, "search score heatmaps per code")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--recording", required=True)
        s.add_argument("--calibration")
        s.add_argument("--codes", nargs="*", help="code names, e.g. mseq6a mseq6b gold:5")
        if name == "multitag-search":
            s.add_argument("--step-ppm", type=float)
        s.set_defaults(func=fn)

    s = sub.add_parser("range", parents=[common], help="TDoA from two CIR CSV files")
    s.add_argument("--direct", required=True)
    s.add_argument("--tag", required=True)
    s.add_argument("--tx", default="")
    s.add_argument("--rx", default="")
    s.set_defaults(func=cmd_range)

    s = sub.add_parser("locate", parents=[common], help="position from a TDoA CSV")
    s.add_argument("--tdoa", required=True)
    s.set_defaults(func=cmd_locate)

    s = sub.add_parser("coverage", parents=[common], help="integration-time map and CDF")
    s.add_argument("--arrangement", choices=("monostatic", "bistatic"), default="bistatic")
    s.add_argument("--anchors", default="[[1, 1, 1], [79, 79, 1]]", help="JSON list of positions")
    s.add_argument("--width", type=float, default=80.0)
    s.add_argument("--length", type=float, default=80.0)
    s.add_argument("--resolution", type=float, default=1.0)
    s.add_argument("--height", type=float)
    s.add_argument("--flash-radius", type=float, default=1.0)
    s.set_defaults(func=cmd_coverage)

    s = sub.add_parser("e2e", parents=[common], help="full simulate-recover-locate run")
    s.set_defaults(func=cmd_e2e)
    return p


def main(argv=None) -> int:
    level = os.environ.get("SLOC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        err = {"error": "config", "violations": e.violations}
        code = EXIT_CONFIG
    except CliError as e:
        err = {"error": e.kind, "message": str(e), **e.extra}
        code = e.code
    print(json.dumps(err, sort_keys=True, default=str), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
