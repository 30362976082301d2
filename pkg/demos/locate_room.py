"""Full room run: every fix, every anchor pair, then 3D positions.

Run: python demos/locate_room.py  (a few minutes on one core)
"""

from uwbscatter.config import load_preset
from uwbscatter.pipeline import run_end_to_end

cfg = load_preset("room3d")
report = run_end_to_end(cfg)
for fix in report["fixes"]:
    blk = fix["tags"][0]
    est = blk["position"]["estimate"] if blk["position"] else None
    err = blk.get("error_3d_m")
    print(f"fix {fix['fix']}: truth {[round(v, 2) for v in blk['truth']]}  "
          f"estimate {[round(v, 2) for v in est] if est else '-'}  "
          f"error {err:.3f} m" if err is not None else f"fix {fix['fix']}: {blk['status']}")
s = report["summary"]
print(f"median 3D error {s['median_error_3d_m']:.3f} m, max {s['max_error_3d_m']:.3f} m")
print(f"recovery took {report['timings']['recovery_s']:.0f} s for "
      f"{report['timings']['simulated_sweep_s']:.0f} s of simulated sweep per pair")
