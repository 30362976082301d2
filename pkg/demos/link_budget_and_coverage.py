"""How long must an anchor pair listen, and where does a room go dark?

Run: python demos/link_budget_and_coverage.py
"""

import numpy as np

from uwbscatter.coverage import AnchorLayout, cdf_quantile, coverage_cdf, integration_time_map, room_corners
from uwbscatter.rfmodel import (LinkBudget, backscatter_rx_power, min_integration_time,
                                required_noise_floor)

budget = LinkBudget()
print(f"received tag power at 5 m / 5 m: {backscatter_rx_power(budget):.2f} dBm/MHz")
print(f"noise floor needed for the target SNR: {required_noise_floor(budget):.2f} dBm")

# integration time grows with (r1 r2)^2
for r in (1, 2, 5, 10, 15):
    print(f"  r1 = r2 = {r:>2} m  ->  {min_integration_time(r, r, budget):10.4f} s")

# 80 m x 80 m floor, anchors in the four corners
room = ((0.0, 0.0), (80.0, 80.0))
corners = room_corners(room, height=1.0, inset=1.0)
for arrangement in ("monostatic", "bistatic"):
    m = integration_time_map(AnchorLayout(arrangement, corners, room, resolution=2.0, height=1.0))
    cdf = coverage_cdf(m)
    finite = m.seconds[np.isfinite(m.seconds)]
    print(f"{arrangement:>10}: median {cdf_quantile(cdf, 0.5):8.1f} s, "
          f"90% {cdf_quantile(cdf, 0.9):8.1f} s, worst finite {finite.max():8.1f} s")
