"""
Gaussian-process paths between two latent clusters
===================================================

A GP over pseudotime in [0, 1] is pinned to the two class centroids.  The
posterior mean is the trajectory, and its variance shows how far from the
endpoints the path is unconstrained.
"""

import numpy as np

from latentbridge.svgplot import line_plot_svg
from latentbridge.trajectory import gp_fit, gp_predict

rng = np.random.default_rng(3)
start = rng.normal([0.2, 1.2], 0.1, (40, 2)).mean(axis=0)
end = rng.normal([1.6, 0.9], 0.1, (40, 2)).mean(axis=0)

gp = gp_fit([0.0, 1.0], np.stack([start, end]), sigma=0.5, jitter=1e-8)
t = np.linspace(0, 1, 21)
pred = gp_predict(gp, t)

print("endpoint error", np.abs(pred.mean[[0, -1]] - np.stack([start, end])).max())
print("largest posterior sd", np.sqrt(pred.covariance.diagonal().max()).round(3), "at t =",
      t[pred.covariance.diagonal().argmax()])

###############################################################################
# A short kernel lets the mean sag toward the zero prior mid-way.  Longer
# kernels stay near the straight line, overshooting it slightly.

for sigma in (0.25, 0.5, 1.0):
    mid = gp_predict(gp_fit([0.0, 1.0], np.stack([start, end]), sigma=sigma), [0.5]).mean[0]
    print(f"sigma {sigma}: midpoint {np.round(mid, 3)} (straight line {np.round((start + end) / 2, 3)})")

svg = line_plot_svg({f"dim {j}": (t, pred.mean[:, j]) for j in range(2)}, "GP trajectory",
                    ylabel="latent value")
print(len(svg), "bytes of SVG")
