"""Closed-form multi-view fusion of bone-orientation beliefs.

Each view holds a matrix Fisher belief over a bone's orientation in its own
camera frame.  Mapping all beliefs into a common frame and multiplying the
densities gives another matrix Fisher whose parameter is just the sum of the
rotated parameters, so the consensus rotation is a single special Procrustes
projection.  The script builds noisy per-view beliefs around a hidden truth,
fuses them, and shows the consensus landing closer to the truth than the
typical single view.

Run with ``python3 demos/multiview_fusion.py``.
"""

from __future__ import annotations

import numpy as np

from bayesbody.distributions import MatrixFisherParams
from bayesbody.inference import fuse_pose_multiview
from bayesbody.so3 import Rotation, build_grid, geodesic_distance

rng = np.random.default_rng(5)

print("== setup: one bone, five views, noisy per-view beliefs ==")
truth = Rotation.random(rng)
per_view = []
for i in range(5):
    view_to_common = Rotation.random(rng)           # known extrinsics
    # the view observes the bone in its own frame, with an orientation error
    err = Rotation.from_axis_angle(rng.normal(size=3), rng.normal(0.0, 0.25))
    observed = view_to_common.inverse() @ truth @ err
    belief = MatrixFisherParams(r_mode=observed,
                                spread_axes=Rotation.random(rng),
                                lambda_raw=rng.normal(0.0, 1.0, size=3))
    per_view.append((view_to_common.as_matrix(),
                     belief.assembled()[None, :, :]))
    solo = geodesic_distance(view_to_common @ observed, truth)
    print(f"view {i}: per-view mode is {solo:.3f} rad from the truth")

fused = fuse_pose_multiview(per_view)
fused_err = geodesic_distance(Rotation.from_matrix(fused[0]), truth)
print(f"fused consensus:       {fused_err:.3f} rad from the truth")

print()
print("== the closed form really is the argmax of the fused density ==")
summed = sum(t0 @ fs[0] for t0, fs in per_view)
grid = build_grid(3)
traces = grid.matrices_flat() @ summed.ravel()
best = Rotation(grid.quats[int(np.argmax(traces))])
print(f"level-3 grid argmax ({len(grid)} rotations) is "
      f"{geodesic_distance(best, Rotation.from_matrix(fused[0])):.4f} rad "
      f"from the closed form (one grid cell is {grid.nominal_cell_radius:.4f})")
print(f"objective: closed form {float(np.sum(summed * fused[0])):.4f} "
      f">= grid best {float(traces.max()):.4f}")
