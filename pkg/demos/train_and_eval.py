"""Miniature end-to-end run: generate, train, evaluate under regimes.

A desk-scale version of the full experiment: a small synthetic dataset with
the size/distance ambiguity, a short training run of the default network,
then evaluation under increasing amounts of side information (nothing ->
true camera -> true camera + true shape).  The point is the direction of
the numbers, not their magnitude; the full protocol lives in the CLI
(``bayesbody generate/train/eval/stats``) and the acceptance tests.

Run with ``python3 demos/train_and_eval.py`` (about two minutes).
"""

from __future__ import annotations

import time

import numpy as np

from bayesbody.body import default_body
from bayesbody.cli import _eval_regime
from bayesbody.graph import BayesNet
from bayesbody.synthdata import GeneratorConfig, generate_dataset
from bayesbody.training import TrainConfig, train

t0 = time.time()
body = default_body()
gen = GeneratorConfig(feature_dim=32)

print("== generating ==")
train_ds = generate_dataset(n_scenes=96, n_views=1, seed=1, config=gen)
eval_ds = generate_dataset(n_scenes=24, n_views=4, seed=2, config=gen)
n_people = sum(len(s.views[0].gt) for s in train_ds)
print(f"{len(train_ds)} training scenes ({n_people} people), "
      f"{len(eval_ds)} held-out scenes with 4 views each")

print()
print("== training the condimen preset ==")
net = BayesNet(preset="condimen", feature_dim=32, hidden_dim=48,
               n_bones=body.n_joints, beta_dim=body.beta_dim, gamma_dim=10,
               seed=0, grid_level=2)
config = TrainConfig(learning_rate=2e-3, batch_size=8, steps=600, seed=0,
                     gt_intrinsics_fraction=1.0)
curve = train(net, train_ds, config, body=body)
print(f"probabilistic loss {curve[0].l_prob:8.2f} -> {curve[-1].l_prob:8.2f}")
print(f"reprojection loss  {curve[0].l_reproj:8.2f} -> "
      f"{curve[-1].l_reproj:8.2f}")

print()
print("== evaluation: what does knowing more buy? ==")
print(f"{'regime':>12} {'PE mm':>9} {'PVE mm':>9} {'PA-PVE mm':>10} "
      f"{'matched':>8}")
for regime in ("none", "intr", "intr_shape"):
    rep = _eval_regime(net, eval_ds, regime, 1, 0.5, "pa_pje", body)
    print(f"{regime:>12} {rep.pe:9.1f} {rep.pve:9.1f} {rep.pa_pve:10.1f} "
          f"{rep.n_matched:>4}/{rep.n_gt}")

print()
print("== four views vs one (true camera given) ==")
r1 = _eval_regime(net, eval_ds, "intr", 1, 0.5, "pa_pje", body)
r4 = _eval_regime(net, eval_ds, "intr", 4, 0.5, "pa_pje", body)
print(f"single view PVE {r1.pve:8.1f} mm")
print(f"fused 4-view PVE {r4.pve:7.1f} mm")
print(f"done in {time.time() - t0:.0f}s")
