"""Pretrain on the demo dataset and plot the loss curves.

Run demos/build_dataset.py first. Writes demos/out/pretrain_curves.png
and a checkpoint under demos/out/ckpt for the visualization demos.
"""
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from bevlab import RunConfig, pretrain, save_checkpoint

HERE = os.path.join(os.path.dirname(__file__), "out")

cfg = RunConfig(seed=0, data=os.path.join(HERE, "dataset"), epochs=30,
                batch_size=4, val_count=2)
student, rows = pretrain(cfg)

save_checkpoint(os.path.join(HERE, "ckpt"), student)

steps = [s for s, _ in rows]
l_occ = [b.l_occ for _, b in rows]
l_feat = [b.l_feat for _, b in rows]
total = [b.total for _, b in rows]
print(f"{len(rows)} optimizer steps")
print(f"l_occ  {l_occ[0]:.4f} -> {l_occ[-1]:.4f}")
print(f"l_feat {l_feat[0]:.4f} -> {l_feat[-1]:.4f}  (negative cosine, -1 is best)")
print(f"total  {total[0]:.4f} -> {total[-1]:.4f}")

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
ax1.plot(steps, l_occ, label="occupancy BCE")
ax1.plot(steps, total, label=f"total (lambda={cfg.lam})")
ax1.set_xlabel("step")
ax1.legend()
ax2.plot(steps, l_feat, color="tab:green")
ax2.set_xlabel("step")
ax2.set_title("distillation (neg. cosine)")
fig.tight_layout()
out = os.path.join(HERE, "pretrain_curves.png")
fig.savefig(out, dpi=120)
print(f"saved {out}")
