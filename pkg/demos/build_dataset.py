"""Walk through dataset generation: scenes -> samples -> training targets.

Builds a small synthetic dataset under demos/out/dataset, then prints the
kind of composition stats worth eyeballing before any training run.
"""
import os

import numpy as np

from bevlab.dataset import read_dataset, sample_id, write_dataset, write_targets
from bevlab.targets import build_feature_targets, voxelize
from bevlab.world import TeacherEmbedding, WorldConfig, build_sample, generate_scene

N_SCENES = 12
OUT = os.path.join(os.path.dirname(__file__), "out", "dataset")

world = WorldConfig()
embedding = TeacherEmbedding.make(world.n_y, seed=0)

# one scene = boxes on a ground plane + a lidar sweep + C camera renders
samples = []
for i in range(N_SCENES):
    scene = generate_scene(i, world)
    sample = build_sample(scene, world, embedding, seed=1000 + i)
    samples.append((sample_id(i), sample))
    n_veh = sum(b.class_id == 1 for b in scene.boxes)
    print(f"scene {i:2d}: {len(scene.boxes)} boxes ({n_veh} vehicles), "
          f"{sample.point_cloud.shape[0]} lidar points, "
          f"{int((sample.bev_labels == 1).sum())} vehicle BEV cells")

write_dataset(OUT, samples, world.grid)

# targets: voxelized occupancy + teacher features pooled into occupied voxels
print("\nbuilding targets ...")
occupancy_rates = []
valid_rates = []
for sid, sample in samples:
    occ = voxelize(sample.point_cloud, world.grid)
    tgt = build_feature_targets(occ, world.grid, sample.cameras, sample.teacher_maps)
    write_targets(OUT, sid, occ, tgt)
    occupancy_rates.append(occ.data.mean())
    valid_rates.append(tgt.valid_mask.sum() / max(occ.data.sum(), 1))

print(f"occupancy rate: {np.mean(occupancy_rates):.3f} "
      f"(min {np.min(occupancy_rates):.3f}, max {np.max(occupancy_rates):.3f})")
print(f"occupied voxels with a valid feature target: {np.mean(valid_rates):.3f}")

ds = read_dataset(OUT)
print(f"\nwrote {len(ds.ids)} samples to {OUT}")
print(f"grid: {ds.grid.z_cells}x{ds.grid.h_cells}x{ds.grid.w_cells} cells")
