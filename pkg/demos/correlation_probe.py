"""Probe feature similarity: pick a query voxel, color every BEV column by
its best cosine against the query feature (blue = opposed, white = empty
or orthogonal, red = aligned). A voxel on a vehicle should light up the
other vehicles, not the ground.
"""
import os

import numpy as np

from bevlab import load_checkpoint
from bevlab.dataset import read_dataset
from bevlab.targets import voxelize
from bevlab.viz import render_correlation, write_image

HERE = os.path.join(os.path.dirname(__file__), "out")
SID = "000000"

ds = read_dataset(os.path.join(HERE, "dataset"))
student = load_checkpoint(os.path.join(HERE, "ckpt"))
sample = ds.load_sample(SID)
occ = voxelize(sample.point_cloud, ds.grid)
_, y_hat, _ = student.forward_pretrain(sample.teacher_maps, sample.cameras)
y_hat = np.asarray(y_hat, dtype=np.float64)

# two queries: a voxel above ground level (vehicle surface) and a ground one
occupied = np.argwhere(occ.data > 0)
high = occupied[occupied[:, 0] == occupied[:, 0].max()][0]
low = occupied[occupied[:, 0] == occupied[:, 0].min()][0]

for tag, q in (("vehicle", high), ("ground", low)):
    img = render_correlation(y_hat, tuple(q), occ.data, ds.grid)
    path = os.path.join(HERE, f"corr_{tag}_{SID}.ppm")
    write_image(img, path)
    print(f"query {tuple(int(v) for v in q)} ({tag} voxel) -> {path}")
