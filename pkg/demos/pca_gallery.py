"""Render PCA-colored top views of predicted voxel features.

The 3 leading principal components of the predicted features (collected
at occupied voxels of one reference scene) become RGB. Re-using the same
basis across scenes keeps colors comparable: same-class structures should
stay the same hue from scene to scene.
"""
import os

import numpy as np

from bevlab import load_checkpoint
from bevlab.dataset import read_dataset
from bevlab.targets import voxelize
from bevlab.viz import fit_pca, render_pca_topview, write_image

HERE = os.path.join(os.path.dirname(__file__), "out")
SCENES = ["000000", "000001", "000002", "000003"]

ds = read_dataset(os.path.join(HERE, "dataset"))
student = load_checkpoint(os.path.join(HERE, "ckpt"))

def predicted_features(sid):
    sample = ds.load_sample(sid)
    occ = voxelize(sample.point_cloud, ds.grid)
    _, y_hat, _ = student.forward_pretrain(sample.teacher_maps, sample.cameras)
    return occ, np.asarray(y_hat, dtype=np.float64)

# fit the color basis on the first scene only
occ0, y0 = predicted_features(SCENES[0])
basis = fit_pca(y0[:, occ0.data > 0].T)
var = basis.eigenvalues / basis.eigenvalues.sum()
print("variance captured by RGB components:",
      " ".join(f"{v:.2f}" for v in var[:3]))

for sid in SCENES:
    occ, y_hat = predicted_features(sid)
    img = render_pca_topview(y_hat, occ.data, basis, ds.grid)
    path = os.path.join(HERE, f"pca_{sid}.ppm")
    write_image(img, path)
    print(f"{sid}: {int(occ.data.sum())} occupied voxels -> {path}")

print("open the .ppm files with any image viewer (GIMP, eog, convert ...)")
