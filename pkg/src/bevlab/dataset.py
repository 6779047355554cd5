"""On-disk dataset layout.

A dataset directory holds ``manifest.txt`` (one sample id per line),
``grid.txt`` (the voxel grid extents and resolution), and per sample:

* ``<id>.points.oft``    — (N, 3) point cloud
* ``<id>.cam<k>.feat.oft`` — teacher map of camera k, [N_y, H_f, W_f]
* ``<id>.labels.oft``    — BEV labels [H_B, W_B] (stored as f64)
* ``<id>.rig.txt``       — one camera per line: fx fy cx cy W H Wf Hf
  followed by the 12 entries of [R|t] row-major (ego → camera)

Pretraining targets live alongside as ``<id>.occ.oft``, ``<id>.ytgt.oft``
and ``<id>.ymask.oft``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, RigidTransform
from .targets import (FeatureTargetVolume, GridSpec, OccupancyGrid,
                      grid_from_text, grid_to_text)
from .tensorio import read_tensor, write_tensor
from .world import SceneSample

__all__ = [
    "sample_id", "write_dataset", "read_dataset", "Dataset",
    "write_sample", "read_sample", "write_targets", "read_targets", "has_targets",
]


def sample_id(index: int) -> str:
    return f"{index:06d}"


def _write_rig(path: str, cams: list[CameraModel]) -> None:
    with open(path, "w") as fh:
        for cam in cams:
            rt = np.hstack([cam.extrinsic.rotation,
                            cam.extrinsic.translation[:, None]])
            fields = [repr(float(cam.fx)), repr(float(cam.fy)),
                      repr(float(cam.cx)), repr(float(cam.cy)),
                      str(cam.width), str(cam.height),
                      str(cam.feat_width), str(cam.feat_height)]
            fields += [repr(float(v)) for v in rt.ravel()]
            fh.write(" ".join(fields) + "\n")


def _read_rig(path: str) -> list[CameraModel]:
    cams = []
    with open(path) as fh:
        for line in fh:
            vals = line.split()
            if len(vals) != 20:
                raise ValueError(f"{path}: expected 20 values per camera line, got {len(vals)}")
            fx, fy, cx, cy = (float(v) for v in vals[:4])
            w, h, wf, hf = (int(v) for v in vals[4:8])
            rt = np.array([float(v) for v in vals[8:]]).reshape(3, 4)
            cams.append(CameraModel(fx, fy, cx, cy, w, h, wf, hf,
                                    RigidTransform(rt[:, :3], rt[:, 3])))
    return cams


def _write_grid(path: str, grid: GridSpec) -> None:
    with open(path, "w") as fh:
        fh.write(grid_to_text(grid) + "\n")


def _read_grid(path: str) -> GridSpec:
    try:
        return grid_from_text(open(path).read())
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def write_sample(directory: str, sid: str, sample: SceneSample) -> None:
    write_tensor(os.path.join(directory, f"{sid}.points.oft"), sample.point_cloud)
    for k, fmap in enumerate(sample.teacher_maps):
        write_tensor(os.path.join(directory, f"{sid}.cam{k}.feat.oft"), fmap)
    write_tensor(os.path.join(directory, f"{sid}.labels.oft"),
                 sample.bev_labels.astype(np.float64))
    _write_rig(os.path.join(directory, f"{sid}.rig.txt"), sample.cameras)


def read_sample(directory: str, sid: str) -> SceneSample:
    cams = _read_rig(os.path.join(directory, f"{sid}.rig.txt"))
    maps = [read_tensor(os.path.join(directory, f"{sid}.cam{k}.feat.oft"))
            for k in range(len(cams))]
    return SceneSample(
        point_cloud=read_tensor(os.path.join(directory, f"{sid}.points.oft")),
        cameras=cams,
        teacher_maps=maps,
        bev_labels=read_tensor(os.path.join(directory, f"{sid}.labels.oft")).astype(np.int64),
    )


def write_dataset(directory: str, samples: list[tuple[str, SceneSample]],
                  grid: GridSpec) -> None:
    os.makedirs(directory, exist_ok=True)
    _write_grid(os.path.join(directory, "grid.txt"), grid)
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        for sid, sample in samples:
            write_sample(directory, sid, sample)
            fh.write(sid + "\n")


@dataclass
class Dataset:
    """Lazy handle on a dataset directory."""

    directory: str
    ids: list[str]
    grid: GridSpec

    def load_sample(self, sid: str) -> SceneSample:
        return read_sample(self.directory, sid)

    def __len__(self) -> int:
        return len(self.ids)


def read_dataset(directory: str) -> Dataset:
    manifest = os.path.join(directory, "manifest.txt")
    with open(manifest) as fh:
        ids = [line.strip() for line in fh if line.strip()]
    grid = _read_grid(os.path.join(directory, "grid.txt"))
    return Dataset(directory, ids, grid)


# ---------------------------------------------------------------------------
# pretraining targets
# ---------------------------------------------------------------------------

def write_targets(directory: str, sid: str, occ: OccupancyGrid,
                  tgt: FeatureTargetVolume) -> None:
    write_tensor(os.path.join(directory, f"{sid}.occ.oft"), occ.data)
    write_tensor(os.path.join(directory, f"{sid}.ytgt.oft"), tgt.features)
    write_tensor(os.path.join(directory, f"{sid}.ymask.oft"), tgt.valid_mask)


def read_targets(directory: str, sid: str):
    occ = OccupancyGrid(read_tensor(os.path.join(directory, f"{sid}.occ.oft")))
    tgt = FeatureTargetVolume(
        read_tensor(os.path.join(directory, f"{sid}.ytgt.oft")),
        read_tensor(os.path.join(directory, f"{sid}.ymask.oft")),
    )
    return occ, tgt


def has_targets(directory: str, sid: str) -> bool:
    return all(os.path.exists(os.path.join(directory, f"{sid}.{suffix}.oft"))
               for suffix in ("occ", "ytgt", "ymask"))
