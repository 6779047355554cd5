"""Synthetic driving scenes and everything sensed from them.

A scene is a flat ground plane plus a handful of yaw-oriented boxes
(vehicles and barriers) resting on it.  From a scene we derive the
four sensor products a sample needs: a surface-sampled point cloud, a
camera rig, per-camera teacher feature maps (rendered by ray casting
into a fixed class-embedding space), and BEV segmentation labels.
All randomness flows through explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (CameraModel, RigidTransform, cast_rays, feature_to_pixel,
                       pixel_rays, project_points)
from .targets import GridSpec

__all__ = [
    "GROUND", "VEHICLE", "BARRIER", "SEG_CLASSES",
    "Box", "Scene", "WorldConfig", "TeacherEmbedding", "SceneSample",
    "build_camera_rig", "generate_scene", "sample_lidar",
    "render_teacher", "make_bev_labels", "build_sample",
]

GROUND = 0
VEHICLE = 1
BARRIER = 2
SEG_CLASSES = 2  # BEV segmentation: background vs vehicle

# positional modulation frequencies (rad/m) for the teacher signal
_OMEGA = np.array([0.9, 0.7, 1.3])

# half-extent ranges (x, y, z) per class, meters.  Barriers (think freight
# containers / site cabins) deliberately overlap the vehicle footprint
# distribution, so BEV shape alone cannot separate the two classes — the
# class signal lives in the camera features, not in occupancy.
_VEHICLE_HALF = ((1.7, 2.8), (0.8, 1.2), (0.6, 0.9))
_BARRIER_HALF = ((1.5, 2.5), (0.7, 1.2), (0.5, 0.8))


@dataclass(frozen=True)
class Box:
    center: np.ndarray       # (3,)
    half_extents: np.ndarray  # (3,)
    yaw: float
    class_id: int


@dataclass
class Scene:
    boxes: list
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    seed: int
    ground_class_id: int = GROUND


@dataclass(frozen=True)
class WorldConfig:
    grid: GridSpec = field(default_factory=GridSpec.desk)
    n_boxes: tuple[int, int] = (3, 5)   # inclusive range
    vehicle_prob: float = 1.0
    n_lidar_points: int = 2048
    n_y: int = 16
    n_cameras: int = 4
    image_width: int = 96
    image_height: int = 64
    feat_width: int = 24
    feat_height: int = 16
    focal: float = 48.0
    cam_radius: float = 0.5
    cam_height: float = 1.6
    alpha: float = 0.25

    @classmethod
    def nuscenes(cls) -> "WorldConfig":
        """Full-scale preset: 6-camera rig on the 200x200 grid."""
        return cls(grid=GridSpec.nuscenes(), n_cameras=6, n_boxes=(4, 12),
                   n_lidar_points=16384)


def build_camera_rig(config: WorldConfig) -> list[CameraModel]:
    """Outward-facing ring of identical pinhole cameras.

    Camera k yaws by 2*pi*k/C; its optical axis is horizontal, x_cam
    points right of the view direction and y_cam points down.
    """
    cams = []
    for k in range(config.n_cameras):
        yaw = 2.0 * np.pi * k / config.n_cameras
        cy, sy = np.cos(yaw), np.sin(yaw)
        rot = np.array([
            [sy, -cy, 0.0],   # x_cam (right)
            [0.0, 0.0, -1.0],  # y_cam (down)
            [cy, sy, 0.0],    # z_cam (optical axis)
        ])
        center = np.array([config.cam_radius * cy, config.cam_radius * sy,
                           config.cam_height])
        extrinsic = RigidTransform(rot, -rot @ center)
        cams.append(CameraModel(
            fx=config.focal, fy=config.focal,
            cx=(config.image_width - 1) / 2.0, cy=(config.image_height - 1) / 2.0,
            width=config.image_width, height=config.image_height,
            feat_width=config.feat_width, feat_height=config.feat_height,
            extrinsic=extrinsic,
        ))
    return cams


def _any_box_visible(scene: Scene, cams: list[CameraModel]) -> bool:
    centers = np.stack([b.center for b in scene.boxes])
    for cam in cams:
        _, _, valid = project_points(centers, cam)
        if valid.any():
            return True
    return False


def generate_scene(seed: int, config: WorldConfig) -> Scene:
    """Deterministic scene draw; redraws until some box is on camera.

    Boxes rest on the ground (center z = half height) and their whole
    footprint stays inside the grid's x/y range.  Whenever vehicles are
    enabled (vehicle_prob > 0) and the scene has boxes, at least one of
    them is a vehicle, so every sample carries signal for the class the
    benchmarks report.
    """
    grid = config.grid
    rng = np.random.default_rng(seed)
    cams = build_camera_rig(config)
    for _attempt in range(64):
        n = int(rng.integers(config.n_boxes[0], config.n_boxes[1] + 1))
        vehicle_flags = rng.random(n) < config.vehicle_prob
        if n > 0 and config.vehicle_prob > 0 and not vehicle_flags.any():
            vehicle_flags[0] = True
        boxes = []
        for is_vehicle in vehicle_flags:
            ranges = _VEHICLE_HALF if is_vehicle else _BARRIER_HALF
            half = np.array([rng.uniform(lo, hi) for lo, hi in ranges])
            yaw = float(rng.uniform(0.0, 2.0 * np.pi))
            radius = float(np.hypot(half[0], half[1]))
            x_lo, x_hi = grid.x_range[0] + radius, grid.x_range[1] - radius
            y_lo, y_hi = grid.y_range[0] + radius, grid.y_range[1] - radius
            if x_lo >= x_hi or y_lo >= y_hi:
                raise ValueError("grid range too small to place a box")
            center = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi),
                               half[2]])
            boxes.append(Box(center, half, yaw, VEHICLE if is_vehicle else BARRIER))
        scene = Scene(boxes, grid.x_range, grid.y_range, seed)
        if n == 0 or _any_box_visible(scene, cams):
            return scene
    raise ValueError(f"no visible-box scene found for seed {seed}")


# ---------------------------------------------------------------------------
# Lidar
# ---------------------------------------------------------------------------

def _box_frame(box: Box):
    cy, sy = np.cos(box.yaw), np.sin(box.yaw)
    rot = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])  # local → world
    return rot, np.asarray(box.center)


def _surfaces(scene: Scene):
    """(area, sampler) pairs; samplers draw (n, rng) → (n, 3) world points.

    Surfaces are the ground rectangle and the five exposed faces of each
    box (the face resting on the ground is skipped — nothing sees it).
    """
    gx = scene.x_range[1] - scene.x_range[0]
    gy = scene.y_range[1] - scene.y_range[0]

    def ground(n, rng):
        pts = np.zeros((n, 3))
        pts[:, 0] = rng.uniform(scene.x_range[0], scene.x_range[1], n)
        pts[:, 1] = rng.uniform(scene.y_range[0], scene.y_range[1], n)
        return pts

    surfaces = [(gx * gy, ground)]
    for box in scene.boxes:
        hx, hy, hz = box.half_extents
        rot, center = _box_frame(box)
        # (fixed axis, sign, free axes, area)
        faces = [
            (2, +1, (0, 1), 4 * hx * hy),   # top
            (0, +1, (1, 2), 4 * hy * hz),
            (0, -1, (1, 2), 4 * hy * hz),
            (1, +1, (0, 2), 4 * hx * hz),
            (1, -1, (0, 2), 4 * hx * hz),
        ]
        for axis, sign, free, area in faces:
            def face_sampler(n, rng, axis=axis, sign=sign, free=free,
                             half=box.half_extents, rot=rot, center=center):
                local = np.empty((n, 3))
                local[:, axis] = sign * half[axis]
                for f in free:
                    local[:, f] = rng.uniform(-half[f], half[f], n)
                return local @ rot.T + center
            surfaces.append((area, face_sampler))
    return surfaces


def sample_lidar(scene: Scene, n_points: int, seed: int) -> np.ndarray:
    """Area-weighted uniform sampling of the scene's exposed surfaces."""
    if n_points <= 0:
        raise ValueError("n_points must be positive")
    rng = np.random.default_rng(seed)
    surfaces = _surfaces(scene)
    areas = np.array([a for a, _ in surfaces])
    counts = rng.multinomial(n_points, areas / areas.sum())
    chunks = [sampler(int(c), rng) for (_, sampler), c in zip(surfaces, counts) if c]
    return np.concatenate(chunks, axis=0)


# ---------------------------------------------------------------------------
# teacher
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TeacherEmbedding:
    """Frozen class embeddings with a smooth positional modulation.

    A surface point of class c embeds as (1 + alpha*sin(omega . p)) * e_c
    where e_c is a unit vector; the modulation keeps features position-
    dependent while leaving their direction (what cosine distillation
    sees) purely semantic.
    """

    class_vectors: np.ndarray  # (n_classes, N_y) unit rows
    alpha: float = 0.25

    def __post_init__(self):
        v = self.class_vectors
        gram = v @ v.T
        off = gram - np.diag(np.diag(gram))
        if off.max() >= 0.5:
            raise ValueError("class embeddings too similar (pairwise cosine >= 0.5)")

    @classmethod
    def make(cls, n_y: int, n_classes: int = 3, seed: int = 0,
             alpha: float = 0.25) -> "TeacherEmbedding":
        rng = np.random.default_rng(seed)
        for _ in range(1000):
            v = rng.normal(size=(n_classes, n_y))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            gram = v @ v.T
            if (gram - np.diag(np.diag(gram))).max() < 0.5:
                return cls(v, alpha)
        raise ValueError(
            f"could not draw {n_classes} sufficiently distinct unit vectors in {n_y} dims")

    def feature_at(self, class_ids: np.ndarray, positions: np.ndarray) -> np.ndarray:
        """(N,) class ids + (N, 3) points → (N, N_y) teacher features."""
        scale = 1.0 + self.alpha * np.sin(positions @ _OMEGA)
        return scale[:, None] * self.class_vectors[class_ids]


def render_teacher(scene: Scene, cam: CameraModel,
                   embedding: TeacherEmbedding) -> np.ndarray:
    """Ray-cast one teacher feature map [N_y, H_f, W_f].

    Each feature cell's ray goes through the cell's center pixel; the
    cell takes the embedding of the nearest surface hit, or zero for sky.
    """
    hf, wf = cam.feat_height, cam.feat_width
    jj, ii = np.meshgrid(np.arange(wf), np.arange(hf))
    u, v = feature_to_pixel(jj.ravel().astype(np.float64),
                            ii.ravel().astype(np.float64), cam)
    origin, dirs = pixel_rays(cam, u, v)
    hit, t, cls = cast_rays(np.broadcast_to(origin, dirs.shape), dirs, scene)
    feats = np.zeros((hf * wf, embedding.class_vectors.shape[1]))
    if hit.any():
        points = origin + t[hit, None] * dirs[hit]
        feats[hit] = embedding.feature_at(cls[hit], points)
    return feats.reshape(hf, wf, -1).transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# labels and samples
# ---------------------------------------------------------------------------

def make_bev_labels(scene: Scene, grid: GridSpec) -> np.ndarray:
    """[H_B, W_B] int labels: 1 where the cell center is inside a vehicle
    footprint (yaw-aware, boundary-inclusive), else 0."""
    labels = np.zeros((grid.h_cells, grid.w_cells), dtype=np.int64)
    centers = grid.bev_centers()  # [H, W, 2]
    for box in scene.boxes:
        if box.class_id != VEHICLE:
            continue
        cy, sy = np.cos(box.yaw), np.sin(box.yaw)
        rel = centers - np.asarray(box.center[:2])
        local_x = rel[..., 0] * cy + rel[..., 1] * sy
        local_y = -rel[..., 0] * sy + rel[..., 1] * cy
        inside = (np.abs(local_x) <= box.half_extents[0]) & \
                 (np.abs(local_y) <= box.half_extents[1])
        labels[inside] = 1
    return labels


@dataclass
class SceneSample:
    """Everything the training side consumes for one scene."""

    point_cloud: np.ndarray          # (N, 3) ego meters
    cameras: list                    # list[CameraModel]
    teacher_maps: list               # per camera, [N_y, H_f, W_f]
    bev_labels: np.ndarray           # [H_B, W_B] int


def build_sample(scene: Scene, config: WorldConfig,
                 embedding: TeacherEmbedding, seed: int) -> SceneSample:
    cams = build_camera_rig(config)
    return SceneSample(
        point_cloud=sample_lidar(scene, config.n_lidar_points, seed),
        cameras=cams,
        teacher_maps=[render_teacher(scene, cam, embedding) for cam in cams],
        bev_labels=make_bev_labels(scene, config.grid),
    )
