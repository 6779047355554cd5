"""bevlab: a desk-scale sandbox for occupancy-guided BEV pretraining.

Synthetic multi-camera driving scenes, Lidar-derived occupancy and
feature-distillation targets, a small camera-only BEV network with
hand-written reverse-mode gradients, training/ablation harnesses, and
finite-difference verification of every differentiable piece.
"""

from .targets import GridSpec, OccupancyGrid, FeatureTargetVolume, voxelize, voxel_center
from .geometry import CameraModel, RigidTransform, project, ray_cast
from .world import Scene, SceneSample, TeacherEmbedding, WorldConfig, generate_scene
from .student import StudentConfig, StudentNetwork, load_checkpoint, save_checkpoint
from .losses import LossBreakdown, occupancy_loss, distillation_loss, total_loss
from .config import RunConfig
from .train import MetricsReport, ablate, finetune, iou, pretrain
from .gradcheck import GradCheckReport, check_gradients

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "OccupancyGrid", "FeatureTargetVolume", "voxelize", "voxel_center",
    "CameraModel", "RigidTransform", "project", "ray_cast",
    "Scene", "SceneSample", "TeacherEmbedding", "WorldConfig", "generate_scene",
    "StudentConfig", "StudentNetwork", "load_checkpoint", "save_checkpoint",
    "LossBreakdown", "occupancy_loss", "distillation_loss", "total_loss",
    "MetricsReport", "RunConfig", "ablate", "finetune", "iou", "pretrain",
    "GradCheckReport", "check_gradients",
]
