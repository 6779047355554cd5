"""Rigid transforms, pinhole cameras, bilinear sampling, ray casting.

Frame conventions, fixed once and used everywhere:

* ego frame: x forward, y left, z up, origin on the ground below the
  sensor rig;
* camera frame: z along the optical axis, x right, y down;
* continuous pixel coordinates put the center of pixel (i, j) at
  exactly (i, j) (integer-center convention).

Everything here is pure and operates on float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "DEPTH_EPS",
    "RigidTransform",
    "CameraModel",
    "Projection",
    "project",
    "project_points",
    "pixel_to_feature",
    "feature_to_pixel",
    "bilinear_sample",
    "bilinear_sample_many",
    "bilinear_scatter",
    "ray_cast",
    "cast_rays",
    "pixel_rays",
]

DEPTH_EPS = 1e-3    # meters; minimum camera-space depth for a valid projection
_RAY_EPS = 1e-9     # minimum ray parameter, keeps rays from hitting their origin
_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    """p_out = rotation @ p_in + translation."""

    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=_ORTHO_TOL, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant must be +1 (no reflections)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a stack (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform applying ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -(self.rotation.T @ self.translation))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics + image/feature-map sizes + ego→camera extrinsics."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int          # W_img, pixels
    height: int         # H_img, pixels
    feat_width: int     # W_f, feature cells
    feat_height: int    # H_f, feature cells
    extrinsic: RigidTransform

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.feat_width > self.width or self.feat_height > self.height:
            raise ValueError("feature map cannot out-resolve the image")

    def with_feature_dims(self, feat_width: int, feat_height: int) -> "CameraModel":
        """Copy of this camera viewing a feature map of different resolution."""
        return replace(self, feat_width=feat_width, feat_height=feat_height)

    def center(self) -> np.ndarray:
        """Optical center in ego coordinates."""
        return self.extrinsic.inverse().translation


@dataclass(frozen=True)
class Projection:
    u: float
    v: float
    depth: float
    valid: bool


def project_points(points: np.ndarray, cam: CameraModel):
    """Vectorized pinhole projection of (N, 3) ego points.

    Returns (uv (N, 2), depth (N,), valid (N,)).  A projection is valid
    when its camera-space depth clears DEPTH_EPS and (u, v) lands inside
    the image; invalid entries still carry whatever u, v followed from
    the guarded division, but callers must treat them as data-free.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    p_cam = cam.extrinsic.apply(p)
    depth = p_cam[:, 2]
    in_front = depth > DEPTH_EPS
    z_safe = np.where(in_front, depth, 1.0)
    u = cam.fx * p_cam[:, 0] / z_safe + cam.cx
    v = cam.fy * p_cam[:, 1] / z_safe + cam.cy
    valid = in_front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return np.stack([u, v], axis=1), depth, valid


def project(point: np.ndarray, cam: CameraModel) -> Projection:
    uv, depth, valid = project_points(np.asarray(point, dtype=np.float64)[None, :], cam)
    return Projection(float(uv[0, 0]), float(uv[0, 1]), float(depth[0]), bool(valid[0]))


def pixel_to_feature(u, v, cam: CameraModel):
    """Image-pixel coordinates → feature-map cell coordinates.

    Align-centers convention: the centers of the image and of the
    feature map coincide, and each feature cell spans W_img/W_f pixels.
    """
    uf = (np.asarray(u, dtype=np.float64) + 0.5) * cam.feat_width / cam.width - 0.5
    vf = (np.asarray(v, dtype=np.float64) + 0.5) * cam.feat_height / cam.height - 0.5
    return uf, vf


def feature_to_pixel(uf, vf, cam: CameraModel):
    """Inverse of :func:`pixel_to_feature`."""
    u = (np.asarray(uf, dtype=np.float64) + 0.5) * cam.width / cam.feat_width - 0.5
    v = (np.asarray(vf, dtype=np.float64) + 0.5) * cam.height / cam.feat_height - 0.5
    return u, v


# ---------------------------------------------------------------------------
# bilinear sampling
# ---------------------------------------------------------------------------

def bilinear_sample_many(fmap: np.ndarray, uf: np.ndarray, vf: np.ndarray):
    """Sample a [C, H, W] map at N continuous (uf, vf) cell coordinates.

    Returns (values (N, C), in_bounds (N,)).  A sample is in bounds only
    if all four neighbor cells exist; out-of-bounds samples are zero.
    """
    c, h, w = fmap.shape
    uf = np.asarray(uf, dtype=np.float64)
    vf = np.asarray(vf, dtype=np.float64)
    x0 = np.floor(uf)
    y0 = np.floor(vf)
    inb = (x0 >= 0) & (x0 + 1 <= w - 1) & (y0 >= 0) & (y0 + 1 <= h - 1)
    vals = np.zeros((uf.shape[0], c), dtype=fmap.dtype)
    if not inb.any():
        return vals, inb
    # gather only the in-bounds rows; weights in the map's dtype so a
    # float32 map stays float32 end to end
    xi = x0[inb].astype(np.intp)
    yi = y0[inb].astype(np.intp)
    du = (uf[inb] - x0[inb]).astype(fmap.dtype)
    dv = (vf[inb] - y0[inb]).astype(fmap.dtype)
    flat = fmap.reshape(c, h * w)
    base = yi * w + xi
    f00 = flat[:, base]
    f01 = flat[:, base + 1]
    f10 = flat[:, base + w]
    f11 = flat[:, base + w + 1]
    vals[inb] = (f00 * ((1.0 - du) * (1.0 - dv))
                 + f01 * (du * (1.0 - dv))
                 + f10 * ((1.0 - du) * dv)
                 + f11 * (du * dv)).T
    return vals, inb


def bilinear_sample(fmap: np.ndarray, uf: float, vf: float):
    """Scalar convenience wrapper: returns (vector (C,), in_bounds)."""
    vals, inb = bilinear_sample_many(fmap, np.array([uf]), np.array([vf]))
    return vals[0], bool(inb[0])


def bilinear_scatter(shape: tuple[int, int, int], uf: np.ndarray, vf: np.ndarray,
                     grad_vals: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`bilinear_sample_many` with respect to the map.

    ``grad_vals`` is (N, C); rows whose sample was out of bounds must be
    zero (they are simply scattered with zero weight there anyway since
    the mask recomputation matches the forward pass).
    """
    c, h, w = shape
    uf = np.asarray(uf, dtype=np.float64)
    vf = np.asarray(vf, dtype=np.float64)
    x0 = np.floor(uf)
    y0 = np.floor(vf)
    inb = (x0 >= 0) & (x0 + 1 <= w - 1) & (y0 >= 0) & (y0 + 1 <= h - 1)
    grad_map = np.zeros(shape, dtype=grad_vals.dtype)
    if not inb.any():
        return grad_map
    xi = x0[inb].astype(np.intp)
    yi = y0[inb].astype(np.intp)
    du = (uf[inb] - x0[inb]).astype(grad_vals.dtype)
    dv = (vf[inb] - y0[inb]).astype(grad_vals.dtype)
    g = grad_vals[inb].T  # [C, M]
    base = yi * w + xi
    # one bincount per channel beats np.add.at by a wide margin
    idx4 = np.concatenate([base, base + 1, base + w, base + w + 1])
    weighted = np.concatenate([g * ((1.0 - du) * (1.0 - dv)),
                               g * (du * (1.0 - dv)),
                               g * ((1.0 - du) * dv),
                               g * (du * dv)], axis=1)
    flat = grad_map.reshape(c, h * w)
    for ch in range(c):
        flat[ch] = np.bincount(idx4, weights=weighted[ch], minlength=h * w)
    return grad_map


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------

def _nonzero(d: np.ndarray) -> np.ndarray:
    """Replace exact zeros by signed tiny values so slab divisions stay IEEE-clean."""
    return np.where(d == 0.0, np.copysign(1e-300, d), d)


def cast_rays(origins: np.ndarray, directions: np.ndarray, scene):
    """Nearest-hit ray casting against a scene's ground plane and boxes.

    ``scene`` must expose ``boxes`` (objects with center, half_extents,
    yaw, class_id) and ``ground_class_id``.  Returns (hit (N,) bool,
    t (N,) float, class_id (N,) int); missed rays carry t = +inf and
    class −1.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    n = o.shape[0]
    best_t = np.full(n, np.inf)
    best_cls = np.full(n, -1, dtype=np.int64)

    # unbounded ground plane z = 0
    dz = _nonzero(d[:, 2])
    t_ground = -o[:, 2] / dz
    ok = (d[:, 2] != 0.0) & (t_ground > _RAY_EPS)
    best_t = np.where(ok, t_ground, best_t)
    best_cls = np.where(ok, int(getattr(scene, "ground_class_id", 0)), best_cls)

    for box in scene.boxes:
        cy, sy = np.cos(box.yaw), np.sin(box.yaw)
        # world → box-local: rotate by −yaw about z
        rot = np.array([[cy, sy, 0.0], [-sy, cy, 0.0], [0.0, 0.0, 1.0]])
        ol = (o - np.asarray(box.center, dtype=np.float64)) @ rot.T
        dl = _nonzero(d @ rot.T)
        half = np.asarray(box.half_extents, dtype=np.float64)
        t1 = (-half - ol) / dl
        t2 = (half - ol) / dl
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        hit = (tmax >= tmin) & (tmax > _RAY_EPS)
        t_box = np.where(tmin > _RAY_EPS, tmin, tmax)
        closer = hit & (t_box < best_t)
        best_t = np.where(closer, t_box, best_t)
        best_cls = np.where(closer, box.class_id, best_cls)

    return np.isfinite(best_t), best_t, best_cls


def ray_cast(origin: np.ndarray, direction: np.ndarray, scene):
    """Single-ray convenience wrapper: returns (hit, t, class_id)."""
    direction = np.asarray(direction, dtype=np.float64)
    if not np.any(direction != 0.0):
        raise ValueError("ray direction must be non-zero")
    hit, t, cls = cast_rays(origin[None, :] if np.ndim(origin) == 1 else origin,
                            direction[None, :], scene)
    return bool(hit[0]), float(t[0]), int(cls[0])


def pixel_rays(cam: CameraModel, u: np.ndarray, v: np.ndarray):
    """Ego-frame rays through the given pixel coordinates.

    Returns (origin (3,), directions (N, 3)); directions are unit length.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d_cam = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=1)
    d_ego = d_cam @ cam.extrinsic.rotation  # == (Rᵀ d)ᵀ rowwise
    d_ego /= np.linalg.norm(d_ego, axis=1, keepdims=True)
    return cam.center(), d_ego
