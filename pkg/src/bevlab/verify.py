"""The gradient suite: finite-difference checks for every layer kind,
the sampling/loss gradients, and the full student under the combined
pretraining objective.

Shared by the ``gradcheck`` CLI command and the test suite.  All checks
run in float64.  Random fixtures are nudged away from the non-smooth
points of relu/floor/clamp so central differences stay meaningful; the
kinks themselves are covered by exact-value unit tests instead.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .gradcheck import GradCheckReport, check_array_gradient, check_gradients
from .losses import cross_entropy_loss, distillation_loss, occupancy_loss
from .student import StudentConfig, StudentNetwork
from .targets import GridSpec
from .geometry import bilinear_sample_many, bilinear_scatter
from .world import WorldConfig, build_camera_rig

__all__ = ["gradient_suite", "student_fixture", "student_loss_check"]


def _quadratic_graph_checks(name: str, graph: nn.Sequential, x: np.ndarray,
                            rng: np.random.Generator, **kw):
    """Parameter and input gradient checks under 0.5*||y - target||^2."""
    y0, _ = graph.forward(x)
    target = rng.normal(size=y0.shape)

    def loss_fn(compute_grad: bool) -> float:
        y, ctx = graph.forward(x)
        r = y - target
        if compute_grad:
            graph.backward(ctx, r)
        return 0.5 * float((r * r).sum())

    param_report = check_gradients(graph.named_parameters(), loss_fn, **kw)

    y, ctx = graph.forward(x)
    gx = graph.backward(ctx, y - target)

    def eval_loss() -> float:
        y, _ = graph.forward(x)
        return 0.5 * float(((y - target) ** 2).sum())

    input_report = check_array_gradient(x, gx, eval_loss, name=f"{name}:input", **kw)
    return [(f"{name}:params", param_report), (f"{name}:input", input_report)]


def _away_from_zero(x: np.ndarray, margin: float = 0.3) -> np.ndarray:
    return x + margin * np.sign(x)


def _layer_checks(seed: int):
    rng = np.random.default_rng([seed, 0x6D])
    out = []

    g = nn.Sequential([nn.Conv2d(3, 4, 3, rng)])
    out += _quadratic_graph_checks("conv2d_k3", g, rng.normal(size=(3, 5, 6)), rng)

    g = nn.Sequential([nn.Conv2d(2, 3, 3, rng, stride=2)])
    out += _quadratic_graph_checks("conv2d_k3_s2", g, rng.normal(size=(2, 7, 9)), rng)

    g = nn.Sequential([nn.Conv2d(3, 5, 1, rng)])
    out += _quadratic_graph_checks("conv2d_k1", g, rng.normal(size=(3, 4, 4)), rng)

    g = nn.Sequential([nn.PointwiseConv3d(3, 4, rng)])
    out += _quadratic_graph_checks("conv3d_1x1x1", g, rng.normal(size=(3, 2, 3, 4)), rng)

    g = nn.Sequential([nn.InstanceNorm2d()])
    out += _quadratic_graph_checks("instance_norm", g, rng.normal(size=(3, 4, 5)), rng)

    g = nn.Sequential([nn.ReLU()])
    out += _quadratic_graph_checks("relu", g, _away_from_zero(rng.normal(size=(2, 4, 4))), rng)

    g = nn.Sequential([nn.Softplus()])
    out += _quadratic_graph_checks("softplus", g, rng.normal(size=(2, 4, 4)), rng)

    g = nn.Sequential([nn.Sigmoid()])
    out += _quadratic_graph_checks("sigmoid", g, rng.normal(size=(2, 4, 4)), rng)

    g = nn.Sequential([nn.Conv2d(2, 6, 1, rng), nn.ChannelsToVolume(3),
                       nn.PointwiseConv3d(2, 3, rng)])
    out += _quadratic_graph_checks("reshape_to_volume", g, rng.normal(size=(2, 3, 4)), rng)

    g = nn.Sequential([
        nn.Conv2d(3, 4, 3, rng, stride=2), nn.InstanceNorm2d(), nn.ReLU(),
        nn.Conv2d(4, 4, 3, rng, stride=2), nn.InstanceNorm2d(), nn.ReLU(),
        nn.Conv2d(4, 4, 3, rng),
    ])
    out += _quadratic_graph_checks("encoder_stack", g, rng.normal(size=(3, 12, 16)), rng)

    g = nn.Sequential([
        nn.Conv2d(4, 4, 3, rng), nn.InstanceNorm2d(), nn.ReLU(),
        nn.Conv2d(4, 8, 1, rng), nn.ChannelsToVolume(2),
        nn.PointwiseConv3d(4, 8, rng), nn.Softplus(),
        nn.PointwiseConv3d(8, 4, rng),
    ])
    out += _quadratic_graph_checks("unsplat_stack", g, rng.normal(size=(4, 5, 6)), rng)
    return out


def _sampling_and_loss_checks(seed: int):
    rng = np.random.default_rng([seed, 0x5A])
    out = []

    # bilinear sampling wrt the map; fractional offsets stay off the
    # floor() lattice so the finite differences do not straddle a cell edge
    fmap = rng.normal(size=(3, 5, 7))
    n = 24
    uf = rng.integers(0, 6, size=n) + rng.uniform(0.2, 0.8, size=n)
    vf = rng.integers(0, 4, size=n) + rng.uniform(0.2, 0.8, size=n)
    uf[:3] = np.array([-2.0, 8.5, 6.7])  # a few out-of-bounds rows
    weights = rng.normal(size=(n, 3))

    def bil_loss() -> float:
        vals, _ = bilinear_sample_many(fmap, uf, vf)
        return float((vals * weights).sum())

    g_map = bilinear_scatter(fmap.shape, uf, vf, weights)
    out.append(("bilinear_sample:map",
                check_array_gradient(fmap, g_map, bil_loss, name="bilinear_sample:map")))

    # occupancy BCE wrt predictions (inside the clamp band)
    pred = rng.uniform(0.1, 0.9, size=(2, 3, 4))
    occ = (rng.random(size=pred.shape) < 0.5).astype(np.float64)
    _, g_pred = occupancy_loss(pred, occ)
    out.append(("occupancy_loss:pred", check_array_gradient(
        pred, g_pred, lambda: occupancy_loss(pred, occ)[0], name="occupancy_loss:pred")))

    # distillation cosine wrt predictions, with a partly-zero mask
    y_hat = _away_from_zero(rng.normal(size=(4, 2, 3, 3)), 0.2)
    y_tgt = _away_from_zero(rng.normal(size=y_hat.shape), 0.2)
    mask = (rng.random(size=y_hat.shape[1:]) < 0.6).astype(np.float64)
    mask.flat[0] = 1.0
    _, g_feat = distillation_loss(y_hat, y_tgt, mask)
    out.append(("distillation_loss:pred", check_array_gradient(
        y_hat, g_feat, lambda: distillation_loss(y_hat, y_tgt, mask)[0],
        name="distillation_loss:pred")))

    # segmentation cross-entropy wrt logits
    logits = rng.normal(size=(2, 4, 5))
    labels = rng.integers(0, 2, size=(4, 5))
    _, g_log = cross_entropy_loss(logits, labels)
    out.append(("cross_entropy:logits", check_array_gradient(
        logits, g_log, lambda: cross_entropy_loss(logits, labels)[0],
        name="cross_entropy:logits")))
    return out


def student_fixture(seed: int):
    """A miniature student + random batch inputs/targets for end-to-end checks."""
    rng = np.random.default_rng([seed, 0x57])
    grid = GridSpec((-4.0, 4.0), (-4.0, 4.0), (0.0, 2.0), 4, 4, 2)
    wcfg = WorldConfig(grid=grid, n_cameras=2, image_width=32, image_height=24,
                       feat_width=8, feat_height=6, focal=16.0)
    cams = build_camera_rig(wcfg)
    scfg = StudentConfig(grid=grid, n_in=4, n_i=4, n_b=4, n_y=4, dtype="f64")
    student = StudentNetwork(scfg, seed=seed)
    images = [rng.normal(size=(4, 6, 8)) for _ in cams]
    occ_target = (rng.random(size=grid.shape) < 0.4).astype(np.float64)
    y_target = rng.normal(size=(4,) + grid.shape)
    mask = occ_target * (rng.random(size=grid.shape) < 0.8)
    y_target *= mask  # targets are zero at invalid voxels
    return student, images, cams, occ_target, y_target, mask


def student_loss_check(seed: int, lam: float = 0.01, **kw) -> GradCheckReport:
    """Finite-difference check of the full student under the combined loss."""
    student, images, cams, occ_t, y_t, mask = student_fixture(seed)

    def loss_fn(compute_grad: bool) -> float:
        occ_hat, y_hat, ctx = student.forward_pretrain(images, cams)
        l_occ, g_occ = occupancy_loss(occ_hat, occ_t)
        l_feat, g_feat = distillation_loss(y_hat, y_t, mask)
        if compute_grad:
            student.backward_pretrain(ctx, g_occ, lam * g_feat)
        return l_occ + lam * l_feat

    return check_gradients(student.named_parameters(), loss_fn, **kw)


def gradient_suite(seeds=range(20), include_student: bool = True):
    """Run every gradient check over the given seeds.

    Returns a list of (name, GradCheckReport); names carry the seed.
    """
    results = []
    for seed in seeds:
        for name, report in _layer_checks(seed) + _sampling_and_loss_checks(seed):
            results.append((f"{name}[seed={seed}]", report))
        if include_student:
            results.append((f"student_total_loss[seed={seed}]",
                            student_loss_check(seed)))
    return results
