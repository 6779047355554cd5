"""The camera-only BEV student network.

Pipeline: a shared-weight convolutional encoder runs on every camera's
input map; a pull projection samples the encoded maps at a fixed 3D
lattice and reduces them to a BEV feature map; a BEV decoder produces
the interface tensor F_B.  For pretraining, an unsplatting head lifts
F_B back to a 3D volume F_V feeding an occupancy head (sigmoid) and a
feature head (linear, teacher-dimensional).  For finetuning, a 1x1
segmentation head runs directly on F_B; the three pretraining heads can
be dropped at checkpoint-load time without touching the seg path.

Backpropagation is routed by hand through this small DAG; every layer's
ctx from the forward pass is kept in a context object so the shared
encoder can replay its C camera passes in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .config import format_kv, parse_kv_text
from .geometry import bilinear_sample_many, bilinear_scatter, pixel_to_feature, project_points
from .targets import GridSpec, grid_from_text, grid_to_text
from .tensorio import read_tensor, write_tensor

__all__ = [
    "StudentConfig",
    "StudentNetwork",
    "PRETRAIN_HEADS",
    "save_checkpoint",
    "load_checkpoint",
]

PRETRAIN_HEADS = ("unsplat_head", "occ_head", "feat_head")

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class StudentConfig:
    """Architecture hyperparameters; z_p = 0 means 2x the grid height."""

    grid: GridSpec
    n_in: int = 16      # channels of the per-camera input maps
    n_i: int = 16       # encoder feature channels
    n_b: int = 32       # BEV feature channels
    n_y: int = 16       # teacher feature dimension
    n_classes: int = 2  # BEV segmentation classes
    z_p: int = 0        # pull-lattice height cells
    dtype: str = "f64"

    def __post_init__(self):
        if self.z_p == 0:
            object.__setattr__(self, "z_p", 2 * self.grid.z_cells)
        if self.z_p < self.grid.z_cells:
            raise ValueError(f"z_p ({self.z_p}) must be >= grid z cells ({self.grid.z_cells})")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]


@dataclass
class _TrunkCtx:
    enc_ctxs: list
    enc_shapes: list
    pull: object
    dec_ctx: object


@dataclass
class _PullCtx:
    per_cam: list   # (uf, vf, use) per camera
    counts: np.ndarray
    enc_hw: tuple


class StudentNetwork:
    def __init__(self, config: StudentConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        n_in, n_i, n_b, n_y = config.n_in, config.n_i, config.n_b, config.n_y
        z_b = config.grid.z_cells

        self.encoder = nn.Sequential([
            nn.Conv2d(n_in, n_i, 3, rng, stride=2, dtype=dt),
            nn.InstanceNorm2d(),
            nn.ReLU(),
            nn.Conv2d(n_i, n_i, 3, rng, stride=2, dtype=dt),
            nn.InstanceNorm2d(),
            nn.ReLU(),
            nn.Conv2d(n_i, n_i, 3, rng, dtype=dt),
        ])
        self.bev_decoder = nn.Sequential([
            nn.Conv2d(n_i, n_b, 3, rng, dtype=dt),
            nn.InstanceNorm2d(),
            nn.ReLU(),
            nn.Conv2d(n_b, n_b, 3, rng, dtype=dt),
        ])
        self.unsplat_head = nn.Sequential([
            nn.Conv2d(n_b, n_b, 3, rng, dtype=dt),
            nn.InstanceNorm2d(),
            nn.ReLU(),
            nn.Conv2d(n_b, n_b * z_b, 1, rng, dtype=dt),
            nn.ChannelsToVolume(z_b),
            nn.PointwiseConv3d(n_b, 2 * n_b, rng, dtype=dt),
            nn.Softplus(),
            nn.PointwiseConv3d(2 * n_b, n_b, rng, dtype=dt),
        ])
        self.occ_head = nn.Sequential([
            nn.PointwiseConv3d(n_b, 1, rng, dtype=dt),
            nn.Sigmoid(),
        ])
        self.feat_head = nn.Sequential([
            nn.PointwiseConv3d(n_b, n_y, rng, dtype=dt),
        ])
        self.seg_head = nn.Sequential([
            nn.Conv2d(n_b, config.n_classes, 1, rng, dtype=dt),
        ])
        self._modules = [
            ("encoder", self.encoder),
            ("bev_decoder", self.bev_decoder),
            ("unsplat_head", self.unsplat_head),
            ("occ_head", self.occ_head),
            ("feat_head", self.feat_head),
            ("seg_head", self.seg_head),
        ]
        # fixed 3D sample lattice: the grid, z_p cells tall
        lattice_grid = replace(config.grid, z_cells=config.z_p)
        self._lattice = lattice_grid.centers().reshape(-1, 3)

    # -- parameter plumbing -------------------------------------------------

    def named_parameters(self) -> list:
        out = []
        for name, module in self._modules:
            out.extend(module.named_parameters(f"{name}."))
        return out

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def seg_parameters(self) -> list:
        """Everything the finetuning optimizer touches: the seg path only."""
        return (self.encoder.parameters() + self.bev_decoder.parameters()
                + self.seg_head.parameters())

    def pretrain_parameters(self, arms=("occ", "feat")) -> list:
        """Trunk + unsplat head + the heads of the enabled loss arms.

        Disabled heads stay out of the optimizer entirely, so even weight
        decay cannot move them.
        """
        params = (self.encoder.parameters() + self.bev_decoder.parameters()
                  + self.unsplat_head.parameters())
        if "occ" in arms:
            params += self.occ_head.parameters()
        if "feat" in arms:
            params += self.feat_head.parameters()
        return params

    # -- forward / backward -------------------------------------------------

    def _cast(self, x: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(x, dtype=self.config.np_dtype)

    def forward_trunk(self, images: list, cams: list):
        """images: per-camera [n_in, H, W] maps → (F_B, ctx)."""
        if len(images) != len(cams):
            raise ValueError(f"{len(images)} images but {len(cams)} cameras")
        feats, enc_ctxs = [], []
        for img in images:
            f, ctx = self.encoder.forward(self._cast(img))
            feats.append(f)
            enc_ctxs.append(ctx)
        h_enc, w_enc = feats[0].shape[1:]
        sample_cams = [cam.with_feature_dims(w_enc, h_enc) for cam in cams]

        m = self._lattice.shape[0]
        n_i = self.config.n_i
        accum = np.zeros((m, n_i), dtype=self.config.np_dtype)
        counts = np.zeros(m)
        per_cam = []
        for cam, fmap in zip(sample_cams, feats):
            uv, _, valid = project_points(self._lattice, cam)
            uf, vf = pixel_to_feature(uv[:, 0], uv[:, 1], cam)
            vals, inb = bilinear_sample_many(fmap, uf, vf)
            use = valid & inb
            accum[use] += vals[use]
            counts += use
            per_cam.append((uf, vf, use))
        scale = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
        pooled = accum * scale[:, None].astype(self.config.np_dtype)

        z_p = self.config.z_p
        h_b, w_b = self.config.grid.h_cells, self.config.grid.w_cells
        volume = pooled.reshape(z_p, h_b, w_b, n_i).transpose(3, 0, 1, 2)
        bev_in = volume.mean(axis=1)  # plain mean over the vertical axis

        f_b, dec_ctx = self.bev_decoder.forward(bev_in)
        pull_ctx = _PullCtx(per_cam, counts, (h_enc, w_enc))
        return f_b, _TrunkCtx(enc_ctxs, [f.shape for f in feats], pull_ctx, dec_ctx)

    def backward_trunk(self, ctx: _TrunkCtx, g_fb: np.ndarray) -> None:
        g_bev = self.bev_decoder.backward(ctx.dec_ctx, g_fb)
        z_p = self.config.z_p
        n_i = self.config.n_i
        # vertical mean: every lattice level shares the BEV gradient / z_p
        g_vol = np.repeat((g_bev / z_p)[:, None], z_p, axis=1)
        g_points = g_vol.transpose(1, 2, 3, 0).reshape(-1, n_i)
        scale = np.where(ctx.pull.counts > 0, 1.0 / np.maximum(ctx.pull.counts, 1.0), 0.0)
        g_points = g_points * scale[:, None].astype(g_points.dtype)
        h_enc, w_enc = ctx.pull.enc_hw
        for (uf, vf, use), enc_ctx in zip(ctx.pull.per_cam, ctx.enc_ctxs):
            g_vals = g_points * use[:, None]
            g_feat = bilinear_scatter((n_i, h_enc, w_enc), uf, vf, g_vals)
            self.encoder.backward(enc_ctx, g_feat)

    def forward_pretrain(self, images: list, cams: list):
        """→ (occupancy probabilities [Z,H,W], predicted features
        [N_y,Z,H,W], ctx for backward_pretrain)."""
        f_b, trunk_ctx = self.forward_trunk(images, cams)
        f_v, uns_ctx = self.unsplat_head.forward(f_b)
        occ_map, occ_ctx = self.occ_head.forward(f_v)
        y_hat, feat_ctx = self.feat_head.forward(f_v)
        ctx = (trunk_ctx, uns_ctx, occ_ctx, feat_ctx, f_v.shape)
        return occ_map[0], y_hat, ctx

    def backward_pretrain(self, ctx, g_occ, g_y) -> None:
        """Either gradient may be None (a disabled loss arm)."""
        trunk_ctx, uns_ctx, occ_ctx, feat_ctx, fv_shape = ctx
        g_fv = np.zeros(fv_shape, dtype=self.config.np_dtype)
        if g_occ is not None:
            g_fv += self.occ_head.backward(occ_ctx, self._cast(g_occ)[None])
        if g_y is not None:
            g_fv += self.feat_head.backward(feat_ctx, self._cast(g_y))
        g_fb = self.unsplat_head.backward(uns_ctx, g_fv)
        self.backward_trunk(trunk_ctx, g_fb)

    def forward_seg(self, images: list, cams: list):
        """→ (class logits [K, H_B, W_B], ctx for backward_seg)."""
        f_b, trunk_ctx = self.forward_trunk(images, cams)
        logits, seg_ctx = self.seg_head.forward(f_b)
        return logits, (trunk_ctx, seg_ctx)

    def backward_seg(self, ctx, g_logits) -> None:
        trunk_ctx, seg_ctx = ctx
        g_fb = self.seg_head.backward(seg_ctx, self._cast(g_logits))
        self.backward_trunk(trunk_ctx, g_fb)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _config_kv(student: StudentNetwork) -> dict:
    cfg = student.config
    return {
        "grid": grid_to_text(cfg.grid),
        "n_in": str(cfg.n_in), "n_i": str(cfg.n_i), "n_b": str(cfg.n_b),
        "n_y": str(cfg.n_y), "n_classes": str(cfg.n_classes),
        "z_p": str(cfg.z_p), "dtype": cfg.dtype, "seed": str(student.seed),
    }


def save_checkpoint(directory: str, student: StudentNetwork) -> None:
    """Write config.txt + manifest.txt + one OFT1 file per parameter."""
    import os
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "config.txt"), "w") as fh:
        fh.write(format_kv(_config_kv(student)))
    named = student.named_parameters()
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        for name, p in named:
            dims = " ".join(str(d) for d in p.value.shape)
            fh.write(f"{name} {dims}\n")
    for name, p in named:
        write_tensor(os.path.join(directory, f"{name}.oft"), p.value)


def load_checkpoint(directory: str, drop_pretrain_head: bool = False,
                    dtype: str | None = None) -> StudentNetwork:
    """Rebuild the student and load parameters.

    With ``drop_pretrain_head`` the unsplat/occupancy/feature heads keep
    their fresh seeded initialization instead of the stored weights —
    the on-disk equivalent of deleting them after pretraining.  ``dtype``
    overrides the stored precision (parameters are cast on load).
    """
    import os
    kv = parse_kv_text(open(os.path.join(directory, "config.txt")).read(),
                       source=os.path.join(directory, "config.txt"))
    cfg = StudentConfig(
        grid=grid_from_text(kv["grid"]),
        n_in=int(kv["n_in"]), n_i=int(kv["n_i"]), n_b=int(kv["n_b"]),
        n_y=int(kv["n_y"]), n_classes=int(kv["n_classes"]),
        z_p=int(kv["z_p"]), dtype=dtype or kv["dtype"],
    )
    student = StudentNetwork(cfg, seed=int(kv["seed"]))
    params = dict(student.named_parameters())

    manifest_path = os.path.join(directory, "manifest.txt")
    listed = []
    with open(manifest_path) as fh:
        for line in fh:
            if line.strip():
                listed.append(line.split()[0])
    if set(listed) != set(params):
        raise ValueError(f"{manifest_path}: parameter names do not match this architecture")

    for name in listed:
        if drop_pretrain_head and name.startswith(PRETRAIN_HEADS):
            continue
        value = read_tensor(os.path.join(directory, f"{name}.oft"))
        p = params[name]
        if value.shape != p.value.shape:
            raise ValueError(f"{name}: stored shape {value.shape} != expected {p.value.shape}")
        p.value = value.astype(cfg.np_dtype, copy=False)
        p.grad = np.zeros_like(p.value)
    return student
