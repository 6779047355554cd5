"""Training loops: pretraining, label-fraction finetuning, and the
ablation/λ-sweep runner.

All loops are plain SGD-style epochs over an in-memory sample cache;
batch gradients are averaged sample by sample in manifest order, so
every run is bit-reproducible from (config, seed) at fixed precision.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .dataset import Dataset, has_targets, read_dataset, read_targets
from .losses import (LossBreakdown, cross_entropy_loss, distillation_loss,
                     occupancy_loss, total_loss)
from .optim import Adam
from .student import StudentConfig, StudentNetwork, load_checkpoint
from .world import SEG_CLASSES

__all__ = [
    "MetricsReport", "iou", "train_val_split", "label_subset",
    "pretrain", "finetune", "evaluate_seg", "ablate", "ablation_table_csv",
    "DEFAULT_LAMBDA_SWEEP",
]

DEFAULT_LAMBDA_SWEEP = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)


@dataclass
class MetricsReport:
    per_class_iou: dict
    mean_iou: float
    losses: list          # per-step training loss values
    wall_clock: float


def iou(pred_labels: np.ndarray, true_labels: np.ndarray, class_id: int) -> float:
    """Intersection over union of one class's masks; 1.0 if both empty."""
    if pred_labels.shape != true_labels.shape:
        raise ValueError(f"shape mismatch {pred_labels.shape} vs {true_labels.shape}")
    p = pred_labels == class_id
    t = true_labels == class_id
    union = int(np.logical_or(p, t).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


def train_val_split(ids: list, val_count: int):
    """Validation = the last ``val_count`` manifest entries."""
    if val_count < 0 or val_count >= len(ids):
        raise ValueError(f"val_count {val_count} leaves no training samples "
                         f"(dataset has {len(ids)})")
    if val_count == 0:
        return list(ids), []
    return list(ids[:-val_count]), list(ids[-val_count:])


def label_subset(train_ids: list, fraction: float, seed: int) -> list:
    """Seed-stable, nested label-fraction subsets.

    The subset is a prefix of one seeded permutation, so the 1% subset
    is contained in the 10% subset is contained in the full set.
    """
    n = max(1, round(fraction * len(train_ids)))
    perm = np.random.default_rng([seed, 0x5AB5E7]).permutation(len(train_ids))
    return [train_ids[i] for i in perm[:n]]


class _SampleCache:
    """Loads each sample (and optionally its targets) from disk once."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        self._samples: dict = {}
        self._targets: dict = {}

    def sample(self, sid: str):
        if sid not in self._samples:
            self._samples[sid] = self.ds.load_sample(sid)
        return self._samples[sid]

    def targets(self, sid: str):
        if sid not in self._targets:
            if not has_targets(self.ds.directory, sid):
                raise FileNotFoundError(
                    f"sample {sid}: pretraining targets missing in {self.ds.directory} "
                    f"(run the targets command first)")
            self._targets[sid] = read_targets(self.ds.directory, sid)
        return self._targets[sid]


def _batches(ids: list, batch_size: int, epochs: int, seed: int):
    rng = np.random.default_rng([seed, 0xB47C4])
    for _ in range(epochs):
        order = [ids[i] for i in rng.permutation(len(ids))]
        for start in range(0, len(order), batch_size):
            yield order[start:start + batch_size]


def _build_student(cfg: RunConfig, ds: Dataset, cache: _SampleCache) -> StudentNetwork:
    probe = cache.sample(ds.ids[0])
    n_y = probe.teacher_maps[0].shape[0]
    scfg = StudentConfig(grid=ds.grid, n_in=n_y, n_i=cfg.n_i, n_b=cfg.n_b,
                         n_y=n_y, n_classes=SEG_CLASSES, dtype=cfg.precision)
    return StudentNetwork(scfg, seed=cfg.seed)


def pretrain(cfg: RunConfig, cache: _SampleCache | None = None):
    """Minimize the pretraining objective over the enabled loss arms.

    Returns (student, rows) where rows = [(step, LossBreakdown), ...];
    both loss terms are always evaluated and logged, but only enabled
    arms contribute gradient.
    """
    if not cfg.arms:
        raise ValueError("pretraining needs at least one enabled loss arm")
    ds = read_dataset(cfg.data)
    cache = cache or _SampleCache(ds)
    train_ids, _ = train_val_split(ds.ids, cfg.val_count)
    for sid in train_ids:
        cache.targets(sid)  # fail fast on missing target files

    student = _build_student(cfg, ds, cache)
    opt = Adam(student.pretrain_parameters(cfg.arms), lr=cfg.lr,
               weight_decay=cfg.weight_decay)
    rows = []
    step = 0
    for batch in _batches(train_ids, cfg.batch_size, cfg.epochs, cfg.seed):
        opt.zero_grad()
        b = len(batch)
        lo_sum = lf_sum = 0.0
        n_vox = n_occ = n_val = 0
        for sid in batch:
            sample = cache.sample(sid)
            occ, tgt = cache.targets(sid)
            occ_hat, y_hat, ctx = student.forward_pretrain(sample.teacher_maps,
                                                           sample.cameras)
            l_occ, g_occ = occupancy_loss(occ_hat, occ.data)
            l_feat, g_feat = distillation_loss(y_hat, tgt.features, tgt.valid_mask)
            student.backward_pretrain(
                ctx,
                g_occ / b if "occ" in cfg.arms else None,
                (cfg.lam / b) * g_feat if "feat" in cfg.arms else None,
            )
            lo_sum += l_occ
            lf_sum += l_feat
            n_vox += occ.data.size
            n_occ += occ.n_occupied
            n_val += tgt.n_valid
        rows.append((step, total_loss(lo_sum / b, lf_sum / b, cfg.lam,
                                      n_voxels=n_vox, n_occupied=n_occ, n_valid=n_val)))
        opt.step()
        step += 1
    return student, rows


def evaluate_seg(student: StudentNetwork, cache: _SampleCache, ids: list) -> dict:
    """Per-class IoU over a sample set (counts aggregated across samples)."""
    preds, trues = [], []
    for sid in ids:
        sample = cache.sample(sid)
        logits, _ = student.forward_seg(sample.teacher_maps, sample.cameras)
        preds.append(np.argmax(logits, axis=0))
        trues.append(sample.bev_labels)
    pred = np.stack(preds)
    true = np.stack(trues)
    return {"background": iou(pred, true, 0), "vehicle": iou(pred, true, 1)}


def finetune(cfg: RunConfig, drop_heads: bool = True,
             cache: _SampleCache | None = None,
             eval_ids: list | None = None):
    """Train the segmentation path and report IoU on the validation split.

    With ``cfg.ckpt`` set the student starts from that checkpoint
    (pretraining heads dropped unless ``drop_heads`` is False); without
    it the run is the no-pretraining baseline with a fresh seeded init.
    Only seg-path parameters (encoder, BEV decoder, seg head) are
    optimized.  Returns (student, MetricsReport).
    """
    t0 = time.perf_counter()
    ds = read_dataset(cfg.data)
    cache = cache or _SampleCache(ds)
    train_ids, val_ids = train_val_split(ds.ids, cfg.val_count)
    subset = label_subset(train_ids, cfg.fraction, cfg.seed)

    if cfg.ckpt:
        student = load_checkpoint(cfg.ckpt, drop_pretrain_head=drop_heads,
                                  dtype=cfg.precision)
    else:
        student = _build_student(cfg, ds, cache)

    opt = Adam(student.seg_parameters(), lr=cfg.finetune_lr,
               weight_decay=cfg.weight_decay)
    losses = []
    for batch in _batches(subset, cfg.batch_size, cfg.finetune_epochs, cfg.seed):
        opt.zero_grad()
        b = len(batch)
        batch_loss = 0.0
        for sid in batch:
            sample = cache.sample(sid)
            logits, ctx = student.forward_seg(sample.teacher_maps, sample.cameras)
            l, g = cross_entropy_loss(logits, sample.bev_labels)
            student.backward_seg(ctx, g / b)
            batch_loss += l / b
        losses.append(batch_loss)
        opt.step()

    per_class = evaluate_seg(student, cache, eval_ids if eval_ids is not None else val_ids)
    report = MetricsReport(per_class_iou=per_class,
                           mean_iou=float(np.mean(list(per_class.values()))),
                           losses=losses,
                           wall_clock=time.perf_counter() - t0)
    return student, report


# ---------------------------------------------------------------------------
# ablation / λ sweep
# ---------------------------------------------------------------------------

def ablate(cfg: RunConfig, seeds: list, lambdas=DEFAULT_LAMBDA_SWEEP,
           workdir: str | None = None) -> list:
    """Run {none, occ, feat, both} x seeds plus the λ sweep.

    The feat-only arm pretrains with the distillation loss alone (λ = 1
    applied to its own term); λ-sweep entries reuse arm runs where the
    objective is identical (λ=0 ≡ occ-only for the shared trunk, and
    λ = cfg.lam ≡ both).  Returns one dict per (run, seed) plus median
    rows, ready for CSV.
    """
    import os
    import tempfile
    if len(seeds) < 3:
        raise ValueError("ablation needs at least 3 seeds")
    ds = read_dataset(cfg.data)
    cache = _SampleCache(ds)
    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="ablate-")
        workdir = tmp.name

    rows = []
    try:
        for seed in seeds:
            memo: dict = {}

            def run(arms: tuple, lam: float, seed=seed):
                # λ only matters when the feat arm is backpropagated
                key = (arms, lam if "feat" in arms else None)
                if key not in memo:
                    run_cfg = replace(cfg, seed=seed, arms=arms, lam=lam)
                    student, _ = pretrain(run_cfg, cache=cache)
                    ckpt = os.path.join(workdir, f"s{seed}-{'+'.join(arms)}-{lam:g}")
                    from .student import save_checkpoint
                    save_checkpoint(ckpt, student)
                    _, report = finetune(replace(run_cfg, ckpt=ckpt), cache=cache)
                    memo[key] = report
                return memo[key]

            def emit(kind, name, report, seed=seed):
                rows.append({
                    "kind": kind, "name": name, "seed": seed,
                    "iou_vehicle": report.per_class_iou["vehicle"],
                    "iou_background": report.per_class_iou["background"],
                    "miou": report.mean_iou,
                })

            _, none_report = finetune(replace(cfg, seed=seed, ckpt=""), cache=cache)
            emit("arm", "none", none_report)
            emit("arm", "occ", run(("occ",), cfg.lam))
            emit("arm", "feat", run(("feat",), 1.0))
            emit("arm", "both", run(("feat", "occ"), cfg.lam))
            for lam in lambdas:
                arms = ("occ",) if lam == 0.0 else ("feat", "occ")
                emit("lambda", f"{lam:g}", run(arms, lam))
    finally:
        if tmp is not None:
            tmp.cleanup()

    # median summary rows across seeds, in first-seen run order
    order = []
    for r in rows:
        if (r["kind"], r["name"]) not in order:
            order.append((r["kind"], r["name"]))
    for kind, name in order:
        group = [r for r in rows if (r["kind"], r["name"]) == (kind, name)]
        rows.append({
            "kind": kind, "name": name, "seed": "median",
            "iou_vehicle": float(np.median([r["iou_vehicle"] for r in group])),
            "iou_background": float(np.median([r["iou_background"] for r in group])),
            "miou": float(np.median([r["miou"] for r in group])),
        })
    return rows


def ablation_table_csv(rows: list) -> str:
    cols = ("kind", "name", "seed", "iou_vehicle", "iou_background", "miou")
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(str(r[c]) for c in cols))
    return "\n".join(lines) + "\n"
