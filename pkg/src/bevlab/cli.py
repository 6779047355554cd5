"""Command-line entry point.

Subcommands cover the full pipeline: ``gen`` (synthesize a dataset),
``targets`` (occupancy + feature targets), ``pretrain``, ``finetune``,
``ablate`` (loss-arm and λ-sweep tables), ``gradcheck`` (finite-
difference verification), and ``viz-pca`` / ``viz-corr`` (PPM feature
visualizations).  Flags override config-file values.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import load_run_config
from .dataset import read_dataset, sample_id, write_dataset, write_targets
from .losses import write_loss_log
from .student import load_checkpoint, save_checkpoint
from .targets import build_feature_targets, voxelize
from .train import (DEFAULT_LAMBDA_SWEEP, ablate, ablation_table_csv, finetune,
                    pretrain)
from .verify import gradient_suite
from .viz import fit_pca, render_correlation, render_pca_topview, write_image
from .world import TeacherEmbedding, WorldConfig, build_sample, generate_scene


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--data", default=None, help="dataset directory")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--precision", choices=("f32", "f64"), default=None)


def _overrides(args, extra: dict | None = None) -> dict:
    out = {}
    for key in ("seed", "data", "epochs", "precision"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = str(value)
    if extra:
        out.update({k: str(v) for k, v in extra.items() if v is not None})
    return out


def _cmd_gen(args) -> int:
    wcfg = WorldConfig()
    embedding = TeacherEmbedding.make(wcfg.n_y, seed=args.seed)
    samples = []
    for i in range(args.n):
        scene_seed = args.seed * 1_000_003 + i
        scene = generate_scene(scene_seed, wcfg)
        samples.append((sample_id(i),
                        build_sample(scene, wcfg, embedding, seed=[scene_seed, 1])))
    write_dataset(args.out, samples, wcfg.grid)
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def _cmd_targets(args) -> int:
    ds = read_dataset(args.data)
    for sid in ds.ids:
        sample = ds.load_sample(sid)
        occ = voxelize(sample.point_cloud, ds.grid)
        tgt = build_feature_targets(occ, ds.grid, sample.cameras, sample.teacher_maps)
        write_targets(args.data, sid, occ, tgt)
    print(f"wrote targets for {len(ds.ids)} samples in {args.data}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = load_run_config(args.config, _overrides(args, {
        "arms": args.arms, "lambda": args.lam, "lr": args.lr,
    }))
    student, rows = pretrain(cfg)
    save_checkpoint(args.out, student)
    write_loss_log(os.path.join(args.out, "log.csv"), rows)
    final = rows[-1][1]
    print(f"pretrained {cfg.epochs} epochs on {cfg.data} (arms={','.join(cfg.arms)})")
    print(f"final losses: occ {final.l_occ:.6f}  feat {final.l_feat:.6f}  "
          f"total {final.total:.6f}")
    print(f"checkpoint: {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = load_run_config(args.config, _overrides(args, {
        "ckpt": args.ckpt, "fraction": args.fraction,
        "finetune_lr": args.lr,
    }))
    _, report = finetune(cfg, drop_heads=not args.keep_pretrain_head)
    for name, value in report.per_class_iou.items():
        print(f"iou_{name} = {value:.4f}")
    print(f"miou = {report.mean_iou:.4f}")
    print(f"wall_clock = {report.wall_clock:.1f}s")
    if args.out:
        with open(args.out, "w") as fh:
            for name, value in report.per_class_iou.items():
                fh.write(f"iou_{name} = {value!r}\n")
            fh.write(f"miou = {report.mean_iou!r}\n")
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    seeds = [int(s) for s in args.seeds.split(",")]
    lambdas = (tuple(float(x) for x in args.lambdas.split(","))
               if args.lambdas else DEFAULT_LAMBDA_SWEEP)
    rows = ablate(cfg, seeds, lambdas)
    with open(args.out, "w") as fh:
        fh.write(ablation_table_csv(rows))
    print(f"ablation table: {args.out}")
    for r in rows:
        if r["seed"] == "median":
            print(f"  {r['kind']:6s} {r['name']:6s} median vehicle IoU "
                  f"{r['iou_vehicle']:.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = gradient_suite(range(args.seeds), include_student=not args.skip_student)
    worst = max(results, key=lambda nr: nr[1].max_rel_err)
    failures = [(n, r) for n, r in results if not r.passed]
    if args.verbose:
        for name, report in results:
            print(f"{'PASS' if report.passed else 'FAIL'} {name}: "
                  f"max rel err {report.max_rel_err:.3e}")
    print(f"{len(results)} checks over {args.seeds} seeds; "
          f"worst {worst[0]} at rel err {worst[1].max_rel_err:.3e}")
    for name, report in failures:
        print(f"FAIL {name}: {report.summary()}")
    print("gradient suite: " + ("PASS" if not failures else "FAIL"))
    return 0 if not failures else 1


def _scene_features(ckpt: str, data: str, sid: str):
    ds = read_dataset(data)
    student = load_checkpoint(ckpt)
    sample = ds.load_sample(sid)
    occ = voxelize(sample.point_cloud, ds.grid)
    _, y_hat, _ = student.forward_pretrain(sample.teacher_maps, sample.cameras)
    return ds, occ, np.asarray(y_hat, dtype=np.float64)


def _cmd_viz_pca(args) -> int:
    ds, occ, y_hat = _scene_features(args.ckpt, args.data, args.scene)
    basis_occ, basis_y = occ, y_hat
    if args.basis_from:
        _, basis_occ, basis_y = _scene_features(args.ckpt, args.data, args.basis_from)
    rows = basis_y[:, basis_occ.data > 0].T
    basis = fit_pca(rows)
    image = render_pca_topview(y_hat, occ.data, basis, ds.grid)
    write_image(image, args.out)
    print(f"pca view of scene {args.scene} -> {args.out}")
    return 0


def _cmd_viz_corr(args) -> int:
    ds, occ, y_hat = _scene_features(args.ckpt, args.data, args.scene)
    query = tuple(int(x) for x in args.query.split(","))
    if len(query) != 3:
        raise SystemExit(f"--query expects k,i,j, got {args.query!r}")
    image = render_correlation(y_hat, query, occ.data, ds.grid)
    write_image(image, args.out)
    print(f"correlation view of scene {args.scene} @ {query} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevlab",
        description="Synthetic BEV pretraining sandbox: data, training, verification, viz.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--out", required=True, help="dataset directory")
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("targets", help="build occupancy + feature targets")
    p.add_argument("--data", required=True)
    p.set_defaults(fn=_cmd_targets)

    p = sub.add_parser("pretrain", help="self-supervised BEV pretraining")
    _add_config_overrides(p)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--arms", default=None, help="loss arms, e.g. occ,feat")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="feature-loss weight")
    p.add_argument("--lr", type=float, default=None, help="learning rate")
    p.set_defaults(fn=_cmd_pretrain)

    p = sub.add_parser("finetune", help="segmentation finetuning + IoU report")
    _add_config_overrides(p)
    p.add_argument("--ckpt", default=None, help="pretrained checkpoint directory")
    p.add_argument("--fraction", type=float, default=None, help="label fraction")
    p.add_argument("--lr", type=float, default=None, help="finetuning learning rate")
    p.add_argument("--out", default=None, help="write IoU report to this file")
    head = p.add_mutually_exclusive_group()
    head.add_argument("--drop-pretrain-head", dest="keep_pretrain_head",
                      action="store_false", default=False,
                      help="drop pretraining heads on load (default)")
    head.add_argument("--keep-pretrain-head", dest="keep_pretrain_head",
                      action="store_true")
    p.set_defaults(fn=_cmd_finetune)

    p = sub.add_parser("ablate", help="loss-arm ablation and λ sweep")
    _add_config_overrides(p)
    p.add_argument("--seeds", required=True, help="comma-separated, e.g. 0,1,2")
    p.add_argument("--lambdas", default=None,
                   help=f"λ sweep values (default {','.join(str(v) for v in DEFAULT_LAMBDA_SWEEP)})")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seeds", type=int, default=20, help="number of random seeds")
    p.add_argument("--skip-student", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("viz-pca", help="PCA-colored top view of predicted features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scene", required=True, help="sample id")
    p.add_argument("--basis-from", default=None,
                   help="fit the color basis on this scene instead")
    p.add_argument("--out", required=True, help="output PPM path")
    p.set_defaults(fn=_cmd_viz_pca)

    p = sub.add_parser("viz-corr", help="feature-correlation top view")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scene", required=True, help="sample id")
    p.add_argument("--query", required=True, help="query voxel k,i,j")
    p.add_argument("--out", required=True, help="output PPM path")
    p.set_defaults(fn=_cmd_viz_corr)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
