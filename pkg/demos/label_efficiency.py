"""How much does pretraining buy at different label budgets?

Finetunes the demo checkpoint at three label fractions against a
no-pretraining baseline and prints vehicle IoU for each. Expect the
pretrained column to pull ahead hardest at the smallest fraction.
Run build_dataset.py and pretrain_curves.py first.

Note: with 12 samples this is directional only; the ablation harness
(`bevlab ablate`) is the multi-seed version of this table.
"""
import os

from bevlab import RunConfig, finetune

HERE = os.path.join(os.path.dirname(__file__), "out")
CKPT = os.path.join(HERE, "ckpt")
FRACTIONS = (0.1, 0.5, 1.0)

base = dict(data=os.path.join(HERE, "dataset"), val_count=2,
            finetune_epochs=60, seed=0)

print(f"{'fraction':>8} {'pretrained':>11} {'scratch':>8}")
for fraction in FRACTIONS:
    _, rep_pre = finetune(RunConfig(ckpt=CKPT, fraction=fraction, **base))
    _, rep_raw = finetune(RunConfig(ckpt="", fraction=fraction, **base))
    print(f"{fraction:8.2f} {rep_pre.per_class_iou['vehicle']:11.3f} "
          f"{rep_raw.per_class_iou['vehicle']:8.3f}")
