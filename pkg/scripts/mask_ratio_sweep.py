"""Pretrain at several masking ratios, then fine-tune and score each encoder.

Example: python3 scripts/mask_ratio_sweep.py --out runs/mask_sweep --epochs 20 --ft-epochs 10
"""

import argparse
import csv
import logging
import math
from pathlib import Path

from edgemae.config import EdgeMaeConfig, MtNetConfig
from edgemae.phantom import DatasetManifest, generate_dataset
from edgemae.train import PretrainData, evaluate_set, finetune_run, paired_arrays, pretrain_run, set_deterministic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.4, 0.5, 0.6, 0.7, 0.8])
    ap.add_argument("--n-train", type=int, default=32)
    ap.add_argument("--n-test", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--ft-epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    set_deterministic(1)

    data_dir = args.out / "data"
    if not (data_dir / "manifest.tsv").exists():
        generate_dataset(args.seed, args.n_train, args.n_test, 64, data_dir)
    manifest = DatasetManifest.read(data_dir)
    data = PretrainData.from_manifest(manifest)
    _, src, tgt = paired_arrays(manifest, "A2B")

    rows = []
    for ratio in args.ratios:
        cfg = EdgeMaeConfig(mask_ratio=ratio, epochs=args.epochs, stage_switch_epoch=args.epochs // 2)
        losses = []
        enc = pretrain_run(cfg, data, args.seed, callback=lambda e, loss, m: losses.append(loss))
        synth = finetune_run(MtNetConfig(epochs=args.ft_epochs), enc, src, tgt, args.seed)
        report, _ = evaluate_set(synth, manifest, "A2B")
        agg = report.aggregate()
        finite = all(math.isfinite(v) for v in losses)
        rows.append([ratio, losses[-1], finite, *agg["psnr_db"], *agg["ssim"]])
        print(f"ratio {ratio:.2f}  final loss {losses[-1]:.4f}  finite={finite}  {report.summary()}")

    with open(args.out / "mask_ratio_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mask_ratio", "final_pretrain_loss", "all_finite", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
