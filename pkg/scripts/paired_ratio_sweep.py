"""Fine-tune one pretrained encoder with growing fractions of paired training data.

Example: python3 scripts/paired_ratio_sweep.py --out runs/paired_sweep --epochs 20 --ft-epochs 10
"""

import argparse
import csv
import logging
from pathlib import Path

from edgemae.config import EdgeMaeConfig, MtNetConfig
from edgemae.phantom import DatasetManifest, generate_dataset, split_dataset
from edgemae.train import PretrainData, evaluate_set, finetune_run, paired_arrays, pretrain_run, set_deterministic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.1, 0.2, 0.4, 0.7, 1.0])
    ap.add_argument("--n-train", type=int, default=40)
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
    # pretraining sees every train image, paired or not
    cfg = EdgeMaeConfig(epochs=args.epochs, stage_switch_epoch=args.epochs // 2)
    enc = pretrain_run(cfg, PretrainData.from_manifest(manifest), args.seed)

    rows = []
    for ratio in args.ratios:
        subset = split_dataset(manifest, ratio)
        ids, src, tgt = paired_arrays(subset, "A2B")
        synth = finetune_run(MtNetConfig(epochs=args.ft_epochs, paired_ratio=ratio), enc, src, tgt, args.seed)
        report, _ = evaluate_set(synth, subset, "A2B")
        agg = report.aggregate()
        rows.append([ratio, len(ids), *agg["psnr_db"], *agg["nmse"], *agg["ssim"]])
        print(f"paired ratio {ratio:.2f} ({len(ids)} pairs)  {report.summary()}")

    with open(args.out / "paired_ratio_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["paired_ratio", "pairs", "psnr_mean", "psnr_std", "nmse_mean", "nmse_std", "ssim_mean", "ssim_std"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
