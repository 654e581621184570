"""Run the desk-scale GER-UNet vs R-UNet experiment and write results JSON.

    python scripts/desk_scale.py --out runs/desk_scale.json [--epochs 30] [--lr 2e-4]
"""
import argparse
import json
import logging
from pathlib import Path

from gerunet.experiment import DeskConfig, run
from gerunet.training import TrainConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/desk_scale.json")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=2e-4)
    ap.add_argument("--patience", type=int, default=20)
    ap.add_argument("--base-channels", type=int, default=16)
    ap.add_argument("--arch", nargs="+", default=["ger-unet", "r-unet"])
    ap.add_argument("--n-trainval", type=int, default=250)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = DeskConfig(base_channels=args.base_channels, archs=tuple(args.arch), n_trainval=args.n_trainval,
                     train=TrainConfig(epochs_max=args.epochs, lr=args.lr, early_stop_patience=args.patience))
    res = run(cfg)
    for m in res["models"].values():
        m.pop("_model")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(res, indent=2))
    for arch, m in res["models"].items():
        print(f"{arch:9s} params={m['params']:8d} test_dice={m['test']['dice']:.4f} "
              f"transformed={m['test_transformed']['dice']:.4f} epochs={m['epochs_run']} "
              f"time={m['train_seconds']:.0f}s")


if __name__ == "__main__":
    main()
