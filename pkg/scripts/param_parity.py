"""Group/regular parameter counts across base widths, both skip modes.

    python scripts/param_parity.py [--bases 16 32 64] [--out runs/param_parity.json]
"""
import argparse
import json
from pathlib import Path

from gerunet.models import ModelConfig, build_ger_unet, build_regular_runet, count_parameters, scale_width


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--bases", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--out")
    args = ap.parse_args()

    rows = []
    print(f"{'skip':7s} {'base':>5s} {'group w':>8s} {'GER-UNet':>11s} {'R-UNet':>11s} {'ratio':>7s}")
    for skip in ("add", "concat"):
        for base in args.bases:
            cfg = ModelConfig(base_channels=base, skip_mode=skip)
            g = count_parameters(build_ger_unet(cfg))[0]
            r = count_parameters(build_regular_runet(cfg))[0]
            rows.append({"skip_mode": skip, "base_channels": base, "group_width": scale_width(base),
                         "ger_unet": g, "r_unet": r, "ratio": g / r})
            print(f"{skip:7s} {base:5d} {scale_width(base):8d} {g:11,d} {r:11,d} {g / r:7.3f}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
