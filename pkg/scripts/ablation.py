"""Sweep latent size Z and action count N on one pattern; thin wrapper over `cinemagraph ablate`."""
import argparse
import sys

from cinemagraph.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", required=True, help="dataset from `cinemagraph gen-data`")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--dims", default="4x4,16x16,64x64")
    ap.add_argument("--iterations", type=int, default=1000)
    ap.add_argument("--channels", default="8,16,32,64")
    args = ap.parse_args()
    return cli_main([
        "ablate", "--data", args.data, "--out", args.out, "--dims", args.dims, "--iterations", str(args.iterations),
        "--batch-size", "16", "--channels", args.channels, "--init-scheme", "fan_in", "--variant", "rnn_dqn",
    ])


if __name__ == "__main__":
    sys.exit(main())
