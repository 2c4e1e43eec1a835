"""Train RNN and RNN+DQN on each synthetic pattern and tabulate held-out PSNR/SSIM.

Desk-scale defaults; pass --channels 64,128,256,512 --size 64 --iterations 6000
for the full-width setting (expect days on CPU).
"""
import argparse
from pathlib import Path

from cinemagraph.dataset import generate_dataset, load_dataset
from cinemagraph.evaluation import constant_predictor, evaluate_predictors, model_predictor
from cinemagraph.model import ModelConfig
from cinemagraph.synthetic import PatternKind
from cinemagraph.training import TrainConfig, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/synthetic_table")
    ap.add_argument("--kinds", default=",".join(k.value for k in PatternKind))
    ap.add_argument("--count", type=int, default=2000)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--channels", default="8,16,32,64")
    ap.add_argument("--iterations", type=int, default=1000)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--init-scheme", default="fan_in", choices=("normal", "fan_in"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    channels = tuple(int(c) for c in args.channels.split(","))
    lines = ["kind     method     psnr     ssim  diff_psnr"]
    for kind in args.kinds.split(","):
        data_dir = out / f"data_{kind}"
        if not (data_dir / "manifest.txt").exists():
            generate_dataset(kind, args.count, (args.size, args.size), args.seed, data_dir)
        train_split, test_split = load_dataset(data_dir, "train"), load_dataset(data_dir, "test")
        predictors = {"constant": constant_predictor}
        for variant in ("rnn", "rnn_dqn"):
            model_cfg = ModelConfig(image_size=args.size, channels=channels, variant=variant, init_scheme=args.init_scheme)
            train_cfg = TrainConfig(batch_size=args.batch_size, iterations=args.iterations, seed=args.seed,
                                    checkpoint_every=max(args.iterations // 4, 1))
            state, _ = train(train_split, model_cfg, train_cfg, out_dir=out / f"{kind}_{variant}")
            predictors[variant] = model_predictor(state.params, model_cfg)
            if variant == "rnn":
                predictors["stateless"] = model_predictor(state.params, model_cfg, stateless=True)
        report = evaluate_predictors(predictors, test_split.frames, test_split.masks, kind)
        report.write(out, stem=f"report_{kind}")
        for agg in report.aggregates():
            lines.append(f"{kind:<8} {agg['method']:<10} {agg['psnr']:>6.3f} {agg['ssim']:>8.4f} {agg['diff_psnr']:>10.3f}")
        print("\n".join(lines[-len(predictors):]), flush=True)
    (out / "table.txt").write_text("\n".join(lines) + "\n")
    print(f"table: {out / 'table.txt'}")


if __name__ == "__main__":
    main()
