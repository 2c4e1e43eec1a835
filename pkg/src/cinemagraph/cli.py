"""Command-line entry point: gen-data, train, generate, evaluate, ablate.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from . import config as C
from .checkpoint import CheckpointError
from .dataset import DatasetError, generate_dataset, load_dataset, read_manifest
from .evaluation import METRIC_GROUPS, ablation_run, constant_predictor, evaluate_predictors, model_predictor
from .gif import read_png, write_gif, write_pngs
from .synthetic import PatternKind, to_model_range, to_uint8
from .training import checkpoint_name, generate, load_state, train

log = logging.getLogger("cinemagraph")

BASELINES = ("constant", "stateless")


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _overrides(args: argparse.Namespace, keys: list[str]) -> dict:
    out = {k: getattr(args, k, None) for k in keys}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise C.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = C.parse_value(key.strip(), value)
    return out


def _resolve(args: argparse.Namespace, keys: list[str], base: dict | None = None) -> C.RunConfig:
    values = dict(base or {})
    if getattr(args, "config", None):
        values.update(C.load_config(args.config))
    return C.build(values, _overrides(args, keys))


def _csv_list(raw: str | None) -> tuple[str, ...] | None:
    if raw is None:
        return None
    return tuple(x.strip() for x in raw.split(",") if x.strip())


def _int_list(raw: str | None) -> tuple[int, ...] | None:
    if raw is None:
        return None
    try:
        return tuple(int(x) for x in raw.split(","))
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {raw!r}") from exc


def _dataset_info(data_dir: str) -> dict:
    manifest = Path(data_dir) / "manifest.txt"
    if not manifest.exists():
        raise RuntimeFailure(f"no dataset at {data_dir} (missing manifest.txt)")
    return read_manifest(manifest)


def _latest_checkpoint(out_dir: Path) -> Path | None:
    found = sorted(out_dir.glob("ckpt_*.bin"))
    return found[-1] if found else None


def _config_for_checkpoint(ckpt: Path, explicit: str | None) -> C.RunConfig:
    path = Path(explicit) if explicit else ckpt.parent / C.SNAPSHOT
    if not path.exists():
        raise RuntimeFailure(f"no run config for {ckpt} (looked for {path})")
    return C.build(C.load_config(path))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args: argparse.Namespace) -> int:
    try:
        kind = PatternKind.parse(args.kind) if args.kind is not None else None
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    args.kind = kind.value if kind else None
    args.image_size = args.size
    cfg = _resolve(args, ["kind", "count", "image_size", "seed", "out"])
    out = cfg.out or C.default_out("data")
    cfg.out = out
    size = (cfg.image_size, cfg.image_size)
    manifest = generate_dataset(PatternKind.parse(cfg.kind), cfg.count, size, cfg.seed, out)
    cfg.write(out)
    print(f"wrote {manifest['train_count']} train / {manifest['test_count']} test {cfg.kind} sequences "
          f"(seq_len {manifest['seq_len']}) to {out}")
    return 0


TRAIN_KEYS = [
    "data", "out", "variant", "iterations", "batch_size", "lambda_adv", "learning_rate", "seed", "channels",
    "z_dim", "q_dim", "horizon", "checkpoint_every", "profile", "rnn_q_slot",
    "init_std", "init_scheme",
]


def cmd_train(args: argparse.Namespace) -> int:
    args.channels = _int_list(args.channels)
    cfg = _resolve(args, TRAIN_KEYS)
    if not cfg.data:
        raise UsageError("train needs --data")
    info = _dataset_info(cfg.data)
    cfg.image_size = int(info["height"])
    cfg.kind = info["kind"]
    cfg.out = cfg.out or C.default_out("train")
    out = Path(cfg.out)
    model_cfg, train_cfg = cfg.model_config(), cfg.train_config()
    data = load_dataset(cfg.data, "train")

    state = None
    if args.resume:
        ckpt = _latest_checkpoint(out)
        if ckpt is None:
            raise RuntimeFailure(f"--resume: no checkpoint in {out}")
        state = load_state(ckpt, model_cfg)
        log.info("resuming from %s (iteration %d)", ckpt, state.iteration)
        losses = out / "losses.csv"
        if losses.exists():
            # drop rows written after the checkpoint we resume from
            lines = losses.read_text().splitlines(keepends=True)
            kept = [lines[0]] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= state.iteration]
            losses.write_text("".join(kept))
    cfg.write(out)
    state, records = train(data, model_cfg, train_cfg, out_dir=out, state=state)
    last = records[-1] if records else None
    if last is not None:
        print(f"iteration {last.iteration}: loss_total {last.loss_total:.6f} (mse {last.loss_mse:.6f}, "
              f"adv {last.loss_adv:.4f}, d {last.d_loss:.4f})")
    print(f"checkpoint {out / checkpoint_name(state.iteration)}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise RuntimeFailure(f"checkpoint {ckpt} not found")
    cfg = _config_for_checkpoint(ckpt, args.config)
    model_cfg = cfg.model_config()
    try:
        image = read_png(args.input)
    except OSError as exc:
        raise RuntimeFailure(f"cannot read input image {args.input}: {exc}") from exc
    if image.shape[:2] != (model_cfg.image_size, model_cfg.image_size):
        raise RuntimeFailure(f"input image is {image.shape[1]}x{image.shape[0]}, model expects "
                             f"{model_cfg.image_size}x{model_cfg.image_size}")
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    params = load_state(ckpt, model_cfg).params
    frames, actions = generate(params, model_cfg, to_model_range(image, model_cfg.dtype), args.n)
    frames = to_uint8(frames)

    out = Path(args.out or C.default_out("generate"))
    out.mkdir(parents=True, exist_ok=True)
    write_pngs(frames, out / "frames")
    write_gif(frames, out / "cinemagraph.gif")
    if actions is not None:
        (out / "actions.txt").write_text("\n".join(str(int(a)) for a in actions) + "\n")
    cfg.out = str(out)
    cfg.write(out)
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    metrics = _csv_list(args.metrics) or ("psnr", "ssim")
    bad = [m for m in metrics if m not in METRIC_GROUPS]
    if bad:
        raise UsageError(f"unknown metric(s) {', '.join(bad)}; choose from {', '.join(METRIC_GROUPS)}")
    baselines = _csv_list(args.baseline) or ()
    bad = [b for b in baselines if b not in BASELINES]
    if bad:
        raise UsageError(f"unknown baseline(s) {', '.join(bad)}; choose from {', '.join(BASELINES)}")
    if not args.checkpoint and not baselines:
        raise UsageError("nothing to evaluate: give --checkpoint and/or --baseline")
    if "stateless" in baselines and not args.checkpoint:
        raise UsageError("the stateless baseline needs a --checkpoint")

    _dataset_info(args.data)
    split = load_dataset(args.data, args.split)
    predictors = {}
    first = None
    for i, raw in enumerate(args.checkpoint or []):
        ckpt = Path(raw)
        if not ckpt.exists():
            raise RuntimeFailure(f"checkpoint {ckpt} not found")
        cfg = _config_for_checkpoint(ckpt, None)
        model_cfg = cfg.model_config()
        params = load_state(ckpt, model_cfg).params
        name = model_cfg.variant if model_cfg.variant not in predictors else f"{model_cfg.variant}_{i}"
        predictors[name] = model_predictor(params, model_cfg)
        if first is None:
            first = (params, model_cfg)
    if "stateless" in baselines:
        predictors["stateless"] = model_predictor(*first, stateless=True)
    if "constant" in baselines:
        predictors["constant"] = constant_predictor

    report = evaluate_predictors(predictors, split.frames, split.masks, split.kind.value, metrics)
    out = Path(args.out or C.default_out("evaluate"))
    csv_path, table_path = report.write(out)
    snapshot = C.RunConfig(data=args.data, out=str(out), kind=split.kind.value, metrics=metrics, baseline=baselines)
    snapshot.write(out)
    print(report.to_table(), end="")
    print(f"report: {csv_path}")
    return 0


def _parse_dims(raw: str) -> list[tuple[int, int]]:
    dims = []
    for item in raw.split(","):
        m = re.fullmatch(r"\s*(\d+)(?:x(\d+))?\s*", item)
        if not m:
            raise UsageError(f"bad --dims entry {item!r}; use Z or ZxN, e.g. 4,64 or 4x4,64x64")
        z = int(m.group(1))
        dims.append((z, int(m.group(2) or z)))
    return dims


def cmd_ablate(args: argparse.Namespace) -> int:
    args.channels = _int_list(args.channels)
    dims = _parse_dims(args.dims)
    cfg = _resolve(args, TRAIN_KEYS)
    if not cfg.data:
        raise UsageError("ablate needs --data")
    info = _dataset_info(cfg.data)
    cfg.image_size = int(info["height"])
    cfg.kind = info["kind"]
    cfg.out = cfg.out or C.default_out("ablate")
    cfg.write(cfg.out)
    rows = ablation_run(
        dims, load_dataset(cfg.data, "train"), load_dataset(cfg.data, "test"), cfg.model_config(), cfg.train_config(), cfg.out
    )
    print(f"{'Z':>6} {'N':>6} {'PSNR':>9} {'SSIM':>7}")
    for r in rows:
        print(f"{r.z_dim:>6} {r.q_dim:>6} {r.psnr:>9.4f} {r.ssim:>7.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--data", help="dataset directory written by gen-data")
    p.add_argument("--out", help="output directory")
    p.add_argument("--variant", choices=("rnn", "rnn_dqn", "stateless"))
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lambda-adv", dest="lambda_adv", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--channels", help="four comma-separated encoder widths")
    p.add_argument("--z-dim", dest="z_dim", type=int)
    p.add_argument("--q-dim", dest="q_dim", type=int)
    p.add_argument("--horizon", type=int, help="frames per rollout (0: sequence length - 1)")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--profile", choices=("synthetic", "real"), help="selects the default adversarial weight")
    p.add_argument("--rnn-q-slot", dest="rnn_q_slot", choices=("zero", "onehot"))
    p.add_argument("--init-std", dest="init_std", type=float, help="weight std for the normal init scheme")
    p.add_argument("--init-scheme", dest="init_scheme", choices=("normal", "fan_in"),
                   help="fan_in scales each tensor's std by its fan-in (useful for narrow desk widths)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cinemagraph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--kind", help=f"pattern: {', '.join(k.value for k in PatternKind)}")
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int, help="frame side length in pixels")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a generator")
    _add_train_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="roll out frames from one image; writes a GIF and PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="run config (default: run_config.txt next to the checkpoint)")
    p.add_argument("--input", required=True, help="RGB PNG with the model's frame size")
    p.add_argument("--n", type=int, default=21)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score checkpoints and baselines on a dataset split")
    p.add_argument("--checkpoint", nargs="*", default=[])
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--metrics", default="psnr,ssim", help=f"comma list from {', '.join(METRIC_GROUPS)}")
    p.add_argument("--baseline", help=f"comma list from {', '.join(BASELINES)}")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="sweep latent and action sizes")
    _add_train_flags(p)
    p.add_argument("--dims", default="4,64", help="Z or ZxN entries, comma separated")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, C.ConfigError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeFailure, DatasetError, CheckpointError, OSError, ValueError, FloatingPointError) as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - never surface a traceback to the shell
        print(f"{parser.prog} {args.command}: unexpected failure: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
