"""Losses and the joint generator/discriminator training loop."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from . import tensor as T
from .dataset import PackedSplit
from .model import ModelConfig, Params, discriminate, frozen, init_params, rollout, rollout_stateless
from .optim import AdamState, adam_step, zero_grads
from .synthetic import to_model_range
from .tensor import Tensor

log = logging.getLogger(__name__)

PROB_EPS = 1e-7
LAMBDA_ADV = {"synthetic": 0.005, "real": 0.05}


@dataclass
class TrainConfig:
    learning_rate: float = 0.0002
    batch_size: int = 64
    iterations: int = 6000
    lambda_adv: float = LAMBDA_ADV["synthetic"]
    # number of generated frames per rollout; 0 means sequence length - 1
    horizon: int = 0
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LossRecord:
    iteration: int
    loss_mse: float
    loss_adv: float
    loss_total: float
    d_loss: float

    FIELDS = ("iteration", "loss_mse", "loss_adv", "loss_total", "d_loss")

    def row(self) -> list[str]:
        return [str(self.iteration)] + [repr(float(getattr(self, f))) for f in self.FIELDS[1:]]


# ---------------------------------------------------------------------------
# losses


def _neg_log(p: Tensor) -> Tensor:
    return -T.log(T.clamp(p, PROB_EPS, 1.0 - PROB_EPS))


def loss_mse(generated: Tensor, truth: Tensor) -> Tensor:
    """Mean squared error over every pixel, channel, frame and batch entry."""
    truth = truth if isinstance(truth, Tensor) else Tensor(np.asarray(truth, dtype=generated.dtype))
    if generated.shape != truth.shape:
        raise T.ShapeError(f"generated {generated.shape} and truth {truth.shape} differ")
    return T.mean(T.square(generated - truth))


def adversarial_from_probs(probs: Tensor) -> Tensor:
    return T.mean(_neg_log(probs))


def loss_adv(generated: Tensor, disc: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Mean over frames of -log D(frame), with D clamped away from 0 and 1."""
    return adversarial_from_probs(discriminate(generated, disc, cfg))


def discriminator_from_probs(p_real: Tensor, p_fake: Tensor) -> Tensor:
    return T.mean(_neg_log(p_real)) + T.mean(_neg_log(1.0 - p_fake))


def loss_discriminator(real: Tensor, fake: Tensor, disc: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """-mean log D(real) - mean log(1 - D(fake)). Both batches go through D together."""
    n = real.shape[0]
    probs = discriminate(T.concat([real, fake], axis=0), disc, cfg)
    return discriminator_from_probs(probs[:n], probs[n:])


# ---------------------------------------------------------------------------
# state and checkpoints


@dataclass
class TrainState:
    params: Params
    gen_opt: AdamState
    disc_opt: AdamState
    iteration: int = 0

    def generator_params(self) -> dict[str, Tensor]:
        out = {f"generator/{k}": v for k, v in self.params.generator.items()}
        out.update({f"qnet/{k}": v for k, v in self.params.qnet.items()})
        return out

    def disc_params(self) -> dict[str, Tensor]:
        return {f"disc/{k}": v for k, v in self.params.disc.items()}


def new_state(model_cfg: ModelConfig, cfg: TrainConfig) -> TrainState:
    params = init_params(model_cfg, cfg.seed)
    return TrainState(params, AdamState(learning_rate=cfg.learning_rate), AdamState(learning_rate=cfg.learning_rate))


def state_entries(state: TrainState) -> dict[str, np.ndarray]:
    entries: dict[str, np.ndarray] = {"train/iteration": np.array([state.iteration], dtype=np.float64)}
    for name, p in state.params.named().items():
        entries[f"param/{name}"] = p.data
    for tag, opt in (("gen", state.gen_opt), ("disc", state.disc_opt)):
        entries[f"adam/{tag}/step"] = np.array([opt.step], dtype=np.float64)
        entries[f"adam/{tag}/hyper"] = np.array([opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon])
        for name in sorted(opt.m):
            entries[f"adam/{tag}/m/{name}"] = opt.m[name]
            entries[f"adam/{tag}/v/{name}"] = opt.v[name]
    return entries


def save_state(path: str | os.PathLike, state: TrainState) -> None:
    checkpoint.save(path, state_entries(state))


def load_state(path: str | os.PathLike, model_cfg: ModelConfig) -> TrainState:
    entries = checkpoint.load(path)
    params = init_params(model_cfg, 0)
    for name, p in params.named().items():
        key = f"param/{name}"
        if key not in entries:
            raise checkpoint.CheckpointError(f"checkpoint lacks {key}")
        if entries[key].shape != p.shape:
            raise checkpoint.CheckpointError(f"{key}: checkpoint shape {entries[key].shape} != model shape {p.shape}")
        p.data = entries[key].astype(p.dtype, copy=False)
    opts = {}
    for tag in ("gen", "disc"):
        lr, b1, b2, eps = entries[f"adam/{tag}/hyper"]
        opt = AdamState(float(lr), float(b1), float(b2), float(eps), int(entries[f"adam/{tag}/step"][0]))
        prefix = f"adam/{tag}/m/"
        for key in entries:
            if key.startswith(prefix):
                name = key[len(prefix) :]
                opt.m[name] = entries[key]
                opt.v[name] = entries[f"adam/{tag}/v/{name}"]
        opts[tag] = opt
    return TrainState(params, opts["gen"], opts["disc"], int(entries["train/iteration"][0]))


def load_params(path: str | os.PathLike, model_cfg: ModelConfig) -> Params:
    return load_state(path, model_cfg).params


# ---------------------------------------------------------------------------
# loop


def batch_indices(seed: int, iteration: int, n_items: int, batch_size: int) -> np.ndarray:
    """Uniform with replacement; a pure function of (seed, iteration) so resumed runs match."""
    return np.random.default_rng([seed, iteration]).integers(0, n_items, size=batch_size)


def _resolve_horizon(cfg: TrainConfig, seq_len: int) -> int:
    n = cfg.horizon or seq_len - 1
    if n < 1 or n > seq_len - 1:
        raise ValueError(f"horizon {n} does not fit sequences of length {seq_len} (input frame + {seq_len - 1})")
    return n


def train_step(
    state: TrainState, batch: np.ndarray, model_cfg: ModelConfig, cfg: TrainConfig, n: int
) -> LossRecord:
    """One generator update followed by one discriminator update on ``batch`` (B, T, 3, H, W)."""
    b = batch.shape[0]
    hw = batch.shape[-3:]
    x = Tensor(batch[:, 0])
    truth = Tensor(np.ascontiguousarray(batch[:, 1 : n + 1]).reshape((b * n,) + hw))
    params = state.params

    # generator (and Q-network) step; the discriminator is a constant here
    frames, _ = rollout(x, params, model_cfg, n)
    fake = T.stack(frames, axis=1).reshape((b * n,) + hw)
    mse = loss_mse(fake, truth)
    if cfg.lambda_adv > 0:
        adv = loss_adv(fake, frozen(params.disc), model_cfg)
        total = mse + cfg.lambda_adv * adv
    else:
        with T.no_grad():
            adv = loss_adv(fake.detach(), params.disc, model_cfg)
        total = mse
    T.backward(total)
    gen_params = state.generator_params()
    adam_step(gen_params, state.gen_opt)
    zero_grads(gen_params)

    # discriminator step on detached fakes
    d_loss = loss_discriminator(truth, fake.detach(), params.disc, model_cfg)
    T.backward(d_loss)
    disc_params = state.disc_params()
    adam_step(disc_params, state.disc_opt)
    zero_grads(disc_params)
    T.new_tape()

    state.iteration += 1
    return LossRecord(state.iteration, mse.item(), adv.item(), total.item(), d_loss.item())


def _append_csv(path: Path, records: list[LossRecord]) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(LossRecord.FIELDS)
        for r in records:
            w.writerow(r.row())


def read_loss_csv(path: str | os.PathLike) -> list[LossRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        LossRecord(int(r["iteration"]), float(r["loss_mse"]), float(r["loss_adv"]), float(r["loss_total"]), float(r["d_loss"]))
        for r in rows
    ]


def checkpoint_name(iteration: int) -> str:
    return f"ckpt_{iteration:06d}.bin"


def train(
    data: PackedSplit,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out_dir: str | os.PathLike | None = None,
    state: TrainState | None = None,
    callback: Callable[[LossRecord], None] | None = None,
) -> tuple[TrainState, list[LossRecord]]:
    """Run ``cfg.iterations`` total iterations (continuing from ``state.iteration`` when resuming).

    With ``out_dir`` set, loss rows are appended to ``losses.csv`` and
    checkpoints are written every ``cfg.checkpoint_every`` iterations and at the end.
    """
    if len(data) == 0:
        raise ValueError("training split is empty")
    n = _resolve_horizon(cfg, data.seq_len)
    if data.image_size != (model_cfg.image_size, model_cfg.image_size):
        raise ValueError(f"dataset frames are {data.image_size}, model expects {model_cfg.image_size}")
    state = state or new_state(model_cfg, cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    dtype = np.dtype(model_cfg.dtype)

    records: list[LossRecord] = []
    pending: list[LossRecord] = []
    while state.iteration < cfg.iterations:
        idx = batch_indices(cfg.seed, state.iteration + 1, len(data), cfg.batch_size)
        batch = to_model_range(data.frames[idx], dtype)
        rec = train_step(state, batch, model_cfg, cfg, n)
        if not all(np.isfinite([rec.loss_mse, rec.loss_adv, rec.loss_total, rec.d_loss])):
            raise FloatingPointError(f"non-finite loss at iteration {rec.iteration}: {rec}")
        records.append(rec)
        pending.append(rec)
        if callback:
            callback(rec)
        if rec.iteration % 50 == 0 or rec.iteration == 1:
            log.info("iter %d mse %.5f adv %.4f total %.5f d %.4f", rec.iteration, rec.loss_mse, rec.loss_adv, rec.loss_total, rec.d_loss)
        at_ckpt = cfg.checkpoint_every and rec.iteration % cfg.checkpoint_every == 0
        if out is not None and (at_ckpt or state.iteration == cfg.iterations):
            _append_csv(out / "losses.csv", pending)
            pending = []
            save_state(out / checkpoint_name(rec.iteration), state)
    if out is not None and pending:
        _append_csv(out / "losses.csv", pending)
    return state, records


# ---------------------------------------------------------------------------
# inference


def generate(params: Params, model_cfg: ModelConfig, x: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Inference rollout without a tape. ``x`` is (3, H, W) or (B, 3, H, W) in [-1, 1].

    Returns frames shaped like ``x`` with a time axis inserted after the batch
    axis, and chosen actions for the ``rnn_dqn`` variant.
    """
    single = x.ndim == 3
    xb = Tensor(np.asarray(x, dtype=model_cfg.dtype)[None] if single else np.asarray(x, dtype=model_cfg.dtype))
    with T.no_grad():
        frames, actions = rollout(xb, params, model_cfg, n)
    out = np.stack([f.data for f in frames], axis=1)
    if single:
        return out[0], None if actions is None else actions[0]
    return out, actions


def rollout_stateless_baseline(params: Params, model_cfg: ModelConfig, x: np.ndarray, n: int) -> np.ndarray:
    """Stateless ablation of a trained generator: each step autoencodes the previous output."""
    single = x.ndim == 3
    xb = Tensor(np.asarray(x, dtype=model_cfg.dtype)[None] if single else np.asarray(x, dtype=model_cfg.dtype))
    with T.no_grad():
        frames = rollout_stateless(xb, params.generator, model_cfg, n)
    out = np.stack([f.data for f in frames], axis=1)
    return out[0] if single else out
