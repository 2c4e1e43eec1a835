"""Recurrent frame generator, discriminator and Q-network.

The generator is a conv encoder producing a latent ``z``, an LSTM stepped in
latent space, a fusion layer over ``concat(lstm_hidden, action_slot)`` and a
deconv decoder whose single parameter set is reused at every step. The action
slot carries the one-hot argmax of a Q-network evaluated on the previously
generated frame (``rnn_dqn``), zeros or a constant one-hot (``rnn``), or
nothing useful at all (``stateless``, which re-encodes its own output).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

VARIANTS = ("rnn", "rnn_dqn", "stateless")
Q_SLOTS = ("zero", "onehot")
INIT_SCHEMES = ("normal", "fan_in")


@dataclass
class ModelConfig:
    image_size: int = 64
    channels: tuple[int, ...] = (64, 128, 256, 512)
    z_dim: int = 64
    q_dim: int = 64
    kernel: int = 5
    stride: int = 2
    padding: int = 2
    variant: str = "rnn_dqn"
    # what the rnn variant feeds into the action slot
    rnn_q_slot: str = "zero"
    init_std: float = 0.02
    # "normal": every weight ~ N(0, init_std); "fan_in": std sqrt(2 / fan_in) per tensor
    init_scheme: str = "normal"
    dtype: str = "float32"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.rnn_q_slot not in Q_SLOTS:
            raise ValueError(f"unknown rnn_q_slot {self.rnn_q_slot!r}; expected one of {Q_SLOTS}")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"unknown init_scheme {self.init_scheme!r}; expected one of {INIT_SCHEMES}")
        if len(self.channels) != 4:
            raise ValueError("the encoder/decoder use exactly 4 conv layers")
        if self.image_size % 16:
            raise ValueError(f"image_size must be divisible by 16, got {self.image_size}")
        if self.z_dim < 1 or self.q_dim < 1:
            raise ValueError("z_dim and q_dim must be positive")

    @property
    def bottom(self) -> int:
        return self.image_size // 16

    @property
    def spatial_sizes(self) -> list[int]:
        return [self.image_size >> (i + 1) for i in range(4)]

    def weight_std(self, fan_in: float) -> float:
        if self.init_scheme == "fan_in":
            return float(np.sqrt(2.0 / fan_in))
        return self.init_std

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Params:
    """Named parameter groups. Each group is a flat ``name -> Tensor`` dict."""

    generator: dict[str, Tensor] = field(default_factory=dict)
    qnet: dict[str, Tensor] = field(default_factory=dict)
    disc: dict[str, Tensor] = field(default_factory=dict)

    def groups(self) -> dict[str, dict[str, Tensor]]:
        return {"generator": self.generator, "qnet": self.qnet, "disc": self.disc}

    def named(self) -> dict[str, Tensor]:
        return {f"{g}/{k}": t for g, group in self.groups().items() for k, t in group.items()}

    def count(self, group: str) -> int:
        return sum(t.size for t in self.groups()[group].values())


def _param(name: str, shape, seed: int, std: float, dtype, zero: bool = False) -> Tensor:
    if zero:
        data = np.zeros(shape, dtype=dtype)
    else:
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        data = rng.normal(0.0, std, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True, name=name)


def _conv_stack(prefix: str, cfg: ModelConfig, seed: int, dtype) -> dict[str, Tensor]:
    out = {}
    c_in = 3
    for i, c in enumerate(cfg.channels):
        std = cfg.weight_std(c_in * cfg.kernel**2)
        out[f"{prefix}.conv{i}.w"] = _param(f"{prefix}.conv{i}.w", (c, c_in, cfg.kernel, cfg.kernel), seed, std, dtype)
        out[f"{prefix}.conv{i}.b"] = _param(f"{prefix}.conv{i}.b", (c,), seed, 0, dtype, zero=True)
        c_in = c
    return out


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    """Seeded zero-mean normal weights and zero biases.

    Every tensor draws from its own generator keyed on (seed, name), so the
    generator's initial weights do not depend on which other groups exist.
    """
    dtype = np.dtype(cfg.dtype)
    flat = cfg.channels[-1] * cfg.bottom**2
    z, q = cfg.z_dim, cfg.q_dim

    def p(name, shape, zero=False, fan_in=None):
        return _param(name, shape, seed, cfg.weight_std(fan_in or shape[0]), dtype, zero)

    gen = _conv_stack("enc", cfg, seed, dtype)
    gen["enc.fc.w"] = p("enc.fc.w", (flat, z))
    gen["enc.fc.b"] = p("enc.fc.b", (z,), zero=True)
    gen["lstm.w_x"] = p("lstm.w_x", (z, 4 * z))
    gen["lstm.w_h"] = p("lstm.w_h", (z, 4 * z))
    gen["lstm.b"] = p("lstm.b", (4 * z,), zero=True)
    gen["fuse.w"] = p("fuse.w", (z + q, flat))
    gen["fuse.b"] = p("fuse.b", (flat,), zero=True)
    dec_channels = list(reversed(cfg.channels)) + [3]
    for i in range(4):
        c_in, c_out = dec_channels[i], dec_channels[i + 1]
        # each output pixel of a strided transpose sees about c_in * (k / stride)^2 inputs
        fan = c_in * cfg.kernel**2 / cfg.stride**2
        gen[f"dec.deconv{i}.w"] = p(f"dec.deconv{i}.w", (c_in, c_out, cfg.kernel, cfg.kernel), fan_in=fan)
        gen[f"dec.deconv{i}.b"] = p(f"dec.deconv{i}.b", (c_out,), zero=True)

    params = Params(generator=gen)
    if cfg.variant == "rnn_dqn":
        params.qnet = _conv_stack("qnet", cfg, seed, dtype)
        params.qnet["qnet.fc.w"] = p("qnet.fc.w", (flat, q))
        params.qnet["qnet.fc.b"] = p("qnet.fc.b", (q,), zero=True)
    params.disc = _conv_stack("disc", cfg, seed, dtype)
    params.disc["disc.fc.w"] = p("disc.fc.w", (flat, 1))
    params.disc["disc.fc.b"] = p("disc.fc.b", (1,), zero=True)
    return params


def frozen(group: dict[str, Tensor]) -> dict[str, Tensor]:
    """Constant views of a parameter group: gradients will not reach the originals."""
    return {k: Tensor(t.data) for k, t in group.items()}


def _check_image(image: Tensor, cfg: ModelConfig) -> None:
    if image.ndim != 4 or image.shape[1] != 3:
        raise ShapeError(f"expected a (batch, 3, H, W) image batch, got {image.shape}")
    h, w = image.shape[2:]
    if h % 16 or w % 16:
        raise ShapeError(f"image height/width must be divisible by 16, got {h}x{w}")
    if h != cfg.image_size or w != cfg.image_size:
        raise ShapeError(f"image is {h}x{w} but the model was configured for {cfg.image_size}x{cfg.image_size}")


def _features(image: Tensor, group: dict[str, Tensor], prefix: str, cfg: ModelConfig) -> Tensor:
    h = image
    for i in range(4):
        h = T.relu(T.conv2d(h, group[f"{prefix}.conv{i}.w"], group[f"{prefix}.conv{i}.b"], cfg.stride, cfg.padding))
    return h.reshape(h.shape[0], -1)


def encode(image: Tensor, gen: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """(B, 3, H, W) -> z of shape (B, z_dim), squashed by tanh."""
    _check_image(image, cfg)
    return T.tanh(T.fully_connected(_features(image, gen, "enc", cfg), gen["enc.fc.w"], gen["enc.fc.b"]))


def q_vector(image: Tensor, qnet: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Raw Q-values (B, q_dim); same topology as the encoder but no output squashing."""
    _check_image(image, cfg)
    return T.fully_connected(_features(image, qnet, "qnet", cfg), qnet["qnet.fc.w"], qnet["qnet.fc.b"])


def decode(latent: Tensor, gen: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """(B, z_dim + q_dim) -> frames (B, 3, H, W) in [-1, 1]."""
    width = cfg.z_dim + cfg.q_dim
    if latent.ndim != 2 or latent.shape[1] != width:
        raise ShapeError(f"decoder expects latent width {width}, got shape {latent.shape}")
    b = latent.shape[0]
    h = T.relu(T.fully_connected(latent, gen["fuse.w"], gen["fuse.b"]))
    h = h.reshape(b, cfg.channels[-1], cfg.bottom, cfg.bottom)
    sizes = list(reversed(cfg.spatial_sizes))[1:] + [cfg.image_size]
    for i in range(4):
        h = T.conv2d_transpose(h, gen[f"dec.deconv{i}.w"], gen[f"dec.deconv{i}.b"], cfg.stride, cfg.padding, (sizes[i], sizes[i]))
        h = T.tanh(h) if i == 3 else T.relu(h)
    return h


def discriminate(frames: Tensor, disc: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Probability (B,) that each frame is real."""
    _check_image(frames, cfg)
    logit = T.fully_connected(_features(frames, disc, "disc", cfg), disc["disc.fc.w"], disc["disc.fc.b"])
    return T.sigmoid(logit).reshape(frames.shape[0])


def _slot(batch: int, cfg: ModelConfig, dtype, onehot: bool) -> Tensor:
    data = np.zeros((batch, cfg.q_dim), dtype=dtype)
    if onehot:
        data[:, 0] = 1.0
    return Tensor(data)


def _zeros(batch: int, width: int, dtype) -> Tensor:
    return Tensor(np.zeros((batch, width), dtype=dtype))


@dataclass
class RolloutState:
    frame: Tensor
    hidden: Tensor
    cell: Tensor
    t: int
    n: int


Observer = Callable[[str, RolloutState, Tensor], None]


def rollout_rnn(
    x: Tensor,
    gen: dict[str, Tensor],
    cfg: ModelConfig,
    n: int,
    q_slot: str | None = None,
    observe: Observer | None = None,
) -> list[Tensor]:
    """Generate ``n`` frames from the input batch ``x`` with the LSTM carrying state."""
    if n < 1:
        raise ValueError(f"rollout length must be >= 1, got {n}")
    slot_kind = q_slot or cfg.rnn_q_slot
    b, dtype = x.shape[0], x.dtype
    z = encode(x, gen, cfg)
    state = RolloutState(x, _zeros(b, cfg.z_dim, dtype), _zeros(b, cfg.z_dim, dtype), 0, n)
    slot = _slot(b, cfg, dtype, slot_kind == "onehot")
    frames = []
    for _ in range(n):
        state.hidden, state.cell = T.lstm_step(z, state.hidden, state.cell, _lstm(gen))
        frame = decode(T.concat([state.hidden, slot], axis=1), gen, cfg)
        state.frame, state.t = frame, state.t + 1
        if observe:
            observe("step", state, slot)
        frames.append(frame)
    return frames


def rollout_rnn_dqn(
    x: Tensor,
    gen: dict[str, Tensor],
    qnet: dict[str, Tensor],
    cfg: ModelConfig,
    n: int,
    observe: Observer | None = None,
) -> tuple[list[Tensor], np.ndarray]:
    """RNN rollout whose action slot is the one-hot argmax of Q(previous frame).

    Returns the frames and an int array of chosen actions with shape (B, n).
    The Q-network sees the previous frame as a constant observation.
    """
    if n < 1:
        raise ValueError(f"rollout length must be >= 1, got {n}")
    b, dtype = x.shape[0], x.dtype
    z = encode(x, gen, cfg)
    state = RolloutState(x, _zeros(b, cfg.z_dim, dtype), _zeros(b, cfg.z_dim, dtype), 0, n)
    frames, actions = [], []
    for _ in range(n):
        state.hidden, state.cell = T.lstm_step(z, state.hidden, state.cell, _lstm(gen))
        q_in = state.frame.detach()
        onehot = T.argmax_onehot(q_vector(q_in, qnet, cfg))
        if observe:
            observe("q_input", state, q_in)
        actions.append(np.argmax(onehot.data, axis=1))
        frame = decode(T.concat([state.hidden, onehot], axis=1), gen, cfg)
        state.frame, state.t = frame, state.t + 1
        if observe:
            observe("step", state, onehot)
        frames.append(frame)
    return frames, np.stack(actions, axis=1)


def rollout_stateless(x: Tensor, gen: dict[str, Tensor], cfg: ModelConfig, n: int) -> list[Tensor]:
    """Stateless ablation: each step autoencodes the previous output, no LSTM.

    An approximation of a stateless next-frame baseline built from this
    generator's own layers, not a reimplementation of any published one.
    """
    if n < 1:
        raise ValueError(f"rollout length must be >= 1, got {n}")
    b, dtype = x.shape[0], x.dtype
    slot = _slot(b, cfg, dtype, False)
    prev, frames = x, []
    for _ in range(n):
        prev = decode(T.concat([encode(prev, gen, cfg), slot], axis=1), gen, cfg)
        frames.append(prev)
    return frames


def rollout(x: Tensor, params: Params, cfg: ModelConfig, n: int) -> tuple[list[Tensor], np.ndarray | None]:
    """Dispatch on ``cfg.variant``."""
    if cfg.variant == "rnn_dqn":
        return rollout_rnn_dqn(x, params.generator, params.qnet, cfg, n)
    if cfg.variant == "stateless":
        return rollout_stateless(x, params.generator, cfg, n), None
    return rollout_rnn(x, params.generator, cfg, n), None


def _lstm(gen: dict[str, Tensor]) -> dict[str, Tensor]:
    return {"w_x": gen["lstm.w_x"], "w_h": gen["lstm.w_h"], "b": gen["lstm.b"]}
