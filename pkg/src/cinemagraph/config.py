"""Flat ``key = value`` run configuration shared by every CLI subcommand."""
from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .training import LAMBDA_ADV, TrainConfig

SNAPSHOT = "run_config.txt"
OUT_ROOT_ENV = "CINEMAGRAPH_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str = ""
    out: str = ""
    kind: str = "I"
    count: int = 1000
    image_size: int = 64
    seed: int = 0
    variant: str = "rnn_dqn"
    channels: tuple[int, ...] = (64, 128, 256, 512)
    z_dim: int = 64
    q_dim: int = 64
    rnn_q_slot: str = "zero"
    init_std: float = 0.02
    init_scheme: str = "normal"
    # picks the default adversarial weight when lambda_adv is unset
    profile: str = "synthetic"
    learning_rate: float = 0.0002
    batch_size: int = 64
    iterations: int = 6000
    lambda_adv: float | None = None
    horizon: int = 0
    checkpoint_every: int = 0
    metrics: tuple[str, ...] = ("psnr", "ssim")
    baseline: tuple[str, ...] = ()

    def resolved(self) -> RunConfig:
        """Copy with every derived default filled in."""
        if self.profile not in LAMBDA_ADV:
            raise ConfigError(f"unknown profile {self.profile!r}; expected one of {', '.join(LAMBDA_ADV)}")
        out = RunConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        if out.lambda_adv is None:
            out.lambda_adv = LAMBDA_ADV[out.profile]
        return out

    def model_config(self) -> ModelConfig:
        try:
            return self._model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        try:
            return self._train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            image_size=self.image_size,
            channels=self.channels,
            z_dim=self.z_dim,
            q_dim=self.q_dim,
            variant=self.variant,
            rnn_q_slot=self.rnn_q_slot,
            init_std=self.init_std,
            init_scheme=self.init_scheme,
        )

    def _train_config(self) -> TrainConfig:
        lam = self.resolved().lambda_adv
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            iterations=self.iterations,
            lambda_adv=lam,
            horizon=self.horizon,
            seed=self.seed,
            checkpoint_every=self.checkpoint_every,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = ""
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | os.PathLike) -> Path:
        path = Path(out_dir) / SNAPSHOT
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        return path


_FIELDS = {f.name: f for f in fields(RunConfig)}


def parse_value(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "float | None":
            return None if raw == "" else float(raw)
        if kind == "tuple[int, ...]":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind == "tuple[str, ...]":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = parse_value(key.strip(), value)
    return out


def load_config(path: str | os.PathLike) -> dict:
    try:
        return parse_text(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def build(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then explicit overrides (``None`` overrides are ignored)."""
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    return RunConfig(**values).resolved()


def default_out(subcommand: str) -> str:
    root = os.environ.get(OUT_ROOT_ENV, "runs")
    return str(Path(root) / subcommand)
