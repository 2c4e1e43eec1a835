"""Synthetic cinemagraphs: a colored rectangle moving over a frozen textured background.

Six motion patterns with fixed sequence lengths. Frames are uint8 HxWx3 in
storage; :func:`to_model_range` maps them to the [-1, 1] convention.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from PIL import Image

N_TEXTURES = 10


class PatternKind(str, enum.Enum):
    I = "I"
    O = "O"
    L = "L"
    Eight = "Eight"
    Rotate = "Rotate"
    Scale = "Scale"

    @property
    def length(self) -> int:
        return SEQUENCE_LENGTHS[self]

    @classmethod
    def parse(cls, name: str) -> PatternKind:
        for kind in cls:
            if kind.value.lower() == name.lower() or (name == "8" and kind is cls.Eight):
                return kind
        raise ValueError(f"unknown pattern {name!r}; choose from {', '.join(k.value for k in cls)}")


SEQUENCE_LENGTHS = {
    PatternKind.I: 27,
    PatternKind.O: 21,
    PatternKind.L: 26,
    PatternKind.Eight: 21,
    PatternKind.Rotate: 21,
    PatternKind.Scale: 17,
}
MAX_LENGTH = max(SEQUENCE_LENGTHS.values())


class AssetError(FileNotFoundError):
    pass


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryState:
    cx: float
    cy: float
    angle: float = 0.0
    sx: float = 1.0
    sy: float = 1.0


@dataclass
class SyntheticSample:
    frames: np.ndarray  # (T, H, W, 3) uint8
    masks: np.ndarray  # (T, H, W) bool
    kind: PatternKind
    seed: int
    background_id: int
    trajectory: list[TrajectoryState]

    def __len__(self) -> int:
        return len(self.frames)


@lru_cache(maxsize=None)
def load_texture(texture_id: int) -> np.ndarray:
    if not 0 <= texture_id < N_TEXTURES:
        raise AssetError(f"texture id {texture_id} out of range 0..{N_TEXTURES - 1}")
    res = resources.files("cinemagraph") / "assets" / "textures" / f"texture_{texture_id:02d}.png"
    try:
        with res.open("rb") as fh:
            img = Image.open(fh).convert("RGB")
            img.load()
    except FileNotFoundError as exc:
        raise AssetError(f"texture asset {texture_id} missing") from exc
    arr = np.asarray(img)
    arr.setflags(write=False)
    return arr


def make_background(
    texture_id: int,
    rng: np.random.Generator,
    size: tuple[int, int] = (64, 64),
    factors: np.ndarray | None = None,
) -> np.ndarray:
    """Texture resized to ``size`` (H, W), each channel scaled by a factor in [0.9, 1.1].

    Returns float64 in [0, 1]. ``factors`` overrides the random draw.
    """
    tex = load_texture(texture_id)
    h, w = size
    if tex.shape[:2] != (h, w):
        tex = np.asarray(Image.fromarray(tex).resize((w, h), Image.BILINEAR))
    draw = rng.uniform(0.90, 1.1, size=3)
    if factors is None:
        factors = draw
    return np.clip(tex.astype(np.float64) / 255.0 * np.asarray(factors, dtype=np.float64), 0.0, 1.0)


def _path(kind: PatternKind) -> list[tuple[int, int]]:
    """Integer step offsets (dx, dy) from the start pose, one per frame. y grows downward."""
    if kind is PatternKind.I:
        ys = list(range(14)) + list(range(12, -1, -1))
        return [(0, y) for y in ys]
    if kind is PatternKind.O:
        pts = [(0, 0)]
        for dx, dy in ((1, 0), (0, 1), (-1, 0), (0, -1)):
            for _ in range(5):
                x, y = pts[-1]
                pts.append((x + dx, y + dy))
        return pts
    if kind is PatternKind.L:
        return [(0, y) for y in range(13)] + [(x, 12) for x in range(1, 14)]
    if kind is PatternKind.Eight:
        # two corner-tangent 3x2 loops through the start, opposite winding
        moves = [(0, -1)] * 2 + [(1, 0)] * 3 + [(0, 1)] * 2 + [(-1, 0)] * 3
        moves += [(-1, 0)] * 3 + [(0, 1)] * 2 + [(1, 0)] * 3 + [(0, -1)] * 2
        pts = [(0, 0)]
        for dx, dy in moves:
            x, y = pts[-1]
            pts.append((x + dx, y + dy))
        return pts
    return [(0, 0)] * kind.length


def _scale_schedule(kind: PatternKind) -> list[tuple[float, float]]:
    n = kind.length
    if kind is not PatternKind.Scale:
        return [(1.0, 1.0)] * n
    bump = [1.0 + 0.5 * (1 - abs(k - 4) / 4) for k in range(9)]
    return [(s, 1.0) for s in bump] + [(1.0, s) for s in bump[1:]]


def _angles(kind: PatternKind) -> list[float]:
    n = kind.length
    if kind is not PatternKind.Rotate:
        return [0.0] * n
    return [2 * np.pi * k / n for k in range(n)]


def _half_extent(w: float, h: float, angle: float, sx: float, sy: float) -> tuple[float, float]:
    hw, hh = sx * w / 2, sy * h / 2
    c, s = abs(np.cos(angle)), abs(np.sin(angle))
    return hw * c + hh * s, hw * s + hh * c


def step_size(kind: PatternKind, image: tuple[int, int]) -> int:
    """Pixels per trajectory step; scales with the image so the largest rectangle fits."""
    h, w = image
    offsets = np.array(_path(kind))
    span_x = max(int(np.ptp(offsets[:, 0])), 1)
    span_y = max(int(np.ptp(offsets[:, 1])), 1)
    return max(1, min((w - w // 4 - 2) // span_x, (h - h // 4 - 2) // span_y))


def make_trajectory(
    kind: PatternKind,
    rect: tuple[int, int],
    image: tuple[int, int],
    rng: np.random.Generator,
    start: tuple[float, float] | None = None,
) -> list[TrajectoryState]:
    """Poses for ``kind``; the start center is drawn uniformly among positions keeping every pose in bounds.

    ``rect`` is (width, height) in pixels, ``image`` is (H, W).
    """
    kind = PatternKind(kind)
    rw, rh = rect
    h, w = image
    step = step_size(kind, image)
    offsets = [(dx * step, dy * step) for dx, dy in _path(kind)]
    scales = _scale_schedule(kind)
    angles = _angles(kind)

    # bounds on the start center such that every pose stays inside [0, W] x [0, H]
    lo_x, hi_x, lo_y, hi_y = -np.inf, np.inf, -np.inf, np.inf
    for (ox, oy), (sx, sy), a in zip(offsets, scales, angles):
        ex, ey = _half_extent(rw, rh, a, sx, sy)
        lo_x, hi_x = max(lo_x, ex - ox), min(hi_x, w - ex - ox)
        lo_y, hi_y = max(lo_y, ey - oy), min(hi_y, h - ey - oy)
    if lo_x > hi_x or lo_y > hi_y:
        raise GenerationError(f"{rw}x{rh} rectangle cannot follow pattern {kind.value} inside a {w}x{h} image")

    if start is None:
        # integer-aligned left/top edges keep axis-aligned rasterization exact
        ix = np.arange(np.ceil(lo_x - rw / 2), np.floor(hi_x - rw / 2) + 1)
        iy = np.arange(np.ceil(lo_y - rh / 2), np.floor(hi_y - rh / 2) + 1)
        if ix.size == 0 or iy.size == 0:
            raise GenerationError(f"no integer start pose for pattern {kind.value}")
        cx = float(rng.choice(ix)) + rw / 2
        cy = float(rng.choice(iy)) + rh / 2
    else:
        cx, cy = start
        if not (lo_x <= cx <= hi_x and lo_y <= cy <= hi_y):
            raise GenerationError(f"start {start} takes pattern {kind.value} out of bounds")
    return [TrajectoryState(cx + ox, cy + oy, a, sx, sy) for (ox, oy), (sx, sy), a in zip(offsets, scales, angles)]


def rasterize(state: TrajectoryState, rect: tuple[int, int], image: tuple[int, int]) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the transformed rectangle."""
    h, w = image
    rw, rh = rect
    px = (np.arange(w) + 0.5 - state.cx)[None, :]
    py = (np.arange(h) + 0.5 - state.cy)[:, None]
    # counterclockwise on screen (y down) means rotating the local frame by -angle
    c, s = np.cos(state.angle), np.sin(state.angle)
    lx = c * px - s * py
    ly = s * px + c * py
    eps = 1e-9
    return (np.abs(lx) < state.sx * rw / 2 - eps) & (np.abs(ly) < state.sy * rh / 2 - eps)


def render_sample(
    background: np.ndarray,
    color: np.ndarray,
    rect: tuple[int, int],
    trajectory: list[TrajectoryState],
    kind: PatternKind,
    seed: int = 0,
    background_id: int = -1,
) -> SyntheticSample:
    """Composite the rectangle over ``background`` (float [0,1] HxWx3) at every pose."""
    h, w = background.shape[:2]
    bg = np.round(background * 255.0).astype(np.uint8)
    fg = np.round(np.asarray(color, dtype=np.float64) * 255.0).astype(np.uint8)
    frames = np.empty((len(trajectory), h, w, 3), dtype=np.uint8)
    masks = np.empty((len(trajectory), h, w), dtype=bool)
    for t, state in enumerate(trajectory):
        m = rasterize(state, rect, (h, w))
        frames[t] = bg
        frames[t][m] = fg
        masks[t] = m
    return SyntheticSample(frames, masks, PatternKind(kind), seed, background_id, list(trajectory))


def generate_sample(kind: PatternKind, seed: int, size: tuple[int, int] = (64, 64)) -> SyntheticSample:
    """Fully determined by (kind, seed, size)."""
    kind = PatternKind(kind)
    rng = np.random.default_rng(seed)
    h, w = size
    texture_id = int(rng.integers(N_TEXTURES))
    background = make_background(texture_id, rng, size)
    rect = (int(rng.integers(w // 8, w // 4 + 1)), int(rng.integers(h // 8, h // 4 + 1)))
    color = rng.uniform(0.0, 1.0, size=3)
    trajectory = make_trajectory(kind, rect, size, rng)
    return render_sample(background, color, rect, trajectory, kind, seed, texture_id)


def pad_sequence(frames: np.ndarray, target_len: int, masks: np.ndarray | None = None):
    """Append black (zero) frames, and empty masks when given, up to ``target_len``."""
    n = len(frames)
    if target_len < n:
        raise ValueError(f"target length {target_len} is shorter than the sequence ({n})")
    pad = np.zeros((target_len - n,) + frames.shape[1:], dtype=frames.dtype)
    out = np.concatenate([frames, pad], axis=0)
    if masks is None:
        return out
    mpad = np.zeros((target_len - n,) + masks.shape[1:], dtype=masks.dtype)
    return out, np.concatenate([masks, mpad], axis=0)


def to_model_range(frames: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 (..., H, W, 3) -> float (..., 3, H, W) in [-1, 1]."""
    dtype = np.dtype(dtype).type
    x = np.moveaxis(frames, -1, -3).astype(dtype)
    return np.ascontiguousarray(x / dtype(127.5) - dtype(1.0))


def to_unit_range(frames: np.ndarray) -> np.ndarray:
    """Model-range (..., 3, H, W) -> float64 (..., H, W, 3) in [0, 1]."""
    x = np.moveaxis(np.asarray(frames, dtype=np.float64), -3, -1)
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)


def to_uint8(frames: np.ndarray) -> np.ndarray:
    """Model-range (..., 3, H, W) -> uint8 (..., H, W, 3)."""
    return np.round(to_unit_range(frames) * 255.0).astype(np.uint8)
