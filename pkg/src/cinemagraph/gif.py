"""Animated GIF and PNG frame export with one shared median-cut palette."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import GifImagePlugin, Image

FRAME_DELAY_MS = 100


def global_palette(frames: np.ndarray, colors: int = 256) -> Image.Image:
    """Median-cut palette over every pixel of every frame. ``frames`` is uint8 (T, H, W, 3)."""
    frames = np.asarray(frames, dtype=np.uint8)
    mosaic = Image.fromarray(frames.reshape(-1, frames.shape[2], 3))
    return mosaic.quantize(colors=colors, method=Image.Quantize.MEDIANCUT, dither=Image.Dither.NONE)


def apply_palette(frame: np.ndarray, palette: Image.Image) -> Image.Image:
    return Image.fromarray(np.asarray(frame, dtype=np.uint8)).quantize(palette=palette, dither=Image.Dither.NONE)


def palette_roundtrip(frames: np.ndarray, palette: Image.Image) -> np.ndarray:
    """Frames as they look after mapping onto ``palette``."""
    return np.stack([np.asarray(apply_palette(f, palette).convert("RGB")) for f in frames])


def write_gif(frames: np.ndarray, path: str | os.PathLike, delay_ms: int = FRAME_DELAY_MS) -> Image.Image:
    """Write a looping GIF and return the palette it used."""
    frames = np.asarray(frames, dtype=np.uint8)
    if frames.ndim != 4 or frames.shape[-1] != 3 or len(frames) == 0:
        raise ValueError(f"expected uint8 frames (T, H, W, 3), got {frames.shape}")
    palette = global_palette(frames)
    # frames are written one by one: Pillow's save_all would merge identical
    # consecutive frames and change the frame count
    images = [apply_palette(f, palette) for f in frames]
    header, _ = GifImagePlugin.getheader(images[0], None, {"loop": 0, "duration": delay_ms})
    with open(path, "wb") as fh:
        for chunk in header:
            fh.write(chunk)
        for img in images:
            for chunk in GifImagePlugin.getdata(img, duration=delay_ms, disposal=1):
                fh.write(chunk)
        fh.write(b";")
    return palette


def read_gif(path: str | os.PathLike) -> np.ndarray:
    """Decode every frame of a GIF to uint8 RGB (T, H, W, 3)."""
    out = []
    with Image.open(path) as img:
        for i in range(getattr(img, "n_frames", 1)):
            img.seek(i)
            out.append(np.asarray(img.convert("RGB")))
    return np.stack(out)


def write_pngs(frames: np.ndarray, out_dir: str | os.PathLike, stem: str = "frame") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, f in enumerate(np.asarray(frames, dtype=np.uint8)):
        p = out / f"{stem}_{t:03d}.png"
        Image.fromarray(f).save(p, format="PNG", optimize=False)
        paths.append(p)
    return paths


def read_png(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))
