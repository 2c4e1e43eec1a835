"""Regenerate the bundled cluttered background textures (128x128 PNG).

Each texture is a seeded pile of overlapping ellipses, rectangles and strokes
on a mottled base, lightly blurred. Run once; the PNGs are committed.
"""
import argparse
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

SIZE = 128


def make_texture(index: int) -> Image.Image:
    rng = np.random.default_rng(1000 + index)
    base = rng.integers(40, 200, size=3)
    noise = rng.normal(0, 18, size=(SIZE // 8, SIZE // 8, 3))
    noise = np.kron(noise, np.ones((8, 8, 1)))
    img = Image.fromarray(np.clip(base + noise, 0, 255).astype(np.uint8)).filter(ImageFilter.GaussianBlur(3))
    draw = ImageDraw.Draw(img)
    for _ in range(int(rng.integers(40, 80))):
        color = tuple(int(c) for c in rng.integers(20, 236, size=3))
        x0, y0 = (int(v) for v in rng.integers(-16, SIZE, size=2))
        w, h = (int(v) for v in rng.integers(4, 28, size=2))
        shape = rng.integers(3)
        if shape == 0:
            draw.ellipse([x0, y0, x0 + w, y0 + h], fill=color)
        elif shape == 1:
            draw.rectangle([x0, y0, x0 + w, y0 + h], fill=color)
        else:
            draw.line([x0, y0, x0 + int(rng.integers(-40, 40)), y0 + int(rng.integers(-40, 40))], fill=color, width=int(rng.integers(1, 4)))
    return img.filter(ImageFilter.GaussianBlur(0.8))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/cinemagraph/assets/textures"))
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(10):
        make_texture(i).save(out / f"texture_{i:02d}.png", optimize=False)
    print(f"wrote 10 textures to {out}")


if __name__ == "__main__":
    main()
