"""Frame-quality metrics, motion metrics and the evaluation harness.

All metrics work in the [0, 1] pixel convention on float images shaped
(H, W) or (H, W, C); sequences carry a leading time axis.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import correlate

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
METRIC_GROUPS = ("psnr", "ssim", "center")


class MetricError(ValueError):
    pass


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio for peak 1.0; identical inputs give ``PSNR_CAP``."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is its outer product."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img.mean(axis=-1)
    if img.ndim != 2:
        raise MetricError(f"expected an (H, W) or (H, W, C) image, got shape {img.shape}")
    return img


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    k = len(taps)
    rows = sliding_window_view(img, k, axis=0) @ taps
    return sliding_window_view(rows, k, axis=1) @ taps


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows of the grayscale images."""
    a, b = _check_pair(a, b)
    x, y = to_gray(a), to_gray(b)
    if min(x.shape) < SSIM_WINDOW:
        raise MetricError(f"image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if np.array_equal(x, y):
        return 1.0
    taps = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter_valid(x, taps), _filter_valid(y, taps)
    sxx = _filter_valid(x * x, taps) - mx * mx
    syy = _filter_valid(y * y, taps) - my * my
    sxy = _filter_valid(x * y, taps) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


@dataclass
class SequenceScores:
    psnr: np.ndarray  # per frame
    ssim: np.ndarray

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))


def sequence_metrics(generated: np.ndarray, truth: np.ndarray) -> SequenceScores:
    """Per-frame PSNR and SSIM of two equally long sequences."""
    if len(generated) != len(truth):
        raise MetricError(f"sequence lengths differ: {len(generated)} vs {len(truth)}")
    p = np.array([psnr(g, t) for g, t in zip(generated, truth)])
    s = np.array([ssim(g, t) for g, t in zip(generated, truth)])
    return SequenceScores(p, s)


def difference_images(frames: np.ndarray) -> np.ndarray:
    """|frame[t+1] - frame[t]| for consecutive frames."""
    frames = np.asarray(frames, dtype=np.float64)
    if len(frames) < 2:
        raise MetricError("difference images need at least two frames")
    return np.abs(np.diff(frames, axis=0))


def difference_metrics(generated: np.ndarray, truth: np.ndarray) -> SequenceScores:
    """Score the consecutive-frame difference streams of both sequences.

    Both sequences should begin with the shared input frame so the first
    difference captures the first predicted motion.
    """
    if len(generated) != len(truth):
        raise MetricError(f"sequence lengths differ: {len(generated)} vs {len(truth)}")
    return sequence_metrics(difference_images(generated), difference_images(truth))


def constant_baseline(x: np.ndarray, n: int) -> np.ndarray:
    """``n`` copies of ``x`` stacked on a new leading axis."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.repeat(np.asarray(x)[None], n, axis=0)


def match_template(frame: np.ndarray, template: np.ndarray, weight: np.ndarray) -> tuple[int, int]:
    """Top-left (row, col) minimizing the weighted SSD of ``template`` over ``frame``.

    ``frame`` is (H, W, C), ``template`` (h, w, C), ``weight`` (h, w). Ties
    resolve to the first position in raster order.
    """
    frame = np.asarray(frame, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    wgt = np.asarray(weight, dtype=np.float64)
    if frame.ndim == 2:
        frame, template = frame[..., None], template[..., None]
    # sum w (F - T)^2 = sum w F^2 - 2 sum w T F + sum w T^2 ; the last term is constant
    ssd = np.zeros((frame.shape[0] - wgt.shape[0] + 1, frame.shape[1] - wgt.shape[1] + 1))
    for ch in range(frame.shape[2]):
        f = frame[..., ch]
        ssd += correlate(f * f, wgt, mode="valid") - 2 * correlate(f, wgt * template[..., ch], mode="valid")
    # snap float noise so exact matches compare equal
    scale = max(1.0, float(np.abs(ssd).max()))
    ssd = np.round(ssd / scale, 9)
    r, c = np.unravel_index(int(np.argmin(ssd)), ssd.shape)
    return int(r), int(c)


def frame_center_distance(generated: np.ndarray, truth_frame: np.ndarray, mask: np.ndarray) -> float | None:
    """Distance between the truth object center and its best template match in ``generated``.

    Returns None when the mask is empty.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return None
    rows, cols = np.nonzero(mask)
    r0, r1, c0, c1 = rows.min(), rows.max() + 1, cols.min(), cols.max() + 1
    template = np.asarray(truth_frame)[r0:r1, c0:c1]
    weight = mask[r0:r1, c0:c1]
    r, c = match_template(generated, template, weight)
    return float(math.hypot(r - r0, c - c0))


def center_distance(generated: np.ndarray, truth_masks: np.ndarray, truth_frames: np.ndarray) -> float:
    """Mean per-frame object-center distance in pixels, skipping frames with empty masks."""
    if not (len(generated) == len(truth_masks) == len(truth_frames)):
        raise MetricError("generated frames, masks and truth frames must have equal length")
    dists = [frame_center_distance(g, t, m) for g, t, m in zip(generated, truth_frames, truth_masks)]
    dists = [d for d in dists if d is not None]
    if not dists:
        raise MetricError("every truth mask is empty")
    return float(np.mean(dists))


# ---------------------------------------------------------------------------
# harness

Predictor = Callable[[np.ndarray, int], np.ndarray]
"""Maps uint8 input frames (B, H, W, 3) and a horizon n to unit-range frames (B, n, H, W, 3)."""

REPORT_COLUMNS = {
    "psnr": ("psnr", "diff_psnr"),
    "ssim": ("ssim", "diff_ssim"),
    "center": ("center_distance",),
}


@dataclass
class EvalReport:
    metrics: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        cols = ["method", "category", "index"]
        for m in self.metrics:
            cols.extend(REPORT_COLUMNS[m])
        return cols

    @property
    def value_columns(self) -> list[str]:
        return self.columns[3:]

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r["method"] for r in self.rows))

    def aggregates(self) -> list[dict]:
        """Mean of every metric per (method, category)."""
        out = []
        keys = dict.fromkeys((r["method"], r["category"]) for r in self.rows)
        for method, category in keys:
            sel = [r for r in self.rows if r["method"] == method and r["category"] == category]
            agg = {"method": method, "category": category, "index": "mean"}
            for col in self.value_columns:
                agg[col] = float(np.mean([r[col] for r in sel]))
            out.append(agg)
        return out

    def mean(self, method: str, column: str) -> float:
        return float(np.mean([r[column] for r in self.rows if r["method"] == method]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for note in self.notes:
            buf.write(f"# {note}\n")
        w.writerow(self.columns)
        for r in self.rows + self.aggregates():
            w.writerow([_fmt(r[c]) for c in self.columns])
        return buf.getvalue()

    def to_table(self) -> str:
        """Aggregate table, one line per method and category."""
        head = ["method", "category"] + self.value_columns
        lines = [[str(a[c]) if c in ("method", "category") else f"{a[c]:.4f}" for c in head] for a in self.aggregates()]
        widths = [max(len(h), *(len(l[i]) for l in lines)) if lines else len(h) for i, h in enumerate(head)]
        fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        out = [fmt(head), fmt(["-" * w for w in widths])] + [fmt(l) for l in lines]
        return "\n".join(out) + "\n"

    def write(self, out_dir: str | os.PathLike, stem: str = "report") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, table_path = out / f"{stem}.csv", out / f"{stem}.txt"
        csv_path.write_text(self.to_csv())
        table_path.write_text(self.to_table())
        return csv_path, table_path


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def frames_to_unit(frames: np.ndarray) -> np.ndarray:
    return np.asarray(frames, dtype=np.float64) / 255.0


def evaluate_predictors(
    predictors: dict[str, Predictor],
    frames: np.ndarray,
    masks: np.ndarray,
    category: str,
    metrics: Sequence[str] = ("psnr", "ssim"),
    batch_size: int = 32,
) -> EvalReport:
    """Score each predictor on every sequence of a split.

    ``frames`` is uint8 (count, T, H, W, 3) and ``masks`` bool (count, T, H, W).
    Frame 0 is the input; frames 1..T-1 are the targets. Padded black frames
    are scored like any other frame.
    """
    metrics = tuple(metrics)
    bad = [m for m in metrics if m not in REPORT_COLUMNS]
    if bad:
        raise ValueError(f"unknown metric(s) {bad}; choose from {', '.join(METRIC_GROUPS)}")
    report = EvalReport(metrics, notes=["targets are frames 1..T-1; padded frames are included in means"])
    count, seq_len = frames.shape[:2]
    n = seq_len - 1
    for name, predict in predictors.items():
        for start in range(0, count, batch_size):
            chunk = frames[start : start + batch_size]
            generated = np.asarray(predict(chunk[:, 0], n), dtype=np.float64)
            if generated.shape != (len(chunk), n) + chunk.shape[2:]:
                raise MetricError(f"predictor {name!r} returned shape {generated.shape}")
            for j in range(len(chunk)):
                truth = frames_to_unit(chunk[j])
                row = {"method": name, "category": category, "index": start + j}
                if "psnr" in metrics or "ssim" in metrics:
                    raw = sequence_metrics(generated[j], truth[1:])
                    diff = difference_metrics(np.concatenate([truth[:1], generated[j]]), truth)
                    row.update(psnr=raw.mean_psnr, ssim=raw.mean_ssim, diff_psnr=diff.mean_psnr, diff_ssim=diff.mean_ssim)
                if "center" in metrics:
                    row["center_distance"] = center_distance(generated[j], masks[start + j, 1:], truth[1:])
                report.rows.append(row)
    return report


def constant_predictor(x: np.ndarray, n: int) -> np.ndarray:
    return np.stack([constant_baseline(frames_to_unit(f), n) for f in x])


def model_predictor(params, model_cfg, stateless: bool = False) -> Predictor:
    """Wrap a trained generator as a :data:`Predictor`."""
    from .synthetic import to_model_range, to_unit_range
    from .training import generate, rollout_stateless_baseline

    def predict(x: np.ndarray, n: int) -> np.ndarray:
        xb = to_model_range(x, model_cfg.dtype)
        if stateless:
            out = rollout_stateless_baseline(params, model_cfg, xb, n)
        else:
            out, _ = generate(params, model_cfg, xb, n)
        return to_unit_range(out)

    return predict


@dataclass
class AblationRow:
    z_dim: int
    q_dim: int
    psnr: float
    ssim: float
    config: dict


def ablation_run(
    dims: Sequence[tuple[int, int]],
    train_split,
    test_split,
    model_cfg,
    train_cfg,
    out_dir: str | os.PathLike | None = None,
) -> list[AblationRow]:
    """Train and score one model per (Z, N) pair; everything else stays fixed."""
    from dataclasses import replace

    from .training import train

    rows = []
    for z, q in dims:
        cfg = replace(model_cfg, z_dim=int(z), q_dim=int(q))
        run_dir = None if out_dir is None else Path(out_dir) / f"z{z}_n{q}"
        state, _ = train(train_split, cfg, train_cfg, out_dir=run_dir)
        report = evaluate_predictors(
            {cfg.variant: model_predictor(state.params, cfg)}, test_split.frames, test_split.masks, test_split.kind.value
        )
        config = {**cfg.to_dict(), **train_cfg.to_dict()}
        rows.append(AblationRow(int(z), int(q), report.mean(cfg.variant, "psnr"), report.mean(cfg.variant, "ssim"), config))
    if out_dir is not None:
        write_ablation(rows, Path(out_dir) / "ablation.csv")
    return rows


def write_ablation(rows: Sequence[AblationRow], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["z_dim", "q_dim", "psnr", "ssim", "config"])
        for r in rows:
            cfg = ";".join(f"{k}={v}" for k, v in r.config.items())
            w.writerow([r.z_dim, r.q_dim, repr(r.psnr), repr(r.ssim), cfg])
