"""Packed on-disk synthetic datasets.

One binary file per split::

    magic     8 bytes  b"CNMGDATA"
    version   u32
    kind      u8 length + ascii pattern name
    count, H, W, seq_len   u32 each
    count x sample:
        frames  seq_len*H*W*3 bytes (uint8, HWC, row-major)
        masks   seq_len*H*ceil(W/8) bytes (1 bit per pixel, MSB first, byte-padded rows)

plus ``manifest.txt`` with ``key = value`` lines.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .synthetic import PatternKind, generate_sample

MAGIC = b"CNMGDATA"
VERSION = 1
MANIFEST = "manifest.txt"
TEST_EVERY = 20  # sample i is held out when i % 20 == 19 (95/5 split)


class DatasetError(OSError):
    pass


@dataclass
class PackedSplit:
    kind: PatternKind
    frames: np.ndarray  # (count, T, H, W, 3) uint8
    masks: np.ndarray  # (count, T, H, W) bool

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def seq_len(self) -> int:
        return self.frames.shape[1]

    @property
    def image_size(self) -> tuple[int, int]:
        return self.frames.shape[2], self.frames.shape[3]


def is_test_index(i: int) -> bool:
    return i % TEST_EVERY == TEST_EVERY - 1


def split_counts(count: int) -> tuple[int, int]:
    n_test = count // TEST_EVERY
    return count - n_test, n_test


def sample_seed(dataset_seed: int, index: int) -> int:
    return dataset_seed ^ index


def _header(kind: PatternKind, count: int, h: int, w: int, seq_len: int) -> bytes:
    name = kind.value.encode("ascii")
    return MAGIC + struct.pack("<IB", VERSION, len(name)) + name + struct.pack("<IIII", count, h, w, seq_len)


class _SplitWriter:
    def __init__(self, path: Path, kind: PatternKind, count: int, size: tuple[int, int]):
        self.fh = open(path, "wb")
        self.fh.write(_header(kind, count, size[0], size[1], kind.length))

    def append(self, frames: np.ndarray, masks: np.ndarray) -> None:
        self.fh.write(frames.tobytes())
        self.fh.write(np.packbits(masks, axis=-1).tobytes())

    def close(self) -> None:
        self.fh.close()


def read_split(path: str | os.PathLike) -> PackedSplit:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset split {path}: {exc}") from exc
    if blob[:8] != MAGIC:
        raise DatasetError(f"{path}: not a packed dataset (bad magic)")
    version, name_len = struct.unpack_from("<IB", blob, 8)
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported dataset version {version}")
    pos = 13
    kind = PatternKind(blob[pos : pos + name_len].decode("ascii"))
    pos += name_len
    count, h, w, seq_len = struct.unpack_from("<IIII", blob, pos)
    pos += 16
    frame_bytes = seq_len * h * w * 3
    row_bytes = (w + 7) // 8
    mask_bytes = seq_len * h * row_bytes
    if len(blob) - pos != count * (frame_bytes + mask_bytes):
        raise DatasetError(f"{path}: size does not match header ({count} samples of {seq_len}x{h}x{w})")
    raw = np.frombuffer(blob, dtype=np.uint8, offset=pos).reshape(count, frame_bytes + mask_bytes)
    frames = raw[:, :frame_bytes].reshape(count, seq_len, h, w, 3).copy()
    packed = raw[:, frame_bytes:].reshape(count, seq_len, h, row_bytes)
    masks = np.unpackbits(packed, axis=-1, count=w).astype(bool)
    return PackedSplit(kind, frames, masks)


def write_manifest(path: Path, entries: dict) -> None:
    lines = [f"{k} = {v}" for k, v in entries.items()]
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path: str | os.PathLike) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def generate_dataset(
    kind: PatternKind | str,
    count: int,
    size: tuple[int, int],
    seed: int,
    out_dir: str | os.PathLike,
) -> dict[str, str]:
    """Write ``count`` samples to ``out_dir/{train,test}.bin`` plus a manifest; return the manifest."""
    kind = PatternKind.parse(kind) if isinstance(kind, str) else PatternKind(kind)
    if count < 0:
        raise ValueError("count must be >= 0")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        n_train, n_test = split_counts(count)
        train = _SplitWriter(out / "train.bin", kind, n_train, size)
        test = _SplitWriter(out / "test.bin", kind, n_test, size)
        try:
            for i in range(count):
                sample = generate_sample(kind, sample_seed(seed, i), size)
                (test if is_test_index(i) else train).append(sample.frames, sample.masks)
        finally:
            train.close()
            test.close()
        manifest = {
            "format_version": VERSION,
            "kind": kind.value,
            "count": count,
            "height": size[0],
            "width": size[1],
            "seq_len": kind.length,
            "seed": seed,
            "split": f"test when index % {TEST_EVERY} == {TEST_EVERY - 1}",
            "train_count": n_train,
            "test_count": n_test,
            "train_file": "train.bin",
            "test_file": "test.bin",
        }
        write_manifest(out / MANIFEST, manifest)
    except OSError as exc:
        raise DatasetError(f"writing dataset to {out} failed: {exc}") from exc
    return {k: str(v) for k, v in manifest.items()}


def load_dataset(root: str | os.PathLike, split: str = "train") -> PackedSplit:
    root = Path(root)
    manifest_path = root / MANIFEST
    if not manifest_path.exists():
        raise DatasetError(f"no dataset manifest at {manifest_path}")
    manifest = read_manifest(manifest_path)
    key = f"{split}_file"
    if key not in manifest:
        raise DatasetError(f"manifest has no {split!r} split")
    return read_split(root / manifest[key])
