"""Paired fundus/angiogram ingestion, random crops, and normalization.

Expected layout:

    root/
      manifest.json        {"version": 1, "train": [ids], "eval": [ids]}
      fundus/<id>.<ext>    RGB fundus photograph
      angio/<id>.<ext>     grayscale angiogram, same dimensions

The manifest lists only the aligned pairs admitted to the experiment;
everything else in the directories is ignored. Crop sampling is a pure
function of (manifest order, seed). Pixel values are mapped linearly from
[0, 255] to [-1, 1].
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import load_archive, save_archive
from .errors import IngestionError, InputError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class SourcePair:
    pair_id: str
    fundus: np.ndarray      # (H, W, 3) uint8
    angiogram: np.ndarray   # (H, W, 1) uint8
    aligned: bool = True
    split: str = "train"


@dataclass
class PairedSample:
    fundus_crop: np.ndarray   # (S, S, 3) float32 in [-1, 1]
    angio_crop: np.ndarray    # (S, S, 1) float32 in [-1, 1]
    pair_id: str
    crop_offset: tuple        # (row, col)
    crop_size: int


def normalize(image):
    """uint8 [0, 255] -> float32 [-1, 1]."""
    return (np.asarray(image, dtype=np.float32) / 127.5) - 1.0


def denormalize(tensor):
    """float [-1, 1] -> uint8, the rounded inverse of normalize."""
    return np.clip(np.rint((np.asarray(tensor) + 1.0) * 127.5), 0, 255).astype(
        np.uint8
    )


def read_manifest(root):
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise IngestionError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestionError(f"manifest.json is not valid JSON: {exc}") from exc
    for key in ("train", "eval"):
        manifest.setdefault(key, [])
    return manifest


def _find_image(directory, stem):
    for ext in IMAGE_EXTENSIONS:
        candidate = directory / f"{stem}{ext}"
        if candidate.is_file():
            return candidate
    return None


def _load_fundus(path):
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _load_angio(path):
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 3:
        # 3-channel grayscale sources are averaged, not luma-weighted
        arr = np.rint(arr[..., :3].mean(axis=2)).astype(np.uint8)
    return arr[..., None]


def load_pairs(root, split=None):
    """Load the manifest's aligned pairs (optionally one split only)."""
    root = Path(root)
    manifest = read_manifest(root)
    wanted = []
    for sp in ("train", "eval"):
        if split in (None, sp):
            wanted += [(pid, sp) for pid in manifest[sp]]
    pairs = []
    for pid, sp in wanted:
        fundus_path = _find_image(root / "fundus", pid)
        angio_path = _find_image(root / "angio", pid)
        if fundus_path is None or angio_path is None:
            missing = "fundus" if fundus_path is None else "angio"
            raise IngestionError(f"pair {pid!r}: missing {missing} image")
        fundus = _load_fundus(fundus_path)
        angio = _load_angio(angio_path)
        if fundus.shape[:2] != angio.shape[:2]:
            raise IngestionError(
                f"pair {pid!r}: fundus {fundus.shape[:2]} vs angiogram "
                f"{angio.shape[:2]} dimension mismatch"
            )
        pairs.append(SourcePair(pid, fundus, angio, aligned=True, split=sp))
    if not pairs:
        import warnings

        warnings.warn(f"manifest under {root} selects no pairs", stacklevel=2)
    return pairs


def _crop(pair, row, col, size):
    f = normalize(pair.fundus[row : row + size, col : col + size])
    a = normalize(pair.angiogram[row : row + size, col : col + size])
    return PairedSample(f, a, pair.pair_id, (row, col), size)


def random_crops(pair: SourcePair, n=50, size=512, seed=0):
    """n aligned random crops; offsets uniform over the valid range,
    overlap allowed, identical offset applied to both images."""
    h, w = pair.fundus.shape[:2]
    if size > h or size > w:
        raise InputError(f"crop size {size} exceeds image dims {h}x{w}")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        row = int(rng.integers(0, h - size, endpoint=True))
        col = int(rng.integers(0, w - size, endpoint=True))
        samples.append(_crop(pair, row, col, size))
    return samples


def eval_quadrant_crops(pair: SourcePair, size=512):
    """Four deterministic crops anchored at the image corners."""
    h, w = pair.fundus.shape[:2]
    if size > h or size > w:
        raise InputError(f"crop size {size} exceeds image dims {h}x{w}")
    offsets = [(0, 0), (0, w - size), (h - size, 0), (h - size, w - size)]
    return [_crop(pair, r, c, size) for r, c in offsets]


def build_training_samples(pairs, n=50, size=512, seed=0):
    """All crops for all pairs, count = len(pairs) * n, order fixed by
    (manifest order, crop index)."""
    children = np.random.SeedSequence(seed).spawn(len(pairs))
    samples = []
    for pair, child in zip(pairs, children):
        samples += random_crops(pair, n, size, child)
    return samples


def stack_samples(samples):
    """-> (fundus (M,S,S,3), angio (M,S,S,1)) float32 batches."""
    fundus = np.stack([s.fundus_crop for s in samples])
    angio = np.stack([s.angio_crop for s in samples])
    return fundus, angio


# ---------------------------------------------------------------------------
# crop cache and dataset fingerprint
# ---------------------------------------------------------------------------


def dataset_hash(root):
    """sha256 over the manifest bytes plus every referenced image file."""
    root = Path(root)
    manifest = read_manifest(root)
    h = hashlib.sha256((root / "manifest.json").read_bytes())
    for pid in list(manifest["train"]) + list(manifest["eval"]):
        for sub in ("fundus", "angio"):
            path = _find_image(root / sub, pid)
            if path is not None:
                h.update(path.name.encode())
                h.update(path.read_bytes())
    return h.hexdigest()


def cache_key(manifest_hash, seed, n, size):
    return f"{manifest_hash}:{seed}:{n}:{size}"


def write_sample_cache(path, samples, key):
    """Packed crops as uint8 (exact, since sources are 8-bit)."""
    fundus = np.stack([denormalize(s.fundus_crop) for s in samples])
    angio = np.stack([denormalize(s.angio_crop) for s in samples])
    meta = {
        "kind": "sample_cache",
        "key": key,
        "pair_ids": [s.pair_id for s in samples],
        "offsets": [list(s.crop_offset) for s in samples],
        "size": samples[0].crop_size if samples else 0,
    }
    save_archive(path, [("fundus", fundus), ("angio", angio)], meta)


def read_sample_cache(path, expected_key=None):
    arrays, meta = load_archive(path)
    if meta.get("kind") != "sample_cache":
        raise IngestionError(f"{path} is not a sample cache")
    if expected_key is not None and meta.get("key") != expected_key:
        raise IngestionError(
            f"cache key mismatch: have {meta.get('key')!r}, "
            f"want {expected_key!r}"
        )
    samples = []
    size = meta["size"]
    for i, (pid, off) in enumerate(zip(meta["pair_ids"], meta["offsets"])):
        samples.append(PairedSample(
            normalize(arrays["fundus"][i]), normalize(arrays["angio"][i]),
            pid, tuple(off), size,
        ))
    return samples


# ---------------------------------------------------------------------------
# synthetic fixtures (the clinical source data is not redistributable;
# tests and demos run on generated stand-ins with the same geometry)
# ---------------------------------------------------------------------------


def write_synthetic_dataset(root, n_train=2, n_eval=1, hw=(576, 720), seed=0):
    """Write a small synthetic paired dataset + manifest; returns root."""
    root = Path(root)
    (root / "fundus").mkdir(parents=True, exist_ok=True)
    (root / "angio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    h, w = hw
    train, evals = [], []
    for i in range(n_train + n_eval):
        pid = f"pair{i:02d}"
        # blocky low-frequency content so crops are not pure noise
        block = 8
        base = rng.integers(
            0, 256, (-(-h // block), -(-w // block), 3), dtype=np.uint8
        )
        fundus = np.repeat(np.repeat(base, block, axis=0), block, axis=1)
        fundus = fundus[:h, :w]
        angio = fundus.mean(axis=2).astype(np.uint8)
        Image.fromarray(fundus).save(root / "fundus" / f"{pid}.png")
        Image.fromarray(angio, mode="L").save(root / "angio" / f"{pid}.png")
        (train if i < n_train else evals).append(pid)
    manifest = {"version": 1, "train": train, "eval": evals}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return root
