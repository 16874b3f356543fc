"""Synthetic dataset generation, folder ingestion, and augmentation.

The generator draws soft-edged elliptical blobs over textured noise with
exact masks — a desk-scale stand-in for real scan data. Everything is
deterministic per seed, down to the emitted PNG bytes.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .tensor import Tensor

MASK_THRESHOLD = 128  # PNG mask pixels >= this read as foreground
MIN_BLOB_AREA = 0.01
MAX_BLOB_AREA = 0.40


@dataclasses.dataclass
class Sample:
    """One image/mask pair; image is CHW float in [0, 1], mask is {0,1}."""

    image: np.ndarray
    mask: np.ndarray
    presence: float
    id: str


class Dataset:
    def __init__(self, samples: list[Sample]):
        self.samples = list(samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, idx: int) -> Sample:
        return self.samples[idx]

    def __iter__(self):
        return iter(self.samples)


@dataclasses.dataclass
class SampleBatch:
    """Batched tensors for one training step; masks strictly binary and
    presence[n] = 1 iff masks[n] has a positive pixel."""

    images: Tensor
    masks: Tensor
    presence: Tensor
    ids: tuple[str, ...]

    def __post_init__(self):
        vals = np.unique(self.masks.data)
        if not set(vals.tolist()) <= {0.0, 1.0}:
            raise DataError("batch masks must be strictly binary")
        derived = (self.masks.data.reshape(self.masks.shape[0], -1).max(axis=1) > 0).astype(np.float32)
        if not np.array_equal(derived, self.presence.data.astype(np.float32)):
            raise DataError("presence labels must match mask occupancy")


def make_batch(samples: list[Sample]) -> SampleBatch:
    images = Tensor(np.stack([s.image for s in samples]).astype(np.float32))
    masks = Tensor(np.stack([s.mask for s in samples]).astype(np.float32))
    presence = Tensor(np.array([s.presence for s in samples], dtype=np.float32))
    return SampleBatch(images, masks, presence, tuple(s.id for s in samples))


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

def _box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    """Separable box blur via padded cumulative sums."""
    k = 2 * radius + 1
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius + 1, radius)
        padded = np.pad(img, pad, mode="edge")
        c = np.cumsum(padded, axis=axis)
        if axis == 0:
            img = (c[k:, :] - c[:-k, :]) / k
        else:
            img = (c[:, k:] - c[:, :-k]) / k
    return img


def _render_blobs(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw 1-5 soft-edged ellipses; returns (intensity, binary mask)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    intensity = np.zeros((size, size))
    mask = np.zeros((size, size))
    for _ in range(int(rng.integers(1, 6))):
        cy, cx = rng.uniform(0.15 * size, 0.85 * size, size=2)
        ay = rng.uniform(0.06 * size, 0.22 * size)
        ax = rng.uniform(0.06 * size, 0.22 * size)
        theta = rng.uniform(0.0, np.pi)
        level = rng.uniform(0.55, 0.95)
        ct, st = np.cos(theta), np.sin(theta)
        u = ((xx - cx) * ct + (yy - cy) * st) / ax
        v = (-(xx - cx) * st + (yy - cy) * ct) / ay
        d = np.sqrt(u * u + v * v)
        # intensity ramps through 0.5*level exactly at the mask boundary d=1
        profile = np.clip((1.07 - d) / 0.14, 0.0, 1.0)
        intensity = np.maximum(intensity, level * profile)
        mask = np.maximum(mask, (d <= 1.0).astype(np.float64))
    return intensity, mask


def _render_sample(rng: np.random.Generator, size: int, empty: bool) -> tuple[np.ndarray, np.ndarray]:
    for _ in range(1000):
        background = _box_blur(rng.normal(0.30, 0.10, size=(size, size)), 2)
        if empty:
            blob, mask = np.zeros((size, size)), np.zeros((size, size))
        else:
            blob, mask = _render_blobs(rng, size)
        area = mask.mean()
        if empty or MIN_BLOB_AREA <= area <= MAX_BLOB_AREA:
            img = np.clip(background + blob + rng.normal(0.0, 0.03, size=(size, size)), 0.0, 1.0)
            return img, mask
    raise DataError("could not draw a mask inside the area bounds; widen the size")


def synth_generate(out_dir, count: int, size: int, empty_fraction: float = 0.3, seed: int = 0) -> Path:
    """Write `count` grayscale image/mask PNG pairs under out_dir.

    Exactly round(count * empty_fraction) samples have an all-zero mask.
    Bitwise deterministic per seed.
    """
    if size < 16 or size % 16:
        raise DataError(f"size must be a positive multiple of 16, got {size}")
    if not 0.0 <= empty_fraction <= 1.0:
        raise DataError(f"empty_fraction must be in [0, 1], got {empty_fraction}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_empty = int(round(count * empty_fraction))
    empty_idx = set(rng.permutation(count)[:n_empty].tolist())
    for i in range(count):
        img, mask = _render_sample(rng, size, empty=i in empty_idx)
        Image.fromarray(np.round(img * 255).astype(np.uint8), mode="L").save(out / "images" / f"{i:04d}.png")
        Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(out / "masks" / f"{i:04d}.png")
    return out


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def _read_image(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr.astype(np.float32) / 255.0


def load_dataset(directory) -> Dataset:
    """Pair dir/images/*.png with dir/masks/*.png by stem; masks binarize at
    128/255 and presence labels derive from mask occupancy."""
    root = Path(directory)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir():
        raise DataError(f"no images directory under {root}")
    samples = []
    for img_path in sorted(img_dir.glob("*.png")):
        stem = img_path.stem
        mask_path = mask_dir / f"{stem}.png"
        if not mask_path.exists():
            raise DataError(f"missing mask for sample '{stem}'")
        image = _read_image(img_path)
        mask_raw = np.asarray(Image.open(mask_path))
        if mask_raw.ndim != 2:
            raise DataError(f"mask for sample '{stem}' must be single-channel")
        if mask_raw.shape != image.shape[1:]:
            raise DataError(
                f"sample '{stem}': image extents {image.shape[1:]} do not match mask {mask_raw.shape}"
            )
        mask = (mask_raw >= MASK_THRESHOLD).astype(np.float32)[None]
        samples.append(Sample(image, mask, float(mask.max() > 0), stem))
    if not samples:
        raise DataError(f"no PNG pairs found under {root}")
    return Dataset(samples)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def rotate90(sample: Sample, k: int) -> Sample:
    if k % 4 == 0:
        return sample
    return dataclasses.replace(
        sample,
        image=np.ascontiguousarray(np.rot90(sample.image, k, axes=(1, 2))),
        mask=np.ascontiguousarray(np.rot90(sample.mask, k, axes=(1, 2))),
    )


def flip(sample: Sample, axis: int) -> Sample:
    """axis 1 flips vertically, axis 2 horizontally (CHW layout)."""
    return dataclasses.replace(
        sample,
        image=np.ascontiguousarray(np.flip(sample.image, axis=axis)),
        mask=np.ascontiguousarray(np.flip(sample.mask, axis=axis)),
    )


def _brightness_contrast(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    gain = 1.0 + rng.uniform(-0.2, 0.2)
    shift = rng.uniform(-0.1, 0.1)
    return np.clip(gain * (image - 0.5) + 0.5 + shift, 0.0, 1.0)


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb
    maxc = np.max(rgb, axis=0)
    minc = np.min(rgb, axis=0)
    v = maxc
    span = maxc - minc
    s = np.where(maxc > 0, span / np.maximum(maxc, 1e-12), 0.0)
    safe = np.where(span == 0, 1.0, span)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(span == 0, 0.0, (h / 6.0) % 1.0)
    return np.stack([h, s, v])


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def _hsv_jitter(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    hsv = _rgb_to_hsv(image)
    hsv[0] = (hsv[0] + rng.uniform(-0.03, 0.03)) % 1.0
    hsv[1] = np.clip(hsv[1] * (1.0 + rng.uniform(-0.15, 0.15)), 0.0, 1.0)
    hsv[2] = np.clip(hsv[2] * (1.0 + rng.uniform(-0.15, 0.15)), 0.0, 1.0)
    return np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Per-channel standardization; the last preprocessing step."""
    mean = image.mean(axis=(1, 2), keepdims=True, dtype=np.float64)
    std = image.std(axis=(1, 2), keepdims=True, dtype=np.float64)
    return ((image - mean) / (std + 1e-6)).astype(np.float32)


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """Joint spatial transforms, a photometric jitter (image only), then
    normalization. The HSV path only activates on 3-channel images; the
    random selection falls back to brightness/contrast on grayscale."""
    out = rotate90(sample, int(rng.integers(0, 4)))
    if rng.random() < 0.5:
        out = flip(out, axis=2)
    if rng.random() < 0.5:
        out = flip(out, axis=1)
    image = out.image
    use_hsv = rng.random() < 0.5
    if use_hsv and image.shape[0] == 3:
        image = _hsv_jitter(image, rng)
    else:
        image = _brightness_contrast(image, rng)
    return dataclasses.replace(out, image=normalize_image(image))


def preprocess(sample: Sample) -> Sample:
    """Validation/inference path: normalization only."""
    return dataclasses.replace(sample, image=normalize_image(sample.image))
