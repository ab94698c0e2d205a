"""Dataset loading, augmentation, mask sampling, and region decoupling.

Directory layout for every dataset (real or toy):

    <root>/<split>/images/*.png   shadow images (8-bit RGB)
    <root>/<split>/masks/*.png    shadow masks (single channel, >=128 is on)
    <root>/<split>/gt/*.png       optional shadow-free ground truth

A training example is decoupled into two region identities: the shadow
region (image restricted to its ground-truth mask) and a non-shadow
region cut out by a mask borrowed from another training image and
restricted to the non-shadow area.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from . import colorspace, imgio


@dataclass
class BinaryMask:
    """HxW {0,1} mask. kind is one of: shadow, nonshadow, dilated."""

    values: np.ndarray
    kind: str = "shadow"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"mask must be HxW, got shape {self.values.shape}")
        uniq = np.unique(self.values)
        if not np.isin(uniq, [0, 1]).all():
            raise ValueError("mask values must be strictly binary")
        self.values = self.values.astype(np.uint8)

    @property
    def area_fraction(self) -> float:
        return float(self.values.mean())


@dataclass
class RegionIdentity:
    """A masked LAB image (zeros outside the mask) plus its mask."""

    image: np.ndarray
    mask: BinaryMask


@dataclass
class Sample:
    """One dataset entry: LAB shadow image, its mask, optional ground truth."""

    name: str
    shadow_image: np.ndarray
    shadow_mask: BinaryMask
    ground_truth: np.ndarray | None = None


class ShadowDataset:
    """Lazily loaded sequence of Samples from the documented layout."""

    def __init__(self, root: str | Path, split: str):
        self.root = Path(root)
        self.split = split
        base = self.root / split
        self.image_dir = base / "images"
        self.mask_dir = base / "masks"
        self.gt_dir = base / "gt"
        self.names = imgio.png_names(self.image_dir) if self.image_dir.is_dir() else []
        if not self.names:
            warnings.warn(f"no images found under {self.image_dir}", stacklevel=3)
        for name in self.names:
            if not (self.mask_dir / name).is_file():
                raise FileNotFoundError(
                    f"missing mask for image {name!r} (expected {self.mask_dir / name})"
                )
        self.has_gt = self.gt_dir.is_dir()

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, idx: int) -> Sample:
        name = self.names[idx]
        rgb = imgio.load_image(self.image_dir / name)
        mask = imgio.load_mask_array(self.mask_dir / name)
        if mask.shape != rgb.shape[:2]:
            raise ValueError(
                f"dimension mismatch for {name!r}: image {rgb.shape[:2]} "
                f"vs mask {mask.shape}"
            )
        gt = None
        if self.has_gt and (self.gt_dir / name).is_file():
            gt_rgb = imgio.load_image(self.gt_dir / name)
            if gt_rgb.shape != rgb.shape:
                raise ValueError(
                    f"dimension mismatch for {name!r}: image {rgb.shape[:2]} "
                    f"vs gt {gt_rgb.shape[:2]}"
                )
            gt = colorspace.rgb_to_lab(gt_rgb)
        return Sample(
            name=name,
            shadow_image=colorspace.rgb_to_lab(rgb),
            shadow_mask=BinaryMask(mask, kind="shadow"),
            ground_truth=gt,
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def masks(self) -> list[BinaryMask]:
        """All shadow masks of the split (the pool for non-shadow sampling)."""
        return [
            BinaryMask(imgio.load_mask_array(self.mask_dir / n), kind="shadow")
            for n in self.names
        ]


def load_dataset(root: str | Path, split: str) -> ShadowDataset:
    return ShadowDataset(root, split)


def _resize_image(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    return cv2.resize(np.ascontiguousarray(img), (w, h), interpolation=cv2.INTER_LINEAR)


def _resize_mask(values: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    return cv2.resize(
        np.ascontiguousarray(values), (w, h), interpolation=cv2.INTER_NEAREST
    )


def augment(
    sample: Sample,
    rng: np.random.Generator,
    resize_to: int = 448,
    crop_to: int = 400,
    flip_prob: float = 0.5,
) -> Sample:
    """Resize, randomly crop, and randomly flip a sample.

    The image (and ground truth, if present) is resized bilinearly and the
    mask with nearest neighbour; crop window and flip decision are shared
    by all members so they stay aligned.
    """
    if crop_to > resize_to:
        raise ValueError(f"crop_to={crop_to} exceeds resize_to={resize_to}")
    image = _resize_image(sample.shadow_image, (resize_to, resize_to))
    mask = _resize_mask(sample.shadow_mask.values, (resize_to, resize_to))
    gt = None
    if sample.ground_truth is not None:
        gt = _resize_image(sample.ground_truth, (resize_to, resize_to))

    margin = resize_to - crop_to
    y0 = int(rng.integers(0, margin + 1))
    x0 = int(rng.integers(0, margin + 1))
    sl = (slice(y0, y0 + crop_to), slice(x0, x0 + crop_to))
    image, mask = image[sl], mask[sl]
    if gt is not None:
        gt = gt[sl]

    if rng.random() < flip_prob:
        image = image[:, ::-1].copy()
        mask = mask[:, ::-1].copy()
        if gt is not None:
            gt = gt[:, ::-1].copy()

    return replace(
        sample,
        shadow_image=np.ascontiguousarray(image),
        shadow_mask=BinaryMask(np.ascontiguousarray(mask), kind="shadow"),
        ground_truth=gt,
    )


def sample_nonshadow_mask(
    sample: Sample,
    mask_pool: list[BinaryMask],
    rng: np.random.Generator,
    min_area_fraction: float = 0.01,
    retries: int = 10,
) -> BinaryMask:
    """Draw a mask from the pool and restrict it to the non-shadow area.

    A drawn mask is intersected with the complement of the sample's shadow
    mask; draws are repeated until the restricted mask covers at least
    `min_area_fraction` of the pixels or `retries` attempts are exhausted.
    """
    if not mask_pool:
        raise ValueError("mask_pool is empty")
    h, w = sample.shadow_mask.values.shape
    complement = 1 - sample.shadow_mask.values
    for _ in range(retries):
        idx = int(rng.integers(len(mask_pool)))
        cand = mask_pool[idx].values
        if cand.shape != (h, w):
            cand = _resize_mask(cand, (h, w))
        restricted = (cand & complement).astype(np.uint8)
        if restricted.mean() >= min_area_fraction:
            return BinaryMask(restricted, kind="nonshadow")
    raise ValueError(
        f"no valid non-shadow mask after {retries} draws "
        f"(min_area_fraction={min_area_fraction})"
    )


def decouple(
    sample: Sample, nonshadow_mask: BinaryMask
) -> tuple[RegionIdentity, RegionIdentity]:
    """Split a sample into its shadow and non-shadow region identities."""
    shadow = sample.shadow_mask
    if (shadow.values & nonshadow_mask.values).any():
        raise ValueError("shadow and non-shadow masks overlap")
    region_s = RegionIdentity(
        image=sample.shadow_image * shadow.values[..., None], mask=shadow
    )
    region_f = RegionIdentity(
        image=sample.shadow_image * nonshadow_mask.values[..., None],
        mask=nonshadow_mask,
    )
    return region_s, region_f


def dilate_mask(mask: BinaryMask, kernel_size: int) -> BinaryMask:
    """Binary dilation with a kernel_size x kernel_size square element."""
    if kernel_size < 1:
        raise ValueError(f"kernel_size must be >= 1, got {kernel_size}")
    structure = np.ones((kernel_size, kernel_size), dtype=bool)
    dilated = ndimage.binary_dilation(mask.values.astype(bool), structure=structure)
    return BinaryMask(dilated.astype(np.uint8), kind="dilated")


def _random_polygon_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    """Random filled polygon covering 5-40% of the canvas."""
    for _ in range(200):
        cy = rng.uniform(0.3, 0.7) * size
        cx = rng.uniform(0.3, 0.7) * size
        nverts = int(rng.integers(5, 10))
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, nverts))
        radii = rng.uniform(0.12, 0.32, nverts) * size
        ys = cy + radii * np.sin(angles)
        xs = cx + radii * np.cos(angles)
        pts = np.stack([xs, ys], axis=1).astype(np.int32)
        canvas = np.zeros((size, size), dtype=np.uint8)
        cv2.fillPoly(canvas, [pts], 1)
        if 0.05 <= canvas.mean() <= 0.40:
            return canvas
    raise RuntimeError("failed to sample a polygon mask in the target area range")


def make_toy_dataset(
    root: str | Path,
    n: int,
    size: int,
    rng: np.random.Generator,
    split: str = "train",
) -> Path:
    """Generate n synthetic (shadow, mask, ground truth) triples on disk.

    Each base image is a smooth random colour field; the shadow darkens
    only the L channel inside a random polygon (soft edged), leaving a/b
    untouched, so shadow and ground truth differ almost exclusively in
    lightness.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if size < 16:
        raise ValueError("size must be >= 16")
    base_dir = Path(root) / split
    for sub in ("images", "masks", "gt"):
        (base_dir / sub).mkdir(parents=True, exist_ok=True)

    for i in range(n):
        nodes = rng.uniform(0.2, 0.85, (4, 4, 3))
        # moderate saturation keeps the darkened variants inside the sRGB
        # gamut, so the a/b channels survive the PNG round trip
        gray = nodes.mean(axis=2, keepdims=True)
        nodes = gray + 0.5 * (nodes - gray)
        base = cv2.resize(nodes, (size, size), interpolation=cv2.INTER_CUBIC)
        base = np.clip(base, 0.1, 0.95)

        mask = _random_polygon_mask(size, rng)
        factor = rng.uniform(0.3, 0.7)
        soft = ndimage.gaussian_filter(mask.astype(np.float64), sigma=max(1.0, size / 32))
        soft = np.clip(soft, 0.0, 1.0)

        lab = colorspace.rgb_to_lab(base)
        shadow_lab = lab.copy()
        shadow_lab[..., 0] = lab[..., 0] * (1.0 - soft * (1.0 - factor))
        shadow_rgb = colorspace.lab_to_rgb(shadow_lab)

        name = f"toy_{i:04d}.png"
        imgio.save_image(base_dir / "images" / name, shadow_rgb)
        imgio.save_mask_array(base_dir / "masks" / name, mask)
        imgio.save_image(base_dir / "gt" / name, base)
    return base_dir
