"""Evaluation protocol: masked error in LAB under two averaging
conventions, plus PSNR and SSIM in RGB, reported per region.

Following the shadow-removal literature, the quantity reported as "RMSE"
is the mean absolute LAB difference (per pixel: the three channel
differences averaged). `rmse_star` pools every masked pixel of every
image into one average; `rmse` averages per image first and then over
images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
from scipy import ndimage

from . import colorspace, imgio

PSNR_CAP = 100.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # 11-tap window at sigma 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

REGIONS = ("shadow", "nonshadow", "whole")
METRIC_NAMES = ("rmse_star", "rmse", "psnr", "ssim")


def _pixel_error(pred_lab: np.ndarray, gt_lab: np.ndarray) -> np.ndarray:
    """Per-pixel error: absolute LAB difference averaged over channels."""
    if pred_lab.shape != gt_lab.shape:
        raise ValueError(
            f"shape mismatch: {pred_lab.shape} vs {gt_lab.shape}"
        )
    return np.abs(pred_lab - gt_lab).mean(axis=2)


def rmse_star(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
) -> float:
    """Masked LAB error pooled over all pixels of all images."""
    if not (len(preds) == len(gts) == len(masks)):
        raise ValueError("preds, gts, masks must have equal length")
    total = 0.0
    count = 0
    for pred, gt, mask in zip(preds, gts, masks):
        m = np.asarray(mask).astype(bool)
        err = _pixel_error(pred, gt)
        total += float(err[m].sum())
        count += int(m.sum())
    if count == 0:
        raise ValueError("no masked pixels in any image")
    return total / count


def rmse(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
) -> float:
    """Masked LAB error averaged per image, then across images."""
    if not (len(preds) == len(gts) == len(masks)):
        raise ValueError("preds, gts, masks must have equal length")
    per_image = []
    for pred, gt, mask in zip(preds, gts, masks):
        m = np.asarray(mask).astype(bool)
        if not m.any():
            continue
        per_image.append(float(_pixel_error(pred, gt)[m].mean()))
    if not per_image:
        raise ValueError("no masked pixels in any image")
    return float(np.mean(per_image))


def psnr(
    pred_rgb: np.ndarray, gt_rgb: np.ndarray, mask: np.ndarray | None = None
) -> float:
    """Peak signal-to-noise ratio over masked pixels, MAX=1, capped at 100."""
    if pred_rgb.shape != gt_rgb.shape:
        raise ValueError(f"shape mismatch: {pred_rgb.shape} vs {gt_rgb.shape}")
    sq = (np.asarray(pred_rgb, dtype=np.float64) - gt_rgb) ** 2
    if mask is not None:
        m = np.asarray(mask).astype(bool)
        if not m.any():
            raise ValueError("mask selects no pixels")
        sq = sq[m]
    mse = float(sq.mean())
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _ssim_map_single(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """SSIM map for one channel (Gaussian window, population covariance)."""
    opts = {"sigma": SSIM_SIGMA, "truncate": SSIM_TRUNCATE, "mode": "reflect"}
    ux = ndimage.gaussian_filter(x, **opts)
    uy = ndimage.gaussian_filter(y, **opts)
    uxx = ndimage.gaussian_filter(x * x, **opts)
    uyy = ndimage.gaussian_filter(y * y, **opts)
    uxy = ndimage.gaussian_filter(x * y, **opts)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    return ((2 * ux * uy + c1) * (2 * vxy + c2)) / (
        (ux**2 + uy**2 + c1) * (vx + vy + c2)
    )


def ssim_map(pred_rgb: np.ndarray, gt_rgb: np.ndarray) -> tuple[np.ndarray, int]:
    """Channel-averaged SSIM map and the border width to crop before
    averaging (edge pixels lack full window support)."""
    if pred_rgb.shape != gt_rgb.shape:
        raise ValueError(f"shape mismatch: {pred_rgb.shape} vs {gt_rgb.shape}")
    radius = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    if min(pred_rgb.shape[:2]) < 2 * radius + 1:
        raise ValueError(
            f"images must be at least {2 * radius + 1} pixels per side for SSIM"
        )
    x = np.asarray(pred_rgb, dtype=np.float64)
    y = np.asarray(gt_rgb, dtype=np.float64)
    chans = [_ssim_map_single(x[..., c], y[..., c]) for c in range(x.shape[2])]
    return np.mean(chans, axis=0), radius


def ssim(
    pred_rgb: np.ndarray, gt_rgb: np.ndarray, mask: np.ndarray | None = None
) -> float:
    """Mean SSIM in [-1, 1]; the masked variant averages the SSIM map over
    masked pixels (border excluded either way)."""
    smap, pad = ssim_map(pred_rgb, gt_rgb)
    crop = smap[pad:-pad, pad:-pad]
    if mask is None:
        return float(crop.mean())
    m = np.asarray(mask).astype(bool)[pad:-pad, pad:-pad]
    if not m.any():
        raise ValueError("mask selects no pixels inside the SSIM support")
    return float(crop[m].mean())


@dataclass
class EvalReport:
    """Per-region metric table over an evaluated directory triple."""

    regions: dict[str, dict[str, float]]
    count: int
    resize_to: tuple[int, int] | None = None
    skipped: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "count": self.count,
                "resize_to": list(self.resize_to) if self.resize_to else None,
                "regions": self.regions,
                "skipped": self.skipped,
            },
            indent=2,
        )

    def to_csv(self) -> str:
        lines = ["region," + ",".join(METRIC_NAMES)]
        for region in REGIONS:
            vals = self.regions[region]
            lines.append(
                region + "," + ",".join(f"{vals[m]:.6g}" for m in METRIC_NAMES)
            )
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        header = f"{'region':<10}" + "".join(f"{m:>12}" for m in METRIC_NAMES)
        rows = [header, "-" * len(header)]
        for region in REGIONS:
            vals = self.regions[region]
            rows.append(
                f"{region:<10}"
                + "".join(f"{vals[m]:>12.4f}" for m in METRIC_NAMES)
            )
        rows.append(f"images: {self.count}")
        return "\n".join(rows)


def _matched_names(pred_dir: Path, gt_dir: Path, mask_dir: Path) -> list[str]:
    preds = set(imgio.png_names(pred_dir))
    gts = set(imgio.png_names(gt_dir))
    masks = set(imgio.png_names(mask_dir))
    common = preds & gts & masks
    stray = (preds | gts | masks) - common
    if stray:
        raise ValueError(
            "unmatched filenames across pred/gt/mask directories: "
            + ", ".join(sorted(stray))
        )
    if not common:
        raise ValueError("no PNG triples found to evaluate")
    return sorted(common)


def _as_size(resize_to: int | tuple[int, int] | None) -> tuple[int, int] | None:
    if resize_to is None:
        return None
    if isinstance(resize_to, int):
        return (resize_to, resize_to)
    h, w = resize_to
    return (int(h), int(w))


def evaluate(
    pred_dir: str | Path,
    gt_dir: str | Path,
    mask_dir: str | Path,
    resize_to: int | tuple[int, int] | None = 256,
) -> EvalReport:
    """Compute all metrics for shadow / non-shadow / whole-image regions.

    Predictions, ground truths, and masks are matched by filename and
    resized (bilinear for images, nearest for masks) before scoring.
    Images whose region is empty are skipped for that region's per-image
    metrics and counted in `skipped`.
    """
    pred_dir, gt_dir, mask_dir = Path(pred_dir), Path(gt_dir), Path(mask_dir)
    names = _matched_names(pred_dir, gt_dir, mask_dir)
    size = _as_size(resize_to)

    labs: dict[str, tuple[list, list, list]] = {r: ([], [], []) for r in REGIONS}
    psnrs: dict[str, list[float]] = {r: [] for r in REGIONS}
    ssims: dict[str, list[float]] = {r: [] for r in REGIONS}
    skipped = {r: 0 for r in REGIONS}

    for name in names:
        pred = imgio.load_image(pred_dir / name)
        gt = imgio.load_image(gt_dir / name)
        mask = imgio.load_mask_array(mask_dir / name)
        if size is not None:
            h, w = size
            pred = cv2.resize(pred, (w, h), interpolation=cv2.INTER_LINEAR)
            gt = cv2.resize(gt, (w, h), interpolation=cv2.INTER_LINEAR)
            mask = cv2.resize(mask, (w, h), interpolation=cv2.INTER_NEAREST)
        if pred.shape != gt.shape or mask.shape != pred.shape[:2]:
            raise ValueError(f"dimension mismatch for {name!r}")
        pred_lab = colorspace.rgb_to_lab(pred)
        gt_lab = colorspace.rgb_to_lab(gt)
        region_masks = {
            "shadow": mask,
            "nonshadow": 1 - mask,
            "whole": np.ones_like(mask),
        }
        for region, m in region_masks.items():
            labs[region][0].append(pred_lab)
            labs[region][1].append(gt_lab)
            labs[region][2].append(m)
            if not m.any():
                skipped[region] += 1
                continue
            psnrs[region].append(psnr(pred, gt, m))
            try:
                ssims[region].append(ssim(pred, gt, m))
            except ValueError:
                skipped[region] += 1

    regions = {}
    for region in REGIONS:
        preds_l, gts_l, masks_l = labs[region]
        regions[region] = {
            "rmse_star": rmse_star(preds_l, gts_l, masks_l),
            "rmse": rmse(preds_l, gts_l, masks_l),
            "psnr": float(np.mean(psnrs[region])) if psnrs[region] else float("nan"),
            "ssim": float(np.mean(ssims[region])) if ssims[region] else float("nan"),
        }
    return EvalReport(
        regions=regions, count=len(names), resize_to=size, skipped=skipped
    )
