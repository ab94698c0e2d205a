"""sRGB <-> CIE L*a*b* conversion (D65/2 degree observer).

All pipeline math happens on LAB arrays: channel 0 is L* in [0, 100],
channels 1-2 are a*/b* in roughly [-128, 127]. RGB arrays are float in
[0, 1]. Conversions use the standard sRGB companding and the D65 white
point taken as the row sums of the sRGB->XYZ matrix, so pure white maps
exactly to (100, 0, 0).
"""

from __future__ import annotations

import numpy as np

# sRGB (linear) -> XYZ, D65/2deg
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
# Row sums: the white point implied by the matrix itself.
_WHITE = _RGB_TO_XYZ.sum(axis=1)

_EPS = 216.0 / 24389.0  # (6/29)^3
_KAPPA = 24389.0 / 27.0

L_RANGE = (0.0, 100.0)
AB_RANGE = (-128.0, 127.0)


def _check_image(img: np.ndarray, name: str) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name} must be an HxWx3 array, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must have H, W >= 1, got shape {img.shape}")
    return img


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert an HxWx3 sRGB image with values in [0, 1] to L*a*b*.

    Raises ValueError for values outside [0, 1].
    """
    rgb = _check_image(rgb, "rgb")
    if rgb.min() < -1e-9 or rgb.max() > 1 + 1e-9:
        raise ValueError(
            f"rgb values must lie in [0, 1], got range "
            f"[{rgb.min():.6g}, {rgb.max():.6g}]"
        )
    rgb = np.clip(rgb, 0.0, 1.0)

    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T
    xyz_n = xyz / _WHITE

    f = np.where(xyz_n > _EPS, np.cbrt(xyz_n), (_KAPPA * xyz_n + 16.0) / 116.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]

    lab = np.empty_like(rgb)
    lab[..., 0] = 116.0 * fy - 16.0
    lab[..., 1] = 500.0 * (fx - fy)
    lab[..., 2] = 200.0 * (fy - fz)
    return lab


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Convert an HxWx3 L*a*b* image back to sRGB, clamped to [0, 1].

    Out-of-gamut values (common for generator outputs) are clamped rather
    than rejected.
    """
    lab = _check_image(lab, "lab")
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0

    f = np.stack([fx, fy, fz], axis=-1)
    xyz_n = np.where(f**3 > _EPS, f**3, (116.0 * f - 16.0) / _KAPPA)
    xyz = xyz_n * _WHITE

    linear = xyz @ _XYZ_TO_RGB.T
    linear = np.clip(linear, 0.0, None)
    rgb = np.where(
        linear <= 0.0031308, 12.92 * linear, 1.055 * linear ** (1.0 / 2.4) - 0.055
    )
    return np.clip(rgb, 0.0, 1.0)


def take_ab(lab: np.ndarray) -> np.ndarray:
    """Return the a*/b* channels of a LAB image as an HxWx2 array."""
    lab = _check_image(lab, "lab")
    return lab[..., 1:3]


def validate_lab(lab: np.ndarray, name: str = "lab") -> np.ndarray:
    """Check that L is in [0, 100] and a/b in [-128, 127]; return the array."""
    lab = _check_image(lab, name)
    lo, hi = L_RANGE
    if lab[..., 0].min() < lo - 1e-6 or lab[..., 0].max() > hi + 1e-6:
        raise ValueError(f"{name} L channel outside [{lo}, {hi}]")
    lo, hi = AB_RANGE
    ab = lab[..., 1:3]
    if ab.min() < lo - 1e-6 or ab.max() > hi + 1e-6:
        raise ValueError(f"{name} a/b channels outside [{lo}, {hi}]")
    return lab
