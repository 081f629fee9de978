"""Structural similarity with an 11x11 Gaussian window (sigma 1.5)."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

WIN = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


def gaussian_window(size: int = WIN, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img, w):
    pad = len(w) // 2
    out = ndimage.correlate1d(img, w, axis=0, mode="constant")
    out = ndimage.correlate1d(out, w, axis=1, mode="constant")
    return out[pad:-pad, pad:-pad]


def ssim_map(a, b, data_range: float = 1.0):
    """SSIM map of two single-channel images over the valid window positions."""
    w = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    aa, bb, ab = _filter_valid(a * a, w), _filter_valid(b * b, w), _filter_valid(a * b, w)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a, var_b, cov = aa - mu_aa, bb - mu_bb, ab - mu_ab
    num = (2.0 * mu_ab + c1) * (2.0 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM of two [-1, 1] images (mapped to [0, 1]), averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < WIN:
        raise ValueError(f"images must be at least {WIN}x{WIN}")
    a, b = (a + 1.0) * 0.5, (b + 1.0) * 0.5
    return float(np.mean([ssim_map(a[..., k], b[..., k]).mean() for k in range(a.shape[2])]))
