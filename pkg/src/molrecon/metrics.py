"""Reconstruction quality metrics on complex images.

PSNR uses the peak magnitude of the reference; SSIM is computed on magnitude
images with a 7x7 uniform window and the usual stabilizers.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter

PSNR_CAP = 300.0  # finite sentinel for an exact match


def psnr(x, ref) -> float:
    """20*log10(max|ref| / rmse) in dB, capped at PSNR_CAP for exact matches."""
    x = np.asarray(x)
    ref = np.asarray(ref)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    peak = float(np.max(np.abs(ref)))
    if peak == 0.0:
        raise ValueError("reference image is identically zero")
    rmse = float(np.sqrt(np.mean(np.abs(x - ref) ** 2)))
    if rmse == 0.0:
        return PSNR_CAP
    return min(20.0 * np.log10(peak / rmse), PSNR_CAP)


def ssim(x, ref, win_size=7, k1=0.01, k2=0.03) -> float:
    """Mean structural similarity between magnitude images."""
    x = np.abs(np.asarray(x)).astype(np.float64)
    ref = np.abs(np.asarray(ref)).astype(np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    peak = float(np.max(ref))
    if peak == 0.0:
        raise ValueError("reference image is identically zero")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    def f(img):
        return uniform_filter(img, size=win_size, mode="reflect")

    mu_x = f(x)
    mu_r = f(ref)
    var_x = f(x * x) - mu_x**2
    var_r = f(ref * ref) - mu_r**2
    cov = f(x * ref) - mu_x * mu_r
    num = (2 * mu_x * mu_r + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_r**2 + c1) * (var_x + var_r + c2)
    return float(np.mean(num / den))
