"""Seeded synthetic phantoms: piecewise-smooth magnitude (random ellipses and
rectangles with smooth shading) and slowly varying phase.  Stand-in data that
exercises every reconstruction code path without external datasets.
"""

from __future__ import annotations

import numpy as np

from .numerics import norm


def _smooth_field(shape, rng, cutoff=0.15):
    """Low-pass filtered white noise, normalized to [-1, 1]."""
    noise = rng.standard_normal(shape)
    h, w = shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    kernel = np.exp(-(fy**2 + fx**2) / (2 * cutoff**2))
    field = np.real(np.fft.ifft2(np.fft.fft2(noise) * kernel))
    peak = np.max(np.abs(field))
    return field / peak if peak > 0 else field


def random_phantom(shape, seed=0) -> np.ndarray:
    """One complex phantom with unit peak magnitude."""
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    mag = np.zeros(shape)
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(-0.6, 0.6, size=2)
        amp = rng.uniform(0.3, 1.0)
        if rng.random() < 0.5:
            ay, ax = rng.uniform(0.15, 0.5, size=2)
            inside = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
        else:
            ay, ax = rng.uniform(0.1, 0.4, size=2)
            inside = (np.abs(yy - cy) <= ay) & (np.abs(xx - cx) <= ax)
        mag[inside] += amp
    shading = 1.0 + 0.3 * _smooth_field(shape, rng)
    mag = mag * shading
    peak = np.max(mag)
    if peak > 0:
        mag = mag / peak
    phase = 0.5 * np.pi * _smooth_field(shape, rng, cutoff=0.08)
    return mag * np.exp(1j * phase)


def phantom_batch(n, shape, seed=0) -> np.ndarray:
    """n phantoms with per-image derived seeds (reproducible item by item)."""
    return np.stack([random_phantom(shape, seed=seed * 100003 + i) for i in range(n)])


def complex_noise(shape, sigma, rng) -> np.ndarray:
    """Complex Gaussian with E|n_i|^2 = sigma^2 (sigma^2/2 per component)."""
    scale = sigma / np.sqrt(2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def measure(op, x, sigma, rng) -> np.ndarray:
    """Noisy measurement b = A x + n."""
    b = op.apply(x)
    if sigma > 0:
        b = b + complex_noise(b.shape, sigma, rng)
    return b


def make_samples(op, images, sigma=0.0, seed=0):
    """(x_gt, b, op) triples for the training loop."""
    rng = np.random.default_rng(seed)
    return [(x, measure(op, x, sigma, rng), op) for x in images]
