"""Image quality and bit error measures."""

import math

import numpy as np
from scipy import ndimage

PEAK = 255.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = PEAK) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``math.inf``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, data_range: float = PEAK, win: int = 11, sigma: float = 1.5,
         K1: float = 0.01, K2: float = 0.03) -> float:
    """Mean structural similarity over all fully contained Gaussian windows."""
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError("ssim expects 2-D grids")
    if min(a.shape) < win:
        raise ValueError(f"image smaller than the {win}x{win} window")
    w = _gaussian_window(win, sigma)
    r = win // 2

    def filt(x):
        return ndimage.correlate(x, w, mode="reflect")[r:-r, r:-r]

    mu_a, mu_b = filt(a), filt(b)
    s_aa = filt(a * a) - mu_a * mu_a
    s_bb = filt(b * b) - mu_b * mu_b
    s_ab = filt(a * b) - mu_a * mu_b
    C1 = (K1 * data_range) ** 2
    C2 = (K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + C1) * (2 * s_ab + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (s_aa + s_bb + C2)
    return float(np.mean(num / den))


def ber(decoded, truth) -> float:
    """Fraction of differing bits. Accepts Payload objects or bit arrays."""
    d = np.asarray(getattr(decoded, "bits", decoded)).ravel()
    t = np.asarray(getattr(truth, "bits", truth)).ravel()
    if d.size != t.size:
        raise ValueError(f"length mismatch: {d.size} vs {t.size}")
    if d.size == 0:
        raise ValueError("empty payloads")
    return float(np.count_nonzero(d != t)) / d.size
